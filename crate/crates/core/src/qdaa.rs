//! QDAA states, successor computation and the weighted automaton.
//!
//! Successors of `<H, E>` are estimated from `M` trajectories sampled in
//! `E`: exits through a facet shared with `H'` lead to `<H', tiles>` where
//! `tiles` are the κ-tiles hit by exit points; trajectories still inside `H`
//! after `t_max` lead to `<H, ∅>`; exits through the domain boundary lead
//! to an absorbing sink. Weights are sample fractions.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde_json::{json, Value};

use crate::geometry::{
    facet_ids, neighbour_through, EntrySet, Facet, FacetId, Rectangle, Side, Tile, TileGrid,
    TileSet,
};
use crate::model::BiochemicalSystem;
use crate::sim::{
    derive_seed, integrate_until_exit, sample_points, Direction, ExitEvent, SampleRegion,
    SimParams, SimSettings,
};
use crate::Error;

const TAG_FORWARD: u64 = 0x0f0f;
const TAG_BACKWARD: u64 = 0xb0b0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QdaaState {
    pub rectangle: Rectangle,
    pub entry: EntrySet,
}

impl QdaaState {
    pub fn new(rectangle: Rectangle, entry: EntrySet) -> Self {
        QdaaState { rectangle, entry }
    }

    pub fn initial(rectangle: Rectangle) -> Self {
        QdaaState::new(rectangle, EntrySet::Whole)
    }

    /// Words identifying the state, for seed derivation.
    fn seed_words(&self) -> Vec<u64> {
        let mut w: Vec<u64> = self.rectangle.indices().iter().map(|&i| i as u64).collect();
        match &self.entry {
            EntrySet::Empty => w.push(0),
            EntrySet::Whole => w.push(1),
            EntrySet::FacetTiles { facet, tiles } => {
                w.push(2 + facet.ordinal() as u64);
                w.extend_from_slice(tiles.words());
            }
        }
        w
    }
}

impl fmt::Display for QdaaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}>", self.rectangle, self.entry)
    }
}

/// A vertex of the automaton: a QDAA state or the out-of-domain sink.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    State(QdaaState),
    Sink,
}

impl Node {
    pub fn state(&self) -> Option<&QdaaState> {
        match self {
            Node::State(s) => Some(s),
            Node::Sink => None,
        }
    }

    pub fn rectangle(&self) -> Option<&Rectangle> {
        self.state().map(|s| &s.rectangle)
    }

    fn is_absorbing(&self) -> bool {
        match self {
            Node::State(s) => s.entry.is_empty(),
            Node::Sink => true,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::State(s) => s.fmt(f),
            Node::Sink => write!(f, "SINK"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: Node,
    pub target: Node,
    pub weight: f64,
}

/// Parameters shared by successor computation and reachability.
#[derive(Debug, Clone, PartialEq)]
pub struct QdaaConfig {
    pub kappa: usize,
    pub sim: SimSettings,
    pub backward_filter: bool,
    pub seed: u64,
    /// Guard rail on the number of automaton vertices.
    pub max_states: usize,
}

impl QdaaConfig {
    pub fn new(kappa: usize) -> Self {
        assert!(kappa >= 1, "κ must be at least 1");
        QdaaConfig {
            kappa,
            sim: SimSettings::default(),
            backward_filter: true,
            seed: 0,
            max_states: 1_000_000,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.sim.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_backward_filter(mut self, on: bool) -> Self {
        self.backward_filter = on;
        self
    }

    pub fn with_sim(mut self, sim: SimSettings) -> Self {
        self.sim = sim;
        self
    }
}

/// Worst-case number of QDAA states sharing one rectangle:
/// `2n(2^(κ^(n-1)) - 1)` facet entry sets plus `∅` and the whole rectangle.
/// Saturates at `u128::MAX`.
pub fn max_states_per_rectangle(n: usize, kappa: usize) -> u128 {
    let tiles = u32::try_from(n - 1)
        .ok()
        .and_then(|e| (kappa as u128).checked_pow(e));
    let subsets = tiles
        .and_then(|t| u32::try_from(t).ok())
        .and_then(|t| 1u128.checked_shl(t).filter(|_| t < 128))
        .map(|p| p - 1);
    subsets
        .and_then(|s| s.checked_mul(2 * n as u128))
        .and_then(|s| s.checked_add(2))
        .unwrap_or(u128::MAX)
}

fn sim_error(state: &QdaaState) -> impl FnOnce(crate::sim::SimError) -> Error + '_ {
    move |source| Error::Simulation {
        state: state.to_string(),
        source,
    }
}

/// Successors of `state` with their weights (sample fractions).
pub fn successors(
    state: &QdaaState,
    system: &BiochemicalSystem,
    config: &QdaaConfig,
) -> Result<Vec<Transition>, Error> {
    let source = Node::State(state.clone());
    if state.entry.is_empty() {
        return Ok(vec![Transition {
            source: source.clone(),
            target: source,
            weight: 1.0,
        }]);
    }
    let partition = system.partition();
    let field = system.field();
    let bounds = state.rectangle.bounds(partition);
    let params = config.sim.resolve(field, &bounds).map_err(sim_error(state))?;
    let words = state.seed_words();
    let points = sample_points(
        SampleRegion::Entry {
            rectangle: &bounds,
            entry: &state.entry,
            kappa: config.kappa,
        },
        params.samples,
        derive_seed(config.seed, TAG_FORWARD, words.iter().copied()),
    )
    .map_err(sim_error(state))?;

    let n = system.dimension();
    let mut exits: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 2 * n];
    let mut stays = 0usize;
    for x0 in &points {
        match integrate_until_exit(field, x0, &bounds, &params, Direction::Forward)
            .map_err(sim_error(state))?
        {
            ExitEvent::Exited { point, facet, .. } => exits[facet.ordinal()].push(point),
            ExitEvent::StaysInside => stays += 1,
        }
    }

    // (target, count) in canonical facet order, then stay, then sink
    let mut outcomes: Vec<(Node, usize)> = Vec::new();
    let mut sink = 0usize;
    for id in facet_ids(n) {
        let pts = &exits[id.ordinal()];
        if pts.is_empty() {
            continue;
        }
        let facet = Facet {
            rectangle: state.rectangle.clone(),
            id,
        };
        let Some(neighbour) = neighbour_through(partition, &facet) else {
            sink += pts.len();
            continue;
        };
        let grid = TileGrid::over_facet(partition, &facet, config.kappa)?;
        let mut tiles = exit_set_tiles(pts, &grid)?;
        if config.backward_filter {
            let candidates: Vec<usize> = tiles.iter().collect();
            for k in candidates {
                let tile = grid.tile(k);
                let seed = derive_seed(
                    config.seed,
                    TAG_BACKWARD,
                    words.iter().copied().chain([id.ordinal() as u64, k as u64]),
                );
                if !backward_filter_tile(&tile, id, state, system, &params, config.kappa, seed)? {
                    tiles.remove(k);
                }
            }
        }
        if tiles.is_empty() {
            continue;
        }
        let entry = EntrySet::on_facet(FacetId::new(id.axis, id.side.opposite()), tiles);
        outcomes.push((Node::State(QdaaState::new(neighbour, entry)), pts.len()));
    }
    if stays > 0 {
        let target = QdaaState::new(state.rectangle.clone(), EntrySet::Empty);
        outcomes.push((Node::State(target), stays));
    }
    if sink > 0 {
        outcomes.push((Node::Sink, sink));
    }

    let total: usize = outcomes.iter().map(|(_, c)| c).sum();
    if total == 0 {
        // every exit transition was filtered away: the chain loses the
        // trajectory inside H
        let target = QdaaState::new(state.rectangle.clone(), EntrySet::Empty);
        return Ok(vec![Transition {
            source,
            target: Node::State(target),
            weight: 1.0,
        }]);
    }
    Ok(outcomes
        .into_iter()
        .map(|(target, count)| Transition {
            source: source.clone(),
            target,
            weight: count as f64 / total as f64,
        })
        .collect())
}

/// Bit `k` is set iff some point falls in tile `k` of `grid`.
pub fn exit_set_tiles(points: &[Vec<f64>], grid: &TileGrid) -> Result<TileSet, Error> {
    let mut set = TileSet::new(grid.tile_count());
    for p in points {
        set.insert(grid.tile_containing(p)?);
    }
    Ok(set)
}

/// Decides whether `tile` (on the facet `exit_facet` of the source
/// rectangle) really belongs to the exit set of `source`: keeps it iff at
/// least half of `M` backward trajectories from the tile leave the source
/// rectangle through its entry set. A whole-rectangle entry set accepts any
/// backward trajectory that enters the rectangle.
pub fn backward_filter_tile(
    tile: &Tile,
    exit_facet: FacetId,
    source: &QdaaState,
    system: &BiochemicalSystem,
    params: &SimParams,
    kappa: usize,
    seed: u64,
) -> Result<bool, Error> {
    let partition = system.partition();
    let bounds = source.rectangle.bounds(partition);
    let entry_grid = match &source.entry {
        EntrySet::Empty => return Ok(false),
        EntrySet::Whole => None,
        EntrySet::FacetTiles { facet, tiles } => Some((
            *facet,
            tiles,
            TileGrid::from_box(bounds.clone(), Some(*facet), kappa)?,
        )),
    };
    let points = sample_points(SampleRegion::Box(&tile.bounds), params.samples, seed)
        .map_err(sim_error(source))?;
    let mut real = 0usize;
    for y0 in &points {
        let event = integrate_until_exit(system.field(), y0, &bounds, params, Direction::Backward)
            .map_err(sim_error(source))?;
        let hit = match (&entry_grid, event) {
            (None, ExitEvent::StaysInside) => true,
            (None, ExitEvent::Exited { facet, time, .. }) => {
                facet != exit_facet || time > params.dt
            }
            (Some(_), ExitEvent::StaysInside) => false,
            (Some((entry_facet, tiles, grid)), ExitEvent::Exited { point, facet, .. }) => {
                facet == *entry_facet && tiles.contains(grid.tile_containing(&point)?)
            }
        };
        if hit {
            real += 1;
        }
    }
    Ok(2 * real >= params.samples)
}

/// The explored automaton. Vertex ids follow discovery order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qdaa {
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
    initial: Vec<usize>,
    edges: Vec<Vec<(usize, f64)>>,
}

impl Qdaa {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// Id of `node`, adding it when new. Returns `(id, inserted)`.
    pub(crate) fn intern(&mut self, node: Node) -> (usize, bool) {
        if let Some(&id) = self.index.get(&node) {
            return (id, false);
        }
        let id = self.nodes.len();
        self.index.insert(node.clone(), id);
        self.nodes.push(node);
        self.edges.push(Vec::new());
        (id, true)
    }

    pub(crate) fn add_initial(&mut self, id: usize) {
        self.initial.push(id);
    }

    pub(crate) fn set_edges(&mut self, id: usize, mut edges: Vec<(usize, f64)>) {
        edges.sort_by_key(|&(t, _)| t);
        self.edges[id] = edges;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn id_of(&self, node: &Node) -> Option<usize> {
        self.index.get(node).copied()
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    /// Outgoing `(target id, weight)` pairs of `id`, sorted by target.
    pub fn transitions_from(&self, id: usize) -> &[(usize, f64)] {
        &self.edges[id]
    }

    pub fn weight(&self, from: &Node, to: &Node) -> f64 {
        match (self.id_of(from), self.id_of(to)) {
            (Some(a), Some(b)) => self.edges[a]
                .iter()
                .find(|&&(t, _)| t == b)
                .map_or(0.0, |&(_, w)| w),
            _ => 0.0,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = &QdaaState> {
        self.nodes.iter().filter_map(Node::state)
    }

    pub fn sink_id(&self) -> Option<usize> {
        self.id_of(&Node::Sink)
    }

    pub fn transition_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Checks the Markov-chain invariants; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for &i in &self.initial {
            match &self.nodes[i] {
                Node::State(s) if s.entry == EntrySet::Whole => {}
                other => return Err(format!("initial vertex {other} is not <H, H>")),
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let out = &self.edges[id];
            if node.is_absorbing() && out != &[(id, 1.0)] {
                return Err(format!("{node} is not absorbing with weight 1: {out:?}"));
            }
            if out.is_empty() {
                return Err(format!("{node} has no successors"));
            }
            if out.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(format!("{node} has repeated targets"));
            }
            if let Some(&(_, w)) = out.iter().find(|&&(_, w)| !(0.0..=1.0).contains(&w)) {
                return Err(format!("{node} has weight {w} outside [0,1]"));
            }
            let sum: f64 = out.iter().map(|&(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("{node} has outgoing weight {sum}"));
            }
            if let Node::State(s) = node {
                if let Some(f) = s.entry.facet() {
                    if f.axis >= s.rectangle.dimension() {
                        return Err(format!("{node} has an entry facet outside its rectangle"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let states: Vec<Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node {
                Node::Sink => json!({"id": id, "rectangle": null, "entry": "sink"}),
                Node::State(s) => json!({
                    "id": id,
                    "rectangle": s.rectangle.indices(),
                    "entry": entry_json(&s.entry),
                }),
            })
            .collect();
        let transitions: Vec<Value> = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(src, out)| {
                out.iter()
                    .map(move |&(dst, w)| json!({"src": src, "dst": dst, "weight": w}))
            })
            .collect();
        json!({
            "states": states,
            "initial": self.initial,
            "transitions": transitions,
        })
    }

    /// Graphviz rendering; `∅`-entry states and the sink are double circles.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph qdaa {\n  rankdir=LR;\n  node [shape=circle];\n");
        for (id, node) in self.nodes.iter().enumerate() {
            let shape = if node.is_absorbing() { "doublecircle" } else { "circle" };
            let style = if self.initial.contains(&id) { ", style=bold" } else { "" };
            let label = node.to_string().replace('"', "\\\"");
            let _ = writeln!(out, "  n{id} [label=\"{label}\", shape={shape}{style}];");
        }
        for (src, edges) in self.edges.iter().enumerate() {
            for &(dst, w) in edges {
                let _ = writeln!(out, "  n{src} -> n{dst} [label=\"{w:.4}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

pub(crate) fn entry_json(entry: &EntrySet) -> Value {
    match entry {
        EntrySet::Empty => json!("empty"),
        EntrySet::Whole => json!("whole"),
        EntrySet::FacetTiles { facet, tiles } => json!({
            "facet": {
                "axis": facet.axis,
                "side": match facet.side { Side::Lower => "lower", Side::Upper => "upper" },
            },
            "tiles": tiles.iter().collect::<Vec<_>>(),
        }),
    }
}

/// The automaton induced by closing the initial states under
/// [`successors`].
pub fn build(system: &BiochemicalSystem, config: &QdaaConfig) -> Result<Qdaa, Error> {
    crate::reach::reachable(system, config).map(|(qdaa, _)| qdaa)
}
