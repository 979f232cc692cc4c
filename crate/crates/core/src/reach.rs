//! Breadth-first reachability over QDAA states and the derived analysis
//! products: reachable rectangles, per-variable bounds, ρ and the
//! first-passage heatmap.
//!
//! The heatmap value of a rectangle is the probability that the chain,
//! started from the uniform mixture over initial states, ever visits a
//! state of that rectangle. It is computed exactly by solving the
//! first-passage equations one strongly connected component at a time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::geometry::Rectangle;
use crate::model::BiochemicalSystem;
use crate::qdaa::{entry_json, successors, Node, Qdaa, QdaaConfig, QdaaState};
use crate::rats;
use crate::sim::derive_seed;
use crate::Error;

/// Largest strongly connected component solved directly; bigger chains
/// fall back to Monte-Carlo walks.
pub const DEFAULT_HEATMAP_LIMIT: usize = 4000;
pub const MC_WALKS: usize = 100_000;
const TAG_HEATMAP: u64 = 0x4ea7;

#[derive(Debug, Clone)]
pub struct ReachReport {
    pub automaton: Qdaa,
    pub states: BTreeSet<QdaaState>,
    pub rectangles: BTreeSet<Rectangle>,
    pub initial: Vec<Rectangle>,
    /// Per variable `[min, max]` over the reachable rectangles.
    pub bounds: Vec<[f64; 2]>,
    /// `None` only when the initial set is empty.
    pub rho: Option<f64>,
    pub heatmap: BTreeMap<Rectangle, f64>,
    pub sink_mass: f64,
    /// Number of states handed to the successor procedure.
    pub expansions: usize,
    pub species: Vec<String>,
    pub model: Option<String>,
    pub config: QdaaConfig,
    pub heatmap_exact: bool,
}

impl ReachReport {
    pub fn heatmap_value(&self, rect: &Rectangle) -> f64 {
        self.heatmap.get(rect).copied().unwrap_or(0.0)
    }

    /// Number of reachable states whose rectangle is `rect`.
    pub fn memory_size(&self, rect: &Rectangle) -> usize {
        self.states.iter().filter(|s| &s.rectangle == rect).count()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "model": self.model,
            "species": self.species,
            "kappa": self.config.kappa,
            "samples": self.config.sim.samples,
            "seed": self.config.seed,
            "backward_filter": self.config.backward_filter,
            "initial": self.initial.iter().map(Rectangle::indices).collect::<Vec<_>>(),
            "rectangles": self.rectangles.iter().map(Rectangle::indices).collect::<Vec<_>>(),
            "bounds": bounds_json(&self.species, &self.bounds),
            "rho": self.rho,
            "states": self.states.iter().map(|s| json!({
                "rectangle": s.rectangle.indices(),
                "entry": entry_json(&s.entry),
            })).collect::<Vec<_>>(),
            "heatmap": self.heatmap.iter().map(|(r, v)| json!({
                "rectangle": r.indices(),
                "value": v,
            })).collect::<Vec<_>>(),
            "heatmap_exact": self.heatmap_exact,
            "sink_mass": self.sink_mass,
            "expansions": self.expansions,
            "transitions": self.automaton.transition_count(),
        })
    }

    /// `(species, lower, upper)` rows.
    pub fn bounds_rows(&self) -> Vec<(String, f64, f64)> {
        self.species
            .iter()
            .zip(&self.bounds)
            .map(|(s, b)| (s.clone(), b[0], b[1]))
            .collect()
    }
}

pub(crate) fn bounds_json(species: &[String], bounds: &[[f64; 2]]) -> Vec<Value> {
    species
        .iter()
        .zip(bounds)
        .map(|(s, b)| json!({"species": s, "lower": b[0], "upper": b[1]}))
        .collect()
}

/// Per-axis union of the extents of `rects`; empty when `rects` is.
pub fn rectangle_bounds<'a>(
    system: &BiochemicalSystem,
    rects: impl IntoIterator<Item = &'a Rectangle>,
) -> Vec<[f64; 2]> {
    let n = system.dimension();
    let mut bounds = vec![[f64::INFINITY, f64::NEG_INFINITY]; n];
    let mut any = false;
    for r in rects {
        any = true;
        let b = r.bounds(system.partition());
        for i in 0..n {
            bounds[i][0] = bounds[i][0].min(b.lo[i]);
            bounds[i][1] = bounds[i][1].max(b.hi[i]);
        }
    }
    if any {
        bounds
    } else {
        Vec::new()
    }
}

/// Breadth-first closure of the initial states under [`successors`].
///
/// Each frontier level is expanded in parallel; the next frontier is sorted
/// so vertex ids and results do not depend on the thread count.
pub fn reachable(
    system: &BiochemicalSystem,
    config: &QdaaConfig,
) -> Result<(Qdaa, BTreeSet<QdaaState>), Error> {
    explore(system, config).map(|(qdaa, states, _)| (qdaa, states))
}

fn explore(
    system: &BiochemicalSystem,
    config: &QdaaConfig,
) -> Result<(Qdaa, BTreeSet<QdaaState>, usize), Error> {
    let mut qdaa = Qdaa::new();
    let mut frontier: Vec<QdaaState> = Vec::new();
    for rect in system.initial() {
        let state = QdaaState::initial(rect.clone());
        let (id, fresh) = qdaa.intern(Node::State(state.clone()));
        if fresh {
            qdaa.add_initial(id);
            frontier.push(state);
        }
    }
    frontier.sort();
    let mut expansions = 0usize;
    while !frontier.is_empty() {
        let results: Vec<Result<Vec<_>, Error>> = frontier
            .par_iter()
            .map(|s| successors(s, system, config))
            .collect();
        expansions += frontier.len();
        let mut next = Vec::new();
        for (state, result) in frontier.iter().zip(results) {
            let source = qdaa
                .id_of(&Node::State(state.clone()))
                .expect("frontier states are interned");
            let mut edges = Vec::new();
            for t in result? {
                let (id, fresh) = qdaa.intern(t.target.clone());
                if fresh {
                    match t.target {
                        Node::State(s) => next.push(s),
                        Node::Sink => qdaa.set_edges(id, vec![(id, 1.0)]),
                    }
                }
                edges.push((id, t.weight));
            }
            qdaa.set_edges(source, edges);
            if qdaa.len() > config.max_states {
                return Err(Error::TooManyStates {
                    limit: config.max_states,
                });
            }
        }
        next.sort();
        frontier = next;
    }
    let states = qdaa.states().cloned().collect();
    Ok((qdaa, states, expansions))
}

/// Runs reachability and assembles the report.
pub fn analyze(system: &BiochemicalSystem, config: &QdaaConfig) -> Result<ReachReport, Error> {
    analyze_with_limit(system, config, DEFAULT_HEATMAP_LIMIT)
}

pub fn analyze_with_limit(
    system: &BiochemicalSystem,
    config: &QdaaConfig,
    heatmap_limit: usize,
) -> Result<ReachReport, Error> {
    let (automaton, states, expansions) = explore(system, config)?;
    let rectangles: BTreeSet<Rectangle> = states.iter().map(|s| s.rectangle.clone()).collect();
    let bounds = rectangle_bounds(system, &rectangles);
    let rho = if rectangles.is_empty() {
        None
    } else {
        Some(states.len() as f64 / rectangles.len() as f64)
    };
    let seed = derive_seed(config.seed, TAG_HEATMAP, []);
    let (heatmap, sink_mass, heatmap_exact) =
        first_passage(&automaton, &rectangles, heatmap_limit, seed);
    Ok(ReachReport {
        automaton,
        states,
        rectangles,
        initial: system.initial().to_vec(),
        bounds,
        rho,
        heatmap,
        sink_mass,
        expansions,
        species: system.species().to_vec(),
        model: system.name().map(str::to_owned),
        config: config.clone(),
        heatmap_exact,
    })
}

/// Mean number of reachable states per reachable rectangle.
pub fn rho(report: &ReachReport) -> Result<f64, Error> {
    report.rho.ok_or(Error::EmptyReachableSet)
}

/// `[lo, hi]` of variable `i` over the reachable rectangles.
pub fn variable_bounds(report: &ReachReport, i: usize) -> [f64; 2] {
    report.bounds[i]
}

/// First-passage probability of each rectangle in `rectangles`.
pub fn rectangle_heatmap(
    qdaa: &Qdaa,
    rectangles: &BTreeSet<Rectangle>,
    limit: usize,
) -> BTreeMap<Rectangle, f64> {
    first_passage(qdaa, rectangles, limit, 0).0
}

/// Heatmap, sink probability, and whether both were solved exactly.
fn first_passage(
    qdaa: &Qdaa,
    rectangles: &BTreeSet<Rectangle>,
    limit: usize,
    seed: u64,
) -> (BTreeMap<Rectangle, f64>, f64, bool) {
    if qdaa.initial().is_empty() {
        return (rectangles.iter().map(|r| (r.clone(), 0.0)).collect(), 0.0, true);
    }
    let solver = PassageSolver::new(qdaa);
    let exact: Option<(BTreeMap<Rectangle, f64>, f64)> = (|| {
        let mut map = BTreeMap::new();
        for r in rectangles {
            let targets: Vec<bool> = qdaa
                .nodes()
                .iter()
                .map(|n| n.rectangle() == Some(r))
                .collect();
            map.insert(r.clone(), solver.mixture(&targets, limit)?);
        }
        let sink = match qdaa.sink_id() {
            Some(id) => {
                let mut targets = vec![false; qdaa.len()];
                targets[id] = true;
                solver.mixture(&targets, limit)?
            }
            None => 0.0,
        };
        Some((map, sink))
    })();
    match exact {
        Some((map, sink)) => (map, sink, true),
        None => {
            let (map, sink) = monte_carlo_passage(qdaa, rectangles, MC_WALKS, seed);
            (map, sink, false)
        }
    }
}

struct PassageSolver<'a> {
    qdaa: &'a Qdaa,
    reverse: Vec<Vec<usize>>,
}

impl<'a> PassageSolver<'a> {
    fn new(qdaa: &'a Qdaa) -> Self {
        let mut reverse = vec![Vec::new(); qdaa.len()];
        for v in 0..qdaa.len() {
            for &(u, _) in qdaa.transitions_from(v) {
                reverse[u].push(v);
            }
        }
        PassageSolver { qdaa, reverse }
    }

    /// Hitting probability of `targets` averaged over the initial states;
    /// `None` if a component larger than `limit` must be solved.
    fn mixture(&self, targets: &[bool], limit: usize) -> Option<f64> {
        let h = self.hitting(targets, limit)?;
        let init = self.qdaa.initial();
        Some((init.iter().map(|&i| h[i]).sum::<f64>() / init.len() as f64).clamp(0.0, 1.0))
    }

    fn hitting(&self, targets: &[bool], limit: usize) -> Option<Vec<f64>> {
        let n = self.qdaa.len();
        let mut h = vec![0.0; n];
        // nodes with a path to a target
        let mut relevant = vec![false; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for v in 0..n {
            if targets[v] {
                relevant[v] = true;
                h[v] = 1.0;
                queue.push_back(v);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in &self.reverse[u] {
                if !relevant[v] && !targets[v] {
                    relevant[v] = true;
                    queue.push_back(v);
                }
            }
        }
        let mut graph: DiGraph<usize, ()> = DiGraph::new();
        let mut local = vec![NodeIndex::end(); n];
        for v in (0..n).filter(|&v| relevant[v] && !targets[v]) {
            local[v] = graph.add_node(v);
        }
        for v in (0..n).filter(|&v| relevant[v] && !targets[v]) {
            for &(u, _) in self.qdaa.transitions_from(v) {
                if relevant[u] && !targets[u] {
                    graph.add_edge(local[v], local[u], ());
                }
            }
        }
        // components arrive in reverse topological order
        for component in tarjan_scc(&graph) {
            let members: Vec<usize> = component.iter().map(|&ix| graph[ix]).collect();
            if members.len() > limit {
                return None;
            }
            if let [v] = members[..] {
                let mut stay = 0.0;
                let mut rhs = 0.0;
                for &(u, w) in self.qdaa.transitions_from(v) {
                    if u == v {
                        stay += w;
                    } else {
                        rhs += w * h[u];
                    }
                }
                h[v] = if stay < 1.0 { rhs / (1.0 - stay) } else { 0.0 };
                continue;
            }
            let m = members.len();
            let pos: BTreeMap<usize, usize> =
                members.iter().enumerate().map(|(k, &v)| (v, k)).collect();
            let mut a = DMatrix::<f64>::identity(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for (k, &v) in members.iter().enumerate() {
                for &(u, w) in self.qdaa.transitions_from(v) {
                    match pos.get(&u) {
                        Some(&j) => a[(k, j)] -= w,
                        None => b[k] += w * h[u],
                    }
                }
            }
            let x = a.lu().solve(&b)?;
            for (k, &v) in members.iter().enumerate() {
                h[v] = x[k].clamp(0.0, 1.0);
            }
        }
        Some(h)
    }
}

/// Estimates first-passage probabilities from `walks` simulated paths.
pub fn monte_carlo_passage(
    qdaa: &Qdaa,
    rectangles: &BTreeSet<Rectangle>,
    walks: usize,
    seed: u64,
) -> (BTreeMap<Rectangle, f64>, f64) {
    let index: BTreeMap<&Rectangle, usize> =
        rectangles.iter().enumerate().map(|(k, r)| (r, k)).collect();
    let node_rect: Vec<Option<usize>> = qdaa
        .nodes()
        .iter()
        .map(|n| n.rectangle().and_then(|r| index.get(r).copied()))
        .collect();
    let sink = qdaa.sink_id();
    let init = qdaa.initial();
    let max_len = 10 * qdaa.len() + 1000;
    let mut hits = vec![0usize; rectangles.len()];
    let mut stamp = vec![usize::MAX; rectangles.len()];
    let mut sink_hits = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for walk in 0..walks {
        let mut v = init[rng.gen_range(0..init.len())];
        for _ in 0..max_len {
            if let Some(k) = node_rect[v] {
                if stamp[k] != walk {
                    stamp[k] = walk;
                    hits[k] += 1;
                }
            }
            if Some(v) == sink {
                sink_hits += 1;
                break;
            }
            let out = qdaa.transitions_from(v);
            if out == [(v, 1.0)] {
                break;
            }
            let mut u: f64 = rng.gen();
            let mut next = out[out.len() - 1].0;
            for &(t, w) in out {
                if u < w {
                    next = t;
                    break;
                }
                u -= w;
            }
            v = next;
        }
    }
    let map = rectangles
        .iter()
        .zip(&hits)
        .map(|(r, &c)| (r.clone(), c as f64 / walks as f64))
        .collect();
    (map, sink_hits as f64 / walks as f64)
}

/// Outcome of comparing QDAA reachability with the rectangular abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub qdaa: BTreeSet<Rectangle>,
    pub rats: BTreeSet<Rectangle>,
    /// Rectangles only the abstraction reaches.
    pub spurious: BTreeSet<Rectangle>,
}

/// Runs both analyses; fails if QDAA reaches a rectangle the abstraction
/// does not.
pub fn compare_with_rats(
    system: &BiochemicalSystem,
    config: &QdaaConfig,
) -> Result<ContainmentReport, Error> {
    let (_, states) = reachable(system, config)?;
    let qdaa: BTreeSet<Rectangle> = states.into_iter().map(|s| s.rectangle).collect();
    containment(qdaa, rats::rats_reach(system, system.initial()))
}

pub fn containment(
    qdaa: BTreeSet<Rectangle>,
    rats: BTreeSet<Rectangle>,
) -> Result<ContainmentReport, Error> {
    let outside: Vec<String> = qdaa.difference(&rats).map(ToString::to_string).collect();
    if !outside.is_empty() {
        return Err(Error::ContainmentViolation(outside));
    }
    let spurious = rats.difference(&qdaa).cloned().collect();
    Ok(ContainmentReport {
        qdaa,
        rats,
        spurious,
    })
}

const PANEL: f64 = 360.0;
const MARGIN: f64 = 70.0;

/// SVG rendering of the heatmap. Each panel projects the reachable
/// rectangles onto the plane of two variables; a projected cell shows the
/// largest value among the rectangles projecting onto it. Cells are drawn
/// with equal size per threshold interval, labelled with threshold values.
pub fn heatmap_svg(
    report: &ReachReport,
    system: &BiochemicalSystem,
    projections: &[(usize, usize)],
) -> String {
    let default = [(0, 1.min(system.dimension().saturating_sub(1)))];
    let planes = if projections.is_empty() {
        &default[..]
    } else {
        projections
    };
    let width = planes.len() as f64 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, &(ix, iy)) in planes.iter().enumerate() {
        let x0 = p as f64 * (PANEL + 2.0 * MARGIN) + MARGIN;
        panel(&mut svg, report, system, ix, iy, x0, MARGIN);
    }
    svg.push_str("</svg>\n");
    svg
}

fn panel(
    svg: &mut String,
    report: &ReachReport,
    system: &BiochemicalSystem,
    ix: usize,
    iy: usize,
    x0: f64,
    y0: f64,
) {
    let partition = system.partition();
    let nx = partition.intervals(ix);
    let ny = partition.intervals(iy);
    let cw = PANEL / nx as f64;
    let ch = PANEL / ny as f64;
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in &report.rectangles {
        let key = (r.indices()[ix], r.indices()[iy]);
        let v = report.heatmap_value(r);
        let e = cells.entry(key).or_insert(0.0);
        *e = e.max(v);
    }
    let initial: BTreeSet<(usize, usize)> = report
        .initial
        .iter()
        .map(|r| (r.indices()[ix], r.indices()[iy]))
        .collect();
    let cell_xy = |i: usize, j: usize| (x0 + i as f64 * cw, y0 + PANEL - (j + 1) as f64 * ch);
    for (&(i, j), &v) in &cells {
        let (x, y) = cell_xy(i, j);
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="#1f4e9c" fill-opacity="{:.4}"><title>{v:.4}</title></rect>"##,
            0.1 + 0.9 * v
        );
    }
    for &(i, j) in &initial {
        let (x, y) = cell_xy(i, j);
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="none" stroke="black" stroke-width="2"/>"#
        );
    }
    for i in 0..=nx {
        let x = x0 + i as f64 * cw;
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#999" stroke-width="0.5"/>"##,
            y0 + PANEL
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="end" transform="rotate(-45 {x:.2} {:.2})">{}</text>"#,
            y0 + PANEL + 12.0,
            y0 + PANEL + 12.0,
            partition.axis(ix)[i]
        );
    }
    for j in 0..=ny {
        let y = y0 + PANEL - j as f64 * ch;
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-width="0.5"/>"##,
            x0 + PANEL
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            y + 3.0,
            partition.axis(iy)[j]
        );
    }
    let species = system.species();
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + PANEL / 2.0,
        y0 + PANEL + 55.0,
        escape(&species[ix])
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        x0 - 50.0,
        y0 + PANEL / 2.0,
        x0 - 50.0,
        y0 + PANEL / 2.0,
        escape(&species[iy])
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
