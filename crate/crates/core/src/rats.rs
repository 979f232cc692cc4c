//! Rectangular abstraction transition system (RATS): the unweighted
//! over-approximation on rectangles, decided by vertex sign tests.
//!
//! A multi-affine function attains its extrema over a box at vertices, so
//! the sign of `f_i` at the vertices of a facet bounds the flow direction
//! across it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::geometry::{facets, neighbour_through, rectangles, Rectangle, Side};
use crate::model::{BiochemicalSystem, MultiAffineField, Partition};
use crate::reach::{bounds_json, rectangle_bounds};

/// Values within this distance of zero count as tangential.
pub const SIGN_TOL: f64 = 1e-12;

/// Successors of `rect`: neighbours through facets where some vertex value
/// points outward, plus a self-loop unless every point of `rect` is forced
/// out (some axis has one strict sign at all vertices). Facets on the
/// domain boundary have no neighbour and contribute nothing.
pub fn rats_successors(
    rect: &Rectangle,
    field: &MultiAffineField,
    partition: &Partition,
) -> BTreeSet<Rectangle> {
    let mut out = BTreeSet::new();
    for facet in facets(rect) {
        let bounds = facet.bounds(partition);
        let i = facet.axis();
        let exits = bounds.vertices().any(|v| {
            let f = field.eval_component(i, &v);
            match facet.side() {
                Side::Upper => f > SIGN_TOL,
                Side::Lower => f < -SIGN_TOL,
            }
        });
        if exits {
            if let Some(next) = neighbour_through(partition, &facet) {
                out.insert(next);
            }
        }
    }
    let bounds = rect.bounds(partition);
    let vertices: Vec<Vec<f64>> = bounds.vertices().collect();
    let forced_out = (0..rect.dimension()).any(|i| {
        let values: Vec<f64> = vertices.iter().map(|v| field.eval_component(i, v)).collect();
        values.iter().all(|&f| f > SIGN_TOL) || values.iter().all(|&f| f < -SIGN_TOL)
    });
    if !forced_out {
        out.insert(rect.clone());
    }
    out
}

/// Breadth-first closure of `initial` under [`rats_successors`].
pub fn rats_reach(system: &BiochemicalSystem, initial: &[Rectangle]) -> BTreeSet<Rectangle> {
    let mut seen: BTreeSet<Rectangle> = initial.iter().cloned().collect();
    let mut queue: VecDeque<Rectangle> = seen.iter().cloned().collect();
    while let Some(r) = queue.pop_front() {
        for next in rats_successors(&r, system.field(), system.partition()) {
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// The full abstraction over every rectangle of the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct RatsSystem {
    pub transitions: BTreeMap<Rectangle, BTreeSet<Rectangle>>,
}

impl RatsSystem {
    pub fn build(system: &BiochemicalSystem) -> Self {
        let rects: Vec<Rectangle> = rectangles(system.partition()).collect();
        let transitions = rects
            .into_par_iter()
            .map(|r| {
                let succ = rats_successors(&r, system.field(), system.partition());
                (r, succ)
            })
            .collect();
        RatsSystem { transitions }
    }

    pub fn rectangle_count(&self) -> usize {
        self.transitions.len()
    }

    /// DOT rendering restricted to `keep` (all rectangles when `None`).
    pub fn to_dot(&self, keep: Option<&BTreeSet<Rectangle>>) -> String {
        let shown = |r: &Rectangle| keep.is_none_or(|k| k.contains(r));
        let mut out = String::from("digraph rats {\n  node [shape=box];\n");
        for r in self.transitions.keys().filter(|r| shown(r)) {
            let _ = writeln!(out, "  \"{r}\";");
        }
        for (r, succ) in self.transitions.iter().filter(|(r, _)| shown(r)) {
            for s in succ {
                let _ = writeln!(out, "  \"{r}\" -> \"{s}\";");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Rectangle-set document sharing its keys with reach reports.
pub fn reach_json(system: &BiochemicalSystem, reach: &BTreeSet<Rectangle>) -> Value {
    json!({
        "model": system.name(),
        "species": system.species(),
        "initial": system.initial().iter().map(Rectangle::indices).collect::<Vec<_>>(),
        "rectangles": reach.iter().map(Rectangle::indices).collect::<Vec<_>>(),
        "bounds": bounds_json(system.species(), &rectangle_bounds(system, reach)),
    })
}
