//! Invariants of explored automata on the bundled models.

use std::collections::BTreeSet;

use qdaa::bundled;
use qdaa::geometry::{EntrySet, Rectangle};
use qdaa::qdaa::{build, max_states_per_rectangle, Node};
use qdaa::reach::{analyze, reachable};
use qdaa::QdaaConfig;

fn config(kappa: usize) -> QdaaConfig {
    QdaaConfig::new(kappa).with_samples(150).with_seed(11)
}

#[test]
fn bundled_automata_are_markov_chains() {
    for name in bundled::NAMES {
        let sys = bundled::model(name).unwrap();
        let qdaa = build(&sys, &config(4)).unwrap();
        qdaa.check_invariants()
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        for (id, node) in qdaa.nodes().iter().enumerate() {
            if let Node::State(s) = node {
                if s.entry == EntrySet::Empty {
                    assert_eq!(qdaa.transitions_from(id), &[(id, 1.0)]);
                }
            }
        }
    }
}

#[test]
fn visited_states_respect_worst_case_count() {
    for name in ["fig2", "oscillatory"] {
        let sys = bundled::model(name).unwrap();
        let (qdaa, states) = reachable(&sys, &config(4)).unwrap();
        let rects = sys.partition().rectangle_count() as u128;
        let bound = rects * max_states_per_rectangle(sys.dimension(), 4) + 1;
        assert!((qdaa.len() as u128) <= bound);
        assert!(states.len() <= qdaa.len());
    }
}

#[test]
fn each_state_is_expanded_once() {
    let sys = bundled::model("oscillatory").unwrap();
    let report = analyze(&sys, &config(4)).unwrap();
    assert_eq!(report.expansions, report.states.len());
}

#[test]
fn enlarging_initial_set_never_shrinks_reach() {
    let sys = bundled::model("fig2").unwrap();
    let h = Rectangle::new(vec![0, 0]);
    let r = Rectangle::new(vec![0, 1]);
    let small = sys.with_initial(vec![h.clone()]).unwrap();
    let large = sys.with_initial(vec![h, r]).unwrap();
    let rects = |s| {
        let (_, states) = reachable(s, &config(8)).unwrap();
        states.into_iter().map(|st| st.rectangle).collect::<BTreeSet<_>>()
    };
    let a = rects(&small);
    let b = rects(&large);
    assert!(a.is_subset(&b), "{a:?} vs {b:?}");
    // from R, points with A + B > 6.5 settle in [2.5,5]^2
    assert_eq!(b.len(), 4);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let sys = bundled::model("oscillatory").unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| analyze(&sys, &config(4)).unwrap().to_json().to_string())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn heatmap_is_positive_exactly_on_reach() {
    for name in ["fig2", "oscillatory", "enzyme"] {
        let sys = bundled::model(name).unwrap();
        let report = analyze(&sys, &config(4)).unwrap();
        for r in qdaa::geometry::rectangles(sys.partition()) {
            let v = report.heatmap_value(&r);
            assert!((0.0..=1.0).contains(&v), "{name} {r}: {v}");
            assert_eq!(v > 0.0, report.rectangles.contains(&r), "{name} {r}: {v}");
        }
        for r in sys.initial() {
            assert!((report.heatmap_value(r) - 1.0).abs() < 1e-12, "{name} {r}");
        }
    }
}

#[test]
fn report_rectangles_project_states() {
    let sys = bundled::model("enzyme").unwrap();
    let report = analyze(&sys, &config(4)).unwrap();
    let projected: BTreeSet<_> = report.states.iter().map(|s| s.rectangle.clone()).collect();
    assert_eq!(projected, report.rectangles);
    for (i, b) in report.bounds.iter().enumerate() {
        let lo = report
            .rectangles
            .iter()
            .map(|r| r.bounds(sys.partition()).lo[i])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(b[0], lo);
        assert!(b[0] < b[1]);
    }
}
