//! Quantitative discrete approximation automata (QDAA) for multi-affine ODE
//! systems over rectangular threshold partitions.
//!
//! A QDAA state pairs a rectangle with an approximate *entry set* (a union
//! of κ-tiles on one facet, the whole rectangle for initial states, or the
//! empty set for trajectories that never leave). Successors and transition
//! weights are estimated by simulating sampled trajectories, which turns the
//! automaton into a discrete-time Markov chain. [`rats`] provides the
//! classical rectangular abstraction as a baseline.
//!
//! ```no_run
//! use qdaa::{bundled, QdaaConfig, reach};
//!
//! let system = bundled::model("fig2").unwrap();
//! let config = QdaaConfig::new(8).with_samples(500).with_seed(7);
//! let report = reach::analyze(&system, &config).unwrap();
//! println!("{} rectangles, rho = {:?}", report.rectangles.len(), report.rho);
//! ```

pub mod bundled;
pub mod geometry;
pub mod model;
pub mod qdaa;
pub mod rats;
pub mod reach;
pub mod sim;

mod error;

pub use error::Error;
pub use qdaa::{Qdaa, QdaaConfig, QdaaState};
pub use reach::ReachReport;
