//! kNN classification over granular-ball summaries, searched through a
//! layered small-world graph whose distance and comparison primitives are
//! simulated quantum routines (angle encoding, swap test, comparator).
//!
//! Pipeline: [`granular_ball::generate`] reduces a labeled dataset to balls,
//! [`hnsw_index::HierarchicalIndex`] indexes their encoded centers, and
//! [`classifier::ClassifierModel`] votes over the balls a query search
//! returns. Numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for everyday use.

pub mod bench;
pub mod classifier;
pub mod datasets_io;
pub mod error;
pub mod granular_ball;
pub mod hnsw_index;
pub mod quantum_sim;
pub mod scalar;

pub use error::{Error, Result};
pub use granular_ball::{Label, LabeledPoint};
pub use scalar::Scalar;

pub type GranularBall = granular_ball::GranularBall<f64>;
pub type AngleState = quantum_sim::AngleState<f64>;
pub type HierarchicalIndex = hnsw_index::HierarchicalIndex<f64>;
pub type NeighborQueue = hnsw_index::NeighborQueue<f64>;
pub type ClassifierModel = classifier::ClassifierModel<f64>;

pub type GranularBall32 = granular_ball::GranularBall<f32>;
pub type AngleState32 = quantum_sim::AngleState<f32>;
pub type HierarchicalIndex32 = hnsw_index::HierarchicalIndex<f32>;
pub type NeighborQueue32 = hnsw_index::NeighborQueue<f32>;
pub type ClassifierModel32 = classifier::ClassifierModel<f32>;
