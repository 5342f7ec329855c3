//! Distributional scalar curvature on periodic grids, the h-flow it seeds,
//! and the backward adjoint monitor that tracks lower bounds along it.
//!
//! Every kernel is generic over [`scalar::Real`]; the aliases below fix the
//! scalar to `f64`.

pub mod adjoint;
pub mod distributional;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod jet;
pub mod linalg;
pub mod mollifier;
pub mod pipeline;
pub mod scalar;
pub mod scenario;
pub mod verdict;
pub mod verify;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use scalar::Real;
pub use verdict::Verdict;

pub type Metric = grid::MetricField<f64>;
pub type Scalar = grid::ScalarField<f64>;
pub type Vector = grid::VectorField<f64>;
pub type SymTensor = grid::SymTensorField<f64>;
pub type Test = distributional::TestFunction<f64>;
pub type Trace = flow::FlowTrace<f64>;
pub type Series = adjoint::AdjointSeries<f64>;
pub type Batch = adjoint::AdjointBatch<f64>;
