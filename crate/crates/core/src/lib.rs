//! Volume-preserving harmonic mean curvature flow of radial graphs in
//! asymptotically Schwarzschild 3-manifolds, with stability spectra, leaf
//! foliations and center-of-mass diagnostics.

pub mod error;
pub mod flow;
pub mod foliation;
pub mod geometry;
pub mod jet;
pub mod metric;
pub mod sphere;
pub mod stability;

pub use error::{Error, Result};
pub use metric::{eval_jet, riemann_from_ricci, MetricJet, MetricParams, Perturbation};
