use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies within distance 1 of the metric center")]
    Domain { point: [f64; 3] },
    #[error("metric is not positive definite at {point:?}")]
    Validity { point: [f64; 3] },
    #[error("mean convexity lost at node {node}: H = {h:e}")]
    MeanConvexity { node: usize, h: f64 },
    #[error("harmonic mean curvature is singular at node {node}")]
    FSingularity { node: usize },
    #[error("radial graph degenerates at node {node}: cosine {cosine:.3}")]
    GraphDegeneracy { node: usize, cosine: f64 },
    #[error("surface dips below the inner volume boundary r_in = {r_in} (min radius {min_rho})")]
    VolumeDomain { r_in: f64, min_rho: f64 },
    #[error("surface is not round: fit residual {residual:e} exceeds 10% of r0 = {r0}")]
    NotRound { residual: f64, r0: f64 },
    #[error("time step underflow at t = {t}: dt = {dt:e}")]
    DtUnderflow { t: f64, dt: f64 },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Undefined(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("eigensolver: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, Error>;
