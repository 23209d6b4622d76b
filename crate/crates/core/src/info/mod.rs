//! Mutual-information measurement: k-NN estimators, exact plug-in
//! quantities, analysis batches and the metric suite.

pub mod analysis;
pub mod estimators;
pub mod exact;
pub mod knn;
pub mod suite;

pub use analysis::{collect_analysis_batch, representation_latents, AnalysisConfig};
pub use estimators::{ksg_mi_cc, mi_cd, Backend, EstimatorOptions, MiEstimate};
pub use exact::{exact_mi_discrete, DiscreteJoint};
pub use suite::{compression_efficiency, compute_metric_suite, AnalysisSample, Latents, Metric, MiRecord, MiReport, OBSERVATION};

#[derive(Debug, thiserror::Error)]
pub enum InfoError {
    #[error("need more than k = {k} samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid probability table: {0}")]
    InvalidTable(String),
    #[error("compression efficiency needs I(O;·) > 0, got {0}")]
    InapplicableCompression(f64),
    #[error("missing metric for `{0}`")]
    MissingMetric(String),
    #[error("insufficient usable timesteps: need {needed}, have {available} (deficit {})", needed - available)]
    InsufficientSamples { needed: usize, available: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
}
