//! Experiment orchestration, detection-quality metrics and plot-data export.

mod experiment;
mod export;
mod metrics;

pub use experiment::{
    choose_threshold, rng_for, run_experiment, run_experiment_in_memory, write_artifacts, write_metrics, CaseResult,
    CaseSpec, DeltaZeta, DetectionConfig, ExperimentConfig, ExperimentOutput, OutageSchedule, OutsideResult,
    OutsideZoneStats, ZoneSummary, DELTA_ZETA_FORMAT, METRICS_FORMAT, SCORES_FORMAT, STREAM_SPLIT, STREAM_TRAIN,
    STREAM_ZONES,
};
pub use export::{export_plot_data, histogram, Artifact, ExportRequest, HISTOGRAM_FORMAT};
pub use metrics::{auc, compute_metrics, ConfusionCounts, Metrics, MetricsRow, METRIC_NAMES};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Zones,
    Simulate,
    Train,
    Detect,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Zones => "zones",
            Stage::Simulate => "simulate",
            Stage::Train => "train",
            Stage::Detect => "detect",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        })
    }
}

impl Stage {
    pub fn wrap<E: std::error::Error + Send + Sync + 'static>(self, e: E) -> EvalError {
        EvalError::Stage {
            stage: self,
            source: Box::new(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC needs both classes present")]
    SingleClassAuc,
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl EvalError {
    /// Errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EvalError::Config(_) | EvalError::LengthMismatch { .. } | EvalError::SingleClassAuc
        )
    }
}
