//! Anomaly scores, knee thresholding, classification, metrics and injection.

pub mod inject;
pub mod metrics;
pub mod scoring;
pub mod threshold;

pub use inject::{inject_anomalies, InjectConfig};
pub use metrics::{auc, macro_f1, Metrics};
pub use scoring::{score_nodes, score_reconstructions, AnomalyScores, SCORES_HEADER};
pub use threshold::{
    classify, select_threshold, ScoreCurve, Selector, ThresholdResult, CURVE_HEADER,
};
