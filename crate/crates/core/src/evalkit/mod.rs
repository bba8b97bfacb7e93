//! Metrics, curves, the split-suite cross-validation harness and corpus
//! analyses.

mod analysis;
mod curves;
mod cv;
mod metrics;

pub use analysis::{hashtag_ranking, write_ranking_csv};
pub use curves::{pr_curve, roc_auc_by_pairs, roc_curve, write_curve_csv, CurvePoint, RocCurve};
pub use cv::{
    cross_validate, kfold_partitions, EvalConfig, EvalReport, FoldModel, FoldOutput, MetricSummary,
    SplitMetrics,
};
pub use metrics::{f1_from_pr, prf1, ConfusionCounts, Prf1};
