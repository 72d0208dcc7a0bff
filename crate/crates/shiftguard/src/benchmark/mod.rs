//! Synthetic shifted-graph benchmarks, detection metrics, and the
//! aggregation-contamination study.

mod kmeans;
mod metrics;
mod shift;
mod study;
mod synth;

pub use kmeans::kmeans;
pub use metrics::{auprc, auroc, evaluate_scores, ContaminationBin, MetricReport};
pub use shift::{
    apply_class_holdout, construct_shift_kmeans, convert_imbalanced, remove_unseen, ShiftMethod,
    ShiftSpec,
};
pub use study::contamination_study;
pub use synth::{synth_graph, SynthConfig};
