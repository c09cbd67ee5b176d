//! Dataset ingestion, schedule execution and evaluation utilities.

mod dataset;
mod metrics;
mod schedule;

pub use dataset::{
    annotations_to_json, load_annotations, load_annotations_with, parse_annotations,
    write_annotations, Dataset,
};
pub use metrics::{
    balanced_finetune_loss, balanced_finetune_subset, distillation_loss, diversity_report,
    diversity_with_kernel, mse, pck_score, pck_score_with, DistillationTriple, DiversityMetrics,
    HeatmapSet, PckCount, PckReport, Predictions, ReferenceLength, DEFAULT_PCK_TAU,
};
pub use schedule::{
    run_schedule, write_metrics_csv, write_plot_series, write_warped_exemplars, AugmentationConfig,
    ExperimentSchedule, MemoryConfig, StepReport,
};
