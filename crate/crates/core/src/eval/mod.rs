//! Evaluation protocol: null (original/original) and alternative
//! (original/variant) statistics, ROC AUC, bootstrap intervals, and the
//! difficulty-ladder benchmark.

pub mod bench;
pub mod bootstrap;
pub mod roc;

pub use bench::{
    prompt_ablation, run_benchmark, AblationPlan, AblationRow, BenchRow, BenchTable, ExperimentPlan,
    MetSettings, Method, MmluSettings, PromptProfile,
};
pub use bootstrap::{bootstrap_ci, AucCell, Cells, Fixed, Interval, Leaf, Resample, Resampled};
pub use roc::{roc_auc, trapezoid_area, RocResult};
