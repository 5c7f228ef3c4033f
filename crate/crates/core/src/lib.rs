//! Detecting changes behind LLM APIs from first-token logprobs.
//!
//! The core is generic over the floating-point type through [`Scalar`];
//! the `*F64` and `*F32` aliases below fix it for common use.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod lt;
pub mod monitor;
pub mod permutation;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod store;
pub mod token;

pub use error::{Error, Result};
pub use lt::{
    exact_permutation_test, exact_permutation_test_capped, lt_statistic, lt_statistic_sets,
    permutation_test, to_matrix, token_union, LogprobMatrix,
};
pub use monitor::{
    adjacent_window_statistic, detect_changes, running_stats, scan_statistics, ChangeEvent,
    DetectorParams, OnlineMonitor, SeriesPoint,
};
pub use permutation::{Permutations, TestResult, DEFAULT_EXACT_CAP};
pub use scalar::Scalar;
pub use token::{LogprobEntry, LogprobVector, SampleSet, TokenKey};

pub type LogprobVectorF64 = LogprobVector<f64>;
pub type LogprobVectorF32 = LogprobVector<f32>;
pub type SampleSetF64 = SampleSet<f64>;
pub type SampleSetF32 = SampleSet<f32>;
pub type LogprobMatrixF64 = LogprobMatrix<f64>;
pub type LogprobMatrixF32 = LogprobMatrix<f32>;
pub type TestResultF64 = TestResult<f64>;
pub type TestResultF32 = TestResult<f32>;
pub type SeriesPointF64 = SeriesPoint<f64>;
pub type ChangeEventF64 = ChangeEvent<f64>;
pub type DetectorParamsF64 = DetectorParams<f64>;
