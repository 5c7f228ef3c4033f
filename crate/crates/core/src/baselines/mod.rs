//! Comparison baselines run through the same permutation engine as
//! logprob tracking.

pub mod met;
pub mod mmlu;

pub use met::{
    hamming_kernel, met_statistic_prompts, met_test, met_test_prompts, mmd_parts, mmd_statistic,
    MetAggregation, MmdParts, TokenSequence, DEFAULT_MET_LEN, DEFAULT_MET_PROMPTS,
};
pub use mmlu::{
    grade_response, mmlu_statistic, mmlu_test, per_prompt_accuracies, read_questions,
    AccuracyMatrix, Question,
};
