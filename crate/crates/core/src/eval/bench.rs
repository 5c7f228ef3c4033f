//! Difficulty-ladder benchmark and multi-prompt ablation on the simulator.
//!
//! Trial seeds depend on the model and trial index only, never on the
//! ladder rung, so every rung is compared on common random numbers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    grade_response, met_statistic_prompts, mmlu_statistic, AccuracyMatrix, MetAggregation,
    TokenSequence, DEFAULT_MET_LEN, DEFAULT_MET_PROMPTS,
};
use crate::error::{Error, Result};
use crate::eval::bootstrap::{bootstrap_ci, AucCell, Cells, Resampled};
use crate::eval::roc::roc_auc;
use crate::lt::lt_statistic_sets;
use crate::rng::derive_seed;
use crate::simulator::{
    apply_variant, mmlu_gold, sample_mmlu_answer, sample_set, SequenceSampler, SyntheticModel,
    VariantKind, VariantSpec, DEFAULT_LOGIT_SCALE, DEFAULT_NOISE_SIGMA, DEFAULT_TOP_K,
    DEFAULT_VOCAB,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lt,
    Met,
    Mmlu,
}

impl Method {
    fn tag(self) -> u64 {
        match self {
            Method::Lt => 1,
            Method::Met => 2,
            Method::Mmlu => 3,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lt" => Ok(Method::Lt),
            "met" => Ok(Method::Met),
            "mmlu" => Ok(Method::Mmlu),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lt => "lt",
            Method::Met => "met",
            Method::Mmlu => "mmlu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetSettings {
    pub prompts: usize,
    pub seq_len: usize,
    pub temperature: f64,
    pub aggregation: MetAggregation,
}

impl Default for MetSettings {
    fn default() -> Self {
        MetSettings {
            prompts: DEFAULT_MET_PROMPTS,
            seq_len: DEFAULT_MET_LEN,
            temperature: 1.0,
            aggregation: MetAggregation::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmluSettings {
    pub questions: usize,
    pub temperature: f64,
}

impl Default for MmluSettings {
    fn default() -> Self {
        MmluSettings {
            questions: 100,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub methods: Vec<Method>,
    pub variant: VariantKind,
    pub ladder: Vec<f64>,
    /// Null and alternative tests per cell.
    pub trials: usize,
    /// Samples per group in each test.
    pub n_per_test: usize,
    pub seed: u64,
    /// Independently drawn base models; the outer bootstrap layer.
    pub models: usize,
    pub vocab_size: usize,
    pub top_k: usize,
    pub noise_sigma: f64,
    pub logit_scale: f64,
    pub met: MetSettings,
    pub mmlu: MmluSettings,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    /// AUC at or above which a row is reported as a good detection.
    pub good_auc: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            methods: vec![Method::Lt, Method::Met, Method::Mmlu],
            variant: VariantKind::LogitShift,
            ladder: crate::simulator::LadderConfig::default().magnitudes(),
            trials: 200,
            n_per_test: 10,
            seed: 0,
            models: 1,
            vocab_size: DEFAULT_VOCAB,
            top_k: DEFAULT_TOP_K,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            logit_scale: DEFAULT_LOGIT_SCALE,
            met: MetSettings::default(),
            mmlu: MmluSettings::default(),
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            good_auc: 0.9,
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("plan has no methods"));
        }
        if self.ladder.is_empty() {
            return Err(Error::invalid("difficulty ladder is empty"));
        }
        for &m in &self.ladder {
            VariantSpec::new(self.variant, m)?;
        }
        if self.trials == 0 || self.models == 0 {
            return Err(Error::invalid("trials and models must be >= 1"));
        }
        if self.n_per_test < 2 {
            return Err(Error::invalid("n_per_test must be >= 2"));
        }
        if self.met.prompts == 0 || self.met.seq_len == 0 || self.mmlu.questions == 0 {
            return Err(Error::invalid("baseline settings must be positive"));
        }
        if !(self.met.temperature > 0.0 && self.mmlu.temperature > 0.0) {
            return Err(Error::invalid("sampling temperatures must be > 0"));
        }
        Ok(())
    }

    /// Base model `index` of this plan.
    pub fn model(&self, index: usize) -> Result<SyntheticModel> {
        SyntheticModel::random(
            self.vocab_size,
            self.logit_scale,
            self.noise_sigma,
            self.top_k,
            derive_seed(self.seed, &[0x40de1, index as u64]),
        )
    }

    /// Per-trial statistics of `method` for model `index`: original against
    /// original when `magnitude` is `None`, original against the variant
    /// otherwise.
    pub fn trial_statistics(
        &self,
        method: Method,
        index: usize,
        magnitude: Option<f64>,
    ) -> Result<Vec<f64>> {
        let original = self.model(index)?;
        let variant = match magnitude {
            Some(m) => Some(apply_variant(&original, &VariantSpec::new(self.variant, m)?)?),
            None => None,
        };
        let ctx = Trials {
            method,
            original: &original,
            variant: variant.as_ref(),
            n: self.n_per_test,
            met: &self.met,
            mmlu: &self.mmlu,
        };
        let base = derive_seed(self.seed, &[0x7a1a, index as u64]);
        (0..self.trials as u64)
            .into_par_iter()
            .map(|t| ctx.statistic(derive_seed(base, &[t])))
            .collect()
    }
}

struct Trials<'a> {
    method: Method,
    original: &'a SyntheticModel,
    variant: Option<&'a SyntheticModel>,
    n: usize,
    met: &'a MetSettings,
    mmlu: &'a MmluSettings,
}

impl Trials<'_> {
    fn statistic(&self, trial_seed: u64) -> Result<f64> {
        // null tests use streams 0/1, alternative tests 2/3
        let (first, second, sa, sb) = match self.variant {
            None => (self.original, self.original, 0, 1),
            Some(v) => (self.original, v, 2, 3),
        };
        let sa = derive_seed(trial_seed, &[sa]);
        let sb = derive_seed(trial_seed, &[sb]);
        match self.method {
            Method::Lt => lt_statistic_sets(
                &sample_set(first, self.n, sa),
                &sample_set(second, self.n, sb),
            ),
            Method::Met => {
                let ga = SequenceSampler::new(first);
                let gb = SequenceSampler::new(second);
                let draw = |g: &SequenceSampler, p: usize, stream: u64| -> Vec<TokenSequence> {
                    (0..self.n as u64)
                        .map(|j| {
                            g.sample(
                                p,
                                self.met.seq_len,
                                self.met.temperature,
                                derive_seed(stream, &[p as u64, j]),
                            )
                        })
                        .collect()
                };
                let prompts: Vec<_> = (0..self.met.prompts)
                    .map(|p| (draw(&ga, p, sa), draw(&gb, p, sb)))
                    .collect();
                met_statistic_prompts(&prompts, self.met.aggregation, self.met.seq_len)
            }
            Method::Mmlu => {
                let a = self.accuracy(first, sa)?;
                let b = self.accuracy(second, sb)?;
                mmlu_statistic(&a, &b)
            }
        }
    }

    fn accuracy(&self, m: &SyntheticModel, stream: u64) -> Result<AccuracyMatrix> {
        let rows = (0..self.n as u64)
            .map(|j| {
                let draw = derive_seed(stream, &[j]);
                (0..self.mmlu.questions)
                    .map(|q| {
                        let answer = sample_mmlu_answer(m, q, self.mmlu.temperature, draw);
                        // gold depends on the shared seed, not on the variant
                        u8::from(grade_response(&answer.to_string(), mmlu_gold(m.seed, q)))
                    })
                    .collect()
            })
            .collect();
        AccuracyMatrix::from_rows(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub variant: VariantKind,
    pub magnitude: f64,
    /// Mean AUC over models.
    pub auc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_degenerate: bool,
    pub good_detection: bool,
    pub models: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn get(&self, method: Method, magnitude: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.magnitude == magnitude)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,variant,magnitude,auc,ci_lo,ci_hi,ci_degenerate,good_detection,models,trials\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.variant,
                r.magnitude,
                r.auc,
                r.ci_lo,
                r.ci_hi,
                r.ci_degenerate,
                r.good_detection,
                r.models,
                r.trials
            ));
        }
        out
    }
}

/// AUC with bootstrap interval for every (method, magnitude) of the plan.
pub fn run_benchmark(plan: &ExperimentPlan) -> Result<BenchTable> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &method in &plan.methods {
        let nulls = (0..plan.models)
            .map(|i| plan.trial_statistics(method, i, None))
            .collect::<Result<Vec<_>>>()?;
        for (rung, &magnitude) in plan.ladder.iter().enumerate() {
            let cells = (0..plan.models)
                .map(|i| {
                    Ok(AucCell {
                        null: nulls[i].clone(),
                        alt: plan.trial_statistics(method, i, Some(magnitude))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let data = Resampled(cells);
            let ci = bootstrap_ci(
                &data,
                |d: &Resampled<AucCell<f64>>| d.mean_auc(),
                plan.bootstrap_resamples,
                plan.ci_level,
                derive_seed(plan.seed, &[0xc1, method.tag(), rung as u64]),
            )?;
            rows.push(BenchRow {
                method,
                variant: plan.variant,
                magnitude,
                auc: ci.point,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                ci_degenerate: ci.degenerate,
                good_detection: ci.point >= plan.good_auc,
                models: plan.models,
                trials: plan.trials,
            });
        }
    }
    Ok(BenchTable { rows })
}

/// One probing prompt, modeled by its own noise level and base logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptProfile {
    pub name: String,
    pub noise_sigma: f64,
    /// Prompts with equal seeds induce identical logit distributions.
    pub logit_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationPlan {
    pub prompts: Vec<PromptProfile>,
    pub models: usize,
    pub variant: VariantKind,
    pub ladder: Vec<f64>,
    pub trials: usize,
    pub n_per_test: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub top_k: usize,
    pub logit_scale: f64,
}

impl Default for AblationPlan {
    fn default() -> Self {
        AblationPlan {
            prompts: Vec::new(),
            models: 3,
            variant: VariantKind::LogitShift,
            ladder: vec![0.0078125, 0.015625, 0.03125],
            trials: 100,
            n_per_test: 10,
            seed: 0,
            vocab_size: DEFAULT_VOCAB,
            top_k: DEFAULT_TOP_K,
            logit_scale: DEFAULT_LOGIT_SCALE,
        }
    }
}

impl AblationPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub prompt: String,
    /// Mean over models of (AUC - mean AUC of all prompts on that model).
    pub relative: f64,
    pub absolute_mean: f64,
    pub absolute: Vec<f64>,
}

/// LT performance of each prompt relative to the other prompts.
///
/// A prompt's absolute score on a model is its AUC averaged over the
/// ladder. Scores are centered per model and the centered values averaged
/// across models.
pub fn prompt_ablation(plan: &AblationPlan) -> Result<Vec<AblationRow>> {
    if plan.prompts.len() < 2 {
        return Err(Error::invalid("prompt ablation needs at least two prompts"));
    }
    if plan.models == 0 {
        return Err(Error::invalid("prompt ablation needs at least one model"));
    }
    let mut absolute = vec![vec![0.0; plan.models]; plan.prompts.len()];
    for (p, profile) in plan.prompts.iter().enumerate() {
        for (m, slot) in absolute[p].iter_mut().enumerate() {
            let sub = ExperimentPlan {
                methods: vec![Method::Lt],
                variant: plan.variant,
                ladder: plan.ladder.clone(),
                trials: plan.trials,
                n_per_test: plan.n_per_test,
                seed: derive_seed(plan.seed, &[m as u64]),
                models: 1,
                vocab_size: plan.vocab_size,
                top_k: plan.top_k,
                noise_sigma: profile.noise_sigma,
                logit_scale: plan.logit_scale,
                ..ExperimentPlan::default()
            };
            sub.validate()?;
            let original = SyntheticModel::random(
                plan.vocab_size,
                plan.logit_scale,
                profile.noise_sigma,
                plan.top_k,
                derive_seed(plan.seed, &[m as u64, profile.logit_seed]),
            )?;
            *slot = ladder_auc(&sub, &original)?;
        }
    }
    let model_means: Vec<f64> = (0..plan.models)
        .map(|m| absolute.iter().map(|a| a[m]).sum::<f64>() / plan.prompts.len() as f64)
        .collect();
    Ok(plan
        .prompts
        .iter()
        .zip(absolute)
        .map(|(profile, abs)| {
            let relative = abs
                .iter()
                .zip(&model_means)
                .map(|(a, mean)| a - mean)
                .sum::<f64>()
                / plan.models as f64;
            AblationRow {
                prompt: profile.name.clone(),
                relative,
                absolute_mean: abs.iter().sum::<f64>() / abs.len() as f64,
                absolute: abs,
            }
        })
        .collect())
}

fn ladder_auc(plan: &ExperimentPlan, original: &SyntheticModel) -> Result<f64> {
    let stats = |variant: Option<&SyntheticModel>| -> Result<Vec<f64>> {
        let ctx = Trials {
            method: Method::Lt,
            original,
            variant,
            n: plan.n_per_test,
            met: &plan.met,
            mmlu: &plan.mmlu,
        };
        (0..plan.trials as u64)
            .into_par_iter()
            .map(|t| ctx.statistic(derive_seed(plan.seed, &[0x7a1a, t])))
            .collect()
    };
    let null = stats(None)?;
    let mut total = 0.0;
    for &m in &plan.ladder {
        let v = apply_variant(original, &VariantSpec::new(plan.variant, m)?)?;
        total += roc_auc(&null, &stats(Some(&v))?)?.auc;
    }
    Ok(total / plan.ladder.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>) -> ExperimentPlan {
        ExperimentPlan {
            methods,
            ladder: vec![0.0, 1.0],
            trials: 30,
            bootstrap_resamples: 100,
            met: MetSettings {
                prompts: 3,
                seq_len: 10,
                ..MetSettings::default()
            },
            mmlu: MmluSettings {
                questions: 20,
                ..MmluSettings::default()
            },
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn reproducible_and_sane() {
        let plan = small(vec![Method::Lt, Method::Met, Method::Mmlu]);
        let a = run_benchmark(&plan).unwrap();
        let b = run_benchmark(&plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        let top = a.get(Method::Lt, 1.0).unwrap();
        assert!(top.auc > 0.99, "{top:?}");
        assert!(top.good_detection);
        assert!(a.to_csv().lines().count() == 7);
        assert_eq!(a.to_jsonl().lines().count(), 6);
    }

    #[test]
    fn plan_validation() {
        let mut p = small(vec![Method::Lt]);
        p.ladder.clear();
        assert!(run_benchmark(&p).is_err());
        let mut p = small(vec![Method::Lt]);
        p.n_per_test = 1;
        assert!(p.validate().is_err());
        assert!(ExperimentPlan::from_toml("trials = 5\nbogus = 1").is_err());
        let p = ExperimentPlan::from_toml("methods = [\"lt\"]\nladder = [0.5]\ntrials = 5").unwrap();
        assert_eq!(p.methods, vec![Method::Lt]);
    }

    #[test]
    fn ablation_needs_two_prompts() {
        let plan = AblationPlan {
            prompts: vec![PromptProfile {
                name: "x".into(),
                noise_sigma: 0.05,
                logit_seed: 1,
            }],
            ..AblationPlan::default()
        };
        assert!(prompt_ablation(&plan).is_err());
    }
}
