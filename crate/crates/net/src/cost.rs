//! Full remote LT test with request and token accounting.

use serde::{Deserialize, Serialize};

use logtrack_core::store::Usage;
use logtrack_core::{permutation_test, SampleSet, TestResult};

use crate::client::{require_ok, Prober};
use crate::config::EndpointConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteTest {
    pub result: TestResult<f64>,
    pub requests: u64,
    /// Summed over responses; responses without usage add nothing.
    pub usage: Usage,
    pub responses_without_usage: u64,
}

#[derive(Default)]
struct Tally {
    requests: u64,
    usage: Usage,
    missing: u64,
}

async fn collect(prober: &Prober, cfg: &EndpointConfig, n: usize, tally: &mut Tally) -> Result<SampleSet<f64>> {
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let s = require_ok(cfg, prober.probe(cfg).await?)?;
        tally.requests += s.attempts as u64;
        match s.usage {
            Some(u) => {
                tally.usage.prompt_tokens += u.prompt_tokens;
                tally.usage.completion_tokens += u.completion_tokens;
            }
            None => tally.missing += 1,
        }
        samples.push(s.point.vector);
    }
    Ok(SampleSet::from_samples(samples)?)
}

/// Draws `n` probes from each endpoint, sequentially, and runs the
/// permutation test on them.
pub async fn run_remote_lt_test(
    prober: &Prober,
    a: &EndpointConfig,
    b: &EndpointConfig,
    n: usize,
    permutations: usize,
    seed: u64,
) -> Result<RemoteTest> {
    let mut tally = Tally::default();
    let sa = collect(prober, a, n, &mut tally).await?;
    let sb = collect(prober, b, n, &mut tally).await?;
    Ok(RemoteTest {
        result: permutation_test(&sa, &sb, permutations, seed)?,
        requests: tally.requests,
        usage: tally.usage,
        responses_without_usage: tally.missing,
    })
}
