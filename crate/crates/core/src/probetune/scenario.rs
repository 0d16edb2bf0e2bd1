use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TuneError;

/// One random load step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bus: usize,
    pub delta_p: f64,
    /// Seed of this scenario's own random stream.
    pub seed: u64,
}

/// Draws `n` scenarios with a uniformly chosen bus and a step
/// `ΔP ~ Normal(0, sigma²)`.
///
/// The master seed fixes one seed per scenario and each scenario draws from
/// its own stream, so scenario `j` does not depend on how many others are
/// requested.
pub fn sample_scenarios(seed: u64, n: usize, buses: &[usize], sigma: f64) -> Result<Vec<Scenario>, TuneError> {
    if n == 0 {
        return Err(TuneError::InvalidProblem("at least one scenario is needed".into()));
    }
    if buses.is_empty() {
        return Err(TuneError::InvalidProblem("bus set is empty".into()));
    }
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma > 0.0)
        .ok_or_else(|| TuneError::InvalidProblem(format!("sigma must be positive, got {sigma}")))?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let s: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let bus = buses[rng.random_range(0..buses.len())];
            Scenario { bus, delta_p: normal.sample(&mut rng), seed: s }
        })
        .collect())
}

/// Uniform draws on `[lo, hi)`, one per entry.
pub fn uniform_gains(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
