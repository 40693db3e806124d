//! Brute-force validators that share no code path with [`crate::analysis`].
//!
//! The chain simulators run with the sensor always transmitting (`d = 0`), so
//! the buffer-length recursion is driven by i.i.d. channel and processor
//! draws alone and no plant is involved.

use std::collections::BTreeMap;
use std::io::Write;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::domain::{PlantSpec, StochasticEnv};
use crate::runtime::{categorical, update_lambda, Beta, BufferState, RngStream, RuntimeError};

/// Outcome counts with binomial error bars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalPmf {
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
}

impl EmpiricalPmf {
    pub fn record(&mut self, outcome: usize) {
        *self.counts.entry(outcome).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn count(&self, outcome: usize) -> u64 {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }

    pub fn frequency(&self, outcome: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(outcome) as f64 / self.total as f64
        }
    }

    /// `(outcome, frequency)` pairs in increasing outcome order.
    pub fn frequencies(&self) -> Vec<(usize, f64)> {
        self.counts
            .iter()
            .map(|(&k, &c)| (k, c as f64 / self.total as f64))
            .collect()
    }

    /// Three binomial standard errors at probability `p`.
    pub fn half_width_at(&self, p: f64) -> f64 {
        3.0 * (p * (1.0 - p) / self.total as f64).sqrt()
    }

    /// Three standard errors around the observed frequency.
    pub fn half_width(&self, outcome: usize) -> f64 {
        self.half_width_at(self.frequency(outcome))
    }

    pub fn max_outcome(&self) -> Option<usize> {
        self.counts.keys().next_back().copied()
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.counts.iter().map(|(&k, &c)| k as f64 * c as f64).sum();
        s / self.total as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let s: f64 = self
            .counts
            .iter()
            .map(|(&k, &c)| (k as f64 - m).powi(2) * c as f64)
            .sum();
        s / self.total as f64
    }
}

/// Total variation distance between an empirical pmf and a reference pmf on
/// `1..=reference.len()`. Reference mass beyond its support counts as
/// disagreement.
pub fn tv_distance(empirical: &EmpiricalPmf, reference: &[f64]) -> f64 {
    let mut diff = 0.0;
    for (i, &r) in reference.iter().enumerate() {
        diff += (empirical.frequency(i + 1) - r).abs();
    }
    let beyond_emp: f64 = empirical
        .counts
        .range(reference.len() + 1..)
        .map(|(_, &c)| c as f64 / empirical.total as f64)
        .sum();
    let beyond_ref = (1.0 - reference.iter().sum::<f64>()).max(0.0);
    0.5 * (diff + beyond_emp + beyond_ref)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub passed: bool,
}

/// Pearson goodness-of-fit over outcomes `1..=reference.len()` whose expected
/// count is at least `min_expected`; everything else is pooled into one bin.
pub fn chi_square_test(
    empirical: &EmpiricalPmf,
    reference: &[f64],
    min_expected: f64,
    confidence: f64,
) -> ChiSquareTest {
    let n = empirical.total as f64;
    let mut stat = 0.0;
    let mut bins = 0usize;
    let mut pooled_expected = n;
    let mut pooled_observed = n;
    for (i, &r) in reference.iter().enumerate() {
        let expected = n * r;
        if expected >= min_expected {
            let observed = empirical.count(i + 1) as f64;
            stat += (observed - expected).powi(2) / expected;
            bins += 1;
            pooled_expected -= expected;
            pooled_observed -= observed;
        }
    }
    if pooled_expected >= min_expected {
        stat += (pooled_observed - pooled_expected).powi(2) / pooled_expected;
        bins += 1;
    }
    let dof = bins.saturating_sub(1).max(1);
    let critical = ChiSquared::new(dof as f64)
        .expect("positive dof")
        .inverse_cdf(confidence);
    ChiSquareTest {
        statistic: stat,
        dof,
        critical,
        passed: stat <= critical,
    }
}

/// One transmit-always step of the buffer-length chain.
fn chain_step(lambda: usize, env: &StochasticEnv, rng: &mut RngStream) -> usize {
    let beta = if rng.uniform() < env.q {
        Beta::Received
    } else {
        Beta::Lost
    };
    let u = rng.uniform();
    let n = if beta == Beta::Received {
        categorical(&env.p, u)
    } else {
        0
    };
    update_lambda(lambda, beta, n)
}

/// Empirical distribution of the times between consecutive zeros of the
/// effective buffer length, from `n_returns` simulated returns.
///
/// Returns `None` if a single excursion exceeds `max_excursion` steps (the
/// chain cannot return when every reception computes at least one input).
pub fn simulate_lambda_chain_capped(
    env: &StochasticEnv,
    n_returns: u64,
    max_excursion: usize,
    rng: &mut RngStream,
) -> Option<EmpiricalPmf> {
    let mut pmf = EmpiricalPmf::default();
    for _ in 0..n_returns {
        let mut lambda = 0;
        let mut steps = 0;
        loop {
            lambda = chain_step(lambda, env, rng);
            steps += 1;
            if lambda == 0 {
                break;
            }
            if steps >= max_excursion {
                return None;
            }
        }
        pmf.record(steps);
    }
    Some(pmf)
}

pub fn simulate_lambda_chain(env: &StochasticEnv, n_returns: u64, rng: &mut RngStream) -> EmpiricalPmf {
    simulate_lambda_chain_capped(env, n_returns, usize::MAX, rng)
        .expect("no excursion cap was set")
}

/// Frequency estimate of the transition matrix among lengths `1..=capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    /// `counts[l-1][j]`: transitions from length `l` to length `j` (`j` may be 0).
    pub counts: Vec<Vec<u64>>,
    /// Visits to each length `1..=capacity` that were followed by a step.
    pub visits: Vec<u64>,
    /// Rows (1-based lengths) with fewer than [`MIN_ROW_VISITS`] visits.
    pub sparse_rows: Vec<usize>,
}

pub const MIN_ROW_VISITS: u64 = 1000;

impl TransitionEstimate {
    /// Estimated `G[l][j]` for 1-based `l, j`.
    pub fn g(&self, l: usize, j: usize) -> f64 {
        let v = self.visits[l - 1];
        if v == 0 {
            0.0
        } else {
            self.counts[l - 1][j] as f64 / v as f64
        }
    }

    /// Three binomial standard errors for a true entry `p` in row `l`.
    pub fn half_width(&self, l: usize, p: f64) -> f64 {
        3.0 * (p * (1.0 - p) / self.visits[l - 1].max(1) as f64).sqrt()
    }

    pub fn row_sum(&self, l: usize) -> f64 {
        let cap = self.visits.len();
        (1..=cap).map(|j| self.g(l, j)).sum()
    }
}

/// Runs the chain for `n_steps` and tallies transitions out of every nonzero
/// length.
pub fn empirical_transition_matrix(
    env: &StochasticEnv,
    n_steps: u64,
    rng: &mut RngStream,
) -> TransitionEstimate {
    let cap = env.capacity;
    let mut counts = vec![vec![0u64; cap + 1]; cap];
    let mut visits = vec![0u64; cap];
    let mut lambda = 0;
    for _ in 0..n_steps {
        let next = chain_step(lambda, env, rng);
        if lambda >= 1 {
            visits[lambda - 1] += 1;
            counts[lambda - 1][next] += 1;
        }
        lambda = next;
    }
    let sparse_rows = visits
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < MIN_ROW_VISITS)
        .map(|(i, _)| i + 1)
        .collect();
    TransitionEstimate {
        counts,
        visits,
        sparse_rows,
    }
}

/// Writes `j, analytic, empirical, half_width` rows for `j = 1..=rows`.
pub fn write_comparison_csv<W: Write>(
    out: W,
    analytic: &[f64],
    empirical: &EmpiricalPmf,
    rows: usize,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["j", "analytic", "empirical", "half_width"])?;
    for j in 1..=rows {
        let a = analytic.get(j - 1).copied().unwrap_or(0.0);
        wtr.write_record([
            j.to_string(),
            a.to_string(),
            empirical.frequency(j).to_string(),
            empirical.half_width_at(a).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Literal case table of the anytime algorithm, kept independent of
/// [`crate::runtime::anytime_step`] for differential testing.
///
/// Blocks are handled as a `Vec` of per-slot vectors. The `while` loop runs
/// while the iteration budget `n` lasts and `j <= capacity`; the first
/// computed input is output immediately and clears the buffer.
pub fn reference_anytime_step(
    x: Option<&[f64]>,
    beta: Beta,
    n: usize,
    buf: &BufferState,
    plant: &PlantSpec,
) -> Result<(Vec<f64>, BufferState), RuntimeError> {
    let cap = buf.capacity();
    let p = buf.input_dim();
    if n > cap {
        return Err(RuntimeError::BudgetExceedsCapacity { n, capacity: cap });
    }
    if beta != Beta::Received && n > 0 {
        return Err(RuntimeError::ComputeWithoutReception { beta, n });
    }
    let mut blocks: Vec<Vec<f64>> = buf.as_slice().chunks(p).map(<[f64]>::to_vec).collect();
    let zero = vec![0.0; p];
    let shift = |b: &mut Vec<Vec<f64>>| {
        b.remove(0);
        b.push(vec![0.0; p]);
    };

    // Step 2
    let mut chi = Vec::new();
    match beta {
        Beta::Silent => blocks = vec![zero.clone(); cap],
        Beta::Lost => shift(&mut blocks),
        Beta::Received => {
            chi = x.ok_or(RuntimeError::MissingState)?.to_vec();
            shift(&mut blocks);
        }
    }

    // Step 3
    let mut j = 1;
    let mut output = None;
    let mut budget = if beta == Beta::Received { n } else { 0 };
    while budget > 0 && j <= cap {
        let uj = plant.kappa(&chi);
        if j == 1 {
            output = Some(uj.clone());
            blocks = vec![zero.clone(); cap];
        }
        blocks[j - 1] = uj.clone();
        budget -= 1;
        if budget == 0 {
            break;
        }
        chi = plant.f(&chi, &uj);
        j += 1;
    }

    // Step 4
    let u = match output {
        Some(u) => u,
        None => blocks[0].clone(),
    };

    let lambda = match (beta, n) {
        (_, n) if n >= 1 => n,
        (Beta::Silent, _) => 0,
        _ => buf.lambda().saturating_sub(1),
    };
    Ok((u, BufferState::from_parts(blocks.concat(), p, lambda)))
}
