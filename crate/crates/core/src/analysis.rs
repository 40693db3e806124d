//! Stability quantities for the baseline and the buffered anytime loop.
//!
//! The baseline loop is certified by the one-step factor
//! `Gamma = (1-q) alpha + q (p0 alpha + (1-p0) rho) < 1`. The anytime loop is
//! certified over the intervals between consecutive instants at which the
//! effective buffer length is zero: with `Delta` the length of such an
//! interval, `Omega = alpha * sum_j rho^(j-1) Pr{Delta = j} < 1`.
//!
//! `Pr{Delta = j}` is the first-return-time distribution of the buffer-length
//! chain. It is carried by [`LambdaChain`], whose matrix `G` holds the
//! transitions among lengths `1..=capacity` with the escape to `0` removed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::domain::{PlantSpec, StochasticEnv};

/// Tail bound target used for the default series length.
pub const SERIES_TAIL_TOL: f64 = 1e-12;
/// Hard cap on series / truncation lengths.
pub const MAX_SERIES_LEN: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("alpha = {alpha} is smaller than rho = {rho}")]
    AlphaBelowRho { alpha: f64, rho: f64 },
    #[error("Gamma = {0} >= 1: baseline stability condition fails")]
    GammaNotContractive(f64),
    #[error("Omega = {0} >= 1: anytime stability condition fails")]
    OmegaNotContractive(f64),
    #[error("I - rho G is singular at rho = {0}")]
    Singular(f64),
}

fn check_unit(name: &'static str, value: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange {
            name,
            value,
            range: "[0, 1]",
        })
    }
}

fn check_rho(rho: f64) -> Result<(), AnalysisError> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange {
            name: "rho",
            value: rho,
            range: "[0, 1)",
        })
    }
}

/// Expected one-step Lyapunov factor of the baseline loop outside `B_d`.
pub fn compute_gamma(alpha: f64, rho: f64, q: f64, p0: f64) -> Result<f64, AnalysisError> {
    check_rho(rho)?;
    check_unit("q", q)?;
    check_unit("p0", p0)?;
    if alpha < rho {
        return Err(AnalysisError::AlphaBelowRho { alpha, rho });
    }
    Ok((1.0 - q) * alpha + q * (p0 * alpha + (1.0 - p0) * rho))
}

/// Right-hand side of the baseline moment bound
/// `E phi1(|x(k)|) <= Gamma^k E phi2(|x(0)|) + tail`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Bound {
    pub gamma: f64,
    /// `q (1-p0) (alpha-rho) phi2(d) / (1-Gamma)`.
    pub tail: f64,
}

impl Theorem1Bound {
    pub fn new(plant: &PlantSpec, env: &StochasticEnv) -> Result<Self, AnalysisError> {
        let gamma = compute_gamma(plant.alpha, plant.rho, env.q, env.p0())?;
        if gamma >= 1.0 {
            return Err(AnalysisError::GammaNotContractive(gamma));
        }
        let big_d = plant.phi2(plant.d);
        let tail = env.q * (1.0 - env.p0()) * (plant.alpha - plant.rho) * big_d / (1.0 - gamma);
        Ok(Self { gamma, tail })
    }

    pub fn at(&self, k: u32, e_phi2_x0: f64) -> f64 {
        self.gamma.powi(k as i32) * e_phi2_x0 + self.tail
    }
}

pub fn theorem1_bound(
    plant: &PlantSpec,
    env: &StochasticEnv,
    k: u32,
    e_phi2_x0: f64,
) -> Result<f64, AnalysisError> {
    Ok(Theorem1Bound::new(plant, env)?.at(k, e_phi2_x0))
}

/// Buffer-length chain restricted to lengths `1..=capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChain {
    /// `g[l-1][j-1] = Pr{lambda' = j | lambda = l}` for `l, j >= 1`.
    pub g: DMatrix<f64>,
    /// Entry rates from length 0: `theta_j = q p_j`.
    pub theta: DVector<f64>,
    /// One-step return mass `1 - q + p0 q`.
    pub return1: f64,
    pub q: f64,
    pub p: Vec<f64>,
}

/// Transition structure of the effective buffer length while the sensor keeps
/// transmitting:
///
/// * a fresh computation of `j` inputs (prob. `q p_j`) jumps to `j`;
/// * otherwise (prob. `1 - q + q p0`) the length counts down by one.
///
/// For `l >= 2` the count-down target `l - 1` also absorbs the fresh
/// computation of exactly `l - 1` inputs.
pub fn build_lambda_chain(env: &StochasticEnv) -> LambdaChain {
    let cap = env.capacity;
    let q = env.q;
    let return1 = env.no_compute_prob();
    let mut g = DMatrix::zeros(cap, cap);
    for l in 1..=cap {
        for j in 1..=cap {
            g[(l - 1, j - 1)] = if l >= 2 && j == l - 1 {
                1.0 - q + (env.p[0] + env.p[l - 1]) * q
            } else {
                env.p[j] * q
            };
        }
    }
    let theta = DVector::from_iterator(cap, env.p[1..].iter().map(|pj| q * pj));
    LambdaChain {
        g,
        theta,
        return1,
        q,
        p: env.p.clone(),
    }
}

impl LambdaChain {
    pub fn capacity(&self) -> usize {
        self.theta.len()
    }

    /// Sequence of row vectors `theta^T G^m`, `m = 0, 1, ...`.
    fn entry_flow(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        let gt = self.g.transpose();
        std::iter::successors(Some(self.theta.clone()), move |v| Some(&gt * v))
    }

    /// `Pr{Delta = j}` for `j = 1..=len`.
    pub fn delta_pmf_prefix(&self, len: usize) -> Vec<f64> {
        if len == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(len);
        out.push(self.return1);
        out.extend(
            self.entry_flow()
                .take(len - 1)
                .map(|v| self.return1 * v[0]),
        );
        out
    }

    /// Smallest `J` with `Pr{Delta > J} <= eps`, if reached within
    /// [`MAX_SERIES_LEN`].
    ///
    /// `Pr{Delta > J}` is the mass of `theta^T G^(J-1)` that has not yet
    /// escaped to 0, so it is tracked directly without subtracting from 1.
    pub fn truncation_len(&self, eps: f64) -> Option<usize> {
        if 1.0 - self.return1 <= eps {
            return Some(1);
        }
        self.entry_flow()
            .take(MAX_SERIES_LEN)
            .position(|v| v.sum() <= eps)
            .map(|m| m + 1)
    }

    /// `Pr{Delta > len}`.
    pub fn survival(&self, len: usize) -> f64 {
        if len == 0 {
            return 1.0;
        }
        self.entry_flow().nth(len - 1).map(|v| v.sum()).unwrap_or(0.0)
    }

    /// Solves `(I - rho G) y = e_1` by LU with partial pivoting.
    pub fn resolvent_e1(&self, rho: f64) -> Result<DVector<f64>, AnalysisError> {
        let cap = self.capacity();
        let a = DMatrix::identity(cap, cap) - &self.g * rho;
        let mut e1 = DVector::zeros(cap);
        e1[0] = 1.0;
        let y = a.lu().solve(&e1).ok_or(AnalysisError::Singular(rho))?;
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(AnalysisError::Singular(rho))
        }
    }

    /// `1 + rho theta^T (I - rho G)^{-1} e_1`, i.e. `Omega / (alpha return1)`.
    pub fn omega_bracket(&self, rho: f64) -> Result<f64, AnalysisError> {
        if rho == 0.0 {
            return Ok(1.0);
        }
        let y = self.resolvent_e1(rho)?;
        Ok(1.0 + rho * self.theta.dot(&y))
    }
}

/// `Pr{Delta = j}`, `j >= 1`.
pub fn delta_pmf(chain: &LambdaChain, j: usize) -> f64 {
    assert!(j >= 1, "return times start at 1");
    if j == 1 {
        chain.return1
    } else {
        chain.return1 * chain.entry_flow().nth(j - 2).map(|v| v[0]).unwrap_or(0.0)
    }
}

/// Truncated series value of `Omega` with a rigorous bound on what was cut off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaSeries {
    pub value: f64,
    /// `alpha rho^J / (1 - rho) * Pr{Delta > J}`.
    pub tail_bound: f64,
    pub terms: usize,
}

pub fn compute_omega_series(
    chain: &LambdaChain,
    alpha: f64,
    rho: f64,
    j_max: usize,
) -> Result<OmegaSeries, AnalysisError> {
    check_rho(rho)?;
    let j_max = j_max.max(1);
    let mut sum = chain.return1;
    let mut weight = 1.0;
    let mut remaining = 1.0 - chain.return1;
    for v in chain.entry_flow().take(j_max - 1) {
        weight *= rho;
        sum += weight * chain.return1 * v[0];
        remaining = v.sum() - chain.return1 * v[0];
    }
    let remaining = remaining.max(0.0);
    Ok(OmegaSeries {
        value: alpha * sum,
        tail_bound: alpha * rho.powi(j_max as i32) / (1.0 - rho) * remaining,
        terms: j_max,
    })
}

/// Smallest `J` with `alpha rho^J / (1 - rho) < SERIES_TAIL_TOL`, using only
/// that the remaining probability mass is at most 1.
pub fn default_series_len(alpha: f64, rho: f64) -> usize {
    if rho <= 0.0 || alpha <= 0.0 {
        return 1;
    }
    let target = SERIES_TAIL_TOL * (1.0 - rho) / alpha;
    let j = (target.ln() / rho.ln()).floor() as i64 + 1;
    (j.max(1) as usize).min(MAX_SERIES_LEN)
}

/// Closed form `alpha (1 - q + p0 q)(1 + rho theta^T (I - rho G)^{-1} e_1)`.
pub fn compute_omega_closed(chain: &LambdaChain, alpha: f64, rho: f64) -> Result<f64, AnalysisError> {
    check_rho(rho)?;
    Ok(alpha * chain.return1 * chain.omega_bracket(rho)?)
}

/// Equivalent form of `Omega < 1`:
/// `[p_1 .. p_cap] (I - rho G)^{-1} e_1 < (1 - alpha + alpha q (1-p0)) / (alpha rho q (1 - q (1-p0)))`.
///
/// When the right-hand denominator vanishes, `Omega` reduces to
/// `alpha (1 - q + p0 q)` and the test degenerates to its numerator being
/// positive.
pub fn anytime_condition_holds(chain: &LambdaChain, alpha: f64, rho: f64) -> Result<bool, AnalysisError> {
    check_rho(rho)?;
    let q = chain.q;
    let c = q * (1.0 - chain.p[0]);
    let numer = 1.0 - alpha + alpha * c;
    let denom = alpha * rho * q * (1.0 - c);
    if denom == 0.0 {
        return Ok(numer > 0.0);
    }
    let y = chain.resolvent_e1(rho)?;
    let lhs: f64 = chain.p[1..].iter().zip(y.iter()).map(|(p, y)| p * y).sum();
    Ok(lhs < numer / denom)
}

/// `(1+alpha-rho)/(1-rho) Omega^i E phi2(|x(0)|) + phi2(d) / (1 - Omega)`.
pub fn theorem3_bound(
    omega: f64,
    alpha: f64,
    rho: f64,
    i: u32,
    e_phi2_x0: f64,
    d: f64,
    phi2: impl Fn(f64) -> f64,
) -> Result<f64, AnalysisError> {
    check_rho(rho)?;
    if omega >= 1.0 {
        return Err(AnalysisError::OmegaNotContractive(omega));
    }
    Ok((1.0 + alpha - rho) / (1.0 - rho) * omega.powi(i as i32) * e_phi2_x0 + phi2(d) / (1.0 - omega))
}

/// Largest open-loop growth `alpha` with `Gamma <= 1`:
/// `(1 - c rho) / (1 - c)` with `c = q (1 - p0)`; infinite when `c = 1`.
pub fn boundary_alpha_baseline(rho: f64, q: f64, p0: f64) -> Result<f64, AnalysisError> {
    check_rho(rho)?;
    check_unit("q", q)?;
    check_unit("p0", p0)?;
    let c = q * (1.0 - p0);
    if c >= 1.0 {
        Ok(f64::INFINITY)
    } else if c == 0.0 {
        Ok(1.0)
    } else {
        Ok((1.0 - c * rho) / (1.0 - c))
    }
}

/// Largest `alpha` with `Omega <= 1`. `Omega` is linear in `alpha`, so this is
/// the reciprocal of `Omega / alpha`.
pub fn boundary_alpha_anytime(rho: f64, env: &StochasticEnv) -> Result<f64, AnalysisError> {
    boundary_alpha_anytime_chain(rho, &build_lambda_chain(env))
}

pub fn boundary_alpha_anytime_chain(rho: f64, chain: &LambdaChain) -> Result<f64, AnalysisError> {
    check_rho(rho)?;
    let per_alpha = chain.return1 * chain.omega_bracket(rho)?;
    Ok(if per_alpha == 0.0 {
        f64::INFINITY
    } else {
        1.0 / per_alpha
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub rho: f64,
    pub alpha_star_baseline: f64,
    pub alpha_star_anytime: f64,
}

/// `points` equally spaced values on `[lo, hi]`.
pub fn rho_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Default boundary grid: 181 points on `[0.01, 0.99]`.
pub fn default_rho_grid() -> Vec<f64> {
    rho_grid(0.01, 0.99, 181)
}

pub fn boundary_curves(env: &StochasticEnv, rhos: &[f64]) -> Result<Vec<BoundaryPoint>, AnalysisError> {
    let chain = build_lambda_chain(env);
    rhos.iter()
        .map(|&rho| {
            Ok(BoundaryPoint {
                rho,
                alpha_star_baseline: boundary_alpha_baseline(rho, env.q, env.p0())?,
                alpha_star_anytime: boundary_alpha_anytime_chain(rho, &chain)?,
            })
        })
        .collect()
}

/// Headline numbers for one `(env, alpha, rho)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResult {
    pub gamma: f64,
    pub omega: f64,
    pub omega_series: f64,
    pub omega_series_tail: f64,
    pub alpha_star_baseline: f64,
    pub alpha_star_anytime: f64,
    pub delta_pmf: Vec<f64>,
    pub delta_mean: f64,
}

pub fn analyze(env: &StochasticEnv, alpha: f64, rho: f64) -> Result<AnalysisResult, AnalysisError> {
    let chain = build_lambda_chain(env);
    let gamma = compute_gamma(alpha, rho, env.q, env.p0())?;
    let omega = compute_omega_closed(&chain, alpha, rho)?;
    let series = compute_omega_series(&chain, alpha, rho, default_series_len(alpha, rho))?;
    let len = chain.truncation_len(1e-6).unwrap_or(MAX_SERIES_LEN).min(100_000);
    let delta_pmf = chain.delta_pmf_prefix(len);
    let delta_mean = delta_pmf
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum();
    Ok(AnalysisResult {
        gamma,
        omega,
        omega_series: series.value,
        omega_series_tail: series.tail_bound,
        alpha_star_baseline: boundary_alpha_baseline(rho, env.q, env.p0())?,
        alpha_star_anytime: boundary_alpha_anytime_chain(rho, &chain)?,
        delta_pmf,
        delta_mean,
    })
}
