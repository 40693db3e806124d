//! Plant models, stochastic environment parameters and their validation.
//!
//! A [`PlantSpec`] bundles the sampled dynamics `x+ = f(x, u)`, a stabilizing
//! state feedback `kappa`, and the Lyapunov data (`V`, the class-K-infinity
//! sandwich bounds, the closed-loop contraction `rho` and the open-loop growth
//! `alpha`) together with the trigger radius `d` of the open ball
//! `B_d = { x : |x| < d }`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

/// Dynamics map `(x, u) -> x+`.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// State feedback `x -> u`.
pub type ControlFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Lyapunov function `x -> V(x)`.
pub type LyapunovFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Scalar comparison function on `[0, inf)`.
pub type ComparisonFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Saturation limit of the built-in two-state plant.
pub const SAT_LIMIT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("closed-loop factor rho = {0} must lie in [0, 1)")]
    RhoOutOfRange(f64),
    #[error("scalar plant needs |a| >= 1, got a = {0}")]
    StableOpenLoop(f64),
    #[error("trigger radius must be finite and nonnegative, got {0}")]
    BadRadius(f64),
    #[error("noise std has {got} entries, plant state has {expected}")]
    NoiseDim { expected: usize, got: usize },
    #[error("noise std must be finite and nonnegative")]
    BadNoiseStd,
}

/// One violated constraint of a [`StochasticEnv`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvViolation {
    #[error("q = {0} out of range [0, 1]")]
    QOutOfRange(f64),
    #[error("buffer capacity must be at least 1, got {0}")]
    CapacityTooSmall(usize),
    #[error("pmf has {got} entries, expected capacity + 1 = {expected}")]
    PmfLength { expected: usize, got: usize },
    #[error("p[{index}] = {value} out of range [0, 1]")]
    PmfEntry { index: usize, value: f64 },
    #[error("pmf sums to {0}, expected 1")]
    PmfSum(f64),
}

/// All violations found by [`validate_env`].
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid environment: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct EnvErrors(pub Vec<EnvViolation>);

/// Channel and processor model: erasure channel with success probability `q`,
/// and i.i.d. processor availability with `Pr{N = j | beta = 1} = p[j]`,
/// `j = 0..=capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticEnv {
    pub q: f64,
    pub p: Vec<f64>,
    pub capacity: usize,
}

impl StochasticEnv {
    /// Builds and validates an environment; the capacity is `p.len() - 1`.
    pub fn new(q: f64, p: Vec<f64>) -> Result<Self, EnvErrors> {
        let env = Self {
            q,
            capacity: p.len().saturating_sub(1),
            p,
        };
        validate_env(&env)?;
        Ok(env)
    }

    /// `p_i = 1 / (capacity + 1)` for all `i`.
    pub fn uniform(q: f64, capacity: usize) -> Result<Self, EnvErrors> {
        let w = 1.0 / (capacity + 1) as f64;
        Self::new(q, vec![w; capacity + 1])
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    /// Probability that a step leaves the buffer without a fresh computation
    /// (erasure, or reception with no processor time): `1 - q + p0 q`.
    pub fn no_compute_prob(&self) -> f64 {
        1.0 - self.q + self.p[0] * self.q
    }
}

/// Checks every parameter constraint and reports all violations at once.
pub fn validate_env(env: &StochasticEnv) -> Result<(), EnvErrors> {
    let mut errs = Vec::new();
    if !(0.0..=1.0).contains(&env.q) {
        errs.push(EnvViolation::QOutOfRange(env.q));
    }
    if env.capacity < 1 {
        errs.push(EnvViolation::CapacityTooSmall(env.capacity));
    }
    if env.p.len() != env.capacity + 1 {
        errs.push(EnvViolation::PmfLength {
            expected: env.capacity + 1,
            got: env.p.len(),
        });
    }
    for (index, &value) in env.p.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            errs.push(EnvViolation::PmfEntry { index, value });
        }
    }
    let sum: f64 = env.p.iter().sum();
    if !((sum - 1.0).abs() <= 1e-12) {
        errs.push(EnvViolation::PmfSum(sum));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(EnvErrors(errs))
    }
}

/// Additive process disturbance `w(k)`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    None,
    /// Independent zero-mean Gaussian per state coordinate.
    GaussianIid { std: Vec<f64> },
}

impl NoiseSpec {
    pub fn gaussian(std: Vec<f64>) -> Result<Self, ModelError> {
        if std.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ModelError::BadNoiseStd);
        }
        Ok(Self::GaussianIid { std })
    }

    pub fn check_dim(&self, n: usize) -> Result<(), ModelError> {
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::GaussianIid { std } if std.len() == n => Ok(()),
            NoiseSpec::GaussianIid { std } => Err(ModelError::NoiseDim {
                expected: n,
                got: std.len(),
            }),
        }
    }
}

/// A sampled nonlinear plant with its stabilizing feedback and Lyapunov data.
#[derive(Clone)]
pub struct PlantSpec {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    dynamics: DynamicsFn,
    control_law: ControlFn,
    lyapunov: LyapunovFn,
    phi1: ComparisonFn,
    phi2: ComparisonFn,
    pub rho: f64,
    pub alpha: f64,
    pub d: f64,
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("rho", &self.rho)
            .field("alpha", &self.alpha)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl PlantSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        dynamics: DynamicsFn,
        control_law: ControlFn,
        lyapunov: LyapunovFn,
        phi1: ComparisonFn,
        phi2: ComparisonFn,
        rho: f64,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&rho) {
            return Err(ModelError::RhoOutOfRange(rho));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            input_dim,
            dynamics,
            control_law,
            lyapunov,
            phi1,
            phi2,
            rho,
            alpha: alpha.max(rho),
            d: 0.0,
        })
    }

    /// Returns a copy with trigger radius `d`.
    pub fn with_trigger_radius(mut self, d: f64) -> Result<Self, ModelError> {
        if !d.is_finite() || d < 0.0 {
            return Err(ModelError::BadRadius(d));
        }
        self.d = d;
        Ok(self)
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(x, u)
    }

    pub fn kappa(&self, x: &[f64]) -> Vec<f64> {
        (self.control_law)(x)
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        (self.lyapunov)(x)
    }

    pub fn phi1(&self, s: f64) -> f64 {
        (self.phi1)(s)
    }

    pub fn phi2(&self, s: f64) -> f64 {
        (self.phi2)(s)
    }

    pub fn zero_input(&self) -> Vec<f64> {
        vec![0.0; self.input_dim]
    }

    /// `x` lies in the open ball `B_d`.
    pub fn in_target_set(&self, x: &[f64]) -> bool {
        norm(x) < self.d
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Clips to `[-SAT_LIMIT, SAT_LIMIT]`.
pub fn sat(mu: f64) -> f64 {
    mu.clamp(-SAT_LIMIT, SAT_LIMIT)
}

fn sat_open_loop_ratio(theta: f64) -> f64 {
    let (x1, x2) = (theta.cos(), theta.sin());
    // Unit-norm states stay in the linear regime of sat, where the ratio
    // |f(x,0)| / |x| is maximal.
    let fx = [x2, -sat(x1 + x2)];
    norm(&fx)
}

/// Grid-certified open-loop growth factor of the saturated plant.
///
/// Outside the linear regime saturation only shrinks `|f(x, 0)|`, and inside
/// it the ratio is scale-invariant, so maximizing over unit directions is
/// enough. The grid maximum is inflated by a relative margin that dominates
/// the second-order angular discretization error.
pub fn certify_sat_alpha(grid_points: usize) -> f64 {
    let n = grid_points.max(8);
    let step = std::f64::consts::PI / n as f64;
    let best = (0..n)
        .map(|i| sat_open_loop_ratio(i as f64 * step))
        .fold(0.0_f64, f64::max);
    let margin = 4.0 * step * step;
    best * (1.0 + margin)
}

/// Two-state saturated plant
/// `x1+ = x2 + u1`, `x2+ = -sat(x1 + x2) + u2` with
/// `kappa(x) = (-x2, 0.505 sat(x1 + x2))`, `V(x) = 2|x|`, `rho = 0.99`.
pub fn make_sat_plant() -> PlantSpec {
    let dynamics: DynamicsFn = Arc::new(|x: &[f64], u: &[f64]| {
        vec![x[1] + u[0], -sat(x[0] + x[1]) + u[1]]
    });
    let control: ControlFn = Arc::new(|x: &[f64]| vec![-x[1], 0.505 * sat(x[0] + x[1])]);
    let lyap: LyapunovFn = Arc::new(|x: &[f64]| 2.0 * norm(x));
    let phi: ComparisonFn = Arc::new(|s: f64| 2.0 * s);
    PlantSpec::new(
        "sat",
        2,
        2,
        dynamics,
        control,
        lyap,
        phi.clone(),
        phi,
        0.99,
        certify_sat_alpha(100_000),
    )
    .expect("rho = 0.99 is in range")
}

/// Scalar plant `x+ = a x + u` under `kappa(x) = -gain x`, with `V(x) = |x|`,
/// `rho = |a - gain|` and `alpha = |a|`.
pub fn make_scalar_plant(a: f64, gain: f64, d: f64) -> Result<PlantSpec, ModelError> {
    let rho = (a - gain).abs();
    if !(0.0..1.0).contains(&rho) {
        return Err(ModelError::RhoOutOfRange(rho));
    }
    if a.abs() < 1.0 {
        return Err(ModelError::StableOpenLoop(a));
    }
    let dynamics: DynamicsFn = Arc::new(move |x: &[f64], u: &[f64]| vec![a * x[0] + u[0]]);
    let control: ControlFn = Arc::new(move |x: &[f64]| vec![-gain * x[0]]);
    let lyap: LyapunovFn = Arc::new(|x: &[f64]| x[0].abs());
    let phi: ComparisonFn = Arc::new(|s: f64| s);
    PlantSpec::new(
        format!("scalar(a={a},gain={gain})"),
        1,
        1,
        dynamics,
        control,
        lyap,
        phi.clone(),
        phi,
        rho,
        a.abs(),
    )?
    .with_trigger_radius(d)
}

/// Outcome of sampling the standing assumptions of a plant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    /// States outside `B_d` with `V(f(x, kappa(x))) > rho V(x)`.
    pub closed_loop_violations: usize,
    /// States with `V(f(x, 0)) > alpha V(x)`.
    pub open_loop_violations: usize,
    /// Sandwich `phi1(|x|) <= V(x) <= phi2(|x|)` failures.
    pub sandwich_violations: usize,
    /// Grid points where `phi1`/`phi2` fail zero-at-zero, monotonicity or `phi1 <= phi2`.
    pub comparison_violations: usize,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.closed_loop_violations == 0
            && self.open_loop_violations == 0
            && self.sandwich_violations == 0
            && self.comparison_violations == 0
    }
}

/// Relative slack on the Lyapunov inequalities for floating-point rounding of
/// `f` (e.g. `a x - gain x` versus `(a - gain) x`).
pub const ROUNDING_SLACK: f64 = 4.0 * f64::EPSILON;

/// Samples `samples` states uniformly in `[-half_width, half_width]^n` and
/// checks the Lyapunov inequalities up to [`ROUNDING_SLACK`], plus the
/// comparison functions on a fixed grid.
pub fn check_assumptions<R: Rng + ?Sized>(
    plant: &PlantSpec,
    samples: usize,
    half_width: f64,
    rng: &mut R,
) -> AssumptionReport {
    let mut report = AssumptionReport {
        samples,
        ..Default::default()
    };
    let zero = plant.zero_input();
    let mut x = vec![0.0; plant.state_dim];
    for _ in 0..samples {
        for xi in x.iter_mut() {
            *xi = rng.random_range(-half_width..=half_width);
        }
        let v = plant.v(&x);
        let r = norm(&x);
        if !plant.in_target_set(&x) && plant.v(&plant.f(&x, &plant.kappa(&x))) > plant.rho * v * (1.0 + ROUNDING_SLACK)
        {
            report.closed_loop_violations += 1;
        }
        if plant.v(&plant.f(&x, &zero)) > plant.alpha * v * (1.0 + ROUNDING_SLACK) {
            report.open_loop_violations += 1;
        }
        if plant.phi1(r) > v || v > plant.phi2(r) {
            report.sandwich_violations += 1;
        }
    }

    if plant.phi1(0.0) != 0.0 || plant.phi2(0.0) != 0.0 {
        report.comparison_violations += 1;
    }
    let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.05).collect();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if plant.phi1(b) <= plant.phi1(a) || plant.phi2(b) <= plant.phi2(a) {
            report.comparison_violations += 1;
        }
        if plant.phi1(b) > plant.phi2(b) {
            report.comparison_violations += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_env_is_valid() {
        let env = StochasticEnv::new(0.75, vec![0.2; 5]).unwrap();
        assert_eq!(env.capacity, 4);
        assert!(validate_env(&env).is_ok());
    }

    #[test]
    fn q_out_of_range_is_reported() {
        let env = StochasticEnv {
            q: 1.2,
            p: vec![1.0],
            capacity: 1,
        };
        let errs = validate_env(&env).unwrap_err().0;
        assert!(errs.contains(&EnvViolation::QOutOfRange(1.2)));
    }

    #[test]
    fn unnormalized_pmf_is_reported() {
        let env = StochasticEnv {
            q: 0.4,
            p: vec![0.5, 0.5, 0.1],
            capacity: 2,
        };
        let errs = validate_env(&env).unwrap_err().0;
        assert_eq!(errs.len(), 1);
        match &errs[0] {
            EnvViolation::PmfSum(s) => assert!((s - 1.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_capacity_is_reported() {
        let errs = StochasticEnv::new(0.5, vec![1.0]).unwrap_err().0;
        assert!(errs.contains(&EnvViolation::CapacityTooSmall(0)));
    }

    #[test]
    fn sat_plant_values() {
        let plant = make_sat_plant();
        assert_eq!(plant.f(&[0.0, 0.0], &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(plant.f(&[20.0, 0.0], &[0.0, 0.0]), vec![0.0, -10.0]);
        assert_eq!(plant.rho, 0.99);
        assert_eq!(plant.v(&[3.0, 4.0]), 10.0);
    }

    #[test]
    fn sat_alpha_matches_largest_singular_value() {
        // Oracle: brute-force ratio maximization over a random cloud of
        // states, independent of the angular grid used by the certificate.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plant = make_sat_plant();
        let mut best: f64 = 0.0;
        for _ in 0..200_000 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let r = plant.v(&plant.f(&x, &[0.0, 0.0])) / plant.v(&x);
            best = best.max(r);
        }
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(best <= golden + 1e-12);
        assert!((best - golden).abs() < 1e-3);
        assert!(plant.alpha >= golden);
        assert!(plant.alpha - golden < 1e-6, "alpha = {}", plant.alpha);
    }

    #[test]
    fn scalar_plant_parameters() {
        let plant = make_scalar_plant(2.0, 1.5, 0.0).unwrap();
        assert_eq!(plant.rho, 0.5);
        assert_eq!(plant.alpha, 2.0);
        let u = plant.kappa(&[4.0]);
        assert_eq!(u, vec![-6.0]);
        assert_eq!(plant.f(&[4.0], &u), vec![2.0]);
        assert_eq!(plant.kappa(&[0.0]), vec![0.0]);
    }

    #[test]
    fn scalar_plant_rejects_rho_at_least_one() {
        assert_eq!(
            make_scalar_plant(2.0, 3.5, 0.0).unwrap_err(),
            ModelError::RhoOutOfRange(1.5)
        );
    }

    #[test]
    fn builtin_plants_satisfy_assumptions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for plant in [
            make_sat_plant(),
            make_sat_plant().with_trigger_radius(2.0).unwrap(),
            make_scalar_plant(2.0, 1.5, 0.0).unwrap(),
            make_scalar_plant(2.0, 1.5, 1.0).unwrap(),
            make_scalar_plant(-1.3, -0.6, 0.5).unwrap(),
        ] {
            let report = check_assumptions(&plant, 100_000, 50.0, &mut rng);
            assert!(report.holds(), "{}: {report:?}", plant.name);
        }
    }

    #[test]
    fn open_ball_excludes_boundary() {
        let plant = make_scalar_plant(2.0, 1.5, 1.0).unwrap();
        assert!(plant.in_target_set(&[0.0]));
        assert!(!plant.in_target_set(&[1.0]));
        assert!(!plant.in_target_set(&[-1.0]));
    }

    proptest! {
        #[test]
        fn sat_is_idempotent(mu in -1e6f64..1e6) {
            prop_assert_eq!(sat(sat(mu)), sat(mu));
        }

        #[test]
        fn scalar_kappa_is_linear(x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let plant = make_scalar_plant(2.0, 1.5, 0.0).unwrap();
            let kx = plant.kappa(&[x])[0];
            let ky = plant.kappa(&[y])[0];
            prop_assert!((kx - ky).abs() <= 1.5 * (x - y).abs() * (1.0 + 1e-12));
        }
    }
}
