//! Closed-loop execution of one trial.
//!
//! Each sampling step draws, in a fixed order, one uniform for the channel,
//! one uniform for the processor and (if configured) one Gaussian per state
//! coordinate for the disturbance. Draws are consumed whether or not they are
//! used, so two controllers fed the same [`RngStream`] see identical
//! `(gamma, N, w)` sequences even after their trajectories separate.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{norm, norm_sq, NoiseSpec, PlantSpec, StochasticEnv};

/// States whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("N = {n} >= 1 requested with beta = {beta:?}; computations need a received state")]
    ComputeWithoutReception { beta: Beta, n: usize },
    #[error("beta = 1 requires the received state")]
    MissingState,
    #[error("N = {n} exceeds buffer capacity {capacity}")]
    BudgetExceedsCapacity { n: usize, capacity: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("initial state has {got} entries, plant has {expected}")]
    InitialDim { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] crate::domain::ModelError),
}

/// Reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id selecting an independent keystream,
/// so trial `i` draws the same numbers no matter which worker runs it.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Joint channel/trigger symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Beta {
    /// Sensor transmitted, packet erased.
    Lost = 0,
    /// Sensor transmitted, packet received.
    Received = 1,
    /// State inside `B_d`; sensor silent.
    Silent = 2,
}

impl Beta {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Transmit,
    Silent,
}

/// Event trigger: transmit iff `|x| >= d`.
pub fn trigger(x: &[f64], d: f64) -> Trigger {
    if norm(x) < d {
        Trigger::Silent
    } else {
        Trigger::Transmit
    }
}

/// Draws the channel symbol. Always consumes exactly one uniform.
pub fn sample_beta(x: &[f64], d: f64, q: f64, rng: &mut RngStream) -> Beta {
    let u = rng.uniform();
    match trigger(x, d) {
        Trigger::Silent => Beta::Silent,
        Trigger::Transmit if u < q => Beta::Received,
        Trigger::Transmit => Beta::Lost,
    }
}

/// Inverse-CDF draw from `p`; `u` in `[0, 1)`.
pub(crate) fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return j;
        }
    }
    // Rounding can leave the cumulative sum a hair below 1; fall back to the
    // last outcome with positive mass.
    p.iter().rposition(|&pj| pj > 0.0).unwrap_or(0)
}

/// Number of controller iterations this step. Always consumes exactly one uniform.
pub fn sample_n(beta: Beta, env: &StochasticEnv, rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    match beta {
        Beta::Received => categorical(&env.p, u),
        Beta::Lost | Beta::Silent => 0,
    }
}

/// Effective buffer length recursion.
pub fn update_lambda(prev: usize, beta: Beta, n: usize) -> usize {
    if n >= 1 {
        n
    } else if beta == Beta::Silent {
        0
    } else {
        prev.saturating_sub(1)
    }
}

/// Memoryless policy: `kappa(x)` when the state arrived and the processor ran.
pub fn baseline_step(x: &[f64], beta: Beta, n: usize, plant: &PlantSpec) -> Vec<f64> {
    if beta == Beta::Received && n >= 1 {
        plant.kappa(x)
    } else {
        plant.zero_input()
    }
}

/// Control buffer of `capacity` input blocks of width `input_dim`, stored
/// contiguously, plus the effective length.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferState {
    data: Vec<f64>,
    input_dim: usize,
    capacity: usize,
    lambda: usize,
}

impl BufferState {
    pub fn zeroed(capacity: usize, input_dim: usize) -> Self {
        Self {
            data: vec![0.0; capacity * input_dim],
            input_dim,
            capacity,
            lambda: 0,
        }
    }

    /// Assembles a buffer from its raw `capacity * input_dim` storage.
    pub fn from_parts(data: Vec<f64>, input_dim: usize, lambda: usize) -> Self {
        assert!(input_dim > 0 && data.len().is_multiple_of(input_dim));
        let capacity = data.len() / input_dim;
        assert!(lambda <= capacity);
        Self {
            data,
            input_dim,
            capacity,
            lambda,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Block `j` in `0..capacity` (0-based).
    pub fn block(&self, j: usize) -> &[f64] {
        &self.data[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.lambda = 0;
    }

    /// Applies the block shift `S`: every block moves up one slot and the
    /// last slot is zero-filled.
    pub fn shift(&mut self) {
        self.data.copy_within(self.input_dim.., 0);
        let tail = self.data.len() - self.input_dim;
        self.data[tail..].iter_mut().for_each(|v| *v = 0.0);
        self.lambda = self.lambda.saturating_sub(1);
    }

    fn set_block(&mut self, j: usize, u: &[f64]) {
        self.data[j * self.input_dim..(j + 1) * self.input_dim].copy_from_slice(u);
    }
}

/// One step of the buffered anytime controller.
///
/// * `Silent`: buffer emptied, zero input.
/// * `Lost`, or `Received` with `n = 0`: buffer shifted, input is its new head.
/// * `Received` with `n >= 1`: the tentative sequence
///   `u_1 = kappa(x), u_2 = kappa(f(x, u_1)), ..., u_n` replaces the buffer and
///   `u_1` is applied.
pub fn anytime_step(
    x: Option<&[f64]>,
    beta: Beta,
    n: usize,
    mut buf: BufferState,
    plant: &PlantSpec,
) -> Result<(Vec<f64>, BufferState), RuntimeError> {
    if n > buf.capacity {
        return Err(RuntimeError::BudgetExceedsCapacity {
            n,
            capacity: buf.capacity,
        });
    }
    match beta {
        Beta::Silent | Beta::Lost if n >= 1 => Err(RuntimeError::ComputeWithoutReception { beta, n }),
        Beta::Silent => {
            buf.clear();
            Ok((plant.zero_input(), buf))
        }
        Beta::Received if n >= 1 => {
            let x = x.ok_or(RuntimeError::MissingState)?;
            buf.clear();
            let mut chi = x.to_vec();
            for j in 0..n {
                let u = plant.kappa(&chi);
                buf.set_block(j, &u);
                if j + 1 < n {
                    chi = plant.f(&chi, &u);
                }
            }
            buf.lambda = n;
            let u = buf.block(0).to_vec();
            Ok((u, buf))
        }
        Beta::Lost | Beta::Received => {
            buf.shift();
            let u = buf.block(0).to_vec();
            Ok((u, buf))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Baseline,
    Anytime,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Baseline => "baseline",
            Controller::Anytime => "anytime",
        }
    }
}

/// Distribution of `x(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Zero-mean Gaussian with the given per-coordinate standard deviation.
    Gaussian { std: f64 },
    Fixed(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Gaussian { std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub beta: Beta,
    pub n: usize,
    pub lambda: usize,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<StepRecord>,
    pub horizon: usize,
}

impl Trace {
    /// Writes `k, x1..xn, u1..up, beta, N, lambda` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let (n, p) = self
            .records
            .first()
            .map(|r| (r.x.len(), r.u.len()))
            .unwrap_or((0, 0));
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("u{i}")));
        header.extend(["beta", "N", "lambda"].map(String::from));
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.extend(r.u.iter().map(|v| v.to_string()));
            row.push(r.beta.code().to_string());
            row.push(r.n.to_string());
            row.push(r.lambda.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A run stopped because the state left the finite range.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("trajectory diverged at step {step}")]
pub struct Divergence {
    /// Step whose successor state blew up.
    pub step: usize,
    /// Records up to and including `step`.
    pub partial: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed(Trace),
    Diverged(Divergence),
}

impl RunOutcome {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            RunOutcome::Completed(t) => Some(t),
            RunOutcome::Diverged(_) => None,
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, RunOutcome::Diverged(_))
    }
}

/// Plant, channel/processor model, disturbance and initial distribution for
/// a closed-loop experiment.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: PlantSpec,
    pub env: StochasticEnv,
    pub noise: NoiseSpec,
    pub initial: InitialState,
}

impl ClosedLoop {
    pub fn new(
        plant: PlantSpec,
        env: StochasticEnv,
        noise: NoiseSpec,
        initial: InitialState,
    ) -> Result<Self, RuntimeError> {
        noise.check_dim(plant.state_dim)?;
        if let InitialState::Fixed(x0) = &initial {
            if x0.len() != plant.state_dim {
                return Err(RuntimeError::InitialDim {
                    expected: plant.state_dim,
                    got: x0.len(),
                });
            }
        }
        Ok(Self {
            plant,
            env,
            noise,
            initial,
        })
    }

    fn draw_initial(&self, rng: &mut RngStream) -> Vec<f64> {
        match &self.initial {
            InitialState::Gaussian { std } => (0..self.plant.state_dim)
                .map(|_| std * rng.standard_normal())
                .collect(),
            InitialState::Fixed(x0) => x0.clone(),
        }
    }

    fn draw_noise(&self, rng: &mut RngStream) -> Vec<f64> {
        match &self.noise {
            NoiseSpec::None => vec![0.0; self.plant.state_dim],
            NoiseSpec::GaussianIid { std } => {
                std.iter().map(|s| s * rng.standard_normal()).collect()
            }
        }
    }

    /// Simulates `horizon` steps. `x(0)` is drawn first, then per step
    /// `beta`, `N`, `w`, in that order.
    pub fn run(
        &self,
        controller: Controller,
        horizon: usize,
        rng: &mut RngStream,
    ) -> Result<RunOutcome, RuntimeError> {
        if horizon == 0 {
            return Err(RuntimeError::EmptyHorizon);
        }
        let plant = &self.plant;
        let mut x = self.draw_initial(rng);
        let mut buf = BufferState::zeroed(self.env.capacity, plant.input_dim);
        let mut lambda = 0;
        let mut records = Vec::with_capacity(horizon);

        for k in 0..horizon {
            let beta = sample_beta(&x, plant.d, self.env.q, rng);
            let n = sample_n(beta, &self.env, rng);
            let w = self.draw_noise(rng);
            lambda = update_lambda(lambda, beta, n);

            let u = match controller {
                Controller::Baseline => baseline_step(&x, beta, n, plant),
                Controller::Anytime => {
                    let received = (beta == Beta::Received).then_some(x.as_slice());
                    let (u, next) = anytime_step(received, beta, n, buf, plant)?;
                    debug_assert_eq!(next.lambda(), lambda);
                    buf = next;
                    u
                }
            };

            let mut next_x = plant.f(&x, &u);
            for (xi, wi) in next_x.iter_mut().zip(&w) {
                *xi += wi;
            }
            records.push(StepRecord {
                k,
                x: std::mem::take(&mut x),
                u,
                beta,
                n,
                lambda,
                w,
            });

            let r = norm(&next_x);
            if !r.is_finite() || r > DIVERGENCE_NORM {
                return Ok(RunOutcome::Diverged(Divergence {
                    step: k,
                    partial: Trace { records, horizon },
                }));
            }
            x = next_x;
        }
        Ok(RunOutcome::Completed(Trace { records, horizon }))
    }
}

/// Free-function form of [`ClosedLoop::run`].
pub fn run_trajectory(
    setup: &ClosedLoop,
    controller: Controller,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<RunOutcome, RuntimeError> {
    setup.run(controller, horizon, rng)
}

/// `(1/T) sum_k |x(k)|^2`.
pub fn empirical_cost(trace: &Trace) -> f64 {
    let total: f64 = trace.records.iter().map(|r| norm_sq(&r.x)).sum();
    total / trace.records.len() as f64
}

/// Percentage of steps at which the sensor transmitted.
pub fn channel_utilization(trace: &Trace) -> f64 {
    let active = trace
        .records
        .iter()
        .filter(|r| r.beta != Beta::Silent)
        .count();
    100.0 * active as f64 / trace.records.len() as f64
}
