//! Exit criteria. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line.
//!
//! Run with `cargo test -p anytime-ncs --test acceptance -- --nocapture` to
//! see the lines.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anytime_ncs::analysis::{
    boundary_curves, build_lambda_chain, compute_omega_closed, compute_omega_series, default_rho_grid,
    Theorem1Bound,
};
use anytime_ncs::cli::config::{EnvConfig, InitialConfig, NoiseConfig, PlantConfig};
use anytime_ncs::cli::{run_montecarlo, ExperimentConfig};
use anytime_ncs::domain::{make_sat_plant, make_scalar_plant, norm, NoiseSpec, StochasticEnv};
use anytime_ncs::oracle::{reference_anytime_step, simulate_lambda_chain, tv_distance};
use anytime_ncs::runtime::{
    anytime_step, sample_beta, sample_n, update_lambda, Beta, BufferState, ClosedLoop, Controller,
    InitialState, RngStream, RunOutcome,
};

fn report(n: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let status = if ok && elapsed < limit { "PASS" } else { "FAIL" };
    println!(
        "ACCEPTANCE {n} {status}: {name} ({:.2}s / limit {}s) {detail}",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
}

fn random_env(rng: &mut ChaCha8Rng, max_cap: usize) -> StochasticEnv {
    let cap = rng.random_range(1..=max_cap);
    let w: Vec<f64> = (0..=cap).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    StochasticEnv::new(rng.random_range(0.05..0.95), p).unwrap()
}

#[test]
fn criterion_1_return_time_pmf_matches_oracle() {
    let start = Instant::now();
    let mut gen = ChaCha8Rng::seed_from_u64(0xC1);
    let mut envs: Vec<StochasticEnv> = (0..5).map(|_| random_env(&mut gen, 6)).collect();
    envs.push(StochasticEnv::new(0.75, vec![0.2, 0.3, 0.5]).unwrap());

    let n = 1_000_000;
    let mut ok = true;
    let mut details = Vec::new();
    for (i, env) in envs.iter().enumerate() {
        let chain = build_lambda_chain(env);
        let len = chain.truncation_len(1e-6).unwrap();
        let analytic = chain.delta_pmf_prefix(len);
        let pmf = simulate_lambda_chain(env, n, &mut RngStream::new(0xC1, i as u64));
        let tv = tv_distance(&pmf, &analytic);
        let r = chain.return1;
        let sigma = (r * (1.0 - r) / n as f64).sqrt();
        let dev = (pmf.frequency(1) - r).abs();
        let env_ok = tv < 0.01 && dev <= 3.0 * sigma;
        ok &= env_ok;
        details.push(format!(
            "[cap={} q={:.3} tv={:.5} dev1={:.2}sigma]",
            env.capacity,
            env.q,
            tv,
            dev / sigma
        ));
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(30);
    report(1, "return-time pmf vs oracle", ok, elapsed, limit, &details.join(" "));
    assert!(ok, "{details:?}");
    assert!(elapsed < limit);
}

#[test]
fn criterion_2_omega_consistency() {
    let start = Instant::now();
    let mut gen = ChaCha8Rng::seed_from_u64(0xC2);
    let mut worst_gap: f64 = 0.0;
    let mut worst_mass: f64 = 1.0;
    let mut worst_row: f64 = 0.0;
    for _ in 0..1000 {
        let env = random_env(&mut gen, 6);
        let env = StochasticEnv {
            q: gen.random_range(0.0..=1.0),
            ..env
        };
        let rho = gen.random_range(0.0..0.95);
        let alpha = rho + gen.random_range(0.0..3.0);
        let chain = build_lambda_chain(&env);

        let closed = compute_omega_closed(&chain, alpha, rho).unwrap();
        let series = compute_omega_series(&chain, alpha, rho, 500).unwrap();
        worst_gap = worst_gap.max((closed - series.value).abs());

        let len = chain.truncation_len(1e-6).unwrap();
        let mass: f64 = chain.delta_pmf_prefix(len).iter().sum();
        worst_mass = worst_mass.min(mass);

        worst_row = worst_row.max((chain.g.row(0).sum() - env.q * (1.0 - env.p0())).abs());
        for l in 1..env.capacity {
            worst_row = worst_row.max((chain.g.row(l).sum() - 1.0).abs());
        }
    }
    let ok = worst_gap < 1e-9 && worst_mass >= 1.0 - 1e-6 && worst_row <= 1e-12;
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(10);
    report(
        2,
        "closed-form vs series Omega",
        ok,
        elapsed,
        limit,
        &format!("max|gap|={worst_gap:.2e} min mass={worst_mass:.9} max row err={worst_row:.1e}"),
    );
    assert!(ok);
    assert!(elapsed < limit);
}

#[test]
fn criterion_3_stability_boundaries() {
    let start = Instant::now();
    let env = StochasticEnv::new(0.75, vec![0.2; 5]).unwrap();
    let curves = boundary_curves(&env, &default_rho_grid()).unwrap();
    let dominates = curves
        .iter()
        .all(|p| p.alpha_star_anytime >= p.alpha_star_baseline);
    let decreasing = curves.windows(2).all(|w| {
        w[1].alpha_star_baseline < w[0].alpha_star_baseline
            && w[1].alpha_star_anytime < w[0].alpha_star_anytime
    });
    let ok = curves.len() == 181 && dominates && decreasing;
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(1);
    let mid = curves.iter().find(|p| (p.rho - 0.5).abs() < 1e-12).unwrap();
    report(
        3,
        "anytime boundary dominates baseline",
        ok,
        elapsed,
        limit,
        &format!(
            "rho=0.5: baseline={:.4} anytime={:.4}",
            mid.alpha_star_baseline, mid.alpha_star_anytime
        ),
    );
    assert!(ok);
    assert!(elapsed < limit);
}

#[test]
fn criterion_4_baseline_moment_bound() {
    let start = Instant::now();
    let plant = make_scalar_plant(2.0, 1.5, 1.0).unwrap();
    let env = StochasticEnv::new(0.9, vec![0.1, 0.9]).unwrap();
    let bound = Theorem1Bound::new(&plant, &env).unwrap();
    assert!((bound.gamma - 0.785).abs() < 1e-12);
    assert!((bound.tail - 5.651).abs() < 1e-3);

    let setup = ClosedLoop::new(plant.clone(), env, NoiseSpec::None, InitialState::Gaussian { std: 1.0 })
        .unwrap();
    let horizon = 60;
    let trials = 100_000u64;
    let mut sum = vec![0.0; horizon];
    let mut sum_sq = vec![0.0; horizon];
    for i in 0..trials {
        let out = setup
            .run(Controller::Baseline, horizon, &mut RngStream::new(0xC4, i))
            .unwrap();
        let trace = out.trace().expect("contractive loop never diverges");
        for r in &trace.records {
            let v = plant.phi1(norm(&r.x));
            sum[r.k] += v;
            sum_sq[r.k] += v * v;
        }
    }
    // E phi2(|x(0)|) = E|N(0,1)| = sqrt(2/pi).
    let e_phi2 = (2.0 / std::f64::consts::PI).sqrt();
    let n = trials as f64;
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    for k in 0..horizon {
        let mean = sum[k] / n;
        let var = (sum_sq[k] / n - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt();
        let rhs = bound.at(k as u32, e_phi2);
        ok &= mean <= rhs + 3.0 * se;
        worst_margin = worst_margin.min(rhs - mean);
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(60);
    report(
        4,
        "baseline moment bound",
        ok,
        elapsed,
        limit,
        &format!("gamma={:.3} tail={:.4} min(bound-mean)={worst_margin:.4}", bound.gamma, bound.tail),
    );
    assert!(ok);
    assert!(elapsed < limit);
}

fn fig4_config() -> ExperimentConfig {
    ExperimentConfig {
        plant: PlantConfig::Sat,
        env: EnvConfig {
            q: 0.4,
            p: vec![0.2; 5],
            capacity: None,
        },
        d_sweep: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
        controllers: vec![Controller::Baseline, Controller::Anytime],
        horizon: 50,
        trials: Some(10_000),
        seed: 0xC5,
        noise: NoiseConfig::Gaussian { std: vec![1.0, 1.0] },
        initial: InitialConfig::Gaussian { std: 1.0 },
        ..ExperimentConfig::default()
    }
}

#[test]
fn criterion_5_cost_utilization_tradeoff() {
    let start = Instant::now();
    let cfg = fig4_config();
    let summary = run_montecarlo(&cfg, None).unwrap();

    let mut ok = true;
    let mut details = Vec::new();
    for p in summary.paired.iter().filter(|p| p.d > 0.0) {
        let b = summary.cell(p.d, Controller::Baseline).unwrap();
        let a = summary.cell(p.d, Controller::Anytime).unwrap();
        let cell_ok = a.mean_cost <= b.mean_cost && p.t_stat >= 3.0;
        ok &= cell_ok;
        details.push(format!(
            "[d={} J_base={:.4} J_any={:.4} t={:.2} {}]",
            p.d,
            b.mean_cost,
            a.mean_cost,
            p.t_stat,
            if cell_ok { "ok" } else { "fail" }
        ));
    }
    for ctrl in [Controller::Baseline, Controller::Anytime] {
        let utils: Vec<f64> = cfg
            .d_sweep
            .iter()
            .map(|&d| summary.cell(d, ctrl).unwrap().mean_utilization)
            .collect();
        let mono = utils.windows(2).all(|w| w[1] < w[0]);
        ok &= mono;
        details.push(format!("[{} utilization decreasing={mono}]", ctrl.name()));
    }
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(300);
    report(5, "cost vs utilization trade-off", ok, elapsed, limit, &details.join(" "));
    assert!(ok, "{}", details.join("\n"));
    assert!(elapsed < limit);
}

/// Number of leading nonzero blocks.
fn filled_blocks(buf: &BufferState) -> usize {
    (0..buf.capacity())
        .take_while(|&j| buf.block(j).iter().any(|&v| v != 0.0))
        .count()
}

#[test]
fn criterion_6_structural_properties() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // Reference vs runtime anytime step on 1e5 random steps.
    let plant = make_sat_plant();
    let cap = 4;
    let mut gen = ChaCha8Rng::seed_from_u64(0xC6);
    let mut buf_rt = BufferState::zeroed(cap, plant.input_dim);
    let mut buf_ref = buf_rt.clone();
    for _ in 0..100_000 {
        let beta = match gen.random_range(0..3) {
            0 => Beta::Lost,
            1 => Beta::Received,
            _ => Beta::Silent,
        };
        let n = if beta == Beta::Received {
            gen.random_range(0..=cap)
        } else {
            0
        };
        let x = [gen.random_range(-20.0..20.0), gen.random_range(-20.0..20.0)];
        let xs = (beta == Beta::Received).then_some(&x[..]);
        let (u_rt, next_rt) = anytime_step(xs, beta, n, buf_rt, &plant).unwrap();
        let (u_ref, next_ref) = reference_anytime_step(xs, beta, n, &buf_ref, &plant).unwrap();
        if u_rt != u_ref || next_rt != next_ref {
            failures.push("reference/runtime mismatch".to_string());
            break;
        }
        buf_rt = next_rt;
        buf_ref = next_ref;
    }

    // Capacity 1: anytime and baseline coincide under shared draws.
    let env1 = StochasticEnv::new(0.6, vec![0.3, 0.7]).unwrap();
    for d in [0.0, 1.0, 3.0] {
        let setup = ClosedLoop::new(
            make_sat_plant().with_trigger_radius(d).unwrap(),
            env1.clone(),
            NoiseSpec::gaussian(vec![1.0, 1.0]).unwrap(),
            InitialState::default(),
        )
        .unwrap();
        for i in 0..200 {
            let b = setup.run(Controller::Baseline, 100, &mut RngStream::new(6, i)).unwrap();
            let a = setup.run(Controller::Anytime, 100, &mut RngStream::new(6, i)).unwrap();
            if a != b {
                failures.push(format!("capacity-1 mismatch at d={d} trial {i}"));
                break;
            }
        }
    }

    // Lambda recursion, buffer contents and beta consistency on random runs.
    let plant = make_scalar_plant(2.0, 1.5, 0.8).unwrap();
    let env = StochasticEnv::new(0.7, vec![0.2, 0.2, 0.3, 0.3]).unwrap();
    let noise = NoiseSpec::gaussian(vec![0.7]).unwrap();
    let mut rng = RngStream::new(0xC6, 99);
    let mut x = vec![1.0];
    let mut buf = BufferState::zeroed(env.capacity, 1);
    let mut lambda = 0;
    for _ in 0..100_000 {
        let beta = sample_beta(&x, plant.d, env.q, &mut rng);
        let n = sample_n(beta, &env, &mut rng);
        let w = match &noise {
            NoiseSpec::GaussianIid { std } => std[0] * rng.standard_normal(),
            NoiseSpec::None => 0.0,
        };
        lambda = update_lambda(lambda, beta, n);
        let xs = (beta == Beta::Received).then_some(&x[..]);
        let (u, next) = anytime_step(xs, beta, n, buf, &plant).unwrap();
        buf = next;
        let inside = norm(&x) < plant.d;
        let tail_zero = (lambda..buf.capacity()).all(|j| buf.block(j).iter().all(|&v| v == 0.0));
        if buf.lambda() != lambda
            || filled_blocks(&buf) != lambda
            || !tail_zero
            || (beta == Beta::Silent) != inside
            || (beta != Beta::Received && n != 0)
            || (lambda == 0 && u.iter().any(|&v| v != 0.0))
            || (beta == Beta::Silent && lambda != 0)
        {
            failures.push(format!("invariant broken at x={x:?} beta={beta:?} n={n} lambda={lambda}"));
            break;
        }
        x = vec![plant.f(&x, &u)[0] + w];
    }

    // Iteration budgets on received steps follow p.
    let mut rng = RngStream::new(0xC6, 100);
    let mut counts = vec![0u64; env.capacity + 1];
    let mut events = 0u64;
    while events < 200_000 {
        let beta = sample_beta(&[1.0], 0.0, env.q, &mut rng);
        let n = sample_n(beta, &env, &mut rng);
        if beta == Beta::Received {
            counts[n] += 1;
            events += 1;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let p = env.p[j];
        let sigma = (p * (1.0 - p) / events as f64).sqrt();
        if (c as f64 / events as f64 - p).abs() > 3.0 * sigma {
            failures.push(format!("N = {j} frequency off by more than 3 sigma"));
        }
    }

    // Same seed and stream: identical traces.
    let setup = ClosedLoop::new(
        make_sat_plant().with_trigger_radius(1.0).unwrap(),
        StochasticEnv::new(0.4, vec![0.2; 5]).unwrap(),
        NoiseSpec::gaussian(vec![1.0, 1.0]).unwrap(),
        InitialState::default(),
    )
    .unwrap();
    for i in 0..100 {
        let first = setup.run(Controller::Anytime, 50, &mut RngStream::new(123, i)).unwrap();
        let second = setup.run(Controller::Anytime, 50, &mut RngStream::new(123, i)).unwrap();
        let (RunOutcome::Completed(t1), RunOutcome::Completed(t2)) = (&first, &second) else {
            failures.push("unexpected divergence".into());
            break;
        };
        let (mut c1, mut c2) = (Vec::new(), Vec::new());
        t1.write_csv(&mut c1).unwrap();
        t2.write_csv(&mut c2).unwrap();
        if t1 != t2 || c1 != c2 {
            failures.push(format!("non-deterministic trace for stream {i}"));
            break;
        }
    }

    let ok = failures.is_empty();
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(30);
    report(6, "structural property suite", ok, elapsed, limit, &failures.join("; "));
    assert!(ok, "{failures:?}");
    assert!(elapsed < limit);
}
