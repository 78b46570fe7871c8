//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `-- --nocapture` to see them). Desk-scale experiments load the
//! shipped configurations from `configs/`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ldpopt::config::{load, AppConfig, Overrides};
use ldpopt::engine::{self, RunOutcome};
use ldpopt::metrics::rate_fit;
use ldpopt::output;
use ldpopt::privacy::{audit_run, AuditOutcome};
use ldpopt::quantizer::{event_probability_gap, quantize};
use ldpopt::schedule::QuantSchedule;
use ldpopt::topology::{estimate_geometric_constants, left_eigenvector, z_step};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_app(name: &str) -> AppConfig {
    load(&configs_dir().join(name), &Overrides::default()).expect(name)
}

fn quad_app() -> &'static AppConfig {
    static APP: OnceLock<AppConfig> = OnceLock::new();
    APP.get_or_init(|| load_app("five_node_quadratic.toml"))
}

fn logistic_app() -> &'static AppConfig {
    static APP: OnceLock<AppConfig> = OnceLock::new();
    APP.get_or_init(|| load_app("five_node_logistic.toml"))
}

fn audit_app() -> &'static AppConfig {
    static APP: OnceLock<AppConfig> = OnceLock::new();
    APP.get_or_init(|| load_app("five_node_audit.toml"))
}

/// Criterion-5 runs (quadratic config, seeds 1..=5), shared with the rate
/// checks of criterion 7. The elapsed time of the five runs is recorded for
/// the runtime budget.
fn quad_runs() -> &'static (Vec<RunOutcome>, Duration) {
    static RUNS: OnceLock<(Vec<RunOutcome>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let outcomes = (1..=5u64)
            .map(|seed| {
                let mut cfg = quad_app().run.clone();
                cfg.seed = seed;
                let ctx = engine::prepare(&cfg, None).expect("prepare");
                engine::run(&cfg, &ctx).expect("run")
            })
            .collect();
        (outcomes, start.elapsed())
    })
}

/// Criterion-8 audits at the three stepsize levels, shared with criterion 9.
fn audits() -> &'static (Vec<(f64, AuditOutcome)>, Duration) {
    static AUDITS: OnceLock<(Vec<(f64, AuditOutcome)>, Duration)> = OnceLock::new();
    AUDITS.get_or_init(|| {
        let start = Instant::now();
        let app = audit_app();
        let ctx = engine::prepare(&app.run, None).expect("prepare");
        let outcomes = [2.0, 5.0, 8.0]
            .into_iter()
            .map(|d0_base| {
                let mut cfg = app.run.clone();
                for (i, q) in cfg.quant.iter_mut().enumerate() {
                    *q = QuantSchedule::new(d0_base + 0.01 * (i + 1) as f64, q.varsigma)
                        .expect("schedule");
                }
                (d0_base, audit_run(&cfg, &ctx, &app.audit).expect("audit"))
            })
            .collect();
        (outcomes, start.elapsed())
    })
}

fn max_delta_at(outcome: &AuditOutcome, t: usize) -> f64 {
    outcome
        .trace
        .rows
        .iter()
        .rfind(|r| r.t <= t)
        .map(|r| r.max_delta)
        .unwrap_or(0.0)
}

#[test]
fn criterion_01_quantizer_statistics() {
    let start = Instant::now();
    let d = 1.0;
    let n = 1_000_000usize;
    let mut stream = ChaCha8Rng::seed_from_u64(0xacce);
    let mut worst_mean_err = 0.0f64;
    let mut worst_var = 0.0f64;
    for &y in &[-1.3, 0.7, 2.0, 3.0] {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let q = quantize(y, d, &mut stream).expect("quantize");
            sum += q;
            sumsq += q * q;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        worst_mean_err = worst_mean_err.max((mean - y).abs());
        worst_var = worst_var.max(var);
        assert!(
            (mean - y).abs() <= 0.0016,
            "criterion 1: FAIL — mean error {} at y={y}",
            (mean - y).abs()
        );
        assert!(
            var <= 0.2501 + 0.002,
            "criterion 1: FAIL — variance {var} at y={y}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "criterion 1: FAIL — runtime {elapsed:?}");
    println!(
        "criterion 1: PASS — worst mean error {worst_mean_err:.2e}, worst variance {worst_var:.4} ({elapsed:?})"
    );
}

#[test]
fn criterion_02_event_gap_exhaustive_grid() {
    let start = Instant::now();
    let mut worst_excess = f64::NEG_INFINITY;
    for &d in &[0.5, 1.0, 2.0] {
        for i in 0..100 {
            let y = -3.0 + 6.0 * i as f64 / 99.0;
            for j in 0..100 {
                let offset = d * (-0.99 + 1.98 * j as f64 / 99.0);
                let y2 = y + offset;
                let gap = event_probability_gap(y, y2, d).expect("gap");
                let bound = (y - y2).abs() / d + 1e-12;
                worst_excess = worst_excess.max(gap - bound);
                assert!(
                    gap <= bound,
                    "criterion 2: FAIL — gap {gap} exceeds bound {bound} at (y={y}, y'={y2}, d={d})"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "criterion 2: FAIL — runtime {elapsed:?}");
    println!("criterion 2: PASS — worst slack {worst_excess:.2e} ({elapsed:?})");
}

#[test]
fn criterion_03_eigenvector_estimation_convergence() {
    let start = Instant::now();
    let w = &quad_app().run.weights;
    let m = w.m();
    let u = left_eigenvector(w.r()).expect("u");
    let mut z: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect();
    for _ in 0..200 {
        z = z_step(w.r(), &z);
    }
    let err = (0..m)
        .map(|i| (m as f64 * z[i][i] - u[i]).abs())
        .fold(0.0f64, f64::max);
    let fit = estimate_geometric_constants(w, 200).expect("fit");
    let elapsed = start.elapsed();
    assert!(err <= 1e-8, "criterion 3: FAIL — error {err:.2e} at t=200");
    assert!(fit.p_z < 1.0, "criterion 3: FAIL — fitted P_z {} >= 1", fit.p_z);
    assert!(elapsed < Duration::from_secs(1), "criterion 3: FAIL — runtime {elapsed:?}");
    println!(
        "criterion 3: PASS — error {err:.2e} at t=200, P_z {:.3} ({elapsed:?})",
        fit.p_z
    );
}

#[test]
fn criterion_04_conservation_identity() {
    let mut cfg = quad_app().run.clone();
    cfg.quantization = false;
    let mut state = engine::init(&cfg).expect("init");
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let before: DVector<f64> = state.psi.iter().sum();
        let record = engine::round(&mut state, &cfg).expect("round");
        let after: DVector<f64> = state.psi.iter().sum();
        let residual = (after - before - &record.grad_sum * record.lambda).amax();
        worst = worst.max(residual);
        assert!(
            residual <= 1e-10,
            "criterion 4: FAIL — conservation residual {residual:.2e} at t={}",
            record.t
        );
    }
    println!("criterion 4: PASS — worst per-round residual {worst:.2e}");
}

#[test]
fn criterion_05_quadratic_desk_scale() {
    let (runs, elapsed) = quad_runs();
    let mut worst_gap = 0.0f64;
    let mut worst_cons = 0.0f64;
    for (k, out) in runs.iter().enumerate() {
        let last = out.trace.last().expect("rows");
        worst_gap = worst_gap.max(last.gap);
        worst_cons = worst_cons.max(last.cons_theta);
        assert!(
            last.gap <= 1e-2,
            "criterion 5: FAIL — seed {}: objective gap {} at T",
            k + 1,
            last.gap
        );
        assert!(
            last.cons_theta <= 1e-2,
            "criterion 5: FAIL — seed {}: consensus error {} at T",
            k + 1,
            last.cons_theta
        );
    }
    assert!(
        *elapsed < Duration::from_secs(30),
        "criterion 5: FAIL — runtime {elapsed:?}"
    );
    println!(
        "criterion 5: PASS — worst gap {worst_gap:.3e}, worst cons_theta {worst_cons:.3e} over 5 seeds ({elapsed:?})"
    );
}

#[test]
fn criterion_06_logistic_compare() {
    let start = Instant::now();
    let app = logistic_app();
    let ctx = engine::prepare(&app.run, None).expect("prepare");
    let mut worst_diff = 0.0f64;
    for seed in 1..=5u64 {
        let mut cfg = app.run.clone();
        cfg.seed = seed;
        let out = engine::compare(&cfg, &ctx).expect("compare");
        let diff = out
            .summary
            .accuracy_difference
            .expect("held-out accuracy")
            .abs();
        worst_diff = worst_diff.max(diff);
        assert!(
            diff <= 0.02,
            "criterion 6: FAIL — seed {seed}: accuracy difference {diff}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(180), "criterion 6: FAIL — runtime {elapsed:?}");
    println!(
        "criterion 6: PASS — worst held-out accuracy difference {worst_diff:.4} over 5 seeds ({elapsed:?})"
    );
}

#[test]
fn criterion_07_rate_checks() {
    let (runs, _) = quad_runs();
    let mut worst_cons_slope = f64::NEG_INFINITY;
    let mut worst_grad_slope = f64::NEG_INFINITY;
    for (k, out) in runs.iter().enumerate() {
        let cons_sq: Vec<(usize, f64)> = out
            .trace
            .column("cons_theta")
            .into_iter()
            .map(|(t, v)| (t, v * v))
            .collect();
        let grad_sq: Vec<(usize, f64)> = out
            .trace
            .column("grad_norm")
            .into_iter()
            .map(|(t, v)| (t, v * v))
            .collect();
        let cons_slope = rate_fit(&cons_sq, (100, 2000)).expect("cons fit");
        let grad_slope = rate_fit(&grad_sq, (100, 2000)).expect("grad fit");
        worst_cons_slope = worst_cons_slope.max(cons_slope);
        worst_grad_slope = worst_grad_slope.max(grad_slope);
        assert!(
            cons_slope <= -0.8,
            "criterion 7: FAIL — seed {}: cons_theta^2 slope {cons_slope}",
            k + 1
        );
        assert!(
            grad_slope <= -0.2,
            "criterion 7: FAIL — seed {}: grad_norm^2 slope {grad_slope}",
            k + 1
        );
    }
    println!(
        "criterion 7: PASS — worst slopes cons^2 {worst_cons_slope:.3}, grad^2 {worst_grad_slope:.3}"
    );
}

#[test]
fn criterion_08_budget_trajectory_and_ordering() {
    let (outcomes, elapsed) = audits();
    let mut totals = Vec::new();
    for (d0, outcome) in outcomes {
        assert!(
            outcome.max_delta.is_finite() && outcome.max_delta < 1.0,
            "criterion 8: FAIL — d0 base {d0}: max delta {}",
            outcome.max_delta
        );
        let final_delta = max_delta_at(outcome, 1000);
        let mid_delta = max_delta_at(outcome, 500);
        let late_increase = final_delta - mid_delta;
        assert!(
            late_increase <= 0.1 * final_delta,
            "criterion 8: FAIL — d0 base {d0}: late increase {late_increase} vs final {final_delta}"
        );
        totals.push((*d0, outcome.max_delta));
    }
    assert!(
        totals[0].1 > totals[1].1 && totals[1].1 > totals[2].1,
        "criterion 8: FAIL — budgets not strictly decreasing in d0: {totals:?}"
    );
    assert!(
        *elapsed < Duration::from_secs(120),
        "criterion 8: FAIL — runtime {elapsed:?}"
    );
    println!(
        "criterion 8: PASS — max budgets {:.4} > {:.4} > {:.4}, plateaued ({elapsed:?})",
        totals[0].1, totals[1].1, totals[2].1
    );
}

#[test]
fn criterion_09_analytic_dominance() {
    let (outcomes, _) = audits();
    let mut worst_margin = f64::INFINITY;
    for (d0, outcome) in outcomes {
        for agent in &outcome.agents {
            for t in 0..=500usize {
                let empirical = agent.series.delta[t];
                let bound = agent.bound.combined(t);
                if t > 0 {
                    worst_margin = worst_margin.min(bound - empirical);
                }
                assert!(
                    empirical <= bound,
                    "criterion 9: FAIL — d0 base {d0}, agent {}, t={t}: {empirical} > {bound}",
                    agent.series.agent
                );
            }
        }
    }
    println!("criterion 9: PASS — smallest envelope margin {worst_margin:.3e} over 1 <= t <= 500");
}

#[test]
fn criterion_10_byte_identical_outputs() {
    let mut cfg = quad_app().run.clone();
    cfg.seed = 1;
    cfg.keep_messages = true;
    let ctx = engine::prepare(&cfg, None).expect("prepare");

    let render = |dir: &Path| -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
        let trace_path = dir.join("trace.csv");
        let messages_path = dir.join("messages.csv");
        let mut observer =
            output::FileObserver::create(&trace_path, Some(&messages_path)).expect("observer");
        engine::run_observed(&cfg, &ctx, &mut observer).expect("run");
        drop(observer);
        let audit = audit_run(&cfg, &ctx, &audit_app().audit).expect("audit");
        let (ledger, summary) = output::write_audit(dir, &audit).expect("audit files");
        (
            std::fs::read(trace_path).expect("trace"),
            std::fs::read(messages_path).expect("messages"),
            std::fs::read(ledger).expect("ledger"),
            std::fs::read(summary).expect("summary"),
        )
    };

    let dir_a = tempfile::tempdir().expect("tempdir");
    let dir_b = tempfile::tempdir().expect("tempdir");
    let a = render(dir_a.path());
    let b = render(dir_b.path());
    assert!(a.0 == b.0, "criterion 10: FAIL — trace files differ");
    assert!(a.1 == b.1, "criterion 10: FAIL — message logs differ");
    assert!(a.2 == b.2, "criterion 10: FAIL — audit ledgers differ");
    assert!(a.3 == b.3, "criterion 10: FAIL — audit summaries differ");
    println!(
        "criterion 10: PASS — trace ({} bytes), messages ({} bytes) and audit files byte-identical",
        a.0.len(),
        a.1.len()
    );
}
