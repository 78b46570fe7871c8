//! Round-by-round execution of the quantized push-pull recursion.
//!
//! Each round is bulk-synchronous. Every agent first acquires a fresh batch
//! and evaluates its online gradient at the current iterate, then quantizes
//! its decision and tracking variables with its own decaying stepsize, and
//! finally applies
//!
//! ```text
//! psi'   = (1 + C_ii) psi_i + sum_j C_ij Q(psi_j) + lambda_t g_i
//! theta' = (1 + R_ii) theta_i + sum_j R_ij Q(theta_j) - (psi' - psi_i) / (m z_ii)
//! z'     = z_i + sum_j R_ij (z_j - z_i)
//! ```
//!
//! with every cross-agent read taken from the round-t snapshot. Quantized
//! messages are exactly what an eavesdropper observes; the message log
//! stores them verbatim for the privacy audit.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::metrics::{MetricsTrace, TraceRow};
use crate::problems::{self, Objective, OnlineDataset, ProblemSpec};
use crate::quantizer;
use crate::rng::{agent_stream, Domain};
use crate::schedule::{QuantSchedule, StepSchedule};
use crate::topology::{self, WeightMatrices};

/// Distribution of the initial decision / tracking variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Seeded standard normal entries.
    Normal,
    /// All zeros (useful for conservation checks).
    Zero,
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub weights: WeightMatrices,
    pub step: StepSchedule,
    /// One quantization schedule per agent.
    pub quant: Vec<QuantSchedule>,
    /// Number of rounds T.
    pub horizon: usize,
    pub seed: u64,
    pub problem: ProblemSpec,
    /// When false the exchange is unquantized (the no-privacy baseline).
    pub quantization: bool,
    pub theta_init: InitKind,
    pub psi_init: InitKind,
    /// Emit a trace row every this many rounds (plus t = 0 and t = T).
    pub trace_interval: usize,
    /// Flush streamed outputs every this many rounds.
    pub flush_interval: usize,
    /// Retain the per-round message log in memory.
    pub keep_messages: bool,
    /// Optional cap on stored history (trades fidelity for speed).
    pub dataset_cap: Option<usize>,
}

impl RunConfig {
    /// Check every configuration invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let m = self.weights.m();

        let report = topology::validate(&self.weights);
        if !report.passed() {
            for f in &report.failures {
                violations.push(format!("[{}] {}", f.condition.id(), f.detail));
            }
        }
        if self.quant.len() != m {
            violations.push(format!(
                "need one quantization schedule per agent ({} given, {m} agents)",
                self.quant.len()
            ));
        }
        if !(self.step.lambda0 > 0.0) {
            violations.push("lambda0 must be positive".to_string());
        }
        if !(self.step.nu > 0.5 && self.step.nu < 1.0) {
            violations.push(format!("nu outside (1/2,1): {}", self.step.nu));
        }
        let mut max_varsigma: f64 = 0.0;
        for (i, q) in self.quant.iter().enumerate() {
            if !(q.d0 > 0.0) {
                violations.push(format!("d0 for agent {i} must be positive"));
            }
            if !(q.varsigma > 0.5 && q.varsigma < 1.0) {
                violations.push(format!("varsigma for agent {i} outside (1/2,1): {}", q.varsigma));
            }
            max_varsigma = max_varsigma.max(q.varsigma);
        }
        if !self.quant.is_empty() && !(max_varsigma < self.step.nu) {
            violations.push(format!(
                "max varsigma < nu violated ({} >= {})",
                max_varsigma, self.step.nu
            ));
        }
        if let Err(e) = self.problem.validate() {
            violations.push(e.to_string());
        }
        if let crate::problems::DataSource::QuadraticStream { centers, .. } = &self.problem.source {
            if centers.len() != m {
                violations.push(format!(
                    "quadratic centers must match agent count ({} given, {m} agents)",
                    centers.len()
                ));
            }
        }
        if self.trace_interval == 0 {
            violations.push("trace interval must be >= 1".to_string());
        }
        if self.flush_interval == 0 {
            violations.push("flush interval must be >= 1".to_string());
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::config(violations.join("; ")))
        }
    }
}

/// Per-agent state triple.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: usize,
    pub theta: Vec<DVector<f64>>,
    pub psi: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    datasets: Vec<OnlineDataset>,
    quant_streams: Vec<ChaCha8Rng>,
}

impl SimulationState {
    pub fn m(&self) -> usize {
        self.theta.len()
    }
}

/// What one agent transmitted in one round.
#[derive(Debug, Clone)]
pub struct AgentMessage {
    pub agent: usize,
    pub q_theta: DVector<f64>,
    pub q_psi: DVector<f64>,
    /// Quantization stepsize used this round.
    pub d: f64,
}

/// Everything observable about one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub t: usize,
    pub lambda: f64,
    pub messages: Vec<AgentMessage>,
    /// Sum over agents of the online gradients used this round.
    pub grad_sum: DVector<f64>,
}

fn init_vector(kind: InitKind, dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    match kind {
        InitKind::Normal => DVector::from_iterator(
            dim,
            (0..dim).map(|_| rand::Rng::sample::<f64, _>(rng, StandardNormal)),
        ),
        InitKind::Zero => DVector::zeros(dim),
    }
}

/// Build the initial state: seeded normal (or zero) theta and psi, basis
/// vectors for z, and one quantizer stream per agent.
pub fn init(config: &RunConfig) -> Result<SimulationState> {
    config.validate()?;
    let m = config.weights.m();
    let d = config.problem.dimension;

    let mut theta = Vec::with_capacity(m);
    let mut psi = Vec::with_capacity(m);
    let mut z = Vec::with_capacity(m);
    for i in 0..m {
        let mut stream = agent_stream(config.seed, Domain::Init, i);
        // theta is drawn before psi from the same per-agent stream.
        theta.push(init_vector(config.theta_init, d, &mut stream));
        psi.push(init_vector(config.psi_init, d, &mut stream));
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        z.push(e);
    }
    let quant_streams = (0..m)
        .map(|i| agent_stream(config.seed, Domain::Quantizer, i))
        .collect();
    Ok(SimulationState {
        t: 0,
        theta,
        psi,
        z,
        datasets: (0..m).map(|_| OnlineDataset::new(config.dataset_cap)).collect(),
        quant_streams,
    })
}

/// Advance one round in natural agent order.
pub fn round(state: &mut SimulationState, config: &RunConfig) -> Result<RoundRecord> {
    let order: Vec<usize> = (0..state.m()).collect();
    round_with_order(state, config, &order)
}

/// Advance one round applying per-agent updates in the given order. All
/// cross-agent reads are round-t snapshots and every agent owns its streams,
/// so the order cannot change the result; tests exercise exactly that.
pub fn round_with_order(
    state: &mut SimulationState,
    config: &RunConfig,
    order: &[usize],
) -> Result<RoundRecord> {
    let m = state.m();
    let t = state.t;
    let dim = config.problem.dimension;
    let r = config.weights.r();
    let c = config.weights.c();
    let lambda = config.step.stepsize(t);

    // Step a: acquire data, evaluate online gradients at the current iterate.
    let mut grads: Vec<Option<DVector<f64>>> = vec![None; m];
    for &i in order {
        let batch = config.problem.draw(config.seed, i, t)?;
        state.datasets[i].push_round(batch);
        let g = problems::online_gradient(config.problem.kind, &state.datasets[i], &state.theta[i], t)?;
        grads[i] = Some(g);
    }
    let grads: Vec<DVector<f64>> = grads.into_iter().map(|g| g.expect("gradient")).collect();

    // Step b: quantize this round's outgoing messages.
    let mut messages: Vec<Option<AgentMessage>> = vec![None; m];
    for &i in order {
        let d_t = config.quant[i].stepsize(t);
        let (q_theta, q_psi) = if config.quantization {
            let stream = &mut state.quant_streams[i];
            (
                quantizer::quantize_vector(&state.theta[i], d_t, stream)?,
                quantizer::quantize_vector(&state.psi[i], d_t, stream)?,
            )
        } else {
            (state.theta[i].clone(), state.psi[i].clone())
        };
        messages[i] = Some(AgentMessage {
            agent: i,
            q_theta,
            q_psi,
            d: d_t,
        });
    }
    let messages: Vec<AgentMessage> = messages.into_iter().map(|x| x.expect("message")).collect();

    // Step c: apply the updates from the snapshot.
    let mut theta_next: Vec<Option<DVector<f64>>> = vec![None; m];
    let mut psi_next: Vec<Option<DVector<f64>>> = vec![None; m];
    for &i in order {
        let z_ii = state.z[i][i];
        if z_ii <= 0.0 {
            return Err(Error::structural(format!(
                "agent {i} has nonpositive eigenvector estimate {z_ii} at round {t}"
            )));
        }
        let mut psi_new = &state.psi[i] * (1.0 + c[(i, i)]);
        for j in 0..m {
            if j != i && c[(i, j)] != 0.0 {
                psi_new += &messages[j].q_psi * c[(i, j)];
            }
        }
        psi_new += &grads[i] * lambda;

        let mut theta_new = &state.theta[i] * (1.0 + r[(i, i)]);
        for j in 0..m {
            if j != i && r[(i, j)] != 0.0 {
                theta_new += &messages[j].q_theta * r[(i, j)];
            }
        }
        theta_new -= (&psi_new - &state.psi[i]) / (m as f64 * z_ii);

        theta_next[i] = Some(theta_new);
        psi_next[i] = Some(psi_new);
    }
    state.theta = theta_next.into_iter().map(|x| x.expect("theta")).collect();
    state.psi = psi_next.into_iter().map(|x| x.expect("psi")).collect();
    state.z = topology::z_step(r, &state.z);
    state.t = t + 1;

    let mut grad_sum = DVector::zeros(dim);
    for g in &grads {
        grad_sum += g;
    }
    Ok(RoundRecord {
        t,
        lambda,
        messages,
        grad_sum,
    })
}

/// Precomputed spectral context shared by runs over the same configuration.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub objective: Objective,
}

/// Build the run context, reusing a previously solved logistic optimum when
/// available.
pub fn prepare(config: &RunConfig, cached: Option<&problems::LogisticOptimum>) -> Result<RunContext> {
    config.validate()?;
    Ok(RunContext {
        u: topology::left_eigenvector(config.weights.r())?,
        v: topology::right_eigenvector(config.weights.c())?,
        objective: problems::objective(&config.problem, cached)?,
    })
}

/// Diagnostics row for the current state.
pub fn trace_row(state: &SimulationState, ctx: &RunContext, max_delta: f64) -> TraceRow {
    let theta_bar = crate::metrics::average_theta(&state.theta, &ctx.u);
    let (cons_theta, cons_psi) =
        crate::metrics::consensus_errors(&state.theta, &state.psi, &ctx.u, &ctx.v);
    TraceRow {
        t: state.t,
        f_bar: ctx.objective.value(&theta_bar),
        gap: ctx.objective.gap(&theta_bar),
        grad_norm: ctx.objective.gradient(&theta_bar).norm(),
        cons_theta,
        cons_psi,
        max_delta,
    }
}

/// Streaming hooks for long runs; file writers implement this.
pub trait RunObserver {
    fn on_trace_row(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
    fn on_round(&mut self, _record: &RoundRecord) -> Result<()> {
        Ok(())
    }
    /// Called every `flush_interval` rounds and at the end of the run.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: MetricsTrace,
    pub final_state: SimulationState,
    /// Message log, retained when `keep_messages` is set.
    pub records: Option<Vec<RoundRecord>>,
    /// Held-out accuracy of the final averaged iterate (logistic only).
    pub final_accuracy: Option<f64>,
}

/// Whether a row is due at time `t` (always at 0 and T).
pub(crate) fn row_due(t: usize, horizon: usize, interval: usize) -> bool {
    t == 0 || t == horizon || t.is_multiple_of(interval)
}

/// Execute T rounds, emitting trace rows and streaming to the observer.
pub fn run_observed(
    config: &RunConfig,
    ctx: &RunContext,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    let mut state = init(config)?;
    let mut trace = MetricsTrace::default();
    let mut records = config.keep_messages.then(Vec::new);

    let first = trace_row(&state, ctx, 0.0);
    observer.on_trace_row(&first)?;
    trace.rows.push(first);

    for t in 0..config.horizon {
        let record = round(&mut state, config)?;
        observer.on_round(&record)?;
        if let Some(rs) = records.as_mut() {
            rs.push(record);
        }
        if row_due(t + 1, config.horizon, config.trace_interval) {
            let row = trace_row(&state, ctx, 0.0);
            observer.on_trace_row(&row)?;
            trace.rows.push(row);
        }
        if (t + 1) % config.flush_interval == 0 {
            observer.flush()?;
        }
    }
    observer.flush()?;

    let final_accuracy = match (&config.problem.heldout, &ctx.objective.kind) {
        (Some(heldout), problems::ProblemKind::Logistic) => {
            let theta_bar = crate::metrics::average_theta(&state.theta, &ctx.u);
            Some(problems::accuracy(&theta_bar, heldout)?)
        }
        _ => None,
    };

    Ok(RunOutcome {
        trace,
        final_state: state,
        records,
        final_accuracy,
    })
}

/// Execute T rounds without streaming.
pub fn run(config: &RunConfig, ctx: &RunContext) -> Result<RunOutcome> {
    run_observed(config, ctx, &mut NoopObserver)
}

/// Side-by-side summary of a quantized run against its unquantized twin.
#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub final_gap_quantized: f64,
    pub final_gap_baseline: f64,
    pub gap_difference: f64,
    pub accuracy_quantized: Option<f64>,
    pub accuracy_baseline: Option<f64>,
    pub accuracy_difference: Option<f64>,
}

/// Outcome of [`compare`].
#[derive(Debug)]
pub struct CompareOutcome {
    pub quantized: RunOutcome,
    pub baseline: RunOutcome,
    pub summary: CompareSummary,
}

/// Run the configuration twice with the same seed and problem stream, with
/// and without quantization.
pub fn compare(config: &RunConfig, ctx: &RunContext) -> Result<CompareOutcome> {
    let mut quant_cfg = config.clone();
    quant_cfg.quantization = true;
    let mut base_cfg = config.clone();
    base_cfg.quantization = false;

    let quantized = run(&quant_cfg, ctx)?;
    let baseline = run(&base_cfg, ctx)?;

    let gap_q = quantized.trace.last().map(|r| r.gap).unwrap_or(f64::NAN);
    let gap_b = baseline.trace.last().map(|r| r.gap).unwrap_or(f64::NAN);
    let summary = CompareSummary {
        final_gap_quantized: gap_q,
        final_gap_baseline: gap_b,
        gap_difference: gap_q - gap_b,
        accuracy_quantized: quantized.final_accuracy,
        accuracy_baseline: baseline.final_accuracy,
        accuracy_difference: match (quantized.final_accuracy, baseline.final_accuracy) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        },
    };
    Ok(CompareOutcome {
        quantized,
        baseline,
        summary,
    })
}
