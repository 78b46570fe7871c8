//! Delimited-text writers for traces, message logs, audits and final states.
//!
//! All floats are printed with the shortest exponential representation, so
//! files round-trip exactly and identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::{CompareOutcome, RoundRecord, RunObserver, SimulationState};
use crate::error::Result;
use crate::metrics::{MetricsTrace, TraceRow, TRACE_COLUMNS};
use crate::privacy::AuditOutcome;
use crate::problems::LogisticOptimum;

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn join(values: &[f64], sep: char) -> String {
    values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(&sep.to_string())
}

fn write_row(out: &mut impl Write, row: &TraceRow) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        row.t,
        fmt(row.f_bar),
        fmt(row.gap),
        fmt(row.grad_norm),
        fmt(row.cons_theta),
        fmt(row.cons_psi),
        fmt(row.max_delta)
    )
}

/// Write a complete trace file.
pub fn write_trace(path: &Path, trace: &MetricsTrace) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
    for row in &trace.rows {
        write_row(&mut out, row)?;
    }
    out.flush()?;
    Ok(())
}

/// Write the message log: one row per (round, agent) with the transmitted
/// lattice values, vector coordinates joined by ';'.
pub fn write_messages(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,agent,d,q_theta,q_psi")?;
    for record in records {
        for msg in &record.messages {
            writeln!(
                out,
                "{},{},{},{},{}",
                record.t,
                msg.agent,
                fmt(msg.d),
                join(msg.q_theta.as_slice(), ';'),
                join(msg.q_psi.as_slice(), ';')
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write final per-agent states.
pub fn write_final_states(path: &Path, state: &SimulationState) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "agent,theta,psi,z")?;
    for i in 0..state.m() {
        writeln!(
            out,
            "{},{},{},{}",
            i,
            join(state.theta[i].as_slice(), ';'),
            join(state.psi[i].as_slice(), ';'),
            join(state.z[i].as_slice(), ';')
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Streams trace rows and the message log to disk as a run progresses, so
/// aborted runs remain analyzable.
pub struct FileObserver {
    trace: BufWriter<File>,
    messages: Option<BufWriter<File>>,
}

impl FileObserver {
    pub fn create(trace_path: &Path, messages_path: Option<&Path>) -> Result<Self> {
        let mut trace = BufWriter::new(File::create(trace_path)?);
        writeln!(trace, "{}", TRACE_COLUMNS.join(","))?;
        let messages = match messages_path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "t,agent,d,q_theta,q_psi")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { trace, messages })
    }
}

impl RunObserver for FileObserver {
    fn on_trace_row(&mut self, row: &TraceRow) -> Result<()> {
        write_row(&mut self.trace, row)?;
        Ok(())
    }

    fn on_round(&mut self, record: &RoundRecord) -> Result<()> {
        if let Some(out) = self.messages.as_mut() {
            for msg in &record.messages {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    record.t,
                    msg.agent,
                    fmt(msg.d),
                    join(msg.q_theta.as_slice(), ';'),
                    join(msg.q_psi.as_slice(), ';')
                )?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.trace.flush()?;
        if let Some(out) = self.messages.as_mut() {
            out.flush()?;
        }
        Ok(())
    }
}

fn d_l_note(outcome: &AuditOutcome) -> &'static str {
    if outcome.d_l_user_supplied {
        " (user-supplied; the quadratic gradient is unbounded globally, so the \
bound is valid only on the iterate region)"
    } else {
        " (corpus-derived)"
    }
}

/// Write the per-round audit ledger and a human-readable summary.
///
/// The ledger header records the twin semantics: sensitivities are measured
/// on pre-quantization internal states, with the shadow trajectory consuming
/// the primary run's message log verbatim.
pub fn write_audit(dir: &Path, outcome: &AuditOutcome) -> Result<(PathBuf, PathBuf)> {
    let ledger_path = dir.join("audit.csv");
    let mut out = BufWriter::new(File::create(&ledger_path)?);
    writeln!(out, "# sensitivity is measured on pre-quantization internal states;")?;
    writeln!(out, "# the shadow trajectory consumes the primary run's message log verbatim.")?;
    writeln!(out, "# geometric constants: {} (c_z={}, p_z={})", outcome.constants_provenance, fmt(outcome.c_z), fmt(outcome.p_z))?;
    writeln!(out, "# gradient l1 bound: {}{}", fmt(outcome.d_l), d_l_note(outcome))?;
    writeln!(
        out,
        "agent,t,delta_theta,delta_psi,delta,d_t,delta_round,cum_delta,rho_psi,rho_theta,bound_ok"
    )?;
    for agent in &outcome.agents {
        let i = agent.series.agent;
        for t in 0..agent.d.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                i,
                t,
                fmt(agent.series.delta_theta[t]),
                fmt(agent.series.delta_psi[t]),
                fmt(agent.series.delta[t]),
                fmt(agent.d[t]),
                fmt(agent.accumulation.per_round[t]),
                fmt(agent.accumulation.cumulative[t]),
                fmt(agent.bound.rho_psi[t]),
                fmt(agent.bound.rho_theta[t]),
                agent.bound_ok[t]
            )?;
        }
    }
    out.flush()?;

    let summary_path = dir.join("audit_summary.txt");
    let mut out = BufWriter::new(File::create(&summary_path)?);
    writeln!(out, "privacy audit summary")?;
    writeln!(out, "constants: {} c_z={} p_z={}", outcome.constants_provenance, fmt(outcome.c_z), fmt(outcome.p_z))?;
    if let Some(fit) = &outcome.fit {
        writeln!(
            out,
            "geometric fit: horizon={} fitted_rounds={} (estimate, not a certified constant)",
            fit.horizon, fit.fitted_rounds
        )?;
    }
    writeln!(out, "gradient l1 bound: {}{}", fmt(outcome.d_l), d_l_note(outcome))?;
    for agent in &outcome.agents {
        let acc = &agent.accumulation;
        writeln!(
            out,
            "agent {}: perturbed round {}, ldp pair (0, {}), per-round valid: {}, \
             analytic required d0 {} (budget check: {}, bound {})",
            agent.series.agent,
            agent.series.perturbation_round,
            fmt(acc.total),
            acc.violations.is_empty(),
            fmt(agent.bound.required_d0),
            if agent.budget.satisfied { "satisfied" } else { "not satisfied" },
            fmt(agent.budget.delta_bound)
        )?;
    }
    writeln!(out, "max_i delta^i = {}", fmt(outcome.max_delta))?;
    writeln!(
        out,
        "validity: {}",
        if outcome.max_delta < 1.0 { "within the (0,1) budget range" } else { "budget exceeded" }
    )?;
    out.flush()?;
    Ok((ledger_path, summary_path))
}

/// Write the side-by-side comparison trace and its summary.
pub fn write_compare(dir: &Path, outcome: &CompareOutcome) -> Result<(PathBuf, PathBuf)> {
    let trace_path = dir.join("compare.csv");
    let mut out = BufWriter::new(File::create(&trace_path)?);
    let quant_cols: Vec<String> = TRACE_COLUMNS[1..].iter().map(|c| format!("{c}_quantized")).collect();
    let base_cols: Vec<String> = TRACE_COLUMNS[1..].iter().map(|c| format!("{c}_baseline")).collect();
    writeln!(out, "t,{},{}", quant_cols.join(","), base_cols.join(","))?;
    for (q, b) in outcome
        .quantized
        .trace
        .rows
        .iter()
        .zip(&outcome.baseline.trace.rows)
    {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            q.t,
            fmt(q.f_bar),
            fmt(q.gap),
            fmt(q.grad_norm),
            fmt(q.cons_theta),
            fmt(q.cons_psi),
            fmt(q.max_delta),
            fmt(b.f_bar),
            fmt(b.gap),
            fmt(b.grad_norm),
            fmt(b.cons_theta),
            fmt(b.cons_psi),
            fmt(b.max_delta)
        )?;
    }
    out.flush()?;

    let summary_path = dir.join("compare_summary.txt");
    let mut out = BufWriter::new(File::create(&summary_path)?);
    let s = &outcome.summary;
    writeln!(out, "final gap quantized: {}", fmt(s.final_gap_quantized))?;
    writeln!(out, "final gap baseline:  {}", fmt(s.final_gap_baseline))?;
    writeln!(out, "gap difference:      {}", fmt(s.gap_difference))?;
    if let (Some(aq), Some(ab), Some(ad)) = (
        s.accuracy_quantized,
        s.accuracy_baseline,
        s.accuracy_difference,
    ) {
        writeln!(out, "accuracy quantized:  {}", fmt(aq))?;
        writeln!(out, "accuracy baseline:   {}", fmt(ab))?;
        writeln!(out, "accuracy difference: {}", fmt(ad))?;
    }
    out.flush()?;
    Ok((trace_path, summary_path))
}

/// Load a cached logistic optimum if one exists for this fingerprint.
pub fn load_cached_optimum(dir: &Path, fingerprint: u64) -> Option<LogisticOptimum> {
    let path = dir.join(format!("fstar_{fingerprint:016x}.csv"));
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    if header != ["fingerprint", "value", "grad_norm", "iterations", "theta"] {
        return None;
    }
    let fields: Vec<&str> = lines.next()?.split(',').collect();
    if fields.len() != 5 {
        return None;
    }
    let fp = u64::from_str_radix(fields[0].trim_start_matches("0x"), 16).ok()?;
    if fp != fingerprint {
        return None;
    }
    let value = fields[1].parse().ok()?;
    let grad_norm = fields[2].parse().ok()?;
    let iterations = fields[3].parse().ok()?;
    let theta: Vec<f64> = fields[4]
        .split(';')
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    Some(LogisticOptimum {
        theta: nalgebra::DVector::from_vec(theta),
        value,
        grad_norm,
        iterations,
        corpus_fingerprint: fp,
    })
}

/// Persist a solved logistic optimum next to the run outputs.
pub fn store_cached_optimum(dir: &Path, optimum: &LogisticOptimum) -> Result<PathBuf> {
    let path = dir.join(format!("fstar_{:016x}.csv", optimum.corpus_fingerprint));
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(out, "fingerprint,value,grad_norm,iterations,theta")?;
    writeln!(
        out,
        "0x{:016x},{},{},{},{}",
        optimum.corpus_fingerprint,
        fmt(optimum.value),
        fmt(optimum.grad_norm),
        optimum.iterations,
        join(optimum.theta.as_slice(), ';')
    )?;
    out.flush()?;
    Ok(path)
}
