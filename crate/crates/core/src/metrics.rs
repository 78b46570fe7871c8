//! Per-round diagnostics: weighted averages, consensus errors, objective
//! gap, gradient norm, and log-log decay-rate fits.
//!
//! Monitoring uses the plain 2-norm throughout. The network average of the
//! decision variables is weighted by the left eigenvector `u` (so it is the
//! quantity the mixing actually preserves), while the tracking variables are
//! compared against `v_i` times their arithmetic mean.

use nalgebra::DVector;

use crate::problems::Objective;

/// One emitted trace row. Columns appear in files in this exact order.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    /// Objective value at the weighted average iterate.
    pub f_bar: f64,
    /// Objective gap `F(theta_bar) - F*`.
    pub gap: f64,
    /// `||grad F(theta_bar)||_2`.
    pub grad_norm: f64,
    /// `||theta - 1 (x) theta_bar||_2` over the stacked agents.
    pub cons_theta: f64,
    /// `||psi - diag(v) 1 (x) psi_bar||_2` over the stacked agents.
    pub cons_psi: f64,
    /// Largest cumulative per-agent privacy budget seen so far; zero when no
    /// twin trajectory is attached to the run.
    pub max_delta: f64,
}

/// Column names, in file order.
pub const TRACE_COLUMNS: [&str; 7] =
    ["t", "f_bar", "gap", "grad_norm", "cons_theta", "cons_psi", "max_delta"];

/// Complete trace of a run.
#[derive(Debug, Clone, Default)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// (t, value) pairs of one column, for rate fitting.
    pub fn column(&self, name: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .map(|r| {
                let v = match name {
                    "f_bar" => r.f_bar,
                    "gap" => r.gap,
                    "grad_norm" => r.grad_norm,
                    "cons_theta" => r.cons_theta,
                    "cons_psi" => r.cons_psi,
                    "max_delta" => r.max_delta,
                    _ => f64::NAN,
                };
                (r.t, v)
            })
            .collect()
    }
}

/// Weighted network average `sum_i u_i theta_i / m`.
pub fn average_theta(thetas: &[DVector<f64>], u: &DVector<f64>) -> DVector<f64> {
    let m = thetas.len();
    let mut avg = DVector::zeros(thetas[0].len());
    for (i, theta) in thetas.iter().enumerate() {
        avg += theta * u[i];
    }
    avg / m as f64
}

/// Stacked 2-norm distances from consensus: `theta_i` against the weighted
/// average, `psi_i` against `v_i` times the arithmetic mean.
pub fn consensus_errors(
    thetas: &[DVector<f64>],
    psis: &[DVector<f64>],
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> (f64, f64) {
    let m = thetas.len();
    let theta_bar = average_theta(thetas, u);
    let mut psi_bar = DVector::zeros(psis[0].len());
    for psi in psis {
        psi_bar += psi;
    }
    psi_bar /= m as f64;

    let mut theta_sq = 0.0;
    let mut psi_sq = 0.0;
    for i in 0..m {
        theta_sq += (&thetas[i] - &theta_bar).norm_squared();
        psi_sq += (&psis[i] - &psi_bar * v[i]).norm_squared();
    }
    (theta_sq.sqrt(), psi_sq.sqrt())
}

/// Objective gap at the averaged iterate. Slightly negative values up to the
/// optimum-estimation tolerance can occur for the logistic family.
pub fn objective_gap(theta_bar: &DVector<f64>, objective: &Objective) -> f64 {
    objective.gap(theta_bar)
}

/// Least-squares slope of `log(value)` against `log(t)` over `t` in
/// `[window.0, window.1]`, ignoring nonpositive entries and `t = 0`.
pub fn rate_fit(series: &[(usize, f64)], window: (usize, usize)) -> Option<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *t >= window.0.max(1) && *t <= window.1 && *v > 0.0)
        .map(|(t, v)| ((*t as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{objective, DataSource, ProblemKind, ProblemSpec};
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn flat_weights_give_the_arithmetic_mean() {
        let thetas = vec![dv(&[1.0, 2.0]), dv(&[3.0, 4.0])];
        let avg = average_theta(&thetas, &dv(&[1.0, 1.0]));
        assert_eq!(avg, dv(&[2.0, 3.0]));
    }

    #[test]
    fn weighted_average_of_identical_states_is_that_state() {
        let c = dv(&[0.7, -0.3]);
        let thetas = vec![c.clone(), c.clone(), c.clone()];
        let avg = average_theta(&thetas, &dv(&[0.5, 1.5, 1.0]));
        assert!((avg - c).amax() <= 1e-15);
    }

    #[test]
    fn weighted_average_hand_example() {
        let thetas = vec![dv(&[2.0]), dv(&[0.0]), dv(&[1.0])];
        let avg = average_theta(&thetas, &dv(&[0.5, 1.5, 1.0]));
        assert_relative_eq!(avg[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn consensus_errors_vanish_exactly_at_consensus() {
        let thetas = vec![dv(&[1.0, 1.0]); 3];
        let psi_bar = dv(&[0.5, -0.5]);
        let v = dv(&[0.5, 1.5, 1.0]);
        let psis: Vec<DVector<f64>> = (0..3).map(|i| &psi_bar * v[i]).collect();
        // v sums to m, so mean(psi) = psi_bar and psi_i = v_i psi_bar exactly.
        let (ct, cp) = consensus_errors(&thetas, &psis, &dv(&[1.0, 1.0, 1.0]), &v);
        assert_relative_eq!(ct, 0.0, epsilon = 1e-15);
        assert_relative_eq!(cp, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_deviation_splits_across_the_mean() {
        let base = dv(&[0.0, 0.0]);
        let off = dv(&[1.0, 0.0]);
        let thetas = vec![off, base.clone()];
        let ones = dv(&[1.0, 1.0]);
        let psis = vec![base.clone(), base];
        let (ct, _) = consensus_errors(&thetas, &psis, &ones, &ones);
        // theta_bar = e1/2, deviations are +-e1/2.
        assert_relative_eq!(ct, (0.25f64 + 0.25).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn consensus_error_is_homogeneous() {
        let thetas = vec![dv(&[1.0, -2.0]), dv(&[0.5, 3.0])];
        let ones = dv(&[1.0, 1.0]);
        let zeros = vec![dv(&[0.0, 0.0]); 2];
        let (ct, _) = consensus_errors(&thetas, &zeros, &ones, &ones);
        let scaled: Vec<DVector<f64>> = thetas.iter().map(|t| t * -3.0).collect();
        let (ct_scaled, _) = consensus_errors(&scaled, &zeros, &ones, &ones);
        assert_relative_eq!(ct_scaled, 3.0 * ct, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_gap_examples() {
        let spec = ProblemSpec {
            kind: ProblemKind::Quadratic,
            dimension: 2,
            batch: 1,
            source: DataSource::QuadraticStream {
                centers: vec![dv(&[0.0, 0.0]), dv(&[2.0, 0.0])],
                noise_std: 0.0,
            },
            quad_grad_l1_bound: Some(10.0),
            heldout: None,
        };
        let obj = objective(&spec, None).unwrap();
        assert_relative_eq!(objective_gap(&dv(&[1.0, 0.0]), &obj), 0.0, epsilon = 1e-15);
        let h = 0.2;
        assert_relative_eq!(
            objective_gap(&dv(&[1.0 + h, 0.0]), &obj),
            h * h / 2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn rate_fit_recovers_synthetic_slopes() {
        let series: Vec<(usize, f64)> = (1..=4000).map(|t| (t, 3.7 / t as f64)).collect();
        let slope = rate_fit(&series, (100, 4000)).unwrap();
        assert!((slope + 1.0).abs() <= 1e-6, "slope {slope}");

        let series: Vec<(usize, f64)> =
            (1..=4000).map(|t| (t, 2.0 / (t as f64).powf(0.29))).collect();
        let slope = rate_fit(&series, (100, 4000)).unwrap();
        assert!((slope + 0.29).abs() <= 1e-6, "slope {slope}");
    }

    #[test]
    fn rate_fit_ignores_zeros_and_degenerate_windows() {
        let mut series: Vec<(usize, f64)> = (1..=100).map(|t| (t, 1.0 / t as f64)).collect();
        series.push((50, 0.0));
        assert!(rate_fit(&series, (1, 100)).is_some());
        assert!(rate_fit(&series, (101, 200)).is_none());
    }
}
