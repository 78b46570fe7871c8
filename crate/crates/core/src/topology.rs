//! Directed-graph weight matrices and their spectral quantities.
//!
//! The algorithm mixes decision variables along a matrix `R` with zero row
//! sums and gradient-tracking variables along a matrix `C` with zero column
//! sums. Off-diagonal entries are nonnegative edge weights; diagonals are
//! negative with `1 + R_ii > 0` and `1 + C_ii > 0`. The graph induced by `R`
//! (edge j -> i iff `R_ij > 0`) and the graph induced by `C^T` must each
//! contain a spanning tree, with at least one common root.
//!
//! Under those conditions `I + R` has a unique nonnegative left eigenvector
//! `u` (normalized `u^T 1 = m`) and `I + C` a unique nonnegative right
//! eigenvector `v` (normalized `1^T v = m`). Agents estimate `u` online by
//! iterating `z_{t+1} = (I+R) z_t` from standard basis vectors; the scaled
//! diagonal `m [z_t^i]_i` converges to `u_i` geometrically, and
//! [`estimate_geometric_constants`] fits an explicit envelope
//! `|1/(m [z_t^i]_i) - 1/u_i| <= C_z P_z^t` to the observed trajectory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Structural-sum tolerance (row/column sums).
pub const SUM_TOL: f64 = 1e-12;
/// Eigen-residual tolerance.
pub const EIGEN_TOL: f64 = 1e-10;
/// Observed z-errors below this are indistinguishable from rounding noise
/// and are excluded from the geometric fit.
const ERROR_FLOOR: f64 = 1e-14;

/// The pair of mixing matrices driving a run.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrices {
    r: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl WeightMatrices {
    /// Wrap matrices after shape checks. Value-level conditions are reported
    /// by [`validate`], not here.
    pub fn new(r: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != r.ncols() || c.nrows() != c.ncols() {
            return Err(Error::structural(format!(
                "weight matrices must be square, got {}x{} and {}x{}",
                r.nrows(),
                r.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if r.nrows() != c.nrows() {
            return Err(Error::structural(format!(
                "R and C must have equal dimension, got {} and {}",
                r.nrows(),
                c.nrows()
            )));
        }
        if r.nrows() < 2 {
            return Err(Error::structural("need at least two agents".to_string()));
        }
        Ok(Self { r, c })
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Symmetric two-agent exchange; the smallest valid example.
    pub fn symmetric_pair() -> Self {
        let r = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        Self { c: r.clone(), r }
    }

    /// Directed ring on `m` agents: agent i pulls from its predecessor with
    /// weight `w` in both graphs.
    pub fn ring(m: usize, w: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::structural("ring needs at least two agents"));
        }
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::invalid(format!("ring weight must be in (0,1), got {w}")));
        }
        let mut r = DMatrix::zeros(m, m);
        for i in 0..m {
            let j = (i + m - 1) % m;
            r[(i, j)] = w;
            r[(i, i)] = -w;
        }
        Ok(Self { c: r.clone(), r })
    }

    /// Three-agent cycle with unequal weights; its left eigenvector is
    /// (0.5, 1.5, 1.0), making it a useful non-doubly-stochastic fixture.
    pub fn three_node() -> Self {
        let r = DMatrix::from_row_slice(3, 3, &[-0.6, 0.6, 0.0, 0.0, -0.2, 0.2, 0.3, 0.0, -0.3]);
        let c = r.transpose();
        Self { r, c }
    }
}

/// Identifier of a validation condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    OffDiagonalSign,
    DiagonalSign,
    DiagonalRange,
    RowSum,
    ColumnSum,
    SpanningTreeR,
    SpanningTreeCt,
    CommonRoot,
}

impl Condition {
    /// Stable identifier used in reports.
    pub fn id(self) -> &'static str {
        match self {
            Condition::OffDiagonalSign => "off-diagonal-sign",
            Condition::DiagonalSign => "diagonal-sign",
            Condition::DiagonalRange => "diagonal-range",
            Condition::RowSum => "row-sum",
            Condition::ColumnSum => "column-sum",
            Condition::SpanningTreeR => "spanning-tree-r",
            Condition::SpanningTreeCt => "spanning-tree-ct",
            Condition::CommonRoot => "common-root",
        }
    }
}

/// One failed condition with human-readable detail.
#[derive(Debug, Clone)]
pub struct ConditionFailure {
    pub condition: Condition,
    pub detail: String,
}

/// Outcome of [`validate`]: empty failure list means the matrices are
/// admissible.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub failures: Vec<ConditionFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn has(&self, c: Condition) -> bool {
        self.failures.iter().any(|f| f.condition == c)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            writeln!(f, "topology: all conditions satisfied")
        } else {
            writeln!(f, "topology: {} condition(s) failed", self.failures.len())?;
            for fail in &self.failures {
                writeln!(f, "  [{}] {}", fail.condition.id(), fail.detail)?;
            }
            Ok(())
        }
    }
}

fn push(report: &mut ValidationReport, condition: Condition, detail: String) {
    report.failures.push(ConditionFailure { condition, detail });
}

/// Reachability from `root` along edges `from -> to` given by `adj[from]`.
fn reaches_all(adj: &[Vec<usize>], root: usize) -> bool {
    let m = adj.len();
    let mut seen = vec![false; m];
    let mut stack = vec![root];
    seen[root] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == m
}

/// Roots of spanning trees in the graph with edge j -> i iff `edge(i, j)`.
fn spanning_roots(m: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    // adj[j] lists i with an edge j -> i.
    let mut adj = vec![Vec::new(); m];
    for i in 0..m {
        for j in 0..m {
            if i != j && edge(i, j) {
                adj[j].push(i);
            }
        }
    }
    (0..m).filter(|&r| reaches_all(&adj, r)).collect()
}

/// Check every admissibility condition and report the failures.
pub fn validate(w: &WeightMatrices) -> ValidationReport {
    let m = w.m();
    let mut report = ValidationReport::default();

    for (name, mat) in [("R", &w.r), ("C", &w.c)] {
        for i in 0..m {
            for j in 0..m {
                if i != j && mat[(i, j)] < 0.0 {
                    push(
                        &mut report,
                        Condition::OffDiagonalSign,
                        format!("{name}[{i},{j}] = {} is negative", mat[(i, j)]),
                    );
                }
            }
            if mat[(i, i)] >= 0.0 {
                push(
                    &mut report,
                    Condition::DiagonalSign,
                    format!("{name}[{i},{i}] = {} is not negative", mat[(i, i)]),
                );
            }
            if 1.0 + mat[(i, i)] <= 0.0 {
                push(
                    &mut report,
                    Condition::DiagonalRange,
                    format!("1 + {name}[{i},{i}] = {} is not positive", 1.0 + mat[(i, i)]),
                );
            }
        }
    }

    for i in 0..m {
        let row_sum: f64 = w.r.row(i).iter().sum();
        if row_sum.abs() > SUM_TOL {
            push(
                &mut report,
                Condition::RowSum,
                format!("row {i} of R sums to {row_sum:.3e}"),
            );
        }
        let col_sum: f64 = w.c.column(i).iter().sum();
        if col_sum.abs() > SUM_TOL {
            push(
                &mut report,
                Condition::ColumnSum,
                format!("column {i} of C sums to {col_sum:.3e}"),
            );
        }
    }

    let roots_r = spanning_roots(m, |i, j| w.r[(i, j)] > 0.0);
    // G_{C^T} has edge j -> i iff (C^T)_ij > 0, i.e. C_ji > 0.
    let roots_ct = spanning_roots(m, |i, j| w.c[(j, i)] > 0.0);
    if roots_r.is_empty() {
        push(
            &mut report,
            Condition::SpanningTreeR,
            "graph induced by R contains no spanning tree".to_string(),
        );
    }
    if roots_ct.is_empty() {
        push(
            &mut report,
            Condition::SpanningTreeCt,
            "graph induced by C^T contains no spanning tree".to_string(),
        );
    }
    if !roots_r.is_empty() && !roots_ct.is_empty() {
        let common = roots_r.iter().any(|r| roots_ct.contains(r));
        if !common {
            push(
                &mut report,
                Condition::CommonRoot,
                format!("no common spanning-tree root (R roots {roots_r:?}, C^T roots {roots_ct:?})"),
            );
        }
    }

    report
}

/// Solve `kernel * x = 0` subject to `1^T x = m` as a stacked least-squares
/// system. The kernel has rank m-1 for admissible matrices, so the solution
/// is unique.
fn solve_stationary(kernel: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = kernel.nrows();
    let mut stacked = DMatrix::zeros(m + 1, m);
    stacked.view_mut((0, 0), (m, m)).copy_from(kernel);
    for j in 0..m {
        stacked[(m, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = m as f64;

    let svd = stacked
        .try_svd(true, true, f64::EPSILON, 1024)
        .ok_or_else(|| Error::Numerical {
            reason: "SVD for stationary vector did not converge".to_string(),
            residual: f64::NAN,
        })?;
    let x = svd.solve(&rhs, 1e-13).map_err(|e| Error::Numerical {
        reason: format!("stationary solve failed: {e}"),
        residual: f64::NAN,
    })?;
    let x = DVector::from_column_slice(x.as_slice());

    let residual = (kernel * &x).amax();
    if residual > EIGEN_TOL {
        return Err(Error::Numerical {
            reason: "stationary vector residual exceeds tolerance".to_string(),
            residual,
        });
    }
    let min = x.min();
    if min < -EIGEN_TOL {
        return Err(Error::Numerical {
            reason: "stationary vector has a negative entry".to_string(),
            residual: -min,
        });
    }
    // Tiny negative rounding noise is clamped to keep the sign invariant.
    Ok(x.map(|v| v.max(0.0)))
}

/// Left eigenvector `u` of `I + R` with `u^T (I+R) = u^T`, `u^T 1 = m`,
/// `u >= 0`. Equivalent to the kernel of `R^T` under that normalization.
pub fn left_eigenvector(r: &DMatrix<f64>) -> Result<DVector<f64>> {
    solve_stationary(&r.transpose())
}

/// Right eigenvector `v` of `I + C` with `(I+C) v = v`, `1^T v = m`,
/// `v >= 0`. Equivalent to the kernel of `C` under that normalization.
pub fn right_eigenvector(c: &DMatrix<f64>) -> Result<DVector<f64>> {
    solve_stationary(c)
}

/// The stationary vectors of both mixing matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    /// Left eigenvector of `I + R`, normalized to sum to m.
    pub u: DVector<f64>,
    /// Right eigenvector of `I + C`, normalized to sum to m.
    pub v: DVector<f64>,
}

/// Compute both stationary vectors of an admissible pair.
pub fn eigen_pair(w: &WeightMatrices) -> Result<EigenPair> {
    Ok(EigenPair {
        u: left_eigenvector(w.r())?,
        v: right_eigenvector(w.c())?,
    })
}

/// One step of the eigenvector-estimation iteration, written exactly as each
/// agent computes it: `z' = z_i + sum_j R_ij (z_j - z_i)`. The engine reuses
/// this function so simulated trajectories match the fit bit for bit.
pub fn z_step(r: &DMatrix<f64>, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let m = z.len();
    let mut next = Vec::with_capacity(m);
    for i in 0..m {
        let mut zi = z[i].clone();
        for j in 0..m {
            if j != i {
                let w = r[(i, j)];
                if w != 0.0 {
                    zi += w * (&z[j] - &z[i]);
                }
            }
        }
        next.push(zi);
    }
    next
}

/// Geometric envelope fitted to the eigenvector-estimation error.
#[derive(Debug, Clone)]
pub struct GeometricFit {
    /// Envelope amplitude; zero when the iteration is exact from the start.
    pub c_z: f64,
    /// Geometric rate in (0, 1).
    pub p_z: f64,
    /// Requested horizon.
    pub horizon: usize,
    /// Rounds actually used for the fit (the error series is cut where it
    /// reaches rounding noise).
    pub fitted_rounds: usize,
    /// Observed error series `e_t = max_i |1/(m [z_t^i]_i) - 1/u_i|`.
    pub observed: Vec<f64>,
}

impl GeometricFit {
    /// Envelope value at round `t`.
    pub fn envelope(&self, t: usize) -> f64 {
        self.c_z * self.p_z.powi(t as i32)
    }
}

/// Spectral-radius estimate of `(I + R) - 1 u^T / m` via norm growth of
/// repeated products; used when consecutive error ratios are degenerate.
fn spectral_radius_estimate(r: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let m = r.nrows();
    let mut mat = DMatrix::identity(m, m) + r;
    for i in 0..m {
        for j in 0..m {
            mat[(i, j)] -= u[j] / m as f64;
        }
    }
    let mut x = DVector::from_iterator(m, (0..m).map(|i| 1.0 + (i as f64 + 1.0).sqrt()));
    x /= x.norm();
    let mut log_sum = 0.0;
    let mut steps = 0usize;
    let total = 400usize;
    let burn_in = 100usize;
    for k in 0..total {
        x = &mat * x;
        let n = x.norm();
        if n == 0.0 {
            return 0.0;
        }
        if k >= burn_in {
            log_sum += n.ln();
            steps += 1;
        }
        x /= n;
    }
    (log_sum / steps as f64).exp()
}

/// Run the z-iteration from basis vectors and fit the smallest geometric
/// envelope dominating the observed error series.
pub fn estimate_geometric_constants(w: &WeightMatrices, horizon: usize) -> Result<GeometricFit> {
    if horizon < 10 {
        return Err(Error::invalid(format!("fit horizon must be >= 10, got {horizon}")));
    }
    let report = validate(w);
    if !report.passed() {
        return Err(Error::structural(format!("invalid weight matrices: {report}")));
    }
    let m = w.m();
    let u = left_eigenvector(w.r())?;

    let mut z: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect();

    let mut observed = Vec::with_capacity(horizon + 1);
    let mut ever_positive = vec![false; m];
    for t in 0..=horizon {
        let mut e_t: f64 = 0.0;
        let mut any = false;
        for i in 0..m {
            let diag = z[i][i];
            if diag > 0.0 {
                ever_positive[i] = true;
                any = true;
                e_t = e_t.max((1.0 / (m as f64 * diag) - 1.0 / u[i]).abs());
            }
        }
        if any {
            observed.push(e_t);
        } else {
            observed.push(f64::NAN);
        }
        if t < horizon {
            z = z_step(w.r(), &z);
        }
    }
    if let Some(i) = ever_positive.iter().position(|&p| !p) {
        return Err(Error::structural(format!(
            "agent {i} never had a positive own-entry in z by round {horizon}"
        )));
    }

    // Fit on the prefix above rounding noise.
    let cut = observed
        .iter()
        .position(|&e| e.is_nan() || e <= ERROR_FLOOR)
        .unwrap_or(observed.len());
    let fit: Vec<f64> = observed[..cut].to_vec();

    let mut p_z = None;
    if fit.len() >= 2 {
        let tail_start = fit.len() / 2;
        let mut max_ratio: f64 = 0.0;
        let mut any = false;
        for t in tail_start..fit.len() - 1 {
            if fit[t] > 0.0 && fit[t + 1] > 0.0 {
                max_ratio = max_ratio.max(fit[t + 1] / fit[t]);
                any = true;
            }
        }
        if any && max_ratio > 0.0 && max_ratio < 1.0 {
            p_z = Some(max_ratio);
        }
    }
    let p_z = p_z
        .unwrap_or_else(|| spectral_radius_estimate(w.r(), &u))
        .clamp(1e-6, 1.0 - 1e-9);

    let mut c_z: f64 = 0.0;
    for (t, &e) in fit.iter().enumerate() {
        if e > 0.0 {
            c_z = c_z.max(e / p_z.powi(t as i32));
        }
    }

    Ok(GeometricFit {
        c_z,
        p_z,
        horizon,
        fitted_rounds: cut,
        observed,
    })
}
