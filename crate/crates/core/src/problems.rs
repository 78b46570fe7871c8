//! Online data streams and loss/gradient oracles.
//!
//! Two problem families are supported: binary logistic regression over a
//! fixed corpus sampled with replacement, and a synthetic quadratic with a
//! known optimum where each agent tracks its own noisy target. The online
//! objective at round t is the running average of per-round batch losses
//! over all data acquired so far, so gradients are recomputed over the full
//! stored history at the current iterate each round.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{round_stream, Domain};

/// One sample: features plus either a binary label or a target vector.
#[derive(Debug, Clone, PartialEq)]
pub enum DataPoint {
    /// Logistic sample with label in {-1, +1}.
    Classified { features: DVector<f64>, label: f64 },
    /// Quadratic sample: the target the agent should track.
    Target(DVector<f64>),
}

impl DataPoint {
    pub fn dim(&self) -> usize {
        match self {
            DataPoint::Classified { features, .. } => features.len(),
            DataPoint::Target(t) => t.len(),
        }
    }
}

/// Problem family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Logistic,
    Quadratic,
}

/// Append-only per-agent history of acquired batches; index k holds exactly
/// the batch acquired at round k.
#[derive(Debug, Clone, Default)]
pub struct OnlineDataset {
    rounds: Vec<Vec<DataPoint>>,
    capacity: Option<usize>,
    dropped: usize,
}

impl OnlineDataset {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            rounds: Vec::new(),
            capacity,
            dropped: 0,
        }
    }

    pub fn push_round(&mut self, batch: Vec<DataPoint>) {
        self.rounds.push(batch);
        if let Some(cap) = self.capacity {
            while self.rounds.len() > cap {
                self.rounds.remove(0);
                self.dropped += 1;
            }
        }
    }

    /// Total rounds ever appended, including any dropped by the cap.
    pub fn total_rounds(&self) -> usize {
        self.dropped + self.rounds.len()
    }

    pub fn stored(&self) -> &[Vec<DataPoint>] {
        &self.rounds
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-margin)), computed stably.
fn softplus_neg(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// Loss of a single sample at `theta`.
pub fn loss(kind: ProblemKind, theta: &DVector<f64>, x: &DataPoint) -> Result<f64> {
    match (kind, x) {
        (ProblemKind::Logistic, DataPoint::Classified { features, label }) => {
            Ok(softplus_neg(label * features.dot(theta)))
        }
        (ProblemKind::Quadratic, DataPoint::Target(target)) => {
            let diff = theta - target;
            Ok(0.5 * diff.norm_squared())
        }
        _ => Err(Error::invalid("data point does not match problem kind".to_string())),
    }
}

/// Gradient of a single sample's loss at `theta`.
pub fn loss_gradient(kind: ProblemKind, theta: &DVector<f64>, x: &DataPoint) -> Result<DVector<f64>> {
    match (kind, x) {
        (ProblemKind::Logistic, DataPoint::Classified { features, label }) => {
            let s = sigmoid(-label * features.dot(theta));
            Ok(features * (-label * s))
        }
        (ProblemKind::Quadratic, DataPoint::Target(target)) => Ok(theta - target),
        _ => Err(Error::invalid("data point does not match problem kind".to_string())),
    }
}

/// Batch-averaged gradient of one round's samples.
pub fn batch_gradient(kind: ProblemKind, theta: &DVector<f64>, batch: &[DataPoint]) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let mut g = DVector::zeros(theta.len());
    for x in batch {
        g += loss_gradient(kind, theta, x)?;
    }
    Ok(g / batch.len() as f64)
}

/// Gradient of the online empirical risk at round `t`: the average over
/// rounds 0..=t of batch gradients, all evaluated at the current iterate,
/// summed in ascending round order.
pub fn online_gradient(
    kind: ProblemKind,
    ds: &OnlineDataset,
    theta: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    if ds.total_rounds() != t + 1 {
        return Err(Error::state(format!(
            "dataset holds {} rounds but the gradient at round {t} needs {}",
            ds.total_rounds(),
            t + 1
        )));
    }
    let mut g = DVector::zeros(theta.len());
    for batch in ds.stored() {
        g += batch_gradient(kind, theta, batch)?;
    }
    Ok(g / ds.stored().len() as f64)
}

/// A fixed collection of samples from which agents draw with replacement.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub points: Vec<DataPoint>,
    pub kind: ProblemKind,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Hash of the raw sample bytes; used to key the cached optimum.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.points {
            match p {
                DataPoint::Classified { features, label } => {
                    1u8.hash(&mut h);
                    label.to_bits().hash(&mut h);
                    for v in features.iter() {
                        v.to_bits().hash(&mut h);
                    }
                }
                DataPoint::Target(t) => {
                    2u8.hash(&mut h);
                    for v in t.iter() {
                        v.to_bits().hash(&mut h);
                    }
                }
            }
        }
        h.finish()
    }
}

/// Where each agent's samples come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Uniform-with-replacement draws from a shared corpus.
    Corpus(Corpus),
    /// Per-agent targets `center_i + noise_std * N(0, I)`, streamed fresh.
    QuadraticStream {
        centers: Vec<DVector<f64>>,
        noise_std: f64,
    },
}

/// A fully specified problem: family, dimension, source and batch size.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dimension: usize,
    pub batch: usize,
    pub source: DataSource,
    /// Gradient l1 bound for the quadratic family, which has no corpus to
    /// derive one from; valid only on the region the iterates visit.
    pub quad_grad_l1_bound: Option<f64>,
    /// Held-out samples for accuracy evaluation (logistic only).
    pub heldout: Option<Corpus>,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::config("problem dimension must be >= 1".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be >= 1".to_string()));
        }
        match (&self.kind, &self.source) {
            (ProblemKind::Logistic, DataSource::Corpus(c)) => {
                if c.is_empty() {
                    return Err(Error::config("corpus is empty".to_string()));
                }
            }
            (ProblemKind::Quadratic, DataSource::QuadraticStream { centers, noise_std }) => {
                if centers.is_empty() {
                    return Err(Error::config("quadratic problem needs per-agent centers".to_string()));
                }
                if centers.iter().any(|c| c.len() != self.dimension) {
                    return Err(Error::config("center dimension mismatch".to_string()));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return Err(Error::config("noise_std must be a nonnegative number".to_string()));
                }
            }
            _ => return Err(Error::config("problem kind does not match data source".to_string())),
        }
        Ok(())
    }

    /// Draw the round-`t` batch for `agent`; deterministic in
    /// (seed, agent, t) and independent of call order.
    pub fn draw(&self, seed: u64, agent: usize, t: usize) -> Result<Vec<DataPoint>> {
        let mut rng = round_stream(seed, Domain::Data, agent, t);
        self.draw_with(&mut rng, agent)
    }

    /// Draw one batch from an explicit stream (used for audit replacements).
    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R, agent: usize) -> Result<Vec<DataPoint>> {
        let mut batch = Vec::with_capacity(self.batch);
        match &self.source {
            DataSource::Corpus(corpus) => {
                if corpus.is_empty() {
                    return Err(Error::config("corpus is empty".to_string()));
                }
                for _ in 0..self.batch {
                    let k = rng.random_range(0..corpus.len());
                    batch.push(corpus.points[k].clone());
                }
            }
            DataSource::QuadraticStream { centers, noise_std } => {
                let center = centers
                    .get(agent)
                    .ok_or_else(|| Error::config(format!("no center for agent {agent}")))?;
                for _ in 0..self.batch {
                    let noise = DVector::from_iterator(
                        self.dimension,
                        (0..self.dimension).map(|_| rng.sample::<f64, _>(StandardNormal)),
                    );
                    batch.push(DataPoint::Target(center + noise * *noise_std));
                }
            }
        }
        Ok(batch)
    }

    /// Uniform l1 bound on single-sample gradients. For logistic losses the
    /// sigmoid factor is below one, so `max ||a||_1` over the corpus bounds
    /// every gradient; the quadratic bound must be user-supplied.
    pub fn grad_l1_bound(&self) -> Result<f64> {
        match (&self.kind, &self.source) {
            (ProblemKind::Logistic, DataSource::Corpus(corpus)) => {
                if corpus.is_empty() {
                    return Err(Error::config("corpus is empty".to_string()));
                }
                Ok(corpus
                    .points
                    .iter()
                    .map(|p| match p {
                        DataPoint::Classified { features, .. } => features.iter().map(|v| v.abs()).sum(),
                        DataPoint::Target(_) => 0.0,
                    })
                    .fold(0.0f64, f64::max))
            }
            (ProblemKind::Quadratic, _) => self.quad_grad_l1_bound.ok_or_else(|| {
                Error::config(
                    "the quadratic gradient is unbounded globally; supply grad_l1_bound \
                     (valid only on the iterate region)"
                        .to_string(),
                )
            }),
            _ => Err(Error::config("problem kind does not match data source".to_string())),
        }
    }

    /// Smoothness constant of the per-sample loss: `max ||a||^2 / 4` for
    /// logistic, 1 for the quadratic.
    pub fn lipschitz_estimate(&self) -> f64 {
        match (&self.kind, &self.source) {
            (ProblemKind::Logistic, DataSource::Corpus(corpus)) => corpus
                .points
                .iter()
                .map(|p| match p {
                    DataPoint::Classified { features, .. } => features.norm_squared() / 4.0,
                    DataPoint::Target(_) => 0.0,
                })
                .fold(0.0f64, f64::max),
            _ => 1.0,
        }
    }
}

/// Population objective and its optimum.
///
/// For the corpus-backed logistic problem the sampling distribution is the
/// uniform law on the corpus, so the population objective is the full-corpus
/// average loss and the optimum comes from [`solve_logistic_optimum`]. The
/// quadratic objective has the closed-form optimum at the mean center.
#[derive(Debug, Clone)]
pub struct Objective {
    pub kind: ProblemKind,
    pub f_star: f64,
    pub theta_star: DVector<f64>,
    corpus_matrix: Option<DMatrix<f64>>,
    quadratic: Option<(DVector<f64>, f64)>, // (mean center, constant term)
}

impl Objective {
    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        if let Some(signed) = &self.corpus_matrix {
            let margins = signed * theta;
            margins.iter().map(|&m| softplus_neg(m)).sum::<f64>() / margins.len() as f64
        } else {
            let (mean, constant) = self.quadratic.as_ref().expect("objective state");
            0.5 * (theta - mean).norm_squared() + constant
        }
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        if let Some(signed) = &self.corpus_matrix {
            let margins = signed * theta;
            let weights =
                DVector::from_iterator(margins.len(), margins.iter().map(|&m| -sigmoid(-m)));
            signed.transpose() * weights / margins.len() as f64
        } else {
            let (mean, _) = self.quadratic.as_ref().expect("objective state");
            theta - mean
        }
    }

    pub fn gap(&self, theta: &DVector<f64>) -> f64 {
        self.value(theta) - self.f_star
    }
}

/// Result of the offline full-gradient descent used to pin the logistic
/// optimum.
#[derive(Debug, Clone)]
pub struct LogisticOptimum {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub corpus_fingerprint: u64,
}

/// Deterministic full-gradient descent on the corpus objective, run until
/// the gradient norm reaches `tol` or the iteration cap. On separable data
/// the optimum is an infimum, so the cap applies and the returned value is
/// an estimate from above.
pub fn solve_logistic_optimum(corpus: &Corpus, tol: f64, max_iters: usize) -> Result<LogisticOptimum> {
    if corpus.is_empty() {
        return Err(Error::config("corpus is empty".to_string()));
    }
    let d = corpus.points[0].dim();
    let n = corpus.len();
    let mut signed = DMatrix::zeros(n, d);
    for (row, p) in corpus.points.iter().enumerate() {
        match p {
            DataPoint::Classified { features, label } => {
                for col in 0..d {
                    signed[(row, col)] = label * features[col];
                }
            }
            DataPoint::Target(_) => {
                return Err(Error::invalid("logistic optimum needs classified samples".to_string()))
            }
        }
    }
    // Smoothness of the average loss is at most max ||a||^2 / 4.
    let lip = (0..n)
        .map(|r| signed.row(r).norm_squared() / 4.0)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;

    let mut theta = DVector::zeros(d);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    for k in 0..max_iters {
        let margins = &signed * &theta;
        let weights = DVector::from_iterator(n, margins.iter().map(|&m| -sigmoid(-m)));
        let grad = signed.transpose() * weights / n as f64;
        grad_norm = grad.norm();
        iterations = k;
        if grad_norm <= tol {
            break;
        }
        theta -= grad * step;
    }
    let margins = &signed * &theta;
    let value = margins.iter().map(|&m| softplus_neg(m)).sum::<f64>() / n as f64;
    Ok(LogisticOptimum {
        theta,
        value,
        grad_norm,
        iterations,
        corpus_fingerprint: corpus.fingerprint(),
    })
}

/// Build the population objective for a problem, reusing a cached logistic
/// optimum when its fingerprint still matches.
pub fn objective(spec: &ProblemSpec, cached: Option<&LogisticOptimum>) -> Result<Objective> {
    match (&spec.kind, &spec.source) {
        (ProblemKind::Logistic, DataSource::Corpus(corpus)) => {
            let opt = match cached {
                Some(c) if c.corpus_fingerprint == corpus.fingerprint() => c.clone(),
                _ => solve_logistic_optimum(corpus, 1e-10, 100_000)?,
            };
            let d = corpus.points[0].dim();
            let n = corpus.len();
            let mut signed = DMatrix::zeros(n, d);
            for (row, p) in corpus.points.iter().enumerate() {
                if let DataPoint::Classified { features, label } = p {
                    for col in 0..d {
                        signed[(row, col)] = label * features[col];
                    }
                }
            }
            Ok(Objective {
                kind: ProblemKind::Logistic,
                f_star: opt.value,
                theta_star: opt.theta,
                corpus_matrix: Some(signed),
                quadratic: None,
            })
        }
        (ProblemKind::Quadratic, DataSource::QuadraticStream { centers, noise_std }) => {
            let m = centers.len() as f64;
            let mut mean = DVector::zeros(spec.dimension);
            for c in centers {
                mean += c;
            }
            mean /= m;
            let spread: f64 = centers.iter().map(|c| (c - &mean).norm_squared()).sum::<f64>() / m;
            let constant = 0.5 * spread + 0.5 * noise_std * noise_std * spec.dimension as f64;
            Ok(Objective {
                kind: ProblemKind::Quadratic,
                f_star: constant,
                theta_star: mean.clone(),
                corpus_matrix: None,
                quadratic: Some((mean, constant)),
            })
        }
        _ => Err(Error::config("problem kind does not match data source".to_string())),
    }
}

/// Fraction of held-out samples classified correctly by `sign(a^T theta)`.
pub fn accuracy(theta: &DVector<f64>, heldout: &Corpus) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::config("held-out corpus is empty".to_string()));
    }
    let mut correct = 0usize;
    for p in &heldout.points {
        match p {
            DataPoint::Classified { features, label } => {
                let predicted = if features.dot(theta) >= 0.0 { 1.0 } else { -1.0 };
                if predicted == *label {
                    correct += 1;
                }
            }
            DataPoint::Target(_) => {
                return Err(Error::invalid("accuracy needs classified samples".to_string()))
            }
        }
    }
    Ok(correct as f64 / heldout.len() as f64)
}

/// Generate a train/held-out pair of linearly separable corpora sharing one
/// planted direction `w`: Gaussian features (standard deviation
/// `feature_scale` per coordinate) adjusted so every sample satisfies
/// `label * (w^T a) >= margin`.
pub fn synthetic_separable_split(
    seed: u64,
    train_points: usize,
    test_points: usize,
    dimension: usize,
    margin: f64,
    feature_scale: f64,
) -> (Corpus, Corpus) {
    let mut rng = round_stream(seed, Domain::Corpus, 0, 0);
    let mut w = DVector::from_iterator(
        dimension,
        (0..dimension).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    if w.norm() == 0.0 {
        w[0] = 1.0;
    }
    w /= w.norm();

    let mut draw = |points: usize| -> Corpus {
        let mut out = Vec::with_capacity(points);
        for _ in 0..points {
            let mut a = DVector::from_iterator(
                dimension,
                (0..dimension).map(|_| feature_scale * rng.sample::<f64, _>(StandardNormal)),
            );
            let label: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let proj = w.dot(&a);
            // Reflect to the labeled side, then push out to the margin.
            if label * proj < 0.0 {
                a -= &w * (2.0 * proj);
            }
            let proj = w.dot(&a);
            if label * proj < margin {
                a += &w * (label * (margin - label * proj));
            }
            out.push(DataPoint::Classified { features: a, label });
        }
        Corpus {
            points: out,
            kind: ProblemKind::Logistic,
        }
    };
    let train = draw(train_points);
    let test = draw(test_points);
    (train, test)
}

/// [`synthetic_separable_split`] without a held-out set.
pub fn synthetic_separable_scaled(
    seed: u64,
    points: usize,
    dimension: usize,
    margin: f64,
    feature_scale: f64,
) -> Corpus {
    synthetic_separable_split(seed, points, 0, dimension, margin, feature_scale).0
}

/// [`synthetic_separable_scaled`] with unit feature scale.
pub fn synthetic_separable(seed: u64, points: usize, dimension: usize, margin: f64) -> Corpus {
    synthetic_separable_scaled(seed, points, dimension, margin, 1.0)
}

/// Load a corpus from header-less delimited text: first column the label,
/// remaining columns the features. Labels are normalized to {-1, +1}; ragged
/// rows are rejected.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|ch: char| ch == ',' || ch == '\t' || ch.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 2 {
            return Err(Error::config(format!(
                "{}:{}: expected a label and at least one feature",
                path.display(),
                lineno + 1
            )));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::config(format!(
                    "{}:{}: ragged row ({} fields, expected {w})",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )))
            }
            _ => {}
        }
        let raw_label: f64 = fields[0].parse().map_err(|_| {
            Error::config(format!("{}:{}: bad label {:?}", path.display(), lineno + 1, fields[0]))
        })?;
        let label = if raw_label > 0.0 { 1.0 } else { -1.0 };
        let mut features = DVector::zeros(fields.len() - 1);
        for (k, f) in fields[1..].iter().enumerate() {
            features[k] = f.parse().map_err(|_| {
                Error::config(format!("{}:{}: bad feature {:?}", path.display(), lineno + 1, f))
            })?;
        }
        if features.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::config(format!(
                "{}:{}: non-finite feature",
                path.display(),
                lineno + 1
            )));
        }
        points.push(DataPoint::Classified { features, label });
    }
    if points.is_empty() {
        return Err(Error::config(format!("{}: empty corpus", path.display())));
    }
    Ok(Corpus {
        points,
        kind: ProblemKind::Logistic,
    })
}
