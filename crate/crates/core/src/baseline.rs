//! Discriminant-analysis baselines and classification metrics.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;

/// Diagonal ridge added to each QDA class covariance.
pub const QDA_RIDGE: f64 = 1e-6;
pub const PERMUTATION_ITERS: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("covariance is singular")]
    SingularCovariance,
    #[error("both classes must be present")]
    OneClassOnly,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Splits rows by class and checks dimensions.
fn by_class<'a, R: AsRef<[f64]>>(x: &'a [R], y: &[bool]) -> Result<(usize, [Vec<&'a [f64]>; 2]), BaselineError> {
    if x.len() != y.len() {
        return Err(BaselineError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(BaselineError::Empty);
    }
    let d = x[0].as_ref().len();
    let mut classes: [Vec<&[f64]>; 2] = [Vec::new(), Vec::new()];
    for (row, &label) in x.iter().zip(y) {
        let row = row.as_ref();
        if row.len() != d {
            return Err(BaselineError::LengthMismatch(row.len(), d));
        }
        classes[label as usize].push(row);
    }
    if classes.iter().any(|c| c.is_empty()) {
        return Err(BaselineError::OneClassOnly);
    }
    Ok((d, classes))
}

fn mean(rows: &[&[f64]], d: usize) -> DVector<f64> {
    let mut m = DVector::zeros(d);
    for r in rows {
        m += DVector::from_column_slice(r);
    }
    m / rows.len() as f64
}

/// Sum of outer products of centred rows.
fn scatter(rows: &[&[f64]], mu: &DVector<f64>) -> DMatrix<f64> {
    let d = mu.len();
    let mut s = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - mu;
        s.ger(1.0, &c, &c, 1.0);
    }
    s
}

fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, BaselineError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(BaselineError::SingularCovariance);
    }
    let chol = Cholesky::new(m).ok_or(BaselineError::SingularCovariance)?;
    // reject numerically singular factors as well
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo <= hi * 1e-10 {
        return Err(BaselineError::SingularCovariance);
    }
    Ok(chol)
}

/// Solves `m w = b` for symmetric PSD `m` through its eigendecomposition,
/// ignoring directions with (numerically) zero variance. Exactly collinear
/// features therefore share their weight instead of blowing up.
fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, BaselineError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(BaselineError::SingularCovariance);
    }
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    if top <= 0.0 {
        return Err(BaselineError::SingularCovariance);
    }
    let cutoff = top * 1e-10;
    let mut w = DVector::zeros(b.len());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            w += v * (v.dot(b) / lambda);
        }
    }
    Ok(w)
}

/// Binary classifier with a real-valued score; positive means High.
pub trait Classifier {
    fn score(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.0
    }

    fn score_batch<R: AsRef<[f64]> + Sync>(&self, rows: &[R], exec: Exec) -> Vec<f64>
    where
        Self: Sync,
    {
        exec.map(rows, |r| self.score(r.as_ref()))
    }
}

/// Pooled-covariance linear discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub means: [DVector<f64>; 2],
    pub covariance: DMatrix<f64>,
    pub priors: [f64; 2],
    pub shrinkage: f64,
    weights: DVector<f64>,
    bias: f64,
}

pub fn lda_fit<R: AsRef<[f64]>>(x: &[R], y: &[bool], shrinkage: f64) -> Result<LdaModel, BaselineError> {
    let (d, classes) = by_class(x, y)?;
    let n = x.len() as f64;
    let means = [mean(&classes[0], d), mean(&classes[1], d)];
    let mut cov = (scatter(&classes[0], &means[0]) + scatter(&classes[1], &means[1])) / n;
    if shrinkage > 0.0 {
        let mu = cov.trace() / d as f64;
        cov = cov * (1.0 - shrinkage) + DMatrix::identity(d, d) * (shrinkage * mu);
    }
    let priors = [classes[0].len() as f64 / n, classes[1].len() as f64 / n];
    let diff = &means[1] - &means[0];
    let weights = pinv_solve(&cov, &diff)?;
    let mid = (&means[0] + &means[1]) * 0.5;
    let bias = -weights.dot(&mid) + (priors[1] / priors[0]).ln();
    Ok(LdaModel {
        means,
        covariance: cov,
        priors,
        shrinkage,
        weights,
        bias,
    })
}

impl Classifier for LdaModel {
    /// Linear discriminant of High minus Low.
    fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

pub fn lda_score(m: &LdaModel, x: &[f64]) -> f64 {
    m.score(x)
}

pub fn lda_predict(m: &LdaModel, x: &[f64]) -> bool {
    m.predict(x)
}

/// Per-class Gaussian discriminant.
#[derive(Debug, Clone)]
pub struct QdaModel {
    pub means: [DVector<f64>; 2],
    pub covariances: [DMatrix<f64>; 2],
    pub priors: [f64; 2],
    pub ridge: f64,
    chol: [Cholesky<f64, Dyn>; 2],
    // log prior minus half log-determinant, per class
    offsets: [f64; 2],
}

pub fn qda_fit<R: AsRef<[f64]>>(x: &[R], y: &[bool], ridge: f64) -> Result<QdaModel, BaselineError> {
    let (d, classes) = by_class(x, y)?;
    if classes.iter().any(|c| c.len() < 2) {
        return Err(BaselineError::SingularCovariance);
    }
    let n = x.len() as f64;
    let means = [mean(&classes[0], d), mean(&classes[1], d)];
    let cov =
        |c: usize| scatter(&classes[c], &means[c]) / (classes[c].len() - 1) as f64 + DMatrix::identity(d, d) * ridge;
    let covariances = [cov(0), cov(1)];
    let chol = [cholesky(covariances[0].clone())?, cholesky(covariances[1].clone())?];
    let priors = [classes[0].len() as f64 / n, classes[1].len() as f64 / n];
    let offset = |c: usize| {
        let logdet: f64 = chol[c].l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        priors[c].ln() - 0.5 * logdet
    };
    let offsets = [offset(0), offset(1)];
    Ok(QdaModel {
        means,
        covariances,
        priors,
        ridge,
        chol,
        offsets,
    })
}

impl QdaModel {
    fn log_posterior(&self, c: usize, x: &DVector<f64>) -> f64 {
        let diff = x - &self.means[c];
        let z = self.chol[c]
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("factor is invertible");
        self.offsets[c] - 0.5 * z.norm_squared()
    }
}

impl Classifier for QdaModel {
    /// Log-posterior difference, High minus Low.
    fn score(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        self.log_posterior(1, &x) - self.log_posterior(0, &x)
    }
}

pub fn qda_score(m: &QdaModel, x: &[f64]) -> f64 {
    m.score(x)
}

pub fn qda_predict(m: &QdaModel, x: &[f64]) -> bool {
    m.predict(x)
}

/// Binary confusion counts with High as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Result<Self, BaselineError> {
        if pred.len() != truth.len() {
            return Err(BaselineError::LengthMismatch(pred.len(), truth.len()));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn mcc(&self) -> f64 {
        mcc(self.tp, self.fp, self.tn, self.fn_)
    }
}

pub fn mcc(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}

/// Mann–Whitney AUROC with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, BaselineError> {
    if scores.len() != labels.len() {
        return Err(BaselineError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(BaselineError::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn prf(tp: u64, fp: u64, fn_: u64) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Precision, recall and F1 for (High, Low).
pub fn prf1(c: &Confusion) -> (Prf, Prf) {
    (prf(c.tp, c.fp, c.fn_), prf(c.tn, c.fn_, c.fp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub name: String,
    pub confusion: Confusion,
    pub high: Prf,
    pub low: Prf,
    pub mcc: f64,
    pub auroc: Option<f64>,
    /// MSE of yields in [0, 1]; regressors only.
    pub mse: Option<f64>,
}

impl MetricsReport {
    /// Metrics from scores thresholded at `threshold`. `yields` holds the
    /// true yields when the scores are yield predictions.
    pub fn from_scores(
        name: &str,
        scores: &[f64],
        truth: &[bool],
        threshold: f64,
        yields: Option<&[f64]>,
    ) -> Result<Self, BaselineError> {
        let pred: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
        let confusion = Confusion::from_predictions(&pred, truth)?;
        let (high, low) = prf1(&confusion);
        let auroc = auroc(scores, truth).ok();
        let mse = match yields {
            Some(y) => {
                if y.len() != scores.len() {
                    return Err(BaselineError::LengthMismatch(y.len(), scores.len()));
                }
                let n = y.len().max(1) as f64;
                Some(scores.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
            }
            None => None,
        };
        Ok(Self {
            name: name.to_string(),
            confusion,
            high,
            low,
            mcc: confusion.mcc(),
            auroc,
            mse,
        })
    }

    /// One `name=value` line per metric.
    pub fn to_records(&self) -> String {
        let c = &self.confusion;
        let mut out = vec![
            format!("model={}", self.name),
            format!("n={}", c.total()),
            format!("tp={}", c.tp),
            format!("fp={}", c.fp),
            format!("tn={}", c.tn),
            format!("fn={}", c.fn_),
            format!("mcc={:.6}", self.mcc),
        ];
        if let Some(a) = self.auroc {
            out.push(format!("auroc={a:.6}"));
        }
        for (cls, p) in [("high", &self.high), ("low", &self.low)] {
            out.push(format!("{cls}_precision={:.6}", p.precision));
            out.push(format!("{cls}_recall={:.6}", p.recall));
            out.push(format!("{cls}_f1={:.6}", p.f1));
        }
        if let Some(m) = self.mse {
            out.push(format!("mse={m:.6}"));
            // at 1 µM strands, yield × 1000 is nM
            out.push(format!("mse_x1e6={:.3}", m * 1e6));
        }
        out.join("\n") + "\n"
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "{} (n = {})", self.name, c.total())?;
        writeln!(f, "  MCC    {:.4}", self.mcc)?;
        if let Some(a) = self.auroc {
            writeln!(f, "  AUROC  {a:.4}")?;
        }
        if let Some(m) = self.mse {
            writeln!(f, "  MSE    {m:.6}  (x1e6: {:.3})", m * 1e6)?;
        }
        writeln!(f, "         precision  recall  f1")?;
        for (cls, p) in [("High", &self.high), ("Low", &self.low)] {
            writeln!(f, "  {cls:<5}  {:>9.4}  {:>6.4}  {:.4}", p.precision, p.recall, p.f1)?;
        }
        write!(f, "  TP {}  FP {}  TN {}  FN {}", c.tp, c.fp, c.tn, c.fn_)
    }
}

/// Paired two-sided permutation test on per-sample correctness.
///
/// Each iteration swaps `a[i]` and `b[i]` with probability 1/2 and compares
/// the absolute mean difference with the observed one. The p-value uses the
/// add-one estimator, so it is never exactly zero.
pub fn permutation_test(a: &[bool], b: &[bool], iters: usize, seed: u64) -> Result<f64, BaselineError> {
    if a.len() != b.len() {
        return Err(BaselineError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(BaselineError::Empty);
    }
    let diffs: Vec<i64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x as i64 - y as i64)
        .filter(|&d| d != 0)
        .collect();
    let observed: i64 = diffs.iter().sum::<i64>().abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..iters {
        let s: i64 = diffs.iter().map(|&d| if rng.random::<bool>() { d } else { -d }).sum();
        if s.abs() >= observed {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (iters + 1) as f64)
}
