//! Confusion matrices, the row-wise softmax reparametrization, metric
//! values and their analytic gradients, and Lagrange-multiplier updates.
//!
//! A confusion matrix `C` stores the joint probability of (true class i,
//! predicted class j); row `i` sums to the class prior `pi[i]`. Metrics are
//! differentiated through the reparametrization `C_i = pi_i * softmax(Ct_i)`
//! of an unconstrained matrix `Ct`, which keeps every gradient well-defined
//! and expressible purely in terms of the entries of `C`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::mat::{self, Mat};
use crate::{Error, Result};

/// Numerical floor for diagonal confusion entries in G-mean/H-mean.
pub const DIAG_CLAMP: f64 = 1e-12;

const SUM_TOL: f64 = 1e-9;

/// Class prior distribution over K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior {
    pi: Vec<f64>,
}

impl ClassPrior {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.len() < 2 {
            return Err(Error::InvalidInput("need K >= 2 classes".into()));
        }
        if pi.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidInput("prior entries must be >= 0".into()));
        }
        let sum: f64 = pi.iter().sum();
        if libm::fabs(sum - 1.0) > SUM_TOL {
            return Err(Error::InvalidInput(format!("prior sums to {sum}, expected 1")));
        }
        Ok(ClassPrior { pi })
    }

    pub fn uniform(k: usize) -> Self {
        ClassPrior { pi: vec![1.0 / k as f64; k] }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }
}

/// K x K joint probability of (true class, predicted class).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    c: Mat,
    pi: ClassPrior,
}

impl ConfusionMatrix {
    /// Validates entries in [0,1], total mass 1 and row sums equal to the prior.
    pub fn new(c: Mat, pi: ClassPrior) -> Result<Self> {
        let k = pi.k();
        if c.rows() != k || c.cols() != k {
            return Err(Error::DimMismatch("confusion matrix must be K x K".into()));
        }
        if c.data().iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput("confusion entries must lie in [0,1]".into()));
        }
        if libm::fabs(c.sum() - 1.0) > SUM_TOL {
            return Err(Error::InvalidInput("confusion entries must sum to 1".into()));
        }
        for i in 0..k {
            let row_sum: f64 = c.row(i).iter().sum();
            if libm::fabs(row_sum - pi.as_slice()[i]) > SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {i} sums to {row_sum}, expected prior {}",
                    pi.as_slice()[i]
                )));
            }
        }
        Ok(ConfusionMatrix { c, pi })
    }

    /// Empirical confusion matrix from paired label lists.
    ///
    /// The prior is derived from the empirical true-label frequencies, so
    /// every class in `[0, k)` must occur at least once among `true_labels`.
    pub fn from_predictions(true_labels: &[usize], predicted_labels: &[usize], k: usize) -> Result<Self> {
        if true_labels.is_empty() {
            return Err(Error::EmptyEvaluationSet);
        }
        if true_labels.len() != predicted_labels.len() {
            return Err(Error::DimMismatch("label lists differ in length".into()));
        }
        if k < 2 {
            return Err(Error::InvalidInput("need K >= 2 classes".into()));
        }
        let n = true_labels.len() as f64;
        let mut c = Mat::zeros(k, k);
        for (&y, &p) in true_labels.iter().zip(predicted_labels) {
            if y >= k || p >= k {
                return Err(Error::InvalidInput(format!("label out of range [0,{k})")));
            }
            c[(y, p)] += 1.0 / n;
        }
        let mut pi = Vec::with_capacity(k);
        for i in 0..k {
            let row_sum: f64 = c.row(i).iter().sum();
            if row_sum == 0.0 {
                return Err(Error::DegeneratePrior);
            }
            pi.push(row_sum);
        }
        Ok(ConfusionMatrix { c, pi: ClassPrior { pi } })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.pi.k()
    }

    #[inline]
    pub fn entries(&self) -> &Mat {
        &self.c
    }

    #[inline]
    pub fn prior(&self) -> &ClassPrior {
        &self.pi
    }

    /// Per-class recalls `C_ii / sum_j C_ij`.
    pub fn recalls(&self) -> Result<Vec<f64>> {
        let k = self.k();
        let mut rec = Vec::with_capacity(k);
        for i in 0..k {
            let row_sum: f64 = self.c.row(i).iter().sum();
            if row_sum <= 0.0 {
                return Err(Error::DegeneratePrior);
            }
            rec.push(self.c[(i, i)] / row_sum);
        }
        Ok(rec)
    }

    /// Per-class coverages `sum_i C_ij`.
    pub fn coverages(&self) -> Vec<f64> {
        let k = self.k();
        let mut cov = vec![0.0; k];
        for i in 0..k {
            for (c, &v) in cov.iter_mut().zip(self.c.row(i)) {
                *c += v;
            }
        }
        cov
    }
}

/// Recalls and coverages in one pass.
pub fn recalls_and_coverages(c: &ConfusionMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((c.recalls()?, c.coverages()))
}

/// Free K x K parametrization of a confusion matrix (row-wise softmax logits).
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedConfusion {
    pub c_tilde: Mat,
}

impl UnconstrainedConfusion {
    pub fn new(c_tilde: Mat) -> Result<Self> {
        if !c_tilde.is_finite() {
            return Err(Error::NonFinite("unconstrained confusion".into()));
        }
        Ok(UnconstrainedConfusion { c_tilde })
    }
}

/// `C_i = pi_i * softmax(Ct_i)`: maps any finite matrix onto a valid
/// confusion matrix with the given prior.
pub fn reparam_confusion(ct: &UnconstrainedConfusion, pi: &ClassPrior) -> Result<ConfusionMatrix> {
    let k = pi.k();
    if ct.c_tilde.rows() != k || ct.c_tilde.cols() != k {
        return Err(Error::DimMismatch("unconstrained confusion must be K x K".into()));
    }
    let mut c = ct.c_tilde.clone();
    for i in 0..k {
        let row = c.row_mut(i);
        mat::softmax_inplace(row);
        for v in row.iter_mut() {
            *v *= pi.as_slice()[i];
        }
    }
    Ok(ConfusionMatrix { c, pi: pi.clone() })
}

/// The non-decomposable objectives supported by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    MeanRecall,
    MinRecall,
    GMean,
    HMean,
    MeanRecallCoverage,
    HMeanCoverage,
    MinHeadTailRecall,
    MeanRecallHeadTailCoverage,
}

impl MetricKind {
    pub fn uses_coverage(self) -> bool {
        matches!(
            self,
            MetricKind::MeanRecallCoverage
                | MetricKind::HMeanCoverage
                | MetricKind::MeanRecallHeadTailCoverage
        )
    }

    pub fn is_head_tail(self) -> bool {
        matches!(self, MetricKind::MinHeadTailRecall | MetricKind::MeanRecallHeadTailCoverage)
    }

    pub fn uses_lagrange(self) -> bool {
        !matches!(self, MetricKind::MeanRecall | MetricKind::GMean | MetricKind::HMean)
    }
}

/// Objective description plus its Lagrangian hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    /// Softness of the soft min-recall Lagrange update.
    pub omega: f64,
    /// Cap on coverage Lagrange multipliers.
    pub lambda_max: f64,
    /// Tolerance of the coverage multiplier update.
    pub tau_cov: f64,
    /// Coverage target fraction: per-class target is `alpha / K`.
    pub alpha: f64,
    pub head_set: Vec<usize>,
    pub tail_set: Vec<usize>,
}

impl MetricSpec {
    pub fn new(kind: MetricKind) -> Self {
        MetricSpec {
            kind,
            omega: 20.0,
            lambda_max: 100.0,
            tau_cov: 0.01,
            alpha: 0.95,
            head_set: Vec::new(),
            tail_set: Vec::new(),
        }
    }

    /// Default head/tail partition: tail = least-frequent ceil(K/10) classes.
    pub fn with_default_head_tail(mut self, pi: &ClassPrior) -> Self {
        let k = pi.k();
        let tail_count = k.div_ceil(10).max(1);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| pi.as_slice()[a].partial_cmp(&pi.as_slice()[b]).unwrap());
        let tail: Vec<usize> = order[..tail_count].to_vec();
        let head: Vec<usize> = order[tail_count..].to_vec();
        self.head_set = head;
        self.tail_set = tail;
        self
    }

    fn validate_ht(&self, k: usize) -> Result<()> {
        if !self.kind.is_head_tail() {
            return Ok(());
        }
        if self.head_set.is_empty() || self.tail_set.is_empty() {
            return Err(Error::EmptyHeadTailSet);
        }
        let mut seen = vec![false; k];
        for &i in self.head_set.iter().chain(&self.tail_set) {
            if i >= k || seen[i] {
                return Err(Error::InvalidInput("head/tail sets must partition [K)".into()));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidInput("head/tail sets must cover [K)".into()));
        }
        Ok(())
    }

    /// Length of the Lagrange vector for this objective.
    pub fn lambda_len(&self, k: usize) -> usize {
        if self.kind.is_head_tail() {
            2
        } else {
            k
        }
    }

    /// Initial multipliers: uniform simplex for min-recall variants,
    /// all-zeros for coverage variants.
    pub fn initial_lagrange(&self, k: usize) -> LagrangeState {
        let len = self.lambda_len(k);
        match self.kind {
            MetricKind::MinRecall | MetricKind::MinHeadTailRecall => {
                LagrangeState { lambda: vec![1.0 / len as f64; len], domain: LagrangeDomain::Simplex }
            }
            _ => LagrangeState { lambda: vec![0.0; len], domain: LagrangeDomain::NonNeg },
        }
    }

    /// Recompute multipliers from validation recalls and coverages.
    pub fn update_lagrange(&self, recalls: &[f64], coverages: &[f64]) -> LagrangeState {
        match self.kind {
            MetricKind::MinRecall => lagrange_update_minrecall(recalls, self.omega),
            MetricKind::MinHeadTailRecall => {
                let groups = [mean_over(recalls, &self.head_set), mean_over(recalls, &self.tail_set)];
                lagrange_update_minrecall(&groups, self.omega)
            }
            MetricKind::MeanRecallCoverage | MetricKind::HMeanCoverage => {
                lagrange_update_coverage(coverages, self)
            }
            MetricKind::MeanRecallHeadTailCoverage => {
                let groups =
                    [mean_over(coverages, &self.head_set), mean_over(coverages, &self.tail_set)];
                lagrange_update_coverage(&groups, self)
            }
            _ => self.initial_lagrange(recalls.len()),
        }
    }
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagrangeDomain {
    Simplex,
    NonNeg,
}

/// Lagrange multipliers: K entries, or 2 for head/tail variants.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    lambda: Vec<f64>,
    domain: LagrangeDomain,
}

impl LagrangeState {
    pub fn simplex(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput("simplex entries must be >= 0".into()));
        }
        let sum: f64 = lambda.iter().sum();
        if libm::fabs(sum - 1.0) > SUM_TOL {
            return Err(Error::InvalidInput("simplex entries must sum to 1".into()));
        }
        Ok(LagrangeState { lambda, domain: LagrangeDomain::Simplex })
    }

    pub fn nonneg(lambda: Vec<f64>, lambda_max: f64) -> Result<Self> {
        if lambda.iter().any(|&v| v < 0.0 || v > lambda_max || !v.is_finite()) {
            return Err(Error::InvalidInput("entries must lie in [0, lambda_max]".into()));
        }
        Ok(LagrangeState { lambda, domain: LagrangeDomain::NonNeg })
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.lambda
    }

    #[inline]
    pub fn domain(&self) -> LagrangeDomain {
        self.domain
    }
}

/// Soft min-recall multipliers: `lambda_i = softmax(-omega * rec)_i`.
pub fn lagrange_update_minrecall(recalls: &[f64], omega: f64) -> LagrangeState {
    let mut lambda: Vec<f64> = recalls.iter().map(|&r| -omega * r).collect();
    mat::softmax_inplace(&mut lambda);
    LagrangeState { lambda, domain: LagrangeDomain::Simplex }
}

/// Coverage multipliers: `lambda_j = max(0, Lmax * (1 - exp((cov_j - alpha/K) / tau)))`.
///
/// For head/tail variants `coverages` holds the two per-group mean coverages;
/// the target stays `alpha / K` per class either way.
pub fn lagrange_update_coverage(coverages: &[f64], spec: &MetricSpec) -> LagrangeState {
    let k = if spec.kind.is_head_tail() {
        spec.head_set.len() + spec.tail_set.len()
    } else {
        coverages.len()
    };
    let target = spec.alpha / k as f64;
    let lambda = coverages
        .iter()
        .map(|&cov| {
            let v = spec.lambda_max * (1.0 - libm::exp((cov - target) / spec.tau_cov));
            v.clamp(0.0, spec.lambda_max)
        })
        .collect();
    LagrangeState { lambda, domain: LagrangeDomain::NonNeg }
}

/// Gradient of a metric with respect to the unconstrained confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGradient {
    pub d_psi_d_ctilde: Mat,
    /// Set when a diagonal entry hit [`DIAG_CLAMP`] during evaluation.
    pub clamped: bool,
}

/// Metric value `psi(C)` for a frozen Lagrange state.
pub fn metric_value(spec: &MetricSpec, c: &ConfusionMatrix, lam: &LagrangeState) -> Result<f64> {
    let k = c.k();
    spec.validate_ht(k)?;
    check_lambda_len(spec, lam, k)?;
    let rec = clamped_recalls(c).0;
    let value = match spec.kind {
        MetricKind::MeanRecall => rec.iter().sum::<f64>() / k as f64,
        MetricKind::GMean => {
            let log_sum: f64 = rec.iter().map(|&r| libm::log(r)).sum();
            libm::exp(log_sum / k as f64)
        }
        MetricKind::HMean => k as f64 / rec.iter().map(|&r| 1.0 / r).sum::<f64>(),
        MetricKind::MinRecall => mat::dot(lam.as_slice(), &rec),
        MetricKind::MinHeadTailRecall => {
            lam.as_slice()[0] * mean_over(&rec, &spec.head_set)
                + lam.as_slice()[1] * mean_over(&rec, &spec.tail_set)
        }
        MetricKind::MeanRecallCoverage | MetricKind::HMeanCoverage => {
            let base = if spec.kind == MetricKind::MeanRecallCoverage {
                rec.iter().sum::<f64>() / k as f64
            } else {
                k as f64 / rec.iter().map(|&r| 1.0 / r).sum::<f64>()
            };
            let target = spec.alpha / k as f64;
            let cov = c.coverages();
            base + lam
                .as_slice()
                .iter()
                .zip(&cov)
                .map(|(&l, &cj)| l * (cj - target))
                .sum::<f64>()
        }
        MetricKind::MeanRecallHeadTailCoverage => {
            let base = rec.iter().sum::<f64>() / k as f64;
            let cov = c.coverages();
            let target = spec.alpha / k as f64;
            base + lam.as_slice()[0] * (mean_over(&cov, &spec.head_set) - target)
                + lam.as_slice()[1] * (mean_over(&cov, &spec.tail_set) - target)
        }
    };
    Ok(value)
}

/// Analytic gradient of `psi(reparam(Ct, pi))` with respect to `Ct`, with
/// the Lagrange multipliers held constant.
///
/// The chain rule through the row-wise softmax gives, per first-principles
/// differentiation,
///
/// ```text
/// d psi / d Ct_ij = C_ij * ( d psi / d C_ij  -  (1/pi_i) * sum_l (d psi / d C_il) C_il )
/// ```
pub fn metric_grad_unconstrained(
    spec: &MetricSpec,
    c: &ConfusionMatrix,
    lam: &LagrangeState,
) -> Result<MetricGradient> {
    let k = c.k();
    spec.validate_ht(k)?;
    check_lambda_len(spec, lam, k)?;
    let (d_psi_d_c, clamped) = grad_wrt_confusion(spec, c, lam)?;
    let mut g = Mat::zeros(k, k);
    for i in 0..k {
        let pi_i = c.prior().as_slice()[i];
        let row_inner: f64 =
            (0..k).map(|l| d_psi_d_c[(i, l)] * c.entries()[(i, l)]).sum();
        for j in 0..k {
            g[(i, j)] = c.entries()[(i, j)] * (d_psi_d_c[(i, j)] - row_inner / pi_i);
        }
    }
    Ok(MetricGradient { d_psi_d_ctilde: g, clamped })
}

fn check_lambda_len(spec: &MetricSpec, lam: &LagrangeState, k: usize) -> Result<()> {
    if spec.kind.uses_lagrange() && lam.as_slice().len() != spec.lambda_len(k) {
        return Err(Error::DimMismatch(format!(
            "lambda length {} vs expected {}",
            lam.as_slice().len(),
            spec.lambda_len(k)
        )));
    }
    Ok(())
}

/// Recalls with the diagonal clamped at [`DIAG_CLAMP`]; flags whether the
/// clamp fired.
fn clamped_recalls(c: &ConfusionMatrix) -> (Vec<f64>, bool) {
    let k = c.k();
    let mut clamped = false;
    let rec = (0..k)
        .map(|i| {
            let mut cii = c.entries()[(i, i)];
            if cii < DIAG_CLAMP {
                cii = DIAG_CLAMP;
                clamped = true;
            }
            cii / c.prior().as_slice()[i]
        })
        .collect();
    (rec, clamped)
}

/// `d psi / d C` treating the prior (row sums) as constant; the softmax
/// Jacobian kills per-row constant shifts, so this convention matches the
/// gradient of the row-sum-constrained metric.
fn grad_wrt_confusion(
    spec: &MetricSpec,
    c: &ConfusionMatrix,
    lam: &LagrangeState,
) -> Result<(Mat, bool)> {
    let k = c.k();
    let pi = c.prior().as_slice();
    let (rec, clamped) = clamped_recalls(c);
    let mut d = Mat::zeros(k, k);
    match spec.kind {
        MetricKind::MeanRecall => {
            for i in 0..k {
                d[(i, i)] = 1.0 / (k as f64 * pi[i]);
            }
        }
        MetricKind::GMean => {
            let log_sum: f64 = rec.iter().map(|&r| libm::log(r)).sum();
            let psi = libm::exp(log_sum / k as f64);
            for i in 0..k {
                d[(i, i)] = psi / (k as f64 * rec[i] * pi[i]);
            }
        }
        MetricKind::HMean => {
            let s: f64 = rec.iter().map(|&r| 1.0 / r).sum();
            for i in 0..k {
                d[(i, i)] = k as f64 / (s * s * rec[i] * rec[i] * pi[i]);
            }
        }
        MetricKind::MinRecall => {
            for i in 0..k {
                d[(i, i)] = lam.as_slice()[i] / pi[i];
            }
        }
        MetricKind::MinHeadTailRecall => {
            for &i in &spec.head_set {
                d[(i, i)] = lam.as_slice()[0] / (spec.head_set.len() as f64 * pi[i]);
            }
            for &i in &spec.tail_set {
                d[(i, i)] = lam.as_slice()[1] / (spec.tail_set.len() as f64 * pi[i]);
            }
        }
        MetricKind::MeanRecallCoverage | MetricKind::HMeanCoverage => {
            if spec.kind == MetricKind::MeanRecallCoverage {
                for i in 0..k {
                    d[(i, i)] = 1.0 / (k as f64 * pi[i]);
                }
            } else {
                let s: f64 = rec.iter().map(|&r| 1.0 / r).sum();
                for i in 0..k {
                    d[(i, i)] = k as f64 / (s * s * rec[i] * rec[i] * pi[i]);
                }
            }
            for i in 0..k {
                for j in 0..k {
                    d[(i, j)] += lam.as_slice()[j];
                }
            }
        }
        MetricKind::MeanRecallHeadTailCoverage => {
            for i in 0..k {
                d[(i, i)] = 1.0 / (k as f64 * pi[i]);
            }
            for &j in &spec.head_set {
                for i in 0..k {
                    d[(i, j)] += lam.as_slice()[0] / spec.head_set.len() as f64;
                }
            }
            for &j in &spec.tail_set {
                for i in 0..k {
                    d[(i, j)] += lam.as_slice()[1] / spec.tail_set.len() as f64;
                }
            }
        }
    }
    Ok((d, clamped))
}
