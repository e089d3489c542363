//! Cost-sensitive self-training: CSL gain-matrix construction, hybrid and
//! logit-adjusted losses, weighted consistency regularization, KL-based
//! sample selection, and the alternating multiplier/SGD training loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetBundle;
use crate::linear::{predict_labels, FeatureMatrix, LinearClassifier};
use crate::mat::{self, Mat};
use crate::metrics::{
    metric_value, recalls_and_coverages, ClassPrior, ConfusionMatrix, LagrangeDomain,
    LagrangeState, MetricKind, MetricSpec,
};
use crate::oracle::sample_normal;
use crate::selmix::{CycleRecord, PolicyTrace};
use crate::{Error, Result};

/// K x K reward matrix defining a cost-sensitive learning problem:
/// `G_ij` is the reward for predicting j when the true class is i.
#[derive(Debug, Clone, PartialEq)]
pub struct CslGainMatrix {
    g: Mat,
    diagonal: bool,
}

impl CslGainMatrix {
    pub fn new(g: Mat) -> Result<Self> {
        if !g.is_finite() {
            return Err(Error::NonFinite("CSL gain matrix".into()));
        }
        let k = g.rows();
        let diagonal =
            (0..k).all(|i| (0..k).all(|j| i == j || g[(i, j)] == 0.0));
        Ok(CslGainMatrix { g, diagonal })
    }

    pub fn identity(k: usize) -> Self {
        let mut g = Mat::zeros(k, k);
        for i in 0..k {
            g[(i, i)] = 1.0;
        }
        CslGainMatrix { g, diagonal: true }
    }

    #[inline]
    pub fn entries(&self) -> &Mat {
        &self.g
    }

    #[inline]
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.g.rows()
    }

    /// `G = M D` decomposition with `D = diag(G_11 .. G_KK)` and
    /// `M = G D^{-1}`. If any diagonal entry is nonpositive, the minimal
    /// uniform shift making all diagonals positive is first added to every
    /// entry; uniform shifts preserve the CSL argmax.
    pub fn decompose(&self) -> HybridLossSpec {
        let k = self.k();
        let min_diag = (0..k).map(|i| self.g[(i, i)]).fold(f64::INFINITY, f64::min);
        let shift = if min_diag <= 0.0 { 1e-6 - min_diag } else { 0.0 };
        let d_diag: Vec<f64> = (0..k).map(|i| self.g[(i, i)] + shift).collect();
        let mut m = Mat::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = (self.g[(i, j)] + shift) / d_diag[j];
            }
        }
        HybridLossSpec { m, d_diag }
    }
}

/// The `G = M D` decomposition backing the hybrid loss.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridLossSpec {
    m: Mat,
    d_diag: Vec<f64>,
}

impl HybridLossSpec {
    pub fn new(m: Mat, d_diag: Vec<f64>) -> Result<Self> {
        if d_diag.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(Error::DecompositionUndefined);
        }
        if m.rows() != d_diag.len() || m.cols() != d_diag.len() {
            return Err(Error::DimMismatch("M vs D".into()));
        }
        Ok(HybridLossSpec { m, d_diag })
    }

    #[inline]
    pub fn weight_matrix(&self) -> &Mat {
        &self.m
    }

    #[inline]
    pub fn d_diag(&self) -> &[f64] {
        &self.d_diag
    }

    /// Adjusted log-softmax: `log softmax(logits - ln D)`.
    fn adjusted_log_softmax(&self, logits: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> =
            logits.iter().zip(&self.d_diag).map(|(&l, &d)| l - libm::log(d)).collect();
        mat::log_softmax_inplace(&mut a);
        a
    }
}

/// Min-recall CSL gain: `diag(lambda_i / pi_i)`.
pub fn csl_gain_minrecall(lam: &LagrangeState, pi: &ClassPrior) -> Result<CslGainMatrix> {
    if lam.domain() != LagrangeDomain::Simplex || lam.as_slice().len() != pi.k() {
        return Err(Error::InvalidInput("min-recall gain needs a K-simplex lambda".into()));
    }
    let k = pi.k();
    let mut g = Mat::zeros(k, k);
    for i in 0..k {
        let p = pi.as_slice()[i];
        if p <= 0.0 {
            return Err(Error::DegeneratePrior);
        }
        g[(i, i)] = lam.as_slice()[i] / p;
    }
    CslGainMatrix::new(g)
}

/// Coverage-constrained mean-recall CSL gain:
/// `G_ij = delta_ij / (K pi_i) + lambda_j`.
pub fn csl_gain_coverage(lam: &LagrangeState, pi: &ClassPrior) -> Result<CslGainMatrix> {
    if lam.domain() != LagrangeDomain::NonNeg || lam.as_slice().len() != pi.k() {
        return Err(Error::InvalidInput("coverage gain needs a nonnegative K-vector lambda".into()));
    }
    let k = pi.k();
    let mut g = Mat::zeros(k, k);
    for i in 0..k {
        let p = pi.as_slice()[i];
        if p <= 0.0 {
            return Err(Error::DegeneratePrior);
        }
        for j in 0..k {
            g[(i, j)] = lam.as_slice()[j] + if i == j { 1.0 / (k as f64 * p) } else { 0.0 };
        }
    }
    CslGainMatrix::new(g)
}

/// Hybrid loss in logit-adjusted form:
/// `-sum_i M_{yi} log softmax_i(logits - log D)`.
pub fn hybrid_loss(y: usize, logits: &[f64], g: &CslGainMatrix) -> Result<f64> {
    let k = g.k();
    if logits.len() != k || y >= k {
        return Err(Error::DimMismatch("hybrid loss shapes".into()));
    }
    if (0..k).any(|i| g.entries()[(i, i)] <= 0.0) {
        return Err(Error::DecompositionUndefined);
    }
    let spec = g.decompose();
    let ls = spec.adjusted_log_softmax(logits);
    Ok(-(0..k).map(|i| spec.weight_matrix()[(y, i)] * ls[i]).sum::<f64>())
}

/// Weighted consistency regularizer in logit-adjusted form:
/// `-sum_i (M^T p_hat)_i log softmax_i(logits_strong - log D)`.
/// Its minimizer over the strong-view model distribution is
/// `norm(G^T p_hat)`.
pub fn weighted_consistency_loss(
    p_hat: &[f64],
    logits_strong: &[f64],
    g: &CslGainMatrix,
) -> Result<f64> {
    let k = g.k();
    if p_hat.len() != k || logits_strong.len() != k {
        return Err(Error::DimMismatch("consistency loss shapes".into()));
    }
    let mass: f64 = g.entries().matvec_t(p_hat)?.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroMassTarget);
    }
    if (0..k).any(|i| g.entries()[(i, i)] <= 0.0) {
        return Err(Error::DecompositionUndefined);
    }
    let spec = g.decompose();
    let w = spec.weight_matrix().matvec_t(p_hat)?;
    let ls = spec.adjusted_log_softmax(logits_strong);
    Ok(-mat::dot(&w, &ls))
}

/// Optimal target distribution `norm(G^T p_hat)`.
pub fn optimal_target(p_hat: &[f64], g: &CslGainMatrix) -> Result<Vec<f64>> {
    let mut u = g.entries().matvec_t(p_hat)?;
    let mass: f64 = u.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroMassTarget);
    }
    for v in &mut u {
        *v /= mass;
    }
    Ok(u)
}

/// Selects a sample iff `KL(norm(G^T p_hat) || p_weak) <= tau`.
/// Uses the 0 * log 0 = 0 convention; a zero-mass target is never selected.
pub fn kl_threshold_mask(p_hat: &[f64], p_weak: &[f64], g: &CslGainMatrix, tau: f64) -> bool {
    let Ok(target) = optimal_target(p_hat, g) else { return false };
    let mut kl = 0.0;
    for (&t, &p) in target.iter().zip(p_weak) {
        if t <= 0.0 {
            continue;
        }
        if p <= 0.0 {
            return false;
        }
        kl += t * (libm::log(t) - libm::log(p));
    }
    kl <= tau
}

/// Hyperparameters of the CSST self-training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainConfig {
    /// Weight of the unlabeled consistency loss.
    pub lambda_u: f64,
    /// KL selection threshold.
    pub tau_kl: f64,
    /// Std of the additive Gaussian feature noise used as the strong view.
    pub sigma_aug: f64,
    /// Lagrange step size.
    pub omega: f64,
    /// SGD steps between validation evaluations.
    pub eval_period: usize,
    /// Total SGD steps.
    pub steps: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            lambda_u: 1.0,
            tau_kl: 0.3,
            sigma_aug: 0.5,
            omega: 0.25,
            eval_period: 32,
            steps: 640,
            eta: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Default strong-view noise scale: half the median within-class
/// per-dimension feature standard deviation.
pub fn default_sigma_aug(labeled: &FeatureMatrix, k: usize) -> Result<f64> {
    let labels =
        labeled.labels().ok_or_else(|| Error::InvalidInput("sigma_aug needs labels".into()))?;
    let d = labeled.dim();
    let mut stds = Vec::new();
    for class in 0..k {
        let idx: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &y)| y == class).map(|(i, _)| i).collect();
        if idx.len() < 2 {
            continue;
        }
        for dim in 0..d {
            let mean: f64 = idx.iter().map(|&i| labeled.row(i)[dim]).sum::<f64>() / idx.len() as f64;
            let var: f64 = idx.iter().map(|&i| {
                let v = labeled.row(i)[dim] - mean;
                v * v
            }).sum::<f64>() / (idx.len() - 1) as f64;
            stds.push(libm::sqrt(var));
        }
    }
    if stds.is_empty() {
        return Err(Error::InvalidInput("no class has two labeled samples".into()));
    }
    stds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(0.5 * stds[stds.len() / 2])
}

/// CSST training loop (Lagrangian alternation + cost-sensitive SGD).
///
/// Every `eval_period` steps the validation recalls/coverages are
/// recomputed and the multipliers updated: exponentiated gradient for
/// min-recall, projected gradient for coverage. The per-step loss is the
/// hybrid loss on a labeled batch plus `lambda_u` times the KL-masked
/// weighted consistency loss on an unlabeled batch, where the weak view is
/// the raw feature and the strong view adds isotropic Gaussian noise.
///
/// Supported objectives: `MinRecall` (exponentiated-gradient G =
/// diag(lambda/pi)), `MeanRecallCoverage` (projected-gradient
/// G_ij = delta_ij/(K pi_i) + lambda_j), and `MeanRecall` (fixed G = I,
/// i.e. vanilla self-training).
pub fn csst_train(
    data: &DatasetBundle,
    m0: &LinearClassifier,
    spec: &MetricSpec,
    cfg: &SelfTrainConfig,
) -> Result<(LinearClassifier, PolicyTrace)> {
    let k = m0.k();
    data.validate(k)?;
    if !matches!(
        spec.kind,
        MetricKind::MinRecall | MetricKind::MeanRecallCoverage | MetricKind::MeanRecall
    ) {
        return Err(Error::InvalidInput(
            "csst_train supports min-recall, mean-recall-coverage, and vanilla (mean-recall) objectives".into(),
        ));
    }
    let labels = data.labeled.labels().unwrap();
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::DegeneratePrior);
    }
    let n = labels.len() as f64;
    let pi = ClassPrior::new(counts.iter().map(|&c| c as f64 / n).collect())?;
    let val_labels = data.val.labels().unwrap().to_vec();

    let mut trace = PolicyTrace::default();
    let use_unlabeled = match &data.unlabeled {
        Some(u) if u.n() > 0 => true,
        _ => {
            trace.warnings.push(String::from(
                "no unlabeled data: degrading to supervised cost-sensitive training",
            ));
            false
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = m0.clone();
    let mut lambda = initial_multipliers(spec, k);
    let mut gain = rebuild_gain(spec, &lambda, &pi)?;
    let mut accepted = 0usize;
    let mut considered = 0usize;
    let mut cycle = 0usize;

    for step in 0..cfg.steps {
        if step % cfg.eval_period == 0 {
            let preds = predict_labels(&model, &data.val)?;
            let c = ConfusionMatrix::from_predictions(&val_labels, &preds, k)?;
            let (recalls, coverages) = recalls_and_coverages(&c)?;
            update_multipliers(spec, cfg.omega, &recalls, &coverages, &mut lambda);
            debug_assert!(multipliers_in_domain(spec, &lambda));
            gain = rebuild_gain(spec, &lambda, &pi)?;
            cycle += 1;
            let lam_state = lagrange_state_for(spec, &lambda, k);
            trace.records.push(CycleRecord {
                cycle,
                metric: metric_value(spec, &c, &lam_state)?,
                mean_recall: recalls.iter().sum::<f64>() / k as f64,
                min_recall: recalls.iter().cloned().fold(f64::INFINITY, f64::min),
                recalls,
                coverages,
                lambda: lambda.clone(),
                gain: gain.entries().clone(),
                gain_max: gain.entries().max_abs(),
                gain_argmax: gain.entries().argmax(),
                masked_fraction: 0.0,
                pair_counts: Mat::zeros(k, k),
                skipped_steps: 0,
                mask_accept_rate: if considered > 0 {
                    Some(accepted as f64 / considered as f64)
                } else {
                    None
                },
            });
            accepted = 0;
            considered = 0;
        }

        let decomp = gain.decompose();
        let mut grad = Mat::zeros(model.dim(), k);

        // supervised hybrid loss on a labeled batch
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..data.labeled.n());
            let x = data.labeled.row(i);
            let y = labels[i];
            accumulate_weighted_sce_grad(
                &mut grad,
                &model,
                x,
                decomp.weight_matrix().row(y),
                &decomp,
                1.0 / cfg.batch_size as f64,
            );
        }

        // masked weighted consistency on an unlabeled batch
        if use_unlabeled && cfg.lambda_u > 0.0 {
            let unlabeled = data.unlabeled.as_ref().unwrap();
            let scale = cfg.lambda_u / cfg.batch_size as f64;
            for _ in 0..cfg.batch_size {
                let i = rng.random_range(0..unlabeled.n());
                let x = unlabeled.row(i);
                let mut p_weak = model.logits(x);
                mat::softmax_inplace(&mut p_weak);
                let mut p_hat = vec![0.0; k];
                p_hat[mat::argmax(&p_weak)] = 1.0;
                considered += 1;
                if !kl_threshold_mask(&p_hat, &p_weak, &gain, cfg.tau_kl) {
                    continue;
                }
                accepted += 1;
                let strong: Vec<f64> =
                    x.iter().map(|&v| v + cfg.sigma_aug * sample_normal(&mut rng)).collect();
                let w = decomp.weight_matrix().matvec_t(&p_hat)?;
                accumulate_weighted_sce_grad(&mut grad, &model, &strong, &w, &decomp, scale);
            }
        }

        let mut w = model.weights().clone();
        w.axpy(-cfg.eta, &grad)?;
        model = LinearClassifier::new(w)?;
    }
    Ok((model, trace))
}

/// Gradient of `-sum_i w_i log softmax_i(logits(x) - log D)` with respect to
/// W, scaled by `scale` and accumulated into `grad`.
fn accumulate_weighted_sce_grad(
    grad: &mut Mat,
    model: &LinearClassifier,
    x: &[f64],
    w: &[f64],
    decomp: &HybridLossSpec,
    scale: f64,
) {
    let k = model.k();
    let logits = model.logits(x);
    let mut q: Vec<f64> =
        logits.iter().zip(decomp.d_diag()).map(|(&l, &d)| l - libm::log(d)).collect();
    mat::softmax_inplace(&mut q);
    let w_total: f64 = w.iter().sum();
    for l in 0..k {
        let coeff = (w_total * q[l] - w[l]) * scale;
        if coeff == 0.0 {
            continue;
        }
        for (r, &xr) in x.iter().enumerate() {
            grad[(r, l)] += coeff * xr;
        }
    }
}

fn initial_multipliers(spec: &MetricSpec, k: usize) -> Vec<f64> {
    match spec.kind {
        MetricKind::MinRecall => vec![1.0 / k as f64; k],
        _ => vec![0.0; k],
    }
}

fn update_multipliers(
    spec: &MetricSpec,
    omega: f64,
    recalls: &[f64],
    coverages: &[f64],
    lambda: &mut [f64],
) {
    match spec.kind {
        MetricKind::MinRecall => {
            // exponentiated gradient on the simplex
            for (l, &r) in lambda.iter_mut().zip(recalls) {
                *l *= libm::exp(-omega * r);
            }
            let sum: f64 = lambda.iter().sum();
            for l in lambda.iter_mut() {
                *l /= sum;
            }
        }
        MetricKind::MeanRecallCoverage => {
            // projected gradient onto the nonnegative orthant
            let k = lambda.len() as f64;
            let target = spec.alpha / k;
            for (l, &cov) in lambda.iter_mut().zip(coverages) {
                *l = (*l - omega * (cov - target)).max(0.0);
            }
        }
        _ => {}
    }
}

fn multipliers_in_domain(spec: &MetricSpec, lambda: &[f64]) -> bool {
    match spec.kind {
        MetricKind::MinRecall => {
            lambda.iter().all(|&l| l >= 0.0)
                && libm::fabs(lambda.iter().sum::<f64>() - 1.0) < 1e-9
        }
        _ => lambda.iter().all(|&l| l >= 0.0),
    }
}

fn rebuild_gain(spec: &MetricSpec, lambda: &[f64], pi: &ClassPrior) -> Result<CslGainMatrix> {
    match spec.kind {
        MetricKind::MinRecall => {
            csl_gain_minrecall(&LagrangeState::simplex(normalize_copy(lambda))?, pi)
        }
        MetricKind::MeanRecallCoverage => {
            csl_gain_coverage(&LagrangeState::nonneg(lambda.to_vec(), f64::INFINITY)?, pi)
        }
        // vanilla self-training
        _ => Ok(CslGainMatrix::identity(pi.k())),
    }
}

fn normalize_copy(v: &[f64]) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter().map(|&x| x / sum).collect()
}

fn lagrange_state_for(spec: &MetricSpec, lambda: &[f64], k: usize) -> LagrangeState {
    match spec.kind {
        MetricKind::MinRecall => {
            LagrangeState::simplex(normalize_copy(lambda)).unwrap()
        }
        MetricKind::MeanRecallCoverage => {
            LagrangeState::nonneg(lambda.to_vec(), f64::INFINITY).unwrap()
        }
        _ => spec.initial_lagrange(k),
    }
}
