//! Independent finite-difference and brute-force verification of the
//! analytic metric gradients and the mixup gain formula. Everything here
//! evaluates metrics only through [`metric_value`]; no analytic-gradient
//! code path is shared with what it checks.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linear::{predict_labels, ClassCentroids, FeatureMatrix, LinearClassifier, MixupDirection};
use crate::mat::Mat;
use crate::metrics::{
    metric_value, reparam_confusion, ClassPrior, ConfusionMatrix, LagrangeState, MetricGradient,
    MetricKind, MetricSpec, UnconstrainedConfusion,
};
use crate::Result;

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: (usize, usize),
    pub passed: bool,
    pub rtol: f64,
    pub atol: f64,
    pub cases: usize,
}

/// Central finite differences of `psi(reparam(Ct + h*E_ij, pi))` per entry,
/// with the Lagrange state frozen.
pub fn fd_metric_grad(
    spec: &MetricSpec,
    ct: &UnconstrainedConfusion,
    pi: &ClassPrior,
    lam: &LagrangeState,
    h: f64,
) -> Result<MetricGradient> {
    let k = pi.k();
    let mut g = Mat::zeros(k, k);
    let mut work = ct.clone();
    for i in 0..k {
        for j in 0..k {
            let orig = work.c_tilde[(i, j)];
            work.c_tilde[(i, j)] = orig + h;
            let plus = metric_value(spec, &reparam_confusion(&work, pi)?, lam)?;
            work.c_tilde[(i, j)] = orig - h;
            let minus = metric_value(spec, &reparam_confusion(&work, pi)?, lam)?;
            work.c_tilde[(i, j)] = orig;
            g[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(MetricGradient { d_psi_d_ctilde: g, clamped: false })
}

/// Surrogate objective `psi_surr(W) = psi(rows pi_k * softmax(W^T z_k))`:
/// the metric evaluated on the confusion matrix induced by scoring the
/// class centroids.
pub fn surrogate_value(
    m: &LinearClassifier,
    z: &ClassCentroids,
    pi: &ClassPrior,
    spec: &MetricSpec,
    lam: &LagrangeState,
) -> Result<f64> {
    metric_value(spec, &surrogate_confusion(m, z, pi)?, lam)
}

/// Confusion matrix underlying [`surrogate_value`].
pub fn surrogate_confusion(
    m: &LinearClassifier,
    z: &ClassCentroids,
    pi: &ClassPrior,
) -> Result<ConfusionMatrix> {
    let k = pi.k();
    let mut ct = Mat::zeros(k, k);
    for row in 0..k {
        ct.row_mut(row).copy_from_slice(&m.logits(z.centroid(row)));
    }
    reparam_confusion(&UnconstrainedConfusion::new(ct)?, pi)
}

/// Central finite difference of the surrogate along a mixup direction:
/// `(psi_surr(W + eta V) - psi_surr(W - eta V)) / (2 eta)`.
pub fn fd_surrogate_gain(
    m: &LinearClassifier,
    z: &ClassCentroids,
    pi: &ClassPrior,
    spec: &MetricSpec,
    lam: &LagrangeState,
    v: &MixupDirection,
    eta: f64,
) -> Result<f64> {
    let mut plus = m.clone();
    plus.weights_mut().axpy(eta, &v.v)?;
    let mut minus = m.clone();
    minus.weights_mut().axpy(-eta, &v.v)?;
    let a = surrogate_value(&plus, z, pi, spec, lam)?;
    let b = surrogate_value(&minus, z, pi, spec, lam)?;
    Ok((a - b) / (2.0 * eta))
}

/// Measured change in the true (piecewise-constant) validation metric after
/// stepping the weights by `eta * V`. Used for rank-correlation tests only.
pub fn empirical_gain(
    m: &LinearClassifier,
    v: &MixupDirection,
    eta: f64,
    val: &FeatureMatrix,
    spec: &MetricSpec,
    lam: &LagrangeState,
) -> Result<f64> {
    let labels = val
        .labels()
        .ok_or_else(|| crate::Error::InvalidInput("empirical gain needs labels".into()))?;
    let k = m.k();
    let before = metric_value(
        spec,
        &ConfusionMatrix::from_predictions(labels, &predict_labels(m, val)?, k)?,
        lam,
    )?;
    let mut stepped = m.clone();
    stepped.weights_mut().axpy(eta, &v.v)?;
    let after = metric_value(
        spec,
        &ConfusionMatrix::from_predictions(labels, &predict_labels(&stepped, val)?, k)?,
        lam,
    )?;
    Ok(after - before)
}

/// Entrywise comparison of two gradients.
pub fn compare_gradients(
    analytic: &MetricGradient,
    reference: &MetricGradient,
    rtol: f64,
    atol: f64,
) -> FiniteDiffReport {
    let a = &analytic.d_psi_d_ctilde;
    let r = &reference.d_psi_d_ctilde;
    let mut max_rel = 0.0;
    let mut max_abs = 0.0;
    let mut worst = (0, 0);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let abs = libm::fabs(a[(i, j)] - r[(i, j)]);
            let rel = abs / libm::fabs(r[(i, j)]).max(1e-30);
            if abs > max_abs {
                max_abs = abs;
            }
            if abs > atol && rel > max_rel {
                max_rel = rel;
                worst = (i, j);
            }
        }
    }
    FiniteDiffReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst_index: worst,
        passed: max_rel <= rtol,
        rtol,
        atol,
        cases: 1,
    }
}

/// Standard-normal sample via Box-Muller.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Random interior instance for a gradient check: N(0,1) logits and a
/// random (softmax of N(0,1)) prior.
pub fn random_instance<R: Rng>(rng: &mut R, k: usize) -> (UnconstrainedConfusion, ClassPrior) {
    let mut ct = Mat::zeros(k, k);
    for v in ct.data_mut() {
        *v = sample_normal(rng);
    }
    let mut logits: Vec<f64> = (0..k).map(|_| sample_normal(rng)).collect();
    crate::mat::softmax_inplace(&mut logits);
    (UnconstrainedConfusion::new(ct).unwrap(), ClassPrior::new(logits).unwrap())
}

/// Random Lagrange state matching the spec's domain, for frozen-lambda checks.
pub fn random_lagrange<R: Rng>(rng: &mut R, spec: &MetricSpec, k: usize) -> LagrangeState {
    let len = spec.lambda_len(k);
    match spec.kind {
        MetricKind::MinRecall | MetricKind::MinHeadTailRecall => {
            let mut v: Vec<f64> = (0..len).map(|_| sample_normal(rng)).collect();
            crate::mat::softmax_inplace(&mut v);
            LagrangeState::simplex(v).unwrap()
        }
        MetricKind::MeanRecallCoverage
        | MetricKind::HMeanCoverage
        | MetricKind::MeanRecallHeadTailCoverage => {
            let v: Vec<f64> =
                (0..len).map(|_| rng.random::<f64>() * spec.lambda_max).collect();
            LagrangeState::nonneg(v, spec.lambda_max).unwrap()
        }
        _ => spec.initial_lagrange(k),
    }
}

/// Metric spec with a half/half head-tail split, as used by the check suites.
pub fn spec_for_check(kind: MetricKind, k: usize) -> MetricSpec {
    let mut spec = MetricSpec::new(kind);
    if kind.is_head_tail() {
        spec.head_set = (0..k / 2).collect();
        spec.tail_set = (k / 2..k).collect();
    }
    spec
}

/// All supported metric kinds.
pub const ALL_KINDS: [MetricKind; 8] = [
    MetricKind::MeanRecall,
    MetricKind::MinRecall,
    MetricKind::GMean,
    MetricKind::HMean,
    MetricKind::MeanRecallCoverage,
    MetricKind::HMeanCoverage,
    MetricKind::MinHeadTailRecall,
    MetricKind::MeanRecallHeadTailCoverage,
];

/// Sweep all metric kinds and class counts, comparing the analytic gradient
/// against central finite differences on random interior points.
///
/// `perturb_analytic` injects a deliberate relative error into the analytic
/// side so the harness can prove it catches a broken gradient.
pub fn gain_check(
    seed: u64,
    samples_per_case: usize,
    ks: &[usize],
    rtol: f64,
    atol: f64,
    h: f64,
    perturb_analytic: f64,
) -> Result<FiniteDiffReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FiniteDiffReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: (0, 0),
        passed: true,
        rtol,
        atol,
        cases: 0,
    };
    for kind in ALL_KINDS {
        for &k in ks {
            let spec = spec_for_check(kind, k);
            for _ in 0..samples_per_case {
                let (ct, pi) = random_instance(&mut rng, k);
                let lam = random_lagrange(&mut rng, &spec, k);
                let c = reparam_confusion(&ct, &pi)?;
                let mut analytic = crate::metrics::metric_grad_unconstrained(&spec, &c, &lam)?;
                if perturb_analytic != 0.0 {
                    analytic.d_psi_d_ctilde.scale(1.0 + perturb_analytic);
                }
                let fd = fd_metric_grad(&spec, &ct, &pi, &lam, h)?;
                let rep = compare_gradients(&analytic, &fd, rtol, atol);
                out.cases += 1;
                if rep.max_rel_err > out.max_rel_err {
                    out.max_rel_err = rep.max_rel_err;
                    out.worst_index = rep.worst_index;
                }
                out.max_abs_err = out.max_abs_err.max(rep.max_abs_err);
                out.passed &= rep.passed;
            }
        }
    }
    Ok(out)
}
