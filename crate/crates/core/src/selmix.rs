//! Gain-matrix computation, the selective-mixup sampling distribution, the
//! fine-tuning loop, and policy simulation against the regret bound.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetBundle;
use crate::linear::{
    class_centroids, predict_labels, sgd_mixup_step, ClassCentroids, FeatureMatrix,
    LinearClassifier, MixupSample, TrainConfig,
};
use crate::mat::{self, Mat};
use crate::metrics::{
    metric_grad_unconstrained, metric_value, recalls_and_coverages, ConfusionMatrix,
    MetricGradient, MetricSpec,
};
use crate::{Error, Result};

/// Bounded retries when a sampled class has an empty partition.
const PAIR_RESAMPLE_RETRIES: usize = 20;

/// K x K approximate metric improvement per (i, j) class mixup.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupGainMatrix {
    g: Mat,
    normalized: bool,
}

impl MixupGainMatrix {
    pub fn new(g: Mat) -> Result<Self> {
        if !g.is_finite() {
            return Err(Error::NonFinite("gain matrix".into()));
        }
        Ok(MixupGainMatrix { g, normalized: false })
    }

    #[inline]
    pub fn entries(&self) -> &Mat {
        &self.g
    }

    #[inline]
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Max-abs normalization: scales entries into [-1, 1] so one gain
    /// temperature works across metrics. A zero matrix is left unchanged.
    pub fn normalized(mut self) -> Self {
        let m = self.g.max_abs();
        if m > 0.0 {
            self.g.scale(1.0 / m);
        }
        self.normalized = true;
        self
    }
}

/// Approximate gain `G_ij` of every (i, j) mixup: the directional derivative
/// of the centroid surrogate of the metric along `V_ij`,
///
/// ```text
/// G_ij = sum_{k,l} (d psi / d Ct_kl) * ((V_ij)^T_l . z_k)
/// ```
///
/// evaluated at `beta_eval = (1 + beta_min) / 2`. The double sum collapses
/// to `sum_k (zeta . z_k) * (grad_ki - grad_k . p)` with
/// `zeta = beta*z_i + (1-beta)*z_j` and `p = softmax(W^T zeta)`.
pub fn mixup_gain_matrix(
    m: &LinearClassifier,
    z: &ClassCentroids,
    grad: &MetricGradient,
    cfg: &TrainConfig,
) -> Result<MixupGainMatrix> {
    let k = m.k();
    if z.dim() != m.dim() || z.k() != k {
        return Err(Error::DimMismatch("centroids vs classifier".into()));
    }
    if grad.d_psi_d_ctilde.rows() != k || grad.d_psi_d_ctilde.cols() != k {
        return Err(Error::DimMismatch("gradient vs classifier".into()));
    }
    let beta = cfg.beta_eval();
    let mut g = Mat::zeros(k, k);
    let mut zeta = vec![0.0; m.dim()];
    for i in 0..k {
        for j in 0..k {
            for (t, (&a, &b)) in z.centroid(i).iter().zip(z.centroid(j)).enumerate() {
                zeta[t] = beta * a + (1.0 - beta) * b;
            }
            let mut p = m.logits(&zeta);
            mat::softmax_inplace(&mut p);
            let mut total = 0.0;
            for kk in 0..k {
                let grad_row = grad.d_psi_d_ctilde.row(kk);
                let proj = mat::dot(&zeta, z.centroid(kk));
                total += proj * (grad_row[i] - mat::dot(grad_row, &p));
            }
            g[(i, j)] = total;
        }
    }
    MixupGainMatrix::new(g)
}

/// Mixup-pair sampling strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Uniform over all K^2 pairs.
    Uniform,
    /// One-hot at the argmax gain.
    Greedy,
    /// Scaled softmax of the gain matrix with temperature `s`, negative
    /// gains masked out.
    SelMix(f64),
}

/// A distribution over (i, j) class pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupPolicy {
    p: Mat,
    kind: PolicyKind,
}

impl MixupPolicy {
    #[inline]
    pub fn probs(&self) -> &Mat {
        &self.p
    }

    #[inline]
    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Fraction of pairs with zero sampling probability.
    pub fn masked_fraction(&self) -> f64 {
        let zeros = self.p.data().iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.p.data().len() as f64
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let k = self.p.cols();
        for (idx, &v) in self.p.data().iter().enumerate() {
            acc += v;
            if u < acc {
                return (idx / k, idx % k);
            }
        }
        (k - 1, k - 1)
    }
}

/// SelMix distribution: pairs with negative gain get probability exactly 0,
/// the rest get `softmax(s * g)` renormalized. If every gain is negative the
/// policy falls back to uniform over all K^2 pairs.
pub fn selmix_distribution(g: &MixupGainMatrix, s: f64) -> MixupPolicy {
    let k = g.entries().rows();
    let n = k * k;
    let data = g.entries().data();
    let keep: Vec<usize> = (0..n).filter(|&idx| data[idx] >= 0.0).collect();
    let mut p = Mat::zeros(k, k);
    if keep.is_empty() {
        for v in p.data_mut() {
            *v = 1.0 / n as f64;
        }
    } else {
        let max = keep.iter().map(|&idx| s * data[idx]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &idx in &keep {
            let e = libm::exp(s * data[idx] - max);
            p.data_mut()[idx] = e;
            sum += e;
        }
        for &idx in &keep {
            p.data_mut()[idx] /= sum;
        }
    }
    MixupPolicy { p, kind: PolicyKind::SelMix(s) }
}

/// Dispatch over the three policy kinds.
pub fn policy_distribution(g: &MixupGainMatrix, kind: PolicyKind) -> MixupPolicy {
    let k = g.entries().rows();
    match kind {
        PolicyKind::SelMix(s) => selmix_distribution(g, s),
        PolicyKind::Uniform => {
            let mut p = Mat::zeros(k, k);
            let u = 1.0 / (k * k) as f64;
            for v in p.data_mut() {
                *v = u;
            }
            MixupPolicy { p, kind }
        }
        PolicyKind::Greedy => {
            let mut p = Mat::zeros(k, k);
            let (i, j) = g.entries().argmax();
            p[(i, j)] = 1.0;
            MixupPolicy { p, kind }
        }
    }
}

/// Partition unlabeled samples by predicted class. Empty partitions are
/// allowed; the training loop resamples around them.
pub fn refresh_pseudolabels(
    m: &LinearClassifier,
    unlabeled: &FeatureMatrix,
) -> Result<Vec<Vec<usize>>> {
    if unlabeled.n() == 0 {
        return Err(Error::InvalidInput("empty unlabeled set".into()));
    }
    let preds = predict_labels(m, unlabeled)?;
    let mut parts = vec![Vec::new(); m.k()];
    for (idx, &y) in preds.iter().enumerate() {
        parts[y].push(idx);
    }
    Ok(parts)
}

/// Per-cycle training record.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Objective value (soft form for Lagrangian metrics).
    pub metric: f64,
    pub mean_recall: f64,
    pub min_recall: f64,
    pub recalls: Vec<f64>,
    pub coverages: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gain: Mat,
    pub gain_max: f64,
    pub gain_argmax: (usize, usize),
    pub masked_fraction: f64,
    /// Counts of (i, j) pairs sampled during this cycle.
    pub pair_counts: Mat,
    /// SGD steps skipped because a sampled partition stayed empty.
    pub skipped_steps: usize,
    /// Fraction of the unlabeled batch passing the KL threshold (CSST only).
    pub mask_accept_rate: Option<f64>,
}

/// Append-only trace of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTrace {
    pub records: Vec<CycleRecord>,
    pub warnings: Vec<String>,
}

/// Whether the second mixup endpoint comes from pseudo-labeled or labeled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Supervised,
    SemiSupervised,
}

/// SelMix fine-tuning: per cycle, evaluate the validation confusion matrix,
/// update the Lagrange multipliers, recompute gradient/gain/policy, then run
/// `steps_per_cycle` SGD steps on mixup batches sampled from the policy.
/// Pseudo-labels refresh once per cycle after the SGD block. Deterministic
/// for a fixed seed.
pub fn finetune(
    data: &DatasetBundle,
    m0: &LinearClassifier,
    spec: &MetricSpec,
    cfg: &TrainConfig,
    policy_kind: PolicyKind,
    mode: TrainMode,
) -> Result<(LinearClassifier, PolicyTrace)> {
    let k = m0.k();
    data.validate(k)?;
    let labeled_parts = label_partitions(&data.labeled, k);
    let centroids = class_centroids(&data.val, k)?;
    let val_labels = data.val.labels().unwrap().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = m0.clone();
    let mut trace = PolicyTrace::default();

    let mut pseudo_parts = match mode {
        TrainMode::SemiSupervised => {
            let unlabeled = data
                .unlabeled
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("semi-supervised mode needs unlabeled data".into()))?;
            Some(refresh_pseudolabels(&model, unlabeled)?)
        }
        TrainMode::Supervised => None,
    };

    for cycle in 1..=cfg.cycles {
        let preds = predict_labels(&model, &data.val)?;
        let c = ConfusionMatrix::from_predictions(&val_labels, &preds, k)?;
        let (recalls, coverages) = recalls_and_coverages(&c)?;
        let lam = spec.update_lagrange(&recalls, &coverages);
        let metric = metric_value(spec, &c, &lam)?;
        let grad = metric_grad_unconstrained(spec, &c, &lam)?;
        let gains = mixup_gain_matrix(&model, &centroids, &grad, cfg)?.normalized();
        let policy = policy_distribution(&gains, policy_kind);

        let mut pair_counts = Mat::zeros(k, k);
        let mut skipped_steps = 0;
        for _ in 0..cfg.steps_per_cycle {
            let batch_idx = sample_batch(
                &policy,
                &labeled_parts,
                pseudo_parts.as_deref().unwrap_or(&labeled_parts),
                cfg,
                &mut rng,
                &mut pair_counts,
            );
            if batch_idx.is_empty() {
                skipped_steps += 1;
                continue;
            }
            let second_source: &FeatureMatrix = match mode {
                TrainMode::SemiSupervised => data.unlabeled.as_ref().unwrap(),
                TrainMode::Supervised => &data.labeled,
            };
            let batch: Vec<MixupSample<'_>> = batch_idx
                .iter()
                .map(|&(i1, i2, y, beta)| MixupSample {
                    f1: data.labeled.row(i1),
                    f2: second_source.row(i2),
                    y,
                    beta,
                })
                .collect();
            model = sgd_mixup_step(&model, &batch, cfg)?;
        }

        if let Some(parts) = pseudo_parts.as_mut() {
            *parts = refresh_pseudolabels(&model, data.unlabeled.as_ref().unwrap())?;
        }

        let gain_max = gains.entries().max_abs();
        trace.records.push(CycleRecord {
            cycle,
            metric,
            mean_recall: recalls.iter().sum::<f64>() / k as f64,
            min_recall: recalls.iter().cloned().fold(f64::INFINITY, f64::min),
            recalls,
            coverages,
            lambda: lam.as_slice().to_vec(),
            gain_argmax: gains.entries().argmax(),
            gain: gains.entries().clone(),
            gain_max,
            masked_fraction: policy.masked_fraction(),
            pair_counts,
            skipped_steps,
            mask_accept_rate: None,
        });
    }
    Ok((model, trace))
}

pub(crate) fn label_partitions(fm: &FeatureMatrix, k: usize) -> Vec<Vec<usize>> {
    let mut parts = vec![Vec::new(); k];
    if let Some(labels) = fm.labels() {
        for (idx, &y) in labels.iter().enumerate() {
            parts[y].push(idx);
        }
    }
    parts
}

/// Sample `batch_size` mixup pairs; a pair whose class partition is empty is
/// resampled a bounded number of times, then dropped.
fn sample_batch<R: Rng>(
    policy: &MixupPolicy,
    first_parts: &[Vec<usize>],
    second_parts: &[Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut R,
    pair_counts: &mut Mat,
) -> Vec<(usize, usize, usize, f64)> {
    let mut out = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let mut chosen = None;
        for _ in 0..PAIR_RESAMPLE_RETRIES {
            let (y1, y2) = policy.sample(rng);
            if first_parts[y1].is_empty() || second_parts[y2].is_empty() {
                continue;
            }
            chosen = Some((y1, y2));
            break;
        }
        let Some((y1, y2)) = chosen else { continue };
        pair_counts[(y1, y2)] += 1.0;
        let i1 = first_parts[y1][rng.random_range(0..first_parts[y1].len())];
        let i2 = second_parts[y2][rng.random_range(0..second_parts[y2].len())];
        let beta = cfg.beta_min + rng.random::<f64>() * (1.0 - cfg.beta_min);
        out.push((i1, i2, y1, beta));
    }
    out
}

/// Regret comparison of the Hedge-form SelMix policy against the best fixed
/// pair on a bounded gain stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub avg_gain_selmix: f64,
    pub best_nonadaptive_gain: f64,
    /// Theoretical bound `2 ln(K) / (s T)` on the average-gain deficit.
    pub bound: f64,
    pub holds: bool,
}

/// Runs the mirror-descent (Hedge-form) SelMix policy
/// `p^(t) = softmax(s * sum_{tau<=t} G^(tau))` on a stream of normalized
/// gain matrices and compares its average gain against the best fixed pair.
pub fn simulate_policies(gain_stream: &[Mat], s: f64) -> Result<RegretReport> {
    if gain_stream.is_empty() {
        return Err(Error::InvalidInput("empty gain stream".into()));
    }
    if s <= 0.0 {
        return Err(Error::InvalidInput("temperature s must be > 0".into()));
    }
    let k = gain_stream[0].rows();
    for g in gain_stream {
        if g.rows() != k || g.cols() != k {
            return Err(Error::DimMismatch("gain stream shapes differ".into()));
        }
        if g.data().iter().any(|&v| !v.is_finite() || libm::fabs(v) > 1.0 + 1e-12) {
            return Err(Error::UnnormalizedGainStream);
        }
    }
    let t_total = gain_stream.len() as f64;
    let n = k * k;
    let mut cum = vec![0.0; n];
    let mut selmix_avg = 0.0;
    let mut fixed_avg = vec![0.0; n];
    for g in gain_stream {
        for (c, &v) in cum.iter_mut().zip(g.data()) {
            *c += v;
        }
        let mut p: Vec<f64> = cum.iter().map(|&c| s * c).collect();
        mat::softmax_inplace(&mut p);
        selmix_avg += mat::dot(&p, g.data()) / t_total;
        for (f, &v) in fixed_avg.iter_mut().zip(g.data()) {
            *f += v / t_total;
        }
    }
    let best = fixed_avg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound = 2.0 * libm::log(k as f64) / (s * t_total);
    Ok(RegretReport {
        avg_gain_selmix: selmix_avg,
        best_nonadaptive_gain: best,
        bound,
        holds: best - selmix_avg <= bound + 1e-9,
    })
}
