//! Linear softmax classifier over fixed feature embeddings: prediction,
//! softmax cross-entropy, feature-space mixup loss, class centroids, and
//! mixup directional vectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::mat::{self, Mat};
use crate::{Error, Result};

/// N x d feature matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    x: Mat,
    labels: Option<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn new(x: Mat, labels: Option<Vec<usize>>) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if x.cols() == 0 {
            return Err(Error::InvalidInput("feature dim must be >= 1".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::DimMismatch("labels length vs rows".into()));
            }
        }
        Ok(FeatureMatrix { x, labels })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn features(&self) -> &Mat {
        &self.x
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    #[inline]
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}

/// Linear classifier `h(x) = W^T x` with weight matrix W of shape d x K.
/// A bias, when wanted, is a constant appended feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    w: Mat,
}

impl LinearClassifier {
    pub fn new(w: Mat) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::NonFinite("classifier weights".into()));
        }
        Ok(LinearClassifier { w })
    }

    pub fn zeros(dim: usize, k: usize) -> Self {
        LinearClassifier { w: Mat::zeros(dim, k) }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.w.cols()
    }

    #[inline]
    pub fn weights(&self) -> &Mat {
        &self.w
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut Mat {
        &mut self.w
    }

    /// Logits `W^T f` for a single feature vector.
    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; k];
        for (r, &fi) in f.iter().enumerate() {
            let row = self.w.row(r);
            for j in 0..k {
                out[j] += row[j] * fi;
            }
        }
        out
    }
}

/// Softmax probabilities for every sample; rows are simplex vectors.
pub fn predict_probs(m: &LinearClassifier, x: &FeatureMatrix) -> Result<Mat> {
    if x.dim() != m.dim() {
        return Err(Error::DimMismatch(format!(
            "features have dim {}, classifier expects {}",
            x.dim(),
            m.dim()
        )));
    }
    let mut out = Mat::zeros(x.n(), m.k());
    for i in 0..x.n() {
        let mut logits = m.logits(x.row(i));
        mat::softmax_inplace(&mut logits);
        out.row_mut(i).copy_from_slice(&logits);
    }
    Ok(out)
}

/// Hard predictions; argmax ties resolve to the lowest class index.
pub fn predict_labels(m: &LinearClassifier, x: &FeatureMatrix) -> Result<Vec<usize>> {
    if x.dim() != m.dim() {
        return Err(Error::DimMismatch("feature dim".into()));
    }
    Ok((0..x.n()).map(|i| mat::argmax(&m.logits(x.row(i)))).collect())
}

/// Per-class means of labeled validation features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCentroids {
    z: Mat,
    source_counts: Vec<usize>,
}

impl ClassCentroids {
    #[inline]
    pub fn k(&self) -> usize {
        self.z.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    #[inline]
    pub fn centroid(&self, k: usize) -> &[f64] {
        self.z.row(k)
    }

    #[inline]
    pub fn counts(&self) -> &[usize] {
        &self.source_counts
    }
}

/// Centroid `z_k` = mean of class-k features. Every class in `[0, k)` must
/// be present.
pub fn class_centroids(val: &FeatureMatrix, k: usize) -> Result<ClassCentroids> {
    let labels = val.labels().ok_or_else(|| Error::InvalidInput("centroids need labels".into()))?;
    let mut z = Mat::zeros(k, val.dim());
    let mut counts = vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidInput("label out of range".into()));
        }
        counts[y] += 1;
        let row = val.row(i);
        let acc = z.row_mut(y);
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    for (y, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::CentroidUndefined(y));
        }
        let inv = 1.0 / count as f64;
        for v in z.row_mut(y) {
            *v *= inv;
        }
    }
    Ok(ClassCentroids { z, source_counts: counts })
}

/// Softmax cross-entropy of the mixed feature `beta*f1 + (1-beta)*f2`
/// against label `y`.
pub fn mixup_loss(m: &LinearClassifier, f1: &[f64], f2: &[f64], y: usize, beta: f64) -> Result<f64> {
    if f1.len() != m.dim() || f2.len() != m.dim() {
        return Err(Error::DimMismatch("mixup feature dim".into()));
    }
    let mixed: Vec<f64> = f1.iter().zip(f2).map(|(&a, &b)| beta * a + (1.0 - beta) * b).collect();
    let mut logits = m.logits(&mixed);
    mat::log_softmax_inplace(&mut logits);
    Ok(-logits[y])
}

/// Negative gradient of the centroid mixup loss with respect to W.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupDirection {
    pub v: Mat,
    pub pair: (usize, usize),
}

/// Direction `V_ij = -d L^mix_(i,j) / dW`, evaluated at the mixed centroid
/// `zeta = beta*z_i + (1-beta)*z_j` with label `i`: column l of V equals
/// `(delta_{l,i} - p_l) * zeta` where `p = softmax(W^T zeta)`.
pub fn mixup_direction(
    m: &LinearClassifier,
    z: &ClassCentroids,
    i: usize,
    j: usize,
    beta_eval: f64,
) -> Result<MixupDirection> {
    if z.dim() != m.dim() || z.k() != m.k() {
        return Err(Error::DimMismatch("centroids vs classifier".into()));
    }
    let zeta: Vec<f64> = z
        .centroid(i)
        .iter()
        .zip(z.centroid(j))
        .map(|(&a, &b)| beta_eval * a + (1.0 - beta_eval) * b)
        .collect();
    let mut p = m.logits(&zeta);
    mat::softmax_inplace(&mut p);
    let mut v = Mat::zeros(m.dim(), m.k());
    for l in 0..m.k() {
        let coeff = if l == i { 1.0 - p[l] } else { -p[l] };
        for (r, &zr) in zeta.iter().enumerate() {
            v[(r, l)] = coeff * zr;
        }
    }
    Ok(MixupDirection { v, pair: (i, j) })
}

/// One mixup sample: two feature views, the kept label, and the mix weight.
#[derive(Debug, Clone, Copy)]
pub struct MixupSample<'a> {
    pub f1: &'a [f64],
    pub f2: &'a [f64],
    pub y: usize,
    pub beta: f64,
}

/// Training hyperparameters for the SelMix fine-tuning loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub beta_min: f64,
    pub batch_size: usize,
    /// SGD steps per validation cycle.
    pub steps_per_cycle: usize,
    /// Number of validation cycles.
    pub cycles: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.1,
            beta_min: 0.6,
            batch_size: 32,
            steps_per_cycle: 50,
            cycles: 20,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Evaluation point for directions and gains: the mean of U[beta_min, 1].
    pub fn beta_eval(&self) -> f64 {
        (1.0 + self.beta_min) / 2.0
    }
}

/// One SGD step on the mean mixup loss of a batch:
/// `W <- W - eta * (mean gradient + weight_decay * W)`.
pub fn sgd_mixup_step(
    m: &LinearClassifier,
    batch: &[MixupSample<'_>],
    cfg: &TrainConfig,
) -> Result<LinearClassifier> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (d, k) = (m.dim(), m.k());
    let mut grad = Mat::zeros(d, k);
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        if s.f1.len() != d || s.f2.len() != d {
            return Err(Error::DimMismatch("batch feature dim".into()));
        }
        let mixed: Vec<f64> =
            s.f1.iter().zip(s.f2).map(|(&a, &b)| s.beta * a + (1.0 - s.beta) * b).collect();
        let mut p = m.logits(&mixed);
        mat::softmax_inplace(&mut p);
        // d SCE / d W_{r,l} = (p_l - delta_{l,y}) * mixed_r
        for l in 0..k {
            let coeff = (p[l] - if l == s.y { 1.0 } else { 0.0 }) * scale;
            if coeff == 0.0 {
                continue;
            }
            for (r, &xr) in mixed.iter().enumerate() {
                grad[(r, l)] += coeff * xr;
            }
        }
    }
    let mut w = m.weights().clone();
    if cfg.weight_decay != 0.0 {
        grad.axpy(cfg.weight_decay, &w)?;
    }
    w.axpy(-cfg.eta, &grad)?;
    LinearClassifier::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_predict_uniform() {
        let m = LinearClassifier::zeros(3, 4);
        let x = FeatureMatrix::new(Mat::from_rows(&[&[1.0, -2.0, 0.5]]).unwrap(), None).unwrap();
        let p = predict_probs(&m, &x).unwrap();
        for j in 0..4 {
            assert!((p[(0, j)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_logit_wins() {
        let mut w = Mat::zeros(3, 4);
        w[(0, 2)] = 10.0;
        let m = LinearClassifier::new(w).unwrap();
        let x = FeatureMatrix::new(Mat::from_rows(&[&[1.0, 0.0, 0.0]]).unwrap(), None).unwrap();
        let p = predict_probs(&m, &x).unwrap();
        assert!(p[(0, 2)] > 0.99);
    }

    #[test]
    fn batched_prediction_matches_per_row() {
        let mut w = Mat::zeros(2, 3);
        w[(0, 0)] = 0.3;
        w[(1, 2)] = -0.7;
        let m = LinearClassifier::new(w).unwrap();
        let rows: [&[f64]; 2] = [&[1.0, 2.0], &[-0.5, 0.25]];
        let batch = FeatureMatrix::new(Mat::from_rows(&rows).unwrap(), None).unwrap();
        let pb = predict_probs(&m, &batch).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = FeatureMatrix::new(Mat::from_rows(&[r]).unwrap(), None).unwrap();
            let ps = predict_probs(&m, &single).unwrap();
            for j in 0..3 {
                assert_eq!(pb[(i, j)], ps[(0, j)]);
            }
        }
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let m = LinearClassifier::zeros(3, 2);
        let x = FeatureMatrix::new(Mat::from_rows(&[&[1.0, 2.0]]).unwrap(), None).unwrap();
        assert!(predict_probs(&m, &x).is_err());
    }

    #[test]
    fn centroids_of_singletons_are_the_samples() {
        let x = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let f = FeatureMatrix::new(x, Some(vec![0, 1])).unwrap();
        let z = class_centroids(&f, 2).unwrap();
        assert_eq!(z.centroid(0), &[1.0, 2.0]);
        assert_eq!(z.centroid(1), &[3.0, 4.0]);
        assert_eq!(z.counts(), &[1, 1]);
    }

    #[test]
    fn centroid_is_class_mean() {
        let x = Mat::from_rows(&[&[0.0, 0.0], &[2.0, 2.0], &[5.0, 5.0]]).unwrap();
        let f = FeatureMatrix::new(x, Some(vec![0, 0, 1])).unwrap();
        let z = class_centroids(&f, 2).unwrap();
        assert_eq!(z.centroid(0), &[1.0, 1.0]);
    }

    #[test]
    fn missing_class_centroid_errors() {
        let x = Mat::from_rows(&[&[0.0, 0.0]]).unwrap();
        let f = FeatureMatrix::new(x, Some(vec![0])).unwrap();
        assert_eq!(class_centroids(&f, 2), Err(Error::CentroidUndefined(1)));
    }

    #[test]
    fn mixup_beta_one_is_plain_sce() {
        let mut w = Mat::zeros(2, 3);
        w[(0, 1)] = 1.5;
        w[(1, 0)] = -0.5;
        let m = LinearClassifier::new(w).unwrap();
        let f1 = [1.0, 2.0];
        let f2 = [-3.0, 0.5];
        let l_mix = mixup_loss(&m, &f1, &f2, 1, 1.0).unwrap();
        let mut logits = m.logits(&f1);
        mat::log_softmax_inplace(&mut logits);
        assert!((l_mix + logits[1]).abs() < 1e-14);
    }

    #[test]
    fn zero_weights_give_ln_k_loss() {
        let m = LinearClassifier::zeros(2, 5);
        let l = mixup_loss(&m, &[1.0, 2.0], &[0.0, -1.0], 3, 0.7).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_endpoints_make_loss_beta_independent() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 0)] = 0.4;
        let m = LinearClassifier::new(w).unwrap();
        let f = [1.0, -1.0];
        let a = mixup_loss(&m, &f, &f, 0, 0.6).unwrap();
        let b = mixup_loss(&m, &f, &f, 0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_direction_is_half_zeta() {
        let m = LinearClassifier::zeros(2, 2);
        let x = Mat::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        let z = class_centroids(&FeatureMatrix::new(x, Some(vec![0, 1])).unwrap(), 2).unwrap();
        let dir = mixup_direction(&m, &z, 0, 1, 0.5).unwrap();
        // zeta = (1, 1); p = (0.5, 0.5)
        assert!((dir.v[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((dir.v[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((dir.v[(0, 1)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn near_onehot_probability_zeroes_direction() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 0)] = 100.0;
        w[(0, 1)] = -100.0;
        let m = LinearClassifier::new(w).unwrap();
        let x = Mat::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap();
        let z = class_centroids(&FeatureMatrix::new(x, Some(vec![0, 1])).unwrap(), 2).unwrap();
        let dir = mixup_direction(&m, &z, 0, 1, 0.8).unwrap();
        assert!(dir.v.max_abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_batch_leaves_weights() {
        // symmetric two-sample batch whose gradients cancel
        let m = LinearClassifier::zeros(1, 2);
        let f = [1.0];
        let batch = [
            MixupSample { f1: &f, f2: &f, y: 0, beta: 1.0 },
            MixupSample { f1: &f, f2: &f, y: 1, beta: 1.0 },
        ];
        let cfg = TrainConfig::default();
        let m2 = sgd_mixup_step(&m, &batch, &cfg).unwrap();
        assert!(m2.weights().max_abs() < 1e-15);
    }

    #[test]
    fn beta_one_step_equals_plain_sce_step() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 0)] = 0.2;
        w[(1, 1)] = -0.3;
        let m = LinearClassifier::new(w).unwrap();
        let f1 = [1.0, 0.5];
        let f2 = [9.0, 9.0]; // ignored at beta = 1
        let cfg = TrainConfig { eta: 0.05, ..TrainConfig::default() };
        let stepped =
            sgd_mixup_step(&m, &[MixupSample { f1: &f1, f2: &f2, y: 0, beta: 1.0 }], &cfg).unwrap();

        // hand SCE gradient on f1
        let mut p = m.logits(&f1);
        mat::softmax_inplace(&mut p);
        for (r, &fr) in f1.iter().enumerate() {
            for (l, &pl) in p.iter().enumerate() {
                let g = (pl - if l == 0 { 1.0 } else { 0.0 }) * fr;
                let expect = m.weights()[(r, l)] - cfg.eta * g;
                assert!((stepped.weights()[(r, l)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batch_gradient_is_linear_at_fixed_weights() {
        let mut w = Mat::zeros(2, 2);
        w[(0, 0)] = 0.2;
        let m = LinearClassifier::new(w).unwrap();
        let f1 = [1.0, 0.5];
        let f2 = [-0.5, 2.0];
        let s = MixupSample { f1: &f1, f2: &f2, y: 1, beta: 0.8 };
        let cfg = TrainConfig { eta: 0.01, ..TrainConfig::default() };
        let once = sgd_mixup_step(&m, &[s], &cfg).unwrap();
        let doubled = sgd_mixup_step(&m, &[s, s], &cfg).unwrap();
        for r in 0..2 {
            for l in 0..2 {
                assert!((once.weights()[(r, l)] - doubled.weights()[(r, l)]).abs() < 1e-14);
            }
        }
    }
}
