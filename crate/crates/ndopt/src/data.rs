//! Synthetic long-tailed Gaussian dataset generation.

use ndopt_core::dataset::DatasetBundle;
use ndopt_core::linear::FeatureMatrix;
use ndopt_core::oracle::sample_normal;
use ndopt_core::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::formats::FormatError;

/// Parameters of the synthetic benchmark: `k` unit-covariance Gaussian
/// classes in `d` dimensions with exponentially decaying labeled counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    /// Head-class labeled count.
    pub n1: usize,
    /// Labeled imbalance ratio (head count / tail count), >= 1.
    pub rho_l: f64,
    /// Unlabeled imbalance ratio; < 1 inverts the distribution.
    pub rho_u: f64,
    /// Head-class unlabeled count; 0 disables the unlabeled split.
    pub m1: usize,
    /// Distance between class means, in units of the noise std.
    pub sep: f64,
    pub seed: u64,
    /// Balanced held-out sizes, per class.
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            k: 5,
            d: 10,
            n1: 1000,
            rho_l: 100.0,
            rho_u: 100.0,
            m1: 0,
            sep: 2.0,
            seed: 0,
            val_per_class: 25,
            test_per_class: 25,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), FormatError> {
        if self.k < 2 || self.d == 0 || self.n1 == 0 {
            return Err(FormatError::Invalid("need k >= 2, d >= 1, n1 >= 1".into()));
        }
        if self.rho_l < 1.0 {
            return Err(FormatError::Invalid("rho_l must be >= 1".into()));
        }
        if self.rho_u <= 0.0 {
            return Err(FormatError::Invalid("rho_u must be > 0".into()));
        }
        if !(self.sep.is_finite() && self.sep > 0.0) {
            return Err(FormatError::Invalid("sep must be > 0".into()));
        }
        if self.val_per_class < 20 || self.test_per_class < 20 {
            return Err(FormatError::Invalid("val/test need >= 20 samples per class".into()));
        }
        if exponential_profile(self.n1, self.rho_l, self.k).contains(&0) {
            return Err(FormatError::Invalid("tail class rounds to zero samples: increase n1".into()));
        }
        Ok(())
    }
}

/// Per-class counts `round(n1 * rho^{-(k-1)/(K-1)})`.
pub fn exponential_profile(n1: usize, rho: f64, k: usize) -> Vec<usize> {
    (0..k)
        .map(|i| {
            let decay = rho.powf(-(i as f64) / (k as f64 - 1.0));
            (n1 as f64 * decay).round() as usize
        })
        .collect()
}

/// Draws the labeled/unlabeled/val/test splits. Class-conditionals are
/// unit-covariance Gaussians; means sit at `sep * e_c` when k <= d, else on
/// random unit directions. A constant-1 bias feature is appended, so output
/// rows have `d + 1` columns. Bitwise-reproducible for a fixed spec.
pub fn gen_longtail_gaussians(spec: &SyntheticSpec) -> Result<DatasetBundle, FormatError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);

    let labeled_counts = exponential_profile(spec.n1, spec.rho_l, spec.k);
    let labeled = draw_split(spec, &means, &labeled_counts, &mut rng, true)?;
    let unlabeled = if spec.m1 > 0 {
        let counts = exponential_profile(spec.m1, spec.rho_u, spec.k);
        if counts.contains(&0) {
            return Err(FormatError::Invalid("unlabeled tail rounds to zero: increase m1".into()));
        }
        Some(draw_split(spec, &means, &counts, &mut rng, false)?)
    } else {
        None
    };
    let val = draw_split(spec, &means, &vec![spec.val_per_class; spec.k], &mut rng, true)?;
    let test = draw_split(spec, &means, &vec![spec.test_per_class; spec.k], &mut rng, true)?;

    Ok(DatasetBundle { labeled, unlabeled, val, test })
}

fn class_means(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.k)
        .map(|c| {
            let mut m = vec![0.0; spec.d];
            if spec.k <= spec.d {
                m[c] = spec.sep;
            } else {
                let mut norm2 = 0.0;
                for v in &mut m {
                    *v = sample_normal(rng);
                    norm2 += *v * *v;
                }
                let scale = spec.sep / norm2.sqrt();
                for v in &mut m {
                    *v *= scale;
                }
            }
            m
        })
        .collect()
}

fn draw_split(
    spec: &SyntheticSpec,
    means: &[Vec<f64>],
    counts: &[usize],
    rng: &mut ChaCha8Rng,
    labeled: bool,
) -> Result<FeatureMatrix, FormatError> {
    let n: usize = counts.iter().sum();
    let cols = spec.d + 1;
    let mut x = Mat::zeros(n, cols);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let r = x.row_mut(row);
            for (dim, &mu) in means[c].iter().enumerate() {
                r[dim] = mu + sample_normal(rng);
            }
            r[spec.d] = 1.0;
            labels.push(c);
            row += 1;
        }
    }
    FeatureMatrix::new(x, if labeled { Some(labels) } else { None })
        .map_err(|e| FormatError::Invalid(e.to_string()))
}
