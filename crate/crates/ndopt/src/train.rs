//! Plain softmax cross-entropy pretraining used to initialize the
//! fine-tuning and self-training runs.

use ndopt_core::linear::{FeatureMatrix, LinearClassifier};
use ndopt_core::mat::{self, Mat};
use ndopt_core::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ErmConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        ErmConfig { eta: 0.1, batch_size: 64, steps: 500, seed: 0 }
    }
}

/// Minibatch SGD on the empirical softmax cross-entropy. Batches are drawn
/// uniformly, so the result reflects the labeled class imbalance.
pub fn erm_train(labeled: &FeatureMatrix, k: usize, cfg: &ErmConfig) -> Result<LinearClassifier> {
    let labels = labeled
        .labels()
        .ok_or_else(|| Error::InvalidInput("erm_train needs labels".to_string()))?;
    if labeled.n() == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let d = labeled.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Mat::zeros(d, k);
    for _ in 0..cfg.steps {
        let mut grad = Mat::zeros(d, k);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..labeled.n());
            let x = labeled.row(i);
            let mut p = vec![0.0; k];
            for (l, pl) in p.iter_mut().enumerate() {
                *pl = (0..d).map(|r| w[(r, l)] * x[r]).sum();
            }
            mat::softmax_inplace(&mut p);
            p[labels[i]] -= 1.0;
            for (l, &pl) in p.iter().enumerate() {
                for (r, &xr) in x.iter().enumerate() {
                    grad[(r, l)] += pl * xr / cfg.batch_size as f64;
                }
            }
        }
        grad.scale(-cfg.eta);
        let mut new_w = w.clone();
        new_w.axpy(1.0, &grad)?;
        w = new_w;
    }
    LinearClassifier::new(w)
}
