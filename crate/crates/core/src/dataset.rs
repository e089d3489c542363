//! Dataset bundle shared by the SelMix and CSST training loops.

use crate::linear::FeatureMatrix;
use crate::{Error, Result};

/// Labeled/unlabeled/validation/test splits. Validation and test are
/// balanced held-out sets containing every class.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub labeled: FeatureMatrix,
    pub unlabeled: Option<FeatureMatrix>,
    pub val: FeatureMatrix,
    pub test: FeatureMatrix,
}

impl DatasetBundle {
    /// Checks that labeled/val/test carry labels and that val covers every
    /// class in `[0, k)`.
    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, fm) in [("labeled", &self.labeled), ("val", &self.val), ("test", &self.test)] {
            let labels =
                fm.labels().ok_or_else(|| Error::InvalidInput(alloc::format!("{name} split needs labels")))?;
            if labels.iter().any(|&y| y >= k) {
                return Err(Error::InvalidInput(alloc::format!("{name} label out of range")));
            }
        }
        let mut seen = alloc::vec![false; k];
        for &y in self.val.labels().unwrap() {
            seen[y] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::DegeneratePrior);
        }
        Ok(())
    }
}
