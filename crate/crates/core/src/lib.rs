//! Optimization of non-decomposable classification metrics (worst-case
//! recall, H-mean, G-mean, coverage-constrained mean recall) for linear
//! softmax classifiers over fixed feature embeddings.
//!
//! The crate is split into:
//!
//! - [`metrics`]: confusion matrices, the row-wise softmax
//!   reparametrization, metric values, analytic metric gradients, and
//!   Lagrange-multiplier updates;
//! - [`linear`]: linear softmax classifiers, feature-space mixup losses,
//!   class centroids, and mixup directional vectors;
//! - [`selmix`]: gain matrices, the selective-mixup sampling distribution,
//!   the fine-tuning loop, and policy/regret simulation;
//! - [`csst`]: cost-sensitive self-training losses (hybrid / logit-adjusted,
//!   weighted consistency, KL thresholding) and the alternating training
//!   loop;
//! - [`oracle`]: independent finite-difference and brute-force checks used
//!   by the test suites and the `gain-check` CLI command.
//!
//! All operations are pure functions of their inputs; training loops are
//! deterministic for a fixed seed. The crate is `no_std` (with `alloc`);
//! I/O and file formats live in the companion `ndopt` crate.

#![no_std]

extern crate alloc;

pub mod csst;
pub mod dataset;
mod error;
pub mod linear;
pub mod mat;
pub mod metrics;
pub mod oracle;
pub mod selmix;

pub use error::{Error, Result};
pub use mat::Mat;
