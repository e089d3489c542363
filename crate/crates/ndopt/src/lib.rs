//! Dataset generation, file formats, run reports, and supervised
//! pretraining around the `ndopt-core` optimizers.

pub mod config;
pub mod data;
pub mod formats;
pub mod report;
pub mod train;

pub use data::{gen_longtail_gaussians, SyntheticSpec};
pub use formats::{read_checkpoint, read_csv, read_features, write_checkpoint, write_features};
pub use report::{eval_summary, EvalSummary, RunReport};
pub use train::erm_train;
