//! Versioned JSON run reports and the CSV metric table.

use ndopt_core::linear::{predict_labels, FeatureMatrix, LinearClassifier};
use ndopt_core::metrics::{metric_value, ConfusionMatrix, MetricKind, MetricSpec};
use ndopt_core::selmix::{CycleRecord, PolicyTrace};
use ndopt_core::Result;
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Evaluation metrics of one model on one labeled split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSummary {
    pub mean_recall: f64,
    pub min_recall: f64,
    pub hmean: f64,
    pub gmean: f64,
    pub min_coverage: f64,
    pub recalls: Vec<f64>,
    pub coverages: Vec<f64>,
}

/// Evaluates a classifier on a labeled split.
pub fn eval_summary(m: &LinearClassifier, set: &FeatureMatrix, k: usize) -> Result<EvalSummary> {
    let labels = set.labels().expect("eval set must be labeled");
    let preds = predict_labels(m, set)?;
    let c = ConfusionMatrix::from_predictions(labels, &preds, k)?;
    let recalls = c.recalls()?;
    let coverages = c.coverages();
    let hspec = MetricSpec::new(MetricKind::HMean);
    let gspec = MetricSpec::new(MetricKind::GMean);
    Ok(EvalSummary {
        mean_recall: recalls.iter().sum::<f64>() / k as f64,
        min_recall: recalls.iter().cloned().fold(f64::INFINITY, f64::min),
        hmean: metric_value(&hspec, &c, &hspec.initial_lagrange(k))?,
        gmean: metric_value(&gspec, &c, &gspec.initial_lagrange(k))?,
        min_coverage: coverages.iter().cloned().fold(f64::INFINITY, f64::min),
        recalls,
        coverages,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CycleReport {
    pub cycle: usize,
    pub metric: f64,
    pub mean_recall: f64,
    pub min_recall: f64,
    pub recalls: Vec<f64>,
    pub coverages: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gain_max: f64,
    pub gain_argmax: (usize, usize),
    pub masked_fraction: f64,
    pub skipped_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_accept_rate: Option<f64>,
    /// Full gain matrix, row-major; present only with --dump-gains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
}

impl CycleReport {
    pub fn from_record(r: &CycleRecord, dump_gains: bool) -> Self {
        CycleReport {
            cycle: r.cycle,
            metric: r.metric,
            mean_recall: r.mean_recall,
            min_recall: r.min_recall,
            recalls: r.recalls.clone(),
            coverages: r.coverages.clone(),
            lambda: r.lambda.clone(),
            gain_max: r.gain_max,
            gain_argmax: r.gain_argmax,
            masked_fraction: r.masked_fraction,
            skipped_steps: r.skipped_steps,
            mask_accept_rate: r.mask_accept_rate,
            gain: dump_gains
                .then(|| (0..r.gain.rows()).map(|i| r.gain.row(i).to_vec()).collect()),
        }
    }
}

/// Top-level run report written by the training commands.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub objective: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    pub params: serde_json::Value,
    pub warnings: Vec<String>,
    pub cycles: Vec<CycleReport>,
    pub initial_val: EvalSummary,
    pub final_val: EvalSummary,
    pub final_test: EvalSummary,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        seed: u64,
        objective: &str,
        policy: Option<&str>,
        params: serde_json::Value,
        trace: &PolicyTrace,
        dump_gains: bool,
        initial_val: EvalSummary,
        final_val: EvalSummary,
        final_test: EvalSummary,
    ) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            objective: objective.to_string(),
            policy: policy.map(str::to_string),
            params,
            warnings: trace.warnings.clone(),
            cycles: trace.records.iter().map(|r| CycleReport::from_record(r, dump_gains)).collect(),
            initial_val,
            final_val,
            final_test,
        }
    }
}

/// Two-line CSV with the headline metric columns.
pub fn metric_table_csv(s: &EvalSummary) -> String {
    format!(
        "mean_recall,min_recall,hmean,gmean,min_coverage\n{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        s.mean_recall, s.min_recall, s.hmean, s.gmean, s.min_coverage
    )
}

/// Human-readable metric table printed after a run.
pub fn metric_table_text(label: &str, s: &EvalSummary) -> String {
    format!(
        "{label}: mean_recall={:.4} min_recall={:.4} hmean={:.4} gmean={:.4} min_coverage={:.4}",
        s.mean_recall, s.min_recall, s.hmean, s.gmean, s.min_coverage
    )
}
