//! `ndopt`: synthetic data generation, metric-targeted fine-tuning,
//! cost-sensitive self-training, policy simulation, and gradient checking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndopt_core::csst::{csst_train, default_sigma_aug, SelfTrainConfig};
use ndopt_core::dataset::DatasetBundle;
use ndopt_core::linear::{LinearClassifier, TrainConfig};
use ndopt_core::metrics::{ClassPrior, MetricKind, MetricSpec};
use ndopt_core::oracle::{gain_check, FiniteDiffReport};
use ndopt_core::selmix::{finetune, simulate_policies, PolicyKind, TrainMode};
use ndopt_core::Mat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ndopt::config::ConfigFile;
use ndopt::data::{exponential_profile, gen_longtail_gaussians, SyntheticSpec};
use ndopt::formats::{read_checkpoint, read_features, write_checkpoint, write_features, CheckpointMeta, FormatError};
use ndopt::report::{eval_summary, metric_table_csv, metric_table_text, RunReport};
use ndopt::train::{erm_train, ErmConfig};

#[derive(Parser)]
#[command(name = "ndopt", version, about = "Optimize non-decomposable classification metrics for linear softmax models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed Gaussian benchmark
    GenData(GenDataArgs),
    /// Fine-tune a linear classifier with gain-driven selective mixup
    Finetune(FinetuneArgs),
    /// Cost-sensitive self-training on labeled plus unlabeled data
    Csst(CsstArgs),
    /// Compare the adaptive pair-sampling policy against fixed policies
    SimulatePolicy(SimulatePolicyArgs),
    /// Verify analytic metric gradients against finite differences
    GainCheck(GainCheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    n1: usize,
    #[arg(long, default_value_t = 100.0)]
    rho_l: f64,
    #[arg(long, default_value_t = 100.0)]
    rho_u: f64,
    /// Head-class unlabeled count; 0 skips the unlabeled split
    #[arg(long, default_value_t = 0)]
    m1: usize,
    #[arg(long, default_value_t = 2.0)]
    sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    val_per_class: usize,
    #[arg(long, default_value_t = 25)]
    test_per_class: usize,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Objective {
    Mean,
    MinRecall,
    Gmean,
    Hmean,
    MeanCov,
    HmeanCov,
    MinHt,
    MeanHtCov,
}

impl Objective {
    fn kind(self) -> MetricKind {
        match self {
            Objective::Mean => MetricKind::MeanRecall,
            Objective::MinRecall => MetricKind::MinRecall,
            Objective::Gmean => MetricKind::GMean,
            Objective::Hmean => MetricKind::HMean,
            Objective::MeanCov => MetricKind::MeanRecallCoverage,
            Objective::HmeanCov => MetricKind::HMeanCoverage,
            Objective::MinHt => MetricKind::MinHeadTailRecall,
            Objective::MeanHtCov => MetricKind::MeanRecallHeadTailCoverage,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Objective::Mean => "mean",
            Objective::MinRecall => "min-recall",
            Objective::Gmean => "gmean",
            Objective::Hmean => "hmean",
            Objective::MeanCov => "mean-cov",
            Objective::HmeanCov => "hmean-cov",
            Objective::MinHt => "min-ht",
            Objective::MeanHtCov => "mean-ht-cov",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Policy {
    Selmix,
    Uniform,
    Greedy,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Directory holding labeled.ndm / val.ndm / test.ndm (unlabeled.ndm optional)
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Objective::MinRecall)]
    objective: Objective,
    #[arg(long, value_enum, default_value_t = Policy::Selmix)]
    policy: Policy,
    /// Gain softmax temperature
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    tau_cov: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// SGD steps per cycle
    #[arg(long)]
    steps: Option<usize>,
    /// Number of evaluation cycles
    #[arg(long)]
    cycle: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Use pseudo-labeled unlabeled data for the second mixup endpoint
    #[arg(long, conflicts_with = "sup")]
    semi: bool,
    /// Labeled-only mixup (default)
    #[arg(long)]
    sup: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Include per-cycle gain matrices in the report
    #[arg(long)]
    dump_gains: bool,
    /// Warm-start checkpoint; omitted = supervised pretraining
    #[arg(long)]
    init: Option<PathBuf>,
    /// key = value file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/finetune")]
    out: PathBuf,
}

#[derive(Args)]
struct CsstArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// min-recall, mean-cov, or mean (mean = vanilla self-training, G = I)
    #[arg(long, value_enum, default_value_t = Objective::MinRecall)]
    objective: Objective,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    tau_kl: Option<f64>,
    /// Strong-view noise std; omitted = half the median within-class feature std
    #[arg(long)]
    sigma_aug: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eval_period: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/csst")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StreamDist {
    Constant,
    Random,
    Adversarial,
}

#[derive(Args)]
struct SimulatePolicyArgs {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    t: usize,
    #[arg(long, default_value_t = 10.0)]
    s: f64,
    #[arg(long, default_value_t = 100)]
    streams: usize,
    #[arg(long, value_enum, default_value_t = StreamDist::Random)]
    dist: StreamDist,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GainCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per (metric, K) case
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-9)]
    atol: f64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Perturb the analytic gradient to prove the check catches bugs
    #[arg(long)]
    inject_bug: bool,
}

enum CmdError {
    Usage(String),
    Io(String),
    CheckFailed,
}

impl From<FormatError> for CmdError {
    fn from(e: FormatError) -> Self {
        match e {
            // file-content problems count as I/O; only semantic validation
            // of parameters is a usage error
            FormatError::Invalid(msg) => CmdError::Usage(msg),
            other => CmdError::Io(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

impl From<ndopt_core::Error> for CmdError {
    fn from(e: ndopt_core::Error) -> Self {
        CmdError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = check_thread_cap() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Csst(args) => cmd_csst(args),
        Command::SimulatePolicy(args) => cmd_simulate_policy(args),
        Command::GainCheck(args) => cmd_gain_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CmdError::CheckFailed) => ExitCode::from(4),
    }
}

/// All computation is single-threaded; NDOPT_THREADS is validated so a cap
/// set by a scheduler is never silently malformed.
fn check_thread_cap() -> Result<(), String> {
    match std::env::var("NDOPT_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(format!("NDOPT_THREADS must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(()),
    }
}

#[derive(Serialize)]
struct DataManifest {
    schema_version: u32,
    k: usize,
    d: usize,
    n1: usize,
    rho_l: f64,
    rho_u: f64,
    m1: usize,
    sep: f64,
    seed: u64,
    labeled_counts: Vec<usize>,
    unlabeled_counts: Option<Vec<usize>>,
    val_per_class: usize,
    test_per_class: usize,
    files: Vec<String>,
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CmdError> {
    let spec = SyntheticSpec {
        k: args.k,
        d: args.d,
        n1: args.n1,
        rho_l: args.rho_l,
        rho_u: args.rho_u,
        m1: args.m1,
        sep: args.sep,
        seed: args.seed,
        val_per_class: args.val_per_class,
        test_per_class: args.test_per_class,
    };
    let bundle = gen_longtail_gaussians(&spec).map_err(|e| CmdError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    let mut files = vec!["labeled.ndm".to_string(), "val.ndm".to_string(), "test.ndm".to_string()];
    write_features(&args.out.join("labeled.ndm"), &bundle.labeled)?;
    write_features(&args.out.join("val.ndm"), &bundle.val)?;
    write_features(&args.out.join("test.ndm"), &bundle.test)?;
    if let Some(unlabeled) = &bundle.unlabeled {
        write_features(&args.out.join("unlabeled.ndm"), unlabeled)?;
        files.push("unlabeled.ndm".to_string());
    }
    let manifest = DataManifest {
        schema_version: 1,
        k: spec.k,
        d: spec.d,
        n1: spec.n1,
        rho_l: spec.rho_l,
        rho_u: spec.rho_u,
        m1: spec.m1,
        sep: spec.sep,
        seed: spec.seed,
        labeled_counts: exponential_profile(spec.n1, spec.rho_l, spec.k),
        unlabeled_counts: (spec.m1 > 0)
            .then(|| exponential_profile(spec.m1, spec.rho_u, spec.k)),
        val_per_class: spec.val_per_class,
        test_per_class: spec.test_per_class,
        files,
    };
    std::fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())?;
    println!("wrote {} classes x {} dims to {}", spec.k, spec.d, args.out.display());
    Ok(())
}

fn load_bundle(dir: &Path) -> Result<(DatasetBundle, usize), CmdError> {
    let labeled = read_features(&dir.join("labeled.ndm"))?;
    let val = read_features(&dir.join("val.ndm"))?;
    let test = read_features(&dir.join("test.ndm"))?;
    let unlabeled_path = dir.join("unlabeled.ndm");
    let unlabeled =
        if unlabeled_path.exists() { Some(read_features(&unlabeled_path)?) } else { None };
    let k = val
        .labels()
        .iter()
        .chain(labeled.labels().iter())
        .flat_map(|l| l.iter())
        .max()
        .map(|&m| m + 1)
        .ok_or_else(|| CmdError::Usage("dataset has no labels".into()))?;
    let bundle = DatasetBundle { labeled, unlabeled, val, test };
    bundle.validate(k)?;
    Ok((bundle, k))
}

fn init_model(
    init: &Option<PathBuf>,
    bundle: &DatasetBundle,
    k: usize,
    seed: u64,
) -> Result<LinearClassifier, CmdError> {
    match init {
        Some(path) => {
            let (model, _) = read_checkpoint(path)?;
            if model.k() != k || model.dim() != bundle.labeled.dim() {
                return Err(CmdError::Usage("checkpoint shape does not match dataset".into()));
            }
            Ok(model)
        }
        None => Ok(erm_train(&bundle.labeled, k, &ErmConfig { seed, ..Default::default() })?),
    }
}

fn labeled_prior(bundle: &DatasetBundle, k: usize) -> Result<ClassPrior, CmdError> {
    let labels = bundle.labeled.labels().unwrap();
    let mut counts = vec![0.0; k];
    for &y in labels {
        counts[y] += 1.0;
    }
    let n = labels.len() as f64;
    Ok(ClassPrior::new(counts.into_iter().map(|c| c / n).collect())?)
}

fn build_metric_spec(
    objective: Objective,
    omega: f64,
    lambda_max: f64,
    tau_cov: f64,
    alpha: f64,
    prior: &ClassPrior,
) -> MetricSpec {
    let mut spec = MetricSpec::new(objective.kind());
    spec.omega = omega;
    spec.lambda_max = lambda_max;
    spec.tau_cov = tau_cov;
    spec.alpha = alpha;
    if objective.kind().is_head_tail() {
        spec = spec.with_default_head_tail(prior);
    }
    spec
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CmdError> {
    match path {
        Some(p) => ConfigFile::load(p).map_err(CmdError::Usage),
        None => Ok(ConfigFile::default()),
    }
}

fn cmd_finetune(args: FinetuneArgs) -> Result<(), CmdError> {
    let mut cfg_file = load_config(&args.config)?;
    let s = cfg_file.resolve("s", args.s, 10.0).map_err(CmdError::Usage)?;
    let omega = cfg_file.resolve("omega", args.omega, 20.0).map_err(CmdError::Usage)?;
    let lambda_max =
        cfg_file.resolve("lambda_max", args.lambda_max, 100.0).map_err(CmdError::Usage)?;
    let tau_cov = cfg_file.resolve("tau_cov", args.tau_cov, 0.01).map_err(CmdError::Usage)?;
    let alpha = cfg_file.resolve("alpha", args.alpha, 0.95).map_err(CmdError::Usage)?;
    let beta_min = cfg_file.resolve("beta_min", args.beta_min, 0.6).map_err(CmdError::Usage)?;
    let eta = cfg_file.resolve("eta", args.eta, 0.1).map_err(CmdError::Usage)?;
    let steps = cfg_file.resolve("steps", args.steps, 50).map_err(CmdError::Usage)?;
    let cycles = cfg_file.resolve("cycle", args.cycle, 20).map_err(CmdError::Usage)?;
    let batch = cfg_file.resolve("batch", args.batch, 32).map_err(CmdError::Usage)?;
    cfg_file.finish().map_err(CmdError::Usage)?;
    if s < 0.0 {
        return Err(CmdError::Usage("s must be >= 0".into()));
    }

    let (bundle, k) = load_bundle(&args.data)?;
    let prior = labeled_prior(&bundle, k)?;
    let spec = build_metric_spec(args.objective, omega, lambda_max, tau_cov, alpha, &prior);
    let model0 = init_model(&args.init, &bundle, k, args.seed)?;
    let train_cfg = TrainConfig {
        eta,
        beta_min,
        batch_size: batch,
        steps_per_cycle: steps,
        cycles,
        weight_decay: 0.0,
        seed: args.seed,
    };
    let policy_kind = match args.policy {
        Policy::Selmix => PolicyKind::SelMix(s),
        Policy::Uniform => PolicyKind::Uniform,
        Policy::Greedy => PolicyKind::Greedy,
    };
    let mode = if args.semi { TrainMode::SemiSupervised } else { TrainMode::Supervised };

    let initial_val = eval_summary(&model0, &bundle.val, k)?;
    let (model, trace) = finetune(&bundle, &model0, &spec, &train_cfg, policy_kind, mode)?;
    let final_val = eval_summary(&model, &bundle.val, k)?;
    let final_test = eval_summary(&model, &bundle.test, k)?;

    let policy_name = match args.policy {
        Policy::Selmix => "selmix",
        Policy::Uniform => "uniform",
        Policy::Greedy => "greedy",
    };
    let params = serde_json::json!({
        "s": s, "omega": omega, "lambda_max": lambda_max, "tau_cov": tau_cov,
        "alpha": alpha, "beta_min": beta_min, "eta": eta, "steps": steps,
        "cycle": cycles, "batch": batch, "semi": args.semi,
    });
    let report = RunReport::new(
        "finetune",
        args.seed,
        args.objective.name(),
        Some(policy_name),
        params,
        &trace,
        args.dump_gains,
        initial_val,
        final_val,
        final_test,
    );
    write_run_outputs(&args.out, &report, &model, "finetune", args.objective.name(), args.seed)?;
    println!("{}", metric_table_text("val ", &report.final_val));
    println!("{}", metric_table_text("test", &report.final_test));
    Ok(())
}

fn cmd_csst(args: CsstArgs) -> Result<(), CmdError> {
    if !matches!(args.objective, Objective::MinRecall | Objective::MeanCov | Objective::Mean) {
        return Err(CmdError::Usage(
            "csst supports --objective min-recall, mean-cov, or mean".into(),
        ));
    }
    let mut cfg_file = load_config(&args.config)?;
    let lambda_u = cfg_file.resolve("lambda_u", args.lambda_u, 1.0).map_err(CmdError::Usage)?;
    let tau_kl = cfg_file.resolve("tau_kl", args.tau_kl, 0.3).map_err(CmdError::Usage)?;
    let omega = cfg_file.resolve("omega", args.omega, 0.25).map_err(CmdError::Usage)?;
    let alpha = cfg_file.resolve("alpha", args.alpha, 0.95).map_err(CmdError::Usage)?;
    let eval_period =
        cfg_file.resolve("eval_period", args.eval_period, 32).map_err(CmdError::Usage)?;
    let steps = cfg_file.resolve("steps", args.steps, 640).map_err(CmdError::Usage)?;
    let eta = cfg_file.resolve("eta", args.eta, 0.1).map_err(CmdError::Usage)?;
    let batch = cfg_file.resolve("batch", args.batch, 32).map_err(CmdError::Usage)?;
    let sigma_flag = cfg_file.resolve("sigma_aug", args.sigma_aug, -1.0).map_err(CmdError::Usage)?;
    cfg_file.finish().map_err(CmdError::Usage)?;

    let (bundle, k) = load_bundle(&args.data)?;
    let prior = labeled_prior(&bundle, k)?;
    let mut spec = MetricSpec::new(args.objective.kind());
    spec.omega = omega;
    spec.alpha = alpha;
    let sigma_aug =
        if sigma_flag >= 0.0 { sigma_flag } else { default_sigma_aug(&bundle.labeled, k)? };
    let model0 = init_model(&args.init, &bundle, k, args.seed)?;
    let cfg = SelfTrainConfig {
        lambda_u,
        tau_kl,
        sigma_aug,
        omega,
        eval_period,
        steps,
        eta,
        batch_size: batch,
        seed: args.seed,
    };

    let initial_val = eval_summary(&model0, &bundle.val, k)?;
    let (model, trace) = csst_train(&bundle, &model0, &spec, &cfg)?;
    let final_val = eval_summary(&model, &bundle.val, k)?;
    let final_test = eval_summary(&model, &bundle.test, k)?;
    let _ = &prior;

    let params = serde_json::json!({
        "lambda_u": lambda_u, "tau_kl": tau_kl, "sigma_aug": sigma_aug, "omega": omega,
        "alpha": alpha, "eval_period": eval_period, "steps": steps, "eta": eta, "batch": batch,
    });
    let report = RunReport::new(
        "csst",
        args.seed,
        args.objective.name(),
        None,
        params,
        &trace,
        false,
        initial_val,
        final_val,
        final_test,
    );
    write_run_outputs(&args.out, &report, &model, "csst", args.objective.name(), args.seed)?;
    println!("{}", metric_table_text("val ", &report.final_val));
    println!("{}", metric_table_text("test", &report.final_test));
    Ok(())
}

fn write_run_outputs(
    out: &Path,
    report: &RunReport,
    model: &LinearClassifier,
    command: &str,
    objective: &str,
    seed: u64,
) -> Result<(), CmdError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report).unwrap())?;
    std::fs::write(out.join("report.csv"), metric_table_csv(&report.final_val))?;
    let meta = CheckpointMeta {
        schema_version: 1,
        d: model.dim(),
        k: model.k(),
        command: command.to_string(),
        objective: objective.to_string(),
        seed,
    };
    write_checkpoint(&out.join("model.ndw"), model, &meta)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulationReport {
    schema_version: u32,
    k: usize,
    t: usize,
    s: f64,
    dist: String,
    streams: usize,
    bound: f64,
    max_deficit: f64,
    all_hold: bool,
}

fn cmd_simulate_policy(args: SimulatePolicyArgs) -> Result<(), CmdError> {
    if args.k < 2 || args.t == 0 || args.streams == 0 || args.s <= 0.0 {
        return Err(CmdError::Usage("need k >= 2, t >= 1, streams >= 1, s > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut max_deficit = f64::NEG_INFINITY;
    let mut all_hold = true;
    let mut bound = 0.0;
    for _ in 0..args.streams {
        let stream = make_stream(args.k, args.t, args.dist, &mut rng);
        let rep = simulate_policies(&stream, args.s)?;
        bound = rep.bound;
        max_deficit = max_deficit.max(rep.best_nonadaptive_gain - rep.avg_gain_selmix);
        all_hold &= rep.holds;
    }
    let report = SimulationReport {
        schema_version: 1,
        k: args.k,
        t: args.t,
        s: args.s,
        dist: format!("{:?}", args.dist).to_lowercase(),
        streams: args.streams,
        bound,
        max_deficit,
        all_hold,
    };
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if !all_hold {
        return Err(CmdError::CheckFailed);
    }
    Ok(())
}

fn make_stream(k: usize, t: usize, dist: StreamDist, rng: &mut ChaCha8Rng) -> Vec<Mat> {
    let n = k * k;
    let random_mat = |rng: &mut ChaCha8Rng| {
        let mut g = Mat::zeros(k, k);
        for v in g.data_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
        g
    };
    match dist {
        StreamDist::Constant => {
            let g = random_mat(rng);
            vec![g; t]
        }
        StreamDist::Random => (0..t).map(|_| random_mat(rng)).collect(),
        StreamDist::Adversarial => (0..t)
            .map(|step| {
                // rotate the rewarded pair so no fixed pair stays good
                let mut g = Mat::zeros(k, k);
                g.data_mut().fill(-1.0);
                g.data_mut()[step % n] = 1.0;
                g
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct FdReportJson {
    schema_version: u32,
    max_rel_err: f64,
    max_abs_err: f64,
    worst_index: (usize, usize),
    passed: bool,
    rtol: f64,
    atol: f64,
    cases: usize,
}

impl FdReportJson {
    fn new(r: &FiniteDiffReport) -> Self {
        FdReportJson {
            schema_version: 1,
            max_rel_err: r.max_rel_err,
            max_abs_err: r.max_abs_err,
            worst_index: r.worst_index,
            passed: r.passed,
            rtol: r.rtol,
            atol: r.atol,
            cases: r.cases,
        }
    }
}

fn cmd_gain_check(args: GainCheckArgs) -> Result<(), CmdError> {
    if args.ks.iter().any(|&k| k < 2) || args.ks.is_empty() || args.samples == 0 {
        return Err(CmdError::Usage("need at least one K >= 2 and samples >= 1".into()));
    }
    if !(1e-8..=1e-3).contains(&args.h) {
        return Err(CmdError::Usage("h must be in [1e-8, 1e-3]".into()));
    }
    let perturb = if args.inject_bug { 1e-2 } else { 0.0 };
    let report =
        gain_check(args.seed, args.samples, &args.ks, args.rtol, args.atol, args.h, perturb)?;
    println!("{}", serde_json::to_string_pretty(&FdReportJson::new(&report)).unwrap());
    if !report.passed {
        return Err(CmdError::CheckFailed);
    }
    Ok(())
}
