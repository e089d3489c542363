//! End-to-end acceptance suite. Each numbered check prints one PASS/FAIL
//! line; the test fails if any check fails.

use std::time::Instant;

use ndopt::data::{gen_longtail_gaussians, SyntheticSpec};
use ndopt::report::eval_summary;
use ndopt::train::{erm_train, ErmConfig};
use ndopt_core::csst::{
    csst_train, kl_threshold_mask, optimal_target, CslGainMatrix,
    SelfTrainConfig,
};
use ndopt_core::dataset::DatasetBundle;
use ndopt_core::linear::{class_centroids, mixup_direction, LinearClassifier, TrainConfig};
use ndopt_core::mat::{self, Mat};
use ndopt_core::metrics::{
    metric_grad_unconstrained, metric_value, reparam_confusion, ClassPrior,
    MetricKind, MetricSpec, UnconstrainedConfusion,
};
use ndopt_core::oracle::{
    empirical_gain, fd_metric_grad, fd_surrogate_gain, gain_check, random_instance,
    random_lagrange, spec_for_check, surrogate_confusion, ALL_KINDS,
};
use ndopt_core::selmix::{
    finetune, mixup_gain_matrix, simulate_policies, PolicyKind, TrainMode,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Harness {
    failures: Vec<String>,
}

impl Harness {
    fn check(&mut self, id: usize, name: &str, passed: bool, detail: String) {
        let status = if passed { "PASS" } else { "FAIL" };
        println!("criterion {id:2} [{status}] {name}: {detail}");
        if !passed {
            self.failures.push(format!("criterion {id} ({name}): {detail}"));
        }
    }
}

fn canonical_spec() -> SyntheticSpec {
    SyntheticSpec {
        k: 5,
        d: 10,
        n1: 1000,
        rho_l: 100.0,
        rho_u: 100.0,
        m1: 2000,
        sep: 2.0,
        seed: 1,
        val_per_class: 50,
        test_per_class: 50,
    }
}

fn canonical_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        eta: 0.01,
        beta_min: 0.6,
        batch_size: 32,
        steps_per_cycle: 25,
        cycles: 80,
        weight_decay: 0.0,
        seed,
    }
}

fn erm_init(bundle: &DatasetBundle, k: usize, seed: u64) -> LinearClassifier {
    erm_train(&bundle.labeled, k, &ErmConfig { seed, ..Default::default() }).unwrap()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&p, &q| x[p].partial_cmp(&x[q]).unwrap());
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (&x, &y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

#[test]
fn acceptance() {
    let suite_start = Instant::now();
    let mut h = Harness { failures: Vec::new() };

    // 1. analytic metric gradients vs finite differences, all kinds and sizes
    let t = Instant::now();
    let report = gain_check(0, 100, &[2, 3, 5, 10], 1e-5, 1e-9, 1e-5, 0.0).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    h.check(
        1,
        "derivative correctness",
        report.passed && elapsed < 10.0,
        format!(
            "max_rel_err {:.2e}, {} cases, {:.2}s",
            report.max_rel_err, report.cases, elapsed
        ),
    );

    // 2. worked two-class point
    {
        let pi = ClassPrior::new(vec![0.5, 0.5]).unwrap();
        let ct = UnconstrainedConfusion::new(
            Mat::from_rows(&[
                &[(0.8f64).ln(), (0.2f64).ln()],
                &[(0.4f64).ln(), (0.6f64).ln()],
            ])
            .unwrap(),
        )
        .unwrap();
        let c = reparam_confusion(&ct, &pi).unwrap();
        let spec = MetricSpec::new(MetricKind::MeanRecall);
        let lam = spec.initial_lagrange(2);
        let value = metric_value(&spec, &c, &lam).unwrap();
        let grad = metric_grad_unconstrained(&spec, &c, &lam).unwrap();
        let fd = fd_metric_grad(&spec, &ct, &pi, &lam, 1e-6).unwrap();
        let ok = (value - 0.7).abs() < 1e-12
            && (grad.d_psi_d_ctilde[(0, 0)] - 0.08).abs() < 1e-12
            && (grad.d_psi_d_ctilde[(0, 1)] + 0.08).abs() < 1e-12
            && (grad.d_psi_d_ctilde[(0, 0)] - fd.d_psi_d_ctilde[(0, 0)]).abs() < 1e-9
            && (grad.d_psi_d_ctilde[(0, 1)] - fd.d_psi_d_ctilde[(0, 1)]).abs() < 1e-9;
        h.check(
            2,
            "worked point",
            ok,
            format!(
                "mean recall {value:.12}, d/dCt11 {:.12}",
                grad.d_psi_d_ctilde[(0, 0)]
            ),
        );
    }

    // 3. gain formula vs finite-difference surrogate directional derivative
    {
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut worst: f64 = 0.0;
        let mut ok = true;
        let cfg = TrainConfig::default();
        for round in 0..50 {
            let kind = ALL_KINDS[round % ALL_KINDS.len()];
            let k = [2, 3, 5][round % 3];
            let d = 4 + round % 3;
            let spec = spec_for_check(kind, k);
            let (_, pi) = random_instance(&mut rng, k);
            let lam = random_lagrange(&mut rng, &spec, k);
            let mut zdata = Mat::zeros(k, d);
            for v in zdata.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let zfm = ndopt_core::linear::FeatureMatrix::new(zdata, Some((0..k).collect()))
                .unwrap();
            let z = class_centroids(&zfm, k).unwrap();
            let mut w = Mat::zeros(d, k);
            for v in w.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            let m = LinearClassifier::new(w).unwrap();
            let grad = metric_grad_unconstrained(
                &spec,
                &surrogate_confusion(&m, &z, &pi).unwrap(),
                &lam,
            )
            .unwrap();
            let gains = mixup_gain_matrix(&m, &z, &grad, &cfg).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let v = mixup_direction(&m, &z, i, j, cfg.beta_eval()).unwrap();
                    let fd = fd_surrogate_gain(&m, &z, &pi, &spec, &lam, &v, 1e-6).unwrap();
                    let g = gains.entries()[(i, j)];
                    let rel = (g - fd).abs() / fd.abs().max(1e-8);
                    worst = worst.max(rel);
                    ok &= rel <= 1e-4;
                }
            }
        }
        let elapsed = t.elapsed().as_secs_f64();
        h.check(
            3,
            "gain fidelity",
            ok && elapsed < 30.0,
            format!("worst rtol {worst:.2e} over 50 instances, {elapsed:.2}s"),
        );
    }

    let bundle = gen_longtail_gaussians(&canonical_spec()).unwrap();
    let k = 5;

    // 4. gains rank-correlate with measured metric changes
    {
        // a large balanced probe set keeps the measured (piecewise-constant)
        // metric changes fine-grained enough to rank
        let probe_spec =
            SyntheticSpec { seed: 2, val_per_class: 1500, ..canonical_spec() };
        let probe = gen_longtail_gaussians(&probe_spec).unwrap().val;
        let probe_labels = probe.labels().unwrap();
        let spec = MetricSpec::new(MetricKind::MeanRecall);
        let train_spec = MetricSpec::new(MetricKind::MinRecall);
        let mut model = erm_init(&bundle, k, 1);
        let z = class_centroids(&bundle.val, k).unwrap();
        let mut rhos = Vec::new();
        for snap in 0..10 {
            let preds = ndopt_core::linear::predict_labels(&model, &probe).unwrap();
            let c =
                ndopt_core::metrics::ConfusionMatrix::from_predictions(probe_labels, &preds, k)
                    .unwrap();
            let lam = spec.initial_lagrange(k);
            let grad = metric_grad_unconstrained(&spec, &c, &lam).unwrap();
            let cfg = canonical_train_config(1);
            let gains = mixup_gain_matrix(&model, &z, &grad, &cfg).unwrap();
            let mut gvals = Vec::new();
            let mut evals = Vec::new();
            for i in 0..k {
                for j in 0..k {
                    let v = mixup_direction(&model, &z, i, j, cfg.beta_eval()).unwrap();
                    let eta = 0.1 / v.v.max_abs().max(1e-12);
                    let e = empirical_gain(&model, &v, eta, &probe, &spec, &lam).unwrap();
                    gvals.push(gains.entries()[(i, j)]);
                    evals.push(e);
                }
            }
            rhos.push(spearman(&gvals, &evals));
            let step_cfg = TrainConfig { cycles: 1, seed: 100 + snap, ..canonical_train_config(1) };
            let (next, _) = finetune(
                &bundle,
                &model,
                &train_spec,
                &step_cfg,
                PolicyKind::SelMix(10.0),
                TrainMode::Supervised,
            )
            .unwrap();
            model = next;
        }
        let avg = rhos.iter().sum::<f64>() / rhos.len() as f64;
        h.check(
            4,
            "gain predicts measured change",
            avg >= 0.8,
            format!("mean Spearman {avg:.3} over 10 snapshots"),
        );
    }

    // 5. policy ordering on the canonical benchmark
    {
        let t = Instant::now();
        let run = |objective: MetricKind, policy: PolicyKind| -> (f64, f64) {
            let spec = MetricSpec::new(objective);
            let mut min_sum = 0.0;
            let mut mean_sum = 0.0;
            for seed in 1..=5 {
                let m0 = erm_init(&bundle, k, seed);
                let cfg = canonical_train_config(seed);
                let (m, _) =
                    finetune(&bundle, &m0, &spec, &cfg, policy, TrainMode::Supervised).unwrap();
                let s = eval_summary(&m, &bundle.val, k).unwrap();
                min_sum += s.min_recall;
                mean_sum += s.mean_recall;
            }
            (min_sum / 5.0, mean_sum / 5.0)
        };
        let (selmix_min, _) = run(MetricKind::MinRecall, PolicyKind::SelMix(10.0));
        let (uniform_min, _) = run(MetricKind::MinRecall, PolicyKind::Uniform);
        let (_, selmix_mean) = run(MetricKind::MeanRecall, PolicyKind::SelMix(10.0));
        let (_, greedy_mean) = run(MetricKind::MeanRecall, PolicyKind::Greedy);
        let elapsed = t.elapsed().as_secs_f64();
        h.check(
            5,
            "policy ordering",
            selmix_min >= uniform_min + 0.02 && selmix_mean >= greedy_mean && elapsed < 180.0,
            format!(
                "min recall selmix {selmix_min:.3} vs uniform {uniform_min:.3}; mean recall selmix {selmix_mean:.3} vs greedy {greedy_mean:.3}; {elapsed:.1}s"
            ),
        );
    }

    // 6. min-recall lift over the ERM initialization
    {
        let spec = MetricSpec::new(MetricKind::MinRecall);
        let mut before = 0.0;
        let mut after = 0.0;
        for seed in 1..=5 {
            let m0 = erm_init(&bundle, k, seed);
            before += eval_summary(&m0, &bundle.val, k).unwrap().min_recall;
            let cfg = canonical_train_config(seed);
            let (m, _) = finetune(
                &bundle,
                &m0,
                &spec,
                &cfg,
                PolicyKind::SelMix(10.0),
                TrainMode::Supervised,
            )
            .unwrap();
            after += eval_summary(&m, &bundle.val, k).unwrap().min_recall;
        }
        before /= 5.0;
        after /= 5.0;
        h.check(
            6,
            "min-recall improvement",
            after >= before + 0.05,
            format!("erm {before:.3} -> selmix {after:.3}"),
        );
    }

    // 7. coverage constraint satisfied at the end of a coverage run
    {
        let spec = MetricSpec::new(MetricKind::MeanRecallCoverage);
        let m0 = erm_init(&bundle, k, 1);
        let cfg = canonical_train_config(1);
        let (m, _) = finetune(
            &bundle,
            &m0,
            &spec,
            &cfg,
            PolicyKind::SelMix(10.0),
            TrainMode::Supervised,
        )
        .unwrap();
        let s = eval_summary(&m, &bundle.val, k).unwrap();
        let target = 0.9 * (0.95 / k as f64);
        h.check(
            7,
            "coverage satisfaction",
            s.min_coverage >= target,
            format!("min coverage {:.3} vs target {target:.3}", s.min_coverage),
        );
    }

    // 8. direct logit optimization converges to norm(G^T y)
    {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst_tv: f64 = 0.0;
        for _ in 0..20 {
            let kk = 3;
            let mut g = Mat::zeros(kk, kk);
            for i in 0..kk {
                for j in 0..kk {
                    g[(i, j)] = rng.random_range(0.0..1.0) + if i == j { 0.5 } else { 0.0 };
                }
            }
            let gain = CslGainMatrix::new(g).unwrap();
            let mut y = vec![0.0; kk];
            y[rng.random_range(0..kk)] = 1.0;
            let target = optimal_target(&y, &gain).unwrap();
            let decomp = gain.decompose();
            let w = decomp.weight_matrix().matvec_t(&y).unwrap();
            let w_total: f64 = w.iter().sum();
            let log_d: Vec<f64> = decomp.d_diag().iter().map(|&d| d.ln()).collect();
            let mut logits = vec![0.0; kk];
            for _ in 0..4000 {
                let mut q: Vec<f64> =
                    logits.iter().zip(&log_d).map(|(&l, &ld)| l - ld).collect();
                mat::softmax_inplace(&mut q);
                for i in 0..kk {
                    logits[i] -= 0.5 * (w_total * q[i] - w[i]);
                }
            }
            let mut p = logits.clone();
            mat::softmax_inplace(&mut p);
            let tv: f64 =
                0.5 * p.iter().zip(&target).map(|(&a, &b)| (a - b).abs()).sum::<f64>();
            worst_tv = worst_tv.max(tv);
        }
        h.check(
            8,
            "weighted-loss optimum",
            worst_tv <= 1e-3,
            format!("worst TV {worst_tv:.2e} over 20 matrices"),
        );
    }

    // 9. diagonal gain matrices reduce KL selection to a confidence rule
    {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tau = -(0.95f64.ln());
        let mut disagreements = 0;
        for _ in 0..1000 {
            let kk = 2 + rng.random_range(0..4);
            let mut g = Mat::zeros(kk, kk);
            for i in 0..kk {
                g[(i, i)] = rng.random_range(0.1..5.0);
            }
            let gain = CslGainMatrix::new(g).unwrap();
            let mut p_weak: Vec<f64> = (0..kk).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = p_weak.iter().sum();
            for v in &mut p_weak {
                *v /= sum;
            }
            let y_hat = mat::argmax(&p_weak);
            let mut p_hat = vec![0.0; kk];
            p_hat[y_hat] = 1.0;
            let by_kl = kl_threshold_mask(&p_hat, &p_weak, &gain, tau);
            let by_confidence = p_weak[y_hat] >= (-tau).exp();
            if by_kl != by_confidence {
                disagreements += 1;
            }
        }
        h.check(
            9,
            "KL threshold = confidence rule",
            disagreements == 0,
            format!("{disagreements} disagreements in 1000 cases (tau = -ln 0.95)"),
        );
    }

    // 10. adaptive policy regret bound on random bounded streams
    {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut all_hold = true;
        let mut worst_slack = f64::NEG_INFINITY;
        let mut streams = 0;
        for &kk in &[2usize, 5, 10] {
            for &tt in &[100usize, 1000] {
                for _ in 0..17 {
                    let stream: Vec<Mat> = (0..tt)
                        .map(|_| {
                            let mut g = Mat::zeros(kk, kk);
                            for v in g.data_mut() {
                                *v = rng.random_range(-1.0..=1.0);
                            }
                            g
                        })
                        .collect();
                    let rep = simulate_policies(&stream, 10.0).unwrap();
                    all_hold &= rep.holds;
                    worst_slack = worst_slack
                        .max(rep.best_nonadaptive_gain - rep.avg_gain_selmix - rep.bound);
                    streams += 1;
                }
            }
        }
        h.check(
            10,
            "regret bound",
            all_hold && streams >= 100,
            format!("{streams} streams, worst slack over bound {worst_slack:.2e}"),
        );
    }

    // 11. cost-sensitive self-training beats vanilla pseudo-labeling
    {
        let ssl_spec = SyntheticSpec { n1: 200, ..canonical_spec() };
        let ssl = gen_longtail_gaussians(&ssl_spec).unwrap();
        let mut csst_min = 0.0;
        let mut vanilla_min = 0.0;
        for seed in 1..=5 {
            let m0 = erm_init(&ssl, k, seed);
            let cfg = SelfTrainConfig { seed, ..Default::default() };
            let (m, _) =
                csst_train(&ssl, &m0, &MetricSpec::new(MetricKind::MinRecall), &cfg).unwrap();
            csst_min += eval_summary(&m, &ssl.val, k).unwrap().min_recall;
            let (m, _) =
                csst_train(&ssl, &m0, &MetricSpec::new(MetricKind::MeanRecall), &cfg).unwrap();
            vanilla_min += eval_summary(&m, &ssl.val, k).unwrap().min_recall;
        }
        csst_min /= 5.0;
        vanilla_min /= 5.0;
        h.check(
            11,
            "self-training ordering",
            csst_min >= vanilla_min + 0.03,
            format!("min recall csst {csst_min:.3} vs vanilla {vanilla_min:.3}"),
        );
    }

    // 12. 1/t convergence on a concave quadratic with aligned directions
    {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w_star: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w = vec![0.0; n];
        let gap = |w: &[f64]| -> f64 {
            w.iter().zip(&w_star).map(|(&a, &b)| (a - b).powi(2)).sum::<f64>()
        };
        let mut gaps = Vec::new();
        for t in 1..=1000usize {
            // the chosen direction is the gain-weighted combination of the
            // coordinate directions, so its alignment with the ascent
            // direction is exact; the step size decays as c/t
            let direction: Vec<f64> =
                w.iter().zip(&w_star).map(|(&a, &b)| -2.0 * (a - b)).collect();
            let eta_t = 0.25 / t as f64;
            for (wi, di) in w.iter_mut().zip(&direction) {
                *wi += eta_t * di;
            }
            if t >= 10 {
                gaps.push((t as f64, gap(&w)));
            }
        }
        // log-log least-squares slope
        let logs: Vec<(f64, f64)> =
            gaps.iter().map(|&(t, g)| (t.ln(), g.max(1e-300).ln())).collect();
        let nn = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / nn;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / nn;
        let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        h.check(
            12,
            "1/t convergence toy",
            slope <= -0.9,
            format!("log-log slope {slope:.3} over t in [10, 1000]"),
        );
    }

    // 13. the whole acceptance run stays inside the desk-scale budget
    {
        let elapsed = suite_start.elapsed().as_secs_f64();
        h.check(
            13,
            "runtime budget",
            elapsed < 300.0,
            format!("{elapsed:.1}s single-threaded"),
        );
    }

    assert!(h.failures.is_empty(), "failed criteria:\n{}", h.failures.join("\n"));
}
