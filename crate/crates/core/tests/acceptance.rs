//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 to 10 share a long training protocol (3 seeds x 2 loss modes,
//! 200 epochs on 512 images per domain). It runs only when the binary gets
//! `--ignored` or `--include-ignored`:
//!
//! ```text
//! cargo test --release -p ugac-core --test acceptance -- --include-ignored
//! ```
//!
//! Runs are cached under the cargo target tmp dir and resumed from their
//! latest checkpoint, so an interrupted protocol picks up where it stopped.
//! A plain `cargo test` reuses finished runs when present and otherwise
//! reports those criteria as SKIP.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ugac_core::data::{Dataset, Image};
use ugac_core::ggd::{ggd_logpdf, ggd_sample, ggd_variance, l_alpha_beta};
use ugac_core::gradcheck::check_loss_tuples;
use ugac_core::metrics::{psnr, ssim, MetricsReport};
use ugac_core::specfn::{digamma, lgamma};
use ugac_core::tensor::Tensor;
use ugac_core::train::moving_average;

use common::{graded_edges, integrate, ssim_reference, EULER_GAMMA};

type Criterion = (usize, &'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ugac")
}

fn c1_gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let r = check_loss_tuples(100, 2024).expect("loss evaluates");
    let secs = start.elapsed().as_secs_f64();
    verdict(
        r.passed() && r.max_rel_err < 1e-4 && secs < 60.0,
        format!(
            "100 tuples, {} gradient entries: max rel err {:.2e}, max abs err on |g| < 1e-3 {:.2e}, {} mismatches, {secs:.1}s",
            r.elements, r.max_rel_err, r.max_abs_err, r.failures
        ),
    )
}

fn c2_special_cases() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1000;
    let recon: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let t = |v: &[f64]| Tensor::new(v.to_vec(), &[n]).unwrap();
    let loss = |a: f64, b: f64| {
        l_alpha_beta(&t(&recon), &Tensor::full(&[n], a), &Tensor::full(&[n], b), &t(&target))
            .unwrap()
            .item()
    };
    let mae = recon.iter().zip(&target).map(|(r, y)| (r - y).abs()).sum::<f64>() / n as f64;
    let mse = recon.iter().zip(&target).map(|(r, y)| (r - y).powi(2)).sum::<f64>() / n as f64;
    let e1 = (loss(1.0, 1.0) - mae).abs();
    let e2 = (loss(1.0, 2.0) - (mse - 2f64.ln() + std::f64::consts::PI.sqrt().ln())).abs();
    verdict(e1 < 1e-12 && e2 < 1e-12, format!("|L(1,1) - MAE| = {e1:.1e}, |L(1,2) - MSE - c| = {e2:.1e}"))
}

fn c3_variance_by_sampling() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, 0.0);
    for alpha in [0.5, 1.0, 2.0] {
        for beta in [0.75, 1.0, 2.0] {
            let n = 1_000_000;
            let xs: Vec<f64> = (0..n).map(|_| ggd_sample(alpha, beta, &mut rng).unwrap()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let rel = (var / ggd_variance(alpha, beta).unwrap() - 1.0).abs();
            if rel > worst {
                worst = rel;
                worst_at = (alpha, beta);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 0.01 && secs < 120.0,
        format!(
            "9 (alpha, beta) pairs x 1e6 draws: worst rel err {:.3}% at {:?}, {secs:.1}s",
            worst * 100.0,
            worst_at
        ),
    )
}

fn c4_density_mass() -> Outcome {
    let alpha = 1.3;
    let mut details = Vec::new();
    let mut ok = true;
    for beta in [0.5, 1.0, 2.0, 4.0] {
        let f = |x: f64| ggd_logpdf(x, 0.0, alpha, beta).unwrap().exp();
        let half = integrate(&f, &graded_edges(30.0 * alpha, 600), 20);
        let mass = 2.0 * half;
        let err = (mass - 1.0).abs();
        ok &= err <= 1e-6;
        details.push(format!("beta {beta}: {mass:.9} (err {err:.1e})"));
    }
    verdict(ok, format!("mass on [-30a, 30a]: {}", details.join(", ")))
}

fn c5_special_functions() -> Outcome {
    let ln2 = 2f64.ln();
    let cases = [
        ("lgamma(0.5)", lgamma(0.5).unwrap(), 0.5 * std::f64::consts::PI.ln()),
        ("lgamma(1)", lgamma(1.0).unwrap(), 0.0),
        ("lgamma(5)", lgamma(5.0).unwrap(), 24f64.ln()),
        ("digamma(0.5)", digamma(0.5).unwrap(), -EULER_GAMMA - 2.0 * ln2),
        ("digamma(1)", digamma(1.0).unwrap(), -EULER_GAMMA),
        ("digamma(2)", digamma(2.0).unwrap(), 1.0 - EULER_GAMMA),
    ];
    let (name, worst) = cases
        .iter()
        .map(|(n, got, want)| (*n, (got - want).abs()))
        .fold(("", 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    verdict(worst < 1e-8, format!("worst abs err {worst:.1e} ({name})"))
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::new(size, size, (0..size * size).map(|_| rng.gen()).collect()).unwrap()
}

fn c6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_image(&mut rng, 32);
    let self_err = (ssim(&x, &x).unwrap() - 1.0).abs();

    let zero = Image::filled(10, 10, 0.0);
    let mut one_off = zero.clone();
    one_off.pixels[42] = 1.0;
    let p = psnr(&zero, &one_off, 1.0).unwrap();

    let mut ref_err = 0.0f64;
    for k in 0..20 {
        let a = random_image(&mut rng, 32);
        // Alternate unrelated pairs with noisy copies so SSIM spans its range.
        let b = if k % 2 == 0 {
            random_image(&mut rng, 32)
        } else {
            let px = a.pixels.iter().map(|v| (v + rng.gen_range(-0.2..0.2f64)).clamp(0.0, 1.0)).collect();
            Image::new(32, 32, px).unwrap()
        };
        let got = ssim(&a, &b).unwrap();
        let want = ssim_reference(&a.pixels, &b.pixels, 32, 32);
        ref_err = ref_err.max((got - want).abs());
    }
    verdict(
        self_err <= 1e-12 && p == 20.0 && ref_err < 1e-6,
        format!("|ssim(x,x) - 1| = {self_err:.1e}, psnr at MSE 0.01 = {p} dB, max |ssim - reference| = {ref_err:.1e}"),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).env_remove("UGAC_SEED").output().expect("launch ugac")
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"dataset": {"n_train": 16, "n_test": 4, "image_size": 16, "seed": 11},
            "net": {"base_channels": 4, "depth": 2},
            "train": {"seed": 11, "batch_size": 4}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let out = run_cli(&["gen-data", "--config", &s(&cfg), "--out", &s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut logs = Vec::new();
    for run in ["run1", "run2"] {
        let rd = dir.path().join(run);
        let out = run_cli(&["train", "--config", &s(&cfg), "--data", &s(&data), "--out", &s(&rd), "--epochs", "5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        logs.push(fs::read(rd.join("train_log.csv")).unwrap());
    }
    let rows = String::from_utf8_lossy(&logs[0]).lines().count() - 1;
    verdict(
        logs[0] == logs[1] && rows == 5,
        format!("two `train --epochs 5` runs: {rows} epochs logged, logs identical = {}", logs[0] == logs[1]),
    )
}

// ---- heavy protocol shared by criteria 7 to 10 ----

const SEEDS: [u64; 3] = [0, 1, 2];
const MODES: [&str; 2] = ["adaptive", "fixed-l1"];
const EPOCHS: usize = 200;
/// CPU budget per loss mode, summed over seeds.
const BUDGET_SECS: f64 = 7200.0;

fn protocol_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-protocol")
}

fn protocol_config(seed: u64) -> String {
    format!(
        r#"{{
  "dataset": {{"n_train": 512, "n_test": 128, "image_size": 32, "seed": {seed}}},
  "net": {{"base_channels": 4, "depth": 3}},
  "train": {{"epochs": {EPOCHS}, "seed": {seed}, "checkpoint_every": 10}}
}}
"#
    )
}

struct RunResult {
    seed: u64,
    mode: &'static str,
    aborted: Option<String>,
    train_secs: f64,
    l_g: Vec<f64>,
    metrics: Option<MetricsReport>,
}

fn log_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .map(|t| {
            t.lines()
                .skip(1)
                .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
                .collect()
        })
        .unwrap_or_default()
}

fn latest_checkpoint(run: &Path) -> Option<PathBuf> {
    let mut cks: Vec<PathBuf> = fs::read_dir(run.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    cks.sort();
    cks.pop()
}

fn read_secs(p: &Path) -> f64 {
    fs::read_to_string(p).ok().and_then(|t| t.trim().parse().ok()).unwrap_or(0.0)
}

fn run_is_complete(run: &Path) -> bool {
    run.join("final.ckpt").exists() && log_rows(&run.join("train_log.csv")).len() == EPOCHS
}

fn protocol_is_cached() -> bool {
    SEEDS
        .iter()
        .all(|s| MODES.iter().all(|m| run_is_complete(&protocol_root().join(format!("seed{s}")).join(m))))
}

/// Trains (or resumes) one run through the CLI and evaluates it.
fn protocol_run(seed: u64, mode: &'static str, may_train: bool) -> RunResult {
    let root = protocol_root().join(format!("seed{seed}"));
    fs::create_dir_all(&root).unwrap();
    let cfg = root.join("config.json");
    if fs::read_to_string(&cfg).ok().as_deref() != Some(protocol_config(seed).as_str()) {
        fs::write(&cfg, protocol_config(seed)).unwrap();
        let _ = fs::remove_dir_all(root.join("data"));
        for m in MODES {
            let _ = fs::remove_dir_all(root.join(m));
        }
    }
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = root.join("data");
    if !data.join("manifest.json").exists() {
        let out = run_cli(&["gen-data", "--config", &s(&cfg), "--out", &s(&data), "--force"]);
        assert!(out.status.success(), "gen-data: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = root.join(mode);
    let secs_file = run.join("train_secs.txt");
    let abort_file = run.join("aborted.txt");
    let mut aborted = fs::read_to_string(&abort_file).ok();
    if aborted.is_none() && !run_is_complete(&run) && may_train {
        fs::create_dir_all(&run).unwrap();
        let mut args = vec![
            "train".to_owned(),
            "--config".into(),
            s(&cfg),
            "--data".into(),
            s(&data),
            "--out".into(),
            s(&run),
            "--loss-mode".into(),
            mode.into(),
        ];
        match latest_checkpoint(&run) {
            Some(ck) => args.extend(["--resume".into(), s(&ck)]),
            None => args.push("--force".into()),
        }
        eprintln!("[protocol] seed {seed} {mode}: training");
        let start = Instant::now();
        let out = Command::new(bin()).args(&args).env_remove("UGAC_SEED").output().expect("launch ugac");
        fs::write(&secs_file, format!("{}", read_secs(&secs_file) + start.elapsed().as_secs_f64())).unwrap();
        if !out.status.success() {
            let msg = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("").to_owned();
            if out.status.code() == Some(4) {
                fs::write(&abort_file, &msg).unwrap();
            }
            aborted = Some(msg);
        }
    }
    let l_g = log_rows(&run.join("train_log.csv")).iter().map(|r| r[4]).collect();
    let metrics = (aborted.is_none() && run_is_complete(&run)).then(|| {
        let ds = Dataset::load(&data, None).unwrap();
        ugac_core::cli::evaluate(run.join("final.ckpt").to_str().unwrap(), &ds, None).unwrap()
    });
    RunResult {
        seed,
        mode,
        aborted,
        train_secs: read_secs(&secs_file),
        l_g,
        metrics,
    }
}

fn ssim_at(r: &RunResult, level: &str) -> f64 {
    r.metrics.as_ref().and_then(|m| m.get(level)).map_or(f64::NAN, |l| l.ssim_mean)
}

fn c7_robustness(runs: &[RunResult]) -> Outcome {
    let find = |seed, mode| runs.iter().find(|r| r.seed == seed && r.mode == mode).unwrap();
    let mut details = Vec::new();
    let mut level_ok = true;
    for level in ["NL2", "NL3"] {
        let mean = |mode| SEEDS.iter().map(|&s| ssim_at(find(s, mode), level)).sum::<f64>() / SEEDS.len() as f64;
        let (a, f) = (mean("adaptive"), mean("fixed-l1"));
        level_ok &= a >= f;
        details.push(format!("{level} SSIM adaptive {a:.4} vs fixed-l1 {f:.4}"));
    }
    let mut drop_wins = 0;
    for &s in &SEEDS {
        let drop = |mode| ssim_at(find(s, mode), "NL0") - ssim_at(find(s, mode), "NL3");
        let (a, f) = (drop("adaptive"), drop("fixed-l1"));
        if a < f {
            drop_wins += 1;
        }
        details.push(format!("seed {s} NL0-NL3 drop {a:.4} vs {f:.4}"));
    }
    let mut budget_ok = true;
    for mode in MODES {
        let secs: f64 = runs.iter().filter(|r| r.mode == mode).map(|r| r.train_secs).sum();
        budget_ok &= secs <= BUDGET_SECS;
        details.push(format!("{mode} train time {:.0} min", secs / 60.0));
    }
    verdict(level_ok && drop_wins >= 2 && budget_ok, details.join("; "))
}

fn adaptive_correlation(seed: u64) -> (f64, f64) {
    let root = protocol_root().join(format!("seed{seed}"));
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let unc = root.join("uncertainty-NL2");
    let corr = root.join("correlation");
    let out = run_cli(&[
        "uncertainty",
        "--config",
        &s(&root.join("config.json")),
        "--checkpoint",
        &s(&root.join("adaptive").join("final.ckpt")),
        "--data",
        &s(&root.join("data")),
        "--out",
        &s(&unc),
        "--level",
        "NL2",
    ]);
    assert!(out.status.success(), "uncertainty: {}", String::from_utf8_lossy(&out.stderr));
    let out = run_cli(&["correlate", "--uncertainty-dir", &s(&unc), "--out", &s(&corr)]);
    assert!(out.status.success(), "correlate: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(corr.join("correlation.csv")).unwrap();
    let footer = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("# {key},")))
            .unwrap()
            .parse()
            .unwrap()
    };
    (footer("spearman_sigma"), footer("spearman_beta"))
}

fn c10_training_sanity(runs: &[RunResult]) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for r in runs {
        let ma = moving_average(&r.l_g, 20);
        let fine = r.aborted.is_none() && ma.len() == EPOCHS && ma[EPOCHS - 1] < ma[19];
        ok &= fine;
        match &r.aborted {
            Some(m) => details.push(format!("seed {} {}: aborted ({m})", r.seed, r.mode)),
            None if ma.len() == EPOCHS => {
                details.push(format!("seed {} {}: {:.3} -> {:.3}", r.seed, r.mode, ma[19], ma[EPOCHS - 1]))
            }
            None => details.push(format!("seed {} {}: incomplete log", r.seed, r.mode)),
        }
    }
    let aborts = runs.iter().filter(|r| r.aborted.is_some()).count();
    details.push(format!("{aborts} NaN aborts"));
    verdict(ok && aborts == 0, format!("MA20 L_G epoch 20 -> final: {}", details.join(", ")))
}

fn heavy(may_train: bool) -> Vec<(usize, &'static str, Outcome)> {
    let names = [
        (7, "directional robustness"),
        (8, "sigma-residual correlation"),
        (9, "beta-residual correlation"),
        (10, "training sanity"),
    ];
    if !may_train && !protocol_is_cached() {
        let why = "needs the 3-seed x 2-mode training protocol; rerun with --include-ignored";
        return names.iter().map(|&(n, t)| (n, t, Outcome::Skip(why.into()))).collect();
    }
    let runs: Vec<RunResult> = SEEDS
        .iter()
        .flat_map(|&s| MODES.iter().map(move |&m| (s, m)))
        .map(|(s, m)| protocol_run(s, m, may_train))
        .collect();
    let adaptive_ok = |seed| runs.iter().any(|r| r.seed == seed && r.mode == "adaptive" && r.metrics.is_some());
    let (rho_sigma, rho_beta) = if adaptive_ok(0) {
        adaptive_correlation(0)
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut other = Vec::new();
    for &s in &SEEDS[1..] {
        if adaptive_ok(s) {
            let (a, b) = adaptive_correlation(s);
            other.push(format!("seed {s}: sigma {a:.3}, beta {b:.3}"));
        }
    }
    let others = if other.is_empty() { String::new() } else { format!(" (reported: {})", other.join("; ")) };
    vec![
        (7, names[0].1, c7_robustness(&runs)),
        (
            8,
            names[1].1,
            verdict(rho_sigma > 0.3, format!("seed 0 at NL2: spearman(|residual|, sigma) = {rho_sigma:.3}{others}")),
        ),
        (
            9,
            names[2].1,
            verdict(rho_beta < 0.0, format!("seed 0 at NL2: spearman(|residual|, beta) = {rho_beta:.3}{others}")),
        ),
        (10, names[3].1, c10_training_sanity(&runs)),
    ]
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let include_heavy = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");

    let light: [Criterion; 6] = [
        (1, "gradient fidelity", c1_gradient_fidelity),
        (2, "special-case reduction", c2_special_cases),
        (3, "closed-form variance vs sampling", c3_variance_by_sampling),
        (4, "density validity", c4_density_mass),
        (5, "special-function accuracy", c5_special_functions),
        (6, "metric correctness", c6_metrics),
    ];
    let mut results: Vec<(usize, &str, Outcome)> = light.iter().map(|&(n, t, f)| (n, t, guarded(f))).collect();
    match catch_unwind(AssertUnwindSafe(|| heavy(include_heavy))) {
        Ok(h) => results.extend(h),
        Err(_) => {
            for (n, t) in [(7, "directional robustness"), (8, "sigma-residual correlation"), (9, "beta-residual correlation"), (10, "training sanity")] {
                results.push((n, t, Outcome::Fail("protocol panicked".into())));
            }
        }
    }
    results.push((11, "determinism", guarded(c11_determinism)));

    let mut failed = 0;
    for (n, title, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {n:>2} ({title}): {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
