//! Command-line front end. `ugac <command> --help` documents every flag.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{self, make_unpaired_dataset, read_set, to_batch, Dataset, Image};
use crate::error::{Error, Result};
use crate::ggd::LossMode;
use crate::gradcheck;
use crate::metrics::{LevelMetrics, MetricsReport};
use crate::nets::{Checkpoint, Generator};
use crate::tensor::{no_grad, with_lgamma_grad_fault};
use crate::train::{fit, load_generator, Trainer, TrainOutputs};
use crate::uncertainty::{correlate, export_panels, read_sidecars, total_uncertainty};

#[derive(Parser, Debug)]
#[command(name = "ugac", version, about = "Uncertainty-aware generalized adaptive CycleGAN at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic unpaired dataset and its noisy test tiers.
    GenData {
        /// Run configuration (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing dataset in `out`.
        #[arg(long)]
        force: bool,
    },
    /// Train both generators and critics; writes a CSV log and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from gen-data (needs trainA/ and trainB/).
        #[arg(long)]
        data: PathBuf,
        /// Run directory for the log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Cycle loss: adaptive, fixed-l1, or fixed-l2. Overrides the config.
        #[arg(long)]
        loss_mode: Option<LossMode>,
        /// Total epochs of the schedule. Overrides the config.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overwrite an existing run in `out`.
        #[arg(long)]
        force: bool,
    },
    /// Score the A-to-B generator at every noise level (SSIM and PSNR).
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// A checkpoint file, or `identity` to score the raw noisy inputs.
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the translated test images as PGM.
        #[arg(long)]
        dump_images: bool,
    },
    /// Export prediction, alpha, beta, uncertainty, and residual maps per test image.
    Uncertainty {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// MC-dropout passes (at least 2). Defaults to train.mc_dropout_passes.
        #[arg(long)]
        passes: Option<usize>,
        /// Noise level to analyse. Defaults to NL2 when present, else the first level.
        #[arg(long)]
        level: Option<String>,
    },
    /// Correlate per-image residuals with mean sigma and mean beta.
    Correlate {
        /// Output directory of the uncertainty command.
        #[arg(long)]
        uncertainty_dir: PathBuf,
        /// Directory for correlation.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and of the loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random loss tuples to check.
        #[arg(long, default_value_t = 100)]
        tuples: usize,
        /// Perturb an op's gradient to confirm the check catches it.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn dir_has_entries(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen_data(config: Option<&Path>, out: &Path, force: bool) -> Result<()> {
    let cfg = load_config(config)?;
    if dir_has_entries(out) {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "{} is not empty; pass --force to replace the dataset",
                out.display()
            )));
        }
        for sub in ["trainA", "trainB", "test"] {
            let p = out.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    create_dir(out)?;
    let (ds, manifest) = make_unpaired_dataset(&cfg.dataset, &cfg.noise_levels())?;
    ds.write(out, &manifest)?;
    println!(
        "wrote {} + {} training images and {} test images x {} noise levels to {}",
        ds.train_a.len(),
        ds.train_b.len(),
        ds.test_clean.len(),
        ds.test_levels.len(),
        out.display()
    );
    Ok(())
}

fn image_size(images: &[Image]) -> Result<usize> {
    let first = &images[0];
    if first.width != first.height || images.iter().any(|i| (i.width, i.height) != (first.width, first.height)) {
        return Err(Error::Data("training images must all be the same square size".into()));
    }
    Ok(first.width)
}

fn check_divisible(size: usize, depth: usize) -> Result<()> {
    let f = 1usize << depth;
    if !size.is_multiple_of(f) {
        return Err(Error::Data(format!(
            "{size}x{size} images are not divisible by 2^{depth}; pad to {}x{}",
            size.div_ceil(f) * f,
            size.div_ceil(f) * f
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    loss_mode: Option<LossMode>,
    epochs: Option<usize>,
    resume: Option<&Path>,
    force: bool,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = loss_mode {
        cfg.train.loss_mode = m;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let outputs = TrainOutputs::in_dir(out);
    if outputs.log.exists() && resume.is_none() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already holds a run; pass --force to overwrite or --resume to continue",
            out.display()
        )));
    }
    let (_, train_a) = read_set(&data_dir.join("trainA"))?;
    let (_, train_b) = read_set(&data_dir.join("trainB"))?;
    let size = image_size(&train_a)?;
    if image_size(&train_b)? != size {
        return Err(Error::Data("trainA and trainB image sizes differ".into()));
    }

    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            let stored_mode = ck.header.meta["loss_mode"].as_str().map(str::to_owned);
            if stored_mode.as_deref().is_some_and(|m| m.parse::<LossMode>().ok() != Some(cfg.train.loss_mode)) {
                return Err(Error::Config {
                    path: "train.loss_mode".into(),
                    msg: format!("checkpoint was trained with `{}`", stored_mode.unwrap()),
                });
            }
            Trainer::resume(&ck, &cfg.train)?
        }
        None => {
            if force && outputs.log.exists() {
                fs::remove_file(&outputs.log).map_err(|e| Error::io(&outputs.log, e))?;
            }
            Trainer::new(&cfg.net, &cfg.train)?
        }
    };
    check_divisible(size, trainer.model.net.depth)?;
    create_dir(out)?;
    write_text(&out.join("config.json"), &(serde_json::to_string_pretty(&cfg)? + "\n"))?;

    let start = Instant::now();
    let pa: Vec<Vec<f64>> = train_a.into_iter().map(|i| i.pixels).collect();
    let pb: Vec<Vec<f64>> = train_b.into_iter().map(|i| i.pixels).collect();
    let total = cfg.train.epochs;
    eprintln!(
        "training {} from epoch {} to {total} ({} mode, seed {})",
        out.display(),
        trainer.epoch(),
        cfg.train.loss_mode,
        cfg.train.seed
    );
    let result = fit(&mut trainer, &pa, &pb, size, &outputs, |r| {
        eprintln!(
            "epoch {:>4}/{total}  lr {:.3e}  L_ucyc {:.5}  L_adv_G {:.5}  L_G {:.5}  L_D {:.5}  [{:.0}s]",
            r.epoch + 1,
            r.lr,
            r.l_ucyc,
            r.l_adv_g,
            r.l_g,
            r.l_d,
            start.elapsed().as_secs_f64()
        );
    });
    match result {
        Ok(_) => {
            println!("final checkpoint: {}", outputs.final_checkpoint.display());
            Ok(())
        }
        Err(e @ Error::NonFinite { .. }) => {
            eprintln!(
                "aborted at epoch {}; checkpoints already in {} are intact",
                trainer.epoch() + 1,
                outputs.checkpoint_dir.display()
            );
            Err(e)
        }
        Err(e) => Err(e),
    }
}

/// Translation used by eval: either a trained A-to-B generator or the identity.
enum Translator {
    Identity,
    Model(Box<Generator>),
}

const EVAL_BATCH: usize = 16;

impl Translator {
    fn open(spec: &str) -> Result<Translator> {
        if spec == "identity" {
            return Ok(Translator::Identity);
        }
        let ck = Checkpoint::read(Path::new(spec))?;
        Ok(Translator::Model(Box::new(load_generator(&ck, "g_a")?)))
    }

    fn translate(&self, images: &[Image]) -> Result<Vec<Image>> {
        let g = match self {
            Translator::Identity => return Ok(images.to_vec()),
            Translator::Model(g) => g,
        };
        check_divisible(image_size(images)?, g.config().depth)?;
        let mut out = Vec::with_capacity(images.len());
        // Dropout is off, so the rng is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in images.chunks(EVAL_BATCH) {
            let x = to_batch(&chunk.iter().collect::<Vec<_>>())?;
            let y = no_grad(|| g.forward(&x, false, &mut rng))?;
            out.extend(data::from_batch(&y.image)?);
        }
        Ok(out)
    }
}

/// Evaluates every noise level of a loaded dataset.
pub fn evaluate(checkpoint: &str, ds: &Dataset, dump: Option<&Path>) -> Result<MetricsReport> {
    let t = Translator::open(checkpoint)?;
    let mut report = MetricsReport::default();
    for level in &ds.test_levels {
        let preds = t.translate(&level.noisy)?;
        if let Some(dir) = dump {
            let sub = dir.join(&level.level.name);
            create_dir(&sub)?;
            for (name, img) in ds.test_names.iter().zip(&preds) {
                data::write_pgm(&sub.join(format!("{name}.pgm")), img)?;
            }
        }
        report.rows.push(LevelMetrics::evaluate(&level.level.name, &preds, &ds.test_clean)?);
    }
    Ok(report)
}

fn levels_for(config: Option<&Path>, data_dir: &Path) -> Result<Option<crate::data::NoiseLevelSpec>> {
    Ok(match config {
        Some(_) => Some(load_config(config)?.noise_levels()),
        None if data_dir.join(data::MANIFEST_FILE).exists() => None,
        None => Some(crate::data::NoiseLevelSpec::natural()),
    })
}

fn eval(config: Option<&Path>, checkpoint: &str, data_dir: &Path, out: &Path, dump: bool) -> Result<()> {
    let levels = levels_for(config, data_dir)?;
    let ds = Dataset::load(data_dir, levels.as_ref())?;
    create_dir(out)?;
    let dump_dir = out.join("images");
    let report = evaluate(checkpoint, &ds, dump.then_some(dump_dir.as_path()))?;
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn default_level(ds: &Dataset) -> String {
    if ds.level("NL2").is_some() {
        "NL2".into()
    } else {
        ds.test_levels[0].level.name.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn uncertainty(
    config: Option<&Path>,
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    passes: Option<usize>,
    level: Option<&str>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let passes = passes.unwrap_or(cfg.train.mc_dropout_passes);
    if passes < 2 {
        return Err(Error::InvalidArgument(format!(
            "--passes {passes}: epistemic uncertainty needs at least 2 passes"
        )));
    }
    let levels = levels_for(config, data_dir)?;
    let ds = Dataset::load(data_dir, levels.as_ref())?;
    let level = level.map_or_else(|| default_level(&ds), str::to_owned);
    let tl = ds
        .level(&level)
        .ok_or_else(|| Error::Data(format!("dataset has no noise level `{level}`")))?;
    let ck = Checkpoint::read(checkpoint)?;
    let g = load_generator(&ck, "g_a")?;
    let size = image_size(&tl.noisy)?;
    check_divisible(size, g.config().depth)?;
    create_dir(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(0x756e63);
    let mut written = 0;
    for (c, chunk) in tl.noisy.chunks(EVAL_BATCH).enumerate() {
        let x = to_batch(&chunk.iter().collect::<Vec<_>>())?;
        let maps = total_uncertainty(&g, &x, passes, &mut rng)?;
        for i in 0..chunk.len() {
            let k = c * EVAL_BATCH + i;
            export_panels(out, &ds.test_names[k], &level, passes, size, size, &maps, i, &ds.test_clean[k])?;
            written += 1;
        }
    }
    println!("wrote uncertainty panels for {written} images at {level} ({passes} passes) to {}", out.display());
    Ok(())
}

fn correlate_cmd(dir: &Path, out: &Path) -> Result<()> {
    let sidecars = read_sidecars(dir)?;
    let report = correlate(sidecars.into_iter().map(|s| s.stats).collect())?;
    create_dir(out)?;
    write_text(&out.join("correlation.csv"), &report.to_csv())?;
    println!(
        "{} images  pearson_sigma {:.4}  spearman_sigma {:.4}  pearson_beta {:.4}  spearman_beta {:.4}",
        report.rows.len(),
        report.pearson_sigma,
        report.spearman_sigma,
        report.pearson_beta,
        report.spearman_beta
    );
    Ok(())
}

fn gradcheck_cmd(seed: u64, tuples: usize, fault: Option<&str>) -> Result<()> {
    let start = Instant::now();
    let results = match fault {
        None => gradcheck::run_all(seed, tuples)?,
        Some("lgamma") => with_lgamma_grad_fault(1e-2, || gradcheck::run_all(seed, tuples))?,
        Some(other) => return Err(Error::InvalidArgument(format!("no fault hook for `{other}`"))),
    };
    print!("{}", gradcheck::format_table(&results));
    println!("{:.1}s", start.elapsed().as_secs_f64());
    let ops: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.op.clone()).collect();
    if ops.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck { ops })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, force } => gen_data(config.as_deref(), &out, force),
        Command::Train {
            config,
            data,
            out,
            loss_mode,
            epochs,
            resume,
            force,
        } => train(config.as_deref(), &data, &out, loss_mode, epochs, resume.as_deref(), force),
        Command::Eval {
            config,
            checkpoint,
            data,
            out,
            dump_images,
        } => eval(config.as_deref(), &checkpoint, &data, &out, dump_images),
        Command::Uncertainty {
            config,
            checkpoint,
            data,
            out,
            passes,
            level,
        } => uncertainty(config.as_deref(), &checkpoint, &data, &out, passes, level.as_deref()),
        Command::Correlate { uncertainty_dir, out } => correlate_cmd(&uncertainty_dir, &out),
        Command::Gradcheck {
            seed,
            tuples,
            inject_fault,
        } => gradcheck_cmd(seed, tuples, inject_fault.as_deref()),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
