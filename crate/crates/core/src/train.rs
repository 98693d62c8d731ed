//! Optimization loop: least-squares adversarial losses, the combined
//! generator/discriminator objectives, Adam, and cosine annealing.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggd::{self, LossMode};
use crate::nets::{run_cycle, Checkpoint, Discriminator, Generator, NetConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub mc_dropout_passes: usize,
    /// Write a checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 10.0,
            lambda2: 2.0,
            lr0: 2e-4,
            epochs: 200,
            batch_size: 4,
            seed: 0,
            loss_mode: LossMode::Adaptive,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            mc_dropout_passes: 16,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| {
            Err(Error::Config {
                path: format!("train.{path}"),
                msg: msg.into(),
            })
        };
        // λ = 0 is allowed: it switches a term off.
        if !(self.lambda1 >= 0.0) {
            return bad("lambda1", "must be nonnegative");
        }
        if !(self.lambda2 >= 0.0) {
            return bad("lambda2", "must be nonnegative");
        }
        if !(self.lr0 > 0.0) {
            return bad("lr0", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta2", "must lie in [0, 1)");
        }
        if self.mc_dropout_passes < 2 {
            return bad("mc_dropout_passes", "must be at least 2");
        }
        Ok(())
    }
}

/// `lr0 · (1 + cos(π · epoch / epochs)) / 2`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside the schedule [0, {}]",
            cfg.epochs
        )));
    }
    Ok(cfg.lr0 * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos()))
}

pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update of a single parameter. `step` is the
/// 1-based update count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    debug_assert!(step >= 1);
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam moments for a fixed, ordered parameter list.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> OptimizerState {
        OptimizerState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    /// Applies accumulated gradients (missing ones count as zero) and clears them.
    pub fn apply(&mut self, params: &[Tensor], lr: f64, beta1: f64, beta2: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            adam_update(
                &mut p.data_mut(),
                &grad,
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                lr,
                beta1,
                beta2,
                ADAM_EPS,
            );
            p.zero_grad();
        }
    }
}

fn mse_to(x: &Tensor, target: f64) -> Tensor {
    x.add_scalar(-target).square().mean()
}

/// Generator adversarial loss: both critics should call the fakes real.
pub fn adv_loss_g<R: Rng + ?Sized>(
    d_a: &Discriminator,
    d_b: &Discriminator,
    hat_b: &Tensor,
    hat_a: &Tensor,
    dropout_active: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let on_b = mse_to(&d_a.forward(hat_b, dropout_active, rng)?, 1.0);
    let on_a = mse_to(&d_b.forward(hat_a, dropout_active, rng)?, 1.0);
    on_b.add(&on_a)
}

/// Discriminator loss on real images (target 1) and detached fakes (target 0).
/// `d_a` judges domain B, `d_b` judges domain A.
#[allow(clippy::too_many_arguments)]
pub fn adv_loss_d<R: Rng + ?Sized>(
    d_a: &Discriminator,
    d_b: &Discriminator,
    a: &Tensor,
    b: &Tensor,
    hat_a: &Tensor,
    hat_b: &Tensor,
    dropout_active: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let terms = [
        mse_to(&d_a.forward(b, dropout_active, rng)?, 1.0),
        mse_to(&d_a.forward(hat_b, dropout_active, rng)?, 0.0),
        mse_to(&d_b.forward(a, dropout_active, rng)?, 1.0),
        mse_to(&d_b.forward(hat_a, dropout_active, rng)?, 0.0),
    ];
    terms[1..].iter().try_fold(terms[0].clone(), |acc, t| acc.add(t))
}

/// The four networks of the two-domain translation model.
#[derive(Clone, Debug)]
pub struct CycleGan {
    pub net: NetConfig,
    /// A → B.
    pub g_a: Generator,
    /// B → A.
    pub g_b: Generator,
    /// Critic for domain B.
    pub d_a: Discriminator,
    /// Critic for domain A.
    pub d_b: Discriminator,
}

impl CycleGan {
    pub fn new<R: Rng + ?Sized>(net: &NetConfig, rng: &mut R) -> Result<CycleGan> {
        Ok(CycleGan {
            net: net.clone(),
            g_a: Generator::new(net, rng)?,
            g_b: Generator::new(net, rng)?,
            d_a: Discriminator::new(net, rng)?,
            d_b: Discriminator::new(net, rng)?,
        })
    }

    pub fn generator_params(&self) -> Vec<Tensor> {
        let mut p = self.g_a.params();
        p.extend(self.g_b.params());
        p
    }

    pub fn discriminator_params(&self) -> Vec<Tensor> {
        let mut p = self.d_a.params();
        p.extend(self.d_b.params());
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let prefixed = |prefix: &str, v: Vec<(String, Tensor)>| {
            v.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t)).collect::<Vec<_>>()
        };
        let mut out = prefixed("g_a", self.g_a.named_params());
        out.extend(prefixed("g_b", self.g_b.named_params()));
        out.extend(prefixed("d_a", self.d_a.named_params()));
        out.extend(prefixed("d_b", self.d_b.named_params()));
        out
    }

    /// Rebuilds the architecture from the checkpoint header and loads weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<CycleGan> {
        let model = CycleGan::new(&ck.header.net, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, t) in model.named_params() {
            ck.restore(&name, &t)?;
        }
        Ok(model)
    }
}

/// Loads a single generator (`"g_a"` or `"g_b"`) from a checkpoint.
pub fn load_generator(ck: &Checkpoint, which: &str) -> Result<Generator> {
    if which != "g_a" && which != "g_b" {
        return Err(Error::InvalidArgument(format!("unknown generator `{which}`")));
    }
    let g = Generator::new(&ck.header.net, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, t) in g.named_params() {
        ck.restore(&format!("{which}.{name}"), &t)?;
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub l_ucyc: f64,
    pub l_adv_g: f64,
    pub l_g: f64,
    pub l_d: f64,
}

fn finite_or_abort(term: &str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

/// One sequential update: generators on `λ1·L_ucyc + λ2·L_adv^G`, then
/// discriminators on `L_adv^D` with the fakes detached.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    model: &CycleGan,
    a: &Tensor,
    b: &Tensor,
    cfg: &TrainConfig,
    lr: f64,
    opt_g: &mut OptimizerState,
    opt_d: &mut OptimizerState,
    rng: &mut R,
) -> Result<StepReport> {
    let bundle = run_cycle(&model.g_a, &model.g_b, a, b, true, rng)?;
    let l_ucyc = ggd::l_ucyc(&bundle, cfg.loss_mode).map_err(|e| match e {
        Error::Domain { msg, .. } => Error::NonFinite {
            term: format!("L_ucyc ({msg})"),
        },
        other => other,
    })?;
    finite_or_abort("L_ucyc", &l_ucyc)?;
    let l_adv_g = adv_loss_g(&model.d_a, &model.d_b, &bundle.hat_b.image, &bundle.hat_a.image, true, rng)?;
    finite_or_abort("L_adv_G", &l_adv_g)?;
    let l_g = l_ucyc.mul_scalar(cfg.lambda1).add(&l_adv_g.mul_scalar(cfg.lambda2))?;
    finite_or_abort("L_G", &l_g)?;

    l_g.backward()?;
    let g_params = model.generator_params();
    let d_params = model.discriminator_params();
    opt_g.apply(&g_params, lr, cfg.adam_beta1, cfg.adam_beta2);
    // The generator objective also reached the critics; those gradients are not theirs.
    d_params.iter().for_each(Tensor::zero_grad);

    let hat_a = bundle.hat_a.image.detach();
    let hat_b = bundle.hat_b.image.detach();
    let l_d = adv_loss_d(&model.d_a, &model.d_b, a, b, &hat_a, &hat_b, true, rng)?;
    finite_or_abort("L_D", &l_d)?;
    l_d.backward()?;
    opt_d.apply(&d_params, lr, cfg.adam_beta1, cfg.adam_beta2);

    Ok(StepReport {
        l_ucyc: l_ucyc.item(),
        l_adv_g: l_adv_g.item(),
        l_g: l_g.item(),
        l_d: l_d.item(),
    })
}

/// Mean step losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub l_ucyc: f64,
    pub l_adv_g: f64,
    pub l_g: f64,
    pub l_d: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,L_ucyc,L_adv_G,L_G,L_D";

impl EpochReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.lr, self.l_ucyc, self.l_adv_g, self.l_g, self.l_d
        )
    }
}

/// Owns the model, both optimizer states, and the schedule position.
pub struct Trainer {
    pub model: CycleGan,
    pub cfg: TrainConfig,
    opt_g: OptimizerState,
    opt_d: OptimizerState,
    /// Completed epochs.
    epoch: usize,
    step: u64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn stack(images: &[&[f64]], size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        data.extend_from_slice(img);
    }
    Tensor::new(data, &[images.len(), 1, size, size])
}

impl Trainer {
    pub fn new(net: &NetConfig, cfg: &TrainConfig) -> Result<Trainer> {
        net.validate()?;
        cfg.validate()?;
        let model = CycleGan::new(net, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let opt_g = OptimizerState::new(&model.generator_params());
        let opt_d = OptimizerState::new(&model.discriminator_params());
        Ok(Trainer {
            model,
            cfg: cfg.clone(),
            opt_g,
            opt_d,
            epoch: 0,
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// schedule resumes at the stored epoch; `cfg.epochs` may extend it.
    pub fn resume(ck: &Checkpoint, cfg: &TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let model = CycleGan::from_checkpoint(ck)?;
        let mut opt_g = OptimizerState::new(&model.generator_params());
        let mut opt_d = OptimizerState::new(&model.discriminator_params());
        for (tag, opt) in [("opt_g", &mut opt_g), ("opt_d", &mut opt_d)] {
            for i in 0..opt.m.len() {
                for (kind, buf) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                    let name = format!("{tag}.{kind}.{i}");
                    let (_, values) = ck
                        .get(&name)
                        .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
                    if values.len() != buf.len() {
                        return Err(Error::Data(format!("optimizer state `{name}` has the wrong size")));
                    }
                    buf.copy_from_slice(values);
                }
            }
        }
        let meta = &ck.header.meta;
        opt_g.step = meta["opt_g_step"].as_u64().unwrap_or(ck.header.train_step);
        opt_d.step = meta["opt_d_step"].as_u64().unwrap_or(ck.header.train_step);
        if ck.header.epoch > cfg.epochs {
            return Err(Error::Config {
                path: "train.epochs".into(),
                msg: format!("checkpoint is at epoch {} beyond the schedule", ck.header.epoch),
            });
        }
        Ok(Trainer {
            model,
            cfg: cfg.clone(),
            opt_g,
            opt_d,
            epoch: ck.header.epoch,
            step: ck.header.train_step,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// One pass over the data with independent shuffles of each domain.
    pub fn train_epoch(&mut self, domain_a: &[Vec<f64>], domain_b: &[Vec<f64>], size: usize) -> Result<EpochReport> {
        let lr = cosine_lr(self.epoch, &self.cfg)?;
        let bs = self.cfg.batch_size;
        let steps = domain_a.len().min(domain_b.len()) / bs;
        if steps == 0 {
            return Err(Error::Data(format!(
                "need at least {bs} images per domain, got {} and {}",
                domain_a.len(),
                domain_b.len()
            )));
        }
        let mut rng = epoch_rng(self.cfg.seed, self.epoch);
        let mut order_a: Vec<usize> = (0..domain_a.len()).collect();
        let mut order_b: Vec<usize> = (0..domain_b.len()).collect();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);

        let mut sum = StepReport::default();
        for s in 0..steps {
            let pick = |order: &[usize], set: &'_ [Vec<f64>]| -> Vec<Vec<f64>> {
                order[s * bs..(s + 1) * bs].iter().map(|&i| set[i].clone()).collect()
            };
            let a_imgs = pick(&order_a, domain_a);
            let b_imgs = pick(&order_b, domain_b);
            let a = stack(&a_imgs.iter().map(Vec::as_slice).collect::<Vec<_>>(), size)?;
            let b = stack(&b_imgs.iter().map(Vec::as_slice).collect::<Vec<_>>(), size)?;
            let r = train_step(&self.model, &a, &b, &self.cfg, lr, &mut self.opt_g, &mut self.opt_d, &mut rng)?;
            self.step += 1;
            sum.l_ucyc += r.l_ucyc;
            sum.l_adv_g += r.l_adv_g;
            sum.l_g += r.l_g;
            sum.l_d += r.l_d;
        }
        let n = steps as f64;
        let report = EpochReport {
            epoch: self.epoch,
            lr,
            l_ucyc: sum.l_ucyc / n,
            l_adv_g: sum.l_adv_g / n,
            l_g: sum.l_g / n,
            l_d: sum.l_d / n,
        };
        self.epoch += 1;
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut named = self.model.named_params();
        let opt_tensors = |tag: &str, opt: &OptimizerState| {
            let mut v = Vec::new();
            for i in 0..opt.m.len() {
                for (kind, buf) in [("m", &opt.m[i]), ("v", &opt.v[i])] {
                    let t = Tensor::new(buf.clone(), &[buf.len()]).expect("nonempty moment buffer");
                    v.push((format!("{tag}.{kind}.{i}"), t));
                }
            }
            v
        };
        named.extend(opt_tensors("opt_g", &self.opt_g));
        named.extend(opt_tensors("opt_d", &self.opt_d));
        let meta = serde_json::json!({
            "train": self.cfg,
            "loss_mode": self.cfg.loss_mode,
            "opt_g_step": self.opt_g.step,
            "opt_d_step": self.opt_d.step,
        });
        Checkpoint::new(
            &self.model.net,
            self.step,
            self.epoch,
            meta,
            named.iter().map(|(n, t)| (n.clone(), t)),
        )
    }
}

/// Where [`fit`] writes its artifacts.
pub struct TrainOutputs {
    pub log: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub final_checkpoint: PathBuf,
}

impl TrainOutputs {
    pub fn in_dir(dir: &Path) -> TrainOutputs {
        TrainOutputs {
            log: dir.join("train_log.csv"),
            checkpoint_dir: dir.join("checkpoints"),
            final_checkpoint: dir.join("final.ckpt"),
        }
    }
}

/// Trains to the end of the schedule, appending one CSV row per epoch and
/// writing periodic plus final checkpoints. On a numerical abort the most
/// recent checkpoint on disk is left untouched.
pub fn fit(
    trainer: &mut Trainer,
    domain_a: &[Vec<f64>],
    domain_b: &[Vec<f64>],
    size: usize,
    out: &TrainOutputs,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    fs::create_dir_all(&out.checkpoint_dir).map_err(|e| Error::io(&out.checkpoint_dir, e))?;
    // On resume keep the rows of epochs the checkpoint already covers.
    let mut kept = format!("{TRAIN_LOG_HEADER}\n");
    if trainer.epoch() > 0 && out.log.exists() {
        let old = fs::read_to_string(&out.log).map_err(|e| Error::io(&out.log, e))?;
        for line in old.lines().skip(1) {
            let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
            if epoch.is_some_and(|e| e < trainer.epoch()) {
                kept += line;
                kept.push('\n');
            }
        }
    }
    let mut log = fs::File::create(&out.log).map_err(|e| Error::io(&out.log, e))?;
    log.write_all(kept.as_bytes()).map_err(|e| Error::io(&out.log, e))?;
    let mut reports = Vec::new();
    while !trainer.finished() {
        let r = trainer.train_epoch(domain_a, domain_b, size)?;
        writeln!(log, "{}", r.csv_row()).map_err(|e| Error::io(&out.log, e))?;
        on_epoch(&r);
        reports.push(r);
        let every = trainer.cfg.checkpoint_every;
        if every > 0 && trainer.epoch().is_multiple_of(every) && !trainer.finished() {
            let path = out.checkpoint_dir.join(format!("epoch_{:04}.ckpt", trainer.epoch()));
            trainer.checkpoint().write(&path)?;
        }
    }
    log.flush().map_err(|e| Error::io(&out.log, e))?;
    trainer.checkpoint().write(&out.final_checkpoint)?;
    Ok(reports)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
