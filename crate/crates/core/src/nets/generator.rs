use rand::Rng;

use super::layers::{Conv, ConvBlock};
use super::{GeneratorOutput, NetConfig};
use crate::error::{Error, Result};
use crate::tensor::{concat, dims4, Tensor};

/// Small U-Net trunk shared by three 1x1 heads: image, 1/α, and β.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: NetConfig,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    decoder: Vec<ConvBlock>,
    image_head: Conv,
    inv_alpha_head: Conv,
    beta_head: Conv,
}

/// Head weights for 1/α and β start at this fraction of the Kaiming scale
/// so both maps begin close to their bias value of one.
const UNCERTAINTY_HEAD_GAIN: f64 = 0.1;

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<Generator> {
        cfg.validate()?;
        let width = |level: usize| cfg.base_channels << level;
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut c_in = 1;
        for level in 0..cfg.depth {
            encoder.push(ConvBlock::new(c_in, width(level), rng)?);
            c_in = width(level);
        }
        let bottleneck = ConvBlock::new(c_in, width(cfg.depth), rng)?;
        let mut decoder = Vec::with_capacity(cfg.depth);
        for level in (0..cfg.depth).rev() {
            decoder.push(ConvBlock::new(width(level + 1) + width(level), width(level), rng)?);
        }
        let trunk = width(0);
        let image_head = Conv::new(trunk, 1, 1, 1, 0, rng)?;
        let inv_alpha_head = Conv::new(trunk, 1, 1, 1, 0, rng)?;
        let beta_head = Conv::new(trunk, 1, 1, 1, 0, rng)?;
        for head in [&inv_alpha_head, &beta_head] {
            head.scale_weights(UNCERTAINTY_HEAD_GAIN);
            head.fill_bias(1.0 - cfg.eps_pos);
        }
        Ok(Generator {
            cfg: cfg.clone(),
            encoder,
            bottleneck,
            decoder,
            image_head,
            inv_alpha_head,
            beta_head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, dropout_active: bool, rng: &mut R) -> Result<GeneratorOutput> {
        let [_, c, h, w] = dims4("generator_forward", x)?;
        if c != 1 {
            return Err(Error::domain("generator_forward", format!("expected 1 channel, got {c}")));
        }
        let multiple = 1usize << self.cfg.depth;
        if h % multiple != 0 || w % multiple != 0 {
            let pad = |v: usize| v.div_ceil(multiple) * multiple;
            return Err(Error::domain(
                "generator_forward",
                format!(
                    "spatial size {h}x{w} must be divisible by {multiple}; pad to {}x{}",
                    pad(h),
                    pad(w)
                ),
            ));
        }
        let rate = self.cfg.dropout_rate;

        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut hid = x.clone();
        for block in &self.encoder {
            hid = block.forward::<R>(&hid, None)?;
            skips.push(hid.clone());
            hid = hid.max_pool2d(2)?;
        }
        hid = self.bottleneck.forward(&hid, Some((rate, dropout_active, &mut *rng)))?;
        for (block, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = hid.upsample_nearest2d(2)?;
            hid = block.forward(&concat(&[&up, skip], 1)?, Some((rate, dropout_active, &mut *rng)))?;
        }

        let eps = self.cfg.eps_pos;
        Ok(GeneratorOutput {
            image: self.image_head.forward(&hid)?.sigmoid(),
            inv_alpha: self.inv_alpha_head.forward(&hid)?.relu().add_scalar(eps),
            beta: self
                .beta_head
                .forward(&hid)?
                .relu()
                .add_scalar(eps)
                .clamp(eps, self.cfg.beta_max),
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            b.named_params(&format!("enc{i}"), &mut out);
        }
        self.bottleneck.named_params("bottleneck", &mut out);
        for (i, b) in self.decoder.iter().enumerate() {
            b.named_params(&format!("dec{i}"), &mut out);
        }
        self.image_head.named_params("head_image", &mut out);
        self.inv_alpha_head.named_params("head_inv_alpha", &mut out);
        self.beta_head.named_params("head_beta", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }
}
