use rand::Rng;

use super::layers::{Conv, LEAKY_SLOPE, NORM_EPS};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::{dims4, Tensor};

/// Patch critic: three stride-2 4x4 convolutions and a 3x3 scoring head.
/// A 32x32 input yields a 4x4 map of raw (unsquashed) scores.
#[derive(Clone, Debug)]
pub struct Discriminator {
    dropout_rate: f64,
    convs: [Conv; 3],
    head: Conv,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<Discriminator> {
        cfg.validate()?;
        let c = cfg.base_channels;
        Ok(Discriminator {
            dropout_rate: cfg.dropout_rate,
            convs: [
                Conv::new(1, c, 4, 2, 1, rng)?,
                Conv::new(c, 2 * c, 4, 2, 1, rng)?,
                Conv::new(2 * c, 4 * c, 4, 2, 1, rng)?,
            ],
            head: Conv::new(4 * c, 1, 3, 1, 1, rng)?,
        })
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, dropout_active: bool, rng: &mut R) -> Result<Tensor> {
        let [_, c, h, w] = dims4("discriminator_forward", x)?;
        if c != 1 || h < 8 || w < 8 {
            return Err(Error::domain(
                "discriminator_forward",
                format!("expected [N, 1, H>=8, W>=8], got {:?}", x.shape()),
            ));
        }
        let mut hid = self.convs[0].forward(x)?.leaky_relu(LEAKY_SLOPE);
        for conv in &self.convs[1..] {
            hid = conv.forward(&hid)?.instance_norm(NORM_EPS)?.leaky_relu(LEAKY_SLOPE);
        }
        let hid = hid.dropout(self.dropout_rate, dropout_active, rng)?;
        self.head.forward(&hid)
    }

    /// Deterministic scoring with dropout off.
    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, false, &mut rand::rngs::mock::StepRng::new(0, 0))
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            conv.named_params(&format!("conv{i}"), &mut out);
        }
        self.head.named_params("head", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }
}
