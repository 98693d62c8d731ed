//! Generator, discriminator, and the cycle wiring between them.

mod checkpoint;
mod discriminator;
mod generator;
mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::Discriminator;
pub use generator::Generator;
pub use layers::{Conv, ConvBlock};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    /// Number of 2x down/up-sampling levels in the generator.
    pub depth: usize,
    pub dropout_rate: f64,
    /// Floor added after the ReLU on the 1/α and β heads.
    pub eps_pos: f64,
    pub beta_max: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 16,
            depth: 3,
            dropout_rate: 0.2,
            eps_pos: 1e-3,
            beta_max: 10.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(Error::Config { path: format!("net.{path}"), msg });
        if self.depth < 1 {
            return bad("depth", "must be at least 1".into());
        }
        if self.base_channels < 1 {
            return bad("base_channels", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("{} is outside [0, 1)", self.dropout_rate));
        }
        if !(self.eps_pos > 0.0) {
            return bad("eps_pos", "must be positive".into());
        }
        if !(self.beta_max > self.eps_pos) {
            return bad("beta_max", "must exceed eps_pos".into());
        }
        Ok(())
    }
}

/// The three generator heads.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// Translated image in [0, 1].
    pub image: Tensor,
    /// Inverse scale 1/α, at least `eps_pos`.
    pub inv_alpha: Tensor,
    /// Shape β in `[eps_pos, beta_max]`.
    pub beta: Tensor,
}

impl GeneratorOutput {
    /// α = 1 / inv_alpha.
    pub fn alpha(&self) -> Result<Tensor> {
        self.inv_alpha.reciprocal()
    }
}

/// Everything one training step produces from the two cycles.
#[derive(Clone, Debug)]
pub struct CycleBundle {
    pub a: Tensor,
    pub b: Tensor,
    /// G_A(a): `hat_b` and its α/β maps.
    pub hat_b: GeneratorOutput,
    /// G_B(hat_b): the reconstruction of `a`.
    pub bar_a: GeneratorOutput,
    /// G_B(b).
    pub hat_a: GeneratorOutput,
    /// G_A(hat_a): the reconstruction of `b`.
    pub bar_b: GeneratorOutput,
}

/// Runs both cycles, A→B→A and B→A→B. Only the image head of the first
/// generator feeds the second. The rng is consumed in the order
/// G_A(a), G_B(hat_b), G_B(b), G_A(hat_a).
pub fn run_cycle<R: Rng + ?Sized>(
    g_a: &Generator,
    g_b: &Generator,
    a: &Tensor,
    b: &Tensor,
    dropout_active: bool,
    rng: &mut R,
) -> Result<CycleBundle> {
    if a.shape() != b.shape() {
        return Err(Error::shape("run_cycle", a.shape(), b.shape()));
    }
    let hat_b = g_a.forward(a, dropout_active, rng)?;
    let bar_a = g_b.forward(&hat_b.image, dropout_active, rng)?;
    let hat_a = g_b.forward(b, dropout_active, rng)?;
    let bar_b = g_a.forward(&hat_a.image, dropout_active, rng)?;
    Ok(CycleBundle {
        a: a.clone(),
        b: b.clone(),
        hat_b,
        bar_a,
        hat_a,
        bar_b,
    })
}
