//! Zero-mean generalized Gaussian residual model.
//!
//! The density is `β / (2 α Γ(1/β)) · exp(-(|x - μ| / α)^β)`. `β = 1` is
//! Laplace, `β = 2` Gaussian, and `β < 1` gives heavier tails. The
//! per-pixel training objective is the negative log-density without its
//! constant `ln 2`, averaged over pixels:
//!
//! ```text
//! (|recon - target| / α)^β - ln(β / α) + ln Γ(1/β)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::CycleBundle;
use crate::specfn;
use crate::tensor::Tensor;

/// Shape values entering the loss are clamped into this range.
pub const BETA_LOSS_RANGE: (f64, f64) = (0.3, 10.0);

/// How the cycle-consistency residual is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// α = 1, β = 2 at every pixel.
    #[serde(alias = "fixed-l2")]
    FixedL2,
    /// α = 1, β = 1 at every pixel: plain L1 cycle consistency.
    #[serde(alias = "fixed-l1")]
    FixedL1,
    /// α and β maps predicted by the generators.
    #[default]
    Adaptive,
}

impl LossMode {
    /// `(α, β)` for the fixed modes.
    pub fn fixed_params(self) -> Option<(f64, f64)> {
        match self {
            LossMode::FixedL2 => Some((1.0, 2.0)),
            LossMode::FixedL1 => Some((1.0, 1.0)),
            LossMode::Adaptive => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::FixedL2 => "fixed-l2",
            LossMode::FixedL1 => "fixed-l1",
            LossMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-l2" | "fixed_l2" => Ok(LossMode::FixedL2),
            "fixed-l1" | "fixed_l1" => Ok(LossMode::FixedL1),
            "adaptive" => Ok(LossMode::Adaptive),
            other => Err(Error::InvalidArgument(format!("unknown loss mode `{other}`"))),
        }
    }
}

fn check_scale_shape(op: &'static str, alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::domain(op, format!("alpha must be positive, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(op, format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Log-density of `GGD(mu, alpha, beta)` at `x`.
pub fn ggd_logpdf(x: f64, mu: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_scale_shape("ggd_logpdf", alpha, beta)?;
    let norm = (beta / (2.0 * alpha)).ln() - specfn::ln_gamma(1.0 / beta);
    Ok(norm - ((x - mu).abs() / alpha).powf(beta))
}

/// Closed-form variance `α² Γ(3/β) / Γ(1/β)`.
pub fn ggd_variance(alpha: f64, beta: f64) -> Result<f64> {
    check_scale_shape("ggd_variance", alpha, beta)?;
    Ok(variance_unchecked(alpha, beta))
}

pub(crate) fn variance_unchecked(alpha: f64, beta: f64) -> f64 {
    alpha * alpha * (specfn::ln_gamma(3.0 / beta) - specfn::ln_gamma(1.0 / beta)).exp()
}

/// One draw from the zero-mean `GGD(alpha, beta)`: `±α · W^(1/β)` with
/// `W ~ Gamma(1/β)`.
pub fn ggd_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    check_scale_shape("ggd_sample", alpha, beta)?;
    let w = specfn::gamma_variate(1.0 / beta, rng);
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    Ok(sign * alpha * w.powf(1.0 / beta))
}

fn check_loss_input(name: &str, t: &Tensor, positive: bool) -> Result<()> {
    let data = t.data();
    if let Some(v) = data.iter().find(|v| v.is_nan()) {
        return Err(Error::domain("l_alpha_beta", format!("{name} contains {v}")));
    }
    if positive {
        if let Some(v) = data.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain("l_alpha_beta", format!("{name} must be positive, found {v}")));
        }
    }
    Ok(())
}

/// Mean over all pixels (and the batch) of the per-pixel GGD objective.
/// Differentiable with respect to `recon`, `alpha`, and `beta`.
pub fn l_alpha_beta(recon: &Tensor, alpha: &Tensor, beta: &Tensor, target: &Tensor) -> Result<Tensor> {
    for t in [alpha, beta, target] {
        if t.shape() != recon.shape() {
            return Err(Error::shape("l_alpha_beta", recon.shape(), t.shape()));
        }
    }
    check_loss_input("recon", recon, false)?;
    check_loss_input("target", target, false)?;
    check_loss_input("alpha", alpha, true)?;
    check_loss_input("beta", beta, true)?;

    let beta = beta.clamp(BETA_LOSS_RANGE.0, BETA_LOSS_RANGE.1);
    let scaled = recon.sub(target)?.abs().div(alpha)?;
    let power = scaled.pow(&beta)?;
    let log_ratio = beta.div(alpha)?.log()?;
    let log_norm = beta.reciprocal()?.lgamma()?;
    Ok(power.sub(&log_ratio)?.add(&log_norm)?.mean())
}

/// [`l_alpha_beta`] under a [`LossMode`]; fixed modes ignore the supplied
/// maps and substitute constants, so no gradient reaches them.
pub fn l_alpha_beta_mode(
    mode: LossMode,
    recon: &Tensor,
    alpha: &Tensor,
    beta: &Tensor,
    target: &Tensor,
) -> Result<Tensor> {
    match mode.fixed_params() {
        None => l_alpha_beta(recon, alpha, beta, target),
        Some((a, b)) => {
            let shape = recon.shape();
            l_alpha_beta(recon, &Tensor::full(shape, a), &Tensor::full(shape, b), target)
        }
    }
}

/// Uncertainty-aware cycle loss: the objective on both reconstructions.
pub fn l_ucyc(bundle: &CycleBundle, mode: LossMode) -> Result<Tensor> {
    let a_side = l_alpha_beta_mode(
        mode,
        &bundle.bar_a.image,
        &bundle.bar_a.alpha()?,
        &bundle.bar_a.beta,
        &bundle.a,
    )?;
    let b_side = l_alpha_beta_mode(
        mode,
        &bundle.bar_b.image,
        &bundle.bar_b.alpha()?,
        &bundle.bar_b.beta,
        &bundle.b,
    )?;
    a_side.add(&b_side)
}
