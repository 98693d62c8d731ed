use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::Tensor;

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
pub(crate) const NORM_EPS: f64 = 1e-5;

/// A convolution with its own weight and bias parameters.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Kaiming-normal weights (leaky-ReLU gain), zero bias.
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Conv> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w: Vec<f64> = (0..c_out * c_in * kernel * kernel).map(|_| normal.sample(rng)).collect();
        Ok(Conv {
            weight: Tensor::param(w, &[c_out, c_in, kernel, kernel])?,
            bias: Tensor::param(vec![0.0; c_out], &[c_out])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }

    pub(crate) fn scale_weights(&self, factor: f64) {
        self.weight.data_mut().iter_mut().for_each(|w| *w *= factor);
    }

    pub(crate) fn fill_bias(&self, v: f64) {
        self.bias.data_mut().fill(v);
    }

    pub(crate) fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// conv → instance norm → leaky ReLU, twice, with optional dropout between.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub first: Conv,
    pub second: Conv,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Result<ConvBlock> {
        Ok(ConvBlock {
            first: Conv::new(c_in, c_out, 3, 1, 1, rng)?,
            second: Conv::new(c_out, c_out, 3, 1, 1, rng)?,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        dropout: Option<(f64, bool, &mut R)>,
    ) -> Result<Tensor> {
        let mut h = self.first.forward(x)?.instance_norm(NORM_EPS)?.leaky_relu(LEAKY_SLOPE);
        if let Some((rate, active, rng)) = dropout {
            h = h.dropout(rate, active, rng)?;
        }
        Ok(self.second.forward(&h)?.instance_norm(NORM_EPS)?.leaky_relu(LEAKY_SLOPE))
    }

    pub(crate) fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.first.named_params(&format!("{prefix}.conv1"), out);
        self.second.named_params(&format!("{prefix}.conv2"), out);
    }
}
