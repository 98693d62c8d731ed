//! Elementwise operations, broadcasting, and reductions.

use std::cell::Cell;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::specfn;

thread_local! {
    static LGAMMA_GRAD_FAULT: Cell<f64> = const { Cell::new(0.0) };
}

/// Runs `f` with the lgamma gradient scaled by `1 + rel_error`. Only meant
/// for checking that the gradient checker catches a wrong derivative.
#[doc(hidden)]
pub fn with_lgamma_grad_fault<R>(rel_error: f64, f: impl FnOnce() -> R) -> R {
    let prev = LGAMMA_GRAD_FAULT.with(|c| c.replace(rel_error));
    let out = f();
    LGAMMA_GRAD_FAULT.with(|c| c.set(prev));
    out
}

/// Floor applied to the base of [`Tensor::pow`].
pub const POW_BASE_FLOOR: f64 = 1e-12;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How an operand's flat indices map onto a broadcast output.
enum Layout {
    Same,
    Scalar,
    Map(Vec<usize>),
}

impl Layout {
    fn new(src: &[usize], out: &[usize]) -> Layout {
        if src == out {
            return Layout::Same;
        }
        if src.iter().product::<usize>() == 1 {
            return Layout::Scalar;
        }
        let rank = out.len();
        let offset = rank - src.len();
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..src.len()).rev() {
            strides[i + offset] = if src[i] == 1 { 0 } else { acc };
            acc *= src[i];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Layout::Map(map)
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Layout::Same => i,
            Layout::Scalar => 0,
            Layout::Map(m) => m[i],
        }
    }
}

type Partial = fn(f64, f64, f64) -> f64;

fn binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    da: Partial,
    db: Partial,
) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
    let la = Layout::new(a.shape(), &shape);
    let lb = Layout::new(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let data = {
        let (x, y) = (a.data(), b.data());
        (0..n).map(|i| f(x[la.at(i)], y[lb.at(i)])).collect()
    };
    let (na, nb) = (a.numel(), b.numel());
    Ok(Tensor::from_op(shape, data, name, vec![a.clone(), b.clone()], move |ctx| {
        let (x, y) = (ctx.parents[0].data(), ctx.parents[1].data());
        let mut ga = ctx.needs[0].then(|| vec![0.0; na]);
        let mut gb = ctx.needs[1].then(|| vec![0.0; nb]);
        for (i, (&g, &o)) in ctx.grad.iter().zip(ctx.out).enumerate() {
            let (ia, ib) = (la.at(i), lb.at(i));
            if let Some(ga) = ga.as_mut() {
                ga[ia] += g * da(x[ia], y[ib], o);
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += g * db(x[ia], y[ib], o);
            }
        }
        vec![ga, gb]
    }))
}

fn unary(name: &'static str, a: &Tensor, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(a.shape().to_vec(), data, name, vec![a.clone()], move |ctx| {
        let x = ctx.parents[0].data();
        let g = ctx
            .grad
            .iter()
            .zip(x.iter().zip(ctx.out))
            .map(|(&g, (&x, &o))| g * df(x, o))
            .collect();
        vec![Some(g)]
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |x, y| x + y, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |x, y| x - y, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |x, y| x * y, |_, y, _| y, |x, _, _| x)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        binary("div", self, other, |x, y| x / y, |_, y, _| 1.0 / y, |x, y, _| -x / (y * y))
    }

    /// Elementwise `self ^ exponent` for a nonnegative base.
    ///
    /// The base is floored at [`POW_BASE_FLOOR`] in both the value and the
    /// gradients, which bounds `d/dx x^b` for `b < 1` near zero.
    pub fn pow(&self, exponent: &Tensor) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::domain("pow", format!("negative or NaN base {v}")));
        }
        binary(
            "pow",
            self,
            exponent,
            |x, e| x.max(POW_BASE_FLOOR).powf(e),
            |x, e, _| {
                let x = x.max(POW_BASE_FLOOR);
                e * x.powf(e - 1.0)
            },
            |x, _, o| o * x.max(POW_BASE_FLOOR).ln(),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary("add_scalar", self, move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, "mul_scalar", vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.iter().map(|g| g * c).collect())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn square(&self) -> Tensor {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    /// Subgradient at zero is zero.
    pub fn abs(&self) -> Tensor {
        unary("abs", self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain("log", format!("non-positive argument {v}")));
        }
        Ok(unary("log", self, f64::ln, |x, _| 1.0 / x))
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, o| o)
    }

    pub fn reciprocal(&self) -> Result<Tensor> {
        if self.data().contains(&0.0) {
            return Err(Error::domain("reciprocal", "reciprocal of zero"));
        }
        Ok(unary("reciprocal", self, |x| 1.0 / x, |_, o| -o * o))
    }

    /// Subgradient at zero is zero.
    pub fn relu(&self) -> Tensor {
        unary("relu", self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        Tensor::from_op(self.shape().to_vec(), data, "leaky_relu", vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x.iter())
                .map(|(&g, &x)| if x > 0.0 { g } else { g * slope })
                .collect();
            vec![Some(g)]
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            "sigmoid",
            self,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, o| o * (1.0 - o),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes through inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        Tensor::from_op(self.shape().to_vec(), data, "clamp", vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x.iter())
                .map(|(&g, &x)| if (lo..=hi).contains(&x) { g } else { 0.0 })
                .collect();
            vec![Some(g)]
        })
    }

    /// Elementwise `ln Γ(x)`; derivative is the digamma function.
    pub fn lgamma(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain("lgamma", format!("non-positive argument {v}")));
        }
        Ok(unary("lgamma", self, specfn::ln_gamma, |x, _| {
            specfn::psi(x) * (1.0 + LGAMMA_GRAD_FAULT.with(Cell::get))
        }))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(Vec::new(), vec![s], "sum", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s / n as f64], "mean", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0] / n as f64; n])]
        })
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)`.
    /// With `active == false` or `rate == 0` this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, active: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !active || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, "dropout", vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.iter().zip(&mask).map(|(g, m)| g * m).collect())]
        }))
    }
}
