//! Finite-difference verification of every differentiable op and of the
//! full adaptive loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::ggd::l_alpha_beta;
use crate::tensor::{concat, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;
/// Below this gradient magnitude the absolute tolerance applies instead.
pub const SMALL_GRAD: f64 = 1e-3;

/// An element passes if its relative error is below [`REL_TOL`], or if both
/// values are smaller than [`SMALL_GRAD`] and differ by less than [`ABS_TOL`].
pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    diff <= REL_TOL * scale || (scale < SMALL_GRAD && diff < ABS_TOL)
}

/// Worst-case comparison over all inputs of one case.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub op: String,
    pub elements: usize,
    /// Over elements with a gradient of at least [`SMALL_GRAD`].
    pub max_rel_err: f64,
    /// Over elements with a gradient below [`SMALL_GRAD`].
    pub max_abs_err: f64,
    pub failures: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares backprop against central differences of `f` around `inputs`.
pub fn check(op: &str, inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Result<Tensor>) -> Result<CheckResult> {
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requiring_grad()).collect();
    f(&leaves)?.backward()?;
    let mut res = CheckResult {
        op: op.into(),
        elements: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: 0,
    };
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let probe: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let c = t.detach();
                        if j == k {
                            c.data_mut()[i] += delta;
                        }
                        c
                    })
                    .collect();
                Ok(f(&probe)?.item())
            };
            let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            res.elements += 1;
            if scale >= SMALL_GRAD {
                res.max_rel_err = res.max_rel_err.max(diff / scale);
            } else {
                res.max_abs_err = res.max_abs_err.max(diff);
            }
            if !grads_agree(a, numeric) {
                res.failures += 1;
            }
        }
    }
    Ok(res)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).expect("nonempty shape")
}

/// Contracts an op's output with fixed random weights so every output
/// element carries a distinct upstream gradient.
fn weighted(out: Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(out.mul(weights)?.sum())
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Result<Tensor>>);

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let v = |r: &mut ChaCha8Rng, shape: &[usize]| uniform(r, shape, 0.1, 2.0);
    let w6 = v(r, &[2, 3]);
    let w_img = uniform(r, &[1, 2, 6, 6], -1.0, 1.0);
    let w_t = uniform(r, &[1, 2, 8, 8], -1.0, 1.0);
    let w_pool = uniform(r, &[1, 2, 3, 3], -1.0, 1.0);
    let w_up = uniform(r, &[1, 2, 12, 12], -1.0, 1.0);
    let w_cat = uniform(r, &[1, 3, 6, 6], -1.0, 1.0);
    let mut dropout_state = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
    dropout_state.set_stream(7);

    macro_rules! elementwise {
        ($name:expr, $n:expr, $body:expr) => {{
            let w = w6.clone();
            let body: fn(&[Tensor]) -> Result<Tensor> = $body;
            let inputs = (0..$n).map(|_| v(r, &[2, 3])).collect::<Vec<_>>();
            (
                $name,
                inputs,
                Box::new(move |x: &[Tensor]| weighted(body(x)?, &w)) as Box<dyn Fn(&[Tensor]) -> Result<Tensor>>,
            )
        }};
    }

    let mut out: Vec<Case> = vec![
        elementwise!("add", 2, |x: &[Tensor]| x[0].add(&x[1])),
        elementwise!("sub", 2, |x: &[Tensor]| x[0].sub(&x[1])),
        elementwise!("mul", 2, |x: &[Tensor]| x[0].mul(&x[1])),
        elementwise!("div", 2, |x: &[Tensor]| x[0].div(&x[1])),
        elementwise!("pow", 2, |x: &[Tensor]| x[0].pow(&x[1])),
        elementwise!("abs", 1, |x: &[Tensor]| Ok(x[0].abs())),
        elementwise!("log", 1, |x: &[Tensor]| x[0].log()),
        elementwise!("exp", 1, |x: &[Tensor]| Ok(x[0].exp())),
        elementwise!("reciprocal", 1, |x: &[Tensor]| x[0].reciprocal()),
        elementwise!("relu", 1, |x: &[Tensor]| Ok(x[0].add_scalar(-1.05).relu())),
        elementwise!("leaky_relu", 1, |x: &[Tensor]| Ok(x[0].add_scalar(-1.05).leaky_relu(0.2))),
        elementwise!("sigmoid", 1, |x: &[Tensor]| Ok(x[0].sigmoid())),
        elementwise!("square", 1, |x: &[Tensor]| Ok(x[0].square())),
        elementwise!("lgamma", 1, |x: &[Tensor]| x[0].lgamma()),
    ];
    for (name, reduce) in [("sum", Tensor::sum as fn(&Tensor) -> Tensor), ("mean", Tensor::mean)] {
        let w = w6.clone();
        out.push((
            name,
            vec![v(r, &[2, 3])],
            Box::new(move |x: &[Tensor]| Ok(reduce(&x[0].mul(&w)?).square())),
        ));
    }
    // Broadcasting: a row vector against a matrix, and a scalar.
    {
        let w = w6.clone();
        out.push((
            "broadcast",
            vec![v(r, &[2, 3]), v(r, &[3]), v(r, &[])],
            Box::new(move |x: &[Tensor]| weighted(x[0].mul(&x[1])?.div(&x[2])?, &w)),
        ));
    }
    // A node with two consumers.
    {
        let w = w6.clone();
        out.push((
            "fan_out",
            vec![v(r, &[2, 3])],
            Box::new(move |x: &[Tensor]| {
                let h = x[0].exp();
                weighted(h.mul(&h)?.add(&h.log()?)?, &w)
            }),
        ));
    }
    {
        let w = w_img.clone();
        out.push((
            "conv2d",
            vec![v(r, &[1, 2, 6, 6]), uniform(r, &[2, 2, 3, 3], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)],
            Box::new(move |x: &[Tensor]| weighted(x[0].conv2d(&x[1], Some(&x[2]), 1, 1)?, &w)),
        ));
    }
    {
        let w = w_pool.clone();
        out.push((
            "conv2d_strided",
            vec![v(r, &[1, 2, 6, 6]), uniform(r, &[2, 2, 4, 4], -1.0, 1.0)],
            Box::new(move |x: &[Tensor]| weighted(x[0].conv2d(&x[1], None, 2, 1)?, &w)),
        ));
    }
    {
        let w = w_t.clone();
        out.push((
            "conv_transpose2d",
            vec![v(r, &[1, 2, 4, 4]), uniform(r, &[2, 2, 4, 4], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)],
            Box::new(move |x: &[Tensor]| weighted(x[0].conv_transpose2d(&x[1], Some(&x[2]), 2, 1)?, &w)),
        ));
    }
    {
        let w = w_pool.clone();
        out.push((
            "max_pool2d",
            vec![v(r, &[1, 2, 6, 6])],
            Box::new(move |x: &[Tensor]| weighted(x[0].max_pool2d(2)?, &w)),
        ));
    }
    {
        let w = w_up.clone();
        out.push((
            "upsample_nearest2d",
            vec![v(r, &[1, 2, 6, 6])],
            Box::new(move |x: &[Tensor]| weighted(x[0].upsample_nearest2d(2)?, &w)),
        ));
    }
    {
        let w = w_img.clone();
        out.push((
            "instance_norm",
            vec![v(r, &[1, 2, 6, 6])],
            Box::new(move |x: &[Tensor]| weighted(x[0].instance_norm(1e-5)?, &w)),
        ));
    }
    {
        let w = w_cat.clone();
        out.push((
            "concat",
            vec![v(r, &[1, 1, 6, 6]), v(r, &[1, 2, 6, 6])],
            Box::new(move |x: &[Tensor]| weighted(concat(&[&x[0], &x[1]], 1)?, &w)),
        ));
    }
    {
        let w = w_img.clone();
        out.push((
            "dropout",
            vec![v(r, &[1, 2, 6, 6])],
            // Every evaluation replays the same mask.
            Box::new(move |x: &[Tensor]| weighted(x[0].dropout(0.3, true, &mut dropout_state.clone())?, &w)),
        ));
    }
    out.push(("l_alpha_beta", loss_inputs(r), Box::new(loss_case)));
    out
}

fn loss_case(x: &[Tensor]) -> Result<Tensor> {
    l_alpha_beta(&x[0], &x[1], &x[2], &x[3])
}

/// Residuals closer than this to the |r| kink are redrawn: there a central
/// difference straddles the kink or, for β < 1, is swamped by truncation error.
pub const MIN_RESIDUAL: f64 = 1e-3;

/// Random `(recon, α, β, target)` on 4x4 maps with α in (0.2, 3), β in (0.5, 4),
/// recon and target in (0, 1).
pub fn loss_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let shape = [1, 1, 4, 4];
    let alpha = uniform(rng, &shape, 0.2, 3.0);
    let beta = uniform(rng, &shape, 0.5, 4.0);
    let target = uniform(rng, &shape, 0.0, 1.0);
    let recon: Vec<f64> = target
        .data()
        .iter()
        .map(|t| loop {
            let r = rng.gen_range(0.0..1.0);
            if (r - t).abs() >= MIN_RESIDUAL {
                break r;
            }
        })
        .collect();
    vec![Tensor::new(recon, &shape).unwrap(), alpha, beta, target]
}

/// Checks the adaptive loss against finite differences on `tuples` random
/// draws, pooled into one result.
pub fn check_loss_tuples(tuples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = CheckResult {
        op: "l_alpha_beta".into(),
        elements: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: 0,
    };
    for _ in 0..tuples {
        let r = check("l_alpha_beta", &loss_inputs(&mut rng), &loss_case)?;
        total.elements += r.elements;
        total.max_rel_err = total.max_rel_err.max(r.max_rel_err);
        total.max_abs_err = total.max_abs_err.max(r.max_abs_err);
        total.failures += r.failures;
    }
    Ok(total)
}

/// Every op case plus the pooled adaptive-loss check.
pub fn run_all(seed: u64, loss_tuples: usize) -> Result<Vec<CheckResult>> {
    let mut results = cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| check(name, &inputs, f.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = check_loss_tuples(loss_tuples, seed.wrapping_add(1))?;
    pooled.op = format!("l_alpha_beta x{loss_tuples}");
    results.push(pooled);
    Ok(results)
}

pub fn format_table(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<22} {:>8} {:>12} {:>12} {:>6}\n",
        "op", "elems", "max_rel", "max_abs_sm", "ok"
    );
    for r in results {
        s += &format!(
            "{:<22} {:>8} {:>12.3e} {:>12.3e} {:>6}\n",
            r.op,
            r.elements,
            r.max_rel_err,
            r.max_abs_err,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}
