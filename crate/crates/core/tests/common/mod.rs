//! Independent reference implementations used to judge the library.
//! Nothing here calls into the crate under test.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre over the panel edges `edges`.
pub fn integrate(f: &dyn Fn(f64) -> f64, edges: &[f64], order: usize) -> f64 {
    let (xs, ws) = gauss_legendre(order);
    edges
        .windows(2)
        .map(|e| {
            let (a, b) = (e[0], e[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            xs.iter().zip(&ws).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
        })
        .sum()
}

/// Panel edges on [0, end] refined geometrically towards 0, where a
/// density with β < 1 has an infinite derivative.
pub fn graded_edges(end: f64, panels: usize) -> Vec<f64> {
    let mut edges = vec![0.0];
    let mut x = end * 1e-12;
    while x < end / panels as f64 {
        edges.push(x);
        x *= 2.0;
    }
    for k in 1..=panels {
        edges.push(end * k as f64 / panels as f64);
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

/// Central difference of a scalar function.
pub fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Error function by its Maclaurin series (accurate for |x| < 4).
pub fn erf(x: f64) -> f64 {
    if x.abs() > 6.0 {
        return x.signum();
    }
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / PI.sqrt() * sum
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical KS distance at significance 0.001 for large n.
pub fn ks_critical(n: usize) -> f64 {
    1.949 / (n as f64).sqrt()
}

/// Direct-window SSIM: for each 11x11 valid window, weighted moments in
/// centered form with 2-D Gaussian weights, then the mean of the map.
pub fn ssim_reference(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    const K: usize = 11;
    const SIGMA: f64 = 1.5;
    let c = (K / 2) as f64;
    let mut weights = [[0.0; K]; K];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * SIGMA * SIGMA)).exp();
            total += *v;
        }
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - K {
        for ox in 0..=w - K {
            let at = |img: &[f64], i: usize, j: usize| img[(oy + i) * w + ox + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = weights[i][j] / total;
                    mx += wt * at(x, i, j);
                    my += wt * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = weights[i][j] / total;
                    let dx = at(x, i, j) - mx;
                    let dy = at(y, i, j) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
