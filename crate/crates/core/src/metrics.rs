//! Image quality metrics: PSNR and Gaussian-window SSIM.

use serde::Serialize;

use crate::data::Image;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_size(op: &'static str, x: &Image, y: &Image) -> Result<()> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(Error::shape(op, &[x.height, x.width], &[y.height, y.width]));
    }
    Ok(())
}

/// `10·log10(max_i² / MSE)` in dB; identical images give `+inf`.
pub fn psnr(x: &Image, y: &Image, max_i: f64) -> Result<f64> {
    same_size("psnr", x, y)?;
    if !(max_i > 0.0) {
        return Err(Error::InvalidArgument(format!("max_i {max_i} must be positive")));
    }
    let mse = x.pixels.iter().zip(&y.pixels).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_i * max_i / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean of the local SSIM map (11x11 Gaussian, σ = 1.5, no padding), dynamic range 1.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_size("ssim", x, y)?;
    let (w, h) = (x.width, x.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (xs, ys) = (&x.pixels, &y.pixels);
    let prod = |f: fn(f64, f64) -> f64| xs.iter().zip(ys).map(|(&a, &b)| f(a, b)).collect::<Vec<_>>();
    let mu_x = filter_valid(xs, w, h, &taps);
    let mu_y = filter_valid(ys, w, h, &taps);
    let xx = filter_valid(&prod(|a, _| a * a), w, h, &taps);
    let yy = filter_valid(&prod(|_, b| b * b), w, h, &taps);
    let xy = filter_valid(&prod(|a, b| a * b), w, h, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Summary of one noise level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelMetrics {
    pub level: String,
    pub count: usize,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Over finite PSNR values only.
    pub psnr_mean: f64,
    pub psnr_std: f64,
    /// Images with identical prediction and target (PSNR = inf).
    pub psnr_inf: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl LevelMetrics {
    /// Population statistics over per-image scores.
    pub fn from_scores(level: &str, ssims: &[f64], psnrs: &[f64]) -> LevelMetrics {
        let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
        let (ssim_mean, ssim_std) = mean_std(ssims);
        let (psnr_mean, psnr_std) = mean_std(&finite);
        LevelMetrics {
            level: level.into(),
            count: ssims.len(),
            ssim_mean,
            ssim_std,
            psnr_mean,
            psnr_std,
            psnr_inf: psnrs.len() - finite.len(),
        }
    }

    /// Scores prediction/target pairs.
    pub fn evaluate(level: &str, preds: &[Image], targets: &[Image]) -> Result<LevelMetrics> {
        if preds.len() != targets.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} targets at level {level}",
                preds.len(),
                targets.len()
            )));
        }
        let mut ssims = Vec::with_capacity(preds.len());
        let mut psnrs = Vec::with_capacity(preds.len());
        for (p, t) in preds.iter().zip(targets) {
            ssims.push(ssim(p, t)?);
            psnrs.push(psnr(p, t, 1.0)?);
        }
        Ok(LevelMetrics::from_scores(level, &ssims, &psnrs))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<LevelMetrics>,
}

pub const METRICS_HEADER: &str = "level,count,ssim_mean,ssim_std,psnr_mean,psnr_std,psnr_inf";

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                r.level, r.count, r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std, r.psnr_inf
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>6} {:>18} {:>18}\n",
            "level", "n", "SSIM (std)", "PSNR dB (std)"
        );
        for r in &self.rows {
            let note = if r.psnr_inf > 0 {
                format!("  [{} identical, excluded from PSNR]", r.psnr_inf)
            } else {
                String::new()
            };
            s += &format!(
                "{:<8} {:>6} {:>18} {:>18}{note}\n",
                r.level,
                r.count,
                format!("{:.4} ({:.4})", r.ssim_mean, r.ssim_std),
                format!("{:.2} ({:.2})", r.psnr_mean, r.psnr_std),
            );
        }
        s
    }

    pub fn get(&self, level: &str) -> Option<&LevelMetrics> {
        self.rows.iter().find(|r| r.level == level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        // One unit error among 100 pixels is an MSE of exactly 0.01.
        let x = Image::filled(10, 10, 0.0);
        let mut y = x.clone();
        y.pixels[17] = 1.0;
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), 20.0);
        assert_eq!(psnr(&Image::filled(4, 4, 0.0), &Image::filled(4, 4, 1.0), 1.0).unwrap(), 0.0);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&x, &Image::filled(5, 20, 0.0), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let (x, y) = (random(32, 32, 1), random(32, 32, 2));
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_anticorrelated_binary() {
        let x = Image::new(16, 16, (0..256).map(|i| ((i / 3 + i / 16) % 2) as f64).collect()).unwrap();
        let inv = Image::new(16, 16, x.pixels.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_tolerates_small_shift() {
        let x = crate::data::gen_clean_image(5, 32);
        let y = Image::new(32, 32, x.pixels.iter().map(|v| v + 0.009).collect()).unwrap();
        assert!(ssim(&x, &y).unwrap() > 0.98);
    }

    #[test]
    fn ssim_rejects_small_images() {
        assert!(ssim(&random(10, 10, 0), &random(10, 10, 1)).is_err());
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }

    #[test]
    fn report_excludes_infinite_psnr() {
        let r = LevelMetrics::from_scores("NL0", &[1.0, 0.5], &[f64::INFINITY, 30.0]);
        assert_eq!(r.psnr_inf, 1);
        assert_eq!(r.psnr_mean, 30.0);
        assert_eq!(r.ssim_std, 0.25);
        let rep = MetricsReport { rows: vec![r] };
        assert!(rep.to_csv().starts_with(METRICS_HEADER));
        assert!(rep.to_table().contains("1 identical"));
    }
}
