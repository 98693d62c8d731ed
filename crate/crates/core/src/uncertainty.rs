//! Aleatoric (closed-form), epistemic (MC-dropout), and total uncertainty,
//! plus the residual correlation analysis.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_pgm, Image};
use crate::error::{Error, Result};
use crate::ggd::variance_unchecked;
use crate::nets::{Generator, GeneratorOutput};
use crate::tensor::{no_grad, Tensor};

/// Per-pixel σ from the predicted GGD: `sqrt(α² Γ(3/β) / Γ(1/β))`, `α = 1/inv_alpha`.
pub fn aleatoric_map(out: &GeneratorOutput) -> Result<Tensor> {
    sigma_from_maps(&out.inv_alpha.data().iter().map(|v| 1.0 / v).collect::<Vec<_>>(), &out.beta.data(), out.beta.shape())
}

fn sigma_from_maps(alpha: &[f64], beta: &[f64], shape: &[usize]) -> Result<Tensor> {
    let sigma = alpha
        .iter()
        .zip(beta)
        .map(|(&a, &b)| variance_unchecked(a, b).sqrt())
        .collect();
    Tensor::new(sigma, shape)
}

/// Moments of `T` dropout-active passes.
struct McStats {
    mean_image: Vec<f64>,
    var_image: Vec<f64>,
    mean_alpha: Vec<f64>,
    mean_beta: Vec<f64>,
    shape: Vec<usize>,
}

fn mc_passes<R: Rng + ?Sized>(g: &Generator, x: &Tensor, passes: usize, rng: &mut R) -> Result<McStats> {
    if passes < 2 {
        return Err(Error::InvalidArgument(format!(
            "epistemic uncertainty needs at least 2 dropout passes, got {passes}"
        )));
    }
    let n = x.numel();
    let mut images = Vec::with_capacity(passes);
    let mut alpha_sum = vec![0.0; n];
    let mut beta_sum = vec![0.0; n];
    let mut shape = Vec::new();
    for _ in 0..passes {
        let out = no_grad(|| g.forward(x, true, rng))?;
        for (s, v) in alpha_sum.iter_mut().zip(out.inv_alpha.data().iter()) {
            *s += 1.0 / v;
        }
        for (s, v) in beta_sum.iter_mut().zip(out.beta.data().iter()) {
            *s += v;
        }
        shape = out.image.shape().to_vec();
        images.push(out.image.to_vec());
    }
    let t = passes as f64;
    let mean_image: Vec<f64> = (0..n).map(|i| images.iter().map(|p| p[i]).sum::<f64>() / t).collect();
    let var_image = (0..n)
        .map(|i| images.iter().map(|p| (p[i] - mean_image[i]).powi(2)).sum::<f64>() / t)
        .collect();
    Ok(McStats {
        mean_image,
        var_image,
        mean_alpha: alpha_sum.into_iter().map(|s| s / t).collect(),
        mean_beta: beta_sum.into_iter().map(|s| s / t).collect(),
        shape,
    })
}

/// σ of the image head across `passes` dropout-active forward passes
/// (population variance), and the per-pixel mean prediction.
pub fn epistemic_map<R: Rng + ?Sized>(g: &Generator, x: &Tensor, passes: usize, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let s = mc_passes(g, x, passes, rng)?;
    Ok((
        Tensor::new(s.var_image.iter().map(|v| v.sqrt()).collect(), &s.shape)?,
        Tensor::new(s.mean_image, &s.shape)?,
    ))
}

#[derive(Clone, Debug)]
pub struct UncertaintyMaps {
    pub sigma_aleatoric: Tensor,
    pub sigma_epistemic: Tensor,
    pub sigma_total: Tensor,
    pub mean_prediction: Tensor,
    /// Pass-averaged α and β, the inputs to the aleatoric map.
    pub mean_alpha: Tensor,
    pub mean_beta: Tensor,
}

/// Aleatoric σ from the pass-mean α/β maps, epistemic σ from the image
/// head spread, and `σ_total = sqrt(σ_a² + σ_e²)`.
pub fn total_uncertainty<R: Rng + ?Sized>(g: &Generator, x: &Tensor, passes: usize, rng: &mut R) -> Result<UncertaintyMaps> {
    let s = mc_passes(g, x, passes, rng)?;
    let aleatoric = sigma_from_maps(&s.mean_alpha, &s.mean_beta, &s.shape)?;
    let epistemic: Vec<f64> = s.var_image.iter().map(|v| v.sqrt()).collect();
    let total: Vec<f64> = aleatoric
        .data()
        .iter()
        .zip(&s.var_image)
        .map(|(a, v)| (a * a + v).sqrt())
        .collect();
    Ok(UncertaintyMaps {
        sigma_aleatoric: aleatoric,
        sigma_epistemic: Tensor::new(epistemic, &s.shape)?,
        sigma_total: Tensor::new(total, &s.shape)?,
        mean_prediction: Tensor::new(s.mean_image, &s.shape)?,
        mean_alpha: Tensor::new(s.mean_alpha, &s.shape)?,
        mean_beta: Tensor::new(s.mean_beta, &s.shape)?,
    })
}

/// Per-image aggregates feeding the correlation analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub image: String,
    pub mean_abs_residual: f64,
    pub mean_sigma: f64,
    pub mean_beta: f64,
}

impl CorrelationRow {
    /// Aggregates one image's prediction, target, σ map, and β map.
    pub fn from_maps(image: &str, prediction: &[f64], truth: &[f64], sigma: &[f64], beta: &[f64]) -> Result<CorrelationRow> {
        let n = prediction.len();
        if n == 0 || truth.len() != n || sigma.len() != n || beta.len() != n {
            return Err(Error::Data(format!("inconsistent map sizes for image {image}")));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
        Ok(CorrelationRow {
            image: image.into(),
            mean_abs_residual: prediction.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n as f64,
            mean_sigma: mean(sigma),
            mean_beta: mean(beta),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    pub pearson_sigma: f64,
    pub spearman_sigma: f64,
    pub pearson_beta: f64,
    pub spearman_beta: f64,
}

/// Pearson coefficient; NaN when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn correlate(rows: Vec<CorrelationRow>) -> Result<CorrelationReport> {
    if rows.len() < 3 {
        return Err(Error::Data(format!(
            "correlation needs at least 3 images, got {}",
            rows.len()
        )));
    }
    let col = |f: fn(&CorrelationRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let resid = col(|r| r.mean_abs_residual);
    let sigma = col(|r| r.mean_sigma);
    let beta = col(|r| r.mean_beta);
    Ok(CorrelationReport {
        pearson_sigma: pearson(&resid, &sigma),
        spearman_sigma: spearman(&resid, &sigma),
        pearson_beta: pearson(&resid, &beta),
        spearman_beta: spearman(&resid, &beta),
        rows,
    })
}

impl CorrelationReport {
    /// One row per image, then `#`-prefixed footer lines with the coefficients.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,mean_abs_residual,mean_sigma,mean_beta\n");
        for r in &self.rows {
            s += &format!("{},{},{},{}\n", r.image, r.mean_abs_residual, r.mean_sigma, r.mean_beta);
        }
        for (k, v) in [
            ("pearson_sigma", self.pearson_sigma),
            ("spearman_sigma", self.spearman_sigma),
            ("pearson_beta", self.pearson_beta),
            ("spearman_beta", self.spearman_beta),
        ] {
            s += &format!("# {k},{v}\n");
        }
        s
    }
}

/// How a stored PGM maps back to physical values: `value = offset + scale · pixel`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapScale {
    pub offset: f64,
    pub scale: f64,
}

/// Affine min-max normalization to [0, 1].
pub fn normalize_map(values: &[f64]) -> (Vec<f64>, MapScale) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let px = values.iter().map(|v| ((v - lo) / scale).clamp(0.0, 1.0)).collect();
    (px, MapScale { offset: lo, scale })
}

/// The seven exported panels, in file order.
pub const PANEL_NAMES: [&str; 7] = [
    "prediction",
    "alpha",
    "beta",
    "sigma_aleatoric",
    "sigma_epistemic",
    "sigma_total",
    "residual",
];

/// Sidecar written next to each image's panels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub image: String,
    pub level: String,
    pub passes: usize,
    pub scales: std::collections::BTreeMap<String, MapScale>,
    /// Full-precision per-image aggregates.
    pub stats: CorrelationRow,
}

/// Writes `<name>_<panel>.pgm` for every panel plus `<name>.json`.
#[allow(clippy::too_many_arguments)]
pub fn export_panels(
    dir: &Path,
    name: &str,
    level: &str,
    passes: usize,
    width: usize,
    height: usize,
    maps: &UncertaintyMaps,
    index: usize,
    truth: &Image,
) -> Result<Sidecar> {
    let plane = |t: &Tensor| -> Vec<f64> {
        let n = width * height;
        t.data()[index * n..(index + 1) * n].to_vec()
    };
    let prediction = plane(&maps.mean_prediction);
    let residual: Vec<f64> = prediction.iter().zip(&truth.pixels).map(|(p, t)| (p - t).abs()).collect();
    let sigma_total = plane(&maps.sigma_total);
    let beta = plane(&maps.mean_beta);
    let panels = [
        prediction.clone(),
        plane(&maps.mean_alpha),
        beta.clone(),
        plane(&maps.sigma_aleatoric),
        plane(&maps.sigma_epistemic),
        sigma_total.clone(),
        residual,
    ];
    let mut scales = std::collections::BTreeMap::new();
    for (panel, values) in PANEL_NAMES.iter().zip(panels) {
        let (px, scale) = normalize_map(&values);
        write_pgm(&dir.join(format!("{name}_{panel}.pgm")), &Image::new(width, height, px)?)?;
        scales.insert(panel.to_string(), scale);
    }
    let sidecar = Sidecar {
        image: name.into(),
        level: level.into(),
        passes,
        scales,
        stats: CorrelationRow::from_maps(name, &prediction, &truth.pixels, &sigma_total, &beta)?,
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

/// Reads every sidecar in an uncertainty directory, sorted by image name.
pub fn read_sidecars(dir: &Path) -> Result<Vec<Sidecar>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: p.clone(),
                offset: 0,
                msg: format!("bad sidecar: {e}"),
            })
        })
        .collect()
}
