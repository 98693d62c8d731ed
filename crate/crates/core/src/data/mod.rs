//! Synthetic two-domain denoising data, the noise-level harness, and the
//! on-disk dataset layout.

mod pgm;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

/// A single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Image> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Data(format!(
                "{} pixels do not form a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Image {
        Image {
            width,
            height,
            pixels: vec![v; width * height],
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.pixels.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.pixels.len() as f64).sqrt()
    }
}

/// Stacks same-sized images into an `[N, 1, H, W]` tensor.
pub fn to_batch(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::Data(format!(
                "mixed image sizes in one batch: {w}x{h} and {}x{}",
                img.width, img.height
            )));
        }
        data.extend_from_slice(&img.pixels);
    }
    Tensor::new(data, &[images.len(), 1, h, w])
}

/// Splits an `[N, 1, H, W]` tensor back into images.
pub fn from_batch(t: &Tensor) -> Result<Vec<Image>> {
    let [n, c, h, w] = crate::tensor::dims4("from_batch", t)?;
    if c != 1 {
        return Err(Error::shape("from_batch", t.shape(), &[n, 1, h, w]));
    }
    let data = t.data();
    (0..n)
        .map(|i| Image::new(w, h, data[i * h * w..(i + 1) * h * w].to_vec()))
        .collect()
}

/// SplitMix64 finalizer, used to derive independent per-image seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Procedural content of one generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub seed: u64,
    pub blobs: usize,
    pub rects: usize,
    /// Mean intensity after normalization.
    pub mean: f64,
    /// Pixel standard deviation after normalization.
    pub std: f64,
}

impl ImageMeta {
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "seed" => Some(self.seed as f64),
            "blobs" => Some(self.blobs as f64),
            "rects" => Some(self.rects as f64),
            "mean" => Some(self.mean),
            "std" => Some(self.std),
            _ => None,
        }
    }
}

/// Smooth Gaussian blobs plus hard-edged rectangles, min-max normalized to [0, 1].
pub fn gen_clean_image_with_meta(seed: u64, size: usize) -> (Image, ImageMeta) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut px = vec![0.0; size * size];
    let blobs = rng.gen_range(2..=4);
    for _ in 0..blobs {
        let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let sigma = rng.gen_range(s / 10.0..s / 3.0);
        // Bright structure on a dark ground. With random polarity the image
        // distribution is symmetric under x -> 1 - x after renormalizing, and an
        // unpaired translator is free to learn the inverted mapping.
        let amp = rng.gen_range(0.3..1.0);
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                px[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let rects = rng.gen_range(1..=3);
    for _ in 0..rects {
        let (x0, x1) = ordered(rng.gen_range(0..size), rng.gen_range(0..size));
        let (y0, y1) = ordered(rng.gen_range(0..size), rng.gen_range(0..size));
        let level = rng.gen_range(0.2..0.8);
        for y in y0..=y1 {
            for x in x0..=x1 {
                px[y * size + x] += level;
            }
        }
    }
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        px.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        px.fill(0.5);
    }
    let img = Image {
        width: size,
        height: size,
        pixels: px,
    };
    let meta = ImageMeta {
        seed,
        blobs,
        rects,
        mean: img.mean(),
        std: img.std(),
    };
    (img, meta)
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

pub fn gen_clean_image(seed: u64, size: usize) -> Image {
    gen_clean_image_with_meta(seed, size).0
}

/// Adds i.i.d. N(0, σ²) noise and clips to [0, 1].
pub fn add_noise<R: Rng + ?Sized>(x: &Image, sigma: f64, rng: &mut R) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be a finite nonnegative number")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let pixels = x.pixels.iter().map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)).collect();
    Ok(Image { pixels, ..*x })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    pub name: String,
    pub sigma: f64,
}

/// Evaluation tiers; the first entry is the training noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevelSpec {
    pub levels: Vec<NoiseLevel>,
}

impl Default for NoiseLevelSpec {
    fn default() -> Self {
        NoiseLevelSpec::natural()
    }
}

impl NoiseLevelSpec {
    fn from_pairs(pairs: &[(&str, f64)]) -> NoiseLevelSpec {
        NoiseLevelSpec {
            levels: pairs
                .iter()
                .map(|&(name, sigma)| NoiseLevel {
                    name: name.into(),
                    sigma,
                })
                .collect(),
        }
    }

    pub fn natural() -> NoiseLevelSpec {
        Self::from_pairs(&[("NL0", 0.10), ("NL1", 0.13), ("NL2", 0.17), ("NL3", 0.20)])
    }

    /// NL0 is the clean image.
    pub fn medical() -> NoiseLevelSpec {
        Self::from_pairs(&[("NL0", 0.0), ("NL1", 0.05), ("NL2", 0.10), ("NL3", 0.15)])
    }

    pub fn by_profile(name: &str) -> Option<NoiseLevelSpec> {
        match name {
            "natural" => Some(Self::natural()),
            "medical" => Some(Self::medical()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, field: &str, msg: String| {
            Err(Error::Config {
                path: format!("noise.levels[{i}].{field}"),
                msg,
            })
        };
        if self.levels.is_empty() {
            return Err(Error::Config {
                path: "noise.levels".into(),
                msg: "at least one noise level is required".into(),
            });
        }
        for (i, l) in self.levels.iter().enumerate() {
            let safe = !l.name.is_empty()
                && l.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                && l.name != "clean";
            if !safe {
                return bad(i, "name", format!("`{}` is not a usable directory name", l.name));
            }
            if self.levels[..i].iter().any(|p| p.name == l.name) {
                return bad(i, "name", format!("duplicate level `{}`", l.name));
            }
            if !(l.sigma >= 0.0) || !l.sigma.is_finite() {
                return bad(i, "sigma", format!("{} must be nonnegative", l.sigma));
            }
            if i > 0 && l.sigma <= self.levels[i - 1].sigma {
                return bad(i, "sigma", "sigmas must be strictly increasing".into());
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NoiseLevel> {
        self.levels.iter().find(|l| l.name == name)
    }
}

/// Half-open `[start, end)` range of image seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Routes generated images by metadata: training images must satisfy
/// `meta[key] < threshold`, test images must not. Flip with `train_below: false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPredicate {
    pub key: String,
    pub threshold: f64,
    #[serde(default = "yes")]
    pub train_below: bool,
}

fn yes() -> bool {
    true
}

impl SplitPredicate {
    fn is_train(&self, meta: &ImageMeta) -> bool {
        let v = meta.get(&self.key).expect("key validated");
        (v < self.threshold) == self.train_below
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    /// Texture seed mixed into every per-image seed.
    pub seed: u64,
    /// Domain-A noise at train time; `None` means the first noise level.
    pub train_sigma: Option<f64>,
    pub train_a_seeds: Option<SeedRange>,
    pub train_b_seeds: Option<SeedRange>,
    pub test_seeds: Option<SeedRange>,
    pub split: Option<SplitPredicate>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 512,
            n_test: 128,
            image_size: 32,
            seed: 0,
            train_sigma: None,
            train_a_seeds: None,
            train_b_seeds: None,
            test_seeds: None,
            split: None,
        }
    }
}

const RANGE_STRIDE: u64 = 1 << 32;

impl DatasetSpec {
    /// The three seed ranges, defaulting to widely separated blocks.
    pub fn seed_ranges(&self) -> [SeedRange; 3] {
        let slack = if self.split.is_some() { 8 } else { 1 };
        let block = |i: u64, n: usize| SeedRange {
            start: i * RANGE_STRIDE,
            end: i * RANGE_STRIDE + (n as u64) * slack,
        };
        [
            self.train_a_seeds.unwrap_or(block(0, self.n_train)),
            self.train_b_seeds.unwrap_or(block(1, self.n_train)),
            self.test_seeds.unwrap_or(block(2, self.n_test)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| {
            Err(Error::Config {
                path: format!("dataset.{path}"),
                msg,
            })
        };
        if self.n_train == 0 {
            return bad("n_train", "must be at least 1".into());
        }
        if self.n_test == 0 {
            return bad("n_test", "must be at least 1".into());
        }
        if self.image_size < 4 {
            return bad("image_size", "must be at least 4".into());
        }
        if let Some(s) = self.train_sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return bad("train_sigma", format!("{s} must be nonnegative"));
            }
        }
        let names = ["train_a_seeds", "train_b_seeds", "test_seeds"];
        let need = [self.n_train, self.n_train, self.n_test];
        let ranges = self.seed_ranges();
        for i in 0..3 {
            if ranges[i].len() < need[i] as u64 {
                return bad(
                    names[i],
                    format!("range holds {} seeds but {} images are needed", ranges[i].len(), need[i]),
                );
            }
            for j in 0..i {
                if ranges[i].overlaps(&ranges[j]) {
                    return bad(names[i], format!("overlaps {}", names[j]));
                }
            }
        }
        if let Some(split) = &self.split {
            let probe = ImageMeta {
                seed: 0,
                blobs: 0,
                rects: 0,
                mean: 0.0,
                std: 0.0,
            };
            if probe.get(&split.key).is_none() {
                return bad("split.key", format!("unknown metadata key `{}`", split.key));
            }
        }
        Ok(())
    }
}

/// A noisy test image together with its clean target.
#[derive(Clone, Debug)]
pub struct TestLevel {
    pub level: NoiseLevel,
    pub noisy: Vec<Image>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Domain A (noisy) training images.
    pub train_a: Vec<Image>,
    /// Domain B (clean) training images, unrelated to `train_a`.
    pub train_b: Vec<Image>,
    pub test_clean: Vec<Image>,
    pub test_levels: Vec<TestLevel>,
    /// Image names, shared by the clean and noisy test sets.
    pub test_names: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub noise: NoiseLevelSpec,
    pub train_sigma: f64,
    pub seeds: BTreeMap<String, Vec<u64>>,
}

const NOISE_TAG: u64 = 0x006e_6f69_7365;

fn pick_seeds(spec: &DatasetSpec, range: SeedRange, n: usize, want_train: bool) -> Result<Vec<(u64, Image)>> {
    let mut out = Vec::with_capacity(n);
    for s in range.start..range.end {
        if out.len() == n {
            break;
        }
        let (img, meta) = gen_clean_image_with_meta(mix(spec.seed, s), spec.image_size);
        if spec.split.as_ref().is_none_or(|p| p.is_train(&meta) == want_train) {
            out.push((s, img));
        }
    }
    if out.len() < n {
        return Err(Error::Data(format!(
            "seed range {}..{} yields only {} images passing the split predicate, need {n}",
            range.start,
            range.end,
            out.len()
        )));
    }
    Ok(out)
}

/// Builds the unpaired training domains and the paired test harness.
/// Deterministic in `(spec, noise)`.
pub fn make_unpaired_dataset(spec: &DatasetSpec, noise: &NoiseLevelSpec) -> Result<(Dataset, Manifest)> {
    spec.validate()?;
    noise.validate()?;
    let train_sigma = spec.train_sigma.unwrap_or(noise.levels[0].sigma);
    let [ra, rb, rt] = spec.seed_ranges();
    let a = pick_seeds(spec, ra, spec.n_train, true)?;
    let b = pick_seeds(spec, rb, spec.n_train, true)?;
    let t = pick_seeds(spec, rt, spec.n_test, false)?;

    let noise_rng = |seed: u64, stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ NOISE_TAG, seed));
        rng.set_stream(stream);
        rng
    };
    let train_a = a
        .iter()
        .map(|(s, img)| add_noise(img, train_sigma, &mut noise_rng(*s, 0)))
        .collect::<Result<Vec<_>>>()?;
    let test_levels = noise
        .levels
        .iter()
        .enumerate()
        .map(|(li, level)| {
            let noisy = t
                .iter()
                .map(|(s, img)| add_noise(img, level.sigma, &mut noise_rng(*s, li as u64 + 1)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TestLevel {
                level: level.clone(),
                noisy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let seeds = BTreeMap::from([
        ("train_a".to_string(), a.iter().map(|p| p.0).collect()),
        ("train_b".to_string(), b.iter().map(|p| p.0).collect()),
        ("test".to_string(), t.iter().map(|p| p.0).collect()),
    ]);
    let dataset = Dataset {
        train_a,
        train_b: b.into_iter().map(|p| p.1).collect(),
        test_names: (0..t.len()).map(image_name).collect(),
        test_clean: t.into_iter().map(|p| p.1).collect(),
        test_levels,
    };
    let manifest = Manifest {
        spec: spec.clone(),
        noise: noise.clone(),
        train_sigma,
        seeds,
    };
    Ok((dataset, manifest))
}

pub fn image_name(i: usize) -> String {
    format!("{i:05}")
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_set(dir: &Path, names: &[String], images: &[Image]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, img) in names.iter().zip(images) {
        write_pgm(&dir.join(format!("{name}.pgm")), img)?;
    }
    Ok(())
}

impl Dataset {
    /// Writes `trainA/`, `trainB/`, `test/clean/`, `test/<level>/` and the manifest.
    pub fn write(&self, dir: &Path, manifest: &Manifest) -> Result<()> {
        let train_names: Vec<String> = (0..self.train_a.len().max(self.train_b.len())).map(image_name).collect();
        write_set(&dir.join("trainA"), &train_names, &self.train_a)?;
        write_set(&dir.join("trainB"), &train_names, &self.train_b)?;
        write_set(&dir.join("test").join("clean"), &self.test_names, &self.test_clean)?;
        for level in &self.test_levels {
            write_set(&dir.join("test").join(&level.level.name), &self.test_names, &level.noisy)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(manifest)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a dataset directory. Noise levels come from `levels` if given,
    /// otherwise from the manifest. Works for user-supplied image folders
    /// as long as the layout matches.
    pub fn load(dir: &Path, levels: Option<&NoiseLevelSpec>) -> Result<Dataset> {
        let levels = match levels {
            Some(l) => l.clone(),
            None => read_manifest(dir)?.noise,
        };
        let (_, train_a) = read_set(&dir.join("trainA"))?;
        let (_, train_b) = read_set(&dir.join("trainB"))?;
        let (test_names, test_clean) = read_set(&dir.join("test").join("clean"))?;
        let mut test_levels = Vec::new();
        for level in &levels.levels {
            let sub = dir.join("test").join(&level.name);
            if !sub.is_dir() {
                return Err(Error::Data(format!(
                    "missing noise-level directory {} for level `{}`",
                    sub.display(),
                    level.name
                )));
            }
            let (names, noisy) = read_set(&sub)?;
            if names != test_names {
                return Err(Error::Data(format!("{} does not match the files in test/clean", sub.display())));
            }
            test_levels.push(TestLevel {
                level: level.clone(),
                noisy,
            });
        }
        Ok(Dataset {
            train_a,
            train_b,
            test_clean,
            test_levels,
            test_names,
        })
    }

    pub fn level(&self, name: &str) -> Option<&TestLevel> {
        self.test_levels.iter().find(|l| l.level.name == name)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        offset: 0,
        msg: format!("bad manifest: {e}"),
    })
}

/// Reads every `*.pgm` in a directory, sorted by file name.
pub fn read_set(dir: &Path) -> Result<(Vec<String>, Vec<Image>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .pgm images in {}", dir.display())));
    }
    let names = paths
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    let images = paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    Ok((names, images))
}
