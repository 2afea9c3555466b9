//! Synthetic classification images with ternary ground-truth masks.
//!
//! Each image shows a small class-defining shape (the distinguishing region)
//! inside a larger low-contrast disk (the localization region) on a random
//! background. The label depends only on the shape; everything else is drawn
//! independently of the class.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalmetrics::TernaryMask;
use crate::formats::{read_tensor, write_tensor};
use crate::rng::{derive_seed, normal, rng_from_seed, SeedRng};
use crate::tensor::Tensor;
use crate::trainloop::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Diamond,
    Ring,
    HorizontalBars,
    VerticalBars,
}

/// Class `i` is drawn as `SHAPES[i]`.
pub const SHAPES: [Shape; 8] = [
    Shape::Circle,
    Shape::Square,
    Shape::Triangle,
    Shape::Cross,
    Shape::Diamond,
    Shape::Ring,
    Shape::HorizontalBars,
    Shape::VerticalBars,
];

impl Shape {
    /// Whether offset `(dx, dy)` from the center lies inside the shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => ax.max(ay) <= 0.8 * r,
            Shape::Triangle => dy >= -r && dy <= 0.8 * r && ax <= 0.55 * (dy + r),
            Shape::Cross => (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r),
            Shape::Diamond => ax + ay <= r,
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (0.5 * r) * (0.5 * r)
            }
            Shape::HorizontalBars => ax <= r && ay <= r && ay >= 0.45 * r,
            Shape::VerticalBars => ax <= r && ay <= r && ax >= 0.45 * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Dark,
    BlurredNoise,
    WhiteNoise,
    /// One of the other three, chosen per sample.
    Mixed,
}

impl std::str::FromStr for BackgroundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dark" => BackgroundKind::Dark,
            "blurredNoise" | "blurred" => BackgroundKind::BlurredNoise,
            "whiteNoise" | "noise" => BackgroundKind::WhiteNoise,
            "mixed" => BackgroundKind::Mixed,
            _ => return Err(Error::invalid(format!("unknown background kind '{s}'"))),
        })
    }
}

impl BackgroundKind {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundKind::Dark => "dark",
            BackgroundKind::BlurredNoise => "blurredNoise",
            BackgroundKind::WhiteNoise => "whiteNoise",
            BackgroundKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub image_size: usize,
    pub channels: usize,
    pub background: BackgroundKind,
    pub seed: u64,
    /// Range of the shape radius in pixels.
    pub shape_scale_range: (f64, f64),
    /// Shape brightness above the localization disk; one level is drawn per sample.
    pub contrast_levels: Vec<f64>,
    /// Brightness of the localization disk above the background.
    pub blob_contrast: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 4,
            train_count: 2000,
            test_count: 500,
            image_size: 32,
            channels: 1,
            background: BackgroundKind::Mixed,
            seed: 0,
            shape_scale_range: (3.5, 5.0),
            contrast_levels: vec![0.4, 0.55, 0.7],
            blob_contrast: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 1 || self.class_count > SHAPES.len() {
            return Err(Error::invalid(format!(
                "class count must be in 1..={}, got {}",
                SHAPES.len(),
                self.class_count
            )));
        }
        if self.train_count + self.test_count == 0 {
            return Err(Error::invalid("at least one sample is required"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("channels must be 1 or 3"));
        }
        let (lo, hi) = self.shape_scale_range;
        if !(lo >= 1.0 && hi >= lo) {
            return Err(Error::invalid("shape scale range must satisfy 1 <= min <= max"));
        }
        // The localization disk (up to 3x the shape radius) must fit.
        if 6.0 * hi + 2.0 > self.image_size as f64 {
            return Err(Error::invalid(format!(
                "image size {} is too small for shapes of radius {hi}",
                self.image_size
            )));
        }
        if self.contrast_levels.is_empty() || self.contrast_levels.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::invalid("contrast levels must be positive and non-empty"));
        }
        if !(self.blob_contrast > 0.0) {
            return Err(Error::invalid("blob contrast must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train_count + self.test_count
    }

    /// `key=value` lines describing the configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "class_count={}", self.class_count);
        let _ = writeln!(s, "train_count={}", self.train_count);
        let _ = writeln!(s, "test_count={}", self.test_count);
        let _ = writeln!(s, "image_size={}", self.image_size);
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "background={}", self.background.name());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "shape_scale_range={},{}", self.shape_scale_range.0, self.shape_scale_range.1);
        let levels: Vec<String> = self.contrast_levels.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "contrast_levels={}", levels.join(","));
        let _ = writeln!(s, "blob_contrast={}", self.blob_contrast);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `[C, H, W]` with values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// `[H, W]`.
    pub mask: TernaryMask,
    /// `[H, W]`, maximum 1.
    pub attention: Option<Tensor>,
}

/// Geometry drawn for one sample.
struct Layout {
    shape_center: (f64, f64),
    radius: f64,
    blob_center: (f64, f64),
    blob_radius: f64,
    contrast: f64,
}

fn draw_layout(cfg: &SynthConfig, rng: &mut SeedRng) -> Layout {
    let size = cfg.image_size as f64;
    let (lo, hi) = cfg.shape_scale_range;
    let radius = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let blob_radius = radius * rng.gen_range(2.0..3.0);
    let margin = blob_radius + 1.0;
    let bx = rng.gen_range(margin..=size - margin);
    let by = rng.gen_range(margin..=size - margin);
    let slack = (blob_radius - radius - 1.0).max(0.0) * 0.5;
    let sx = bx + rng.gen_range(-slack..=slack);
    let sy = by + rng.gen_range(-slack..=slack);
    let contrast = cfg.contrast_levels[rng.gen_range(0..cfg.contrast_levels.len())];
    Layout {
        shape_center: (sx, sy),
        radius,
        blob_center: (bx, by),
        blob_radius,
        contrast,
    }
}

/// Separable Gaussian blur with zero padding; `sigma = 0` is the identity.
pub fn gaussian_blur(values: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / ks).collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let o = j as isize - r;
                    let (sx, sy) = if horizontal { (x as isize + o, y as isize) } else { (x as isize, y as isize + o) };
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                        acc += k * src[sy as usize * w + sx as usize];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

fn background(kind: BackgroundKind, n: usize, rng: &mut SeedRng) -> Vec<f64> {
    let kind = match kind {
        BackgroundKind::Mixed => [BackgroundKind::Dark, BackgroundKind::BlurredNoise, BackgroundKind::WhiteNoise]
            [rng.gen_range(0..3)],
        k => k,
    };
    let side = (n as f64).sqrt() as usize;
    match kind {
        BackgroundKind::Dark => {
            let level = rng.gen_range(0.0..0.1);
            (0..n).map(|_| level + 0.01 * rng.gen::<f64>()).collect()
        }
        BackgroundKind::WhiteNoise => (0..n).map(|_| rng.gen_range(0.0..0.3)).collect(),
        _ => {
            let raw: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
            let b = gaussian_blur(&raw, side, side, 1.5);
            let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            b.iter().map(|v| 0.3 * (v - lo) / (hi - lo).max(1e-12)).collect()
        }
    }
}

/// Generates sample `index` of the dataset described by `cfg`.
pub fn gen_sample(cfg: &SynthConfig, index: usize) -> SynthSample {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, index as u64));
    let label = index % cfg.class_count;
    let shape = SHAPES[label];
    let s = cfg.image_size;
    let layout = draw_layout(cfg, &mut rng);
    let mut labels = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (bx, by) = (px - layout.blob_center.0, py - layout.blob_center.1);
            if bx * bx + by * by <= layout.blob_radius * layout.blob_radius {
                labels[y * s + x] = 1;
            }
            if shape.contains(px - layout.shape_center.0, py - layout.shape_center.1, layout.radius) {
                labels[y * s + x] = 2;
            }
        }
    }
    let mut data = Vec::with_capacity(cfg.channels * s * s);
    for _ in 0..cfg.channels {
        let bg = background(cfg.background, s * s, &mut rng);
        for (v, &l) in bg.into_iter().zip(&labels) {
            let lift = match l {
                0 => 0.0,
                1 => cfg.blob_contrast,
                _ => cfg.blob_contrast + layout.contrast,
            };
            data.push((v + lift).clamp(0.0, 1.0));
        }
    }
    SynthSample {
        image: Tensor::new(vec![cfg.channels, s, s], data).expect("image shape"),
        label,
        mask: TernaryMask::new(vec![s, s], labels).expect("mask shape"),
        attention: None,
    }
}

/// All `train_count + test_count` samples; labels cycle through the classes.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    Ok((0..cfg.total()).into_par_iter().map(|i| gen_sample(cfg, i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocusRegion {
    Distinguishing,
    /// The localization disk including the shape inside it.
    Localization,
}

impl std::str::FromStr for FocusRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distinguishing" => Ok(FocusRegion::Distinguishing),
            "localization" => Ok(FocusRegion::Localization),
            _ => Err(Error::invalid(format!("unknown focus region '{s}'"))),
        }
    }
}

/// Indicator of the focus region blurred with a Gaussian of std `sigma`,
/// scaled to maximum 1.
pub fn gen_attention(sample: &SynthSample, focus: FocusRegion, sigma: f64) -> Result<Tensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid("blur std must be finite and >= 0"));
    }
    let (h, w) = match *sample.mask.shape() {
        [h, w] => (h, w),
        _ => return Err(Error::Shape("attention needs a 2-D mask".into())),
    };
    let min_label = match focus {
        FocusRegion::Distinguishing => 2,
        FocusRegion::Localization => 1,
    };
    let ind: Vec<f64> = sample.mask.labels().iter().map(|&l| f64::from(u8::from(l >= min_label))).collect();
    if ind.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("attention focus region is empty"));
    }
    let blurred = gaussian_blur(&ind, h, w, sigma);
    let max = blurred.iter().cloned().fold(0.0, f64::max);
    Tensor::new(vec![h, w], blurred.into_iter().map(|v| v / max).collect())
}

/// Attaches attention maps to every sample.
pub fn attach_attention(samples: &mut [SynthSample], focus: FocusRegion, sigma: f64) -> Result<()> {
    let maps: Vec<Tensor> = samples.par_iter().map(|s| gen_attention(s, focus, sigma)).collect::<Result<_>>()?;
    for (s, a) in samples.iter_mut().zip(maps) {
        s.attention = Some(a);
    }
    Ok(())
}

/// Training view of the samples. Attention maps, when every sample has
/// one, are repeated across channels to the input shape.
pub fn to_dataset(samples: &[SynthSample]) -> Result<Dataset> {
    let data = Dataset::new(
        samples.iter().map(|s| s.image.clone()).collect(),
        samples.iter().map(|s| s.label).collect(),
    )?;
    if samples.iter().all(|s| s.attention.is_some()) && !samples.is_empty() {
        let att = samples
            .iter()
            .map(|s| {
                let a = s.attention.as_ref().expect("checked");
                let c = s.image.shape()[0];
                Tensor::new(s.image.shape().to_vec(), a.data().repeat(c))
            })
            .collect::<Result<_>>()?;
        data.with_attention(att)
    } else {
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn entry(dir: &Path, sub: &str, i: usize) -> PathBuf {
    dir.join(sub).join(format!("{i:04}.ten"))
}

/// Writes `images/NNNN.ten`, `masks/NNNN.ten`, `attention/NNNN.ten` (when
/// present), `labels.csv` (`index,label,split`) and `manifest.txt`. The
/// first `round(train_fraction * n)` samples form the training split.
pub fn split_and_save(
    samples: &[SynthSample],
    train_fraction: f64,
    out_dir: &Path,
    cfg: Option<&SynthConfig>,
) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid("train fraction must be in [0, 1]"));
    }
    let n_train = ((train_fraction * samples.len() as f64).round() as usize).min(samples.len());
    let has_attention = samples.iter().any(|s| s.attention.is_some());
    for sub in ["images", "masks"].iter().chain(has_attention.then_some(&"attention")) {
        let p = out_dir.join(sub);
        io(&p, fs::create_dir_all(&p))?;
    }
    let mut labels = String::from("index,label,split\n");
    for (i, s) in samples.iter().enumerate() {
        write_tensor(&entry(out_dir, "images", i), &s.image)?;
        write_tensor(&entry(out_dir, "masks", i), &s.mask.to_tensor())?;
        if let Some(a) = &s.attention {
            write_tensor(&entry(out_dir, "attention", i), a)?;
        }
        let split = if i < n_train { "train" } else { "test" };
        let _ = writeln!(labels, "{i},{},{split}", s.label);
    }
    let p = out_dir.join("labels.csv");
    io(&p, fs::write(&p, labels))?;
    let mut manifest = format!("samples={}\ntrain={}\ntest={}\n", samples.len(), n_train, samples.len() - n_train);
    if let Some(cfg) = cfg {
        manifest.push_str(&cfg.echo());
    }
    let p = out_dir.join("manifest.txt");
    io(&p, fs::write(&p, manifest))?;
    Ok(Manifest {
        train: (0..n_train).collect(),
        test: (n_train..samples.len()).collect(),
    })
}

/// Reads a directory written by [`split_and_save`].
pub fn load_dataset(dir: &Path) -> Result<(Vec<SynthSample>, Manifest)> {
    let p = dir.join("labels.csv");
    let text = io(&p, fs::read_to_string(&p))?;
    let mut samples = Vec::new();
    let mut manifest = Manifest {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (line_no, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Format(format!("{}:{}: malformed row '{line}'", p.display(), line_no + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad());
        }
        let i: usize = fields[0].parse().map_err(|_| bad())?;
        let label: usize = fields[1].parse().map_err(|_| bad())?;
        match fields[2] {
            "train" => manifest.train.push(i),
            "test" => manifest.test.push(i),
            _ => return Err(bad()),
        }
        let image = read_tensor(&entry(dir, "images", i))?;
        let mask = TernaryMask::from_tensor(&read_tensor(&entry(dir, "masks", i))?)?;
        let ap = entry(dir, "attention", i);
        let attention = if ap.exists() { Some(read_tensor(&ap)?) } else { None };
        samples.push(SynthSample {
            image,
            label,
            mask,
            attention,
        });
    }
    Ok((samples, manifest))
}
