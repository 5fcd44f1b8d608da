//! Image perturbations for robustness experiments: Gaussian blur, crop and
//! resize, JPEG compression, additive Gaussian noise, and the combined
//! pipeline that cycles through all four.
//!
//! Each perturbation sits behind the [`Perturbation`] trait and is selected
//! by registered name. Every random draw derives from a per-image RNG stream
//! seeded as `seed ^ stable_hash(filename)` so parallel file order cannot
//! change outcomes.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{atomic_write, stable_hash, RasterImage};
use crate::error::{Error, Result};

/// A single corruption applied to one image. Returns the perturbed image and
/// the drawn parameters for the manifest.
pub trait Perturbation: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, img: &RasterImage, rng: &mut ChaCha8Rng) -> Result<(RasterImage, serde_json::Value)>;
}

pub struct Blur;
pub struct CropResize;
pub struct JpegCompress;
pub struct AddNoise;

pub const PERTURBATION_NAMES: [&str; 4] = ["blur", "crop", "compress", "noise"];

/// Look up a perturbation strategy by registered name.
pub fn perturbation_by_name(name: &str) -> Result<&'static dyn Perturbation> {
    static BLUR: Blur = Blur;
    static CROP: CropResize = CropResize;
    static JPEG: JpegCompress = JpegCompress;
    static NOISE: AddNoise = AddNoise;
    match name {
        "blur" => Ok(&BLUR),
        "crop" => Ok(&CROP),
        "compress" | "jpeg" => Ok(&JPEG),
        "noise" => Ok(&NOISE),
        other => Err(Error::ConfigError(format!(
            "unknown perturbation '{other}' (expected one of {PERTURBATION_NAMES:?} or 'combined')"
        ))),
    }
}

fn reflect(i: isize, n: isize) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Gaussian blur with a drawn kernel size k in {3,5,7,9} and
/// sigma = 0.3*((k-1)/2 - 1) + 0.8.
pub fn blur_with_kernel(img: &RasterImage, k: usize) -> RasterImage {
    let sigma = 0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let r = (k / 2) as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= s);
    let channels: Vec<Array2<f64>> = (0..img.channels())
        .map(|c| {
            let ch = img.channel(c);
            let (h, w) = ch.dim();
            // separable pass: rows then columns, reflect padding
            let horiz = Array2::from_shape_fn((h, w), |(i, j)| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * ch[[i, reflect(j as isize + t as isize - r, w as isize)]])
                    .sum::<f64>()
            });
            Array2::from_shape_fn((h, w), |(i, j)| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * horiz[[reflect(i as isize + t as isize - r, h as isize), j]])
                    .sum::<f64>()
            })
        })
        .collect();
    RasterImage::from_channels(&channels)
}

impl Perturbation for Blur {
    fn name(&self) -> &'static str {
        "blur"
    }
    fn apply(&self, img: &RasterImage, rng: &mut ChaCha8Rng) -> Result<(RasterImage, serde_json::Value)> {
        let k = [3usize, 5, 7, 9][rng.gen_range(0..4)];
        Ok((blur_with_kernel(img, k), json!({ "kernel_size": k })))
    }
}

/// Bilinear resize of one channel to (out_h, out_w).
pub fn bilinear_resize(channel: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = channel.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
        channel[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
            + channel[[y0, x1]] * (1.0 - dy) * dx
            + channel[[y1, x0]] * dy * (1.0 - dx)
            + channel[[y1, x1]] * dy * dx
    })
}

/// Crop a drawn percentage (U(5,20), independent per axis, uniform offsets)
/// and bilinearly resize back to the original resolution.
pub fn crop_resize_with(
    img: &RasterImage,
    pct_y: f64,
    pct_x: f64,
    off_frac_y: f64,
    off_frac_x: f64,
) -> Result<RasterImage> {
    let (h, w) = (img.height(), img.width());
    if h < 32 || w < 32 {
        return Err(Error::InvalidInput(format!("image {h}x{w} too small to crop (min 32)")));
    }
    let ch = ((h as f64 * (1.0 - pct_y / 100.0)).round() as usize).clamp(1, h);
    let cw = ((w as f64 * (1.0 - pct_x / 100.0)).round() as usize).clamp(1, w);
    let oy = ((h - ch) as f64 * off_frac_y).round() as usize;
    let ox = ((w - cw) as f64 * off_frac_x).round() as usize;
    let channels: Vec<Array2<f64>> = (0..img.channels())
        .map(|c| {
            let full = img.channel(c);
            let cropped = Array2::from_shape_fn((ch, cw), |(i, j)| full[[oy + i, ox + j]]);
            bilinear_resize(&cropped, h, w)
        })
        .collect();
    Ok(RasterImage::from_channels(&channels))
}

impl Perturbation for CropResize {
    fn name(&self) -> &'static str {
        "crop"
    }
    fn apply(&self, img: &RasterImage, rng: &mut ChaCha8Rng) -> Result<(RasterImage, serde_json::Value)> {
        let pct_y = rng.gen_range(5.0..20.0);
        let pct_x = rng.gen_range(5.0..20.0);
        let off_y = rng.gen_range(0.0..1.0);
        let off_x = rng.gen_range(0.0..1.0);
        let out = crop_resize_with(img, pct_y, pct_x, off_y, off_x)?;
        Ok((out, json!({ "pct_y": pct_y, "pct_x": pct_x })))
    }
}

/// Baseline JPEG round trip at an integer quality factor.
pub fn jpeg_round_trip(img: &RasterImage, quality: u8) -> Result<RasterImage> {
    let (h, w, c) = img.pixels.dim();
    let raw: Vec<u8> = img.pixels.iter().copied().collect();
    let mut bytes: Vec<u8> = Vec::new();
    {
        let mut cursor = std::io::Cursor::new(&mut bytes);
        let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut cursor, quality);
        let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        enc.encode(&raw, w as u32, h as u32, color)?;
    }
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)?;
    let pixels = if c == 1 {
        let g = decoded.to_luma8();
        ndarray::Array3::from_shape_vec((h, w, 1), g.into_raw()).unwrap()
    } else {
        let rgb = decoded.to_rgb8();
        ndarray::Array3::from_shape_vec((h, w, 3), rgb.into_raw()).unwrap()
    };
    Ok(RasterImage::new(pixels))
}

impl Perturbation for JpegCompress {
    fn name(&self) -> &'static str {
        "compress"
    }
    fn apply(&self, img: &RasterImage, rng: &mut ChaCha8Rng) -> Result<(RasterImage, serde_json::Value)> {
        let q: u8 = rng.gen_range(10..=75);
        Ok((jpeg_round_trip(img, q)?, json!({ "quality": q })))
    }
}

/// Additive i.i.d. Gaussian noise at a drawn variance, clamp-then-round.
pub fn add_noise_with(img: &RasterImage, variance: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let normal = Normal::new(0.0, variance.max(0.0).sqrt()).unwrap();
    let mut out = img.pixels.clone();
    for v in out.iter_mut() {
        let noisy = *v as f64 + normal.sample(rng);
        *v = noisy.round().clamp(0.0, 255.0) as u8;
    }
    RasterImage::new(out)
}

impl Perturbation for AddNoise {
    fn name(&self) -> &'static str {
        "noise"
    }
    fn apply(&self, img: &RasterImage, rng: &mut ChaCha8Rng) -> Result<(RasterImage, serde_json::Value)> {
        let variance = rng.gen_range(5.0..20.0);
        Ok((add_noise_with(img, variance, rng), json!({ "variance": variance })))
    }
}

/// Selection of corruption kind(s) for a dataset run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Blur,
    Crop,
    Compress,
    Noise,
    /// Cycle blur -> crop -> compress -> noise across images.
    Combined,
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(PerturbKind::Blur),
            "crop" => Ok(PerturbKind::Crop),
            "compress" | "jpeg" => Ok(PerturbKind::Compress),
            "noise" => Ok(PerturbKind::Noise),
            "combined" => Ok(PerturbKind::Combined),
            other => Err(Error::ConfigError(format!("unknown perturbation kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub kind: PerturbKind,
    pub apply_prob: f64,
    pub rng_seed: u64,
}

impl PerturbConfig {
    pub fn new(kind: PerturbKind, apply_prob: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&apply_prob) {
            return Err(Error::InvalidInput("apply_prob must be in [0,1]".into()));
        }
        Ok(PerturbConfig { kind, apply_prob, rng_seed })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbRecord {
    pub file: String,
    pub applied_kinds: Vec<String>,
    pub drawn_parameters: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbManifest {
    pub config: PerturbConfig,
    pub records: Vec<PerturbRecord>,
}

/// Perturb one image according to the config; `index` drives the combined-
/// mode cycle (which advances per image regardless of the coin flip).
pub fn perturb_image(
    img: &RasterImage,
    name: &str,
    config: &PerturbConfig,
    index: usize,
) -> Result<(RasterImage, PerturbRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ stable_hash(name));
    let apply: bool = rng.gen_range(0.0..1.0) < config.apply_prob;
    let kind_name = match config.kind {
        PerturbKind::Blur => "blur",
        PerturbKind::Crop => "crop",
        PerturbKind::Compress => "compress",
        PerturbKind::Noise => "noise",
        PerturbKind::Combined => PERTURBATION_NAMES[index % PERTURBATION_NAMES.len()],
    };
    if !apply {
        return Ok((
            img.clone(),
            PerturbRecord {
                file: name.to_string(),
                applied_kinds: vec![],
                drawn_parameters: json!({}),
            },
        ));
    }
    let op = perturbation_by_name(kind_name)?;
    let (out, params) = op.apply(img, &mut rng)?;
    Ok((
        out,
        PerturbRecord {
            file: name.to_string(),
            applied_kinds: vec![kind_name.to_string()],
            drawn_parameters: params,
        },
    ))
}

/// Perturb every image file in `in_dir` (sorted order), writing PNGs that
/// mirror the input filenames plus a JSON manifest of what was applied.
pub fn perturb_dataset(in_dir: &Path, out_dir: &Path, config: &PerturbConfig) -> Result<PerturbManifest> {
    let mut files: Vec<_> = std::fs::read_dir(in_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no files in {}", in_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let img = RasterImage::load(path)?;
        let (out, record) = perturb_image(&img, &name, config, index)?;
        let stem = path.file_stem().unwrap().to_string_lossy();
        out.save_png(&out_dir.join(format!("{stem}.png")))?;
        records.push(record);
    }
    let manifest = PerturbManifest { config: config.clone(), records };
    atomic_write(out_dir.join("perturb_manifest.json").as_path(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}
