//! Upsampling operators (nearest-neighbor, bilinear, binomial-5), box
//! downsampling, and the synthetic artifact generator built from them.
//!
//! Each operator lives behind the [`Upsampler`] trait and is registered by
//! name so callers can select a variant at runtime.

use ndarray::Array2;

use crate::dataset::RasterImage;
use crate::error::{Error, Result};
use crate::transform::GrayImage;

/// A factor-N enlargement strategy operating on one channel.
pub trait Upsampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn upsample_channel(&self, channel: &Array2<f64>, factor: usize) -> Array2<f64>;
}

struct NearestNeighbor;
struct Bilinear;
struct Binomial5;

/// Pixel replication to (factor*N1) x (factor*N2).
fn replicate(channel: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = channel.dim();
    Array2::from_shape_fn((h * factor, w * factor), |(i, j)| channel[[i / factor, j / factor]])
}

/// 2D convolution with the outer product of `kernel1d` with itself,
/// normalized to unit sum, reflect padding at the borders.
fn convolve_outer(channel: &Array2<f64>, kernel1d: &[f64]) -> Array2<f64> {
    let sum: f64 = kernel1d.iter().sum();
    let k: Vec<f64> = kernel1d.iter().map(|v| v / sum).collect();
    let horizontal = convolve_axis(channel, &k, true);
    convolve_axis(&horizontal, &k, false)
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

fn convolve_axis(channel: &Array2<f64>, kernel: &[f64], along_rows: bool) -> Array2<f64> {
    let (h, w) = channel.dim();
    let r = (kernel.len() / 2) as isize;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for (t, &kv) in kernel.iter().enumerate() {
            let off = t as isize - r;
            let v = if along_rows {
                channel[[i, reflect(j as isize + off, w as isize)]]
            } else {
                channel[[reflect(i as isize + off, h as isize), j]]
            };
            acc += kv * v;
        }
        acc
    })
}

impl Upsampler for NearestNeighbor {
    fn name(&self) -> &'static str {
        "nn"
    }
    fn upsample_channel(&self, channel: &Array2<f64>, factor: usize) -> Array2<f64> {
        replicate(channel, factor)
    }
}

impl Upsampler for Bilinear {
    fn name(&self) -> &'static str {
        "bilinear"
    }
    fn upsample_channel(&self, channel: &Array2<f64>, factor: usize) -> Array2<f64> {
        convolve_outer(&replicate(channel, factor), &[1.0, 2.0, 1.0])
    }
}

impl Upsampler for Binomial5 {
    fn name(&self) -> &'static str {
        "binomial"
    }
    fn upsample_channel(&self, channel: &Array2<f64>, factor: usize) -> Array2<f64> {
        convolve_outer(&replicate(channel, factor), &[1.0, 4.0, 6.0, 4.0, 1.0])
    }
}

pub const UPSAMPLER_NAMES: [&str; 3] = ["nn", "bilinear", "binomial"];

/// Look up an upsampling strategy by registered name.
pub fn upsampler_by_name(name: &str) -> Result<&'static dyn Upsampler> {
    static NN: NearestNeighbor = NearestNeighbor;
    static BL: Bilinear = Bilinear;
    static BN: Binomial5 = Binomial5;
    match name {
        "nn" | "nearest" => Ok(&NN),
        "bilinear" => Ok(&BL),
        "binomial" | "binomial5" => Ok(&BN),
        other => Err(Error::ConfigError(format!(
            "unknown upsampler '{other}' (expected one of {UPSAMPLER_NAMES:?})"
        ))),
    }
}

/// Upsample a grayscale image by an integer factor >= 2.
pub fn upsample(img: &GrayImage, kind: &dyn Upsampler, factor: usize) -> Result<GrayImage> {
    if factor < 2 {
        return Err(Error::InvalidInput("upsampling factor must be >= 2".into()));
    }
    Ok(GrayImage::new(kind.upsample_channel(&img.pixels, factor)))
}

/// Upsample a raster image per channel.
pub fn upsample_raster(img: &RasterImage, kind: &dyn Upsampler, factor: usize) -> Result<RasterImage> {
    if factor < 2 {
        return Err(Error::InvalidInput("upsampling factor must be >= 2".into()));
    }
    let channels: Vec<Array2<f64>> =
        (0..img.channels()).map(|c| kind.upsample_channel(&img.channel(c), factor)).collect();
    Ok(RasterImage::from_channels(&channels))
}

/// Box average over factor x factor blocks; trailing rows/columns that do not
/// fill a block are cropped.
pub fn downsample_channel(channel: &Array2<f64>, factor: usize) -> Array2<f64> {
    if factor <= 1 {
        return channel.clone();
    }
    let (h, w) = (channel.nrows() / factor, channel.ncols() / factor);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for di in 0..factor {
            for dj in 0..factor {
                acc += channel[[i * factor + di, j * factor + dj]];
            }
        }
        acc / (factor * factor) as f64
    })
}

pub fn downsample(img: &GrayImage, factor: usize) -> GrayImage {
    GrayImage::new(downsample_channel(&img.pixels, factor))
}

/// Emulate a generator pipeline: one global box downsample by 2^rounds, then
/// `rounds` successive factor-2 upsampling stages of the chosen kind. Output
/// dimensions equal the input's.
pub fn synth_fake_channel(
    channel: &Array2<f64>,
    kind: &dyn Upsampler,
    rounds: u32,
) -> Result<Array2<f64>> {
    if rounds == 0 {
        return Ok(channel.clone());
    }
    let shrink = 1usize << rounds;
    let (h, w) = channel.dim();
    if h < shrink || w < shrink || h % shrink != 0 || w % shrink != 0 {
        return Err(Error::InvalidInput(format!(
            "image {h}x{w} too small or not divisible for {rounds} factor-2 rounds"
        )));
    }
    let mut cur = downsample_channel(channel, shrink);
    for _ in 0..rounds {
        cur = kind.upsample_channel(&cur, 2);
    }
    Ok(cur)
}

pub fn synth_fake(img: &GrayImage, kind: &dyn Upsampler, rounds: u32) -> Result<GrayImage> {
    Ok(GrayImage::new(synth_fake_channel(&img.pixels, kind, rounds)?))
}

pub fn synth_fake_raster(img: &RasterImage, kind: &dyn Upsampler, rounds: u32) -> Result<RasterImage> {
    let channels: Vec<Array2<f64>> = (0..img.channels())
        .map(|c| synth_fake_channel(&img.channel(c), kind, rounds))
        .collect::<Result<_>>()?;
    Ok(RasterImage::from_channels(&channels))
}

/// Mask of "grid" frequencies for factor-2 upsampling artifacts: cells whose
/// row or column index falls in the mirrored high band (k >= N/2). This is a
/// constructed metric for desk-scale measurements, not a literature standard.
pub fn grid_band_mask(n1: usize, n2: usize) -> Array2<bool> {
    Array2::from_shape_fn((n1, n2), |(i, j)| i >= n1 / 2 || j >= n2 / 2)
}

/// Ratio of mean |coefficient| over the grid band to mean |coefficient| over
/// the complementary low band.
pub fn grid_energy_ratio(coeffs: &Array2<f64>) -> f64 {
    let mask = grid_band_mask(coeffs.nrows(), coeffs.ncols());
    let (mut hi, mut nhi, mut lo, mut nlo) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (idx, v) in coeffs.indexed_iter() {
        if mask[idx] {
            hi += v.abs();
            nhi += 1;
        } else {
            lo += v.abs();
            nlo += 1;
        }
    }
    (hi / nhi.max(1) as f64) / (lo / nlo.max(1) as f64).max(1e-300)
}
