//! Synthetic natural-image corpus generator. Produces grayscale images whose
//! DCT magnitudes follow a 1/f^alpha decay, the stand-in for real photo
//! corpora in desk-scale experiments.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::RasterImage;
use crate::error::Result;
use crate::transform::{idct2, GrayImage, Spectrum};

/// One synthetic photo: random-phase 1/f^alpha spectrum, rescaled to a
/// target contrast and offset to a mid-range base intensity.
pub fn synth_photo(size: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: f64 = rng.gen_range(1.3..2.1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut coeffs = Array2::zeros((size, size));
    for kx in 0..size {
        for ky in 0..size {
            if kx == 0 && ky == 0 {
                continue;
            }
            let f = ((kx * kx + ky * ky) as f64).sqrt();
            coeffs[[kx, ky]] = normal.sample(&mut rng) / (1.0 + f).powf(alpha);
        }
    }
    let field = idct2(&Spectrum::new(coeffs)).expect("finite spectrum");
    let n = (size * size) as f64;
    let mean = field.pixels.sum() / n;
    let var = field.pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    let target_std: f64 = rng.gen_range(28.0..55.0);
    let base: f64 = rng.gen_range(90.0..165.0);
    let pixels = field
        .pixels
        .mapv(|v| ((v - mean) / std * target_std + base).clamp(0.0, 255.0).round());
    GrayImage::new(pixels)
}

pub fn gray_to_raster(img: &GrayImage) -> RasterImage {
    RasterImage::from_channels(&[img.pixels.clone()])
}

/// Generate `count` synthetic photos as PNG files under `dir`.
pub fn generate_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        let img = synth_photo(size, seed.wrapping_add(i as u64));
        gray_to_raster(&img).save_png(&dir.join(format!("img_{i:05}.png")))?;
    }
    Ok(())
}

/// In-memory corpus, used by tests and recipes that do not need files.
pub fn generate_images(count: usize, size: usize, seed: u64) -> Vec<GrayImage> {
    (0..count).map(|i| synth_photo(size, seed.wrapping_add(i as u64))).collect()
}
