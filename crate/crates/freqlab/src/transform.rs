//! Orthonormal type-II 2D-DCT, its inverse, a brute-force oracle, and the
//! log-scale / standardize feature pipeline.

use ndarray::{Array1, Array2};
use std::f64::consts::PI;

use crate::dataset::RasterImage;
use crate::error::{Error, Result};

/// Grayscale image as a real-valued matrix. Intensities are in [0, 255]
/// after ingestion but arbitrary finite reals are allowed internally.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub pixels: Array2<f64>,
}

impl GrayImage {
    pub fn new(pixels: Array2<f64>) -> Self {
        GrayImage { pixels }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// DCT coefficient matrix, same shape as the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub coeffs: Array2<f64>,
}

impl Spectrum {
    pub fn new(coeffs: Array2<f64>) -> Self {
        Spectrum { coeffs }
    }
}

/// Per-coefficient statistics of log-scaled spectra over a training split.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    pub epsilon_std: f64,
}

pub const EPSILON_STD: f64 = 1e-8;
pub const LOG_EPS: f64 = 1e-12;

fn check_finite(m: &Array2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix contains non-finite entries".into()))
    }
}

/// Orthonormal 1D type-II DCT matrix of size n. Row k holds the k-th basis
/// vector: s(k) * cos(pi/n * (x + 1/2) * k) with s(0)=sqrt(1/n), s(k)=sqrt(2/n).
fn dct_matrix(n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, n));
    let n_f = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n_f).sqrt() } else { (2.0 / n_f).sqrt() };
        for x in 0..n {
            c[[k, x]] = scale * (PI / n_f * (x as f64 + 0.5) * k as f64).cos();
        }
    }
    c
}

/// Separable orthonormal type-II 2D-DCT: a 1D-DCT along the columns followed
/// by a 1D-DCT along the rows, realized as D = C1 * I * C2^T.
pub fn dct2(img: &GrayImage) -> Result<Spectrum> {
    check_finite(&img.pixels)?;
    let c1 = dct_matrix(img.height());
    let c2 = dct_matrix(img.width());
    let coeffs = c1.dot(&img.pixels).dot(&c2.t());
    Ok(Spectrum::new(coeffs))
}

/// Inverse of `dct2` (orthonormal, so the transpose matrices invert).
pub fn idct2(spec: &Spectrum) -> Result<GrayImage> {
    check_finite(&spec.coeffs)?;
    let c1 = dct_matrix(spec.coeffs.nrows());
    let c2 = dct_matrix(spec.coeffs.ncols());
    let pixels = c1.t().dot(&spec.coeffs).dot(&c2);
    Ok(GrayImage::new(pixels))
}

/// Brute-force O(N^4) evaluation of the orthonormal type-II DCT double sum.
/// Reference oracle for property tests; refuses inputs larger than 64x64.
pub fn dct2_naive(img: &GrayImage) -> Result<Spectrum> {
    let (n1, n2) = (img.height(), img.width());
    if n1 * n2 > 64 * 64 {
        return Err(Error::OracleSizeExceeded(format!(
            "{n1}x{n2} exceeds the 64x64 oracle limit"
        )));
    }
    check_finite(&img.pixels)?;
    let w = |k: usize, n: usize| -> f64 {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut coeffs = Array2::zeros((n1, n2));
    for kx in 0..n1 {
        for ky in 0..n2 {
            let mut acc = 0.0;
            for x in 0..n1 {
                for y in 0..n2 {
                    acc += img.pixels[[x, y]]
                        * (PI / n1 as f64 * (x as f64 + 0.5) * kx as f64).cos()
                        * (PI / n2 as f64 * (y as f64 + 0.5) * ky as f64).cos();
                }
            }
            coeffs[[kx, ky]] = w(kx, n1) * w(ky, n2) * acc;
        }
    }
    Ok(Spectrum::new(coeffs))
}

/// Elementwise log(|c| + eps). Sign is discarded.
pub fn log_scale(spec: &Spectrum, eps: f64) -> Result<Spectrum> {
    if eps <= 0.0 {
        return Err(Error::InvalidInput("log_scale eps must be positive".into()));
    }
    Ok(Spectrum::new(spec.coeffs.mapv(|c| (c.abs() + eps).ln())))
}

/// Per-coefficient mean and population std over log-scaled training spectra.
pub fn fit_feature_stats(train_specs: &[Spectrum]) -> Result<FeatureStats> {
    if train_specs.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 samples to fit feature stats".into(),
        ));
    }
    let shape = train_specs[0].coeffs.dim();
    for s in train_specs {
        if s.coeffs.dim() != shape {
            return Err(Error::ShapeError(format!(
                "expected {:?}, got {:?}",
                shape,
                s.coeffs.dim()
            )));
        }
    }
    let n = train_specs.len() as f64;
    let mut mean = Array2::<f64>::zeros(shape);
    for s in train_specs {
        mean += &s.coeffs;
    }
    mean /= n;
    let mut var = Array2::<f64>::zeros(shape);
    for s in train_specs {
        let d = &s.coeffs - &mean;
        var += &(&d * &d);
    }
    var /= n;
    let std = var.mapv(|v| v.sqrt().max(EPSILON_STD));
    Ok(FeatureStats { mean, std, epsilon_std: EPSILON_STD })
}

/// Standardize a log-scaled spectrum with training stats and flatten row-major.
pub fn standardize(spec: &Spectrum, stats: &FeatureStats) -> Result<Array1<f64>> {
    if spec.coeffs.dim() != stats.mean.dim() {
        return Err(Error::ShapeError(format!(
            "spectrum {:?} vs stats {:?}",
            spec.coeffs.dim(),
            stats.mean.dim()
        )));
    }
    let z = (&spec.coeffs - &stats.mean) / &stats.std;
    Ok(Array1::from_iter(z.iter().copied()))
}

/// Invert `standardize` back to the log-scaled spectrum.
pub fn unstandardize(features: &Array1<f64>, stats: &FeatureStats) -> Result<Spectrum> {
    let (n1, n2) = stats.mean.dim();
    if features.len() != n1 * n2 {
        return Err(Error::ShapeError(format!(
            "feature length {} vs stats {}x{}",
            features.len(),
            n1,
            n2
        )));
    }
    let z = Array2::from_shape_vec((n1, n2), features.to_vec()).unwrap();
    Ok(Spectrum::new(&z * &stats.std + &stats.mean))
}

/// Flattened raw-pixel features mapped linearly from [0,255] to [-1,1].
/// Grayscale conversion happens upstream; this consumes every channel.
pub fn pixel_features(img: &RasterImage) -> Array1<f64> {
    Array1::from_iter(img.pixels.iter().map(|&p| p as f64 / 127.5 - 1.0))
}

/// Same map for an already-grayscale matrix.
pub fn gray_pixel_features(img: &GrayImage) -> Array1<f64> {
    Array1::from_iter(img.pixels.iter().map(|&p| p / 127.5 - 1.0))
}

/// Full DCT feature pipeline for one grayscale image: dct2, log-scale,
/// standardize with training stats, flatten.
pub fn dct_features(img: &GrayImage, stats: &FeatureStats) -> Result<Array1<f64>> {
    let spec = log_scale(&dct2(img)?, LOG_EPS)?;
    standardize(&spec, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n1: usize, n2: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(Array2::from_shape_fn((n1, n2), |_| rng.gen_range(-100.0..100.0)))
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_has_only_dc() {
        let c = 3.25;
        let img = GrayImage::new(Array2::from_elem((8, 8), c));
        let spec = dct2(&img).unwrap();
        assert!((spec.coeffs[[0, 0]] - 8.0 * c).abs() < 1e-12);
        for (idx, v) in spec.coeffs.indexed_iter() {
            if idx != (0, 0) {
                assert!(v.abs() < 1e-12, "nonzero AC at {idx:?}: {v}");
            }
        }
    }

    #[test]
    fn zero_image_zero_spectrum() {
        let img = GrayImage::new(Array2::zeros((5, 7)));
        let spec = dct2(&img).unwrap();
        assert!(spec.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dct2_matches_naive_oracle() {
        for &(n1, n2) in &[(16, 16), (8, 16), (3, 5), (1, 1), (32, 32)] {
            let img = random_image(n1, n2, 42 + n1 as u64 * 100 + n2 as u64);
            let fast = dct2(&img).unwrap();
            let slow = dct2_naive(&img).unwrap();
            assert!(
                max_abs_diff(&fast.coeffs, &slow.coeffs) < 1e-9,
                "oracle mismatch at {n1}x{n2}"
            );
        }
    }

    #[test]
    fn naive_dc_term_2x2() {
        let img = GrayImage::new(array![[1.0, 2.0], [3.0, 4.0]]);
        let spec = dct2_naive(&img).unwrap();
        assert!((spec.coeffs[[0, 0]] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn naive_all_ones_4x4() {
        let img = GrayImage::new(Array2::ones((4, 4)));
        let spec = dct2_naive(&img).unwrap();
        assert!((spec.coeffs[[0, 0]] - 4.0).abs() < 1e-12);
        assert!(spec.coeffs.iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn naive_rejects_oversize() {
        let img = GrayImage::new(Array2::zeros((65, 65)));
        assert!(matches!(dct2_naive(&img), Err(Error::OracleSizeExceeded(_))));
    }

    #[test]
    fn round_trip_128() {
        let img = random_image(128, 128, 7);
        let back = idct2(&dct2(&img).unwrap()).unwrap();
        assert!(max_abs_diff(&img.pixels, &back.pixels) < 1e-9);
    }

    #[test]
    fn dc_only_spectrum_reconstructs_constant() {
        let c = 2.5;
        let mut coeffs = Array2::zeros((6, 4));
        coeffs[[0, 0]] = (6.0f64 * 4.0).sqrt() * c;
        let img = idct2(&Spectrum::new(coeffs)).unwrap();
        assert!(img.pixels.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn single_unit_coefficient_is_sampled_cosine() {
        // Unit coefficient at (0,1), n=8: pixels should equal the orthonormal
        // basis function sqrt(1/8)*sqrt(2/8)*cos(pi/8*(y+1/2)).
        let n = 8usize;
        let mut coeffs = Array2::zeros((n, n));
        coeffs[[0, 1]] = 1.0;
        let img = idct2(&Spectrum::new(coeffs)).unwrap();
        for x in 0..n {
            for y in 0..n {
                let expect = (1.0 / n as f64).sqrt()
                    * (2.0 / n as f64).sqrt()
                    * (PI / n as f64 * (y as f64 + 0.5)).cos();
                assert!((img.pixels[[x, y]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_energy() {
        let img = random_image(31, 17, 9);
        let spec = dct2(&img).unwrap();
        let e_img: f64 = img.pixels.iter().map(|v| v * v).sum();
        let e_spec: f64 = spec.coeffs.iter().map(|v| v * v).sum();
        assert!((e_img - e_spec).abs() < 1e-6 * e_img);
    }

    #[test]
    fn linearity() {
        let x = random_image(12, 9, 1);
        let y = random_image(12, 9, 2);
        let (a, b) = (2.5, -1.25);
        let combo = GrayImage::new(a * &x.pixels + b * &y.pixels);
        let lhs = dct2(&combo).unwrap();
        let rhs = a * &dct2(&x).unwrap().coeffs + b * &dct2(&y).unwrap().coeffs;
        assert!(max_abs_diff(&lhs.coeffs, &rhs) < 1e-9);
    }

    #[test]
    fn dct2_rejects_non_finite() {
        let mut m = Array2::zeros((4, 4));
        m[[1, 1]] = f64::NAN;
        assert!(matches!(dct2(&GrayImage::new(m)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn log_scale_zero_coefficient() {
        let spec = Spectrum::new(Array2::zeros((2, 2)));
        let out = log_scale(&spec, 1e-12).unwrap();
        assert!((out.coeffs[[0, 0]] - (1e-12f64).ln()).abs() < 1e-9);
        assert!((out.coeffs[[0, 0]] + 27.631).abs() < 1e-2);
    }

    #[test]
    fn log_scale_discards_sign() {
        let eps = 1e-15;
        let spec = Spectrum::new(Array2::from_elem((1, 1), -std::f64::consts::E));
        let out = log_scale(&spec, eps).unwrap();
        assert!((out.coeffs[[0, 0]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_scale_rejects_bad_eps() {
        let spec = Spectrum::new(Array2::zeros((2, 2)));
        assert!(log_scale(&spec, 0.0).is_err());
        assert!(log_scale(&spec, -1.0).is_err());
    }

    #[test]
    fn feature_stats_two_samples() {
        let a = Spectrum::new(Array2::from_elem((2, 2), 0.0));
        let b = Spectrum::new(Array2::from_elem((2, 2), 2.0));
        let stats = fit_feature_stats(&[a, b]).unwrap();
        assert!((stats.mean[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((stats.std[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_stats_degenerate_floored() {
        let a = Spectrum::new(Array2::from_elem((2, 2), 5.0));
        let stats = fit_feature_stats(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(stats.std[[0, 0]], EPSILON_STD);
        let z = standardize(&a, &stats).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_stats_errors() {
        let a = Spectrum::new(Array2::zeros((2, 2)));
        assert!(matches!(fit_feature_stats(&[a.clone()]), Err(Error::InsufficientData(_))));
        let b = Spectrum::new(Array2::zeros((3, 2)));
        assert!(matches!(fit_feature_stats(&[a, b]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn standardizing_train_set_gives_zero_mean_unit_std() {
        let specs: Vec<Spectrum> = (0..50)
            .map(|i| Spectrum::new(random_image(6, 6, 100 + i).pixels))
            .collect();
        let stats = fit_feature_stats(&specs).unwrap();
        let zs: Vec<_> = specs.iter().map(|s| standardize(s, &stats).unwrap()).collect();
        let d = zs[0].len();
        for j in 0..d {
            let vals: Vec<f64> = zs.iter().map(|z| z[j]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn standardize_round_trips() {
        let specs: Vec<Spectrum> =
            (0..5).map(|i| Spectrum::new(random_image(4, 4, i).pixels)).collect();
        let stats = fit_feature_stats(&specs).unwrap();
        let z = standardize(&specs[0], &stats).unwrap();
        let back = unstandardize(&z, &stats).unwrap();
        assert!(max_abs_diff(&back.coeffs, &specs[0].coeffs) < 1e-12);
    }

    #[test]
    fn standardize_value_laws() {
        let stats = FeatureStats {
            mean: Array2::from_elem((1, 2), 3.0),
            std: Array2::from_elem((1, 2), 2.0),
            epsilon_std: EPSILON_STD,
        };
        let at_mean = Spectrum::new(Array2::from_elem((1, 2), 3.0));
        assert!(standardize(&at_mean, &stats).unwrap().iter().all(|&v| v == 0.0));
        let plus_std = Spectrum::new(Array2::from_elem((1, 2), 5.0));
        assert!(standardize(&plus_std, &stats).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pixel_feature_endpoints() {
        use crate::dataset::RasterImage;
        let img = RasterImage::from_gray_u8(2, 2, &[0, 255, 128, 127]);
        let f = pixel_features(&img);
        assert_eq!(f[0], -1.0);
        assert_eq!(f[1], 1.0);
        assert!((f[2] - (128.0 / 127.5 - 1.0)).abs() < 1e-12);
        assert!((f[2] - 0.00392).abs() < 1e-4);
    }
}
