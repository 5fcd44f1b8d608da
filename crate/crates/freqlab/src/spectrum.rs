//! Corpus-level spectrum statistics and heatmap rendering.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::atomic_write;
use crate::error::{Error, Result};
use crate::transform::{dct2, GrayImage, LOG_EPS};

/// Order in which log-scaling and corpus averaging are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvgOrder {
    /// log(mean(|DCT|)) — the default.
    LogAfterMean,
    /// mean(log(|DCT| + eps))
    MeanAfterLog,
}

#[derive(Debug, Clone)]
pub struct MeanSpectrum {
    pub values: Array2<f64>,
    pub sample_count: usize,
    pub order: AvgOrder,
}

/// Streaming single-pass accumulator for corpus mean spectra. Partial
/// accumulators can be merged in a fixed order for parallel corpora.
#[derive(Debug, Clone)]
pub struct MeanSpectrumAccumulator {
    sum: Option<Array2<f64>>,
    count: usize,
    order: AvgOrder,
}

impl MeanSpectrumAccumulator {
    pub fn new(order: AvgOrder) -> Self {
        MeanSpectrumAccumulator { sum: None, count: 0, order }
    }

    pub fn add(&mut self, img: &GrayImage) -> Result<()> {
        let spec = dct2(img)?;
        let contrib = match self.order {
            AvgOrder::LogAfterMean => spec.coeffs.mapv(f64::abs),
            AvgOrder::MeanAfterLog => spec.coeffs.mapv(|c| (c.abs() + LOG_EPS).ln()),
        };
        match &mut self.sum {
            None => self.sum = Some(contrib),
            Some(sum) => {
                if sum.dim() != contrib.dim() {
                    return Err(Error::ShapeError(format!(
                        "expected {:?}, got {:?}",
                        sum.dim(),
                        contrib.dim()
                    )));
                }
                *sum += &contrib;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: MeanSpectrumAccumulator) -> Result<()> {
        match (self.sum.as_mut(), other.sum) {
            (_, None) => {}
            (None, Some(s)) => {
                self.sum = Some(s);
                self.count = other.count;
            }
            (Some(a), Some(b)) => {
                if a.dim() != b.dim() {
                    return Err(Error::ShapeError("accumulator shape mismatch".into()));
                }
                *a += &b;
                self.count += other.count;
            }
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<MeanSpectrum> {
        let sum = self
            .sum
            .ok_or_else(|| Error::InsufficientData("empty corpus for mean spectrum".into()))?;
        let mean = sum / self.count as f64;
        let values = match self.order {
            AvgOrder::LogAfterMean => mean.mapv(|v| (v + LOG_EPS).ln()),
            AvgOrder::MeanAfterLog => mean,
        };
        Ok(MeanSpectrum { values, sample_count: self.count, order: self.order })
    }
}

/// Mean spectrum over an image iterator.
pub fn mean_spectrum<'a, I>(images: I, order: AvgOrder) -> Result<MeanSpectrum>
where
    I: IntoIterator<Item = &'a GrayImage>,
{
    let mut acc = MeanSpectrumAccumulator::new(order);
    for img in images {
        acc.add(img)?;
    }
    acc.finalize()
}

/// Elementwise |a - b| between two mean spectra.
pub fn abs_diff_spectrum(a: &MeanSpectrum, b: &MeanSpectrum) -> Result<Array2<f64>> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", a.values.dim(), b.values.dim())));
    }
    Ok((&a.values - &b.values).mapv(f64::abs))
}

/// Reshape |weights| of a linear model back to the N1 x N2 frequency grid
/// (inverse of the row-major standardize flattening). Multi-class weight
/// matrices are collapsed by the per-feature max of |w|.
pub fn weight_heatmap(weights: &ndarray::Array2<f64>, n1: usize, n2: usize) -> Result<Array2<f64>> {
    if weights.nrows() != n1 * n2 {
        return Err(Error::ShapeError(format!(
            "weight rows {} do not match {n1}x{n2}",
            weights.nrows()
        )));
    }
    let mut out = Array2::zeros((n1, n2));
    for (d, row) in weights.rows().into_iter().enumerate() {
        let mag = row.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
        out[[d / n2, d % n2]] = mag;
    }
    Ok(out)
}

/// Rendering parameters for heatmap output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapSpec {
    /// Optional clip: values above this are saturated before normalization.
    pub clip_max: Option<f64>,
    pub colormap: String,
    /// Optional square output size in pixels (nearest-neighbor scaled).
    pub output_size: Option<usize>,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec { clip_max: None, colormap: "viridis".into(), output_size: None }
    }
}

// Viridis anchor colors (matplotlib), linearly interpolated.
const VIRIDIS: [[u8; 3]; 16] = [
    [68, 1, 84],
    [72, 26, 108],
    [71, 47, 125],
    [65, 68, 135],
    [57, 86, 140],
    [49, 104, 142],
    [42, 120, 142],
    [35, 136, 142],
    [31, 152, 139],
    [34, 168, 132],
    [53, 183, 121],
    [84, 197, 104],
    [122, 209, 81],
    [165, 219, 54],
    [210, 226, 27],
    [253, 231, 37],
];

fn palette_color(name: &str, t: f64) -> Result<[u8; 3]> {
    let t = t.clamp(0.0, 1.0);
    match name {
        "viridis" => {
            let pos = t * (VIRIDIS.len() - 1) as f64;
            let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
            let f = pos - i as f64;
            let mut c = [0u8; 3];
            for (k, ch) in c.iter_mut().enumerate() {
                let a = VIRIDIS[i][k] as f64;
                let b = VIRIDIS[i + 1][k] as f64;
                *ch = (a + (b - a) * f).round() as u8;
            }
            Ok(c)
        }
        "gray" => {
            let v = (t * 255.0).round() as u8;
            Ok([v, v, v])
        }
        other => Err(Error::ConfigError(format!("unknown colormap '{other}'"))),
    }
}

/// Render a matrix to an 8-bit PNG. Values are optionally clipped at
/// `clip_max`, then min-max normalized into the palette. Row 0 / column 0
/// (low frequency) maps to the top-left pixel.
pub fn render_heatmap(values: &Array2<f64>, spec: &HeatmapSpec, path: &Path) -> Result<()> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("heatmap input must be finite".into()));
    }
    let clipped = match spec.clip_max {
        Some(c) if c > 0.0 => values.mapv(|v| v.min(c)),
        Some(_) => return Err(Error::InvalidInput("clip_max must be positive".into())),
        None => values.clone(),
    };
    let (lo, hi) = clipped.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let (h, w) = clipped.dim();
    let (out_h, out_w) = match spec.output_size {
        Some(s) => (s, s),
        None => (h, w),
    };
    let mut raw = Vec::with_capacity(out_h * out_w * 3);
    for i in 0..out_h {
        for j in 0..out_w {
            let si = (i * h) / out_h;
            let sj = (j * w) / out_w;
            let t = if hi == lo { 0.0 } else { (clipped[[si, sj]] - lo) / range };
            raw.extend_from_slice(&palette_color(&spec.colormap, t)?);
        }
    }
    let buf = image::RgbImage::from_raw(out_w as u32, out_h as u32, raw).unwrap();
    let mut bytes: Vec<u8> = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Dump a matrix as full-precision row-major CSV.
pub fn write_matrix_csv(values: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidInput(format!("bad csv value: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty matrix csv".into()));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::ShapeError("ragged matrix csv".into()));
    }
    let h = rows.len();
    Ok(Array2::from_shape_vec((h, w), rows.concat()).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn img(values: Array2<f64>) -> GrayImage {
        GrayImage::new(values)
    }

    #[test]
    fn single_image_mean_equals_its_spectrum() {
        let x = img(array![[1.0, 2.0], [3.0, 4.0]]);
        let m = mean_spectrum([&x], AvgOrder::MeanAfterLog).unwrap();
        let expect = dct2(&x).unwrap().coeffs.mapv(|c| (c.abs() + LOG_EPS).ln());
        assert_eq!(m.sample_count, 1);
        for (a, b) in m.values.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_killed_by_abs() {
        let x = img(array![[10.0, -3.0], [4.0, 8.0]]);
        let neg = img(-&x.pixels);
        let m = mean_spectrum([&x, &neg], AvgOrder::MeanAfterLog).unwrap();
        let single = mean_spectrum([&x], AvgOrder::MeanAfterLog).unwrap();
        for (a, b) in m.values.iter().zip(single.values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_of_copies_equals_single() {
        let x = img(array![[5.0, 1.0], [2.0, 7.0]]);
        let single = mean_spectrum([&x], AvgOrder::LogAfterMean).unwrap();
        let copies = mean_spectrum([&x, &x, &x], AvgOrder::LogAfterMean).unwrap();
        assert_eq!(single.values, copies.values);
    }

    #[test]
    fn permutation_invariance() {
        let imgs: Vec<GrayImage> = (0..6)
            .map(|i| img(Array2::from_shape_fn((4, 4), |(a, b)| ((a * 7 + b * 3 + i) % 13) as f64)))
            .collect();
        let fwd = mean_spectrum(imgs.iter(), AvgOrder::LogAfterMean).unwrap();
        let rev = mean_spectrum(imgs.iter().rev(), AvgOrder::LogAfterMean).unwrap();
        for (a, b) in fwd.values.iter().zip(rev.values.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_corpus_fails() {
        let empty: Vec<GrayImage> = vec![];
        assert!(matches!(
            mean_spectrum(empty.iter(), AvgOrder::LogAfterMean),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn abs_diff_laws() {
        let a = mean_spectrum([&img(array![[1.0, 2.0], [3.0, 4.0]])], AvgOrder::MeanAfterLog).unwrap();
        let b = mean_spectrum([&img(array![[4.0, 3.0], [2.0, 1.0]])], AvgOrder::MeanAfterLog).unwrap();
        let zero = abs_diff_spectrum(&a, &a).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let ab = abs_diff_spectrum(&a, &b).unwrap();
        let ba = abs_diff_spectrum(&b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn weight_heatmap_placement() {
        let mut w = Array2::zeros((6, 1));
        w[[5, 0]] = -2.0;
        let m = weight_heatmap(&w, 2, 3).unwrap();
        assert_eq!(m[[1, 2]], 2.0);
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 1);
        let zeros = weight_heatmap(&Array2::zeros((6, 2)), 2, 3).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_rendering_deterministic_and_uniform() {
        let dir = tempdir().unwrap();
        let constant = Array2::from_elem((4, 4), 1.0);
        let spec = HeatmapSpec::default();
        let p1 = dir.path().join("a.png");
        let p2 = dir.path().join("b.png");
        render_heatmap(&constant, &spec, &p1).unwrap();
        render_heatmap(&constant, &spec, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let decoded = image::open(&p1).unwrap().to_rgb8();
        let first = decoded.get_pixel(0, 0);
        assert!(decoded.pixels().all(|p| p == first));
    }

    #[test]
    fn heatmap_max_cell_hits_palette_top() {
        let dir = tempdir().unwrap();
        let mut m = Array2::zeros((2, 2));
        m[[1, 0]] = 5.0;
        let p = dir.path().join("m.png");
        render_heatmap(&m, &HeatmapSpec::default(), &p).unwrap();
        let decoded = image::open(&p).unwrap().to_rgb8();
        let top = VIRIDIS[VIRIDIS.len() - 1];
        assert_eq!(decoded.get_pixel(0, 1).0, top);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempdir().unwrap();
        let m = array![[1.5, -2.25e-9], [0.0, 3.0]];
        let p = dir.path().join("m.csv");
        write_matrix_csv(&m, &p).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }
}
