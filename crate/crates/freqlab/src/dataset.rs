//! Corpus ingestion, stratified splitting, grayscale conversion, feature
//! caching, and manifest bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::transform::{self, FeatureStats, GrayImage};

/// Decoded 8-bit image, H x W x C with C in {1, 3}.
#[derive(Debug, Clone)]
pub struct RasterImage {
    pub pixels: Array3<u8>,
    pub source: Option<PathBuf>,
}

impl RasterImage {
    pub fn new(pixels: Array3<u8>) -> Self {
        RasterImage { pixels, source: None }
    }

    pub fn from_gray_u8(h: usize, w: usize, data: &[u8]) -> Self {
        let pixels = Array3::from_shape_vec((h, w, 1), data.to_vec()).expect("shape/data mismatch");
        RasterImage { pixels, source: None }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    /// Decode a PNG or JPEG file.
    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path)?;
        let img = match dynimg {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                Array3::from_shape_vec((h, w, 1), g.into_raw()).unwrap()
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                Array3::from_shape_vec((h, w, 3), rgb.into_raw()).unwrap()
            }
        };
        Ok(RasterImage { pixels: img, source: Some(path.to_path_buf()) })
    }

    /// Write as PNG (grayscale for C=1, RGB for C=3).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w, c) = self.pixels.dim();
        let raw: Vec<u8> = self.pixels.iter().copied().collect();
        match c {
            1 => {
                let buf = image::GrayImage::from_raw(w as u32, h as u32, raw).unwrap();
                buf.save_with_format(path, image::ImageFormat::Png)?;
            }
            3 => {
                let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).unwrap();
                buf.save_with_format(path, image::ImageFormat::Png)?;
            }
            _ => return Err(Error::InvalidInput(format!("unsupported channel count {c}"))),
        }
        Ok(())
    }

    /// One channel as an f64 matrix.
    pub fn channel(&self, c: usize) -> Array2<f64> {
        let (h, w, _) = self.pixels.dim();
        Array2::from_shape_fn((h, w), |(i, j)| self.pixels[[i, j, c]] as f64)
    }

    pub fn from_channels(channels: &[Array2<f64>]) -> Self {
        let (h, w) = channels[0].dim();
        let c = channels.len();
        let mut pixels = Array3::zeros((h, w, c));
        for (k, ch) in channels.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    pixels[[i, j, k]] = ch[[i, j]].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        RasterImage { pixels, source: None }
    }
}

/// ITU-R BT.601 luma weights.
const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Weighted average over color channels; identity for grayscale input.
pub fn to_gray(img: &RasterImage) -> GrayImage {
    let (h, w, c) = img.pixels.dim();
    let pixels = match c {
        1 => Array2::from_shape_fn((h, w), |(i, j)| img.pixels[[i, j, 0]] as f64),
        _ => Array2::from_shape_fn((h, w), |(i, j)| {
            (0..3).map(|k| GRAY_WEIGHTS[k] * img.pixels[[i, j, k]] as f64).sum()
        }),
    };
    GrayImage::new(pixels)
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub split: Option<String>,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub root: String,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub split_ratios: Option<[f64; 3]>,
    pub rng_seed: Option<u64>,
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn entries_in_split(&self, split: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split.as_deref() == Some(split)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        atomic_write(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Write-temp-then-rename so partial writes never clobber an existing file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Scan a directory tree of images. The label of each file is the name of its
/// immediate parent directory relative to `dir` (files directly under `dir`
/// get the label "default"). Undecodable files are skipped and counted.
pub fn ingest(dir: &Path) -> Result<DatasetManifest> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    let mut classes: BTreeMap<String, ()> = BTreeMap::new();
    let mut skipped = 0usize;
    for path in &files {
        let bytes = fs::read(path)?;
        if image::load_from_memory(&bytes).is_err() {
            skipped += 1;
            continue;
        }
        let rel = path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
        let label = match path.parent() {
            Some(p) if p != dir => {
                p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            }
            _ => "default".to_string(),
        };
        classes.insert(label.clone(), ());
        entries.push(ManifestEntry { path: rel, label, split: None, digest: sha256_hex(&bytes) });
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no decodable images found under {}",
            dir.display()
        )));
    }
    Ok(DatasetManifest {
        root: dir.to_string_lossy().into_owned(),
        classes: classes.into_keys().collect(),
        entries,
        split_ratios: None,
        rng_seed: None,
        skipped,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Per-class stratified, seeded split. Counts are floored per split, with the
/// remainder distributed by largest fractional part (ties go to later splits).
pub fn split(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("split ratios must be nonnegative and sum to 1".into()));
    }
    let mut out = manifest.clone();
    out.split_ratios = Some(ratios);
    out.rng_seed = Some(seed);
    for class in &manifest.classes {
        let mut idxs: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.label == class)
            .map(|(i, _)| i)
            .collect();
        let n = idxs.len();
        let counts = apportion(n, &ratios);
        if SPLIT_NAMES.iter().zip(&counts).any(|(_, &c)| c == 0 && n > 0)
            && ratios.iter().all(|&r| r > 0.0)
            && counts.iter().any(|&c| c == 0)
        {
            return Err(Error::InsufficientData(format!(
                "class '{class}' has {n} samples, too few for the requested split"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(class));
        idxs.shuffle(&mut rng);
        let mut cursor = 0usize;
        for (s, &count) in SPLIT_NAMES.iter().zip(&counts) {
            for &i in &idxs[cursor..cursor + count] {
                out.entries[i].split = Some((*s).to_string());
            }
            cursor += count;
        }
    }
    Ok(out)
}

/// Floor each share, then hand out the remainder by descending fractional
/// part, breaking ties toward the later split.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
    });
    for &i in &order {
        if rem == 0 {
            break;
        }
        counts[i] += 1;
        rem -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// FNV-1a, used to derive stable per-key RNG streams.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-class stratified subsample. Nested under a fixed seed: the selection
/// for a smaller fraction is a prefix of the selection for a larger one.
pub fn subsample(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput("fraction must be in (0, 1]".into()));
    }
    let mut keep = vec![false; manifest.entries.len()];
    for class in &manifest.classes {
        for split in [None, Some("train"), Some("val"), Some("test")] {
            let mut idxs: Vec<usize> = manifest
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| &e.label == class && e.split.as_deref() == split)
                .map(|(i, _)| i)
                .collect();
            if idxs.is_empty() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ stable_hash(class) ^ stable_hash(split.unwrap_or("")),
            );
            idxs.shuffle(&mut rng);
            let take = ((fraction * idxs.len() as f64).round() as usize).max(1);
            for &i in idxs.iter().take(take) {
                keep[i] = true;
            }
        }
    }
    let mut out = manifest.clone();
    out.entries =
        manifest.entries.iter().enumerate().filter(|(i, _)| keep[*i]).map(|(_, e)| e.clone()).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Pixel,
    Dct,
}

impl FeatureKind {
    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::Pixel => 0,
            FeatureKind::Dct => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(FeatureKind::Pixel),
            1 => Ok(FeatureKind::Dct),
            _ => Err(Error::InvalidInput(format!("unknown feature-kind tag {tag}"))),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(FeatureKind::Pixel),
            "dct" => Ok(FeatureKind::Dct),
            other => Err(Error::ConfigError(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// In-memory feature set: one row per sample plus integer labels.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub n1: usize,
    pub n2: usize,
    pub kind: FeatureKind,
}

const CACHE_MAGIC: &[u8; 4] = b"FQL1";

/// Binary feature cache: magic "FQL1", u32 count, u32 N1, u32 N2,
/// u8 kind tag, count*N1*N2 little-endian f64 row-major, count u8 labels.
pub fn write_feature_cache(set: &FeatureSet, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.write_u32::<LittleEndian>(set.labels.len() as u32)?;
    buf.write_u32::<LittleEndian>(set.n1 as u32)?;
    buf.write_u32::<LittleEndian>(set.n2 as u32)?;
    buf.write_u8(set.kind.tag())?;
    for v in set.features.iter() {
        buf.write_f64::<LittleEndian>(*v)?;
    }
    for l in &set.labels {
        buf.write_u8(*l)?;
    }
    atomic_write(path, &buf)
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureSet> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::InvalidInput("bad feature-cache magic".into()));
    }
    let count = file.read_u32::<LittleEndian>()? as usize;
    let n1 = file.read_u32::<LittleEndian>()? as usize;
    let n2 = file.read_u32::<LittleEndian>()? as usize;
    let kind = FeatureKind::from_tag(file.read_u8()?)?;
    let d = n1 * n2;
    let mut values = vec![0f64; count * d];
    for v in values.iter_mut() {
        *v = file.read_f64::<LittleEndian>()?;
    }
    let mut labels = vec![0u8; count];
    file.read_exact(&mut labels)?;
    Ok(FeatureSet {
        features: Array2::from_shape_vec((count, d), values).unwrap(),
        labels,
        n1,
        n2,
        kind,
    })
}

/// Extract features for every manifest entry in a split (or all entries when
/// `split_name` is None), in manifest order.
pub fn extract_features(
    manifest: &DatasetManifest,
    split_name: Option<&str>,
    kind: FeatureKind,
    stats: Option<&FeatureStats>,
) -> Result<FeatureSet> {
    let root = Path::new(&manifest.root);
    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| split_name.is_none() || e.split.as_deref() == split_name)
        .collect();
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    let mut dims = None;
    for e in &entries {
        let img = RasterImage::load(&root.join(&e.path))?;
        let gray = to_gray(&img);
        let row = match kind {
            FeatureKind::Pixel => transform::gray_pixel_features(&gray),
            FeatureKind::Dct => {
                let stats = stats.ok_or_else(|| {
                    Error::ConfigError("dct features require fitted stats".into())
                })?;
                transform::dct_features(&gray, stats)?
            }
        };
        let d = (gray.height(), gray.width());
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::ShapeError(format!("image {} has shape {d:?}, expected {prev:?}", e.path)))
            }
            _ => {}
        }
        rows.push(row);
        labels.push(manifest.label_index(&e.label).unwrap_or(0) as u8);
    }
    let (n1, n2) = dims.unwrap_or((0, 0));
    let d = n1 * n2;
    let mut features = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        features.row_mut(i).assign(r);
    }
    Ok(FeatureSet { features, labels, n1, n2, kind })
}

/// Fit log-DCT standardization stats on the train split of a manifest.
pub fn fit_stats_on_train(manifest: &DatasetManifest) -> Result<FeatureStats> {
    let root = Path::new(&manifest.root);
    let mut specs = Vec::new();
    for e in manifest.entries_in_split("train") {
        let gray = to_gray(&RasterImage::load(&root.join(&e.path))?);
        specs.push(transform::log_scale(&transform::dct2(&gray)?, transform::LOG_EPS)?);
    }
    transform::fit_feature_stats(&specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use tempfile::tempdir;

    fn write_png(dir: &Path, name: &str, seed: u8) {
        let img = RasterImage::new(Array3::from_shape_fn((8, 8, 1), |(i, j, _)| {
            (i as u8).wrapping_mul(31).wrapping_add(j as u8).wrapping_add(seed)
        }));
        img.save_png(&dir.join(name)).unwrap();
    }

    #[test]
    fn to_gray_laws() {
        let white = RasterImage::new(Array3::from_elem((2, 2, 3), 255u8));
        assert!((to_gray(&white).pixels[[0, 0]] - 255.0).abs() < 1e-9);
        let mut red = Array3::zeros((1, 1, 3));
        red[[0, 0, 0]] = 255u8;
        assert!((to_gray(&RasterImage::new(red)).pixels[[0, 0]] - 76.245).abs() < 1e-9);
        let gray = RasterImage::from_gray_u8(1, 1, &[99]);
        assert_eq!(to_gray(&gray).pixels[[0, 0]], 99.0);
        assert!((GRAY_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ingest_counts_and_determinism() {
        let dir = tempdir().unwrap();
        write_png(dir.path(), "a.png", 0);
        write_png(dir.path(), "b.png", 1);
        write_png(dir.path(), "c.png", 2);
        let m1 = ingest(dir.path()).unwrap();
        assert_eq!(m1.entries.len(), 3);
        let m2 = ingest(dir.path()).unwrap();
        assert_eq!(serde_json::to_string(&m1).unwrap(), serde_json::to_string(&m2).unwrap());
    }

    #[test]
    fn ingest_skips_corrupt() {
        let dir = tempdir().unwrap();
        write_png(dir.path(), "good.png", 0);
        fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        let m = ingest(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.skipped, 1);
    }

    #[test]
    fn ingest_empty_dir_fails() {
        let dir = tempdir().unwrap();
        assert!(matches!(ingest(dir.path()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn split_all_train() {
        let dir = tempdir().unwrap();
        for i in 0..4 {
            write_png(dir.path(), &format!("{i}.png"), i);
        }
        let m = split(&ingest(dir.path()).unwrap(), [1.0, 0.0, 0.0], 1).unwrap();
        assert!(m.entries.iter().all(|e| e.split.as_deref() == Some("train")));
    }

    #[test]
    fn split_deterministic() {
        let dir = tempdir().unwrap();
        for i in 0..10 {
            write_png(dir.path(), &format!("{i}.png"), i);
        }
        let base = ingest(dir.path()).unwrap();
        let a = split(&base, [0.6, 0.2, 0.2], 5).unwrap();
        let b = split(&base, [0.6, 0.2, 0.2], 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apportion_paper_ratio() {
        assert_eq!(apportion(1000, &[0.625, 0.0625, 0.3125]), [625, 62, 313]);
        assert_eq!(apportion(10, &[0.7, 0.1, 0.2]), [7, 1, 2]);
    }

    #[test]
    fn subsample_fraction_laws() {
        let dir = tempdir().unwrap();
        for i in 0..20 {
            write_png(dir.path(), &format!("{i:02}.png"), i);
        }
        let m = ingest(dir.path()).unwrap();
        let all = subsample(&m, 1.0, 3).unwrap();
        assert_eq!(all.entries.len(), 20);
        let fifth = subsample(&m, 0.2, 3).unwrap();
        assert_eq!(fifth.entries.len(), 4);
        // Nesting: smaller fraction is a subset of larger under the same seed.
        let two5 = subsample(&m, 0.4, 3).unwrap();
        for e in &fifth.entries {
            assert!(two5.entries.contains(e));
        }
    }

    #[test]
    fn cache_round_trip_and_idempotence() {
        let dir = tempdir().unwrap();
        let set = FeatureSet {
            features: Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 10.0 + j as f64 / 3.0),
            labels: vec![0, 1, 1],
            n1: 2,
            n2: 2,
            kind: FeatureKind::Dct,
        };
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        write_feature_cache(&set, &p1).unwrap();
        write_feature_cache(&set, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let back = read_feature_cache(&p1).unwrap();
        assert_eq!(back.features, set.features);
        assert_eq!(back.labels, set.labels);
        assert_eq!(back.kind, FeatureKind::Dct);
    }

    #[test]
    fn cache_empty_split() {
        let dir = tempdir().unwrap();
        let set = FeatureSet {
            features: Array2::zeros((0, 4)),
            labels: vec![],
            n1: 2,
            n2: 2,
            kind: FeatureKind::Pixel,
        };
        let p = dir.path().join("empty.bin");
        write_feature_cache(&set, &p).unwrap();
        let back = read_feature_cache(&p).unwrap();
        assert_eq!(back.labels.len(), 0);
        assert_eq!((back.n1, back.n2), (2, 2));
    }
}
