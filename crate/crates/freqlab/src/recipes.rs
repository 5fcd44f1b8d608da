//! Named end-to-end experiments. Each recipe builds a synthetic corpus,
//! trains the relevant models, and writes a JSON report (plus CSVs and
//! heatmaps) into its output directory. Reports carry full provenance:
//! tool version, seed, and a digest of the generation parameters.
//!
//! Recipes are registered by name and dispatched at runtime through
//! `run_recipe`, like the upsampler and perturbation registries.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use serde_json::json;

use crate::classifier::{
    accuracy, make_classifier, Classifier, ClassifierOptions,
};
use crate::cnn::TrainHistory;
use crate::corpus::{generate_images, gray_to_raster};
use crate::dataset::{atomic_write, sha256_hex, to_gray, RasterImage};
use crate::error::{Error, Result};
use crate::perturb::{perturb_image, PerturbConfig, PerturbKind};
use crate::resample::{grid_energy_ratio, synth_fake, upsampler_by_name};
use crate::spectrum::{render_heatmap, weight_heatmap, write_matrix_csv, HeatmapSpec};
use crate::transform::{
    dct2, fit_feature_stats, gray_pixel_features, log_scale, standardize, FeatureStats,
    GrayImage, Spectrum, LOG_EPS,
};

pub const RECIPE_NAMES: [&str; 6] =
    ["detect", "upsampling", "attribute", "lowdata", "converge", "robustness"];

#[derive(Debug, Clone, Serialize)]
pub struct RecipeConfig {
    pub seed: u64,
    /// Images generated per class.
    pub per_class: usize,
    /// Square edge length of generated images; must be a multiple of 4.
    pub image_size: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            seed: 17,
            per_class: 300,
            image_size: 64,
            max_epochs: 30,
            batch_size: 64,
            early_stop_patience: 10,
        }
    }
}

impl RecipeConfig {
    fn validate(&self) -> Result<()> {
        if self.image_size % 4 != 0 || self.image_size == 0 {
            return Err(Error::ConfigError("image_size must be a positive multiple of 4".into()));
        }
        if self.per_class < 10 {
            return Err(Error::InsufficientData("need at least 10 images per class".into()));
        }
        Ok(())
    }

    fn options(&self) -> ClassifierOptions {
        let mut opts = ClassifierOptions::default();
        opts.train.max_epochs = self.max_epochs;
        opts.train.batch_size = self.batch_size;
        opts.train.early_stop_patience = self.early_stop_patience;
        opts.train.rng_seed = self.seed;
        opts.input_shape = Some((self.image_size, self.image_size));
        opts
    }

    /// Digest of everything that determines the generated inputs.
    fn input_digest(&self) -> String {
        sha256_hex(
            format!("synthetic:{}:{}:{}", self.seed, self.per_class, self.image_size).as_bytes(),
        )
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    tool_version: &'a str,
    recipe: &'a str,
    seed: u64,
    config: &'a RecipeConfig,
    inputs: serde_json::Value,
    results: T,
}

fn write_report<T: Serialize>(
    out_dir: &Path,
    recipe: &str,
    cfg: &RecipeConfig,
    results: T,
) -> Result<serde_json::Value> {
    std::fs::create_dir_all(out_dir)?;
    let report = Report {
        tool_version: crate::VERSION,
        recipe,
        seed: cfg.seed,
        config: cfg,
        inputs: json!({ "generator": "synthetic", "digest": cfg.input_digest() }),
        results,
    };
    let value = serde_json::to_value(&report)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    atomic_write(&out_dir.join(format!("{recipe}_report.json")), &bytes)?;
    Ok(value)
}

fn write_csv(out_dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut body = String::from(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    atomic_write(&out_dir.join(name), body.as_bytes())
}

/// Contiguous 70/10/20 split of per-class index ranges. Generated images are
/// exchangeable, and fakes inherit their natural counterpart's split, so no
/// pair straddles train and test.
fn split_counts(n: usize) -> (usize, usize) {
    let train = n * 7 / 10;
    let val = n / 10;
    (train, train + val)
}

pub struct FeaturePack {
    pub train: Array2<f64>,
    pub val: Array2<f64>,
    pub test: Array2<f64>,
    pub train_y: Vec<usize>,
    pub val_y: Vec<usize>,
    pub test_y: Vec<usize>,
}

/// Assemble standardized log-DCT or pixel feature matrices from per-class
/// image lists. DCT statistics are fit on the training portion only.
pub fn build_features(classes: &[Vec<GrayImage>], dct: bool) -> Result<FeaturePack> {
    let n = classes[0].len();
    if classes.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeError("classes must be the same size".into()));
    }
    let (t_end, v_end) = split_counts(n);
    let stats: Option<FeatureStats> = if dct {
        let mut specs: Vec<Spectrum> = Vec::new();
        for class in classes {
            for img in &class[..t_end] {
                specs.push(log_scale(&dct2(img)?, LOG_EPS)?);
            }
        }
        Some(fit_feature_stats(&specs)?)
    } else {
        None
    };
    let featurize = |img: &GrayImage| -> Result<ndarray::Array1<f64>> {
        match &stats {
            Some(s) => standardize(&log_scale(&dct2(img)?, LOG_EPS)?, s),
            None => Ok(gray_pixel_features(img)),
        }
    };
    let d = classes[0][0].height() * classes[0][0].width();
    let mut pack = FeaturePack {
        train: Array2::zeros((0, d)),
        val: Array2::zeros((0, d)),
        test: Array2::zeros((0, d)),
        train_y: vec![],
        val_y: vec![],
        test_y: vec![],
    };
    let mut rows: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    for (label, class) in classes.iter().enumerate() {
        for (i, img) in class.iter().enumerate() {
            let f = featurize(img)?;
            let part = if i < t_end {
                pack.train_y.push(label);
                0
            } else if i < v_end {
                pack.val_y.push(label);
                1
            } else {
                pack.test_y.push(label);
                2
            };
            rows[part].extend(f.iter());
        }
    }
    pack.train = Array2::from_shape_vec((pack.train_y.len(), d), std::mem::take(&mut rows[0]))
        .map_err(|e| Error::ShapeError(e.to_string()))?;
    pack.val = Array2::from_shape_vec((pack.val_y.len(), d), std::mem::take(&mut rows[1]))
        .map_err(|e| Error::ShapeError(e.to_string()))?;
    pack.test = Array2::from_shape_vec((pack.test_y.len(), d), std::mem::take(&mut rows[2]))
        .map_err(|e| Error::ShapeError(e.to_string()))?;
    Ok(pack)
}

pub fn fakes_of(naturals: &[GrayImage], upsampler: &str, rounds: u32) -> Result<Vec<GrayImage>> {
    let kind = upsampler_by_name(upsampler)?;
    naturals.iter().map(|img| synth_fake(img, kind, rounds)).collect()
}

/// Train a named classifier on one feature pack and return its test accuracy
/// plus the chosen hyperparameters.
pub fn fit_and_test(
    name: &str,
    pack: &FeaturePack,
    opts: &ClassifierOptions,
) -> Result<(f64, serde_json::Value, Box<dyn Classifier>)> {
    let mut model = make_classifier(name, opts)?;
    let chosen = model.fit(pack.train.view(), &pack.train_y, pack.val.view(), &pack.val_y)?;
    let acc = accuracy(&model.predict(pack.test.view())?, &pack.test_y);
    Ok((acc, chosen, model))
}

#[derive(Serialize)]
pub struct DetectResults {
    pub dct_accuracy: f64,
    pub pixel_accuracy: f64,
    pub gain: f64,
    pub dct_hyperparams: serde_json::Value,
    pub pixel_hyperparams: serde_json::Value,
}

/// Binary real-vs-resampled detection with ridge models on both feature
/// kinds, reporting the DCT-over-pixel gain.
pub fn run_detect(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let fakes = fakes_of(&naturals, "nn", 2)?;
    let classes = vec![naturals, fakes];
    let opts = cfg.options();

    std::fs::create_dir_all(out_dir)?;
    let (dct_acc, dct_hp) = {
        let pack = build_features(&classes, true)?;
        let (acc, hp, model) = fit_and_test("ridge", &pack, &opts)?;
        crate::classifier::save_model(
            &out_dir.join("detect_model.fqlm"),
            model.as_ref(),
            json!({ "recipe": "detect", "recipe_seed": cfg.seed }),
        )?;
        (acc, hp)
    };
    let (pix_acc, pix_hp) = {
        let pack = build_features(&classes, false)?;
        let (acc, hp, _) = fit_and_test("ridge", &pack, &opts)?;
        (acc, hp)
    };

    // corpus-level spectral difference for eyeballing the artifact grid
    let real_mean = crate::spectrum::mean_spectrum(&classes[0], crate::spectrum::AvgOrder::LogAfterMean)?;
    let fake_mean = crate::spectrum::mean_spectrum(&classes[1], crate::spectrum::AvgOrder::LogAfterMean)?;
    let diff = crate::spectrum::abs_diff_spectrum(&real_mean, &fake_mean)?;
    write_matrix_csv(&diff, &out_dir.join("detect_spectrum_diff.csv"))?;
    render_heatmap(&diff, &HeatmapSpec::default(), &out_dir.join("detect_spectrum_diff.png"))?;

    let gain = dct_acc - pix_acc;
    write_csv(
        out_dir,
        "detect.csv",
        "features,accuracy,gain",
        &[
            format!("dct,{dct_acc:?},{gain:?}"),
            format!("pixel,{pix_acc:?},0.0"),
        ],
    )?;
    write_report(
        out_dir,
        "detect",
        cfg,
        DetectResults {
            dct_accuracy: dct_acc,
            pixel_accuracy: pix_acc,
            gain,
            dct_hyperparams: dct_hp,
            pixel_hyperparams: pix_hp,
        },
    )
}

#[derive(Serialize)]
pub struct UpsamplingRow {
    pub upsampler: String,
    pub dct_accuracy: f64,
    pub grid_energy_ratio: f64,
}

#[derive(Serialize)]
pub struct UpsamplingResults {
    pub rows: Vec<UpsamplingRow>,
    pub lasso_zero_fraction: f64,
    pub lasso_hyperparams: serde_json::Value,
}

/// Per-upsampler detection accuracy and high-band energy of the fake mean
/// spectrum, plus a LASSO weight heatmap (clipped at 0.04) for the
/// nearest-neighbor task.
pub fn run_upsampling(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let opts = cfg.options();
    let mut rows = Vec::new();
    let mut lasso_info = (0.0, json!(null));
    for name in ["nn", "bilinear", "binomial"] {
        let fakes = fakes_of(&naturals, name, 2)?;
        // mean absolute spectrum of the fakes, band ratio per the grid mask
        let mut abs_sum: Option<Array2<f64>> = None;
        for img in &fakes {
            let a = dct2(img)?.coeffs.mapv(f64::abs);
            match &mut abs_sum {
                None => abs_sum = Some(a),
                Some(s) => *s += &a,
            }
        }
        let mean_abs = abs_sum.expect("nonempty corpus") / fakes.len() as f64;
        let ratio = grid_energy_ratio(&mean_abs);

        let classes = vec![naturals.clone(), fakes];
        let pack = build_features(&classes, true)?;
        let (acc, _, _) = fit_and_test("ridge", &pack, &opts)?;
        rows.push(UpsamplingRow {
            upsampler: name.to_string(),
            dct_accuracy: acc,
            grid_energy_ratio: ratio,
        });

        if name == "nn" {
            let (_, hp, model) = fit_and_test("lasso", &pack, &opts)?;
            let (_, params, meta) = model.export()?;
            let d = meta["d"].as_u64().unwrap() as usize;
            let k = meta["k"].as_u64().unwrap() as usize;
            let weights = Array2::from_shape_vec((d, k), params[..d * k].to_vec())
                .map_err(|e| Error::ShapeError(e.to_string()))?;
            let zeros = weights.iter().filter(|w| **w == 0.0).count();
            lasso_info = (zeros as f64 / weights.len() as f64, hp);
            let heat = weight_heatmap(&weights, cfg.image_size, cfg.image_size)?;
            write_matrix_csv(&heat, &out_dir.join("lasso_weights.csv"))?;
            let spec = HeatmapSpec { clip_max: Some(0.04), ..HeatmapSpec::default() };
            render_heatmap(&heat, &spec, &out_dir.join("lasso_weights.png"))?;
        }
    }
    write_csv(
        out_dir,
        "upsampling.csv",
        "upsampler,dct_accuracy,grid_energy_ratio",
        &rows
            .iter()
            .map(|r| format!("{},{:?},{:?}", r.upsampler, r.dct_accuracy, r.grid_energy_ratio))
            .collect::<Vec<_>>(),
    )?;
    write_report(
        out_dir,
        "upsampling",
        cfg,
        UpsamplingResults {
            rows,
            lasso_zero_fraction: lasso_info.0,
            lasso_hyperparams: lasso_info.1,
        },
    )
}

/// The five-way source corpus: real plus three resamplers plus JPEG q30.
pub fn attribution_classes(cfg: &RecipeConfig) -> Result<(Vec<Vec<GrayImage>>, Vec<String>)> {
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let mut classes = vec![naturals.clone()];
    for name in ["nn", "bilinear", "binomial"] {
        classes.push(fakes_of(&naturals, name, 2)?);
    }
    let jpeg: Result<Vec<GrayImage>> = naturals
        .iter()
        .map(|img| Ok(to_gray(&crate::perturb::jpeg_round_trip(&gray_to_raster(img), 30)?)))
        .collect();
    classes.push(jpeg?);
    let names = ["real", "nn", "bilinear", "binomial", "jpeg30"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok((classes, names))
}

#[derive(Serialize)]
pub struct AttributeRow {
    pub model: String,
    pub dct_accuracy: f64,
    pub pixel_accuracy: Option<f64>,
    pub gain: Option<f64>,
}

/// Five-class source identification: CNN on DCT features, kNN and
/// Eigenfaces on both feature kinds.
pub fn run_attribute(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (classes, class_names) = attribution_classes(cfg)?;
    let opts = cfg.options();
    let dct_pack = build_features(&classes, true)?;
    let pix_pack = build_features(&classes, false)?;

    let mut rows = Vec::new();
    let mut cnn = make_classifier("cnn", &opts)?;
    cnn.fit(dct_pack.train.view(), &dct_pack.train_y, dct_pack.val.view(), &dct_pack.val_y)?;
    let cnn_acc = accuracy(&cnn.predict(dct_pack.test.view())?, &dct_pack.test_y);
    rows.push(AttributeRow {
        model: "cnn".into(),
        dct_accuracy: cnn_acc,
        pixel_accuracy: None,
        gain: None,
    });
    for name in ["knn", "eigenfaces"] {
        let (dct_acc, _, _) = fit_and_test(name, &dct_pack, &opts)?;
        let (pix_acc, _, _) = fit_and_test(name, &pix_pack, &opts)?;
        rows.push(AttributeRow {
            model: name.into(),
            dct_accuracy: dct_acc,
            pixel_accuracy: Some(pix_acc),
            gain: Some(dct_acc - pix_acc),
        });
    }
    write_csv(
        out_dir,
        "attribute.csv",
        "model,dct_accuracy,pixel_accuracy,gain",
        &rows
            .iter()
            .map(|r| {
                format!(
                    "{},{:?},{},{}",
                    r.model,
                    r.dct_accuracy,
                    r.pixel_accuracy.map(|v| format!("{v:?}")).unwrap_or_default(),
                    r.gain.map(|v| format!("{v:?}")).unwrap_or_default()
                )
            })
            .collect::<Vec<_>>(),
    )?;
    write_report(
        out_dir,
        "attribute",
        cfg,
        json!({ "classes": class_names, "rows": rows }),
    )
}

fn take_fraction(pack: &FeaturePack, fraction: f64) -> FeaturePack {
    // stratified prefix subsample of the training rows (training rows are
    // class-contiguous, so a flat prefix would drop whole classes);
    // val/test stay fixed
    let n_classes = pack.train_y.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut keep_idx: Vec<usize> = Vec::new();
    for label in 0..n_classes {
        let idx: Vec<usize> = (0..pack.train_y.len())
            .filter(|&i| pack.train_y[i] == label)
            .collect();
        let keep = ((idx.len() as f64 * fraction).round() as usize).max(1);
        keep_idx.extend_from_slice(&idx[..keep]);
    }
    keep_idx.sort_unstable();
    FeaturePack {
        train: pack.train.select(ndarray::Axis(0), &keep_idx),
        val: pack.val.clone(),
        test: pack.test.clone(),
        train_y: keep_idx.iter().map(|&i| pack.train_y[i]).collect(),
        val_y: pack.val_y.clone(),
        test_y: pack.test_y.clone(),
    }
}

#[derive(Serialize)]
pub struct LowdataResults {
    pub dct_full: f64,
    pub dct_small: f64,
    pub dct_drop: f64,
    pub pixel_full: f64,
    pub pixel_small: f64,
    pub pixel_drop: f64,
    pub fraction: f64,
}

/// Binary detection CNNs retrained on 20% of the training set; reports the
/// accuracy drop for each feature kind under an equal epoch budget.
pub fn run_lowdata(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let classes = vec![naturals.clone(), fakes_of(&naturals, "nn", 2)?];
    let opts = cfg.options();
    let fraction = 0.2;
    let acc = |pack: &FeaturePack| -> Result<f64> {
        let mut cnn = make_classifier("cnn", &opts)?;
        cnn.fit(pack.train.view(), &pack.train_y, pack.val.view(), &pack.val_y)?;
        Ok(accuracy(&cnn.predict(pack.test.view())?, &pack.test_y))
    };
    let dct_pack = build_features(&classes, true)?;
    let dct_full = acc(&dct_pack)?;
    let dct_small = acc(&take_fraction(&dct_pack, fraction))?;
    let pix_pack = build_features(&classes, false)?;
    let pixel_full = acc(&pix_pack)?;
    let pixel_small = acc(&take_fraction(&pix_pack, fraction))?;
    let results = LowdataResults {
        dct_full,
        dct_small,
        dct_drop: dct_full - dct_small,
        pixel_full,
        pixel_small,
        pixel_drop: pixel_full - pixel_small,
        fraction,
    };
    write_csv(
        out_dir,
        "lowdata.csv",
        "features,full,small,drop",
        &[
            format!("dct,{dct_full:?},{dct_small:?},{:?}", results.dct_drop),
            format!("pixel,{pixel_full:?},{pixel_small:?},{:?}", results.pixel_drop),
        ],
    )?;
    write_report(out_dir, "lowdata", cfg, results)
}

#[derive(Serialize)]
pub struct ConvergeRun {
    pub seed: u64,
    pub features: String,
    /// Optimizer steps until validation accuracy first reached 95%; the cap
    /// sentinel (final step + 1) means the run never got there.
    pub steps_to_95: usize,
    pub reached: bool,
    pub final_val_accuracy: f64,
}

fn steps_to_threshold(history: &TrainHistory, threshold: f64) -> (usize, bool) {
    for rec in &history.records {
        if rec.val_accuracy >= threshold {
            return (rec.step, true);
        }
    }
    let cap = history.records.last().map(|r| r.step + 1).unwrap_or(1);
    (cap, false)
}

/// CNN convergence speed: steps to 95% validation accuracy for each feature
/// kind over three seeds, with full history CSVs.
pub fn run_converge(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let classes = vec![naturals.clone(), fakes_of(&naturals, "nn", 2)?];
    let dct_pack = build_features(&classes, true)?;
    let pix_pack = build_features(&classes, false)?;
    let mut runs = Vec::new();
    for offset in 0..3u64 {
        let seed = cfg.seed + offset;
        for (features, pack) in [("dct", &dct_pack), ("pixel", &pix_pack)] {
            let mut opts = cfg.options();
            opts.train.rng_seed = seed;
            // no early stop: histories must share an epoch budget
            opts.train.early_stop_patience = usize::MAX;
            let mut model = crate::cnn::Cnn::new(crate::cnn::CnnConfig {
                input_h: cfg.image_size,
                input_w: cfg.image_size,
                in_channels: 1,
                n_classes: 2,
                seed,
            })?;
            let history = crate::cnn::train_cnn(
                &mut model,
                pack.train.view(),
                &pack.train_y,
                pack.val.view(),
                &pack.val_y,
                &opts.train,
            )?;
            let (steps, reached) = steps_to_threshold(&history, 0.95);
            let rows: Vec<String> = history
                .records
                .iter()
                .map(|r| format!("{},{},{:?},{:?}", r.epoch, r.step, r.train_loss, r.val_accuracy))
                .collect();
            write_csv(
                out_dir,
                &format!("converge_{features}_seed{seed}.csv"),
                "epoch,step,train_loss,val_accuracy",
                &rows,
            )?;
            runs.push(ConvergeRun {
                seed,
                features: features.to_string(),
                steps_to_95: steps,
                reached,
                final_val_accuracy: history.records.last().map(|r| r.val_accuracy).unwrap_or(0.0),
            });
        }
    }
    write_report(out_dir, "converge", cfg, json!({ "threshold": 0.95, "runs": runs }))
}

fn perturb_gray_set(
    images: &[GrayImage],
    kind: PerturbKind,
    seed: u64,
    tag: &str,
) -> Result<Vec<GrayImage>> {
    let config = PerturbConfig::new(kind, 1.0, seed)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let raster: RasterImage = gray_to_raster(img);
            let name = format!("{tag}_{i:05}.png");
            let (out, _) = perturb_image(&raster, &name, &config, i)?;
            Ok(to_gray(&out))
        })
        .collect()
}

#[derive(Serialize)]
pub struct RobustnessRow {
    pub perturbation: String,
    pub dct_clean_trained: f64,
    pub dct_perturbed_trained: f64,
    pub pixel_perturbed_trained: f64,
}

/// Table of clean-data (CD) vs perturbed-data (PD) training regimes, both
/// evaluated on perturbed test data, for each perturbation kind.
pub fn run_robustness(cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let naturals = generate_images(cfg.per_class, cfg.image_size, cfg.seed);
    let clean_classes = vec![naturals.clone(), fakes_of(&naturals, "nn", 2)?];
    let opts = cfg.options();
    let clean_dct = build_features(&clean_classes, true)?;
    let (_, _, cd_model) = fit_and_test("ridge", &clean_dct, &opts)?;

    let kinds = [
        ("blur", PerturbKind::Blur),
        ("crop", PerturbKind::Crop),
        ("compress", PerturbKind::Compress),
        ("noise", PerturbKind::Noise),
        ("combined", PerturbKind::Combined),
    ];
    let mut rows = Vec::new();
    for (name, kind) in kinds {
        let perturbed: Vec<Vec<GrayImage>> = clean_classes
            .iter()
            .enumerate()
            .map(|(ci, class)| {
                perturb_gray_set(class, kind, cfg.seed, &format!("{name}_c{ci}"))
            })
            .collect::<Result<_>>()?;
        let pd_dct = build_features(&perturbed, true)?;
        let pd_pix = build_features(&perturbed, false)?;
        // CD: the clean-trained model scored on the perturbed test features,
        // standardized with the clean training statistics
        let cd_test = restandardize(&clean_classes, &perturbed, &pd_dct)?;
        let cd_acc = accuracy(&cd_model.predict(cd_test.view())?, &pd_dct.test_y);
        let (pd_acc, _, _) = fit_and_test("ridge", &pd_dct, &opts)?;
        let (pd_pix_acc, _, _) = fit_and_test("ridge", &pd_pix, &opts)?;
        rows.push(RobustnessRow {
            perturbation: name.to_string(),
            dct_clean_trained: cd_acc,
            dct_perturbed_trained: pd_acc,
            pixel_perturbed_trained: pd_pix_acc,
        });
    }
    write_csv(
        out_dir,
        "robustness.csv",
        "perturbation,dct_cd,dct_pd,pixel_pd",
        &rows
            .iter()
            .map(|r| {
                format!(
                    "{},{:?},{:?},{:?}",
                    r.perturbation, r.dct_clean_trained, r.dct_perturbed_trained,
                    r.pixel_perturbed_trained
                )
            })
            .collect::<Vec<_>>(),
    )?;
    write_report(out_dir, "robustness", cfg, json!({ "rows": rows }))
}

/// Test features of the perturbed images standardized with statistics fit on
/// the clean training images, matching what a clean-trained model expects.
fn restandardize(
    clean: &[Vec<GrayImage>],
    perturbed: &[Vec<GrayImage>],
    pd_pack: &FeaturePack,
) -> Result<Array2<f64>> {
    let n = clean[0].len();
    let (t_end, v_end) = split_counts(n);
    let mut specs = Vec::new();
    for class in clean {
        for img in &class[..t_end] {
            specs.push(log_scale(&dct2(img)?, LOG_EPS)?);
        }
    }
    let stats = fit_feature_stats(&specs)?;
    let d = pd_pack.test.ncols();
    let mut rows = Vec::new();
    for class in perturbed {
        for img in &class[v_end..] {
            rows.extend(standardize(&log_scale(&dct2(img)?, LOG_EPS)?, &stats)?.iter());
        }
    }
    Array2::from_shape_vec((rows.len() / d, d), rows).map_err(|e| Error::ShapeError(e.to_string()))
}

/// Run a recipe by registered name.
pub fn run_recipe(name: &str, cfg: &RecipeConfig, out_dir: &Path) -> Result<serde_json::Value> {
    match name {
        "detect" => run_detect(cfg, out_dir),
        "upsampling" => run_upsampling(cfg, out_dir),
        "attribute" => run_attribute(cfg, out_dir),
        "lowdata" => run_lowdata(cfg, out_dir),
        "converge" => run_converge(cfg, out_dir),
        "robustness" => run_robustness(cfg, out_dir),
        other => Err(Error::ConfigError(format!(
            "unknown recipe '{other}' (expected one of {RECIPE_NAMES:?})"
        ))),
    }
}

/// Accuracy helper shared by recipe assertions in tests.
pub fn predict_accuracy(model: &dyn Classifier, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    Ok(accuracy(&model.predict(x)?, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_cfg() -> RecipeConfig {
        RecipeConfig {
            per_class: 24,
            image_size: 16,
            max_epochs: 6,
            early_stop_patience: 3,
            ..RecipeConfig::default()
        }
    }

    #[test]
    fn unknown_recipe_rejected() {
        let dir = tempdir().unwrap();
        assert!(run_recipe("tables", &tiny_cfg(), dir.path()).is_err());
    }

    #[test]
    fn detect_recipe_is_deterministic_and_complete() {
        let cfg = tiny_cfg();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let r1 = run_recipe("detect", &cfg, d1.path()).unwrap();
        let r2 = run_recipe("detect", &cfg, d2.path()).unwrap();
        assert_eq!(r1, r2);
        let b1 = std::fs::read(d1.path().join("detect_report.json")).unwrap();
        let b2 = std::fs::read(d2.path().join("detect_report.json")).unwrap();
        assert_eq!(b1, b2, "same seed must give byte-identical reports");
        for f in ["detect.csv", "detect_spectrum_diff.csv", "detect_spectrum_diff.png"] {
            assert!(d1.path().join(f).exists(), "missing {f}");
        }
        assert_eq!(r1["seed"], cfg.seed);
        assert_eq!(r1["tool_version"], crate::VERSION);
        assert!(r1["inputs"]["digest"].as_str().unwrap().len() == 64);
    }

    #[test]
    fn split_counts_partition() {
        for n in [10, 24, 999, 1000] {
            let (t, v) = split_counts(n);
            assert!(0 < t && t < v && v < n);
        }
    }
}
