//! Command-line front end: thin wrappers over the library plus the named
//! experiment recipes. Exit codes: 0 success, 1 runtime error, 2 usage error
//! (the parser handles usage errors itself).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use freqlab::classifier::{
    evaluate_predictions, load_model, make_classifier, save_model, ClassifierOptions,
};
use freqlab::classifier::logistic::{grid_search_lambda, RegKind};
use freqlab::classifier::knn::{knn_grid_search, knn_k_grid};
use freqlab::corpus::generate_corpus;
use freqlab::dataset::{
    extract_features, fit_stats_on_train, ingest, read_feature_cache, split, write_feature_cache,
    DatasetManifest, FeatureKind, RasterImage,
};
use freqlab::error::{Error, Result};
use freqlab::perturb::{perturb_dataset, PerturbConfig, PerturbKind};
use freqlab::recipes::{run_recipe, RecipeConfig, RECIPE_NAMES};
use freqlab::resample::{synth_fake_raster, upsampler_by_name};
use freqlab::spectrum::{
    mean_spectrum, read_matrix_csv, render_heatmap, weight_heatmap, write_matrix_csv, AvgOrder,
    HeatmapSpec,
};

#[derive(Parser)]
#[command(name = "freqlab", version, about = "Frequency-domain image analysis and classification")]
struct Cli {
    /// RNG seed; falls back to FREQLAB_SEED, then 17
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count; 1 forces a fully serial run
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic grayscale photo corpus
    Gen {
        /// Output directory for PNG files
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Square edge length in pixels
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Scan a labeled image directory into a manifest
    Ingest {
        /// Directory with one subdirectory per class
        dir: PathBuf,
        /// Manifest JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign stratified train/val/test splits to a manifest
    Split {
        manifest: PathBuf,
        /// Comma-separated train,val,test ratios
        #[arg(long, default_value = "0.7,0.1,0.2")]
        ratios: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a feature cache from a manifest split
    Transform {
        manifest: PathBuf,
        /// Feature kind: dct or pixel
        #[arg(long, default_value = "dct")]
        features: FeatureKind,
        /// Split to extract; omit for all entries
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean log-spectrum of an image directory, as CSV and PNG
    Stats {
        dir: PathBuf,
        /// Output stem; writes <out>.csv and <out>.png
        #[arg(long)]
        out: PathBuf,
        /// Averaging order: log-after-mean or mean-after-log
        #[arg(long, default_value = "log-after-mean")]
        order: String,
    },
    /// Render a matrix CSV as a heatmap PNG
    Heatmap {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clip absolute values above this before normalizing
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long, default_value = "viridis")]
        colormap: String,
        /// Square output size in pixels (nearest-neighbor scaled)
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Apply the synthetic upsampling-artifact pipeline to a directory
    Synth {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Upsampler: nn, bilinear, or binomial
        #[arg(long, default_value = "nn")]
        upsampler: String,
        #[arg(long, default_value_t = 2)]
        rounds: u32,
    },
    /// Perturb a directory of images
    Perturb {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// blur, crop, compress, noise, or combined
        #[arg(long)]
        kind: PerturbKind,
        /// Per-image application probability
        #[arg(long, default_value_t = 0.5)]
        prob: f64,
    },
    /// Train a classifier from feature caches
    Train {
        /// Training feature cache
        train: PathBuf,
        /// Validation feature cache (hyperparameter selection)
        #[arg(long)]
        val: PathBuf,
        /// ridge, lasso, knn, eigenfaces, or cnn
        #[arg(long)]
        model: String,
        /// Comma-separated lambda grid for ridge/lasso
        #[arg(long)]
        lambda_grid: Option<String>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a feature cache
    Eval {
        model: PathBuf,
        features: PathBuf,
    },
    /// Report validation accuracy across a hyperparameter grid
    Gridsearch {
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// ridge, lasso, or knn
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
    },
    /// Render a saved linear model's weights as a spectrum heatmap
    Weights {
        model: PathBuf,
        /// Output stem; writes <out>.csv and <out>.png
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clip: Option<f64>,
    },
    /// Run a named experiment recipe
    Run {
        /// detect, upsampling, attribute, lowdata, converge, or robustness
        #[arg(value_parser = RECIPE_NAMES)]
        recipe: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        knobs: RecipeKnobs,
    },
}

#[derive(Args)]
struct RecipeKnobs {
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
}

fn default_seed(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| std::env::var("FREQLAB_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(17)
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::ConfigError(e.to_string())))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::ConfigError("expected three comma-separated ratios".into()));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::ConfigError(e.to_string())))
        .collect()
}

fn load_split_pair(
    train: &PathBuf,
    val: &PathBuf,
) -> Result<(Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>, usize, usize)> {
    let t = read_feature_cache(train)?;
    let v = read_feature_cache(val)?;
    if (t.n1, t.n2, t.kind) != (v.n1, v.n2, v.kind) {
        return Err(Error::ConfigError("train/val caches disagree on shape or kind".into()));
    }
    let ty: Vec<usize> = t.labels.iter().map(|&l| l as usize).collect();
    let vy: Vec<usize> = v.labels.iter().map(|&l| l as usize).collect();
    Ok((t.features, ty, v.features, vy, t.n1, t.n2))
}

fn image_dir_to_rasters(dir: &PathBuf) -> Result<Vec<(String, RasterImage)>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no files in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, RasterImage::load(&p)?))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let seed = default_seed(cli.seed);
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::ConfigError(e.to_string()))?;
    }
    match cli.command {
        Cmd::Gen { out, count, size } => {
            generate_corpus(&out, count, size, seed)?;
            println!("wrote {count} images to {}", out.display());
        }
        Cmd::Ingest { dir, out } => {
            let manifest = ingest(&dir)?;
            manifest.save(&out)?;
            println!("{} entries, {} classes", manifest.entries.len(), manifest.classes.len());
        }
        Cmd::Split { manifest, ratios, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let ratios = parse_ratios(&ratios)?;
            let split_m = split(&m, ratios, seed)?;
            split_m.save(&out)?;
            for name in ["train", "val", "test"] {
                println!("{name}: {}", split_m.entries_in_split(name).len());
            }
        }
        Cmd::Transform { manifest, features, split, out } => {
            let mut m = DatasetManifest::load(&manifest)?;
            if m.entries.is_empty() {
                return Err(Error::InsufficientData("manifest has no entries".into()));
            }
            let stats = if features == FeatureKind::Dct {
                if m.entries_in_split("train").is_empty() {
                    // unsplit manifest: fit stats on everything
                    for e in &mut m.entries {
                        e.split = Some("train".into());
                    }
                }
                Some(fit_stats_on_train(&m)?)
            } else {
                None
            };
            let set = extract_features(&m, split.as_deref(), features, stats.as_ref())?;
            if set.labels.is_empty() {
                return Err(Error::InsufficientData("no entries matched the split".into()));
            }
            write_feature_cache(&set, &out)?;
            println!("{} samples, {}x{} {:?}", set.labels.len(), set.n1, set.n2, set.kind);
        }
        Cmd::Stats { dir, out, order } => {
            let order = match order.as_str() {
                "log-after-mean" => AvgOrder::LogAfterMean,
                "mean-after-log" => AvgOrder::MeanAfterLog,
                other => return Err(Error::ConfigError(format!("unknown order '{other}'"))),
            };
            let images: Vec<_> = image_dir_to_rasters(&dir)?
                .into_iter()
                .map(|(_, img)| freqlab::dataset::to_gray(&img))
                .collect();
            let mean = mean_spectrum(&images, order)?;
            write_matrix_csv(&mean.values, &out.with_extension("csv"))?;
            render_heatmap(&mean.values, &HeatmapSpec::default(), &out.with_extension("png"))?;
            println!("{} images averaged", mean.sample_count);
        }
        Cmd::Heatmap { input, out, clip, colormap, scale } => {
            let values = read_matrix_csv(&input)?;
            let spec = HeatmapSpec {
                clip_max: clip,
                colormap,
                output_size: scale,
            };
            render_heatmap(&values, &spec, &out)?;
        }
        Cmd::Synth { dir, out, upsampler, rounds } => {
            let kind = upsampler_by_name(&upsampler)?;
            std::fs::create_dir_all(&out)?;
            let images = image_dir_to_rasters(&dir)?;
            let count = images.len();
            for (name, img) in images {
                let fake = synth_fake_raster(&img, kind, rounds)?;
                fake.save_png(&out.join(name))?;
            }
            println!("resampled {count} images");
        }
        Cmd::Perturb { dir, out, kind, prob } => {
            let config = PerturbConfig::new(kind, prob, seed)?;
            let manifest = perturb_dataset(&dir, &out, &config)?;
            println!("perturbed {} files", manifest.records.len());
        }
        Cmd::Train { train, val, model, lambda_grid, epochs, out } => {
            let (tx, ty, vx, vy, n1, n2) = load_split_pair(&train, &val)?;
            let mut opts = ClassifierOptions::default();
            opts.train.rng_seed = seed;
            opts.train.max_epochs = epochs;
            opts.input_shape = Some((n1, n2));
            if let Some(grid) = lambda_grid {
                opts.lambda_grid = parse_grid(&grid)?;
            }
            let mut c = make_classifier(&model, &opts)?;
            let chosen = c.fit(tx.view(), &ty, vx.view(), &vy)?;
            save_model(&out, c.as_ref(), serde_json::json!({ "chosen": chosen.clone() }))?;
            println!("{}", serde_json::to_string_pretty(&chosen)?);
        }
        Cmd::Eval { model, features } => {
            let loaded = load_model(&model)?;
            let set = read_feature_cache(&features)?;
            let y: Vec<usize> = set.labels.iter().map(|&l| l as usize).collect();
            let pred = loaded.classifier.predict(set.features.view())?;
            let n_classes = y.iter().chain(pred.iter()).max().map(|m| m + 1).unwrap_or(2);
            let metrics = evaluate_predictions(&pred, &y, n_classes)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Cmd::Gridsearch { train, val, model, epochs } => {
            let (tx, ty, vx, vy, _, _) = load_split_pair(&train, &val)?;
            let n_classes = ty.iter().chain(&vy).max().map(|m| m + 1).unwrap_or(2).max(2);
            let mut opts = ClassifierOptions::default();
            opts.train.rng_seed = seed;
            opts.train.max_epochs = epochs;
            let report = match model.as_str() {
                "ridge" | "lasso" => {
                    let reg = if model == "ridge" { RegKind::L2 } else { RegKind::L1 };
                    let (lambda, _) = grid_search_lambda(
                        tx.view(), &ty, n_classes, reg, &opts.lambda_grid, &opts.train,
                        vx.view(), &vy,
                    )?;
                    serde_json::json!({ "model": model, "grid": opts.lambda_grid, "chosen_lambda": lambda })
                }
                "knn" => {
                    let grid = knn_k_grid(ty.len());
                    let k = knn_grid_search(tx.view(), &ty, vx.view(), &vy, &grid)?;
                    serde_json::json!({ "model": "knn", "grid": grid, "chosen_k": k })
                }
                other => {
                    return Err(Error::ConfigError(format!(
                        "gridsearch supports ridge, lasso, knn; got '{other}'"
                    )))
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Weights { model, out, clip } => {
            let loaded = load_model(&model)?;
            let (_, params, meta) = loaded.classifier.export()?;
            let d = meta["d"].as_u64().ok_or_else(|| {
                Error::ConfigError("model has no dense weight matrix to render".into())
            })? as usize;
            let k = meta["k"].as_u64().unwrap_or(1) as usize;
            let side = (d as f64).sqrt() as usize;
            if side * side != d {
                return Err(Error::ConfigError(format!("weight dim {d} is not square")));
            }
            let weights = Array2::from_shape_vec((d, k), params[..d * k].to_vec())
                .map_err(|e| Error::ShapeError(e.to_string()))?;
            let heat = weight_heatmap(&weights, side, side)?;
            write_matrix_csv(&heat, &out.with_extension("csv"))?;
            let spec = HeatmapSpec { clip_max: clip, ..HeatmapSpec::default() };
            render_heatmap(&heat, &spec, &out.with_extension("png"))?;
        }
        Cmd::Run { recipe, out, knobs } => {
            let cfg = RecipeConfig {
                seed,
                per_class: knobs.per_class,
                image_size: knobs.size,
                max_epochs: knobs.epochs,
                batch_size: knobs.batch,
                ..RecipeConfig::default()
            };
            let report = run_recipe(&recipe, &cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
