//! Classifier strategies behind a common trait, registered by name and
//! selected at runtime: ridge- and LASSO-logistic, kNN, Eigenfaces+SVM, and
//! the shallow CNN.

pub mod adam;
pub mod eigenfaces;
pub mod knn;
pub mod logistic;
pub mod pca;
pub mod svm;

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2};
use serde_json::json;

use crate::dataset::atomic_write;
use crate::error::{Error, Result};
pub use adam::{AdamConfig, TrainConfig};
pub use logistic::{LinearModel, RegKind, LAMBDA_GRID};

/// Fraction of correct predictions.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Confusion-matrix metrics; row = true class, column = predicted class.
pub fn evaluate_predictions(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeError("prediction/label length mismatch".into()));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::InvalidInput("label out of range".into()));
        }
        confusion[t][p] += 1;
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[t] as f64 / total as f64
            }
        })
        .collect();
    Ok(Metrics { accuracy: accuracy(pred, truth), per_class_accuracy, confusion })
}

/// A trainable classification strategy. `fit` returns the chosen
/// hyperparameters as JSON for provenance.
pub trait Classifier: Send {
    fn name(&self) -> &'static str;
    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        x_val: ArrayView2<f64>,
        y_val: &[usize],
    ) -> Result<serde_json::Value>;
    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>>;
    /// Flat parameter vector and reconstruction metadata for persistence.
    fn export(&self) -> Result<(u8, Vec<f64>, serde_json::Value)>;
}

pub const CLASSIFIER_NAMES: [&str; 5] = ["ridge", "lasso", "knn", "eigenfaces", "cnn"];

/// Knobs consumed by the registry factories.
#[derive(Debug, Clone)]
pub struct ClassifierOptions {
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub variance_grid: Vec<f64>,
    pub knn_grid: Option<Vec<usize>>,
    /// Spatial shape of one sample, required by the CNN.
    pub input_shape: Option<(usize, usize)>,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        ClassifierOptions {
            train: TrainConfig::default(),
            lambda_grid: LAMBDA_GRID.to_vec(),
            c_grid: svm::C_GRID.to_vec(),
            variance_grid: eigenfaces::VARIANCE_GRID.to_vec(),
            knn_grid: None,
            input_shape: None,
        }
    }
}

/// Instantiate a registered classifier by name.
pub fn make_classifier(name: &str, opts: &ClassifierOptions) -> Result<Box<dyn Classifier>> {
    match name {
        "ridge" => Ok(Box::new(LogisticClassifier::new(RegKind::L2, opts.clone()))),
        "lasso" => Ok(Box::new(LogisticClassifier::new(RegKind::L1, opts.clone()))),
        "knn" => Ok(Box::new(KnnClassifier::new(opts.clone()))),
        "eigenfaces" => Ok(Box::new(EigenfacesClassifier::new(opts.clone()))),
        "cnn" => Ok(Box::new(crate::cnn::CnnClassifier::new(opts.clone()))),
        other => Err(Error::ConfigError(format!(
            "unknown classifier '{other}' (expected one of {CLASSIFIER_NAMES:?})"
        ))),
    }
}

fn infer_classes(y: &[usize], y_val: &[usize]) -> usize {
    y.iter().chain(y_val).max().map(|m| m + 1).unwrap_or(0).max(2)
}

pub struct LogisticClassifier {
    reg: RegKind,
    opts: ClassifierOptions,
    pub model: Option<LinearModel>,
    n_classes: usize,
}

impl LogisticClassifier {
    pub fn new(reg: RegKind, opts: ClassifierOptions) -> Self {
        LogisticClassifier { reg, opts, model: None, n_classes: 0 }
    }
}

impl Classifier for LogisticClassifier {
    fn name(&self) -> &'static str {
        match self.reg {
            RegKind::L2 => "ridge",
            RegKind::L1 => "lasso",
        }
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        x_val: ArrayView2<f64>,
        y_val: &[usize],
    ) -> Result<serde_json::Value> {
        self.n_classes = infer_classes(y, y_val);
        let (lambda, model) = logistic::grid_search_lambda(
            x,
            y,
            self.n_classes,
            self.reg,
            &self.opts.lambda_grid,
            &self.opts.train,
            x_val,
            y_val,
        )?;
        self.model = Some(model);
        Ok(json!({ "lambda": lambda, "reg": self.name(), "seed": self.opts.train.rng_seed }))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        Ok(model.predict(x))
    }

    fn export(&self) -> Result<(u8, Vec<f64>, serde_json::Value)> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        let mut params: Vec<f64> = model.weights.iter().copied().collect();
        params.extend(model.bias.iter());
        let kind = if self.reg == RegKind::L2 { 0u8 } else { 1u8 };
        Ok((
            kind,
            params,
            json!({
                "d": model.weights.nrows(),
                "k": model.weights.ncols(),
                "lambda": model.reg_lambda,
                "seed": self.opts.train.rng_seed,
            }),
        ))
    }
}

pub struct KnnClassifier {
    opts: ClassifierOptions,
    train_x: Option<Array2<f64>>,
    train_y: Vec<usize>,
    pub chosen_k: usize,
}

impl KnnClassifier {
    pub fn new(opts: ClassifierOptions) -> Self {
        KnnClassifier { opts, train_x: None, train_y: vec![], chosen_k: 1 }
    }
}

impl Classifier for KnnClassifier {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        x_val: ArrayView2<f64>,
        y_val: &[usize],
    ) -> Result<serde_json::Value> {
        let grid = match &self.opts.knn_grid {
            Some(g) => g.clone(),
            None => knn::knn_k_grid(x.nrows()),
        };
        self.chosen_k = knn::knn_grid_search(x, y, x_val, y_val, &grid)?;
        self.train_x = Some(x.to_owned());
        self.train_y = y.to_vec();
        Ok(json!({ "k": self.chosen_k }))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let train = self.train_x.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        knn::knn_classify(train.view(), &self.train_y, x, self.chosen_k)
    }

    fn export(&self) -> Result<(u8, Vec<f64>, serde_json::Value)> {
        let train = self.train_x.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        let mut params: Vec<f64> = train.iter().copied().collect();
        params.extend(self.train_y.iter().map(|&l| l as f64));
        Ok((
            2u8,
            params,
            json!({ "n": train.nrows(), "d": train.ncols(), "k": self.chosen_k }),
        ))
    }
}

pub struct EigenfacesClassifier {
    opts: ClassifierOptions,
    pub model: Option<eigenfaces::EigenfacesModel>,
}

impl EigenfacesClassifier {
    pub fn new(opts: ClassifierOptions) -> Self {
        EigenfacesClassifier { opts, model: None }
    }
}

impl Classifier for EigenfacesClassifier {
    fn name(&self) -> &'static str {
        "eigenfaces"
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        x_val: ArrayView2<f64>,
        y_val: &[usize],
    ) -> Result<serde_json::Value> {
        let n_classes = infer_classes(y, y_val);
        let model = eigenfaces::train_eigenfaces(
            x,
            y,
            n_classes,
            &self.opts.variance_grid,
            &self.opts.c_grid,
            &self.opts.train,
            x_val,
            y_val,
        )?;
        let info = json!({
            "variance_threshold": model.chosen_threshold,
            "c": model.chosen_c,
            "components": model.basis.components.ncols(),
        });
        self.model = Some(model);
        Ok(info)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        model.predict(x)
    }

    fn export(&self) -> Result<(u8, Vec<f64>, serde_json::Value)> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        let d = model.basis.mean.len();
        let m = model.basis.components.ncols();
        let k = model.svm.weights.ncols();
        let mut params: Vec<f64> = model.basis.mean.iter().copied().collect();
        params.extend(model.basis.components.iter());
        params.extend(model.svm.weights.iter());
        params.extend(model.svm.bias.iter());
        Ok((
            3u8,
            params,
            json!({
                "d": d,
                "m": m,
                "k": k,
                "variance_threshold": model.chosen_threshold,
                "c": model.chosen_c,
            }),
        ))
    }
}

const MODEL_MAGIC: &[u8; 4] = b"FQLM";

/// Versioned model container: magic "FQLM", u8 model-kind, u32 param count,
/// little-endian f64 parameters, then a JSON metadata trailer.
pub fn save_model(path: &Path, classifier: &dyn Classifier, extra: serde_json::Value) -> Result<()> {
    let (kind, params, mut meta) = classifier.export()?;
    if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            m.insert(k.clone(), v.clone());
        }
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.write_u8(kind)?;
    buf.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in &params {
        buf.write_f64::<LittleEndian>(*p)?;
    }
    buf.extend_from_slice(serde_json::to_string(&meta)?.as_bytes());
    atomic_write(path, &buf)
}

pub struct LoadedModel {
    pub classifier: Box<dyn Classifier>,
    pub metadata: serde_json::Value,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::InvalidInput("bad model magic".into()));
    }
    let kind = file.read_u8()?;
    let count = file.read_u32::<LittleEndian>()? as usize;
    let mut params = vec![0f64; count];
    for p in params.iter_mut() {
        *p = file.read_f64::<LittleEndian>()?;
    }
    let mut trailer = String::new();
    file.read_to_string(&mut trailer)?;
    let meta: serde_json::Value = serde_json::from_str(&trailer)?;
    let geti = |key: &str| -> Result<usize> {
        meta.get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::InvalidInput(format!("model metadata missing '{key}'")))
    };
    let classifier: Box<dyn Classifier> = match kind {
        0 | 1 => {
            let (d, k) = (geti("d")?, geti("k")?);
            let reg = if kind == 0 { RegKind::L2 } else { RegKind::L1 };
            let model = LinearModel {
                weights: Array2::from_shape_vec((d, k), params[..d * k].to_vec())
                    .map_err(|e| Error::ShapeError(e.to_string()))?,
                bias: Array1::from_vec(params[d * k..].to_vec()),
                reg_kind: reg,
                reg_lambda: meta.get("lambda").and_then(|v| v.as_f64()).unwrap_or(0.0),
            };
            let mut c = LogisticClassifier::new(reg, ClassifierOptions::default());
            c.model = Some(model);
            Box::new(c)
        }
        2 => {
            let (n, d, k) = (geti("n")?, geti("d")?, geti("k")?);
            let mut c = KnnClassifier::new(ClassifierOptions::default());
            c.train_x = Some(
                Array2::from_shape_vec((n, d), params[..n * d].to_vec())
                    .map_err(|e| Error::ShapeError(e.to_string()))?,
            );
            c.train_y = params[n * d..].iter().map(|&v| v as usize).collect();
            c.chosen_k = k;
            Box::new(c)
        }
        3 => {
            let (d, m, k) = (geti("d")?, geti("m")?, geti("k")?);
            let mut off = 0usize;
            let mean = Array1::from_vec(params[off..off + d].to_vec());
            off += d;
            let components = Array2::from_shape_vec((d, m), params[off..off + d * m].to_vec())
                .map_err(|e| Error::ShapeError(e.to_string()))?;
            off += d * m;
            let weights = Array2::from_shape_vec((m, k), params[off..off + m * k].to_vec())
                .map_err(|e| Error::ShapeError(e.to_string()))?;
            off += m * k;
            let bias = Array1::from_vec(params[off..].to_vec());
            let model = eigenfaces::EigenfacesModel {
                basis: pca::PcaBasis {
                    components,
                    mean,
                    explained: vec![],
                    variance_threshold: meta
                        .get("variance_threshold")
                        .and_then(|v| v.as_f64())
                        .unwrap_or(1.0),
                },
                svm: LinearModel {
                    weights,
                    bias,
                    reg_kind: RegKind::L2,
                    reg_lambda: 0.0,
                },
                chosen_threshold: meta.get("variance_threshold").and_then(|v| v.as_f64()).unwrap_or(1.0),
                chosen_c: meta.get("c").and_then(|v| v.as_f64()).unwrap_or(0.0),
            };
            let mut c = EigenfacesClassifier::new(ClassifierOptions::default());
            c.model = Some(model);
            Box::new(c)
        }
        4 => Box::new(crate::cnn::CnnClassifier::from_params(params, &meta)?),
        other => return Err(Error::InvalidInput(format!("unknown model kind {other}"))),
    };
    Ok(LoadedModel { classifier, metadata: meta })
}
