//! Shallow convolutional classifier trained from scratch with exact
//! backpropagation. Architecture: four 3x3 same-padded convolutions with
//! ReLU (3, 8, 16, 32 output channels), 2x2 average pooling after the
//! second and third, then a dense layer to the class logits.
//!
//! Activations are kept as (positions, channels) matrices so both the
//! convolution (via im2col) and the dense layer reduce to one gemm each.
//! Feature rows handed to `fit`/`predict` use the same layout flattened:
//! index = (y * w + x) * channels + c, matching raster pixel order.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::classifier::adam::{Adam, TrainConfig};
use crate::classifier::{accuracy, Classifier, ClassifierOptions};
use crate::error::{Error, Result};

pub const CONV_CHANNELS: [usize; 4] = [3, 8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub seed: u64,
}

type Range = std::ops::Range<usize>;

/// Offsets of each layer inside the flat parameter vector. Conv weights are
/// stored as (c_in * 9, c_out) row-major so im2col output multiplies them
/// directly.
#[derive(Debug, Clone)]
struct Layout {
    conv_w: [Range; 4],
    conv_b: [Range; 4],
    dense_w: Range,
    dense_b: Range,
    total: usize,
    channels: [usize; 5],
    feat: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig) -> Result<Layout> {
        if cfg.input_h % 4 != 0 || cfg.input_w % 4 != 0 {
            return Err(Error::InvalidInput(
                "input height and width must be multiples of 4".into(),
            ));
        }
        if cfg.in_channels == 0 || cfg.n_classes < 2 {
            return Err(Error::InvalidInput("need channels >= 1, classes >= 2".into()));
        }
        let channels = [
            cfg.in_channels,
            CONV_CHANNELS[0],
            CONV_CHANNELS[1],
            CONV_CHANNELS[2],
            CONV_CHANNELS[3],
        ];
        let feat = (cfg.input_h / 4) * (cfg.input_w / 4) * CONV_CHANNELS[3];
        let mut off = 0usize;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let conv_w = std::array::from_fn(|l| take(channels[l] * 9 * channels[l + 1]));
        let conv_b = std::array::from_fn(|l| take(channels[l + 1]));
        let dense_w = take(feat * cfg.n_classes);
        let dense_b = take(cfg.n_classes);
        Ok(Layout { conv_w, conv_b, dense_w, dense_b, total: off, channels, feat })
    }
}

/// Patch matrix for a 3x3 same-padded convolution: row per output position,
/// column per (input channel, kernel offset). Out-of-bounds taps stay zero.
fn im2col3(input: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let c_in = input.ncols();
    let mut col = Array2::zeros((h * w, c_in * 9));
    for c in 0..c_in {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let k = c * 9 + dy * 3 + dx;
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        col[[y * w + x, k]] = input[[sy as usize * w + sx as usize, c]];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col3`: scatter-add patch gradients back to input positions.
fn col2im3(dcol: ArrayView2<f64>, c_in: usize, h: usize, w: usize) -> Array2<f64> {
    let mut dinput = Array2::zeros((h * w, c_in));
    for c in 0..c_in {
        for dy in 0..3usize {
            for dx in 0..3usize {
                let k = c * 9 + dy * 3 + dx;
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dinput[[sy as usize * w + sx as usize, c]] += dcol[[y * w + x, k]];
                    }
                }
            }
        }
    }
    dinput
}

fn avgpool2(a: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let c = a.ncols();
    let mut out = Array2::zeros((h2 * w2, c));
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let s = a[[(2 * y) * w + 2 * x, ch]]
                    + a[[(2 * y) * w + 2 * x + 1, ch]]
                    + a[[(2 * y + 1) * w + 2 * x, ch]]
                    + a[[(2 * y + 1) * w + 2 * x + 1, ch]];
                out[[y * w2 + x, ch]] = s * 0.25;
            }
        }
    }
    out
}

fn avgpool2_backward(dout: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let c = dout.ncols();
    let mut din = Array2::zeros((h * w, c));
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let g = dout[[y * w2 + x, ch]] * 0.25;
                din[[(2 * y) * w + 2 * x, ch]] = g;
                din[[(2 * y) * w + 2 * x + 1, ch]] = g;
                din[[(2 * y + 1) * w + 2 * x, ch]] = g;
                din[[(2 * y + 1) * w + 2 * x + 1, ch]] = g;
            }
        }
    }
    din
}

struct ConvCache {
    col: Array2<f64>,
    pre: Array2<f64>,
    h: usize,
    w: usize,
}

struct Cache {
    conv: Vec<ConvCache>,
    feat: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Cnn {
    pub cfg: CnnConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.mapv(|v| (v - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

impl Cnn {
    /// Fan-in scaled uniform init for weights, zero biases.
    pub fn new(cfg: CnnConfig) -> Result<Cnn> {
        let layout = Layout::new(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![0.0; layout.total];
        for l in 0..4 {
            let fan_in = layout.channels[l] * 9;
            let bound = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[layout.conv_w[l].clone()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let bound = (1.0 / layout.feat as f64).sqrt();
        for p in &mut params[layout.dense_w.clone()] {
            *p = rng.gen_range(-bound..bound);
        }
        Ok(Cnn { cfg, params, layout })
    }

    pub fn from_parts(cfg: CnnConfig, params: Vec<f64>) -> Result<Cnn> {
        let layout = Layout::new(&cfg)?;
        if params.len() != layout.total {
            return Err(Error::ShapeError(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Cnn { cfg, params, layout })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn conv_weight(&self, l: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.layout.channels[l] * 9, self.layout.channels[l + 1]),
            &self.params[self.layout.conv_w[l].clone()],
        )
        .expect("layout invariant")
    }

    fn sample_matrix(&self, row: ndarray::ArrayView1<f64>) -> Result<Array2<f64>> {
        let (h, w, c) = (self.cfg.input_h, self.cfg.input_w, self.cfg.in_channels);
        if row.len() != h * w * c {
            return Err(Error::ShapeError(format!(
                "sample has {} values, expected {}",
                row.len(),
                h * w * c
            )));
        }
        Ok(Array2::from_shape_vec((h * w, c), row.to_vec()).expect("length checked"))
    }

    fn forward_sample(&self, input: &Array2<f64>) -> (Array1<f64>, Cache) {
        let (mut h, mut w) = (self.cfg.input_h, self.cfg.input_w);
        let mut act = input.clone();
        let mut conv = Vec::with_capacity(4);
        for l in 0..4 {
            let col = im2col3(act.view(), h, w);
            let bias = &self.params[self.layout.conv_b[l].clone()];
            let mut pre = col.dot(&self.conv_weight(l));
            for mut r in pre.rows_mut() {
                for (v, b) in r.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            let post = pre.mapv(|v| v.max(0.0));
            conv.push(ConvCache { col, pre, h, w });
            // pooling follows the second and third convolutions
            if l == 1 || l == 2 {
                act = avgpool2(post.view(), h, w);
                h /= 2;
                w /= 2;
            } else {
                act = post;
            }
        }
        let feat = Array1::from_iter(act.iter().copied());
        let wmat = ArrayView2::from_shape(
            (self.layout.feat, self.cfg.n_classes),
            &self.params[self.layout.dense_w.clone()],
        )
        .expect("layout invariant");
        let bias = &self.params[self.layout.dense_b.clone()];
        let mut logits = feat.dot(&wmat);
        for (v, b) in logits.iter_mut().zip(bias) {
            *v += b;
        }
        (logits, Cache { conv, feat })
    }

    /// Cross-entropy of one sample and its exact parameter gradient,
    /// accumulated into `grad`.
    fn backward_sample(
        &self,
        input: &Array2<f64>,
        label: usize,
        grad: &mut [f64],
    ) -> f64 {
        let (logits, cache) = self.forward_sample(input);
        let prob = softmax(&logits);
        let loss = -(prob[label].max(1e-300)).ln();
        let mut dlogits = prob;
        dlogits[label] -= 1.0;

        // dense layer
        let k = self.cfg.n_classes;
        let dw = &mut grad[self.layout.dense_w.clone()];
        for (i, &f) in cache.feat.iter().enumerate() {
            for (j, &dl) in dlogits.iter().enumerate() {
                dw[i * k + j] += f * dl;
            }
        }
        for (g, &dl) in grad[self.layout.dense_b.clone()].iter_mut().zip(dlogits.iter()) {
            *g += dl;
        }
        let wmat = ArrayView2::from_shape(
            (self.layout.feat, k),
            &self.params[self.layout.dense_w.clone()],
        )
        .expect("layout invariant");
        let dfeat = wmat.dot(&dlogits);
        let c4 = cache.conv[3].pre.ncols();
        let mut dact = Array2::from_shape_vec((self.layout.feat / c4, c4), dfeat.to_vec())
            .expect("feat layout");

        for l in (0..4).rev() {
            let cc = &cache.conv[l];
            if l == 1 || l == 2 {
                dact = avgpool2_backward(dact.view(), cc.h, cc.w);
            }
            // ReLU mask on the pre-activation
            let mut dpre = dact;
            dpre.zip_mut_with(&cc.pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let dw_mat = cc.col.t().dot(&dpre);
            for (g, &d) in grad[self.layout.conv_w[l].clone()].iter_mut().zip(dw_mat.iter()) {
                *g += d;
            }
            for (j, g) in grad[self.layout.conv_b[l].clone()].iter_mut().enumerate() {
                *g += dpre.column(j).sum();
            }
            if l == 0 {
                break;
            }
            let dcol = dpre.dot(&self.conv_weight(l).t());
            dact = col2im3(dcol.view(), self.layout.channels[l], cc.h, cc.w);
        }
        loss
    }

    /// Mean loss and mean gradient over the given sample indices. Samples are
    /// accumulated in order, so results are bitwise deterministic.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: &[usize],
        idx: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        for &i in idx {
            let input = self.sample_matrix(x.row(i))?;
            loss += self.backward_sample(&input, y[i], &mut grad);
        }
        let inv = 1.0 / idx.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
        Ok((loss * inv, grad))
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.cfg.n_classes));
        for (i, row) in x.rows().into_iter().enumerate() {
            let input = self.sample_matrix(row)?;
            let (logits, _) = self.forward_sample(&input);
            out.row_mut(i).assign(&logits);
        }
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self
            .logits(x)?
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
}

/// Mini-batch Adam with a seeded shuffle each epoch, early stopping on
/// validation accuracy, and restore of the best snapshot.
pub fn train_cnn(
    model: &mut Cnn,
    x: ArrayView2<f64>,
    y: &[usize],
    x_val: ArrayView2<f64>,
    y_val: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if x.nrows() != y.len() || x_val.nrows() != y_val.len() {
        return Err(Error::ShapeError("feature/label count mismatch".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut adam = Adam::new(model.param_count(), cfg.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = TrainHistory::default();
    let mut best_params = model.params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut step = 0usize;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, grad) = model.loss_and_grad(x, y, batch)?;
            adam.step(&mut model.params, &grad);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let val_acc = accuracy(&model.predict(x_val)?, y_val);
        history.records.push(HistoryRecord {
            epoch,
            step,
            train_loss: epoch_loss / batches as f64,
            val_accuracy: val_acc,
        });
        // ties refresh the snapshot but still count toward patience
        if val_acc >= best_acc {
            best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
        }
        if val_acc > best_acc {
            best_acc = val_acc;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.params.copy_from_slice(&best_params);
    history.best_val_accuracy = best_acc.max(0.0);
    history.best_epoch = best_epoch;
    Ok(history)
}

pub struct CnnClassifier {
    opts: ClassifierOptions,
    pub model: Option<Cnn>,
    pub history: Option<TrainHistory>,
}

impl CnnClassifier {
    pub fn new(opts: ClassifierOptions) -> Self {
        CnnClassifier { opts, model: None, history: None }
    }

    pub fn from_params(params: Vec<f64>, meta: &serde_json::Value) -> Result<Self> {
        let geti = |key: &str| -> Result<usize> {
            meta.get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::InvalidInput(format!("model metadata missing '{key}'")))
        };
        let cfg = CnnConfig {
            input_h: geti("h")?,
            input_w: geti("w")?,
            in_channels: geti("c")?,
            n_classes: geti("k")?,
            seed: meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0),
        };
        Ok(CnnClassifier {
            opts: ClassifierOptions::default(),
            model: Some(Cnn::from_parts(cfg, params)?),
            history: None,
        })
    }
}

impl Classifier for CnnClassifier {
    fn name(&self) -> &'static str {
        "cnn"
    }

    fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[usize],
        x_val: ArrayView2<f64>,
        y_val: &[usize],
    ) -> Result<serde_json::Value> {
        let (h, w) = self.opts.input_shape.ok_or_else(|| {
            Error::ConfigError("cnn requires input_shape in classifier options".into())
        })?;
        if h * w == 0 || x.ncols() % (h * w) != 0 {
            return Err(Error::ShapeError(format!(
                "feature width {} is not a multiple of {h}x{w}",
                x.ncols()
            )));
        }
        let in_channels = x.ncols() / (h * w);
        let n_classes = y.iter().chain(y_val).max().map(|m| m + 1).unwrap_or(0).max(2);
        let mut model = Cnn::new(CnnConfig {
            input_h: h,
            input_w: w,
            in_channels,
            n_classes,
            seed: self.opts.train.rng_seed,
        })?;
        let history = train_cnn(&mut model, x, y, x_val, y_val, &self.opts.train)?;
        let info = json!({
            "epochs_run": history.records.len(),
            "best_epoch": history.best_epoch,
            "best_val_accuracy": history.best_val_accuracy,
            "param_count": model.param_count(),
            "seed": self.opts.train.rng_seed,
        });
        self.model = Some(model);
        self.history = Some(history);
        Ok(info)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        model.predict(x)
    }

    fn export(&self) -> Result<(u8, Vec<f64>, serde_json::Value)> {
        let model = self.model.as_ref().ok_or_else(|| Error::ConfigError("model not fitted".into()))?;
        Ok((
            4u8,
            model.params.clone(),
            json!({
                "h": model.cfg.input_h,
                "w": model.cfg.input_w,
                "c": model.cfg.in_channels,
                "k": model.cfg.n_classes,
                "seed": model.cfg.seed,
            }),
        ))
    }
}
