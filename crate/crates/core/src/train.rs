//! Mini-batch SGD with momentum for fully-connected residual networks.
//!
//! The model mirrors the forward pass in [`crate::network`] on batches of row
//! vectors. Gradients come from a hand-written reverse pass and are checked
//! against central finite differences.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{BlockKind, InitScheme, SchemeKind, Skip};
use crate::linalg::{haar_orthogonal, Matrix, RngStream};
use crate::network::{build_network, NetworkSpec, NetworkWeights};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x d`, one sample per row.
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let d = Self {
            features,
            labels,
            n_classes,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Spec(format!("label {l} out of range for {} classes", self.n_classes)));
        }
        if self.features.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("dataset contains NaN features".into()));
        }
        Ok(())
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Gaussian clusters around orthogonal class means.
///
/// Means are `r q_k` with `q_k` orthonormal and `r = max(1, 2 sqrt(2) spread)`,
/// so distinct means sit at distance `r sqrt(2) >= 4 spread`. Each sample adds
/// `spread g / sqrt(dim)` noise and is then scaled to unit norm. Samples are
/// interleaved by class.
pub fn synth_blobs(n_classes: usize, dim: usize, n_per_class: usize, spread: f64, rng: &RngStream) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Spec(format!("need at least 2 classes, got {n_classes}")));
    }
    if n_classes > dim {
        return Err(Error::Spec(format!("{n_classes} orthogonal class means need dim >= {n_classes}, got {dim}")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Spec(format!("spread must be finite and >= 0, got {spread}")));
    }
    let q = haar_orthogonal(dim, n_classes, &mut rng.substream(0))?;
    let r = (2.0 * 2f64.sqrt() * spread).max(1.0);
    let mut noise = rng.substream(1);
    let n = n_classes * n_per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let scale = spread / (dim as f64).sqrt();
    for i in 0..n {
        let k = i % n_classes;
        let mut row = features.row_mut(i);
        for j in 0..dim {
            row[j] = r * q[[j, k]] + scale * noise.standard_normal();
        }
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
        labels.push(k);
    }
    Dataset::new(features, labels, n_classes)
}

pub const CIFAR_RECORD: usize = 3073;

/// Parse CIFAR-10 binary records: one label byte, then 3072 pixel bytes
/// (R, G, B planes of 32 x 32, row-major). Pixels are scaled to `[0, 1]`.
pub fn cifar10_parse(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 data must be a multiple of {CIFAR_RECORD} bytes, got {}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut features = Array2::zeros((n, CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("record {i} has label {} > 9", rec[0])));
        }
        labels.push(rec[0] as usize);
        for (dst, &p) in features.row_mut(i).iter_mut().zip(&rec[1..]) {
            *dst = p as f64 / 255.0;
        }
    }
    Dataset::new(features, labels, 10)
}

pub fn cifar10_load(path: impl AsRef<Path>) -> Result<Dataset> {
    cifar10_parse(&std::fs::read(path)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    #[default]
    Cosine,
}

impl Schedule {
    /// Learning-rate multiplier at step `t` of `total`.
    pub fn multiplier(self, t: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine if total == 0 => 1.0,
            Schedule::Cosine => (1.0 + (PI * t as f64 / total as f64).cos()) / 2.0,
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop after this many steps; the schedule length shrinks to match.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Run a finite-difference gradient check at initialization.
    #[serde(default = "default_true")]
    pub grad_check: bool,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: Schedule::Cosine,
            epochs,
            batch_size,
            seed,
            max_steps: None,
            grad_check: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed so that frozen runs can be traced.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Spec(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Spec(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Spec("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Spec("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Total number of SGD steps for a dataset of `n` samples.
    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * n.div_ceil(self.batch_size);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Alpha,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcBlock {
    /// `n_mid x n_in`.
    pub w1: Matrix,
    pub b1: Array1<f64>,
    /// `n_out x n_mid`.
    pub w2: Matrix,
    pub b2: Array1<f64>,
    /// `n_out x n_in` projection and bias; `None` for identity skips.
    pub skip: Option<(Matrix, Array1<f64>)>,
    pub alpha: f64,
    /// Fixed skip weight.
    pub beta: f64,
}

/// Fully-connected residual network with flat parameter access. The same
/// type holds gradients and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct FcModel {
    /// `N1 x d`.
    pub w0: Matrix,
    pub blocks: Vec<FcBlock>,
    pub w_out: Matrix,
    pub b_out: Array1<f64>,
}

struct BlockCache {
    input: Matrix,
    a: Matrix,
    m: Matrix,
    f: Matrix,
    z: Matrix,
}

struct Cache {
    z0: Matrix,
    blocks: Vec<BlockCache>,
    last: Matrix,
    logits: Matrix,
}

impl Cache {
    fn mask(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.z0.iter().map(|v| *v > 0.0).collect();
        for b in &self.blocks {
            out.extend(b.a.iter().map(|v| *v > 0.0));
            out.extend(b.z.iter().map(|v| *v > 0.0));
        }
        out
    }
}

fn relu_m(x: &Matrix) -> Matrix {
    x.mapv(|v| v.max(0.0))
}

fn gate(d: &mut Matrix, z: &Matrix) {
    d.zip_mut_with(z, |g, &zv| {
        if zv <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let (top, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (j, &v)| if v > a.1 { (j, v) } else { a });
        let zy = row[y];
        row.mapv_inplace(|v| (v - max).exp());
        let rest: f64 = row.iter().enumerate().filter(|(j, _)| *j != top).map(|(_, v)| v).sum();
        // log-sum-exp - z_y, exact for tiny losses and finite for huge margins
        total += (max - zy) + rest.ln_1p();
        let s = 1.0 + rest;
        row /= s;
        row[y] -= 1.0;
        row /= b;
    }
    (total / b, grad)
}

impl FcModel {
    /// Extract dense matrices from fully-connected network weights.
    pub fn from_network(spec: &NetworkSpec, w: &NetworkWeights) -> Result<Self> {
        if !spec.is_fully_connected() {
            return Err(Error::Kind("the trainer handles fully-connected networks only".into()));
        }
        let blocks = w
            .blocks
            .iter()
            .map(|b| FcBlock {
                w1: b.w1.center(),
                b1: b.b1.clone(),
                w2: b.w2.center(),
                b2: b.b2.clone(),
                skip: match &b.skip {
                    Skip::Identity => None,
                    Skip::Projection(k) => Some((k.center(), b.b_skip.clone())),
                },
                alpha: b.alpha,
                beta: b.beta,
            })
            .collect();
        Ok(Self {
            w0: w.w0.center(),
            blocks,
            w_out: w.w_out.clone(),
            b_out: w.b_out.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, p) in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.alpha).collect()
    }

    /// Every trainable parameter group, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(ParamRole, &mut [f64])> {
        fn sl<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![(ParamRole::Weight, sl(&mut self.w0))];
        for b in &mut self.blocks {
            out.push((ParamRole::Weight, sl(&mut b.w1)));
            out.push((ParamRole::Bias, sl(&mut b.b1)));
            out.push((ParamRole::Weight, sl(&mut b.w2)));
            out.push((ParamRole::Bias, sl(&mut b.b2)));
            if let Some((ws, bs)) = &mut b.skip {
                out.push((ParamRole::Weight, sl(ws)));
                out.push((ParamRole::Bias, sl(bs)));
            }
            out.push((ParamRole::Alpha, std::slice::from_mut(&mut b.alpha)));
        }
        out.push((ParamRole::Weight, sl(&mut self.w_out)));
        out.push((ParamRole::Bias, sl(&mut self.b_out)));
        out
    }

    pub fn n_params(&self) -> usize {
        self.clone().params_mut().iter().map(|(_, p)| p.len()).sum()
    }

    fn forward_cache(&self, x: &Matrix) -> Result<Cache> {
        if x.ncols() != self.w0.ncols() {
            return Err(Error::Dimension(format!(
                "model expects {} features, batch has {}",
                self.w0.ncols(),
                x.ncols()
            )));
        }
        let z0 = x.dot(&self.w0.t());
        let mut h = relu_m(&z0);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let a = h.dot(&b.w1.t()) + &b.b1;
            let m = relu_m(&a);
            let f = m.dot(&b.w2.t()) + &b.b2;
            let s = match &b.skip {
                None => h.clone(),
                Some((ws, bs)) => h.dot(&ws.t()) + bs,
            };
            let z = &f * b.alpha + &(s * b.beta);
            let out = relu_m(&z);
            blocks.push(BlockCache { input: h, a, m, f, z });
            h = out;
        }
        let logits = h.dot(&self.w_out.t()) + &self.b_out;
        Ok(Cache {
            z0,
            blocks,
            last: h,
            logits,
        })
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cache(x)?.logits)
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        Ok(cross_entropy(&self.forward_cache(x)?.logits, labels).0)
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(x)?;
        let hits = logits
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &y)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                best.0 == y
            })
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    /// Mean cross-entropy and its gradient by reverse-mode differentiation.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, FcModel)> {
        let cache = self.forward_cache(x)?;
        let (loss, dlogits) = cross_entropy(&cache.logits, labels);
        let mut g = self.zeros_like();
        g.w_out = dlogits.t().dot(&cache.last);
        g.b_out = dlogits.sum_axis(Axis(0));
        let mut dh = dlogits.dot(&self.w_out);
        for ((b, c), gb) in self.blocks.iter().zip(&cache.blocks).zip(&mut g.blocks).rev() {
            let mut dz = dh;
            gate(&mut dz, &c.z);
            gb.alpha = (&dz * &c.f).sum();
            let df = &dz * b.alpha;
            gb.w2 = df.t().dot(&c.m);
            gb.b2 = df.sum_axis(Axis(0));
            let mut da = df.dot(&b.w2);
            gate(&mut da, &c.a);
            gb.w1 = da.t().dot(&c.input);
            gb.b1 = da.sum_axis(Axis(0));
            let mut dx = da.dot(&b.w1);
            match (&b.skip, &mut gb.skip) {
                (None, _) => dx.scaled_add(b.beta, &dz),
                (Some((ws, _)), Some((gws, gbs))) => {
                    let dzb = &dz * b.beta;
                    *gws = dzb.t().dot(&c.input);
                    *gbs = dzb.sum_axis(Axis(0));
                    dx += &dzb.dot(ws);
                }
                (Some(_), None) => unreachable!("gradient mirrors the model"),
            }
            dh = dx;
        }
        let mut dz0 = dh;
        gate(&mut dz0, &cache.z0);
        g.w0 = dz0.t().dot(x);
        Ok((loss, g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Draws skipped because a ReLU changed sign within the step.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Compare reverse-mode gradients with central differences (step `h`) on
/// `n_params` randomly drawn parameters. Draws where a perturbation flips a
/// ReLU mask sit on a kink and are skipped.
pub fn gradient_check(
    model: &FcModel,
    x: &Matrix,
    labels: &[usize],
    n_params: usize,
    h: f64,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    let (_, grad) = model.loss_and_grad(x, labels)?;
    let base_mask = model.forward_cache(x)?.mask();
    let mut grad = grad;
    let flat_grad: Vec<f64> = grad.params_mut().iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let total = flat_grad.len();
    let mut probe = model.clone();
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let max_draws = 40 * n_params.max(1);
    for _ in 0..max_draws {
        if checked == n_params {
            break;
        }
        let idx = rng.random_range(0..total);
        let eval = |m: &mut FcModel, delta: f64| -> Result<(f64, Vec<bool>)> {
            set_flat(m, idx, delta);
            let c = m.forward_cache(x)?;
            set_flat(m, idx, -delta);
            Ok((cross_entropy(&c.logits, labels).0, c.mask()))
        };
        let (lp, mp) = eval(&mut probe, h)?;
        let (lm, mm) = eval(&mut probe, -h)?;
        if mp != base_mask || mm != base_mask {
            skipped += 1;
            continue;
        }
        let num = (lp - lm) / (2.0 * h);
        let ana = flat_grad[idx];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        checked,
        skipped,
        max_rel_error: worst,
    })
}

fn set_flat(m: &mut FcModel, mut idx: usize, delta: f64) {
    for (_, p) in m.params_mut() {
        if idx < p.len() {
            p[idx] += delta;
            return;
        }
        idx -= p.len();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub alphas: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub scheme: String,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_alphas: Vec<f64>,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub diverged: bool,
    pub grad_check: Option<GradCheckReport>,
}

impl TrainLog {
    /// `step, lr, loss` rows.
    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<()> {
        crate::sigprop::write_csv(w, &self.steps)
    }

    /// Everything except the per-step trace.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme,
            "steps": self.steps.len(),
            "epochs": self.epochs,
            "final_alphas": self.final_alphas,
            "final_train_loss": self.final_train_loss,
            "final_train_accuracy": self.final_train_accuracy,
            "diverged": self.diverged,
            "grad_check": self.grad_check,
        })
    }
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    data.validate()?;
    if data.dim() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "network input_dim {} but dataset has {} features",
            spec.input_dim,
            data.dim()
        )));
    }
    if data.n_classes > spec.output_dim {
        return Err(Error::Dimension(format!(
            "{} classes but only {} outputs",
            data.n_classes, spec.output_dim
        )));
    }
    if data.is_empty() {
        return Err(Error::Spec("empty dataset".into()));
    }
    Ok(())
}

/// Gradient check settings used by [`sgd_train`].
pub const GRAD_CHECK_PARAMS: usize = 50;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Train with mini-batch SGD, momentum (`v = mu v + g`, `theta -= lr v`) and
/// weight decay on weight matrices. Initialization draws from stream 0 of
/// `cfg.seed`, shuffling from stream 1, the gradient check from stream 2.
pub fn sgd_train(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    Ok(sgd_train_model(spec, scheme, data, test, cfg)?.1)
}

/// [`sgd_train`] that also returns the trained model.
pub fn sgd_train_model(
    spec: &NetworkSpec,
    scheme: &InitScheme,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(FcModel, TrainLog)> {
    cfg.validate()?;
    check_data(spec, data)?;
    if let Some(t) = test {
        check_data(spec, t)?;
    }
    let weights = build_network(spec, scheme, &RngStream::new(cfg.seed, 0))?;
    let mut model = FcModel::from_network(spec, &weights)?;
    let grad_check = if cfg.grad_check {
        let n = data.len().min(cfg.batch_size);
        let idx: Vec<usize> = (0..n).collect();
        let sub = data.subset(&idx);
        Some(gradient_check(
            &model,
            &sub.features,
            &sub.labels,
            GRAD_CHECK_PARAMS,
            GRAD_CHECK_STEP,
            &mut RngStream::new(cfg.seed, 2),
        )?)
    } else {
        None
    };
    let mut velocity = model.zeros_like();
    let mut shuffle = RngStream::new(cfg.seed, 1);
    let total = cfg.total_steps(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = Vec::with_capacity(total);
    let mut epochs = Vec::new();
    let mut diverged = false;
    let mut t = 0;
    'outer: for epoch in 0..cfg.epochs {
        if t >= total {
            break;
        }
        let start = Instant::now();
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            if t >= total {
                break;
            }
            let b = data.subset(batch);
            let (loss, mut grad) = model.loss_and_grad(&b.features, &b.labels)?;
            let lr = cfg.learning_rate * cfg.schedule.multiplier(t, total);
            steps.push(StepRecord { step: t, lr, loss });
            t += 1;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                diverged = true;
                break 'outer;
            }
            for (((role, p), (_, g)), (_, v)) in model
                .params_mut()
                .into_iter()
                .zip(grad.params_mut())
                .zip(velocity.params_mut())
            {
                let wd = if role == ParamRole::Weight { cfg.weight_decay } else { 0.0 };
                for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    *vi = cfg.momentum * *vi + gi + wd * *pi;
                    *pi -= lr * *vi;
                }
            }
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: model.loss(&data.features, &data.labels)?,
            train_accuracy: model.accuracy(&data.features, &data.labels)?,
            test_accuracy: test.map(|d| model.accuracy(&d.features, &d.labels)).transpose()?,
            alphas: model.alphas(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let log = TrainLog {
        scheme: scheme.name().to_string(),
        steps,
        epochs,
        final_alphas: model.alphas(),
        final_train_loss: model.loss(&data.features, &data.labels)?,
        final_train_accuracy: model.accuracy(&data.features, &data.labels)?,
        diverged,
        grad_check,
    };
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub diverged: bool,
}

/// One Risotto run per `alpha` with a shared seed. The variant follows the
/// block kinds: Type C blocks use Risotto C, Type B blocks Risotto B.
pub fn alpha_sweep(spec: &NetworkSpec, alphas: &[f64], data: &Dataset, cfg: &TrainConfig) -> Result<Vec<SweepRow>> {
    let kind = match spec.blocks.first().map(|b| b.kind) {
        Some(k) if spec.blocks.iter().all(|b| b.kind == k) => k,
        Some(_) => return Err(Error::Spec("alpha sweep needs blocks of a single kind".into())),
        None => BlockKind::TypeC,
    };
    let scheme: InitScheme = match kind {
        BlockKind::TypeB => SchemeKind::RisottoB.into(),
        BlockKind::TypeC => SchemeKind::RisottoC.into(),
    };
    alphas
        .par_iter()
        .map(|&alpha| {
            let mut s = spec.clone();
            for b in &mut s.blocks {
                b.alpha = alpha;
            }
            let log = sgd_train(&s, &scheme, data, None, cfg)?;
            Ok(SweepRow {
                alpha,
                final_loss: log.final_train_loss,
                final_accuracy: log.final_train_accuracy,
                diverged: log.diverged,
            })
        })
        .collect()
}
