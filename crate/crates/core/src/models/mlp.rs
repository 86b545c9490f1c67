//! Plain and regularized multilayer perceptrons.
//!
//! A hidden block is `dense -> relu -> gaussian noise -> batch norm ->
//! dropout -> concat(input, output)`; the plain MLP keeps only the dense
//! layer and ReLU. Training minimizes softmax cross-entropy with Adam (plain)
//! or Adam with decoupled weight decay on kernels (regularized), early
//! stopping on a held-out slice of the training rows, and optional weight
//! averaging over the epochs from the best one onward.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelFamily};
use crate::features::Standardizer;
use crate::{par, rng, N_CLASSES};

const BN_MOMENTUM: f64 = 0.99;
const BN_EPS: f64 = 1e-3;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_layers: usize,
    pub units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Share of the training rows held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layers: 3,
            units: 128,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 500,
            patience: 10,
            min_delta: 1e-3,
            validation_fraction: 0.1,
        }
    }
}

impl MlpParams {
    pub fn validate(&self, family: ModelFamily) -> Result<(), ModelError> {
        let bad = |name: &'static str, v: String| ModelError::InvalidParameter { family, name, value: v };
        if self.units == 0 {
            return Err(bad("units", "0".into()));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", self.learning_rate.to_string()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(bad("validation_fraction", self.validation_fraction.to_string()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(bad("min_delta", self.min_delta.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmlpParams {
    #[serde(flatten)]
    pub base: MlpParams,
    pub dropout: f64,
    pub weight_decay: f64,
    pub stddev: f64,
    pub skip: bool,
    pub swa: bool,
    pub batch_norm: bool,
}

impl Default for RmlpParams {
    fn default() -> Self {
        RmlpParams {
            base: MlpParams::default(),
            dropout: 0.1,
            weight_decay: 1e-4,
            stddev: 0.1,
            skip: true,
            swa: true,
            batch_norm: true,
        }
    }
}

impl RmlpParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.base.validate(ModelFamily::Rmlp)?;
        let bad = |name: &'static str, v: f64| ModelError::InvalidParameter {
            family: ModelFamily::Rmlp,
            name,
            value: v.to_string(),
        };
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad("dropout", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("weight_decay", self.weight_decay));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return Err(bad("stddev", self.stddev));
        }
        Ok(())
    }
}

/// Flattened training configuration shared by both families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub base: MlpParams,
    pub dropout: f64,
    pub weight_decay: f64,
    pub stddev: f64,
    pub skip: bool,
    pub swa: bool,
    pub batch_norm: bool,
}

impl From<&MlpParams> for NetConfig {
    fn from(p: &MlpParams) -> Self {
        NetConfig {
            base: *p,
            dropout: 0.0,
            weight_decay: 0.0,
            stddev: 0.0,
            skip: false,
            swa: false,
            batch_norm: false,
        }
    }
}

impl From<&RmlpParams> for NetConfig {
    fn from(p: &RmlpParams) -> Self {
        NetConfig {
            base: p.base,
            dropout: p.dropout,
            weight_decay: p.weight_decay,
            stddev: p.stddev,
            skip: p.skip,
            swa: p.swa,
            batch_norm: p.batch_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BlockIdx {
    w: usize,
    b: usize,
    /// (gamma, beta) parameter indices and running-statistics slot.
    bn: Option<(usize, usize, usize)>,
}

/// Weights and layout. Every trainable tensor lives in `params`; biases and
/// batch-norm scale/shift are stored as `1 x n` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    params: Vec<Array2<f64>>,
    kernel: Vec<bool>,
    blocks: Vec<BlockIdx>,
    out: (usize, usize),
    running: Vec<(Array1<f64>, Array1<f64>)>,
    skip: bool,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

impl Net {
    fn new(input: usize, cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = Vec::new();
        let mut kernel = Vec::new();
        let mut running = Vec::new();
        let mut push = |p: Array2<f64>, k: bool, params: &mut Vec<Array2<f64>>| {
            params.push(p);
            kernel.push(k);
            params.len() - 1
        };
        let units = cfg.base.units;
        let mut width = input;
        let mut blocks = Vec::new();
        for _ in 0..cfg.base.hidden_layers {
            let w = push(glorot(width, units, rng), true, &mut params);
            let b = push(Array2::zeros((1, units)), false, &mut params);
            let bn = if cfg.batch_norm {
                let g = push(Array2::ones((1, units)), false, &mut params);
                let be = push(Array2::zeros((1, units)), false, &mut params);
                running.push((Array1::zeros(units), Array1::ones(units)));
                Some((g, be, running.len() - 1))
            } else {
                None
            };
            blocks.push(BlockIdx { w, b, bn });
            width = if cfg.skip { width + units } else { units };
        }
        let ow = push(glorot(width, N_CLASSES, rng), true, &mut params);
        let ob = push(Array2::zeros((1, N_CLASSES)), false, &mut params);
        Net {
            params,
            kernel,
            blocks,
            out: (ow, ob),
            running,
            skip: cfg.skip,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }
}

/// How a forward pass treats the stochastic and batch-dependent layers.
#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Batch statistics, noise and dropout drawn from the RNG.
    Train,
    /// Running statistics, no noise, no dropout.
    Infer,
}

struct BlockCache {
    input: Array2<f64>,
    z: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    mask: Option<Array2<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
}

struct Forward {
    caches: Vec<BlockCache>,
    last: Array2<f64>,
    probs: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.outer_iter_mut() {
        super::softmax_in_place(row.as_slice_mut().expect("row is contiguous"));
    }
}

fn mean_log_loss(p: &Array2<f64>, y: &[usize]) -> f64 {
    let s: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &c)| -p[[i, c]].clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
        .sum();
    s / y.len() as f64
}

impl Net {
    fn forward(&self, x: &Array2<f64>, mode: Mode, cfg: &NetConfig, rng: Option<&mut ChaCha8Rng>) -> Forward {
        let mut rng = rng;
        let mut a = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let z = a.dot(&self.params[blk.w]) + &self.params[blk.b];
            let mut h = z.mapv(|v| if v < 0.0 { 0.0 } else { v });
            if mode == Mode::Train && cfg.stddev > 0.0 {
                let normal = Normal::new(0.0, cfg.stddev).expect("stddev is finite");
                let r = rng.as_deref_mut().expect("training pass has an rng");
                h.mapv_inplace(|v| v + normal.sample(r));
            }
            let (mut xhat, mut inv_std, mut bm, mut bv) = (None, None, None, None);
            if let Some((g, be, slot)) = blk.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let m = h.mean_axis(Axis(0)).expect("non-empty batch");
                        let v = (&h - &m).mapv(|d| d * d).mean_axis(Axis(0)).expect("non-empty batch");
                        (m, v)
                    }
                    Mode::Infer => self.running[slot].clone(),
                };
                let is = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xh = (&h - &mean) * &is;
                h = &xh * &self.params[g] + &self.params[be];
                xhat = Some(xh);
                inv_std = Some(is);
                if mode == Mode::Train {
                    bm = Some(mean);
                    bv = Some(var);
                }
            }
            let mut mask = None;
            if mode == Mode::Train && cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                let r = rng.as_deref_mut().expect("training pass has an rng");
                let m = Array2::from_shape_fn(h.dim(), |_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                h = &h * &m;
                mask = Some(m);
            }
            let next = if self.skip {
                concatenate(Axis(1), &[a.view(), h.view()]).expect("same row count")
            } else {
                h
            };
            caches.push(BlockCache {
                input: a,
                z,
                xhat,
                inv_std,
                mask,
                batch_mean: bm,
                batch_var: bv,
            });
            a = next;
        }
        let mut logits = a.dot(&self.params[self.out.0]) + &self.params[self.out.1];
        softmax_rows(&mut logits);
        Forward {
            caches,
            last: a,
            probs: logits,
        }
    }

    /// Gradients of the mean cross-entropy with respect to every parameter.
    fn backward(&self, fwd: &Forward, y: &[usize]) -> Vec<Array2<f64>> {
        let n = y.len() as f64;
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let mut d = fwd.probs.clone();
        for (i, &c) in y.iter().enumerate() {
            d[[i, c]] -= 1.0;
        }
        d /= n;
        grads[self.out.0] = fwd.last.t().dot(&d);
        grads[self.out.1] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dnext = d.dot(&self.params[self.out.0].t());

        for (bi, (blk, cache)) in self.blocks.iter().zip(&fwd.caches).enumerate().rev() {
            let in_w = cache.input.ncols();
            let (mut dh, dskip) = if self.skip {
                (
                    dnext.slice(s![.., in_w..]).to_owned(),
                    Some(dnext.slice(s![.., ..in_w]).to_owned()),
                )
            } else {
                (dnext, None)
            };
            if let Some(m) = &cache.mask {
                dh = dh * m;
            }
            if let Some((g, be, _)) = blk.bn {
                let xhat = cache.xhat.as_ref().expect("bn cache");
                let inv_std = cache.inv_std.as_ref().expect("bn cache");
                grads[g] = (&dh * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                grads[be] = dh.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dxhat = &dh * &self.params[g];
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                dh = (&dxhat * n - &sum_d - xhat * &sum_dx) * inv_std / n;
            }
            let dz = dh * &cache.z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            grads[blk.w] = cache.input.t().dot(&dz);
            grads[blk.b] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            if bi > 0 {
                let mut da = dz.dot(&self.params[blk.w].t());
                if let Some(ds) = dskip {
                    da += &ds;
                }
                dnext = da;
            } else {
                dnext = Array2::zeros((0, 0));
            }
        }
        grads
    }

    fn update_running(&mut self, fwd: &Forward) {
        for (blk, cache) in self.blocks.iter().zip(&fwd.caches) {
            if let (Some((_, _, slot)), Some(m), Some(v)) = (blk.bn, &cache.batch_mean, &cache.batch_var) {
                let (rm, rv) = &mut self.running[slot];
                *rm = &*rm * BN_MOMENTUM + m * (1.0 - BN_MOMENTUM);
                *rv = &*rv * BN_MOMENTUM + v * (1.0 - BN_MOMENTUM);
            }
        }
    }

    /// Replace running statistics with exact full-data statistics, layer by layer.
    fn recompute_bn(&mut self, x: &Array2<f64>, cfg: &NetConfig) {
        let quiet = NetConfig {
            stddev: 0.0,
            dropout: 0.0,
            ..*cfg
        };
        let fwd = self.forward(x, Mode::Train, &quiet, None);
        for (blk, cache) in self.blocks.iter().zip(&fwd.caches) {
            if let (Some((_, _, slot)), Some(m), Some(v)) = (blk.bn, &cache.batch_mean, &cache.batch_var) {
                self.running[slot] = (m.clone(), v.clone());
            }
        }
    }

    fn predict(&self, x: &Array2<f64>, cfg: &NetConfig) -> Array2<f64> {
        self.forward(x, Mode::Infer, cfg, None).probs
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &Net) -> Self {
        let zeros: Vec<Array2<f64>> = net.params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Net, grads: &[Array2<f64>], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, g) in grads.iter().enumerate() {
            let p = &mut net.params[k];
            if weight_decay > 0.0 && net.kernel[k] {
                p.mapv_inplace(|w| w - lr * weight_decay * w);
            }
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Per-epoch losses and the early-stopping outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub used_swa: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: NetConfig,
    pub standardizer: Standardizer,
    pub net: Net,
    pub trace: TrainingTrace,
}

fn snapshot(net: &Net) -> (Vec<Array2<f64>>, Vec<(Array1<f64>, Array1<f64>)>) {
    (net.params.clone(), net.running.clone())
}

impl MlpModel {
    pub fn fit(cfg: &NetConfig, x: &Array2<f64>, y: &[usize], seed: u64) -> Result<Self, ModelError> {
        let standardizer = Standardizer::fit(x);
        let z = standardizer.transform(x);
        let n = z.nrows();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::derive_rng(seed, &[0]));
        let n_val = (cfg.base.validation_fraction * n as f64).floor() as usize;
        let n_val = if n - n_val == 0 { 0 } else { n_val };
        let (val_idx, train_idx) = order.split_at(n_val);
        let mut train_idx = train_idx.to_vec();
        train_idx.sort_unstable();
        let xt = z.select(Axis(0), &train_idx);
        let yt: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
        let (xv, yv) = if n_val > 0 {
            (z.select(Axis(0), val_idx), val_idx.iter().map(|&i| y[i]).collect::<Vec<_>>())
        } else {
            (xt.clone(), yt.clone())
        };

        let mut net = Net::new(z.ncols(), cfg, &mut rng::derive_rng(seed, &[1]));
        let mut opt = Adam::new(&net);
        let mut noise = rng::derive_rng(seed, &[2]);
        let mut shuffle = rng::derive_rng(seed, &[3]);

        let mut trace = TrainingTrace {
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            used_swa: false,
        };
        let mut best = snapshot(&net);
        let mut swa: Option<(Vec<Array2<f64>>, usize)> = None;
        let mut wait = 0;
        let mut batch_order: Vec<usize> = (0..xt.nrows()).collect();

        for epoch in 1..=cfg.base.max_epochs {
            batch_order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for chunk in batch_order.chunks(cfg.base.batch_size) {
                let xb = xt.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| yt[i]).collect();
                let fwd = net.forward(&xb, Mode::Train, cfg, Some(&mut noise));
                total += mean_log_loss(&fwd.probs, &yb) * chunk.len() as f64;
                let grads = net.backward(&fwd, &yb);
                net.update_running(&fwd);
                opt.step(&mut net, &grads, cfg.base.learning_rate, cfg.weight_decay);
            }
            let train_loss = total / xt.nrows() as f64;
            let val_loss = mean_log_loss(&net.predict(&xv, cfg), &yv);
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(ModelError::Diverged {
                    stage: "epoch",
                    step: epoch,
                });
            }
            trace.train_loss.push(train_loss);
            trace.val_loss.push(val_loss);

            if val_loss < trace.best_val_loss - cfg.base.min_delta {
                trace.best_val_loss = val_loss;
                trace.best_epoch = epoch;
                best = snapshot(&net);
                swa = Some((net.params.clone(), 1));
                wait = 0;
            } else {
                if let Some((avg, count)) = swa.as_mut() {
                    *count += 1;
                    let k = *count as f64;
                    for (a, p) in avg.iter_mut().zip(&net.params) {
                        ndarray::Zip::from(a).and(p).for_each(|a, &p| *a += (p - *a) / k);
                    }
                }
                wait += 1;
                if wait >= cfg.base.patience {
                    break;
                }
            }
        }

        net.params = best.0;
        net.running = best.1;
        if cfg.swa {
            if let Some((avg, count)) = swa {
                if count > 1 {
                    let mut cand = net.clone();
                    cand.params = avg;
                    cand.recompute_bn(&xt, cfg);
                    let loss = mean_log_loss(&cand.predict(&xv, cfg), &yv);
                    if loss.is_finite() && loss <= trace.best_val_loss {
                        trace.used_swa = true;
                        trace.best_val_loss = loss;
                        net = cand;
                    }
                }
            }
        }
        Ok(MlpModel {
            config: *cfg,
            standardizer,
            net,
            trace,
        })
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = self.standardizer.transform(x);
        let parts = par::map_blocks(z.nrows(), |r| {
            let block = z.slice(s![r, ..]).to_owned();
            self.net.predict(&block, &self.config)
        });
        if parts.is_empty() {
            return Array2::zeros((0, N_CLASSES));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).expect("blocks share width")
    }
}

/// Largest relative error between back-propagated and central-difference
/// gradients over every parameter of a freshly initialized net, evaluated
/// on a random 12 x 5 batch in training mode with noise and dropout off.
pub fn gradient_check(cfg: &NetConfig, seed: u64) -> f64 {
    let cfg = NetConfig {
        stddev: 0.0,
        dropout: 0.0,
        ..*cfg
    };
    let loss_of = |net: &Net, x: &Array2<f64>, y: &[usize]| mean_log_loss(&net.forward(x, Mode::Train, &cfg, None).probs, y);
    let mut r = rng::derive_rng(seed, &[0x9c]);
    let x = Array2::from_shape_fn((12, 5), |_| r.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..12).map(|i| i % N_CLASSES).collect();
    let mut net = Net::new(5, &cfg, &mut r);
    // move biases and batch-norm scale/shift off their defaults
    for k in 0..net.params.len() {
        if !net.kernel[k] {
            net.params[k].mapv_inplace(|v| v + r.random_range(-0.3..0.3));
        }
    }
    let fwd = net.forward(&x, Mode::Train, &cfg, None);
    let grads = net.backward(&fwd, &y);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..net.params.len() {
        for idx in 0..net.params[k].len() {
            let (i, j) = (idx / net.params[k].ncols(), idx % net.params[k].ncols());
            let orig = net.params[k][[i, j]];
            net.params[k][[i, j]] = orig + eps;
            let up = loss_of(&net, &x, &y);
            net.params[k][[i, j]] = orig - eps;
            let down = loss_of(&net, &x, &y);
            net.params[k][[i, j]] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[k][[i, j]];
            let denom = (analytic.abs() + numeric.abs()).max(1e-7);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}
