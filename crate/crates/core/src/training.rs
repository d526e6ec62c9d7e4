//! End-to-end training of the unfolded networks: reverse-mode gradients
//! through the layer stack, ADAM with an exponentially decaying step size,
//! and the epoch loop.

use ndarray::{Array1, Array2};
use rand::prelude::*;

use crate::error::{DfpcError, Result};
use crate::fpc_solvers::Variant;
use crate::model_core::{mean_nmse_db, substream};
use crate::unfolded_net::{forward_batched, ForwardCache, UnfoldedModel};

/// Gradient convention for the sign(.) nonlinearity in the l1 variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignGradMode {
    /// True subgradient almost everywhere.
    Zero,
    /// Identity inside [-1, 1], zero outside.
    StraightThrough,
}

/// Per-parameter-set gradients, shaped like [`UnfoldedModel::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub a: Array2<f64>,
    pub bbar: Array2<f64>,
    pub nu: f64,
}

impl Gradients {
    pub fn zeros_like(model: &UnfoldedModel) -> Self {
        Gradients {
            layers: model
                .params
                .iter()
                .map(|p| LayerGrads {
                    a: Array2::zeros(p.a.dim()),
                    bbar: Array2::zeros(p.bbar.dim()),
                    nu: 0.0,
                })
                .collect(),
        }
    }
}

/// Squared-error loss ||x* - x||^2 against the unit-norm truth; equals the
/// linear-scale NMSE.
pub fn loss(xstar: &Array1<f64>, truth: &Array1<f64>) -> f64 {
    let diff = xstar - truth;
    diff.dot(&diff)
}

/// Mean squared-error loss over a batch of output columns.
pub fn batch_loss(outputs: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let diff = outputs - truth;
    diff.iter().map(|v| v * v).sum::<f64>() / outputs.ncols() as f64
}

/// Gradient of [`batch_loss`] with respect to the network outputs.
pub fn batch_loss_grad(outputs: &Array2<f64>, truth: &Array2<f64>) -> Array2<f64> {
    (outputs - truth).mapv(|v| 2.0 * v / outputs.ncols() as f64)
}

/// Reverse-mode gradients for all layer parameters from a forward cache and
/// the upstream gradient on the normalized output (N x L).
pub fn backward(
    model: &UnfoldedModel,
    cache: &ForwardCache,
    upstream: &Array2<f64>,
    sign_grad: SignGradMode,
) -> Result<Gradients> {
    let num_layers = cache.layers.len();
    if num_layers != model.num_layers() {
        return Err(DfpcError::InvalidState(
            "forward cache does not match the model depth".into(),
        ));
    }
    if upstream.dim() != cache.pre_norm.dim() {
        return Err(DfpcError::InvalidState(format!(
            "upstream shape {:?} does not match the forward output {:?}",
            upstream.dim(),
            cache.pre_norm.dim()
        )));
    }
    let mut grads = Gradients::zeros_like(model);

    // VJP of the final normalization x* = v/||v||: (I - xhat xhat^T) u / ||v||
    let mut dx = Array2::zeros(upstream.dim());
    for (col, norm) in cache.norms.iter().enumerate() {
        let v = cache.pre_norm.column(col);
        let u = upstream.column(col);
        let xhat = v.mapv(|e| e / norm);
        let proj = xhat.dot(&u);
        let g = Array1::from_iter(
            u.iter()
                .zip(xhat.iter())
                .map(|(&ui, &xi)| (ui - xi * proj) / norm),
        );
        dx.column_mut(col).assign(&g);
    }

    for r in (0..num_layers).rev() {
        let layer = &cache.layers[r];
        let params = model.layer(r);
        let slot = if model.tied { 0 } else { r };

        // soft-threshold: pass where |s| > nu; d/dnu = -sign(s) on pass-through
        let mut ds = Array2::zeros(dx.dim());
        let mut dnu = 0.0;
        for ((idx, &s), &g) in layer
            .pre_threshold
            .indexed_iter()
            .zip(dx.iter())
        {
            if s.abs() > params.nu {
                ds[idx] = g;
                dnu += -s.signum() * g;
            }
        }
        grads.layers[slot].nu += dnu;

        // s = x + A * correction
        grads.layers[slot].a = &grads.layers[slot].a + &ds.dot(&layer.correction.t());
        let dcorr = params.a.t().dot(&ds);

        let dz = match model.variant {
            Variant::L2 => {
                // c = y (.) relu(w), w = y (.) (bbar x)
                let dh = &dcorr * &cache.signs;
                let dw = Array2::from_shape_fn(dh.dim(), |idx| {
                    if layer.pre_act[idx] > 0.0 {
                        dh[idx]
                    } else {
                        0.0
                    }
                });
                &dw * &cache.signs
            }
            Variant::L1 => match sign_grad {
                SignGradMode::Zero => Array2::zeros(dcorr.dim()),
                SignGradMode::StraightThrough => {
                    // q = y - sign(z): dq/dz = -1 inside [-1, 1]
                    Array2::from_shape_fn(dcorr.dim(), |idx| {
                        if layer.pre_act[idx].abs() <= 1.0 {
                            -dcorr[idx]
                        } else {
                            0.0
                        }
                    })
                }
            },
        };
        grads.layers[slot].bbar = &grads.layers[slot].bbar + &dz.dot(&layer.x_in.t());
        dx = &ds + &params.bbar.t().dot(&dz);
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: crate::config::DEFAULT_LR0,
            decay_rate: crate::config::DEFAULT_DECAY_RATE,
            decay_every: crate::config::DEFAULT_DECAY_EVERY,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// ADAM moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: usize,
    first: Vec<LayerGrads>,
    second: Vec<LayerGrads>,
}

impl AdamState {
    pub fn new(model: &UnfoldedModel, cfg: AdamConfig) -> Self {
        let zeros = || Gradients::zeros_like(model).layers;
        AdamState {
            cfg,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.cfg.lr0
            * self
                .cfg
                .decay_rate
                .powf(self.step as f64 / self.cfg.decay_every as f64)
    }

    /// One ADAM step over all parameter sets; nu is clamped to >= 0 after
    /// the update.
    pub fn apply(&mut self, model: &mut UnfoldedModel, grads: &Gradients) {
        self.step += 1;
        let lr = self.effective_lr();
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let eps = self.cfg.epsilon;
        for (slot, g) in grads.layers.iter().enumerate() {
            let p = &mut model.params[slot];
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];

            update_tensor(&mut p.a, &g.a, &mut m.a, &mut v.a, b1, b2, bc1, bc2, lr, eps);
            update_tensor(
                &mut p.bbar,
                &g.bbar,
                &mut m.bbar,
                &mut v.bbar,
                b1,
                b2,
                bc1,
                bc2,
                lr,
                eps,
            );

            m.nu = b1 * m.nu + (1.0 - b1) * g.nu;
            v.nu = b2 * v.nu + (1.0 - b2) * g.nu * g.nu;
            p.nu -= lr * (m.nu / bc1) / ((v.nu / bc2).sqrt() + eps);
            if p.nu < 0.0 {
                p.nu = 0.0;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        });
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub sign_grad: SignGradMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: crate::config::DEFAULT_EPOCHS,
            batch_size: crate::config::DEFAULT_BATCH_SIZE,
            seed: 0,
            validation_fraction: 0.0,
            sign_grad: SignGradMode::Zero,
        }
    }
}

/// One history row per optimizer step (validation NMSE filled on the last
/// step of each epoch when a validation split exists).
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub step: usize,
    pub epoch: usize,
    pub effective_lr: f64,
    pub train_loss: f64,
    pub val_nmse_db: Option<f64>,
}

/// Trains all layers jointly on (signs, x0, truth) columns. Deterministic
/// given the config seed.
pub fn train(
    model: &mut UnfoldedModel,
    signs: &Array2<f64>,
    x0: &Array2<f64>,
    truth: &Array2<f64>,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) -> Result<Vec<TrainRecord>> {
    let total = signs.ncols();
    if total == 0 {
        return Err(DfpcError::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 || cfg.batch_size > total {
        return Err(DfpcError::InvalidArgument(format!(
            "batch size {} must lie in 1..={total}",
            cfg.batch_size
        )));
    }
    let val_count = ((total as f64) * cfg.validation_fraction).floor() as usize;
    let train_count = total - val_count;
    if train_count == 0 {
        return Err(DfpcError::InvalidArgument(
            "validation fraction leaves no training samples".into(),
        ));
    }
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_count).collect();
        order.shuffle(&mut substream(cfg.seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size.min(train_count)) {
            let signs_b = select_columns(signs, chunk);
            let x0_b = select_columns(x0, chunk);
            let truth_b = select_columns(truth, chunk);
            let (out, cache) = forward_batched(model, &signs_b, &x0_b)?;
            let train_loss = batch_loss(&out, &truth_b);
            if !train_loss.is_finite() {
                return Err(DfpcError::Divergence {
                    step: adam.step,
                    effective_lr: adam.effective_lr(),
                });
            }
            let upstream = batch_loss_grad(&out, &truth_b);
            let grads = backward(model, &cache, &upstream, cfg.sign_grad)?;
            adam.apply(model, &grads);
            history.push(TrainRecord {
                step: adam.step,
                epoch,
                effective_lr: adam.effective_lr(),
                train_loss,
                val_nmse_db: None,
            });
        }
        if val_count > 0 {
            let idx: Vec<usize> = (train_count..total).collect();
            let signs_v = select_columns(signs, &idx);
            let x0_v = select_columns(x0, &idx);
            let truth_v = select_columns(truth, &idx);
            let (out, _) = forward_batched(model, &signs_v, &x0_v)?;
            let per_sample: Vec<f64> = (0..val_count)
                .map(|c| {
                    let diff = &out.column(c) - &truth_v.column(c);
                    let denom = truth_v.column(c).dot(&truth_v.column(c));
                    10.0 * (diff.dot(&diff) / denom).log10()
                })
                .collect();
            if let Some(last) = history.last_mut() {
                last.val_nmse_db = Some(mean_nmse_db(&per_sample));
            }
        }
    }
    Ok(history)
}

fn select_columns(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((src.nrows(), idx.len()));
    for (dst, &i) in idx.iter().enumerate() {
        out.column_mut(dst).assign(&src.column(i));
    }
    out
}
