//! Deep-unfolded FPC networks: per-layer trainable weights with a shortcut
//! connection, normalization after the final layer only, and a batched
//! forward pass built on Hadamard products instead of per-sample diagonal
//! matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{DfpcError, Result};
use crate::fpc_solvers::Variant;
use crate::model_core::SensingMatrix;
use crate::operators::{relu, sign_pos, soft_threshold_scalar};

/// Trainable weights of one unfolded layer.
///
/// `a` is N x M (init tau * Phi^T). `bbar` is M x N: -Phi for the l2 variant
/// (the relu argument), Phi for the l1 variant (the sign argument).
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub a: Array2<f64>,
    pub bbar: Array2<f64>,
    pub nu: f64,
}

#[derive(Debug, Clone)]
pub struct UnfoldedModel {
    pub variant: Variant,
    pub tied: bool,
    num_layers: usize,
    /// One entry per layer when untied, a single shared entry when tied.
    pub params: Vec<LayerParams>,
}

impl UnfoldedModel {
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn layer(&self, r: usize) -> &LayerParams {
        if self.tied {
            &self.params[0]
        } else {
            &self.params[r]
        }
    }

    pub fn signal_dim(&self) -> usize {
        self.params[0].a.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.params[0].a.ncols()
    }
}

/// Initializes every layer to the algorithm's matrices so that an untrained
/// model reproduces the truncated iteration (renormalization only at the end).
pub fn init_model(
    phi: &SensingMatrix,
    variant: Variant,
    num_layers: usize,
    tau: f64,
    nu0: f64,
    tied: bool,
) -> Result<UnfoldedModel> {
    if num_layers == 0 {
        return Err(DfpcError::InvalidArgument("model needs at least one layer".into()));
    }
    if !(nu0 >= 0.0) {
        return Err(DfpcError::InvalidArgument(format!("nu0 must be nonnegative, got {nu0}")));
    }
    let a = phi.entries.t().mapv(|v| tau * v);
    let bbar = match variant {
        Variant::L2 => phi.entries.mapv(|v| -v),
        Variant::L1 => phi.entries.clone(),
    };
    let layer = LayerParams { a, bbar, nu: nu0 };
    let stored = if tied { 1 } else { num_layers };
    Ok(UnfoldedModel {
        variant,
        tied,
        num_layers,
        params: vec![layer; stored],
    })
}

/// Per-layer activations cached by the forward passes for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Layer input, N x L.
    pub x_in: Array2<f64>,
    /// Pre-activation: w = y (.) bbar x for l2, z = b x for l1. M x L.
    pub pre_act: Array2<f64>,
    /// Argument of A: c = y (.) relu(w) for l2, q = y - sign(z) for l1. M x L.
    pub correction: Array2<f64>,
    /// Pre-threshold shortcut sum s = x + A*correction. N x L.
    pub pre_threshold: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub signs: Array2<f64>,
    pub layers: Vec<LayerCache>,
    /// Output of the last layer before the final normalization, N x L.
    pub pre_norm: Array2<f64>,
    /// Per-column norms of `pre_norm`.
    pub norms: Vec<f64>,
}

/// Single-sample forward pass, straight from the layer equations with vector
/// arithmetic. Kept independent of the batched path so the two can cross-check
/// each other.
pub fn forward_single(
    model: &UnfoldedModel,
    y: &Array1<f64>,
    x0: &Array1<f64>,
) -> Result<(Array1<f64>, ForwardCache)> {
    if x0.iter().all(|&v| v == 0.0) {
        return Err(DfpcError::InvalidArgument("x0 must be nonzero".into()));
    }
    let mut x = x0.clone();
    let mut layers = Vec::with_capacity(model.num_layers);
    for r in 0..model.num_layers {
        let p = model.layer(r);
        let x_in = x.clone();
        let bx = p.bbar.dot(&x);
        let (pre_act, correction) = match model.variant {
            Variant::L2 => {
                let w = &bx * y;
                let c = Array1::from_iter(w.iter().zip(y.iter()).map(|(&wi, &yi)| yi * relu(wi)));
                (w, c)
            }
            Variant::L1 => {
                let q = Array1::from_iter(bx.iter().zip(y.iter()).map(|(&zi, &yi)| yi - sign_pos(zi)));
                (bx, q)
            }
        };
        let s = &x + &p.a.dot(&correction);
        x = s.mapv(|v| soft_threshold_scalar(v, p.nu));
        layers.push(LayerCache {
            x_in: column(&x_in),
            pre_act: column(&pre_act),
            correction: column(&correction),
            pre_threshold: column(&s),
        });
    }
    let norm = x.dot(&x).sqrt();
    if norm == 0.0 {
        return Err(DfpcError::ZeroOutput { column: 0 });
    }
    let out = x.mapv(|v| v / norm);
    let cache = ForwardCache {
        signs: column(y),
        layers,
        pre_norm: column(&x),
        norms: vec![norm],
    };
    Ok((out, cache))
}

fn column(v: &Array1<f64>) -> Array2<f64> {
    v.view().insert_axis(Axis(1)).to_owned()
}

/// Materialized extended matrices of the batched formulation. Built only
/// where a test needs the explicit block structure; the batched forward keeps
/// Y_ex implicit as a broadcast of the M x L sign matrix.
#[derive(Debug, Clone)]
pub struct ExtendedBatch {
    /// (M*L) x N; row block l is Yhat_l (row m constant, value y_ml).
    pub y_ex: Array2<f64>,
    /// (M*L) x N; bbar replicated L times vertically.
    pub b_ex: Array2<f64>,
    /// N x (M*L); each x_l replicated M times horizontally.
    pub x_ex: Array2<f64>,
}

pub fn build_extended(
    y_batch: &Array2<f64>,
    bbar: &Array2<f64>,
    x_batch: &Array2<f64>,
) -> ExtendedBatch {
    let (m, l) = y_batch.dim();
    let n = bbar.ncols();
    let mut y_ex = Array2::zeros((m * l, n));
    let mut b_ex = Array2::zeros((m * l, n));
    let mut x_ex = Array2::zeros((n, m * l));
    for li in 0..l {
        for mi in 0..m {
            let row = li * m + mi;
            let y_val = y_batch[(mi, li)];
            for ni in 0..n {
                y_ex[(row, ni)] = y_val;
                b_ex[(row, ni)] = bbar[(mi, ni)];
                x_ex[(ni, row)] = x_batch[(ni, li)];
            }
        }
    }
    ExtendedBatch { y_ex, b_ex, x_ex }
}

/// Batched forward over all L columns at once. Column l of the result equals
/// `forward_single` on (y_l, x0_l); the sign matrix enters only through
/// Hadamard products.
pub fn forward_batched(
    model: &UnfoldedModel,
    y_batch: &Array2<f64>,
    x0_batch: &Array2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let (m, l) = y_batch.dim();
    let n = x0_batch.nrows();
    if x0_batch.ncols() != l || m != model.measurement_dim() || n != model.signal_dim() {
        return Err(DfpcError::InvalidArgument(format!(
            "batch shape mismatch: y is {m}x{l}, x0 is {}x{}",
            x0_batch.nrows(),
            x0_batch.ncols()
        )));
    }
    for (col, c) in x0_batch.columns().into_iter().enumerate() {
        if c.iter().all(|&v| v == 0.0) {
            return Err(DfpcError::InvalidArgument(format!("x0 column {col} is zero")));
        }
    }
    let mut x = x0_batch.clone();
    let mut layers = Vec::with_capacity(model.num_layers);
    for r in 0..model.num_layers {
        let p = model.layer(r);
        let x_in = x.clone();
        let bx = p.bbar.dot(&x);
        let (pre_act, correction) = match model.variant {
            Variant::L2 => {
                let w = &bx * y_batch;
                let c = y_batch * &w.mapv(relu);
                (w, c)
            }
            Variant::L1 => {
                let q = y_batch - &bx.mapv(sign_pos);
                (bx, q)
            }
        };
        let s = &x + &p.a.dot(&correction);
        x = s.mapv(|v| soft_threshold_scalar(v, p.nu));
        layers.push(LayerCache {
            x_in,
            pre_act,
            correction,
            pre_threshold: s,
        });
    }
    let mut norms = Vec::with_capacity(l);
    let mut out = x.clone();
    for (col, mut c) in out.columns_mut().into_iter().enumerate() {
        let norm = c.dot(&c).sqrt();
        if norm == 0.0 {
            return Err(DfpcError::ZeroOutput { column: col });
        }
        c.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    let cache = ForwardCache {
        signs: y_batch.clone(),
        layers,
        pre_norm: x,
        norms,
    };
    Ok((out, cache))
}

/// Normalized per-depth readouts of a forward pass: entry r is the network
/// output truncated after r+1 layers (final normalization applied to the
/// truncation). Errors if a truncated column is zero.
pub fn depth_readouts(cache: &ForwardCache) -> Result<Vec<Array2<f64>>> {
    let total = cache.layers.len();
    let mut outs = Vec::with_capacity(total);
    for r in 0..total {
        let raw = if r + 1 < total {
            &cache.layers[r + 1].x_in
        } else {
            &cache.pre_norm
        };
        let mut out = raw.clone();
        for (col, mut c) in out.columns_mut().into_iter().enumerate() {
            let norm = c.dot(&c).sqrt();
            if norm == 0.0 {
                return Err(DfpcError::ZeroOutput { column: col });
            }
            c.mapv_inplace(|v| v / norm);
        }
        outs.push(out);
    }
    Ok(outs)
}

// --- DFPC-MODEL v1 weight files -------------------------------------------

pub fn write_model(model: &UnfoldedModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "magic=DFPC-MODEL\nversion=1\nvariant={}\nlayers={}\nn={}\nm={}\ntied={}\n\n",
        model.variant,
        model.num_layers,
        model.signal_dim(),
        model.measurement_dim(),
        if model.tied { 1 } else { 0 }
    )?;
    for r in 0..model.num_layers {
        let p = model.layer(r);
        for v in p.a.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in p.bbar.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&p.nu.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<UnfoldedModel> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    let find = |key: &str| -> Result<String> {
        header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| DfpcError::Format(format!("missing header key `{key}`")))
    };
    if find("magic")? != "DFPC-MODEL" {
        return Err(DfpcError::Format("bad magic for model file".into()));
    }
    if find("version")? != "1" {
        return Err(DfpcError::Format("unsupported DFPC-MODEL version".into()));
    }
    let variant: Variant = find("variant")?.parse()?;
    let parse_usize = |s: String, key: &str| {
        s.parse::<usize>()
            .map_err(|e| DfpcError::Format(format!("bad `{key}`: {e}")))
    };
    let num_layers = parse_usize(find("layers")?, "layers")?;
    let n = parse_usize(find("n")?, "n")?;
    let m = parse_usize(find("m")?, "m")?;
    let tied = match find("tied")?.as_str() {
        "0" => false,
        "1" => true,
        other => return Err(DfpcError::Format(format!("bad tied flag `{other}`"))),
    };
    if num_layers == 0 || n == 0 || m == 0 {
        return Err(DfpcError::Format("degenerate model dimensions".into()));
    }
    let mut all = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let a_vals = read_f64s(&mut r, n * m)?;
        let b_vals = read_f64s(&mut r, m * n)?;
        let nu = read_f64s(&mut r, 1)?[0];
        if !(nu >= 0.0) {
            return Err(DfpcError::Format(format!("negative nu {nu} in model file")));
        }
        all.push(LayerParams {
            a: Array2::from_shape_vec((n, m), a_vals).map_err(|e| DfpcError::Format(e.to_string()))?,
            bbar: Array2::from_shape_vec((m, n), b_vals)
                .map_err(|e| DfpcError::Format(e.to_string()))?,
            nu,
        });
    }
    let params = if tied { vec![all.swap_remove(0)] } else { all };
    Ok(UnfoldedModel {
        variant,
        tied,
        num_layers,
        params,
    })
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<(String, String)>> {
    let mut lines = Vec::new();
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            if line.is_empty() {
                break;
            }
            let text = String::from_utf8(std::mem::take(&mut line))
                .map_err(|e| DfpcError::Format(e.to_string()))?;
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| DfpcError::Format(format!("bad header line `{text}`")))?;
            lines.push((key.to_string(), value.to_string()));
        } else {
            line.push(byte[0]);
        }
    }
    Ok(lines)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
