//! Data model: sparse test signals, Gaussian sensing matrices, 1-bit
//! measurement, the two noise channels, and the NMSE metric.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{DfpcError, Result};
use crate::operators::sign_pos;

/// Per-column RNG substream: counter-based so column generation order is
/// independent of worker count.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth K-sparse signal with unit l2 norm.
#[derive(Debug, Clone)]
pub struct SparseSignal {
    pub values: Array1<f64>,
    pub support: Vec<usize>,
}

impl SparseSignal {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }
}

/// M x N sensing matrix with i.i.d. N(0, 1/M) entries.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    pub entries: Array2<f64>,
}

impl SensingMatrix {
    pub fn random(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(DfpcError::InvalidArgument(
                "sensing matrix dimensions must be positive".into(),
            ));
        }
        let mut rng = substream(seed, 0);
        let dist = Normal::new(0.0, (1.0 / m as f64).sqrt()).unwrap();
        let entries = Array2::from_shape_fn((m, n), |_| dist.sample(&mut rng));
        Ok(SensingMatrix { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Binary measurements (columns y_l) plus the pre-quantization values Phi*x_l
/// kept around for noise injection.
#[derive(Debug, Clone)]
pub struct MeasurementBatch {
    /// {-1, +1}-valued M x L matrix.
    pub signs: Array2<f64>,
    pub pre_quant: Option<Array2<f64>>,
}

impl MeasurementBatch {
    pub fn num_measurements(&self) -> usize {
        self.signs.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.signs.ncols()
    }
}

/// Noise channel applied to a measurement batch before recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    None,
    Gaussian { snr_db: f64, seed: u64 },
    Flip { flip_ratio: f64, seed: u64 },
}

impl NoiseSpec {
    pub fn apply(&self, batch: &MeasurementBatch) -> Result<MeasurementBatch> {
        match *self {
            NoiseSpec::None => Ok(batch.clone()),
            NoiseSpec::Gaussian { snr_db, seed } => add_gaussian_noise(batch, snr_db, seed),
            NoiseSpec::Flip { flip_ratio, seed } => flip_signs(batch, flip_ratio, seed),
        }
    }
}

/// Draws `l` signals of dimension `n` with exactly `k` nonzeros at uniform
/// positions, values i.i.d. standard normal, each scaled to unit l2 norm.
pub fn generate_signals(n: usize, k: usize, l: usize, seed: u64) -> Result<Vec<SparseSignal>> {
    if k == 0 || k > n {
        return Err(DfpcError::InvalidArgument(format!(
            "sparsity k={k} must satisfy 0 < k <= n={n}"
        )));
    }
    if l == 0 {
        return Err(DfpcError::InvalidArgument("signal count l must be >= 1".into()));
    }
    let mut signals = Vec::with_capacity(l);
    for col in 0..l {
        let mut rng = substream(seed, col as u64 + 1);
        let mut support = rand::seq::index::sample(&mut rng, n, k).into_vec();
        support.sort_unstable();
        let mut values = Array1::<f64>::zeros(n);
        for &idx in &support {
            values[idx] = StandardNormal.sample(&mut rng);
        }
        let norm = values.dot(&values).sqrt();
        if norm == 0.0 {
            // probability zero, but keep the invariant total
            values[support[0]] = 1.0;
        } else {
            values.mapv_inplace(|v| v / norm);
        }
        signals.push(SparseSignal { values, support });
    }
    Ok(signals)
}

/// y_l = sign(Phi x_l), elementwise, with sign(0) = +1.
pub fn measure(phi: &SensingMatrix, signals: &[SparseSignal]) -> Result<MeasurementBatch> {
    if signals.is_empty() {
        return Err(DfpcError::InvalidArgument("empty signal batch".into()));
    }
    let n = phi.cols();
    for (i, s) in signals.iter().enumerate() {
        if s.dim() != n {
            return Err(DfpcError::InvalidArgument(format!(
                "signal {i} has dimension {} but Phi has {n} columns",
                s.dim()
            )));
        }
    }
    let m = phi.rows();
    let l = signals.len();
    let mut pre_quant = Array2::zeros((m, l));
    for (col, s) in signals.iter().enumerate() {
        let y = phi.entries.dot(&s.values);
        pre_quant.column_mut(col).assign(&y);
    }
    let signs = pre_quant.mapv(sign_pos);
    Ok(MeasurementBatch {
        signs,
        pre_quant: Some(pre_quant),
    })
}

/// Adds zero-mean Gaussian noise to the pre-quantization values at the given
/// SNR and recomputes the signs. The signal power P_S is empirical per
/// column: ||Phi x_l||^2 / M.
pub fn add_gaussian_noise(batch: &MeasurementBatch, snr_db: f64, seed: u64) -> Result<MeasurementBatch> {
    let pre = batch.pre_quant.as_ref().ok_or_else(|| {
        DfpcError::InvalidState("gaussian noise needs pre-quantization values".into())
    })?;
    let m = pre.nrows();
    let mut noisy = pre.clone();
    for (col, mut column) in noisy.columns_mut().into_iter().enumerate() {
        let mut rng = substream(seed, col as u64);
        let p_s = column.dot(&column) / m as f64;
        let a_n = (p_s / 10f64.powf(snr_db / 10.0)).sqrt();
        let dist = Normal::new(0.0, a_n).unwrap();
        column.mapv_inplace(|v| v + dist.sample(&mut rng));
    }
    let signs = noisy.mapv(sign_pos);
    Ok(MeasurementBatch {
        signs,
        pre_quant: Some(noisy),
    })
}

/// Multiplies each measurement column by a fresh +-1 vector xi with exactly
/// round(flip_ratio * M) entries equal to -1, positions uniform without
/// replacement.
pub fn flip_signs(batch: &MeasurementBatch, flip_ratio: f64, seed: u64) -> Result<MeasurementBatch> {
    if !(0.0..=1.0).contains(&flip_ratio) {
        return Err(DfpcError::InvalidArgument(format!(
            "flip ratio must lie in [0,1], got {flip_ratio}"
        )));
    }
    let m = batch.num_measurements();
    let count = (flip_ratio * m as f64).round() as usize;
    let mut signs = batch.signs.clone();
    for (col, mut column) in signs.columns_mut().into_iter().enumerate() {
        let mut rng = substream(seed, col as u64);
        for idx in rand::seq::index::sample(&mut rng, m, count) {
            column[idx] = -column[idx];
        }
    }
    Ok(MeasurementBatch {
        signs,
        pre_quant: batch.pre_quant.clone(),
    })
}

/// Sentinel returned by [`nmse_db`] on an exact match; CSV output clamps to
/// this floor.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// 10 log10(||x* - x||^2 / ||x||^2). Exact match returns -inf.
pub fn nmse_db(estimate: &Array1<f64>, truth: &SparseSignal) -> Result<f64> {
    if estimate.len() != truth.dim() {
        return Err(DfpcError::InvalidArgument(format!(
            "estimate dimension {} does not match truth dimension {}",
            estimate.len(),
            truth.dim()
        )));
    }
    let denom = truth.values.dot(&truth.values);
    if denom == 0.0 {
        return Err(DfpcError::InvalidArgument("truth signal has zero norm".into()));
    }
    let diff = estimate - &truth.values;
    let num = diff.dot(&diff);
    if num == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (num / denom).log10())
}

/// Clamp for CSV reporting and dB-mean aggregation.
pub fn clamp_nmse(v: f64) -> f64 {
    v.max(NMSE_FLOOR_DB)
}

/// Mean of per-sample dB values (clamped at the floor).
pub fn mean_nmse_db(per_sample: &[f64]) -> f64 {
    per_sample.iter().map(|&v| clamp_nmse(v)).sum::<f64>() / per_sample.len() as f64
}
