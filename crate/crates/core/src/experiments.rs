//! Scripted benchmark reproductions: the layer/iteration comparison table,
//! SNR and flip-ratio robustness sweeps, and the classical-solver noise
//! comparison. Results are plain CSV; plotting is left to external tools.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::config;
use crate::dataset::Dataset;
use crate::error::{DfpcError, Result};
use crate::fpc_solvers::{backprojection, fpc_solve, FpcConfig, Variant};
use crate::model_core::{
    clamp_nmse, mean_nmse_db, nmse_db, MeasurementBatch, NoiseSpec, SensingMatrix, SparseSignal,
};
use crate::training::{train, AdamConfig, AdamState, TrainConfig};
use crate::unfolded_net::{depth_readouts, forward_batched, forward_single, init_model, UnfoldedModel};

/// One sweep point: per-sample NMSE values for one method at one setting.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub method: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub per_sample_nmse_db: Vec<f64>,
    pub mean_nmse_db: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: String,
    /// Full configuration snapshot, serialized alongside every CSV.
    pub config: Vec<(String, String)>,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    fn push(&mut self, method: &str, sweep_param: &str, sweep_value: f64, seed: u64, per_sample: Vec<f64>) {
        let mean = mean_nmse_db(&per_sample);
        self.rows.push(ResultRow {
            method: method.to_string(),
            sweep_param: sweep_param.to_string(),
            sweep_value,
            seed,
            per_sample_nmse_db: per_sample,
            mean_nmse_db: mean,
        });
    }

    /// Per-sample CSV: `experiment,method,sweep_param,sweep_value,seed,sample_index,nmse_db`.
    pub fn write_detail_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "experiment,method,sweep_param,sweep_value,seed,sample_index,nmse_db")?;
        for row in &self.rows {
            for (i, &v) in row.per_sample_nmse_db.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    self.experiment,
                    row.method,
                    row.sweep_param,
                    row.sweep_value,
                    row.seed,
                    i,
                    clamp_nmse(v)
                )?;
            }
        }
        Ok(())
    }

    /// Summary CSV: `experiment,method,sweep_param,sweep_value,seed,mean_nmse_db,n_samples`.
    pub fn write_summary_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "experiment,method,sweep_param,sweep_value,seed,mean_nmse_db,n_samples")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.experiment,
                row.method,
                row.sweep_param,
                row.sweep_value,
                row.seed,
                row.mean_nmse_db,
                row.per_sample_nmse_db.len()
            )?;
        }
        Ok(())
    }

    pub fn write_csv_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut detail = std::fs::File::create(dir.join(format!("{}_samples.csv", self.experiment)))?;
        self.write_detail_csv(&mut detail)?;
        let mut summary = std::fs::File::create(dir.join(format!("{}_summary.csv", self.experiment)))?;
        self.write_summary_csv(&mut summary)?;
        Ok(())
    }

    pub fn mean_for(&self, method: &str, sweep_value: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sweep_value == sweep_value)
            .map(|r| r.mean_nmse_db)
    }
}

/// Test signals come from a seed-disjoint stream so no test index collides
/// with a training index.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0xA5A5_5A5A_0F0F_F0F0
}

/// Shared train/test problem instance on the benchmark dimensions: one Phi
/// per seed, clean measurements for both splits.
pub struct BenchSetup {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn bench_setup(seed: u64) -> Result<BenchSetup> {
    let train = Dataset::generate(config::BENCH_N, config::BENCH_M, config::BENCH_K, config::BENCH_L, seed)?;
    // same Phi for train and test: trained weights are Phi-specific
    let test_signals = crate::model_core::generate_signals(
        config::BENCH_N,
        config::BENCH_K,
        config::BENCH_L,
        test_seed(seed),
    )?;
    let test_measurements = crate::model_core::measure(&train.phi, &test_signals)?;
    let test = Dataset {
        n: config::BENCH_N,
        m: config::BENCH_M,
        k: config::BENCH_K,
        l: config::BENCH_L,
        seed: test_seed(seed),
        phi: train.phi.clone(),
        signals: test_signals,
        measurements: test_measurements,
    };
    Ok(BenchSetup { train, test })
}

pub fn backprojection_batch(phi: &SensingMatrix, signs: &Array2<f64>) -> Array2<f64> {
    let mut x0 = Array2::zeros((phi.cols(), signs.ncols()));
    for (col, y) in signs.columns().into_iter().enumerate() {
        x0.column_mut(col).assign(&backprojection(phi, &y.to_owned()));
    }
    x0
}

pub fn truth_matrix(signals: &[SparseSignal]) -> Array2<f64> {
    let n = signals[0].dim();
    let mut t = Array2::zeros((n, signals.len()));
    for (col, s) in signals.iter().enumerate() {
        t.column_mut(col).assign(&s.values);
    }
    t
}

/// Trains an unfolded model on a clean dataset with the default schedule.
pub fn train_unfolded(
    dataset: &Dataset,
    variant: Variant,
    num_layers: usize,
    train_cfg: &TrainConfig,
    adam_cfg: AdamConfig,
) -> Result<UnfoldedModel> {
    let (tau, nu0) = config::net_defaults(variant);
    let mut model = init_model(&dataset.phi, variant, num_layers, tau, nu0, false)?;
    let signs = dataset.measurements.signs.clone();
    let x0 = backprojection_batch(&dataset.phi, &signs);
    let truth = truth_matrix(&dataset.signals);
    let mut adam = AdamState::new(&model, adam_cfg);
    train(&mut model, &signs, &x0, &truth, train_cfg, &mut adam)?;
    Ok(model)
}

/// Per-sample NMSE of a model on a (possibly noisy) measurement batch.
///
/// Heavily corrupted measurements can drive every entry of a column under
/// the thresholds, which the forward pass reports as a zero-output error.
/// For evaluation that is a legitimate outcome, not a fault: the batch is
/// re-run column by column and a dead column is scored as the zero
/// estimate, i.e. NMSE = 0 dB against unit-norm truth.
pub fn eval_model(
    model: &UnfoldedModel,
    phi: &SensingMatrix,
    batch: &MeasurementBatch,
    signals: &[SparseSignal],
) -> Result<Vec<f64>> {
    let x0 = backprojection_batch(phi, &batch.signs);
    match forward_batched(model, &batch.signs, &x0) {
        Ok((out, _)) => signals
            .iter()
            .enumerate()
            .map(|(col, s)| nmse_db(&out.column(col).to_owned(), s))
            .collect(),
        Err(DfpcError::ZeroOutput { .. }) => signals
            .iter()
            .enumerate()
            .map(|(col, s)| {
                let y = batch.signs.column(col).to_owned();
                let x0_col = x0.column(col).to_owned();
                match forward_single(model, &y, &x0_col) {
                    Ok((xhat, _)) => nmse_db(&xhat, s),
                    Err(DfpcError::ZeroOutput { .. }) => Ok(0.0),
                    Err(e) => Err(e),
                }
            })
            .collect(),
        Err(e) => Err(e),
    }
}

/// Per-sample NMSE of a classical FPC run on each column, in fixed column
/// order (columns solved in parallel, reduced in order).
pub fn eval_fpc(
    phi: &SensingMatrix,
    batch: &MeasurementBatch,
    signals: &[SparseSignal],
    cfg: &FpcConfig,
) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = (0..signals.len())
        .into_par_iter()
        .map(|col| {
            let y = batch.signs.column(col).to_owned();
            let trace = fpc_solve(phi, &y, cfg, None, None)?;
            nmse_db(trace.final_iterate(), &signals[col])
        })
        .collect();
    results.into_iter().collect()
}

/// Default ADAM schedule with the variant's calibrated step size.
pub fn default_adam(variant: Variant) -> AdamConfig {
    AdamConfig {
        lr0: config::lr0_default(variant),
        ..AdamConfig::default()
    }
}

fn default_train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn config_snapshot(seed: u64, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut cfg = vec![
        ("n".to_string(), config::BENCH_N.to_string()),
        ("m".to_string(), config::BENCH_M.to_string()),
        ("k".to_string(), config::BENCH_K.to_string()),
        ("l".to_string(), config::BENCH_L.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("test_seed".to_string(), test_seed(seed).to_string()),
        ("tau".to_string(), config::DEFAULT_TAU.to_string()),
        ("nu".to_string(), config::DEFAULT_NU.to_string()),
        ("tau_l1".to_string(), config::DEFAULT_TAU_L1.to_string()),
        ("nu_l1".to_string(), config::DEFAULT_NU_L1.to_string()),
        ("net_tau".to_string(), config::DEFAULT_NET_TAU.to_string()),
        ("net_nu0".to_string(), config::DEFAULT_NET_NU0.to_string()),
        ("net_tau_l1".to_string(), config::DEFAULT_NET_TAU_L1.to_string()),
        ("net_nu0_l1".to_string(), config::DEFAULT_NET_NU0_L1.to_string()),
        ("lr0".to_string(), config::DEFAULT_LR0.to_string()),
        ("lr0_l1".to_string(), config::DEFAULT_LR0_L1.to_string()),
        ("decay_rate".to_string(), config::DEFAULT_DECAY_RATE.to_string()),
        ("decay_every".to_string(), config::DEFAULT_DECAY_EVERY.to_string()),
        ("epochs".to_string(), config::DEFAULT_EPOCHS.to_string()),
        ("batch_size".to_string(), config::DEFAULT_BATCH_SIZE.to_string()),
        ("nmse_aggregation".to_string(), "db_mean".to_string()),
    ];
    for (k, v) in extra {
        cfg.push((k.to_string(), v.clone()));
    }
    cfg
}

/// Iteration-by-iteration comparison of the classical FPC-l2 solver against
/// the per-depth readouts of one trained 20-layer network (or 20 separate
/// trainings with `retrain_per_depth`).
pub fn run_table1(seed: u64, retrain_per_depth: bool) -> Result<ExperimentResult> {
    let setup = bench_setup(seed)?;
    let mut result = ExperimentResult {
        experiment: "table1".to_string(),
        config: config_snapshot(seed, &[("retrain_per_depth", retrain_per_depth.to_string())]),
        rows: Vec::new(),
    };

    // classical FPC-l2, per-iteration NMSE on the test set
    let cfg = FpcConfig::new(Variant::L2, config::DEFAULT_TAU, config::DEFAULT_NU, config::BENCH_LAYERS)?;
    let traces: Vec<Vec<f64>> = (0..setup.test.l)
        .into_par_iter()
        .map(|col| {
            let y = setup.test.measurements.signs.column(col).to_owned();
            let trace = fpc_solve(&setup.test.phi, &y, &cfg, None, Some(&setup.test.signals[col]))?;
            Ok(trace.nmse_db_per_iter.unwrap())
        })
        .collect::<Result<_>>()?;
    for iter in 0..config::BENCH_LAYERS {
        let per_sample: Vec<f64> = traces.iter().map(|t| t[iter]).collect();
        result.push("fpc-l2", "iteration", (iter + 1) as f64, seed, per_sample);
    }

    let test_signs = &setup.test.measurements.signs;
    let test_x0 = backprojection_batch(&setup.test.phi, test_signs);
    if retrain_per_depth {
        for depth in 1..=config::BENCH_LAYERS {
            let model = train_unfolded(
                &setup.train,
                Variant::L2,
                depth,
                &default_train_cfg(seed),
                default_adam(Variant::L2),
            )?;
            let per_sample =
                eval_model(&model, &setup.test.phi, &setup.test.measurements, &setup.test.signals)?;
            result.push("deepfpc-l2", "layers", depth as f64, seed, per_sample);
        }
    } else {
        let model = train_unfolded(
            &setup.train,
            Variant::L2,
            config::BENCH_LAYERS,
            &default_train_cfg(seed),
            default_adam(Variant::L2),
        )?;
        let (_, cache) = forward_batched(&model, test_signs, &test_x0)?;
        let readouts = depth_readouts(&cache)?;
        for (depth_idx, out) in readouts.iter().enumerate() {
            let per_sample: Vec<f64> = setup
                .test
                .signals
                .iter()
                .enumerate()
                .map(|(col, s)| nmse_db(&out.column(col).to_owned(), s))
                .collect::<Result<_>>()?;
            result.push("deepfpc-l2", "layers", (depth_idx + 1) as f64, seed, per_sample);
        }
    }
    Ok(result)
}

/// Trains both unfolded variants on clean data, then evaluates on test sets
/// corrupted by Gaussian measurement noise at each SNR.
pub fn run_snr_sweep(snr_list_db: &[f64], seed: u64) -> Result<ExperimentResult> {
    run_learned_sweep(
        "snr_sweep",
        "snr_db",
        snr_list_db,
        seed,
        |snr_db, point| NoiseSpec::Gaussian {
            snr_db,
            seed: seed.wrapping_add(1000 + point as u64),
        },
    )
}

/// Same protocol with the sign-flip channel.
pub fn run_flip_sweep(ratio_list: &[f64], seed: u64) -> Result<ExperimentResult> {
    for &r in ratio_list {
        if !(0.0..=1.0).contains(&r) {
            return Err(DfpcError::InvalidArgument(format!("flip ratio {r} out of range")));
        }
    }
    run_learned_sweep("flip_sweep", "flip_ratio", ratio_list, seed, |ratio, point| {
        NoiseSpec::Flip {
            flip_ratio: ratio,
            seed: seed.wrapping_add(2000 + point as u64),
        }
    })
}

fn run_learned_sweep(
    name: &str,
    sweep_param: &str,
    values: &[f64],
    seed: u64,
    noise_for: impl Fn(f64, usize) -> NoiseSpec,
) -> Result<ExperimentResult> {
    let setup = bench_setup(seed)?;
    let mut result = ExperimentResult {
        experiment: name.to_string(),
        config: config_snapshot(seed, &[(sweep_param, format!("{values:?}"))]),
        rows: Vec::new(),
    };
    let model_l2 = train_unfolded(
        &setup.train,
        Variant::L2,
        config::BENCH_LAYERS,
        &default_train_cfg(seed),
        default_adam(Variant::L2),
    )?;
    let model_l1 = train_unfolded(
        &setup.train,
        Variant::L1,
        config::BENCH_LAYERS,
        &default_train_cfg(seed),
        default_adam(Variant::L1),
    )?;
    for (point, &value) in values.iter().enumerate() {
        let noisy = noise_for(value, point).apply(&setup.test.measurements)?;
        let l2 = eval_model(&model_l2, &setup.test.phi, &noisy, &setup.test.signals)?;
        let l1 = eval_model(&model_l1, &setup.test.phi, &noisy, &setup.test.signals)?;
        result.push("deepfpc-l2", sweep_param, value, seed, l2);
        result.push("deepfpc-l1", sweep_param, value, seed, l1);
    }
    Ok(result)
}

/// Classical FPC-l1 vs FPC-l2 (no learning) under both noise channels.
pub fn run_algorithm_noise_comparison(seed: u64) -> Result<ExperimentResult> {
    let setup = bench_setup(seed)?;
    let mut result = ExperimentResult {
        experiment: "compare_fpc".to_string(),
        config: config_snapshot(
            seed,
            &[
                ("snr_grid_db", format!("{:?}", config::SNR_GRID_DB)),
                ("flip_grid", format!("{:?}", config::FLIP_GRID)),
            ],
        ),
        rows: Vec::new(),
    };
    let iters = config::BENCH_FPC_ITERS;
    let (tau1, nu1) = config::fpc_defaults(Variant::L1);
    let (tau2, nu2) = config::fpc_defaults(Variant::L2);
    let cfgs = [
        ("fpc-l1", FpcConfig::new(Variant::L1, tau1, nu1, iters)?),
        ("fpc-l2", FpcConfig::new(Variant::L2, tau2, nu2, iters)?),
    ];
    for (point, &snr) in config::SNR_GRID_DB.iter().enumerate() {
        let noisy = NoiseSpec::Gaussian {
            snr_db: snr,
            seed: seed.wrapping_add(3000 + point as u64),
        }
        .apply(&setup.test.measurements)?;
        for (method, cfg) in &cfgs {
            let per_sample = eval_fpc(&setup.test.phi, &noisy, &setup.test.signals, cfg)?;
            result.push(method, "snr_db", snr, seed, per_sample);
        }
    }
    for (point, &ratio) in config::FLIP_GRID.iter().enumerate() {
        let noisy = NoiseSpec::Flip {
            flip_ratio: ratio,
            seed: seed.wrapping_add(4000 + point as u64),
        }
        .apply(&setup.test.measurements)?;
        for (method, cfg) in &cfgs {
            let per_sample = eval_fpc(&setup.test.phi, &noisy, &setup.test.signals, cfg)?;
            result.push(method, "flip_ratio", ratio, seed, per_sample);
        }
    }
    Ok(result)
}

/// FPC baseline on the clean benchmark test set at a fixed iteration budget.
pub fn fpc_baseline(seed: u64, variant: Variant, iters: usize) -> Result<Vec<f64>> {
    let setup = bench_setup(seed)?;
    let (tau, nu) = config::fpc_defaults(variant);
    let cfg = FpcConfig::new(variant, tau, nu, iters)?;
    eval_fpc(&setup.test.phi, &setup.test.measurements, &setup.test.signals, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_test_signals_are_disjoint_streams() {
        let setup = bench_setup(3).unwrap();
        assert_ne!(setup.train.seed, setup.test.seed);
        // identical indices must not produce identical signals
        for (a, b) in setup.train.signals.iter().zip(setup.test.signals.iter()) {
            assert_ne!(a.values, b.values);
        }
        assert_eq!(setup.train.phi.entries, setup.test.phi.entries);
    }

    #[test]
    fn csv_schemas() {
        let result = ExperimentResult {
            experiment: "demo".to_string(),
            config: vec![],
            rows: vec![ResultRow {
                method: "fpc-l2".to_string(),
                sweep_param: "iteration".to_string(),
                sweep_value: 1.0,
                seed: 7,
                per_sample_nmse_db: vec![-3.0, -5.0],
                mean_nmse_db: -4.0,
            }],
        };
        let mut detail = Vec::new();
        result.write_detail_csv(&mut detail).unwrap();
        let text = String::from_utf8(detail).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,method,sweep_param,sweep_value,seed,sample_index,nmse_db"
        );
        assert_eq!(lines.next().unwrap(), "demo,fpc-l2,iteration,1,7,0,-3");
        assert_eq!(lines.next().unwrap(), "demo,fpc-l2,iteration,1,7,1,-5");

        let mut summary = Vec::new();
        result.write_summary_csv(&mut summary).unwrap();
        let text = String::from_utf8(summary).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,method,sweep_param,sweep_value,seed,mean_nmse_db,n_samples"
        );
        assert_eq!(lines.next().unwrap(), "demo,fpc-l2,iteration,1,7,-4,2");
    }

    #[test]
    fn summary_mean_recomputable_from_detail() {
        let per_sample = vec![-3.5, -7.25, f64::NEG_INFINITY];
        let mean = mean_nmse_db(&per_sample);
        let manual =
            (clamp_nmse(-3.5) + clamp_nmse(-7.25) + clamp_nmse(f64::NEG_INFINITY)) / 3.0;
        assert_eq!(mean, manual);
    }
}
