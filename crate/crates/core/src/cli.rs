//! Command-line front end: data generation, solving, training, evaluation,
//! and the scripted sweeps. Every run writes a `run-config` provenance file
//! with the fully resolved key=value settings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config;
use crate::dataset::Dataset;
use crate::error::{DfpcError, Result};
use crate::experiments::{
    self, backprojection_batch, eval_fpc, truth_matrix, ExperimentResult, ResultRow,
};
use crate::fpc_solvers::{FpcConfig, Variant};
use crate::model_core::{mean_nmse_db, nmse_db, NoiseSpec};
use crate::training::{train, AdamConfig, AdamState, SignGradMode, TrainConfig};
use crate::unfolded_net::{forward_batched, init_model, read_model, write_model};

#[derive(Parser, Debug)]
#[command(name = "dfpc", about = "1-bit compressed sensing: FPC solvers and deep-unfolded networks", version)]
pub struct Cli {
    /// Worker threads (env fallback: DFPC_THREADS). Default 1 for
    /// deterministic output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Optional key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a DFPC-DATA problem instance (Phi, signals, measurements).
    GenData {
        #[arg(long, default_value_t = config::BENCH_N)]
        n: usize,
        #[arg(long, default_value_t = config::BENCH_M)]
        m: usize,
        #[arg(long, default_value_t = config::BENCH_K)]
        k: usize,
        #[arg(long, default_value_t = config::BENCH_L)]
        l: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a classical FPC solver over a dataset and report per-sample NMSE.
    FpcRun {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an unfolded network on a dataset and write a DFPC-MODEL file.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        decay_every: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        nu0: Option<f64>,
        #[arg(long, default_value_t = false)]
        tied: bool,
        /// Use the straight-through sign gradient in the l1 variant.
        #[arg(long, default_value_t = false)]
        straight_through: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Loss-history CSV (default: `<out>.history.csv`).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a trained model on a dataset, optionally through a noise
    /// channel.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        flip_ratio: Option<f64>,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Layer/iteration comparison: FPC-l2 vs a trained DeepFPC-l2.
    Table1 {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Train a separate network per depth instead of reading out one
        /// 20-layer network.
        #[arg(long, default_value_t = false)]
        retrain_per_depth: bool,
    },
    /// Gaussian-noise robustness sweep over SNR for both unfolded variants.
    SweepSnr {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated SNR values in dB.
        #[arg(long)]
        snrs: Option<String>,
    },
    /// Sign-flip robustness sweep for both unfolded variants.
    SweepFlip {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated flip ratios in [0, 0.3].
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Classical FPC-l1 vs FPC-l2 under both noise channels.
    CompareFpc {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Runs the CLI; returns the process exit code (0 success, 1 usage error,
/// 2 runtime error).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("DFPC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok(); // already-built pool (e.g. in tests) is fine
    let file_cfg = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => BTreeMap::new(),
    };
    let ctx = Ctx { file_cfg, threads };
    match cli.command {
        Command::GenData { n, m, k, l, seed, out } => gen_data(&ctx, n, m, k, l, seed, &out),
        Command::FpcRun {
            variant,
            iters,
            tau,
            nu,
            data,
            out,
        } => fpc_run(&ctx, variant, iters, tau, nu, &data, &out),
        Command::Train {
            variant,
            layers,
            data,
            epochs,
            lr0,
            decay,
            decay_every,
            batch_size,
            tau,
            nu0,
            tied,
            straight_through,
            seed,
            out,
            history,
        } => train_cmd(
            &ctx,
            variant,
            layers,
            &data,
            epochs,
            lr0,
            decay,
            decay_every,
            batch_size,
            tau,
            nu0,
            tied,
            straight_through,
            seed,
            &out,
            history,
        ),
        Command::Eval {
            model,
            data,
            out,
            snr_db,
            flip_ratio,
            noise_seed,
        } => eval_cmd(&ctx, &model, &data, &out, snr_db, flip_ratio, noise_seed),
        Command::Table1 {
            seed,
            out_dir,
            retrain_per_depth,
        } => {
            let seed = ctx.resolve("seed", seed, 7);
            let result = experiments::run_table1(seed, retrain_per_depth)?;
            write_experiment(&ctx, &result, &out_dir)
        }
        Command::SweepSnr { seed, out_dir, snrs } => {
            let seed = ctx.resolve("seed", seed, 7);
            let grid = match snrs {
                Some(list) => parse_grid(&list)?,
                None => config::SNR_GRID_DB.to_vec(),
            };
            let result = experiments::run_snr_sweep(&grid, seed)?;
            write_experiment(&ctx, &result, &out_dir)
        }
        Command::SweepFlip { seed, out_dir, ratios } => {
            let seed = ctx.resolve("seed", seed, 7);
            let grid = match ratios {
                Some(list) => parse_grid(&list)?,
                None => config::FLIP_GRID.to_vec(),
            };
            let result = experiments::run_flip_sweep(&grid, seed)?;
            write_experiment(&ctx, &result, &out_dir)
        }
        Command::CompareFpc { seed, out_dir } => {
            let seed = ctx.resolve("seed", seed, 7);
            let result = experiments::run_algorithm_noise_comparison(seed)?;
            write_experiment(&ctx, &result, &out_dir)
        }
    }
}

struct Ctx {
    file_cfg: BTreeMap<String, String>,
    threads: usize,
}

impl Ctx {
    /// Flag value, else config-file value, else default.
    fn resolve<T: std::str::FromStr + Copy>(&self, key: &str, flag: Option<T>, default: T) -> T {
        flag.or_else(|| self.file_cfg.get(key).and_then(|v| v.parse().ok()))
            .unwrap_or(default)
    }
}

/// Plain-text `key=value` lines, `#` comments.
fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            DfpcError::Format(format!("config line {} is not key=value: `{line}`", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_grid(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| DfpcError::InvalidArgument(format!("bad grid value `{s}`: {e}")))
        })
        .collect()
}

fn write_run_config(path: &Path, threads: usize, entries: &[(String, String)]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "# dfpc run configuration (replayable provenance)")?;
    writeln!(f, "threads={threads}")?;
    for (k, v) in entries {
        writeln!(f, "{k}={v}")?;
    }
    Ok(())
}

/// Sibling provenance file for single-file outputs.
fn sibling_run_config(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run-config");
    out.with_file_name(name)
}

fn write_experiment(ctx: &Ctx, result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    result.write_csv_files(out_dir)?;
    let mut entries = vec![("experiment".to_string(), result.experiment.clone())];
    entries.extend(result.config.iter().cloned());
    write_run_config(&out_dir.join("run-config"), ctx.threads, &entries)?;
    Ok(())
}

fn gen_data(
    ctx: &Ctx,
    n: usize,
    m: usize,
    k: usize,
    l: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let seed = ctx.resolve("seed", seed, 7);
    let ds = Dataset::generate(n, m, k, l, seed)?;
    ds.write(out)?;
    write_run_config(
        &sibling_run_config(out),
        ctx.threads,
        &[
            ("command".to_string(), "gen-data".to_string()),
            ("n".to_string(), n.to_string()),
            ("m".to_string(), m.to_string()),
            ("k".to_string(), k.to_string()),
            ("l".to_string(), l.to_string()),
            ("seed".to_string(), seed.to_string()),
        ],
    )?;
    println!("wrote {} (n={n} m={m} k={k} l={l} seed={seed})", out.display());
    Ok(())
}

fn fpc_run(
    ctx: &Ctx,
    variant: Variant,
    iters: Option<usize>,
    tau: Option<f64>,
    nu: Option<f64>,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let iters = ctx.resolve("iters", iters, config::BENCH_FPC_ITERS);
    let (default_tau, default_nu) = config::fpc_defaults(variant);
    let tau = ctx.resolve("tau", tau, default_tau);
    let nu = ctx.resolve("nu", nu, default_nu);
    let ds = Dataset::read(data)?;
    let cfg = FpcConfig::new(variant, tau, nu, iters)?;
    let per_sample = eval_fpc(&ds.phi, &ds.measurements, &ds.signals, &cfg)?;
    let mean = mean_nmse_db(&per_sample);
    let result = ExperimentResult {
        experiment: "fpc_run".to_string(),
        config: vec![],
        rows: vec![ResultRow {
            method: format!("fpc-{variant}"),
            sweep_param: "iterations".to_string(),
            sweep_value: iters as f64,
            seed: ds.seed,
            per_sample_nmse_db: per_sample,
            mean_nmse_db: mean,
        }],
    };
    write_result_pair(&result, out)?;
    write_run_config(
        &sibling_run_config(out),
        ctx.threads,
        &[
            ("command".to_string(), "fpc-run".to_string()),
            ("variant".to_string(), variant.to_string()),
            ("iters".to_string(), iters.to_string()),
            ("tau".to_string(), tau.to_string()),
            ("nu".to_string(), nu.to_string()),
            ("data".to_string(), data.display().to_string()),
            ("data_seed".to_string(), ds.seed.to_string()),
        ],
    )?;
    println!("fpc-{variant}: mean NMSE {mean:.2} dB over {} samples", ds.l);
    Ok(())
}

/// Writes the per-sample CSV to `out` and the summary next to it.
fn write_result_pair(result: &ExperimentResult, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut detail = File::create(out)?;
    result.write_detail_csv(&mut detail)?;
    let summary_path = match out.extension() {
        Some(ext) => {
            let stem = out.file_stem().unwrap_or_default().to_string_lossy().to_string();
            out.with_file_name(format!("{stem}_summary.{}", ext.to_string_lossy()))
        }
        None => out.with_file_name(format!(
            "{}_summary",
            out.file_name().unwrap_or_default().to_string_lossy()
        )),
    };
    let mut summary = File::create(summary_path)?;
    result.write_summary_csv(&mut summary)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    ctx: &Ctx,
    variant: Variant,
    layers: Option<usize>,
    data: &Path,
    epochs: Option<usize>,
    lr0: Option<f64>,
    decay: Option<f64>,
    decay_every: Option<usize>,
    batch_size: Option<usize>,
    tau: Option<f64>,
    nu0: Option<f64>,
    tied: bool,
    straight_through: bool,
    seed: Option<u64>,
    out: &Path,
    history: Option<PathBuf>,
) -> Result<()> {
    let layers = ctx.resolve("layers", layers, config::BENCH_LAYERS);
    let epochs = ctx.resolve("epochs", epochs, config::DEFAULT_EPOCHS);
    let lr0 = ctx.resolve("lr0", lr0, config::lr0_default(variant));
    let decay = ctx.resolve("decay", decay, config::DEFAULT_DECAY_RATE);
    let decay_every = ctx.resolve("decay_every", decay_every, config::DEFAULT_DECAY_EVERY);
    let batch_size = ctx.resolve("batch_size", batch_size, config::DEFAULT_BATCH_SIZE);
    let (default_tau, default_nu0) = config::net_defaults(variant);
    let tau = ctx.resolve("tau", tau, default_tau);
    let nu0 = ctx.resolve("nu0", nu0, default_nu0);
    let seed = ctx.resolve("seed", seed, 7);

    let ds = Dataset::read(data)?;
    let mut model = init_model(&ds.phi, variant, layers, tau, nu0, tied)?;
    let signs = ds.measurements.signs.clone();
    let x0 = backprojection_batch(&ds.phi, &signs);
    let truth = truth_matrix(&ds.signals);
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch_size.min(ds.l),
        seed,
        validation_fraction: 0.0,
        sign_grad: if straight_through {
            SignGradMode::StraightThrough
        } else {
            SignGradMode::Zero
        },
    };
    let adam_cfg = AdamConfig {
        lr0,
        decay_rate: decay,
        decay_every,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&model, adam_cfg);
    let records = train(&mut model, &signs, &x0, &truth, &train_cfg, &mut adam)?;
    write_model(&model, out)?;

    let history_path = history.unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".history.csv");
        out.with_file_name(name)
    });
    let mut h = File::create(&history_path)?;
    writeln!(h, "step,epoch,effective_lr,train_loss,val_nmse_db")?;
    for r in &records {
        writeln!(
            h,
            "{},{},{},{},{}",
            r.step,
            r.epoch,
            r.effective_lr,
            r.train_loss,
            r.val_nmse_db.map(|v| v.to_string()).unwrap_or_default()
        )?;
    }
    write_run_config(
        &sibling_run_config(out),
        ctx.threads,
        &[
            ("command".to_string(), "train".to_string()),
            ("variant".to_string(), variant.to_string()),
            ("layers".to_string(), layers.to_string()),
            ("data".to_string(), data.display().to_string()),
            ("data_seed".to_string(), ds.seed.to_string()),
            ("epochs".to_string(), epochs.to_string()),
            ("lr0".to_string(), lr0.to_string()),
            ("decay".to_string(), decay.to_string()),
            ("decay_every".to_string(), decay_every.to_string()),
            ("batch_size".to_string(), batch_size.to_string()),
            ("tau".to_string(), tau.to_string()),
            ("nu0".to_string(), nu0.to_string()),
            ("tied".to_string(), tied.to_string()),
            ("straight_through".to_string(), straight_through.to_string()),
            ("seed".to_string(), seed.to_string()),
        ],
    )?;
    let final_loss = records.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!(
        "trained deepfpc-{variant} ({layers} layers, {epochs} epochs): final batch loss {final_loss:.4e}; model at {}",
        out.display()
    );
    Ok(())
}

fn eval_cmd(
    ctx: &Ctx,
    model_path: &Path,
    data: &Path,
    out: &Path,
    snr_db: Option<f64>,
    flip_ratio: Option<f64>,
    noise_seed: Option<u64>,
) -> Result<()> {
    if snr_db.is_some() && flip_ratio.is_some() {
        return Err(DfpcError::InvalidArgument(
            "choose at most one of --snr-db and --flip-ratio".into(),
        ));
    }
    let noise_seed = ctx.resolve("noise_seed", noise_seed, 7);
    let model = read_model(model_path)?;
    let ds = Dataset::read(data)?;
    let noise = match (snr_db, flip_ratio) {
        (Some(snr), None) => NoiseSpec::Gaussian {
            snr_db: snr,
            seed: noise_seed,
        },
        (None, Some(ratio)) => NoiseSpec::Flip {
            flip_ratio: ratio,
            seed: noise_seed,
        },
        _ => NoiseSpec::None,
    };
    let batch = noise.apply(&ds.measurements)?;
    let x0 = backprojection_batch(&ds.phi, &batch.signs);
    let (outputs, _) = forward_batched(&model, &batch.signs, &x0)?;
    let per_sample: Vec<f64> = ds
        .signals
        .iter()
        .enumerate()
        .map(|(col, s)| nmse_db(&outputs.column(col).to_owned(), s))
        .collect::<Result<_>>()?;
    let mean = mean_nmse_db(&per_sample);
    let (sweep_param, sweep_value) = match noise {
        NoiseSpec::Gaussian { snr_db, .. } => ("snr_db", snr_db),
        NoiseSpec::Flip { flip_ratio, .. } => ("flip_ratio", flip_ratio),
        NoiseSpec::None => ("none", 0.0),
    };
    let result = ExperimentResult {
        experiment: "eval".to_string(),
        config: vec![],
        rows: vec![ResultRow {
            method: format!("deepfpc-{}", model.variant),
            sweep_param: sweep_param.to_string(),
            sweep_value,
            seed: ds.seed,
            per_sample_nmse_db: per_sample,
            mean_nmse_db: mean,
        }],
    };
    write_result_pair(&result, out)?;
    write_run_config(
        &sibling_run_config(out),
        ctx.threads,
        &[
            ("command".to_string(), "eval".to_string()),
            ("model".to_string(), model_path.display().to_string()),
            ("data".to_string(), data.display().to_string()),
            ("noise".to_string(), format!("{sweep_param}={sweep_value}")),
            ("noise_seed".to_string(), noise_seed.to_string()),
        ],
    )?;
    println!("deepfpc-{}: mean NMSE {mean:.2} dB over {} samples", model.variant, ds.l);
    Ok(())
}
