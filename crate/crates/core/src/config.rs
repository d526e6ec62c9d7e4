//! Calibrated defaults and experiment grids. Values here are the single
//! source the CLI flags and library `Default` impls draw from; a run can
//! override any of them through flags or a key=value config file.

/// FPC-l2 step size. Calibrated together with [`DEFAULT_NU`] against the
/// published FPC-l2 per-iteration trajectory on the N=100, K=10, M=300
/// setup (see `examples/calibrate_fpc.rs` and `configs/defaults.cfg`).
pub const DEFAULT_TAU: f64 = 0.12;

/// FPC-l2 shrinkage nu = tau/lambda.
pub const DEFAULT_NU: f64 = 0.001;

/// FPC-l1 step size. The l1 gradient phi^T (sign(phi x) - y) has entries
/// in {0, +-2} before mixing, so it runs two orders of magnitude hotter
/// than the l2 gradient near consistency and needs a much smaller step.
pub const DEFAULT_TAU_L1: f64 = 0.005;

/// FPC-l1 shrinkage.
pub const DEFAULT_NU_L1: f64 = 0.0005;

/// Calibrated (tau, nu) pair for the given solver variant.
pub fn fpc_defaults(variant: crate::fpc_solvers::Variant) -> (f64, f64) {
    match variant {
        crate::fpc_solvers::Variant::L1 => (DEFAULT_TAU_L1, DEFAULT_NU_L1),
        crate::fpc_solvers::Variant::L2 => (DEFAULT_TAU, DEFAULT_NU),
    }
}

/// Network initialization (tau, nu0) for DeepFPC-l2. Deliberately more
/// aggressive than the solver defaults: without intermediate
/// renormalization the truncated iteration tolerates a larger step, and a
/// stronger starting point is what lets a 100-pair training set generalize.
/// Larger steps improve the noiseless figure further but make the net
/// fragile under sign flips, so this sits at the robustness knee.
pub const DEFAULT_NET_TAU: f64 = 2.2;
pub const DEFAULT_NET_NU0: f64 = 0.007;

/// Network initialization (tau, nu0) for the DeepFPC-l1 baseline.
pub const DEFAULT_NET_TAU_L1: f64 = 0.02;
pub const DEFAULT_NET_NU0_L1: f64 = 0.01;

/// Calibrated network-init (tau, nu0) pair for the given variant.
pub fn net_defaults(variant: crate::fpc_solvers::Variant) -> (f64, f64) {
    match variant {
        crate::fpc_solvers::Variant::L1 => (DEFAULT_NET_TAU_L1, DEFAULT_NET_NU0_L1),
        crate::fpc_solvers::Variant::L2 => (DEFAULT_NET_TAU, DEFAULT_NET_NU0),
    }
}

/// ADAM step size for DeepFPC-l2 training. Intentionally small: with only
/// 100 training pairs, large steps memorize the training set (training
/// NMSE below -40 dB while test NMSE stalls) whereas small steps keep the
/// weights near the algorithmic initialization and generalize.
pub const DEFAULT_LR0: f64 = 3e-5;

/// ADAM step size for the DeepFPC-l1 baseline.
pub const DEFAULT_LR0_L1: f64 = 1e-3;

/// Calibrated initial step size for the given variant.
pub fn lr0_default(variant: crate::fpc_solvers::Variant) -> f64 {
    match variant {
        crate::fpc_solvers::Variant::L1 => DEFAULT_LR0_L1,
        crate::fpc_solvers::Variant::L2 => DEFAULT_LR0,
    }
}
pub const DEFAULT_DECAY_RATE: f64 = 0.9;
pub const DEFAULT_DECAY_EVERY: usize = 1000;
pub const DEFAULT_EPOCHS: usize = 150;
pub const DEFAULT_BATCH_SIZE: usize = 25;

/// Benchmark problem size: signal dimension, measurements, sparsity, and
/// train/test set size.
pub const BENCH_N: usize = 100;
pub const BENCH_M: usize = 300;
pub const BENCH_K: usize = 10;
pub const BENCH_L: usize = 100;

pub const BENCH_FPC_ITERS: usize = 150;
pub const BENCH_LAYERS: usize = 20;

/// SNR grid (dB) for the Gaussian-noise sweep.
pub const SNR_GRID_DB: &[f64] = &[20.0, 25.0, 30.0, 35.0, 40.0];

/// Flip-ratio grid for the transmission-error sweep.
pub const FLIP_GRID: &[f64] = &[0.0, 0.01, 0.03, 0.05, 0.10, 0.20, 0.30];
