//! Grid search for the FPC step size and shrinkage defaults.
//!
//! The reference trajectory (mean NMSE over 100 test signals on the
//! N=100, K=10, M=300 setup) pins three points: about -4.5 dB after one
//! iteration, -7.6 dB after 20, and -14.4 dB after 150. This sweep prints
//! those three readings for each (tau, nu) candidate so the defaults in
//! `config.rs` can be chosen by inspection.
//!
//! Run with: cargo run --release --example calibrate_fpc

use deepfpc::experiments::{bench_setup, eval_fpc};
use deepfpc::fpc_solvers::{fpc_solve, FpcConfig, Variant};
use deepfpc::model_core::mean_nmse_db;

fn main() {
    let seed = 7;
    let setup = bench_setup(seed).expect("setup");
    let taus = [0.1, 0.12, 0.15, 0.25, 0.5];
    let nus = [0.0005, 0.001, 0.002, 0.005, 0.01];
    println!("{:>6} {:>7} {:>9} {:>9} {:>9}", "tau", "nu", "iter1", "iter20", "iter150");
    for &tau in &taus {
        for &nu in &nus {
            let cfg = FpcConfig::new(Variant::L2, tau, nu, 150).expect("cfg");
            let mut at = [f64::NAN; 3];
            let mut per_sample = vec![Vec::new(); 3];
            for col in 0..setup.test.l {
                let y = setup.test.measurements.signs.column(col).to_owned();
                match fpc_solve(&setup.test.phi, &y, &cfg, None, Some(&setup.test.signals[col])) {
                    Ok(trace) => {
                        let nmse = trace.nmse_db_per_iter.unwrap();
                        per_sample[0].push(nmse[0]);
                        per_sample[1].push(nmse[19]);
                        per_sample[2].push(nmse[149]);
                    }
                    Err(e) => {
                        println!("{tau:>6} {nu:>7} failed: {e}");
                        per_sample = vec![Vec::new(); 3];
                        break;
                    }
                }
            }
            if per_sample[0].is_empty() {
                continue;
            }
            for (i, samples) in per_sample.iter().enumerate() {
                at[i] = mean_nmse_db(samples);
            }
            println!("{tau:>6} {nu:>7} {:>9.2} {:>9.2} {:>9.2}", at[0], at[1], at[2]);
        }
    }

    // l1 check at its own chosen point, for the classical comparison
    // experiment (the l1 gradient needs a much smaller step, see config.rs)
    let (tau_l1, nu_l1) = deepfpc::config::fpc_defaults(Variant::L1);
    let cfg = FpcConfig::new(Variant::L1, tau_l1, nu_l1, 150).expect("cfg");
    let l1 = eval_fpc(&setup.test.phi, &setup.test.measurements, &setup.test.signals, &cfg)
        .expect("l1 eval");
    println!("fpc-l1 at defaults, 150 iters: {:.2} dB", mean_nmse_db(&l1));
}
