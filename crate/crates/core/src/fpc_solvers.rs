//! Classical FPC recovery: gradient step on the one-sided consistency term,
//! soft-thresholding shrink, renormalization onto the unit sphere.

use ndarray::Array1;

use crate::error::{DfpcError, Result};
use crate::model_core::{nmse_db, SensingMatrix, SparseSignal};
use crate::operators::{sign_pos, soft_threshold, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    L1,
    L2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::L1 => write!(f, "l1"),
            Variant::L2 => write!(f, "l2"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = DfpcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Variant::L1),
            "l2" => Ok(Variant::L2),
            other => Err(DfpcError::InvalidArgument(format!(
                "unknown variant `{other}` (expected l1 or l2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum InitPolicy {
    /// x0 = Phi^T y / ||Phi^T y||. A zero start is a fixed point of the l2
    /// iteration, so the solver needs a data-driven initialization.
    Backprojection,
    Given,
}

#[derive(Debug, Clone)]
pub struct FpcConfig {
    pub variant: Variant,
    pub tau: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub x0_policy: InitPolicy,
}

impl FpcConfig {
    pub fn new(variant: Variant, tau: f64, nu: f64, max_iters: usize) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(DfpcError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        if !(nu > 0.0) {
            return Err(DfpcError::InvalidArgument(format!("nu must be positive, got {nu}")));
        }
        if max_iters == 0 {
            return Err(DfpcError::InvalidArgument("max_iters must be positive".into()));
        }
        Ok(FpcConfig {
            variant,
            tau,
            lambda: tau / nu,
            max_iters,
            x0_policy: InitPolicy::Backprojection,
        })
    }

    pub fn nu(&self) -> f64 {
        self.tau / self.lambda
    }
}

#[derive(Debug, Clone)]
pub struct FpcTrace {
    /// Post-renormalization iterate after each iteration, unit norm.
    pub iterates: Vec<Array1<f64>>,
    /// NMSE of each iterate when the ground truth was supplied.
    pub nmse_db_per_iter: Option<Vec<f64>>,
}

impl FpcTrace {
    pub fn final_iterate(&self) -> &Array1<f64> {
        self.iterates.last().expect("trace has at least one iterate")
    }
}

/// Gradient of the one-sided l1 consistency term: Phi^T (sign(Phi x) - y).
pub fn gradient_l1(phi: &SensingMatrix, y: &Array1<f64>, x: &Array1<f64>) -> Result<Array1<f64>> {
    check_dims(phi, y, x)?;
    let residual = phi.entries.dot(x).mapv(sign_pos) - y;
    Ok(phi.entries.t().dot(&residual))
}

/// Gradient of the one-sided l2 consistency term: Phi^T Y fbar'(Y Phi x),
/// computed with y as a vector via the diagonal structure of Y.
pub fn gradient_l2(phi: &SensingMatrix, y: &Array1<f64>, x: &Array1<f64>) -> Result<Array1<f64>> {
    check_dims(phi, y, x)?;
    let z = phi.entries.dot(x);
    let inner = Array1::from_iter(
        z.iter().zip(y.iter()).map(|(&zi, &yi)| yi * (yi * zi).min(0.0)),
    );
    Ok(phi.entries.t().dot(&inner))
}

fn check_dims(phi: &SensingMatrix, y: &Array1<f64>, x: &Array1<f64>) -> Result<()> {
    if y.len() != phi.rows() || x.len() != phi.cols() {
        return Err(DfpcError::InvalidArgument(format!(
            "dimension mismatch: Phi is {}x{}, y has {}, x has {}",
            phi.rows(),
            phi.cols(),
            y.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Backprojection initialization Phi^T y / ||Phi^T y||.
pub fn backprojection(phi: &SensingMatrix, y: &Array1<f64>) -> Array1<f64> {
    let mut x0 = phi.entries.t().dot(y);
    let norm = x0.dot(&x0).sqrt();
    if norm > 0.0 {
        x0.mapv_inplace(|v| v / norm);
    }
    x0
}

/// Runs the shrink-and-renormalize iteration for `cfg.max_iters` iterations.
pub fn fpc_solve(
    phi: &SensingMatrix,
    y: &Array1<f64>,
    cfg: &FpcConfig,
    x0: Option<&Array1<f64>>,
    truth: Option<&SparseSignal>,
) -> Result<FpcTrace> {
    let mut x = match (cfg.x0_policy, x0) {
        (InitPolicy::Given, Some(x0)) => x0.clone(),
        (InitPolicy::Given, None) => {
            return Err(DfpcError::InvalidArgument(
                "x0 policy is `given` but no x0 supplied".into(),
            ))
        }
        (InitPolicy::Backprojection, _) => backprojection(phi, y),
    };
    check_dims(phi, y, &x)?;
    let nu = Threshold::new(cfg.nu())?;
    let mut iterates = Vec::with_capacity(cfg.max_iters);
    let mut nmse = truth.map(|_| Vec::with_capacity(cfg.max_iters));
    for iteration in 0..cfg.max_iters {
        let grad = match cfg.variant {
            Variant::L1 => gradient_l1(phi, y, &x)?,
            Variant::L2 => gradient_l2(phi, y, &x)?,
        };
        let step = &x - &(grad * cfg.tau);
        let u = soft_threshold(&step, nu);
        let norm = u.dot(&u).sqrt();
        if norm == 0.0 {
            return Err(DfpcError::ShrinkageCollapse { iteration });
        }
        x = u / norm;
        if let (Some(nmse), Some(truth)) = (nmse.as_mut(), truth) {
            nmse.push(nmse_db(&x, truth)?);
        }
        iterates.push(x.clone());
    }
    Ok(FpcTrace {
        iterates,
        nmse_db_per_iter: nmse,
    })
}
