//! Elementwise operators shared by the solvers and the unfolded networks:
//! soft-thresholding, the one-sided penalties and their derivatives.

use ndarray::Array1;

use crate::error::{DfpcError, Result};

/// Shrinkage amount nu = tau / lambda of the soft-thresholding operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu >= 0.0) {
            return Err(DfpcError::InvalidArgument(format!(
                "threshold nu must be nonnegative, got {nu}"
            )));
        }
        Ok(Threshold(nu))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// sign(z) * max(|z| - nu, 0), applied elementwise.
pub fn soft_threshold_scalar(z: f64, nu: f64) -> f64 {
    if z > nu {
        z - nu
    } else if z < -nu {
        z + nu
    } else {
        0.0
    }
}

pub fn soft_threshold(z: &Array1<f64>, nu: Threshold) -> Array1<f64> {
    z.mapv(|v| soft_threshold_scalar(v, nu.value()))
}

/// One-sided l1 penalty: sum of |z_i| over negative entries.
pub fn one_sided_l1(z: &Array1<f64>) -> f64 {
    z.iter().filter(|&&v| v < 0.0).map(|v| v.abs()).sum()
}

/// One-sided l2 penalty: sum of z_i^2 / 2 over negative entries.
pub fn one_sided_l2(z: &Array1<f64>) -> f64 {
    z.iter().filter(|&&v| v < 0.0).map(|v| v * v / 2.0).sum()
}

/// Derivative of the one-sided l2 penalty: min(z, 0) elementwise.
/// Equals -relu(-z); the derivative at 0 is taken as 0.
pub fn one_sided_l2_deriv(z: &Array1<f64>) -> Array1<f64> {
    z.mapv(|v| v.min(0.0))
}

/// sign with the sign(0) = +1 convention used throughout.
pub fn sign_pos(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        let t = Threshold::new(0.5).unwrap();
        let z = array![1.2, -0.3];
        let s = soft_threshold(&z, t);
        assert_eq!(s[0], 0.7);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn soft_threshold_zero_nu_is_identity() {
        let z = array![1.0, -2.5, 0.0, 0.3];
        let s = soft_threshold(&z, Threshold::new(0.0).unwrap());
        assert_eq!(s, z);
    }

    #[test]
    fn negative_nu_rejected() {
        assert!(Threshold::new(-0.1).is_err());
        assert!(Threshold::new(f64::NAN).is_err());
    }

    #[test]
    fn soft_threshold_matches_scalar_loop() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let z = Array1::from_iter((0..1000).map(|_| rng.gen_range(-3.0..3.0)));
        let nu = 0.25;
        let s = soft_threshold(&z, Threshold::new(nu).unwrap());
        for (i, &zi) in z.iter().enumerate() {
            // independent per-element oracle
            let expected = if zi >= 0.0 {
                (zi.abs() - nu).max(0.0)
            } else {
                -(zi.abs() - nu).max(0.0)
            };
            assert_eq!(s[i], expected, "mismatch at {i}");
        }
    }

    #[test]
    fn one_sided_penalties() {
        let all_pos = array![1.0, 2.0, 3.0];
        assert_eq!(one_sided_l1(&all_pos), 0.0);
        assert_eq!(one_sided_l2(&all_pos), 0.0);

        let single = array![-2.0];
        assert_eq!(one_sided_l1(&single), 2.0);
        assert_eq!(one_sided_l2(&single), 2.0);

        let mixed = array![-1.0, 1.0, -3.0];
        assert_eq!(one_sided_l1(&mixed), 4.0);
        assert_eq!(one_sided_l2(&mixed), 5.0);
    }

    #[test]
    fn one_sided_l2_deriv_examples() {
        let z = array![2.0, 0.0, -3.0];
        assert_eq!(one_sided_l2_deriv(&z), array![0.0, 0.0, -3.0]);
        let pos = array![0.5, 1.0, 7.0];
        assert_eq!(one_sided_l2_deriv(&pos), Array1::zeros(3));
    }

    #[test]
    fn deriv_dual_forms_agree() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let z = Array1::from_iter((0..500).map(|_| rng.gen_range(-2.0..2.0)));
        let a = one_sided_l2_deriv(&z);
        let b = z.mapv(|v| -relu(-v));
        assert_eq!(a, b);
    }

    #[test]
    fn deriv_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // keep points away from the kink at 0
        let z = Array1::from_iter((0..200).map(|_| {
            let v: f64 = rng.gen_range(1e-3..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        }));
        let g = one_sided_l2_deriv(&z);
        let h = 1e-7;
        for (i, &zi) in z.iter().enumerate() {
            let fp = one_sided_l2(&array![zi + h]);
            let fm = one_sided_l2(&array![zi - h]);
            let fd = (fp - fm) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "at {i}: {} vs {fd}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_nonexpansive(a in -10.0f64..10.0, b in -10.0f64..10.0, nu in 0.0f64..5.0) {
            let sa = soft_threshold_scalar(a, nu);
            let sb = soft_threshold_scalar(b, nu);
            prop_assert!((sa - sb).abs() <= (a - b).abs() + 1e-15);
        }

        #[test]
        fn soft_threshold_zero_iff_small(z in -10.0f64..10.0, nu in 0.0f64..5.0) {
            let s = soft_threshold_scalar(z, nu);
            prop_assert_eq!(s == 0.0, z.abs() <= nu);
        }

        #[test]
        fn penalties_nonnegative(z in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
            let z = Array1::from_vec(z);
            let l1 = one_sided_l1(&z);
            let l2 = one_sided_l2(&z);
            prop_assert!(l1 >= 0.0 && l2 >= 0.0);
            let all_nonneg = z.iter().all(|&v| v >= 0.0);
            prop_assert_eq!(l1 == 0.0 && l2 == 0.0, all_nonneg);
        }
    }
}
