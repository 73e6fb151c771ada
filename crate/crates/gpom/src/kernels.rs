//! Stationary covariance functions over 2-D points.
//!
//! Four families are provided: isotropic squared-exponential, squared
//! exponential with per-axis length scales, Matern 5/2, and a compactly
//! supported kernel that is exactly zero beyond its support radius (useful
//! for cluttered environments where long-range correlation is undesirable
//! and sparse Gram matrices pay off).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;

const SQRT5: f64 = 2.236_067_977_499_79;

/// A covariance-function family together with its hyperparameters.
///
/// Hyperparameters are strictly positive; [`KernelSpec::to_log_params`] /
/// [`KernelSpec::with_log_params`] expose them in log space so optimizers can
/// search unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    SquaredExponential {
        signal_variance: f64,
        length_scale: f64,
    },
    SquaredExponentialArd {
        signal_variance: f64,
        length_scales: [f64; 2],
    },
    Matern52 {
        signal_variance: f64,
        length_scale: f64,
    },
    SparseCompact {
        signal_variance: f64,
        /// Separation (meters) beyond which the kernel is exactly zero.
        support_radius: f64,
    },
}

impl KernelSpec {
    pub fn se(signal_variance: f64, length_scale: f64) -> Self {
        KernelSpec::SquaredExponential {
            signal_variance,
            length_scale,
        }
    }

    pub fn se_ard(signal_variance: f64, length_scales: [f64; 2]) -> Self {
        KernelSpec::SquaredExponentialArd {
            signal_variance,
            length_scales,
        }
    }

    pub fn matern52(signal_variance: f64, length_scale: f64) -> Self {
        KernelSpec::Matern52 {
            signal_variance,
            length_scale,
        }
    }

    pub fn sparse_compact(signal_variance: f64, support_radius: f64) -> Self {
        KernelSpec::SparseCompact {
            signal_variance,
            support_radius,
        }
    }

    pub fn signal_variance(&self) -> f64 {
        match *self {
            KernelSpec::SquaredExponential {
                signal_variance, ..
            }
            | KernelSpec::SquaredExponentialArd {
                signal_variance, ..
            }
            | KernelSpec::Matern52 {
                signal_variance, ..
            }
            | KernelSpec::SparseCompact {
                signal_variance, ..
            } => signal_variance,
        }
    }

    /// Longest length scale of the family; the compact kernel reports its
    /// support radius. Used to size query neighborhoods.
    pub fn range_scale(&self) -> f64 {
        match *self {
            KernelSpec::SquaredExponential { length_scale, .. }
            | KernelSpec::Matern52 { length_scale, .. } => length_scale,
            KernelSpec::SquaredExponentialArd { length_scales, .. } => {
                length_scales[0].max(length_scales[1])
            }
            KernelSpec::SparseCompact { support_radius, .. } => support_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "kernel hyperparameter {what} must be strictly positive, got {v}"
                )))
            }
        };
        positive(self.signal_variance(), "signal_variance")?;
        match *self {
            KernelSpec::SquaredExponential { length_scale, .. }
            | KernelSpec::Matern52 { length_scale, .. } => positive(length_scale, "length_scale"),
            KernelSpec::SquaredExponentialArd { length_scales, .. } => {
                positive(length_scales[0], "length_scales[0]")?;
                positive(length_scales[1], "length_scales[1]")
            }
            KernelSpec::SparseCompact { support_radius, .. } => {
                positive(support_radius, "support_radius")
            }
        }
    }

    /// Covariance between two points. Errors on non-finite coordinates.
    pub fn eval(&self, a: &Point2, b: &Point2) -> Result<f64> {
        a.check_finite()?;
        b.check_finite()?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Covariance without the finiteness check; callers validate inputs once
    /// and use this in inner loops.
    #[inline]
    pub fn eval_unchecked(&self, a: &Point2, b: &Point2) -> f64 {
        match *self {
            KernelSpec::SquaredExponential {
                signal_variance,
                length_scale,
            } => {
                let d2 = a.distance_sq(b);
                signal_variance * (-0.5 * d2 / (length_scale * length_scale)).exp()
            }
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                length_scales,
            } => {
                let dx = (a.x - b.x) / length_scales[0];
                let dy = (a.y - b.y) / length_scales[1];
                signal_variance * (-0.5 * (dx * dx + dy * dy)).exp()
            }
            KernelSpec::Matern52 {
                signal_variance,
                length_scale,
            } => {
                let r = a.distance(b);
                let t = SQRT5 * r / length_scale;
                signal_variance * (1.0 + t + t * t / 3.0) * (-t).exp()
            }
            KernelSpec::SparseCompact {
                signal_variance,
                support_radius,
            } => {
                let r = a.distance(b);
                if r >= support_radius {
                    return 0.0;
                }
                let s = r / support_radius;
                let angle = 2.0 * std::f64::consts::PI * s;
                signal_variance
                    * ((2.0 + angle.cos()) / 3.0 * (1.0 - s)
                        + angle.sin() / (2.0 * std::f64::consts::PI))
            }
        }
    }

    /// Pairwise covariance matrix between two point lists.
    pub fn gram(&self, rows: &[Point2], cols: &[Point2]) -> Result<DMatrix<f64>> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::invalid("gram matrix over an empty point list"));
        }
        for p in rows.iter().chain(cols.iter()) {
            p.check_finite()?;
        }
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.eval_unchecked(&rows[i], &cols[j])
        }))
    }

    /// Hyperparameters in log space, in a fixed per-family order.
    pub fn to_log_params(&self) -> Vec<f64> {
        match *self {
            KernelSpec::SquaredExponential {
                signal_variance,
                length_scale,
            }
            | KernelSpec::Matern52 {
                signal_variance,
                length_scale,
            } => vec![signal_variance.ln(), length_scale.ln()],
            KernelSpec::SquaredExponentialArd {
                signal_variance,
                length_scales,
            } => vec![
                signal_variance.ln(),
                length_scales[0].ln(),
                length_scales[1].ln(),
            ],
            KernelSpec::SparseCompact {
                signal_variance,
                support_radius,
            } => vec![signal_variance.ln(), support_radius.ln()],
        }
    }

    /// Rebuild a spec of the same family from log-space hyperparameters.
    pub fn with_log_params(&self, params: &[f64]) -> Result<Self> {
        let expect = self.to_log_params().len();
        if params.len() != expect {
            return Err(Error::invalid(format!(
                "expected {expect} kernel parameters, got {}",
                params.len()
            )));
        }
        let spec = match *self {
            KernelSpec::SquaredExponential { .. } => KernelSpec::SquaredExponential {
                signal_variance: params[0].exp(),
                length_scale: params[1].exp(),
            },
            KernelSpec::Matern52 { .. } => KernelSpec::Matern52 {
                signal_variance: params[0].exp(),
                length_scale: params[1].exp(),
            },
            KernelSpec::SquaredExponentialArd { .. } => KernelSpec::SquaredExponentialArd {
                signal_variance: params[0].exp(),
                length_scales: [params[1].exp(), params[2].exp()],
            },
            KernelSpec::SparseCompact { .. } => KernelSpec::SparseCompact {
                signal_variance: params[0].exp(),
                support_radius: params[1].exp(),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<KernelSpec> {
        vec![
            KernelSpec::se(1.0, 1.0),
            KernelSpec::se_ard(0.8, [0.5, 2.0]),
            KernelSpec::matern52(1.3, 0.7),
            KernelSpec::sparse_compact(1.0, 2.0),
        ]
    }

    #[test]
    fn zero_distance_is_signal_variance() {
        let p = Point2::new(0.3, -1.2);
        for spec in families() {
            assert_eq!(spec.eval(&p, &p).unwrap(), spec.signal_variance());
        }
    }

    #[test]
    fn se_unit_separation() {
        let spec = KernelSpec::se(1.0, 1.0);
        let v = spec
            .eval(&Point2::new(0.0, 0.0), &Point2::new(1.0, 0.0))
            .unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.606531, epsilon = 1e-6);
    }

    #[test]
    fn matern_decays_to_zero() {
        let spec = KernelSpec::matern52(2.0, 0.9);
        let far = spec
            .eval(&Point2::new(0.0, 0.0), &Point2::new(50.0 * 0.9, 0.0))
            .unwrap();
        assert!(far >= 0.0 && far < 1e-6);
        // monotone decay on a coarse grid
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let r = i as f64 * 0.3;
            let v = spec
                .eval(&Point2::new(0.0, 0.0), &Point2::new(r, 0.0))
                .unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn sparse_compact_support() {
        let spec = KernelSpec::sparse_compact(1.0, 2.0);
        let o = Point2::new(0.0, 0.0);
        assert_eq!(spec.eval(&o, &Point2::new(2.5, 0.0)).unwrap(), 0.0);
        assert_eq!(spec.eval(&o, &Point2::new(2.0, 0.0)).unwrap(), 0.0);
        // continuous at the boundary: negligible just inside
        let just_inside = spec
            .eval(&o, &Point2::new(2.0 * (1.0 - 1e-6), 0.0))
            .unwrap();
        assert!(just_inside.abs() < 1e-9, "boundary value {just_inside}");
        // and positive in the interior
        assert!(spec.eval(&o, &Point2::new(0.5, 0.0)).unwrap() > 0.1);
    }

    #[test]
    fn rejects_non_finite_and_bad_hyperparameters() {
        let spec = KernelSpec::se(1.0, 1.0);
        assert!(spec
            .eval(&Point2::new(f64::NAN, 0.0), &Point2::new(0.0, 0.0))
            .is_err());
        assert!(KernelSpec::se(-1.0, 1.0).validate().is_err());
        assert!(KernelSpec::se(1.0, 0.0).validate().is_err());
        assert!(KernelSpec::sparse_compact(1.0, f64::INFINITY)
            .validate()
            .is_err());
    }

    #[test]
    fn symmetry_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for spec in families() {
            for _ in 0..200 {
                let a = Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                let b = Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                let ab = spec.eval(&a, &b).unwrap();
                let ba = spec.eval(&b, &a).unwrap();
                assert_eq!(ab, ba);
                assert!(ab >= 0.0 && ab <= spec.signal_variance() + 1e-15);
            }
        }
    }

    #[test]
    fn translation_invariance_is_exact_for_exact_separations() {
        // Coordinates on a dyadic grid and integer translations keep the
        // floating-point separation bit-identical, so stationarity must give
        // bit-identical kernel values.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in families() {
            for _ in 0..200 {
                let a = Point2::new(
                    rng.gen_range(-128..128) as f64 / 16.0,
                    rng.gen_range(-128..128) as f64 / 16.0,
                );
                let b = Point2::new(
                    rng.gen_range(-128..128) as f64 / 16.0,
                    rng.gen_range(-128..128) as f64 / 16.0,
                );
                let t = (rng.gen_range(-100..100) as f64, rng.gen_range(-100..100) as f64);
                let a2 = Point2::new(a.x + t.0, a.y + t.1);
                let b2 = Point2::new(b.x + t.0, b.y + t.1);
                assert_eq!(
                    spec.eval(&a, &b).unwrap(),
                    spec.eval(&a2, &b2).unwrap(),
                    "spec {spec:?}"
                );
            }
        }
    }

    #[test]
    fn gram_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in families() {
            let pts: Vec<Point2> = (0..20)
                .map(|_| Point2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)))
                .collect();
            let k = spec.gram(&pts, &pts).unwrap();
            assert_eq!(k.nrows(), 20);
            let asym = (&k - k.transpose()).abs().max();
            assert_eq!(asym, 0.0);
            let min_eig = k.clone().symmetric_eigen().eigenvalues.min();
            assert!(
                min_eig >= -1e-8 * spec.signal_variance(),
                "min eigenvalue {min_eig} for {spec:?}"
            );
        }
    }

    #[test]
    fn gram_small_cases() {
        let spec = KernelSpec::se(1.0, 1.0);
        let single = vec![Point2::new(0.5, 0.5)];
        let k = spec.gram(&single, &single).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_eq!(k[(0, 0)], 1.0);
        assert!(spec.gram(&[], &single).is_err());
    }

    #[test]
    fn psd_with_jitter_floor() {
        // 5 random points: smallest eigenvalue of K + 1e-10 I is nonnegative.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = KernelSpec::se(1.0, 1.0);
        let pts: Vec<Point2> = (0..5)
            .map(|_| Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let mut k = spec.gram(&pts, &pts).unwrap();
        for i in 0..5 {
            k[(i, i)] += 1e-10;
        }
        let min_eig = k.symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= 0.0, "min eigenvalue {min_eig}");
    }

    #[test]
    fn log_param_round_trip() {
        for spec in families() {
            let params = spec.to_log_params();
            let back = spec.with_log_params(&params).unwrap();
            for (a, b) in params.iter().zip(back.to_log_params()) {
                assert_relative_eq!(*a, b, epsilon = 1e-15);
            }
        }
    }
}
