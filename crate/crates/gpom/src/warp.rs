//! Warped-GP machinery: monotone observation-space transforms, their
//! derivatives and inverses, the warped marginal likelihood, and predictive
//! means pushed back through the inverse warp.
//!
//! A warp maps observations into a latent space where the GP assumptions fit
//! better; the marginal likelihood picks up a log-Jacobian term, and the
//! predictive mean in observation space is the expectation of the inverse
//! warp under the latent predictive density, computed with Gauss-Hermite
//! quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::gp::{GpModel, TrainingSet};
use crate::kernels::KernelSpec;
use crate::quadrature::GaussHermite;

/// A monotone warping function family with its hyperparameters.
///
/// `TanhSum` is `y + sum_i a_i tanh(b_i (y + c_i))` with `a_i, b_i >= 0`;
/// `Polynomial` is `y + sum_i c_i sgn(y) |y|^(i+2)` with `c_i >= 0`. The
/// nonnegativity constraints make both strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WarpSpec {
    Identity,
    TanhSum {
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
    },
    Polynomial {
        /// `coefficients[i]` multiplies `sgn(y) |y|^(i+2)`; a degree-d warp
        /// has d - 1 coefficients.
        coefficients: Vec<f64>,
    },
}

impl WarpSpec {
    pub fn tanh_sum(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Self {
        WarpSpec::TanhSum { a, b, c }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        WarpSpec::Polynomial { coefficients }
    }

    /// Number of steps (tanh terms) or polynomial degree.
    pub fn steps(&self) -> usize {
        match self {
            WarpSpec::Identity => 0,
            WarpSpec::TanhSum { a, .. } => a.len(),
            WarpSpec::Polynomial { coefficients } => coefficients.len() + 1,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, WarpSpec::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WarpSpec::Identity => Ok(()),
            WarpSpec::TanhSum { a, b, c } => {
                if a.is_empty() || a.len() != b.len() || a.len() != c.len() {
                    return Err(Error::invalid(
                        "tanh warp requires equal-length, non-empty a, b, c vectors",
                    ));
                }
                for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
                    if !(ai >= 0.0) || !ai.is_finite() || !(bi >= 0.0) || !bi.is_finite() {
                        return Err(Error::invalid(format!(
                            "tanh warp coefficients a[{i}]={ai}, b[{i}]={bi} must be finite and nonnegative"
                        )));
                    }
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("tanh warp offsets must be finite"));
                }
                self.check_monotone()
            }
            WarpSpec::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::invalid("polynomial warp requires at least one coefficient"));
                }
                for (i, &ci) in coefficients.iter().enumerate() {
                    if !(ci >= 0.0) || !ci.is_finite() {
                        return Err(Error::invalid(format!(
                            "polynomial warp coefficient c[{i}]={ci} must be finite and nonnegative"
                        )));
                    }
                }
                self.check_monotone()
            }
        }
    }

    /// Numerical monotonicity check on a 1000-point grid over [-10, 10].
    fn check_monotone(&self) -> Result<()> {
        let mut prev = self.warp(-10.0);
        for i in 1..1000 {
            let y = -10.0 + 20.0 * i as f64 / 999.0;
            let t = self.warp(y);
            if !(t > prev) {
                return Err(Error::invalid(format!(
                    "warp is not strictly increasing near y = {y}"
                )));
            }
            if self.derivative(y) <= 0.0 {
                return Err(Error::invalid(format!(
                    "warp derivative not positive at y = {y}"
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Transform an observation into the latent space.
    pub fn warp(&self, y: f64) -> f64 {
        match self {
            WarpSpec::Identity => y,
            WarpSpec::TanhSum { a, b, c } => {
                let mut t = y;
                for i in 0..a.len() {
                    t += a[i] * (b[i] * (y + c[i])).tanh();
                }
                t
            }
            WarpSpec::Polynomial { coefficients } => {
                let mut t = y;
                let ay = y.abs();
                for (i, &ci) in coefficients.iter().enumerate() {
                    t += ci * y.signum() * ay.powi(i as i32 + 2);
                }
                t
            }
        }
    }

    /// Analytic derivative of the warp; at least 1 for both families under
    /// the nonnegativity constraints.
    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            WarpSpec::Identity => 1.0,
            WarpSpec::TanhSum { a, b, c } => {
                let mut d = 1.0;
                for i in 0..a.len() {
                    let sech = 1.0 / (b[i] * (y + c[i])).cosh();
                    d += a[i] * b[i] * sech * sech;
                }
                d
            }
            WarpSpec::Polynomial { coefficients } => {
                let mut d = 1.0;
                let ay = y.abs();
                for (i, &ci) in coefficients.iter().enumerate() {
                    let p = i as f64 + 2.0;
                    d += ci * p * ay.powi(i as i32 + 1);
                }
                d
            }
        }
    }

    /// Invert the warp by safeguarded bracketing: double the bracket until it
    /// straddles the target, bisect, then polish with Newton steps.
    pub fn inverse(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::invalid(format!("non-finite inverse-warp target {t}")));
        }
        if self.is_identity() {
            return Ok(t);
        }
        let tol = 1e-10 * t.abs().max(1.0);

        let mut lo = t;
        let mut hi = t;
        let mut step = 1.0;
        let mut doublings = 0u32;
        while self.warp(lo) > t {
            lo -= step;
            step *= 2.0;
            doublings += 1;
            if doublings > 1000 {
                return Err(Error::NoBracket { target: t, doublings });
            }
        }
        step = 1.0;
        while self.warp(hi) < t {
            hi += step;
            step *= 2.0;
            doublings += 1;
            if doublings > 1000 {
                return Err(Error::NoBracket { target: t, doublings });
            }
        }

        let mut y = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.warp(y);
            if (g - t).abs() <= tol {
                return Ok(y);
            }
            if g < t {
                lo = y;
            } else {
                hi = y;
            }
            // Newton step, safeguarded to the current bracket.
            let d = self.derivative(y);
            let newton = y - (g - t) / d;
            y = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * y.abs().max(1.0) {
                break;
            }
        }
        Ok(y)
    }

    /// Optimizer parameterization: logs of the nonnegativity-constrained
    /// coefficients, raw values for the unconstrained tanh offsets.
    pub fn to_opt_params(&self) -> Vec<f64> {
        match self {
            WarpSpec::Identity => Vec::new(),
            WarpSpec::TanhSum { a, b, c } => {
                let mut p: Vec<f64> = a.iter().map(|v| v.max(1e-12).ln()).collect();
                p.extend(b.iter().map(|v| v.max(1e-12).ln()));
                p.extend(c.iter().copied());
                p
            }
            WarpSpec::Polynomial { coefficients } => {
                coefficients.iter().map(|v| v.max(1e-12).ln()).collect()
            }
        }
    }

    pub fn with_opt_params(&self, params: &[f64]) -> Result<Self> {
        let expect = self.to_opt_params().len();
        if params.len() != expect {
            return Err(Error::invalid(format!(
                "expected {expect} warp parameters, got {}",
                params.len()
            )));
        }
        match self {
            WarpSpec::Identity => Ok(WarpSpec::Identity),
            WarpSpec::TanhSum { a, .. } => {
                let l = a.len();
                Ok(WarpSpec::TanhSum {
                    a: params[0..l].iter().map(|v| v.exp()).collect(),
                    b: params[l..2 * l].iter().map(|v| v.exp()).collect(),
                    c: params[2 * l..3 * l].to_vec(),
                })
            }
            WarpSpec::Polynomial { coefficients } => {
                let _ = coefficients;
                Ok(WarpSpec::Polynomial {
                    coefficients: params.iter().map(|v| v.exp()).collect(),
                })
            }
        }
    }
}

/// A warped prediction: observation-space mean plus the latent Gaussian it
/// was derived from.
#[derive(Debug, Clone, Copy)]
pub struct WgpPrediction {
    pub mean: f64,
    pub latent_mean: f64,
    pub latent_variance: f64,
}

/// Fit a GP on warped targets.
pub fn fit_warped(
    train: &TrainingSet,
    kernel: &KernelSpec,
    warp: &WarpSpec,
) -> Result<GpModel> {
    let targets: Vec<f64> = train.labels.iter().map(|&y| warp.warp(y)).collect();
    GpModel::fit_with_targets(train, kernel, targets)
}

/// Warped-GP negative log marginal likelihood: the standard NLML of the
/// warped targets minus the sum of log warp derivatives at the observations.
/// With the identity warp this reduces exactly to the plain NLML.
pub fn wgp_nlml(train: &TrainingSet, kernel: &KernelSpec, warp: &WarpSpec) -> Result<f64> {
    let model = fit_warped(train, kernel, warp)?;
    let jacobian: f64 = train.labels.iter().map(|&y| warp.derivative(y).ln()).sum();
    Ok(model.nlml() - jacobian)
}

/// Predict in observation space: latent mean/variance from the GP, then the
/// mean of the inverse warp under the latent predictive density via
/// Gauss-Hermite quadrature.
pub fn wgp_predict(
    model: &GpModel,
    warp: &WarpSpec,
    queries: &[Point2],
    rule: &GaussHermite,
) -> Result<Vec<WgpPrediction>> {
    let latent = model.predict(queries)?;
    latent
        .into_iter()
        .map(|(latent_mean, latent_variance)| {
            let mean = inverse_warp_expectation(warp, latent_mean, latent_variance, rule)?;
            Ok(WgpPrediction {
                mean,
                latent_mean,
                latent_variance,
            })
        })
        .collect()
}

/// E[g^-1(T)] with T ~ N(mean, variance).
pub fn inverse_warp_expectation(
    warp: &WarpSpec,
    mean: f64,
    variance: f64,
    rule: &GaussHermite,
) -> Result<f64> {
    if warp.is_identity() {
        return Ok(mean);
    }
    if variance <= 0.0 {
        return warp.inverse(mean);
    }
    let scale = (2.0 * variance).sqrt();
    let mut total = 0.0;
    for (&u, &w) in rule.nodes().iter().zip(rule.weights()) {
        total += w * warp.inverse(mean + scale * u)?;
    }
    Ok(total / rule.weight_sum())
}

/// Same prediction shape for an unwarped model, so the pipeline can treat
/// both uniformly.
pub fn identity_predictions(preds: Vec<(f64, f64)>) -> Vec<WgpPrediction> {
    preds
        .into_iter()
        .map(|(m, v)| WgpPrediction {
            mean: m,
            latent_mean: m,
            latent_variance: v,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tanh(rng: &mut ChaCha8Rng, steps: usize) -> WarpSpec {
        WarpSpec::TanhSum {
            a: (0..steps).map(|_| rng.gen_range(0.0..2.0)).collect(),
            b: (0..steps).map(|_| rng.gen_range(0.0..3.0)).collect(),
            c: (0..steps).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn zero_coefficients_degenerate_to_identity() {
        let tanh = WarpSpec::tanh_sum(vec![0.0, 0.0], vec![1.0, 2.0], vec![0.3, -0.1]);
        let poly = WarpSpec::polynomial(vec![0.0, 0.0, 0.0, 0.0]);
        for i in -20..=20 {
            let y = i as f64 * 0.31;
            assert_eq!(tanh.warp(y), y);
            assert_eq!(poly.warp(y), y);
            assert_eq!(tanh.derivative(y), 1.0);
        }
    }

    #[test]
    fn tanh_single_step_values() {
        let w = WarpSpec::tanh_sum(vec![1.0], vec![1.0], vec![0.0]);
        assert_eq!(w.warp(0.0), 0.0);
        assert_eq!(w.derivative(0.0), 2.0); // 1 + sech^2(0)
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..100 {
            let spec = if case % 2 == 0 {
                let steps = rng.gen_range(1..4);
                random_tanh(&mut rng, steps)
            } else {
                WarpSpec::Polynomial {
                    coefficients: (0..rng.gen_range(1..5))
                        .map(|_| rng.gen_range(0.0..0.5))
                        .collect(),
                }
            };
            let y = rng.gen_range(-3.0..3.0);
            let h = 1e-6;
            let fd = (spec.warp(y + h) - spec.warp(y - h)) / (2.0 * h);
            let scale = spec.derivative(y).abs().max(1.0);
            assert!(
                (spec.derivative(y) - fd).abs() < 1e-6 * scale,
                "derivative mismatch for {spec:?} at {y}"
            );
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let specs = vec![
            random_tanh(&mut rng, 2),
            WarpSpec::polynomial(vec![0.2, 0.1, 0.05, 0.3]),
        ];
        for spec in specs {
            for _ in 0..500 {
                let y = rng.gen_range(-5.0..5.0);
                let t = spec.warp(y);
                let back = spec.inverse(t).unwrap();
                assert!(
                    (back - y).abs() < 1e-9,
                    "round trip failed for {spec:?}: {y} -> {t} -> {back}"
                );
            }
        }
        let id = WarpSpec::Identity;
        assert_eq!(id.inverse(3.75).unwrap(), 3.75);
    }

    #[test]
    fn inverse_forward_residual_two_step_tanh() {
        let spec = WarpSpec::tanh_sum(vec![1.0, 0.5], vec![2.0, 0.7], vec![-0.3, 0.8]);
        for i in -50..=50 {
            let t = i as f64 * 0.2;
            let y = spec.inverse(t).unwrap();
            assert!((spec.warp(y) - t).abs() < 1e-10 * t.abs().max(1.0));
        }
    }

    #[test]
    fn monotone_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let spec = random_tanh(&mut rng, 3);
            spec.validate().unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..1000 {
                let y = -10.0 + 20.0 * i as f64 / 999.0;
                let t = spec.warp(y);
                assert!(t > prev);
                prev = t;
            }
        }
        // negative coefficients rejected
        assert!(WarpSpec::tanh_sum(vec![-0.1], vec![1.0], vec![0.0])
            .validate()
            .is_err());
        assert!(WarpSpec::polynomial(vec![-0.01]).validate().is_err());
    }

    fn random_training(rng: &mut ChaCha8Rng, n: usize) -> TrainingSet {
        let pts = (0..n)
            .map(|_| Point2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let labels = (0..n)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        TrainingSet::new(pts, labels, 0.09).unwrap()
    }

    #[test]
    fn identity_warp_nlml_is_bit_identical_to_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let train = random_training(&mut rng, 9);
            let kernel = KernelSpec::se(1.0, 1.0);
            let plain = GpModel::fit(&train, &kernel).unwrap().nlml();
            let warped = wgp_nlml(&train, &kernel, &WarpSpec::Identity).unwrap();
            assert_eq!(plain.to_bits(), warped.to_bits());
        }
    }

    #[test]
    fn zero_tanh_matches_plain_nlml() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = random_training(&mut rng, 8);
        let kernel = KernelSpec::se(1.0, 1.0);
        let plain = GpModel::fit(&train, &kernel).unwrap().nlml();
        let warp = WarpSpec::tanh_sum(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]);
        let warped = wgp_nlml(&train, &kernel, &warp).unwrap();
        assert!((plain - warped).abs() < 1e-12);
    }

    #[test]
    fn wgp_nlml_matches_dense_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let train = random_training(&mut rng, 5);
        let kernel = KernelSpec::se(0.8, 1.2);
        let warp = random_tanh(&mut rng, 2);

        let got = wgp_nlml(&train, &kernel, &warp).unwrap();

        // Independent dense transcription of the warped marginal likelihood.
        let n = train.len();
        let mut k = kernel.gram(&train.inputs, &train.inputs).unwrap();
        for i in 0..n {
            k[(i, i)] += train.noise_variance;
        }
        let t = nalgebra::DVector::from_vec(
            train.labels.iter().map(|&y| warp.warp(y)).collect::<Vec<_>>(),
        );
        let k_inv = k.clone().try_inverse().unwrap();
        let quad = (t.transpose() * &k_inv * &t)[(0, 0)];
        let logdet = k.determinant().ln();
        let jac: f64 = train.labels.iter().map(|&y| warp.derivative(y).ln()).sum();
        let want = 0.5 * quad + 0.5 * logdet
            + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
            - jac;
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn identity_prediction_matches_plain_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = random_training(&mut rng, 10);
        let kernel = KernelSpec::se(1.0, 0.9);
        let queries: Vec<Point2> = (0..6)
            .map(|_| Point2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        let rule = GaussHermite::new(20).unwrap();

        let model = fit_warped(&train, &kernel, &WarpSpec::Identity).unwrap();
        let wgp = wgp_predict(&model, &WarpSpec::Identity, &queries, &rule).unwrap();
        let plain = GpModel::fit(&train, &kernel).unwrap().predict(&queries).unwrap();
        for (w, p) in wgp.iter().zip(&plain) {
            assert!((w.mean - p.0).abs() < 1e-10);
            assert!((w.latent_variance - p.1).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_latent_variance_is_exact_inverse() {
        let warp = WarpSpec::tanh_sum(vec![0.7], vec![1.3], vec![0.2]);
        let rule = GaussHermite::new(20).unwrap();
        let got = inverse_warp_expectation(&warp, 0.9, 0.0, &rule).unwrap();
        assert_eq!(got, warp.inverse(0.9).unwrap());
    }

    #[test]
    fn inverse_warp_expectation_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let warp = random_tanh(&mut rng, 2);
        let rule = GaussHermite::new(20).unwrap();
        let (mean, variance) = (0.4, 0.36);
        let got = inverse_warp_expectation(&warp, mean, variance, &rule).unwrap();

        let n = 1_000_000usize;
        let std = variance.sqrt();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let v = warp.inverse(mean + std * z).unwrap();
            sum += v;
            sum_sq += v * v;
        }
        let mc_mean = sum / n as f64;
        let mc_var = (sum_sq / n as f64 - mc_mean * mc_mean).max(0.0);
        let se = (mc_var / n as f64).sqrt();
        assert!(
            (got - mc_mean).abs() < 3.0 * se + 1e-12,
            "quadrature {got} vs MC {mc_mean} (se {se})"
        );
    }

    #[test]
    fn opt_param_round_trip() {
        let specs = vec![
            WarpSpec::tanh_sum(vec![0.5, 1.5], vec![2.0, 0.3], vec![-1.0, 0.7]),
            WarpSpec::polynomial(vec![0.1, 0.2, 0.3, 0.4]),
            WarpSpec::Identity,
        ];
        for spec in specs {
            let p = spec.to_opt_params();
            let back = spec.with_opt_params(&p).unwrap();
            match (&spec, &back) {
                (WarpSpec::TanhSum { a, b, c }, WarpSpec::TanhSum { a: a2, b: b2, c: c2 }) => {
                    for (x, y) in a.iter().zip(a2).chain(b.iter().zip(b2)).chain(c.iter().zip(c2)) {
                        assert_relative_eq!(*x, *y, epsilon = 1e-12);
                    }
                }
                (WarpSpec::Polynomial { coefficients }, WarpSpec::Polynomial { coefficients: c2 }) => {
                    for (x, y) in coefficients.iter().zip(c2) {
                        assert_relative_eq!(*x, *y, epsilon = 1e-12);
                    }
                }
                (WarpSpec::Identity, WarpSpec::Identity) => {}
                other => panic!("family changed: {other:?}"),
            }
        }
    }
}
