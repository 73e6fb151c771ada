//! Exact Gaussian-process regression on 2-D inputs.
//!
//! Models are fit by Cholesky factorization of `K + sigma_n^2 I`; prediction
//! and the negative log marginal likelihood (NLML) follow the standard exact
//! formulas. Cost is cubic in the number of training points, which is why the
//! mapping pipeline fits one model per scan rather than one global model.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::kernels::KernelSpec;
use crate::linalg;

/// Labeled training data: points, regression targets in {-1, +1} (possibly
/// perturbed), an optional 2x2 input covariance per point, and the shared
/// observation noise variance.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<Point2>,
    pub labels: Vec<f64>,
    pub input_covariances: Option<Vec<Matrix2<f64>>>,
    pub noise_variance: f64,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Point2>, labels: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let set = TrainingSet {
            inputs,
            labels,
            input_covariances: None,
            noise_variance,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_input_covariances(mut self, covariances: Vec<Matrix2<f64>>) -> Result<Self> {
        self.input_covariances = Some(covariances);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {}",
                self.noise_variance
            )));
        }
        for p in &self.inputs {
            p.check_finite()?;
        }
        for &y in &self.labels {
            if !y.is_finite() {
                return Err(Error::invalid(format!("non-finite label {y}")));
            }
        }
        if let Some(covs) = &self.input_covariances {
            if covs.len() != self.inputs.len() {
                return Err(Error::invalid(format!(
                    "{} inputs but {} input covariances",
                    self.inputs.len(),
                    covs.len()
                )));
            }
            for c in covs {
                check_input_covariance(c)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_input_covariance(c: &Matrix2<f64>) -> Result<()> {
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite input covariance"));
    }
    let scale = c[(0, 0)].abs().max(c[(1, 1)].abs()).max(1.0);
    if (c[(0, 1)] - c[(1, 0)]).abs() > 1e-12 * scale {
        return Err(Error::invalid("input covariance is not symmetric"));
    }
    if linalg::min_eig2(c) < -1e-12 * scale {
        return Err(Error::invalid("input covariance is not PSD"));
    }
    Ok(())
}

/// A fitted GP: the lower Cholesky factor of `K + sigma_n^2 I` and the weight
/// vector `alpha = (K + sigma_n^2 I)^-1 t`. Immutable after fitting.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    inputs: Vec<Point2>,
    noise_variance: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    targets: DVector<f64>,
}

impl GpModel {
    /// Fit on the training labels directly.
    pub fn fit(train: &TrainingSet, kernel: &KernelSpec) -> Result<GpModel> {
        Self::fit_with_targets(train, kernel, train.labels.clone())
    }

    /// Fit with explicit regression targets (the warped path substitutes
    /// transformed labels here).
    pub fn fit_with_targets(
        train: &TrainingSet,
        kernel: &KernelSpec,
        targets: Vec<f64>,
    ) -> Result<GpModel> {
        train.validate()?;
        kernel.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("cannot fit a GP on an empty training set"));
        }
        if targets.len() != train.len() {
            return Err(Error::invalid("target count differs from input count"));
        }
        let gram = kernel.gram(&train.inputs, &train.inputs)?;
        Self::fit_from_gram(
            kernel.clone(),
            train.inputs.clone(),
            gram,
            targets,
            train.noise_variance,
        )
    }

    /// Fit from a precomputed training-covariance matrix (used by the
    /// expected-kernel path, which replaces the Gram matrix).
    pub fn fit_from_gram(
        kernel: KernelSpec,
        inputs: Vec<Point2>,
        mut gram: DMatrix<f64>,
        targets: Vec<f64>,
        noise_variance: f64,
    ) -> Result<GpModel> {
        let n = inputs.len();
        if gram.nrows() != n || gram.ncols() != n || targets.len() != n || n == 0 {
            return Err(Error::invalid("gram/target dimensions do not match inputs"));
        }
        for i in 0..n {
            gram[(i, i)] += noise_variance;
        }
        // Jitter policy: one retry with 1e-8 * sigma_f^2 on the diagonal,
        // then give up.
        let chol = match linalg::cholesky_spd(&gram) {
            Ok(l) => l,
            Err(_) => {
                let jitter = 1e-8 * kernel.signal_variance();
                for i in 0..n {
                    gram[(i, i)] += jitter;
                }
                linalg::cholesky_spd(&gram)?
            }
        };
        let targets = DVector::from_vec(targets);
        let alpha = linalg::solve_cholesky(&chol, &targets);
        Ok(GpModel {
            kernel,
            inputs,
            noise_variance,
            chol,
            alpha,
            targets,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn inputs(&self) -> &[Point2] {
        &self.inputs
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior mean and (latent) variance at each query point.
    pub fn predict(&self, queries: &[Point2]) -> Result<Vec<(f64, f64)>> {
        for q in queries {
            q.check_finite()?;
        }
        let cross = if queries.is_empty() {
            return Ok(Vec::new());
        } else {
            self.kernel.gram(&self.inputs, queries)?
        };
        Ok(self.predict_from_cross(&cross, queries))
    }

    /// Prediction from a precomputed train-by-query covariance matrix
    /// (expected-kernel path).
    pub fn predict_from_cross(&self, cross: &DMatrix<f64>, queries: &[Point2]) -> Vec<(f64, f64)> {
        let var_floor = 1e-15 * self.kernel.signal_variance();
        (0..queries.len())
            .map(|j| {
                let k_star = DVector::from_column_slice(cross.column(j).as_slice());
                let mean = self.alpha.dot(&k_star);
                let v = linalg::solve_lower(&self.chol, &k_star);
                let prior = self.kernel.eval_unchecked(&queries[j], &queries[j]);
                let variance = (prior - v.dot(&v)).max(var_floor);
                (mean, variance)
            })
            .collect()
    }

    /// Negative log marginal likelihood of the targets this model was fit on:
    /// `1/2 t' a + sum(log L_ii) + n/2 log(2 pi)`.
    pub fn nlml(&self) -> f64 {
        let n = self.targets.len() as f64;
        let data_term = 0.5 * self.targets.dot(&self.alpha);
        let log_det_half: f64 = (0..self.chol.nrows())
            .map(|i| self.chol[(i, i)].ln())
            .sum();
        data_term + log_det_half + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}
