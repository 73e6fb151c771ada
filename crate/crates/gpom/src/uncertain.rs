//! Uncertainty propagation into GP inference through the covariance
//! function, plus the sigma-point transform that pushes local scan points
//! through an uncertain pose.
//!
//! The expected kernel averages the covariance function over the input-noise
//! distribution, either by Monte-Carlo sampling or by tensor-product
//! Gauss-Hermite quadrature after the change of variables `x = L u + mean`
//! with `L L' = 2 Sigma`. Quadrature sums are normalized by the realized
//! weight sum, which makes a zero-covariance input reproduce the plain
//! kernel value and fixes the normalization constant without reference to
//! `pi` powers.

use nalgebra::{DMatrix, Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2};
use crate::gp::check_input_covariance;
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::quadrature::GaussHermite;
use crate::sim::PoseBelief;

/// A 2-D point with Gaussian position uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct UncertainPoint {
    pub mean: Point2,
    pub covariance: Matrix2<f64>,
}

impl UncertainPoint {
    pub fn new(mean: Point2, covariance: Matrix2<f64>) -> Result<Self> {
        mean.check_finite()?;
        check_input_covariance(&covariance)?;
        Ok(UncertainPoint { mean, covariance })
    }

    pub fn exact(mean: Point2) -> Self {
        UncertainPoint {
            mean,
            covariance: Matrix2::zeros(),
        }
    }

    fn is_exact(&self) -> bool {
        self.covariance == Matrix2::zeros()
    }
}

/// Second argument of an expected-kernel evaluation: deterministic (query
/// points) or uncertain (another training point).
#[derive(Debug, Clone, Copy)]
pub enum EndPoint {
    Fixed(Point2),
    Uncertain(UncertainPoint),
}

/// How pairwise expectations over two uncertain endpoints are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Integrate the difference distribution `N(mean_a - mean_b, Sa + Sb)`
    /// with one 2-D rule. Exact for stationary kernels and quadratic in the
    /// node count.
    Difference,
    /// Full tensor-product rule over the 4-D joint; quartic in the node
    /// count.
    Joint,
}

/// Integration backend for expected Gram matrices.
#[derive(Debug, Clone, Copy)]
pub enum IntegrationMethod {
    MonteCarlo { samples: usize, seed: u64 },
    GaussHermite { order: usize, pair_mode: PairMode },
}

/// Deterministic per-entry stream derivation so concurrent or reordered
/// Gram-matrix evaluation cannot change results.
pub(crate) fn derive_seed(base: u64, tag: u64, i: u64, j: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(i.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(j.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_point(
    p: &UncertainPoint,
    factor: &Matrix2<f64>,
    rng: &mut ChaCha8Rng,
) -> Point2 {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    Point2::new(
        p.mean.x + factor[(0, 0)] * z0,
        p.mean.y + factor[(1, 0)] * z0 + factor[(1, 1)] * z1,
    )
}

/// Monte-Carlo estimate of the expected kernel between an uncertain point
/// and a fixed or uncertain endpoint. Deterministic for a fixed seed.
pub fn expected_kernel_mc(
    spec: &KernelSpec,
    p: &UncertainPoint,
    q: &EndPoint,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("Monte-Carlo sample count must be at least 1"));
    }
    check_input_covariance(&p.covariance)?;
    let q_pt = match q {
        EndPoint::Fixed(pt) => {
            pt.check_finite()?;
            UncertainPoint::exact(*pt)
        }
        EndPoint::Uncertain(u) => {
            check_input_covariance(&u.covariance)?;
            *u
        }
    };
    // A degenerate distribution contributes no spread; evaluate directly so
    // the zero-covariance case is exact for any sample count.
    if p.is_exact() && q_pt.is_exact() {
        return spec.eval(&p.mean, &q_pt.mean);
    }
    let lp = linalg::psd_factor2(&linalg::clamp_psd2(&p.covariance))?;
    let lq = linalg::psd_factor2(&linalg::clamp_psd2(&q_pt.covariance))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let a = sample_point(p, &lp, &mut rng);
        let b = sample_point(&q_pt, &lq, &mut rng);
        total += spec.eval_unchecked(&a, &b);
    }
    Ok(total / n_samples as f64)
}

/// Gauss-Hermite estimate of the expected kernel between an uncertain
/// training point and a deterministic query point.
pub fn expected_kernel_gh(
    spec: &KernelSpec,
    p: &UncertainPoint,
    q: &Point2,
    rule: &GaussHermite,
) -> Result<f64> {
    spec.validate()?;
    q.check_finite()?;
    check_input_covariance(&p.covariance)?;
    if p.is_exact() {
        return spec.eval(&p.mean, q);
    }
    let l = linalg::psd_factor2(&(2.0 * linalg::clamp_psd2(&p.covariance)))?;
    let nodes = rule.nodes();
    let weights = rule.weights();
    let mut total = 0.0;
    let mut weight_total = 0.0;
    for (i1, &u1) in nodes.iter().enumerate() {
        for (i2, &u2) in nodes.iter().enumerate() {
            let w = weights[i1] * weights[i2];
            let x = Point2::new(
                p.mean.x + l[(0, 0)] * u1,
                p.mean.y + l[(1, 0)] * u1 + l[(1, 1)] * u2,
            );
            total += w * spec.eval_unchecked(&x, q);
            weight_total += w;
        }
    }
    Ok(total / weight_total)
}

/// Gauss-Hermite estimate with both endpoints uncertain.
pub fn expected_kernel_gh_pair(
    spec: &KernelSpec,
    p: &UncertainPoint,
    q: &UncertainPoint,
    rule: &GaussHermite,
    mode: PairMode,
) -> Result<f64> {
    match mode {
        PairMode::Difference => {
            // k(a, b) = k(a - b) for every implemented family, and the
            // difference of independent Gaussians is Gaussian with summed
            // covariance.
            let diff = UncertainPoint {
                mean: p.mean,
                covariance: p.covariance + q.covariance,
            };
            expected_kernel_gh(spec, &diff, &q.mean, rule)
        }
        PairMode::Joint => {
            spec.validate()?;
            check_input_covariance(&p.covariance)?;
            check_input_covariance(&q.covariance)?;
            if p.is_exact() && q.is_exact() {
                return spec.eval(&p.mean, &q.mean);
            }
            let lp = linalg::psd_factor2(&(2.0 * linalg::clamp_psd2(&p.covariance)))?;
            let lq = linalg::psd_factor2(&(2.0 * linalg::clamp_psd2(&q.covariance)))?;
            let nodes = rule.nodes();
            let weights = rule.weights();
            let mut total = 0.0;
            let mut weight_total = 0.0;
            for (i1, &u1) in nodes.iter().enumerate() {
                for (i2, &u2) in nodes.iter().enumerate() {
                    let a = Point2::new(
                        p.mean.x + lp[(0, 0)] * u1,
                        p.mean.y + lp[(1, 0)] * u1 + lp[(1, 1)] * u2,
                    );
                    let w12 = weights[i1] * weights[i2];
                    for (i3, &u3) in nodes.iter().enumerate() {
                        for (i4, &u4) in nodes.iter().enumerate() {
                            let b = Point2::new(
                                q.mean.x + lq[(0, 0)] * u3,
                                q.mean.y + lq[(1, 0)] * u3 + lq[(1, 1)] * u4,
                            );
                            let w = w12 * weights[i3] * weights[i4];
                            total += w * spec.eval_unchecked(&a, &b);
                            weight_total += w;
                        }
                    }
                }
            }
            Ok(total / weight_total)
        }
    }
}

/// Expected training and training-query covariance matrices.
pub struct ExpectedGram {
    pub train_train: DMatrix<f64>,
    pub train_query: DMatrix<f64>,
    /// Number of negative eigenvalues clipped to restore positive
    /// semi-definiteness of the training block.
    pub psd_clips: usize,
}

/// Build the expected Gram matrices for uncertain training points and
/// deterministic query points.
///
/// Training-training entries integrate both endpoints; training-query
/// entries integrate the training endpoint only. Diagonal entries are the
/// plain kernel variance (stationary families do not depend on location).
/// The training block is symmetrized by construction and eigenvalue-clipped
/// if its minimum eigenvalue falls below `-1e-8` (expected kernels need not
/// be positive definite in general).
pub fn expected_gram(
    spec: &KernelSpec,
    train: &[UncertainPoint],
    queries: &[Point2],
    method: &IntegrationMethod,
) -> Result<ExpectedGram> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("expected gram over an empty point list"));
    }
    let n = train.len();
    let mut tt = DMatrix::<f64>::zeros(n, n);
    let rule = match method {
        IntegrationMethod::GaussHermite { order, .. } => Some(GaussHermite::new(*order)?),
        IntegrationMethod::MonteCarlo { .. } => None,
    };
    for i in 0..n {
        tt[(i, i)] = spec.eval(&train[i].mean, &train[i].mean)?;
        for j in (i + 1)..n {
            let value = match method {
                IntegrationMethod::MonteCarlo { samples, seed } => expected_kernel_mc(
                    spec,
                    &train[i],
                    &EndPoint::Uncertain(train[j]),
                    *samples,
                    derive_seed(*seed, 0x54, i as u64, j as u64),
                )?,
                IntegrationMethod::GaussHermite { pair_mode, .. } => expected_kernel_gh_pair(
                    spec,
                    &train[i],
                    &train[j],
                    rule.as_ref().unwrap(),
                    *pair_mode,
                )?,
            };
            tt[(i, j)] = value;
            tt[(j, i)] = value;
        }
    }

    let psd_clips = repair_psd(&mut tt);

    let mut tq = DMatrix::<f64>::zeros(n, queries.len());
    for (jq, q) in queries.iter().enumerate() {
        for i in 0..n {
            tq[(i, jq)] = match method {
                IntegrationMethod::MonteCarlo { samples, seed } => expected_kernel_mc(
                    spec,
                    &train[i],
                    &EndPoint::Fixed(*q),
                    *samples,
                    derive_seed(*seed, 0x51, i as u64, jq as u64),
                )?,
                IntegrationMethod::GaussHermite { .. } => {
                    expected_kernel_gh(spec, &train[i], q, rule.as_ref().unwrap())?
                }
            };
        }
    }

    Ok(ExpectedGram {
        train_train: tt,
        train_query: tq,
        psd_clips,
    })
}

fn repair_psd(m: &mut DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= -1e-8 {
        return 0;
    }
    let mut clips = 0;
    let clipped = eig.eigenvalues.map(|v| {
        if v < 0.0 {
            clips += 1;
            0.0
        } else {
            v
        }
    });
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // re-symmetrize exactly after the reconstruction round trip
    *m = 0.5 * (&rebuilt + rebuilt.transpose());
    clips
}

/// Sigma-point scheme parameters. The defaults are the symmetric scheme
/// with points at `mean +- sqrt(L) * column`, zero center weight.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        UtParams {
            alpha: 1.0,
            beta: 0.0,
            kappa: 0.0,
        }
    }
}

/// Push local scan points through an uncertain planar pose with an unscented
/// transform, producing a Gaussian in the global frame per point.
pub fn unscented_transform(
    local_points: &[Point2],
    pose: &PoseBelief,
    params: &UtParams,
) -> Result<Vec<UncertainPoint>> {
    pose.validate()?;
    for p in local_points {
        p.check_finite()?;
    }
    let cov = &pose.covariance;
    if *cov == nalgebra::Matrix3::zeros() {
        return Ok(local_points
            .iter()
            .map(|p| UncertainPoint::exact(pose.pose.transform(p)))
            .collect());
    }

    let l_dim = 3.0;
    let lambda = params.alpha * params.alpha * (l_dim + params.kappa) - l_dim;
    let spread = l_dim + lambda;
    if spread <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma-point spread {spread} must be positive (alpha {}, kappa {})",
            params.alpha, params.kappa
        )));
    }
    let factor = linalg::psd_factor3(&(spread * cov))?;

    let w_center_mean = lambda / spread;
    let w_center_cov = w_center_mean + 1.0 - params.alpha * params.alpha + params.beta;
    let w_side = 0.5 / spread;

    let center = Vector3::new(pose.pose.x, pose.pose.y, pose.pose.heading);
    let mut sigma = Vec::with_capacity(7);
    sigma.push((center, w_center_mean, w_center_cov));
    for k in 0..3 {
        let col = factor.column(k).into_owned();
        sigma.push((center + col, w_side, w_side));
        sigma.push((center - col, w_side, w_side));
    }

    let out = local_points
        .iter()
        .map(|p| {
            let transformed: Vec<Vector2<f64>> = sigma
                .iter()
                .map(|(s, _, _)| {
                    let g = Pose2 {
                        x: s[0],
                        y: s[1],
                        heading: s[2],
                    }
                    .transform(p);
                    Vector2::new(g.x, g.y)
                })
                .collect();
            let mut mean = Vector2::zeros();
            for (t, (_, wm, _)) in transformed.iter().zip(&sigma) {
                mean += *wm * t;
            }
            let mut cov_out = Matrix2::zeros();
            for (t, (_, _, wc)) in transformed.iter().zip(&sigma) {
                let d = t - mean;
                cov_out += *wc * d * d.transpose();
            }
            UncertainPoint {
                mean: Point2::new(mean[0], mean[1]),
                covariance: linalg::clamp_psd2(&cov_out),
            }
        })
        .collect();
    Ok(out)
}

/// Closed-form expected squared-exponential kernel, for tests and
/// cross-checks only: with `x ~ N(mean, S)` and length-scale matrix `L`,
/// `E[k(x, q)] = sf^2 |I + S L^-1|^-1/2 exp(-1/2 d' (L + S)^-1 d)`.
pub fn expected_se_closed_form(
    signal_variance: f64,
    length_scales: [f64; 2],
    p: &UncertainPoint,
    q_mean: &Point2,
    q_cov: Option<&Matrix2<f64>>,
) -> f64 {
    let combined = match q_cov {
        Some(c) => p.covariance + c,
        None => p.covariance,
    };
    let lam = Matrix2::new(
        length_scales[0] * length_scales[0],
        0.0,
        0.0,
        length_scales[1] * length_scales[1],
    );
    let lam_inv = Matrix2::new(1.0 / lam[(0, 0)], 0.0, 0.0, 1.0 / lam[(1, 1)]);
    let det = (Matrix2::identity() + combined * lam_inv).determinant();
    let sum = lam + combined;
    let sum_inv = sum.try_inverse().expect("L + S invertible");
    let d = Vector2::new(p.mean.x - q_mean.x, p.mean.y - q_mean.y);
    signal_variance / det.sqrt() * (-0.5 * (d.transpose() * sum_inv * d)[(0, 0)]).exp()
}
