//! Hyperparameter selection by minimizing the (warped) negative log marginal
//! likelihood with a derivative-free Nelder-Mead search.
//!
//! The search runs in log space for the positivity-constrained parameters,
//! counts every objective evaluation against a fixed budget, and keeps the
//! best point seen so far. The evaluation sequence does not depend on the
//! budget, so enlarging the budget can only improve the result.

use crate::error::{Error, Result};
use crate::gp::{GpModel, TrainingSet};
use crate::kernels::KernelSpec;
use crate::warp::{wgp_nlml, WarpSpec};

/// Hard box on all search coordinates (natural-log space for constrained
/// parameters). Keeps the simplex away from degenerate fits.
const PARAM_BOUND: f64 = 8.0;

const COLLAPSE_TOL: f64 = 1e-9;
const RESTART_STEPS: [f64; 4] = [0.5, 0.1, 1.0, 0.05];

struct Objective<'a> {
    train: &'a TrainingSet,
    kernel_template: KernelSpec,
    warp_template: Option<WarpSpec>,
    kernel_dims: usize,
    evaluations: usize,
    successes: usize,
    budget: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<'a> Objective<'a> {
    fn decode(&self, params: &[f64]) -> Result<(KernelSpec, Option<WarpSpec>)> {
        let kernel = self
            .kernel_template
            .with_log_params(&params[..self.kernel_dims])?;
        let warp = match &self.warp_template {
            Some(w) => Some(w.with_opt_params(&params[self.kernel_dims..])?),
            None => None,
        };
        Ok((kernel, warp))
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    /// One budget-counted objective evaluation; +inf on failure or bounds.
    fn eval(&mut self, params: &[f64]) -> f64 {
        if params.iter().any(|p| !p.is_finite() || p.abs() > PARAM_BOUND) {
            return f64::INFINITY;
        }
        if self.exhausted() {
            return f64::INFINITY;
        }
        self.evaluations += 1;
        let value = match self.decode(params) {
            Ok((kernel, warp)) => {
                let nlml = match &warp {
                    Some(w) => wgp_nlml(self.train, &kernel, w),
                    None => GpModel::fit(self.train, &kernel).map(|m| m.nlml()),
                };
                match nlml {
                    Ok(v) if v.is_finite() => v,
                    _ => f64::INFINITY,
                }
            }
            Err(_) => f64::INFINITY,
        };
        if value.is_finite() {
            self.successes += 1;
            let better = self.best.as_ref().map(|(_, b)| value < *b).unwrap_or(true);
            if better {
                self.best = Some((params.to_vec(), value));
            }
        }
        value
    }
}

/// Minimize the NLML over kernel (and optionally warp) hyperparameters.
///
/// `budget` is the total number of NLML evaluations allowed; with a budget of
/// one the initial hyperparameters are returned together with their NLML.
pub fn optimize_hyperparameters(
    train: &TrainingSet,
    kernel_init: &KernelSpec,
    warp_init: Option<&WarpSpec>,
    budget: usize,
) -> Result<(KernelSpec, Option<WarpSpec>, f64)> {
    if budget == 0 {
        return Err(Error::invalid("optimization budget must be at least 1"));
    }
    kernel_init.validate()?;
    if let Some(w) = warp_init {
        w.validate()?;
    }

    let mut x0 = kernel_init.to_log_params();
    let kernel_dims = x0.len();
    if let Some(w) = warp_init {
        x0.extend(w.to_opt_params());
    }
    // Clamp the start into the search box so the simplex has room.
    for p in &mut x0 {
        *p = p.clamp(-PARAM_BOUND + 1.0, PARAM_BOUND - 1.0);
    }

    let mut obj = Objective {
        train,
        kernel_template: kernel_init.clone(),
        warp_template: warp_init.cloned(),
        kernel_dims,
        evaluations: 0,
        successes: 0,
        budget,
        best: None,
    };

    let f0 = obj.eval(&x0);
    if budget == 1 || x0.is_empty() {
        return finish(obj, kernel_init, warp_init, f0);
    }

    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.clone(), f0));
    build_around(&mut obj, &mut simplex, &x0, 0.25);

    let mut restart_idx = 0usize;
    while !obj.exhausted() {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

        // Restart on collapse: rebuild around the best-known point with a
        // fresh step size.
        let spread = simplex
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if spread < COLLAPSE_TOL {
            let center = obj
                .best
                .as_ref()
                .map(|(p, _)| p.clone())
                .unwrap_or_else(|| simplex[0].0.clone());
            let f_center = simplex[0].1;
            simplex.clear();
            simplex.push((center.clone(), f_center));
            build_around(&mut obj, &mut simplex, &center, RESTART_STEPS[restart_idx]);
            restart_idx = (restart_idx + 1) % RESTART_STEPS.len();
            continue;
        }

        let worst = simplex[dim].clone();
        let second_worst = simplex[dim - 1].1;
        let best = simplex[0].1;
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|(v, _)| v[k]).sum::<f64>() / dim as f64)
            .collect();

        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + (c - w))
            .collect();
        let f_reflect = obj.eval(&reflect);

        if f_reflect < best {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let f_expand = obj.eval(&expand);
            simplex[dim] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < second_worst {
            simplex[dim] = (reflect, f_reflect);
        } else {
            let toward = if f_reflect < worst.1 { &reflect } else { &worst.0 };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(toward)
                .map(|(c, t)| c + 0.5 * (t - c))
                .collect();
            let f_contract = obj.eval(&contract);
            if f_contract < worst.1.min(f_reflect) {
                simplex[dim] = (contract, f_contract);
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = anchor
                        .iter()
                        .zip(&vertex.0)
                        .map(|(a, v)| a + 0.5 * (v - a))
                        .collect();
                    let f = obj.eval(&shrunk);
                    *vertex = (shrunk, f);
                    if obj.exhausted() {
                        break;
                    }
                }
            }
        }
    }

    finish(obj, kernel_init, warp_init, f0)
}

fn build_around(
    obj: &mut Objective<'_>,
    simplex: &mut Vec<(Vec<f64>, f64)>,
    center: &[f64],
    step: f64,
) {
    for k in 0..center.len() {
        let mut v = center.to_vec();
        v[k] += if v[k] + step <= PARAM_BOUND { step } else { -step };
        let f = obj.eval(&v);
        simplex.push((v, f));
    }
}

fn finish(
    obj: Objective<'_>,
    kernel_init: &KernelSpec,
    warp_init: Option<&WarpSpec>,
    f0: f64,
) -> Result<(KernelSpec, Option<WarpSpec>, f64)> {
    if obj.successes == 0 {
        return Err(Error::OptimizationFailed {
            evaluations: obj.evaluations,
        });
    }
    let (params, value) = obj.best.clone().unwrap();
    // If nothing improved on the start, hand back the caller's spec verbatim.
    if value >= f0 {
        return Ok((kernel_init.clone(), warp_init.cloned(), f0));
    }
    let (kernel, warp) = obj.decode(&params)?;
    Ok((kernel, warp, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se_sample_set(lengthscale: f64, n: usize, seed: u64) -> TrainingSet {
        // Draw a sample path from a known SE GP and return it as training
        // data; used to check that optimization recovers the length scale.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point2> = (0..n)
            .map(|_| Point2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)))
            .collect();
        let kernel = KernelSpec::se(1.0, lengthscale);
        let mut k = kernel.gram(&pts, &pts).unwrap();
        for i in 0..n {
            k[(i, i)] += 1e-8;
        }
        let l = crate::linalg::cholesky_spd(&k).unwrap();
        let z = nalgebra::DVector::from_fn(n, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y = l * z;
        let labels: Vec<f64> = y.iter().map(|v| v + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        TrainingSet::new(pts, labels, 0.0025).unwrap()
    }

    #[test]
    fn budget_one_returns_initial() {
        let train = se_sample_set(1.0, 15, 1);
        let init = KernelSpec::se(0.5, 2.0);
        let (kernel, warp, nlml) =
            optimize_hyperparameters(&train, &init, None, 1).unwrap();
        assert_eq!(kernel, init);
        assert!(warp.is_none());
        let direct = GpModel::fit(&train, &init).unwrap().nlml();
        assert_eq!(nlml, direct);
    }

    #[test]
    fn recovers_length_scale_within_factor_two() {
        let train = se_sample_set(1.0, 40, 2);
        let init = KernelSpec::se(0.5, 4.0);
        let (kernel, _, achieved) =
            optimize_hyperparameters(&train, &init, None, 500).unwrap();
        let initial = GpModel::fit(&train, &init).unwrap().nlml();
        assert!(achieved <= initial);
        match kernel {
            KernelSpec::SquaredExponential { length_scale, .. } => {
                assert!(
                    length_scale > 0.5 && length_scale < 2.0,
                    "recovered length scale {length_scale}"
                );
            }
            other => panic!("family changed: {other:?}"),
        }
    }

    #[test]
    fn nlml_is_monotone_in_budget() {
        let train = se_sample_set(0.8, 20, 3);
        let init = KernelSpec::se(0.3, 3.0);
        let mut prev = f64::INFINITY;
        for budget in [1usize, 2, 4, 8, 16, 32, 64, 128, 256] {
            let (_, _, nlml) = optimize_hyperparameters(&train, &init, None, budget).unwrap();
            assert!(
                nlml <= prev + 1e-12,
                "budget {budget}: NLML {nlml} > previous {prev}"
            );
            prev = nlml;
        }
    }

    #[test]
    fn optimizes_warp_parameters_too() {
        let train = se_sample_set(1.0, 25, 4);
        let init = KernelSpec::se(1.0, 1.0);
        let warp = WarpSpec::tanh_sum(vec![0.3], vec![1.0], vec![0.0]);
        let (kernel, warp_out, achieved) =
            optimize_hyperparameters(&train, &init, Some(&warp), 300).unwrap();
        kernel.validate().unwrap();
        let warp_out = warp_out.expect("warp preserved");
        warp_out.validate().unwrap();
        let initial = wgp_nlml(&train, &init, &warp).unwrap();
        assert!(achieved <= initial);
    }

    #[test]
    fn all_failures_error() {
        // A training set that cannot factor: two identical points, zero
        // noise, and a kernel whose jitter cannot rescue it because the
        // matrix is exactly singular... the 1e-8 jitter does rescue SE, so
        // force failure through an absurd initial spec instead: zero-size
        // budget path is covered elsewhere, here we use labels that produce
        // non-finite NLML.
        let train = TrainingSet::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1e-9, 0.0)],
            vec![1e200, -1e200],
            0.0,
        )
        .unwrap();
        let init = KernelSpec::se(1.0, 1e3);
        match optimize_hyperparameters(&train, &init, None, 4) {
            Err(Error::OptimizationFailed { evaluations }) => assert!(evaluations >= 1),
            other => panic!("expected optimization failure, got {other:?}"),
        }
    }
}
