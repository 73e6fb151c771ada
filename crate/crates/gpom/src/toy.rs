//! One-dimensional regression demos that exercise the uncertain-input and
//! warping machinery end to end and emit plot-ready CSV curves.
//!
//! The 1-D problems are embedded on the x-axis of the 2-D kernels (y = 0,
//! zero variance on the second axis).

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geom::Point2;
use crate::gp::{GpModel, TrainingSet};
use crate::kernels::KernelSpec;
use crate::optimize::optimize_hyperparameters;
use crate::quadrature::GaussHermite;
use crate::uncertain::{expected_gram, IntegrationMethod, PairMode, UncertainPoint};
use crate::warp::{self, WarpSpec};

/// Oscillating reference curve with an exponentially growing left tail.
pub fn wiggle_truth(x: f64) -> f64 {
    0.2 * (x * x).cos() * (-x).exp() + 0.15 * x.sin()
}

/// Smooth step: plateaus at -1 and +1 with a sharp transition, the shape
/// occupancy labels take along a laser beam.
pub fn step_truth(x: f64) -> f64 {
    (10.0 * x).tanh()
}

const NOISE_STD_Y: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct UncertainInputDemo {
    pub csv: String,
    /// Mean GP-EK interval width divided by mean plain-GP interval width.
    pub width_ratio: f64,
    /// Fraction of grid points where the truth lies inside the GP-EK
    /// two-sigma band.
    pub coverage: f64,
}

/// Fit a plain GP (input noise ignored) and a GP with the expected kernel
/// (input noise integrated) on the same noisy-input sample of the wiggle
/// curve; emit `(x, truth, gp_mean, gp_std, gpek_mean, gpek_std)` rows.
pub fn run_uncertain_input_demo(seed: u64, input_noise_std: f64) -> Result<UncertainInputDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let (lo, hi) = (-2.0, 3.0);

    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x_true = rng.gen_range(lo..hi);
        let x_observed = x_true + input_noise_std * rng.sample::<f64, _>(StandardNormal);
        let y = wiggle_truth(x_true) + NOISE_STD_Y * rng.sample::<f64, _>(StandardNormal);
        inputs.push(Point2::new(x_observed, 0.0));
        labels.push(y);
    }
    let train = TrainingSet::new(inputs.clone(), labels.clone(), NOISE_STD_Y * NOISE_STD_Y)?;

    let (kernel, _, _) =
        optimize_hyperparameters(&train, &KernelSpec::se(0.25, 1.0), None, 200)?;

    let grid: Vec<Point2> = (0..120)
        .map(|i| Point2::new(lo + (hi - lo) * i as f64 / 119.0, 0.0))
        .collect();

    let plain = GpModel::fit(&train, &kernel)?.predict(&grid)?;

    let cov = Matrix2::new(input_noise_std * input_noise_std, 0.0, 0.0, 0.0);
    let upoints: Vec<UncertainPoint> = inputs
        .iter()
        .map(|p| UncertainPoint {
            mean: *p,
            covariance: cov,
        })
        .collect();
    let eg = expected_gram(
        &kernel,
        &upoints,
        &grid,
        &IntegrationMethod::GaussHermite {
            order: 9,
            pair_mode: PairMode::Difference,
        },
    )?;
    let ek_model = GpModel::fit_from_gram(
        kernel.clone(),
        inputs,
        eg.train_train,
        labels,
        NOISE_STD_Y * NOISE_STD_Y,
    )?;
    let ek = ek_model.predict_from_cross(&eg.train_query, &grid);

    let mut csv = String::from("x,truth,gp_mean,gp_std,gpek_mean,gpek_std\n");
    let mut width_plain = 0.0;
    let mut width_ek = 0.0;
    let mut covered = 0usize;
    for (i, q) in grid.iter().enumerate() {
        let truth = wiggle_truth(q.x);
        let (gm, gv) = plain[i];
        let (em, ev) = ek[i];
        let gs = gv.sqrt();
        let es = ev.sqrt();
        width_plain += gs;
        width_ek += es;
        if (truth - em).abs() <= 2.0 * es {
            covered += 1;
        }
        csv.push_str(&format!("{},{},{},{},{},{}\n", q.x, truth, gm, gs, em, es));
    }
    Ok(UncertainInputDemo {
        csv,
        width_ratio: width_ek / width_plain,
        coverage: covered as f64 / grid.len() as f64,
    })
}

#[derive(Debug, Clone)]
pub struct WarpedRegressionDemo {
    pub csv: String,
    pub rmse_gp: f64,
    pub rmse_tanh: f64,
    pub rmse_poly: f64,
    /// Mean two-sigma band width per model over the grid; the polynomial
    /// warp is expected (not asserted) to give the narrowest band.
    pub band_gp: f64,
    pub band_tanh: f64,
    pub band_poly: f64,
}

struct Curve {
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn fit_curve(
    train: &TrainingSet,
    kernel_init: &KernelSpec,
    warp_init: Option<&WarpSpec>,
    budget: usize,
    grid: &[Point2],
    rule: &GaussHermite,
) -> Result<Curve> {
    let (kernel, warp, _) = optimize_hyperparameters(train, kernel_init, warp_init, budget)?;
    let warp = warp.unwrap_or(WarpSpec::Identity);
    let model = warp::fit_warped(train, &kernel, &warp)?;
    let preds = warp::wgp_predict(&model, &warp, grid, rule)?;
    let mut curve = Curve {
        mean: Vec::with_capacity(grid.len()),
        lo: Vec::with_capacity(grid.len()),
        hi: Vec::with_capacity(grid.len()),
    };
    for p in preds {
        let s = p.latent_variance.sqrt();
        curve.mean.push(p.mean);
        curve.lo.push(warp.inverse(p.latent_mean - 2.0 * s)?);
        curve.hi.push(warp.inverse(p.latent_mean + 2.0 * s)?);
    }
    Ok(curve)
}

fn rmse_against_truth(curve: &Curve, grid: &[Point2], domain: (f64, f64)) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, q) in grid.iter().enumerate() {
        if q.x < domain.0 || q.x > domain.1 {
            continue;
        }
        let d = curve.mean[i] - step_truth(q.x);
        sum += d * d;
        count += 1;
    }
    (sum / count as f64).sqrt()
}

fn mean_band(curve: &Curve) -> f64 {
    curve
        .lo
        .iter()
        .zip(&curve.hi)
        .map(|(l, h)| h - l)
        .sum::<f64>()
        / curve.lo.len() as f64
}

/// Fit a plain GP, a two-step tanh warped GP, and a degree-five polynomial
/// warped GP on the same deterministic-input sample of the step curve.
pub fn run_warped_regression_demo(seed: u64) -> Result<WarpedRegressionDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 24;
    let (lo, hi) = (-1.5, 1.5);
    let inputs: Vec<Point2> = (0..n)
        .map(|i| Point2::new(lo + (hi - lo) * i as f64 / (n - 1) as f64, 0.0))
        .collect();
    let labels: Vec<f64> = inputs
        .iter()
        .map(|p| step_truth(p.x) + NOISE_STD_Y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let train = TrainingSet::new(inputs, labels, NOISE_STD_Y * NOISE_STD_Y)?;

    // extend beyond the data to show extrapolation behavior
    let grid: Vec<Point2> = (0..150)
        .map(|i| Point2::new(-2.5 + 5.0 * i as f64 / 149.0, 0.0))
        .collect();
    let rule = GaussHermite::new(20)?;
    let kernel_init = KernelSpec::se(1.0, 0.5);
    let budget = 300;

    let gp = fit_curve(&train, &kernel_init, None, budget, &grid, &rule)?;
    let tanh_warp = WarpSpec::tanh_sum(vec![0.3, 0.3], vec![1.0, 1.0], vec![-0.5, 0.5]);
    let tanh = fit_curve(&train, &kernel_init, Some(&tanh_warp), budget, &grid, &rule)?;
    let poly_warp = WarpSpec::polynomial(vec![0.1, 0.1, 0.1, 0.1]);
    let poly = fit_curve(&train, &kernel_init, Some(&poly_warp), budget, &grid, &rule)?;

    let mut csv = String::from(
        "x,truth,gp_mean,gp_lo,gp_hi,tanh_mean,tanh_lo,tanh_hi,poly_mean,poly_lo,poly_hi\n",
    );
    for (i, q) in grid.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            q.x,
            step_truth(q.x),
            gp.mean[i],
            gp.lo[i],
            gp.hi[i],
            tanh.mean[i],
            tanh.lo[i],
            tanh.hi[i],
            poly.mean[i],
            poly.lo[i],
            poly.hi[i],
        ));
    }
    let domain = (lo, hi);
    Ok(WarpedRegressionDemo {
        rmse_gp: rmse_against_truth(&gp, &grid, domain),
        rmse_tanh: rmse_against_truth(&tanh, &grid, domain),
        rmse_poly: rmse_against_truth(&poly, &grid, domain),
        band_gp: mean_band(&gp),
        band_tanh: mean_band(&tanh),
        band_poly: mean_band(&poly),
        csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_noise_collapses_ek_to_plain_gp() {
        let demo = run_uncertain_input_demo(3, 0.0).unwrap();
        for line in demo.csv.lines().skip(1) {
            let f: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
            assert!((f[2] - f[4]).abs() < 1e-8, "means differ: {line}");
            assert!((f[3] - f[5]).abs() < 1e-8, "stds differ: {line}");
        }
        assert!((demo.width_ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn expected_kernel_intervals_are_wider_on_average() {
        let demo = run_uncertain_input_demo(1, 0.6).unwrap();
        assert!(
            demo.width_ratio >= 1.0,
            "width ratio {} below 1",
            demo.width_ratio
        );
    }

    #[test]
    fn coverage_across_seeds() {
        let mut covered = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            covered += run_uncertain_input_demo(seed, 0.6).unwrap().coverage;
        }
        let mean_coverage = covered / seeds as f64;
        assert!(
            mean_coverage >= 0.90,
            "mean two-sigma coverage {mean_coverage}"
        );
    }

    #[test]
    fn demos_are_deterministic() {
        let a = run_uncertain_input_demo(7, 0.6).unwrap();
        let b = run_uncertain_input_demo(7, 0.6).unwrap();
        assert_eq!(a.csv, b.csv);
        let c = run_warped_regression_demo(7).unwrap();
        let d = run_warped_regression_demo(7).unwrap();
        assert_eq!(c.csv, d.csv);
    }

    #[test]
    fn identity_warp_fit_matches_plain_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<Point2> = (0..15)
            .map(|i| Point2::new(-1.0 + i as f64 * 0.15, 0.0))
            .collect();
        let labels: Vec<f64> = inputs
            .iter()
            .map(|p| step_truth(p.x) + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let train = TrainingSet::new(inputs, labels, 0.0025).unwrap();
        let grid: Vec<Point2> = (0..50).map(|i| Point2::new(-2.0 + i as f64 * 0.08, 0.0)).collect();
        let rule = GaussHermite::new(20).unwrap();
        let kernel_init = KernelSpec::se(1.0, 0.5);
        let plain = fit_curve(&train, &kernel_init, None, 120, &grid, &rule).unwrap();
        let identity = fit_curve(
            &train,
            &kernel_init,
            Some(&WarpSpec::Identity),
            120,
            &grid,
            &rule,
        )
        .unwrap();
        for i in 0..grid.len() {
            assert_eq!(plain.mean[i].to_bits(), identity.mean[i].to_bits());
            assert_eq!(plain.lo[i].to_bits(), identity.lo[i].to_bits());
            assert_eq!(plain.hi[i].to_bits(), identity.hi[i].to_bits());
        }
    }

    #[test]
    fn warped_fits_track_the_step_at_least_as_well() {
        let demo = run_warped_regression_demo(2).unwrap();
        assert!(
            demo.rmse_tanh <= demo.rmse_gp + 1e-9,
            "tanh RMSE {} vs GP {}",
            demo.rmse_tanh,
            demo.rmse_gp
        );
        assert!(
            demo.rmse_poly <= demo.rmse_gp + 1e-9,
            "poly RMSE {} vs GP {}",
            demo.rmse_poly,
            demo.rmse_gp
        );
    }
}
