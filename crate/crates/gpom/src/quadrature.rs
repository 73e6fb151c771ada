//! Gauss-Hermite quadrature rules for integrals of the form
//! `int exp(-x^2) f(x) dx` over the whole real line.
//!
//! Nodes and weights come from the Golub-Welsch eigenvalue construction: the
//! Hermite three-term recurrence yields a symmetric tridiagonal matrix with
//! zeros on the diagonal and `sqrt(k/2)` on the off-diagonal; its eigenvalues
//! are the nodes and the squared first eigenvector components (times
//! `sqrt(pi)`) are the weights. An n-node rule integrates polynomials up to
//! degree `2n - 1` exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A one-dimensional Gauss-Hermite rule.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be at least 1"));
        }
        let mut m = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let off = (k as f64 * 0.5).sqrt();
            m[(k - 1, k)] = off;
            m[(k, k - 1)] = off;
        }
        let eig = m.symmetric_eigen();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0 * sqrt_pi)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // The rule is symmetric about zero by construction; enforce that
        // exactly so downstream odd-moment cancellations are clean.
        let n = pairs.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let node = 0.5 * (pairs[j].0 - pairs[i].0);
            let weight = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-node, weight);
            pairs[j] = (node, weight);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }

        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Quadrature of `exp(-x^2) * f(x)` over the real line.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Expectation of `f` under a scalar Gaussian N(mean, variance).
    pub fn gaussian_expectation<F: FnMut(f64) -> f64>(
        &self,
        mean: f64,
        variance: f64,
        mut f: F,
    ) -> f64 {
        if variance <= 0.0 {
            return f(mean);
        }
        let scale = (2.0 * variance).sqrt();
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(mean + scale * u))
            .sum();
        total / self.weight_sum()
    }
}
