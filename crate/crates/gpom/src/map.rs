//! The global continuous occupancy map: a fixed-resolution grid of Gaussian
//! cell beliefs, precision-weighted incremental fusion with prior
//! correction, expected-sub-map fusion through pose sampling and mixture
//! moments, classification squashing, and file exports.
//!
//! Fusion has a single-writer contract; reads may proceed concurrently
//! between fusions. Per-sample sub-maps inside the expected fusion are
//! materialized only over touched cells, so the cost per fused scan is
//! `O(n_samples * n_points)` cells rather than full map copies.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2};
use crate::linalg;
use crate::sim::PoseBelief;

/// Gaussian belief over one map cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub variance: f64,
    pub observed: bool,
}

/// Per-fusion event counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    /// Sub-map points that landed in a cell and were fused.
    pub fused: usize,
    /// Sub-map points outside the map extent.
    pub dropped: usize,
    /// Fusions whose combined precision was non-positive and got clamped.
    pub degenerate: usize,
}

impl FuseStats {
    pub fn absorb(&mut self, other: FuseStats) {
        self.fused += other.fused;
        self.dropped += other.dropped;
        self.degenerate += other.degenerate;
    }
}

/// One scan's GP predictions at a set of points (local or global frame).
#[derive(Debug, Clone, Default)]
pub struct SubMap {
    pub points: Vec<Point2>,
    /// (mean, variance) per point.
    pub predictions: Vec<(f64, f64)>,
}

impl SubMap {
    pub fn new(points: Vec<Point2>, predictions: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() != predictions.len() {
            return Err(Error::invalid("sub-map points/predictions length mismatch"));
        }
        for (p, (m, v)) in points.iter().zip(&predictions) {
            p.check_finite()?;
            if !m.is_finite() || !(*v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "invalid sub-map prediction ({m}, {v})"
                )));
            }
        }
        Ok(SubMap {
            points,
            predictions,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which squashing function maps a cell belief to an occupancy probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquashKind {
    /// `Phi(mean / sqrt(1 + variance))`: the variance inflates toward 0.5.
    Probit,
    /// Plain logistic on the mean, ignoring the variance.
    Logistic,
}

/// Odd-symmetric error function so that `squash(m) + squash(-m)` pairs up
/// exactly.
fn erf_signed(x: f64) -> f64 {
    let magnitude = libm::erf(x.abs());
    if x < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 + 0.5 * erf_signed(z / std::f64::consts::SQRT_2)
}

/// Squash one Gaussian cell belief into an occupancy probability.
pub fn squash_belief(mean: f64, variance: f64, kind: SquashKind) -> f64 {
    match kind {
        SquashKind::Probit => normal_cdf(mean / (1.0 + variance).sqrt()),
        SquashKind::Logistic => 1.0 / (1.0 + (-mean).exp()),
    }
}

/// Mean and variance of a Gaussian mixture with the given weights.
pub fn mixture_moments(components: &[(f64, f64)], weights: &[f64]) -> Result<(f64, f64)> {
    if components.is_empty() || components.len() != weights.len() {
        return Err(Error::invalid("mixture needs matching, non-empty components/weights"));
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "mixture weights must be nonnegative and sum to 1 (sum = {sum})"
        )));
    }
    for &(m, v) in components {
        if !m.is_finite() || !(v > 0.0) {
            return Err(Error::invalid(format!("invalid mixture component ({m}, {v})")));
        }
    }
    if components.len() == 1 {
        return Ok(components[0]);
    }
    let mut mean = 0.0;
    let mut second = 0.0;
    for (&(m, v), &w) in components.iter().zip(weights) {
        mean += w * m;
        second += w * (v + m * m);
    }
    Ok((mean, second - mean * mean))
}

/// Fixed-resolution occupancy grid with Gaussian cell beliefs.
#[derive(Debug, Clone)]
pub struct OccupancyMap {
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
    prior_mean: f64,
    prior_variance: f64,
    cells: Vec<Cell>,
}

impl OccupancyMap {
    /// `origin` is the lower-left corner of cell (0, 0).
    pub fn new(
        origin: Point2,
        resolution: f64,
        width: usize,
        height: usize,
        prior_mean: f64,
        prior_variance: f64,
    ) -> Result<Self> {
        origin.check_finite()?;
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!("invalid resolution {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("map must have at least one cell"));
        }
        if !(prior_variance > 0.0 && prior_variance.is_finite()) || !prior_mean.is_finite() {
            return Err(Error::invalid("invalid prior belief"));
        }
        Ok(OccupancyMap {
            origin,
            resolution,
            width,
            height,
            prior_mean,
            prior_variance,
            cells: vec![
                Cell {
                    mean: prior_mean,
                    variance: prior_variance,
                    observed: false,
                };
                width * height
            ],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, index: usize) -> &Cell {
        &self.cells[index]
    }

    /// Index of the cell containing `p`, or None outside the extent.
    pub fn cell_index(&self, p: &Point2) -> Option<usize> {
        let cx = ((p.x - self.origin.x) / self.resolution).floor();
        let cy = ((p.y - self.origin.y) / self.resolution).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some(cy as usize * self.width + cx as usize)
    }

    pub fn cell_center(&self, index: usize) -> Point2 {
        let cx = index % self.width;
        let cy = index / self.width;
        Point2::new(
            self.origin.x + (cx as f64 + 0.5) * self.resolution,
            self.origin.y + (cy as f64 + 0.5) * self.resolution,
        )
    }

    /// Centers of every cell, row-major from the origin row upward.
    pub fn cell_centers(&self) -> Vec<Point2> {
        (0..self.cells.len()).map(|i| self.cell_center(i)).collect()
    }

    /// Precision-weighted fusion of one prediction into one cell, with the
    /// shared prior subtracted once so repeated fusions do not double-count
    /// it. Returns true when the combined precision had to be clamped.
    fn fuse_cell(cell: &mut Cell, prior_mean: f64, prior_variance: f64, mean: f64, variance: f64) -> bool {
        let prior_precision = 1.0 / prior_variance;
        let cell_precision = 1.0 / cell.variance;
        let sub_precision = 1.0 / variance;
        let mut precision = cell_precision + sub_precision - prior_precision;
        let mut degenerate = false;
        if !(precision > 0.0) || !precision.is_finite() {
            precision = prior_precision + 1e-9;
            degenerate = true;
        }
        let weighted = cell_precision * cell.mean + sub_precision * mean
            - prior_precision * prior_mean;
        cell.variance = 1.0 / precision;
        cell.mean = cell.variance * weighted;
        cell.observed = true;
        degenerate
    }

    /// Fuse a sub-map whose points are already in the global frame. Points
    /// outside the extent are dropped and counted.
    pub fn bcm_fuse(&mut self, sub: &SubMap) -> FuseStats {
        let mut stats = FuseStats::default();
        for (p, &(mean, variance)) in sub.points.iter().zip(&sub.predictions) {
            match self.cell_index(p) {
                Some(idx) => {
                    let cell = &mut self.cells[idx];
                    if Self::fuse_cell(cell, self.prior_mean, self.prior_variance, mean, variance)
                    {
                        stats.degenerate += 1;
                    }
                    stats.fused += 1;
                }
                None => stats.dropped += 1,
            }
        }
        stats
    }

    /// Fuse a local-frame sub-map placed at one or more weighted poses.
    ///
    /// With a single unit-weight placement this is exactly `bcm_fuse` of the
    /// transformed sub-map. With several placements, each placement's fused
    /// beliefs are computed on a sparse overlay of touched cells and the
    /// final cell belief is the weighted mixture over placements, where a
    /// placement that did not touch a cell contributes the pre-fusion
    /// belief.
    pub fn fuse_submap_at(
        &mut self,
        local: &SubMap,
        placements: &[(Pose2, f64)],
    ) -> Result<FuseStats> {
        if placements.is_empty() {
            return Err(Error::invalid("need at least one placement"));
        }
        let weight_sum: f64 = placements.iter().map(|(_, w)| w).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "placement weights must sum to 1, got {weight_sum}"
            )));
        }

        if placements.len() == 1 {
            let transformed = transform_submap(local, &placements[0].0);
            return Ok(self.bcm_fuse(&transformed));
        }

        let mut stats = FuseStats::default();
        // per-placement sparse overlays of would-be fused beliefs
        let mut overlays: Vec<BTreeMap<usize, Cell>> = Vec::with_capacity(placements.len());
        for (pose, _) in placements {
            let mut overlay: BTreeMap<usize, Cell> = BTreeMap::new();
            for (p, &(mean, variance)) in local.points.iter().zip(&local.predictions) {
                let global = pose.transform(p);
                match self.cell_index(&global) {
                    Some(idx) => {
                        let cell = overlay.entry(idx).or_insert_with(|| self.cells[idx]);
                        if Self::fuse_cell(
                            cell,
                            self.prior_mean,
                            self.prior_variance,
                            mean,
                            variance,
                        ) {
                            stats.degenerate += 1;
                        }
                        stats.fused += 1;
                    }
                    None => stats.dropped += 1,
                }
            }
            overlays.push(overlay);
        }

        let mut touched: Vec<usize> = overlays
            .iter()
            .flat_map(|o| o.keys().copied())
            .collect();
        touched.sort_unstable();
        touched.dedup();

        let weights: Vec<f64> = placements.iter().map(|(_, w)| *w).collect();
        for idx in touched {
            let before = self.cells[idx];
            let components: Vec<(f64, f64)> = overlays
                .iter()
                .map(|o| {
                    let c = o.get(&idx).copied().unwrap_or(before);
                    (c.mean, c.variance)
                })
                .collect();
            let (mean, variance) = mixture_moments(&components, &weights)?;
            self.cells[idx] = Cell {
                mean,
                variance: variance.max(1e-300),
                observed: true,
            };
        }
        Ok(stats)
    }

    /// Expected-sub-map fusion: draw pose samples from the belief, place the
    /// deterministic local sub-map at each sample, and take the equal-weight
    /// mixture of the per-sample fused maps. Identical samples are merged,
    /// so a zero-covariance belief degenerates to a plain fusion at the mean
    /// pose.
    pub fn expected_submap_fuse(
        &mut self,
        local: &SubMap,
        pose: &PoseBelief,
        n_samples: usize,
        seed: u64,
    ) -> Result<FuseStats> {
        if n_samples == 0 {
            return Err(Error::invalid("need at least one pose sample"));
        }
        pose.validate()?;
        let factor = linalg::psd_factor3(&pose.covariance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<Pose2> = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            if factor == nalgebra::Matrix3::zeros() {
                samples.push(pose.pose);
                continue;
            }
            let z = nalgebra::Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let d = factor * z;
            samples.push(Pose2::new(
                pose.pose.x + d[0],
                pose.pose.y + d[1],
                pose.pose.heading + d[2],
            ));
        }

        // merge bit-identical samples; order of first appearance
        let mut merged: Vec<(Pose2, usize)> = Vec::new();
        for s in samples {
            match merged.iter_mut().find(|(p, _)| {
                p.x.to_bits() == s.x.to_bits()
                    && p.y.to_bits() == s.y.to_bits()
                    && p.heading.to_bits() == s.heading.to_bits()
            }) {
                Some((_, count)) => *count += 1,
                None => merged.push((s, 1)),
            }
        }
        let placements: Vec<(Pose2, f64)> = merged
            .into_iter()
            .map(|(p, count)| (p, count as f64 / n_samples as f64))
            .collect();
        self.fuse_submap_at(local, &placements)
    }

    /// Per-cell occupancy probability; unobserved cells report 0.5 exactly.
    pub fn occupancy_probabilities(&self, kind: SquashKind) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| {
                if c.observed {
                    squash_belief(c.mean, c.variance, kind)
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// 8-bit PGM export, 0 = occupied .. 255 = free, linear in probability.
    /// Rows are written north (max y) first, matching image conventions.
    pub fn write_pgm(&self, path: &std::path::Path, kind: SquashKind) -> Result<()> {
        let probs = self.occupancy_probabilities(kind);
        let mut out = Vec::with_capacity(self.cells.len() + 32);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                let p = probs[row * self.width + col];
                out.push(255 - (p * 255.0).round() as u8);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// CSV export: one row per cell with coordinates, belief and squashed
    /// probability.
    pub fn write_csv(&self, path: &std::path::Path, kind: SquashKind) -> Result<()> {
        std::fs::write(path, self.to_csv(kind))?;
        Ok(())
    }

    pub fn to_csv(&self, kind: SquashKind) -> String {
        let probs = self.occupancy_probabilities(kind);
        let mut out = String::from("x,y,mean,variance,probability\n");
        for (i, cell) in self.cells.iter().enumerate() {
            let c = self.cell_center(i);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.x, c.y, cell.mean, cell.variance, probs[i]
            ));
        }
        out
    }
}

/// Transform a local-frame sub-map into the global frame.
pub fn transform_submap(local: &SubMap, pose: &Pose2) -> SubMap {
    SubMap {
        points: local.points.iter().map(|p| pose.transform(p)).collect(),
        predictions: local.predictions.clone(),
    }
}
