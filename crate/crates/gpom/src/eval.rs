//! Experiment orchestration: the incremental mapping pipeline for every
//! method combination, AUC scoring against a reference grid, sweeps over
//! motion-noise profiles, and report/artifact serialization.
//!
//! Cost per fused scan is cubic in that scan's training-point count; the
//! expected-sub-map path adds `n_samples` sparse fusions and the
//! expected-kernel path makes the Gram construction quadratic in the
//! quadrature order per entry.

use std::time::Instant;

use crate::config::{
    EkIntegration, EvalDomain, ExperimentConfig, Method, SourceConfig, UncertaintyMethod,
};
use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2};
use crate::gp::{GpModel, TrainingSet};
use crate::ingest::{self, ReferenceGrid};
use crate::kernels::KernelSpec;
use crate::map::{OccupancyMap, SquashKind, SubMap};
use crate::quadrature::GaussHermite;
use crate::sim::{self, PoseBelief, Scan};
use crate::spatial::KdTree;
use crate::uncertain::{self, IntegrationMethod, PairMode};
use crate::warp::{self, WarpSpec};

/// Event counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub fused_points: usize,
    pub dropped_points: usize,
    pub degenerate_fusions: usize,
    pub psd_clips: usize,
    pub skipped_records: usize,
    pub malformed_lines: usize,
    pub clipped_pose_covariances: usize,
}

/// Result summary for one experiment run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub profile: String,
    pub seed: u64,
    pub steps: usize,
    pub auc: Option<f64>,
    /// AUC restricted to cells observed by both the reference and the map.
    pub auc_mutual: Option<f64>,
    /// Why the AUC is undefined, when it is.
    pub auc_note: Option<String>,
    pub runtime_seconds: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub fuse_seconds: f64,
    pub per_step_seconds: Vec<f64>,
    pub counters: Counters,
    /// Step-indexed diagnostic when the pipeline aborted mid-run.
    pub error: Option<String>,
}

/// Map, reference and report from one run. The map is flushed even when the
/// report carries an error.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub map: OccupancyMap,
    pub reference: ReferenceGrid,
}

/// AUC by the rank-statistic formulation with midrank tie handling.
/// Exactly equals the pairwise comparison count (ties at half weight).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {positives} positive / {negatives} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_positive = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie group spanning ranks i+1 ..= j+1
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_positive += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = positives as f64;
    let n_neg = negatives as f64;
    Ok((rank_sum_positive - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// One mapping step: the pose belief used for inference and the scan.
#[derive(Debug, Clone)]
pub struct StepData {
    pub belief: PoseBelief,
    pub scan: Scan,
}

struct LoadedData {
    steps: Vec<StepData>,
    reference: ReferenceGrid,
    counters: Counters,
    profile: String,
    seed: u64,
}

fn load_data(config: &ExperimentConfig) -> Result<LoadedData> {
    let mut counters = Counters::default();
    match &config.source {
        SourceConfig::Simulate {
            world,
            steps,
            seed,
            profile,
            linear_velocity,
            angular_velocity,
            start,
        } => {
            let world = sim::build_world(world)?;
            let noise = sim::MotionNoise::profile(profile)?;
            let (step_data, true_poses, scans) = if *steps == 0 {
                (Vec::new(), Vec::new(), Vec::new())
            } else {
                let params = sim::SimParams {
                    steps: *steps,
                    start: Pose2::new(start[0], start[1], start[2]),
                    linear_velocity: *linear_velocity,
                    angular_velocity: *angular_velocity,
                    seed: *seed,
                    scan: sim::ScanConfig {
                        beams: config.sensor.beams,
                        fov: config.sensor.fov,
                        max_range: config.sensor.max_range,
                    },
                };
                let log = sim::simulate(&world, &noise, &params)?;
                split_sim_log(log)
            };
            let reference = reference_on_map_grid(config, &true_poses, &scans)?;
            Ok(LoadedData {
                steps: step_data,
                reference,
                counters,
                profile: profile.clone(),
                seed: *seed,
            })
        }
        SourceConfig::SimLog { path } => {
            let log = sim::read_log(path)?;
            let (step_data, true_poses, scans) = split_sim_log(log);
            let reference = reference_on_map_grid(config, &true_poses, &scans)?;
            Ok(LoadedData {
                steps: step_data,
                reference,
                counters,
                profile: "log".into(),
                seed: 0,
            })
        }
        SourceConfig::Carmen {
            log,
            pose_track,
            beam_decimation,
            scan_decimation,
            range_clip,
        } => {
            let parsed = ingest::parse_carmen(log)?;
            counters.skipped_records = parsed.skipped;
            counters.malformed_lines = parsed.malformed.len();
            let track = match pose_track {
                Some(path) => {
                    let track = ingest::load_pose_track(path)?;
                    counters.clipped_pose_covariances = track.clipped;
                    Some(track.poses)
                }
                None => None,
            };
            let mut steps = Vec::new();
            for (i, rec) in parsed
                .records
                .iter()
                .step_by(*scan_decimation)
                .enumerate()
            {
                let belief = match &track {
                    // association by index; extra scans past the track end
                    // are dropped
                    Some(poses) => match poses.get(i) {
                        Some(b) => *b,
                        None => break,
                    },
                    None => PoseBelief::exact(rec.laser_pose),
                };
                let mut angles = Vec::new();
                let mut ranges = Vec::new();
                let mut hits = Vec::new();
                let n = rec.ranges.len();
                for b in (0..n).step_by(*beam_decimation) {
                    let angle = if n > 1 {
                        rec.start_angle + rec.fov * b as f64 / (n - 1) as f64
                    } else {
                        rec.start_angle
                    };
                    let r = rec.ranges[b];
                    if r <= 0.0 {
                        continue;
                    }
                    if r >= *range_clip {
                        angles.push(angle);
                        ranges.push(*range_clip);
                        hits.push(false);
                    } else {
                        angles.push(angle);
                        ranges.push(r);
                        hits.push(true);
                    }
                }
                if ranges.is_empty() {
                    continue;
                }
                steps.push(StepData {
                    belief,
                    scan: Scan {
                        angles,
                        ranges,
                        hits,
                        max_range: *range_clip,
                    },
                });
            }
            // reference from the estimated trajectory itself
            let poses: Vec<Pose2> = steps.iter().map(|s| s.belief.pose).collect();
            let scans: Vec<Scan> = steps.iter().map(|s| s.scan.clone()).collect();
            let reference = reference_on_map_grid(config, &poses, &scans)?;
            Ok(LoadedData {
                steps,
                reference,
                counters,
                profile: "carmen".into(),
                seed: 0,
            })
        }
    }
}

fn split_sim_log(log: sim::SimLog) -> (Vec<StepData>, Vec<Pose2>, Vec<Scan>) {
    let mut steps = Vec::with_capacity(log.steps.len());
    let mut poses = Vec::with_capacity(log.steps.len());
    let mut scans = Vec::with_capacity(log.steps.len());
    for s in log.steps {
        poses.push(s.true_pose);
        scans.push(s.scan.clone());
        steps.push(StepData {
            belief: s.belief,
            scan: s.scan,
        });
    }
    (steps, poses, scans)
}

fn reference_on_map_grid(
    config: &ExperimentConfig,
    poses: &[Pose2],
    scans: &[Scan],
) -> Result<ReferenceGrid> {
    ingest::reference_map(
        poses,
        scans,
        Point2::new(config.map.origin[0], config.map.origin[1]),
        config.map.resolution,
        config.map.width,
        config.map.height,
    )
}

fn subsample(points: Vec<Point2>, labels: Vec<f64>, cap: usize) -> (Vec<Point2>, Vec<f64>) {
    if points.len() <= cap {
        return (points, labels);
    }
    let n = points.len();
    let mut out_p = Vec::with_capacity(cap);
    let mut out_l = Vec::with_capacity(cap);
    for i in 0..cap {
        let idx = i * n / cap;
        out_p.push(points[idx]);
        out_l.push(labels[idx]);
    }
    (out_p, out_l)
}

/// Cell centers of a resolution-aligned grid covering the points' bounding
/// box (expanded by `margin`), keeping only centers within `margin` of at
/// least one point.
fn query_cells_near(
    points: &[Point2],
    resolution: f64,
    margin: f64,
    clip: Option<&OccupancyMap>,
) -> Result<Vec<Point2>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let tree = KdTree::from_points(points)?;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let lo_x = ((min_x - margin) / resolution).floor() as i64;
    let hi_x = ((max_x + margin) / resolution).ceil() as i64;
    let lo_y = ((min_y - margin) / resolution).floor() as i64;
    let hi_y = ((max_y + margin) / resolution).ceil() as i64;
    let mut out = Vec::new();
    for cy in lo_y..hi_y {
        for cx in lo_x..hi_x {
            let center = Point2::new(
                (cx as f64 + 0.5) * resolution,
                (cy as f64 + 0.5) * resolution,
            );
            if let Some(map) = clip {
                if map.cell_index(&center).is_none() {
                    continue;
                }
            }
            if tree.has_within(&center, margin) {
                out.push(center);
            }
        }
    }
    Ok(out)
}

fn default_margin(kernel: &KernelSpec, resolution: f64) -> f64 {
    let scale = match kernel {
        KernelSpec::SparseCompact { support_radius, .. } => *support_radius,
        other => 3.0 * other.range_scale(),
    };
    scale.max(2.0 * resolution)
}

/// Run one experiment end to end. Setup failures return an error; a failure
/// inside the incremental loop is reported in `report.error` with its step
/// index and the partially built map is still returned.
pub fn run_experiment(config: &ExperimentConfig, method: Method) -> Result<ExperimentOutcome> {
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => Error::Config(other.to_string()),
    })?;
    let wall_start = Instant::now();
    let data = load_data(config)?;
    let mut counters = data.counters;

    let model = config.model_for(method);
    let warp_spec = if method.warped() {
        model.warp.clone()
    } else {
        WarpSpec::Identity
    };

    let mut fit_seconds = 0.0;
    let mut predict_seconds = 0.0;
    let mut fuse_seconds = 0.0;
    let mut per_step_seconds = Vec::with_capacity(data.steps.len());

    // Hyperparameters from the first scan's local training fragment.
    let (kernel, warp_spec) = if config.gp.learn_hyperparameters && !data.steps.is_empty() {
        let frag = sim::scan_to_training(&data.steps[0].scan, config.gp.free_spacing)?;
        let (points, labels) = subsample(frag.points, frag.labels, config.gp.fit_subset);
        if points.is_empty() {
            (model.kernel.clone(), warp_spec)
        } else {
            let train = TrainingSet::new(points, labels, config.gp.noise_variance)?;
            let t = Instant::now();
            let warp_init = if warp_spec.is_identity() {
                None
            } else {
                Some(&warp_spec)
            };
            let (kernel, warp_out, _) = crate::optimize::optimize_hyperparameters(
                &train,
                &model.kernel,
                warp_init,
                config.gp.nlml_budget,
            )?;
            fit_seconds += t.elapsed().as_secs_f64();
            (kernel, warp_out.unwrap_or(WarpSpec::Identity))
        }
    } else {
        (model.kernel.clone(), warp_spec)
    };

    let prior_variance = kernel.signal_variance() + config.gp.noise_variance;
    let mut map = OccupancyMap::new(
        Point2::new(config.map.origin[0], config.map.origin[1]),
        config.map.resolution,
        config.map.width,
        config.map.height,
        0.0,
        prior_variance,
    )?;

    let margin = config
        .map
        .query_margin
        .unwrap_or_else(|| default_margin(&kernel, config.map.resolution));
    let prediction_rule = GaussHermite::new(config.gp.prediction_quadrature)?;

    let mut error: Option<String> = None;
    'steps: for (step_idx, step) in data.steps.iter().enumerate() {
        let step_start = Instant::now();
        let step_result: Result<()> = (|| {
            let frag = sim::scan_to_training(&step.scan, config.gp.free_spacing)?;
            let (points, labels) = subsample(frag.points, frag.labels, config.gp.fit_subset);
            if points.is_empty() {
                return Ok(());
            }
            match method.uncertainty() {
                UncertaintyMethod::None | UncertaintyMethod::ExpectedSubmap => {
                    // inference in the robot frame with deterministic inputs
                    let train =
                        TrainingSet::new(points.clone(), labels, config.gp.noise_variance)?;
                    let t = Instant::now();
                    let gp = warp::fit_warped(&train, &kernel, &warp_spec)?;
                    fit_seconds += t.elapsed().as_secs_f64();

                    let queries =
                        query_cells_near(&points, config.map.resolution, margin, None)?;
                    if queries.is_empty() {
                        return Ok(());
                    }
                    let t = Instant::now();
                    let preds = warp::wgp_predict(&gp, &warp_spec, &queries, &prediction_rule)?;
                    predict_seconds += t.elapsed().as_secs_f64();
                    let sub = SubMap::new(
                        queries,
                        preds
                            .iter()
                            .map(|p| (p.mean, p.latent_variance))
                            .collect(),
                    )?;

                    let t = Instant::now();
                    let stats = match method.uncertainty() {
                        UncertaintyMethod::None => {
                            map.fuse_submap_at(&sub, &[(step.belief.pose, 1.0)])?
                        }
                        _ => map.expected_submap_fuse(
                            &sub,
                            &step.belief,
                            config.uncertainty.esm_samples,
                            uncertain::derive_seed(
                                config.uncertainty.seed,
                                0xE5,
                                step_idx as u64,
                                data.seed,
                            ),
                        )?,
                    };
                    fuse_seconds += t.elapsed().as_secs_f64();
                    counters.fused_points += stats.fused;
                    counters.dropped_points += stats.dropped;
                    counters.degenerate_fusions += stats.degenerate;
                }
                UncertaintyMethod::ExpectedKernel => {
                    let t = Instant::now();
                    let upoints = uncertain::unscented_transform(
                        &points,
                        &step.belief,
                        &config.uncertainty.ut,
                    )?;
                    let means: Vec<Point2> = upoints.iter().map(|u| u.mean).collect();
                    let queries =
                        query_cells_near(&means, config.map.resolution, margin, Some(&map))?;
                    if queries.is_empty() {
                        return Ok(());
                    }
                    let integration = match config.uncertainty.ek_integration {
                        EkIntegration::GaussHermite => IntegrationMethod::GaussHermite {
                            order: config.uncertainty.gh_order,
                            pair_mode: if config.uncertainty.gh_joint_pairs {
                                PairMode::Joint
                            } else {
                                PairMode::Difference
                            },
                        },
                        EkIntegration::MonteCarlo => IntegrationMethod::MonteCarlo {
                            samples: config.uncertainty.ek_mc_samples,
                            seed: uncertain::derive_seed(
                                config.uncertainty.seed,
                                0xEC,
                                step_idx as u64,
                                data.seed,
                            ),
                        },
                    };
                    let eg = uncertain::expected_gram(&kernel, &upoints, &queries, &integration)?;
                    counters.psd_clips += eg.psd_clips;
                    let targets: Vec<f64> = labels.iter().map(|&y| warp_spec.warp(y)).collect();
                    let gp = GpModel::fit_from_gram(
                        kernel.clone(),
                        means,
                        eg.train_train,
                        targets,
                        config.gp.noise_variance,
                    )?;
                    fit_seconds += t.elapsed().as_secs_f64();

                    let t = Instant::now();
                    let latent = gp.predict_from_cross(&eg.train_query, &queries);
                    let mut predictions = Vec::with_capacity(latent.len());
                    for &(m, v) in &latent {
                        let mean = warp::inverse_warp_expectation(
                            &warp_spec,
                            m,
                            v,
                            &prediction_rule,
                        )?;
                        predictions.push((mean, v));
                    }
                    predict_seconds += t.elapsed().as_secs_f64();

                    let sub = SubMap::new(queries, predictions)?;
                    let t = Instant::now();
                    let stats = map.bcm_fuse(&sub);
                    fuse_seconds += t.elapsed().as_secs_f64();
                    counters.fused_points += stats.fused;
                    counters.dropped_points += stats.dropped;
                    counters.degenerate_fusions += stats.degenerate;
                }
            }
            Ok(())
        })();
        per_step_seconds.push(step_start.elapsed().as_secs_f64());
        if let Err(e) = step_result {
            error = Some(format!("step {step_idx}: {e}"));
            break 'steps;
        }
    }

    let (auc, auc_mutual, auc_note) =
        evaluate_auc(&map, &data.reference, config.map.squash, config.map.eval_domain);

    let mut report = EvalReport {
        method: method.label().to_string(),
        profile: data.profile,
        seed: data.seed,
        steps: data.steps.len(),
        auc,
        auc_mutual,
        auc_note,
        runtime_seconds: wall_start.elapsed().as_secs_f64(),
        fit_seconds,
        predict_seconds,
        fuse_seconds,
        per_step_seconds,
        counters,
        error,
    };
    if config.output.fixed_timing {
        report.runtime_seconds = 0.0;
        report.fit_seconds = 0.0;
        report.predict_seconds = 0.0;
        report.fuse_seconds = 0.0;
        report.per_step_seconds = vec![0.0; report.per_step_seconds.len()];
    }
    Ok(ExperimentOutcome {
        report,
        map,
        reference: data.reference,
    })
}

fn evaluate_auc(
    map: &OccupancyMap,
    reference: &ReferenceGrid,
    squash: SquashKind,
    domain: EvalDomain,
) -> (Option<f64>, Option<f64>, Option<String>) {
    let probabilities = map.occupancy_probabilities(squash);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut scores_mutual = Vec::new();
    let mut labels_mutual = Vec::new();
    for i in 0..reference.occupied.len() {
        if !reference.observed[i] {
            continue;
        }
        let center = reference.cell_center(i);
        let Some(map_idx) = map.cell_index(&center) else {
            continue;
        };
        scores.push(probabilities[map_idx]);
        labels.push(reference.occupied[i]);
        if map.cell(map_idx).observed {
            scores_mutual.push(probabilities[map_idx]);
            labels_mutual.push(reference.occupied[i]);
        }
    }
    let full = roc_auc(&scores, &labels);
    let mutual = roc_auc(&scores_mutual, &labels_mutual).ok();
    match domain {
        EvalDomain::Reference => match full {
            Ok(a) => (Some(a), mutual, None),
            Err(e) => (None, mutual, Some(e.to_string())),
        },
        EvalDomain::Mutual => match mutual {
            Some(m) => (Some(m), Some(m), None),
            None => (None, None, Some("AUC undefined on mutually observed cells".into())),
        },
    }
}

/// Run the full method-by-profile-by-seed grid on the simulate source.
/// Cells that fail keep their error in the report; the sweep continues.
pub fn sweep(
    base: &ExperimentConfig,
    profiles: &[String],
    methods: &[Method],
    seeds: &[u64],
) -> Result<Vec<ExperimentOutcome>> {
    if !matches!(base.source, SourceConfig::Simulate { .. }) {
        return Err(Error::Config(
            "sweep requires the simulate source".into(),
        ));
    }
    let mut outcomes = Vec::with_capacity(profiles.len() * methods.len() * seeds.len());
    for profile in profiles {
        for &seed in seeds {
            let mut config = base.clone();
            if let SourceConfig::Simulate {
                profile: p, seed: s, ..
            } = &mut config.source
            {
                *p = profile.clone();
                *s = seed;
            }
            config.validate()?;
            for &method in methods {
                outcomes.push(run_experiment(&config, method)?);
            }
        }
    }
    Ok(outcomes)
}

fn csv_field_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_sanitize(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

pub const REPORT_HEADER: &str = "method,profile,seed,steps,auc,auc_mutual,runtime_s,fit_s,predict_s,fuse_s,fused,dropped,degenerate_fusions,psd_clips,skipped_records,malformed_lines,clipped_pose_covariances,error";

/// Machine-readable report, one row per run.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.profile,
            r.seed,
            r.steps,
            csv_field_opt(r.auc),
            csv_field_opt(r.auc_mutual),
            r.runtime_seconds,
            r.fit_seconds,
            r.predict_seconds,
            r.fuse_seconds,
            r.counters.fused_points,
            r.counters.dropped_points,
            r.counters.degenerate_fusions,
            r.counters.psd_clips,
            r.counters.skipped_records,
            r.counters.malformed_lines,
            r.counters.clipped_pose_covariances,
            csv_sanitize(
                r.error
                    .as_deref()
                    .or(r.auc_note.as_deref())
                    .unwrap_or_default()
            ),
        ));
    }
    out
}

/// Human-readable report.
pub fn report_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{} profile={} seed={} steps={}\n",
            r.method, r.profile, r.seed, r.steps
        ));
        match r.auc {
            Some(a) => out.push_str(&format!("  auc            {a:.4}\n")),
            None => out.push_str(&format!(
                "  auc            undefined ({})\n",
                r.auc_note.as_deref().unwrap_or("unknown")
            )),
        }
        if let Some(m) = r.auc_mutual {
            out.push_str(&format!("  auc (mutual)   {m:.4}\n"));
        }
        out.push_str(&format!(
            "  runtime        {:.3}s (fit {:.3}s, predict {:.3}s, fuse {:.3}s)\n",
            r.runtime_seconds, r.fit_seconds, r.predict_seconds, r.fuse_seconds
        ));
        if !r.per_step_seconds.is_empty() {
            let total: f64 = r.per_step_seconds.iter().sum();
            let max = r.per_step_seconds.iter().cloned().fold(0.0, f64::max);
            out.push_str(&format!(
                "  per-step       mean {:.4}s, max {:.4}s over {} steps\n",
                total / r.per_step_seconds.len() as f64,
                max,
                r.per_step_seconds.len()
            ));
        }
        let c = &r.counters;
        out.push_str(&format!(
            "  counters       fused={} dropped={} degenerate={} psd_clips={} skipped={} malformed={} cov_clipped={}\n",
            c.fused_points,
            c.dropped_points,
            c.degenerate_fusions,
            c.psd_clips,
            c.skipped_records,
            c.malformed_lines,
            c.clipped_pose_covariances
        ));
        if let Some(e) = &r.error {
            out.push_str(&format!("  ERROR          {e}\n"));
        }
        out.push('\n');
    }
    out
}

/// Plot-ready summary: mean AUC and runtime per (profile, method) across
/// seeds, in first-appearance order.
pub fn sweep_summary_csv(reports: &[EvalReport]) -> String {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let key = (r.profile.clone(), r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = String::from("profile,method,runs,mean_auc,mean_runtime_s\n");
    for (profile, method) in keys {
        let group: Vec<&EvalReport> = reports
            .iter()
            .filter(|r| r.profile == profile && r.method == method)
            .collect();
        let aucs: Vec<f64> = group.iter().filter_map(|r| r.auc).collect();
        let mean_auc = if aucs.is_empty() {
            String::new()
        } else {
            (aucs.iter().sum::<f64>() / aucs.len() as f64).to_string()
        };
        let mean_rt =
            group.iter().map(|r| r.runtime_seconds).sum::<f64>() / group.len() as f64;
        out.push_str(&format!(
            "{profile},{method},{},{mean_auc},{mean_rt}\n",
            group.len()
        ));
    }
    out
}

/// File stem for one run's artifacts.
pub fn artifact_stem(report: &EvalReport) -> String {
    format!(
        "{}_{}_seed{}",
        report.method.to_ascii_lowercase(),
        report.profile,
        report.seed
    )
}

/// Write maps, reference and reports for a batch of outcomes.
pub fn persist_outcomes(
    outcomes: &[ExperimentOutcome],
    dir: &std::path::Path,
    squash: SquashKind,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let reports: Vec<EvalReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    std::fs::write(dir.join("report.csv"), report_csv(&reports))?;
    std::fs::write(dir.join("report.txt"), report_text(&reports))?;
    std::fs::write(dir.join("summary.csv"), sweep_summary_csv(&reports))?;
    for outcome in outcomes {
        let stem = artifact_stem(&outcome.report);
        outcome
            .map
            .write_csv(&dir.join(format!("{stem}.csv")), squash)?;
        outcome
            .map
            .write_pgm(&dir.join(format!("{stem}.pgm")), squash)?;
    }
    if let Some(first) = outcomes.first() {
        first.reference.write_csv(&dir.join("reference.csv"))?;
        first.reference.write_pgm(&dir.join("reference.pgm"))?;
    }
    Ok(())
}

/// AUC of an exported map CSV against an exported reference CSV, matched by
/// exact cell-coordinate text. Restricted to reference-observed cells.
pub fn auc_from_csv(map_csv: &str, reference_csv: &str) -> Result<f64> {
    let mut probabilities = std::collections::HashMap::new();
    for (i, line) in map_csv.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(i + 1, "map CSV row needs 5 fields"));
        }
        let p: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(i + 1, "bad probability"))?;
        probabilities.insert((fields[0].to_string(), fields[1].to_string()), p);
    }
    if probabilities.is_empty() {
        return Err(Error::EmptyDataset("map CSV has no rows".into()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reference_csv.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(i + 1, "reference CSV row needs 4 fields"));
        }
        if fields[3] != "1" {
            continue;
        }
        let key = (fields[0].to_string(), fields[1].to_string());
        if let Some(&p) = probabilities.get(&key) {
            scores.push(p);
            labels.push(fields[2] == "1");
        }
    }
    if scores.is_empty() {
        return Err(Error::invalid(
            "map and reference grids share no observed cells",
        ));
    }
    roc_auc(&scores, &labels)
}
