//! Synthetic 2-D worlds, the noisy unicycle motion model, rangefinder
//! raycasting, and labeled training-data generation.
//!
//! The motion model is `x' = x + v cos(h), y' = y + v sin(h), h' = h + w`
//! with additive Gaussian noise; the belief covariance is propagated with the
//! model Jacobians evaluated at the current mean. Simulation output is a
//! line-oriented text log with a versioned header so experiments can be
//! replayed byte-for-byte.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Pose2};

/// A planar pose estimate with a 3x3 covariance over (x, y, heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBelief {
    pub pose: Pose2,
    pub covariance: Matrix3<f64>,
}

impl PoseBelief {
    pub fn new(pose: Pose2, covariance: Matrix3<f64>) -> Result<Self> {
        let belief = PoseBelief {
            pose: Pose2::new(pose.x, pose.y, pose.heading),
            covariance,
        };
        belief.validate()?;
        Ok(belief)
    }

    pub fn exact(pose: Pose2) -> Self {
        PoseBelief {
            pose: Pose2::new(pose.x, pose.y, pose.heading),
            covariance: Matrix3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pose.x.is_finite() && self.pose.y.is_finite() && self.pose.heading.is_finite())
        {
            return Err(Error::invalid("non-finite pose"));
        }
        let c = &self.covariance;
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite pose covariance"));
        }
        let scale = c.diagonal().amax().max(1.0);
        if (c - c.transpose()).amax() > 1e-9 * scale {
            return Err(Error::invalid("pose covariance is not symmetric"));
        }
        let min_eig = c.symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-9 * scale {
            return Err(Error::invalid(format!(
                "pose covariance is not PSD (min eigenvalue {min_eig})"
            )));
        }
        Ok(())
    }
}

/// Diagonal motion-noise covariance (m^2, m^2, rad^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub variances: [f64; 3],
}

impl MotionNoise {
    pub fn new(variances: [f64; 3]) -> Result<Self> {
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("motion noise variances must be nonnegative"));
        }
        Ok(MotionNoise { variances })
    }

    pub fn zero() -> Self {
        MotionNoise {
            variances: [0.0; 3],
        }
    }

    /// Named profiles: `q0` is noise-free; `q1`..`q5` square the standard
    /// deviation triples (0.05, 0.05, 0.25) .. (0.3, 0.3, 2.0).
    pub fn profile(name: &str) -> Result<Self> {
        let stds: [f64; 3] = match name.to_ascii_lowercase().as_str() {
            "q0" => [0.0, 0.0, 0.0],
            "q1" => [0.05, 0.05, 0.25],
            "q2" => [0.1, 0.1, 0.5],
            "q3" => [0.15, 0.15, 0.75],
            "q4" => [0.2, 0.2, 1.0],
            "q5" => [0.3, 0.3, 2.0],
            other => {
                return Err(Error::invalid(format!("unknown noise profile '{other}'")))
            }
        };
        Ok(MotionNoise {
            variances: [stds[0] * stds[0], stds[1] * stds[1], stds[2] * stds[2]],
        })
    }

    pub fn as_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.variances[0],
            self.variances[1],
            self.variances[2],
        ))
    }

    pub fn is_zero(&self) -> bool {
        self.variances.iter().all(|v| *v == 0.0)
    }
}

/// One motion-model step.
///
/// The mean moves by the unicycle update; the covariance is propagated as
/// `F S F' + Q` with `F` the state Jacobian at the current mean (the noise
/// enters additively, so its Jacobian is the identity). When `rng` is given,
/// the returned pose is additionally perturbed by a draw from `N(0, Q)`.
pub fn propagate(
    belief: &PoseBelief,
    control: (f64, f64),
    noise: &MotionNoise,
    rng: Option<&mut ChaCha8Rng>,
) -> PoseBelief {
    let (v, omega) = control;
    let (s, c) = belief.pose.heading.sin_cos();
    let mut x = belief.pose.x + v * c;
    let mut y = belief.pose.y + v * s;
    let mut heading = belief.pose.heading + omega;

    if let Some(rng) = rng {
        let z: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        x += z[0] * noise.variances[0].sqrt();
        y += z[1] * noise.variances[1].sqrt();
        heading += z[2] * noise.variances[2].sqrt();
    }

    let f = Matrix3::new(
        1.0, 0.0, -v * s, //
        0.0, 1.0, v * c, //
        0.0, 0.0, 1.0,
    );
    let propagated = f * belief.covariance * f.transpose() + noise.as_matrix();
    let covariance = 0.5 * (propagated + propagated.transpose());

    PoseBelief {
        pose: Pose2::new(x, y, heading),
        covariance,
    }
}

/// A closed polyline obstacle. `solid` polygons have impassable interiors
/// (the robot may not be inside them); non-solid polygons are wall shells
/// such as room boundaries.
#[derive(Debug, Clone)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
    pub solid: bool,
}

impl Polygon {
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: &Point2) -> bool {
        // even-odd crossing test
        let mut inside = false;
        for (a, b) in self.segments() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// A polygon is simple when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let segs: Vec<(Point2, Point2)> = self.segments().collect();
        let n = segs.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(&segs[i].0, &segs[i].1, &segs[j].0, &segs[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn ccw(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper segment intersection by orientation tests.
pub fn segments_intersect(a: &Point2, b: &Point2, c: &Point2, d: &Point2) -> bool {
    let d1 = ccw(c, d, a);
    let d2 = ccw(c, d, b);
    let d3 = ccw(a, b, c);
    let d4 = ccw(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// A bounded rectangular world populated with polygonal obstacles.
#[derive(Debug, Clone)]
pub struct World {
    pub name: String,
    pub min: Point2,
    pub max: Point2,
    pub polygons: Vec<Polygon>,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        for poly in &self.polygons {
            if poly.vertices.len() < 3 {
                return Err(Error::invalid("polygon needs at least 3 vertices"));
            }
            for v in &poly.vertices {
                v.check_finite()?;
                if v.x < self.min.x || v.x > self.max.x || v.y < self.min.y || v.y > self.max.y {
                    return Err(Error::invalid(format!(
                        "polygon vertex ({}, {}) outside world bounds",
                        v.x, v.y
                    )));
                }
            }
            if !poly.is_simple() {
                return Err(Error::invalid("polygon is self-intersecting"));
            }
        }
        Ok(())
    }

    pub fn is_free(&self, p: &Point2) -> bool {
        self.polygons
            .iter()
            .filter(|poly| poly.solid)
            .all(|poly| !poly.contains(p))
    }

    /// Whether the straight move from `a` to `b` crosses any wall.
    pub fn segment_blocked(&self, a: &Point2, b: &Point2) -> bool {
        self.polygons.iter().any(|poly| {
            poly.segments()
                .any(|(p, q)| segments_intersect(a, b, &p, &q))
        })
    }
}

fn star_vertices(points: usize, outer: f64, inner: f64, phase: f64) -> Vec<Point2> {
    (0..2 * points)
        .map(|k| {
            let angle = phase + std::f64::consts::PI * k as f64 / points as f64;
            let r = if k % 2 == 0 { outer } else { inner };
            Point2::new(r * angle.cos(), r * angle.sin())
        })
        .collect()
}

/// Deterministic named worlds.
///
/// - `empty`: bounds only, no obstacles;
/// - `box`: a rectangular room shell;
/// - `star`: a star-shaped room boundary around a star-shaped solid obstacle,
///   leaving an annular corridor for the robot.
pub fn build_world(profile: &str) -> Result<World> {
    let world = match profile.to_ascii_lowercase().as_str() {
        "empty" => World {
            name: "empty".into(),
            min: Point2::new(-10.0, -10.0),
            max: Point2::new(10.0, 10.0),
            polygons: Vec::new(),
        },
        "box" => World {
            name: "box".into(),
            min: Point2::new(-10.0, -10.0),
            max: Point2::new(10.0, 10.0),
            polygons: vec![Polygon {
                vertices: vec![
                    Point2::new(-8.0, -8.0),
                    Point2::new(8.0, -8.0),
                    Point2::new(8.0, 8.0),
                    Point2::new(-8.0, 8.0),
                ],
                solid: false,
            }],
        },
        "star" => World {
            name: "star".into(),
            min: Point2::new(-10.0, -10.0),
            max: Point2::new(10.0, 10.0),
            polygons: vec![
                Polygon {
                    vertices: star_vertices(5, 9.5, 6.5, 0.0),
                    solid: false,
                },
                Polygon {
                    vertices: star_vertices(5, 3.2, 1.3, 0.35),
                    solid: true,
                },
            ],
        },
        other => return Err(Error::invalid(format!("unknown world profile '{other}'"))),
    };
    world.validate()?;
    Ok(world)
}

/// Rangefinder geometry: evenly spaced beams in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub beams: usize,
    /// Field of view in radians; `2 pi` means a full turn without a
    /// duplicated end beam.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            beams: 72,
            fov: 2.0 * std::f64::consts::PI,
            max_range: 10.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 {
            return Err(Error::invalid("scan needs at least one beam"));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI + 1e-12) {
            return Err(Error::invalid(format!("invalid field of view {}", self.fov)));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::invalid(format!("invalid max range {}", self.max_range)));
        }
        Ok(())
    }

    /// Beam directions in the robot frame.
    pub fn beam_angles(&self) -> Vec<f64> {
        let full_circle = (self.fov - 2.0 * std::f64::consts::PI).abs() < 1e-9;
        if full_circle {
            (0..self.beams)
                .map(|i| -std::f64::consts::PI + self.fov * i as f64 / self.beams as f64)
                .collect()
        } else if self.beams == 1 {
            vec![0.0]
        } else {
            (0..self.beams)
                .map(|i| -0.5 * self.fov + self.fov * i as f64 / (self.beams - 1) as f64)
                .collect()
        }
    }
}

/// One rangefinder sweep. A beam that saw nothing carries `max_range` and
/// `hit = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub hits: Vec<bool>,
    pub max_range: f64,
}

fn ray_segment_distance(origin: &Point2, dir: (f64, f64), a: &Point2, b: &Point2) -> Option<f64> {
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let denom = dir.0 * vy - dir.1 * vx;
    if denom.abs() < 1e-15 {
        return None;
    }
    let ox = a.x - origin.x;
    let oy = a.y - origin.y;
    let t = (ox * vy - oy * vx) / denom;
    let u = (ox * dir.1 - oy * dir.0) / denom;
    if t > 1e-12 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Cast all beams from an exact pose.
pub fn raycast(world: &World, pose: &Pose2, config: &ScanConfig) -> Result<Scan> {
    config.validate()?;
    let position = pose.position();
    position.check_finite()?;
    if !world.is_free(&position) {
        return Err(Error::InvalidPose {
            x: pose.x,
            y: pose.y,
        });
    }
    let angles = config.beam_angles();
    let mut ranges = Vec::with_capacity(angles.len());
    let mut hits = Vec::with_capacity(angles.len());
    for &beam in &angles {
        let theta = pose.heading + beam;
        let dir = (theta.cos(), theta.sin());
        let mut nearest = f64::INFINITY;
        for poly in &world.polygons {
            for (a, b) in poly.segments() {
                if let Some(t) = ray_segment_distance(&position, dir, &a, &b) {
                    if t < nearest {
                        nearest = t;
                    }
                }
            }
        }
        if nearest < config.max_range {
            ranges.push(nearest);
            hits.push(true);
        } else {
            ranges.push(config.max_range);
            hits.push(false);
        }
    }
    Ok(Scan {
        angles,
        ranges,
        hits,
        max_range: config.max_range,
    })
}

/// Labeled points in the robot frame extracted from one scan: `+1` at each
/// hit endpoint, `-1` at `free_spacing` intervals strictly before a hit (or
/// up to and including max range when the beam saw nothing).
#[derive(Debug, Clone, Default)]
pub struct ScanTraining {
    pub points: Vec<Point2>,
    pub labels: Vec<f64>,
}

pub fn scan_to_training(scan: &Scan, free_spacing: f64) -> Result<ScanTraining> {
    if !(free_spacing > 0.0 && free_spacing.is_finite()) {
        return Err(Error::invalid(format!("invalid free spacing {free_spacing}")));
    }
    let mut out = ScanTraining::default();
    for i in 0..scan.angles.len() {
        let (s, c) = scan.angles[i].sin_cos();
        let range = scan.ranges[i];
        let mut k = 1usize;
        loop {
            let d = k as f64 * free_spacing;
            let before_hit = scan.hits[i] && d < range;
            let within_miss = !scan.hits[i] && d <= range;
            if !(before_hit || within_miss) {
                break;
            }
            out.points.push(Point2::new(d * c, d * s));
            out.labels.push(-1.0);
            k += 1;
        }
        if scan.hits[i] {
            out.points.push(Point2::new(range * c, range * s));
            out.labels.push(1.0);
        }
    }
    Ok(out)
}

/// One simulation step: the dead-reckoned belief used for mapping, the true
/// pose the scan was actually taken from, and the scan itself.
#[derive(Debug, Clone)]
pub struct SimStep {
    pub belief: PoseBelief,
    pub true_pose: Pose2,
    pub scan: Scan,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub scan_config: ScanConfig,
    pub world: String,
    pub steps: Vec<SimStep>,
}

/// Simulation parameters for a constant-control loop trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimParams {
    pub steps: usize,
    pub start: Pose2,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub seed: u64,
    pub scan: ScanConfig,
}

impl Default for SimParams {
    fn default() -> Self {
        // A loop through the corridor of the star world.
        SimParams {
            steps: 40,
            start: Pose2::new(4.7, 0.0, std::f64::consts::FRAC_PI_2),
            linear_velocity: 0.75,
            angular_velocity: 2.0 * std::f64::consts::PI / 40.0,
            seed: 1,
            scan: ScanConfig::default(),
        }
    }
}

/// Run the simulator: the true pose integrates the controls plus sampled
/// motion noise (stopping rather than passing through walls); the belief
/// dead-reckons the same controls and accumulates covariance. Scans are cast
/// from the true pose.
pub fn simulate(world: &World, noise: &MotionNoise, params: &SimParams) -> Result<SimLog> {
    params.scan.validate()?;
    if params.steps == 0 {
        return Err(Error::invalid("simulation needs at least one step"));
    }
    let start = Pose2::new(params.start.x, params.start.y, params.start.heading);
    if !world.is_free(&start.position()) {
        return Err(Error::InvalidPose {
            x: start.x,
            y: start.y,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let control = (params.linear_velocity, params.angular_velocity);

    let mut belief = PoseBelief::exact(start);
    let mut truth = PoseBelief::exact(start);
    let mut steps = Vec::with_capacity(params.steps);

    for _ in 0..params.steps {
        let scan = raycast(world, &truth.pose, &params.scan)?;
        steps.push(SimStep {
            belief,
            true_pose: truth.pose,
            scan,
        });

        let next_belief = propagate(&belief, control, noise, None);
        let proposed = if noise.is_zero() {
            // keep the true path bit-identical to the belief path
            next_belief
        } else {
            propagate(&truth, control, noise, Some(&mut rng))
        };
        let from = truth.pose.position();
        let to = proposed.pose.position();
        let collided = !world.is_free(&to) || world.segment_blocked(&from, &to);
        truth = if collided {
            // stop at the wall: position holds, heading still turns
            PoseBelief::exact(Pose2::new(truth.pose.x, truth.pose.y, proposed.pose.heading))
        } else {
            PoseBelief::exact(proposed.pose)
        };
        belief = next_belief;
    }

    Ok(SimLog {
        scan_config: params.scan,
        world: world.name.clone(),
        steps,
    })
}

const LOG_HEADER: &str = "GPOMSIM 1";

/// Serialize a simulation log to the versioned line-oriented text format.
pub fn log_to_string(log: &SimLog) -> String {
    let mut out = String::new();
    out.push_str(LOG_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "scancfg {} {} {}\n",
        log.scan_config.beams, log.scan_config.fov, log.scan_config.max_range
    ));
    out.push_str(&format!("world {}\n", log.world));
    for (i, step) in log.steps.iter().enumerate() {
        let c = &step.belief.covariance;
        out.push_str(&format!(
            "step {} {} {} {} {} {} {} {} {} {} {} {} {}",
            i,
            step.belief.pose.x,
            step.belief.pose.y,
            step.belief.pose.heading,
            c[(0, 0)],
            c[(0, 1)],
            c[(0, 2)],
            c[(1, 1)],
            c[(1, 2)],
            c[(2, 2)],
            step.true_pose.x,
            step.true_pose.y,
            step.true_pose.heading,
        ));
        for r in &step.scan.ranges {
            out.push(' ');
            out.push_str(&r.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_log(log: &SimLog, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, log_to_string(log))?;
    Ok(())
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("expected a number, got '{token}'")))
}

/// Parse the text format produced by [`log_to_string`].
pub fn parse_log_str(text: &str) -> Result<SimLog> {
    let mut lines = text.lines().enumerate();
    let (ln, header) = lines
        .next()
        .ok_or_else(|| Error::EmptyDataset("log file is empty".into()))?;
    if header.trim() != LOG_HEADER {
        return Err(Error::parse(ln + 1, format!("bad header '{header}'")));
    }

    let mut scan_config: Option<ScanConfig> = None;
    let mut world = String::from("unknown");
    let mut steps = Vec::new();

    for (idx, line) in lines {
        let ln = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("scancfg") => {
                let rest: Vec<&str> = tokens.collect();
                if rest.len() != 3 {
                    return Err(Error::parse(ln, "scancfg expects 3 fields"));
                }
                let beams = rest[0]
                    .parse::<usize>()
                    .map_err(|_| Error::parse(ln, "bad beam count"))?;
                let cfg = ScanConfig {
                    beams,
                    fov: parse_f64(rest[1], ln)?,
                    max_range: parse_f64(rest[2], ln)?,
                };
                cfg.validate()
                    .map_err(|e| Error::parse(ln, e.to_string()))?;
                scan_config = Some(cfg);
            }
            Some("world") => {
                world = tokens.collect::<Vec<&str>>().join(" ");
            }
            Some("step") => {
                let cfg = scan_config
                    .ok_or_else(|| Error::parse(ln, "step record before scancfg"))?;
                let rest: Vec<&str> = tokens.collect();
                if rest.len() != 13 + cfg.beams {
                    return Err(Error::parse(
                        ln,
                        format!("step expects {} fields, got {}", 13 + cfg.beams, rest.len()),
                    ));
                }
                let nums: Vec<f64> = rest[1..]
                    .iter()
                    .map(|t| parse_f64(t, ln))
                    .collect::<Result<_>>()?;
                let covariance = Matrix3::new(
                    nums[3], nums[4], nums[5], //
                    nums[4], nums[6], nums[7], //
                    nums[5], nums[7], nums[8],
                );
                let belief = PoseBelief::new(
                    Pose2 {
                        x: nums[0],
                        y: nums[1],
                        heading: nums[2],
                    },
                    covariance,
                )
                .map_err(|e| Error::parse(ln, e.to_string()))?;
                let true_pose = Pose2 {
                    x: nums[9],
                    y: nums[10],
                    heading: nums[11],
                };
                if !(true_pose.x.is_finite()
                    && true_pose.y.is_finite()
                    && true_pose.heading.is_finite())
                {
                    return Err(Error::parse(ln, "non-finite true pose"));
                }
                let ranges: Vec<f64> = nums[12..].to_vec();
                let mut hits = Vec::with_capacity(cfg.beams);
                for &r in &ranges {
                    if !(r > 0.0 && r <= cfg.max_range) {
                        return Err(Error::parse(ln, format!("range {r} outside (0, max]")));
                    }
                    hits.push(r < cfg.max_range);
                }
                steps.push(SimStep {
                    belief,
                    true_pose,
                    scan: Scan {
                        angles: cfg.beam_angles(),
                        ranges,
                        hits,
                        max_range: cfg.max_range,
                    },
                });
            }
            Some(other) => {
                return Err(Error::parse(ln, format!("unknown record '{other}'")));
            }
            None => {}
        }
    }

    let scan_config =
        scan_config.ok_or_else(|| Error::EmptyDataset("log has no scancfg record".into()))?;
    if steps.is_empty() {
        return Err(Error::EmptyDataset("log has no step records".into()));
    }
    Ok(SimLog {
        scan_config,
        world,
        steps,
    })
}

pub fn parse_log_bytes(bytes: &[u8]) -> Result<SimLog> {
    parse_log_str(&String::from_utf8_lossy(bytes))
}

pub fn read_log(path: &std::path::Path) -> Result<SimLog> {
    parse_log_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_control_zero_noise_is_identity() {
        let cov = Matrix3::new(
            0.1, 0.02, 0.0, 0.02, 0.2, 0.01, 0.0, 0.01, 0.05,
        );
        let belief = PoseBelief::new(Pose2::new(1.0, 2.0, 0.3), cov).unwrap();
        let next = propagate(&belief, (0.0, 0.0), &MotionNoise::zero(), None);
        assert_eq!(next.pose, belief.pose);
        assert_relative_eq!(next.covariance, belief.covariance, epsilon = 1e-15);
    }

    #[test]
    fn unit_forward_motion() {
        let belief = PoseBelief::exact(Pose2::new(0.0, 0.0, 0.0));
        let next = propagate(&belief, (1.0, 0.0), &MotionNoise::zero(), None);
        assert_eq!(next.pose.x, 1.0);
        assert_eq!(next.pose.y, 0.0);
    }

    #[test]
    fn covariance_stays_symmetric_psd_and_grows() {
        let q = MotionNoise::profile("q2").unwrap();
        let mut belief = PoseBelief::exact(Pose2::new(0.0, 0.0, 0.1));
        let mut prev_trace = 0.0;
        for _ in 0..50 {
            belief = propagate(&belief, (0.4, 0.12), &q, None);
            let c = belief.covariance;
            assert_eq!(c, c.transpose());
            let min_eig = c.symmetric_eigen().eigenvalues.min();
            assert!(min_eig >= -1e-10);
            let trace = c.trace();
            assert!(trace >= prev_trace - 1e-12, "trace shrank: {prev_trace} -> {trace}");
            prev_trace = trace;
        }
    }

    #[test]
    fn propagated_covariance_matches_rollouts() {
        // light version of the acceptance criterion: 10 steps, 20k rollouts.
        // Per-step heading noise of 0.25 rad accumulates fast, so the
        // linearization only stays within tolerance for gentle velocities.
        let q = MotionNoise::profile("q1").unwrap();
        let control = (0.05, 0.05);
        let steps = 10;
        let mut belief = PoseBelief::exact(Pose2::new(0.0, 0.0, 0.2));
        for _ in 0..steps {
            belief = propagate(&belief, control, &q, None);
        }

        // independent brute-force rollouts without heading wrapping
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let stds: Vec<f64> = q.variances.iter().map(|v| v.sqrt()).collect();
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.2f64);
            for _ in 0..steps {
                x += control.0 * h.cos() + stds[0] * rng.sample::<f64, _>(StandardNormal);
                y += control.0 * h.sin() + stds[1] * rng.sample::<f64, _>(StandardNormal);
                h += control.1 + stds[2] * rng.sample::<f64, _>(StandardNormal);
            }
            states.push(Vector3::new(x, y, h));
        }
        let mean = states.iter().sum::<Vector3<f64>>() / n as f64;
        let mut cov = Matrix3::zeros();
        for s in &states {
            let d = s - mean;
            cov += d * d.transpose();
        }
        cov /= n as f64;
        let rel = (belief.covariance - cov).norm() / cov.norm();
        assert!(rel < 0.1, "relative Frobenius error {rel}");
    }

    #[test]
    fn raycast_empty_world_all_misses() {
        let world = build_world("empty").unwrap();
        let scan = raycast(
            &world,
            &Pose2::new(0.0, 0.0, 0.3),
            &ScanConfig {
                beams: 16,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(scan.ranges.iter().all(|r| *r == 10.0));
        assert!(scan.hits.iter().all(|h| !h));
    }

    #[test]
    fn raycast_perpendicular_wall() {
        let world = World {
            name: "wall".into(),
            min: Point2::new(-10.0, -10.0),
            max: Point2::new(10.0, 10.0),
            polygons: vec![Polygon {
                vertices: vec![
                    Point2::new(3.0, -5.0),
                    Point2::new(3.0, 5.0),
                    Point2::new(9.0, 5.0),
                ],
                solid: false,
            }],
        };
        let scan = raycast(
            &world,
            &Pose2::new(0.0, 0.0, 0.0),
            &ScanConfig {
                beams: 1,
                fov: 0.1,
                max_range: 10.0,
            },
        )
        .unwrap();
        assert_eq!(scan.ranges[0], 3.0);
        assert!(scan.hits[0]);
    }

    #[test]
    fn raycast_rejects_pose_inside_obstacle() {
        let world = build_world("star").unwrap();
        let err = raycast(&world, &Pose2::new(0.0, 0.0, 0.0), &ScanConfig::default());
        assert!(matches!(err, Err(Error::InvalidPose { .. })));
    }

    #[test]
    fn raycast_matches_raymarching_oracle() {
        // independent check: march each beam in 1 cm steps and test segment
        // crossings with orientation predicates
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let world = build_world("star").unwrap();
        let cfg = ScanConfig {
            beams: 24,
            ..Default::default()
        };
        for _ in 0..5 {
            let pose = loop {
                let candidate = Pose2::new(
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-3.0..3.0),
                );
                let p = candidate.position();
                if world.is_free(&p) && p.distance(&Point2::new(0.0, 0.0)) > 3.5 {
                    break candidate;
                }
            };
            let scan = raycast(&world, &pose, &cfg).unwrap();
            for (i, &beam) in scan.angles.iter().enumerate() {
                let theta = pose.heading + beam;
                let dir = (theta.cos(), theta.sin());
                let step = 0.01;
                let mut march = cfg.max_range;
                let mut t = 0.0;
                'march: while t < cfg.max_range {
                    let a = Point2::new(pose.x + t * dir.0, pose.y + t * dir.1);
                    let next = (t + step).min(cfg.max_range);
                    let b = Point2::new(pose.x + next * dir.0, pose.y + next * dir.1);
                    for poly in &world.polygons {
                        for (p, q) in poly.segments() {
                            if segments_intersect(&a, &b, &p, &q) {
                                march = t;
                                break 'march;
                            }
                        }
                    }
                    t = next;
                }
                assert!(
                    (scan.ranges[i] - march).abs() <= step + 1e-9,
                    "beam {i}: raycast {} vs march {march}",
                    scan.ranges[i]
                );
            }
        }
    }

    #[test]
    fn scan_training_labels_and_counts() {
        let scan = Scan {
            angles: vec![0.0],
            ranges: vec![1.0],
            hits: vec![true],
            max_range: 10.0,
        };
        let frag = scan_to_training(&scan, 0.5).unwrap();
        // free at 0.5 only (1.0 is the hit itself), occupied at 1.0
        assert_eq!(frag.labels, vec![-1.0, 1.0]);
        assert_relative_eq!(frag.points[0].x, 0.5);
        assert_relative_eq!(frag.points[1].x, 1.0);

        let miss = Scan {
            angles: vec![0.0, 1.0],
            ranges: vec![10.0, 10.0],
            hits: vec![false, false],
            max_range: 10.0,
        };
        let frag = scan_to_training(&miss, 0.5).unwrap();
        assert!(frag.labels.iter().all(|l| *l == -1.0));
        assert_eq!(frag.points.len(), 40); // 20 per beam, max range inclusive
    }

    #[test]
    fn scan_training_count_formula_on_random_scans() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let spacing = rng.gen_range(0.2..1.0);
            let max_range = 8.0;
            let mut ranges = Vec::new();
            let mut hits = Vec::new();
            let mut angles = Vec::new();
            for i in 0..n {
                angles.push(i as f64 * 0.1);
                if rng.gen_bool(0.7) {
                    ranges.push(rng.gen_range(0.05..max_range));
                    hits.push(true);
                } else {
                    ranges.push(max_range);
                    hits.push(false);
                }
            }
            let scan = Scan {
                angles,
                ranges: ranges.clone(),
                hits: hits.clone(),
                max_range,
            };
            let frag = scan_to_training(&scan, spacing).unwrap();
            let expected: usize = (0..n)
                .map(|i| (ranges[i] / spacing).floor() as usize + hits[i] as usize)
                .sum();
            assert_eq!(frag.points.len(), expected);
        }
    }

    #[test]
    fn world_profiles() {
        assert!(build_world("empty").unwrap().polygons.is_empty());

        let boxed = build_world("box").unwrap();
        let scan = raycast(
            &boxed,
            &Pose2::new(0.0, 0.0, 0.0),
            &ScanConfig {
                beams: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(scan.hits, vec![true; 4]);
        assert!(scan.ranges.iter().all(|r| (*r - 8.0).abs() < 1e-9));

        let star = build_world("star").unwrap();
        star.validate().unwrap();
        assert_eq!(star.polygons.len(), 2);
        assert!(star.polygons.iter().all(|p| p.is_simple()));
        // corridor start pose is free, center is not
        assert!(star.is_free(&Point2::new(4.7, 0.0)));
        assert!(!star.is_free(&Point2::new(0.0, 0.0)));

        assert!(build_world("mystery").is_err());
    }

    #[test]
    fn simulation_is_reproducible_and_round_trips() {
        let world = build_world("star").unwrap();
        let noise = MotionNoise::profile("q3").unwrap();
        let params = SimParams {
            steps: 12,
            scan: ScanConfig {
                beams: 24,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = simulate(&world, &noise, &params).unwrap();
        let b = simulate(&world, &noise, &params).unwrap();
        let text_a = log_to_string(&a);
        assert_eq!(text_a, log_to_string(&b));

        let parsed = parse_log_str(&text_a).unwrap();
        assert_eq!(log_to_string(&parsed), text_a);
        assert_eq!(parsed.steps.len(), 12);
        for (s, p) in a.steps.iter().zip(&parsed.steps) {
            assert_eq!(s.belief.pose, p.belief.pose);
            assert_eq!(s.scan.ranges, p.scan.ranges);
            assert_eq!(s.scan.hits, p.scan.hits);
        }
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(matches!(
            parse_log_str(""),
            Err(Error::EmptyDataset(_))
        ));
        assert!(parse_log_str("GPOMSIM 2\n").is_err());
        assert!(parse_log_str("GPOMSIM 1\nscancfg 2 6.28 x\n").is_err());
        assert!(parse_log_str("GPOMSIM 1\nstep 0 0 0 0\n").is_err());
        let truncated = "GPOMSIM 1\nscancfg 2 6.283185307179586 10\nstep 0 0 0 0 0 0 0 0 0 0 0 0 0 1.5\n";
        assert!(parse_log_str(truncated).is_err());
    }
}
