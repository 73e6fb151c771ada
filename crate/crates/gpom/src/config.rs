//! Experiment configuration: a single versioned TOML file with one data
//! source, model specs for the plain and warped pipelines, the uncertainty
//! method, map geometry and output options. CLI flags override individual
//! fields after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::map::SquashKind;
use crate::uncertain::UtParams;
use crate::warp::WarpSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// The method combinations the harness can run: plain and warped occupancy
/// mapping, each with no uncertainty propagation, the expected kernel, or
/// the expected sub-map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpom,
    Wgpom,
    Gek,
    Gesm,
    Wek,
    Wesm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gpom,
        Method::Wgpom,
        Method::Gek,
        Method::Gesm,
        Method::Wek,
        Method::Wesm,
    ];

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "gpom" => Ok(Method::Gpom),
            "wgpom" => Ok(Method::Wgpom),
            "gek" => Ok(Method::Gek),
            "gesm" => Ok(Method::Gesm),
            "wek" => Ok(Method::Wek),
            "wesm" => Ok(Method::Wesm),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Gpom => "GPOM",
            Method::Wgpom => "WGPOM",
            Method::Gek => "GEK",
            Method::Gesm => "GESM",
            Method::Wek => "WEK",
            Method::Wesm => "WESM",
        }
    }

    pub fn warped(&self) -> bool {
        matches!(self, Method::Wgpom | Method::Wek | Method::Wesm)
    }

    pub fn uncertainty(&self) -> UncertaintyMethod {
        match self {
            Method::Gpom | Method::Wgpom => UncertaintyMethod::None,
            Method::Gek | Method::Wek => UncertaintyMethod::ExpectedKernel,
            Method::Gesm | Method::Wesm => UncertaintyMethod::ExpectedSubmap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    None,
    ExpectedKernel,
    ExpectedSubmap,
}

/// Exactly one data source per experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Run the built-in simulator.
    Simulate {
        #[serde(default = "default_world")]
        world: String,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_seed")]
        seed: u64,
        /// Motion-noise profile name (q0..q5).
        #[serde(default = "default_profile")]
        profile: String,
        #[serde(default = "default_linear_velocity")]
        linear_velocity: f64,
        #[serde(default = "default_angular_velocity")]
        angular_velocity: f64,
        /// Start pose [x, y, heading]; defaults to the star-world corridor.
        #[serde(default = "default_start")]
        start: [f64; 3],
    },
    /// Replay a previously written simulator log.
    SimLog { path: PathBuf },
    /// CARMEN-style laser log, optionally with an external pose track.
    Carmen {
        log: PathBuf,
        #[serde(default)]
        pose_track: Option<PathBuf>,
        /// Keep every n-th beam.
        #[serde(default = "default_one")]
        beam_decimation: usize,
        /// Keep every n-th laser record.
        #[serde(default = "default_one")]
        scan_decimation: usize,
        /// Ranges at or beyond this are treated as misses.
        #[serde(default = "default_range_clip")]
        range_clip: f64,
    },
}

fn default_world() -> String {
    "star".into()
}
fn default_steps() -> usize {
    40
}
fn default_seed() -> u64 {
    1
}
fn default_profile() -> String {
    "q0".into()
}
fn default_linear_velocity() -> f64 {
    0.75
}
fn default_angular_velocity() -> f64 {
    2.0 * std::f64::consts::PI / 40.0
}
fn default_start() -> [f64; 3] {
    [4.7, 0.0, std::f64::consts::FRAC_PI_2]
}
fn default_one() -> usize {
    1
}
fn default_range_clip() -> f64 {
    10.0
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Simulate {
            world: default_world(),
            steps: default_steps(),
            seed: default_seed(),
            profile: default_profile(),
            linear_velocity: default_linear_velocity(),
            angular_velocity: default_angular_velocity(),
            start: default_start(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapConfig {
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// Lower-left corner [x, y] of the grid.
    #[serde(default = "default_origin")]
    pub origin: [f64; 2],
    #[serde(default = "default_cells")]
    pub width: usize,
    #[serde(default = "default_cells")]
    pub height: usize,
    #[serde(default = "default_squash")]
    pub squash: SquashKind,
    /// Query cells lie within this distance of a training point; defaults to
    /// the kernel's range scale.
    #[serde(default)]
    pub query_margin: Option<f64>,
    /// Evaluate the AUC over all reference-labeled cells, or only those the
    /// built map also observed.
    #[serde(default = "default_eval_domain")]
    pub eval_domain: EvalDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDomain {
    Reference,
    Mutual,
}

fn default_resolution() -> f64 {
    0.5
}
fn default_origin() -> [f64; 2] {
    [-10.0, -10.0]
}
fn default_cells() -> usize {
    40
}
fn default_squash() -> SquashKind {
    SquashKind::Probit
}
fn default_eval_domain() -> EvalDomain {
    EvalDomain::Reference
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            resolution: default_resolution(),
            origin: default_origin(),
            width: default_cells(),
            height: default_cells(),
            squash: default_squash(),
            query_margin: None,
            eval_domain: default_eval_domain(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpConfig {
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    /// Learn hyperparameters on the first scan by NLML minimization.
    #[serde(default = "default_true")]
    pub learn_hyperparameters: bool,
    #[serde(default = "default_budget")]
    pub nlml_budget: usize,
    /// Cap on training points per scan (uniform subsampling above it).
    #[serde(default = "default_fit_subset")]
    pub fit_subset: usize,
    /// Gauss-Hermite order for inverse-warp predictive means.
    #[serde(default = "default_prediction_quadrature")]
    pub prediction_quadrature: usize,
    #[serde(default = "default_free_spacing")]
    pub free_spacing: f64,
}

fn default_noise_variance() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_budget() -> usize {
    160
}
fn default_fit_subset() -> usize {
    250
}
fn default_prediction_quadrature() -> usize {
    20
}
fn default_free_spacing() -> f64 {
    0.5
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            noise_variance: default_noise_variance(),
            learn_hyperparameters: default_true(),
            nlml_budget: default_budget(),
            fit_subset: default_fit_subset(),
            prediction_quadrature: default_prediction_quadrature(),
            free_spacing: default_free_spacing(),
        }
    }
}

/// Kernel plus optional warp for one model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: KernelSpec,
    #[serde(default = "default_warp")]
    pub warp: WarpSpec,
}

fn default_warp() -> WarpSpec {
    WarpSpec::Identity
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    /// Gauss-Hermite order for expected kernels.
    #[serde(default = "default_gh_order")]
    pub gh_order: usize,
    /// Expected-kernel integration backend.
    #[serde(default = "default_ek_integration")]
    pub ek_integration: EkIntegration,
    #[serde(default = "default_ek_mc_samples")]
    pub ek_mc_samples: usize,
    /// Pose samples for expected-sub-map fusion.
    #[serde(default = "default_esm_samples")]
    pub esm_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Tensor-product rule over the 4-D joint for pairs of uncertain
    /// endpoints instead of the difference-distribution rule.
    #[serde(default)]
    pub gh_joint_pairs: bool,
    #[serde(default)]
    pub ut: UtParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EkIntegration {
    GaussHermite,
    MonteCarlo,
}

fn default_gh_order() -> usize {
    9
}
fn default_ek_integration() -> EkIntegration {
    EkIntegration::GaussHermite
}
fn default_ek_mc_samples() -> usize {
    100
}
fn default_esm_samples() -> usize {
    10
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            gh_order: default_gh_order(),
            ek_integration: default_ek_integration(),
            ek_mc_samples: default_ek_mc_samples(),
            esm_samples: default_esm_samples(),
            seed: 0,
            gh_joint_pairs: false,
            ut: UtParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorConfig {
    #[serde(default = "default_beams")]
    pub beams: usize,
    #[serde(default = "default_fov")]
    pub fov: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
}

fn default_beams() -> usize {
    72
}
fn default_fov() -> f64 {
    2.0 * std::f64::consts::PI
}
fn default_max_range() -> f64 {
    10.0
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            beams: default_beams(),
            fov: default_fov(),
            max_range: default_max_range(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Report timings as zero so repeated runs produce byte-identical
    /// artifacts.
    #[serde(default)]
    pub fixed_timing: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            fixed_timing: false,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default = "default_gpom_model")]
    pub gpom: ModelConfig,
    #[serde(default = "default_wgpom_model")]
    pub wgpom: ModelConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_method() -> Method {
    Method::Gpom
}

fn default_gpom_model() -> ModelConfig {
    ModelConfig {
        kernel: KernelSpec::matern52(1.0, 1.0),
        warp: WarpSpec::Identity,
    }
}

fn default_wgpom_model() -> ModelConfig {
    ModelConfig {
        kernel: KernelSpec::se_ard(1.0, [1.0, 1.0]),
        warp: WarpSpec::tanh_sum(vec![0.3, 0.3], vec![1.0, 1.0], vec![-0.5, 0.5]),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            method: default_method(),
            source: SourceConfig::default(),
            map: MapConfig::default(),
            gp: GpConfig::default(),
            gpom: default_gpom_model(),
            wgpom: default_wgpom_model(),
            uncertainty: UncertaintyConfig::default(),
            sensor: SensorConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_bytes(bytes: &[u8]) -> Result<Self> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| Error::Config(format!("not UTF-8: {e}")))?;
        Self::from_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.map.resolution > 0.0 && self.map.resolution.is_finite()) {
            return Err(Error::Config(format!(
                "map resolution must be positive, got {}",
                self.map.resolution
            )));
        }
        if self.map.width == 0 || self.map.height == 0 {
            return Err(Error::Config("map must have at least one cell".into()));
        }
        if !(self.gp.noise_variance > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
        if self.gp.nlml_budget == 0 || self.gp.fit_subset == 0 {
            return Err(Error::Config("budgets must be at least 1".into()));
        }
        if self.uncertainty.gh_order == 0
            || self.uncertainty.ek_mc_samples == 0
            || self.uncertainty.esm_samples == 0
            || self.gp.prediction_quadrature == 0
        {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        self.gpom
            .kernel
            .validate()
            .map_err(|e| Error::Config(format!("gpom kernel: {e}")))?;
        self.wgpom
            .kernel
            .validate()
            .map_err(|e| Error::Config(format!("wgpom kernel: {e}")))?;
        self.gpom
            .warp
            .validate()
            .map_err(|e| Error::Config(format!("gpom warp: {e}")))?;
        self.wgpom
            .warp
            .validate()
            .map_err(|e| Error::Config(format!("wgpom warp: {e}")))?;
        match &self.source {
            SourceConfig::Simulate { world, profile, steps: _, .. } => {
                crate::sim::build_world(world).map_err(|e| Error::Config(e.to_string()))?;
                crate::sim::MotionNoise::profile(profile)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            SourceConfig::SimLog { path } => {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "simulator log {} does not exist",
                        path.display()
                    )));
                }
            }
            SourceConfig::Carmen {
                log,
                pose_track,
                beam_decimation,
                scan_decimation,
                range_clip,
            } => {
                if !log.exists() {
                    return Err(Error::Config(format!(
                        "CARMEN log {} does not exist",
                        log.display()
                    )));
                }
                if let Some(track) = pose_track {
                    if !track.exists() {
                        return Err(Error::Config(format!(
                            "pose track {} does not exist",
                            track.display()
                        )));
                    }
                }
                if *beam_decimation == 0 || *scan_decimation == 0 {
                    return Err(Error::Config("decimation must be at least 1".into()));
                }
                if !(*range_clip > 0.0) {
                    return Err(Error::Config("range clip must be positive".into()));
                }
            }
        }
        if let Some(margin) = self.map.query_margin {
            if !(margin > 0.0 && margin.is_finite()) {
                return Err(Error::Config(format!("invalid query margin {margin}")));
            }
        }
        Ok(())
    }

    /// Model config selected by a method's family.
    pub fn model_for(&self, method: Method) -> &ModelConfig {
        if method.warped() {
            &self.wgpom
        } else {
            &self.gpom
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.schema_version, SCHEMA_VERSION);
        assert_eq!(back.map.resolution, config.map.resolution);
        assert_eq!(back.gpom.kernel, config.gpom.kernel);
        assert_eq!(back.wgpom.warp, config.wgpom.warp);
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
schema_version = 1

[source]
kind = "simulate"
world = "star"
profile = "q3"
"#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.map.width, 40);
        assert!(matches!(config.method, Method::Gpom));
        match &config.source {
            SourceConfig::Simulate { profile, steps, .. } => {
                assert_eq!(profile, "q3");
                assert_eq!(*steps, 40);
            }
            other => panic!("wrong source {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("schema_version = 2").is_err());
        let bad_res = r#"
schema_version = 1
[map]
resolution = -0.5
"#;
        assert!(ExperimentConfig::from_toml(bad_res).is_err());
        let missing_file = r#"
schema_version = 1
[source]
kind = "sim_log"
path = "/definitely/not/here.log"
"#;
        assert!(ExperimentConfig::from_toml(missing_file).is_err());
        let bad_kernel = r#"
schema_version = 1
[gpom.kernel]
family = "matern52"
signal_variance = -1.0
length_scale = 1.0
"#;
        assert!(ExperimentConfig::from_toml(bad_kernel).is_err());
        let bad_world = r#"
schema_version = 1
[source]
kind = "simulate"
world = "labyrinth"
"#;
        assert!(ExperimentConfig::from_toml(bad_world).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse("wek").unwrap(), Method::Wek);
        assert_eq!(Method::parse("GPOM").unwrap(), Method::Gpom);
        assert!(Method::parse("magic").is_err());
        assert!(Method::Wesm.warped());
        assert_eq!(Method::Gesm.uncertainty(), UncertaintyMethod::ExpectedSubmap);
        assert_eq!(Method::Wgpom.uncertainty(), UncertaintyMethod::None);
    }
}
