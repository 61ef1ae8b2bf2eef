//! Experiment configuration schema.
//!
//! Every struct rejects unknown keys. Relative paths are resolved against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use slicesim::control::MdmmConfig;
use slicesim::dynamics::{MaterialParams, SimConfig, SimParams};
use slicesim::geometry::shapes::{CylinderSpec, PrismSpec, SphereSpec};
use slicesim::geometry::{KnifeSdf, Vec3};
use slicesim::inference::{AdamConfig, LossNorm, Mode, ParamName, SgldConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts go; `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub scene: SceneConfig,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub mesh: MeshSource,
    pub material: Material,
    #[serde(default)]
    pub cut_plane: PlaneConfig,
    /// Pin the vertices resting on the ground.
    #[serde(default = "yes")]
    pub fix_bottom: bool,
    #[serde(default)]
    pub knife: KnifeSdf,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub motion: MotionConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Cylinder(CylinderSpec),
    Sphere(SphereSpec),
    Prism(PrismSpec),
    /// TetGen-style `.node` / `.ele` pair.
    Files { node: PathBuf, ele: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Material {
    Apple,
    Potato,
    Cucumber,
    Banana,
    Custom { young: f64, poisson: f64, density: f64 },
}

impl Material {
    pub fn params(&self) -> MaterialParams {
        match *self {
            Material::Apple => MaterialParams::APPLE,
            Material::Potato => MaterialParams::POTATO,
            Material::Cucumber => MaterialParams::CUCUMBER,
            Material::Banana => MaterialParams::BANANA,
            Material::Custom { young, poisson, density } => MaterialParams { young, poisson, density },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        PlaneConfig {
            point: [0.0; 3],
            normal: [1.0, 0.0, 0.0],
        }
    }
}

/// Scalar overrides of the default simulation parameters, applied to every spring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub sdf_ke: Option<f64>,
    pub sdf_kd: Option<f64>,
    pub sdf_kf: Option<f64>,
    pub sdf_mu: Option<f64>,
    pub cut_spring_ke: Option<f64>,
    pub cut_spring_kd: Option<f64>,
    pub cut_spring_softness: Option<f64>,
    pub initial_y: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut SimParams<f64>) {
        let set = |slot: &mut Vec<f64>, v: Option<f64>| {
            if let Some(v) = v {
                slot.iter_mut().for_each(|s| *s = v);
            }
        };
        set(&mut p.sdf_ke, self.sdf_ke);
        set(&mut p.sdf_kd, self.sdf_kd);
        set(&mut p.sdf_kf, self.sdf_kf);
        set(&mut p.sdf_mu, self.sdf_mu);
        set(&mut p.cut_spring_ke, self.cut_spring_ke);
        set(&mut p.cut_spring_kd, self.cut_spring_kd);
        set(&mut p.cut_spring_softness, self.cut_spring_softness);
        if let Some(y) = self.initial_y {
            p.initial_y = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionConfig {
    Constant { velocity: Vec3 },
    Schedule { times: Vec<f64>, velocities: Vec<Vec3> },
    /// `time_s,vx,vy,vz` rows.
    Csv { path: PathBuf },
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig::Constant {
            velocity: [0.0, -0.05, 0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Rollout(RolloutSettings),
    Adam(AdamSettings),
    Sgld(SgldSettings),
    Transport(TransportSettings),
    Trajopt(TrajoptSettings),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Rollout(_) => "rollout",
            Experiment::Adam(_) => "adam",
            Experiment::Sgld(_) => "sgld",
            Experiment::Transport(_) => "transport",
            Experiment::Trajopt(_) => "trajopt",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSettings {
    /// Write vertex positions every this many steps.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

/// One estimated parameter. Without `init` the start is drawn uniformly
/// within the bounds from the experiment seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub mode: Mode,
    pub bounds: [f64; 2],
    #[serde(default)]
    pub init: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSource {
    /// `time_s,force_N` rows.
    Csv { path: PathBuf },
    /// Rollout of the same scene with these parameters changed.
    Synthetic { truth: ParamOverrides },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSettings {
    pub estimate: BTreeMap<ParamName, EstimateConfig>,
    pub reference: ReferenceSource,
    #[serde(default)]
    pub norm: LossNorm,
    #[serde(default = "one")]
    pub likelihood_scale: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Independent runs, each from its own random start.
    #[serde(default = "one_usize")]
    pub restarts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldSettings {
    pub estimate: BTreeMap<ParamName, EstimateConfig>,
    pub reference: ReferenceSource,
    #[serde(default)]
    pub norm: LossNorm,
    #[serde(default = "one")]
    pub likelihood_scale: f64,
    /// Its seed is replaced by the experiment seed.
    #[serde(default)]
    pub sgld: SgldConfig,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceField {
    /// A parameter set JSON written by an inference run on the scene mesh.
    ParamSet { path: PathBuf },
    /// A per-spring parameter varying linearly along one in-plane axis,
    /// from `low` at the lowest spring coordinate to `high` at the highest.
    Gradient {
        param: ParamName,
        low: f64,
        high: f64,
        #[serde(default)]
        axis: PlaneAxis,
        bounds: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneAxis {
    Horizontal,
    #[default]
    Vertical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSettings {
    /// Mesh receiving the parameters; cut with the scene's plane.
    pub target_mesh: MeshSource,
    pub source: SourceField,
    /// Roll out the target with the transported and the averaged parameters
    /// and score both against the target's own ground truth (gradient sources only).
    #[serde(default)]
    pub evaluate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajoptSettings {
    #[serde(default = "five")]
    pub keyframes: usize,
    #[serde(default)]
    pub h_end: f64,
    #[serde(default = "blade")]
    pub blade_length: f64,
    #[serde(default)]
    pub mdmm: MdmmConfig,
    /// Temperature of the blade-coverage soft minimum (m).
    #[serde(default = "tau")]
    pub tau: f64,
    #[serde(default)]
    pub vertical_only: bool,
    /// Starting lateral amplitude (m/s) for every keyframe.
    #[serde(default = "init_amplitude")]
    pub init_amplitude: f64,
    /// Starting lateral frequency (rad/s) for every keyframe.
    #[serde(default = "init_frequency")]
    pub init_frequency: f64,
}

fn init_amplitude() -> f64 {
    1e-3
}

fn init_frequency() -> f64 {
    5.0
}

fn five() -> usize {
    5
}

fn blade() -> f64 {
    0.15
}

fn tau() -> f64 {
    1e-3
}

/// Reads and validates a config; errors name the offending field.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("at `{path}`: {}", e.into_inner())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        self.scene.sim.validate().context("scene.sim")?;
        self.scene.material.params().validate().map_err(anyhow::Error::msg).context("scene.material")?;
        self.scene.knife.validate().map_err(anyhow::Error::msg).context("scene.knife")?;
        let check_estimates = |est: &BTreeMap<ParamName, EstimateConfig>| -> Result<()> {
            if est.is_empty() {
                bail!("experiment.estimate is empty");
            }
            for (name, e) in est {
                if !(e.bounds[0] < e.bounds[1]) {
                    bail!("experiment.estimate.{}: bounds must be increasing", name.as_str());
                }
            }
            Ok(())
        };
        match &self.experiment {
            Experiment::Adam(a) => {
                check_estimates(&a.estimate)?;
                if a.restarts == 0 {
                    bail!("experiment.adam.restarts must be at least 1");
                }
            }
            Experiment::Sgld(s) => check_estimates(&s.estimate)?,
            Experiment::Trajopt(t) if t.keyframes == 0 => bail!("experiment.trajopt.keyframes must be at least 1"),
            _ => {}
        }
        Ok(())
    }
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
