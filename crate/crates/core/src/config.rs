//! Scenario / model configuration file (TOML).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::essm::{DEFAULT_ESS_THRESHOLD, DEFAULT_PARTICLES};
use crate::hmm::{TransitionMatrix, DEFAULT_MC_SAMPLES};
use crate::knowledge::{GaussianComponent, GaussianMixture, KnowledgeModel, SituationDistribution};
use crate::scenario::{
    build_knowledge, situation_space, Area, MotionModel, Region, RegionSet, SafeGrid, Scenario, SensorModel, Waypoint,
    LABELS,
};

/// The scenario shipped with the crate.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

fn default_seed() -> u64 {
    1
}
fn default_period() -> f64 {
    1.0
}
fn default_intensity() -> f64 {
    10.0
}
fn default_kappa() -> f64 {
    10f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub steps: usize,
    #[serde(rename = "T", default = "default_period")]
    pub period: f64,
    #[serde(default)]
    pub process_noise_on: bool,
    #[serde(default = "default_intensity")]
    pub process_noise_intensity: f64,
    #[serde(rename = "paper_literal_B", default)]
    pub paper_literal_b: bool,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub area: Area,
    pub sensor: SensorSpec,
    pub regions: Vec<Region>,
    pub waypoints: Vec<WaypointSpec>,
    #[serde(default)]
    pub knowledge: KnowledgeSpec,
    #[serde(default)]
    pub engine: EngineParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(default)]
    pub position: [f64; 2],
    pub bearing_std_deg: f64,
    pub range_std_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub position: [f64; 2],
    /// Steps taken to reach this waypoint from the previous one.
    #[serde(default)]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    #[serde(default)]
    pub covariance: Option<Vec<f64>>,
    #[serde(default)]
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSpec {
    #[serde(default = "default_safe_spacing")]
    pub safe_grid_spacing: f64,
    #[serde(default = "default_safe_std")]
    pub safe_std: f64,
    /// State indices the mixtures are defined over.
    #[serde(default = "default_projection")]
    pub projection: Vec<usize>,
    /// Explicit mixtures per situation label; replaces the region-derived
    /// model when present.
    #[serde(default)]
    pub mixtures: Option<BTreeMap<String, Vec<ComponentSpec>>>,
}

fn default_safe_spacing() -> f64 {
    SafeGrid::default().spacing
}
fn default_safe_std() -> f64 {
    SafeGrid::default().std
}
fn default_projection() -> Vec<usize> {
    vec![0, 2]
}

impl Default for KnowledgeSpec {
    fn default() -> Self {
        Self {
            safe_grid_spacing: default_safe_spacing(),
            safe_std: default_safe_std(),
            projection: default_projection(),
            mixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_ess")]
    pub ess_threshold: f64,
    #[serde(default = "default_velocity_std")]
    pub init_velocity_std: f64,
    #[serde(default = "default_widen")]
    pub init_widen: f64,
    /// `p(s_1 | y_1)`; uniform when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Rows and columns ordered as safe, potential danger, danger.
    #[serde(default = "default_transition")]
    pub transition: Vec<Vec<f64>>,
    /// Largest tolerated fraction of flagged steps before a run fails.
    #[serde(default = "default_degenerate_fraction")]
    pub max_degenerate_fraction: f64,
}

fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}
fn default_particles() -> usize {
    DEFAULT_PARTICLES
}
fn default_ess() -> f64 {
    DEFAULT_ESS_THRESHOLD
}
fn default_velocity_std() -> f64 {
    10.0
}
fn default_widen() -> f64 {
    2.0
}
fn default_degenerate_fraction() -> f64 {
    0.05
}

pub fn default_transition() -> Vec<Vec<f64>> {
    vec![vec![0.9, 0.1, 0.0], vec![0.05, 0.9, 0.05], vec![0.0, 0.1, 0.9]]
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            mc_samples: default_mc(),
            particles: default_particles(),
            ess_threshold: default_ess(),
            init_velocity_std: default_velocity_std(),
            init_widen: default_widen(),
            initial: None,
            transition: default_transition(),
            max_degenerate_fraction: default_degenerate_fraction(),
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("engine.{k}: {why}")));
        if self.mc_samples == 0 {
            return bad("mc_samples", "must be >= 1");
        }
        if self.particles == 0 {
            return bad("particles", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return bad("ess_threshold", "must lie in [0, 1]");
        }
        if !(self.init_velocity_std > 0.0) {
            return bad("init_velocity_std", "must be > 0");
        }
        if !(self.init_widen > 0.0) {
            return bad("init_widen", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.max_degenerate_fraction) {
            return bad("max_degenerate_fraction", "must lie in [0, 1]");
        }
        self.transition_matrix()?;
        self.initial_distribution()?;
        Ok(())
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix> {
        if self.transition.len() != LABELS.len() {
            return Err(Error::Config(format!("engine.transition: expected {} rows", LABELS.len())));
        }
        TransitionMatrix::new(self.transition.clone()).map_err(|e| Error::Config(format!("engine.transition: {e}")))
    }

    pub fn initial_distribution(&self) -> Result<Option<SituationDistribution>> {
        match &self.initial {
            None => Ok(None),
            Some(p) if p.len() != LABELS.len() => {
                Err(Error::Config(format!("engine.initial: expected {} entries", LABELS.len())))
            }
            Some(p) => SituationDistribution::new(p.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("engine.initial: {e}"))),
        }
    }
}

impl ConfigFile {
    /// Parses TOML text; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("bundled scenario parses")
    }

    fn knowledge_model(&self, regions: &RegionSet) -> Result<KnowledgeModel> {
        let spec = &self.knowledge;
        let Some(mixtures) = &spec.mixtures else {
            if spec.projection != default_projection() {
                return Err(Error::Config(
                    "knowledge.projection: region-derived knowledge is defined over position [0, 2]".into(),
                ));
            }
            return build_knowledge(
                regions,
                &self.area,
                &SafeGrid { spacing: spec.safe_grid_spacing, std: spec.safe_std },
            );
        };
        let mut out = Vec::with_capacity(LABELS.len());
        for label in LABELS {
            let comps = mixtures
                .get(label)
                .ok_or_else(|| Error::Config(format!("knowledge.mixtures: missing label '{label}'")))?;
            let key = |i: usize| format!("knowledge.mixtures.\"{label}\"[{i}]");
            let built = comps
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d = c.mean.len();
                    let cov = match (&c.covariance, &c.diagonal) {
                        (Some(full), None) if full.len() == d * d => DMatrix::from_row_slice(d, d, full),
                        (None, Some(diag)) if diag.len() == d => {
                            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "{}: give exactly one of covariance ({d}x{d}) or diagonal ({d})",
                                key(i)
                            )))
                        }
                    };
                    GaussianComponent::new(c.weight, c.mean.clone(), cov).map_err(|e| Error::Config(format!("{}: {e}", key(i))))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(GaussianMixture::new(built).map_err(|e| Error::Config(format!("knowledge.mixtures.\"{label}\": {e}")))?);
        }
        if let Some(extra) = mixtures.keys().find(|k| !LABELS.contains(&k.as_str())) {
            return Err(Error::Config(format!("knowledge.mixtures: unknown label '{extra}'")));
        }
        KnowledgeModel::new(situation_space(), out, spec.projection.clone(), 4)
            .map_err(|e| Error::Config(format!("knowledge: {e}")))
    }

    /// Validates everything and builds the domain objects.
    pub fn scenario(&self) -> Result<Scenario> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config("T: sampling period must be > 0".into()));
        }
        if !(self.process_noise_intensity > 0.0) {
            return Err(Error::Config("process_noise_intensity: must be > 0".into()));
        }
        if self.steps < 2 {
            return Err(Error::Config("steps: must be >= 2".into()));
        }
        let sensor = SensorModel::from_degrees(self.sensor.position, self.sensor.bearing_std_deg, self.sensor.range_std_m)
            .map_err(|e| Error::Config(format!("sensor: {e}")))?;
        let regions = RegionSet::new(self.regions.clone(), self.kappa)?;
        let waypoints: Vec<Waypoint> =
            self.waypoints.iter().map(|w| Waypoint { position: w.position, steps: w.steps }).collect();
        if waypoints.len() < 2 {
            return Err(Error::Config("waypoints: at least 2 are required".into()));
        }
        let legs = 1 + waypoints[1..].iter().map(|w| w.steps).sum::<usize>();
        if legs != self.steps {
            return Err(Error::Config(format!("waypoints: legs produce {legs} states but steps = {}", self.steps)));
        }
        self.engine.validate()?;
        let knowledge = self.knowledge_model(&regions)?;
        Ok(Scenario {
            seed: self.seed,
            steps: self.steps,
            motion: MotionModel::with_gain(self.period, self.process_noise_intensity, self.paper_literal_b),
            sensor,
            regions,
            area: self.area,
            waypoints,
            process_noise_on: self.process_noise_on,
            knowledge,
        })
    }
}
