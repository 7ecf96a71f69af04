//! Sensitive-region geometry, the three-situation knowledge model built from
//! it, and ground-truth labelling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{GaussianComponent, GaussianMixture, KnowledgeModel, SituationSpace};

use super::motion::TargetState;

pub const SAFE: usize = 0;
pub const POTENTIAL_DANGER: usize = 1;
pub const DANGER: usize = 2;
pub const LABELS: [&str; 3] = ["safe", "potential danger", "danger"];

/// Potential-danger covariance inflation relative to danger.
pub const POTENTIAL_VARIANCE_FACTOR: f64 = 10.0;

/// Knowledge lives on the position components of `[x, ẋ, y, ẏ]`.
pub const POSITION_PROJECTION: [usize; 2] = [0, 2];

pub fn situation_space() -> SituationSpace {
    SituationSpace::new(LABELS).expect("static labels are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

/// Axis-aligned surveillance area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x_min..=self.x_max).contains(&p[0]) && (self.y_min..=self.y_max).contains(&p[1])
    }
}

/// Placement of the broad 'safe' components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeGrid {
    pub spacing: f64,
    pub std: f64,
}

impl Default for SafeGrid {
    fn default() -> Self {
        Self { spacing: 2000.0, std: 1000.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    regions: Vec<Region>,
    kappa: f64,
}

impl RegionSet {
    pub fn new(regions: Vec<Region>, kappa: f64) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Config("at least one sensitive region is required".into()));
        }
        if let Some(r) = regions.iter().find(|r| !(r.radius > 0.0)) {
            return Err(Error::Config(format!("region radius must be > 0, got {}", r.radius)));
        }
        if !(kappa > 1.0) {
            return Err(Error::Config(format!("kappa must be > 1, got {kappa}")));
        }
        Ok(Self { regions, kappa })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Situation label and responsible region at a position.
    pub fn label_at(&self, p: [f64; 2]) -> TruthLabel {
        let nearest = |scale: f64| {
            self.regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.distance(p) <= scale * r.radius)
                .min_by(|a, b| (a.1.distance(p) / a.1.radius).total_cmp(&(b.1.distance(p) / b.1.radius)))
                .map(|(i, _)| i)
        };
        if let Some(i) = nearest(1.0) {
            TruthLabel { situation: DANGER, region: Some(i) }
        } else if let Some(i) = nearest(self.kappa) {
            TruthLabel { situation: POTENTIAL_DANGER, region: Some(i) }
        } else {
            TruthLabel { situation: SAFE, region: None }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub situation: usize,
    pub region: Option<usize>,
}

/// Per-step ground truth: 'danger' inside a region, 'potential danger'
/// within `κ · radius`, otherwise 'safe'.
pub fn build_labels(regions: &RegionSet, truth: &[TargetState]) -> Vec<TruthLabel> {
    truth.iter().map(|s| regions.label_at(s.position())).collect()
}

/// Three-situation knowledge model over position.
///
/// * danger: one equal-weight component per region, centered on it, with
///   per-axis std `radius / 2` (the region circle is the 2σ ellipse);
/// * potential danger: same means, variances × 10;
/// * safe: equal-weight isotropic components on a grid over the area, keeping
///   only grid points outside every potential-danger 2σ ellipse.
pub fn build_knowledge(regions: &RegionSet, area: &Area, grid: &SafeGrid) -> Result<KnowledgeModel> {
    if !(area.x_max > area.x_min && area.y_max > area.y_min) {
        return Err(Error::Config("surveillance area is empty".into()));
    }
    if !(grid.spacing > 0.0 && grid.std > 0.0) {
        return Err(Error::Config("safe grid spacing and std must be > 0".into()));
    }
    if let Some(r) = regions.regions().iter().find(|r| !area.contains(r.center)) {
        return Err(Error::Config(format!("region at {:?} lies outside the area", r.center)));
    }
    let n = regions.regions().len() as f64;
    let diag = |r: &Region, factor: f64| {
        let v = factor * (r.radius / 2.0).powi(2);
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![v, v]))
    };
    let mixture_with = |factor: f64| -> Result<GaussianMixture> {
        GaussianMixture::new(
            regions
                .regions()
                .iter()
                .map(|r| GaussianComponent::new(1.0 / n, r.center.to_vec(), diag(r, factor)))
                .collect::<Result<_>>()?,
        )
    };
    let danger = mixture_with(1.0)?;
    let potential = mixture_with(POTENTIAL_VARIANCE_FACTOR)?;

    let mut points = Vec::new();
    let nx = ((area.x_max - area.x_min) / grid.spacing + 1e-9).floor() as usize;
    let ny = ((area.y_max - area.y_min) / grid.spacing + 1e-9).floor() as usize;
    for i in 0..=nx {
        for j in 0..=ny {
            let p = [area.x_min + i as f64 * grid.spacing, area.y_min + j as f64 * grid.spacing];
            // potential-danger 2σ radius = 2 · √10 · radius / 2
            let excluded = regions
                .regions()
                .iter()
                .any(|r| r.distance(p) <= POTENTIAL_VARIANCE_FACTOR.sqrt() * r.radius);
            if !excluded {
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Config("no safe grid point survives the region exclusion".into()));
    }
    let w = 1.0 / points.len() as f64;
    let var = grid.std * grid.std;
    let safe = GaussianMixture::new(
        points
            .into_iter()
            .map(|p| GaussianComponent::diagonal(w, p.to_vec(), &[var, var]))
            .collect::<Result<_>>()?,
    )?;

    KnowledgeModel::new(situation_space(), vec![safe, potential, danger], POSITION_PROJECTION.to_vec(), 4)
}
