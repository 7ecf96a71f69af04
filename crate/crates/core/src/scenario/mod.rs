//! The threat-surveillance world: constant-velocity target, bearing-range
//! sensor, sensitive regions and ground truth.

mod motion;
mod regions;
mod sensor;
mod truth;

pub use motion::{MotionModel, TargetState};
pub use regions::{
    build_knowledge, build_labels, situation_space, Area, Region, RegionSet, SafeGrid, TruthLabel, DANGER, LABELS,
    POSITION_PROJECTION, POTENTIAL_DANGER, POTENTIAL_VARIANCE_FACTOR, SAFE,
};
pub use sensor::{wrap_angle, Observation, SensorModel};
pub use truth::{generate_truth, Waypoint};

use crate::error::Result;
use crate::knowledge::KnowledgeModel;
use crate::rng::{SeedTree, Stream};

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub steps: usize,
    pub motion: MotionModel,
    pub sensor: SensorModel,
    pub regions: RegionSet,
    pub area: Area,
    pub waypoints: Vec<Waypoint>,
    pub process_noise_on: bool,
    pub knowledge: KnowledgeModel,
}

/// Ground truth plus the measurement stream it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: Vec<TargetState>,
    pub observations: Vec<Observation>,
    pub labels: Vec<TruthLabel>,
}

impl Scenario {
    /// Truth draws from the `"truth"` child of `seeds`, sensor noise from
    /// `"sensor"`. With `noise == false` both the trajectory and the
    /// measurements are noiseless.
    pub fn simulate(&self, seeds: &SeedTree, noise: bool) -> Result<Simulation> {
        let mut truth_rng = seeds.child("truth").stream();
        let truth = generate_truth(
            &self.motion,
            &self.waypoints,
            self.steps,
            (noise && self.process_noise_on).then_some(&mut truth_rng),
        )?;
        let mut sensor_rng = seeds.child("sensor").stream();
        let observations = truth
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rng: Option<&mut Stream> = noise.then_some(&mut sensor_rng);
                self.sensor.observe(i + 1, s, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = build_labels(&self.regions, &truth);
        Ok(Simulation { truth, observations, labels })
    }
}
