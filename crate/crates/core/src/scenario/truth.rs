use rand::Rng;

use crate::error::{Error, Result};

use super::motion::{MotionModel, TargetState};

/// A waypoint reached `steps` steps after the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: [f64; 2],
    pub steps: usize,
}

/// Piecewise constant-velocity trajectory through `waypoints`.
///
/// State 1 sits on the first waypoint. Each leg sets the velocity that
/// reaches the next waypoint in its step budget from the current position,
/// so with process noise on the path is re-aimed at every waypoint. The
/// result has exactly `steps` states.
pub fn generate_truth<R: Rng + ?Sized>(
    motion: &MotionModel,
    waypoints: &[Waypoint],
    steps: usize,
    mut rng: Option<&mut R>,
) -> Result<Vec<TargetState>> {
    if waypoints.len() < 2 {
        return Err(Error::Config("at least 2 waypoints are required".into()));
    }
    if let Some((i, _)) = waypoints.iter().enumerate().skip(1).find(|(_, w)| w.steps == 0) {
        return Err(Error::Config(format!("waypoints[{i}].steps must be >= 1")));
    }
    let total = 1 + waypoints[1..].iter().map(|w| w.steps).sum::<usize>();
    if total != steps {
        return Err(Error::Config(format!(
            "waypoint legs produce {total} states but steps = {steps}"
        )));
    }
    let t = motion.period();
    let start = waypoints[0].position;
    let mut state = TargetState::new(start[0], 0.0, start[1], 0.0);
    let mut out = Vec::with_capacity(steps);
    for (leg, target) in waypoints[1..].iter().enumerate() {
        let dt = target.steps as f64 * t;
        state.0[1] = (target.position[0] - state.x()) / dt;
        state.0[3] = (target.position[1] - state.y()) / dt;
        if leg == 0 {
            out.push(state);
        }
        for _ in 0..target.steps {
            state = motion.motion_step(&state, rng.as_deref_mut());
            out.push(state);
        }
    }
    Ok(out)
}
