use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::essm::InitSpec;
use crate::models::MeasurementModel;

use super::motion::TargetState;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Bearing (radians from the +x axis) and range of the target at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub k: usize,
    pub bearing: f64,
    pub range: f64,
}

impl Observation {
    pub fn new(k: usize, bearing: f64, range: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() || !bearing.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid observation (θ={bearing}, r={range})")));
        }
        Ok(Self { k, bearing: wrap_angle(bearing), range })
    }
}

/// Bearing-range sensor with independent Gaussian noise on both channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    position: [f64; 2],
    bearing_std: f64,
    range_std: f64,
    log_norm: f64,
}

impl SensorModel {
    /// `bearing_std` in radians, `range_std` in meters.
    pub fn new(position: [f64; 2], bearing_std: f64, range_std: f64) -> Result<Self> {
        if !(bearing_std > 0.0 && range_std > 0.0) {
            return Err(Error::InvalidArgument("sensor noise stds must be > 0".into()));
        }
        Ok(Self {
            position,
            bearing_std,
            range_std,
            log_norm: -(2.0 * PI * bearing_std * range_std).ln(),
        })
    }

    pub fn from_degrees(position: [f64; 2], bearing_std_deg: f64, range_std: f64) -> Result<Self> {
        Self::new(position, bearing_std_deg.to_radians(), range_std)
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn bearing_std(&self) -> f64 {
        self.bearing_std
    }

    pub fn range_std(&self) -> f64 {
        self.range_std
    }

    fn polar(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let (dx, dy) = (px - self.position[0], py - self.position[1]);
        let r = dx.hypot(dy);
        (r > 0.0).then(|| (dy.atan2(dx), r))
    }

    /// Noiseless when `rng` is `None`.
    pub fn observe<R: Rng + ?Sized>(&self, k: usize, s: &TargetState, rng: Option<&mut R>) -> Result<Observation> {
        let (mut theta, mut r) = self.polar(s.x(), s.y()).ok_or(Error::UndefinedBearing)?;
        if let Some(rng) = rng {
            theta += self.bearing_std * rng.sample::<f64, _>(StandardNormal);
            r += self.range_std * rng.sample::<f64, _>(StandardNormal);
            // a negative range draw is only possible within a few stds of the sensor
            r = r.abs().max(f64::MIN_POSITIVE);
        }
        Observation::new(k, theta, r)
    }

    /// `ln p(y | x)` and a flag raised when the state sits on the sensor.
    pub fn log_likelihood_checked(&self, y: &Observation, px: f64, py: f64) -> (f64, bool) {
        match self.polar(px, py) {
            None => (f64::NEG_INFINITY, true),
            Some((theta, r)) => {
                let eb = wrap_angle(y.bearing - theta) / self.bearing_std;
                let er = (y.range - r) / self.range_std;
                (self.log_norm - 0.5 * (eb * eb + er * er), false)
            }
        }
    }

    /// `p(y | x)`; zero with the flag set when the state sits on the sensor.
    pub fn observation_likelihood(&self, y: &Observation, s: &TargetState) -> (f64, bool) {
        let (l, flag) = self.log_likelihood_checked(y, s.x(), s.y());
        (l.exp(), flag)
    }

    pub fn peak_density(&self) -> f64 {
        self.log_norm.exp()
    }

    /// Particle prior conditioned on a first observation: position from the
    /// polar-to-Cartesian transform with linearized noise covariance, its
    /// standard deviations scaled by `widen`; velocity zero-mean with std
    /// `velocity_std` per axis.
    pub fn anchored_init(&self, y: &Observation, velocity_std: f64, widen: f64) -> Result<InitSpec> {
        if !(velocity_std > 0.0 && widen > 0.0) {
            return Err(Error::InvalidArgument("anchored init needs positive velocity std and widening".into()));
        }
        let (c, s) = (y.bearing.cos(), y.bearing.sin());
        let jac = Matrix2::new(-y.range * s, c, y.range * c, s);
        let noise = Matrix2::new(self.bearing_std.powi(2), 0.0, 0.0, self.range_std.powi(2));
        let pos = jac * noise * jac.transpose() * widen * widen;
        let v = velocity_std * velocity_std;
        #[rustfmt::skip]
        let cov = Matrix4::new(
            pos[(0, 0)], 0.0, pos[(0, 1)], 0.0,
            0.0,         v,   0.0,         0.0,
            pos[(1, 0)], 0.0, pos[(1, 1)], 0.0,
            0.0,         0.0, 0.0,         v,
        );
        Ok(InitSpec::Gaussian {
            mean: vec![self.position[0] + y.range * c, 0.0, self.position[1] + y.range * s, 0.0],
            covariance: nalgebra::DMatrix::from_column_slice(4, 4, cov.as_slice()),
        })
    }
}

impl MeasurementModel for SensorModel {
    type Measurement = Observation;

    fn log_likelihood(&self, y: &Observation, state: &[f64]) -> f64 {
        self.log_likelihood_checked(y, state[0], state[2]).0
    }
}
