//! Model traits shared by both inference engines.
//!
//! States are plain `&[f64]` slices so that the same filters run on the 4-D
//! kinematic scenario and on small linear-Gaussian test instances.

use rand::Rng;

/// Measurement density `p(y | x)`.
pub trait MeasurementModel: Sync {
    type Measurement: Sync;

    /// `ln p(y | x)`; `f64::NEG_INFINITY` where the density is zero.
    fn log_likelihood(&self, y: &Self::Measurement, state: &[f64]) -> f64;

    fn likelihood(&self, y: &Self::Measurement, state: &[f64]) -> f64 {
        self.log_likelihood(y, state).exp()
    }
}

/// Markov state transition `p(x_k | x_{k-1})`, sampled in place.
pub trait TransitionModel: Sync {
    fn state_dim(&self) -> usize;

    fn propagate<R: Rng + ?Sized>(&self, state: &mut [f64], rng: &mut R);
}

/// Numerically stable `ln Σ exp(v_i)`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
