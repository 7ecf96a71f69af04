use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::TransitionModel;

/// `[x, ẋ, y, ẏ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState(pub [f64; 4]);

impl TargetState {
    pub fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self([x, vx, y, vy])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn vx(&self) -> f64 {
        self.0[1]
    }
    pub fn y(&self) -> f64 {
        self.0[2]
    }
    pub fn vy(&self) -> f64 {
        self.0[3]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.0[0], self.0[2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn vector(&self) -> Vector4<f64> {
        Vector4::from_column_slice(&self.0)
    }
}

/// Near-constant-velocity dynamics `x_{k+1} = F x_k + v_k`, `v ~ N(0, Q)`,
/// `Q = B diag(q, q) Bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    period: f64,
    intensity: f64,
    f: Matrix4<f64>,
    b: Matrix4x2<f64>,
}

impl MotionModel {
    /// Standard white-noise-acceleration gain for the `[x, ẋ, y, ẏ]` ordering.
    pub fn new(period: f64, intensity: f64) -> Self {
        Self::with_gain(period, intensity, false)
    }

    /// `paper_literal_b` places `T` on the position rows and `T²/2` on the
    /// velocity rows, exactly as the matrix is printed in the source text.
    pub fn with_gain(period: f64, intensity: f64, paper_literal_b: bool) -> Self {
        let t = period;
        let h = t * t / 2.0;
        let fs = |r: usize, c: usize| if r == c { 1.0 } else if r + 1 == c && r % 2 == 0 { t } else { 0.0 };
        let f = Matrix4::from_fn(|r, c| if r / 2 == c / 2 { fs(r, c) } else { 0.0 });
        #[rustfmt::skip]
        let b = if paper_literal_b {
            Matrix4x2::new(
                t, 0.0,
                0.0, t,
                h, 0.0,
                0.0, h,
            )
        } else {
            Matrix4x2::new(
                h, 0.0,
                t, 0.0,
                0.0, h,
                0.0, t,
            )
        };
        Self { period, intensity, f, b }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn transition(&self) -> &Matrix4<f64> {
        &self.f
    }

    pub fn gain(&self) -> &Matrix4x2<f64> {
        &self.b
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn process_covariance(&self) -> Matrix4<f64> {
        self.b * Matrix2::from_diagonal_element(self.intensity) * self.b.transpose()
    }

    /// `F s`, plus a draw from `N(0, Q)` when a stream is supplied.
    pub fn motion_step<R: Rng + ?Sized>(&self, s: &TargetState, rng: Option<&mut R>) -> TargetState {
        let mut next = self.f * s.vector();
        if let Some(rng) = rng {
            next += self.noise(rng);
        }
        TargetState([next[0], next[1], next[2], next[3]])
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector4<f64> {
        // Q has rank 2; sample through the gain instead of factorizing Q.
        let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        self.b * (z * self.intensity.sqrt())
    }
}

impl TransitionModel for MotionModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn propagate<R: Rng + ?Sized>(&self, state: &mut [f64], rng: &mut R) {
        let t = self.period;
        state[0] += t * state[1];
        state[2] += t * state[3];
        let n = self.noise(rng);
        for (s, v) in state.iter_mut().zip(n.iter()) {
            *s += v;
        }
    }
}
