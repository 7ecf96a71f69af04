//! Extended state-space engine: a bootstrap particle filter over the pivot
//! state, with the situation posterior read off the weighted particles.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knowledge::{Assessment, GaussianComponent, KnowledgeModel, SituationDistribution};
use crate::models::{MeasurementModel, TransitionModel};
use crate::rng::SeedTree;

pub const DEFAULT_PARTICLES: usize = 5000;
pub const DEFAULT_ESS_THRESHOLD: f64 = 0.5;

/// Unnormalized weights below this are treated as a lost track.
pub const DIVERGENCE_FLOOR: f64 = 1e-300;

/// Particles per parallel work unit; fixed so results do not depend on the
/// thread count.
const CHUNK: usize = 256;

/// Weighted samples `{x̂_i, w_i}` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    states: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleSet {
    pub fn new(dim: usize, states: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() {
            return Err(Error::InvalidArgument("particle set must be non-empty".into()));
        }
        if states.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch { expected: dim * weights.len(), got: states.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(Self { dim, states, weights })
    }

    /// Equally weighted set built from state rows.
    pub fn uniform(dim: usize, states: Vec<f64>) -> Result<Self> {
        let n = states.len() / dim.max(1);
        Self::new(dim, states, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Effective sample size `1 / Σ w_i²`, clamped to `[1, N]`; exactly `N`
    /// for equal weights.
    pub fn ess(&self) -> f64 {
        if self.weights.iter().all(|w| *w == self.weights[0]) {
            return self.len() as f64;
        }
        let s: f64 = self.weights.iter().map(|w| w * w).sum();
        (1.0 / s).clamp(1.0, self.len() as f64)
    }
}

/// Initial particle distribution.
#[derive(Debug, Clone)]
pub enum InitSpec {
    PointMass(Vec<f64>),
    Gaussian { mean: Vec<f64>, covariance: DMatrix<f64> },
}

/// Draws `n` equally weighted particles from `spec`.
pub fn pf_init<R: Rng + ?Sized>(spec: &InitSpec, n: usize, rng: &mut R) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("particle count must be >= 1".into()));
    }
    match spec {
        InitSpec::PointMass(x) => {
            if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("invalid point-mass state".into()));
            }
            let states = x.iter().copied().cycle().take(n * x.len()).collect();
            ParticleSet::uniform(x.len(), states)
        }
        InitSpec::Gaussian { mean, covariance } => {
            let g = GaussianComponent::new(1.0, mean.clone(), covariance.clone())?;
            let d = mean.len();
            let mut states = vec![0.0; n * d];
            for row in states.chunks_mut(d) {
                g.sample_into(rng, row);
            }
            ParticleSet::uniform(d, states)
        }
    }
}

/// Systematic resampling: one uniform offset, `N` evenly spaced positions
/// over the cumulative weights. Output weights are `1/N`.
pub fn systematic_resample<R: Rng + ?Sized>(p: &ParticleSet, rng: &mut R) -> ParticleSet {
    let n = p.len();
    let d = p.dim;
    let step = 1.0 / n as f64;
    let offset: f64 = rng.random::<f64>() * step;
    let mut states = Vec::with_capacity(n * d);
    let mut cum = p.weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = offset + i as f64 * step;
        while u >= cum && j < n - 1 {
            j += 1;
            cum += p.weights[j];
        }
        states.extend_from_slice(p.state(j));
    }
    ParticleSet { dim: d, states, weights: vec![step; n] }
}

/// `p(s | y_{1:k}) ∝ Σ_i w_i p(x̂_i | s)`, normalized over labels.
pub fn essm_situation_posterior(p: &ParticleSet, km: &KnowledgeModel) -> Result<Assessment> {
    if p.dim() != km.state_dim() {
        return Err(Error::DimensionMismatch { expected: km.state_dim(), got: p.dim() });
    }
    let m = km.space().len();
    // Per-chunk streaming log-sum-exp, merged in chunk order.
    let partials: Vec<Vec<(f64, f64)>> = p
        .states
        .par_chunks(CHUNK * p.dim)
        .zip(p.weights.par_chunks(CHUNK))
        .map(|(states, weights)| {
            let mut acc = vec![(f64::NEG_INFINITY, 0.0); m];
            let mut logs = vec![0.0; m];
            for (x, w) in states.chunks(p.dim).zip(weights) {
                if *w <= 0.0 {
                    continue;
                }
                let lw = w.ln();
                km.log_densities_into(x, &mut logs);
                for (a, l) in acc.iter_mut().zip(&logs) {
                    lse_push(a, lw + l);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![(f64::NEG_INFINITY, 0.0); m];
    for part in partials {
        for (t, (max, sum)) in total.iter_mut().zip(part) {
            if max.is_finite() {
                lse_push_scaled(t, max, sum);
            }
        }
    }
    let logs: Vec<f64> = total
        .iter()
        .map(|(max, sum)| if max.is_finite() { max + sum.ln() } else { f64::NEG_INFINITY })
        .collect();
    Ok(match SituationDistribution::from_log_weights(&logs) {
        Some(dist) => Assessment { dist, degenerate: false },
        None => Assessment { dist: SituationDistribution::uniform(m), degenerate: true },
    })
}

#[inline]
fn lse_push(acc: &mut (f64, f64), v: f64) {
    lse_push_scaled(acc, v, 1.0)
}

/// Adds `sum · exp(v)` to an accumulator holding `acc.1 · exp(acc.0)`.
#[inline]
fn lse_push_scaled(acc: &mut (f64, f64), v: f64, sum: f64) {
    if v <= acc.0 {
        acc.1 += sum * (v - acc.0).exp();
    } else if v.is_finite() {
        acc.1 = acc.1 * (acc.0 - v).exp() + sum;
        acc.0 = v;
    }
}

/// Weighted posterior mean `Σ_i w_i x̂_i`.
pub fn state_estimate(p: &ParticleSet) -> Vec<f64> {
    let mut mean = vec![0.0; p.dim];
    for (x, w) in p.states().zip(&p.weights) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    mean
}

/// Weighted per-coordinate variance around [`state_estimate`].
pub fn state_variance(p: &ParticleSet) -> Vec<f64> {
    let mean = state_estimate(p);
    let mut var = vec![0.0; p.dim];
    for (x, w) in p.states().zip(&p.weights) {
        for ((v, m), xi) in var.iter_mut().zip(&mean).zip(x) {
            *v += w * (xi - m) * (xi - m);
        }
    }
    var
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssmConfig {
    pub particles: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    pub ess_threshold: f64,
}

impl Default for EssmConfig {
    fn default() -> Self {
        Self { particles: DEFAULT_PARTICLES, ess_threshold: DEFAULT_ESS_THRESHOLD }
    }
}

/// Per-step diagnostics and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EssmStep {
    pub k: usize,
    /// ESS after weighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    pub divergence: bool,
    pub knowledge_degenerate: bool,
    pub posterior: SituationDistribution,
    pub estimate: Vec<f64>,
}

impl EssmStep {
    pub fn flagged(&self) -> bool {
        self.divergence || self.knowledge_degenerate
    }
}

/// Particle filter over `x` plus the situation read-out.
#[derive(Debug, Clone)]
pub struct EssmFilter<M, S> {
    km: KnowledgeModel,
    motion: M,
    sensor: S,
    config: EssmConfig,
    particles: Option<ParticleSet>,
    step: usize,
    seeds: SeedTree,
}

impl<M: TransitionModel, S: MeasurementModel> EssmFilter<M, S> {
    pub fn new(km: KnowledgeModel, motion: M, sensor: S, config: EssmConfig, seeds: SeedTree) -> Result<Self> {
        if config.particles == 0 {
            return Err(Error::InvalidArgument("particle count must be >= 1".into()));
        }
        if !(config.ess_threshold >= 0.0 && config.ess_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ESS threshold {} outside [0, 1]",
                config.ess_threshold
            )));
        }
        if motion.state_dim() != km.state_dim() {
            return Err(Error::DimensionMismatch { expected: km.state_dim(), got: motion.state_dim() });
        }
        Ok(Self { km, motion, sensor, config, particles: None, step: 0, seeds })
    }

    pub fn particles(&self) -> Option<&ParticleSet> {
        self.particles.as_ref()
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn sensor(&self) -> &S {
        &self.sensor
    }

    pub fn motion(&self) -> &M {
        &self.motion
    }

    pub fn knowledge(&self) -> &KnowledgeModel {
        &self.km
    }

    /// Draws the initial particle set. The step counter is not advanced.
    pub fn initialize(&mut self, spec: &InitSpec) -> Result<()> {
        let mut rng = self.seeds.child("init").stream();
        let p = pf_init(spec, self.config.particles, &mut rng)?;
        if p.dim() != self.km.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.km.state_dim(), got: p.dim() });
        }
        self.particles = Some(p);
        Ok(())
    }

    /// Initializes from a spec that already conditions on `y_1` and reports
    /// step 1 without weighting.
    pub fn initialize_from_first(&mut self, spec: &InitSpec) -> Result<EssmStep> {
        self.initialize(spec)?;
        self.step = 1;
        self.report(self.config.particles as f64, false, false)
    }

    fn report(&self, ess: f64, resampled: bool, divergence: bool) -> Result<EssmStep> {
        let p = self.particles.as_ref().expect("initialized");
        let a = essm_situation_posterior(p, &self.km)?;
        Ok(EssmStep {
            k: self.step,
            ess,
            resampled,
            divergence,
            knowledge_degenerate: a.degenerate,
            posterior: a.dist,
            estimate: state_estimate(p),
        })
    }

    /// Propagate, weight by `p(y | x)`, normalize, resample if needed.
    pub fn step(&mut self, y: &S::Measurement) -> Result<EssmStep> {
        let k = self.step + 1;
        let mut p = self
            .particles
            .take()
            .ok_or_else(|| Error::InvalidArgument("filter not initialized".into()))?;
        let d = p.dim;
        let propagate = self.seeds.child("propagate");
        let motion = &self.motion;
        let sensor = &self.sensor;
        let mut log_w = vec![0.0; p.len()];
        p.states
            .par_chunks_mut(CHUNK * d)
            .zip(log_w.par_chunks_mut(CHUNK))
            .zip(p.weights.par_chunks(CHUNK))
            .enumerate()
            .for_each(|(c, ((states, lw), w))| {
                let mut rng = propagate.stream_at(k as u64, c as u64);
                for ((x, l), wi) in states.chunks_mut(d).zip(lw.iter_mut()).zip(w) {
                    motion.propagate(x, &mut rng);
                    *l = wi.ln() + sensor.log_likelihood(y, x);
                }
            });
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let divergence = !(max >= DIVERGENCE_FLOOR.ln()) || max.is_infinite();
        if divergence {
            let n = p.len() as f64;
            p.weights.iter_mut().for_each(|w| *w = 1.0 / n);
        } else {
            let mut total = 0.0;
            for (w, l) in p.weights.iter_mut().zip(&log_w) {
                *w = (l - max).exp();
                total += *w;
            }
            p.weights.iter_mut().for_each(|w| *w /= total);
        }
        let ess = p.ess();
        let resampled = ess < self.config.ess_threshold * p.len() as f64;
        if resampled {
            let mut rng = self.seeds.child("resample").stream_at(k as u64, 0);
            p = systematic_resample(&p, &mut rng);
        }
        self.particles = Some(p);
        self.step = k;
        self.report(ess, resampled, divergence)
    }
}
