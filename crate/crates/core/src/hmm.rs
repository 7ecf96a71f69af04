//! Discrete-situation HMM filter.
//!
//! The situation `s_k` follows a row-stochastic transition matrix and the
//! measurement likelihood `p(y | s)` is obtained by integrating the sensor
//! density against the knowledge mixture `p(x | s)` with plain Monte Carlo.

use rayon::prelude::*;
use rand::Rng;

use crate::error::{Error, Result};
use crate::knowledge::{Assessment, KnowledgeModel, SituationDistribution};
use crate::models::MeasurementModel;
use crate::rng::SeedTree;

/// Default Monte-Carlo sample count per situation and step.
pub const DEFAULT_MC_SAMPLES: usize = 10_000;

/// `probs[i][j] = p(s_k = j | s_{k-1} = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    m: usize,
    probs: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::InvalidArgument("empty transition matrix".into()));
        }
        let mut probs = Vec::with_capacity(m * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: row.len() });
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("row {i} has entries outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s}")));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self { m, probs })
    }

    pub fn identity(m: usize) -> Self {
        let mut probs = vec![0.0; m * m];
        for i in 0..m {
            probs[i * m + i] = 1.0;
        }
        Self { m, probs }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.m + to]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.m)
    }
}

/// `p(s_k | y_{1:k-1}) = Σ_i p(s_{k-1} = i | y_{1:k-1}) T[i][j]`.
pub fn hmm_predict(prior: &SituationDistribution, trans: &TransitionMatrix) -> Result<SituationDistribution> {
    let m = trans.dim();
    if prior.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: prior.len() });
    }
    let mut out = vec![0.0; m];
    for (p, row) in prior.probs().iter().zip(trans.rows()) {
        for (o, t) in out.iter_mut().zip(row) {
            *o += p * t;
        }
    }
    SituationDistribution::from_weights(&out)
        .ok_or_else(|| Error::InvalidArgument("predicted distribution has no mass".into()))
}

/// `ln((1/n) Σ_i p(y | x̂_i))` with `x̂_i ~ p(x | s = label)`.
///
/// Knowledge-space draws are embedded into a full state with zeros in the
/// unprojected coordinates before the sensor density is evaluated.
pub fn mc_log_likelihood<S, R>(
    km: &KnowledgeModel,
    label: usize,
    y: &S::Measurement,
    sensor: &S,
    n: usize,
    rng: &mut R,
) -> Result<f64>
where
    S: MeasurementModel,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo sample count must be >= 1".into()));
    }
    if label >= km.space().len() {
        return Err(Error::InvalidArgument(format!("situation index {label} out of range")));
    }
    let mix = km.mixture(label);
    let mut point = vec![0.0; km.knowledge_dim()];
    let mut state = vec![0.0; km.state_dim()];
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for _ in 0..n {
        mix.sample_into(rng, &mut point);
        km.embed_into(&point, &mut state);
        let v = sensor.log_likelihood(y, &state);
        if v <= max {
            sum += (v - max).exp();
        } else if v.is_finite() {
            sum = sum * (max - v).exp() + 1.0;
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    Ok(max + sum.ln() - (n as f64).ln())
}

/// Monte-Carlo estimate of `p(y | s = label)`. Returns 0 when every draw
/// has zero sensor density.
pub fn mc_likelihood<S, R>(
    km: &KnowledgeModel,
    label: usize,
    y: &S::Measurement,
    sensor: &S,
    n: usize,
    rng: &mut R,
) -> Result<f64>
where
    S: MeasurementModel,
    R: Rng + ?Sized,
{
    Ok(mc_log_likelihood(km, label, y, sensor, n, rng)?.exp())
}

/// Bayes update `pred_j L_j / Σ_i pred_i L_i`. Zero total evidence keeps
/// `pred` and sets the degeneracy flag.
pub fn hmm_update(pred: &SituationDistribution, likelihoods: &[f64]) -> Result<Assessment> {
    if likelihoods.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: likelihoods.len() });
    }
    if likelihoods.iter().any(|l| !(*l >= 0.0) || l.is_infinite()) {
        return Err(Error::InvalidArgument(format!("likelihoods must be finite and >= 0: {likelihoods:?}")));
    }
    let joint: Vec<f64> = pred.probs().iter().zip(likelihoods).map(|(p, l)| p * l).collect();
    Ok(match SituationDistribution::from_weights(&joint) {
        Some(dist) => Assessment { dist, degenerate: false },
        None => Assessment { dist: pred.clone(), degenerate: true },
    })
}

/// Per-step record kept by [`HmmFilter`].
#[derive(Debug, Clone, PartialEq)]
pub struct HmmStep {
    pub k: usize,
    pub posterior: SituationDistribution,
    pub log_likelihoods: Vec<f64>,
    pub zero_evidence: bool,
}

/// Recursive filter over the situation space.
#[derive(Debug, Clone)]
pub struct HmmFilter {
    km: KnowledgeModel,
    transition: TransitionMatrix,
    mc_samples: usize,
    posterior: SituationDistribution,
    step: usize,
    seeds: SeedTree,
}

impl HmmFilter {
    /// `initial` is `p(s_1 | y_1)`; the first processed observation is
    /// absorbed into it.
    pub fn new(
        km: KnowledgeModel,
        transition: TransitionMatrix,
        mc_samples: usize,
        initial: Option<SituationDistribution>,
        seeds: SeedTree,
    ) -> Result<Self> {
        let m = km.space().len();
        if transition.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: transition.dim() });
        }
        if mc_samples == 0 {
            return Err(Error::InvalidArgument("Monte-Carlo sample count must be >= 1".into()));
        }
        let posterior = initial.unwrap_or_else(|| SituationDistribution::uniform(m));
        if posterior.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: posterior.len() });
        }
        Ok(Self { km, transition, mc_samples, posterior, step: 0, seeds })
    }

    pub fn posterior(&self) -> &SituationDistribution {
        &self.posterior
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn knowledge(&self) -> &KnowledgeModel {
        &self.km
    }

    /// Full predict / likelihood / update recursion for the next step.
    pub fn step<S: MeasurementModel>(&mut self, y: &S::Measurement, sensor: &S) -> Result<HmmStep> {
        let k = self.step + 1;
        let pred = hmm_predict(&self.posterior, &self.transition)?;
        let m = self.km.space().len();
        let log_l = (0..m)
            .into_par_iter()
            .map(|label| {
                let mut rng = self.seeds.stream_at(k as u64, label as u64);
                mc_log_likelihood(&self.km, label, y, sensor, self.mc_samples, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        // Likelihoods enter the update only through their ratios.
        let shift = log_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = if shift.is_finite() {
            log_l.iter().map(|l| (l - shift).exp()).collect()
        } else {
            vec![0.0; m]
        };
        let upd = hmm_update(&pred, &scaled)?;
        self.posterior = upd.dist;
        self.step = k;
        Ok(HmmStep {
            k,
            posterior: self.posterior.clone(),
            log_likelihoods: log_l,
            zero_evidence: upd.degenerate,
        })
    }

    /// Processes the next observation. The first call returns the prior
    /// `p(s_1 | y_1)` unchanged.
    pub fn process<S: MeasurementModel>(&mut self, y: &S::Measurement, sensor: &S) -> Result<HmmStep> {
        if self.step == 0 {
            self.step = 1;
            return Ok(HmmStep {
                k: 1,
                posterior: self.posterior.clone(),
                log_likelihoods: Vec::new(),
                zero_evidence: false,
            });
        }
        self.step(y, sensor)
    }
}
