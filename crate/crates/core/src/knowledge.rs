//! Gaussian-mixture knowledge models.
//!
//! Expert knowledge about how the pivot state `x` looks under each situation
//! `s` is encoded as a mixture `p(x | s) = Σ ω_i N(x | X_i, Σ_i)`. Each
//! component factorizes its covariance once at construction; densities are
//! evaluated in log space.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Weights within this distance of summing to one are renormalized.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Smallest admissible eigenvalue relative to the largest one.
pub const PD_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Ordered, fixed set of situation labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationSpace {
    labels: Vec<String>,
}

impl SituationSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "situation space needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.trim().is_empty() {
                return Err(Error::InvalidArgument("empty situation label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate situation label '{l}'")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

/// A single weighted Gaussian with a precomputed Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    weight: f64,
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    /// Row-major lower-triangular Cholesky factor.
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("component mean must be non-empty".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeights(format!("component weight {weight} must be > 0")));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean or covariance entry".into()));
        }
        let scale = covariance.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(covariance.clone());
        let max_ev = eig.eigenvalues.max();
        let min_ev = eig.eigenvalues.min();
        if !(max_ev > 0.0) || min_ev <= PD_RELATIVE_TOLERANCE * max_ev {
            return Err(Error::NotPositiveDefinite(format!(
                "eigenvalues range [{min_ev:e}, {max_ev:e}]"
            )));
        }
        let l = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .l();
        let mut chol = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        Ok(Self {
            weight,
            mean,
            covariance,
            chol,
            log_norm: -0.5 * d as f64 * LN_2PI - log_det_half,
        })
    }

    /// Component with a diagonal covariance given by its variances.
    pub fn diagonal(weight: f64, mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        if variances.len() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: variances.len() });
        }
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances));
        Self::new(weight, mean, cov)
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln N(x | mean, cov)`, without the mixture weight.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        debug_assert_eq!(x.len(), d);
        let mut buf = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= buf.len() {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= row[j] * z[j];
            }
            z[i] = acc / row[i];
            quad += z[i] * z[i];
        }
        self.log_norm - 0.5 * quad
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mean.len();
        let mut buf = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= buf.len() {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            out[i] = self.mean[i] + row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Weighted sum of Gaussian components over a common dimension.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let dim = first.dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: c.dim() });
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, expected 1")));
        }
        for c in components.iter_mut() {
            c.weight /= total;
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { dim, components, log_weights, cumulative })
    }

    /// Equal-weight mixture; convenient for expert-specified knowledge.
    pub fn equally_weighted(parts: Vec<(Vec<f64>, DMatrix<f64>)>) -> Result<Self> {
        let w = 1.0 / parts.len().max(1) as f64;
        let comps = parts
            .into_iter()
            .map(|(m, c)| GaussianComponent::new(w, m, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.weight)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// `ln p(x)` without a dimension check.
    pub fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].log_pdf(x);
        }
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        // streaming log-sum-exp
        for (c, lw) in self.components.iter().zip(&self.log_weights) {
            let v = lw + c.log_pdf(x);
            if v <= max {
                sum += (v - max).exp();
            } else if v.is_finite() {
                sum = sum * (max - v).exp() + 1.0;
                max = v;
            } else if v.is_nan() {
                return f64::NAN;
            }
        }
        if max == f64::NEG_INFINITY {
            max
        } else {
            max + sum.ln()
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.log_density_unchecked(x))
    }

    /// `Σ_i ω_i N(x | X_i, Σ_i)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Picks a component index by weight.
    pub fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u).min(self.components.len() - 1)
    }

    /// One draw written into `out`; returns the selected component.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let i = self.pick_component(rng);
        self.components[i].sample_into(rng, out);
        i
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        Ok((0..n)
            .map(|_| {
                let mut x = vec![0.0; self.dim];
                self.sample_into(rng, &mut x);
                x
            })
            .collect())
    }
}

/// Probability vector over a [`SituationSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationDistribution {
    probs: Vec<f64>,
}

/// Tolerance on `Σ p = 1` for a situation distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

impl SituationDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("probabilities outside [0,1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize) -> Self {
        Self { probs: vec![1.0 / m as f64; m] }
    }

    /// Normalizes non-negative weights. Returns `None` when they sum to zero
    /// or are not finite.
    pub fn from_weights(weights: &[f64]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return None;
        }
        Some(Self { probs: weights.iter().map(|w| w / total).collect() })
    }

    /// Softmax of log-weights. Returns `None` when every entry is `-inf`.
    pub fn from_log_weights(log_weights: &[f64]) -> Option<Self> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(&w)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the most probable label; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A distribution paired with a degeneracy flag raised when the inputs
/// carried no usable evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub dist: SituationDistribution,
    pub degenerate: bool,
}

/// One mixture per situation label, defined on a projection of the state.
#[derive(Debug, Clone)]
pub struct KnowledgeModel {
    space: SituationSpace,
    mixtures: Vec<GaussianMixture>,
    projection: Vec<usize>,
    state_dim: usize,
}

impl KnowledgeModel {
    /// `projection[j]` is the full-state index feeding mixture coordinate `j`.
    pub fn new(
        space: SituationSpace,
        mixtures: Vec<GaussianMixture>,
        projection: Vec<usize>,
        state_dim: usize,
    ) -> Result<Self> {
        if mixtures.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "{} mixtures for {} situation labels",
                mixtures.len(),
                space.len()
            )));
        }
        if projection.is_empty() {
            return Err(Error::InvalidArgument("empty projection".into()));
        }
        if let Some(&bad) = projection.iter().find(|&&i| i >= state_dim) {
            return Err(Error::InvalidArgument(format!(
                "projection index {bad} outside state dimension {state_dim}"
            )));
        }
        let mut seen = HashSet::new();
        if !projection.iter().all(|i| seen.insert(*i)) {
            return Err(Error::InvalidArgument("projection indices must be distinct".into()));
        }
        if let Some(m) = mixtures.iter().find(|m| m.dim() != projection.len()) {
            return Err(Error::DimensionMismatch { expected: projection.len(), got: m.dim() });
        }
        Ok(Self { space, mixtures, projection, state_dim })
    }

    /// Knowledge defined directly on the full state (identity projection).
    pub fn full_state(space: SituationSpace, mixtures: Vec<GaussianMixture>) -> Result<Self> {
        let d = mixtures.first().map(|m| m.dim()).unwrap_or(0);
        Self::new(space, mixtures, (0..d).collect(), d)
    }

    pub fn space(&self) -> &SituationSpace {
        &self.space
    }

    pub fn mixtures(&self) -> &[GaussianMixture] {
        &self.mixtures
    }

    pub fn mixture(&self, label: usize) -> &GaussianMixture {
        &self.mixtures[label]
    }

    pub fn projection(&self) -> &[usize] {
        &self.projection
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn knowledge_dim(&self) -> usize {
        self.projection.len()
    }

    pub fn project_into(&self, state: &[f64], out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(&self.projection) {
            *o = state[i];
        }
    }

    pub fn project(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, got: state.len() });
        }
        let mut out = vec![0.0; self.projection.len()];
        self.project_into(state, &mut out);
        Ok(out)
    }

    /// Completes a knowledge-space point to a full state; unprojected
    /// coordinates are zero.
    pub fn embed_into(&self, point: &[f64], state: &mut [f64]) {
        state.iter_mut().for_each(|v| *v = 0.0);
        for (&i, v) in self.projection.iter().zip(point) {
            state[i] = *v;
        }
    }

    /// `ln p(x | s)` for every label, `x` a full state.
    pub fn log_densities_into(&self, state: &[f64], out: &mut [f64]) {
        let mut buf = [0.0f64; 8];
        let mut heap;
        let p: &mut [f64] = if self.projection.len() <= buf.len() {
            &mut buf[..self.projection.len()]
        } else {
            heap = vec![0.0; self.projection.len()];
            &mut heap
        };
        self.project_into(state, p);
        for (o, m) in out.iter_mut().zip(&self.mixtures) {
            *o = m.log_density_unchecked(p);
        }
    }

    pub fn log_densities(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, got: state.len() });
        }
        let mut out = vec![0.0; self.space.len()];
        self.log_densities_into(state, &mut out);
        Ok(out)
    }
}

/// `p(s | x) ∝ p(x | s)` under a uniform situation prior.
///
/// Normalization runs on log densities, so only a state at which every
/// mixture has exactly zero density yields the uniform fallback with the
/// degeneracy flag set.
pub fn situation_given_state(km: &KnowledgeModel, state: &[f64]) -> Result<Assessment> {
    let logs = km.log_densities(state)?;
    Ok(match SituationDistribution::from_log_weights(&logs) {
        Some(dist) => Assessment { dist, degenerate: false },
        None => Assessment { dist: SituationDistribution::uniform(km.space().len()), degenerate: true },
    })
}
