//! Evaluation of posterior tables against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{TargetState, TruthLabel, DANGER};

/// Default half-width of the window excluded around each label change.
pub const DEFAULT_MARGIN: usize = 2;

/// A maximal run of consecutive 'danger' steps attributed to one region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPass {
    pub region: Option<usize>,
    /// Zero-based first and last step of the run.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassMetrics {
    pub region: Option<usize>,
    /// One-based step indices, as in the CSV `k` column.
    pub start_k: usize,
    pub end_k: usize,
    pub max_p_danger: f64,
    /// Steps from entry until `p(danger) > 0.5`; `None` if never within the pass.
    pub detection_lag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineMetrics {
    pub accuracy: f64,
    pub evaluated_steps: usize,
    /// Every posterior row uniform: accuracy only reflects the tie-break.
    pub degenerate: bool,
    pub passes: Vec<PassMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_rmse: Option<f64>,
}

pub fn region_passes(labels: &[TruthLabel]) -> Vec<RegionPass> {
    let mut out: Vec<RegionPass> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if l.situation != DANGER {
            continue;
        }
        match out.last_mut() {
            Some(p) if p.end + 1 == i && p.region == l.region => p.end = i,
            _ => out.push(RegionPass { region: l.region, start: i, end: i }),
        }
    }
    out
}

/// Steps excluded from accuracy: within `margin` of an index whose label
/// differs from its predecessor.
pub fn transition_mask(labels: &[usize], margin: usize) -> Vec<bool> {
    let mut excluded = vec![false; labels.len()];
    for t in 1..labels.len() {
        if labels[t] != labels[t - 1] {
            let lo = t.saturating_sub(margin);
            let hi = (t + margin).min(labels.len() - 1);
            excluded[lo..=hi].iter_mut().for_each(|e| *e = true);
        }
    }
    excluded
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in row.iter().enumerate() {
        if *p > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of non-excluded steps whose argmax equals the label.
pub fn argmax_accuracy(posteriors: &[Vec<f64>], labels: &[usize], margin: usize) -> (f64, usize) {
    let mask = transition_mask(labels, margin);
    let (mut hit, mut total) = (0usize, 0usize);
    for ((row, label), skip) in posteriors.iter().zip(labels).zip(mask) {
        if skip {
            continue;
        }
        total += 1;
        hit += usize::from(argmax(row) == *label);
    }
    (if total == 0 { f64::NAN } else { hit as f64 / total as f64 }, total)
}

pub fn pass_metrics(posteriors: &[Vec<f64>], passes: &[RegionPass]) -> Vec<PassMetrics> {
    passes
        .iter()
        .map(|p| {
            let window = &posteriors[p.start..=p.end];
            let max_p_danger = window.iter().map(|r| r[DANGER]).fold(f64::NEG_INFINITY, f64::max);
            let detection_lag = window.iter().position(|r| r[DANGER] > 0.5);
            PassMetrics { region: p.region, start_k: p.start + 1, end_k: p.end + 1, max_p_danger, detection_lag }
        })
        .collect()
}

pub fn position_rmse(estimates: &[[f64; 4]], truth: &[TargetState]) -> Result<f64> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::Data(format!(
            "{} state estimates for {} truth rows",
            estimates.len(),
            truth.len()
        )));
    }
    let sse: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| (e[0] - t.x()).powi(2) + (e[2] - t.y()).powi(2))
        .sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Metrics for one engine's posterior table.
pub fn evaluate(
    posteriors: &[Vec<f64>],
    labels: &[TruthLabel],
    estimates: Option<(&[[f64; 4]], &[TargetState])>,
    margin: usize,
) -> Result<EngineMetrics> {
    if posteriors.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} posterior rows for {} labels",
            posteriors.len(),
            labels.len()
        )));
    }
    if let Some(row) = posteriors.iter().find(|r| r.len() <= DANGER) {
        return Err(Error::Data(format!("posterior row with {} columns", row.len())));
    }
    let situations: Vec<usize> = labels.iter().map(|l| l.situation).collect();
    let (accuracy, evaluated_steps) = argmax_accuracy(posteriors, &situations, margin);
    let degenerate = posteriors.iter().all(|r| {
        let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        hi - lo < 1e-12
    });
    let passes = pass_metrics(posteriors, &region_passes(labels));
    let position_rmse = estimates.map(|(e, t)| position_rmse(e, t)).transpose()?;
    Ok(EngineMetrics { accuracy, evaluated_steps, degenerate, passes, position_rmse })
}
