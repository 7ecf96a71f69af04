//! Running the engines over a measurement stream.

use crate::config::EngineParams;
use crate::error::Result;
use crate::essm::{EssmConfig, EssmFilter, EssmStep};
use crate::hmm::{HmmFilter, HmmStep};
use crate::rng::SeedTree;
use crate::scenario::{Observation, Scenario};

/// HMM situation filter over `obs`; the first observation yields the prior.
pub fn run_hmm(sc: &Scenario, params: &EngineParams, obs: &[Observation], seeds: SeedTree) -> Result<Vec<HmmStep>> {
    let mut f = HmmFilter::new(
        sc.knowledge.clone(),
        params.transition_matrix()?,
        params.mc_samples,
        params.initial_distribution()?,
        seeds,
    )?;
    obs.iter().map(|y| f.process(y, &sc.sensor)).collect()
}

/// Particle-filter engine; particles are anchored on the first observation.
pub fn run_essm(sc: &Scenario, params: &EngineParams, obs: &[Observation], seeds: SeedTree) -> Result<Vec<EssmStep>> {
    let Some((first, rest)) = obs.split_first() else {
        return Ok(Vec::new());
    };
    let mut f = EssmFilter::new(
        sc.knowledge.clone(),
        sc.motion.clone(),
        sc.sensor,
        EssmConfig { particles: params.particles, ess_threshold: params.ess_threshold },
        seeds,
    )?;
    let spec = sc.sensor.anchored_init(first, params.init_velocity_std, params.init_widen)?;
    let mut out = Vec::with_capacity(obs.len());
    out.push(f.initialize_from_first(&spec)?);
    for y in rest {
        out.push(f.step(y)?);
    }
    Ok(out)
}

pub fn hmm_rows(steps: &[HmmStep]) -> Vec<Vec<f64>> {
    steps.iter().map(|s| s.posterior.probs().to_vec()).collect()
}

pub fn essm_rows(steps: &[EssmStep]) -> Vec<Vec<f64>> {
    steps.iter().map(|s| s.posterior.probs().to_vec()).collect()
}

pub fn essm_estimates(steps: &[EssmStep]) -> Vec<[f64; 4]> {
    steps
        .iter()
        .map(|s| {
            let mut e = [0.0; 4];
            e.copy_from_slice(&s.estimate[..4]);
            e
        })
        .collect()
}

pub fn essm_flags(s: &EssmStep) -> String {
    let mut f = Vec::new();
    if s.divergence {
        f.push("divergence");
    }
    if s.knowledge_degenerate {
        f.push("knowledge_underflow");
    }
    if f.is_empty() {
        "none".into()
    } else {
        f.join("|")
    }
}

pub fn hmm_flags(s: &HmmStep) -> &'static str {
    if s.zero_evidence {
        "zero_evidence"
    } else {
        "none"
    }
}
