//! Sequential Bayesian situation awareness.
//!
//! Two engines estimate a discrete situation (e.g. safe / potential danger /
//! danger) from bearing-range measurements of a moving target:
//!
//! * [`hmm`]: an HMM filter over situations whose measurement likelihood
//!   marginalizes the target state against Gaussian-mixture knowledge by
//!   Monte Carlo;
//! * [`essm`]: a particle filter over the target state, with the situation
//!   posterior obtained by weighting the mixture knowledge with the particles.
//!
//! [`knowledge`] holds the mixture models, [`scenario`] the simulated world and
//! [`cli`] the file formats and experiment orchestration.

pub mod cli;
pub mod config;
pub mod error;
pub mod essm;
pub mod hmm;
pub mod knowledge;
pub mod models;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
