//! Semi-Markov-modulated marked Hawkes processes for risk prognosis.
//!
//! A patient episode is driven by a latent absorbing semi-Markov jump
//! process. Each latent state modulates a self-exciting (Hawkes) process of
//! observation times and a multi-task Gaussian process of marks. The crate
//! covers the full workflow:
//!
//! - [`model`]: parameter bundle, episode types, kernels and intensities
//! - [`sampler`]: simulation of informatively sampled, censored episodes
//! - [`changepoint`]: E-divisive segmentation of episodes into sojourns
//! - [`estimators`]: Gamma, Hawkes and GP maximum-likelihood fits
//! - [`learner`]: the three-step offline learning pipeline
//! - [`risk`]: forward filtering and absorption-probability risk scores
//! - [`evaluation`]: AUCs, alarm lead times and sampling-rate curves

pub mod changepoint;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod reference;
pub mod risk;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{Episode, Event, GammaParams, GpParams, HawkesParams, Label, ModelParams, StateParams, StatePath};
