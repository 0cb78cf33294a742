//! Maximum-likelihood building blocks: closed-form Gamma fit, Hawkes
//! likelihood with Nelder-Mead search, and multi-task GP likelihood with
//! gradient-based hyperparameter search.

mod gamma;
mod gp;
mod hawkes;
mod nelder_mead;

pub use gamma::{fit_gamma_mle, fit_gamma_or_capped, MAX_SHAPE};
pub use gp::{
    fit_gp, gp_from_hyper, gp_hyper_vector, gp_marginal_loglik, gp_objective, hyper_len, refine_gp,
    weighted_gp_loglik, GpFitConfig, MarkSegment, WeightedMarks,
};
pub use hawkes::{fit_hawkes, hawkes_loglik, initial_hawkes_guess, HawkesSegment};
pub use nelder_mead::{nelder_mead, Minimum, NelderMeadConfig};

