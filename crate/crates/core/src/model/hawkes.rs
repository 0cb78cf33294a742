//! Linear self-exciting intensity with an exponential triggering kernel.
//!
//! The excitation history is reset at every latent jump: only events after
//! the most recent jump contribute.

use super::HawkesParams;
use crate::error::{Error, Result};

/// `λ(t) = λ° + α Σ exp(-β (t - t_m))` over `history`, all strictly before `t`.
pub fn hawkes_intensity(t: f64, history: &[f64], hp: &HawkesParams) -> Result<f64> {
    if let Some(&bad) = history.iter().find(|&&tm| tm >= t) {
        return Err(Error::Precondition(format!(
            "history event at {bad} is not before t = {t}"
        )));
    }
    let excitation: f64 = history.iter().map(|&tm| (-hp.decay * (t - tm)).exp()).sum();
    Ok(hp.base_rate + hp.excitation * excitation)
}

/// Stationary mean intensity `λ° / (1 - α/β)`.
pub fn expected_intensity(hp: &HawkesParams) -> Result<f64> {
    let ratio = hp.branching_ratio();
    if ratio >= 1.0 {
        return Err(Error::Stationarity { ratio });
    }
    Ok(hp.base_rate / (1.0 - ratio))
}

/// Compensator increments `Λ(t_k) - Λ(t_{k-1})` for events in a window that
/// starts at `start` with empty history (`t_0 = start`).
///
/// Under the true parameters these are i.i.d. unit exponentials.
pub fn compensator_increments(times: &[f64], start: f64, hp: &HawkesParams) -> Vec<f64> {
    let (mu, alpha, beta) = (hp.base_rate, hp.excitation, hp.decay);
    let mut out = Vec::with_capacity(times.len());
    // Σ_{j<k} exp(-β (t_prev - t_j)) just after t_prev
    let mut state = 0.0;
    let mut prev = start;
    for &t in times {
        let dt = t - prev;
        let decay = (-beta * dt).exp();
        out.push(mu * dt + alpha / beta * state * (1.0 - decay));
        state = state * decay + 1.0;
        prev = t;
    }
    out
}
