use super::nelder_mead::{nelder_mead, NelderMeadConfig};
use crate::error::{Error, Result};
use crate::model::HawkesParams;

/// Observation times of one segment, measured from the segment start, with
/// the segment length and an EM weight.
#[derive(Debug, Clone, Copy)]
pub struct HawkesSegment<'a> {
    pub times: &'a [f64],
    pub window_end: f64,
    pub weight: f64,
}

/// Exact log-likelihood of `times` on `[0, window_end]` with history starting
/// empty at 0:
///
/// ```text
/// −λ°T + Σ_m (α/β)(e^{−β(T − t_m)} − 1) + Σ_m ln(λ° + α A(m)),   A(m) = e^{−β(t_m − t_{m−1})}(1 + A(m−1))
/// ```
///
/// Infeasible parameters give `−∞` so optimizers can treat them as a
/// penalty.
pub fn hawkes_loglik(times: &[f64], hp: &HawkesParams, window_end: f64) -> Result<f64> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("event times must be sorted".into()));
    }
    if times.first().is_some_and(|&t| t < 0.0) || times.last().is_some_and(|&t| t > window_end) {
        return Err(Error::Precondition(format!("event times must lie in [0, {window_end}]")));
    }
    Ok(loglik_unchecked(times, hp, window_end))
}

fn loglik_unchecked(times: &[f64], hp: &HawkesParams, window_end: f64) -> f64 {
    let (mu, alpha, beta) = (hp.base_rate, hp.excitation, hp.decay);
    if !(mu > 0.0 && alpha >= 0.0 && beta > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = -mu * window_end;
    let mut a = 0.0;
    let mut prev: Option<f64> = None;
    for &t in times {
        if let Some(p) = prev {
            a = (-beta * (t - p)).exp() * (1.0 + a);
        }
        ll += (mu + alpha * a).ln();
        ll += alpha / beta * ((-beta * (window_end - t)).exp() - 1.0);
        prev = Some(t);
    }
    ll
}

fn from_log(x: &[f64]) -> HawkesParams {
    HawkesParams::new(x[0].exp(), x[1].exp(), x[2].exp())
}

/// Rate-based starting point: most of the mean rate attributed to the base
/// rate, mild excitation.
pub fn initial_hawkes_guess(segments: &[HawkesSegment<'_>]) -> HawkesParams {
    let events: f64 = segments.iter().map(|s| s.weight * s.times.len() as f64).sum();
    let exposure: f64 = segments.iter().map(|s| s.weight * s.window_end).sum();
    let rate = if exposure > 0.0 && events > 0.0 { events / exposure } else { 1.0 };
    HawkesParams::new(0.7 * rate, 0.3, 1.0)
}

/// Weighted maximum likelihood over `(λ°, α, β)`, searched in log space with
/// Nelder-Mead. Parameters with `α/β >= 1` are infeasible.
pub fn fit_hawkes(segments: &[HawkesSegment<'_>], init: &HawkesParams, cfg: &NelderMeadConfig) -> Result<HawkesParams> {
    let n_events: usize = segments.iter().filter(|s| s.weight > 0.0).map(|s| s.times.len()).sum();
    if n_events < 3 {
        return Err(Error::InsufficientData(format!("Hawkes fit needs >= 3 events, got {n_events}")));
    }
    for s in segments {
        hawkes_loglik(s.times, &HawkesParams::new(1.0, 0.0, 1.0), s.window_end)?;
        if !(s.weight >= 0.0 && s.weight.is_finite()) {
            return Err(Error::Precondition("segment weights must be finite and >= 0".into()));
        }
    }
    let total: f64 = segments.iter().map(|s| s.weight).sum();
    let objective = |x: &[f64]| -> f64 {
        let hp = from_log(x);
        if hp.branching_ratio() >= 1.0 {
            return f64::INFINITY;
        }
        -segments
            .iter()
            .filter(|s| s.weight > 0.0)
            .map(|s| s.weight / total * loglik_unchecked(s.times, &hp, s.window_end))
            .sum::<f64>()
    };
    let mut start = init.clone_feasible();
    let mut x = vec![start.base_rate.ln(), start.excitation.max(1e-8).ln(), start.decay.ln()];
    let mut value = objective(&x);
    if !value.is_finite() {
        start = initial_hawkes_guess(segments);
        x = vec![start.base_rate.ln(), start.excitation.ln(), start.decay.ln()];
        value = objective(&x);
    }
    // restart from the incumbent until a full run stops improving
    for _ in 0..5 {
        let m = nelder_mead(objective, &x, cfg)?;
        let improved = value - m.value;
        if m.value <= value {
            x = m.x;
            value = m.value;
        }
        if improved <= 1e-10 * (1.0 + value.abs()) {
            break;
        }
    }
    Ok(from_log(&x))
}

impl HawkesParams {
    /// Pulls an infeasible starting point back inside the stationary region.
    fn clone_feasible(&self) -> HawkesParams {
        let mut hp = *self;
        if !(hp.base_rate > 0.0) {
            hp.base_rate = 1.0;
        }
        if !(hp.decay > 0.0) {
            hp.decay = 1.0;
        }
        if !(hp.excitation >= 0.0) || hp.branching_ratio() >= 1.0 {
            hp.excitation = 0.5 * hp.decay;
        }
        hp
    }
}
