//! Segment-level Baum-Welch over the transient states.
//!
//! Each episode's transient segments form a hidden chain with no
//! self-transitions; the backward recursion ends with the transition into
//! the absorbing state named by the episode's label. The absorbing segment
//! itself is fully observed and contributes a constant.

use rayon::prelude::*;

use super::{Segment, SegmentedEpisode, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_gamma_or_capped, fit_hawkes, gp_marginal_loglik, hawkes_loglik, refine_gp, WeightedMarks,
};
use crate::model::{GpParams, ModelParams, StateParams};

/// Floor below which a state's total responsibility counts as collapsed.
const COLLAPSE_MASS: f64 = 1e-8;

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn gp_term(seg: &Segment, gp: &GpParams) -> Result<f64> {
    if seg.has_marks() {
        gp_marginal_loglik(seg.marks(), gp)
    } else {
        Ok(0.0)
    }
}

/// Log-density of a whole segment under one state's parameters.
pub(crate) fn emission(seg: &Segment, sp: &StateParams) -> Result<f64> {
    let d = seg.duration();
    let v = sp.gamma.ln_pdf(d) + hawkes_loglik(&seg.local_times, &sp.hawkes, d)? + gp_term(seg, &sp.gp)?;
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
}

/// Sufficient statistics of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    /// Observed-data log-likelihood summed over feasible episodes.
    pub loglik: f64,
    /// `[episode][transient segment][state]`; absorbing columns are 0 and
    /// infeasible episodes have an empty list.
    pub responsibilities: Vec<Vec<Vec<f64>>>,
    /// Expected transition counts, including the final transient → absorbing
    /// step.
    pub transitions: Vec<Vec<f64>>,
    /// Expected counts of the first state.
    pub initial: Vec<f64>,
    /// Indices of episodes with zero likelihood under the parameters.
    pub infeasible: Vec<usize>,
}

struct EpisodeStats {
    loglik: f64,
    resp: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn episode_stats(d: &SegmentedEpisode, params: &ModelParams, ln_p: &[Vec<f64>], ln_pi: &[f64]) -> Result<Option<EpisodeStats>> {
    let n = params.n_states;
    let abs = params.absorbing_for(d.label);
    let tail = emission(d.absorbing_segment(), &params.states[abs])?;
    let segs = d.transient_segments();
    let mut transitions = vec![vec![0.0; n]; n];
    let mut initial = vec![0.0; n];
    if segs.is_empty() {
        let ll = ln_pi[abs] + tail;
        if !ll.is_finite() {
            return Ok(None);
        }
        initial[abs] = 1.0;
        return Ok(Some(EpisodeStats { loglik: ll, resp: Vec::new(), transitions, initial }));
    }
    let transient = params.transient_states();
    let j = segs.len();
    let mut e = vec![vec![f64::NEG_INFINITY; n]; j];
    for (s, seg) in segs.iter().enumerate() {
        for i in transient.clone() {
            e[s][i] = emission(seg, &params.states[i])?;
        }
    }
    let mut alpha = vec![vec![f64::NEG_INFINITY; n]; j];
    for i in transient.clone() {
        alpha[0][i] = ln_pi[i] + e[0][i];
    }
    for s in 1..j {
        for k in transient.clone() {
            alpha[s][k] = log_sum_exp(transient.clone().map(|i| alpha[s - 1][i] + ln_p[i][k])) + e[s][k];
        }
    }
    let mut beta = vec![vec![f64::NEG_INFINITY; n]; j];
    for i in transient.clone() {
        beta[j - 1][i] = ln_p[i][abs];
    }
    for s in (0..j - 1).rev() {
        for i in transient.clone() {
            beta[s][i] = log_sum_exp(transient.clone().map(|k| ln_p[i][k] + e[s + 1][k] + beta[s + 1][k]));
        }
    }
    let ll = log_sum_exp(transient.clone().map(|i| alpha[j - 1][i] + beta[j - 1][i]));
    if !ll.is_finite() {
        return Ok(None);
    }
    let mut resp = vec![vec![0.0; n]; j];
    for s in 0..j {
        let row: Vec<f64> = (0..n)
            .map(|i| if transient.contains(&i) { (alpha[s][i] + beta[s][i] - ll).exp() } else { 0.0 })
            .collect();
        // renormalize away rounding so each segment sums to 1
        let total: f64 = row.iter().sum();
        resp[s] = row.iter().map(|v| v / total).collect();
    }
    for s in 0..j - 1 {
        for i in transient.clone() {
            for k in transient.clone() {
                let v = alpha[s][i] + ln_p[i][k] + e[s + 1][k] + beta[s + 1][k] - ll;
                transitions[i][k] += v.exp();
            }
        }
    }
    for i in transient.clone() {
        transitions[i][abs] += resp[j - 1][i];
        initial[i] = resp[0][i];
    }
    Ok(Some(EpisodeStats { loglik: ll + tail, resp, transitions, initial }))
}

/// Forward-backward over every episode; episodes run in parallel and are
/// reduced in dataset order.
pub fn e_step(dataset: &[SegmentedEpisode], params: &ModelParams) -> Result<EStep> {
    let n = params.n_states;
    let ln_p: Vec<Vec<f64>> = params.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    let ln_pi: Vec<f64> = params.initial.iter().map(|p| p.ln()).collect();
    let per: Vec<Result<Option<EpisodeStats>>> =
        dataset.par_iter().map(|d| episode_stats(d, params, &ln_p, &ln_pi)).collect();
    let mut out = EStep {
        loglik: 0.0,
        responsibilities: Vec::with_capacity(dataset.len()),
        transitions: vec![vec![0.0; n]; n],
        initial: vec![0.0; n],
        infeasible: Vec::new(),
    };
    for (idx, r) in per.into_iter().enumerate() {
        match r? {
            None => {
                out.infeasible.push(idx);
                out.responsibilities.push(Vec::new());
            }
            Some(st) => {
                out.loglik += st.loglik;
                for i in 0..n {
                    out.initial[i] += st.initial[i];
                    for k in 0..n {
                        out.transitions[i][k] += st.transitions[i][k];
                    }
                }
                out.responsibilities.push(st.resp);
            }
        }
    }
    Ok(out)
}

fn weighted<'a>(dataset: &'a [SegmentedEpisode], est: &EStep, state: usize) -> Vec<(&'a Segment, f64)> {
    let mut out = Vec::new();
    for (d, resp) in dataset.iter().zip(&est.responsibilities) {
        for (seg, r) in d.transient_segments().iter().zip(resp) {
            out.push((seg, r[state]));
        }
    }
    let max_w = out.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    out.retain(|(_, w)| *w > 1e-12 * max_w);
    out
}

fn q_gamma(segs: &[(&Segment, f64)], sp: &StateParams) -> f64 {
    segs.iter().map(|(s, w)| w * sp.gamma.ln_pdf(s.duration())).sum()
}

fn q_hawkes(segs: &[(&Segment, f64)], sp: &StateParams) -> Result<f64> {
    let mut q = 0.0;
    for (s, w) in segs {
        q += w * hawkes_loglik(&s.local_times, &sp.hawkes, s.duration())?;
    }
    Ok(q)
}

fn q_gp(segs: &[(&Segment, f64)], gp: &GpParams) -> Result<f64> {
    let mut q = 0.0;
    for (s, w) in segs {
        q += w * gp_term(s, gp)?;
    }
    Ok(q)
}

/// Generalized M-step for one transient state: each component is replaced
/// only when its weighted expected log-likelihood does not drop, which keeps
/// EM monotone even though the Gamma estimator is approximate and the
/// Hawkes/GP searches are local.
fn update_state(segs: &[(&Segment, f64)], sp: &StateParams, cfg: &TrainConfig) -> Result<StateParams> {
    let mut next = sp.clone();
    let durations: Vec<f64> = segs.iter().map(|(s, _)| s.duration()).collect();
    let weights: Vec<f64> = segs.iter().map(|(_, w)| *w).collect();
    if let Ok(g) = fit_gamma_or_capped(&durations, Some(&weights)) {
        let cand = StateParams { gamma: g, ..next.clone() };
        if q_gamma(segs, &cand) >= q_gamma(segs, &next) {
            next = cand;
        }
    }
    let hsegs: Vec<_> = segs.iter().map(|(s, w)| s.hawkes(*w)).collect();
    if let Ok(h) = fit_hawkes(&hsegs, &next.hawkes, &cfg.hawkes) {
        let cand = StateParams { hawkes: h, ..next.clone() };
        if q_hawkes(segs, &cand)? >= q_hawkes(segs, &next)? {
            next = cand;
        }
    }
    let msegs: Vec<WeightedMarks<'_>> = segs
        .iter()
        .filter(|(s, _)| s.has_marks())
        .map(|(s, w)| WeightedMarks { segment: s.marks(), weight: *w })
        .collect();
    if let Ok(gp) = refine_gp(&msegs, &next.gp, cfg.gp_em_steps) {
        if q_gp(segs, &gp)? >= q_gp(segs, &next.gp)? {
            next.gp = gp;
        }
    }
    Ok(next)
}

fn m_step(
    dataset: &[SegmentedEpisode],
    params: &ModelParams,
    est: &EStep,
    cfg: &TrainConfig,
    frozen: &mut [bool],
    warnings: &mut Vec<String>,
) -> Result<ModelParams> {
    let n = params.n_states;
    let mut next = params.clone();
    let total_initial: f64 = est.initial.iter().sum();
    if total_initial > 0.0 {
        next.initial = est.initial.iter().map(|v| v / total_initial).collect();
    }
    for i in params.transient_states() {
        let row_total: f64 = est.transitions[i].iter().sum();
        if row_total > 0.0 {
            next.transition[i] = (0..n).map(|k| if k == i { 0.0 } else { est.transitions[i][k] / row_total }).collect();
        }
    }
    for i in params.transient_states() {
        let mass: f64 = est.responsibilities.iter().flatten().map(|r| r[i]).sum();
        if mass < COLLAPSE_MASS {
            if !frozen[i] {
                frozen[i] = true;
                warnings.push(format!("state {} collapsed (responsibility mass {mass:e}); parameters frozen", i + 1));
            }
            continue;
        }
        let segs = weighted(dataset, est, i);
        next.states[i] = update_state(&segs, &params.states[i], cfg)?;
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: ModelParams,
    /// Log-likelihood at the start of every iteration and at the end.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Responsibilities under the returned parameters.
    pub responsibilities: Vec<Vec<Vec<f64>>>,
    /// Ids of episodes with no admissible state sequence.
    pub infeasible: Vec<String>,
    pub warnings: Vec<String>,
}

/// EM from `init`. Absorbing-state parameters stay fixed; π, the transient
/// rows of P and the transient emission parameters are re-estimated.
pub fn baum_welch(dataset: &[SegmentedEpisode], init: &ModelParams, cfg: &TrainConfig) -> Result<EmResult> {
    init.check()?;
    if !dataset.iter().any(|d| !d.transient_segments().is_empty()) {
        return Err(Error::Precondition("Baum-Welch needs at least one transient segment".into()));
    }
    let mut params = init.clone();
    let mut frozen = vec![false; params.n_states];
    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    let est = loop {
        let est = e_step(dataset, &params)?;
        if est.infeasible.len() == dataset.len() {
            return Err(Error::Numerical("no episode has positive likelihood under the EM parameters".into()));
        }
        let ll = est.loglik;
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-6 * f64::abs(prev) {
                return Err(Error::LikelihoodDecrease { previous: prev, current: ll });
            }
            if (ll - prev).abs() <= cfg.loglik_tol * f64::max(1.0, ll.abs()) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iter == cfg.em_iters {
            break est;
        }
        params = m_step(dataset, &params, &est, cfg, &mut frozen, &mut warnings)?;
        iter += 1;
    };
    Ok(EmResult {
        infeasible: est.infeasible.iter().map(|&i| dataset[i].id.clone()).collect(),
        params,
        loglik_trace: trace,
        converged,
        responsibilities: est.responsibilities,
        warnings,
    })
}
