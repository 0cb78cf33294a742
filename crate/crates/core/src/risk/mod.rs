//! Real-time risk scoring: a duration-explicit forward filter over
//! observation epochs combined with absorption probabilities of the embedded
//! chain, `R(t) = Σᵢ P(X(t)=i | data) · P(X(∞)=N | X(t)=i)`.
//!
//! Epoch `m` opens a notional segment boundary `b_m` halfway between
//! `t_{m−1}` and `t_m` (`b_0 = 0`). A hypothesis is a current state `j` and
//! a segment start `s`; a segment spanning epochs `s..=e` that has already
//! ended contributes the Gamma mass of `(t_e − b_s, t_{e+1} − b_s]`, an
//! ongoing one the survival `S(t − b_s)`.

mod block;

pub use block::GpBlock;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::hawkes_loglik;
use crate::model::{Episode, Event, MaternKernel, ModelParams};

/// `a_i = P(X(∞) = N | X = i)`: 0 for the stable state, 1 for the
/// deteriorating state, and the solution of `(I − P_TT) a_T = P_{T,N}` for
/// the transient states.
pub fn absorption_prob(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = transition.len();
    if n < 3 || transition.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch(format!("transition must be square with N >= 3, got {n} rows")));
    }
    let k = n - 2;
    let a = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } - transition[i + 1][j + 1]);
    let b = DVector::from_fn(k, |i, _| transition[i + 1][n - 1]);
    let lu = a.lu();
    let sol = lu
        .solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("absorption system is singular (absorption unreachable)".into()))?;
    let mut out = vec![0.0; n];
    out[n - 1] = 1.0;
    for i in 0..k {
        out[i + 1] = sol[i].clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `Σᵢ posteriorᵢ · aᵢ`, clamped to `[0, 1]` against rounding.
pub fn risk_from_posterior(posterior: &[f64], absorption: &[f64]) -> f64 {
    posterior.iter().zip(absorption).map(|(p, a)| p * a).sum::<f64>().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Longest hypothesized current segment, in observation epochs.
    pub max_lookback: usize,
    /// Evaluation times; `None` scores at every observation epoch.
    pub time_grid: Option<Vec<f64>>,
    /// Include the per-state Hawkes likelihood of the observation times
    /// (off by default: sampling times are not used at test time).
    pub use_observation_process: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { max_lookback: 50, time_grid: None, use_observation_process: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub times: Vec<f64>,
    pub scores: Vec<f64>,
    pub posteriors: Vec<Vec<f64>>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One open hypothesis: the segment that started at epoch `start`.
#[derive(Debug, Clone)]
struct Open {
    start: usize,
    /// Per state: log entry mass `B(start, j)` and the GP block of the
    /// segment's marks (`None` when the entry mass is zero).
    entry: Vec<f64>,
    blocks: Vec<Option<GpBlock>>,
}

/// Causal forward filter; feed events in time order with [`Filter::push`].
#[derive(Debug, Clone)]
pub struct Filter<'a> {
    params: &'a ModelParams,
    cfg: &'a FilterConfig,
    kernels: Vec<MaternKernel>,
    ln_p: Vec<Vec<f64>>,
    times: Vec<f64>,
    bounds: Vec<f64>,
    open: VecDeque<Open>,
}

impl<'a> Filter<'a> {
    pub fn new(params: &'a ModelParams, cfg: &'a FilterConfig) -> Result<Self> {
        if cfg.max_lookback < 1 {
            return Err(Error::Parameter("max_lookback must be >= 1".into()));
        }
        params.check()?;
        Ok(Self {
            params,
            cfg,
            kernels: params.states.iter().map(|s| s.gp.kernel()).collect(),
            ln_p: params.transition.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
            times: Vec::new(),
            bounds: Vec::new(),
            open: VecDeque::new(),
        })
    }

    pub fn n_epochs(&self) -> usize {
        self.times.len()
    }

    fn local_times(&self, start: usize) -> Vec<f64> {
        self.times[start..].iter().map(|t| (t - self.bounds[start]).max(0.0)).collect()
    }

    fn hawkes_term(&self, start: usize, state: usize, window_end: f64) -> Result<f64> {
        if !self.cfg.use_observation_process {
            return Ok(0.0);
        }
        let local = self.local_times(start);
        hawkes_loglik(&local, &self.params.states[state].hawkes, window_end - self.bounds[start])
    }

    /// Consumes the next event.
    pub fn push(&mut self, ev: &Event) -> Result<()> {
        let n = self.params.n_states;
        if ev.y.len() != self.params.n_channels() {
            return Err(Error::ShapeMismatch(format!(
                "event has {} channels, model has {}",
                ev.y.len(),
                self.params.n_channels()
            )));
        }
        if self.times.last().is_some_and(|&last| ev.t < last) {
            return Err(Error::Precondition("events must be pushed in time order".into()));
        }
        let m = self.times.len();
        let entry: Vec<f64> = if m == 0 {
            self.params.initial.iter().map(|p| p.ln()).collect()
        } else {
            // segments that ended between t_{m−1} and t_m
            let (t_prev, t_now) = (self.times[m - 1], ev.t);
            let mut ended = vec![f64::NEG_INFINITY; n];
            for i in self.params.transient_states() {
                let mut terms = Vec::with_capacity(self.open.len());
                for o in &self.open {
                    let Some(block) = &o.blocks[i] else { continue };
                    let b = self.bounds[o.start];
                    let dur = self.params.states[i].gamma.ln_interval(t_prev - b, t_now - b);
                    let boundary = 0.5 * (t_prev + t_now);
                    terms.push(o.entry[i] + dur + block.loglik() + self.hawkes_term(o.start, i, boundary)?);
                }
                ended[i] = log_sum_exp(&terms);
            }
            (0..n)
                .map(|j| {
                    let terms: Vec<f64> = self.params.transient_states().map(|i| ended[i] + self.ln_p[i][j]).collect();
                    log_sum_exp(&terms)
                })
                .collect()
        };
        self.bounds.push(if m == 0 { 0.0 } else { 0.5 * (self.times[m - 1] + ev.t) });
        self.times.push(ev.t);
        self.open.push_back(Open {
            start: m,
            blocks: entry.iter().map(|e| (*e > f64::NEG_INFINITY).then(GpBlock::new)).collect(),
            entry,
        });
        while self.open.front().is_some_and(|o| o.start + self.cfg.max_lookback <= m) {
            self.open.pop_front();
        }
        for o in self.open.iter_mut() {
            for (j, block) in o.blocks.iter_mut().enumerate() {
                if let Some(b) = block {
                    b.push(ev.t, &ev.y, &ev.mask, &self.params.states[j].gp, &self.kernels[j])?;
                }
            }
        }
        Ok(())
    }

    /// State posterior at time `t` (not before the last pushed event). With
    /// no events yet, the first segment is ongoing with no observations.
    pub fn posterior(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.params.n_states;
        if self.times.last().is_some_and(|&last| t < last) {
            return Err(Error::Precondition(format!("posterior requested at {t}, before the last event")));
        }
        let mut log_alpha = vec![f64::NEG_INFINITY; n];
        if self.times.is_empty() {
            for (j, la) in log_alpha.iter_mut().enumerate() {
                *la = self.params.initial[j].ln() + self.params.states[j].gamma.ln_sf(t);
            }
        } else {
            for (j, la) in log_alpha.iter_mut().enumerate() {
                let mut terms = Vec::with_capacity(self.open.len());
                for o in &self.open {
                    let Some(block) = &o.blocks[j] else { continue };
                    let b = self.bounds[o.start];
                    terms.push(
                        o.entry[j] + self.params.states[j].gamma.ln_sf(t - b) + block.loglik() + self.hawkes_term(o.start, j, t)?,
                    );
                }
                *la = log_sum_exp(&terms);
            }
        }
        let total = log_sum_exp(&log_alpha);
        if !total.is_finite() {
            return Err(Error::Numerical("every filter hypothesis has zero probability".into()));
        }
        let mut post: Vec<f64> = log_alpha.iter().map(|a| (a - total).exp()).collect();
        let s: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= s);
        Ok(post)
    }
}

/// Posterior over states at the time of the last event in `prefix`.
pub fn forward_filter(prefix: &[Event], params: &ModelParams, cfg: &FilterConfig) -> Result<Vec<f64>> {
    let last = prefix.last().ok_or_else(|| Error::Precondition("forward_filter needs a nonempty prefix".into()))?;
    let mut f = Filter::new(params, cfg)?;
    for ev in prefix {
        f.push(ev)?;
    }
    f.posterior(last.t)
}

pub fn risk_score(prefix: &[Event], params: &ModelParams, cfg: &FilterConfig) -> Result<f64> {
    let post = forward_filter(prefix, params, cfg)?;
    Ok(risk_from_posterior(&post, &absorption_prob(&params.transition)?))
}

/// Scores at every epoch (or at `cfg.time_grid`). The score at `t` uses only
/// events with `t_m <= t`.
pub fn score_episode(ep: &Episode, params: &ModelParams, cfg: &FilterConfig) -> Result<RiskTrace> {
    if ep.events.is_empty() {
        return Err(Error::EmptyEpisode(ep.id.clone()));
    }
    let absorption = absorption_prob(&params.transition)?;
    let mut f = Filter::new(params, cfg)?;
    let mut trace = RiskTrace { times: Vec::new(), scores: Vec::new(), posteriors: Vec::new() };
    let record = |f: &Filter<'_>, t: f64, trace: &mut RiskTrace| -> Result<()> {
        let post = f.posterior(t)?;
        trace.times.push(t);
        trace.scores.push(risk_from_posterior(&post, &absorption));
        trace.posteriors.push(post);
        Ok(())
    };
    match &cfg.time_grid {
        None => {
            for ev in &ep.events {
                f.push(ev)?;
                record(&f, ev.t, &mut trace)?;
            }
        }
        Some(grid) => {
            if grid.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Precondition("time_grid must be nondecreasing".into()));
            }
            let mut k = 0;
            for &t in grid {
                while k < ep.events.len() && ep.events[k].t <= t {
                    f.push(&ep.events[k])?;
                    k += 1;
                }
                record(&f, t, &mut trace)?;
            }
        }
    }
    Ok(trace)
}
