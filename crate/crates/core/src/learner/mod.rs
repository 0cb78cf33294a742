//! Offline learning in three steps: change-point segmentation, direct MLE
//! of the two absorbing states, then segment-level Baum-Welch over the
//! transient states with a fixed segmentation.

mod em;
mod init;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{jump_times, ChangePointConfig};
use crate::error::{Error, Result};
use crate::estimators::{GpFitConfig, HawkesSegment, MarkSegment, NelderMeadConfig};
use crate::model::{Episode, Label, ModelParams, StateParams};

pub use em::{baum_welch, e_step, EStep, EmResult};
pub use init::{fit_state, initialize, kmeans};

/// A stretch of one episode between two estimated jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Event times measured from `start`.
    pub local_times: Vec<f64>,
    pub marks: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn n_events(&self) -> usize {
        self.local_times.len()
    }

    pub fn marks(&self) -> MarkSegment<'_> {
        MarkSegment { times: &self.local_times, marks: &self.marks, masks: &self.masks }
    }

    pub fn hawkes(&self, weight: f64) -> HawkesSegment<'_> {
        HawkesSegment { times: &self.local_times, window_end: self.duration(), weight }
    }

    pub fn has_marks(&self) -> bool {
        self.masks.iter().any(|m| m.iter().any(|&b| b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedEpisode {
    pub id: String,
    /// Contiguous segments; the last one is the absorbing (response-time)
    /// segment and ends at the censoring time.
    pub segments: Vec<Segment>,
    pub label: Label,
}

impl SegmentedEpisode {
    pub fn absorbing_segment(&self) -> &Segment {
        self.segments.last().expect("segmented episodes are never empty")
    }

    pub fn transient_segments(&self) -> &[Segment] {
        &self.segments[..self.segments.len() - 1]
    }

    /// Response time `Ŝ_K = T_c − τ̂_K`.
    pub fn response_time(&self) -> f64 {
        self.absorbing_segment().duration()
    }
}

/// Cuts `ep` at `cuts` (sorted, strictly inside the episode). Events on a cut
/// go to the later segment.
pub fn cut_episode(ep: &Episode, cuts: &[f64]) -> Result<SegmentedEpisode> {
    let mut bounds = vec![0.0];
    for &c in cuts {
        if !(c > *bounds.last().unwrap() && c < ep.censor_time) {
            return Err(Error::Precondition(format!("cut {c} outside (previous cut, censor_time)")));
        }
        bounds.push(c);
    }
    bounds.push(ep.censor_time);
    let mut segments = Vec::with_capacity(bounds.len() - 1);
    let mut k = 0;
    for w in bounds.windows(2) {
        let (start, end) = (w[0], w[1]);
        let mut seg = Segment { start, end, local_times: Vec::new(), marks: Vec::new(), masks: Vec::new() };
        while k < ep.events.len() && (ep.events[k].t < end || end == ep.censor_time) {
            let e = &ep.events[k];
            seg.local_times.push((e.t - start).max(0.0));
            seg.marks.push(e.y.clone());
            seg.masks.push(e.mask.clone());
            k += 1;
        }
        segments.push(seg);
    }
    Ok(SegmentedEpisode { id: ep.id.clone(), segments, label: ep.label })
}

/// Step 1 for one episode: e-divisive jump times, then cuts.
pub fn segment_episode(ep: &Episode, cfg: &ChangePointConfig) -> Result<SegmentedEpisode> {
    let taus = jump_times(ep, cfg)?;
    let mut cuts: Vec<f64> = Vec::with_capacity(taus.len());
    for t in taus {
        if t > cuts.last().copied().unwrap_or(0.0) && t < ep.censor_time {
            cuts.push(t);
        }
    }
    cut_episode(ep, &cuts)
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub episodes: Vec<SegmentedEpisode>,
    /// Episodes that could not be segmented, with the reason.
    pub skipped: Vec<(String, Error)>,
}

pub fn segment_dataset(episodes: &[Episode], cfg: &ChangePointConfig) -> Segmentation {
    let results: Vec<Result<SegmentedEpisode>> = episodes.par_iter().map(|ep| segment_episode(ep, cfg)).collect();
    let mut out = Segmentation { episodes: Vec::new(), skipped: Vec::new() };
    for (ep, r) in episodes.iter().zip(results) {
        match r {
            Ok(s) => out.episodes.push(s),
            Err(e) => out.skipped.push((ep.id.clone(), e)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_states: usize,
    /// Maximum number of EM M-steps.
    pub em_iters: usize,
    /// Relative log-likelihood change that stops EM.
    pub loglik_tol: f64,
    pub seed: u64,
    pub changepoint: ChangePointConfig,
    pub hawkes: NelderMeadConfig,
    pub gp: GpFitConfig,
    /// Quasi-Newton iterations for each GP M-step.
    pub gp_em_steps: usize,
    pub kmeans_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_states: 4,
            em_iters: 100,
            loglik_tol: 1e-6,
            seed: 0,
            changepoint: ChangePointConfig::default(),
            hawkes: NelderMeadConfig::default(),
            gp: GpFitConfig::default(),
            gp_em_steps: 3,
            kmeans_restarts: 10,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_states < 3 {
            return Err(Error::Parameter(format!("n_states must be >= 3, got {}", self.n_states)));
        }
        if self.em_iters < 1 {
            return Err(Error::Parameter("em_iters must be >= 1".into()));
        }
        if !(self.loglik_tol >= 0.0) {
            return Err(Error::Parameter("loglik_tol must be >= 0".into()));
        }
        if self.kmeans_restarts < 1 {
            return Err(Error::Parameter("kmeans_restarts must be >= 1".into()));
        }
        self.changepoint.check()
    }
}

/// Step 2: direct MLE of the stable (from label-0 absorbing segments) and
/// deteriorating (label-1) absorbing states.
pub fn fit_absorbing(dataset: &[SegmentedEpisode], cfg: &TrainConfig) -> Result<(StateParams, StateParams)> {
    let class = |label: Label| -> Result<StateParams> {
        let segs: Vec<(&Segment, f64)> = dataset
            .iter()
            .filter(|d| d.label == label)
            .map(|d| (d.absorbing_segment(), 1.0))
            .collect();
        if segs.is_empty() {
            return Err(Error::EmptyClass(label.as_u8()));
        }
        fit_state(&segs, cfg, None)
    };
    Ok((class(Label::Stable)?, class(Label::Deteriorated)?))
}

/// `n_params · ln(n_obs) − 2 · loglik`.
pub fn bic(loglik: f64, n_params: usize, n_obs: f64) -> f64 {
    n_params as f64 * n_obs.max(1.0).ln() - 2.0 * loglik
}

/// Free parameters of an `N`-state model with `Q` channels: `(N−2)²` for the
/// transient rows of P (zero diagonal, rows sum to 1), `N − 1` for π, and per
/// state 2 (Gamma) + 3 (Hawkes) + `2 + Q + Q(Q+1)/2` (GP: ν, ℓ, mean, Σ).
pub fn n_params(n_states: usize, n_channels: usize) -> usize {
    let per_state = 2 + 3 + 2 + n_channels + n_channels * (n_channels + 1) / 2;
    (n_states - 2) * (n_states - 2) + (n_states - 1) + n_states * per_state
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Observed-data log-likelihood before each M-step and at the end.
    pub loglik_trace: Vec<f64>,
    /// Final log-likelihood; `−∞` when some episode has no admissible state
    /// sequence under `params`.
    pub loglik: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub skipped: Vec<(String, Error)>,
    pub warnings: Vec<String>,
}

/// Runs segmentation, absorbing-state MLE and Baum-Welch.
pub fn fit(episodes: &[Episode], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.check()?;
    for label in [Label::Stable, Label::Deteriorated] {
        if !episodes.iter().any(|e| e.label == label) {
            return Err(Error::EmptyClass(label.as_u8()));
        }
    }
    let seg = segment_dataset(episodes, &cfg.changepoint);
    fit_segmented(&seg.episodes, cfg).map(|mut r| {
        r.skipped = seg.skipped;
        r
    })
}

/// Steps 2 and 3 on an already segmented dataset.
pub fn fit_segmented(dataset: &[SegmentedEpisode], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.check()?;
    let (stable, deteriorated) = fit_absorbing(dataset, cfg)?;
    let init = initialize(dataset, &stable, &deteriorated, cfg)?;
    let em = baum_welch(dataset, &init, cfg)?;
    let n_obs: usize = dataset.iter().flat_map(|d| &d.segments).map(Segment::n_events).sum();
    let loglik = if em.infeasible.is_empty() { *em.loglik_trace.last().unwrap() } else { f64::NEG_INFINITY };
    let mut warnings = em.warnings;
    if !em.infeasible.is_empty() {
        warnings.push(format!(
            "{} episode(s) have no admissible state sequence with {} states",
            em.infeasible.len(),
            cfg.n_states
        ));
    }
    em.params.check()?;
    Ok(FitResult {
        bic: bic(loglik, n_params(cfg.n_states, em.params.n_channels()), n_obs as f64),
        params: em.params,
        loglik_trace: em.loglik_trace,
        loglik,
        n_obs,
        converged: em.converged,
        skipped: Vec::new(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Event;

    fn episode(times: &[f64], censor: f64, label: Label) -> Episode {
        Episode {
            id: "e".into(),
            events: times.iter().map(|&t| Event::full(t, vec![t])).collect(),
            censor_time: censor,
            label,
        }
    }

    #[test]
    fn no_cuts_gives_single_absorbing_segment() {
        let ep = episode(&[1.0, 2.0], 5.0, Label::Stable);
        let s = cut_episode(&ep, &[]).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert!(s.transient_segments().is_empty());
        assert_eq!(s.absorbing_segment().duration(), 5.0);
        assert_eq!(s.absorbing_segment().local_times, vec![1.0, 2.0]);
    }

    #[test]
    fn one_cut() {
        let ep = episode(&[3.0, 9.0, 10.0, 24.0], 25.0, Label::Deteriorated);
        let s = cut_episode(&ep, &[10.0]).unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_eq!((s.segments[0].start, s.segments[0].end), (0.0, 10.0));
        assert_eq!(s.segments[0].local_times, vec![3.0, 9.0]);
        // the event on the cut belongs to the later segment
        assert_eq!(s.segments[1].local_times, vec![0.0, 14.0]);
        assert_eq!(s.response_time(), 15.0);
        assert!(cut_episode(&ep, &[30.0]).is_err());
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic(0.0, 0, 1.0), 0.0);
        assert!((bic(-100.0, 10, std::f64::consts::E.powi(2)) - 220.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_count() {
        // N = 4, Q = 2: 4 + 3 + 4 * (5 + 2 + 2 + 3)
        assert_eq!(n_params(4, 2), 4 + 3 + 4 * 12);
        assert_eq!(n_params(3, 1), 1 + 2 + 3 * 9);
    }

    #[test]
    fn empty_class_is_named() {
        let ep = episode(&[1.0, 2.0, 3.0], 5.0, Label::Stable);
        let d = vec![cut_episode(&ep, &[]).unwrap()];
        assert_eq!(fit_absorbing(&d, &TrainConfig::default()).unwrap_err(), Error::EmptyClass(1));
        assert!(matches!(fit(&[ep], &TrainConfig::default()), Err(Error::EmptyClass(1))));
    }
}
