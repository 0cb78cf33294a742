//! Episode simulation: latent semi-Markov path, observation times by
//! thinning, marks by joint GP draws at the realized times.
//!
//! Each episode and each of its segments draw from their own random stream
//! (see [`crate::rng`]), so sampling is reproducible under any parallel
//! schedule.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::model::{build_covariance, Episode, Event, GammaParams, GpParams, HawkesParams, Label, ModelParams, StatePath};
use crate::rng::{open_unit, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub seed: u64,
    pub max_jumps: usize,
    pub max_events_per_segment: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { seed: 0, max_jumps: 200, max_events_per_segment: 10_000 }
    }
}

impl SampleConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if self.max_jumps == 0 || self.max_events_per_segment == 0 {
            return Err(Error::Parameter("sampler caps must be >= 1".into()));
        }
        Ok(())
    }
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last state with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn draw_gamma<R: Rng + ?Sized>(g: &GammaParams, rng: &mut R) -> Result<f64> {
    let dist = Gamma::new(g.shape, g.scale).map_err(|e| Error::Parameter(format!("gamma: {e}")))?;
    Ok(dist.sample(rng))
}

/// Draws states from `π` and the transition kernel until absorption, with a
/// Gamma sojourn per state. The absorbing state's sojourn is its response
/// time.
pub fn sample_state_path<R: Rng + ?Sized>(params: &ModelParams, max_jumps: usize, rng: &mut R) -> Result<StatePath> {
    let mut states = Vec::new();
    let mut sojourns = Vec::new();
    let mut jump_times = Vec::new();
    let mut state = categorical(&params.initial, rng);
    let mut tau = 0.0;
    loop {
        if states.len() >= max_jumps {
            return Err(Error::RunawayPath { max_jumps });
        }
        let s = draw_gamma(&params.states[state].gamma, rng)?;
        states.push(state);
        sojourns.push(s);
        jump_times.push(tau);
        if params.is_absorbing(state) {
            break;
        }
        tau += s;
        state = categorical(&params.transition[state], rng);
    }
    Ok(StatePath { states, sojourns, jump_times })
}

/// Modified thinning on `[t_start, t_end)` with empty history at `t_start`.
///
/// The bound `λ̄ = λ(s⁺)` is refreshed before every candidate; it dominates
/// `λ` until the next candidate because the intensity only decays between
/// events.
pub fn thin<R: Rng + ?Sized>(
    hp: &HawkesParams,
    t_start: f64,
    t_end: f64,
    max_events: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(t_start <= t_end) {
        return Err(Error::Precondition(format!("thin window [{t_start}, {t_end}) is reversed")));
    }
    if hp.branching_ratio() >= 1.0 {
        return Err(Error::Stationarity { ratio: hp.branching_ratio() });
    }
    let horizon = t_end - t_start;
    let mut s = 0.0;
    // Σ exp(-β (s - t_k)) over accepted t_k <= s
    let mut excite = 0.0;
    let mut out: Vec<f64> = Vec::new();
    while s < horizon {
        let lam_bar = hp.base_rate + hp.excitation * excite;
        let w = -open_unit(rng).ln() / lam_bar;
        s += w;
        excite *= (-hp.decay * w).exp();
        let lam_s = hp.base_rate + hp.excitation * excite;
        debug_assert!(lam_s <= lam_bar * (1.0 + 1e-12), "thinning bound violated: {lam_s} > {lam_bar}");
        let d: f64 = rng.random();
        if d * lam_bar <= lam_s {
            out.push(s);
            excite += 1.0;
            if out.len() > max_events {
                return Err(Error::Explosion { max_events });
            }
        }
    }
    if out.last().is_some_and(|&t| t >= horizon) {
        out.pop();
    }
    Ok(out.into_iter().map(|t| t_start + t).collect())
}

/// One joint draw of the mark vectors at `times` (all channels present).
pub fn sample_marks<R: Rng + ?Sized>(times: &[f64], gp: &GpParams, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let q = gp.n_channels();
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let masks = vec![vec![true; q]; times.len()];
    let cov = build_covariance(times, &masks, gp)?;
    let factor = psd_factor(&cov)?;
    let z = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let draw = factor * z;
    Ok((0..times.len())
        .map(|m| (0..q).map(|r| gp.mean[r] + draw[m * q + r]).collect())
        .collect())
}

/// Samples the episode with index `index` under `cfg.seed`.
///
/// Returns the observable episode and the latent path that generated it.
pub fn sample_episode(params: &ModelParams, cfg: &SampleConfig, index: u64) -> Result<(Episode, StatePath)> {
    cfg.check()?;
    params.check()?;
    sample_episode_unchecked(params, cfg, index)
}

fn sample_episode_unchecked(params: &ModelParams, cfg: &SampleConfig, index: u64) -> Result<(Episode, StatePath)> {
    let mut path_rng = stream(cfg.seed, index, 0);
    let path = sample_state_path(params, cfg.max_jumps, &mut path_rng)?;
    let mut events = Vec::new();
    for (n, (&state, (&tau, &soj))) in path
        .states
        .iter()
        .zip(path.jump_times.iter().zip(&path.sojourns))
        .enumerate()
    {
        let sp = &params.states[state];
        let mut thin_rng = stream(cfg.seed, index, 1 + 2 * n as u64);
        let times = thin(&sp.hawkes, tau, tau + soj, cfg.max_events_per_segment, &mut thin_rng)?;
        let mut mark_rng = stream(cfg.seed, index, 2 + 2 * n as u64);
        let marks = sample_marks(&times, &sp.gp, &mut mark_rng)?;
        events.extend(times.into_iter().zip(marks).map(|(t, y)| Event::full(t, y)));
    }
    let label = if path.final_state() == params.deteriorated() {
        Label::Deteriorated
    } else {
        Label::Stable
    };
    let episode = Episode {
        id: format!("ep{index:06}"),
        events,
        censor_time: path.end_time(),
        label,
    };
    Ok((episode, path))
}

/// Samples episodes `0..n` in parallel; output order is by index.
pub fn sample_cohort(params: &ModelParams, n: usize, cfg: &SampleConfig) -> Result<Vec<(Episode, StatePath)>> {
    cfg.check()?;
    params.check()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_episode_unchecked(params, cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_intensity;
    use crate::reference::reference_model;

    fn deterministic_model(p21: f64, p24: f64, p23: f64) -> ModelParams {
        let mut m = reference_model();
        m.initial = vec![0.0, 1.0, 0.0, 0.0];
        m.transition[1] = vec![p21, 0.0, p23, p24];
        m
    }

    #[test]
    fn deterministic_kernel_path() {
        let m = deterministic_model(0.0, 1.0, 0.0);
        for seed in 0..20 {
            let p = sample_state_path(&m, 200, &mut stream(seed, 0, 0)).unwrap();
            assert_eq!(p.states, vec![1, 3]);
        }
    }

    #[test]
    fn coin_flip_absorption() {
        let m = deterministic_model(0.5, 0.5, 0.0);
        let mut rng = stream(7, 0, 0);
        let n = 10_000;
        let det = (0..n)
            .filter(|_| sample_state_path(&m, 200, &mut rng).unwrap().final_state() == 3)
            .count();
        let frac = det as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn sojourn_mean_matches_gamma() {
        let m = deterministic_model(0.5, 0.5, 0.0);
        let mut rng = stream(8, 0, 0);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| sample_state_path(&m, 200, &mut rng).unwrap().sojourns[0])
            .sum::<f64>()
            / n as f64;
        let target = m.states[1].gamma.mean();
        assert!((mean / target - 1.0).abs() < 0.03, "{mean} vs {target}");
    }

    #[test]
    fn runaway_path_is_detected() {
        let mut m = reference_model();
        m.transition[1] = vec![0.001, 0.0, 0.999, 0.0];
        m.transition[2] = vec![0.0, 0.999, 0.0, 0.001];
        let err = sample_state_path(&m, 5, &mut stream(1, 0, 0)).unwrap_err();
        assert_eq!(err, Error::RunawayPath { max_jumps: 5 });
    }

    #[test]
    fn empty_window_has_no_events() {
        let hp = HawkesParams::new(1.0, 0.5, 1.0);
        assert!(thin(&hp, 3.0, 3.0, 100, &mut stream(0, 0, 0)).unwrap().is_empty());
    }

    #[test]
    fn poisson_counts() {
        let hp = HawkesParams::new(1.0, 0.0, 3.0);
        let mut rng = stream(11, 0, 0);
        let counts: Vec<f64> = (0..1000)
            .map(|_| thin(&hp, 0.0, 100.0, 10_000, &mut rng).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / 1000.0;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((mean / 100.0 - 1.0).abs() < 0.05, "{mean}");
        assert!((var / 100.0 - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn hawkes_long_run_rate() {
        let hp = HawkesParams::new(0.5, 0.8, 2.0);
        let ev = thin(&hp, 0.0, 20_000.0, 100_000, &mut stream(12, 0, 0)).unwrap();
        let rate = ev.len() as f64 / 20_000.0;
        let target = expected_intensity(&hp).unwrap();
        assert!((rate / target - 1.0).abs() < 0.05, "{rate} vs {target}");
        assert!(ev.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn explosion_guard() {
        let hp = HawkesParams::new(50.0, 0.0, 1.0);
        assert_eq!(
            thin(&hp, 0.0, 100.0, 10, &mut stream(0, 0, 0)).unwrap_err(),
            Error::Explosion { max_events: 10 }
        );
    }

    #[test]
    fn zero_variance_marks_equal_mean() {
        let gp = GpParams {
            mean: vec![3.0],
            smoothness: 1,
            length_scale: 1.0,
            channel_cov: vec![vec![0.0]],
            jitter: Some(0.0),
        };
        let y = sample_marks(&[1.0], &gp, &mut stream(0, 0, 0)).unwrap();
        assert_eq!(y, vec![vec![3.0]]);
    }

    #[test]
    fn mark_variance_and_correlation() {
        let gp = GpParams {
            mean: vec![0.0],
            smoothness: 1,
            length_scale: 1.5,
            channel_cov: vec![vec![4.0]],
            jitter: Some(0.0),
        };
        let mut rng = stream(3, 0, 0);
        let n = 10_000;
        let draws: Vec<Vec<Vec<f64>>> = (0..n).map(|_| sample_marks(&[0.0, 1.5], &gp, &mut rng).unwrap()).collect();
        let var0 = draws.iter().map(|d| d[0][0].powi(2)).sum::<f64>() / n as f64;
        assert!((var0 / 4.0 - 1.0).abs() < 0.05, "{var0}");
        let var1 = draws.iter().map(|d| d[1][0].powi(2)).sum::<f64>() / n as f64;
        let cov = draws.iter().map(|d| d[0][0] * d[1][0]).sum::<f64>() / n as f64;
        let corr = cov / (var0 * var1).sqrt();
        assert!((corr - (-1f64).exp()).abs() < 0.02, "{corr}");
    }

    #[test]
    fn episodes_are_consistent_with_paths() {
        let m = reference_model();
        let cfg = SampleConfig::with_seed(5);
        for (ep, path) in sample_cohort(&m, 200, &cfg).unwrap() {
            ep.validate().unwrap();
            assert!(ep.events.iter().all(|e| e.t >= 0.0 && e.t < ep.censor_time));
            assert_eq!(ep.label == Label::Deteriorated, path.final_state() == 3);
            assert!(!m.is_absorbing(path.states[0]) || path.states.len() == 1);
            for w in path.jump_times.windows(2).zip(&path.sojourns) {
                assert!((w.0[1] - w.0[0] - w.1).abs() < 1e-9);
            }
            for e in &ep.events {
                let seg = path.segment_at(e.t);
                assert!(e.t >= path.jump_times[seg]);
            }
        }
    }

    #[test]
    fn two_segment_path_events_are_ordered() {
        let m = deterministic_model(0.0, 1.0, 0.0);
        let (ep, path) = sample_episode(&m, &SampleConfig::with_seed(2), 0).unwrap();
        assert_eq!(path.states.len(), 2);
        assert!(ep.events.windows(2).all(|w| w[0].t < w[1].t));
        assert!(ep.events.iter().all(|e| e.t < ep.censor_time));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = reference_model();
        let cfg = SampleConfig::with_seed(99);
        let a: Vec<String> = sample_cohort(&m, 20, &cfg).unwrap().iter().map(|(e, _)| e.to_json_line()).collect();
        let b: Vec<String> = (0..20).map(|i| sample_episode(&m, &cfg, i).unwrap().0.to_json_line()).collect();
        assert_eq!(a, b);
    }
}
