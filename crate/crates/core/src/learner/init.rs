//! Direct (weighted) per-state MLE and the k-means seeding of EM.

use rand::Rng;

use super::{Segment, SegmentedEpisode, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_gamma_or_capped, fit_gp, fit_hawkes, initial_hawkes_guess, GpFitConfig, HawkesSegment, WeightedMarks,
};
use crate::model::{GammaParams, GpParams, HawkesParams, Label, ModelParams, StateParams};
use crate::rng::stream;

/// Weighted channel means and variances over all observed marks.
fn mark_moments(segs: &[(&Segment, f64)], q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sw = vec![0.0; q];
    let mut s1 = vec![0.0; q];
    let mut s2 = vec![0.0; q];
    for (seg, w) in segs {
        for (y, m) in seg.marks.iter().zip(&seg.masks) {
            for c in 0..q {
                if m[c] {
                    sw[c] += w;
                    s1[c] += w * y[c];
                    s2[c] += w * y[c] * y[c];
                }
            }
        }
    }
    let mean: Vec<f64> = (0..q).map(|c| if sw[c] > 0.0 { s1[c] / sw[c] } else { 0.0 }).collect();
    let var = (0..q)
        .map(|c| if sw[c] > 0.0 { (s2[c] / sw[c] - mean[c] * mean[c]).max(1e-6) } else { 1.0 })
        .collect();
    (mean, var)
}

fn gp_start(segs: &[(&Segment, f64)], q: usize) -> GpParams {
    let (mean, var) = mark_moments(segs, q);
    let (mut gaps, mut n) = (0.0, 0.0);
    for (seg, _) in segs {
        for w in seg.local_times.windows(2) {
            gaps += w[1] - w[0];
            n += 1.0;
        }
    }
    let length_scale = if n > 0.0 { (3.0 * gaps / n).clamp(0.1, 100.0) } else { 1.0 };
    GpParams {
        mean,
        smoothness: 1,
        length_scale,
        channel_cov: (0..q).map(|r| (0..q).map(|c| if r == c { var[r] } else { 0.0 }).collect()).collect(),
        jitter: None,
    }
}

/// Weighted MLE of one state's Gamma, Hawkes and GP parameters from whole
/// segments. Components without enough data fall back to moment estimates
/// (exponential durations, Poisson rate, sample mean/variance).
///
/// With `init`, the GP keeps its smoothness and the Hawkes search starts
/// there; otherwise the smoothness grid of `cfg.gp` is searched.
pub fn fit_state(segs: &[(&Segment, f64)], cfg: &TrainConfig, init: Option<&StateParams>) -> Result<StateParams> {
    let q = segs
        .iter()
        .find_map(|(s, _)| s.masks.first().map(Vec::len))
        .or_else(|| init.map(|p| p.gp.n_channels()))
        .ok_or_else(|| Error::InsufficientData("no marks to determine the channel count".into()))?;
    let total: f64 = segs.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::InsufficientData("state has zero total weight".into()));
    }

    let durations: Vec<f64> = segs.iter().map(|(s, _)| s.duration()).collect();
    let weights: Vec<f64> = segs.iter().map(|(_, w)| *w).collect();
    let gamma = match fit_gamma_or_capped(&durations, Some(&weights)) {
        Ok(g) => g,
        Err(Error::InsufficientData(_)) => {
            let mean = durations.iter().zip(&weights).map(|(d, w)| d * w).sum::<f64>() / total;
            GammaParams::new(1.0, mean)
        }
        Err(e) => return Err(e),
    };

    let hsegs: Vec<HawkesSegment<'_>> = segs.iter().map(|(s, w)| s.hawkes(*w)).collect();
    let start = init.map_or_else(|| initial_hawkes_guess(&hsegs), |p| p.hawkes);
    let hawkes = match fit_hawkes(&hsegs, &start, &cfg.hawkes) {
        Ok(h) => h,
        Err(Error::InsufficientData(_)) => {
            let events: f64 = segs.iter().map(|(s, w)| w * s.n_events() as f64).sum();
            let exposure: f64 = segs.iter().map(|(s, w)| w * s.duration()).sum();
            HawkesParams::new((events / exposure).max(1e-6), 0.0, 1.0)
        }
        Err(e) => return Err(e),
    };

    let msegs: Vec<WeightedMarks<'_>> = segs
        .iter()
        .filter(|(s, _)| s.has_marks())
        .map(|(s, w)| WeightedMarks { segment: s.marks(), weight: *w })
        .collect();
    let gp_init = match init {
        Some(p) => p.gp.clone(),
        None => gp_start(segs, q),
    };
    let gp_cfg = match init {
        Some(p) => GpFitConfig { smoothness_grid: vec![p.gp.smoothness], ..cfg.gp.clone() },
        None => cfg.gp.clone(),
    };
    let gp = match fit_gp(&msegs, &gp_init, &gp_cfg) {
        Ok(g) => g,
        Err(Error::InsufficientData(_)) => gp_init,
        Err(e) => return Err(e),
    };
    Ok(StateParams { gamma, hawkes, gp })
}

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by
/// inertia. Returns cluster assignments.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientData(format!("k-means with k = {k} on {} points", points.len())));
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = stream(seed, u64::MAX, r as u64);
        let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                d.iter().position(|&x| {
                    u -= x;
                    u <= 0.0
                })
                .unwrap_or(points.len() - 1)
            } else {
                rng.random_range(0..points.len())
            };
            centers.push(points[next].clone());
        }
        let mut assign = vec![0; points.len()];
        for _ in 0..300 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let j = (0..k).min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b]))).unwrap();
                if assign[i] != j {
                    assign[i] = j;
                    changed = true;
                }
            }
            for (j, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (d, c) in center.iter_mut().enumerate() {
                    *c = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| dist2(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.unwrap().1)
}

/// `(ln duration, mean observed marks, event rate)`, z-scored per column.
fn segment_features(segs: &[&Segment], q: usize) -> Vec<Vec<f64>> {
    let (global_mean, _) = mark_moments(&segs.iter().map(|s| (*s, 1.0)).collect::<Vec<_>>(), q);
    let mut rows: Vec<Vec<f64>> = segs
        .iter()
        .map(|s| {
            let (m, _) = mark_moments(&[(*s, 1.0)], q);
            let mut row = vec![s.duration().ln()];
            for c in 0..q {
                let observed = s.masks.iter().any(|mask| mask[c]);
                row.push(if observed { m[c] } else { global_mean[c] });
            }
            row.push(s.n_events() as f64 / s.duration());
            row
        })
        .collect();
    let dims = q + 2;
    for d in 0..dims {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in rows.iter_mut() {
            r[d] = if sd > 0.0 { (r[d] - mean) / sd } else { 0.0 };
        }
    }
    rows
}

/// EM starting point: absorbing states from Step 2, transient states from
/// per-cluster MLE after k-means on transient segments, and π/P from
/// smoothed cluster-label counts. Clusters are ordered by their mean first
/// mark channel.
pub fn initialize(
    dataset: &[SegmentedEpisode],
    stable: &StateParams,
    deteriorated: &StateParams,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let n = cfg.n_states;
    let k = n - 2;
    let q = stable.gp.n_channels();
    let segs: Vec<&Segment> = dataset.iter().flat_map(|d| d.transient_segments()).collect();
    if segs.is_empty() {
        return Err(Error::InsufficientData("no transient segments to fit".into()));
    }
    let raw = kmeans(&segment_features(&segs, q), k, cfg.kmeans_restarts, cfg.seed)?;

    let mut order: Vec<(f64, usize)> = (0..k)
        .map(|c| {
            let members: Vec<(&Segment, f64)> = segs.iter().zip(&raw).filter(|(_, &a)| a == c).map(|(s, _)| (*s, 1.0)).collect();
            (mark_moments(&members, q).0.first().copied().unwrap_or(0.0), c)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut relabel = vec![0; k];
    for (new, &(_, old)) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assign: Vec<usize> = raw.iter().map(|&a| 1 + relabel[a]).collect();

    let mut states = vec![stable.clone()];
    for state in 1..=k {
        let members: Vec<(&Segment, f64)> =
            segs.iter().zip(&assign).filter(|(_, &a)| a == state).map(|(s, _)| (*s, 1.0)).collect();
        states.push(fit_state(&members, cfg, None)?);
    }
    states.push(deteriorated.clone());

    // add-one smoothing over admissible transitions
    let mut counts = vec![vec![0.0; n]; n];
    let mut first = vec![0.0; n];
    let mut idx = 0;
    for d in dataset {
        let j = d.transient_segments().len();
        let absorbing = if d.label == Label::Stable { 0 } else { n - 1 };
        if j == 0 {
            first[absorbing] += 1.0;
            continue;
        }
        let labels = &assign[idx..idx + j];
        idx += j;
        first[labels[0]] += 1.0;
        for w in labels.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        counts[labels[j - 1]][absorbing] += 1.0;
    }
    let mut transition = vec![vec![0.0; n]; n];
    transition[0][0] = 1.0;
    transition[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        let row: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { counts[i][j] + 1.0 }).collect();
        let s: f64 = row.iter().sum();
        transition[i] = row.iter().map(|v| v / s).collect();
    }
    let initial_raw: Vec<f64> = (0..n).map(|i| first[i] + if (1..n - 1).contains(&i) { 1.0 } else { 0.0 }).collect();
    let s: f64 = initial_raw.iter().sum();
    let initial = initial_raw.iter().map(|v| v / s).collect();
    let params = ModelParams { n_states: n, transition, initial, states };
    params.check()?;
    Ok(params)
}
