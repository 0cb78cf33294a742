//! E-divisive change-point detection on the augmented observable sequence
//! `(y_m, Δt_m)`.
//!
//! The divergence between samples `A` (size n) and `B` (size m) is
//!
//! ```text
//! Q̂ = nm/(n+m) · [ 2/(nm) ΣΣ‖a_i − b_j‖^α − C(n,2)⁻¹ Σ_{i<k} ‖a_i − a_k‖^α − C(m,2)⁻¹ Σ_{j<l} ‖b_j − b_l‖^α ]
//! ```
//!
//! Segments are bisected greedily at the split maximizing `Q̂`; each split is
//! kept only if a within-segment permutation test rejects at the configured
//! significance.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Episode;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangePointConfig {
    /// Exponent on the Euclidean distance, in `(0, 2]`.
    pub moment_index: f64,
    pub significance: f64,
    pub permutations: usize,
    pub min_segment: usize,
    pub standardize: bool,
    /// Length of the contiguous blocks shuffled by the permutation test.
    /// `1` permutes single observations; longer blocks keep short-range
    /// serial dependence intact under the null.
    pub block_length: usize,
    /// Seed for the permutation shuffles.
    pub seed: u64,
}

impl Default for ChangePointConfig {
    fn default() -> Self {
        Self {
            moment_index: 1.0,
            significance: 0.05,
            permutations: 199,
            min_segment: 4,
            standardize: true,
            block_length: 1,
            seed: 0,
        }
    }
}

impl ChangePointConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.moment_index > 0.0 && self.moment_index <= 2.0) {
            return Err(Error::Parameter(format!("moment_index must be in (0, 2], got {}", self.moment_index)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Parameter(format!("significance must be in (0, 1), got {}", self.significance)));
        }
        if self.min_segment < 2 {
            return Err(Error::Parameter("min_segment must be >= 2".into()));
        }
        if self.block_length < 1 {
            return Err(Error::Parameter("block_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds the `(Q+1)`-dimensional augmented sequence. Missing channels are
/// carried forward; a channel missing at the first epoch starts from its
/// median over the episode.
pub fn augment(ep: &Episode) -> Result<Vec<Vec<f64>>> {
    if ep.events.is_empty() {
        return Err(Error::EmptyEpisode(ep.id.clone()));
    }
    let q = ep.events[0].y.len();
    let mut last: Vec<f64> = (0..q)
        .map(|r| {
            let mut seen: Vec<f64> = ep.events.iter().filter(|e| e.mask[r]).map(|e| e.y[r]).collect();
            median(&mut seen).unwrap_or(0.0)
        })
        .collect();
    let mut prev_t = ep.events[0].t;
    Ok(ep
        .events
        .iter()
        .map(|e| {
            for r in 0..q {
                if e.mask[r] {
                    last[r] = e.y[r];
                }
            }
            let mut row = last.clone();
            row.push(e.t - prev_t);
            prev_t = e.t;
            row
        })
        .collect())
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-dimension z-scores; constant dimensions become zero.
pub fn standardize(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let d = series[0].len();
    let mut out = series.to_vec();
    for c in 0..d {
        let mean = series.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = series.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let spread = series.iter().map(|r| r[c].abs()).fold(0.0, f64::max);
        for row in out.iter_mut() {
            row[c] = if sd > 1e-12 * spread.max(f64::MIN_POSITIVE) { (row[c] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn distance(a: &[f64], b: &[f64], alpha: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    if alpha == 2.0 {
        sq
    } else {
        sq.sqrt().powf(alpha)
    }
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

fn statistic(n: usize, m: usize, between: f64, within_a: f64, within_b: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let wa = if n > 1 { within_a / pairs(n) } else { 0.0 };
    let wb = if m > 1 { within_b / pairs(m) } else { 0.0 };
    nf * mf / (nf + mf) * (2.0 * between / (nf * mf) - wa - wb)
}

/// Energy divergence `Q̂` between two samples.
pub fn e_divergence(a: &[Vec<f64>], b: &[Vec<f64>], moment_index: f64) -> f64 {
    let between: f64 = a.iter().flat_map(|x| b.iter().map(move |y| distance(x, y, moment_index))).sum();
    let within = |s: &[Vec<f64>]| -> f64 {
        (0..s.len())
            .flat_map(|i| (i + 1..s.len()).map(move |k| (i, k)))
            .map(|(i, k)| distance(&s[i], &s[k], moment_index))
            .sum()
    };
    statistic(a.len(), b.len(), between, within(a), within(b))
}

/// Best split of a segment given its pairwise distances `d(i, j)`.
/// Returns `(k, Q̂)` with `k` the first index of the right part.
fn best_split(n: usize, min_segment: usize, d: impl Fn(usize, usize) -> f64) -> Option<(usize, f64)> {
    if n < 2 * min_segment {
        return None;
    }
    // within_left[k] = Σ_{i<j<k} d, within_right[k] = Σ_{k<=i<j<n} d
    let mut within_left = vec![0.0; n + 1];
    for k in 1..=n {
        let col: f64 = (0..k - 1).map(|i| d(i, k - 1)).sum();
        within_left[k] = within_left[k - 1] + col;
    }
    let mut within_right = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let row: f64 = (k + 1..n).map(|j| d(k, j)).sum();
        within_right[k] = within_right[k + 1] + row;
    }
    let total = within_left[n];
    let mut best: Option<(usize, f64)> = None;
    for k in min_segment..=n - min_segment {
        let between = total - within_left[k] - within_right[k];
        let q = statistic(k, n - k, between, within_left[k], within_right[k]);
        if best.is_none_or(|(_, bq)| q > bq) {
            best = Some((k, q));
        }
    }
    best
}

struct Candidate {
    start: usize,
    end: usize,
    split: Option<(usize, f64)>,
}

/// Hierarchical divisive estimation. Returns sorted change indices, each the
/// first point of a new segment.
pub fn e_divisive(series: &[Vec<f64>], cfg: &ChangePointConfig) -> Vec<usize> {
    let n = series.len();
    if n < 2 * cfg.min_segment {
        return Vec::new();
    }
    let alpha = cfg.moment_index;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(&series[i], &series[j], alpha);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let d = |i: usize, j: usize| dist[i * n + j];
    let candidate = |start: usize, end: usize| Candidate {
        start,
        end,
        split: best_split(end - start, cfg.min_segment, |i, j| d(start + i, start + j)),
    };

    let mut segments = vec![candidate(0, n)];
    let mut changes = Vec::new();
    for round in 0u64.. {
        let Some((pos, &Candidate { start, end, split: Some((k, q)) })) = segments
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split.is_some())
            .max_by(|a, b| a.1.split.unwrap().1.total_cmp(&b.1.split.unwrap().1).then(b.0.cmp(&a.0)))
        else {
            break;
        };
        let len = end - start;
        let mut rng = stream(cfg.seed, round, 0);
        let b = cfg.block_length.max(1);
        let mut blocks: Vec<usize> = (0..len.div_ceil(b)).collect();
        let mut perm: Vec<usize> = Vec::with_capacity(len);
        let mut exceed = 0usize;
        for _ in 0..cfg.permutations {
            blocks.shuffle(&mut rng);
            perm.clear();
            perm.extend(blocks.iter().flat_map(|&k| start + k * b..(start + (k + 1) * b).min(end)));
            let (_, qp) = best_split(len, cfg.min_segment, |i, j| d(perm[i], perm[j])).expect("segment long enough");
            if qp >= q {
                exceed += 1;
            }
        }
        let p_value = (1 + exceed) as f64 / (1 + cfg.permutations) as f64;
        if p_value > cfg.significance {
            break;
        }
        changes.push(start + k);
        segments.splice(pos..=pos, [candidate(start, start + k), candidate(start + k, end)]);
    }
    changes.sort_unstable();
    changes
}

/// Estimated jump times (hours): change index `m` maps to the midpoint
/// `(t_{m-1} + t_m) / 2`. An empty result means the whole episode is one
/// segment.
pub fn jump_times(ep: &Episode, cfg: &ChangePointConfig) -> Result<Vec<f64>> {
    cfg.check()?;
    let aug = augment(ep)?;
    let series = if cfg.standardize { standardize(&aug) } else { aug };
    Ok(e_divisive(&series, cfg)
        .into_iter()
        .map(|m| 0.5 * (ep.events[m - 1].t + ep.events[m].t))
        .collect())
}
