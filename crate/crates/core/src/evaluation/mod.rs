//! Episode-level discrimination metrics, alarm lead times, empirical
//! sampling-rate curves with a Welch test, and the time-rescaling KS test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Episode, Label};
use crate::risk::RiskTrace;

/// How a risk trace is reduced to one episode score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// An alarm fires if the score ever crosses the threshold.
    Max,
    Final,
    /// Last score at or before the given time (first score if none).
    AtTime(f64),
}

pub fn aggregate(trace: &RiskTrace, how: Aggregation) -> Option<f64> {
    match how {
        Aggregation::Max => trace.scores.iter().copied().reduce(f64::max),
        Aggregation::Final => trace.scores.last().copied(),
        Aggregation::AtTime(t) => {
            let k = trace.times.partition_point(|&x| x <= t);
            trace.scores.get(k.saturating_sub(1)).copied()
        }
    }
}

fn check_classes(scored: &[(f64, Label)]) -> Result<(usize, usize)> {
    let pos = scored.iter().filter(|(_, l)| l.is_positive()).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("needs both labels ({pos} positive, {neg} negative)")));
    }
    if let Some((s, _)) = scored.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Precondition(format!("score {s} is not a number")));
    }
    Ok((pos, neg))
}

/// Average precision: `Σ_k (R_k − R_{k−1}) P_k` over distinct score
/// thresholds in decreasing order (tied scores enter together).
pub fn pr_auc(scored: &[(f64, Label)]) -> Result<f64> {
    let (pos, _) = check_classes(scored)?;
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < sorted.len() {
        let s = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == s {
            if sorted[k].1.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mann-Whitney form: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from midranks.
pub fn roc_auc(scored: &[(f64, Label)]) -> Result<f64> {
    let (pos, neg) = check_classes(scored)?;
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let mut e = k;
        while e < sorted.len() && sorted[e].0 == sorted[k].0 {
            e += 1;
        }
        let midrank = (k + 1 + e) as f64 / 2.0;
        rank_sum += midrank * sorted[k..e].iter().filter(|(_, l)| l.is_positive()).count() as f64;
        k = e;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// `censor_time − t*` for the first trace time with score ≥ `threshold`.
pub fn alarm_lead_time(trace: &RiskTrace, threshold: f64, censor_time: f64) -> Option<f64> {
    trace
        .scores
        .iter()
        .position(|&s| s >= threshold)
        .map(|k| censor_time - trace.times[k])
}

/// Episode-level operating point at one alarm threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold: f64,
    pub sensitivity: f64,
    /// `None` when nothing alarms.
    pub precision: Option<f64>,
    pub alarmed_positives: usize,
    pub alarmed_negatives: usize,
    /// Over alarmed positive episodes.
    pub median_lead_time: Option<f64>,
    pub mean_lead_time: Option<f64>,
}

/// `episodes` pairs each trace with its censoring time and label.
pub fn threshold_summary(episodes: &[(&RiskTrace, f64, Label)], threshold: f64) -> ThresholdSummary {
    let mut leads = Vec::new();
    let (mut pos, mut alarmed_neg) = (0, 0);
    for (trace, censor, label) in episodes {
        let lead = alarm_lead_time(trace, threshold, *censor);
        if label.is_positive() {
            pos += 1;
            leads.extend(lead);
        } else if lead.is_some() {
            alarmed_neg += 1;
        }
    }
    leads.sort_by(f64::total_cmp);
    let alarmed_pos = leads.len();
    let median = match alarmed_pos {
        0 => None,
        n if n % 2 == 1 => Some(leads[n / 2]),
        n => Some(0.5 * (leads[n / 2 - 1] + leads[n / 2])),
    };
    ThresholdSummary {
        threshold,
        sensitivity: if pos > 0 { alarmed_pos as f64 / pos as f64 } else { 0.0 },
        precision: (alarmed_pos + alarmed_neg > 0).then(|| alarmed_pos as f64 / (alarmed_pos + alarmed_neg) as f64),
        alarmed_positives: alarmed_pos,
        alarmed_negatives: alarmed_neg,
        median_lead_time: median,
        mean_lead_time: (alarmed_pos > 0).then(|| leads.iter().sum::<f64>() / alarmed_pos as f64),
    }
}

/// One bin of the sampling-rate curve, measured backward from censoring:
/// the bin covers `[T_c − hours_before_end, T_c − hours_before_start)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBin {
    pub label: u8,
    pub bin: usize,
    pub hours_before_start: f64,
    pub hours_before_end: f64,
    pub episodes: usize,
    pub events: usize,
    /// Events per hour per episode.
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One-sided Welch test of `mean(a) > mean(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("Welch test needs >= 2 values per group".into()));
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let (ma, va, na) = moments(a);
    let (mb, vb, nb) = moments(b);
    let se2 = va / na + vb / nb;
    if !(se2 > 0.0) {
        return Err(Error::InsufficientData("both groups have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(format!("Student t: {e}")))?;
    Ok(WelchTest { statistic: t, df, p_value: dist.sf(t), mean_a: ma, mean_b: mb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRate {
    pub bins: Vec<RateBin>,
    /// Per-episode rates over the final `window` hours, deteriorating vs
    /// stable (`None` if a group is too small).
    pub final_window_test: Option<WelchTest>,
}

/// Events per hour in the final `window` hours of each episode (the whole
/// episode if shorter), split by label as `(stable, deteriorating)`.
pub fn final_window_rates(episodes: &[Episode], window: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new());
    for ep in episodes {
        let exposure = window.min(ep.censor_time);
        if !(exposure > 0.0) {
            continue;
        }
        let lo = ep.censor_time - exposure;
        let count = ep.events.iter().filter(|e| e.t >= lo).count();
        let rate = count as f64 / exposure;
        match ep.label {
            Label::Stable => out.0.push(rate),
            Label::Deteriorated => out.1.push(rate),
        }
    }
    out
}

/// Fig-1 style curve: per label and bin, the mean per-episode event rate
/// over episodes long enough to cover the bin, with a 95% normal-theory
/// interval; plus a Welch test on the final-`test_window` rates.
pub fn empirical_sampling_rate(episodes: &[Episode], horizon: f64, bin: f64, test_window: f64) -> Result<SamplingRate> {
    if !(horizon > 0.0 && bin > 0.0) {
        return Err(Error::Parameter("horizon and bin must be > 0".into()));
    }
    let n_bins = (horizon / bin - 1e-9).ceil().max(1.0) as usize;
    let mut bins = Vec::new();
    for label in [Label::Stable, Label::Deteriorated] {
        for b in 0..n_bins {
            let (start, end) = (b as f64 * bin, (b + 1) as f64 * bin);
            let rates: Vec<(usize, f64)> = episodes
                .iter()
                .filter(|e| e.label == label && e.censor_time >= end)
                .map(|e| {
                    let (lo, hi) = (e.censor_time - end, e.censor_time - start);
                    let c = e.events.iter().filter(|ev| ev.t >= lo && ev.t < hi).count();
                    (c, c as f64 / bin)
                })
                .collect();
            let n = rates.len();
            let events = rates.iter().map(|r| r.0).sum();
            let (rate, half) = if n == 0 {
                (0.0, 0.0)
            } else {
                let m = rates.iter().map(|r| r.1).sum::<f64>() / n as f64;
                let var = if n > 1 { rates.iter().map(|r| (r.1 - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
                (m, 1.959_963_984_540_054 * (var / n as f64).sqrt())
            };
            bins.push(RateBin {
                label: label.as_u8(),
                bin: b,
                hours_before_start: start,
                hours_before_end: end,
                episodes: n,
                events,
                rate,
                ci_low: (rate - half).max(0.0),
                ci_high: rate + half,
            });
        }
    }
    let (stable, deteriorating) = final_window_rates(episodes, test_window);
    Ok(SamplingRate { bins, final_window_test: welch_t_test(&deteriorating, &stable).ok() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against Exp(1), the time-rescaling
/// check for compensator increments. Uses the asymptotic distribution with
/// the `√n + 0.12 + 0.11/√n` small-sample correction.
pub fn ks_exponential(samples: &[f64]) -> Result<KsTest> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS test needs samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = 1.0 - (-v.max(0.0)).exp();
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    Ok(KsTest { statistic: d, p_value: kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d) })
}
