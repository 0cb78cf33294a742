use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use smmh::evaluation::{
    aggregate, alarm_lead_time, empirical_sampling_rate, pr_auc, roc_auc, threshold_summary, Aggregation, RateBin,
    ThresholdSummary, WelchTest,
};
use smmh::learner::{fit as fit_model, n_params, FitResult};
use smmh::risk::{score_episode, RiskTrace};
use smmh::sampler::sample_cohort;
use smmh::{Episode, Label, StatePath};

use crate::config::Config;
use crate::output::{finish, num, read_episodes, read_model, OutDir};
use crate::CliError;

#[derive(Serialize)]
struct TruthLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    path: &'a StatePath,
}

pub fn sample(model: &Path, out: &Path, seed: u64, mut cfg: Config) -> Result<(), CliError> {
    let started = Instant::now();
    cfg.sample.sampler.seed = seed;
    let params = read_model(model)?;
    let cohort = sample_cohort(&params, cfg.sample.n_episodes, &cfg.sample.sampler)?;
    let mut dir = OutDir::create(out)?;
    let mut episodes = String::new();
    let mut paths = String::new();
    for (ep, path) in &cohort {
        episodes.push_str(&ep.to_json_line());
        episodes.push('\n');
        paths.push_str(&serde_json::to_string(&TruthLine { id: &ep.id, path }).expect("path serialization"));
        paths.push('\n');
    }
    dir.write("episodes.jsonl", episodes.as_bytes())?;
    if cfg.sample.truth {
        dir.write("paths.jsonl", paths.as_bytes())?;
    }
    finish(dir, "sample", seed, &cfg.sample, vec![("model", model)], Vec::new(), started)
}

pub fn fit(episodes_file: &Path, out: &Path, seed: u64, mut cfg: Config) -> Result<(), CliError> {
    let started = Instant::now();
    let section = &mut cfg.fit;
    section.train.seed = seed;
    section.train.changepoint.seed = seed;
    let episodes = read_episodes(episodes_file)?;
    let grid = if section.state_grid.is_empty() { vec![section.train.n_states] } else { section.state_grid.clone() };

    let mut fits: Vec<(usize, FitResult)> = Vec::new();
    for &n in &grid {
        let train = smmh::learner::TrainConfig { n_states: n, ..section.train.clone() };
        fits.push((n, fit_model(&episodes, &train)?));
    }
    // Lowest finite BIC; ties go to the smaller model.
    let best = (0..fits.len())
        .filter(|&i| fits[i].1.bic.is_finite())
        .min_by(|&a, &b| fits[a].1.bic.total_cmp(&fits[b].1.bic))
        .ok_or_else(|| smmh::Error::Numerical("no candidate state count gave a finite BIC".into()))?;

    let mut dir = OutDir::create(out)?;
    let mut notes = Vec::new();
    let mut loglik_rows = Vec::new();
    let mut bic_rows = Vec::new();
    for (i, (n, r)) in fits.iter().enumerate() {
        for (k, ll) in r.loglik_trace.iter().enumerate() {
            loglik_rows.push(vec![n.to_string(), k.to_string(), num(*ll)]);
        }
        bic_rows.push(vec![
            n.to_string(),
            num(r.loglik),
            n_params(*n, r.params.n_channels()).to_string(),
            r.n_obs.to_string(),
            num(r.bic),
            r.converged.to_string(),
            (i == best).to_string(),
        ]);
        notes.extend(r.warnings.iter().map(|w| format!("n_states={n}: {w}")));
        notes.extend(r.skipped.iter().map(|(id, e)| format!("n_states={n}: skipped episode {id}: {e}")));
        if !section.state_grid.is_empty() {
            dir.write(&format!("model_n{n}.json"), model_bytes(&r.params).as_bytes())?;
        }
    }
    dir.write("model.json", model_bytes(&fits[best].1.params).as_bytes())?;
    dir.write_csv("loglik.csv", &header(&["n_states", "iteration", "loglik"]), &loglik_rows)?;
    if !section.state_grid.is_empty() {
        let h = header(&["n_states", "loglik", "n_params", "n_obs", "bic", "converged", "selected"]);
        dir.write_csv("bic.csv", &h, &bic_rows)?;
    }
    finish(dir, "fit", seed, &cfg.fit, vec![("episodes", episodes_file)], notes, started)
}

fn model_bytes(m: &smmh::ModelParams) -> String {
    m.to_json() + "\n"
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

pub fn score(model: &Path, episodes_file: &Path, out: &Path, seed: u64, cfg: Config) -> Result<(), CliError> {
    let started = Instant::now();
    let params = read_model(model)?;
    let episodes = read_episodes(episodes_file)?;
    let q = params.n_channels();
    if let Some(ep) = episodes.iter().find(|e| e.n_channels().is_some_and(|k| k != q)) {
        return Err(smmh::Error::ShapeMismatch(format!(
            "model has {q} mark channels, episode {} has {}",
            ep.id,
            ep.n_channels().unwrap()
        ))
        .into());
    }
    let scored: Vec<&Episode> = episodes.iter().filter(|e| !e.events.is_empty()).collect();
    let traces: Vec<RiskTrace> =
        scored.par_iter().map(|ep| score_episode(ep, &params, &cfg.score)).collect::<smmh::Result<_>>()?;

    let mut cols = header(&["id", "t", "risk"]);
    cols.extend((1..=params.n_states).map(|j| format!("p{j}")));
    let mut rows = Vec::new();
    for (ep, tr) in scored.iter().zip(&traces) {
        for k in 0..tr.times.len() {
            let mut row = vec![ep.id.clone(), num(tr.times[k]), num(tr.scores[k])];
            row.extend(tr.posteriors[k].iter().map(|&p| num(p)));
            rows.push(row);
        }
    }
    let mut dir = OutDir::create(out)?;
    dir.write_csv("traces.csv", &cols, &rows)?;
    let notes = match episodes.len() - scored.len() {
        0 => Vec::new(),
        k => vec![format!("{k} episode(s) without events have no trace")],
    };
    finish(dir, "score", seed, &cfg.score, vec![("model", model), ("episodes", episodes_file)], notes, started)
}

/// Traces keyed by episode id.
pub fn read_traces(path: &Path) -> Result<HashMap<String, RiskTrace>, CliError> {
    let bad = |m: String| CliError::usage(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let cols = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if cols.len() < 3 || &cols[0] != "id" || &cols[1] != "t" || &cols[2] != "risk" {
        return Err(bad("expected header id,t,risk,p1..pN".into()));
    }
    let mut out: HashMap<String, RiskTrace> = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let tr = out
            .entry(rec[0].to_string())
            .or_insert_with(|| RiskTrace { times: Vec::new(), scores: Vec::new(), posteriors: Vec::new() });
        tr.times.push(vals[0]);
        tr.scores.push(vals[1]);
        tr.posteriors.push(vals[2..].to_vec());
    }
    Ok(out)
}

#[derive(Serialize)]
struct ThresholdReport {
    #[serde(flatten)]
    summary: ThresholdSummary,
    /// Hours from first alarm to censoring, per alarmed positive episode.
    lead_times: Vec<f64>,
}

#[derive(Serialize)]
struct Metrics {
    aggregation: Aggregation,
    n_episodes: usize,
    n_positive: usize,
    /// Episodes with no trace rows (no events), left out of the metrics.
    unscored: Vec<String>,
    pr_auc: f64,
    roc_auc: f64,
    thresholds: Vec<ThresholdReport>,
    final_window_hours: f64,
    final_window_test: Option<WelchTest>,
}

pub fn eval(traces_file: &Path, episodes_file: &Path, out: &Path, seed: u64, cfg: Config) -> Result<(), CliError> {
    let started = Instant::now();
    let e = &cfg.eval;
    let traces = read_traces(traces_file)?;
    let episodes = read_episodes(episodes_file)?;
    let mut unscored = Vec::new();
    let mut joined: Vec<(&RiskTrace, f64, Label)> = Vec::new();
    for ep in &episodes {
        match traces.get(&ep.id) {
            Some(tr) => joined.push((tr, ep.censor_time, ep.label)),
            None => unscored.push(ep.id.clone()),
        }
    }
    let scored: Vec<(f64, Label)> =
        joined.iter().map(|(tr, _, l)| (aggregate(tr, e.aggregation).expect("traces are nonempty"), *l)).collect();
    let thresholds = e
        .thresholds
        .iter()
        .map(|&th| ThresholdReport {
            summary: threshold_summary(&joined, th),
            lead_times: joined
                .iter()
                .filter(|(_, _, l)| l.is_positive())
                .filter_map(|(tr, c, _)| alarm_lead_time(tr, th, *c))
                .collect(),
        })
        .collect();
    let rates = empirical_sampling_rate(&episodes, e.horizon, e.bin, e.test_window)?;
    let metrics = Metrics {
        aggregation: e.aggregation,
        n_episodes: scored.len(),
        n_positive: scored.iter().filter(|(_, l)| l.is_positive()).count(),
        unscored,
        pr_auc: pr_auc(&scored)?,
        roc_auc: roc_auc(&scored)?,
        thresholds,
        final_window_hours: e.test_window,
        final_window_test: rates.final_window_test,
    };
    let mut dir = OutDir::create(out)?;
    dir.write_json("metrics.json", &metrics)?;
    let rows: Vec<Vec<String>> = rates.bins.iter().map(rate_row).collect();
    let h = header(&[
        "label",
        "bin",
        "hours_before_start",
        "hours_before_end",
        "episodes",
        "events",
        "rate",
        "ci_low",
        "ci_high",
    ]);
    dir.write_csv("sampling_rate.csv", &h, &rows)?;
    finish(dir, "eval", seed, &cfg.eval, vec![("traces", traces_file), ("episodes", episodes_file)], Vec::new(), started)
}

fn rate_row(b: &RateBin) -> Vec<String> {
    vec![
        b.label.to_string(),
        b.bin.to_string(),
        num(b.hours_before_start),
        num(b.hours_before_end),
        b.episodes.to_string(),
        b.events.to_string(),
        num(b.rate),
        num(b.ci_low),
        num(b.ci_high),
    ]
}
