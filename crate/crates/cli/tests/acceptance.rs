//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process fails if any criterion fails other than those listed in
//! `KNOWN_RED`, which are unattainable as literally stated and are explained
//! in their detail lines.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use smmh::changepoint::{e_divisive, ChangePointConfig};
use smmh::estimators::{
    fit_gamma_mle, fit_gp, fit_hawkes, hawkes_loglik, initial_hawkes_guess, GpFitConfig, HawkesSegment, MarkSegment,
    NelderMeadConfig, WeightedMarks,
};
use smmh::evaluation::{aggregate, empirical_sampling_rate, ks_exponential, roc_auc, Aggregation};
use smmh::learner::{cut_episode, e_step, fit, fit_segmented, SegmentedEpisode, TrainConfig};
use smmh::model::{compensator_increments, expected_intensity, hawkes_intensity, matern_kernel};
use smmh::reference::{reference_model, separated_model};
use smmh::risk::{absorption_prob, score_episode, FilterConfig};
use smmh::rng::stream;
use smmh::sampler::{sample_cohort, sample_marks, thin, SampleConfig};
use smmh::{Episode, GpParams, HawkesParams, Label, ModelParams, StatePath};

/// Criterion 4 quotes `−2.147208 ± 1e−6` for a log-likelihood whose exact
/// value is `ln(1 + e^{-1}/2) − 2 − (1 − e^{-1})/2 = −2.1472126559…`.
const KNOWN_RED: &[usize] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn within_budget(start: Instant, budget: Duration, detail: &mut String) -> bool {
    let t = start.elapsed();
    detail.push_str(&format!("; runtime {:.1}s (budget {}s)", t.as_secs_f64(), budget.as_secs()));
    t <= budget
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1_kernel() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for ell in [0.25, 1.0, 3.0] {
        for k in 0..=10_000 {
            let delta = k as f64 * 10.0 * ell / 10_000.0;
            worst = worst.max((matern_kernel(delta, 1, ell).unwrap() - (-delta / ell).exp()).abs());
        }
    }
    let mut detail = format!("max |k_1 - exp(-D/l)| = {worst:.2e} over 30003 points");
    let fast = within_budget(start, Duration::from_secs(1), &mut detail);
    Outcome { pass: worst <= 1e-10 && fast, detail }
}

fn c2_thinning() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(2, 0, 0);

    let poisson = HawkesParams::new(2.0, 0.0, 1.0);
    let counts: Vec<f64> =
        (0..1000).map(|_| thin(&poisson, 0.0, 10.0, 100_000, &mut rng).unwrap().len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / 1000.0;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 999.0;
    let a_ok = rel(mean, 20.0) <= 0.05 && rel(var, 20.0) <= 0.05;

    let hp = HawkesParams::new(0.5, 0.8, 2.0);
    let stream_ev = thin(&hp, 0.0, 13_000.0, 1_000_000, &mut rng).unwrap();
    let first: Vec<f64> = stream_ev.iter().copied().take(10_000).collect();
    let ks = ks_exponential(&compensator_increments(&first, 0.0, &hp)).unwrap();
    let b_ok = first.len() == 10_000 && ks.p_value > 0.01;

    let horizon = 60_000.0;
    let long = thin(&hp, 0.0, horizon, 10_000_000, &mut rng).unwrap();
    let want = expected_intensity(&hp).unwrap();
    let rate = long.len() as f64 / horizon;
    let c_ok = rel(rate, want) <= 0.05;

    let mut detail = format!(
        "(a) Poisson(20) counts mean {mean:.3} var {var:.3} (rel err {:.1}%, {:.1}%); (b) KS on {} rescaled gaps D={:.4} p={:.3}; (c) rate {rate:.4} vs {want:.4} ({:.2}%)",
        100.0 * rel(mean, 20.0),
        100.0 * rel(var, 20.0),
        first.len(),
        ks.statistic,
        ks.p_value,
        100.0 * rel(rate, want)
    );
    let fast = within_budget(start, Duration::from_secs(30), &mut detail);
    Outcome { pass: a_ok && b_ok && c_ok && fast, detail }
}

fn c3_estimators() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(3, 0, 0);

    let g = Gamma::new(3.0, 2.0).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
    let gf = fit_gamma_mle(&xs, None).unwrap();
    let gamma_ok = rel(gf.shape, 3.0) <= 0.03 && rel(gf.scale, 2.0) <= 0.03;

    let hp = HawkesParams::new(0.5, 0.8, 2.0);
    let segs: Vec<Vec<f64>> = (0..200).map(|_| thin(&hp, 0.0, 100.0, 100_000, &mut rng).unwrap()).collect();
    let hs: Vec<HawkesSegment> = segs.iter().map(|t| HawkesSegment { times: t, window_end: 100.0, weight: 1.0 }).collect();
    let hf = fit_hawkes(&hs, &initial_hawkes_guess(&hs), &NelderMeadConfig::default()).unwrap();
    let hawkes_err = [rel(hf.base_rate, 0.5), rel(hf.excitation, 0.8), rel(hf.decay, 2.0)];
    let hawkes_ok = hawkes_err.iter().all(|&e| e <= 0.15);

    let truth = GpParams {
        mean: vec![1.0, -1.0],
        smoothness: 2,
        length_scale: 3.0,
        channel_cov: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
        jitter: None,
    };
    let mut data = Vec::new();
    for _ in 0..500 {
        let n = rng.random_range(8..24);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 24.0).collect();
        times.sort_by(f64::total_cmp);
        let marks = sample_marks(&times, &truth, &mut rng).unwrap();
        let masks = vec![vec![true, true]; n];
        data.push((times, marks, masks));
    }
    let wm: Vec<WeightedMarks> = data
        .iter()
        .map(|(t, y, m)| WeightedMarks { segment: MarkSegment { times: t, marks: y, masks: m }, weight: 1.0 })
        .collect();
    let init = GpParams { mean: vec![0.0, 0.0], smoothness: 1, length_scale: 1.0, channel_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]], jitter: None };
    let gp = fit_gp(&wm, &init, &GpFitConfig::default()).unwrap();
    let gp_ok = gp.smoothness == 2 && rel(gp.length_scale, 3.0) <= 0.2;

    let mut detail = format!(
        "Gamma(3,2) -> ({:.4}, {:.4}); Hawkes(0.5,0.8,2) -> ({:.4}, {:.4}, {:.4}) max err {:.1}%; GP nu=2 l=3 -> nu={} l={:.3}",
        gf.shape,
        gf.scale,
        hf.base_rate,
        hf.excitation,
        hf.decay,
        100.0 * hawkes_err.iter().copied().fold(0.0, f64::max),
        gp.smoothness,
        gp.length_scale
    );
    let fast = within_budget(start, Duration::from_secs(300), &mut detail);
    Outcome { pass: gamma_ok && hawkes_ok && gp_ok && fast, detail }
}

/// `∫₀^T λ(t) dt` by composite Simpson between events, where `λ` is smooth.
fn numerical_loglik(times: &[f64], hp: &HawkesParams, window_end: f64) -> f64 {
    let lam = |t: f64| {
        let k = times.partition_point(|&s| s < t);
        hawkes_intensity(t, &times[..k], hp).unwrap()
    };
    let mut knots = vec![0.0];
    knots.extend(times.iter().copied().filter(|&t| t > 0.0 && t < window_end));
    knots.push(window_end);
    let mut integral = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = 20_000;
        let h = (b - a) / n as f64;
        // Open at both ends so the right-limit at `a` is used.
        let f = |x: f64| lam(x.clamp(a + 1e-13, b - 1e-13));
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        integral += s * h / 3.0;
    }
    times.iter().map(|&t| lam(t).ln()).sum::<f64>() - integral
}

fn c4_spot_checks() -> Outcome {
    let g = fit_gamma_mle(&[1.0, 2.0, 3.0], None).unwrap();
    let gamma_ok = (g.shape - 5.371).abs() <= 1e-3 && (g.scale - 0.3724).abs() <= 1e-3;
    let hp = HawkesParams::new(1.0, 0.5, 1.0);
    let ll = hawkes_loglik(&[1.0, 2.0], &hp, 2.0).unwrap();
    let literal_ok = (ll - -2.147208).abs() <= 1e-6;
    let numeric = numerical_loglik(&[1.0, 2.0], &hp, 2.0);
    let numeric_ok = (ll - numeric).abs() <= 1e-5;
    let exact = (1.0 + (-1.0f64).exp() / 2.0).ln() - 2.0 - (1.0 - (-1.0f64).exp()) / 2.0;
    let detail = format!(
        "Gamma({{1,2,3}}) -> ({:.5}, {:.5}) [{}]; hawkes_loglik = {ll:.10} vs stated -2.147208 +/- 1e-6 [{}] (closed form {exact:.10}, |diff| = {:.2e}); numerical compensator {numeric:.10} [{}]",
        g.shape,
        g.scale,
        ok(gamma_ok),
        ok(literal_ok),
        (ll - exact).abs(),
        ok(numeric_ok)
    );
    Outcome { pass: gamma_ok && literal_ok && numeric_ok, detail }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn scalar(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn c5_changepoint() -> Outcome {
    let start = Instant::now();
    let cfg = ChangePointConfig::default();
    let mut step = vec![0.0; 50];
    step.extend([5.0; 50]);
    let exact = e_divisive(&scalar(&step), &cfg);
    let exact_ok = exact == vec![50];

    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let (mut hits, mut exact_two) = (0, 0);
    for run in 0..100u64 {
        let mut rng = stream(5, run, 0);
        let v: Vec<f64> = (0..120)
            .map(|i| if (40..80).contains(&i) { 5.0 } else { 0.0 } + normal.sample(&mut rng))
            .collect();
        let found = e_divisive(&scalar(&v), &ChangePointConfig { seed: run, ..cfg });
        // Each true shift needs a detection within 2 indices; extra
        // detections are counted separately.
        if [40, 80].iter().all(|&c| found.iter().any(|&f| f.abs_diff(c) <= 2)) {
            hits += 1;
            exact_two += (found.len() == 2) as usize;
        }
    }
    let constant = e_divisive(&scalar(&[1.5; 100]), &cfg);
    let mut detail = format!(
        "noise-free shift -> {exact:?}; shifts at 40,80 (size 5 sigma) recovered within +/-2 in {hits}/100 runs ({exact_two} with no extra detection); constant series -> {constant:?}"
    );
    let fast = within_budget(start, Duration::from_secs(60), &mut detail);
    Outcome { pass: exact_ok && hits >= 95 && constant.is_empty() && fast, detail }
}

/// Best accuracy over relabelings of the transient states, and the
/// transient-state mapping that achieves it.
fn aligned_accuracy(conf: &[Vec<usize>], transient: &[usize]) -> (f64, Vec<usize>) {
    fn perms(xs: &[usize]) -> Vec<Vec<usize>> {
        if xs.len() <= 1 {
            return vec![xs.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..xs.len() {
            let mut rest = xs.to_vec();
            let x = rest.remove(i);
            for mut p in perms(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    let total: usize = conf.iter().flatten().sum();
    let mut best = (0.0, Vec::new());
    for p in perms(transient) {
        // true transient[k] <-> fitted p[k]
        let hit: usize = transient.iter().zip(&p).map(|(&t, &f)| conf[t][f]).sum();
        let acc = hit as f64 / total as f64;
        if acc > best.0 || best.1.is_empty() {
            best = (acc, p);
        }
    }
    best
}

/// Confusion counts (true state by time overlap) x (MAP state) over
/// transient segments.
fn confusion(dataset: &[SegmentedEpisode], params: &ModelParams, truth: &HashMap<String, StatePath>) -> Vec<Vec<usize>> {
    let n = params.n_states;
    let es = e_step(dataset, params).unwrap();
    let mut conf = vec![vec![0; n]; n];
    for (d, resp) in dataset.iter().zip(&es.responsibilities) {
        let path = &truth[&d.id];
        for (s, r) in d.transient_segments().iter().zip(resp) {
            let map = (0..n).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            let mut overlap = vec![0.0; n];
            for k in 0..path.states.len() {
                let a = path.jump_times[k];
                let b = a + path.sojourns[k];
                overlap[path.states[k]] += (b.min(s.end) - a.max(s.start)).max(0.0);
            }
            let t = (0..n).max_by(|&a, &b| overlap[a].total_cmp(&overlap[b])).unwrap();
            conf[t][map] += 1;
        }
    }
    conf
}

fn c6_em() -> Outcome {
    let start = Instant::now();
    let reference = reference_model();
    let mut worst_drop: f64 = 0.0;
    let mut iters = Vec::new();
    let mut mono_ok = true;
    for seed in 0..20u64 {
        let eps: Vec<Episode> =
            sample_cohort(&reference, 60, &SampleConfig::with_seed(100 + seed)).unwrap().into_iter().map(|c| c.0).collect();
        match fit(&eps, &TrainConfig { seed, ..TrainConfig::default() }) {
            Ok(r) => {
                for w in r.loglik_trace.windows(2) {
                    let drop = (w[0] - w[1]) / w[0].abs().max(1.0);
                    worst_drop = worst_drop.max(drop);
                    mono_ok &= drop <= 1e-6;
                }
                iters.push(r.loglik_trace.len());
            }
            Err(_) => mono_ok = false,
        }
    }

    let model = separated_model();
    let cohort = sample_cohort(&model, 500, &SampleConfig::with_seed(6)).unwrap();
    let truth: HashMap<String, StatePath> = cohort.iter().map(|(e, p)| (e.id.clone(), p.clone())).collect();
    let oracle: Vec<SegmentedEpisode> = cohort.iter().map(|(e, p)| cut_episode(e, &p.jump_times[1..]).unwrap()).collect();
    let cfg = TrainConfig { seed: 6, ..TrainConfig::default() };
    let r = fit_segmented(&oracle, &cfg).unwrap();
    let transient: Vec<usize> = model.transient_states().collect();
    let (acc, map) = aligned_accuracy(&confusion(&oracle, &r.params, &truth), &transient);
    let rate_err: Vec<f64> = transient
        .iter()
        .zip(&map)
        .map(|(&t, &f)| rel(r.params.states[f].hawkes.base_rate, model.states[t].hawkes.base_rate))
        .collect();
    let rate_ok = rate_err.iter().all(|&e| e <= 0.25);

    // Full pipeline including change-point segmentation, for information.
    let eps: Vec<Episode> = cohort.iter().map(|c| c.0.clone()).collect();
    let full = fit(&eps, &cfg).unwrap();
    let seg = smmh::learner::segment_dataset(&eps, &cfg.changepoint);
    let (full_acc, _) = aligned_accuracy(&confusion(&seg.episodes, &full.params, &truth), &transient);

    let mut detail = format!(
        "monotone on 20 seeds (worst relative drop {worst_drop:.1e}, iterations {}..{}); separated cohort, 500 episodes, true segmentation: accuracy {:.1}%, transient base-rate errors {:.1}%/{:.1}%; [info] with estimated change-points: accuracy {:.1}%",
        iters.iter().min().unwrap_or(&0),
        iters.iter().max().unwrap_or(&0),
        100.0 * acc,
        100.0 * rate_err[0],
        100.0 * rate_err[1],
        100.0 * full_acc
    );
    let fast = within_budget(start, Duration::from_secs(600), &mut detail);
    Outcome { pass: mono_ok && acc >= 0.9 && rate_ok && fast, detail }
}

fn c7_absorption() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(7, 0, 0);
    let mut worst_z: f64 = 0.0;
    let mut all_ok = true;
    for _ in 0..10 {
        let n = rng.random_range(4..7);
        let mut p = vec![vec![0.0; n]; n];
        p[0][0] = 1.0;
        p[n - 1][n - 1] = 1.0;
        for (i, row) in p.iter_mut().enumerate().take(n - 1).skip(1) {
            for (j, v) in row.iter_mut().enumerate() {
                if j != i {
                    *v = rng.random::<f64>() + if j == 0 || j == n - 1 { 0.05 } else { 0.0 };
                }
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let a = absorption_prob(&p).unwrap();
        let walks = 100_000;
        for s0 in 1..n - 1 {
            let mut hits = 0usize;
            for _ in 0..walks {
                let mut s = s0;
                while s != 0 && s != n - 1 {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    s = (0..n)
                        .find(|&j| {
                            acc += p[s][j];
                            u < acc
                        })
                        .unwrap_or(n - 1);
                }
                hits += (s == n - 1) as usize;
            }
            let freq = hits as f64 / walks as f64;
            let sd = (a[s0] * (1.0 - a[s0]) / walks as f64).sqrt();
            let z = (freq - a[s0]).abs() / sd;
            worst_z = worst_z.max(z);
            all_ok &= z <= 3.0;
        }
    }
    let hand = absorption_prob(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.3, 0.0, 0.7, 0.0],
        vec![0.2, 0.0, 0.0, 0.8],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let hand_ok = (hand[1] - 0.56).abs() <= 1e-12 && (hand[2] - 0.8).abs() <= 1e-12;
    let mut detail = format!(
        "10 random kernels x 1e5 walks per start state: worst |z| = {worst_z:.2}; hand case -> ({:.15}, {:.15})",
        hand[1], hand[2]
    );
    within_budget(start, Duration::from_secs(600), &mut detail);
    Outcome { pass: all_ok && hand_ok, detail }
}

fn max_scores(test: &[Episode], params: &ModelParams) -> Vec<(f64, Label)> {
    let cfg = FilterConfig::default();
    test.iter()
        .filter(|e| !e.events.is_empty())
        .map(|e| (aggregate(&score_episode(e, params, &cfg).unwrap(), Aggregation::Max).unwrap(), e.label))
        .collect()
}

fn c8_discrimination(train: &[Episode]) -> Outcome {
    let start = Instant::now();
    let truth = reference_model();
    let test: Vec<Episode> =
        sample_cohort(&truth, 200, &SampleConfig::with_seed(8_001)).unwrap().into_iter().map(|c| c.0).collect();
    let fitted = fit(train, &TrainConfig { seed: 8, ..TrainConfig::default() }).unwrap();
    let auc_fit = roc_auc(&max_scores(&test, &fitted.params)).unwrap();
    let auc_true = roc_auc(&max_scores(&test, &truth)).unwrap();
    let mut detail = format!(
        "ROC AUC (max aggregation, 200 test episodes): fitted {auc_fit:.4}, true model {auc_true:.4}, |diff| {:.4}",
        (auc_fit - auc_true).abs()
    );
    let fast = within_budget(start, Duration::from_secs(900), &mut detail);
    let pass = (auc_fit - auc_true).abs() <= 0.05 && auc_fit >= 0.7 && auc_true >= 0.7 && fast;
    Outcome { pass, detail }
}

fn c9_sampling_rate(train: &[Episode]) -> Outcome {
    let start = Instant::now();
    let rates = empirical_sampling_rate(train, 24.0, 2.0, 24.0).unwrap();
    let mean = |label: u8| {
        let b: Vec<f64> = rates.bins.iter().filter(|b| b.label == label).map(|b| b.rate).collect();
        b.iter().sum::<f64>() / b.len() as f64
    };
    let above = (0..12)
        .filter(|&k| {
            let r = |l: u8| rates.bins.iter().find(|b| b.label == l && b.bin == k).unwrap().rate;
            r(1) > r(0)
        })
        .count();
    let test = rates.final_window_test.expect("both groups present");
    let mut detail = format!(
        "final 24 h: label-1 mean bin rate {:.3}/h vs label-0 {:.3}/h (label 1 higher in {above}/12 bins); Welch t = {:.2}, df = {:.1}, one-sided p = {:.2e}",
        mean(1),
        mean(0),
        test.statistic,
        test.df,
        test.p_value
    );
    let fast = within_budget(start, Duration::from_secs(60), &mut detail);
    Outcome { pass: test.p_value < 0.05 && mean(1) > mean(0) && fast, detail }
}

fn run_cli(args: &[&str], out: &Path) {
    let o = Command::new(env!("CARGO_BIN_EXE_smmh")).args(args).arg("--out").arg(out).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn strip_wall_time(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let m = v.as_object_mut().unwrap();
    m.remove("wall_time_seconds");
    m.remove("inputs");
    v
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("reference.json");
    std::fs::write(&model, reference_model().to_json()).unwrap();
    let m = model.to_str().unwrap();
    let mut identical = true;
    let mut compared = 0;
    for run in ["a", "b"] {
        let r = d.join(run);
        let eps = r.join("sample/episodes.jsonl");
        let fitted = r.join("fit/model.json");
        let traces = r.join("score/traces.csv");
        run_cli(&["sample", "--model", m, "--n", "40", "--seed", "10"], &r.join("sample"));
        run_cli(&["fit", "--episodes", eps.to_str().unwrap(), "--em-iters", "5", "--seed", "10"], &r.join("fit"));
        run_cli(&["score", "--model", fitted.to_str().unwrap(), "--episodes", eps.to_str().unwrap()], &r.join("score"));
        run_cli(&["eval", "--traces", traces.to_str().unwrap(), "--episodes", eps.to_str().unwrap()], &r.join("eval"));
    }
    for (cmd, files) in [
        ("sample", &["episodes.jsonl", "paths.jsonl"][..]),
        ("fit", &["model.json", "loglik.csv"][..]),
        ("score", &["traces.csv"][..]),
        ("eval", &["metrics.json", "sampling_rate.csv"][..]),
    ] {
        for f in files {
            identical &= std::fs::read(d.join("a").join(cmd).join(f)).unwrap()
                == std::fs::read(d.join("b").join(cmd).join(f)).unwrap();
            compared += 1;
        }
        identical &= strip_wall_time(&d.join("a").join(cmd).join("manifest.json"))
            == strip_wall_time(&d.join("b").join(cmd).join("manifest.json"));
        compared += 1;
    }

    let text = std::fs::read_to_string(d.join("a/sample/episodes.jsonl")).unwrap();
    let mut episodes_ok = true;
    for line in text.lines() {
        let ep = Episode::from_json_line(line).unwrap();
        episodes_ok &= ep.to_json_line() == line && Episode::from_json_line(&ep.to_json_line()).unwrap() == ep;
    }
    let mut models_ok = true;
    for m in [reference_model(), separated_model()] {
        let back = ModelParams::from_json(&m.to_json()).unwrap();
        models_ok &= back == m && back.to_json() == m.to_json();
    }
    let fitted_text = std::fs::read_to_string(d.join("a/fit/model.json")).unwrap();
    let fitted = ModelParams::from_json(&fitted_text).unwrap();
    models_ok &= fitted.to_json() + "\n" == fitted_text;

    let detail = format!(
        "{compared} output files byte-identical across reruns (manifest wall time excluded): {}; {} episodes round-trip: {}; models round-trip: {}",
        identical,
        text.lines().count(),
        episodes_ok,
        models_ok
    );
    Outcome { pass: identical && episodes_ok && models_ok, detail }
}

fn main() {
    let train: Vec<Episode> =
        sample_cohort(&reference_model(), 500, &SampleConfig::with_seed(8)).unwrap().into_iter().map(|c| c.0).collect();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("Matern nu=1 equals exp(-D/l)", Box::new(c1_kernel)),
        ("thinning correctness", Box::new(c2_thinning)),
        ("estimator recovery", Box::new(c3_estimators)),
        ("closed-form spot checks", Box::new(c4_spot_checks)),
        ("change-point detection", Box::new(c5_changepoint)),
        ("EM soundness", Box::new(c6_em)),
        ("absorption oracle", Box::new(c7_absorption)),
        ("end-to-end discrimination", Box::new(|| c8_discrimination(&train))),
        ("Fig-1 sampling-rate analogue", Box::new(|| c9_sampling_rate(&train))),
        ("determinism and round-trip", Box::new(c10_determinism)),
    ];
    // e.g. SMMH_ACCEPTANCE_ONLY=5,8 runs a subset
    let only: Option<Vec<usize>> = std::env::var("SMMH_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = check();
        let tag = match (o.pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("criterion {id:>2} {tag}: {name}: {}", o.detail);
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
