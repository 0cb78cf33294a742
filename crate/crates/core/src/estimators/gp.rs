//! Multi-task GP marginal likelihood and hyperparameter fitting.
//!
//! Hyperparameters are searched in an unconstrained vector
//! `θ = (ln ℓ, L)` where `Σ = L Lᵀ` and `L` is lower-triangular with a
//! log-parameterized diagonal (stored row by row). The constant mean has a
//! closed-form (generalized least squares) update given the covariance,
//! and the smoothness index is chosen by grid search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_escalating;
use crate::model::{covariance_for_layout, observed_layout, GpParams, ObsIndex, DEFAULT_RELATIVE_JITTER};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_ELL_BOUNDS: (f64, f64) = (-6.9, 9.2);
const LN_DIAG_BOUNDS: (f64, f64) = (-15.0, 15.0);

/// Marks of one segment: times, mark vectors and presence masks.
#[derive(Debug, Clone, Copy)]
pub struct MarkSegment<'a> {
    pub times: &'a [f64],
    pub marks: &'a [Vec<f64>],
    pub masks: &'a [Vec<bool>],
}

#[derive(Debug, Clone, Copy)]
pub struct WeightedMarks<'a> {
    pub segment: MarkSegment<'a>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpFitConfig {
    pub smoothness_grid: Vec<u32>,
    /// Quasi-Newton iterations per smoothness value.
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self { smoothness_grid: vec![1, 2, 3], max_iters: 100, tol: 1e-9 }
    }
}

struct Prepared {
    times: Vec<f64>,
    layout: Vec<ObsIndex>,
    y: DVector<f64>,
    weight: f64,
}

fn prepare(seg: &MarkSegment<'_>, weight: f64) -> Result<Prepared> {
    if seg.times.len() != seg.marks.len() || seg.times.len() != seg.masks.len() {
        return Err(Error::ShapeMismatch("segment times, marks and masks differ in length".into()));
    }
    let layout = observed_layout(seg.masks);
    let y = DVector::from_iterator(layout.len(), layout.iter().map(|o| seg.marks[o.time][o.channel]));
    Ok(Prepared { times: seg.times.to_vec(), layout, y, weight })
}

fn residual(p: &Prepared, mean: &[f64]) -> DVector<f64> {
    DVector::from_iterator(p.y.len(), p.layout.iter().zip(p.y.iter()).map(|(o, &v)| v - mean[o.channel]))
}

/// Log-density of the observed mark entries under the GP.
pub fn gp_marginal_loglik(seg: MarkSegment<'_>, gp: &GpParams) -> Result<f64> {
    let p = prepare(&seg, 1.0)?;
    if p.y.is_empty() {
        return Err(Error::InsufficientData("segment has no observed mark values".into()));
    }
    if seg.masks.iter().any(|m| m.len() != gp.n_channels()) {
        return Err(Error::ShapeMismatch(format!("marks do not have {} channels", gp.n_channels())));
    }
    loglik_prepared(&p, gp, &gp.kernel())
}

fn loglik_prepared(p: &Prepared, gp: &GpParams, kernel: &crate::model::MaternKernel) -> Result<f64> {
    let k = covariance_for_layout(&p.times, &p.layout, gp, kernel);
    let (chol, _) = cholesky_escalating(&k)?;
    let r = residual(p, &gp.mean);
    let alpha = chol.solve(&r);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * r.dot(&alpha) - logdet - 0.5 * r.len() as f64 * LN_2PI)
}

/// Number of entries in the parameter vector for `q` channels.
pub fn hyper_len(q: usize) -> usize {
    q + 1 + q * (q + 1) / 2
}

fn chol_factor(gp: &GpParams) -> DMatrix<f64> {
    let q = gp.n_channels();
    let sigma = DMatrix::from_fn(q, q, |r, c| gp.channel_cov[r][c]);
    let mut l = match cholesky_escalating(&sigma) {
        Ok((c, _)) => c.l(),
        Err(_) => DMatrix::identity(q, q),
    };
    for r in 0..q {
        if !(l[(r, r)] > LN_DIAG_BOUNDS.0.exp()) {
            l[(r, r)] = LN_DIAG_BOUNDS.0.exp();
        }
    }
    l
}

/// Packs `(μ, ln ℓ, L)` of `gp` into one vector; `L` is stored row by row
/// with its diagonal on the log scale.
pub fn gp_hyper_vector(gp: &GpParams) -> Vec<f64> {
    let l = chol_factor(gp);
    let q = gp.n_channels();
    let mut theta = gp.mean.clone();
    theta.push(gp.length_scale.ln());
    for r in 0..q {
        for c in 0..=r {
            theta.push(if r == c { l[(r, r)].ln() } else { l[(r, c)] });
        }
    }
    theta
}

fn lower_from_hyper(theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    let mut idx = q + 1;
    for r in 0..q {
        for c in 0..=r {
            l[(r, c)] = if r == c { theta[idx].exp() } else { theta[idx] };
            idx += 1;
        }
    }
    l
}

/// Unpacks a parameter vector, keeping smoothness and jitter of `template`.
pub fn gp_from_hyper(theta: &[f64], template: &GpParams) -> GpParams {
    let q = template.n_channels();
    let l = lower_from_hyper(theta, q);
    let sigma = &l * l.transpose();
    GpParams {
        mean: theta[..q].to_vec(),
        smoothness: template.smoothness,
        length_scale: theta[q].exp(),
        channel_cov: (0..q).map(|r| (0..q).map(|c| 0.5 * (sigma[(r, c)] + sigma[(c, r)])).collect()).collect(),
        jitter: template.jitter,
    }
}

fn clamp_hyper(theta: &mut [f64], q: usize) {
    theta[q] = theta[q].clamp(LN_ELL_BOUNDS.0, LN_ELL_BOUNDS.1);
    let mut idx = q + 1;
    for r in 0..q {
        for c in 0..=r {
            if r == c {
                theta[idx] = theta[idx].clamp(LN_DIAG_BOUNDS.0, LN_DIAG_BOUNDS.1);
            } else {
                theta[idx] = theta[idx].clamp(-1e6, 1e6);
            }
            idx += 1;
        }
    }
}

/// Weighted mean log-likelihood and, optionally, its gradient in θ.
///
/// With `M = ααᵀ − K⁻¹`, `∂ℓ/∂θ = ½ tr(M ∂K/∂θ)`; for the channel factor
/// this collapses to `(G L)_ij` with `G_rg = Σ_{a∈r, b∈g} M_ab k(t_a − t_b)`.
fn objective(prep: &[Prepared], gp: &GpParams, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let q = gp.n_channels();
    let kernel = gp.kernel();
    let total: f64 = prep.iter().map(|p| p.weight).sum();
    let mut value = 0.0;
    let mut g_mean = vec![0.0; q];
    let mut g_ell = 0.0;
    let mut g_sigma = DMatrix::<f64>::zeros(q, q);
    let mut trace_m = 0.0;
    for p in prep {
        let w = p.weight / total;
        if !want_grad {
            value += w * loglik_prepared(p, gp, &kernel)?;
            continue;
        }
        let n = p.layout.len();
        let nt = p.times.len();
        let mut kt = DMatrix::<f64>::zeros(nt, nt);
        let mut dkt = DMatrix::<f64>::zeros(nt, nt);
        for a in 0..nt {
            for b in 0..=a {
                let d = p.times[a] - p.times[b];
                kt[(a, b)] = kernel.eval(d);
                kt[(b, a)] = kt[(a, b)];
                if a != b {
                    dkt[(a, b)] = kernel.dlog_length_scale(d);
                    dkt[(b, a)] = dkt[(a, b)];
                }
            }
        }
        let k = covariance_for_layout(&p.times, &p.layout, gp, &kernel);
        let (chol, _) = cholesky_escalating(&k)?;
        let r = residual(p, &gp.mean);
        let alpha = chol.solve(&r);
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        value += w * (-0.5 * r.dot(&alpha) - logdet - 0.5 * n as f64 * LN_2PI);
        let kinv = chol.inverse();
        for a in 0..n {
            let oa = p.layout[a];
            g_mean[oa.channel] += w * alpha[a];
            trace_m += w * (alpha[a] * alpha[a] - kinv[(a, a)]);
            for b in 0..n {
                let ob = p.layout[b];
                let m = w * (alpha[a] * alpha[b] - kinv[(a, b)]);
                g_sigma[(oa.channel, ob.channel)] += m * kt[(oa.time, ob.time)];
                g_ell += 0.5 * m * gp.channel_cov[oa.channel][ob.channel] * dkt[(oa.time, ob.time)];
            }
        }
    }
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    let theta = gp_hyper_vector(gp);
    let l = lower_from_hyper(&theta, q);
    let gl = &g_sigma * &l;
    // the default jitter tracks the largest channel variance
    let argmax_diag = (0..q).max_by(|&a, &b| gp.channel_cov[a][a].total_cmp(&gp.channel_cov[b][b])).unwrap_or(0);
    let mut grad = g_mean;
    grad.push(g_ell);
    for r in 0..q {
        for c in 0..=r {
            let mut d = gl[(r, c)];
            if gp.jitter.is_none() && r == argmax_diag {
                d += 0.5 * trace_m * DEFAULT_RELATIVE_JITTER * 2.0 * l[(r, c)];
            }
            if r == c {
                d *= l[(r, r)];
            }
            grad.push(d);
        }
    }
    Ok((value, grad))
}

fn prepare_all(segments: &[WeightedMarks<'_>], q: usize) -> Result<Vec<Prepared>> {
    let max_w = segments.iter().map(|s| s.weight).fold(0.0, f64::max);
    let mut prep = Vec::with_capacity(segments.len());
    for s in segments {
        if !(s.weight >= 0.0 && s.weight.is_finite()) {
            return Err(Error::Precondition("segment weights must be finite and >= 0".into()));
        }
        if s.segment.masks.iter().any(|m| m.len() != q) {
            return Err(Error::ShapeMismatch(format!("marks do not have {q} channels")));
        }
        // segments with negligible responsibility do not move the fit
        if s.weight <= 1e-12 * max_w {
            continue;
        }
        let p = prepare(&s.segment, s.weight)?;
        if !p.y.is_empty() {
            prep.push(p);
        }
    }
    if !prep.iter().any(|p| p.layout.len() >= 2) {
        return Err(Error::InsufficientData("GP fit needs a segment with >= 2 observed values".into()));
    }
    Ok(prep)
}

/// Weighted mean log-likelihood over segments and its gradient with respect
/// to the [`gp_hyper_vector`] coordinates.
pub fn gp_objective(segments: &[WeightedMarks<'_>], gp: &GpParams) -> Result<(f64, Vec<f64>)> {
    let prep = prepare_all(segments, gp.n_channels())?;
    objective(&prep, gp, true)
}

/// Generalized-least-squares mean given the covariance hyperparameters.
fn gls_mean(prep: &[Prepared], gp: &GpParams) -> Result<Vec<f64>> {
    let q = gp.n_channels();
    let kernel = gp.kernel();
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut b = DVector::<f64>::zeros(q);
    for p in prep {
        let k = covariance_for_layout(&p.times, &p.layout, gp, &kernel);
        let (chol, _) = cholesky_escalating(&k)?;
        let h = DMatrix::from_fn(p.layout.len(), q, |i, c| if p.layout[i].channel == c { 1.0 } else { 0.0 });
        let kinv_h = chol.solve(&h);
        a += p.weight * h.transpose() * &kinv_h;
        b += p.weight * kinv_h.transpose() * &p.y;
    }
    let mut mean = gp.mean.clone();
    let observed: Vec<usize> = (0..q).filter(|&c| a[(c, c)] > 0.0).collect();
    let sub_a = DMatrix::from_fn(observed.len(), observed.len(), |i, j| a[(observed[i], observed[j])]);
    let sub_b = DVector::from_fn(observed.len(), |i, _| b[observed[i]]);
    if let Some(sol) = sub_a.lu().solve(&sub_b) {
        for (i, &c) in observed.iter().enumerate() {
            mean[c] = sol[i];
        }
    }
    Ok(mean)
}

/// Starting point with the GLS mean, when that does not lower the objective.
fn with_gls_mean(prep: &[Prepared], gp: &GpParams) -> Result<GpParams> {
    let cand = GpParams { mean: gls_mean(prep, gp)?, ..gp.clone() };
    if objective(prep, &cand, false)?.0 >= objective(prep, gp, false)?.0 {
        Ok(cand)
    } else {
        Ok(gp.clone())
    }
}

/// BFGS ascent over θ with Armijo backtracking. Never returns a point worse
/// than `gp`.
fn ascend(prep: &[Prepared], gp: &GpParams, max_iters: usize, tol: f64) -> Result<(GpParams, f64)> {
    let q = gp.n_channels();
    let dim = hyper_len(q);
    let start_value = objective(prep, gp, false)?.0;
    let mut theta = gp_hyper_vector(gp);
    clamp_hyper(&mut theta, q);
    let mut current = gp_from_hyper(&theta, gp);
    let (mut f, mut g) = objective(prep, &current, true)?;
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut scaled = false;
    for _ in 0..max_iters {
        let gv = DVector::from_column_slice(&g);
        let mut dir = &hinv * &gv;
        if gv.dot(&dir) <= 0.0 {
            hinv = DMatrix::identity(dim, dim);
            dir = gv.clone();
        }
        let slope = gv.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            clamp_hyper(&mut cand, q);
            let cand_gp = gp_from_hyper(&cand, &current);
            if let Ok((fc, _)) = objective(prep, &cand_gp, false) {
                if fc.is_finite() && fc > f && fc >= f + 1e-4 * step * slope {
                    accepted = Some((cand, cand_gp, fc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, cand_gp, fc)) = accepted else { break };
        let (_, gc) = objective(prep, &cand_gp, true)?;
        let s = DVector::from_iterator(dim, cand.iter().zip(&theta).map(|(a, b)| a - b));
        // minimizing −f: y = ∇(−f)_new − ∇(−f)_old
        let y = DVector::from_iterator(dim, gc.iter().zip(&g).map(|(a, b)| b - a));
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if !scaled {
                hinv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(dim, dim);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let improvement = fc - f;
        theta = cand;
        current = cand_gp;
        f = fc;
        g = gc;
        if improvement <= tol * (1.0 + f.abs()) {
            break;
        }
    }
    // clamping to the parameter box can start us below the caller's point
    if start_value > f {
        return Ok((gp.clone(), start_value));
    }
    Ok((current, f))
}

/// Weighted maximum likelihood over mean, length scale and channel
/// covariance for every smoothness in the grid; returns the best.
pub fn fit_gp(segments: &[WeightedMarks<'_>], init: &GpParams, cfg: &GpFitConfig) -> Result<GpParams> {
    if cfg.smoothness_grid.is_empty() || cfg.smoothness_grid.contains(&0) {
        return Err(Error::Parameter("smoothness grid must be non-empty positive integers".into()));
    }
    let prep = prepare_all(segments, init.n_channels())?;
    let mut best: Option<(GpParams, f64)> = None;
    for &nu in &cfg.smoothness_grid {
        let start = with_gls_mean(&prep, &GpParams { smoothness: nu, ..init.clone() })?;
        let (gp, value) = ascend(&prep, &start, cfg.max_iters, cfg.tol)?;
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((gp, value));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}

/// A few ascent iterations at the current smoothness; the result never has a
/// lower weighted likelihood than `init`.
pub fn refine_gp(segments: &[WeightedMarks<'_>], init: &GpParams, max_iters: usize) -> Result<GpParams> {
    let prep = prepare_all(segments, init.n_channels())?;
    let start = with_gls_mean(&prep, init)?;
    Ok(ascend(&prep, &start, max_iters, 1e-10)?.0)
}

/// Weighted mean log-likelihood (no gradient).
pub fn weighted_gp_loglik(segments: &[WeightedMarks<'_>], gp: &GpParams) -> Result<f64> {
    let prep = prepare_all(segments, gp.n_channels())?;
    Ok(objective(&prep, gp, false)?.0)
}
