//! Matérn temporal kernel and the separable multi-channel covariance built
//! from it.
//!
//! The smoothness index `ν` is a positive integer, so the Bessel order is the
//! half-integer `p + 1/2` with `p = ν - 1`, for which the kernel has the
//! closed form
//!
//! ```text
//! k(Δ) = exp(-x) · p!/(2p)! · Σ_{i=0}^{p} (p+i)!/(i!(p-i)!) · (2x)^(p-i),   x = sqrt(2ν-1)·Δ/ℓ
//! ```
//!
//! which reduces to `exp(-Δ/ℓ)` (Ornstein-Uhlenbeck) at `ν = 1`.

use nalgebra::DMatrix;

use super::GpParams;
use crate::error::{Error, Result};

/// Polynomial coefficients `c_j` such that `k = exp(-x) Σ_j c_j x^j`.
fn matern_coefficients(smoothness: u32) -> Vec<f64> {
    let p = (smoothness - 1) as usize;
    let fact = |n: usize| (1..=n).fold(1.0_f64, |acc, k| acc * k as f64);
    let lead = fact(p) / fact(2 * p);
    let mut coeffs = vec![0.0; p + 1];
    for i in 0..=p {
        let c = fact(p + i) / (fact(i) * fact(p - i));
        let power = p - i;
        coeffs[power] = lead * c * 2f64.powi(power as i32);
    }
    coeffs
}

fn check(smoothness: u32, length_scale: f64) -> Result<()> {
    if !(length_scale > 0.0 && length_scale.is_finite()) {
        return Err(Error::Parameter(format!(
            "length_scale must be positive, got {length_scale}"
        )));
    }
    if smoothness == 0 {
        return Err(Error::Parameter("smoothness must be >= 1".into()));
    }
    Ok(())
}

/// Matérn correlation at lag `delta` (hours). `k(0) = 1`.
pub fn matern_kernel(delta: f64, smoothness: u32, length_scale: f64) -> Result<f64> {
    check(smoothness, length_scale)?;
    Ok(MaternKernel::new(smoothness, length_scale).eval(delta))
}

/// Precomputed Matérn kernel for repeated evaluation.
#[derive(Debug, Clone)]
pub struct MaternKernel {
    coeffs: Vec<f64>,
    rate: f64,
    length_scale: f64,
}

impl MaternKernel {
    /// Callers must have checked `length_scale > 0` and `smoothness >= 1`.
    pub fn new(smoothness: u32, length_scale: f64) -> Self {
        debug_assert!(smoothness >= 1 && length_scale > 0.0);
        Self {
            coeffs: matern_coefficients(smoothness),
            rate: f64::from(2 * smoothness - 1).sqrt() / length_scale,
            length_scale,
        }
    }

    pub fn eval(&self, delta: f64) -> f64 {
        let x = self.rate * delta.abs();
        let poly = self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        (-x).exp() * poly
    }

    /// Derivative of the kernel with respect to `ln ℓ`.
    pub fn dlog_length_scale(&self, delta: f64) -> f64 {
        let x = self.rate * delta.abs();
        let poly = self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        let dpoly = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &c)| acc * x + j as f64 * c);
        // dk/dx = e^{-x}(P' - P), dx/dlnℓ = -x
        -x * (-x).exp() * (dpoly - poly)
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }
}

/// Position of one observed scalar inside a stacked mark vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsIndex {
    pub time: usize,
    pub channel: usize,
}

/// Lists observed (time, channel) pairs in time-major order.
pub fn observed_layout(masks: &[Vec<bool>]) -> Vec<ObsIndex> {
    masks
        .iter()
        .enumerate()
        .flat_map(|(time, m)| {
            m.iter()
                .enumerate()
                .filter(|(_, &present)| present)
                .map(move |(channel, _)| ObsIndex { time, channel })
        })
        .collect()
}

/// Covariance over the observed entries: `Σ[r,g]·k(|t - t'|)` plus jitter on
/// the diagonal. Missing channels are dropped (exact marginalization).
pub fn build_covariance(times: &[f64], masks: &[Vec<bool>], gp: &GpParams) -> Result<DMatrix<f64>> {
    check(gp.smoothness, gp.length_scale)?;
    if times.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} times but {} masks",
            times.len(),
            masks.len()
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("times must be nondecreasing".into()));
    }
    let layout = observed_layout(masks);
    Ok(covariance_for_layout(times, &layout, gp, &MaternKernel::new(gp.smoothness, gp.length_scale)))
}

pub(crate) fn covariance_for_layout(
    times: &[f64],
    layout: &[ObsIndex],
    gp: &GpParams,
    kernel: &MaternKernel,
) -> DMatrix<f64> {
    let n = layout.len();
    let jitter = gp.jitter_value();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let (oa, ob) = (layout[a], layout[b]);
            let v = gp.channel_cov[oa.channel][ob.channel] * kernel.eval(times[oa.time] - times[ob.time]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
        k[(a, a)] += jitter;
    }
    k
}
