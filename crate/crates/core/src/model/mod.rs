//! Parameter bundle and episode types for the semi-Markov-modulated marked
//! Hawkes process.
//!
//! States are 0-based in memory. State `0` is the stable absorbing state,
//! state `n_states - 1` the deteriorating absorbing state, everything in
//! between is transient. JSON documents use 1-based state numbers.

mod episode;
mod hawkes;
mod kernel;

pub use episode::{Episode, Event, Label, StatePath};
pub use hawkes::{compensator_increments, expected_intensity, hawkes_intensity};
pub use kernel::{build_covariance, matern_kernel, observed_layout, MaternKernel, ObsIndex};
pub(crate) use kernel::covariance_for_layout;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Relative jitter used when a [`GpParams`] does not pin one explicitly.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;

/// Observation-process parameters of one state (events per hour).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub base_rate: f64,
    pub excitation: f64,
    pub decay: f64,
}

impl HawkesParams {
    pub fn new(base_rate: f64, excitation: f64, decay: f64) -> Self {
        Self { base_rate, excitation, decay }
    }

    pub fn branching_ratio(&self) -> f64 {
        self.excitation / self.decay
    }

    fn violations(&self, who: &str, out: &mut Vec<String>) {
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            out.push(format!("{who}: hawkes base_rate must be > 0 (got {})", self.base_rate));
        }
        if !(self.excitation >= 0.0 && self.excitation.is_finite()) {
            out.push(format!("{who}: hawkes excitation must be >= 0 (got {})", self.excitation));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            out.push(format!("{who}: hawkes decay must be > 0 (got {})", self.decay));
        } else if self.branching_ratio() >= 1.0 {
            out.push(format!(
                "{who}: stationarity violated, excitation/decay = {} >= 1",
                self.branching_ratio()
            ));
        }
    }
}

/// Sojourn (or response-time) distribution, shape/scale parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self { shape, scale }
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let k = self.shape;
        (k - 1.0) * x.ln() - x / self.scale - ln_gamma(k) - k * self.scale.ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, x / self.scale)
        }
    }

    /// `ln P(D > x)`, accurate deep into the upper tail.
    pub fn ln_sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let z = x / self.scale;
        let a = self.shape;
        let q = gamma_ur(a, z);
        if q > 1e-280 {
            return q.ln();
        }
        // Γ(a, z) ~ z^{a-1} e^{-z} / (1 - (a-1)/z) for z ≫ a
        let corr = if z > a { -(1.0 - (a - 1.0) / z).ln() } else { 0.0 };
        (a - 1.0) * z.ln() - z - ln_gamma(a) + corr
    }

    /// `ln P(lo < D <= hi)`.
    pub fn ln_interval(&self, lo: f64, hi: f64) -> f64 {
        debug_assert!(hi >= lo);
        if hi <= lo {
            return f64::NEG_INFINITY;
        }
        let lo = lo.max(0.0);
        let p_lo = self.cdf(lo);
        let mass = if p_lo < 0.5 {
            let d = self.cdf(hi) - p_lo;
            if d > 0.0 {
                d.ln()
            } else {
                f64::NAN
            }
        } else {
            let (a, b) = (self.ln_sf(lo), self.ln_sf(hi));
            let r = (b - a).exp();
            if r < 1.0 {
                a + (-r).ln_1p()
            } else {
                f64::NAN
            }
        };
        if mass.is_finite() {
            mass
        } else {
            // interval below floating resolution of the CDF
            self.ln_pdf(0.5 * (lo + hi)) + (hi - lo).ln()
        }
    }

    fn violations(&self, who: &str, out: &mut Vec<String>) {
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            out.push(format!("{who}: gamma shape must be > 0 (got {})", self.shape));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            out.push(format!("{who}: gamma scale must be > 0 (got {})", self.scale));
        }
    }
}

/// Multi-task GP parameters: constant per-channel mean, Matérn temporal
/// kernel and an intrinsic channel covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub mean: Vec<f64>,
    pub smoothness: u32,
    pub length_scale: f64,
    pub channel_cov: Vec<Vec<f64>>,
    /// Diagonal jitter. `None` means `1e-6 · max(diag(channel_cov))`.
    #[serde(default)]
    pub jitter: Option<f64>,
}

impl GpParams {
    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn jitter_value(&self) -> f64 {
        self.jitter.unwrap_or_else(|| {
            let max_diag = (0..self.channel_cov.len())
                .map(|r| self.channel_cov[r][r])
                .fold(0.0, f64::max);
            DEFAULT_RELATIVE_JITTER * max_diag
        })
    }

    pub fn kernel(&self) -> MaternKernel {
        MaternKernel::new(self.smoothness, self.length_scale)
    }

    fn violations(&self, who: &str, out: &mut Vec<String>) {
        let q = self.mean.len();
        if q == 0 {
            out.push(format!("{who}: gp mean must have at least one channel"));
        }
        if self.smoothness == 0 {
            out.push(format!("{who}: gp smoothness must be a positive integer"));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            out.push(format!("{who}: gp length_scale must be > 0 (got {})", self.length_scale));
        }
        if let Some(j) = self.jitter {
            if !(j >= 0.0 && j.is_finite()) {
                out.push(format!("{who}: gp jitter must be >= 0 (got {j})"));
            }
        }
        if self.channel_cov.len() != q || self.channel_cov.iter().any(|r| r.len() != q) {
            out.push(format!("{who}: gp channel_cov must be {q}x{q}"));
            return;
        }
        let m = nalgebra::DMatrix::from_fn(q, q, |r, c| self.channel_cov[r][c]);
        if (&m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
            out.push(format!("{who}: gp channel_cov is not symmetric"));
            return;
        }
        if m.iter().any(|v| !v.is_finite()) {
            out.push(format!("{who}: gp channel_cov has non-finite entries"));
            return;
        }
        let min_eig = m.symmetric_eigenvalues().min();
        if min_eig < -1e-10 * m.abs().max().max(1.0) {
            out.push(format!("{who}: gp channel_cov is not positive-semidefinite (eigenvalue {min_eig})"));
        }
    }
}

/// Per-state emission parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    pub gamma: GammaParams,
    pub hawkes: HawkesParams,
    pub gp: GpParams,
}

/// The full parameter bundle Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ModelParams {
    pub n_states: usize,
    /// Row-stochastic semi-Markov transition kernel.
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub states: Vec<StateParams>,
}

impl ModelParams {
    pub const STABLE: usize = 0;

    pub fn deteriorated(&self) -> usize {
        self.n_states - 1
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        state == Self::STABLE || state == self.deteriorated()
    }

    pub fn transient_states(&self) -> std::ops::Range<usize> {
        1..self.n_states - 1
    }

    /// Absorbing state reached by an episode with this label.
    pub fn absorbing_for(&self, label: Label) -> usize {
        match label {
            Label::Stable => Self::STABLE,
            Label::Deteriorated => self.deteriorated(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.states.first().map_or(0, |s| s.gp.n_channels())
    }

    /// Checks every structural invariant, returning all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut out = Vec::new();
        let n = self.n_states;
        if n < 3 {
            out.push(format!("n_states must be >= 3 (got {n})"));
            return Err(out);
        }
        if self.states.len() != n {
            out.push(format!("expected {n} state parameter blocks, got {}", self.states.len()));
        }
        if self.initial.len() != n {
            out.push(format!("initial distribution must have length {n}"));
        } else {
            if self.initial.iter().any(|&p| !(p >= 0.0 && p <= 1.0)) {
                out.push("initial distribution has entries outside [0, 1]".into());
            }
            let s: f64 = self.initial.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                out.push(format!("initial distribution sums to {s}, not 1"));
            }
        }
        let shape_ok = self.transition.len() == n && self.transition.iter().all(|r| r.len() == n);
        if !shape_ok {
            out.push(format!("transition must be {n}x{n}"));
        } else {
            for (i, row) in self.transition.iter().enumerate() {
                let who = format!("state {}", i + 1);
                if row.iter().any(|&p| !(p >= 0.0 && p <= 1.0)) {
                    out.push(format!("{who}: transition row has entries outside [0, 1]"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    out.push(format!("{who}: transition row sums to {s}, not 1"));
                }
                if self.is_absorbing(i) {
                    if (row[i] - 1.0).abs() > ROW_SUM_TOL {
                        out.push(format!("{who}: absorbing state must have self-transition 1 (got {})", row[i]));
                    }
                } else if row[i] != 0.0 {
                    out.push(format!("{who}: transient self-transition must be 0 (got {})", row[i]));
                }
            }
            if let Some(i) = self.unreachable_absorption() {
                out.push(format!("state {}: no absorbing state is reachable", i + 1));
            }
        }
        let q = self.n_channels();
        for (i, s) in self.states.iter().enumerate() {
            let who = format!("state {}", i + 1);
            s.gamma.violations(&who, &mut out);
            s.hawkes.violations(&who, &mut out);
            s.gp.violations(&who, &mut out);
            if s.gp.n_channels() != q {
                out.push(format!("{who}: gp has {} channels, state 1 has {q}", s.gp.n_channels()));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Like [`validate`](Self::validate) but as a crate error.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidModel)
    }

    fn unreachable_absorption(&self) -> Option<usize> {
        let n = self.n_states;
        let mut reaches = vec![false; n];
        reaches[Self::STABLE] = true;
        reaches[n - 1] = true;
        loop {
            let mut changed = false;
            for i in self.transient_states() {
                if !reaches[i] && (0..n).any(|j| self.transition[i][j] > 0.0 && reaches[j]) {
                    reaches[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.transient_states().find(|&i| !reaches[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parameter(format!("model JSON: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    state: usize,
    gamma: GammaParams,
    hawkes: HawkesParams,
    gp: GpParams,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    n_states: usize,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    states: Vec<StateDoc>,
}

impl TryFrom<ModelDoc> for ModelParams {
    type Error = String;

    fn try_from(doc: ModelDoc) -> std::result::Result<Self, String> {
        let mut states = Vec::with_capacity(doc.states.len());
        for (i, s) in doc.states.into_iter().enumerate() {
            if s.state != i + 1 {
                return Err(format!("states must be listed in order 1..N; entry {} is state {}", i + 1, s.state));
            }
            states.push(StateParams { gamma: s.gamma, hawkes: s.hawkes, gp: s.gp });
        }
        Ok(ModelParams {
            n_states: doc.n_states,
            transition: doc.transition,
            initial: doc.initial,
            states,
        })
    }
}

impl From<ModelParams> for ModelDoc {
    fn from(m: ModelParams) -> Self {
        ModelDoc {
            n_states: m.n_states,
            transition: m.transition,
            initial: m.initial,
            states: m
                .states
                .into_iter()
                .enumerate()
                .map(|(i, s)| StateDoc { state: i + 1, gamma: s.gamma, hawkes: s.hawkes, gp: s.gp })
                .collect(),
        }
    }
}
