//! Built-in parameter sets for experiments and tests.
//!
//! [`reference_model`] is a 4-state model with two marked channels. Its
//! absorbing-state observation processes use intensities learned on a real
//! ward cohort (state 1: `0.55 + 0.2 Σ e^{-8.46 Δ}`, state 4:
//! `0.82 + 0.16 Σ e^{-1.36 Δ}` samples per hour). Everything else (transient
//! Hawkes parameters, all Gamma and GP parameters, the transition kernel) is
//! synthetic and chosen for plausibility only.
//!
//! [`separated_model`] is a synthetic 4-state model whose states are far
//! apart in mark space, used for parameter-recovery experiments.

use crate::model::{GammaParams, GpParams, HawkesParams, ModelParams, StateParams};

fn gp(mean: [f64; 2], smoothness: u32, length_scale: f64, var: f64, corr: f64) -> GpParams {
    GpParams {
        mean: mean.to_vec(),
        smoothness,
        length_scale,
        channel_cov: vec![vec![var, corr * var], vec![corr * var, var]],
        jitter: None,
    }
}

pub fn reference_model() -> ModelParams {
    ModelParams {
        n_states: 4,
        transition: vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.6, 0.0, 0.3, 0.1],
            vec![0.15, 0.25, 0.0, 0.6],
            vec![0.0, 0.0, 0.0, 1.0],
        ],
        initial: vec![0.0, 0.7, 0.3, 0.0],
        states: vec![
            StateParams {
                gamma: GammaParams::new(4.0, 6.0),
                hawkes: HawkesParams::new(0.55, 0.2, 8.46),
                gp: gp([-1.0, -0.5], 1, 3.0, 0.5, 0.2),
            },
            StateParams {
                gamma: GammaParams::new(3.0, 12.0),
                hawkes: HawkesParams::new(0.5, 0.25, 1.0),
                gp: gp([0.5, 0.5], 2, 3.0, 0.5, 0.2),
            },
            StateParams {
                gamma: GammaParams::new(3.0, 8.0),
                hawkes: HawkesParams::new(1.0, 0.5, 2.0),
                gp: gp([2.0, 1.5], 1, 2.0, 0.5, 0.2),
            },
            StateParams {
                gamma: GammaParams::new(4.0, 4.0),
                hawkes: HawkesParams::new(0.82, 0.16, 1.36),
                gp: gp([3.0, 2.5], 1, 2.0, 0.5, 0.2),
            },
        ],
    }
}

pub fn separated_model() -> ModelParams {
    ModelParams {
        n_states: 4,
        transition: vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.4, 0.1],
            vec![0.2, 0.2, 0.0, 0.6],
            vec![0.0, 0.0, 0.0, 1.0],
        ],
        initial: vec![0.0, 0.6, 0.4, 0.0],
        states: vec![
            StateParams {
                gamma: GammaParams::new(5.0, 4.0),
                hawkes: HawkesParams::new(0.6, 0.2, 4.0),
                gp: gp([-4.0, -4.0], 1, 2.0, 0.5, 0.0),
            },
            StateParams {
                gamma: GammaParams::new(4.0, 8.0),
                hawkes: HawkesParams::new(0.5, 0.3, 1.5),
                gp: gp([0.0, 0.0], 1, 2.0, 0.5, 0.0),
            },
            StateParams {
                gamma: GammaParams::new(4.0, 6.0),
                hawkes: HawkesParams::new(1.5, 0.3, 1.5),
                gp: gp([4.0, 4.0], 1, 2.0, 0.5, 0.0),
            },
            StateParams {
                gamma: GammaParams::new(5.0, 4.0),
                hawkes: HawkesParams::new(1.0, 0.3, 1.5),
                gp: gp([8.0, 8.0], 1, 2.0, 0.5, 0.0),
            },
        ],
    }
}
