use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    /// Initial vertex offset, relative to `max(|x0_i|, 1)`.
    pub initial_simplex_scale: f64,
    pub max_iters: usize,
    pub tol_f: f64,
    pub tol_x: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            initial_simplex_scale: 0.1,
            max_iters: 500,
            tol_f: 1e-8,
            tol_x: 1e-8,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

impl NelderMeadConfig {
    fn check(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.initial_simplex_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("inadmissible Nelder-Mead coefficients: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative-free minimization. Non-finite objective values are treated
/// as `+∞`, so infeasible regions can be expressed by returning `NaN` or
/// `+∞`. Stops when both the spread of simplex values is below `tol_f` and
/// the simplex diameter is below `tol_x`, or after `max_iters`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.check()?;
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(Error::Precondition(format!("objective is not finite at the starting point ({f0})")));
    }
    let n = x0.len();
    if n == 0 {
        return Ok(Minimum { x: Vec::new(), value: f0, iterations: 0 });
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.initial_simplex_scale * x0[i].abs().max(1.0);
        let v = eval(&x);
        simplex.push((x, v));
    }

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect() };

    let mut iterations = 0;
    while iterations < cfg.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_f = if worst.is_finite() { (worst - best).abs() } else { f64::INFINITY };
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= cfg.tol_f && spread_x <= cfg.tol_x {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let xr = combine(&centroid, &simplex[n].0, -cfg.reflection);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = combine(&centroid, &simplex[n].0, -cfg.reflection * cfg.expansion);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // contraction, outside if the reflected point beats the worst
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = combine(&centroid, &simplex[n].0, -cfg.reflection * cfg.contraction);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = combine(&centroid, &simplex[n].0, cfg.contraction);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let xs = combine(&x_best, &vertex.0, cfg.shrink);
            let fs = eval(&xs);
            *vertex = (xs, fs);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(Minimum { x, value, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_dimensional_quadratic() {
        let m = nelder_mead(|x| (x[0] - 2.0).powi(2), &[0.0], &NelderMeadConfig::default()).unwrap();
        assert!((m.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn two_dimensional_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 3.0).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0], &NelderMeadConfig::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] + 3.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &NelderMeadConfig::default()).unwrap();
        assert!(m.value < 1e-4, "{m:?}");
        assert!(m.iterations <= 500);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let r = nelder_mead(|_| f64::NAN, &[1.0], &NelderMeadConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 0.2).powi(2) };
        let m = nelder_mead(f, &[2.0], &NelderMeadConfig::default()).unwrap();
        assert!(m.x[0] >= 0.5 && (m.x[0] - 0.5).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn never_worse_than_start(a in -5.0..5.0f64, b in -5.0..5.0f64, c in 0.1..10.0f64) {
            let f = |x: &[f64]| (x[0] * c).sin() + (x[1] - a).abs() + 0.1 * x[0] * x[0];
            let cfg = NelderMeadConfig { max_iters: 50, ..Default::default() };
            let m = nelder_mead(f, &[a, b], &cfg).unwrap();
            prop_assert!(m.value <= f(&[a, b]));
        }
    }
}
