use crate::error::{Error, Result};
use crate::model::GammaParams;

pub const MAX_SHAPE: f64 = 1e6;

/// Closed-form Gamma fit from the dispersion statistic
/// `v = ln(mean) − mean(ln x)`:
///
/// ```text
/// k̂ = (3 − v + sqrt((v − 3)² + 24 v)) / (12 v),   θ̂ = mean / k̂
/// ```
///
/// Optional weights give weighted means. When `v <= 1e-12` (all samples
/// equal) the error carries a capped-shape fallback.
pub fn fit_gamma_mle(samples: &[f64], weights: Option<&[f64]>) -> Result<GammaParams> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("Gamma fit needs >= 2 samples, got {}", samples.len())));
    }
    if let Some(&bad) = samples.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Precondition(format!("Gamma samples must be positive, got {bad}")));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    if let Some(ws) = weights {
        if ws.len() != samples.len() {
            return Err(Error::ShapeMismatch(format!("{} weights for {} samples", ws.len(), samples.len())));
        }
        if ws.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Precondition("weights must be finite and >= 0".into()));
        }
    }
    let total: f64 = (0..samples.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::InsufficientData("Gamma fit has zero total weight".into()));
    }
    let mean = (0..samples.len()).map(|i| w(i) * samples[i]).sum::<f64>() / total;
    let mean_log = (0..samples.len()).map(|i| w(i) * samples[i].ln()).sum::<f64>() / total;
    let v = mean.ln() - mean_log;
    if v <= 1e-12 {
        return Err(Error::DegenerateDispersion {
            v,
            fallback: GammaParams::new(MAX_SHAPE, mean / MAX_SHAPE),
        });
    }
    let shape = ((3.0 - v + ((v - 3.0).powi(2) + 24.0 * v).sqrt()) / (12.0 * v)).min(MAX_SHAPE);
    Ok(GammaParams::new(shape, mean / shape))
}

/// [`fit_gamma_mle`], falling back to the capped estimate on degenerate data.
pub fn fit_gamma_or_capped(samples: &[f64], weights: Option<&[f64]>) -> Result<GammaParams> {
    match fit_gamma_mle(samples, weights) {
        Err(Error::DegenerateDispersion { fallback, .. }) => Ok(fallback),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{nelder_mead, NelderMeadConfig};
    use crate::rng::stream;
    use rand_distr::{Distribution, Gamma};

    #[test]
    fn closed_form_on_small_sample() {
        let g = fit_gamma_mle(&[1.0, 2.0, 3.0], None).unwrap();
        assert!((g.shape - 5.371_02).abs() < 1e-4, "{g:?}");
        assert!((g.scale - 0.372_37).abs() < 1e-5, "{g:?}");
    }

    #[test]
    fn close_to_numerical_maximizer() {
        let xs = [1.0, 2.0, 3.0];
        let nll = |p: &[f64]| -> f64 {
            let g = GammaParams::new(p[0].exp(), p[1].exp());
            -xs.iter().map(|&x| g.ln_pdf(x)).sum::<f64>()
        };
        let m = nelder_mead(nll, &[0.0, 0.0], &NelderMeadConfig { max_iters: 5000, ..Default::default() }).unwrap();
        let exact_shape = m.x[0].exp();
        let g = fit_gamma_mle(&xs, None).unwrap();
        assert!((g.shape / exact_shape - 1.0).abs() < 0.02, "{} vs {exact_shape}", g.shape);
    }

    #[test]
    fn recovers_large_sample() {
        let dist = Gamma::new(2.0, 3.0).unwrap();
        let mut rng = stream(21, 0, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let g = fit_gamma_mle(&xs, None).unwrap();
        assert!((g.shape / 2.0 - 1.0).abs() < 0.03, "{g:?}");
        assert!((g.scale / 3.0 - 1.0).abs() < 0.03, "{g:?}");
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let xs = [0.5, 1.7, 2.2, 9.0];
        let a = fit_gamma_mle(&xs, None).unwrap();
        let b = fit_gamma_mle(&xs, Some(&[0.3; 4])).unwrap();
        assert!((a.shape - b.shape).abs() < 1e-12 && (a.scale - b.scale).abs() < 1e-12);
        let c = fit_gamma_mle(&xs, Some(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        let d = fit_gamma_mle(&xs, Some(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((c.shape - d.shape).abs() < 1e-9 * c.shape);
    }

    #[test]
    fn degenerate_dispersion() {
        match fit_gamma_mle(&[2.0, 2.0, 2.0], None) {
            Err(Error::DegenerateDispersion { fallback, .. }) => {
                assert_eq!(fallback.shape, MAX_SHAPE);
                assert!((fallback.mean() - 2.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        assert!(fit_gamma_or_capped(&[2.0, 2.0], None).is_ok());
    }

    #[test]
    fn input_errors() {
        assert!(matches!(fit_gamma_mle(&[1.0], None), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_gamma_mle(&[1.0, 0.0], None), Err(Error::Precondition(_))));
        assert!(matches!(fit_gamma_mle(&[1.0, 2.0], Some(&[0.0, 0.0])), Err(Error::InsufficientData(_))));
    }
}
