//! GP likelihood of a growing block of marks, one observed scalar at a time.
//!
//! Appending a scalar extends the Cholesky factor by one row, so a block of
//! `n` scalars costs `O(n²)` per append instead of refactoring.

use crate::error::{Error, Result};
use crate::model::{GpParams, MaternKernel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct GpBlock {
    times: Vec<f64>,
    channels: Vec<usize>,
    rows: Vec<Vec<f64>>,
    /// `L⁻¹ (y − μ)`
    z: Vec<f64>,
    half_logdet: f64,
    quad: f64,
}

impl GpBlock {
    pub fn new() -> Self {
        Self { times: Vec::new(), channels: Vec::new(), rows: Vec::new(), z: Vec::new(), half_logdet: 0.0, quad: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Appends the observed channels of one mark vector, in channel order.
    pub fn push(&mut self, t: f64, y: &[f64], mask: &[bool], gp: &GpParams, kernel: &MaternKernel) -> Result<()> {
        let jitter = gp.jitter_value();
        for c in (0..y.len()).filter(|&c| mask[c]) {
            let n = self.len();
            let mut w = Vec::with_capacity(n + 1);
            for i in 0..n {
                let k = gp.channel_cov[self.channels[i]][c] * kernel.eval(self.times[i] - t);
                let dot: f64 = self.rows[i][..i].iter().zip(&w).map(|(a, b)| a * b).sum();
                w.push((k - dot) / self.rows[i][i]);
            }
            let d2 = gp.channel_cov[c][c] + jitter - w.iter().map(|v| v * v).sum::<f64>();
            if !(d2 > 0.0) {
                return Err(Error::Numerical(format!("GP block lost positive definiteness (pivot {d2:e})")));
            }
            let d = d2.sqrt();
            let zi = (y[c] - gp.mean[c] - w.iter().zip(&self.z).map(|(a, b)| a * b).sum::<f64>()) / d;
            w.push(d);
            self.rows.push(w);
            self.times.push(t);
            self.channels.push(c);
            self.z.push(zi);
            self.half_logdet += d.ln();
            self.quad += zi * zi;
        }
        Ok(())
    }

    /// Log-density of everything pushed so far (0 for an empty block).
    pub fn loglik(&self) -> f64 {
        -0.5 * self.quad - self.half_logdet - 0.5 * self.len() as f64 * LN_2PI
    }
}

impl Default for GpBlock {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{gp_marginal_loglik, MarkSegment};
    use crate::reference::reference_model;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn matches_batch_cholesky() {
        let model = reference_model();
        let mut rng = stream(77, 0, 0);
        for state in 0..4 {
            let gp = &model.states[state].gp;
            let kernel = gp.kernel();
            let mut block = GpBlock::new();
            let mut times = Vec::new();
            let mut marks = Vec::new();
            let mut masks = Vec::new();
            let mut t = 0.0;
            for _ in 0..30 {
                t += rng.random::<f64>();
                let y = vec![rng.random::<f64>() * 3.0, rng.random::<f64>() - 1.0];
                let m = vec![rng.random::<f64>() < 0.8, rng.random::<f64>() < 0.7];
                block.push(t, &y, &m, gp, &kernel).unwrap();
                times.push(t);
                marks.push(y);
                masks.push(m);
                if block.is_empty() {
                    continue;
                }
                let batch = gp_marginal_loglik(MarkSegment { times: &times, marks: &marks, masks: &masks }, gp).unwrap();
                assert!((block.loglik() - batch).abs() < 1e-9 * batch.abs().max(1.0), "{} vs {batch}", block.loglik());
            }
        }
    }
}
