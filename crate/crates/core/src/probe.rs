//! Linear probing of learned embeddings: ridge-regularized least squares
//! from feature vectors to targets, scored by pooled R² on held-out data.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub struct LinearProbe {
    /// [dim + 1, targets] including the bias row.
    weights: DMatrix<f64>,
}

impl LinearProbe {
    /// Fits `targets ≈ [features, 1] @ W` with a small ridge term.
    pub fn fit(features: &[Vec<f64>], targets: &[Vec<f64>], ridge: f64) -> Result<LinearProbe> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(Error::Input(format!(
                "probe needs matching non-empty sets, got {} / {}",
                features.len(),
                targets.len()
            )));
        }
        let n = features.len();
        let d = features[0].len() + 1;
        let k = targets[0].len();
        let x = DMatrix::from_fn(n, d, |r, c| {
            if c + 1 == d {
                1.0
            } else {
                features[r][c]
            }
        });
        let y = DMatrix::from_fn(n, k, |r, c| targets[r][c]);
        let xtx = x.transpose() * &x + DMatrix::identity(d, d) * ridge;
        let xty = x.transpose() * y;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Numeric {
                step: 0,
                detail: "probe normal equations not positive definite".into(),
            })?;
        Ok(LinearProbe {
            weights: chol.solve(&xty),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let d = self.weights.nrows();
        let k = self.weights.ncols();
        let mut out = vec![0.0; k];
        for c in 0..k {
            let mut v = self.weights[(d - 1, c)];
            for (i, f) in features.iter().enumerate() {
                v += f * self.weights[(i, c)];
            }
            out[c] = v;
        }
        out
    }
}

/// Pooled coefficient of determination over all target dimensions:
/// 1 − Σ‖ŷ−y‖² / Σ‖y−ȳ‖², with ȳ the evaluation-set mean.
pub fn pooled_r2(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let n = targets.len();
    let k = targets[0].len();
    let mut mean = vec![0.0; k];
    for t in targets {
        for (m, v) in mean.iter_mut().zip(t) {
            *m += v / n as f64;
        }
    }
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        for c in 0..k {
            ss_res += (p[c] - t[c]) * (p[c] - t[c]);
            ss_tot += (t[c] - mean[c]) * (t[c] - mean[c]);
        }
    }
    1.0 - ss_res / ss_tot
}
