//! Gaussian naive Bayes: independent univariate Gaussians per dimension.

use ndarray::Array2;

use crate::error::Result;

use super::{sigmoid, validate_fit, validate_predict, ProbClassifier};

/// Variances below this are clamped; keeps constant features from
/// producing infinite log-likelihoods while still cancelling between
/// classes.
const VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
struct ClassStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    log_prior: f64,
}

#[derive(Debug, Clone)]
pub struct Gnb {
    dims: usize,
    classes: [ClassStats; 2],
}

impl Gnb {
    pub fn fit(x: &Array2<f64>, y: &[u8]) -> Result<Self> {
        let (n, d) = validate_fit(x, y, true)?;

        let mut sum = [vec![0.0f64; d], vec![0.0f64; d]];
        let mut sum_sq = [vec![0.0f64; d], vec![0.0f64; d]];
        let mut count = [0usize; 2];
        for (row, &label) in x.rows().into_iter().zip(y) {
            let c = label as usize;
            count[c] += 1;
            for j in 0..d {
                sum[c][j] += row[j];
                sum_sq[c][j] += row[j] * row[j];
            }
        }
        let classes = [0, 1].map(|c| {
            let nc = count[c] as f64;
            let mean: Vec<f64> = sum[c].iter().map(|s| s / nc).collect();
            let var: Vec<f64> = sum_sq[c]
                .iter()
                .zip(&mean)
                .map(|(sq, m)| (sq / nc - m * m).max(VAR_FLOOR))
                .collect();
            ClassStats { mean, var, log_prior: (nc / n as f64).ln() }
        });
        Ok(Gnb { dims: d, classes })
    }

    fn log_likelihood(&self, row: ndarray::ArrayView1<f64>, c: usize) -> f64 {
        let stats = &self.classes[c];
        let mut ll = 0.0;
        for j in 0..self.dims {
            let z = row[j] - stats.mean[j];
            ll -= 0.5 * (2.0 * std::f64::consts::PI * stats.var[j]).ln();
            ll -= z * z / (2.0 * stats.var[j]);
        }
        ll
    }
}

impl ProbClassifier for Gnb {
    fn name(&self) -> &'static str {
        "gnb"
    }

    fn input_dims(&self) -> usize {
        self.dims
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        validate_predict(self.dims, x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let s0 = self.log_likelihood(row, 0) + self.classes[0].log_prior;
                let s1 = self.log_likelihood(row, 1) + self.classes[1].log_prior;
                sigmoid(s1 - s0)
            })
            .collect())
    }
}
