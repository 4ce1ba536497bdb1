//! Linear discriminant analysis with a shared (pooled) covariance.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::{sigmoid, validate_fit, validate_predict, ProbClassifier};

/// Two-class Gaussian classifier with equal covariances. The posterior is
/// the logistic function of a linear score
/// `w · (x − midpoint) + ln(π1/π0)` with `w = Σ⁻¹(μ1 − μ0)`, so a point
/// exactly midway between equal-prior class means scores zero.
#[derive(Debug, Clone)]
pub struct Lda {
    dims: usize,
    weights: Vec<f64>,
    midpoint: Vec<f64>,
    prior_logit: f64,
}

impl Lda {
    pub fn fit(x: &Array2<f64>, y: &[u8]) -> Result<Self> {
        let (n, d) = validate_fit(x, y, true)?;

        let mut mean = [vec![0.0f64; d], vec![0.0f64; d]];
        let mut count = [0usize; 2];
        for (row, &label) in x.rows().into_iter().zip(y) {
            count[label as usize] += 1;
            for (m, &v) in mean[label as usize].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..2 {
            for m in mean[c].iter_mut() {
                *m /= count[c] as f64;
            }
        }

        // Pooled covariance over both classes, normalized by the total
        // count so that duplicating the training set leaves the model
        // unchanged.
        let mut cov = Array2::zeros((d, d));
        let mut centered = vec![0.0f64; d];
        for (row, &label) in x.rows().into_iter().zip(y) {
            let mu = &mean[label as usize];
            for j in 0..d {
                centered[j] = row[j] - mu[j];
            }
            for j in 0..d {
                for k in j..d {
                    cov[[j, k]] += centered[j] * centered[k];
                }
            }
        }
        let trace: f64 = (0..d).map(|j| cov[[j, j]]).sum::<f64>() / n as f64;
        let ridge = 1e-6 * trace / d as f64;
        for j in 0..d {
            for k in j..d {
                cov[[j, k]] /= n as f64;
                cov[[k, j]] = cov[[j, k]];
            }
            cov[[j, j]] += ridge;
        }

        let lower = cholesky(cov)?;
        let diff: Vec<f64> = (0..d).map(|j| mean[1][j] - mean[0][j]).collect();
        let weights = cholesky_solve(&lower, &diff);
        let midpoint: Vec<f64> =
            (0..d).map(|j| 0.5 * (mean[0][j] + mean[1][j])).collect();
        let prior_logit = (count[1] as f64 / count[0] as f64).ln();

        Ok(Lda { dims: d, weights, midpoint, prior_logit })
    }
}

impl ProbClassifier for Lda {
    fn name(&self) -> &'static str {
        "lda"
    }

    fn input_dims(&self) -> usize {
        self.dims
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        validate_predict(self.dims, x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let score: f64 = row
                    .iter()
                    .zip(&self.weights)
                    .zip(&self.midpoint)
                    .map(|((&v, &w), &m)| w * (v - m))
                    .sum();
                sigmoid(score + self.prior_logit)
            })
            .collect())
    }
}

/// In-place Cholesky factorization returning the lower triangle; fails on
/// a non-positive pivot (singular or indefinite matrix).
fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    for j in 0..d {
        for k in 0..j {
            let l = a[[j, k]];
            for i in j..d {
                a[[i, j]] -= a[[i, k]] * l;
            }
        }
        let pivot = a[[j, j]];
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(Error::numerical(
                "pooled covariance is singular; features carry no variance",
            ));
        }
        let root = pivot.sqrt();
        for i in j..d {
            a[[i, j]] /= root;
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            a[[j, k]] = 0.0;
        }
    }
    Ok(a)
}

/// Solves `L Lᵀ w = b` by forward then backward substitution.
fn cholesky_solve(lower: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let d = b.len();
    let mut w = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            w[i] -= lower[[i, k]] * w[k];
        }
        w[i] /= lower[[i, i]];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            w[i] -= lower[[k, i]] * w[k];
        }
        w[i] /= lower[[i, i]];
    }
    w
}
