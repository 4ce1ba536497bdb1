//! Gaussian kernel density estimation and the two-class Bayes posterior.
//!
//! Each class gets its own KDE over the selected bands: a product Gaussian
//! kernel with one Scott's-rule bandwidth per dimension. Densities are
//! evaluated in log space (log-sum-exp), so posteriors stay well defined
//! hundreds of nats away from the training data.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct KdeModel {
    data: Array2<f64>,
    bandwidths: Vec<f64>,
    /// ln(n) + sum_j ln(h_j) + d/2 * ln(2*pi); subtracted from every
    /// log-sum-exp so `log_density` is properly normalized.
    log_norm: f64,
}

fn check_finite(data: &ArrayView2<f64>) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data must be finite"));
    }
    Ok(())
}

/// Per-dimension Scott's rule: `scale * sigma_j * n^(-1/(d+4))` with the
/// population standard deviation. Dimensions with zero spread, or a
/// single-point fit, fall back to a bandwidth of 1.
pub fn scott_bandwidths(data: &ArrayView2<f64>, scale: f64) -> Vec<f64> {
    let (n, d) = (data.nrows(), data.ncols());
    let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            if n <= 1 {
                return 1.0;
            }
            let col = data.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sigma = var.sqrt();
            if sigma == 0.0 {
                1.0
            } else {
                scale * sigma * factor
            }
        })
        .collect()
}

impl KdeModel {
    /// Fits a KDE with Scott's-rule bandwidths scaled by `bandwidth_scale`.
    pub fn fit(data: Array2<f64>, bandwidth_scale: f64) -> Result<Self> {
        if bandwidth_scale <= 0.0 {
            return Err(Error::invalid("bandwidth scale must be positive"));
        }
        let bandwidths = scott_bandwidths(&data.view(), bandwidth_scale);
        Self::with_bandwidths(data, bandwidths)
    }

    /// Fits a KDE with explicit per-dimension bandwidths.
    pub fn with_bandwidths(data: Array2<f64>, bandwidths: Vec<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("KDE needs at least one point and one dimension"));
        }
        check_finite(&data.view())?;
        if bandwidths.len() != data.ncols() {
            return Err(Error::invalid("one bandwidth per dimension required"));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid("bandwidths must be positive and finite"));
        }
        let log_norm = (data.nrows() as f64).ln()
            + bandwidths.iter().map(|h| h.ln()).sum::<f64>()
            + data.ncols() as f64 / 2.0 * LN_2PI;
        Ok(KdeModel { data, bandwidths, log_norm })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Natural log of the density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims() {
            return Err(Error::invalid(format!(
                "query has {} dims, model has {}",
                x.len(),
                self.dims()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query must be finite"));
        }
        // log-sum-exp over the per-point exponents.
        let mut exponents = Vec::with_capacity(self.n());
        for row in self.data.rows() {
            let mut acc = 0.0;
            for ((&v, &q), &h) in row.iter().zip(x).zip(&self.bandwidths) {
                let z = (q - v) / h;
                acc -= 0.5 * z * z;
            }
            exponents.push(acc);
        }
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        Ok(max + sum.ln() - self.log_norm)
    }

    /// Density at `x`. May underflow to zero very far from the data; use
    /// [`log_density`](Self::log_density) where that matters.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }
}

/// Two-class prior. Construction normalizes, so only the ratio matters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrior {
    p0: f64,
    p1: f64,
}

impl ClassPrior {
    pub fn new(w0: f64, w1: f64) -> Result<Self> {
        if w0 < 0.0 || w1 < 0.0 || !(w0 + w1).is_finite() || w0 + w1 <= 0.0 {
            return Err(Error::invalid("prior weights must be non-negative with positive sum"));
        }
        Ok(ClassPrior { p0: w0 / (w0 + w1), p1: w1 / (w0 + w1) })
    }

    pub fn uniform() -> Self {
        ClassPrior { p0: 0.5, p1: 0.5 }
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }
}

/// Posterior evaluation outcome. `used_prior_fallback` marks queries where
/// both scaled class densities vanished and the prior was returned as-is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub p1: f64,
    pub used_prior_fallback: bool,
}

/// Combines class log-densities into p(C1 | x). Kept separate from the
/// models so the degenerate branch is testable on its own.
pub fn combine_log_likelihoods(log_f0: f64, log_f1: f64, prior: &ClassPrior) -> Posterior {
    let a = prior.p0.ln() + log_f0; // log p(C0) f0(x)
    let b = prior.p1.ln() + log_f1; // log p(C1) f1(x)
    if !a.is_finite() && !b.is_finite() {
        return Posterior { p1: prior.p1, used_prior_fallback: true };
    }
    // p1 = 1 / (1 + exp(a - b)), computed on the side that cannot overflow.
    let p1 = if b >= a {
        1.0 / (1.0 + (a - b).exp())
    } else {
        let e = (b - a).exp();
        e / (1.0 + e)
    };
    Posterior { p1, used_prior_fallback: false }
}

/// p(C1 | x) from the two class-conditional KDEs and the prior.
pub fn posterior(
    class0: &KdeModel,
    class1: &KdeModel,
    prior: &ClassPrior,
    x: &[f64],
) -> Result<Posterior> {
    if class0.dims() != class1.dims() {
        return Err(Error::invalid("class models must share dimensionality"));
    }
    let log_f0 = class0.log_density(x)?;
    let log_f1 = class1.log_density(x)?;
    Ok(combine_log_likelihoods(log_f0, log_f1, prior))
}
