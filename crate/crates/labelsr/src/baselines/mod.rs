//! Reference inner classifiers: LDA, Gaussian naive Bayes, RBF-kernel SVM,
//! random forest, and a small MLP.
//!
//! All five consume the same (rows × dims) feature matrix with binary
//! labels and emit per-row class-1 probabilities, so they are drop-in
//! alternatives to the KDE inner classifier.

mod gnb;
mod lda;
mod mlp;
mod rf;
mod svm;

pub use gnb::Gnb;
pub use lda::Lda;
pub use mlp::{Mlp, MlpConfig};
pub use rf::{ForestConfig, RandomForest};
pub use svm::{Svm, SvmConfig};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A trained binary classifier producing class-1 probabilities.
pub trait ProbClassifier: Send + Sync {
    fn name(&self) -> &'static str;
    fn input_dims(&self) -> usize;
    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>>;
}

/// Checks a training set: matching lengths, finite values, labels in
/// {0, 1}, and (optionally) at least one example of each class.
/// Returns (n_rows, n_dims).
pub(crate) fn validate_fit(
    x: &Array2<f64>,
    y: &[u8],
    require_both_classes: bool,
) -> Result<(usize, usize)> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            n,
            y.len()
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if require_both_classes {
        let n1 = y.iter().filter(|&&l| l == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::invalid("training set must contain both classes"));
        }
    }
    Ok((n, d))
}

pub(crate) fn validate_predict(model_dims: usize, x: &Array2<f64>) -> Result<()> {
    if x.ncols() != model_dims {
        return Err(Error::invalid(format!(
            "model expects {} dims, got {}",
            model_dims,
            x.ncols()
        )));
    }
    Ok(())
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}
