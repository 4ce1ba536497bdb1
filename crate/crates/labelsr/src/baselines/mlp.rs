//! Single-hidden-layer perceptron with a softmax output, trained by
//! mini-batch SGD on cross-entropy.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::{self, tag};

use super::{validate_fit, validate_predict, ProbClassifier};

#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 64, epochs: 50, lr: 0.01, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: usize,
    w1: Array2<f64>, // hidden × dims
    b1: Array1<f64>,
    w2: Array2<f64>, // 2 × hidden
    b2: Array1<f64>,
    epoch_losses: Vec<f64>,
}

struct Grads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Mlp {
    pub fn fit(x: &Array2<f64>, y: &[u8], config: &MlpConfig) -> Result<Self> {
        let (n, d) = validate_fit(x, y, true)?;
        if config.hidden == 0 || config.batch_size == 0 {
            return Err(Error::invalid("hidden and batch_size must be positive"));
        }

        let mut rng = seed::rng(config.seed, &[tag::MLP]);
        let mut model = Mlp {
            dims: d,
            w1: glorot_uniform(config.hidden, d, &mut rng),
            b1: Array1::zeros(config.hidden),
            w2: glorot_uniform(2, config.hidden, &mut rng),
            b2: Array1::zeros(2),
            epoch_losses: Vec::with_capacity(config.epochs),
        };

        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            // Fisher–Yates with the same stream that initialized the
            // weights, so one seed fixes the entire run.
            for i in (1..n).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let bx = gather_rows(x, batch);
                let by: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
                let (loss, grads) = model.loss_and_grads(&bx, &by);
                if !loss.is_finite() {
                    return Err(Error::numerical(format!(
                        "training diverged at epoch {epoch} (loss {loss})"
                    )));
                }
                epoch_loss += loss * batch.len() as f64;
                model.w1.scaled_add(-config.lr, &grads.w1);
                model.b1.scaled_add(-config.lr, &grads.b1);
                model.w2.scaled_add(-config.lr, &grads.w2);
                model.b2.scaled_add(-config.lr, &grads.b2);
            }
            model.epoch_losses.push(epoch_loss / n as f64);
        }
        Ok(model)
    }

    /// Mean training cross-entropy per epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    /// Forward pass returning per-row class probabilities (k × 2).
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut hidden = x.dot(&self.w1.t()) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        softmax_rows(&logits)
    }

    /// Mean cross-entropy, used by the finite-difference gradient checks.
    fn loss(&self, x: &Array2<f64>, y: &[u8]) -> f64 {
        let probs = self.forward(x);
        let mut loss = 0.0;
        for (row, &label) in probs.rows().into_iter().zip(y) {
            loss -= row[label as usize].max(f64::MIN_POSITIVE).ln();
        }
        loss / y.len() as f64
    }

    /// Compares every analytic parameter gradient with a central finite
    /// difference on `(x, y)`. Returns the worst error score: the
    /// relative error where either side exceeds 1e-7 in magnitude, and
    /// the absolute error scaled by 1e4 below that (so a return value
    /// under 1e-4 means 0.01% relative agreement, or 1e-8 absolute for
    /// near-zero gradients).
    pub fn gradient_check(&self, x: &Array2<f64>, y: &[u8]) -> Result<f64> {
        validate_predict(self.dims, x)?;
        if y.len() != x.nrows() || y.is_empty() {
            return Err(Error::invalid("need one label per row"));
        }
        if y.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let (_, grads) = self.loss_and_grads(x, y);

        let eps = 1e-5;
        let mut worst = 0.0f64;
        let mut check = |analytic: f64, perturb: &dyn Fn(&mut Mlp, f64)| {
            let mut plus = self.clone();
            perturb(&mut plus, eps);
            let mut minus = self.clone();
            perturb(&mut minus, -eps);
            let numeric = (plus.loss(x, y) - minus.loss(x, y)) / (2.0 * eps);
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale > 1e-7 {
                (analytic - numeric).abs() / scale
            } else {
                (analytic - numeric).abs() * 1e4
            };
            worst = worst.max(err);
        };

        for i in 0..self.w1.nrows() {
            for j in 0..self.w1.ncols() {
                check(grads.w1[[i, j]], &|m, d| m.w1[[i, j]] += d);
            }
        }
        for i in 0..self.b1.len() {
            check(grads.b1[i], &|m, d| m.b1[i] += d);
        }
        for i in 0..self.w2.nrows() {
            for j in 0..self.w2.ncols() {
                check(grads.w2[[i, j]], &|m, d| m.w2[[i, j]] += d);
            }
        }
        for i in 0..self.b2.len() {
            check(grads.b2[i], &|m, d| m.b2[i] += d);
        }
        Ok(worst)
    }

    fn loss_and_grads(&self, x: &Array2<f64>, y: &[u8]) -> (f64, Grads) {
        let k = y.len() as f64;
        let mut hidden = x.dot(&self.w1.t()) + &self.b1;
        let pre_activation = hidden.clone();
        hidden.mapv_inplace(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        let probs = softmax_rows(&logits);

        let mut loss = 0.0;
        let mut dlogits = probs;
        for (i, &label) in y.iter().enumerate() {
            loss -= dlogits[[i, label as usize]].max(f64::MIN_POSITIVE).ln();
            dlogits[[i, label as usize]] -= 1.0;
        }
        loss /= k;
        dlogits.mapv_inplace(|v| v / k);

        let gw2 = dlogits.t().dot(&hidden);
        let gb2 = dlogits.sum_axis(Axis(0));
        let mut dhidden = dlogits.dot(&self.w2);
        dhidden.zip_mut_with(&pre_activation, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let gw1 = dhidden.t().dot(x);
        let gb1 = dhidden.sum_axis(Axis(0));
        (loss, Grads { w1: gw1, b1: gb1, w2: gw2, b2: gb2 })
    }
}

impl ProbClassifier for Mlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn input_dims(&self) -> usize {
        self.dims
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        validate_predict(self.dims, x)?;
        let probs = self.forward(x);
        Ok(probs.column(1).to_vec())
    }
}

fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut w = Array2::zeros((rows, cols));
    for v in w.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    w
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn gather_rows(x: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), x.ncols()));
    for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
        row.assign(&x.row(i));
    }
    out
}
