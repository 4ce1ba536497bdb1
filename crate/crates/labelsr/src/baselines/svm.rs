//! Soft-margin SVM with an RBF kernel, trained by sequential minimal
//! optimization, with a logistic (Platt) map from margins to
//! probabilities.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::seed::{self, tag};

use super::{validate_fit, validate_predict, ProbClassifier};

/// Minimum relative change in a multiplier for a pair step to count as
/// progress.
const STEP_EPS: f64 = 1e-10;
/// Multipliers below this are treated as zero when extracting support
/// vectors.
const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvmConfig {
    /// Box constraint on the dual variables.
    pub c: f64,
    /// RBF width; `None` selects 1/(d · var(x)) from the training data.
    pub gamma: Option<f64>,
    /// KKT tolerance that decides when a multiplier is worth optimizing.
    pub tol: f64,
    /// Upper bound on optimization sweeps before giving up.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, gamma: None, tol: 1e-3, max_sweeps: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Svm {
    dims: usize,
    gamma: f64,
    support: Array2<f64>,
    support_indices: Vec<usize>,
    /// alpha_i · y_i for each support vector.
    coeffs: Vec<f64>,
    bias: f64,
    platt_a: f64,
    platt_b: f64,
    converged: bool,
    dual_objectives: Vec<f64>,
    max_kkt_violation: f64,
}

impl Svm {
    pub fn fit(x: &Array2<f64>, y: &[u8], config: &SvmConfig) -> Result<Self> {
        let (n, d) = validate_fit(x, y, true)?;
        let gamma = match config.gamma {
            Some(g) => g,
            None => {
                let total = x.len() as f64;
                let mean = x.sum() / total;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total;
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0 / d as f64
                }
            }
        };

        let mut solver = Smo::new(x, y, gamma, config);
        solver.run();

        // Decision values on the training set come straight from the
        // error cache (E_i = f(x_i) − y_i); reuse them for Platt scaling.
        let decisions: Vec<f64> =
            (0..n).map(|i| solver.errors[i] + solver.y[i]).collect();
        let (platt_a, platt_b) = fit_platt_sigmoid(&decisions, y);

        let mut support = Vec::new();
        let mut support_indices = Vec::new();
        let mut coeffs = Vec::new();
        for i in 0..n {
            if solver.alpha[i] > ALPHA_EPS {
                support.extend(x.row(i).iter().copied());
                support_indices.push(i);
                coeffs.push(solver.alpha[i] * solver.y[i]);
            }
        }
        let support =
            Array2::from_shape_vec((support_indices.len(), d), support).unwrap();

        if !solver.converged {
            log::warn!(
                "SMO stopped after {} sweeps with max KKT violation {:.2e}",
                solver.sweeps,
                solver.max_kkt_violation()
            );
        }
        let max_kkt_violation = solver.max_kkt_violation();
        Ok(Svm {
            dims: d,
            gamma,
            support,
            support_indices,
            coeffs,
            bias: solver.b,
            platt_a,
            platt_b,
            converged: solver.converged,
            dual_objectives: solver.objectives,
            max_kkt_violation,
        })
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Dual objective recorded after every optimization sweep.
    pub fn dual_objectives(&self) -> &[f64] {
        &self.dual_objectives
    }

    pub fn max_kkt_violation(&self) -> f64 {
        self.max_kkt_violation
    }

    pub fn support_indices(&self) -> &[usize] {
        &self.support_indices
    }

    pub fn n_support(&self) -> usize {
        self.support_indices.len()
    }

    /// Signed margin Σ αᵢyᵢ k(xᵢ, x) + b.
    pub fn decision(&self, row: &[f64]) -> f64 {
        let mut f = self.bias;
        for (sv, &coeff) in self.support.rows().into_iter().zip(&self.coeffs) {
            let mut dist2 = 0.0;
            for (a, b) in sv.iter().zip(row) {
                let diff = a - b;
                dist2 += diff * diff;
            }
            f += coeff * (-self.gamma * dist2).exp();
        }
        f
    }
}

impl ProbClassifier for Svm {
    fn name(&self) -> &'static str {
        "svm"
    }

    fn input_dims(&self) -> usize {
        self.dims
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        validate_predict(self.dims, x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let f = self.decision(row.as_slice().unwrap());
                platt_probability(f, self.platt_a, self.platt_b)
            })
            .collect())
    }
}

/// The pairwise optimizer state. Labels are stored as ±1.
struct Smo {
    y: Vec<f64>,
    kernel: Vec<f64>,
    n: usize,
    alpha: Vec<f64>,
    errors: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    max_sweeps: usize,
    sweeps: usize,
    converged: bool,
    objectives: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Smo {
    fn new(x: &Array2<f64>, y_raw: &[u8], gamma: f64, config: &SvmConfig) -> Self {
        let n = y_raw.len();
        let y: Vec<f64> = y_raw.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut kernel = vec![0.0f64; n * n];
        for i in 0..n {
            kernel[i * n + i] = 1.0;
            let ri = x.row(i);
            for j in i + 1..n {
                let mut dist2 = 0.0;
                for (a, b) in ri.iter().zip(x.row(j)) {
                    let diff = a - b;
                    dist2 += diff * diff;
                }
                let k = (-gamma * dist2).exp();
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
            }
        }
        // With every alpha at zero, f(x) = 0 and E_i = −y_i.
        let errors: Vec<f64> = y.iter().map(|&yi| -yi).collect();
        Smo {
            y,
            kernel,
            n,
            alpha: vec![0.0; n],
            errors,
            b: 0.0,
            c: config.c,
            tol: config.tol,
            max_sweeps: config.max_sweeps,
            sweeps: 0,
            converged: false,
            objectives: Vec::new(),
            rng: seed::rng(config.seed, &[tag::SVM]),
        }
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n + j]
    }

    /// Dual objective W(α) = Σα − ½ ΣΣ αᵢαⱼyᵢyⱼKᵢⱼ (maximized).
    fn dual_objective(&self) -> f64 {
        let active: Vec<usize> =
            (0..self.n).filter(|&i| self.alpha[i] > 0.0).collect();
        let mut quad = 0.0;
        for &i in &active {
            for &j in &active {
                quad += self.alpha[i] * self.alpha[j] * self.y[i] * self.y[j] * self.k(i, j);
            }
        }
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }

    fn run(&mut self) {
        let mut examine_all = true;
        loop {
            let mut changed = 0usize;
            if examine_all {
                for i in 0..self.n {
                    changed += self.examine(i) as usize;
                }
            } else {
                for i in 0..self.n {
                    if self.alpha[i] > 0.0 && self.alpha[i] < self.c {
                        changed += self.examine(i) as usize;
                    }
                }
            }
            self.sweeps += 1;
            self.objectives.push(self.dual_objective());
            if examine_all {
                if changed == 0 {
                    self.converged = true;
                    return;
                }
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
            if self.sweeps >= self.max_sweeps {
                return;
            }
        }
    }

    fn examine(&mut self, i2: usize) -> bool {
        let y2 = self.y[i2];
        let alph2 = self.alpha[i2];
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates = (r2 < -self.tol && alph2 < self.c) || (r2 > self.tol && alph2 > 0.0);
        if !violates {
            return false;
        }

        // First preference: the non-bound point with the largest |E1 − E2|.
        let non_bound: Vec<usize> = (0..self.n)
            .filter(|&i| self.alpha[i] > 0.0 && self.alpha[i] < self.c)
            .collect();
        if non_bound.len() > 1 {
            let mut best = None;
            let mut best_gap = -1.0;
            for &i in &non_bound {
                if i == i2 {
                    continue;
                }
                let gap = (self.errors[i] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        // Second: every non-bound point, starting at a random offset.
        if !non_bound.is_empty() {
            let start = self.rng.gen_range(0..non_bound.len());
            for off in 0..non_bound.len() {
                let i1 = non_bound[(start + off) % non_bound.len()];
                if i1 != i2 && self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        // Last resort: the whole set, starting at a random offset.
        let start = self.rng.gen_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if i1 != i2 && self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (alph1, alph2) = (self.alpha[i1], self.alpha[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;

        let (low, high) = if s < 0.0 {
            ((alph2 - alph1).max(0.0), (self.c + alph2 - alph1).min(self.c))
        } else {
            ((alph1 + alph2 - self.c).max(0.0), (alph1 + alph2).min(self.c))
        };
        if low >= high {
            return false;
        }

        let k11 = self.k(i1, i1);
        let k12 = self.k(i1, i2);
        let k22 = self.k(i2, i2);
        let eta = k11 + k22 - 2.0 * k12;

        let a2 = if eta > 0.0 {
            (alph2 + y2 * (e1 - e2) / eta).clamp(low, high)
        } else {
            // Flat (or degenerate) direction: compare the restricted
            // objective at both clip ends. u_j excludes the bias, which
            // cancels out of the dual.
            let u1 = e1 + y1 - self.b;
            let u2 = e2 + y2 - self.b;
            let v1 = u1 - y1 * alph1 * k11 - y2 * alph2 * k12;
            let v2 = u2 - y1 * alph1 * k12 - y2 * alph2 * k22;
            let psi = |a2: f64| {
                let a1 = alph1 + s * (alph2 - a2);
                0.5 * k11 * a1 * a1 + 0.5 * k22 * a2 * a2 + s * k12 * a1 * a2
                    + y1 * a1 * v1
                    + y2 * a2 * v2
                    - a1
                    - a2
            };
            let (psi_low, psi_high) = (psi(low), psi(high));
            if psi_low < psi_high - 1e-12 {
                low
            } else if psi_low > psi_high + 1e-12 {
                high
            } else {
                return false;
            }
        };
        // Snap to the box corners so bound/non-bound classification stays
        // exact despite rounding in the update arithmetic.
        let snap = 1e-12 * self.c;
        let a2 = if a2 < snap {
            0.0
        } else if a2 > self.c - snap {
            self.c
        } else {
            a2
        };
        if (a2 - alph2).abs() < STEP_EPS * (a2 + alph2 + STEP_EPS) {
            return false;
        }
        let a1 = (alph1 + s * (alph2 - a2)).clamp(0.0, self.c);
        let a1 = if a1 < snap {
            0.0
        } else if a1 > self.c - snap {
            self.c
        } else {
            a1
        };

        let d1 = y1 * (a1 - alph1);
        let d2 = y2 * (a2 - alph2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let new_b = if a1 > 0.0 && a1 < self.c {
            b1
        } else if a2 > 0.0 && a2 < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_b - self.b;
        for k in 0..self.n {
            self.errors[k] += d1 * self.k(i1, k) + d2 * self.k(i2, k) + db;
        }
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;
        self.b = new_b;
        true
    }

    /// Largest KKT violation y·E in the wrong direction over all points.
    fn max_kkt_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let r = self.y[i] * self.errors[i];
            if self.alpha[i] < self.c {
                worst = worst.max(-r);
            }
            if self.alpha[i] > 0.0 {
                worst = worst.max(r);
            }
        }
        worst
    }
}

/// Maximum-likelihood logistic fit p(y=1|f) = 1/(1+exp(A·f+B)) on
/// decision values, by Newton's method with backtracking and smoothed
/// targets (N+1)/(N+2).
fn fit_platt_sigmoid(decisions: &[f64], labels: &[u8]) -> (f64, f64) {
    let n1 = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n0 = labels.len() as f64 - n1;
    let hi = (n1 + 1.0) / (n1 + 2.0);
    let lo = 1.0 / (n0 + 2.0);
    let targets: Vec<f64> =
        labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();

    let nll = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&targets)
            .map(|(&f, &t)| {
                let z = a * f + b;
                if z >= 0.0 {
                    t * z + (1.0 + (-z).exp()).ln()
                } else {
                    (t - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0f64;
    let mut b = ((n0 + 1.0) / (n1 + 1.0)).ln();
    let mut fval = nll(a, b);
    const SIGMA: f64 = 1e-12;
    const MIN_STEP: f64 = 1e-10;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21) = (SIGMA, SIGMA, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let z = a * f + b;
            let p = if z >= 0.0 {
                (-z).exp() / (1.0 + (-z).exp())
            } else {
                1.0 / (1.0 + z.exp())
            };
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(h11 * g2 - h21 * g1) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (a, b)
}

fn platt_probability(decision: f64, a: f64, b: f64) -> f64 {
    let z = a * decision + b;
    // p(y=1) = 1/(1+exp(z)); evaluate on the numerically safe side.
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{train_accuracy, two_gaussian_toy};
    use super::*;
    use ndarray::concatenate;
    use ndarray::Axis;

    #[test]
    fn separable_toy_with_large_c_is_perfect() {
        let (x, y) = two_gaussian_toy(50, 6.0, 21);
        let config = SvmConfig { c: 10.0, ..Default::default() };
        let model = Svm::fit(&x, &y, &config).unwrap();
        assert!(model.converged());
        let probs = model.predict_proba(&x).unwrap();
        assert_eq!(train_accuracy(&probs, &y), 1.0);
    }

    #[test]
    fn positive_support_vectors_score_above_half() {
        let (x, y) = two_gaussian_toy(50, 6.0, 22);
        let model = Svm::fit(&x, &y, &SvmConfig::default()).unwrap();
        assert!(model.n_support() > 0);
        let probs = model.predict_proba(&x).unwrap();
        let mut seen_positive_sv = false;
        for &i in model.support_indices() {
            if y[i] == 1 {
                seen_positive_sv = true;
                assert!(probs[i] > 0.5, "positive SV {i} got p={}", probs[i]);
            }
        }
        assert!(seen_positive_sv);
    }

    #[test]
    fn vanishing_gamma_degenerates_to_the_majority_class() {
        // With γ→0 every kernel value is ~1 and margins collapse to a
        // near-constant, so the fitted sigmoid can only express the class
        // ratio. Labels are assigned independently of geometry (30% ones
        // in each cluster) so no residual kernel structure helps.
        let (x, _) = two_gaussian_toy(50, 6.0, 23);
        let y: Vec<u8> = (0..100).map(|i| ((i % 10) < 3) as u8).collect();
        let config = SvmConfig { gamma: Some(1e-8), ..Default::default() };
        let model = Svm::fit(&x, &y, &config).unwrap();
        let probs = model.predict_proba(&x).unwrap();
        let majority_votes = probs.iter().filter(|&&p| p < 0.5).count();
        assert!(majority_votes >= 95, "only {majority_votes}/100 majority predictions");
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        assert!(mean < 0.4, "mean probability {mean}");
    }

    #[test]
    fn dual_objective_never_decreases_across_sweeps() {
        let (x, y) = two_gaussian_toy(60, 2.0, 24); // overlapping → slack active
        let model = Svm::fit(&x, &y, &SvmConfig::default()).unwrap();
        let obj = model.dual_objectives();
        assert!(obj.len() >= 2);
        for w in obj.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "objective dropped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn kkt_conditions_hold_at_convergence() {
        let (x, y) = two_gaussian_toy(60, 4.0, 25);
        let model = Svm::fit(&x, &y, &SvmConfig::default()).unwrap();
        assert!(model.converged());
        assert!(
            model.max_kkt_violation() <= 1e-3 + 1e-9,
            "violation {}",
            model.max_kkt_violation()
        );
    }

    #[test]
    fn duplicated_rows_are_handled() {
        // Identical points give a flat pair direction (eta = 0) — the
        // endpoint-objective branch must not loop or regress.
        let (base, y_base) = two_gaussian_toy(20, 4.0, 26);
        let x = concatenate![Axis(0), base, base];
        let y: Vec<u8> = y_base.iter().chain(&y_base).copied().collect();
        let model = Svm::fit(&x, &y, &SvmConfig::default()).unwrap();
        let probs = model.predict_proba(&x).unwrap();
        assert!(train_accuracy(&probs, &y) >= 0.95);
        for w in model.dual_objectives().windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn sweep_cap_returns_best_iterate_with_flag() {
        let (x, y) = two_gaussian_toy(50, 1.0, 27); // heavily overlapped
        let config = SvmConfig { max_sweeps: 1, ..Default::default() };
        let model = Svm::fit(&x, &y, &config).unwrap();
        assert!(!model.converged());
        // Still usable for prediction.
        let probs = model.predict_proba(&x).unwrap();
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (x, y) = two_gaussian_toy(40, 2.0, 28);
        let config = SvmConfig { seed: 5, ..Default::default() };
        let a = Svm::fit(&x, &y, &config).unwrap();
        let b = Svm::fit(&x, &y, &config).unwrap();
        assert_eq!(
            a.predict_proba(&x).unwrap(),
            b.predict_proba(&x).unwrap()
        );
    }

    #[test]
    fn platt_fit_recovers_a_known_sigmoid() {
        // Decision values from a clean logistic model: P(1|f) = σ(4f).
        // The fitted (A, B) must reproduce those probabilities closely
        // (targets are smoothed, so allow a loose tolerance).
        let mut rng = crate::seed::rng(29, &[97]);
        let mut decisions = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..2000 {
            let f: f64 = rng.gen_range(-2.0..2.0);
            let p = 1.0 / (1.0 + (-4.0 * f).exp());
            decisions.push(f);
            labels.push((rng.gen::<f64>() < p) as u8);
        }
        let (a, b) = fit_platt_sigmoid(&decisions, &labels);
        for &f in &[-1.0f64, -0.3, 0.0, 0.3, 1.0] {
            let want = 1.0 / (1.0 + (-4.0 * f).exp());
            let got = platt_probability(f, a, b);
            assert!(
                (got - want).abs() < 0.05,
                "f={f}: fitted {got:.3} vs true {want:.3}"
            );
        }
    }
}

