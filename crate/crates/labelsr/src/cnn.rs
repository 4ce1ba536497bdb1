//! The outer classifier: a small convolutional network over log-mel
//! windows, written directly against ndarray.
//!
//! Architecture for a 128×10 input: one valid 2×2 convolution with 32
//! filters (→ 127×9×32, rectified), 2×2 max-pooling with stride 2
//! (→ 63×4×32), a dense layer of 256 rectified units with inverted
//! dropout, and a 2-way softmax. Trained with plain mini-batch SGD on
//! cross-entropy.
//!
//! The element type is generic: `f64` is the reference path (gradient
//! checks demand it), `f32` roughly halves training time and is selected
//! by the experiment configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::postprocess::{reflect_index, ProbSeries};
use crate::seed::{self, tag};

/// Convolution filter count.
pub const N_FILTERS: usize = 32;
/// Dense layer width.
pub const N_HIDDEN: usize = 256;
/// Output classes.
pub const N_CLASSES: usize = 2;
/// Frames before the centre frame in a window.
pub const FRAMES_BEFORE: usize = 5;
/// Frames after the centre frame (window covers [t−5, t+4]).
pub const FRAMES_AFTER: usize = 4;
/// Total window length in frames.
pub const WINDOW_FRAMES: usize = FRAMES_BEFORE + FRAMES_AFTER + 1;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CNN1";
/// Prediction batch size (memory/GEMM-efficiency trade-off).
const PREDICT_BATCH: usize = 128;

/// Element type for network arithmetic: `f32` or `f64`.
pub trait CnnFloat: ndarray::NdFloat {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl CnnFloat for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl CnnFloat for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone)]
pub struct CnnConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig { epochs: 10, lr: 0.01, batch_size: 32, seed: 0 }
    }
}

/// A training example: the window centred on `frame` of a shared feature
/// matrix, carrying a hard label. Windows are materialized lazily per
/// batch, so large training sets cost one `Arc` and two integers each.
#[derive(Debug, Clone)]
pub struct TrainWindow {
    pub feats: Arc<FeatureMatrix>,
    pub frame: usize,
    pub label: u8,
}

/// Layer output shapes implied by the input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnDims {
    pub input: (usize, usize),
    pub conv: (usize, usize, usize),
    pub pool: (usize, usize, usize),
    pub flat: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct CnnModel<F: CnnFloat> {
    bands: usize,
    frames: usize,
    dropout_p: f64,
    /// 32 × 4: one flattened 2×2 kernel per filter, row-major (dr, dc).
    conv_w: Array2<F>,
    conv_b: Array1<F>,
    /// 256 × flat.
    dense_w: Array2<F>,
    dense_b: Array1<F>,
    /// 2 × 256.
    out_w: Array2<F>,
    out_b: Array1<F>,
}

struct Grads<F: CnnFloat> {
    conv_w: Array2<F>,
    conv_b: Array1<F>,
    dense_w: Array2<F>,
    dense_b: Array1<F>,
    out_w: Array2<F>,
    out_b: Array1<F>,
}

/// Everything the backward pass needs from a forward pass.
struct ForwardCache<F: CnnFloat> {
    /// (k·ch·cw) × 4 patch matrix.
    col: Array2<F>,
    /// k × ph × pw × 32 pooled activations.
    pooled: Array4<F>,
    /// Which of the four pooled candidates won (0..4).
    argmax: Array4<u8>,
    /// k × flat view of `pooled` (owned copy used for the dense GEMM).
    flat: Array2<F>,
    /// Rectified dense output before dropout, k × 256.
    dense_act: Array2<F>,
    /// Inverted-dropout scaling actually applied (0 or 1/keep); empty in
    /// evaluation mode.
    dropout: Option<Array2<F>>,
    /// Softmax probabilities, k × 2.
    probs: Array2<F>,
}

impl<F: CnnFloat> CnnModel<F> {
    /// Fresh model with Glorot-uniform weights and zero biases. Draws are
    /// made in f64 so f32 and f64 models share initial values.
    pub fn new(bands: usize, frames: usize, dropout_p: f64, seed: u64) -> Result<Self> {
        if bands < 2 || frames < 2 {
            return Err(Error::invalid("input must be at least 2×2"));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::invalid("dropout probability must be in [0, 1)"));
        }
        let dims = Self::dims_for(bands, frames);
        let mut rng = seed::rng(seed, &[tag::CNN, 0]);
        let mut draw = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((rows, cols));
            for v in w.iter_mut() {
                *v = F::from_f64(rng.gen_range(-limit..limit));
            }
            w
        };
        Ok(CnnModel {
            bands,
            frames,
            dropout_p,
            conv_w: draw(N_FILTERS, 4, 4, 4 * N_FILTERS),
            conv_b: Array1::zeros(N_FILTERS),
            dense_w: draw(N_HIDDEN, dims.flat, dims.flat, N_HIDDEN),
            dense_b: Array1::zeros(N_HIDDEN),
            out_w: draw(N_CLASSES, N_HIDDEN, N_HIDDEN, N_CLASSES),
            out_b: Array1::zeros(N_CLASSES),
        })
    }

    fn dims_for(bands: usize, frames: usize) -> CnnDims {
        let conv = (bands - 1, frames - 1, N_FILTERS);
        let pool = (conv.0 / 2, conv.1 / 2, N_FILTERS);
        CnnDims {
            input: (bands, frames),
            conv,
            pool,
            flat: pool.0 * pool.1 * N_FILTERS,
            hidden: N_HIDDEN,
            classes: N_CLASSES,
        }
    }

    pub fn dims(&self) -> CnnDims {
        Self::dims_for(self.bands, self.frames)
    }

    /// Copies the windows centred on the given frames into a
    /// k × bands × frames batch tensor, reflecting at matrix edges.
    fn materialize(&self, feats: &FeatureMatrix, frames: &[usize]) -> Result<ndarray::Array3<F>> {
        if feats.n_bands() != self.bands {
            return Err(Error::invalid(format!(
                "model expects {} bands, features have {}",
                self.bands,
                feats.n_bands()
            )));
        }
        let t_total = feats.n_frames();
        if t_total == 0 {
            return Err(Error::invalid("empty feature matrix"));
        }
        let values = feats.values();
        let mut x = ndarray::Array3::zeros((frames.len(), self.bands, self.frames));
        for (ki, &t) in frames.iter().enumerate() {
            if t >= t_total {
                return Err(Error::invalid(format!("frame {t} out of range (T={t_total})")));
            }
            for j in 0..self.frames {
                let src = reflect_index(t as isize - FRAMES_BEFORE as isize + j as isize, t_total);
                for b in 0..self.bands {
                    x[[ki, b, j]] = F::from_f64(values[[src, b]]);
                }
            }
        }
        Ok(x)
    }

    /// Forward pass over a materialized batch. `rng` enables training
    /// mode: dropout is sampled and intermediates retain the mask.
    fn forward(&self, x: &ndarray::Array3<F>, rng: Option<&mut ChaCha8Rng>) -> ForwardCache<F> {
        let k = x.dim().0;
        let dims = self.dims();
        let (ch, cw, _) = dims.conv;
        let (ph, pw, _) = dims.pool;

        // Patch extraction: each output cell's 2×2 receptive field as a row.
        let mut col = Array2::zeros((k * ch * cw, 4));
        for ki in 0..k {
            for r in 0..ch {
                for c in 0..cw {
                    let row = (ki * ch + r) * cw + c;
                    col[[row, 0]] = x[[ki, r, c]];
                    col[[row, 1]] = x[[ki, r, c + 1]];
                    col[[row, 2]] = x[[ki, r + 1, c]];
                    col[[row, 3]] = x[[ki, r + 1, c + 1]];
                }
            }
        }

        let mut conv_act = col.dot(&self.conv_w.t());
        conv_act += &self.conv_b;
        conv_act.mapv_inplace(|v| v.max(F::zero()));

        // 2×2 max-pool, stride 2, floor; remember which cell won.
        let mut pooled = Array4::zeros((k, ph, pw, N_FILTERS));
        let mut argmax = Array4::zeros((k, ph, pw, N_FILTERS));
        for ki in 0..k {
            for pr in 0..ph {
                for pc in 0..pw {
                    for f in 0..N_FILTERS {
                        let mut best = F::neg_infinity();
                        let mut best_at = 0u8;
                        for (slot, (dr, dc)) in
                            [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                        {
                            let r = 2 * pr + dr;
                            let c = 2 * pc + dc;
                            let v = conv_act[[(ki * ch + r) * cw + c, f]];
                            if v > best {
                                best = v;
                                best_at = slot as u8;
                            }
                        }
                        pooled[[ki, pr, pc, f]] = best;
                        argmax[[ki, pr, pc, f]] = best_at;
                    }
                }
            }
        }

        let flat = pooled
            .to_shape((k, dims.flat))
            .expect("pooled tensor is contiguous")
            .to_owned();

        let mut dense_act = flat.dot(&self.dense_w.t());
        dense_act += &self.dense_b;
        dense_act.mapv_inplace(|v| v.max(F::zero()));

        let (dropped, dropout) = match rng {
            Some(rng) if self.dropout_p > 0.0 => {
                let keep = 1.0 - self.dropout_p;
                let scale = F::from_f64(1.0 / keep);
                let mut mask = Array2::zeros(dense_act.dim());
                for v in mask.iter_mut() {
                    if rng.gen::<f64>() >= self.dropout_p {
                        *v = scale;
                    }
                }
                (&dense_act * &mask, Some(mask))
            }
            _ => (dense_act.clone(), None),
        };

        let mut logits = dropped.dot(&self.out_w.t());
        logits += &self.out_b;
        let probs = softmax_rows(&logits);

        ForwardCache { col, pooled, argmax, flat, dense_act, dropout, probs }
    }

    /// Mean cross-entropy and parameter gradients for a forward cache.
    fn backward(&self, cache: &ForwardCache<F>, labels: &[u8]) -> (f64, Grads<F>) {
        let k = labels.len();
        let dims = self.dims();
        let (ch, cw, _) = dims.conv;
        let (ph, pw, _) = dims.pool;
        let kf = F::from_f64(k as f64);

        let mut loss = 0.0;
        let mut dlogits = cache.probs.clone();
        for (i, &label) in labels.iter().enumerate() {
            let p = dlogits[[i, label as usize]].to_f64();
            loss -= p.max(f64::MIN_POSITIVE).ln();
            dlogits[[i, label as usize]] = dlogits[[i, label as usize]] - F::one();
        }
        loss /= k as f64;
        dlogits.mapv_inplace(|v| v / kf);

        let dropped = match &cache.dropout {
            Some(mask) => &cache.dense_act * mask,
            None => cache.dense_act.clone(),
        };
        let g_out_w = dlogits.t().dot(&dropped);
        let g_out_b = dlogits.sum_axis(Axis(0));

        let mut dhidden = dlogits.dot(&self.out_w);
        if let Some(mask) = &cache.dropout {
            dhidden *= mask;
        }
        dhidden.zip_mut_with(&cache.dense_act, |g, &a| {
            if a <= F::zero() {
                *g = F::zero();
            }
        });

        let g_dense_w = dhidden.t().dot(&cache.flat);
        let g_dense_b = dhidden.sum_axis(Axis(0));

        let dflat = dhidden.dot(&self.dense_w);
        let dpool = dflat
            .to_shape((dflat.nrows(), ph, pw, N_FILTERS))
            .expect("flat gradient is contiguous")
            .to_owned();

        // Route pooled gradients back to the winning conv cells, through
        // the conv ReLU (inactive cells produced 0 and get no gradient).
        let mut dconv = Array2::zeros((dflat.nrows() * ch * cw, N_FILTERS));
        for ki in 0..dflat.nrows() {
            for pr in 0..ph {
                for pc in 0..pw {
                    for f in 0..N_FILTERS {
                        if cache.pooled[[ki, pr, pc, f]] <= F::zero() {
                            continue;
                        }
                        let slot = cache.argmax[[ki, pr, pc, f]] as usize;
                        let (dr, dc) = [(0, 0), (0, 1), (1, 0), (1, 1)][slot];
                        let r = 2 * pr + dr;
                        let c = 2 * pc + dc;
                        dconv[[(ki * ch + r) * cw + c, f]] = dpool[[ki, pr, pc, f]];
                    }
                }
            }
        }

        let g_conv_w = dconv.t().dot(&cache.col);
        let g_conv_b = dconv.sum_axis(Axis(0));

        (
            loss,
            Grads {
                conv_w: g_conv_w,
                conv_b: g_conv_b,
                dense_w: g_dense_w,
                dense_b: g_dense_b,
                out_w: g_out_w,
                out_b: g_out_b,
            },
        )
    }

    fn apply(&mut self, grads: &Grads<F>, lr: F) {
        self.conv_w.scaled_add(-lr, &grads.conv_w);
        self.conv_b.scaled_add(-lr, &grads.conv_b);
        self.dense_w.scaled_add(-lr, &grads.dense_w);
        self.dense_b.scaled_add(-lr, &grads.dense_b);
        self.out_w.scaled_add(-lr, &grads.out_w);
        self.out_b.scaled_add(-lr, &grads.out_b);
    }

    /// Mini-batch SGD on cross-entropy. Returns the mean training loss
    /// per epoch. Shuffling and dropout masks derive from `config.seed`,
    /// so a seed fixes the whole run.
    pub fn train(&mut self, windows: &[TrainWindow], config: &CnnConfig) -> Result<Vec<f64>> {
        if config.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        let n1 = windows.iter().filter(|w| w.label == 1).count();
        if windows.is_empty() || n1 == 0 || n1 == windows.len() {
            return Err(Error::invalid(
                "training windows must contain both classes",
            ));
        }
        if windows.iter().any(|w| w.label > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }

        let mut rng = seed::rng(config.seed, &[tag::CNN, 1]);
        let lr = F::from_f64(config.lr);
        let n = windows.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        let mut frames = Vec::with_capacity(config.batch_size);
        let mut labels = Vec::with_capacity(config.batch_size);

        for epoch in 0..config.epochs {
            for i in (1..n).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                // A batch may mix windows from different feature
                // matrices; materialize per distinct source in order.
                let mut x = ndarray::Array3::zeros((batch.len(), self.bands, self.frames));
                frames.clear();
                labels.clear();
                let mut at = 0usize;
                let flush = |src: &Arc<FeatureMatrix>,
                                 frames: &mut Vec<usize>,
                                 x: &mut ndarray::Array3<F>,
                                 at: &mut usize|
                 -> Result<()> {
                    if frames.is_empty() {
                        return Ok(());
                    }
                    let part = self.materialize(src, frames)?;
                    x.slice_mut(ndarray::s![*at..*at + frames.len(), .., ..])
                        .assign(&part);
                    *at += frames.len();
                    frames.clear();
                    Ok(())
                };
                let mut current: Option<Arc<FeatureMatrix>> = None;
                for &idx in batch {
                    let w = &windows[idx];
                    match &current {
                        Some(src) if Arc::ptr_eq(src, &w.feats) => {}
                        _ => {
                            if let Some(src) = current.take() {
                                flush(&src, &mut frames, &mut x, &mut at)?;
                            }
                            current = Some(Arc::clone(&w.feats));
                        }
                    }
                    frames.push(w.frame);
                    labels.push(w.label);
                }
                if let Some(src) = current.take() {
                    flush(&src, &mut frames, &mut x, &mut at)?;
                }
                debug_assert_eq!(at, batch.len());

                let cache = self.forward(&x, Some(&mut rng));
                let (loss, grads) = self.backward(&cache, &labels);
                if !loss.is_finite() {
                    return Err(Error::numerical(format!(
                        "CNN training diverged at epoch {epoch} (loss {loss})"
                    )));
                }
                epoch_loss += loss * batch.len() as f64;
                self.apply(&grads, lr);
            }
            let mean = epoch_loss / n as f64;
            log::debug!("epoch {epoch}: mean loss {mean:.6}");
            epoch_losses.push(mean);
        }
        Ok(epoch_losses)
    }

    /// Class-1 probability of every frame's window (evaluation mode).
    pub fn predict_frames(&self, feats: &FeatureMatrix) -> Result<ProbSeries> {
        let t_total = feats.n_frames();
        let mut probs = Vec::with_capacity(t_total);
        let all: Vec<usize> = (0..t_total).collect();
        for chunk in all.chunks(PREDICT_BATCH) {
            let x = self.materialize(feats, chunk)?;
            let cache = self.forward(&x, None);
            for row in cache.probs.rows() {
                probs.push(row[1].to_f64().clamp(0.0, 1.0));
            }
        }
        ProbSeries::from_probs(probs, feats.frame_s)
    }

    /// Evaluation-mode probabilities for explicit frame indices.
    pub fn predict_windows(
        &self,
        feats: &FeatureMatrix,
        frames: &[usize],
    ) -> Result<Vec<f64>> {
        let mut probs = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(PREDICT_BATCH) {
            let x = self.materialize(feats, chunk)?;
            let cache = self.forward(&x, None);
            for row in cache.probs.rows() {
                probs.push(row[1].to_f64().clamp(0.0, 1.0));
            }
        }
        Ok(probs)
    }

    /// Serializes the model: `CNN1` magic, little-endian u32 shape header
    /// (bands, frames, filters, hidden, classes), dropout as f64, then
    /// each parameter tensor row-major as little-endian f64 in order
    /// conv_w, conv_b, dense_w, dense_b, out_w, out_b.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        for dim in [self.bands, self.frames, N_FILTERS, N_HIDDEN, N_CLASSES] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&self.dropout_p.to_le_bytes())?;
        let mut dump = |values: &mut dyn Iterator<Item = F>| -> Result<()> {
            for v in values {
                w.write_all(&v.to_f64().to_le_bytes())?;
            }
            Ok(())
        };
        dump(&mut self.conv_w.iter().copied())?;
        dump(&mut self.conv_b.iter().copied())?;
        dump(&mut self.dense_w.iter().copied())?;
        dump(&mut self.dense_b.iter().copied())?;
        dump(&mut self.out_w.iter().copied())?;
        dump(&mut self.out_b.iter().copied())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let format = |msg: &str| Error::Format {
            path: path.display().to_string(),
            message: msg.to_string(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| format("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(format("bad magic; not a model checkpoint"));
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf).map_err(|_| format("truncated header"))?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let [bands, frames, filters, hidden, classes] = dims;
        if filters != N_FILTERS || hidden != N_HIDDEN || classes != N_CLASSES {
            return Err(format("unsupported architecture dimensions"));
        }
        if bands < 2 || frames < 2 {
            return Err(format("invalid input dimensions"));
        }
        let mut f64_buf = [0u8; 8];
        r.read_exact(&mut f64_buf).map_err(|_| format("truncated header"))?;
        let dropout_p = f64::from_le_bytes(f64_buf);
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(format("invalid dropout probability"));
        }

        let shape = Self::dims_for(bands, frames);
        let mut read_tensor = |len: usize| -> Result<Vec<F>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf).map_err(|_| format("truncated parameters"))?;
                let v = f64::from_le_bytes(buf);
                if !v.is_finite() {
                    return Err(format("non-finite parameter"));
                }
                out.push(F::from_f64(v));
            }
            Ok(out)
        };
        let conv_w = Array2::from_shape_vec((N_FILTERS, 4), read_tensor(N_FILTERS * 4)?).unwrap();
        let conv_b = Array1::from_vec(read_tensor(N_FILTERS)?);
        let dense_w =
            Array2::from_shape_vec((N_HIDDEN, shape.flat), read_tensor(N_HIDDEN * shape.flat)?)
                .unwrap();
        let dense_b = Array1::from_vec(read_tensor(N_HIDDEN)?);
        let out_w =
            Array2::from_shape_vec((N_CLASSES, N_HIDDEN), read_tensor(N_CLASSES * N_HIDDEN)?)
                .unwrap();
        let out_b = Array1::from_vec(read_tensor(N_CLASSES)?);
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(format("trailing bytes after parameters"));
        }
        Ok(CnnModel {
            bands,
            frames,
            dropout_p,
            conv_w,
            conv_b,
            dense_w,
            dense_b,
            out_w,
            out_b,
        })
    }
}

impl CnnModel<f64> {
    /// Compares analytic parameter gradients with central finite
    /// differences on the given windows, dropout disabled. Biases are
    /// checked exhaustively; each weight matrix at `samples_per_tensor`
    /// seeded random coordinates. Returns the worst error score: the
    /// relative error where either side exceeds 1e-7 in magnitude, and
    /// the absolute error scaled by 1e4 below that (so a return value
    /// under 1e-4 means 0.01% relative agreement, or 1e-8 absolute for
    /// near-zero gradients).
    pub fn gradient_check(
        &self,
        windows: &[TrainWindow],
        samples_per_tensor: usize,
        seed: u64,
    ) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::invalid("gradient check needs at least one window"));
        }
        if windows.iter().any(|w| !Arc::ptr_eq(&w.feats, &windows[0].feats)) {
            return Err(Error::invalid(
                "gradient check windows must share one feature matrix",
            ));
        }
        let frames: Vec<usize> = windows.iter().map(|w| w.frame).collect();
        let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let x = self.materialize(&windows[0].feats, &frames)?;
        let loss_of = |m: &CnnModel<f64>| {
            let cache = m.forward(&x, None);
            m.backward(&cache, &labels).0
        };
        let cache = self.forward(&x, None);
        let (_, grads) = self.backward(&cache, &labels);

        let eps = 1e-5;
        let mut worst = 0.0f64;
        let mut compare = |analytic: f64, numeric: f64| {
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale > 1e-7 {
                (analytic - numeric).abs() / scale
            } else {
                (analytic - numeric).abs() * 1e4
            };
            worst = worst.max(err);
        };

        let mut rng = seed::rng(seed, &[tag::CNN, 2]);
        let check_matrix = |analytic: &Array2<f64>,
                                write: &dyn Fn(&mut CnnModel<f64>) -> &mut Array2<f64>,
                                rng: &mut ChaCha8Rng,
                                compare: &mut dyn FnMut(f64, f64)| {
            let (rows, cols) = analytic.dim();
            for _ in 0..samples_per_tensor {
                let i = rng.gen_range(0..rows);
                let j = rng.gen_range(0..cols);
                let mut plus = self.clone();
                write(&mut plus)[[i, j]] += eps;
                let mut minus = self.clone();
                write(&mut minus)[[i, j]] -= eps;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                compare(analytic[[i, j]], numeric);
            }
        };
        check_matrix(&grads.conv_w, &|m| &mut m.conv_w, &mut rng, &mut compare);
        check_matrix(&grads.dense_w, &|m| &mut m.dense_w, &mut rng, &mut compare);
        check_matrix(&grads.out_w, &|m| &mut m.out_w, &mut rng, &mut compare);

        let check_vector = |analytic: &Array1<f64>,
                            write: &dyn Fn(&mut CnnModel<f64>) -> &mut Array1<f64>,
                            compare: &mut dyn FnMut(f64, f64)| {
            for i in 0..analytic.len() {
                let mut plus = self.clone();
                write(&mut plus)[i] += eps;
                let mut minus = self.clone();
                write(&mut minus)[i] -= eps;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                compare(analytic[i], numeric);
            }
        };
        check_vector(&grads.conv_b, &|m| &mut m.conv_b, &mut compare);
        check_vector(&grads.dense_b, &|m| &mut m.dense_b, &mut compare);
        check_vector(&grads.out_b, &|m| &mut m.out_b, &mut compare);
        Ok(worst)
    }
}

fn softmax_rows<F: CnnFloat>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use ndarray::Array2 as NdArray2;
    use rand::Rng;

    /// T×B feature matrix where class-1 frames carry energy in the low
    /// half of the bands and class-0 frames in the high half.
    fn toy_features(t: usize, bands: usize, seed: u64) -> (Arc<FeatureMatrix>, Vec<u8>) {
        let mut rng = crate::seed::rng(seed, &[96]);
        let mut values = NdArray2::zeros((t, bands));
        let mut labels = Vec::with_capacity(t);
        for frame in 0..t {
            // Blocks of 10 frames per class so windows stay class-pure.
            let label = ((frame / 10) % 2) as u8;
            for b in 0..bands {
                let active = if label == 1 { b < bands / 2 } else { b >= bands / 2 };
                let base = if active { 2.0 } else { -2.0 };
                values[[frame, b]] = base + 0.3 * rng.gen::<f64>();
            }
            labels.push(label);
        }
        let centers: Vec<f64> = (0..bands).map(|b| b as f64 * 10.0).collect();
        (
            Arc::new(FeatureMatrix::from_parts(0.1, centers, values).unwrap()),
            labels,
        )
    }

    fn toy_windows(t: usize, bands: usize, seed: u64) -> Vec<TrainWindow> {
        let (feats, labels) = toy_features(t, bands, seed);
        (0..t)
            .map(|frame| TrainWindow {
                feats: Arc::clone(&feats),
                frame,
                label: labels[frame],
            })
            .collect()
    }

    fn zeroed(model: &mut CnnModel<f64>) {
        model.conv_w.fill(0.0);
        model.conv_b.fill(0.0);
        model.dense_w.fill(0.0);
        model.dense_b.fill(0.0);
        model.out_w.fill(0.0);
        model.out_b.fill(0.0);
    }

    #[test]
    fn shape_trace_matches_the_declared_architecture() {
        let model = CnnModel::<f64>::new(128, 10, 0.2, 0).unwrap();
        let dims = model.dims();
        assert_eq!(dims.input, (128, 10));
        assert_eq!(dims.conv, (127, 9, 32));
        assert_eq!(dims.pool, (63, 4, 32));
        assert_eq!(dims.flat, 8064);
        assert_eq!(dims.hidden, 256);
        assert_eq!(dims.classes, 2);
        assert_eq!(model.dense_w.dim(), (256, 8064));
        assert_eq!(model.out_w.dim(), (2, 256));
    }

    #[test]
    fn zero_parameters_give_exactly_uniform_output() {
        let mut model = CnnModel::<f64>::new(16, 10, 0.2, 1).unwrap();
        zeroed(&mut model);
        let (feats, _) = toy_features(40, 16, 2);
        let probs = model.predict_frames(&feats).unwrap();
        assert!(probs.probs().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn shifting_both_output_logits_changes_nothing() {
        let model = CnnModel::<f64>::new(16, 10, 0.2, 3).unwrap();
        let mut shifted = model.clone();
        shifted.out_b.mapv_inplace(|v| v + 13.25);
        let (feats, _) = toy_features(30, 16, 4);
        let a = model.predict_frames(&feats).unwrap();
        let b = shifted.predict_frames(&feats).unwrap();
        for (pa, pb) in a.probs().iter().zip(b.probs()) {
            assert!((pa - pb).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_preserves_parameters() {
        let mut model = CnnModel::<f64>::new(12, 10, 0.2, 5).unwrap();
        let reference = model.clone();
        let windows = toy_windows(60, 12, 6);
        let config = CnnConfig { epochs: 2, lr: 0.0, ..Default::default() };
        model.train(&windows, &config).unwrap();
        assert_eq!(model.conv_w, reference.conv_w);
        assert_eq!(model.dense_w, reference.dense_w);
        assert_eq!(model.out_w, reference.out_w);
        assert_eq!(model.conv_b, reference.conv_b);
    }

    #[test]
    fn same_seed_reproduces_identical_parameters() {
        let windows = toy_windows(80, 12, 7);
        let config = CnnConfig { epochs: 3, seed: 11, ..Default::default() };
        let mut a = CnnModel::<f64>::new(12, 10, 0.2, 9).unwrap();
        let mut b = CnnModel::<f64>::new(12, 10, 0.2, 9).unwrap();
        a.train(&windows, &config).unwrap();
        b.train(&windows, &config).unwrap();
        assert_eq!(a.conv_w, b.conv_w);
        assert_eq!(a.dense_w, b.dense_w);
        assert_eq!(a.out_w, b.out_w);
    }

    #[test]
    fn toy_problem_is_learned_and_loss_decreases() {
        let windows = toy_windows(200, 16, 8);
        let mut model = CnnModel::<f64>::new(16, 10, 0.2, 10).unwrap();
        let losses = model.train(&windows, &CnnConfig::default()).unwrap();
        assert_eq!(losses.len(), 10);
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss did not decrease: {losses:?}"
        );
        let (feats, labels) = toy_features(200, 16, 8);
        let probs = model.predict_frames(&feats).unwrap();
        let correct = probs
            .probs()
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| (p >= 0.5) as u8 == l)
            .count();
        assert!(correct as f64 / labels.len() as f64 >= 0.95);
    }

    #[test]
    fn training_requires_both_classes() {
        let (feats, _) = toy_features(30, 12, 12);
        let windows: Vec<TrainWindow> = (0..30)
            .map(|frame| TrainWindow { feats: Arc::clone(&feats), frame, label: 0 })
            .collect();
        let mut model = CnnModel::<f64>::new(12, 10, 0.2, 13).unwrap();
        assert!(model.train(&windows, &CnnConfig::default()).is_err());
    }

    #[test]
    fn edge_windows_use_reflected_frames() {
        let (feats, _) = toy_features(20, 12, 14);
        let model = CnnModel::<f64>::new(12, 10, 0.0, 15).unwrap();
        let x = model.materialize(&feats, &[0]).unwrap();
        // Window of frame 0 spans virtual frames [-5, 4]; reflection maps
        // -5→5, -4→4, ..., -1→1.
        let values = feats.values();
        for j in 0..10 {
            let virt = j as isize - 5;
            let src = if virt < 0 { (-virt) as usize } else { virt as usize };
            for b in 0..12 {
                assert_eq!(x[[0, b, j]], values[[src, b]]);
            }
        }
    }

    #[test]
    fn pool_backward_routes_gradient_to_the_argmax_cell_only() {
        // One window, zero conv filters except a fixed bias pattern is
        // hard to control; instead check the routing property through a
        // perturbation argument on a tiny trained-free model: nudging the
        // input at the argmax cell changes the loss, nudging a losing
        // cell does not (to first order the gradient there is zero).
        let mut model = CnnModel::<f64>::new(6, 6, 0.0, 16).unwrap();
        // Identity-ish conv: single filter pattern replicated; make conv
        // output equal to the input patch corner to keep argmax legible.
        model.conv_w.fill(0.0);
        for f in 0..N_FILTERS {
            model.conv_w[[f, 0]] = 1.0; // passes through x[r, c]
        }
        model.conv_b.fill(0.0);

        let mut x = ndarray::Array3::<f64>::zeros((1, 6, 6));
        // Make cell (1, 0) the strict argmax of the first pooling window.
        x[[0, 0, 0]] = 1.0;
        x[[0, 0, 1]] = 2.0;
        x[[0, 1, 0]] = 5.0;
        x[[0, 1, 1]] = 3.0;
        let cache = model.forward(&x, None);
        assert_eq!(cache.pooled[[0, 0, 0, 0]], 5.0);
        assert_eq!(cache.argmax[[0, 0, 0, 0]], 2); // slot (1, 0)

        let (_, grads) = model.backward(&cache, &[1]);
        // The conv bias gradient collects exactly the routed cells; the
        // losing cells of window (0,0) contribute nothing. Verify by
        // zeroing the winner: gradient at the bias must change, while
        // perturbing a loser's pre-activation leaves the loss untouched.
        let base_loss = model.backward(&cache, &[1]).0;
        let mut x_losing = x.clone();
        x_losing[[0, 0, 0]] = 1.2; // still below the winner after conv
        let cache_losing = model.forward(&x_losing, None);
        let losing_loss = model.backward(&cache_losing, &[1]).0;
        assert!((base_loss - losing_loss).abs() < 1e-12);

        let mut x_winning = x.clone();
        x_winning[[0, 1, 0]] = 5.5;
        let cache_winning = model.forward(&x_winning, None);
        let winning_loss = model.backward(&cache_winning, &[1]).0;
        // Gradient flows through the winner, so the loss moves unless the
        // downstream weights happen to be exactly zero — they are random.
        assert!((base_loss - winning_loss).abs() > 1e-9);
        let _ = grads;
    }

    #[test]
    fn dropout_mask_is_inverted_and_unbiased() {
        let model = CnnModel::<f64>::new(8, 10, 0.2, 17).unwrap();
        let mut rng = crate::seed::rng(18, &[95]);
        let keep = 0.8;
        let scale = 1.0 / keep;
        let mut sum = 0.0;
        let mut count = 0usize;
        let x = ndarray::Array3::<f64>::zeros((4, 8, 10));
        for _ in 0..100 {
            let cache = model.forward(&x, Some(&mut rng));
            let mask = cache.dropout.as_ref().unwrap();
            for &v in mask.iter() {
                assert!(v == 0.0 || (v - scale).abs() < 1e-15);
                sum += v;
                count += 1;
            }
        }
        // 100 batches × 4 rows × 256 units = 102 400 draws ≥ the 10 000
        // the contract asks for. Mean of the inverted mask is 1 with
        // variance (1-p)/p·... = scale − 1 = 0.25.
        let mean = sum / count as f64;
        let sigma = (0.25f64 / count as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * sigma,
            "dropout mask mean {mean} outside 3σ ({sigma})"
        );
    }

    #[test]
    fn gradients_match_central_differences_for_every_tensor() {
        let windows = toy_windows(20, 8, 19);
        let model = {
            let mut m = CnnModel::<f64>::new(8, 10, 0.0, 20).unwrap();
            // A couple of SGD steps move parameters off init symmetry.
            m.train(&windows, &CnnConfig { epochs: 1, ..Default::default() }).unwrap();
            m
        };
        let worst = model.gradient_check(&windows, 40, 21).unwrap();
        assert!(worst < 1e-4, "worst gradient error {worst:.2e}");
    }

    #[test]
    fn gradient_check_validates_its_inputs() {
        let model = CnnModel::<f64>::new(8, 10, 0.0, 20).unwrap();
        assert!(model.gradient_check(&[], 5, 0).is_err());
        let mut bad = toy_windows(4, 8, 19);
        bad[0].label = 7;
        assert!(model.gradient_check(&bad, 5, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnn");
        let mut model = CnnModel::<f64>::new(12, 10, 0.2, 22).unwrap();
        let windows = toy_windows(40, 12, 23);
        model.train(&windows, &CnnConfig { epochs: 1, ..Default::default() }).unwrap();
        model.save(&path).unwrap();
        let loaded = CnnModel::<f64>::load(&path).unwrap();
        assert_eq!(model.conv_w, loaded.conv_w);
        assert_eq!(model.conv_b, loaded.conv_b);
        assert_eq!(model.dense_w, loaded.dense_w);
        assert_eq!(model.dense_b, loaded.dense_b);
        assert_eq!(model.out_w, loaded.out_w);
        assert_eq!(model.out_b, loaded.out_b);
        assert_eq!(model.dropout_p, loaded.dropout_p);

        // Single-precision models survive the f64 container too.
        let m32 = CnnModel::<f32>::new(12, 10, 0.2, 22).unwrap();
        let path32 = dir.path().join("model32.cnn");
        m32.save(&path32).unwrap();
        let loaded32 = CnnModel::<f32>::load(&path32).unwrap();
        assert_eq!(m32.conv_w, loaded32.conv_w);
        assert_eq!(m32.dense_w, loaded32.dense_w);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnn");
        let model = CnnModel::<f64>::new(12, 10, 0.2, 24).unwrap();
        model.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            CnnModel::<f64>::load(&path),
            Err(Error::Format { .. })
        ));

        let good = {
            model.save(&path).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(CnnModel::<f64>::load(&path).is_err());
        let mut padded = good;
        padded.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &padded).unwrap();
        assert!(CnnModel::<f64>::load(&path).is_err());
    }

    #[test]
    fn single_and_double_precision_start_identically() {
        let m64 = CnnModel::<f64>::new(10, 10, 0.2, 25).unwrap();
        let m32 = CnnModel::<f32>::new(10, 10, 0.2, 25).unwrap();
        let (feats, _) = toy_features(30, 10, 26);
        let p64 = m64.predict_frames(&feats).unwrap();
        let p32 = m32.predict_frames(&feats).unwrap();
        for (a, b) in p64.probs().iter().zip(p32.probs()) {
            assert!((a - b).abs() < 1e-4, "precision divergence: {a} vs {b}");
        }
    }

    #[test]
    fn predictions_cover_every_frame_in_range() {
        let (feats, _) = toy_features(57, 8, 27);
        let model = CnnModel::<f64>::new(8, 10, 0.2, 28).unwrap();
        let series = model.predict_frames(&feats).unwrap();
        assert_eq!(series.len(), 57);
        assert!(series.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        // Constant features give a constant series.
        let constant = FeatureMatrix::from_parts(
            0.1,
            (0..8).map(|b| b as f64).collect(),
            NdArray2::from_elem((25, 8), 0.7),
        )
        .unwrap();
        let flat_series = model.predict_frames(&constant).unwrap();
        let first = flat_series.probs()[0];
        assert!(flat_series.probs().iter().all(|&p| (p - first).abs() < 1e-12));
    }
}
