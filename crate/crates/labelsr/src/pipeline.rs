//! Cascade orchestration: builds a dataset, trains the inner classifiers,
//! super-resolves the weak labels into pseudo-fine labels, trains the outer
//! network on them, and scores every stage across an SNR × iteration grid.
//!
//! The training protocol is enforced three ways:
//!
//! * ground truth for the weak and test splits lives behind
//!   [`HiddenTrack`](crate::audio::HiddenTrack) and is only reachable
//!   through `for_scoring()`;
//! * every assembled training datum carries a [`Provenance`] tag, and every
//!   fit path runs [`verify_provenance`] first;
//! * the post-processing stage is tagged on the probability series itself,
//!   so out-of-order filtering fails loudly.
//!
//! Results are plain records with a fixed CSV rendering, deterministic for
//! a fixed master seed regardless of how many worker threads run the grid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use crate::audio::LabelTrack;
use crate::baselines::{
    ForestConfig, Gnb, Lda, Mlp, MlpConfig, ProbClassifier, RandomForest, Svm, SvmConfig,
};
use crate::cnn::{CnnConfig, CnnModel, TrainWindow, WINDOW_FRAMES};
use crate::error::{Error, Result};
use crate::features::{select_features, FeatureMatrix, LogmelConfig};
use crate::kde::{posterior, ClassPrior, KdeModel};
use crate::postprocess::ProbSeries;
use crate::seed::{self, tag};
use crate::synthgen::{make_dataset, DatasetBundle, DatasetSpec};

/// Inner classifier kinds. [`InnerKind::Kde`] is the density model the
/// cascade is built around; the rest are conventional baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerKind {
    Kde,
    Lda,
    Gnb,
    Svm,
    Rf,
    Mlp,
}

impl InnerKind {
    pub const ALL: [InnerKind; 6] = [
        InnerKind::Kde,
        InnerKind::Lda,
        InnerKind::Gnb,
        InnerKind::Svm,
        InnerKind::Rf,
        InnerKind::Mlp,
    ];

    /// Identifier used in CSV rows and on the command line.
    pub fn id(self) -> &'static str {
        match self {
            InnerKind::Kde => "kde",
            InnerKind::Lda => "lda",
            InnerKind::Gnb => "gnb",
            InnerKind::Svm => "svm",
            InnerKind::Rf => "rf",
            InnerKind::Mlp => "mlp",
        }
    }

    /// Identifier of the outer network bootstrapped from this classifier.
    pub fn outer_id(self) -> &'static str {
        match self {
            InnerKind::Kde => "cnn_kde",
            InnerKind::Lda => "cnn_lda",
            InnerKind::Gnb => "cnn_gnb",
            InnerKind::Svm => "cnn_svm",
            InnerKind::Rf => "cnn_rf",
            InnerKind::Mlp => "cnn_mlp",
        }
    }

    /// Stable per-kind code used in seed derivation, independent of the
    /// order classifiers appear in the configuration.
    fn code(self) -> u64 {
        match self {
            InnerKind::Kde => 0,
            InnerKind::Lda => 1,
            InnerKind::Gnb => 2,
            InnerKind::Svm => 3,
            InnerKind::Rf => 4,
            InnerKind::Mlp => 5,
        }
    }
}

/// Seed-derivation code for the outer network trained on raw segment
/// labels (no inner classifier); distinct from every [`InnerKind::code`].
const COARSE_CODE: u64 = 6;

/// CSV/CLI identifier of that network.
pub const OUTER_COARSE_ID: &str = "cnn_coarse";

impl std::str::FromStr for InnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde" => Ok(InnerKind::Kde),
            "lda" => Ok(InnerKind::Lda),
            "gnb" => Ok(InnerKind::Gnb),
            "svm" => Ok(InnerKind::Svm),
            "rf" => Ok(InnerKind::Rf),
            "mlp" => Ok(InnerKind::Mlp),
            other => Err(Error::invalid(format!("unknown classifier `{other}`"))),
        }
    }
}

impl std::fmt::Display for InnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Which post-processing steps run between the inner classifier and the
/// outer training set. Both default to on; the order is fixed (median
/// filter first, then rejection).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PostToggles {
    pub median: bool,
    pub rejection: bool,
}

impl Default for PostToggles {
    fn default() -> Self {
        PostToggles { median: true, rejection: true }
    }
}

/// Everything one experiment run needs. The module configs for the SVM,
/// forest and MLP carry seed fields; those are overridden per iteration
/// with seeds derived from `master_seed`, so only their hyperparameters
/// matter here.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub logmel: LogmelConfig,
    /// SNRs to sweep, in dB.
    pub snr_grid_db: Vec<f64>,
    /// Independent repetitions per SNR, each with fresh data.
    pub iterations: usize,
    pub classifiers: Vec<InnerKind>,
    /// Feature bands kept by the separability ranking.
    pub n_select: usize,
    /// Multiplier on the density model's rule-of-thumb bandwidths.
    pub bandwidth_scale: f64,
    /// Extra widening applied to the class-1 density fit only. The event
    /// class has orders of magnitude fewer training frames than the pooled
    /// class-0 sample; widening it keeps the posterior from calling unseen
    /// event frames confident noise.
    pub class1_bandwidth_scale: f64,
    /// Median filter length in frames (odd).
    pub median_window: usize,
    /// Rejection band: probabilities strictly inside are discarded.
    pub reject_low: f64,
    pub reject_high: f64,
    /// Post-processing applied to the series that feeds the outer network.
    /// Stage-wise metrics always cover raw, median, and median+reject.
    pub toggles: PostToggles,
    /// Train and score the outer networks (off = inner stages only).
    pub run_outer: bool,
    /// Train the outer network in single precision (faster, same seeds).
    pub single_precision: bool,
    pub cnn_dropout: f64,
    pub cnn_epochs: usize,
    pub cnn_lr: f64,
    pub cnn_batch: usize,
    pub svm: SvmConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            logmel: LogmelConfig::default(),
            snr_grid_db: vec![-24.0, -19.8, -15.0, -10.0, -5.0, 0.0],
            iterations: 40,
            classifiers: InnerKind::ALL.to_vec(),
            n_select: 10,
            bandwidth_scale: 1.0,
            class1_bandwidth_scale: 1.0,
            median_window: 5,
            reject_low: 0.1,
            reject_high: 0.9,
            toggles: PostToggles::default(),
            run_outer: true,
            single_precision: true,
            cnn_dropout: 0.2,
            cnn_epochs: 10,
            cnn_lr: 0.01,
            cnn_batch: 32,
            svm: SvmConfig::default(),
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::invalid("SNR grid must not be empty"));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR grid must be finite"));
        }
        if self.classifiers.is_empty() {
            return Err(Error::invalid("at least one inner classifier is required"));
        }
        for (i, a) in self.classifiers.iter().enumerate() {
            if self.classifiers[..i].contains(a) {
                return Err(Error::invalid(format!("classifier `{a}` listed twice")));
            }
        }
        if self.n_select == 0 || self.n_select > self.logmel.n_mels {
            return Err(Error::invalid(format!(
                "cannot select {} of {} bands",
                self.n_select, self.logmel.n_mels
            )));
        }
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return Err(Error::invalid("median window must be odd"));
        }
        if !(0.0..=1.0).contains(&self.reject_low)
            || !(0.0..=1.0).contains(&self.reject_high)
            || self.reject_low >= self.reject_high
        {
            return Err(Error::invalid(format!(
                "bad rejection band ({}, {})",
                self.reject_low, self.reject_high
            )));
        }
        if !(self.bandwidth_scale > 0.0) || !(self.class1_bandwidth_scale > 0.0) {
            return Err(Error::invalid("bandwidth scales must be positive"));
        }
        if self.cnn_epochs == 0 || self.cnn_batch == 0 {
            return Err(Error::invalid("network epochs and batch size must be positive"));
        }
        if !(self.cnn_lr > 0.0) || !(0.0..1.0).contains(&self.cnn_dropout) {
            return Err(Error::invalid("bad network learning rate or dropout"));
        }
        if (self.logmel.frame_s - self.dataset.frame_s).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "feature frame length {} s does not match the label grid {} s",
                self.logmel.frame_s, self.dataset.frame_s
            )));
        }
        Ok(())
    }
}

// --------------------------------------------------------------- protocol

/// Where a training datum's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Finely labelled split; labels are trustworthy per frame.
    Fine,
    /// Weakly labelled split; the label is either the segment label or a
    /// machine-made pseudo label, never ground truth.
    WeakSegment,
    /// Withheld ground truth. Only scoring may touch this.
    HiddenTruth,
}

/// One frame-level training datum with its origin attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaggedFrame {
    pub frame: usize,
    pub label: u8,
    pub provenance: Provenance,
}

/// Refuses any provenance outside `allowed`. Every fit path calls this on
/// the tags of its assembled training set, so withheld truth reaching a
/// fit is a hard protocol error rather than a silent leak.
pub fn verify_provenance<I>(tags: I, allowed: &[Provenance]) -> Result<()>
where
    I: IntoIterator<Item = Provenance>,
{
    for t in tags {
        if !allowed.contains(&t) {
            return Err(Error::Protocol(format!(
                "{t:?} data reached a fit operation (allowed: {allowed:?})"
            )));
        }
    }
    Ok(())
}

// ------------------------------------------------------------ preparation

/// Feature matrices and visible label views for one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fine_feats: Arc<FeatureMatrix>,
    /// Per-frame labels of the finely labelled split.
    pub fine_labels: Vec<u8>,
    pub weak_feats: Arc<FeatureMatrix>,
    /// Per-frame segment labels of the weakly labelled split: every frame
    /// inside a segment inherits the segment's label.
    pub weak_frame_labels: Vec<u8>,
    pub test_feats: Arc<FeatureMatrix>,
}

impl Prepared {
    /// View over just the two training splits, for inner-stage work that
    /// never touches the test split (its matrix is left empty). Label
    /// tracks are expanded to the feature frame grid and validated
    /// against it.
    pub fn inner_only(
        fine_feats: FeatureMatrix,
        fine_track: &LabelTrack,
        weak_feats: FeatureMatrix,
        weak_track: &LabelTrack,
    ) -> Result<Prepared> {
        let fine_labels = expand_to_frames(fine_track, fine_feats.frame_s, fine_feats.n_frames())?;
        let weak_frame_labels =
            expand_to_frames(weak_track, weak_feats.frame_s, weak_feats.n_frames())?;
        let empty = FeatureMatrix::from_parts(
            fine_feats.frame_s,
            fine_feats.band_centers_hz.clone(),
            Array2::zeros((0, fine_feats.n_bands())),
        )?;
        Ok(Prepared {
            fine_feats: Arc::new(fine_feats),
            fine_labels,
            weak_feats: Arc::new(weak_feats),
            weak_frame_labels,
            test_feats: Arc::new(empty),
        })
    }
}

/// Expands a label track to one label per feature frame and checks the
/// frame counts line up.
fn expand_to_frames(track: &LabelTrack, frame_s: f64, n_frames: usize) -> Result<Vec<u8>> {
    let expected = (track.duration_s / frame_s).round() as usize;
    if expected != n_frames {
        return Err(Error::invalid(format!(
            "{n_frames} feature frames for a {} s track at {} s per frame",
            track.duration_s, frame_s
        )));
    }
    let mut out = vec![0u8; n_frames];
    for iv in track.intervals() {
        let a = ((iv.start_s / frame_s).round() as usize).min(n_frames);
        let b = ((iv.end_s / frame_s).round() as usize).min(n_frames);
        for slot in &mut out[a..b] {
            *slot = iv.label;
        }
    }
    Ok(out)
}

/// Computes log-mel features for all three splits and expands the visible
/// label tracks to the feature frame grid. Hidden truth stays inside the
/// bundle.
pub fn prepare(bundle: &DatasetBundle, logmel_cfg: &LogmelConfig) -> Result<Prepared> {
    let fine_feats = crate::features::logmel(&bundle.fine.clip, logmel_cfg)?;
    let weak_feats = crate::features::logmel(&bundle.weak.clip, logmel_cfg)?;
    let test_feats = crate::features::logmel(&bundle.test.clip, logmel_cfg)?;
    let fine_labels =
        expand_to_frames(&bundle.fine.labels, logmel_cfg.frame_s, fine_feats.n_frames())?;
    let weak_frame_labels =
        expand_to_frames(&bundle.weak.weak_labels, logmel_cfg.frame_s, weak_feats.n_frames())?;
    Ok(Prepared {
        fine_feats: Arc::new(fine_feats),
        fine_labels,
        weak_feats: Arc::new(weak_feats),
        weak_frame_labels,
        test_feats: Arc::new(test_feats),
    })
}

// ---------------------------------------------------------- inner models

enum InnerImpl {
    Kde { class0: KdeModel, class1: KdeModel, prior: ClassPrior },
    Baseline(Box<dyn ProbClassifier>),
}

/// A trained inner classifier plus the feature bands it operates on.
pub struct InnerModel {
    pub kind: InnerKind,
    /// Selected band indices, ascending.
    pub selected_bands: Vec<usize>,
    /// Centre frequencies of the selected bands, same order.
    pub band_centers_hz: Vec<f64>,
    /// Class-0 / class-1 training row counts.
    pub n_train: (usize, usize),
    /// Class prior (density model only).
    pub prior: Option<ClassPrior>,
    imp: InnerImpl,
}

impl InnerModel {
    /// Class-1 probability for each listed frame of `feats`.
    pub fn predict_frames(&self, feats: &FeatureMatrix, frames: &[usize]) -> Result<Vec<f64>> {
        let x = feats.gather(frames, &self.selected_bands);
        match &self.imp {
            InnerImpl::Kde { class0, class1, prior } => {
                let mut out = Vec::with_capacity(x.nrows());
                for row in x.rows() {
                    let p = posterior(class0, class1, prior, row.as_slice().unwrap())?;
                    out.push(p.p1.clamp(0.0, 1.0));
                }
                Ok(out)
            }
            InnerImpl::Baseline(model) => model.predict_proba(&x),
        }
    }
}

/// Trains one inner classifier under the cascade protocol:
///
/// * band selection is fitted on the finely labelled split;
/// * the conventional baselines train on finely labelled frames only;
/// * the density model additionally absorbs every frame of the weak
///   class-0 segments into its class-0 component (those frames are known
///   negative because a class-0 segment contains no event), with class
///   priors fixed at 0.5/0.5.
pub fn train_inner(
    prep: &Prepared,
    kind: InnerKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<InnerModel> {
    let (selected, _ks) = select_features(&prep.fine_feats, &prep.fine_labels, cfg.n_select)?;
    let band_centers_hz: Vec<f64> =
        selected.iter().map(|&b| prep.fine_feats.band_centers_hz[b]).collect();

    let fine: Vec<TaggedFrame> = prep
        .fine_labels
        .iter()
        .enumerate()
        .map(|(frame, &label)| TaggedFrame { frame, label, provenance: Provenance::Fine })
        .collect();
    let fine_rows: Vec<usize> = fine.iter().map(|t| t.frame).collect();

    if kind == InnerKind::Kde {
        let weak0: Vec<TaggedFrame> = prep
            .weak_frame_labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == 0)
            .map(|(frame, _)| TaggedFrame {
                frame,
                label: 0,
                provenance: Provenance::WeakSegment,
            })
            .collect();
        verify_provenance(
            fine.iter().chain(&weak0).map(|t| t.provenance),
            &[Provenance::Fine, Provenance::WeakSegment],
        )?;

        let rows0: Vec<usize> =
            fine.iter().filter(|t| t.label == 0).map(|t| t.frame).collect();
        let rows1: Vec<usize> =
            fine.iter().filter(|t| t.label == 1).map(|t| t.frame).collect();
        let weak0_rows: Vec<usize> = weak0.iter().map(|t| t.frame).collect();
        if rows1.is_empty() {
            return Err(Error::invalid("no class-1 frames in the finely labelled split"));
        }
        let x0_fine = prep.fine_feats.gather(&rows0, &selected);
        let x0_weak = prep.weak_feats.gather(&weak0_rows, &selected);
        let x0 = concatenate(Axis(0), &[x0_fine.view(), x0_weak.view()])
            .map_err(|e| Error::invalid(format!("cannot stack class-0 data: {e}")))?;
        let x1 = prep.fine_feats.gather(&rows1, &selected);
        let n_train = (x0.nrows(), x1.nrows());
        let prior = ClassPrior::uniform();
        let class0 = KdeModel::fit(x0, cfg.bandwidth_scale)?;
        // The class-1 sample is far smaller than the pooled class-0 sample,
        // so its density gets an extra widening factor: without it the
        // sparse fit underestimates the density at new event frames and the
        // posterior calls them confident noise.
        let class1 = KdeModel::fit(x1, cfg.bandwidth_scale * cfg.class1_bandwidth_scale)?;
        return Ok(InnerModel {
            kind,
            selected_bands: selected,
            band_centers_hz,
            n_train,
            prior: Some(prior),
            imp: InnerImpl::Kde { class0, class1, prior },
        });
    }

    verify_provenance(fine.iter().map(|t| t.provenance), &[Provenance::Fine])?;
    let x = prep.fine_feats.gather(&fine_rows, &selected);
    let y: Vec<u8> = fine.iter().map(|t| t.label).collect();
    let n1 = y.iter().filter(|&&l| l == 1).count();
    let n_train = (y.len() - n1, n1);

    let model: Box<dyn ProbClassifier> = match kind {
        InnerKind::Lda => Box::new(Lda::fit(&x, &y)?),
        InnerKind::Gnb => Box::new(Gnb::fit(&x, &y)?),
        InnerKind::Svm => {
            let config = SvmConfig { seed: seed::derive(seed, &[tag::SVM]), ..cfg.svm.clone() };
            Box::new(Svm::fit(&x, &y, &config)?)
        }
        InnerKind::Rf => {
            let config =
                ForestConfig { seed: seed::derive(seed, &[tag::FOREST_TREE]), ..cfg.forest.clone() };
            Box::new(RandomForest::fit(&x, &y, &config)?)
        }
        InnerKind::Mlp => {
            let config = MlpConfig { seed: seed::derive(seed, &[tag::MLP]), ..cfg.mlp.clone() };
            Box::new(Mlp::fit(&x, &y, &config)?)
        }
        InnerKind::Kde => unreachable!("handled above"),
    };
    Ok(InnerModel {
        kind,
        selected_bands: selected,
        band_centers_hz,
        n_train,
        prior: None,
        imp: InnerImpl::Baseline(model),
    })
}

// -------------------------------------------------------- super-resolution

/// Frame indices of the weak split that lie inside class-1 segments,
/// ascending.
pub fn weak_class1_frames(weak_frame_labels: &[u8]) -> Vec<usize> {
    weak_frame_labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == 1)
        .map(|(t, _)| t)
        .collect()
}

/// Half-open ranges of positions whose frame indices are consecutive.
/// Adjacent class-1 segments merge into one run; gaps split runs.
pub fn contiguous_runs(frames: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0usize;
    for i in 1..frames.len() {
        if frames[i] != frames[i - 1] + 1 {
            runs.push((start, i));
            start = i;
        }
    }
    if !frames.is_empty() {
        runs.push((start, frames.len()));
    }
    runs
}

/// The inner classifier's output over the weak class-1 frames at each
/// post-processing stage. The median filter runs independently per
/// contiguous frame run so values never bleed across segment gaps.
pub struct InnerStages {
    /// Weak-split frame indices the series cover, ascending.
    pub frames: Vec<usize>,
    /// Contiguous runs within `frames` (positions, not frame indices).
    pub runs: Vec<(usize, usize)>,
    pub raw: ProbSeries,
    pub median: ProbSeries,
    pub median_reject: ProbSeries,
}

fn predict_weak_class1(
    inner: &InnerModel,
    prep: &Prepared,
) -> Result<(Vec<usize>, Vec<(usize, usize)>, ProbSeries)> {
    let frames = weak_class1_frames(&prep.weak_frame_labels);
    if frames.is_empty() {
        return Err(Error::invalid("weak split has no class-1 segments"));
    }
    let probs = inner.predict_frames(&prep.weak_feats, &frames)?;
    let runs = contiguous_runs(&frames);
    let raw = ProbSeries::from_probs(probs, prep.weak_feats.frame_s)?;
    Ok((frames, runs, raw))
}

/// Predicts over the weak class-1 frames and derives all three canonical
/// stages from the one raw pass.
pub fn superresolve_stages(
    inner: &InnerModel,
    prep: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<InnerStages> {
    let (frames, runs, raw) = predict_weak_class1(inner, prep)?;
    let median = raw.median_filter_runs(cfg.median_window, &runs)?;
    let median_reject = median.reject(cfg.reject_low, cfg.reject_high)?;
    Ok(InnerStages { frames, runs, raw, median, median_reject })
}

/// Predicts over the weak class-1 frames and applies exactly the requested
/// post-processing steps, in order (median filter, then rejection).
pub fn superresolve(
    inner: &InnerModel,
    prep: &Prepared,
    toggles: PostToggles,
    cfg: &ExperimentConfig,
) -> Result<(Vec<usize>, ProbSeries)> {
    let (frames, runs, raw) = predict_weak_class1(inner, prep)?;
    let mut series = raw;
    if toggles.median {
        series = series.median_filter_runs(cfg.median_window, &runs)?;
    }
    if toggles.rejection {
        series = series.reject(cfg.reject_low, cfg.reject_high)?;
    }
    Ok((frames, series))
}

// ----------------------------------------------------- outer training set

/// One training window for the outer network, with its origin attached.
pub struct OuterWindow {
    pub window: TrainWindow,
    pub provenance: Provenance,
}

/// Assembles the outer network's training set: every finely labelled frame
/// with its true label, every accepted pseudo-labelled frame with its
/// thresholded label, and every frame of the weak class-0 segments with
/// label 0 (known negative). Errors if a class ends up empty.
pub fn assemble_outer_training(
    prep: &Prepared,
    pseudo_frames: &[usize],
    pseudo: &ProbSeries,
) -> Result<Vec<OuterWindow>> {
    if pseudo_frames.len() != pseudo.len() {
        return Err(Error::invalid(format!(
            "{} pseudo labels for {} frames",
            pseudo.len(),
            pseudo_frames.len()
        )));
    }
    let mut windows = Vec::new();
    for (frame, &label) in prep.fine_labels.iter().enumerate() {
        windows.push(OuterWindow {
            window: TrainWindow { feats: Arc::clone(&prep.fine_feats), frame, label },
            provenance: Provenance::Fine,
        });
    }
    for (i, maybe_label) in pseudo.threshold().into_iter().enumerate() {
        if let Some(label) = maybe_label {
            windows.push(OuterWindow {
                window: TrainWindow {
                    feats: Arc::clone(&prep.weak_feats),
                    frame: pseudo_frames[i],
                    label,
                },
                provenance: Provenance::WeakSegment,
            });
        }
    }
    for (frame, &l) in prep.weak_frame_labels.iter().enumerate() {
        if l == 0 {
            windows.push(OuterWindow {
                window: TrainWindow { feats: Arc::clone(&prep.weak_feats), frame, label: 0 },
                provenance: Provenance::WeakSegment,
            });
        }
    }
    check_both_classes(&windows)?;
    Ok(windows)
}

/// Training set for the outer network fed by the segment labels directly:
/// finely labelled frames keep their true labels and every frame inside a
/// weak class-1 segment is labelled 1 at face value. Class-0 segments are
/// not used — this mirrors feeding the cascade an "inner classifier" that
/// returns probability 1 on every class-1 segment frame, and it is what
/// makes the variant a failure-mode control rather than a contender.
pub fn assemble_outer_coarse(prep: &Prepared) -> Result<Vec<OuterWindow>> {
    let mut windows = Vec::new();
    for (frame, &label) in prep.fine_labels.iter().enumerate() {
        windows.push(OuterWindow {
            window: TrainWindow { feats: Arc::clone(&prep.fine_feats), frame, label },
            provenance: Provenance::Fine,
        });
    }
    for (frame, &l) in prep.weak_frame_labels.iter().enumerate() {
        if l == 1 {
            windows.push(OuterWindow {
                window: TrainWindow { feats: Arc::clone(&prep.weak_feats), frame, label: 1 },
                provenance: Provenance::WeakSegment,
            });
        }
    }
    check_both_classes(&windows)?;
    Ok(windows)
}

fn check_both_classes(windows: &[OuterWindow]) -> Result<()> {
    let n1 = windows.iter().filter(|w| w.window.label == 1).count();
    if windows.is_empty() || n1 == 0 || n1 == windows.len() {
        return Err(Error::invalid(
            "outer training set must contain both classes after assembly",
        ));
    }
    Ok(())
}

// ------------------------------------------------------------ outer model

/// The trained outer network, in whichever precision the run asked for.
/// Seeding is precision-independent, so the two variants start from the
/// same initial parameters.
pub enum OuterModel {
    Single(CnnModel<f32>),
    Double(CnnModel<f64>),
}

impl OuterModel {
    pub fn predict_frames(&self, feats: &FeatureMatrix) -> Result<ProbSeries> {
        match self {
            OuterModel::Single(m) => m.predict_frames(feats),
            OuterModel::Double(m) => m.predict_frames(feats),
        }
    }
}

/// A trained outer network plus training diagnostics.
pub struct OuterTraining {
    pub model: OuterModel,
    pub epoch_losses: Vec<f64>,
    /// Class-0 / class-1 window counts of the training set.
    pub n_windows: (usize, usize),
}

/// Audits provenance, then trains the outer network on the windows.
pub fn train_outer(
    windows: &[OuterWindow],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<OuterTraining> {
    verify_provenance(
        windows.iter().map(|w| w.provenance),
        &[Provenance::Fine, Provenance::WeakSegment],
    )?;
    let bands = windows
        .first()
        .map(|w| w.window.feats.n_bands())
        .ok_or_else(|| Error::invalid("outer training set is empty"))?;
    let train: Vec<TrainWindow> = windows
        .iter()
        .map(|w| TrainWindow {
            feats: Arc::clone(&w.window.feats),
            frame: w.window.frame,
            label: w.window.label,
        })
        .collect();
    let n1 = train.iter().filter(|w| w.label == 1).count();
    let n_windows = (train.len() - n1, n1);
    let config = CnnConfig {
        epochs: cfg.cnn_epochs,
        lr: cfg.cnn_lr,
        batch_size: cfg.cnn_batch,
        seed,
    };
    let (model, epoch_losses) = if cfg.single_precision {
        let mut m = CnnModel::<f32>::new(bands, WINDOW_FRAMES, cfg.cnn_dropout, seed)?;
        let losses = m.train(&train, &config)?;
        (OuterModel::Single(m), losses)
    } else {
        let mut m = CnnModel::<f64>::new(bands, WINDOW_FRAMES, cfg.cnn_dropout, seed)?;
        let losses = m.train(&train, &config)?;
        (OuterModel::Double(m), losses)
    };
    Ok(OuterTraining { model, epoch_losses, n_windows })
}

// ---------------------------------------------------------------- metrics

/// Pipeline stage a metrics record was computed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    InnerRaw,
    InnerMedian,
    InnerMedianReject,
    Outer,
}

impl StageKind {
    pub fn id(self) -> &'static str {
        match self {
            StageKind::InnerRaw => "inner_raw",
            StageKind::InnerMedian => "inner_median",
            StageKind::InnerMedianReject => "inner_median_reject",
            StageKind::Outer => "outer",
        }
    }
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Frame-level detection metrics over the masked positions. All 0/0 cases
/// resolve to 0.
pub fn compute_metrics(pred: &[u8], truth: &[u8], mask: &[bool]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} truths, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for ((&p, &t), &m) in pred.iter().zip(truth).zip(mask) {
        if !m {
            continue;
        }
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics { f1, precision, recall })
}

/// One scored (classifier, stage, SNR, iteration) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub classifier: String,
    pub stage: StageKind,
    pub snr_db: f64,
    pub iteration: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub rejected_fraction: f64,
}

fn score_series(
    classifier: &str,
    stage: StageKind,
    series: &ProbSeries,
    frames: &[usize],
    truth_frames: &[u8],
    snr_db: f64,
    iteration: usize,
) -> Result<MetricsRecord> {
    let pred: Vec<u8> =
        series.threshold().into_iter().map(|o| o.unwrap_or(0)).collect();
    let truth: Vec<u8> = frames.iter().map(|&t| truth_frames[t]).collect();
    let m = compute_metrics(&pred, &truth, series.accepted())?;
    Ok(MetricsRecord {
        classifier: classifier.to_string(),
        stage,
        snr_db,
        iteration,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        rejected_fraction: series.rejected_fraction(),
    })
}

// ------------------------------------------------------------- experiment

/// A grid cell that failed; kept alongside the successful records so a
/// sweep can never silently lose iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub snr_db: f64,
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<FailureRecord>,
}

/// Number of records one successful (SNR, iteration) cell emits: three
/// inner stages per classifier, plus — when the outer stage runs — one
/// outer network per classifier, the segment-label-trained network, and
/// the density model scored directly on the test split.
pub fn records_per_cell(cfg: &ExperimentConfig) -> usize {
    let k = cfg.classifiers.len();
    let mut n = 3 * k;
    if cfg.run_outer {
        n += k + 1;
        if cfg.classifiers.contains(&InnerKind::Kde) {
            n += 1;
        }
    }
    n
}

/// Runs one (SNR, iteration) cell: fresh dataset, every configured inner
/// classifier through the three stages, then the outer networks. Record
/// order within a cell is fixed by the classifier list.
fn run_cell(cfg: &ExperimentConfig, snr_db: f64, iteration: usize) -> Result<Vec<MetricsRecord>> {
    let cell_seed = seed::derive(
        cfg.master_seed,
        &[tag::ITERATION, snr_db.to_bits(), iteration as u64],
    );
    let bundle = make_dataset(&cfg.dataset, snr_db, cell_seed)?;
    let prep = prepare(&bundle, &cfg.logmel)?;

    let weak_truth = expand_to_frames(
        bundle.weak.hidden_fine.for_scoring(),
        cfg.logmel.frame_s,
        prep.weak_feats.n_frames(),
    )?;
    let test_truth = expand_to_frames(
        bundle.test.hidden_fine.for_scoring(),
        cfg.logmel.frame_s,
        prep.test_feats.n_frames(),
    )?;

    let mut records = Vec::with_capacity(records_per_cell(cfg));
    let mut trained: Vec<(InnerKind, InnerModel, InnerStages)> =
        Vec::with_capacity(cfg.classifiers.len());

    for &kind in &cfg.classifiers {
        let inner = train_inner(&prep, kind, cfg, cell_seed)?;
        let stages = superresolve_stages(&inner, &prep, cfg)?;
        for (stage, series) in [
            (StageKind::InnerRaw, &stages.raw),
            (StageKind::InnerMedian, &stages.median),
            (StageKind::InnerMedianReject, &stages.median_reject),
        ] {
            records.push(score_series(
                kind.id(),
                stage,
                series,
                &stages.frames,
                &weak_truth,
                snr_db,
                iteration,
            )?);
        }
        trained.push((kind, inner, stages));
    }

    if cfg.run_outer {
        for (kind, _, stages) in &trained {
            let series = match (cfg.toggles.median, cfg.toggles.rejection) {
                (true, true) => stages.median_reject.clone(),
                (true, false) => stages.median.clone(),
                (false, true) => stages.raw.reject(cfg.reject_low, cfg.reject_high)?,
                (false, false) => stages.raw.clone(),
            };
            let windows = assemble_outer_training(&prep, &stages.frames, &series)?;
            let outer = train_outer(
                &windows,
                cfg,
                seed::derive(cell_seed, &[tag::CNN, kind.code()]),
            )?;
            let probs = outer.model.predict_frames(&prep.test_feats)?;
            records.push(score_series(
                kind.outer_id(),
                StageKind::Outer,
                &probs,
                &(0..test_truth.len()).collect::<Vec<_>>(),
                &test_truth,
                snr_db,
                iteration,
            )?);
        }

        let windows = assemble_outer_coarse(&prep)?;
        let outer =
            train_outer(&windows, cfg, seed::derive(cell_seed, &[tag::CNN, COARSE_CODE]))?;
        let probs = outer.model.predict_frames(&prep.test_feats)?;
        records.push(score_series(
            OUTER_COARSE_ID,
            StageKind::Outer,
            &probs,
            &(0..test_truth.len()).collect::<Vec<_>>(),
            &test_truth,
            snr_db,
            iteration,
        )?);

        if let Some((_, kde, _)) = trained.iter().find(|(k, _, _)| *k == InnerKind::Kde) {
            let all: Vec<usize> = (0..prep.test_feats.n_frames()).collect();
            let probs = kde.predict_frames(&prep.test_feats, &all)?;
            let series = ProbSeries::from_probs(probs, prep.test_feats.frame_s)?;
            records.push(score_series(
                InnerKind::Kde.id(),
                StageKind::Outer,
                &series,
                &all,
                &test_truth,
                snr_db,
                iteration,
            )?);
        }
    }

    debug_assert_eq!(records.len(), records_per_cell(cfg));
    Ok(records)
}

/// Sweeps the full SNR × iteration grid. Cells are independent and run in
/// parallel; results are merged in (SNR, iteration) order so the output is
/// identical however many threads did the work. A failed cell becomes a
/// [`FailureRecord`] and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut cells = Vec::with_capacity(cfg.snr_grid_db.len() * cfg.iterations);
    for (si, &snr) in cfg.snr_grid_db.iter().enumerate() {
        for it in 0..cfg.iterations {
            cells.push((si, snr, it));
        }
    }
    let mut results: Vec<(usize, usize, Result<Vec<MetricsRecord>>)> = cells
        .into_par_iter()
        .map(|(si, snr, it)| (si, it, run_cell(cfg, snr, it)))
        .collect();
    results.sort_by_key(|&(si, it, _)| (si, it));

    let mut out = ExperimentOutput::default();
    for (si, it, outcome) in results {
        match outcome {
            Ok(mut records) => out.records.append(&mut records),
            Err(e) => {
                let snr_db = cfg.snr_grid_db[si];
                log::warn!("iteration {it} at {snr_db} dB failed: {e}");
                out.failures.push(FailureRecord {
                    snr_db,
                    iteration: it,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

// ----------------------------------------------------------------- summary

/// Per-(classifier, stage, SNR) aggregate over iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub classifier: String,
    pub stage: StageKind,
    pub snr_db: f64,
    /// Number of iterations aggregated.
    pub n: usize,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub rejected_mean: f64,
    pub rejected_std: f64,
}

/// Mean and sample standard deviation (n − 1 divisor; 0 when n < 2).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups records by (classifier, stage, SNR) in first-appearance order
/// and aggregates each metric as mean ± sample standard deviation.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRecord> {
    let mut keys: Vec<(&str, StageKind, u64)> = Vec::new();
    let mut groups: Vec<Vec<&MetricsRecord>> = Vec::new();
    for r in records {
        let key = (r.classifier.as_str(), r.stage, r.snr_db.to_bits());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    keys.iter()
        .zip(&groups)
        .map(|(&(classifier, stage, snr_bits), group)| {
            let collect = |f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (f1_mean, f1_std) = mean_std(&collect(|r| r.f1));
            let (precision_mean, precision_std) = mean_std(&collect(|r| r.precision));
            let (recall_mean, recall_std) = mean_std(&collect(|r| r.recall));
            let (rejected_mean, rejected_std) = mean_std(&collect(|r| r.rejected_fraction));
            SummaryRecord {
                classifier: classifier.to_string(),
                stage,
                snr_db: f64::from_bits(snr_bits),
                n: group.len(),
                f1_mean,
                f1_std,
                precision_mean,
                precision_std,
                recall_mean,
                recall_std,
                rejected_mean,
                rejected_std,
            }
        })
        .collect()
}

/// Relative gain of the largest value over the runner-up:
/// `(best − second) / second`. Errors on fewer than two values, non-finite
/// input, or a non-positive runner-up.
pub fn relative_improvement(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("need at least two values to compare"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > best {
            second = best;
            best = v;
        } else if v > second {
            second = v;
        }
    }
    if second <= 0.0 {
        return Err(Error::numerical(format!(
            "cannot normalize by runner-up {second}"
        )));
    }
    Ok((best - second) / second)
}

// -------------------------------------------------------------- CSV output

/// Header of the per-record CSV.
pub const METRICS_HEADER: &str =
    "classifier,stage,snr_db,iteration,f1,precision,recall,rejected_fraction";

/// Header of the summary CSV.
pub const SUMMARY_HEADER: &str = "classifier,stage,snr_db,n,f1_mean,f1_std,\
precision_mean,precision_std,recall_mean,recall_std,rejected_mean,rejected_std";

/// Renders the records as CSV text, fixed six-decimal formatting.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.classifier, r.stage, r.snr_db, r.iteration, r.f1, r.precision, r.recall,
            r.rejected_fraction
        ));
    }
    out
}

/// Renders the summary as CSV text, fixed six-decimal formatting.
pub fn summary_csv(summary: &[SummaryRecord]) -> String {
    let mut out = String::with_capacity(96 * (summary.len() + 1));
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for s in summary {
        out.push_str(&format!(
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.classifier,
            s.stage,
            s.snr_db,
            s.n,
            s.f1_mean,
            s.f1_std,
            s.precision_mean,
            s.precision_std,
            s.recall_mean,
            s.recall_std,
            s.rejected_mean,
            s.rejected_std
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(metrics_csv(records).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(summary_csv(summary).as_bytes())?;
    w.flush()?;
    Ok(())
}
