//! Runs one full cascade cell: super-resolve the weak split with the
//! density classifier, train the small convolutional network on the
//! pseudo-labels, and score both against the withheld test labels. Uses a
//! reduced dataset so it finishes in about a minute.
//!
//!     cargo run --release --example train_outer_cnn

use labelsr::pipeline::{
    assemble_outer_training, compute_metrics, prepare, superresolve, train_inner, train_outer,
    ExperimentConfig, InnerKind,
};
use labelsr::synthgen::make_dataset;

fn main() -> labelsr::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = cfg.dataset.with_scale(0.3)?;
    let snr_db = -15.0;
    let bundle = make_dataset(&cfg.dataset, snr_db, 2)?;
    let prep = prepare(&bundle, &cfg.logmel)?;

    let inner = train_inner(&prep, InnerKind::Kde, &cfg, 2)?;
    let (frames, pseudo) = superresolve(&inner, &prep, cfg.toggles, &cfg)?;
    println!(
        "super-resolved {} weak class-1 frames ({:.1}% rejected)",
        pseudo.len(),
        100.0 * pseudo.rejected_fraction()
    );

    let windows = assemble_outer_training(&prep, &frames, &pseudo)?;
    println!("outer training set: {} windows", windows.len());
    let trained = train_outer(&windows, &cfg, 2)?;
    let losses = &trained.epoch_losses;
    println!(
        "trained network over {} epochs; loss {:.4} -> {:.4}",
        losses.len(),
        losses.first().unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN)
    );

    let truth = bundle.test.hidden_fine.for_scoring().frames();
    let all = vec![true; truth.len()];

    let outer_series = trained.model.predict_frames(&prep.test_feats)?;
    let outer_pred: Vec<u8> = outer_series.threshold().iter().map(|p| p.unwrap_or(0)).collect();
    let m = compute_metrics(&outer_pred, &truth, &all)?;
    println!(
        "\nnetwork on test at {snr_db} dB:      f1 {:.3}  precision {:.3}  recall {:.3}",
        m.f1, m.precision, m.recall
    );

    let every_frame: Vec<usize> = (0..truth.len()).collect();
    let kde_probs = inner.predict_frames(&prep.test_feats, &every_frame)?;
    let kde_pred: Vec<u8> = kde_probs.iter().map(|&p| (p >= 0.5) as u8).collect();
    let mk = compute_metrics(&kde_pred, &truth, &all)?;
    println!(
        "density classifier on test alone: f1 {:.3}  precision {:.3}  recall {:.3}",
        mk.f1, mk.precision, mk.recall
    );
    Ok(())
}
