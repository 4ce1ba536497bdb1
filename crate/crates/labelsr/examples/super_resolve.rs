//! Runs the label super-resolution stage in memory and scores each
//! post-processing stage against the withheld ground truth: a density
//! classifier trained on the finely labelled split (plus weak class-0
//! segments) predicts per-frame probabilities inside the weak split's
//! class-1 segments.
//!
//!     cargo run --example super_resolve [snr_db]

use labelsr::pipeline::{
    compute_metrics, prepare, superresolve_stages, train_inner, ExperimentConfig, InnerKind,
};
use labelsr::postprocess::ProbSeries;
use labelsr::synthgen::make_dataset;

fn score(series: &ProbSeries, frames: &[usize], truth: &[u8]) -> labelsr::Result<(f64, f64, f64)> {
    let pred: Vec<u8> = series.threshold().iter().map(|p| p.unwrap_or(0)).collect();
    let t: Vec<u8> = frames.iter().map(|&f| truth[f]).collect();
    let m = compute_metrics(&pred, &t, series.accepted())?;
    Ok((m.f1, m.precision, m.recall))
}

fn main() -> labelsr::Result<()> {
    let snr_db: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("SNR must be a number"))
        .unwrap_or(-10.0);
    let cfg = ExperimentConfig::default();
    let bundle = make_dataset(&cfg.dataset, snr_db, 5)?;
    let prep = prepare(&bundle, &cfg.logmel)?;

    let inner = train_inner(&prep, InnerKind::Kde, &cfg, 5)?;
    println!(
        "inner model: {} on bands {:?} ({} / {} training frames per class)",
        inner.kind, inner.selected_bands, inner.n_train.0, inner.n_train.1
    );

    let stages = superresolve_stages(&inner, &prep, &cfg)?;
    let truth = bundle.weak.hidden_fine.for_scoring().frames();

    println!("\nstage scores over {} weak class-1 frames at {snr_db} dB:", stages.frames.len());
    for (name, series) in [
        ("raw", &stages.raw),
        ("median", &stages.median),
        ("median+reject", &stages.median_reject),
    ] {
        let (f1, precision, recall) = score(series, &stages.frames, &truth)?;
        println!(
            "  {name:<14} f1 {f1:.3}  precision {precision:.3}  recall {recall:.3}  rejected {:.1}%",
            100.0 * series.rejected_fraction()
        );
    }
    Ok(())
}
