//! Compares all six inner classifiers across a small SNR grid, inner
//! stages only (no networks), and prints the median+reject stage summary
//! per SNR.
//!
//!     cargo run --release --example compare_inner_classifiers

use labelsr::pipeline::{run_experiment, summarize, ExperimentConfig, StageKind};

fn main() -> labelsr::Result<()> {
    let cfg = ExperimentConfig {
        snr_grid_db: vec![-19.8, -10.0, 0.0],
        iterations: 2,
        run_outer: false,
        master_seed: 17,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let output = run_experiment(&cfg)?;
    let summary = summarize(&output.records);

    for &snr in &cfg.snr_grid_db {
        println!("median+reject stage at {snr} dB (mean over {} iterations):", cfg.iterations);
        println!("  {:<6} {:>6} {:>10} {:>7} {:>9}", "inner", "f1", "precision", "recall", "rejected");
        for s in summary.iter().filter(|s| {
            s.stage == StageKind::InnerMedianReject && (s.snr_db - snr).abs() < 1e-9
        }) {
            println!(
                "  {:<6} {:>6.3} {:>10.3} {:>7.3} {:>8.1}%",
                s.classifier, s.f1_mean, s.precision_mean, s.recall_mean, 100.0 * s.rejected_mean
            );
        }
        println!();
    }
    Ok(())
}
