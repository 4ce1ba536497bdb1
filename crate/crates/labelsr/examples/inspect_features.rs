//! Looks inside the feature front end: generates a dataset, computes
//! log-mel features on the finely-labelled split, runs the rank-based
//! band selection, and prints how well the chosen bands separate the
//! two classes.
//!
//!     cargo run --example inspect_features [snr_db]

use labelsr::features::{logmel, select_features};
use labelsr::pipeline::ExperimentConfig;
use labelsr::synthgen::make_dataset;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn main() -> labelsr::Result<()> {
    let snr_db: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("SNR must be a number"))
        .unwrap_or(-19.8);
    let cfg = ExperimentConfig::default();
    let bundle = make_dataset(&cfg.dataset, snr_db, 1)?;
    let feats = logmel(&bundle.fine.clip, &cfg.logmel)?;
    let labels = bundle.fine.labels.frames();

    println!(
        "fine split at {snr_db} dB: {} frames x {} bands, {} class-1 frames",
        feats.n_frames(),
        feats.n_bands(),
        labels.iter().filter(|&&l| l == 1).count()
    );

    let (selected, ks) = select_features(&feats, &labels, cfg.n_select)?;
    println!("\nselected bands (KS statistic, class-conditional log-energy):");
    println!(
        "{:>6} {:>10} {:>6}   {:>16} {:>16} {:>6}",
        "band", "centre_hz", "ks_d", "class0 mean±std", "class1 mean±std", "d'"
    );
    for &b in &selected {
        let (mut x0, mut x1) = (Vec::new(), Vec::new());
        for (i, &l) in labels.iter().enumerate() {
            let v = feats.values()[(i, b)];
            if l == 1 {
                x1.push(v);
            } else {
                x0.push(v);
            }
        }
        let (m0, s0) = mean_std(&x0);
        let (m1, s1) = mean_std(&x1);
        let pooled = (0.5 * (s0 * s0 + s1 * s1)).sqrt().max(1e-12);
        println!(
            "{:>6} {:>10.1} {:>6.3}   {:>8.3} ± {:<5.3} {:>8.3} ± {:<5.3} {:>6.2}",
            b,
            feats.band_centers_hz[b],
            ks.d[b],
            m0,
            s0,
            m1,
            s1,
            (m1 - m0) / pooled
        );
    }
    println!("\nclass counts used by the ranking: {} / {}", ks.n_class0, ks.n_class1);
    Ok(())
}
