//! Synthesizes a complete dataset — three audio splits with their label
//! tracks — and writes it to `target/example_out/dataset`.
//!
//!     cargo run --example generate_dataset

use labelsr::pipeline::ExperimentConfig;
use labelsr::synthgen::make_dataset;

fn main() -> labelsr::Result<()> {
    let cfg = ExperimentConfig::default();
    let bundle = make_dataset(&cfg.dataset, -10.0, 42)?;

    println!("generated at {} dB with seed {}:", bundle.snr_db, bundle.seed);
    println!(
        "  fine: {:6.1} s, event fraction {:.3} (per-frame labels visible)",
        bundle.fine.clip.duration_s(),
        bundle.fine.labels.event_fraction()
    );
    println!(
        "  weak: {:6.1} s, segment fraction {:.3} (only 5 s segment labels visible)",
        bundle.weak.clip.duration_s(),
        bundle.weak.weak_labels.event_fraction()
    );
    println!(
        "  test: {:6.1} s (labels withheld for scoring)",
        bundle.test.clip.duration_s()
    );

    let dir = std::path::Path::new("target/example_out/dataset");
    std::fs::create_dir_all(dir)?;
    bundle.fine.clip.write_wav(&dir.join("fine.wav"))?;
    bundle.fine.labels.write_csv(&dir.join("fine.labels.csv"))?;
    bundle.weak.clip.write_wav(&dir.join("weak.wav"))?;
    bundle.weak.weak_labels.write_csv(&dir.join("weak.labels.csv"))?;
    bundle.test.clip.write_wav(&dir.join("test.wav"))?;
    println!("wrote WAVs and label CSVs to {}", dir.display());
    Ok(())
}
