//! Temporary diagnostic: per-event posterior statistics at the median
//! stage, to see whether missed events fail frame-by-frame or wholesale.

use labelsr::pipeline::{prepare, superresolve_stages, train_inner, ExperimentConfig, InnerKind};
use labelsr::synthgen::{make_dataset, NoiseProfile};

fn main() -> labelsr::Result<()> {
    let snr_db: f64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(-19.8);
    let alpha: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1.2);
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.noise.profile = NoiseProfile::Pink;
    cfg.dataset.noise.envelope_depth = 0.25;
    cfg.class1_bandwidth_scale = alpha;

    let bundle = make_dataset(&cfg.dataset, snr_db, 31)?;
    let prep = prepare(&bundle, &cfg.logmel)?;
    let inner = train_inner(&prep, InnerKind::Kde, &cfg, 31)?;
    let stages = superresolve_stages(&inner, &prep, &cfg)?;
    let truth = bundle.weak.hidden_fine.for_scoring().frames();

    // Group the weak split's true event frames into contiguous events.
    let med = stages.median.probs();
    let pos: std::collections::HashMap<usize, f64> =
        stages.frames.iter().copied().zip(med.iter().copied()).collect();
    let mut events: Vec<Vec<f64>> = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    for (f, &t) in truth.iter().enumerate() {
        if t == 1 {
            cur.push(*pos.get(&f).unwrap_or(&f64::NAN));
        } else if !cur.is_empty() {
            events.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        events.push(cur);
    }

    let mut histo = [0usize; 5]; // event median-of-medians: <=0.1, <0.5, <0.9, >=0.9, nan
    println!("per-event median-stage posterior (snr {snr_db} dB, alpha {alpha}):");
    for ev in &events {
        let mut v: Vec<f64> = ev.iter().copied().filter(|p| p.is_finite()).collect();
        if v.is_empty() {
            histo[4] += 1;
            continue;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let event_med = v[v.len() / 2];
        let lo = v[0];
        let hi = v[v.len() - 1];
        let bucket = if event_med <= 0.1 {
            0
        } else if event_med < 0.5 {
            1
        } else if event_med < 0.9 {
            2
        } else {
            3
        };
        histo[bucket] += 1;
        if events.len() <= 30 {
            println!("  med {event_med:.3}  range [{lo:.3}, {hi:.3}]  frames {}", ev.len());
        }
    }
    println!(
        "\n{} events: {} confidently missed (<=0.1), {} low, {} middle, {} confident (>=0.9)",
        events.len(),
        histo[0],
        histo[1],
        histo[2],
        histo[3]
    );

    // Noise-side composition: how many class-0 frames sit at each level.
    let mut n = [0usize; 4];
    for (i, &f) in stages.frames.iter().enumerate() {
        if truth[f] == 0 {
            let p = med[i];
            let b = if p <= 0.1 {
                0
            } else if p < 0.5 {
                1
            } else if p < 0.9 {
                2
            } else {
                3
            };
            n[b] += 1;
        }
    }
    println!(
        "class-0 frames: {} <=0.1, {} low, {} middle, {} >=0.9",
        n[0], n[1], n[2], n[3]
    );
    Ok(())
}
