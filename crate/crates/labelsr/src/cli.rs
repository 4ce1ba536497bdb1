//! Command-line surface backing the `labelsr` binary.
//!
//! Three subcommands cover the workflow end to end:
//!
//! * `generate` — synthesize a dataset (audio, labels, withheld truth) and
//!   write it with a checksum manifest;
//! * `superresolve` — refine the weak segment labels of a generated
//!   dataset into per-frame pseudo-labels with a chosen inner classifier;
//! * `reproduce` — sweep the SNR × iteration grid, score every stage, and
//!   write metrics and summary tables.
//!
//! Settings come from built-in defaults, overridden by a TOML config file
//! (sections mirror the library modules), overridden by flags. Exit codes:
//! 0 success, 1 usage error, 2 I/O error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::audio::{AudioClip, LabelTrack};
use crate::error::{Error, Result};
use crate::features::logmel;
use crate::pipeline::{
    run_experiment, summarize, superresolve, train_inner, write_metrics_csv, write_summary_csv,
    ExperimentConfig, InnerKind, PostToggles, Prepared, StageKind, SummaryRecord,
};
use crate::postprocess::export_pseudo_csv;
use crate::synthgen::make_dataset;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Artifact version plus the on-disk format versions it reads and writes.
const FULL_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: feature cache LMSF, model checkpoint CNN1, pseudo-label CSV v1, metrics CSV v1)"
);

/// Dataset shrink factor used by `--quick` smoke runs.
const QUICK_SCALE: f64 = 0.1;

#[derive(Parser, Debug)]
#[command(
    name = "labelsr",
    version = FULL_VERSION,
    about = "Bootstrapped audio event detection from weak segment labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset and write it with a checksum manifest
    Generate(GenerateArgs),
    /// Refine weak segment labels into per-frame pseudo-labels
    Superresolve(SuperresolveArgs),
    /// Sweep the SNR grid, score every stage, and write metrics tables
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct CommonOpts {
    /// Master seed for all randomness
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration file; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Log progress to stderr
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// SNR of the mixed events in dB
    #[arg(long, value_name = "DB", allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Shrink every split to one tenth (smoke runs)
    #[arg(long)]
    quick: bool,
}

#[derive(Args, Debug)]
struct SuperresolveArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Directory holding a generated dataset
    #[arg(long, value_name = "DIR", default_value = "out")]
    data: PathBuf,
    /// Inner classifier: kde, lda, gnb, svm, rf, or mlp
    #[arg(long, default_value = "kde")]
    classifier: String,
    /// Skip the median filter
    #[arg(long)]
    no_median: bool,
    /// Skip rejection (keep every frame)
    #[arg(long)]
    no_rejection: bool,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Restrict the sweep to these SNRs (repeatable)
    #[arg(long = "snr", value_name = "DB", allow_negative_numbers = true)]
    snrs: Vec<f64>,
    /// Iterations per SNR
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    /// Inner classifiers to run, comma-separated
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    classifiers: Option<Vec<String>>,
    /// Skip the outer networks (inner stages only)
    #[arg(long)]
    inner_only: bool,
    /// Shrink every split to one tenth (smoke runs)
    #[arg(long)]
    quick: bool,
    /// Worker threads for grid cells (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

// ------------------------------------------------------------ config file

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

/// TOML configuration. Every field is optional; sections mirror the
/// library modules. Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    synthgen: Option<SynthgenSection>,
    features: Option<FeaturesSection>,
    kde: Option<KdeSection>,
    postprocess: Option<PostprocessSection>,
    cnn: Option<CnnSection>,
    baselines: Option<BaselinesSection>,
    pipeline: Option<PipelineSection>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthgenSection {
    sample_rate: Option<u32>,
    segment_s: Option<f64>,
    fine_duration_s: Option<f64>,
    fine_events: Option<usize>,
    weak_duration_s: Option<f64>,
    weak_events: Option<usize>,
    test_duration_s: Option<f64>,
    test_events: Option<usize>,
    /// Shrinks all splits after the sizes above are applied.
    scale: Option<f64>,
    /// SNR used by `generate` (the sweep grid lives in [pipeline]).
    snr_db: Option<f64>,
    event_f0_hz: Option<f64>,
    event_harmonics: Option<usize>,
    event_vibrato_depth_hz: Option<f64>,
    event_vibrato_rate_hz: Option<f64>,
    event_duration_s: Option<f64>,
    event_ramp_ms: Option<f64>,
    /// white, pink, or highband.
    noise_profile: Option<String>,
    noise_envelope_rate_hz: Option<f64>,
    noise_envelope_depth: Option<f64>,
    noise_highband_cutoff_hz: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesSection {
    frame_s: Option<f64>,
    n_mels: Option<usize>,
    n_fft: Option<usize>,
    n_select: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct KdeSection {
    bandwidth_scale: Option<f64>,
    class1_bandwidth_scale: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PostprocessSection {
    median_window: Option<usize>,
    reject_low: Option<f64>,
    reject_high: Option<f64>,
    median: Option<bool>,
    rejection: Option<bool>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CnnSection {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    dropout: Option<f64>,
    single_precision: Option<bool>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselinesSection {
    svm_c: Option<f64>,
    svm_gamma: Option<f64>,
    svm_tol: Option<f64>,
    svm_max_sweeps: Option<usize>,
    rf_trees: Option<usize>,
    rf_min_leaf: Option<usize>,
    mlp_hidden: Option<usize>,
    mlp_epochs: Option<usize>,
    mlp_lr: Option<f64>,
    mlp_batch: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineSection {
    snr_grid_db: Option<Vec<f64>>,
    iterations: Option<usize>,
    classifiers: Option<Vec<String>>,
    run_outer: Option<bool>,
    seed: Option<u64>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
}

fn parse_classifiers(names: &[String]) -> Result<Vec<InnerKind>> {
    names.iter().map(|n| n.trim().parse::<InnerKind>()).collect()
}

/// Applies a parsed config file on top of the built-in defaults. The
/// dataset's frame grid is taken from the features section so the two
/// cannot drift apart.
fn experiment_config_from(file: &FileConfig) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();

    if let Some(s) = &file.synthgen {
        set!(cfg.dataset.sample_rate, s.sample_rate);
        set!(cfg.dataset.segment_s, s.segment_s);
        set!(cfg.dataset.fine_duration_s, s.fine_duration_s);
        set!(cfg.dataset.fine_events, s.fine_events);
        set!(cfg.dataset.weak_duration_s, s.weak_duration_s);
        set!(cfg.dataset.weak_events, s.weak_events);
        set!(cfg.dataset.test_duration_s, s.test_duration_s);
        set!(cfg.dataset.test_events, s.test_events);
        set!(cfg.dataset.event.f0_hz, s.event_f0_hz);
        set!(cfg.dataset.event.n_harmonics, s.event_harmonics);
        set!(cfg.dataset.event.vibrato_depth_hz, s.event_vibrato_depth_hz);
        set!(cfg.dataset.event.vibrato_rate_hz, s.event_vibrato_rate_hz);
        set!(cfg.dataset.event.duration_s, s.event_duration_s);
        set!(cfg.dataset.event.ramp_ms, s.event_ramp_ms);
        if let Some(profile) = &s.noise_profile {
            cfg.dataset.noise.profile = profile.parse()?;
        }
        set!(cfg.dataset.noise.envelope_rate_hz, s.noise_envelope_rate_hz);
        set!(cfg.dataset.noise.envelope_depth, s.noise_envelope_depth);
        set!(cfg.dataset.noise.highband_cutoff_hz, s.noise_highband_cutoff_hz);
    }
    if let Some(f) = &file.features {
        set!(cfg.logmel.frame_s, f.frame_s);
        set!(cfg.logmel.n_mels, f.n_mels);
        set!(cfg.logmel.n_fft, f.n_fft);
        set!(cfg.n_select, f.n_select);
    }
    cfg.dataset.frame_s = cfg.logmel.frame_s;
    if let Some(k) = &file.kde {
        set!(cfg.bandwidth_scale, k.bandwidth_scale);
        set!(cfg.class1_bandwidth_scale, k.class1_bandwidth_scale);
    }
    if let Some(p) = &file.postprocess {
        set!(cfg.median_window, p.median_window);
        set!(cfg.reject_low, p.reject_low);
        set!(cfg.reject_high, p.reject_high);
        set!(cfg.toggles.median, p.median);
        set!(cfg.toggles.rejection, p.rejection);
    }
    if let Some(c) = &file.cnn {
        set!(cfg.cnn_epochs, c.epochs);
        set!(cfg.cnn_lr, c.lr);
        set!(cfg.cnn_batch, c.batch_size);
        set!(cfg.cnn_dropout, c.dropout);
        set!(cfg.single_precision, c.single_precision);
    }
    if let Some(b) = &file.baselines {
        set!(cfg.svm.c, b.svm_c);
        if b.svm_gamma.is_some() {
            cfg.svm.gamma = b.svm_gamma;
        }
        set!(cfg.svm.tol, b.svm_tol);
        set!(cfg.svm.max_sweeps, b.svm_max_sweeps);
        set!(cfg.forest.n_trees, b.rf_trees);
        set!(cfg.forest.min_leaf, b.rf_min_leaf);
        set!(cfg.mlp.hidden, b.mlp_hidden);
        set!(cfg.mlp.epochs, b.mlp_epochs);
        set!(cfg.mlp.lr, b.mlp_lr);
        set!(cfg.mlp.batch_size, b.mlp_batch);
    }
    if let Some(p) = &file.pipeline {
        set!(cfg.snr_grid_db, p.snr_grid_db.clone());
        set!(cfg.iterations, p.iterations);
        if let Some(names) = &p.classifiers {
            cfg.classifiers = parse_classifiers(names)?;
        }
        set!(cfg.run_outer, p.run_outer);
        set!(cfg.master_seed, p.seed);
    }
    Ok(cfg)
}

/// Scale from the config file, unless `--quick` overrides it.
fn effective_scale(file: &FileConfig, quick: bool) -> Option<f64> {
    if quick {
        return Some(QUICK_SCALE);
    }
    file.synthgen.as_ref().and_then(|s| s.scale)
}

// ----------------------------------------------------------------- logging

fn init_logger(verbose: bool) {
    struct StderrLogger;
    impl log::Log for StderrLogger {
        fn enabled(&self, _: &log::Metadata) -> bool {
            true
        }
        fn log(&self, record: &log::Record) {
            eprintln!("[{}] {}", record.level().to_string().to_lowercase(), record.args());
        }
        fn flush(&self) {}
    }
    static LOGGER: StderrLogger = StderrLogger;
    // Ignore the error: a logger may already be installed (tests, library use).
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn });
}

// ---------------------------------------------------------------- commands

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    init_logger(args.common.verbose);
    let file = read_file_config(args.common.config.as_deref())?;
    let cfg = experiment_config_from(&file)?;
    let mut dataset = cfg.dataset.clone();
    if let Some(scale) = effective_scale(&file, args.quick) {
        dataset = dataset.with_scale(scale)?;
    }
    let snr_db = args
        .snr
        .or(file.synthgen.as_ref().and_then(|s| s.snr_db))
        .unwrap_or(-19.8);
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let seed = args
        .common
        .seed
        .or(file.pipeline.as_ref().and_then(|p| p.seed))
        .unwrap_or(0);

    // Synthesize fully in memory before any file is created.
    let bundle = make_dataset(&dataset, snr_db, seed)?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;

    bundle.fine.clip.write_wav(&out.join("fine.wav"))?;
    bundle.fine.labels.write_csv(&out.join("fine.labels.csv"))?;
    bundle.weak.clip.write_wav(&out.join("weak.wav"))?;
    bundle.weak.weak_labels.write_csv(&out.join("weak.labels.csv"))?;
    bundle.weak.hidden_fine.for_scoring().write_csv(&out.join("weak.truth.csv"))?;
    bundle.test.clip.write_wav(&out.join("test.wav"))?;
    bundle.test.hidden_fine.for_scoring().write_csv(&out.join("test.truth.csv"))?;

    let names = [
        "fine.wav",
        "fine.labels.csv",
        "weak.wav",
        "weak.labels.csv",
        "weak.truth.csv",
        "test.wav",
        "test.truth.csv",
    ];
    let mut manifest = format!("# seed={seed} snr_db={snr_db}\n");
    for name in names {
        manifest.push_str(&format!("{}  {name}\n", sha256_hex(&out.join(name))?));
    }
    fs::write(out.join("manifest.txt"), &manifest)?;
    print!("{manifest}");
    println!("wrote {} files to {}", names.len() + 1, out.display());
    Ok(())
}

fn cmd_superresolve(args: &SuperresolveArgs) -> Result<()> {
    init_logger(args.common.verbose);
    let kind: InnerKind = args.classifier.parse()?;
    let file = read_file_config(args.common.config.as_deref())?;
    let cfg = experiment_config_from(&file)?;
    let seed = args
        .common
        .seed
        .or(file.pipeline.as_ref().and_then(|p| p.seed))
        .unwrap_or(0);
    let toggles = PostToggles {
        median: cfg.toggles.median && !args.no_median,
        rejection: cfg.toggles.rejection && !args.no_rejection,
    };

    // Only the audio and the *visible* label tracks are read; the withheld
    // truth files stay untouched.
    let data = &args.data;
    let fine_clip = AudioClip::read_wav(&data.join("fine.wav"))?;
    let fine_track = LabelTrack::read_csv(&data.join("fine.labels.csv"), cfg.logmel.frame_s)?;
    let weak_clip = AudioClip::read_wav(&data.join("weak.wav"))?;
    let weak_track = LabelTrack::read_csv(&data.join("weak.labels.csv"), cfg.dataset.segment_s)?;

    let fine_feats = logmel(&fine_clip, &cfg.logmel)?;
    let weak_feats = logmel(&weak_clip, &cfg.logmel)?;
    let prep = Prepared::inner_only(fine_feats, &fine_track, weak_feats, &weak_track)?;

    let inner = train_inner(&prep, kind, &cfg, seed)?;
    let (frames, series) = superresolve(&inner, &prep, toggles, &cfg)?;

    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let path = out.join(format!("pseudo_{}.csv", kind.id()));
    let bands = inner
        .band_centers_hz
        .iter()
        .map(|hz| format!("{hz:.1}"))
        .collect::<Vec<_>>()
        .join(";");
    let metadata = [
        ("classifier", kind.id().to_string()),
        ("median", toggles.median.to_string()),
        ("rejection", toggles.rejection.to_string()),
        ("seed", seed.to_string()),
        ("n_select", cfg.n_select.to_string()),
        ("selected_bands_hz", bands),
        ("n_frames", series.len().to_string()),
        ("rejected_fraction", format!("{:.6}", series.rejected_fraction())),
    ];
    export_pseudo_csv(&path, &series, &frames, &metadata)?;
    println!(
        "wrote {} ({} weak class-1 frames, {:.1}% rejected)",
        path.display(),
        series.len(),
        100.0 * series.rejected_fraction()
    );
    Ok(())
}

/// Rows of the summary at one SNR and stage, rendered as a fixed-width
/// table with mean ± standard deviation columns.
fn render_summary_table(summary: &[SummaryRecord], snr_db: f64, stage: StageKind) -> String {
    let rows: Vec<&SummaryRecord> = summary
        .iter()
        .filter(|s| s.stage == stage && (s.snr_db - snr_db).abs() < 1e-9)
        .collect();
    let mut out = format!(
        "{}-stage summary at {snr_db} dB ({} iteration{}):\n",
        stage,
        rows.first().map_or(0, |r| r.n),
        if rows.first().map_or(0, |r| r.n) == 1 { "" } else { "s" },
    );
    out.push_str(&format!(
        "{:<12} {:>15} {:>15} {:>15}\n",
        "classifier", "f1", "precision", "recall"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>15} {:>15} {:>15}\n",
            r.classifier,
            format!("{:.3} ± {:.3}", r.f1_mean, r.f1_std),
            format!("{:.3} ± {:.3}", r.precision_mean, r.precision_std),
            format!("{:.3} ± {:.3}", r.recall_mean, r.recall_std),
        ));
    }
    out
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<()> {
    init_logger(args.common.verbose);
    let file = read_file_config(args.common.config.as_deref())?;
    let mut cfg = experiment_config_from(&file)?;
    if let Some(scale) = effective_scale(&file, args.quick) {
        cfg.dataset = cfg.dataset.with_scale(scale)?;
    }
    if let Some(seed) = args.common.seed {
        cfg.master_seed = seed;
    }
    if !args.snrs.is_empty() {
        cfg.snr_grid_db = args.snrs.clone();
    }
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    if let Some(names) = &args.classifiers {
        cfg.classifiers = parse_classifiers(names)?;
    }
    if args.inner_only {
        cfg.run_outer = false;
    }
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::numerical(format!("cannot build worker pool: {e}")))?;
    let output = pool.install(|| run_experiment(&cfg))?;

    for f in &output.failures {
        eprintln!("failed: iteration {} at {} dB: {}", f.iteration, f.snr_db, f.message);
    }
    if output.records.is_empty() {
        return Err(Error::numerical("every grid cell failed"));
    }

    let out = &args.common.out;
    fs::create_dir_all(out)?;
    write_metrics_csv(&out.join("metrics.csv"), &output.records)?;
    let summary = summarize(&output.records);
    write_summary_csv(&out.join("summary.csv"), &summary)?;

    // Print the headline table: outer stage when it ran, otherwise the
    // median+reject inner stage, at the reference SNR if it is in the grid.
    let table_snr = cfg
        .snr_grid_db
        .iter()
        .copied()
        .find(|s| (s - -19.8).abs() < 1e-9)
        .unwrap_or(cfg.snr_grid_db[0]);
    let stage = if cfg.run_outer { StageKind::Outer } else { StageKind::InnerMedianReject };
    print!("{}", render_summary_table(&summary, table_snr, stage));

    let f1_means: Vec<f64> = summary
        .iter()
        .filter(|s| s.stage == stage && (s.snr_db - table_snr).abs() < 1e-9)
        .map(|s| s.f1_mean)
        .collect();
    match crate::pipeline::relative_improvement(&f1_means) {
        Ok(rel) => println!(
            "best beats the runner-up by {:.1}% relative F1 at {table_snr} dB",
            100.0 * rel
        ),
        Err(e) => log::info!("improvement line skipped: {e}"),
    }
    if !output.failures.is_empty() {
        println!("{} grid cell(s) failed; see stderr", output.failures.len());
    }
    println!(
        "wrote {} and {}",
        out.join("metrics.csv").display(),
        out.join("summary.csv").display()
    );
    Ok(())
}

// ------------------------------------------------------------------- entry

/// Exit code for an error, per the documented mapping.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        Error::Numerical(_) | Error::Protocol(_) => EXIT_NUMERICAL,
    }
}

/// Parses arguments and runs the chosen command; returns the process exit
/// code. Argument errors never touch the filesystem.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but exit 0.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Superresolve(args) => cmd_superresolve(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
