//! Audio clips, label tracks, and their on-disk formats.
//!
//! Clips are mono PCM held as `f32` in [-1, 1]. Label tracks are interval
//! lists that tile a clip at a fixed resolution: fine tracks at the frame
//! length (0.1 s by default), weak tracks at the segment length (5 s).
//! On disk, clips are 16-bit PCM WAV and tracks are CSV with header
//! `start_s,end_s,label`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

const I16_SCALE: f32 = 32767.0;

/// Mono audio buffer. `samples.len()` is exactly `duration * sample_rate`.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(AudioClip { sample_rate, samples })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        sum / self.samples.len() as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()))
    }

    /// Writes 16-bit PCM mono WAV. Samples are clamped to [-1, 1] and
    /// rounded; the quantization step is 1/32767.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)
            .map_err(|e| wav_error(path, e))?;
        for &s in &self.samples {
            let q = (s.clamp(-1.0, 1.0) * I16_SCALE).round() as i16;
            writer.write_sample(q).map_err(|e| wav_error(path, e))?;
        }
        writer.finalize().map_err(|e| wav_error(path, e))?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "expected 16-bit mono PCM, got {} ch / {} bit",
                    spec.channels, spec.bits_per_sample
                ),
            ));
        }
        let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
        let samples = samples.map_err(|e| wav_error(path, e))?;
        AudioClip::new(spec.sample_rate, samples.iter().map(|&q| q as f32 / I16_SCALE).collect())
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::format(path.display().to_string(), other.to_string()),
    }
}

/// One labelled interval, half-open: `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: u8,
}

/// Labelled intervals tiling `[0, duration_s)` at a fixed resolution.
/// Every boundary is an integer multiple of `resolution_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrack {
    pub resolution_s: f64,
    pub duration_s: f64,
    intervals: Vec<Interval>,
}

/// Snaps a boundary to the resolution grid, or reports how far off it is.
fn grid_index(t: f64, resolution_s: f64) -> Result<usize> {
    let k = t / resolution_s;
    let rounded = k.round();
    if (k - rounded).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "boundary {t} s is not a multiple of the {resolution_s} s resolution"
        )));
    }
    Ok(rounded as usize)
}

impl LabelTrack {
    /// Builds a track from explicit intervals. They must tile `[0, duration)`
    /// contiguously, carry labels in {0, 1}, and sit on the resolution grid.
    pub fn from_intervals(
        intervals: Vec<Interval>,
        resolution_s: f64,
        duration_s: f64,
    ) -> Result<Self> {
        if resolution_s <= 0.0 || duration_s <= 0.0 {
            return Err(Error::invalid("resolution and duration must be positive"));
        }
        grid_index(duration_s, resolution_s)?;
        let mut cursor = 0.0f64;
        for iv in &intervals {
            if iv.label > 1 {
                return Err(Error::invalid(format!("label {} outside {{0,1}}", iv.label)));
            }
            if (iv.start_s - cursor).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "intervals must tile the clip; gap or overlap at {} s",
                    iv.start_s
                )));
            }
            if iv.end_s <= iv.start_s {
                return Err(Error::invalid("empty or reversed interval"));
            }
            grid_index(iv.start_s, resolution_s)?;
            grid_index(iv.end_s, resolution_s)?;
            cursor = iv.end_s;
        }
        if (cursor - duration_s).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "intervals cover [0, {cursor}) but the clip lasts {duration_s} s"
            )));
        }
        Ok(LabelTrack { resolution_s, duration_s, intervals })
    }

    /// Builds a track from label-1 event intervals; everything else is 0.
    /// Events must be sorted, non-overlapping, and grid-aligned.
    pub fn from_events(
        events: &[(f64, f64)],
        resolution_s: f64,
        duration_s: f64,
    ) -> Result<Self> {
        let mut intervals = Vec::with_capacity(events.len() * 2 + 1);
        let mut cursor = 0.0f64;
        for &(start, end) in events {
            if start < cursor - 1e-9 {
                return Err(Error::invalid("event intervals must be sorted and disjoint"));
            }
            if start > cursor + 1e-9 {
                intervals.push(Interval { start_s: cursor, end_s: start, label: 0 });
            }
            intervals.push(Interval { start_s: start, end_s: end, label: 1 });
            cursor = end;
        }
        if cursor < duration_s - 1e-9 {
            intervals.push(Interval { start_s: cursor, end_s: duration_s, label: 0 });
        }
        Self::from_intervals(intervals, resolution_s, duration_s)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    /// Intervals carrying a given label.
    pub fn intervals_with_label(&self, label: u8) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |iv| iv.label == label)
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s / self.resolution_s).round() as usize
    }

    /// Expands the track to one label per resolution-sized frame.
    pub fn frames(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.n_frames()];
        for iv in &self.intervals {
            let a = (iv.start_s / self.resolution_s).round() as usize;
            let b = (iv.end_s / self.resolution_s).round() as usize;
            for slot in &mut out[a..b] {
                *slot = iv.label;
            }
        }
        out
    }

    /// Total duration labelled 1, as a fraction of the clip.
    pub fn event_fraction(&self) -> f64 {
        let event_s: f64 = self
            .intervals_with_label(1)
            .map(|iv| iv.end_s - iv.start_s)
            .sum();
        event_s / self.duration_s
    }

    /// Writes `start_s,end_s,label` rows with three fractional digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "start_s,end_s,label")?;
        for iv in &self.intervals {
            writeln!(w, "{:.3},{:.3},{}", iv.start_s, iv.end_s, iv.label)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a track written by [`write_csv`](Self::write_csv). The caller
    /// states the expected resolution; boundaries are validated against it.
    pub fn read_csv(path: &Path, resolution_s: f64) -> Result<Self> {
        let file = File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let display = path.display().to_string();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(Error::format(display, "empty file")),
        };
        if header.trim() != "start_s,end_s,label" {
            return Err(Error::format(display, format!("unexpected header `{header}`")));
        }
        let mut intervals = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::format(display, format!("line {}: expected 3 fields", i + 2)));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format(&display, format!("line {}: bad {what} `{s}`", i + 2))
                })
            };
            let start_s = parse(fields[0], "start_s")?;
            let end_s = parse(fields[1], "end_s")?;
            let label: u8 = fields[2].trim().parse().map_err(|_| {
                Error::format(&display, format!("line {}: bad label `{}`", i + 2, fields[2]))
            })?;
            intervals.push(Interval { start_s, end_s, label });
        }
        let duration_s = intervals.last().map(|iv| iv.end_s).unwrap_or(0.0);
        Self::from_intervals(intervals, resolution_s, duration_s)
    }
}

/// Ground truth withheld from training. Scoring code unwraps it explicitly
/// through [`for_scoring`](HiddenTrack::for_scoring), which makes any leak
/// into a fit routine visible at the call site and lets the pipeline audit
/// provenance tags.
#[derive(Debug, Clone)]
pub struct HiddenTrack(LabelTrack);

impl HiddenTrack {
    pub fn new(track: LabelTrack) -> Self {
        HiddenTrack(track)
    }

    pub fn for_scoring(&self) -> &LabelTrack {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let samples: Vec<f32> = (0..800)
            .map(|i| (i as f32 / 800.0 * std::f32::consts::TAU * 3.0).sin() * 0.8)
            .collect();
        let clip = AudioClip::new(8000, samples.clone()).unwrap();
        clip.write_wav(&path).unwrap();
        let back = AudioClip::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.samples.len(), 800);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / I16_SCALE, "{a} vs {b}");
        }
    }

    #[test]
    fn wav_is_16bit_mono() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        AudioClip::new(8000, vec![0.0; 100]).unwrap().write_wav(&path).unwrap();
        let spec = hound::WavReader::open(&path).unwrap().spec();
        assert_eq!(spec.channels, 1);
        assert_eq!(spec.bits_per_sample, 16);
        assert_eq!(spec.sample_rate, 8000);
    }

    #[test]
    fn clipping_samples_saturate() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        AudioClip::new(8000, vec![2.0, -2.0]).unwrap().write_wav(&path).unwrap();
        let back = AudioClip::read_wav(&path).unwrap();
        assert!((back.samples[0] - 1.0).abs() < 1e-6);
        assert!((back.samples[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn track_from_events_tiles_clip() {
        let track = LabelTrack::from_events(&[(1.0, 2.0), (4.0, 5.0)], 0.1, 10.0).unwrap();
        let ivs = track.intervals();
        assert_eq!(ivs.len(), 5);
        assert_eq!(ivs[0], Interval { start_s: 0.0, end_s: 1.0, label: 0 });
        assert_eq!(ivs[1], Interval { start_s: 1.0, end_s: 2.0, label: 1 });
        assert_eq!(ivs[4], Interval { start_s: 5.0, end_s: 10.0, label: 0 });
        assert!((track.event_fraction() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn frame_expansion_marks_event_frames() {
        let track = LabelTrack::from_events(&[(0.5, 1.5)], 0.1, 2.0).unwrap();
        let frames = track.frames();
        assert_eq!(frames.len(), 20);
        assert_eq!(&frames[..5], &[0, 0, 0, 0, 0]);
        assert_eq!(&frames[5..15], &[1; 10]);
        assert_eq!(&frames[15..], &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn off_grid_boundary_rejected() {
        // 0.55 is not a multiple of the 0.1 s resolution
        assert!(LabelTrack::from_events(&[(0.55, 1.55)], 0.1, 2.0).is_err());
        assert!(LabelTrack::from_events(&[(0.5, 1.5)], 0.1, 2.0).is_ok());
    }

    #[test]
    fn overlapping_events_rejected() {
        assert!(LabelTrack::from_events(&[(0.5, 1.5), (1.0, 2.0)], 0.1, 4.0).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_track() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let track = LabelTrack::from_events(&[(1.0, 2.0)], 0.1, 5.0).unwrap();
        track.write_csv(&path).unwrap();
        let back = LabelTrack::read_csv(&path, 0.1).unwrap();
        assert_eq!(track, back);
    }

    #[test]
    fn csv_has_header_and_three_decimals() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        LabelTrack::from_events(&[(0.1, 1.1)], 0.1, 2.0).unwrap().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "start_s,end_s,label");
        assert_eq!(lines.next().unwrap(), "0.000,0.100,0");
        assert_eq!(lines.next().unwrap(), "0.100,1.100,1");
    }

    #[test]
    fn csv_with_bad_label_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "start_s,end_s,label\n0.000,1.000,2\n").unwrap();
        assert!(LabelTrack::read_csv(&path, 0.1).is_err());
    }

    #[test]
    fn weak_resolution_track() {
        let ivs = vec![
            Interval { start_s: 0.0, end_s: 5.0, label: 0 },
            Interval { start_s: 5.0, end_s: 10.0, label: 1 },
        ];
        let track = LabelTrack::from_intervals(ivs, 5.0, 10.0).unwrap();
        assert_eq!(track.frames(), vec![0, 1]);
        assert_eq!(track.n_frames(), 2);
    }
}
