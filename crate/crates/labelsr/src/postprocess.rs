//! Pseudo-label post-processing: median filtering, rejection, thresholding.
//!
//! The inner classifier emits one probability per frame. Before those
//! become training labels they are smoothed with a short median filter,
//! frames with ambiguous probabilities are rejected outright, and the
//! survivors are thresholded at 0.5. The series carries a stage tag so the
//! pipeline can assert the order (filter before reject) and so metrics can
//! name the stage they were computed at.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Which post-processing steps have been applied, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Median,
    MedianReject,
    /// Rejection applied straight to raw probabilities (median toggled off).
    RawReject,
}

impl Stage {
    pub fn rejected(self) -> bool {
        matches!(self, Stage::MedianReject | Stage::RawReject)
    }
}

/// Per-frame class-1 probabilities plus an acceptance mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeries {
    pub frame_s: f64,
    probs: Vec<f64>,
    accepted: Vec<bool>,
    stage: Stage,
}

impl ProbSeries {
    pub fn from_probs(probs: Vec<f64>, frame_s: f64) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let accepted = vec![true; probs.len()];
        Ok(ProbSeries { frame_s, probs, accepted, stage: Stage::Raw })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn accepted(&self) -> &[bool] {
        &self.accepted
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn rejected_fraction(&self) -> f64 {
        if self.probs.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| !a).count() as f64 / self.probs.len() as f64
    }

    /// Sliding median with reflect padding. The window must be odd;
    /// window 1 is the identity. Rejection must not have happened yet:
    /// filtering a masked series would smear values across the holes.
    pub fn median_filter(&self, window: usize) -> Result<ProbSeries> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::invalid(format!("median window must be odd, got {window}")));
        }
        if self.stage.rejected() {
            return Err(Error::Protocol(
                "median filter must run before rejection".into(),
            ));
        }
        let filtered = median_filter_values(&self.probs, window);
        Ok(ProbSeries {
            frame_s: self.frame_s,
            probs: filtered,
            accepted: self.accepted.clone(),
            stage: Stage::Median,
        })
    }

    /// Rejects frames whose probability lies strictly inside
    /// `(low, high)`; endpoints are kept. Probabilities are not modified.
    pub fn reject(&self, low: f64, high: f64) -> Result<ProbSeries> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return Err(Error::invalid(format!("bad rejection band ({low}, {high})")));
        }
        if self.stage.rejected() {
            return Err(Error::Protocol("rejection applied twice".into()));
        }
        let accepted: Vec<bool> =
            self.probs.iter().map(|&p| p <= low || p >= high).collect();
        let stage = match self.stage {
            Stage::Raw => Stage::RawReject,
            Stage::Median => Stage::MedianReject,
            _ => unreachable!(),
        };
        Ok(ProbSeries { frame_s: self.frame_s, probs: self.probs.clone(), accepted, stage })
    }

    /// Median filter applied independently to each contiguous run of the
    /// series. `runs` are half-open index ranges that must tile
    /// `[0, len)` in order; reflect padding happens per run, so values
    /// never bleed across a gap between runs.
    pub fn median_filter_runs(
        &self,
        window: usize,
        runs: &[(usize, usize)],
    ) -> Result<ProbSeries> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::invalid(format!("median window must be odd, got {window}")));
        }
        if self.stage.rejected() {
            return Err(Error::Protocol(
                "median filter must run before rejection".into(),
            ));
        }
        let mut cursor = 0usize;
        let mut filtered = Vec::with_capacity(self.probs.len());
        for &(start, end) in runs {
            if start != cursor || end <= start || end > self.probs.len() {
                return Err(Error::invalid(format!(
                    "runs must tile the series; got [{start}, {end}) at offset {cursor}"
                )));
            }
            filtered.extend(median_filter_values(&self.probs[start..end], window));
            cursor = end;
        }
        if cursor != self.probs.len() {
            return Err(Error::invalid(format!(
                "runs cover {cursor} of {} frames",
                self.probs.len()
            )));
        }
        Ok(ProbSeries {
            frame_s: self.frame_s,
            probs: filtered,
            accepted: self.accepted.clone(),
            stage: Stage::Median,
        })
    }

    /// Hard labels for accepted frames: `p >= 0.5` maps to 1. Rejected
    /// frames yield `None`.
    pub fn threshold(&self) -> Vec<Option<u8>> {
        self.probs
            .iter()
            .zip(&self.accepted)
            .map(|(&p, &a)| if a { Some((p >= 0.5) as u8) } else { None })
            .collect()
    }
}

/// Reflect (mirror without repeating the edge) an out-of-range index into
/// `[0, n)`.
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn median_filter_values(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    if n == 0 || window == 1 {
        return values.to_vec();
    }
    let half = (window / 2) as isize;
    let mut buf = vec![0.0f64; window];
    (0..n as isize)
        .map(|t| {
            for (slot, off) in buf.iter_mut().zip(-half..=half) {
                *slot = values[reflect_index(t + off, n)];
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            buf[window / 2]
        })
        .collect()
}

/// Writes the pseudo-label CSV: `#`-prefixed metadata lines, a header,
/// then one row per frame with its global frame index. Labels are the
/// thresholded probabilities; the `accepted` column says whether a row may
/// be used downstream.
pub fn export_pseudo_csv(
    path: &Path,
    series: &ProbSeries,
    frame_indices: &[usize],
    metadata: &[(&str, String)],
) -> Result<()> {
    if frame_indices.len() != series.len() {
        return Err(Error::invalid("one frame index per probability required"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "frame_idx,start_s,prob,accepted,label")?;
    for ((&idx, &p), &a) in frame_indices.iter().zip(series.probs()).zip(series.accepted())
    {
        writeln!(
            w,
            "{idx},{:.3},{p:.6},{},{}",
            idx as f64 * series.frame_s,
            a as u8,
            (p >= 0.5) as u8
        )?;
    }
    w.flush()?;
    Ok(())
}
