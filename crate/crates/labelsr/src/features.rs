//! Log-mel features and Kolmogorov-Smirnov band selection.
//!
//! Audio is cut into non-overlapping 0.1 s frames; each frame becomes 128
//! log-mel filterbank energies, so 100 s of audio yields a 1000 x 128
//! matrix. Band selection ranks the 128 bands by the two-sample KS
//! statistic between event and background frames and keeps the most
//! separable ones; classifiers that cannot cope with 128 dimensions run on
//! that subset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Natural-log floor applied before taking logs of band energies.
pub const LOG_FLOOR: f64 = 1e-10;

const CACHE_MAGIC: &[u8; 4] = b"LMSF";

#[derive(Debug, Clone, PartialEq)]
pub struct LogmelConfig {
    pub frame_s: f64,
    pub n_mels: usize,
    pub n_fft: usize,
}

impl Default for LogmelConfig {
    fn default() -> Self {
        LogmelConfig { frame_s: 0.1, n_mels: 128, n_fft: 1024 }
    }
}

/// Frames-by-bands feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frame_s: f64,
    pub band_centers_hz: Vec<f64>,
    values: Array2<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix directly from values; band centre count must match
    /// the column count and everything must be finite.
    pub fn from_parts(
        frame_s: f64,
        band_centers_hz: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        if band_centers_hz.len() != values.ncols() {
            return Err(Error::invalid(format!(
                "{} band centres for {} columns",
                band_centers_hz.len(),
                values.ncols()
            )));
        }
        if !(frame_s > 0.0) {
            return Err(Error::invalid("frame duration must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(FeatureMatrix { frame_s, band_centers_hz, values })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bands(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    /// Copies the given columns (in the given order) for the given rows.
    pub fn gather(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[[i, j]] = self.values[[r, c]];
            }
        }
        out
    }

    /// Binary cache: magic `LMSF`, little-endian u32 frame and band counts,
    /// then row-major f32 values.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.n_frames() as u32).to_le_bytes())?;
        w.write_all(&(self.n_bands() as u32).to_le_bytes())?;
        for &v in self.values.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`write_cache`](Self::write_cache). Frame
    /// length and band centers are not stored in the file; the caller
    /// supplies the frame length and centers are recomputed if needed.
    pub fn read_cache(path: &Path, frame_s: f64, band_centers_hz: Vec<f64>) -> Result<Self> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::format(display, "bad magic; not a feature cache"));
        }
        let mut quad = [0u8; 4];
        r.read_exact(&mut quad)?;
        let t = u32::from_le_bytes(quad) as usize;
        r.read_exact(&mut quad)?;
        let b = u32::from_le_bytes(quad) as usize;
        if !band_centers_hz.is_empty() && band_centers_hz.len() != b {
            return Err(Error::format(display, "band count does not match centers"));
        }
        let mut values = Array2::zeros((t, b));
        for v in values.iter_mut() {
            r.read_exact(&mut quad)?;
            *v = f32::from_le_bytes(quad) as f64;
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(Error::format(display, "trailing bytes after matrix"));
        }
        Ok(FeatureMatrix { frame_s, band_centers_hz, values })
    }

    /// Plain-text mirror of the cache for eyeballing.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "frame_idx")?;
        for b in 0..self.n_bands() {
            write!(w, ",mel_{b}")?;
        }
        writeln!(w)?;
        for t in 0..self.n_frames() {
            write!(w, "{t}")?;
            for b in 0..self.n_bands() {
                write!(w, ",{:.6}", self.values[[t, b]])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, HTK-style: corner points equally spaced on
/// the mel scale from 0 Hz to Nyquist, triangles linear in Hz, peak 1
/// (unnormalized). Returned per band as `(first_bin, weights)`.
struct MelBank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<MelBank> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_bins = n_fft / 2 + 1;
    let hz_per_bin = sample_rate as f64 / n_fft as f64;
    let max_mel = hz_to_mel(nyquist);
    let points_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut filters = Vec::with_capacity(n_mels);
    let mut centers = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
        let first = (lo / hz_per_bin).ceil() as usize;
        let last = ((hi / hz_per_bin).floor() as usize).min(n_bins - 1);
        let mut weights = Vec::new();
        for k in first..=last {
            let f = k as f64 * hz_per_bin;
            let w = if f <= mid { (f - lo) / (mid - lo) } else { (hi - f) / (hi - mid) };
            weights.push(w.max(0.0));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::numerical(format!(
                "mel band {m} has no positive weight; raise n_fft or lower n_mels"
            )));
        }
        filters.push((first, weights));
        centers.push(mid);
    }
    Ok(MelBank { filters, centers_hz: centers })
}

/// Log-mel spectrogram over non-overlapping frames. A trailing partial
/// frame is discarded; a clip shorter than one frame is an error.
pub fn logmel(clip: &AudioClip, cfg: &LogmelConfig) -> Result<FeatureMatrix> {
    let frame_len = (cfg.frame_s * clip.sample_rate as f64).round() as usize;
    if frame_len == 0 || cfg.n_mels == 0 {
        return Err(Error::invalid("frame length and band count must be positive"));
    }
    if cfg.n_fft < frame_len {
        return Err(Error::invalid(format!(
            "n_fft {} is smaller than the {frame_len}-sample frame",
            cfg.n_fft
        )));
    }
    let n_frames = clip.samples.len() / frame_len;
    if n_frames == 0 {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than one {frame_len}-sample frame",
            clip.samples.len()
        )));
    }

    let bank = mel_filterbank(clip.sample_rate, cfg.n_fft, cfg.n_mels)?;
    let hann: Vec<f64> = (0..frame_len)
        .map(|i| {
            0.5 * (1.0
                - (std::f64::consts::TAU * i as f64 / (frame_len - 1) as f64).cos())
        })
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let mut values = Array2::zeros((n_frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0f64, 0.0); cfg.n_fft];
    let mut power = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        let frame = &clip.samples[t * frame_len..(t + 1) * frame_len];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < frame_len {
                Complex::new(frame[i] as f64 * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for (b, (first, weights)) in bank.filters.iter().enumerate() {
            let mut e = 0.0;
            for (off, &w) in weights.iter().enumerate() {
                e += w * power[first + off];
            }
            values[[t, b]] = e.max(LOG_FLOOR).ln();
        }
    }

    Ok(FeatureMatrix { frame_s: cfg.frame_s, band_centers_hz: bank.centers_hz, values })
}

/// Two-sample Kolmogorov-Smirnov statistic: the supremum distance between
/// the empirical CDFs. Ties are handled exactly by advancing both samples
/// past each distinct value before comparing.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS statistic needs non-empty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("KS statistic needs finite samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n || j < m {
        let v = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < n && sa[i] == v {
            i += 1;
        }
        while j < m && sb[j] == v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    Ok(d)
}

/// Per-band KS statistics between the two classes.
#[derive(Debug, Clone)]
pub struct KsResult {
    pub d: Vec<f64>,
    pub n_class0: usize,
    pub n_class1: usize,
}

/// Ranks bands by KS statistic between class-0 and class-1 frames and
/// returns the indices of the `n_select` most separable ones in ascending
/// band order. Ties in D prefer the lower band index.
pub fn select_features(
    feats: &FeatureMatrix,
    frame_labels: &[u8],
    n_select: usize,
) -> Result<(Vec<usize>, KsResult)> {
    if frame_labels.len() != feats.n_frames() {
        return Err(Error::invalid(format!(
            "{} labels for {} frames",
            frame_labels.len(),
            feats.n_frames()
        )));
    }
    if n_select == 0 || n_select > feats.n_bands() {
        return Err(Error::invalid(format!(
            "cannot select {n_select} of {} bands",
            feats.n_bands()
        )));
    }
    let idx0: Vec<usize> =
        frame_labels.iter().enumerate().filter(|(_, &l)| l == 0).map(|(i, _)| i).collect();
    let idx1: Vec<usize> =
        frame_labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
    if idx0.is_empty() || idx1.is_empty() {
        return Err(Error::invalid("both classes must be present for selection"));
    }

    let mut d = Vec::with_capacity(feats.n_bands());
    let mut col0 = Vec::with_capacity(idx0.len());
    let mut col1 = Vec::with_capacity(idx1.len());
    for b in 0..feats.n_bands() {
        col0.clear();
        col1.clear();
        col0.extend(idx0.iter().map(|&t| feats.values[[t, b]]));
        col1.extend(idx1.iter().map(|&t| feats.values[[t, b]]));
        d.push(ks_statistic(&col0, &col1)?);
    }

    let mut order: Vec<usize> = (0..d.len()).collect();
    // Stable sort by descending D keeps the lower band index on ties.
    order.sort_by(|&x, &y| d[y].partial_cmp(&d[x]).unwrap());
    let mut selected: Vec<usize> = order[..n_select].to_vec();
    selected.sort_unstable();
    Ok((selected, KsResult { d, n_class0: idx0.len(), n_class1: idx1.len() }))
}
