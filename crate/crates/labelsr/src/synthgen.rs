//! Synthetic dataset generation with controlled SNR.
//!
//! A dataset imitates the bootstrapping setting: a short finely labelled
//! split, a long weakly labelled split, and a long hidden-truth test split.
//! Each split is background noise with a fixed harmonic event mixed in at a
//! target SNR. The event stands in for a stationary real-world recording
//! (a tonal call with vibrato); the noise is deliberately non-stationary so
//! that classifiers cannot rely on a fixed noise floor.
//!
//! SNR is defined over the event's support: `10*log10(P_event / P_noise)`
//! with mean powers taken across the one-second window where the event sits.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::audio::{AudioClip, HiddenTrack, LabelTrack};
use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Harmonic stand-in for a real event recording. Harmonic k has amplitude
/// `1/k`; the fundamental carries slow sinusoidal vibrato.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    pub f0_hz: f64,
    pub n_harmonics: usize,
    pub vibrato_depth_hz: f64,
    pub vibrato_rate_hz: f64,
    pub duration_s: f64,
    pub ramp_ms: f64,
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec {
            f0_hz: 600.0,
            n_harmonics: 5,
            vibrato_depth_hz: 10.0,
            vibrato_rate_hz: 5.0,
            duration_s: 1.0,
            ramp_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseProfile {
    White,
    Pink,
    /// White noise high-passed at the cutoff, plus a quieter broadband
    /// floor so the low bands are not silent.
    Highband,
}

impl std::str::FromStr for NoiseProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseProfile::White),
            "pink" => Ok(NoiseProfile::Pink),
            "highband" => Ok(NoiseProfile::Highband),
            other => Err(Error::invalid(format!("unknown noise profile `{other}`"))),
        }
    }
}

impl std::fmt::Display for NoiseProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseProfile::White => "white",
            NoiseProfile::Pink => "pink",
            NoiseProfile::Highband => "highband",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub profile: NoiseProfile,
    /// Rate of the slow multiplicative gain envelope.
    pub envelope_rate_hz: f64,
    /// Half-range of the gain envelope: gain varies in
    /// [1 − depth, 1 + depth]. At most 0.5, keeping the gain within
    /// [0.5, 1.5].
    pub envelope_depth: f64,
    /// High-pass cutoff used by the `highband` profile.
    pub highband_cutoff_hz: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            profile: NoiseProfile::Pink,
            envelope_rate_hz: 0.2,
            envelope_depth: 0.25,
            highband_cutoff_hz: 2000.0,
        }
    }
}

/// Amplitude of the broadband floor mixed under the highband profile,
/// relative to the high-passed component. 0.25 leaves roughly 94% of the
/// power above the cutoff while keeping the low bands audible.
const HIGHBAND_FLOOR_AMPLITUDE: f64 = 0.25;

/// Peak amplitude both generators normalize to, leaving headroom for mixing.
const PEAK_NORM: f64 = 0.9;

/// Synthesizes the event waveform. The only randomness is the vibrato
/// phase, so with `vibrato_depth_hz == 0` every seed yields the same signal.
pub fn synth_event(spec: &EventSpec, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    if spec.f0_hz <= 0.0 || spec.duration_s <= 0.0 || spec.n_harmonics == 0 {
        return Err(Error::invalid("event spec must have positive f0, duration, harmonics"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if spec.f0_hz * spec.n_harmonics as f64 >= nyquist {
        return Err(Error::invalid(format!(
            "harmonic {} at {} Hz reaches the Nyquist frequency {nyquist} Hz",
            spec.n_harmonics,
            spec.f0_hz * spec.n_harmonics as f64
        )));
    }
    let mut rng = seed::rng(seed, &[tag::EVENT]);
    let vibrato_phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;

    let n = (spec.duration_s * sample_rate as f64).round() as usize;
    let dt = 1.0 / sample_rate as f64;
    let two_pi = std::f64::consts::TAU;
    // Integrated instantaneous frequency f0 + depth*sin(2*pi*rate*t + phase).
    let mut samples = vec![0.0f64; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 * dt;
        let base_phase = if spec.vibrato_depth_hz == 0.0 || spec.vibrato_rate_hz == 0.0 {
            two_pi * spec.f0_hz * t
        } else {
            let swing = spec.vibrato_depth_hz / spec.vibrato_rate_hz;
            two_pi * spec.f0_hz * t
                - swing
                    * ((two_pi * spec.vibrato_rate_hz * t + vibrato_phase).cos()
                        - vibrato_phase.cos())
        };
        let mut v = 0.0;
        for k in 1..=spec.n_harmonics {
            v += (k as f64 * base_phase).sin() / k as f64;
        }
        *s = v;
    }

    apply_cosine_ramps(&mut samples, spec.ramp_ms, sample_rate);
    normalize_peak(&mut samples, PEAK_NORM);
    AudioClip::new(sample_rate, samples.into_iter().map(|v| v as f32).collect())
}

fn apply_cosine_ramps(samples: &mut [f64], ramp_ms: f64, sample_rate: u32) {
    let ramp_n = ((ramp_ms / 1000.0) * sample_rate as f64).round() as usize;
    let ramp_n = ramp_n.min(samples.len() / 2);
    for i in 0..ramp_n {
        let w = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp_n as f64).cos());
        samples[i] *= w;
        let j = samples.len() - 1 - i;
        samples[j] *= w;
    }
}

fn normalize_peak(samples: &mut [f64], peak: f64) {
    let max = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if max > 0.0 {
        let g = peak / max;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

/// Synthesizes non-stationary background noise: the profile's stationary
/// process, multiplied by a slow random gain envelope in [0.5, 1.5], then
/// peak-normalized to 0.9.
pub fn synth_noise(
    spec: &NoiseSpec,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioClip> {
    if duration_s <= 0.0 {
        return Err(Error::invalid("noise duration must be positive"));
    }
    if spec.highband_cutoff_hz <= 0.0 || spec.highband_cutoff_hz >= sample_rate as f64 / 2.0 {
        return Err(Error::invalid("highband cutoff must lie inside (0, Nyquist)"));
    }
    if !(0.0..=0.5).contains(&spec.envelope_depth) {
        return Err(Error::invalid(format!(
            "envelope depth must lie in [0, 0.5] so the gain stays within [0.5, 1.5], got {}",
            spec.envelope_depth
        )));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = seed::rng(seed, &[tag::NOISE]);

    let mut samples: Vec<f64> = match spec.profile {
        NoiseProfile::White => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseProfile::Pink => {
            let white: Vec<f64> =
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            pink_from_white(&white)
        }
        NoiseProfile::Highband => {
            let white: Vec<f64> =
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let hp = high_pass(&white, spec.highband_cutoff_hz, sample_rate);
            let floor: Vec<f64> =
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            hp.iter()
                .zip(&floor)
                .map(|(h, f)| h + HIGHBAND_FLOOR_AMPLITUDE * f)
                .collect()
        }
    };

    apply_envelope(&mut samples, spec.envelope_rate_hz, spec.envelope_depth, sample_rate, &mut rng);
    normalize_peak(&mut samples, PEAK_NORM);
    AudioClip::new(sample_rate, samples.into_iter().map(|v| v as f32).collect())
}

/// Paul Kellet's pink-noise filter: a 1/f spectrum to within ~0.5 dB
/// across the audio band.
fn pink_from_white(white: &[f64]) -> Vec<f64> {
    let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    white
        .iter()
        .map(|&w| {
            b0 = 0.99886 * b0 + w * 0.0555179;
            b1 = 0.99332 * b1 + w * 0.0750759;
            b2 = 0.96900 * b2 + w * 0.1538520;
            b3 = 0.86650 * b3 + w * 0.3104856;
            b4 = 0.55000 * b4 + w * 0.5329522;
            b5 = -0.7616 * b5 - w * 0.0168980;
            let out = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
            b6 = w * 0.115926;
            out
        })
        .collect()
}

/// Windowed-sinc high-pass (spectral inversion of a Hamming-windowed
/// low-pass), linear phase, 257 taps.
fn high_pass(input: &[f64], cutoff_hz: f64, sample_rate: u32) -> Vec<f64> {
    const TAPS: usize = 257;
    let m = (TAPS - 1) / 2;
    let fc = cutoff_hz / sample_rate as f64;
    let mut h = vec![0.0f64; TAPS];
    let mut sum = 0.0;
    for (i, hi) in h.iter_mut().enumerate() {
        let x = i as f64 - m as f64;
        let sinc = if x == 0.0 {
            2.0 * fc
        } else {
            (std::f64::consts::TAU * fc * x).sin() / (std::f64::consts::PI * x)
        };
        let w = 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (TAPS - 1) as f64).cos();
        *hi = sinc * w;
        sum += *hi;
    }
    for hi in h.iter_mut() {
        *hi /= sum; // unity DC gain before inversion
    }
    for hi in h.iter_mut() {
        *hi = -*hi;
    }
    h[m] += 1.0;

    // Same-length convolution, zero-padded edges.
    let mut out = vec![0.0f64; input.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let lo = i.saturating_sub(m);
        let hi_idx = (i + m).min(input.len() - 1);
        for j in lo..=hi_idx {
            acc += input[j] * h[m + i - j];
        }
        *o = acc;
    }
    out
}

/// Piecewise-cosine random gain envelope with control points every
/// `1/rate` seconds drawn uniformly from [0.5, 1.5]. Cosine interpolation
/// never leaves the interval spanned by its two endpoints.
fn apply_envelope(
    samples: &mut [f64],
    rate_hz: f64,
    depth: f64,
    sample_rate: u32,
    rng: &mut impl Rng,
) {
    if rate_hz <= 0.0 || depth <= 0.0 {
        return;
    }
    let duration_s = samples.len() as f64 / sample_rate as f64;
    let n_ctrl = (duration_s * rate_hz).ceil() as usize + 1;
    let ctrl: Vec<f64> =
        (0..=n_ctrl).map(|_| rng.gen_range(1.0 - depth..1.0 + depth)).collect();
    for (i, s) in samples.iter_mut().enumerate() {
        let pos = i as f64 / sample_rate as f64 * rate_hz;
        let k = (pos.floor() as usize).min(n_ctrl - 1);
        let u = pos - k as f64;
        let blend = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
        *s *= ctrl[k] + (ctrl[k + 1] - ctrl[k]) * blend;
    }
}

/// Gain to scale `event` by so that, added over `noise_window`, it hits the
/// target SNR: `sqrt(P_noise / P_event) * 10^(snr_db / 20)`.
pub fn snr_gain(event: &[f32], noise_window: &[f32], snr_db: f64) -> Result<f64> {
    let p_event = mean_power(event);
    let p_noise = mean_power(noise_window);
    if p_event <= 0.0 {
        return Err(Error::invalid("event has zero power"));
    }
    if p_noise <= 0.0 {
        return Err(Error::invalid("noise window has zero power"));
    }
    Ok((p_noise / p_event).sqrt() * 10f64.powf(snr_db / 20.0))
}

fn mean_power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64
}

/// Draws non-overlapping event start times on the frame grid. At most
/// 10% of the clip may be event time; placement is rejection-sampled with
/// a global cap of 10 000 attempts.
pub fn place_events(
    count: usize,
    clip_duration_s: f64,
    event_duration_s: f64,
    frame_s: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    const MAX_ATTEMPTS: usize = 10_000;
    if count == 0 {
        return Ok(Vec::new());
    }
    if count as f64 * event_duration_s > 0.10 * clip_duration_s + 1e-9 {
        return Err(Error::invalid(format!(
            "{count} events of {event_duration_s} s exceed 10% of a {clip_duration_s} s clip"
        )));
    }
    let slots = ((clip_duration_s - event_duration_s) / frame_s).floor() as u64;
    let mut rng = seed::rng(seed, &[tag::PLACEMENT]);
    let mut starts: Vec<f64> = Vec::with_capacity(count);
    let mut attempts = 0;
    while starts.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::numerical(format!(
                "event placement failed after {MAX_ATTEMPTS} attempts"
            )));
        }
        let start = rng.gen_range(0..=slots) as f64 * frame_s;
        let end = start + event_duration_s;
        if starts
            .iter()
            .all(|&s| end <= s + 1e-9 || start >= s + event_duration_s - 1e-9)
        {
            starts.push(start);
        }
    }
    starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(starts)
}

/// Collapses a fine track into weak segment labels: a segment is 1 iff it
/// overlaps any event interval.
pub fn coarsen_labels(fine: &LabelTrack, segment_s: f64) -> Result<LabelTrack> {
    let ratio = segment_s / fine.resolution_s;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::invalid("fine resolution must divide the segment length"));
    }
    let n_seg = fine.duration_s / segment_s;
    if (n_seg - n_seg.round()).abs() > 1e-9 {
        return Err(Error::invalid("clip duration must be a whole number of segments"));
    }
    let n_seg = n_seg.round() as usize;
    let mut intervals = Vec::with_capacity(n_seg);
    for k in 0..n_seg {
        let seg_start = k as f64 * segment_s;
        let seg_end = seg_start + segment_s;
        let hit = fine
            .intervals_with_label(1)
            .any(|iv| iv.start_s < seg_end - 1e-9 && iv.end_s > seg_start + 1e-9);
        intervals.push(crate::audio::Interval {
            start_s: seg_start,
            end_s: seg_end,
            label: if hit { 1 } else { 0 },
        });
    }
    LabelTrack::from_intervals(intervals, segment_s, fine.duration_s)
}

/// Sizes and ingredients of one dataset. Defaults follow the bootstrap
/// setting: 100 s finely labelled, 1000 s weakly labelled, 1000 s test,
/// all at a 10% event-time fraction.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub sample_rate: u32,
    pub event: EventSpec,
    pub noise: NoiseSpec,
    pub frame_s: f64,
    pub segment_s: f64,
    pub fine_duration_s: f64,
    pub fine_events: usize,
    pub weak_duration_s: f64,
    pub weak_events: usize,
    pub test_duration_s: f64,
    pub test_events: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            sample_rate: 8000,
            event: EventSpec::default(),
            noise: NoiseSpec::default(),
            frame_s: 0.1,
            segment_s: 5.0,
            fine_duration_s: 100.0,
            fine_events: 10,
            weak_duration_s: 1000.0,
            weak_events: 100,
            test_duration_s: 1000.0,
            test_events: 100,
        }
    }
}

impl DatasetSpec {
    /// Shrinks every split by `scale` while keeping whole segments and at
    /// most a 10% event-time fraction (counts are clamped to what the
    /// placement cap allows). Used by quick smoke runs. Errors when a
    /// split becomes too short to hold even one event.
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if scale <= 0.0 || scale > 1.0 {
            return Err(Error::invalid("scale must lie in (0, 1]"));
        }
        let scale_dur = |d: f64| -> f64 {
            let segments = (d * scale / self.segment_s).round().max(1.0);
            segments * self.segment_s
        };
        let event_s = self.event.duration_s;
        let scale_count = |c: usize, duration_s: f64| -> Result<usize> {
            let cap = (0.10 * duration_s / event_s + 1e-9).floor() as usize;
            if cap == 0 {
                return Err(Error::invalid(format!(
                    "a {duration_s} s split cannot hold a {event_s} s event \
                     under the 10% placement cap"
                )));
            }
            Ok(((c as f64 * scale).round() as usize).clamp(1, cap))
        };
        self.fine_duration_s = scale_dur(self.fine_duration_s);
        self.weak_duration_s = scale_dur(self.weak_duration_s);
        self.test_duration_s = scale_dur(self.test_duration_s);
        self.fine_events = scale_count(self.fine_events, self.fine_duration_s)?;
        self.weak_events = scale_count(self.weak_events, self.weak_duration_s)?;
        self.test_events = scale_count(self.test_events, self.test_duration_s)?;
        Ok(self)
    }
}

/// Finely labelled split: the labels are visible to training.
#[derive(Debug, Clone)]
pub struct FineSplit {
    pub clip: AudioClip,
    pub labels: LabelTrack,
}

/// Weakly labelled split: only the segment track is visible; the fine
/// track is kept for scoring.
#[derive(Debug, Clone)]
pub struct WeakSplit {
    pub clip: AudioClip,
    pub weak_labels: LabelTrack,
    pub hidden_fine: HiddenTrack,
}

/// Test split: nothing visible, fine truth kept for scoring.
#[derive(Debug, Clone)]
pub struct TestSplit {
    pub clip: AudioClip,
    pub hidden_fine: HiddenTrack,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub fine: FineSplit,
    pub weak: WeakSplit,
    pub test: TestSplit,
    pub snr_db: f64,
    pub seed: u64,
}

/// Mixes scaled copies of `event` into `noise` at the given starts. Each
/// copy is scaled against the noise directly under it, so the SNR holds
/// per event even under the noise envelope. Returns the mixture and the
/// per-event gains.
fn mix_events(
    noise: &AudioClip,
    event: &AudioClip,
    starts: &[f64],
    snr_db: f64,
) -> Result<(AudioClip, Vec<f64>)> {
    let mut mixture: Vec<f64> = noise.samples.iter().map(|&s| s as f64).collect();
    let event_len = event.samples.len();
    let mut gains = Vec::with_capacity(starts.len());
    for &start in starts {
        let idx = (start * noise.sample_rate as f64).round() as usize;
        if idx + event_len > mixture.len() {
            return Err(Error::invalid(format!("event at {start} s overruns the clip")));
        }
        let gain = snr_gain(&event.samples, &noise.samples[idx..idx + event_len], snr_db)?;
        for (m, &e) in mixture[idx..idx + event_len].iter_mut().zip(&event.samples) {
            *m += gain * e as f64;
        }
        gains.push(gain);
    }
    let peak = mixture.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 1.0 {
        for s in mixture.iter_mut() {
            *s /= peak;
        }
    }
    let clip = AudioClip::new(
        noise.sample_rate,
        mixture.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok((clip, gains))
}

fn synth_split(
    spec: &DatasetSpec,
    event: &AudioClip,
    duration_s: f64,
    n_events: usize,
    snr_db: f64,
    seed: u64,
    split_tag: u64,
) -> Result<(AudioClip, LabelTrack)> {
    let noise = synth_noise(
        &spec.noise,
        duration_s,
        spec.sample_rate,
        seed::derive(seed, &[split_tag]),
    )?;
    let starts = place_events(
        n_events,
        duration_s,
        spec.event.duration_s,
        spec.frame_s,
        seed::derive(seed, &[split_tag, tag::PLACEMENT]),
    )?;
    let (clip, _gains) = mix_events(&noise, event, &starts, snr_db)?;
    let events: Vec<(f64, f64)> =
        starts.iter().map(|&s| (s, s + spec.event.duration_s)).collect();
    let track = LabelTrack::from_events(&events, spec.frame_s, duration_s)?;
    Ok((clip, track))
}

/// Builds the three splits. One event waveform is synthesized per dataset
/// and reused everywhere; noise and placements are drawn fresh per split.
pub fn make_dataset(spec: &DatasetSpec, snr_db: f64, seed: u64) -> Result<DatasetBundle> {
    let event = synth_event(&spec.event, spec.sample_rate, seed)?;

    let (fine_clip, fine_track) = synth_split(
        spec,
        &event,
        spec.fine_duration_s,
        spec.fine_events,
        snr_db,
        seed,
        tag::SPLIT_FINE,
    )?;
    let (weak_clip, weak_fine_track) = synth_split(
        spec,
        &event,
        spec.weak_duration_s,
        spec.weak_events,
        snr_db,
        seed,
        tag::SPLIT_WEAK,
    )?;
    let weak_track = coarsen_labels(&weak_fine_track, spec.segment_s)?;
    let (test_clip, test_fine_track) = synth_split(
        spec,
        &event,
        spec.test_duration_s,
        spec.test_events,
        snr_db,
        seed,
        tag::SPLIT_TEST,
    )?;

    Ok(DatasetBundle {
        fine: FineSplit { clip: fine_clip, labels: fine_track },
        weak: WeakSplit {
            clip: weak_clip,
            weak_labels: weak_track,
            hidden_fine: HiddenTrack::new(weak_fine_track),
        },
        test: TestSplit { clip: test_clip, hidden_fine: HiddenTrack::new(test_fine_track) },
        snr_db,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    /// Magnitude spectrum oracle, independent of the features module.
    fn spectrum(samples: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> =
            samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..buf.len() / 2].iter().map(|c| c.norm()).collect()
    }

    fn power_split_at(samples: &[f32], sample_rate: u32, cutoff_hz: f64) -> (f64, f64) {
        let mag = spectrum(samples);
        let hz_per_bin = sample_rate as f64 / samples.len() as f64;
        let cut_bin = (cutoff_hz / hz_per_bin).round() as usize;
        let below: f64 = mag[..cut_bin].iter().map(|m| m * m).sum();
        let above: f64 = mag[cut_bin..].iter().map(|m| m * m).sum();
        (below, above)
    }

    #[test]
    fn event_has_expected_length_and_peak() {
        let clip = synth_event(&EventSpec::default(), 8000, 7).unwrap();
        assert_eq!(clip.samples.len(), 8000);
        assert!((clip.peak() - 0.9).abs() < 1e-4);
    }

    #[test]
    fn event_spectral_peak_near_fundamental() {
        let clip = synth_event(&EventSpec::default(), 8000, 3).unwrap();
        let mag = spectrum(&clip.samples);
        let hz_per_bin = 8000.0 / clip.samples.len() as f64; // 1 Hz
        let argmax = mag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let peak_hz = argmax as f64 * hz_per_bin;
        assert!(
            (peak_hz - 600.0).abs() <= 10.0,
            "spectral peak at {peak_hz} Hz, expected within 10 Hz of 600"
        );
    }

    #[test]
    fn event_without_vibrato_is_seed_independent() {
        let spec = EventSpec { vibrato_depth_hz: 0.0, ..EventSpec::default() };
        let a = synth_event(&spec, 8000, 1).unwrap();
        let b = synth_event(&spec, 8000, 2).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn event_with_vibrato_depends_on_seed() {
        let a = synth_event(&EventSpec::default(), 8000, 1).unwrap();
        let b = synth_event(&EventSpec::default(), 8000, 2).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn aliasing_harmonics_rejected() {
        let spec = EventSpec { n_harmonics: 7, ..EventSpec::default() }; // 4200 Hz
        assert!(synth_event(&spec, 8000, 0).is_err());
    }

    #[test]
    fn noise_length_peak_and_determinism() {
        let spec = NoiseSpec::default();
        let a = synth_noise(&spec, 10.0, 8000, 11).unwrap();
        let b = synth_noise(&spec, 10.0, 8000, 11).unwrap();
        assert_eq!(a.samples.len(), 80_000);
        assert!((a.peak() - 0.9).abs() < 1e-4);
        assert_eq!(a.samples, b.samples);
        let c = synth_noise(&spec, 10.0, 8000, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn highband_noise_concentrates_above_cutoff() {
        let spec = NoiseSpec { profile: NoiseProfile::Highband, ..NoiseSpec::default() };
        let clip = synth_noise(&spec, 100.0, 8000, 5).unwrap();
        let (below, above) = power_split_at(&clip.samples, 8000, 2000.0);
        let frac_above = above / (above + below);
        assert!(frac_above >= 0.70, "only {frac_above:.3} of power above 2 kHz");
    }

    #[test]
    fn pink_noise_slopes_downward() {
        let spec = NoiseSpec { profile: NoiseProfile::Pink, ..NoiseSpec::default() };
        let clip = synth_noise(&spec, 50.0, 8000, 5).unwrap();
        let (below, above) = power_split_at(&clip.samples, 8000, 2000.0);
        // 1/f: the lower half-band carries clearly more power.
        assert!(below > 2.0 * above, "below {below}, above {above}");
    }

    #[test]
    fn envelope_stays_in_bounds() {
        // With a strong envelope the sample std over 1 s windows should vary
        // substantially but never vanish: gain is in [0.5, 1.5].
        let clip = synth_noise(&NoiseSpec::default(), 50.0, 8000, 9).unwrap();
        let windows: Vec<f64> = clip
            .samples
            .chunks(8000)
            .map(|w| (w.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt())
            .collect();
        let max = windows.iter().cloned().fold(f64::MIN, f64::max);
        let min = windows.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 3.5, "window rms ratio {}", max / min);
        assert!(max / min >= 1.05, "envelope had no visible effect");
    }

    #[test]
    fn envelope_depth_controls_gain_spread() {
        // Pin the profile to white: pink noise's 1/f power drifts across
        // 1 s windows on its own, which would mask the envelope's effect.
        let flat = NoiseSpec {
            profile: NoiseProfile::White,
            envelope_depth: 0.0,
            ..NoiseSpec::default()
        };
        let clip = synth_noise(&flat, 50.0, 8000, 9).unwrap();
        let windows: Vec<f64> = clip
            .samples
            .chunks(8000)
            .map(|w| (w.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt())
            .collect();
        let max = windows.iter().cloned().fold(f64::MIN, f64::max);
        let min = windows.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 1.05, "zero depth should be stationary, ratio {}", max / min);

        let too_deep = NoiseSpec { envelope_depth: 0.6, ..NoiseSpec::default() };
        assert!(synth_noise(&too_deep, 1.0, 8000, 9).is_err());
    }

    #[test]
    fn snr_gain_matches_closed_forms() {
        let e = vec![0.5f32; 100];
        let n = vec![0.5f32; 100];
        assert!((snr_gain(&e, &n, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((snr_gain(&e, &n, -20.0).unwrap() - 0.1).abs() < 1e-12);
        let n4 = vec![1.0f32; 100]; // 4x the power
        assert!((snr_gain(&e, &n4, 0.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snr_gain_rejects_silent_inputs() {
        let z = vec![0.0f32; 10];
        let s = vec![0.5f32; 10];
        assert!(snr_gain(&z, &s, 0.0).is_err());
        assert!(snr_gain(&s, &z, 0.0).is_err());
    }

    #[test]
    fn placement_respects_occupancy_and_grid() {
        let starts = place_events(10, 100.0, 1.0, 0.1, 42).unwrap();
        assert_eq!(starts.len(), 10);
        for w in starts.windows(2) {
            assert!(w[1] - w[0] >= 1.0 - 1e-9, "overlap: {:?}", w);
        }
        for &s in &starts {
            let k = s / 0.1;
            assert!((k - k.round()).abs() < 1e-9, "start {s} off grid");
            assert!(s + 1.0 <= 100.0 + 1e-9);
        }
        assert_eq!(starts, place_events(10, 100.0, 1.0, 0.1, 42).unwrap());
    }

    #[test]
    fn placement_rejects_excess_occupancy() {
        assert!(place_events(11, 100.0, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn snr_round_trip_recovers_target() {
        let spec = DatasetSpec::default();
        let event = synth_event(&spec.event, 8000, 21).unwrap();
        let noise = synth_noise(&spec.noise, 100.0, 8000, 21).unwrap();
        let starts = place_events(10, 100.0, 1.0, 0.1, 21).unwrap();
        let target = -19.8;
        let (_mix, gains) = mix_events(&noise, &event, &starts, target).unwrap();
        let p_event_raw =
            event.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>()
                / event.samples.len() as f64;
        for (&start, &gain) in starts.iter().zip(&gains) {
            let idx = (start * 8000.0).round() as usize;
            let w = &noise.samples[idx..idx + event.samples.len()];
            let p_noise =
                w.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / w.len() as f64;
            let measured = 10.0 * ((gain * gain * p_event_raw) / p_noise).log10();
            assert!(
                (measured - target).abs() < 0.01,
                "event at {start}: measured {measured:.4} dB"
            );
        }
    }

    #[test]
    fn coarsen_marks_overlapping_segments() {
        let fine = LabelTrack::from_events(&[(4.5, 5.5)], 0.1, 10.0).unwrap();
        let weak = coarsen_labels(&fine, 5.0).unwrap();
        assert_eq!(weak.frames(), vec![1, 1]);

        let fine = LabelTrack::from_events(&[(1.0, 2.0)], 0.1, 10.0).unwrap();
        let weak = coarsen_labels(&fine, 5.0).unwrap();
        assert_eq!(weak.frames(), vec![1, 0]);

        let fine = LabelTrack::from_events(&[], 0.1, 10.0).unwrap();
        let weak = coarsen_labels(&fine, 5.0).unwrap();
        assert_eq!(weak.frames(), vec![0, 0]);
    }

    #[test]
    fn dataset_has_expected_shape() {
        let spec = DatasetSpec::default().with_scale(0.1).unwrap();
        let bundle = make_dataset(&spec, 0.0, 33).unwrap();
        assert_eq!(bundle.fine.clip.samples.len(), 80_000); // 10 s
        assert_eq!(bundle.weak.clip.samples.len(), 800_000); // 100 s
        assert_eq!(bundle.weak.weak_labels.n_frames(), 20); // 5 s segments
        assert!((bundle.fine.labels.event_fraction() - 0.10).abs() < 1e-9);
        assert!(
            (bundle.weak.hidden_fine.for_scoring().event_fraction() - 0.10).abs() < 1e-9
        );
        assert!(
            (bundle.test.hidden_fine.for_scoring().event_fraction() - 0.10).abs() < 1e-9
        );
        // Weak track is exactly the coarsening of the hidden fine track.
        let recoarsened =
            coarsen_labels(bundle.weak.hidden_fine.for_scoring(), 5.0).unwrap();
        assert_eq!(recoarsened, bundle.weak.weak_labels);
    }

    #[test]
    fn scaling_clamps_event_counts_to_the_placement_cap() {
        // 0.075 rounds the weak split down to 15 segments (75 s) but the
        // event count up to 8; the cap allows only 7.
        let spec = DatasetSpec::default().with_scale(0.075).unwrap();
        assert_eq!(spec.weak_duration_s, 75.0);
        assert_eq!(spec.weak_events, 7);
        assert!(spec.weak_events as f64 * spec.event.duration_s <= 0.10 * spec.weak_duration_s);

        // A split too short for even one event is refused outright.
        assert!(DatasetSpec::default().with_scale(0.02).is_err());
        assert!(DatasetSpec::default().with_scale(0.0).is_err());
        assert!(DatasetSpec::default().with_scale(1.5).is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let spec = DatasetSpec::default().with_scale(0.1).unwrap();
        let a = make_dataset(&spec, -10.0, 5).unwrap();
        let b = make_dataset(&spec, -10.0, 5).unwrap();
        assert_eq!(a.fine.clip.samples, b.fine.clip.samples);
        assert_eq!(a.weak.clip.samples, b.weak.clip.samples);
        assert_eq!(a.test.clip.samples, b.test.clip.samples);
        let c = make_dataset(&spec, -10.0, 6).unwrap();
        assert_ne!(a.fine.clip.samples, c.fine.clip.samples);
    }

    #[test]
    fn splits_use_independent_noise() {
        let spec = DatasetSpec::default().with_scale(0.1).unwrap();
        let bundle = make_dataset(&spec, 0.0, 1).unwrap();
        assert_ne!(
            &bundle.weak.clip.samples[..80_000],
            &bundle.fine.clip.samples[..]
        );
    }
}
