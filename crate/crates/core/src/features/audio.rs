//! 35-dim audio frames at the motion frame rate: 20 MFCCs, 12 chroma bins,
//! peak flag, beat flag and onset strength.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::skeleton::{AUDIO_DIM, FPS};
use crate::error::{ensure, Error, Result};

pub const WINDOW: usize = 1024;
pub const N_MELS: usize = 40;
pub const N_MFCC: usize = 20;
pub const N_CHROMA: usize = 12;
pub const DIM_CHROMA: usize = 20;
pub const DIM_PEAK: usize = 32;
pub const DIM_BEAT: usize = 33;
pub const DIM_ONSET: usize = 34;

const LOG_FLOOR: f64 = 1e-10;
const MEDIAN_HALF_WIDTH: usize = 7;
const MIN_BPM: f64 = 60.0;
const MAX_BPM: f64 = 240.0;

/// A `T × 35` audio feature matrix at 30 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSequence {
    frames: Vec<f64>,
}

impl AudioSequence {
    pub fn new(frames: Vec<f64>) -> Result<Self> {
        ensure!(
            !frames.is_empty() && frames.len() % AUDIO_DIM == 0,
            "audio data length {} is not a positive multiple of {AUDIO_DIM}",
            frames.len()
        );
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "audio frame {} dim {} is not finite",
                i / AUDIO_DIM,
                i % AUDIO_DIM
            )));
        }
        for (t, f) in frames.chunks(AUDIO_DIM).enumerate() {
            for d in [DIM_PEAK, DIM_BEAT] {
                ensure!(f[d] == 0.0 || f[d] == 1.0, "audio frame {t} dim {d} must be 0 or 1, got {}", f[d]);
            }
        }
        Ok(Self { frames })
    }

    pub fn fps(&self) -> f64 {
        FPS
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / AUDIO_DIM
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * AUDIO_DIM..(t + 1) * AUDIO_DIM]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            len > 0 && start + len <= self.n_frames(),
            "window {start}..{} exceeds {} frames",
            start + len,
            self.n_frames()
        );
        Ok(Self {
            frames: self.frames[start * AUDIO_DIM..(start + len) * AUDIO_DIM].to_vec(),
        })
    }

    /// Indices of frames whose beat flag is set.
    pub fn beat_frames(&self) -> Vec<usize> {
        (0..self.n_frames()).filter(|&t| self.frame(t)[DIM_BEAT] == 1.0).collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `WINDOW / 2 + 1` power bins.
fn mel_filterbank(sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = WINDOW / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / WINDOW as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis rows `0..N_MFCC` of length `N_MELS`.
fn dct_basis() -> Vec<Vec<f64>> {
    let n = N_MELS as f64;
    (0..N_MFCC)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..N_MELS)
                .map(|i| scale * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .collect()
        })
        .collect()
}

/// Pitch class (C = 0) of a frequency, rounded to the nearest semitone.
pub fn pitch_class(freq: f64) -> usize {
    let semis = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semis + 9).rem_euclid(12) as usize
}

fn power_spectra(samples: &[f64], sample_rate: f64, n_frames: usize) -> Vec<Vec<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(WINDOW);
    let hann: Vec<f64> = (0..WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / WINDOW as f64).cos())
        .collect();
    let half = (WINDOW / 2) as i64;
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    (0..n_frames)
        .map(|t| {
            let center = (t as f64 * sample_rate / FPS).round() as i64;
            for (i, c) in buf.iter_mut().enumerate() {
                let s = center - half + i as i64;
                let x = if s >= 0 && (s as usize) < samples.len() {
                    samples[s as usize]
                } else {
                    0.0
                };
                *c = Complex::new(x * hann[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..=WINDOW / 2].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Local maxima of the onset curve that rise above the running median.
fn pick_peaks(onset: &[f64]) -> Vec<usize> {
    let n = onset.len();
    let mut peaks = Vec::new();
    for t in 0..n {
        let s = onset[t];
        if s <= 1e-9 {
            continue;
        }
        let left_ok = t == 0 || s > onset[t - 1];
        let right_ok = t + 1 == n || s >= onset[t + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let lo = t.saturating_sub(MEDIAN_HALF_WIDTH);
        let hi = (t + MEDIAN_HALF_WIDTH + 1).min(n);
        let mut win = onset[lo..hi].to_vec();
        if s > median(&mut win) {
            peaks.push(t);
        }
    }
    peaks
}

/// Lag in frames maximizing the autocorrelation of the mean-removed onset
/// curve within the 60–240 BPM range. A longer lag must beat the current
/// best by 1% so that multiples of the period do not win on edge effects.
pub fn dominant_period(onset: &[f64]) -> Option<usize> {
    let n = onset.len();
    let min_lag = (FPS * 60.0 / MAX_BPM).ceil() as usize;
    let max_lag = ((FPS * 60.0 / MIN_BPM).floor() as usize).min(n.saturating_sub(1));
    if min_lag > max_lag {
        return None;
    }
    let mean = onset.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = onset.iter().map(|v| v - mean).collect();
    let mut best: Option<(usize, f64)> = None;
    for lag in min_lag..=max_lag {
        let r: f64 = (0..n - lag).map(|i| c[i] * c[i + lag]).sum::<f64>() / (n - lag) as f64;
        if r > 0.0 && best.is_none_or(|(_, b)| r > b * 1.01) {
            best = Some((lag, r));
        }
    }
    best.map(|(lag, _)| lag)
}

/// Walks a beat grid with the dominant period outwards from the strongest
/// peak, snapping each predicted beat to the nearest peak within a quarter
/// period.
fn track_beats(onset: &[f64], peaks: &[usize]) -> Vec<usize> {
    let Some(period) = dominant_period(onset) else {
        return Vec::new();
    };
    let Some(&anchor) = peaks.iter().max_by(|&&a, &&b| onset[a].total_cmp(&onset[b]).then(b.cmp(&a)))
    else {
        return Vec::new();
    };
    let tol = (period / 4).max(1) as i64;
    let n = onset.len() as i64;
    let snap = |pred: i64| -> Option<usize> {
        peaks
            .iter()
            .copied()
            .filter(|&p| (p as i64 - pred).abs() <= tol)
            .min_by_key(|&p| ((p as i64 - pred).abs(), p))
    };
    let mut beats = vec![anchor];
    for dir in [1i64, -1] {
        let mut cur = anchor as i64;
        loop {
            let pred = cur + dir * period as i64;
            if pred < 0 || pred >= n {
                break;
            }
            match snap(pred) {
                Some(p) if p as i64 != cur => {
                    beats.push(p);
                    cur = p as i64;
                }
                _ => cur = pred,
            }
        }
    }
    beats.sort_unstable();
    beats.dedup();
    beats
}

/// Extracts 35-dim frames from mono PCM. One frame is produced per
/// `sample_rate / 30` samples; frame `t` analyses a Hann window of
/// [`WINDOW`] samples centred on sample `round(t · sample_rate / 30)`.
pub fn extract_audio_features(samples: &[f64], sample_rate: f64) -> Result<AudioSequence> {
    ensure!(
        sample_rate.is_finite() && sample_rate >= 8000.0,
        "sample rate must be at least 8000 Hz, got {sample_rate}"
    );
    ensure!(
        samples.len() >= WINDOW,
        "audio has {} samples, shorter than one {WINDOW}-sample window",
        samples.len()
    );
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("audio sample {i} is not finite")));
    }
    let n_frames = (samples.len() as f64 * FPS / sample_rate).floor() as usize;
    ensure!(n_frames >= 1, "audio is shorter than one frame");

    let spectra = power_spectra(samples, sample_rate, n_frames);
    let bank = mel_filterbank(sample_rate);
    let dct = dct_basis();
    let bin_hz = sample_rate / WINDOW as f64;
    let chroma_bins: Vec<(usize, usize)> = (1..=WINDOW / 2)
        .filter_map(|k| {
            let f = k as f64 * bin_hz;
            (27.5..=5000.0).contains(&f).then(|| (k, pitch_class(f)))
        })
        .collect();

    let mut frames = vec![0.0; n_frames * AUDIO_DIM];
    let mut log_mel_prev: Option<Vec<f64>> = None;
    let mut onset = vec![0.0; n_frames];
    for (t, power) in spectra.iter().enumerate() {
        let f = &mut frames[t * AUDIO_DIM..(t + 1) * AUDIO_DIM];
        let mel: Vec<f64> = bank
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect();
        let log_mel: Vec<f64> = mel.iter().map(|m| (m + LOG_FLOOR).ln()).collect();
        for (k, row) in dct.iter().enumerate() {
            f[k] = row.iter().zip(&log_mel).map(|(a, b)| a * b).sum();
        }

        let mut chroma = [0.0; N_CHROMA];
        for &(k, pc) in &chroma_bins {
            chroma[pc] += power[k];
        }
        let norm = chroma.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for (dst, c) in f[DIM_CHROMA..DIM_CHROMA + N_CHROMA].iter_mut().zip(chroma) {
                *dst = c / norm;
            }
        }

        let compressed: Vec<f64> = mel.iter().map(|m| m.ln_1p()).collect();
        if let Some(prev) = &log_mel_prev {
            onset[t] = compressed
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).max(0.0))
                .sum::<f64>();
        }
        f[DIM_ONSET] = onset[t];
        log_mel_prev = Some(compressed);
    }

    let peaks = pick_peaks(&onset);
    for &p in &peaks {
        frames[p * AUDIO_DIM + DIM_PEAK] = 1.0;
    }
    for b in track_beats(&onset, &peaks) {
        frames[b * AUDIO_DIM + DIM_BEAT] = 1.0;
    }
    AudioSequence::new(frames)
}
