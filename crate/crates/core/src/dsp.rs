//! Log-Mel spectrograms (network input) and MFCCs (baseline input).
//!
//! Pipeline: Hann-windowed STFT power spectrum → triangular Mel filterbank →
//! natural log with a floor → linear resize of the time axis to a fixed
//! width → per-spectrogram standardisation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub const N_MFCC: usize = 13;
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub frame_seconds: f64,
    pub hop_seconds: f64,
    pub n_mels: usize,
    /// `None` picks the next power of two at or above the frame length.
    pub n_fft: Option<usize>,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub target_frames: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self::nocturnal()
    }
}

impl DspConfig {
    /// 30 ms frames, 15 ms hop (the 44.1 kHz owl recordings).
    pub fn nocturnal() -> Self {
        Self {
            frame_seconds: 0.03,
            hop_seconds: 0.015,
            n_mels: 128,
            n_fft: None,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            target_frames: 256,
        }
    }

    /// 10 ms frames, 5 ms hop (the 32 kHz field recordings).
    pub fn field() -> Self {
        Self {
            frame_seconds: 0.01,
            hop_seconds: 0.005,
            ..Self::nocturnal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.hop_seconds > 0.0 && self.hop_seconds <= self.frame_seconds) {
            return bad("need 0 < hop_seconds <= frame_seconds");
        }
        if self.n_mels < 2 {
            return bad("n_mels must be at least 2");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.target_frames < 1 {
            return bad("target_frames must be at least 1");
        }
        if self.fmin < 0.0 || self.fmax.is_some_and(|f| f <= self.fmin) {
            return bad("need 0 <= fmin < fmax");
        }
        Ok(())
    }

    pub fn frame_len(&self, sample_rate: u32) -> usize {
        seconds_to_samples(self.frame_seconds, sample_rate)
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        seconds_to_samples(self.hop_seconds, sample_rate)
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        let frame = self.frame_len(sample_rate);
        self.n_fft.unwrap_or_else(|| frame.next_power_of_two()).max(frame)
    }

    /// Stable 64-bit identifier derived from the serialized config.
    pub fn config_id(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

// floor(seconds × rate), nudged so that e.g. 0.03 × 8000 is not 239.999…
fn seconds_to_samples(seconds: f64, rate: u32) -> usize {
    (seconds * rate as f64 + 1e-9).floor() as usize
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// `n_mels × target_frames` standardized log-Mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub config_id: u64,
}

impl LogMelSpectrogram {
    pub fn from_values(n_mels: usize, n_frames: usize, values: Vec<f64>, config_id: u64) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Config(format!(
                "spectrogram of {n_mels}×{n_frames} needs {} values, got {}",
                n_mels * n_frames,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self {
            n_mels,
            n_frames,
            values,
            config_id,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    /// SHA-256 of shape and value bits, first 8 bytes little-endian.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.n_mels as u64).to_le_bytes());
        h.update((self.n_frames as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

/// `13 × n_frames` cepstral coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub values: Matrix,
}

impl MfccMatrix {
    /// Average of each coefficient over time.
    pub fn time_mean(&self) -> Vec<f64> {
        (0..self.values.rows)
            .map(|r| self.values.row(r).iter().sum::<f64>() / self.values.cols as f64)
            .collect()
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// `|STFT|²` as an `(n_fft/2 + 1) × n_frames` matrix.
pub fn power_spectrogram(clip: &AudioClip, config: &DspConfig) -> Result<Matrix> {
    config.validate()?;
    let rate = clip.sample_rate;
    let frame = config.frame_len(rate);
    let hop = config.hop_len(rate).max(1);
    let n_fft = config.fft_len(rate);
    if frame == 0 || clip.samples.len() < frame {
        return Err(Error::ClipTooShort {
            len: clip.samples.len(),
            frame,
        });
    }
    let n_frames = 1 + (clip.samples.len() - frame) / hop;
    let n_bins = n_fft / 2 + 1;
    let window = hann(frame);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut out = Matrix::zeros(n_bins, n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < frame {
                Complex::new(clip.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            out.set(k, t, buf[k].norm_sqr());
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_centers(config: &DspConfig, sample_rate: u32) -> Vec<f64> {
    let edges = mel_edges(config, sample_rate);
    edges[1..edges.len() - 1].to_vec()
}

fn mel_edges(config: &DspConfig, sample_rate: u32) -> Vec<f64> {
    let fmax = config.fmax.unwrap_or(sample_rate as f64 / 2.0);
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(fmax);
    let n = config.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// `n_mels × (n_fft/2 + 1)` matrix of unit-peak triangular filters whose
/// centres are equally spaced on the Mel scale; adjacent filters overlap by half.
pub fn mel_filterbank(config: &DspConfig, sample_rate: u32) -> Result<Matrix> {
    config.validate()?;
    let nyquist = sample_rate as f64 / 2.0;
    if config.fmax.is_some_and(|f| f > nyquist) {
        return Err(Error::Config(format!("fmax exceeds Nyquist ({nyquist} Hz)")));
    }
    let n_fft = config.fft_len(sample_rate);
    let n_bins = n_fft / 2 + 1;
    let edges = mel_edges(config, sample_rate);
    let bin_hz = sample_rate as f64 / n_fft as f64;

    let mut fb = Matrix::zeros(config.n_mels, n_bins);
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                any = true;
                fb.set(m, k, w);
            }
        }
        if !any {
            return Err(Error::DegenerateFilter { index: m });
        }
    }
    Ok(fb)
}

/// Log-Mel energies before resizing and standardisation, `n_mels × n_frames`.
pub fn raw_log_mel(clip: &AudioClip, config: &DspConfig) -> Result<Matrix> {
    let power = power_spectrogram(clip, config)?;
    let fb = mel_filterbank(config, clip.sample_rate)?;
    let mut out = Matrix::zeros(fb.rows, power.cols);
    for m in 0..fb.rows {
        let filt = fb.row(m);
        for t in 0..power.cols {
            let mut acc = 0.0;
            for (k, &w) in filt.iter().enumerate() {
                if w != 0.0 {
                    acc += w * power.get(k, t);
                }
            }
            out.set(m, t, acc.max(config.log_floor).ln());
        }
    }
    Ok(out)
}

/// Linear interpolation along the time axis to exactly `target` columns.
pub fn resize_time(input: &Matrix, target: usize) -> Matrix {
    let mut out = Matrix::zeros(input.rows, target);
    let n = input.cols;
    for j in 0..target {
        let x = if target == 1 || n == 1 {
            0.0
        } else {
            j as f64 * (n - 1) as f64 / (target - 1) as f64
        };
        let i0 = (x.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = x - i0 as f64;
        for r in 0..input.rows {
            let v = input.get(r, i0) * (1.0 - frac) + input.get(r, i1) * frac;
            out.set(r, j, v);
        }
    }
    out
}

/// Shift to zero mean and scale to unit variance (variance floored).
pub fn standardize(values: &mut [f64]) {
    // a constant input (up to interpolation rounding) maps to all zeros
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

pub fn log_mel(clip: &AudioClip, config: &DspConfig) -> Result<LogMelSpectrogram> {
    let raw = raw_log_mel(clip, config)?;
    let mut resized = resize_time(&raw, config.target_frames);
    standardize(&mut resized.values);
    LogMelSpectrogram::from_values(
        resized.rows,
        resized.cols,
        resized.values,
        config.config_id(),
    )
}

/// Orthonormal DCT-II basis, `n × n`, row k = basis function k.
pub fn dct_matrix(n: usize) -> Matrix {
    let mut d = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            d.set(k, i, scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
        }
    }
    d
}

/// First 13 orthonormal DCT-II coefficients of each raw log-Mel column.
pub fn mfcc(clip: &AudioClip, config: &DspConfig) -> Result<MfccMatrix> {
    if config.n_mels < N_MFCC {
        return Err(Error::Config(format!(
            "MFCC needs at least {N_MFCC} Mel bands, got {}",
            config.n_mels
        )));
    }
    let raw = raw_log_mel(clip, config)?;
    Ok(MfccMatrix {
        values: cepstrum(&raw, N_MFCC),
    })
}

pub(crate) fn cepstrum(log_mel: &Matrix, n_coeffs: usize) -> Matrix {
    let d = dct_matrix(log_mel.rows);
    let mut out = Matrix::zeros(n_coeffs, log_mel.cols);
    for t in 0..log_mel.cols {
        for k in 0..n_coeffs {
            let acc: f64 = d
                .row(k)
                .iter()
                .enumerate()
                .map(|(i, w)| w * log_mel.get(i, t))
                .sum();
            out.set(k, t, acc);
        }
    }
    out
}
