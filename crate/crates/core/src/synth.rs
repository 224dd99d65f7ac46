//! Synthetic tone-plus-noise "species" for tests, examples and smoke runs.
//!
//! Each class is a single tone at its own frequency; individual clips vary in
//! onset, duration, pitch (±3 %), vibrato, gain and noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioClip;
use crate::dsp::DspConfig;

#[derive(Debug, Clone)]
pub struct ToneSet {
    pub sample_rate: u32,
    pub seconds: f64,
    /// Fundamental frequency per class, Hz.
    pub fundamentals: Vec<f64>,
    pub clips_per_class: usize,
    /// Standard deviation of the additive white noise.
    pub noise_std: f64,
}

impl Default for ToneSet {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            seconds: 1.0,
            fundamentals: vec![300.0, 520.0, 900.0, 1500.0],
            clips_per_class: 25,
            noise_std: 0.05,
        }
    }
}

impl ToneSet {
    pub fn label(class: usize) -> String {
        format!("tone-{class}")
    }

    /// Clips ordered class-major; fully determined by `seed`.
    pub fn generate(&self, seed: u64) -> Vec<AudioClip> {
        (0..self.fundamentals.len())
            .flat_map(|c| (0..self.clips_per_class).map(move |i| (c, i)))
            .map(|(c, i)| self.clip(c, i, seed))
            .collect()
    }

    /// Clip `index` of `class`.
    pub fn clip(&self, class: usize, index: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 32) ^ index as u64);
        let rate = self.sample_rate as f64;
        let n = (self.seconds * rate).round() as usize;
        let f0 = self.fundamentals[class] * rng.gen_range(0.97..1.03);
        let onset = rng.gen_range(0.0..0.1) * self.seconds;
        let length = rng.gen_range(0.8..0.9) * self.seconds;
        let vibrato_hz = rng.gen_range(3.0..7.0);
        let vibrato_depth = rng.gen_range(0.0..0.02);
        let gain = rng.gen_range(0.3..0.8);
        let noise = Normal::new(0.0, self.noise_std).unwrap();

        let mut phase = 0.0;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let inst_f = f0 * (1.0 + vibrato_depth * (2.0 * PI * vibrato_hz * t).sin());
                phase += 2.0 * PI * inst_f / rate;
                let local = (t - onset) / length;
                let env = if (0.0..1.0).contains(&local) {
                    (PI * local).sin().powi(2)
                } else {
                    0.0
                };
                (gain * env * phase.sin() + noise.sample(&mut rng)).clamp(-1.0, 1.0)
            })
            .collect();
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            source_id: format!("synthetic/{}/{index}", Self::label(class)),
            label: Some(Self::label(class)),
        }
    }

    /// Feature settings sized for these clips: 32 Mel bands × 32 frames.
    pub fn dsp_config(&self) -> DspConfig {
        DspConfig {
            frame_seconds: 0.032,
            hop_seconds: 0.016,
            n_mels: 32,
            target_frames: 32,
            ..DspConfig::default()
        }
    }
}
