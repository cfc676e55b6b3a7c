use serde::{Deserialize, Serialize};

use crate::data::StyleDomain;
use crate::error::{ensure, Result};
use crate::features::skeleton::{AUDIO_DIM, MOTION_DIM};

/// Smallest standard deviation used for scaling; near-constant features
/// are centered but not blown up.
pub const MIN_STD: f64 = 1e-4;

/// Per-dimension feature standardization fitted on training data. The
/// networks see standardized features; transferred motion is mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub motion_mean: Vec<f64>,
    pub motion_std: Vec<f64>,
    pub music_mean: Vec<f64>,
    pub music_std: Vec<f64>,
}

fn moments(rows: &mut dyn Iterator<Item = &[f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for r in rows {
        n += 1;
        for d in 0..dim {
            let delta = r[d] - mean[d];
            mean[d] += delta / n as f64;
            m2[d] += delta * (r[d] - mean[d]);
        }
    }
    let std = m2
        .iter()
        .map(|&v| if n > 1 { (v / (n - 1) as f64).sqrt().max(MIN_STD) } else { 1.0 })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            motion_mean: vec![0.0; MOTION_DIM],
            motion_std: vec![1.0; MOTION_DIM],
            music_mean: vec![0.0; AUDIO_DIM],
            music_std: vec![1.0; AUDIO_DIM],
        }
    }

    /// Pools every frame of both domains.
    pub fn fit(x: &StyleDomain, y: &StyleDomain) -> Result<Self> {
        let clips = || x.clips.iter().chain(&y.clips);
        ensure!(clips().next().is_some(), "cannot fit feature statistics to empty domains");
        let (motion_mean, motion_std) = moments(
            &mut clips().flat_map(|c| c.motion.frames().chunks(MOTION_DIM)),
            MOTION_DIM,
        );
        let (music_mean, music_std) = moments(&mut clips().flat_map(|c| c.audio.frames().chunks(AUDIO_DIM)), AUDIO_DIM);
        Ok(Self {
            motion_mean,
            motion_std,
            music_mean,
            music_std,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.motion_mean.len() == MOTION_DIM
                && self.motion_std.len() == MOTION_DIM
                && self.music_mean.len() == AUDIO_DIM
                && self.music_std.len() == AUDIO_DIM,
            "feature statistics have the wrong widths"
        );
        ensure!(
            self.motion_mean.iter().chain(&self.music_mean).all(|v| v.is_finite())
                && self.motion_std.iter().chain(&self.music_std).all(|v| v.is_finite() && *v > 0.0),
            "feature statistics must be finite with positive scales"
        );
        Ok(())
    }

    fn apply(data: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
        let w = mean.len();
        data.iter().enumerate().map(|(i, v)| (v - mean[i % w]) / std[i % w]).collect()
    }

    pub fn normalize_motion(&self, frames: &[f64]) -> Vec<f64> {
        Self::apply(frames, &self.motion_mean, &self.motion_std)
    }

    pub fn normalize_music(&self, frames: &[f64]) -> Vec<f64> {
        Self::apply(frames, &self.music_mean, &self.music_std)
    }

    pub fn denormalize_motion(&self, frames: &[f64]) -> Vec<f64> {
        let w = MOTION_DIM;
        frames
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.motion_std[i % w] + self.motion_mean[i % w])
            .collect()
    }
}
