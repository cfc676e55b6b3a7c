//! Generator and discriminator networks and the ablation configurations.

mod discriminator;
mod generator;
pub mod layers;
mod normalize;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::{down_extent, Discriminator};
pub use generator::Generator;
pub use layers::ParamSet;
pub use normalize::{Normalizer, MIN_STD};

use crate::error::{ensure, Error, Result};
use crate::features::skeleton::{AUDIO_DIM, MOTION_DIM};
use crate::features::{AudioSequence, MotionSequence};
use crate::metrics::{Direction, Transfer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            heads: 4,
            model_dim: 48,
            ff_dim: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Channels of the last 2-D downsampling stage; earlier stages halve it.
    pub base_channels: usize,
    pub n_down_blocks: usize,
    pub n_res_blocks: usize,
    pub transformer: TransformerConfig,
    pub use_motion_transformer: bool,
    pub use_music_pathway: bool,
    /// Adds the discriminators that judge cycled reconstructions.
    pub use_two_step_adv: bool,
    /// Adds the input motion to the generator output, so generators learn
    /// a residual.
    pub output_skip: bool,
    /// Width of the full-rate refinement block that filters the input
    /// motion together with the decoder output; 0 disables it.
    pub refine_channels: usize,
    /// Channels of the widest discriminator stage.
    pub disc_channels: usize,
    pub motion_dim: usize,
    pub music_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            n_down_blocks: 2,
            n_res_blocks: 2,
            transformer: TransformerConfig::default(),
            use_motion_transformer: true,
            use_music_pathway: true,
            use_two_step_adv: true,
            output_skip: true,
            refine_channels: 32,
            disc_channels: 32,
            motion_dim: MOTION_DIM,
            music_dim: AUDIO_DIM,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.transformer;
        ensure!(
            t.layers > 0 && t.heads > 0 && t.model_dim > 0 && t.ff_dim > 0,
            "transformer dimensions must be positive"
        );
        ensure!(
            t.model_dim % t.heads == 0,
            "model_dim {} is not divisible by heads {}",
            t.model_dim,
            t.heads
        );
        ensure!(self.n_down_blocks >= 1, "n_down_blocks must be at least 1");
        ensure!(
            self.base_channels > 0 && self.base_channels % (1 << (self.n_down_blocks - 1)) == 0,
            "base_channels {} must be a positive multiple of {}",
            self.base_channels,
            1 << (self.n_down_blocks - 1)
        );
        ensure!(
            self.disc_channels >= 4 && self.disc_channels % 4 == 0,
            "disc_channels must be a positive multiple of 4"
        );
        ensure!(self.motion_dim > 0 && self.music_dim > 0, "feature dims must be positive");
        Ok(())
    }

    /// Channels after each 2-D downsampling block.
    pub fn down_channels(&self) -> Vec<usize> {
        (1..=self.n_down_blocks)
            .map(|k| self.base_channels >> (self.n_down_blocks - k))
            .collect()
    }

    pub fn disc_channels(&self) -> [usize; 4] {
        let d = self.disc_channels;
        [d / 4, d / 2, d, d]
    }

    /// Generator inputs must have a length divisible by this.
    pub fn length_multiple(&self) -> usize {
        1 << self.n_down_blocks
    }

    pub fn bottleneck_height(&self, feat_dim: usize) -> usize {
        (0..self.n_down_blocks).fold(feat_dim, |h, _| generator::halve(h))
    }
}

/// The five compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Baseline,
    Transgan,
    TransganCl,
    Crosstransgan,
    Cycledance,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::Transgan,
        Ablation::TransganCl,
        Ablation::Crosstransgan,
        Ablation::Cycledance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Transgan => "transgan",
            Ablation::TransganCl => "transgan_cl",
            Ablation::Crosstransgan => "crosstransgan",
            Ablation::Cycledance => "cycledance",
        }
    }

    pub fn arch(self, base: &ArchConfig) -> ArchConfig {
        let (transformer, music) = match self {
            Ablation::Baseline => (false, false),
            Ablation::Transgan | Ablation::TransganCl => (true, false),
            Ablation::Crosstransgan | Ablation::Cycledance => (true, true),
        };
        ArchConfig {
            use_motion_transformer: transformer,
            use_music_pathway: music,
            ..base.clone()
        }
    }

    pub fn curriculum(self) -> bool {
        matches!(self, Ablation::TransganCl | Ablation::Cycledance)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown ablation {s:?}; expected one of baseline, transgan, transgan_cl, crosstransgan, cycledance"
                ))
            })
    }
}

/// Architecture and curriculum flag of a named ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub ablation: Ablation,
    pub arch: ArchConfig,
    pub curriculum: bool,
}

pub fn build_ablation(name: &str, base: &ArchConfig) -> Result<AblationSpec> {
    let ablation: Ablation = name.parse()?;
    Ok(AblationSpec {
        ablation,
        arch: ablation.arch(base),
        curriculum: ablation.curriculum(),
    })
}

/// Both generators and all discriminators.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub arch: ArchConfig,
    pub g_xy: Generator,
    pub g_yx: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    pub d2_x: Option<Discriminator>,
    pub d2_y: Option<Discriminator>,
    pub norm: Normalizer,
}

impl TransferModel {
    /// Initializes every network from one seeded stream, in a fixed order.
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g_xy = Generator::new(arch, &mut rng)?;
        let g_yx = Generator::new(arch, &mut rng)?;
        let d_x = Discriminator::new(arch, &mut rng)?;
        let d_y = Discriminator::new(arch, &mut rng)?;
        let (d2_x, d2_y) = if arch.use_two_step_adv {
            (
                Some(Discriminator::new(arch, &mut rng)?),
                Some(Discriminator::new(arch, &mut rng)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            arch: arch.clone(),
            g_xy,
            g_yx,
            d_x,
            d_y,
            d2_x,
            d2_y,
            norm: Normalizer::identity(),
        })
    }

    pub fn generator(&self, dir: Direction) -> &Generator {
        match dir {
            Direction::XToY => &self.g_xy,
            Direction::YToX => &self.g_yx,
        }
    }

    /// Parameter sets in checkpoint order, with their network names.
    pub fn param_sets(&self) -> Vec<(&'static str, &ParamSet)> {
        let mut out = vec![
            ("g_xy", self.g_xy.params()),
            ("g_yx", self.g_yx.params()),
            ("d_x", self.d_x.params()),
            ("d_y", self.d_y.params()),
        ];
        if let (Some(a), Some(b)) = (&self.d2_x, &self.d2_y) {
            out.push(("d2_x", a.params()));
            out.push(("d2_y", b.params()));
        }
        out
    }

    pub fn param_sets_mut(&mut self) -> Vec<(&'static str, &mut ParamSet)> {
        let mut out = vec![
            ("g_xy", self.g_xy.params_mut()),
            ("g_yx", self.g_yx.params_mut()),
            ("d_x", self.d_x.params_mut()),
            ("d_y", self.d_y.params_mut()),
        ];
        if let (Some(a), Some(b)) = (&mut self.d2_x, &mut self.d2_y) {
            out.push(("d2_x", a.params_mut()));
            out.push(("d2_y", b.params_mut()));
        }
        out
    }

    /// Scalars in one generator.
    pub fn generator_params(&self) -> usize {
        self.g_xy.params().n_scalars()
    }

    pub fn total_params(&self) -> usize {
        self.param_sets().iter().map(|(_, p)| p.n_scalars()).sum()
    }
}

impl Transfer for TransferModel {
    /// Pads the clip to a valid length by repeating its last frame, runs the
    /// generator on standardized features and trims the output back.
    fn transfer(&self, motion: &MotionSequence, music: Option<&AudioSequence>, dir: Direction) -> Result<MotionSequence> {
        let g = self.generator(dir);
        let music = if g.uses_music() { music } else { None };
        let (m, a, len) = crate::data::pad_to_multiple(motion, music, self.arch.length_multiple())?;
        let x = self.norm.normalize_motion(m.frames());
        let a = a.map(|a| self.norm.normalize_music(a.frames()));
        let out = g.infer(&x, a.as_deref(), m.n_frames())?;
        let frames = self.norm.denormalize_motion(&out[..len * self.arch.motion_dim]);
        MotionSequence::new(frames, motion.style())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_flags() {
        let base = ArchConfig::default();
        let b = build_ablation("baseline", &base).unwrap();
        assert!(!b.arch.use_motion_transformer && !b.arch.use_music_pathway && !b.curriculum);
        let c = build_ablation("cycledance", &base).unwrap();
        assert!(c.arch.use_motion_transformer && c.arch.use_music_pathway && c.curriculum);
        let t = build_ablation("transgan", &base).unwrap();
        let tc = build_ablation("transgan_cl", &base).unwrap();
        assert_eq!(t.arch, tc.arch);
        assert!(!t.curriculum && tc.curriculum);
        assert!(build_ablation("stargan", &base).is_err());
    }

    #[test]
    fn config_validation() {
        let mut a = ArchConfig::default();
        a.transformer.heads = 5;
        assert!(a.validate().is_err());
        assert_eq!(ArchConfig::default().down_channels(), vec![8, 16]);
        assert_eq!(ArchConfig::default().bottleneck_height(63), 16);
        assert_eq!(ArchConfig::default().bottleneck_height(35), 9);
    }

    #[test]
    fn config_json_fills_defaults() {
        let a: ArchConfig = serde_json::from_str(r#"{"n_res_blocks": 1}"#).unwrap();
        assert_eq!(a.n_res_blocks, 1);
        assert_eq!(a.base_channels, 16);
        assert!(serde_json::from_str::<ArchConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
