use cycledance_autodiff::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::ArchConfig;
use crate::error::{ensure, Result};

const DOWN_KERNEL: usize = 3;
const DOWN_STRIDE: usize = 2;
const DOWN_PAD: usize = 1;

/// Output extent of one downsampling conv along an axis.
pub fn down_extent(n: usize) -> usize {
    (n + 2 * DOWN_PAD - DOWN_KERNEL) / DOWN_STRIDE + 1
}

/// PatchGAN discriminator: gated 2-D conv downsampling, a final `1 × 3`
/// conv and a sigmoid per patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    arch: ArchConfig,
    params: ParamSet,
    input: Conv2d,
    downs: Vec<(Conv2d, Norm)>,
    output: Conv2d,
}

impl Discriminator {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::default();
        let mut b = Builder::new(&mut params, rng);
        let ch = arch.disc_channels();
        let input = Conv2d::new(&mut b, "input", 1, 2 * ch[0], (3, 3), (1, 1));
        let mut downs = Vec::new();
        let mut cin = ch[0];
        for (i, &c) in ch[1..].iter().enumerate() {
            let k = (DOWN_KERNEL, DOWN_KERNEL);
            let s = (DOWN_STRIDE, DOWN_STRIDE);
            downs.push((
                Conv2d::new(&mut b, &format!("down{i}"), cin, 2 * c, k, s),
                Norm::new(&mut b, &format!("down{i}_norm"), 2 * c, 1),
            ));
            cin = c;
        }
        let output = Conv2d::new(&mut b, "output", cin, 1, (1, 3), (1, 1));
        Ok(Self {
            arch: arch.clone(),
            params,
            input,
            downs,
            output,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Patch grid `(H, W)` for a `T`-frame input.
    pub fn patch_grid(&self, t: usize) -> (usize, usize) {
        let mut h = self.arch.motion_dim;
        let mut w = t;
        for _ in &self.downs {
            h = down_extent(h);
            w = down_extent(w);
        }
        (h, w)
    }

    /// `[N, T, 63]` → patch probabilities `[N, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], motion: Var) -> Result<Var> {
        let s = g.shape(motion).to_vec();
        ensure!(
            s.len() == 3 && s[2] == self.arch.motion_dim,
            "discriminator expects motion of shape [N, T, {}], got {s:?}",
            self.arch.motion_dim
        );
        ensure!(s[1] >= 16, "discriminator needs at least 16 frames, got {}", s[1]);
        let x = g.transpose(motion, 1, 2)?;
        let x = g.reshape(x, &[s[0], 1, s[2], s[1]])?;
        let h = self.input.forward(g, p, x)?;
        let mut h = g.glu_split(h, 1)?;
        for (conv, norm) in &self.downs {
            h = conv.forward(g, p, h)?;
            h = norm.forward(g, p, h)?;
            h = g.glu_split(h, 1)?;
        }
        let h = self.output.forward(g, p, h)?;
        Ok(g.sigmoid(h)?)
    }

    /// Patch probabilities for one clip, without gradients.
    pub fn infer(&self, frames: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![1, t, self.arch.motion_dim], frames.to_vec())?);
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).data().to_vec())
    }
}
