use cycledance_autodiff::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::layers::*;
use super::ArchConfig;
use crate::error::{ensure, Result};

/// Height of a feature axis after one stride-2, kernel-5, pad-2 conv.
pub(crate) fn halve(h: usize) -> usize {
    (h + 4 - 5) / 2 + 1
}

#[derive(Debug, Clone)]
struct GatedConv2d {
    conv: Conv2d,
    norm: Option<Norm>,
}

impl GatedConv2d {
    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let mut h = self.conv.forward(g, p, x)?;
        if let Some(n) = &self.norm {
            h = n.forward(g, p, h)?;
        }
        Ok(g.glu_split(h, 1)?)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    norm1: Norm,
    conv2: Conv1d,
    norm2: Norm,
}

impl ResBlock {
    fn new(b: &mut Builder, name: &str, dim: usize) -> Self {
        b.scope(name, |b| Self {
            conv1: Conv1d::new(b, "conv1", dim, 2 * dim, 3),
            norm1: Norm::new(b, "norm1", 2 * dim, 1),
            conv2: Conv1d::new(b, "conv2", dim, dim, 3),
            norm2: Norm::new(b, "norm2", dim, 1),
        })
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, p, x)?;
        let h = self.norm1.forward(g, p, h)?;
        let h = g.glu_split(h, 1)?;
        let h = self.conv2.forward(g, p, h)?;
        let h = self.norm2.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}

/// 2-D downsampling stack, 2D→1D conversion, residual 1-D blocks and an
/// optional transformer over one input modality.
#[derive(Debug, Clone)]
struct Pathway {
    input: GatedConv2d,
    downs: Vec<GatedConv2d>,
    to1d: Conv1d,
    to1d_norm: Norm,
    res: Vec<ResBlock>,
    transformer: Option<Transformer>,
    feat_dim: usize,
}

impl Pathway {
    fn new(b: &mut Builder, name: &str, arch: &ArchConfig, feat_dim: usize, transformer: bool) -> Self {
        let ch = arch.down_channels();
        let dm = arch.transformer.model_dim;
        b.scope(name, |b| {
            let input = GatedConv2d {
                conv: Conv2d::new(b, "input", 1, 2 * ch[0], (5, 5), (1, 1)),
                norm: None,
            };
            let mut h = feat_dim;
            let mut cin = ch[0];
            let mut downs = Vec::new();
            for (i, &c) in ch.iter().enumerate() {
                downs.push(GatedConv2d {
                    conv: Conv2d::new(b, &format!("down{i}"), cin, 2 * c, (5, 5), (2, 2)),
                    norm: Some(Norm::new(b, &format!("down{i}_norm"), 2 * c, 1)),
                });
                h = halve(h);
                cin = c;
            }
            let to1d = Conv1d::new(b, "to1d", cin * h, dm, 1);
            let to1d_norm = Norm::new(b, "to1d_norm", dm, 1);
            let res = (0..arch.n_res_blocks).map(|i| ResBlock::new(b, &format!("res{i}"), dm)).collect();
            let tc = &arch.transformer;
            let transformer =
                transformer.then(|| Transformer::new(b, "transformer", tc.layers, dm, tc.heads, tc.ff_dim));
            Self {
                input,
                downs,
                to1d,
                to1d_norm,
                res,
                transformer,
                feat_dim,
            }
        })
    }

    /// `[N, T, F]` → tokens `[N, L, D]`.
    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, t) = (s[0], s[1]);
        let x = g.transpose(x, 1, 2)?;
        let x = g.reshape(x, &[n, 1, self.feat_dim, t])?;
        let mut h = self.input.forward(g, p, x)?;
        for d in &self.downs {
            h = d.forward(g, p, h)?;
        }
        let s = g.shape(h).to_vec();
        let h = g.reshape(h, &[n, s[1] * s[2], s[3]])?;
        let h = self.to1d.forward(g, p, h)?;
        let mut h = self.to1d_norm.forward(g, p, h)?;
        for r in &self.res {
            h = r.forward(g, p, h)?;
        }
        let mut tokens = g.transpose(h, 1, 2)?;
        if let Some(tf) = &self.transformer {
            tokens = tf.forward(g, p, tokens)?;
        }
        Ok(tokens)
    }
}

#[derive(Debug, Clone)]
struct CrossModal {
    transformer: Transformer,
    motion_tag: Embedding,
    music_tag: Embedding,
}

/// Motion-to-motion generator with an optional music pathway.
#[derive(Debug, Clone)]
pub struct Generator {
    arch: ArchConfig,
    params: ParamSet,
    motion: Pathway,
    music: Option<Pathway>,
    cross: Option<CrossModal>,
    to2d: Conv1d,
    to2d_norm: Norm,
    ups: Vec<GatedConv2d>,
    output: Conv2d,
    project: Conv1d,
    refine: Option<(Conv1d, Conv1d)>,
}

impl Generator {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::default();
        let mut b = Builder::new(&mut params, rng);
        let motion = Pathway::new(&mut b, "motion", arch, arch.motion_dim, arch.use_motion_transformer);
        let (music, cross) = if arch.use_music_pathway {
            let tc = &arch.transformer;
            let dm = tc.model_dim;
            let music = Pathway::new(&mut b, "music", arch, arch.music_dim, true);
            let cross = b.scope("cross", |b| CrossModal {
                transformer: Transformer::new(b, "transformer", tc.layers, dm, tc.heads, tc.ff_dim),
                motion_tag: Embedding::new(b, "motion_tag", dm),
                music_tag: Embedding::new(b, "music_tag", dm),
            });
            (Some(music), Some(cross))
        } else {
            (None, None)
        };
        let ch = arch.down_channels();
        let last = *ch.last().unwrap();
        let h_last = arch.bottleneck_height(arch.motion_dim);
        let dm = arch.transformer.model_dim;
        let to2d = Conv1d::new(&mut b, "to2d", dm, last * h_last, 1);
        let to2d_norm = Norm::new(&mut b, "to2d_norm", last * h_last, 1);
        let mut ups = Vec::new();
        let mut cin = last;
        for i in (0..ch.len()).rev() {
            let cout = if i == 0 { ch[0] } else { ch[i - 1] };
            ups.push(GatedConv2d {
                conv: Conv2d::new(&mut b, &format!("up{}", ch.len() - 1 - i), cin, 8 * cout, (3, 3), (1, 1)),
                norm: Some(Norm::new(&mut b, &format!("up{}_norm", ch.len() - 1 - i), 8 * cout, 1)),
            });
            cin = cout;
        }
        let output = Conv2d::new(&mut b, "output", cin, 1, (5, 5), (1, 1));
        let out_h = h_last << ch.len();
        let project = Conv1d::new(&mut b, "project", out_h, arch.motion_dim, 1);
        let refine = (arch.refine_channels > 0).then(|| {
            let (d, r) = (arch.motion_dim, arch.refine_channels);
            b.scope("refine", |b| (Conv1d::new(b, "gate", 2 * d, 2 * r, 5), Conv1d::zeroed(b, "out", r, d, 5)))
        });
        Ok(Self {
            arch: arch.clone(),
            params,
            motion,
            music,
            cross,
            to2d,
            to2d_norm,
            ups,
            output,
            project,
            refine,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn uses_music(&self) -> bool {
        self.music.is_some()
    }

    /// `motion: [N, T, 63]`, `music: [N, T, 35]` → `[N, T, 63]`. Music is
    /// ignored when the music pathway is disabled.
    pub fn forward(&self, g: &mut Graph, p: &[Var], motion: Var, music: Option<Var>) -> Result<Var> {
        let s = g.shape(motion).to_vec();
        ensure!(
            s.len() == 3 && s[2] == self.arch.motion_dim,
            "generator expects motion of shape [N, T, {}], got {s:?}",
            self.arch.motion_dim
        );
        let (n, t) = (s[0], s[1]);
        let m = self.arch.length_multiple();
        ensure!(t >= 16, "generator needs at least 16 frames, got {t}");
        ensure!(
            t % m == 0,
            "sequence length {t} is not a multiple of {m}; pad the clip first (data::pad_to_multiple)"
        );
        let mut tokens = self.motion.forward(g, p, motion)?;
        if let (Some(path), Some(cross)) = (&self.music, &self.cross) {
            let Some(music) = music else {
                return Err(crate::Error::invalid("this generator requires music features"));
            };
            let ms = g.shape(music).to_vec();
            ensure!(
                ms == [n, t, self.arch.music_dim],
                "music shape {ms:?} does not match motion [N={n}, T={t}, {}]",
                self.arch.music_dim
            );
            let music_tokens = path.forward(g, p, music)?;
            let l = g.shape(tokens)[1];
            let dm = self.arch.transformer.model_dim;
            let pe = g.constant(positional_encoding(l, dm));
            let a = g.add_broadcast(tokens, pe)?;
            let a = cross.motion_tag.forward(g, p, a)?;
            let b = g.add_broadcast(music_tokens, pe)?;
            let b = cross.music_tag.forward(g, p, b)?;
            let joint = g.concat(&[a, b], 1)?;
            let joint = cross.transformer.forward_no_position(g, p, joint)?;
            tokens = g.narrow(joint, 1, 0, l)?;
        }
        let h = g.transpose(tokens, 1, 2)?;
        let h = self.to2d.forward(g, p, h)?;
        let h = self.to2d_norm.forward(g, p, h)?;
        let l = t / m;
        let c_last = *self.arch.down_channels().last().unwrap();
        let mut h = g.reshape(h, &[n, c_last, self.arch.bottleneck_height(self.arch.motion_dim), l])?;
        for up in &self.ups {
            h = up.forward(g, p, h)?;
            h = g.pixel_shuffle(h, 2, 2)?;
        }
        let h = self.output.forward(g, p, h)?;
        let hs = g.shape(h).to_vec();
        let h = g.reshape(h, &[n, hs[2], hs[3]])?;
        let mut h = self.project.forward(g, p, h)?;
        if let Some((gate, out)) = &self.refine {
            let xc = g.transpose(motion, 1, 2)?;
            let r = g.concat(&[xc, h], 1)?;
            let r = gate.forward(g, p, r)?;
            let r = g.glu_split(r, 1)?;
            let r = out.forward(g, p, r)?;
            h = g.add(h, r)?;
        }
        let h = g.transpose(h, 1, 2)?;
        if self.arch.output_skip {
            Ok(g.add(motion, h)?)
        } else {
            Ok(h)
        }
    }

    /// Runs `t` frames through the generator without recording gradients.
    pub fn infer(&self, motion: &[f64], music: Option<&[f64]>, t: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![1, t, self.arch.motion_dim], motion.to_vec())?);
        let m = match (self.uses_music(), music) {
            (true, Some(a)) => Some(g.constant(Tensor::new(vec![1, t, self.arch.music_dim], a.to_vec())?)),
            (true, None) => return Err(crate::Error::invalid("this model requires music features")),
            (false, _) => None,
        };
        let y = self.forward(&mut g, &p, x, m)?;
        Ok(g.value(y).data().to_vec())
    }
}
