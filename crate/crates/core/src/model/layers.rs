//! Parameter storage and the building blocks shared by both networks.

use cycledance_autodiff::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

const NORM_EPS: f64 = 1e-5;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pid(usize);

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn push(&mut self, name: String, t: Tensor) -> Pid {
        self.names.push(name);
        self.tensors.push(t);
        Pid(self.tensors.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, rng: &mut ChaCha8Rng, name: String, shape: &[usize], fan_in: usize) -> Pid {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("valid parameter shape"))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Pid {
        self.push(name, Tensor::full(shape.to_vec(), value).expect("valid parameter shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf. Frozen parameters become constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                let t = t.clone();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    /// Replaces every tensor, checking names and shapes.
    pub fn load(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        ensure!(
            named.len() == self.tensors.len(),
            "expected {} parameters, got {}",
            self.tensors.len(),
            named.len()
        );
        for (i, (name, t)) in named.into_iter().enumerate() {
            ensure!(name == self.names[i], "parameter {i}: expected {}, found {name}", self.names[i]);
            ensure!(
                t.shape() == self.tensors[i].shape(),
                "parameter {name}: expected shape {:?}, found {:?}",
                self.tensors[i].shape(),
                t.shape()
            );
            self.tensors[i] = t.with_requires_grad(false);
        }
        Ok(())
    }
}

/// Creates parameters under a common name prefix.
pub struct Builder<'a> {
    pub params: &'a mut ParamSet,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(params: &'a mut ParamSet, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            params,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Pid {
        let full = format!("{}{name}", self.prefix);
        self.params.uniform(self.rng, full, shape, fan_in)
    }

    pub fn fill(&mut self, name: &str, shape: &[usize], value: f64) -> Pid {
        let full = format!("{}{name}", self.prefix);
        self.params.constant(full, shape, value)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Pid,
    b: Pid,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl Conv2d {
    pub fn new(bld: &mut Builder, name: &str, cin: usize, cout: usize, k: (usize, usize), stride: (usize, usize)) -> Self {
        bld.scope(name, |b| Self {
            w: b.weight("weight", &[cout, cin, k.0, k.1], cin * k.0 * k.1),
            b: b.fill("bias", &[cout], 0.0),
            stride,
            pad: (k.0 / 2, k.1 / 2),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p[self.w.0], Some(p[self.b.0]), self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    w: Pid,
    b: Pid,
    pad: usize,
}

impl Conv1d {
    pub fn new(bld: &mut Builder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        bld.scope(name, |b| Self {
            w: b.weight("weight", &[cout, cin, k], cin * k),
            b: b.fill("bias", &[cout], 0.0),
            pad: k / 2,
        })
    }

    /// Starts with all-zero weights, so the layer initially outputs zero.
    pub fn zeroed(bld: &mut Builder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        bld.scope(name, |b| Self {
            w: b.fill("weight", &[cout, cin, k], 0.0),
            b: b.fill("bias", &[cout], 0.0),
            pad: k / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.conv1d(x, p[self.w.0], Some(p[self.b.0]), 1, self.pad)?)
    }
}

/// Layer normalization along one axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct Norm {
    gain: Pid,
    bias: Pid,
    axis: usize,
}

impl Norm {
    pub fn new(bld: &mut Builder, name: &str, size: usize, axis: usize) -> Self {
        bld.scope(name, |b| Self {
            gain: b.fill("gain", &[size], 1.0),
            bias: b.fill("bias", &[size], 0.0),
            axis,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, p[self.gain.0], p[self.bias.0], self.axis, NORM_EPS)?)
    }
}

/// `x @ W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Pid,
    b: Pid,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, din: usize, dout: usize) -> Self {
        bld.scope(name, |b| Self {
            w: b.weight("weight", &[din, dout], din),
            b: b.fill("bias", &[dout], 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w.0])?;
        Ok(g.add_broadcast(y, p[self.b.0])?)
    }
}

/// Sinusoidal position table `[len, dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("positive extents")
}

#[derive(Debug, Clone)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, l, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |g: &mut Graph, lin: &Linear| -> Result<Var> {
            let y = lin.forward(g, p, x)?;
            let y = g.reshape(y, &[n, l, h, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            Ok(g.reshape(y, &[n * h, l, dh])?)
        };
        let q = split(g, &self.q)?;
        let k = split(g, &self.k)?;
        let v = split(g, &self.v)?;
        let kt = g.transpose(k, 1, 2)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax(scores, 2)?;
        let out = g.matmul(attn, v)?;
        let out = g.reshape(out, &[n, h, l, dh])?;
        let out = g.permute(out, &[0, 2, 1, 3])?;
        let out = g.reshape(out, &[n, l, d])?;
        self.o.forward(g, p, out)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff_in: Linear,
    ff_out: Linear,
}

/// Pre-norm transformer encoder with a GLU feed-forward block. Inputs are
/// `[N, L, D]` token sequences.
#[derive(Debug, Clone)]
pub struct Transformer {
    layers: Vec<EncoderLayer>,
    ln_final: Norm,
    dim: usize,
}

impl Transformer {
    pub fn new(bld: &mut Builder, name: &str, layers: usize, dim: usize, heads: usize, ff_dim: usize) -> Self {
        bld.scope(name, |b| {
            let layers = (0..layers)
                .map(|i| {
                    b.scope(&format!("layer{i}"), |b| EncoderLayer {
                        ln1: Norm::new(b, "ln1", dim, 2),
                        attn: Attention {
                            q: Linear::new(b, "q", dim, dim),
                            k: Linear::new(b, "k", dim, dim),
                            v: Linear::new(b, "v", dim, dim),
                            o: Linear::new(b, "o", dim, dim),
                            heads,
                        },
                        ln2: Norm::new(b, "ln2", dim, 2),
                        ff_in: Linear::new(b, "ff_in", dim, 2 * ff_dim),
                        ff_out: Linear::new(b, "ff_out", ff_dim, dim),
                    })
                })
                .collect();
            Self {
                layers,
                ln_final: Norm::new(b, "ln_final", dim, 2),
                dim,
            }
        })
    }

    /// Adds positions `0..L` to the tokens and runs every layer.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let l = g.shape(x)[1];
        let pe = g.constant(positional_encoding(l, self.dim));
        let x = g.add_broadcast(x, pe)?;
        self.forward_no_position(g, p, x)
    }

    pub fn forward_no_position(&self, g: &mut Graph, p: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            let h = layer.ln1.forward(g, p, x)?;
            let h = layer.attn.forward(g, p, h)?;
            x = g.add(x, h)?;
            let h = layer.ln2.forward(g, p, x)?;
            let h = layer.ff_in.forward(g, p, h)?;
            let h = g.glu_split(h, 2)?;
            let h = layer.ff_out.forward(g, p, h)?;
            x = g.add(x, h)?;
        }
        self.ln_final.forward(g, p, x)
    }
}

/// A learned vector added to every token.
#[derive(Debug, Clone)]
pub struct Embedding {
    e: Pid,
}

impl Embedding {
    pub fn new(bld: &mut Builder, name: &str, dim: usize) -> Self {
        Self {
            e: bld.weight(name, &[dim], dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.add_broadcast(x, p[self.e.0])?)
    }
}
