//! Forward and backward kernels for every recorded primitive.
//!
//! Kernels are pure functions of their input tensors. Backward kernels
//! recompute any intermediate they need (im2col buffers, normalization
//! statistics) from the saved inputs and output instead of caching it.

use crate::error::{Result, TensorError};
use crate::gemm::{gemm, MatRef};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    AddBroadcast,
    Affine { scale: f64, shift: f64 },
    MatMul,
    /// Inputs: x, w, optional bias. `one_d` maps `[N, C, L]` onto the 2-D
    /// kernel with a unit height axis.
    Conv {
        stride: (usize, usize),
        pad: (usize, usize),
        one_d: bool,
    },
    PixelShuffle { rh: usize, rw: usize },
    Sigmoid,
    Log,
    Softmax { axis: usize },
    /// Inputs: x, gain, bias.
    LayerNorm { axis: usize, eps: f64 },
    Sum,
    Mean,
    Reshape,
    Permute { perm: Vec<usize> },
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    Glu,
    Clamp { lo: f64, hi: f64 },
    L1,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBroadcast => "add_broadcast",
            Op::Affine { .. } => "affine",
            Op::MatMul => "matmul",
            Op::Conv { one_d: true, .. } => "conv1d",
            Op::Conv { one_d: false, .. } => "conv2d",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Sigmoid => "sigmoid",
            Op::Log => "log",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Glu => "glu",
            Op::Clamp { .. } => "clamp",
            Op::L1 => "l1",
        }
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, shape: &[usize], reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: shape.to_vec(),
        reason: reason.into(),
    }
}

/// `(outer, n, inner)` such that element `(o, i, k)` lives at
/// `(o * n + i) * inner + k`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shape-checks `op` against its inputs and returns the output shape.
///
/// `target` carries the requested shape for `Reshape` and the extent for
/// `Narrow`.
pub(crate) fn infer_shape(op: &Op, ins: &[&Tensor], target: &[usize]) -> Result<Vec<usize>> {
    let name = op.name();
    let s0 = ins.first().map(|t| t.shape()).unwrap_or(&[]);
    match op {
        Op::Leaf => Ok(s0.to_vec()),
        Op::Add | Op::Sub | Op::Mul | Op::Glu | Op::L1 => {
            let s1 = ins[1].shape();
            if s0 != s1 {
                return Err(mismatch(name, s0, s1));
            }
            Ok(if matches!(op, Op::L1) {
                Vec::new()
            } else {
                s0.to_vec()
            })
        }
        Op::AddBroadcast => {
            let s1 = ins[1].shape();
            if s1.len() > s0.len() || s0[s0.len() - s1.len()..] != *s1 {
                return Err(mismatch(name, s0, s1));
            }
            Ok(s0.to_vec())
        }
        Op::Affine { .. } | Op::Sigmoid | Op::Log | Op::Clamp { .. } => Ok(s0.to_vec()),
        Op::MatMul => {
            let s1 = ins[1].shape();
            let r0 = s0.len();
            let r1 = s1.len();
            if r0 < 2 || r1 < 2 {
                return Err(mismatch(name, s0, s1));
            }
            let (m, k) = (s0[r0 - 2], s0[r0 - 1]);
            let (k2, n) = (s1[r1 - 2], s1[r1 - 1]);
            if k != k2 || (r1 > 2 && s0[..r0 - 2] != s1[..r1 - 2]) {
                return Err(mismatch(name, s0, s1));
            }
            let mut out = s0[..r0 - 2].to_vec();
            out.extend([m, n]);
            Ok(out)
        }
        Op::Conv { stride, pad, one_d } => {
            let w = ins[1].shape();
            let rank = if *one_d { 3 } else { 4 };
            if s0.len() != rank || w.len() != rank || s0[1] != w[1] {
                return Err(mismatch(name, s0, w));
            }
            if let Some(b) = ins.get(2) {
                if b.shape() != [w[0]] {
                    return Err(mismatch(name, w, b.shape()));
                }
            }
            let (h, ww, kh, kw) = if *one_d {
                (1, s0[2], 1, w[2])
            } else {
                (s0[2], s0[3], w[2], w[3])
            };
            if stride.0 == 0 || stride.1 == 0 {
                return Err(invalid(name, s0, "stride must be positive"));
            }
            if h + 2 * pad.0 < kh || ww + 2 * pad.1 < kw {
                return Err(mismatch(name, s0, w));
            }
            let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
            let wo = (ww + 2 * pad.1 - kw) / stride.1 + 1;
            Ok(if *one_d {
                vec![s0[0], w[0], wo]
            } else {
                vec![s0[0], w[0], ho, wo]
            })
        }
        Op::PixelShuffle { rh, rw } => {
            let r = rh * rw;
            if s0.len() != 4 || r == 0 || s0[1] % r != 0 {
                return Err(invalid(
                    name,
                    s0,
                    format!("expected [N, C*{rh}*{rw}, H, W]"),
                ));
            }
            Ok(vec![s0[0], s0[1] / r, s0[2] * rh, s0[3] * rw])
        }
        Op::Softmax { axis } => {
            if *axis >= s0.len() {
                return Err(invalid(name, s0, format!("axis {axis} out of range")));
            }
            Ok(s0.to_vec())
        }
        Op::LayerNorm { axis, .. } => {
            if *axis >= s0.len() {
                return Err(invalid(name, s0, format!("axis {axis} out of range")));
            }
            let n = s0[*axis];
            for p in &ins[1..] {
                if p.shape() != [n] {
                    return Err(mismatch(name, s0, p.shape()));
                }
            }
            Ok(s0.to_vec())
        }
        Op::Sum | Op::Mean => Ok(Vec::new()),
        Op::Reshape => {
            if target.contains(&0) || numel(target) != numel(s0) {
                return Err(mismatch(name, s0, target));
            }
            Ok(target.to_vec())
        }
        Op::Permute { perm } => {
            let mut seen = vec![false; s0.len()];
            if perm.len() != s0.len() || perm.iter().any(|&p| p >= s0.len() || std::mem::replace(&mut seen[p], true)) {
                return Err(invalid(name, s0, format!("bad permutation {perm:?}")));
            }
            Ok(perm.iter().map(|&p| s0[p]).collect())
        }
        Op::Concat { axis } => {
            if *axis >= s0.len() {
                return Err(invalid(name, s0, format!("axis {axis} out of range")));
            }
            let mut out = s0.to_vec();
            for t in &ins[1..] {
                let s = t.shape();
                let ok = s.len() == s0.len()
                    && s.iter().zip(s0).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !ok {
                    return Err(mismatch(name, s0, s));
                }
                out[*axis] += s[*axis];
            }
            Ok(out)
        }
        Op::Narrow { axis, start } => {
            let len = target[0];
            if *axis >= s0.len() || len == 0 || start + len > s0[*axis] {
                return Err(invalid(
                    name,
                    s0,
                    format!("cannot take {len} from {start} on axis {axis}"),
                ));
            }
            let mut out = s0.to_vec();
            out[*axis] = len;
            Ok(out)
        }
    }
}

pub(crate) fn forward(op: &Op, ins: &[&Tensor], out_shape: Vec<usize>) -> Tensor {
    let x = ins[0].data();
    let n_out = numel(&out_shape);
    let data: Vec<f64> = match op {
        Op::Leaf => x.to_vec(),
        Op::Add => x.iter().zip(ins[1].data()).map(|(a, b)| a + b).collect(),
        Op::Sub => x.iter().zip(ins[1].data()).map(|(a, b)| a - b).collect(),
        Op::Mul => x.iter().zip(ins[1].data()).map(|(a, b)| a * b).collect(),
        Op::AddBroadcast => {
            let b = ins[1].data();
            x.chunks(b.len())
                .flat_map(|row| row.iter().zip(b).map(|(a, c)| a + c))
                .collect()
        }
        Op::Affine { scale, shift } => x.iter().map(|v| scale * v + shift).collect(),
        Op::MatMul => matmul_forward(ins[0], ins[1], n_out),
        Op::Conv { stride, pad, one_d } => {
            let g = ConvGeom::new(ins[0].shape(), ins[1].shape(), *stride, *pad, *one_d);
            conv_forward(&g, x, ins[1].data(), ins.get(2).map(|b| b.data()))
        }
        Op::PixelShuffle { rh, rw } => {
            let mut out = vec![0.0; n_out];
            shuffle_map(ins[0].shape(), *rh, *rw, |src, dst| out[dst] = x[src]);
            out
        }
        Op::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Op::Log => x.iter().map(|v| v.ln()).collect(),
        Op::Softmax { axis } => softmax_forward(x, ins[0].shape(), *axis),
        Op::LayerNorm { axis, eps } => {
            layer_norm_forward(x, ins[0].shape(), *axis, *eps, ins[1].data(), ins[2].data())
        }
        Op::Sum => vec![x.iter().sum()],
        Op::Mean => vec![x.iter().sum::<f64>() / x.len() as f64],
        Op::Reshape => x.to_vec(),
        Op::Permute { perm } => {
            let mut out = vec![0.0; n_out];
            permute_map(ins[0].shape(), perm, |src, dst| out[dst] = x[src]);
            out
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(&out_shape, *axis);
            let mut out = Vec::with_capacity(n_out);
            for o in 0..outer {
                for t in ins {
                    let chunk = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        }
        Op::Narrow { axis, start } => {
            let (outer, n, inner) = split_axis(ins[0].shape(), *axis);
            let len = out_shape[*axis];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                out.extend_from_slice(&x[base..base + len * inner]);
            }
            out
        }
        Op::Glu => x
            .iter()
            .zip(ins[1].data())
            .map(|(a, b)| a * sigmoid(*b))
            .collect(),
        Op::Clamp { lo, hi } => x.iter().map(|v| v.clamp(*lo, *hi)).collect(),
        Op::L1 => {
            let s: f64 = x.iter().zip(ins[1].data()).map(|(a, b)| (a - b).abs()).sum();
            vec![s / x.len() as f64]
        }
    };
    Tensor::from_parts(out_shape, data)
}

/// Gradients with respect to each input; `None` where `needs[i]` is false.
pub(crate) fn backward(
    op: &Op,
    ins: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let x = ins[0].data();
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; ins.len()];
    match op {
        Op::Leaf => {}
        Op::Add => {
            grads[0] = want(0).then(|| g.to_vec());
            grads[1] = want(1).then(|| g.to_vec());
        }
        Op::Sub => {
            grads[0] = want(0).then(|| g.to_vec());
            grads[1] = want(1).then(|| g.iter().map(|v| -v).collect());
        }
        Op::Mul => {
            let y = ins[1].data();
            grads[0] = want(0).then(|| g.iter().zip(y).map(|(a, b)| a * b).collect());
            grads[1] = want(1).then(|| g.iter().zip(x).map(|(a, b)| a * b).collect());
        }
        Op::AddBroadcast => {
            grads[0] = want(0).then(|| g.to_vec());
            if want(1) {
                let n = ins[1].len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                grads[1] = Some(gb);
            }
        }
        Op::Affine { scale, .. } => {
            grads[0] = want(0).then(|| g.iter().map(|v| v * scale).collect());
        }
        Op::MatMul => {
            let (ga, gb) = matmul_backward(ins[0], ins[1], g, want(0), want(1));
            grads[0] = ga;
            grads[1] = gb;
        }
        Op::Conv { stride, pad, one_d } => {
            let geom = ConvGeom::new(ins[0].shape(), ins[1].shape(), *stride, *pad, *one_d);
            let (gx, gw, gbias) = conv_backward(&geom, x, ins[1].data(), g, want(0), want(1), want(2));
            grads[0] = gx;
            grads[1] = gw;
            if ins.len() > 2 {
                grads[2] = gbias;
            }
        }
        Op::PixelShuffle { rh, rw } => {
            if want(0) {
                let mut gx = vec![0.0; x.len()];
                shuffle_map(ins[0].shape(), *rh, *rw, |src, dst| gx[src] = g[dst]);
                grads[0] = Some(gx);
            }
        }
        Op::Sigmoid => {
            grads[0] = want(0).then(|| {
                out.data()
                    .iter()
                    .zip(g)
                    .map(|(y, gv)| gv * y * (1.0 - y))
                    .collect()
            });
        }
        Op::Log => {
            grads[0] = want(0).then(|| g.iter().zip(x).map(|(gv, v)| gv / v).collect());
        }
        Op::Softmax { axis } => {
            if want(0) {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |i: usize| (o * n + i) * inner + k;
                        let dot: f64 = (0..n).map(|i| g[idx(i)] * y[idx(i)]).sum();
                        for i in 0..n {
                            gx[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                }
                grads[0] = Some(gx);
            }
        }
        Op::LayerNorm { axis, eps } => {
            let (gx, gg, gb) = layer_norm_backward(x, ins[0].shape(), *axis, *eps, ins[1].data(), g);
            grads[0] = want(0).then_some(gx);
            grads[1] = want(1).then_some(gg);
            grads[2] = want(2).then_some(gb);
        }
        Op::Sum => grads[0] = want(0).then(|| vec![g[0]; x.len()]),
        Op::Mean => grads[0] = want(0).then(|| vec![g[0] / x.len() as f64; x.len()]),
        Op::Reshape => grads[0] = want(0).then(|| g.to_vec()),
        Op::Permute { perm } => {
            if want(0) {
                let mut gx = vec![0.0; x.len()];
                permute_map(ins[0].shape(), perm, |src, dst| gx[src] = g[dst]);
                grads[0] = Some(gx);
            }
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let mut parts: Vec<Vec<f64>> = ins.iter().map(|t| Vec::with_capacity(t.len())).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (t, part) in ins.iter().zip(parts.iter_mut()) {
                    let chunk = t.shape()[*axis] * inner;
                    part.extend_from_slice(&g[pos..pos + chunk]);
                    pos += chunk;
                }
            }
            for (i, part) in parts.into_iter().enumerate() {
                grads[i] = want(i).then_some(part);
            }
        }
        Op::Narrow { axis, start } => {
            if want(0) {
                let (outer, n, inner) = split_axis(ins[0].shape(), *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; x.len()];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                grads[0] = Some(gx);
            }
        }
        Op::Glu => {
            let b = ins[1].data();
            grads[0] = want(0).then(|| g.iter().zip(b).map(|(gv, bv)| gv * sigmoid(*bv)).collect());
            grads[1] = want(1).then(|| {
                g.iter()
                    .zip(x.iter().zip(b))
                    .map(|(gv, (av, bv))| {
                        let s = sigmoid(*bv);
                        gv * av * s * (1.0 - s)
                    })
                    .collect()
            });
        }
        Op::Clamp { lo, hi } => {
            grads[0] = want(0).then(|| {
                g.iter()
                    .zip(x)
                    .map(|(gv, v)| if v >= lo && v <= hi { *gv } else { 0.0 })
                    .collect()
            });
        }
        Op::L1 => {
            let y = ins[1].data();
            let scale = g[0] / x.len() as f64;
            let sign: Vec<f64> = x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = a - b;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            grads[1] = want(1).then(|| sign.iter().map(|v| -v).collect());
            grads[0] = want(0).then_some(sign);
        }
    }
    grads
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> (usize, usize, usize, usize, bool) {
    let sa = a.shape();
    let sb = b.shape();
    let r = sa.len();
    let batch: usize = sa[..r - 2].iter().product();
    let shared = sb.len() == 2;
    (batch, sa[r - 2], sa[r - 1], sb[sb.len() - 1], shared)
}

fn matmul_forward(a: &Tensor, b: &Tensor, n_out: usize) -> Vec<f64> {
    let (batch, m, k, n, shared) = matmul_dims(a, b);
    let mut out = vec![0.0; n_out];
    if shared {
        gemm(
            MatRef::new(a.data(), batch * m, k),
            MatRef::new(b.data(), k, n),
            &mut out,
            0.0,
        );
    } else {
        for i in 0..batch {
            gemm(
                MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k),
                MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
    }
    out
}

fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    g: &[f64],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (batch, m, k, n, shared) = matmul_dims(a, b);
    let mut ga = need_a.then(|| vec![0.0; a.len()]);
    let mut gb = need_b.then(|| vec![0.0; b.len()]);
    if shared {
        if let Some(ga) = ga.as_mut() {
            gemm(
                MatRef::new(g, batch * m, n),
                MatRef::new(b.data(), k, n).t(),
                ga,
                0.0,
            );
        }
        if let Some(gb) = gb.as_mut() {
            gemm(
                MatRef::new(a.data(), batch * m, k).t(),
                MatRef::new(g, batch * m, n),
                gb,
                0.0,
            );
        }
    } else {
        for i in 0..batch {
            let gi = &g[i * m * n..(i + 1) * m * n];
            if let Some(ga) = ga.as_mut() {
                gemm(
                    MatRef::new(gi, m, n),
                    MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n).t(),
                    &mut ga[i * m * k..(i + 1) * m * k],
                    0.0,
                );
            }
            if let Some(gb) = gb.as_mut() {
                gemm(
                    MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k).t(),
                    MatRef::new(gi, m, n),
                    &mut gb[i * k * n..(i + 1) * k * n],
                    0.0,
                );
            }
        }
    }
    (ga, gb)
}

/// Geometry of a (possibly 1-D) convolution mapped onto the 2-D kernel.
pub(crate) struct ConvGeom {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], stride: (usize, usize), pad: (usize, usize), one_d: bool) -> Self {
        let (h, w, kh, kw) = if one_d {
            (1, xs[2], 1, ws[2])
        } else {
            (xs[2], xs[3], ws[2], ws[3])
        };
        let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
        let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;
        Self {
            n: xs[0],
            ci: xs[1],
            co: ws[0],
            h,
            w,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            ho,
            wo,
        }
    }

    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_image(&self) -> usize {
        self.ci * self.h * self.w
    }

    /// Visits every (column index, input offset) pair where the receptive
    /// field hits the unpadded input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        for c in 0..self.ci {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oi in 0..self.ho {
                        let ii = (oi * self.sh + ki) as isize - self.ph as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let in_row = (c * self.h + ii as usize) * self.w;
                        let out_row = row * self.out_plane() + oi * self.wo;
                        for oj in 0..self.wo {
                            let jj = (oj * self.sw + kj) as isize - self.pw as isize;
                            if jj >= 0 && (jj as usize) < self.w {
                                f(out_row + oj, in_row + jj as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|dst, src| cols[dst] = img[src]);
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        self.for_each_tap(|src, dst| img[dst] += cols[src]);
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = g.out_plane();
    let mut out = vec![0.0; g.n * g.co * plane];
    let mut cols = vec![0.0; g.patch() * plane];
    for b in 0..g.n {
        g.im2col(&x[b * g.in_image()..(b + 1) * g.in_image()], &mut cols);
        let o = &mut out[b * g.co * plane..(b + 1) * g.co * plane];
        gemm(
            MatRef::new(w, g.co, g.patch()),
            MatRef::new(&cols, g.patch(), plane),
            o,
            0.0,
        );
        if let Some(bias) = bias {
            for (c, row) in o.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v += bias[c]);
            }
        }
    }
    out
}

type ConvGrads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

fn conv_backward(
    geom: &ConvGeom,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> ConvGrads {
    let plane = geom.out_plane();
    let mut gx = need_x.then(|| vec![0.0; x.len()]);
    let mut gw = need_w.then(|| vec![0.0; w.len()]);
    let mut gb = need_b.then(|| vec![0.0; geom.co]);
    let mut cols = vec![0.0; geom.patch() * plane];
    for b in 0..geom.n {
        let go = &g[b * geom.co * plane..(b + 1) * geom.co * plane];
        if let Some(gw) = gw.as_mut() {
            geom.im2col(&x[b * geom.in_image()..(b + 1) * geom.in_image()], &mut cols);
            gemm(
                MatRef::new(go, geom.co, plane),
                MatRef::new(&cols, geom.patch(), plane).t(),
                gw,
                1.0,
            );
        }
        if let Some(gx) = gx.as_mut() {
            gemm(
                MatRef::new(w, geom.co, geom.patch()).t(),
                MatRef::new(go, geom.co, plane),
                &mut cols,
                0.0,
            );
            geom.col2im(&cols, &mut gx[b * geom.in_image()..(b + 1) * geom.in_image()]);
        }
        if let Some(gb) = gb.as_mut() {
            for (c, row) in go.chunks(plane).enumerate() {
                gb[c] += row.iter().sum::<f64>();
            }
        }
    }
    (gx, gw, gb)
}

/// Calls `f(src, dst)` for the pixel-shuffle mapping of an input of shape
/// `[N, C*rh*rw, H, W]` onto `[N, C, H*rh, W*rw]`.
fn shuffle_map(shape: &[usize], rh: usize, rw: usize, mut f: impl FnMut(usize, usize)) {
    let (n, cin, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cin / (rh * rw);
    let (oh, ow) = (h * rh, w * rw);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..rh {
                for j in 0..rw {
                    let src_ch = (ch * rh + i) * rw + j;
                    for y in 0..h {
                        let src_row = ((b * cin + src_ch) * h + y) * w;
                        let dst_row = ((b * c + ch) * oh + y * rh + i) * ow;
                        for xx in 0..w {
                            f(src_row + xx, dst_row + xx * rw + j);
                        }
                    }
                }
            }
        }
    }
}

/// Calls `f(src, dst)` for every element of a permuted copy.
fn permute_map(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total = numel(shape);
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(src, dst);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

fn softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for k in 0..inner {
            let idx = |i: usize| (o * n + i) * inner + k;
            let max = (0..n).map(|i| x[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..n {
                let e = (x[idx(i)] - max).exp();
                out[idx(i)] = e;
                total += e;
            }
            for i in 0..n {
                out[idx(i)] /= total;
            }
        }
    }
    out
}

fn layer_norm_stats(x: &[f64], shape: &[usize], axis: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut mean = vec![0.0; outer * inner];
    let mut rstd = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..inner {
            let idx = |i: usize| (o * n + i) * inner + k;
            let mu = (0..n).map(|i| x[idx(i)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[idx(i)] - mu).powi(2)).sum::<f64>() / n as f64;
            mean[o * inner + k] = mu;
            rstd[o * inner + k] = 1.0 / (var + eps).sqrt();
        }
    }
    (mean, rstd)
}

fn layer_norm_forward(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    eps: f64,
    gain: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (outer, n, inner) = split_axis(shape, axis);
    let (mean, rstd) = layer_norm_stats(x, shape, axis, eps);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..n {
            for k in 0..inner {
                let s = o * inner + k;
                let j = (o * n + i) * inner + k;
                out[j] = (x[j] - mean[s]) * rstd[s] * gain[i] + bias[i];
            }
        }
    }
    out
}

fn layer_norm_backward(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    eps: f64,
    gain: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (outer, n, inner) = split_axis(shape, axis);
    let (mean, rstd) = layer_norm_stats(x, shape, axis, eps);
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let nf = n as f64;
    for o in 0..outer {
        for k in 0..inner {
            let s = o * inner + k;
            let idx = |i: usize| (o * n + i) * inner + k;
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for i in 0..n {
                let j = idx(i);
                let xh = (x[j] - mean[s]) * rstd[s];
                gg[i] += g[j] * xh;
                gb[i] += g[j];
                let dxh = g[j] * gain[i];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh;
            }
            for i in 0..n {
                let j = idx(i);
                let xh = (x[j] - mean[s]) * rstd[s];
                let dxh = g[j] * gain[i];
                gx[j] = rstd[s] / nf * (nf * dxh - sum_dxh - xh * sum_dxh_xh);
            }
        }
    }
    (gx, gg, gb)
}
