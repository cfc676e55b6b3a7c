//! Central finite-difference gradient checking.
//!
//! The finite-difference side only evaluates forward values on constant
//! leaves, so it never touches the backward kernels it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Builds a scalar loss from the supplied leaves.
pub type LossFn<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

/// Largest `|analytic - fd| / max(1, |fd|)` over every input element.
pub fn max_relative_error(inputs: &[Tensor], f: &LossFn<'_>, eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.item(loss))
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].update_data(|d| d[i] = orig + eps)?;
            let plus = eval(&probe)?;
            probe[k].update_data(|d| d[i] = orig - eps)?;
            let minus = eval(&probe)?;
            probe[k].update_data(|d| d[i] = orig)?;
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Result of checking one primitive over several random shapes.
#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub primitive: &'static str,
    pub shapes_checked: usize,
    pub max_relative_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite random values")
}

/// Values bounded away from zero in magnitude (for kinks at zero).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite random values")
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Contracts `out` with a fixed random weight so every output element
/// contributes a distinct coefficient to the loss.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type Case = (Vec<Tensor>, Box<LossFn<'static>>);

fn case_for(name: &'static str, rng: &mut ChaCha8Rng) -> Case {
    let wseed: u64 = rng.random();
    let unary = |f: fn(&mut Graph, Var) -> Result<Var>| -> Box<LossFn<'static>> {
        Box::new(move |g, v| {
            let y = f(g, v[0])?;
            weighted_sum(g, y, wseed)
        })
    };
    let binary = |f: fn(&mut Graph, Var, Var) -> Result<Var>| -> Box<LossFn<'static>> {
        Box::new(move |g, v| {
            let y = f(g, v[0], v[1])?;
            weighted_sum(g, y, wseed)
        })
    };
    match name {
        "add" | "sub" | "mul" | "glu" => {
            let s = [dim(rng, 1, 4), dim(rng, 1, 5)];
            let ins = vec![uniform(rng, &s, -2.0, 2.0), uniform(rng, &s, -2.0, 2.0)];
            let f = match name {
                "add" => binary(Graph::add),
                "sub" => binary(Graph::sub),
                "mul" => binary(Graph::mul),
                _ => binary(Graph::glu),
            };
            (ins, f)
        }
        "add_broadcast" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4)];
            let ins = vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s[1..], -1.0, 1.0)];
            (ins, binary(Graph::add_broadcast))
        }
        "affine" => {
            let s = [dim(rng, 1, 6)];
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let ins = vec![uniform(rng, &s, -1.0, 1.0)];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.affine(v[0], a, b)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
            let batched = rng.random_bool(0.5);
            let b = dim(rng, 1, 3);
            let rhs: Vec<usize> = if batched { vec![b, k, n] } else { vec![k, n] };
            let ins = vec![uniform(rng, &[b, m, k], -1.0, 1.0), uniform(rng, &rhs, -1.0, 1.0)];
            (ins, binary(Graph::matmul))
        }
        "conv1d" => {
            let (n, ci, co) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
            let k = dim(rng, 1, 3);
            let stride = dim(rng, 1, 2);
            let pad = dim(rng, 0, 2);
            let l = dim(rng, k.max(2), 7);
            let ins = vec![
                uniform(rng, &[n, ci, l], -1.0, 1.0),
                uniform(rng, &[co, ci, k], -1.0, 1.0),
                uniform(rng, &[co], -1.0, 1.0),
            ];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.conv1d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "conv2d" => {
            let (n, ci, co) = (dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 3));
            let (kh, kw) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let stride = (dim(rng, 1, 2), dim(rng, 1, 2));
            let pad = (dim(rng, 0, 1), dim(rng, 0, 2));
            let (h, w) = (dim(rng, kh.max(2), 5), dim(rng, kw.max(2), 5));
            let ins = vec![
                uniform(rng, &[n, ci, h, w], -1.0, 1.0),
                uniform(rng, &[co, ci, kh, kw], -1.0, 1.0),
                uniform(rng, &[co], -1.0, 1.0),
            ];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "pixel_shuffle" => {
            let (rh, rw) = (dim(rng, 1, 2), dim(rng, 1, 3));
            let s = [dim(rng, 1, 2), dim(rng, 1, 2) * rh * rw, dim(rng, 1, 3), dim(rng, 1, 3)];
            let ins = vec![uniform(rng, &s, -1.0, 1.0)];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.pixel_shuffle(v[0], rh, rw)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "sigmoid" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            (vec![uniform(rng, &s, -4.0, 4.0)], unary(Graph::sigmoid))
        }
        "log" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            (vec![uniform(rng, &s, 0.5, 3.0)], unary(Graph::log))
        }
        "softmax" => {
            let axis = dim(rng, 0, 2);
            let mut s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            s[axis] = dim(rng, 2, 4);
            (
                vec![uniform(rng, &s, -2.0, 2.0)],
                Box::new(move |g, v| {
                    let y = g.softmax(v[0], axis)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "layer_norm" => {
            let axis = dim(rng, 0, 2);
            let mut s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            s[axis] = dim(rng, 2, 5);
            let ins = vec![
                uniform(rng, &s, -2.0, 2.0),
                uniform(rng, &[s[axis]], 0.5, 1.5),
                uniform(rng, &[s[axis]], -0.5, 0.5),
            ];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], axis, 1e-5)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "sum" | "mean" => {
            let s = [dim(rng, 1, 4), dim(rng, 1, 4)];
            let ins = vec![uniform(rng, &s, -1.0, 1.0)];
            let f: Box<LossFn<'static>> = if name == "sum" {
                Box::new(|g, v| g.sum(v[0]))
            } else {
                Box::new(|g, v| g.mean(v[0]))
            };
            (ins, f)
        }
        "reshape" => {
            let (a, b) = (dim(rng, 1, 4), dim(rng, 1, 4));
            let ins = vec![uniform(rng, &[a, b], -1.0, 1.0)];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.reshape(v[0], &[b, a])?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "permute" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
            let perms = [[0, 2, 1], [2, 0, 1], [1, 2, 0], [2, 1, 0], [1, 0, 2]];
            let perm = perms[dim(rng, 0, perms.len() - 1)];
            (
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| {
                    let y = g.permute(v[0], &perm)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "concat" => {
            let axis = dim(rng, 0, 1);
            let mut s1 = [dim(rng, 1, 3), dim(rng, 1, 3)];
            let s0 = s1;
            s1[axis] = dim(rng, 1, 3);
            let ins = vec![uniform(rng, &s0, -1.0, 1.0), uniform(rng, &s1, -1.0, 1.0)];
            (
                ins,
                Box::new(move |g, v| {
                    let y = g.concat(&[v[0], v[1]], axis)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "narrow" => {
            let s = [dim(rng, 1, 3), dim(rng, 2, 5)];
            let start = dim(rng, 0, s[1] - 1);
            let len = dim(rng, 1, s[1] - start);
            (
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| {
                    let y = g.narrow(v[0], 1, start, len)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "clamp" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            // inside (-0.9, 0.9) or outside ±1.1, never on a bound
            let n = s[0] * s[1];
            let data = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(-0.9..0.9)
                    } else {
                        let m = rng.random_range(1.1..2.0);
                        if rng.random_bool(0.5) { m } else { -m }
                    }
                })
                .collect();
            let x = Tensor::new(s.to_vec(), data).expect("finite random values");
            (
                vec![x],
                Box::new(move |g, v| {
                    let y = g.clamp(v[0], -1.0, 1.0)?;
                    weighted_sum(g, y, wseed)
                }),
            )
        }
        "l1" => {
            let s = [dim(rng, 1, 3), dim(rng, 1, 4)];
            let a = uniform(rng, &s, -1.0, 1.0);
            let gap = away_from_zero(rng, &s);
            let b_data = a.data().iter().zip(gap.data()).map(|(x, d)| x + d).collect();
            let b = Tensor::new(s.to_vec(), b_data).expect("finite");
            (vec![a, b], Box::new(|g, v| g.l1(v[0], v[1])))
        }
        other => unreachable!("no gradient case for {other}"),
    }
}

/// Every differentiable primitive, in the order the suite checks them.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "add_broadcast",
    "affine",
    "matmul",
    "conv1d",
    "conv2d",
    "pixel_shuffle",
    "sigmoid",
    "log",
    "softmax",
    "layer_norm",
    "sum",
    "mean",
    "reshape",
    "permute",
    "concat",
    "narrow",
    "glu",
    "clamp",
    "l1",
];

/// Checks every primitive on `shapes_per_primitive` random shapes drawn from
/// `seed`.
pub fn primitive_suite(seed: u64, shapes_per_primitive: usize, eps: f64) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PRIMITIVES
        .iter()
        .map(|&name| {
            let mut worst = 0.0f64;
            for _ in 0..shapes_per_primitive {
                let (inputs, f) = case_for(name, &mut rng);
                worst = worst.max(max_relative_error(&inputs, f.as_ref(), eps)?);
            }
            Ok(PrimitiveCheck {
                primitive: name,
                shapes_checked: shapes_per_primitive,
                max_relative_error: worst,
            })
        })
        .collect()
}
