use cycledance_autodiff::gradcheck::max_relative_error;
use cycledance_autodiff::{Graph, Tensor, TensorError, Var};
use cycledance_core::losses::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn value(g: &Graph, v: Var) -> f64 {
    g.value(v).item().unwrap()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    tensor(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn undecided_discriminator_gives_log_two_terms() {
    let mut g = Graph::new();
    let real = g.constant(Tensor::full(vec![1, 1, 4, 4], 0.5).unwrap());
    let fake = g.constant(Tensor::full(vec![1, 1, 4, 4], 0.5).unwrap());
    let (d, gen) = adv_loss(&mut g, real, fake).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((value(&g, d) - 2.0 * ln2).abs() < 1e-12);
    assert!((value(&g, gen) - ln2).abs() < 1e-12);
    let (d2, g2) = adv2_loss(&mut g, real, fake).unwrap();
    assert_eq!(value(&g, d2), value(&g, d));
    assert_eq!(value(&g, g2), value(&g, gen));
}

#[test]
fn saturated_outputs_are_clamped() {
    let mut g = Graph::new();
    let one = g.constant(Tensor::full(vec![3], 1.0).unwrap());
    let zero = g.constant(Tensor::full(vec![3], 0.0).unwrap());
    let perfect = adv_d_term(&mut g, one, zero).unwrap();
    let expect = -2.0 * (1.0 - CLAMP_EPS).ln();
    assert!((value(&g, perfect) - expect).abs() < 1e-15);
    let worst = adv_g_term(&mut g, zero).unwrap();
    assert!((value(&g, worst) + CLAMP_EPS.ln()).abs() < 1e-9);
    let fooled = adv_d_term(&mut g, zero, one).unwrap();
    assert!(value(&g, fooled).is_finite());
}

#[test]
fn discriminator_term_matches_a_direct_sum() {
    let real = [0.9, 0.7, 0.2, 0.6];
    let fake = [0.1, 0.4, 0.3, 0.8];
    let mut g = Graph::new();
    let r = g.constant(tensor(&[4], real.to_vec()));
    let f = g.constant(tensor(&[4], fake.to_vec()));
    let d = adv_d_term(&mut g, r, f).unwrap();
    let gen = adv_g_term(&mut g, f).unwrap();
    let expect_d = -(real.iter().map(|p: &f64| p.ln()).sum::<f64>() / 4.0)
        - fake.iter().map(|p: &f64| (1.0 - p).ln()).sum::<f64>() / 4.0;
    let expect_g = -fake.iter().map(|p: &f64| p.ln()).sum::<f64>() / 4.0;
    assert!((value(&g, d) - expect_d).abs() < 1e-12);
    assert!((value(&g, gen) - expect_g).abs() < 1e-12);
}

#[test]
fn perfect_reconstruction_has_zero_cycle_and_identity_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(random(&[2, 16, 63], &mut rng));
    let y = g.constant(random(&[2, 16, 63], &mut rng));
    let c = cycle_loss(&mut g, x, x, y, y).unwrap();
    let i = identity_loss(&mut g, x, x, y, y).unwrap();
    assert_eq!(value(&g, c), 0.0);
    assert_eq!(value(&g, i), 0.0);
}

#[test]
fn unit_offset_gives_unit_cycle_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xt = random(&[1, 16, 63], &mut rng);
    let shifted = tensor(xt.shape(), xt.data().iter().map(|v| v + 1.0).collect());
    let mut g = Graph::new();
    let x = g.constant(xt);
    let xs = g.constant(shifted);
    let c = cycle_loss(&mut g, x, xs, x, x).unwrap();
    assert!((value(&g, c) - 1.0).abs() < 1e-12);
}

#[test]
fn cycle_loss_matches_a_brute_force_l1() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ts: Vec<Tensor> = (0..4).map(|_| random(&[3, 8, 5], &mut rng)).collect();
    let l1 = |a: &Tensor, b: &Tensor| {
        a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
    };
    let expect = l1(&ts[0], &ts[1]) + l1(&ts[2], &ts[3]);
    let mut g = Graph::new();
    let v: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
    let c = cycle_loss(&mut g, v[0], v[1], v[2], v[3]).unwrap();
    assert!((value(&g, c) - expect).abs() < 1e-12);
    let swapped = cycle_loss(&mut g, v[2], v[3], v[0], v[1]).unwrap();
    assert!((value(&g, swapped) - value(&g, c)).abs() < 1e-15);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(vec![1, 16, 63], 0.0).unwrap());
    let b = g.constant(Tensor::full(vec![1, 20, 63], 0.0).unwrap());
    let err = cycle_loss(&mut g, a, b, a, a).unwrap_err().to_string();
    assert!(err.contains("shape"), "{err}");
    assert!(identity_loss(&mut g, a, a, a, b).is_err());
}

fn scalar(g: &mut Graph, v: f64) -> Var {
    g.constant(Tensor::scalar(v).unwrap())
}

#[test]
fn objective_weights_scale_only_their_terms() {
    let mut g = Graph::new();
    let terms = GeneratorTerms {
        adv_xy: scalar(&mut g, 0.3),
        adv_yx: scalar(&mut g, 0.2),
        cycle: scalar(&mut g, 0.5),
        identity: Some(scalar(&mut g, 0.1)),
        adv2_x: Some(scalar(&mut g, 0.7)),
        adv2_y: Some(scalar(&mut g, 0.4)),
    };
    let base = generator_objective(&mut g, &terms, 10.0, 5.0).unwrap();
    assert!((value(&g, base) - (0.5 + 5.0 + 0.5 + 1.1)).abs() < 1e-12);
    let doubled = generator_objective(&mut g, &terms, 20.0, 5.0).unwrap();
    assert!((value(&g, doubled) - value(&g, base) - 5.0).abs() < 1e-12);
    let no_id = generator_objective(&mut g, &terms, 10.0, 0.0).unwrap();
    assert!((value(&g, base) - value(&g, no_id) - 0.5).abs() < 1e-12);
    let bare = GeneratorTerms {
        identity: None,
        adv2_x: None,
        adv2_y: None,
        ..terms
    };
    let bare = generator_objective(&mut g, &bare, 10.0, 5.0).unwrap();
    assert!((value(&g, bare) - 5.5).abs() < 1e-12);

    let ds = [scalar(&mut g, 1.0), scalar(&mut g, 2.5)];
    let d = discriminator_objective(&mut g, &ds).unwrap();
    assert_eq!(value(&g, d), 3.5);
    assert!(discriminator_objective(&mut g, &[]).is_err());
}

#[test]
fn identity_weight_anneals_to_zero() {
    let w = LossWeights::default();
    assert_eq!(w.anneal_step(100), 20);
    assert_eq!(w.anneal_step(7), 2);
    assert_eq!(w.lambda_id_at(0, 100), 5.0);
    assert_eq!(w.lambda_id_at(19, 100), 5.0);
    assert_eq!(w.lambda_id_at(20, 100), 0.0);
    let fixed = LossWeights {
        id_anneal_step: Some(3),
        ..w
    };
    assert_eq!(fixed.lambda_id_at(2, 100), 5.0);
    assert_eq!(fixed.lambda_id_at(3, 100), 0.0);
    let bad = LossWeights {
        lambda_cyc: -1.0,
        ..LossWeights::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn loss_csv_lists_present_terms() {
    let r = LossRecord {
        step: 4,
        adv_xy: 0.5,
        adv_yx: 0.25,
        cycle: 1.0,
        identity: None,
        adv2_x: Some(0.125),
        adv2_y: Some(2.0),
        d_x: 1.5,
        d_y: 1.25,
        d2_x: Some(0.5),
        d2_y: Some(0.75),
        generator_total: 12.0,
    };
    let csv = losses_to_csv(&[r.clone()], "abc");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# config_hash=abc");
    assert_eq!(lines[1], "step,loss_name,value");
    assert_eq!(lines[2], "4,adv_xy,0.5");
    assert!(!csv.contains("identity"));
    assert_eq!(lines.len(), 2 + r.entries().len());
    assert_eq!(r.generator_adv(), 0.75);
}

fn core_err(e: cycledance_core::error::Error) -> TensorError {
    TensorError::Format(e.to_string())
}

/// Toy cycle: two linear generators on 2-frame, 3-channel clips and
/// sigmoid discriminators.
#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![
        random(&[2, 3], &mut rng),
        random(&[2, 3], &mut rng),
        random(&[3, 3], &mut rng),
        random(&[3, 3], &mut rng),
        random(&[3, 1], &mut rng),
        random(&[3, 1], &mut rng),
    ];
    let f = |g: &mut Graph, v: &[Var]| -> cycledance_autodiff::Result<Var> {
        let (x, y, gxy, gyx, dx, dy) = (v[0], v[1], v[2], v[3], v[4], v[5]);
        let fake_y = g.matmul(x, gxy)?;
        let fake_x = g.matmul(y, gyx)?;
        let cyc_x = g.matmul(fake_y, gyx)?;
        let cyc_y = g.matmul(fake_x, gxy)?;
        let id_x = g.matmul(x, gyx)?;
        let id_y = g.matmul(y, gxy)?;
        let logits = [g.matmul(y, dy)?, g.matmul(fake_y, dy)?, g.matmul(x, dx)?, g.matmul(fake_x, dx)?];
        let mut p = Vec::new();
        for l in logits {
            p.push(g.sigmoid(l)?);
        }
        let (d_y, g_xy) = adv_loss(g, p[0], p[1]).map_err(core_err)?;
        let (d_x, g_yx) = adv_loss(g, p[2], p[3]).map_err(core_err)?;
        let cycle = cycle_loss(g, x, cyc_x, y, cyc_y).map_err(core_err)?;
        let identity = identity_loss(g, x, id_x, y, id_y).map_err(core_err)?;
        let terms = GeneratorTerms {
            adv_xy: g_xy,
            adv_yx: g_yx,
            cycle,
            identity: Some(identity),
            adv2_x: None,
            adv2_y: None,
        };
        let gen = generator_objective(g, &terms, 10.0, 5.0).map_err(core_err)?;
        let d = discriminator_objective(g, &[d_x, d_y]).map_err(core_err)?;
        g.add(gen, d)
    };
    let err = max_relative_error(&inputs, &f, 1e-6).unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

proptest! {
    #[test]
    fn generator_term_decreases_as_the_discriminator_is_fooled(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut g = Graph::new();
        let l = g.constant(Tensor::full(vec![2], lo).unwrap());
        let h = g.constant(Tensor::full(vec![2], hi).unwrap());
        let gl = adv_g_term(&mut g, l).unwrap();
        let gh = adv_g_term(&mut g, h).unwrap();
        prop_assert!(value(&g, gh) <= value(&g, gl));
        let r = g.constant(Tensor::full(vec![2], 0.5).unwrap());
        let dl = adv_d_term(&mut g, r, l).unwrap();
        let dh = adv_d_term(&mut g, r, h).unwrap();
        prop_assert!(value(&g, dh) >= value(&g, dl));
    }

    #[test]
    fn cycle_loss_is_non_negative_and_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Tensor> = (0..4).map(|_| random(&[1, 4, 3], &mut rng)).collect();
        let mut g = Graph::new();
        let v: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let c = cycle_loss(&mut g, v[0], v[1], v[2], v[3]).unwrap();
        let r = cycle_loss(&mut g, v[1], v[0], v[3], v[2]).unwrap();
        prop_assert!(value(&g, c) >= 0.0);
        prop_assert!((value(&g, c) - value(&g, r)).abs() < 1e-15);
    }
}
