use cycledance_autodiff::{Graph, Tensor};
use cycledance_core::model::layers::{Builder, Transformer};
use cycledance_core::model::{down_extent, Ablation, ArchConfig, Discriminator, Generator, ParamSet, TransferModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn generator(ablation: Ablation, seed: u64) -> Generator {
    let arch = ablation.arch(&ArchConfig::default());
    Generator::new(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn run(gen: &Generator, motion: &Tensor, music: Option<&Tensor>) -> Tensor {
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, false);
    let x = g.constant(motion.clone());
    let m = music.map(|m| g.constant(m.clone()));
    let y = gen.forward(&mut g, &p, x, m).unwrap();
    g.value(y).clone()
}

#[test]
fn generators_preserve_shape_and_stay_finite() {
    for ablation in Ablation::ALL {
        let gen = generator(ablation, 3);
        for t in [16, 32, 44] {
            let out = run(&gen, &random(&[2, t, 63], 1), Some(&random(&[2, t, 35], 2)));
            assert_eq!(out.shape(), &[2, t, 63], "{ablation}");
            assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn generators_reject_unpadded_lengths() {
    let gen = generator(Ablation::Transgan, 0);
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, false);
    let x = g.constant(random(&[1, 30, 63], 0));
    let err = gen.forward(&mut g, &p, x, None).unwrap_err().to_string();
    assert!(err.contains("pad"), "{err}");
    let x = g.constant(random(&[1, 12, 63], 0));
    assert!(gen.forward(&mut g, &p, x, None).is_err());
}

#[test]
fn music_is_ignored_without_a_music_pathway() {
    let gen = generator(Ablation::TransganCl, 5);
    let x = random(&[1, 32, 63], 1);
    let a = run(&gen, &x, Some(&random(&[1, 32, 35], 2)));
    let b = run(&gen, &x, Some(&random(&[1, 32, 35], 3)));
    let c = run(&gen, &x, None);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn music_changes_the_output_with_a_music_pathway() {
    let gen = generator(Ablation::Cycledance, 5);
    let x = random(&[1, 32, 63], 1);
    let a = run(&gen, &x, Some(&random(&[1, 32, 35], 2)));
    let b = run(&gen, &x, Some(&random(&[1, 32, 35], 3)));
    assert_ne!(a, b);
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, false);
    let xv = g.constant(x);
    assert!(gen.forward(&mut g, &p, xv, None).is_err());
}

/// Gradient of output frame 0 with respect to the last input frame.
fn far_sensitivity(gen: &Generator, t: usize) -> f64 {
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, false);
    let x = g.param(random(&[1, t, 63], 8));
    let m = gen.uses_music().then(|| g.constant(random(&[1, t, 35], 9)));
    let y = gen.forward(&mut g, &p, x, m).unwrap();
    let first = g.narrow(y, 1, 0, 1).unwrap();
    let w = g.constant(random(&[1, 1, 63], 10));
    let probe = g.mul(first, w).unwrap();
    let loss = g.sum(probe).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    grad[(t - 1) * 63..].iter().map(|v| v.abs()).sum()
}

#[test]
fn transformers_mix_beyond_the_convolutional_receptive_field() {
    let t = 128;
    assert_eq!(far_sensitivity(&generator(Ablation::Baseline, 4), t), 0.0);
    for ablation in [Ablation::Transgan, Ablation::Cycledance] {
        assert!(far_sensitivity(&generator(ablation, 4), t) > 1e-9, "{ablation}");
    }
}

#[test]
fn positional_encoding_breaks_permutation_equivariance() {
    let mut params = ParamSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tf = {
        let mut b = Builder::new(&mut params, &mut rng);
        Transformer::new(&mut b, "tf", 1, 8, 2, 16)
    };
    let x = random(&[1, 6, 8], 3);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permuted = |t: &Tensor| -> Vec<f64> { perm.iter().flat_map(|&i| t.data()[i * 8..(i + 1) * 8].to_vec()).collect() };
    let xp = Tensor::new(vec![1, 6, 8], permuted(&x)).unwrap();
    let eval = |x: &Tensor, positions: bool| -> Tensor {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let v = g.constant(x.clone());
        let y = if positions {
            tf.forward(&mut g, &p, v).unwrap()
        } else {
            tf.forward_no_position(&mut g, &p, v).unwrap()
        };
        g.value(y).clone()
    };
    let plain = permuted(&eval(&x, false));
    let plain_p = eval(&xp, false);
    for (a, b) in plain.iter().zip(plain_p.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let with_pos = permuted(&eval(&x, true));
    let with_pos_p = eval(&xp, true);
    let diff: f64 = with_pos.iter().zip(with_pos_p.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn permuting_frames_changes_generator_outputs() {
    let gen = generator(Ablation::Transgan, 1);
    let x = random(&[1, 32, 63], 4);
    let rev: Vec<f64> = (0..32).rev().flat_map(|i| x.data()[i * 63..(i + 1) * 63].to_vec()).collect();
    let xr = Tensor::new(vec![1, 32, 63], rev).unwrap();
    let y = run(&gen, &x, None);
    let yr = run(&gen, &xr, None);
    let unreversed: Vec<f64> = (0..32).rev().flat_map(|i| yr.data()[i * 63..(i + 1) * 63].to_vec()).collect();
    let diff: f64 = y.data().iter().zip(&unreversed).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
}

fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

#[test]
fn discriminator_patch_grid_matches_the_stride_arithmetic() {
    let arch = ArchConfig::default();
    let d = Discriminator::new(&arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for t in [16, 64, 100, 128] {
        let expect = (ceil_half(ceil_half(ceil_half(63))), ceil_half(ceil_half(ceil_half(t))));
        assert_eq!(d.patch_grid(t), expect);
        let out = d.infer(random(&[1, t, 63], 1).data(), t).unwrap();
        assert_eq!(out.len(), expect.0 * expect.1);
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }
    assert_eq!(d.patch_grid(64), (8, 8));
    assert_eq!(down_extent(63), 32);
}

#[test]
fn zeroed_discriminator_outputs_one_half() {
    let arch = ArchConfig::default();
    let mut d = Discriminator::new(&arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for t in d.params_mut().tensors_mut() {
        t.update_data(|v| v.iter_mut().for_each(|x| *x = 0.0)).unwrap();
    }
    let out = d.infer(random(&[1, 64, 63], 1).data(), 64).unwrap();
    assert!(out.iter().all(|&p| p == 0.5));
}

#[test]
fn parameter_counts_grow_with_the_ablation() {
    let base = ArchConfig::default();
    let count = |a: Ablation| TransferModel::new(&a.arch(&base), 0).unwrap().generator_params();
    assert!(count(Ablation::Baseline) < count(Ablation::Transgan));
    assert_eq!(count(Ablation::Transgan), count(Ablation::TransganCl));
    assert!(count(Ablation::Transgan) <= count(Ablation::Crosstransgan));
    assert_eq!(count(Ablation::Crosstransgan), count(Ablation::Cycledance));
}

#[test]
fn second_discriminators_follow_the_two_step_flag() {
    let arch = ArchConfig::default();
    let m = TransferModel::new(&arch, 0).unwrap();
    assert!(m.d2_x.is_some() && m.d2_y.is_some());
    assert_eq!(m.param_sets().len(), 6);
    let off = ArchConfig {
        use_two_step_adv: false,
        ..arch
    };
    let m = TransferModel::new(&off, 0).unwrap();
    assert!(m.d2_x.is_none() && m.d2_y.is_none());
    assert_eq!(m.param_sets().len(), 4);
}

#[test]
fn initialization_is_seed_deterministic() {
    let arch = ArchConfig::default();
    let a = TransferModel::new(&arch, 11).unwrap();
    let b = TransferModel::new(&arch, 11).unwrap();
    let c = TransferModel::new(&arch, 12).unwrap();
    assert_eq!(a.g_xy.params(), b.g_xy.params());
    assert_ne!(a.g_xy.params(), c.g_xy.params());
}
