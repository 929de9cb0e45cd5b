//! Shared test helpers: central-difference gradient checks and random
//! small instances of every differentiable piece.
#![allow(dead_code)]

use casrnn_core::cascade::{CascadeConfig, CascadeModel, Variant};
use casrnn_core::nn::{cross_entropy, ConvLayer, GruParams, Objective, OutputHead, Param, Parameterized, PoolLayer};
use casrnn_core::spatial::{ConvSpec, SpatialConfig, SpatialSample, SsCascadeModel};
use casrnn_core::nn::Activation;
use casrnn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// Below `FLOOR` a central difference at `EPS` cannot resolve the
/// derivative: rounding in an O(1) loss alone contributes about 1e-10.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Fills every parameter with uniform values in `(-scale, scale)`.
pub fn randomize<R: Rng>(params: Vec<&mut Param>, rng: &mut R, scale: f64) {
    for p in params {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Central-difference derivative of `f` at each coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + EPS;
            let plus = f(&probe);
            probe[i] = orig - EPS;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * EPS)
        })
        .collect()
}

pub fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Worst relative error over every parameter element of `model`.
///
/// `params` must list parameters in the same order on every call;
/// `analytic` accumulates `∇loss` into zeroed gradient slots.
pub fn check_params<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> Vec<&mut Param>,
    loss: impl Fn(&M) -> f64,
    analytic: impl Fn(&mut M),
) -> f64 {
    let mut m = model.clone();
    for p in params(&mut m) {
        p.zero_grad();
    }
    analytic(&mut m);
    let grads: Vec<Vec<f64>> = params(&mut m).into_iter().map(|p| p.grad.data().to_vec()).collect();

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        for (ei, &a) in g.iter().enumerate() {
            let orig = params(&mut probe)[pi].value.data()[ei];
            params(&mut probe)[pi].value.data_mut()[ei] = orig + EPS;
            let plus = loss(&probe);
            params(&mut probe)[pi].value.data_mut()[ei] = orig - EPS;
            let minus = loss(&probe);
            params(&mut probe)[pi].value.data_mut()[ei] = orig;
            worst = worst.max(rel_err(a, (plus - minus) / (2.0 * EPS)));
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// One function per layer; each returns the worst error over its instance,
// covering parameters and inputs.

pub fn gru_step_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (d, h) = (r.random_range(1..4), r.random_range(1..5));
    let mut gru = GruParams::zeros(d, h);
    randomize(gru.params_mut(), &mut r, 1.0);
    let x = randn_vec(&mut r, d, 1.0);
    let h_prev = randn_vec(&mut r, h, 0.9);
    let c = randn_vec(&mut r, h, 1.0);
    let loss = |g: &GruParams, x: &[f64], hp: &[f64]| dot(&g.step(x, hp).unwrap().0, &c);

    let p = check_params(
        &gru,
        |g| g.params_mut(),
        |g| loss(g, &x, &h_prev),
        |g| {
            let (_, cache) = g.step(&x, &h_prev).unwrap();
            g.backward_step(&cache, &c);
        },
    );
    let (_, cache) = gru.step(&x, &h_prev).unwrap();
    let (dx, dh) = gru.clone().backward_step(&cache, &c);
    let nx = numeric_grad(&x, |x| loss(&gru, x, &h_prev));
    let nh = numeric_grad(&h_prev, |hp| loss(&gru, &x, hp));
    p.max(max_rel(&dx, &nx)).max(max_rel(&dh, &nh))
}

pub fn gru_sequence_case(seed: u64) -> f64 {
    const T: usize = 5;
    let mut r = rng(seed);
    let (d, h) = (r.random_range(1..4), r.random_range(1..5));
    let mut gru = GruParams::zeros(d, h);
    randomize(gru.params_mut(), &mut r, 1.0);
    let xs: Vec<f64> = randn_vec(&mut r, T * d, 1.0);
    let c = randn_vec(&mut r, h, 1.0);
    let seq = |flat: &[f64]| flat.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let loss = |g: &GruParams, flat: &[f64]| dot(&g.forward(&seq(flat), None).unwrap().0, &c);

    let p = check_params(
        &gru,
        |g| g.params_mut(),
        |g| loss(g, &xs),
        |g| {
            let (_, cache) = g.forward(&seq(&xs), None).unwrap();
            g.backward(&cache, &c).unwrap();
        },
    );
    let (_, cache) = gru.forward(&seq(&xs), None).unwrap();
    let dx: Vec<f64> = gru.clone().backward(&cache, &c).unwrap().concat();
    let nx = numeric_grad(&xs, |flat| loss(&gru, flat));
    p.max(max_rel(&dx, &nx))
}

pub fn head_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (f, classes) = (r.random_range(1..6), r.random_range(2..5));
    let mut head = OutputHead::zeros(f, classes);
    randomize(head.params_mut(), &mut r, 1.0);
    let x = randn_vec(&mut r, f, 1.0);
    let c = randn_vec(&mut r, classes, 1.0);
    let loss = |hd: &OutputHead, x: &[f64]| dot(&hd.forward(x).unwrap(), &c);
    let p = check_params(&head, |hd| hd.params_mut(), |hd| loss(hd, &x), |hd| {
        hd.backward(&x, &c).unwrap();
    });
    let dx = head.clone().backward(&x, &c).unwrap();
    p.max(max_rel(&dx, &numeric_grad(&x, |x| loss(&head, x))))
}

pub fn cross_entropy_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let classes = r.random_range(2..7);
    let logits = randn_vec(&mut r, classes, 4.0);
    let label = r.random_range(0..classes);
    let (_, grad) = cross_entropy(&logits, label).unwrap();
    max_rel(&grad, &numeric_grad(&logits, |v| cross_entropy(v, label).unwrap().0))
}

pub fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (in_ch, out_ch) = (r.random_range(1..3), r.random_range(1..4));
    let (kh, kw) = (r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (kh + r.random_range(0..3), kw + r.random_range(0..3));
    let mut conv = ConvLayer::zeros(in_ch, out_ch, kh, kw);
    randomize(conv.params_mut(), &mut r, 1.0);
    let x = randn_vec(&mut r, in_ch * h * w, 1.0);
    let (oh, ow) = conv.output_size(h, w).unwrap();
    let c = Tensor::new(vec![out_ch, oh, ow], randn_vec(&mut r, out_ch * oh * ow, 1.0)).unwrap();
    let input = |x: &[f64]| Tensor::new(vec![in_ch, h, w], x.to_vec()).unwrap();
    let loss = |cv: &ConvLayer, x: &[f64]| dot(cv.forward(&input(x)).unwrap().data(), c.data());
    let p = check_params(&conv, |cv| cv.params_mut(), |cv| loss(cv, &x), |cv| {
        cv.backward(&input(&x), &c).unwrap();
    });
    let dx = conv.clone().backward(&input(&x), &c).unwrap();
    p.max(max_rel(dx.data(), &numeric_grad(&x, |x| loss(&conv, x))))
}

pub fn pool_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (ch, h, w) = (r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4));
    // Distinct values spaced well beyond EPS keep each window's maximum
    // stable under perturbation.
    let mut x: Vec<f64> = (0..ch * h * w).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        x.swap(i, r.random_range(0..=i));
    }
    let input = |x: &[f64]| Tensor::new(vec![ch, h, w], x.to_vec()).unwrap();
    let c = Tensor::new(vec![ch, h / 2, w / 2], randn_vec(&mut r, ch * h * w / 4, 1.0)).unwrap();
    let loss = |x: &[f64]| dot(PoolLayer.forward(&input(x)).unwrap().0.data(), c.data());
    let (_, cache) = PoolLayer.forward(&input(&x)).unwrap();
    let dx = PoolLayer.backward(&cache, &c).unwrap();
    max_rel(dx.data(), &numeric_grad(&x, loss))
}

pub fn random_cascade(seed: u64, variant: Variant) -> (CascadeModel, Vec<Vec<f64>>, usize) {
    let mut r = rng(seed);
    let bands = r.random_range(3..9);
    let config = CascadeConfig {
        bands,
        sub_sequences: r.random_range(1..=bands.min(4)),
        hidden1: r.random_range(1..4),
        hidden2: r.random_range(1..4),
        classes: r.random_range(2..4),
        variant,
        input_dim: r.random_range(1..3),
    };
    let mut model = CascadeModel::new(config, &mut r).unwrap();
    randomize(model.params_mut(), &mut r, 1.0);
    let inputs = (0..bands).map(|_| randn_vec(&mut r, config.input_dim, 1.0)).collect();
    let label = r.random_range(0..config.classes);
    (model, inputs, label)
}

pub fn cascade_case(seed: u64, variant: Variant) -> f64 {
    let (model, inputs, label) = random_cascade(seed, variant);
    let width = inputs[0].len();
    let loss = |m: &CascadeModel, xs: &[Vec<f64>]| {
        let trace = m.forward(xs).unwrap();
        m.loss(&trace, label).unwrap().total
    };
    let p = check_params(&model, |m| m.params_mut(), |m| loss(m, &inputs), |m| {
        m.accumulate_sample(&inputs, label, 1.0).unwrap();
    });
    let (_, dx) = model.clone().accumulate_sample(&inputs, label, 1.0).unwrap();
    let flat: Vec<f64> = inputs.concat();
    let nx = numeric_grad(&flat, |f| loss(&model, &f.chunks(width).map(<[f64]>::to_vec).collect::<Vec<_>>()));
    p.max(max_rel(&dx.concat(), &nx))
}

/// A spectral-spatial model small enough to difference every weight.
pub fn spatial_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spatial = SpatialConfig {
        patch_size: 9,
        convs: [
            ConvSpec { kernel: 2, channels: 2 },
            ConvSpec { kernel: 3, channels: 2 },
            ConvSpec { kernel: 1, channels: 3 },
        ],
        activation: if seed.is_multiple_of(2) { Activation::Tanh } else { Activation::Sigmoid },
    };
    let bands = 3;
    let cascade = CascadeConfig {
        bands,
        sub_sequences: 2,
        hidden1: 2,
        hidden2: 2,
        classes: 3,
        variant: Variant::FeatureFusion,
        input_dim: 0,
    };
    let mut model = SsCascadeModel::new(spatial, cascade, &mut r).unwrap();
    randomize(model.band_cnn.params_mut(), &mut r, 0.8);
    let sample = SpatialSample {
        bands: (0..bands)
            .map(|_| Tensor::new(vec![1, 9, 9], randn_vec(&mut r, 81, 1.0)).unwrap())
            .collect(),
        label: r.random_range(0..3),
    };
    let loss = |m: &SsCascadeModel| m.clone().accumulate(&sample, 1.0).unwrap().loss;
    fn params(m: &mut SsCascadeModel) -> Vec<&mut Param> {
        let mut out = m.band_cnn.params_mut();
        out.extend(m.cascade.params_mut());
        out
    }
    check_params(&model, params, loss, |m| {
        m.accumulate(&sample, 1.0).unwrap();
    })
}
