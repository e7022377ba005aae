mod common;

use common::*;
use dpm_core::dataset::Label;
use dpm_core::dropout::{sample_masks, DropoutSpec, DropoutTargets, LayerMasks};
use dpm_core::net::*;
use dpm_core::sim::Camera;
use dpm_core::tensor::{conv2d, dense, hadamard, pointwise, sigmoid, Activation, Tensor};

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
    .unwrap()
}

fn broadcast(b: &Tensor, q: usize, r: usize) -> Tensor {
    let p = b.len();
    Tensor::from_fn(&[q, r, p], |i| b.data()[i % p])
}

fn masked(w: &Tensor, m: &Option<Tensor>) -> Tensor {
    match m {
        Some(m) => hadamard(w, m).unwrap(),
        None => w.clone(),
    }
}

/// Straight-line transcription of the ConvLSTM gate equations using only
/// the kernel ops. `o_uses_new_c = false` is the deliberately wrong variant.
fn oracle_step(
    layer: &ConvLstmLayer,
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    masks: Option<&LayerMasks>,
    o_uses_new_c: bool,
) -> (Tensor, Tensor) {
    let none = LayerMasks::default();
    let m = masks.unwrap_or(&none);
    let (q, r) = layer.out_dims();
    let pre = |g: usize| {
        let cx = conv2d(x, &masked(&layer.w_x[g], &m.w_x[g]), layer.stride).unwrap();
        let ch = conv2d(h, &masked(&layer.w_h[g], &m.w_h[g]), 1).unwrap();
        add(&add(&cx, &ch), &broadcast(&layer.b[g], q, r))
    };
    let peep = |k: usize, state: &Tensor| hadamard(&masked(&layer.w_c[k], &m.w_c[k]), state).unwrap();
    let i = pointwise(Activation::Sigmoid, &add(&pre(0), &peep(0, c)));
    let f = pointwise(Activation::Sigmoid, &add(&pre(1), &peep(1, c)));
    let g = pointwise(Activation::Tanh, &pre(2));
    let c_new = add(&hadamard(&f, c).unwrap(), &hadamard(&i, &g).unwrap());
    let o_state = if o_uses_new_c { &c_new } else { c };
    let o = pointwise(Activation::Sigmoid, &add(&pre(3), &peep(2, o_state)));
    let h_new = hadamard(&o, &pointwise(Activation::Tanh, &c_new)).unwrap();
    (h_new, c_new)
}

fn random_conv_layer(
    seed: u64,
    c_in: usize,
    p: usize,
    k: usize,
    in_dims: (usize, usize),
    stride: usize,
) -> ConvLstmLayer {
    let mut r = rng(seed);
    let od = (in_dims.0.div_ceil(stride), in_dims.1.div_ceil(stride));
    let mut l = ConvLstmLayer::zeros(c_in, p, k, od, stride, true);
    for t in l.w_x.iter_mut().chain(&mut l.w_h).chain(&mut l.w_c).chain(&mut l.b) {
        *t = random_tensor(t.shape(), &mut r, 0.6);
    }
    l
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn zero_layer_step_is_half_open_gates() {
    let l = ConvLstmLayer::zeros(1, 2, 3, (4, 4), 1, true);
    let x = random_tensor(&[4, 4, 1], &mut rng(1), 1.0);
    let z = Tensor::zeros(&[4, 4, 2]);
    let (h, c) = convlstm_step(&l, &x, &z, &z, None).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
    assert!(c.data().iter().all(|&v| v == 0.0));
}

#[test]
fn saturated_gates_match_scalar_hand_computation() {
    let mut l = ConvLstmLayer::zeros(1, 1, 1, (3, 3), 1, true);
    l.b[0] = Tensor::filled(&[1], 20.0);
    l.b[3] = Tensor::filled(&[1], 20.0);
    l.w_x[2] = Tensor::ones(&[1, 1, 1, 1]);
    let x = random_tensor(&[3, 3, 1], &mut rng(2), 2.0);
    let z = Tensor::zeros(&[3, 3, 1]);
    let (h, c) = convlstm_step(&l, &x, &z, &z, None).unwrap();
    let s = sigmoid(20.0);
    for ((&xv, &cv), &hv) in x.data().iter().zip(c.data()).zip(h.data()) {
        let c_expect = s * xv.tanh();
        assert!((cv - c_expect).abs() < 1e-15);
        assert!((hv - s * c_expect.tanh()).abs() < 1e-15);
        // Within 1e-8 of the saturated limit tanh(tanh(x)).
        assert!((hv - xv.tanh().tanh()).abs() < 1e-8);
    }
}

#[test]
fn step_matches_transcription_oracle() {
    for (seed, stride) in [(3, 1), (4, 2)] {
        let l = random_conv_layer(seed, 2, 2, 3, (4, 4), stride);
        let mut r = rng(seed + 10);
        let x = random_tensor(&[4, 4, 2], &mut r, 1.0);
        let (q, rr) = l.out_dims();
        let h = random_tensor(&[q, rr, 2], &mut r, 0.8);
        let c = random_tensor(&[q, rr, 2], &mut r, 0.8);
        let (h1, c1) = convlstm_step(&l, &x, &h, &c, None).unwrap();
        let (h2, c2) = oracle_step(&l, &x, &h, &c, None, true);
        assert!(max_diff(&h1, &h2) < 1e-13);
        assert!(max_diff(&c1, &c2) < 1e-13);

        // With masks on every group.
        let mut masks = LayerMasks::default();
        for (slot, w) in masks.w_x.iter_mut().zip(&l.w_x).chain(masks.w_h.iter_mut().zip(&l.w_h)) {
            *slot = Some(Tensor::from_fn(w.shape(), |i| ((i * 7 + 3) % 5 != 0) as u8 as f64));
        }
        for (slot, w) in masks.w_c.iter_mut().zip(&l.w_c) {
            *slot = Some(Tensor::from_fn(w.shape(), |i| (i % 3 != 1) as u8 as f64));
        }
        let (h1, c1) = convlstm_step(&l, &x, &h, &c, Some(&masks)).unwrap();
        let (h2, c2) = oracle_step(&l, &x, &h, &c, Some(&masks), true);
        assert!(max_diff(&h1, &h2) < 1e-13);
        assert!(max_diff(&c1, &c2) < 1e-13);
    }
}

#[test]
fn output_gate_peeks_at_new_cell_state() {
    let l = random_conv_layer(5, 1, 2, 3, (4, 4), 1);
    let mut r = rng(6);
    let x = random_tensor(&[4, 4, 1], &mut r, 1.0);
    let h = random_tensor(&[4, 4, 2], &mut r, 0.8);
    let c = random_tensor(&[4, 4, 2], &mut r, 0.8);
    let (h1, _) = convlstm_step(&l, &x, &h, &c, None).unwrap();
    let (wrong, _) = oracle_step(&l, &x, &h, &c, None, false);
    assert!(max_diff(&h1, &wrong) > 1e-6);
}

#[test]
fn sequence_replays_steps_with_constant_masks() {
    let l = random_conv_layer(7, 1, 2, 3, (5, 5), 2);
    let mut r = rng(8);
    let xs: Vec<Tensor> = (0..6).map(|_| random_tensor(&[5, 5, 1], &mut r, 1.0)).collect();
    let mut masks = LayerMasks::default();
    masks.w_h[1] = Some(Tensor::from_fn(l.w_h[1].shape(), |i| (i % 4 != 0) as u8 as f64));
    masks.w_c[2] = Some(Tensor::from_fn(l.w_c[2].shape(), |i| (i % 2) as f64));
    let seq = convlstm_sequence(&l, &xs, Some(&masks)).unwrap();
    let (q, rr) = l.out_dims();
    let mut h = Tensor::zeros(&[q, rr, 2]);
    let mut c = h.clone();
    for (t, x) in xs.iter().enumerate() {
        let (h2, c2) = oracle_step(&l, x, &h, &c, Some(&masks), true);
        assert!(max_diff(&seq[t], &h2) < 1e-13, "step {t}");
        h = h2;
        c = c2;
    }

    let mut last_only = l.clone();
    last_only.return_sequences = false;
    let fin = convlstm_sequence(&last_only, &xs, Some(&masks)).unwrap();
    assert_eq!(fin.len(), 1);
    assert_eq!(fin[0], seq[5]);

    let z = Tensor::zeros(&[q, rr, 2]);
    let one = convlstm_sequence(&l, &xs[..1], None).unwrap();
    assert_eq!(one[0], convlstm_step(&l, &xs[0], &z, &z, None).unwrap().0);
    assert!(convlstm_sequence(&l, &[], None).is_err());
}

#[test]
fn constant_input_sequence_settles() {
    let mut l = random_conv_layer(17, 1, 2, 3, (4, 4), 1);
    for t in l.w_h.iter_mut().chain(&mut l.w_c) {
        *t = t.scale(0.2);
    }
    let x = random_tensor(&[4, 4, 1], &mut rng(18), 1.0);
    let xs = vec![x; 60];
    let seq = convlstm_sequence(&l, &xs, None).unwrap();
    assert!(max_diff(&seq[58], &seq[59]) < max_diff(&seq[0], &seq[1]) * 1e-3);
}

#[test]
fn zero_weights_give_zero_sequence() {
    let l = ConvLstmLayer::zeros(1, 3, 3, (4, 4), 1, true);
    let xs: Vec<Tensor> = (0..4).map(|i| random_tensor(&[4, 4, 1], &mut rng(i), 1.0)).collect();
    for h in convlstm_sequence(&l, &xs, None).unwrap() {
        assert!(h.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn shape_errors() {
    let l = ConvLstmLayer::zeros(1, 2, 3, (4, 4), 1, true);
    let z = Tensor::zeros(&[4, 4, 2]);
    assert!(convlstm_step(&l, &Tensor::zeros(&[4, 4, 2]), &z, &z, None).is_err());
    assert!(convlstm_step(&l, &Tensor::zeros(&[5, 4, 1]), &z, &z, None).is_err());
    assert!(convlstm_step(&l, &Tensor::zeros(&[4, 4, 1]), &Tensor::zeros(&[4, 4, 1]), &z, None).is_err());
}

fn random_lstm(seed: u64, input: usize, units: usize) -> LstmLayer {
    let mut r = rng(seed);
    let mut l = LstmLayer::zeros(input, units);
    for t in l.w_x.iter_mut().chain(&mut l.w_h).chain(&mut l.w_c).chain(&mut l.b) {
        *t = random_tensor(t.shape(), &mut r, 0.7);
    }
    l
}

#[test]
fn lstm_zero_weights() {
    let l = LstmLayer::zeros(4, 3);
    let x = Tensor::vector(&[0.3, -1.0, 2.0, 0.5]);
    let z = Tensor::zeros(&[3]);
    let (h, _) = lstm_step(&l, &x, &z, &z, None).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_degenerates_from_convlstm() {
    let (input, units) = (5, 3);
    let v = random_lstm(9, input, units);
    let mut c = ConvLstmLayer::zeros(input, units, 1, (1, 1), 1, true);
    for g in 0..4 {
        c.w_x[g] = Tensor::from_fn(&[1, 1, input, units], |i| {
            let (ci, f) = (i / units, i % units);
            v.w_x[g].data()[f * input + ci]
        });
        c.w_h[g] = Tensor::from_fn(&[1, 1, units, units], |i| {
            let (ci, f) = (i / units, i % units);
            v.w_h[g].data()[f * units + ci]
        });
        c.b[g] = v.b[g].clone();
    }
    for k in 0..3 {
        c.w_c[k] = v.w_c[k].clone().reshape(&[1, 1, units]).unwrap();
    }
    let mut r = rng(10);
    let x = random_tensor(&[input], &mut r, 1.0);
    let h = random_tensor(&[units], &mut r, 0.5);
    let s = random_tensor(&[units], &mut r, 0.5);
    let (h1, c1) = lstm_step(&v, &x, &h, &s, None).unwrap();
    let as3 = |t: &Tensor, n: usize| t.clone().reshape(&[1, 1, n]).unwrap();
    let (h2, c2) = convlstm_step(&c, &as3(&x, input), &as3(&h, units), &as3(&s, units), None).unwrap();
    assert!(max_diff(&h1, &h2.reshape(&[units]).unwrap()) < 1e-14);
    assert!(max_diff(&c1, &c2.reshape(&[units]).unwrap()) < 1e-14);
}

#[test]
fn lstm_matches_transcription_oracle() {
    let l = random_lstm(11, 4, 3);
    let mut r = rng(12);
    let x = random_tensor(&[4], &mut r, 1.0);
    let h = random_tensor(&[3], &mut r, 0.5);
    let c = random_tensor(&[3], &mut r, 0.5);
    let pre = |g: usize| {
        add(
            &dense(&l.w_x[g], &l.b[g], &x).unwrap(),
            &dense(&l.w_h[g], &Tensor::zeros(&[3]), &h).unwrap(),
        )
    };
    let i = pointwise(Activation::Sigmoid, &add(&pre(0), &hadamard(&l.w_c[0], &c).unwrap()));
    let f = pointwise(Activation::Sigmoid, &add(&pre(1), &hadamard(&l.w_c[1], &c).unwrap()));
    let g = pointwise(Activation::Tanh, &pre(2));
    let c_new = add(&hadamard(&f, &c).unwrap(), &hadamard(&i, &g).unwrap());
    let o = pointwise(
        Activation::Sigmoid,
        &add(&pre(3), &hadamard(&l.w_c[2], &c_new).unwrap()),
    );
    let h_new = hadamard(&o, &pointwise(Activation::Tanh, &c_new)).unwrap();
    let (h1, c1) = lstm_step(&l, &x, &h, &c, None).unwrap();
    assert!(max_diff(&h1, &h_new) < 1e-14);
    assert!(max_diff(&c1, &c_new) < 1e-14);
    assert!(lstm_step(&l, &Tensor::zeros(&[5]), &h, &c, None).is_err());
}

#[test]
fn zero_network_is_uniform() {
    let cfg = NetworkConfig {
        image_rows: 8,
        image_cols: 8,
        ..NetworkConfig::default()
    };
    let p = NetworkParams::zeros(&cfg).unwrap();
    let s = random_sample(&cfg, Label::Collision, &mut rng(1));
    assert_eq!(dpm_forward(&p, &cfg, &s, None).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn forward_is_deterministic_and_normalized() {
    let cfg = tiny_config(InputMode::ImagesStateAction);
    let mut p = NetworkParams::init(&cfg, 3).unwrap();
    randomize(&mut p, 4, 1.0);
    let mut r = rng(5);
    for _ in 0..10 {
        let s = random_sample(&cfg, Label::NoCollision, &mut r);
        let a = dpm_forward(&p, &cfg, &s, None).unwrap();
        let b = dpm_forward(&p, &cfg, &s, None).unwrap();
        assert_eq!(a, b);
        assert!((a.data()[0] + a.data()[1] - 1.0).abs() < 1e-12);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn branch_permutation_symmetry() {
    let cfg = NetworkConfig {
        input_mode: InputMode::ImagesState,
        cameras: vec![Camera::LeftMirror, Camera::RightMirror],
        ..tiny_config(InputMode::ImagesState)
    };
    let mut p = NetworkParams::init(&cfg, 8).unwrap();
    randomize(&mut p, 9, 0.8);
    let swapped_cfg = NetworkConfig {
        cameras: vec![Camera::RightMirror, Camera::LeftMirror],
        ..cfg.clone()
    };
    let mut q = p.clone();
    q.branches.swap(0, 1);
    let feat = cfg.branch_feature_len();
    let cols = cfg.concat_len();
    let w = p.head.merge_w.clone();
    for row in 0..cfg.merge_width {
        for j in 0..feat {
            let d = q.head.merge_w.data_mut();
            d[row * cols + j] = w.data()[row * cols + feat + j];
            d[row * cols + feat + j] = w.data()[row * cols + j];
        }
    }
    let s = random_sample(&cfg, Label::Collision, &mut rng(10));
    let a = dpm_forward(&p, &cfg, &s, None).unwrap();
    let b = dpm_forward(&q, &swapped_cfg, &s, None).unwrap();
    assert!(max_diff(&a, &b) < 1e-15);
}

#[test]
fn missing_modality_is_an_error() {
    let cfg = NetworkConfig {
        cameras: vec![Camera::LeftMirror],
        ..tiny_config(InputMode::ImagesOnly)
    };
    let p = NetworkParams::init(&cfg, 1).unwrap();
    let other = NetworkConfig {
        cameras: vec![Camera::Dashcam],
        ..cfg.clone()
    };
    let s = random_sample(&other, Label::Collision, &mut rng(2));
    assert!(matches!(
        dpm_forward(&p, &cfg, &s, None),
        Err(dpm_core::Error::MissingModality(_))
    ));
}

#[test]
fn cross_entropy_examples() {
    let ln2 = std::f64::consts::LN_2;
    assert!(cross_entropy_loss(&Tensor::vector(&[1.0, 0.0]), Label::Collision).abs() < 1e-15);
    assert!((cross_entropy_loss(&Tensor::vector(&[0.5, 0.5]), Label::NoCollision) - ln2).abs() < 1e-15);
    assert!((cross_entropy_loss(&Tensor::vector(&[0.9, 0.1]), Label::NoCollision) - std::f64::consts::LN_10).abs() < 1e-12);
    let clamped = cross_entropy_loss(&Tensor::vector(&[1.0, 0.0]), Label::NoCollision);
    assert!((clamped - (-PROB_FLOOR.ln())).abs() < 1e-9);
}

/// Central-difference check over every parameter element; returns the
/// worst |analytic − numeric| / (|analytic| + 1e-8).
fn gradient_check(cfg: &NetworkConfig, seed: u64, masks: &[Option<dpm_core::dropout::MaskSet>]) -> f64 {
    let mut p = NetworkParams::init(cfg, seed).unwrap();
    randomize(&mut p, seed + 100, 0.5);
    let mut r = rng(seed + 200);
    let batch = [
        random_sample(cfg, Label::Collision, &mut r),
        random_sample(cfg, Label::NoCollision, &mut r),
    ];
    let refs: Vec<_> = batch.iter().collect();
    let (_, grads) = dpm_gradients_masked(&p, cfg, &refs, masks).unwrap();
    let loss = |q: &NetworkParams| dpm_gradients_masked(q, cfg, &refs, masks).unwrap().0;
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].len();
        for k in 0..len {
            let mut q = p.clone();
            q.tensors_mut()[ti].data_mut()[k] += eps;
            let up = loss(&q);
            q.tensors_mut()[ti].data_mut()[k] -= 2.0 * eps;
            let down = loss(&q);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[k];
            worst = worst.max((analytic - numeric).abs() / (analytic.abs() + 1e-8));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for mode in InputMode::ALL {
        let worst = gradient_check(&tiny_config(mode), 21, &[]);
        assert!(worst <= 1e-4, "{mode}: worst relative error {worst}");
    }
}

#[test]
fn masked_gradients_match_finite_differences() {
    let cfg = tiny_config(InputMode::ImagesStateAction);
    let p = NetworkParams::init(&cfg, 21).unwrap();
    let spec = DropoutSpec::new(0.3, DropoutTargets::ALL).unwrap();
    let masks = vec![Some(sample_masks(&spec, &p, 1)), Some(sample_masks(&spec, &p, 2))];
    let worst = gradient_check(&cfg, 21, &masks);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn images_only_has_no_state_gradients() {
    let cfg = tiny_config(InputMode::ImagesOnly);
    let p = NetworkParams::init(&cfg, 1).unwrap();
    let s = random_sample(&cfg, Label::Collision, &mut rng(1));
    let (_, g) = dpm_gradients(&p, &cfg, &[&s]).unwrap();
    assert!(g.state.is_none());
    assert!(p.state.is_none());
}

#[test]
fn saturated_correct_prediction_is_stationary() {
    let cfg = tiny_config(InputMode::ImagesState);
    let mut p = NetworkParams::init(&cfg, 2).unwrap();
    p.head.out_b = Tensor::vector(&[40.0, -40.0]);
    let s = random_sample(&cfg, Label::Collision, &mut rng(3));
    let (loss, g) = dpm_gradients(&p, &cfg, &[&s, &s]).unwrap();
    assert!(loss < 1e-30);
    assert!(g.norm_sq().sqrt() < 1e-30);
}
