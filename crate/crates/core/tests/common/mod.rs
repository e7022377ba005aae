#![allow(dead_code)]

use std::sync::Arc;

use dpm_core::dataset::{Frame, GrayImage, Label, SequenceSample, STATE_LEN};
use dpm_core::net::{ConvLayerSpec, InputMode, NetworkConfig, NetworkParams};
use dpm_core::sim::{Camera, Scenario};
use dpm_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..=scale))
}

/// Overwrites every parameter with U(−scale, scale), biases included.
pub fn randomize(params: &mut NetworkParams, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-scale..=scale);
        }
    }
}

/// One camera, 6×6 images, two filters per layer, three steps.
pub fn tiny_config(mode: InputMode) -> NetworkConfig {
    NetworkConfig {
        input_mode: mode,
        cameras: vec![Camera::Dashcam],
        image_rows: 6,
        image_cols: 6,
        channels: 1,
        seq_len: 3,
        conv_layers: vec![
            ConvLayerSpec {
                filters: 2,
                kernel: 3,
                stride: 1,
            },
            ConvLayerSpec {
                filters: 2,
                kernel: 3,
                stride: 2,
            },
        ],
        lstm_units: 3,
        merge_width: 4,
        batch_norm: false,
    }
}

pub fn random_frame(cameras: &[Camera], rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Frame {
    let images = cameras
        .iter()
        .map(|&c| {
            let data = (0..rows * cols).map(|_| r.gen::<u8>()).collect();
            (c, GrayImage::new(rows, cols, data).unwrap())
        })
        .collect();
    let mut state = [0f32; STATE_LEN];
    for v in &mut state {
        *v = r.gen_range(-1.0..1.0);
    }
    Frame {
        images,
        state,
        action: if r.gen::<bool>() { 1.0 } else { 0.0 },
    }
}

pub fn random_sample(config: &NetworkConfig, label: Label, r: &mut ChaCha8Rng) -> SequenceSample {
    SequenceSample {
        frames: (0..config.seq_len)
            .map(|_| Arc::new(random_frame(&config.cameras, config.image_rows, config.image_cols, r)))
            .collect(),
        label,
        episode_id: r.gen_range(0..1000),
        scenario: Scenario::FromRight,
        window_start: 0,
    }
}
