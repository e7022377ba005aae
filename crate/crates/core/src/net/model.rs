//! Full multi-branch forward pass and its gradients.

use rayon::prelude::*;

use super::config::{InputMode, NetworkConfig};
use super::params::NetworkParams;
use super::recurrent::{self, ConvSeqCache, LayerSite, LstmSeqCache, TraceFn};
use crate::dataset::{Label, SequenceSample, STATE_LEN, STATE_SCALE};
use crate::dropout::MaskSet;
use crate::error::{Error, Result};
use crate::tensor::{matvec_acc, matvec_backward, softmax_slice, Tensor};

/// Probabilities below this are clamped inside the log-loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Network-ready view of one sample: per branch, per step, a flat image.
pub(crate) struct Prepared {
    images: Vec<Vec<Vec<f64>>>,
    state: Option<Vec<Vec<f64>>>,
    label: Label,
}

pub(crate) fn prepare(config: &NetworkConfig, sample: &SequenceSample) -> Result<Prepared> {
    if sample.frames.len() != config.seq_len {
        return Err(Error::shape(
            "dpm_forward",
            format!(
                "sample has {} frames, network expects {}",
                sample.frames.len(),
                config.seq_len
            ),
        ));
    }
    let px = config.image_rows * config.image_cols * config.channels;
    let mut images = Vec::with_capacity(config.cameras.len());
    for &cam in &config.cameras {
        let mut seq = Vec::with_capacity(config.seq_len);
        for frame in &sample.frames {
            let img = frame
                .image(cam)
                .ok_or_else(|| Error::MissingModality(format!("no {cam} image in sample")))?;
            let v = img.to_f64();
            if v.len() != px {
                return Err(Error::shape(
                    "dpm_forward",
                    format!("{cam} image has {} pixels, expected {px}", v.len()),
                ));
            }
            seq.push(v);
        }
        images.push(seq);
    }
    let state = match config.input_mode {
        InputMode::ImagesOnly => None,
        mode => Some(
            sample
                .frames
                .iter()
                .map(|f| {
                    let mut v: Vec<f64> = f.state.iter().zip(STATE_SCALE).map(|(&s, k)| s as f64 / k).collect();
                    if mode == InputMode::ImagesStateAction {
                        v.push(f.action as f64);
                    }
                    debug_assert!(v.len() == STATE_LEN || v.len() == STATE_LEN + 1);
                    v
                })
                .collect(),
        ),
    };
    Ok(Prepared {
        images,
        state,
        label: sample.label,
    })
}

struct ForwardCache {
    /// Per branch, per layer: the layer's input sequence and its cache.
    branches: Vec<Vec<(Vec<Vec<f64>>, ConvSeqCache)>>,
    state: Option<(Vec<Vec<f64>>, LstmSeqCache)>,
    concat: Vec<f64>,
    merge_pre: Vec<f64>,
    merge_act: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_cached(
    params: &NetworkParams,
    config: &NetworkConfig,
    input: &Prepared,
    masks: Option<&MaskSet>,
    mut trace: Option<TraceFn<'_>>,
) -> Result<ForwardCache> {
    if params.branches.len() != config.cameras.len() {
        return Err(Error::shape("dpm_forward", "branch count differs from camera count"));
    }
    let mut concat = Vec::with_capacity(config.concat_len());
    let mut branch_caches = Vec::with_capacity(params.branches.len());
    for (b, (branch, seq)) in params.branches.iter().zip(&input.images).enumerate() {
        let mut xs = seq.clone();
        let mut in_dims = (config.image_rows, config.image_cols);
        let mut caches = Vec::with_capacity(branch.len());
        for (l, layer) in branch.iter().enumerate() {
            let lm = masks.and_then(|m| m.branches.get(b)).and_then(|ms| ms.get(l));
            let (hs, cache) = recurrent::conv_forward(
                layer,
                &xs,
                in_dims,
                None,
                lm,
                LayerSite::Image { branch: b, layer: l },
                trace.as_mut().map(|t| &mut **t as TraceFn<'_>),
            );
            in_dims = layer.out_dims();
            let next = if layer.return_sequences {
                hs
            } else {
                vec![hs.into_iter().last().expect("non-empty sequence")]
            };
            caches.push((std::mem::replace(&mut xs, next), cache));
        }
        concat.extend_from_slice(xs.last().expect("non-empty sequence"));
        branch_caches.push(caches);
    }
    let state = match (&params.state, &input.state) {
        (Some(lstm), Some(xs)) => {
            let lm = masks.and_then(|m| m.state.as_ref());
            let (hs, cache) =
                recurrent::lstm_forward(lstm, xs, None, lm, trace.as_mut().map(|t| &mut **t as TraceFn<'_>));
            concat.extend_from_slice(hs.last().expect("non-empty sequence"));
            Some((xs.clone(), cache))
        }
        (None, None) => None,
        (Some(_), None) => return Err(Error::MissingModality("state sequence required by config".into())),
        (None, Some(_)) => return Err(Error::shape("dpm_forward", "state input given but no state branch")),
    };
    let head = &params.head;
    let width = head.merge_b.len();
    if head.merge_w.shape() != [width, concat.len()] {
        return Err(Error::shape(
            "dpm_forward",
            format!(
                "merge weights {:?} do not fit {} concatenated features",
                head.merge_w.shape(),
                concat.len()
            ),
        ));
    }
    let mut merge_pre = head.merge_b.data().to_vec();
    matvec_acc(head.merge_w.data(), width, concat.len(), &concat, &mut merge_pre);
    let merge_act: Vec<f64> = merge_pre.iter().map(|v| v.max(0.0)).collect();
    let mut logits = head.out_b.data().to_vec();
    matvec_acc(head.out_w.data(), 2, width, &merge_act, &mut logits);
    let probs = softmax_slice(&logits);
    Ok(ForwardCache {
        branches: branch_caches,
        state,
        concat,
        merge_pre,
        merge_act,
        probs,
    })
}

/// Deterministic (or mask-conditioned) forward pass. Returns `[P(collision),
/// P(no collision)]`.
pub fn dpm_forward(
    params: &NetworkParams,
    config: &NetworkConfig,
    sample: &SequenceSample,
    masks: Option<&MaskSet>,
) -> Result<Tensor> {
    let input = prepare(config, sample)?;
    let cache = forward_cached(params, config, &input, masks, None)?;
    Ok(Tensor::vector(&cache.probs))
}

/// [`dpm_forward`] with a callback invoked once per recurrent step.
pub fn dpm_forward_traced(
    params: &NetworkParams,
    config: &NetworkConfig,
    sample: &SequenceSample,
    masks: Option<&MaskSet>,
    trace: TraceFn<'_>,
) -> Result<Tensor> {
    let input = prepare(config, sample)?;
    let cache = forward_cached(params, config, &input, masks, Some(trace))?;
    Ok(Tensor::vector(&cache.probs))
}

/// `-ln p[label]` with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy_loss(probs: &Tensor, label: Label) -> f64 {
    -probs.data()[label.class_index()].max(PROB_FLOOR).ln()
}

/// Loss and gradients of one sample, gradients scaled by `weight`.
fn sample_gradients(
    params: &NetworkParams,
    config: &NetworkConfig,
    sample: &SequenceSample,
    masks: Option<&MaskSet>,
    weight: f64,
) -> Result<(f64, NetworkParams)> {
    let input = prepare(config, sample)?;
    let cache = forward_cached(params, config, &input, masks, None)?;
    let y = input.label.class_index();
    let p_y = cache.probs[y];
    let loss = -p_y.max(PROB_FLOOR).ln();
    let mut grads = params.zeros_like();
    if p_y < PROB_FLOOR {
        // Clamped region: the loss is locally constant.
        return Ok((loss, grads));
    }

    let head = &params.head;
    let width = head.merge_b.len();
    let mut dlogits = cache.probs.clone();
    dlogits[y] -= 1.0;
    dlogits.iter_mut().for_each(|v| *v *= weight);

    grads.head.out_b.data_mut().copy_from_slice(&dlogits);
    let mut dact = vec![0.0; width];
    matvec_backward(
        head.out_w.data(),
        2,
        width,
        &cache.merge_act,
        &dlogits,
        Some(&mut dact),
        grads.head.out_w.data_mut(),
    );
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&cache.merge_pre)
        .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
        .collect();
    grads.head.merge_b.data_mut().copy_from_slice(&dpre);
    let mut dconcat = vec![0.0; cache.concat.len()];
    matvec_backward(
        head.merge_w.data(),
        width,
        cache.concat.len(),
        &cache.concat,
        &dpre,
        Some(&mut dconcat),
        grads.head.merge_w.data_mut(),
    );

    let mut offset = 0;
    for (b, branch) in params.branches.iter().enumerate() {
        let caches = &cache.branches[b];
        let top = branch.last().expect("non-empty branch");
        let (q, r) = top.out_dims();
        let feat_len = q * r * top.filters();
        let top_steps = if top.return_sequences {
            caches.last().expect("non-empty branch").0.len()
        } else {
            1
        };
        let mut d_out: Vec<Vec<f64>> = vec![Vec::new(); top_steps];
        *d_out.last_mut().expect("non-empty") = dconcat[offset..offset + feat_len].to_vec();
        offset += feat_len;
        for l in (0..branch.len()).rev() {
            let layer = &branch[l];
            let (xs, lc) = &caches[l];
            let lm = masks.and_then(|m| m.branches.get(b)).and_then(|ms| ms.get(l));
            // `d_out` is indexed by this layer's output steps; a layer that only
            // returns its final state receives the gradient on that step.
            let steps = xs.len();
            let dhs: Vec<Vec<f64>> = if layer.return_sequences {
                d_out
            } else {
                let mut v = vec![Vec::new(); steps];
                v[steps - 1] = d_out.pop().unwrap_or_default();
                v
            };
            let dxs = recurrent::conv_backward(layer, xs, lc, lm, &dhs, l > 0, &mut grads.branches[b][l]);
            d_out = dxs.unwrap_or_default();
        }
    }
    if let (Some(lstm), Some((xs, lc))) = (&params.state, &cache.state) {
        let u = lstm.units();
        let mut dhs = vec![Vec::new(); xs.len()];
        dhs[xs.len() - 1] = dconcat[offset..offset + u].to_vec();
        let lm = masks.and_then(|m| m.state.as_ref());
        recurrent::lstm_backward(lstm, xs, lc, lm, &dhs, grads.state.as_mut().expect("same structure"));
    }
    Ok((loss, grads))
}

/// Mean cross-entropy over `batch` and its exact gradient w.r.t. every
/// parameter tensor. `masks[i]`, when given, is applied to sample `i`.
///
/// Per-sample work may run in parallel; the reduction is always in batch
/// order so results do not depend on the thread count.
pub fn dpm_gradients_masked(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &[&SequenceSample],
    masks: &[Option<MaskSet>],
) -> Result<(f64, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient batch is empty".into()));
    }
    if !masks.is_empty() && masks.len() != batch.len() {
        return Err(Error::InvalidArgument("one mask set per sample required".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(f64, NetworkParams)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let m = masks.get(i).and_then(|m| m.as_ref());
            sample_gradients(params, config, s, m, weight)
        })
        .collect();
    let mut loss = 0.0;
    let mut total = params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        loss += l * weight;
        total.add_scaled(1.0, &g)?;
    }
    Ok((loss, total))
}

pub fn dpm_gradients(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &[&SequenceSample],
) -> Result<(f64, NetworkParams)> {
    dpm_gradients_masked(params, config, batch, &[])
}

/// Mean loss of `batch` without gradients.
pub fn batch_loss(params: &NetworkParams, config: &NetworkConfig, batch: &[&SequenceSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss batch is empty".into()));
    }
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|s| dpm_forward(params, config, s, None).map(|p| cross_entropy_loss(&p, s.label)))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}
