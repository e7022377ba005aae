//! The multi-branch predictive network: ConvLSTM image branches, a vector
//! LSTM for proprioceptive state and actions, and a dense softmax head.

pub(crate) mod cell;
mod config;
mod model;
mod params;
mod recurrent;

pub use config::{
    format_cameras, format_conv_layers, parse_cameras, parse_conv_layers, ConvLayerSpec, InputMode, NetworkConfig,
};
pub use model::{
    batch_loss, cross_entropy_loss, dpm_forward, dpm_forward_traced, dpm_gradients, dpm_gradients_masked, PROB_FLOOR,
};
pub use params::{ConvLstmLayer, DenseHead, LstmLayer, NetworkParams, GATE_NAMES, PEEP_NAMES};
pub use recurrent::{LayerSite, StepTrace, TraceFn};

use crate::dropout::LayerMasks;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_conv_io(layer: &ConvLstmLayer, x: &Tensor) -> Result<(usize, usize)> {
    layer.validate()?;
    match x.shape() {
        [q, r, c] if *c == layer.in_channels() => {
            let (oq, or) = (q.div_ceil(layer.stride), r.div_ceil(layer.stride));
            if (oq, or) != layer.out_dims() {
                return Err(Error::shape(
                    "convlstm",
                    format!(
                        "input {q}×{r} with stride {} gives {oq}×{or}, peepholes are {:?}",
                        layer.stride,
                        layer.out_dims()
                    ),
                ));
            }
            Ok((*q, *r))
        }
        s => Err(Error::shape(
            "convlstm",
            format!("input {s:?} does not match {} input channels", layer.in_channels()),
        )),
    }
}

fn state_shape(layer: &ConvLstmLayer) -> [usize; 3] {
    let (q, r) = layer.out_dims();
    [q, r, layer.filters()]
}

/// One ConvLSTM step from `(H_prev, C_prev)`; returns `(H_t, C_t)`.
pub fn convlstm_step(
    layer: &ConvLstmLayer,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    masks: Option<&LayerMasks>,
) -> Result<(Tensor, Tensor)> {
    let in_dims = check_conv_io(layer, x)?;
    let ss = state_shape(layer);
    if h_prev.shape() != ss || c_prev.shape() != ss {
        return Err(Error::shape(
            "convlstm_step",
            format!("state must be {ss:?}, got {:?} / {:?}", h_prev.shape(), c_prev.shape()),
        ));
    }
    let (hs, cache) = recurrent::conv_forward(
        layer,
        &[x.data().to_vec()],
        in_dims,
        Some((h_prev.data(), c_prev.data())),
        masks,
        LayerSite::Image { branch: 0, layer: 0 },
        None,
    );
    let c = cache.last_cell_state().to_vec();
    Ok((
        Tensor::new(ss.to_vec(), hs.into_iter().next().expect("one step"))?,
        Tensor::new(ss.to_vec(), c)?,
    ))
}

/// Runs the layer over `xs` from zero state. Returns every `H_t` when the
/// layer returns sequences, otherwise only `H_L`.
pub fn convlstm_sequence(layer: &ConvLstmLayer, xs: &[Tensor], masks: Option<&LayerMasks>) -> Result<Vec<Tensor>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty input sequence".into()))?;
    let in_dims = check_conv_io(layer, first)?;
    if xs.iter().any(|x| x.shape() != first.shape()) {
        return Err(Error::shape("convlstm_sequence", "frames differ in shape"));
    }
    let flat: Vec<Vec<f64>> = xs.iter().map(|x| x.data().to_vec()).collect();
    let (hs, _) = recurrent::conv_forward(
        layer,
        &flat,
        in_dims,
        None,
        masks,
        LayerSite::Image { branch: 0, layer: 0 },
        None,
    );
    let ss = state_shape(layer);
    let hs: Vec<Tensor> = hs
        .into_iter()
        .map(|h| Tensor::new(ss.to_vec(), h))
        .collect::<Result<_>>()?;
    Ok(if layer.return_sequences {
        hs
    } else {
        hs.into_iter().last().into_iter().collect()
    })
}

/// One vector-LSTM step; returns `(h_t, c_t)`.
pub fn lstm_step(
    layer: &LstmLayer,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    masks: Option<&LayerMasks>,
) -> Result<(Tensor, Tensor)> {
    layer.validate()?;
    let u = layer.units();
    if x.len() != layer.input_len() || h_prev.len() != u || c_prev.len() != u {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "expected input {} and state {u}, got {} / {} / {}",
                layer.input_len(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            ),
        ));
    }
    let (hs, cache) = recurrent::lstm_forward(
        layer,
        &[x.data().to_vec()],
        Some((h_prev.data(), c_prev.data())),
        masks,
        None,
    );
    let c = cache.last_cell_state().to_vec();
    Ok((
        Tensor::vector(&hs.into_iter().next().expect("one step")),
        Tensor::vector(&c),
    ))
}
