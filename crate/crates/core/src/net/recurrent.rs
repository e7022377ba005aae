//! Sequence forward/backward for the two recurrent layer kinds.
//!
//! The four gate weight tensors are fused along the output axis (after mask
//! application) so each step needs one convolution (or matrix product) for
//! the input and one for the recurrent state. The effective weights are
//! built once per sequence pass, which is what keeps a dropout mask constant
//! across time steps.

use super::cell::{self, CellCache};
use super::params::{ConvLstmLayer, LstmLayer};
use crate::dropout::LayerMasks;
use crate::tensor::{matvec_acc, matvec_backward, ConvGeometry, Tensor};

/// Identifies a recurrent layer inside the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSite {
    Image { branch: usize, layer: usize },
    State,
}

/// One record of an instrumented forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepTrace {
    pub site: LayerSite,
    pub step: usize,
    /// Fingerprint of the dropout masks applied at this step (0 when unmasked).
    pub mask_fingerprint: u64,
    /// Fingerprint of the masked weights actually used at this step.
    pub weight_fingerprint: u64,
}

pub type TraceFn<'a> = &'a mut dyn FnMut(StepTrace);

pub(crate) fn fingerprint<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    // FNV-1a over the IEEE bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn mask_fingerprint(masks: Option<&LayerMasks>) -> u64 {
    masks.map_or(0, |m| fingerprint(m.iter().flat_map(|t| t.data())))
}

fn masked(w: &Tensor, m: Option<&Tensor>) -> Vec<f64> {
    match m {
        Some(m) => w.data().iter().zip(m.data()).map(|(a, b)| a * b).collect(),
        None => w.data().to_vec(),
    }
}

/// Interleaves four `[rows × p]` blocks into one `[rows × 4p]` block.
fn fuse_columns(parts: [&[f64]; 4], rows: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * 4 * p];
    for row in 0..rows {
        for (g, part) in parts.iter().enumerate() {
            out[row * 4 * p + g * p..row * 4 * p + (g + 1) * p].copy_from_slice(&part[row * p..(row + 1) * p]);
        }
    }
    out
}

/// Adds the gate-`g` columns of a fused gradient into `dst`, masked.
fn unfuse_columns_acc(fused: &[f64], rows: usize, p: usize, g: usize, mask: Option<&Tensor>, dst: &mut Tensor) {
    let d = dst.data_mut();
    for row in 0..rows {
        let src = &fused[row * 4 * p + g * p..row * 4 * p + (g + 1) * p];
        for (f, &v) in src.iter().enumerate() {
            let k = row * p + f;
            d[k] += match mask {
                Some(m) => v * m.data()[k],
                None => v,
            };
        }
    }
}

struct StepState {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    cell: CellCache,
}

pub(crate) struct ConvEffective {
    wx: Vec<f64>,
    wh: Vec<f64>,
    peep: [Vec<f64>; 3],
    gx: ConvGeometry,
    gh: ConvGeometry,
}

impl ConvEffective {
    pub fn new(layer: &ConvLstmLayer, in_dims: (usize, usize), masks: Option<&LayerMasks>) -> Self {
        let (m, n) = layer.kernel_dims();
        let (c, p) = (layer.in_channels(), layer.filters());
        let (q, r) = layer.out_dims();
        let mx = |g: usize| masks.and_then(|k| k.w_x[g].as_ref());
        let mh = |g: usize| masks.and_then(|k| k.w_h[g].as_ref());
        let mc = |g: usize| masks.and_then(|k| k.w_c[g].as_ref());
        let wx: Vec<Vec<f64>> = (0..4).map(|g| masked(&layer.w_x[g], mx(g))).collect();
        let wh: Vec<Vec<f64>> = (0..4).map(|g| masked(&layer.w_h[g], mh(g))).collect();
        ConvEffective {
            wx: fuse_columns([&wx[0], &wx[1], &wx[2], &wx[3]], m * n * c, p),
            wh: fuse_columns([&wh[0], &wh[1], &wh[2], &wh[3]], m * n * p, p),
            peep: std::array::from_fn(|g| masked(&layer.w_c[g], mc(g))),
            gx: ConvGeometry {
                rows: in_dims.0,
                cols: in_dims.1,
                in_ch: c,
                k_rows: m,
                k_cols: n,
                filters: 4 * p,
                stride: layer.stride,
            },
            gh: ConvGeometry {
                rows: q,
                cols: r,
                in_ch: p,
                k_rows: m,
                k_cols: n,
                filters: 4 * p,
                stride: 1,
            },
        }
    }

    fn weight_fingerprint(&self) -> u64 {
        fingerprint(self.wx.iter().chain(&self.wh).chain(self.peep.iter().flatten()))
    }
}

pub(crate) struct ConvSeqCache {
    eff: ConvEffective,
    steps: Vec<StepState>,
}

impl ConvSeqCache {
    pub fn last_cell_state(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").cell.c
    }
}

/// Runs a ConvLSTM layer over `xs` (each `[q×r×c_in]` flattened) from zero
/// state. Returns every hidden state `H_1..H_L`.
pub(crate) fn conv_forward(
    layer: &ConvLstmLayer,
    xs: &[Vec<f64>],
    in_dims: (usize, usize),
    h0: Option<(&[f64], &[f64])>,
    masks: Option<&LayerMasks>,
    site: LayerSite,
    mut trace: Option<TraceFn<'_>>,
) -> (Vec<Vec<f64>>, ConvSeqCache) {
    let eff = ConvEffective::new(layer, in_dims, masks);
    let p = layer.filters();
    let (q, r) = layer.out_dims();
    let n = q * r * p;
    let (mut h, mut c) = match h0 {
        Some((h, c)) => (h.to_vec(), c.to_vec()),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let bias: [&[f64]; 4] = std::array::from_fn(|g| layer.b[g].data());
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        if let Some(tr) = trace.as_deref_mut() {
            tr(StepTrace {
                site,
                step: t,
                mask_fingerprint: mask_fingerprint(masks),
                weight_fingerprint: eff.weight_fingerprint(),
            });
        }
        let mut z = vec![0.0; 4 * n];
        eff.gx.forward_acc(x, &eff.wx, &mut z);
        eff.gh.forward_acc(&h, &eff.wh, &mut z);
        let peep = [&eff.peep[0][..], &eff.peep[1][..], &eff.peep[2][..]];
        let (h_new, cell) = cell::forward(&z, bias, peep, &c, p);
        let c_new = cell.c.clone();
        steps.push(StepState {
            h_prev: std::mem::replace(&mut h, h_new.clone()),
            c_prev: std::mem::replace(&mut c, c_new),
            cell,
        });
        hs.push(h_new);
    }
    (hs, ConvSeqCache { eff, steps })
}

/// Back-propagation through time for one ConvLSTM layer.
///
/// `dhs[t]` is the loss gradient w.r.t. `H_{t+1}` coming from above (an
/// empty vector means zero). Parameter gradients are accumulated into
/// `grads`; the gradient w.r.t. each input frame is returned when
/// `need_dx` is set.
pub(crate) fn conv_backward(
    layer: &ConvLstmLayer,
    xs: &[Vec<f64>],
    cache: &ConvSeqCache,
    masks: Option<&LayerMasks>,
    dhs: &[Vec<f64>],
    need_dx: bool,
    grads: &mut ConvLstmLayer,
) -> Option<Vec<Vec<f64>>> {
    let eff = &cache.eff;
    let p = layer.filters();
    let (m, n) = layer.kernel_dims();
    let c_in = layer.in_channels();
    let cells = cache.steps.first().map_or(0, |s| s.c_prev.len());
    let peep = [&eff.peep[0][..], &eff.peep[1][..], &eff.peep[2][..]];

    let mut dwx = vec![0.0; eff.wx.len()];
    let mut dwh = vec![0.0; eff.wh.len()];
    let mut dpeep: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; cells]);
    let mut dbias: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; p]);
    let mut dxs: Vec<Vec<f64>> = if need_dx {
        xs.iter().map(|x| vec![0.0; x.len()]).collect()
    } else {
        Vec::new()
    };

    let mut dh_carry = vec![0.0; cells];
    let mut dc_carry = vec![0.0; cells];
    for t in (0..cache.steps.len()).rev() {
        let st = &cache.steps[t];
        let mut dh = dh_carry;
        if let Some(d) = dhs.get(t).filter(|d| !d.is_empty()) {
            for (a, b) in dh.iter_mut().zip(d) {
                *a += b;
            }
        }
        let g = cell::backward(&st.cell, &st.c_prev, peep, &dh, &dc_carry, p, &mut dpeep, &mut dbias);
        eff.gx.backward_acc(
            &xs[t],
            &eff.wx,
            &g.dz,
            if need_dx { Some(&mut dxs[t]) } else { None },
            &mut dwx,
        );
        let mut dh_prev = vec![0.0; cells];
        eff.gh
            .backward_acc(&st.h_prev, &eff.wh, &g.dz, Some(&mut dh_prev), &mut dwh);
        dh_carry = dh_prev;
        dc_carry = g.dc_prev;
    }

    let mx = |g: usize| masks.and_then(|k| k.w_x[g].as_ref());
    let mh = |g: usize| masks.and_then(|k| k.w_h[g].as_ref());
    let mc = |g: usize| masks.and_then(|k| k.w_c[g].as_ref());
    for g in 0..4 {
        unfuse_columns_acc(&dwx, m * n * c_in, p, g, mx(g), &mut grads.w_x[g]);
        unfuse_columns_acc(&dwh, m * n * p, p, g, mh(g), &mut grads.w_h[g]);
        for (a, b) in grads.b[g].data_mut().iter_mut().zip(&dbias[g]) {
            *a += b;
        }
    }
    for k in 0..3 {
        let d = grads.w_c[k].data_mut();
        for (i, v) in dpeep[k].iter().enumerate() {
            d[i] += match mc(k) {
                Some(mask) => v * mask.data()[i],
                None => *v,
            };
        }
    }
    need_dx.then_some(dxs)
}

pub(crate) struct LstmEffective {
    wx: Vec<f64>,
    wh: Vec<f64>,
    peep: [Vec<f64>; 3],
}

impl LstmEffective {
    pub fn new(layer: &LstmLayer, masks: Option<&LayerMasks>) -> Self {
        let stack = |ts: &[Tensor; 4], ms: Option<&[Option<Tensor>; 4]>| {
            let mut out = Vec::with_capacity(4 * ts[0].len());
            for (g, t) in ts.iter().enumerate() {
                out.extend(masked(t, ms.and_then(|m| m[g].as_ref())));
            }
            out
        };
        LstmEffective {
            wx: stack(&layer.w_x, masks.map(|m| &m.w_x)),
            wh: stack(&layer.w_h, masks.map(|m| &m.w_h)),
            peep: std::array::from_fn(|g| masked(&layer.w_c[g], masks.and_then(|m| m.w_c[g].as_ref()))),
        }
    }

    fn weight_fingerprint(&self) -> u64 {
        fingerprint(self.wx.iter().chain(&self.wh).chain(self.peep.iter().flatten()))
    }
}

pub(crate) struct LstmSeqCache {
    eff: LstmEffective,
    steps: Vec<StepState>,
}

impl LstmSeqCache {
    pub fn last_cell_state(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").cell.c
    }
}

pub(crate) fn lstm_forward(
    layer: &LstmLayer,
    xs: &[Vec<f64>],
    h0: Option<(&[f64], &[f64])>,
    masks: Option<&LayerMasks>,
    mut trace: Option<TraceFn<'_>>,
) -> (Vec<Vec<f64>>, LstmSeqCache) {
    let eff = LstmEffective::new(layer, masks);
    let u = layer.units();
    let inp = layer.input_len();
    let (mut h, mut c) = match h0 {
        Some((h, c)) => (h.to_vec(), c.to_vec()),
        None => (vec![0.0; u], vec![0.0; u]),
    };
    let bias: [&[f64]; 4] = std::array::from_fn(|g| layer.b[g].data());
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        if let Some(tr) = trace.as_deref_mut() {
            tr(StepTrace {
                site: LayerSite::State,
                step: t,
                mask_fingerprint: mask_fingerprint(masks),
                weight_fingerprint: eff.weight_fingerprint(),
            });
        }
        let mut z = vec![0.0; 4 * u];
        matvec_acc(&eff.wx, 4 * u, inp, x, &mut z);
        matvec_acc(&eff.wh, 4 * u, u, &h, &mut z);
        let peep = [&eff.peep[0][..], &eff.peep[1][..], &eff.peep[2][..]];
        let (h_new, cell) = cell::forward(&z, bias, peep, &c, u);
        let c_new = cell.c.clone();
        steps.push(StepState {
            h_prev: std::mem::replace(&mut h, h_new.clone()),
            c_prev: std::mem::replace(&mut c, c_new),
            cell,
        });
        hs.push(h_new);
    }
    (hs, LstmSeqCache { eff, steps })
}

pub(crate) fn lstm_backward(
    layer: &LstmLayer,
    xs: &[Vec<f64>],
    cache: &LstmSeqCache,
    masks: Option<&LayerMasks>,
    dhs: &[Vec<f64>],
    grads: &mut LstmLayer,
) {
    let eff = &cache.eff;
    let u = layer.units();
    let inp = layer.input_len();
    let peep = [&eff.peep[0][..], &eff.peep[1][..], &eff.peep[2][..]];
    let mut dwx = vec![0.0; eff.wx.len()];
    let mut dwh = vec![0.0; eff.wh.len()];
    let mut dpeep: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; u]);
    let mut dbias: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; u]);
    let mut dh_carry = vec![0.0; u];
    let mut dc_carry = vec![0.0; u];
    for t in (0..cache.steps.len()).rev() {
        let st = &cache.steps[t];
        let mut dh = dh_carry;
        if let Some(d) = dhs.get(t).filter(|d| !d.is_empty()) {
            for (a, b) in dh.iter_mut().zip(d) {
                *a += b;
            }
        }
        let g = cell::backward(&st.cell, &st.c_prev, peep, &dh, &dc_carry, u, &mut dpeep, &mut dbias);
        matvec_backward(&eff.wx, 4 * u, inp, &xs[t], &g.dz, None, &mut dwx);
        let mut dh_prev = vec![0.0; u];
        matvec_backward(&eff.wh, 4 * u, u, &st.h_prev, &g.dz, Some(&mut dh_prev), &mut dwh);
        dh_carry = dh_prev;
        dc_carry = g.dc_prev;
    }
    let add_block = |fused: &[f64], g: usize, len: usize, mask: Option<&Tensor>, dst: &mut Tensor| {
        let src = &fused[g * len..(g + 1) * len];
        for (k, (d, &v)) in dst.data_mut().iter_mut().zip(src).enumerate() {
            *d += mask.map_or(v, |m| v * m.data()[k]);
        }
    };
    for g in 0..4 {
        add_block(
            &dwx,
            g,
            u * inp,
            masks.and_then(|m| m.w_x[g].as_ref()),
            &mut grads.w_x[g],
        );
        add_block(&dwh, g, u * u, masks.and_then(|m| m.w_h[g].as_ref()), &mut grads.w_h[g]);
        for (a, b) in grads.b[g].data_mut().iter_mut().zip(&dbias[g]) {
            *a += b;
        }
    }
    for k in 0..3 {
        add_block(
            &dpeep[k],
            0,
            u,
            masks.and_then(|m| m.w_c[k].as_ref()),
            &mut grads.w_c[k],
        );
    }
}
