//! Gate arithmetic shared by the convolutional and the vector LSTM.
//!
//! Both layers reduce to the same per-position computation once their linear
//! maps (convolutions or matrix products) are evaluated. Pre-activations are
//! laid out as `[position][gate][channel]` with gates ordered i, f, c, o:
//!
//! ```text
//! I = σ(zi + Wci ⊙ C_prev + bi)
//! F = σ(zf + Wcf ⊙ C_prev + bf)
//! C = F ⊙ C_prev + I ⊙ tanh(zc + bc)
//! O = σ(zo + Wco ⊙ C + bo)
//! H = O ⊙ tanh(C)
//! ```
//!
//! The output gate peeks at the updated cell state `C`, not `C_prev`.

use crate::tensor::sigmoid;

pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_C: usize = 2;
pub const GATE_O: usize = 3;

pub const PEEP_I: usize = 0;
pub const PEEP_F: usize = 1;
pub const PEEP_O: usize = 2;

#[derive(Clone, Debug)]
pub(crate) struct CellCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Returns `(H, C, cache)`. `z` holds the summed linear terms of all four
/// gates; `bias[g]` has length `channels` and broadcasts over positions.
pub(crate) fn forward(
    z: &[f64],
    bias: [&[f64]; 4],
    peep: [&[f64]; 3],
    c_prev: &[f64],
    channels: usize,
) -> (Vec<f64>, CellCache) {
    let n = c_prev.len();
    let p = channels;
    debug_assert_eq!(z.len(), 4 * n);
    let mut cache = CellCache {
        i: vec![0.0; n],
        f: vec![0.0; n],
        g: vec![0.0; n],
        o: vec![0.0; n],
        c: vec![0.0; n],
        tanh_c: vec![0.0; n],
    };
    let mut h = vec![0.0; n];
    for k in 0..n {
        let (pos, ch) = (k / p, k % p);
        let zk = &z[pos * 4 * p..(pos + 1) * 4 * p];
        let cp = c_prev[k];
        let i = sigmoid(zk[GATE_I * p + ch] + peep[PEEP_I][k] * cp + bias[GATE_I][ch]);
        let f = sigmoid(zk[GATE_F * p + ch] + peep[PEEP_F][k] * cp + bias[GATE_F][ch]);
        let g = (zk[GATE_C * p + ch] + bias[GATE_C][ch]).tanh();
        let c = f * cp + i * g;
        let o = sigmoid(zk[GATE_O * p + ch] + peep[PEEP_O][k] * c + bias[GATE_O][ch]);
        let tc = c.tanh();
        cache.i[k] = i;
        cache.f[k] = f;
        cache.g[k] = g;
        cache.o[k] = o;
        cache.c[k] = c;
        cache.tanh_c[k] = tc;
        h[k] = o * tc;
    }
    (h, cache)
}

/// Gradients flowing out of one cell step.
pub(crate) struct CellGrads {
    /// Gradient w.r.t. the pre-activations `z`, same layout.
    pub dz: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Back-propagates `dh` (w.r.t. `H`) and `dc_next` (w.r.t. `C`, arriving
/// from the following step) through one cell. Peephole and bias gradients
/// are accumulated into `dpeep` / `dbias`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    cache: &CellCache,
    c_prev: &[f64],
    peep: [&[f64]; 3],
    dh: &[f64],
    dc_next: &[f64],
    channels: usize,
    dpeep: &mut [Vec<f64>; 3],
    dbias: &mut [Vec<f64>; 4],
) -> CellGrads {
    let n = c_prev.len();
    let p = channels;
    let mut dz = vec![0.0; 4 * n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (pos, ch) = (k / p, k % p);
        let (i, f, g, o, c, tc) = (
            cache.i[k],
            cache.f[k],
            cache.g[k],
            cache.o[k],
            cache.c[k],
            cache.tanh_c[k],
        );
        let cp = c_prev[k];

        let da_o = dh[k] * tc * o * (1.0 - o);
        let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc) + da_o * peep[PEEP_O][k];
        let da_f = dc * cp * f * (1.0 - f);
        let da_i = dc * g * i * (1.0 - i);
        let da_c = dc * i * (1.0 - g * g);

        dc_prev[k] = dc * f + da_i * peep[PEEP_I][k] + da_f * peep[PEEP_F][k];

        dpeep[PEEP_I][k] += da_i * cp;
        dpeep[PEEP_F][k] += da_f * cp;
        dpeep[PEEP_O][k] += da_o * c;

        dbias[GATE_I][ch] += da_i;
        dbias[GATE_F][ch] += da_f;
        dbias[GATE_C][ch] += da_c;
        dbias[GATE_O][ch] += da_o;

        let dzk = &mut dz[pos * 4 * p..(pos + 1) * 4 * p];
        dzk[GATE_I * p + ch] = da_i;
        dzk[GATE_F * p + ch] = da_f;
        dzk[GATE_C * p + ch] = da_c;
        dzk[GATE_O * p + ch] = da_o;
    }
    CellGrads { dz, dc_prev }
}
