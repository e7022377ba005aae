use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cell::GATE_F;
use super::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GATE_NAMES: [&str; 4] = ["i", "f", "c", "o"];
pub const PEEP_NAMES: [&str; 3] = ["i", "f", "o"];

/// One convolutional LSTM layer.
///
/// `w_x[g]`: `[m×n×c_in×p]`, `w_h[g]`: `[m×n×p×p]` for gates i, f, c, o;
/// `w_c[k]`: `[q'×r'×p]` peepholes for gates i, f, o; `b[g]`: `[p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmLayer {
    pub w_x: [Tensor; 4],
    pub w_h: [Tensor; 4],
    pub w_c: [Tensor; 3],
    pub b: [Tensor; 4],
    pub stride: usize,
    pub return_sequences: bool,
}

impl ConvLstmLayer {
    pub fn zeros(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        out_dims: (usize, usize),
        stride: usize,
        return_sequences: bool,
    ) -> Self {
        let kx = [kernel, kernel, in_channels, filters];
        let kh = [kernel, kernel, filters, filters];
        let pc = [out_dims.0, out_dims.1, filters];
        ConvLstmLayer {
            w_x: std::array::from_fn(|_| Tensor::zeros(&kx)),
            w_h: std::array::from_fn(|_| Tensor::zeros(&kh)),
            w_c: std::array::from_fn(|_| Tensor::zeros(&pc)),
            b: std::array::from_fn(|_| Tensor::zeros(&[filters])),
            stride,
            return_sequences,
        }
    }

    pub fn filters(&self) -> usize {
        self.b[0].len()
    }

    pub fn in_channels(&self) -> usize {
        self.w_x[0].shape()[2]
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.w_x[0].shape()[0], self.w_x[0].shape()[1])
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.w_c[0].shape()[0], self.w_c[0].shape()[1])
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.filters();
        let (m, n) = self.kernel_dims();
        let c = self.in_channels();
        let (q, r) = self.out_dims();
        let ok = self.w_x.iter().all(|t| t.shape() == [m, n, c, p])
            && self.w_h.iter().all(|t| t.shape() == [m, n, p, p])
            && self.w_c.iter().all(|t| t.shape() == [q, r, p])
            && self.b.iter().all(|t| t.shape() == [p]);
        if !ok || self.stride == 0 {
            return Err(Error::shape("convlstm", "inconsistent layer tensor shapes"));
        }
        Ok(())
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::with_capacity(15);
        for (g, t) in GATE_NAMES.iter().zip(&self.w_x) {
            v.push((format!("w_x{g}"), t));
        }
        for (g, t) in GATE_NAMES.iter().zip(&self.w_h) {
            v.push((format!("w_h{g}"), t));
        }
        for (g, t) in PEEP_NAMES.iter().zip(&self.w_c) {
            v.push((format!("w_c{g}"), t));
        }
        for (g, t) in GATE_NAMES.iter().zip(&self.b) {
            v.push((format!("b_{g}"), t));
        }
        v
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.w_c.iter_mut())
            .chain(self.b.iter_mut())
    }
}

/// Vector LSTM with the same gate structure as [`ConvLstmLayer`] at 1×1
/// spatial extent: `w_x[g]`: `[units×in]`, `w_h[g]`: `[units×units]`,
/// `w_c[k]`: `[units]`, `b[g]`: `[units]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_x: [Tensor; 4],
    pub w_h: [Tensor; 4],
    pub w_c: [Tensor; 3],
    pub b: [Tensor; 4],
}

impl LstmLayer {
    pub fn zeros(input: usize, units: usize) -> Self {
        LstmLayer {
            w_x: std::array::from_fn(|_| Tensor::zeros(&[units, input])),
            w_h: std::array::from_fn(|_| Tensor::zeros(&[units, units])),
            w_c: std::array::from_fn(|_| Tensor::zeros(&[units])),
            b: std::array::from_fn(|_| Tensor::zeros(&[units])),
        }
    }

    pub fn units(&self) -> usize {
        self.b[0].len()
    }

    pub fn input_len(&self) -> usize {
        self.w_x[0].shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (u, i) = (self.units(), self.input_len());
        let ok = self.w_x.iter().all(|t| t.shape() == [u, i])
            && self.w_h.iter().all(|t| t.shape() == [u, u])
            && self.w_c.iter().all(|t| t.shape() == [u])
            && self.b.iter().all(|t| t.shape() == [u]);
        if !ok {
            return Err(Error::shape("lstm", "inconsistent layer tensor shapes"));
        }
        Ok(())
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::with_capacity(15);
        for (g, t) in GATE_NAMES.iter().zip(&self.w_x) {
            v.push((format!("w_x{g}"), t));
        }
        for (g, t) in GATE_NAMES.iter().zip(&self.w_h) {
            v.push((format!("w_h{g}"), t));
        }
        for (g, t) in PEEP_NAMES.iter().zip(&self.w_c) {
            v.push((format!("w_c{g}"), t));
        }
        for (g, t) in GATE_NAMES.iter().zip(&self.b) {
            v.push((format!("b_{g}"), t));
        }
        v
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.w_c.iter_mut())
            .chain(self.b.iter_mut())
    }
}

/// Merge layer (relu) followed by the two-way softmax output.
/// Output index 0 is collision, index 1 no-collision.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    pub merge_w: Tensor,
    pub merge_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl DenseHead {
    pub fn zeros(input: usize, width: usize) -> Self {
        DenseHead {
            merge_w: Tensor::zeros(&[width, input]),
            merge_b: Tensor::zeros(&[width]),
            out_w: Tensor::zeros(&[2, width]),
            out_b: Tensor::zeros(&[2]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    /// One ConvLSTM stack per configured camera, in config order.
    pub branches: Vec<Vec<ConvLstmLayer>>,
    pub state: Option<LstmLayer>,
    pub head: DenseHead,
}

impl NetworkParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.conv_output_dims();
        let n_layers = config.conv_layers.len();
        let branch = || {
            let mut in_ch = config.channels;
            config
                .conv_layers
                .iter()
                .zip(&dims)
                .enumerate()
                .map(|(k, (spec, &od))| {
                    let layer =
                        ConvLstmLayer::zeros(in_ch, spec.filters, spec.kernel, od, spec.stride, k + 1 < n_layers);
                    in_ch = spec.filters;
                    layer
                })
                .collect::<Vec<_>>()
        };
        Ok(NetworkParams {
            branches: config.cameras.iter().map(|_| branch()).collect(),
            state: config
                .has_state_branch()
                .then(|| LstmLayer::zeros(config.input_mode.state_dim(), config.lstm_units)),
            head: DenseHead::zeros(config.concat_len(), config.merge_width),
        })
    }

    /// Glorot-uniform weights, zero biases except the forget gate (+1).
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |t: &mut Tensor, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-limit..=limit);
            }
        };
        for branch in &mut params.branches {
            for layer in branch.iter_mut() {
                let (m, n) = layer.kernel_dims();
                let (c, p) = (layer.in_channels(), layer.filters());
                for t in &mut layer.w_x {
                    glorot(t, m * n * c, m * n * p);
                }
                for t in &mut layer.w_h {
                    glorot(t, m * n * p, m * n * p);
                }
                for t in &mut layer.w_c {
                    glorot(t, p, p);
                }
                layer.b[GATE_F] = Tensor::ones(&[p]);
            }
        }
        if let Some(lstm) = &mut params.state {
            let (u, i) = (lstm.units(), lstm.input_len());
            for t in &mut lstm.w_x {
                glorot(t, i, u);
            }
            for t in &mut lstm.w_h {
                glorot(t, u, u);
            }
            for t in &mut lstm.w_c {
                glorot(t, u, u);
            }
            lstm.b[GATE_F] = Tensor::ones(&[u]);
        }
        let h = &mut params.head;
        let (w, i) = (h.merge_w.shape()[0], h.merge_w.shape()[1]);
        glorot(&mut h.merge_w, i, w);
        glorot(&mut h.out_w, w, 2);
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Every parameter tensor with a stable, unique name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (l, layer) in branch.iter().enumerate() {
                for (name, t) in layer.named() {
                    out.push((format!("branch{b}.layer{l}.{name}"), t));
                }
            }
        }
        if let Some(lstm) = &self.state {
            for (name, t) in lstm.named() {
                out.push((format!("state.{name}"), t));
            }
        }
        let h = &self.head;
        out.push(("head.merge_w".into(), &h.merge_w));
        out.push(("head.merge_b".into(), &h.merge_b));
        out.push(("head.out_w".into(), &h.out_w));
        out.push(("head.out_b".into(), &h.out_b));
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for branch in &mut self.branches {
            for layer in branch.iter_mut() {
                out.extend(layer.tensors_mut());
            }
        }
        if let Some(lstm) = &mut self.state {
            out.extend(lstm.tensors_mut());
        }
        let h = &mut self.head;
        out.extend([&mut h.merge_w, &mut h.merge_b, &mut h.out_w, &mut h.out_b]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &NetworkParams) -> Result<()> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::shape("params", "parameter sets differ in structure"));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.add_scaled(alpha, s)?;
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_sq()).sum()
    }

    /// Structural check against `config`.
    pub fn check_config(&self, config: &NetworkConfig) -> Result<()> {
        let expected = Self::zeros(config)?;
        let a: Vec<_> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let b: Vec<_> = expected
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if a != b {
            return Err(Error::shape("params", "parameters do not match the network config"));
        }
        for branch in &self.branches {
            for layer in branch {
                layer.validate()?;
            }
        }
        if let Some(l) = &self.state {
            l.validate()?;
        }
        Ok(())
    }
}
