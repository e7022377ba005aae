//! Dense row-major `f64` tensors and the handful of kernels the network needs.
//!
//! Image-like tensors use `rows × cols × channels` order; convolution kernels
//! use `rows × cols × in_channels × filters`. All convolutions are "same"
//! zero-padded and anchored at the top-left input pixel, so a stride `s`
//! produces `ceil(q / s) × ceil(r / s)` outputs sampled at input positions
//! `0, s, 2s, …`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len().max(1)],
            data: if values.is_empty() { vec![0.0] } else { values.to_vec() },
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(&self.shape)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape("add_scaled", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise(op: Activation, x: &Tensor) -> Tensor {
    x.map(|v| op.apply(v))
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape("hadamard", b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// `W x + b` for `W: [out × in]`.
pub fn dense(weights: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = match weights.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::shape("dense", format!("weights must be rank 2, got {s:?}"))),
    };
    if bias.len() != out || x.len() != inp {
        return Err(Error::shape(
            "dense",
            format!(
                "weights {:?}, bias {:?}, input {:?}",
                weights.shape(),
                bias.shape(),
                x.shape()
            ),
        ));
    }
    let mut y = bias.data.clone();
    matvec_acc(&weights.data, out, inp, &x.data, &mut y);
    Ok(Tensor {
        shape: vec![out],
        data: y,
    })
}

/// `y += W x` over raw row-major slices.
pub(crate) fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (row, yo) in w.chunks_exact(cols).zip(y.iter_mut()).take(rows) {
        *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += Wᵀ dy` and `dW += dy xᵀ`.
pub(crate) fn matvec_backward(
    w: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    for (r, &g) in dy.iter().enumerate().take(rows) {
        if g == 0.0 {
            continue;
        }
        let dw_row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xv) in dw_row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate().take(rows) {
            let w_row = &w[r * cols..(r + 1) * cols];
            for (d, &wv) in dx.iter_mut().zip(w_row) {
                *d += g * wv;
            }
        }
    }
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax needs at least 2 entries, got {}",
            x.len()
        )));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: softmax_slice(&x.data),
    })
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub rows: usize,
    pub cols: usize,
    pub in_ch: usize,
    pub k_rows: usize,
    pub k_cols: usize,
    pub filters: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_rows(&self) -> usize {
        self.rows.div_ceil(self.stride)
    }

    pub fn out_cols(&self) -> usize {
        self.cols.div_ceil(self.stride)
    }

    pub fn out_len(&self) -> usize {
        self.out_rows() * self.out_cols() * self.filters
    }

    /// Visits every (output pixel, kernel tap) pair whose input pixel lies
    /// inside the image, in `oy, ox, ky, kx` order.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let pad_r = (self.k_rows - 1) / 2;
        let pad_c = (self.k_cols - 1) / 2;
        let (oq, or) = (self.out_rows(), self.out_cols());
        for oy in 0..oq {
            for ox in 0..or {
                let out_idx = oy * or + ox;
                for ky in 0..self.k_rows {
                    let iy = (oy * self.stride + ky) as isize - pad_r as isize;
                    if iy < 0 || iy >= self.rows as isize {
                        continue;
                    }
                    for kx in 0..self.k_cols {
                        let ix = (ox * self.stride + kx) as isize - pad_c as isize;
                        if ix < 0 || ix >= self.cols as isize {
                            continue;
                        }
                        let in_idx = iy as usize * self.cols + ix as usize;
                        f(out_idx, in_idx, ky * self.k_cols + kx);
                    }
                }
            }
        }
    }

    /// `out += conv(input, kernel)`.
    pub fn forward_acc(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        let (c, p) = (self.in_ch, self.filters);
        self.for_each_tap(|o, i, k| {
            let inp = &input[i * c..(i + 1) * c];
            let ker = &kernel[k * c * p..(k + 1) * c * p];
            let acc = &mut out[o * p..(o + 1) * p];
            for (ci, &v) in inp.iter().enumerate() {
                let row = &ker[ci * p..(ci + 1) * p];
                for (a, &w) in acc.iter_mut().zip(row) {
                    *a += v * w;
                }
            }
        });
    }

    /// Accumulates gradients of `conv(input, kernel)` given the output gradient.
    pub fn backward_acc(
        &self,
        input: &[f64],
        kernel: &[f64],
        grad_out: &[f64],
        mut grad_input: Option<&mut [f64]>,
        grad_kernel: &mut [f64],
    ) {
        let (c, p) = (self.in_ch, self.filters);
        self.for_each_tap(|o, i, k| {
            let g = &grad_out[o * p..(o + 1) * p];
            if g.iter().all(|&v| v == 0.0) {
                return;
            }
            let inp = &input[i * c..(i + 1) * c];
            let gk = &mut grad_kernel[k * c * p..(k + 1) * c * p];
            for (ci, &v) in inp.iter().enumerate() {
                let row = &mut gk[ci * p..(ci + 1) * p];
                for (a, &gv) in row.iter_mut().zip(g) {
                    *a += v * gv;
                }
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                let ker = &kernel[k * c * p..(k + 1) * c * p];
                let gin = &mut gi[i * c..(i + 1) * c];
                for (ci, d) in gin.iter_mut().enumerate() {
                    let row = &ker[ci * p..(ci + 1) * p];
                    *d += row.iter().zip(g).map(|(w, gv)| w * gv).sum::<f64>();
                }
            }
        });
    }
}

pub(crate) fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<ConvGeometry> {
    let (q, r, c) = match input.shape() {
        [q, r, c] => (*q, *r, *c),
        s => return Err(Error::shape("conv2d", format!("input must be rank 3, got {s:?}"))),
    };
    let (m, n, kc, p) = match kernel.shape() {
        [m, n, kc, p] => (*m, *n, *kc, *p),
        s => return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {s:?}"))),
    };
    if kc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, kernel expects {kc}"),
        ));
    }
    if m % 2 == 0 || n % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel extents must be odd, got {m}×{n}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    Ok(ConvGeometry {
        rows: q,
        cols: r,
        in_ch: c,
        k_rows: m,
        k_cols: n,
        filters: p,
        stride,
    })
}

/// Same-padded 2-D convolution (cross-correlation) of `input: [q×r×c]` with
/// `kernel: [m×n×c×p]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, stride)?;
    let mut out = vec![0.0; g.out_len()];
    g.forward_acc(&input.data, &kernel.data, &mut out);
    Ok(Tensor {
        shape: vec![g.out_rows(), g.out_cols(), g.filters],
        data: out,
    })
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = f(&probe);
        probe.data[i] = orig - eps;
        let down = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * eps);
    }
    grad
}
