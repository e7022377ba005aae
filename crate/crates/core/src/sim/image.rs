use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit grayscale image, row-major. Intensity `v` in [0, 1] is stored as
/// `round(v·255)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                "gray_image",
                format!("{rows}×{cols} image needs {} bytes, got {}", rows * cols, data.len()),
            ));
        }
        Ok(GrayImage { rows, cols, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [q, r, 1] | [q, r] => GrayImage::new(*q, *r, t.data().iter().map(|&v| quantize(v)).collect()),
            s => Err(Error::shape("gray_image", format!("expected q×r×1, got {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    /// Intensities in [0, 1].
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols, 1], self.to_f64()).expect("consistent shape")
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.cols) {
            data.extend(row.iter().rev());
        }
        GrayImage { data, ..*self }
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}
