use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sim::Camera;

/// Which non-image modalities feed the recurrent state branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputMode {
    ImagesOnly,
    ImagesState,
    ImagesStateAction,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [
        InputMode::ImagesOnly,
        InputMode::ImagesState,
        InputMode::ImagesStateAction,
    ];

    /// Width of the per-step vector fed to the state LSTM (0 if absent).
    pub fn state_dim(self) -> usize {
        match self {
            InputMode::ImagesOnly => 0,
            InputMode::ImagesState => crate::dataset::STATE_LEN,
            InputMode::ImagesStateAction => crate::dataset::STATE_LEN + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputMode::ImagesOnly => "images_only",
            InputMode::ImagesState => "images_state",
            InputMode::ImagesStateAction => "images_state_action",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown input mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filters: usize,
    /// Square, odd kernel extent.
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_mode: InputMode,
    /// One image branch per camera, in this order.
    pub cameras: Vec<Camera>,
    pub image_rows: usize,
    pub image_cols: usize,
    pub channels: usize,
    pub seq_len: usize,
    /// Stacked ConvLSTM layers of every image branch. All but the last
    /// return full sequences.
    pub conv_layers: Vec<ConvLayerSpec>,
    pub lstm_units: usize,
    pub merge_width: usize,
    /// Reserved; batch normalization is not implemented and must stay off.
    pub batch_norm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_mode: InputMode::ImagesStateAction,
            cameras: Camera::ALL.to_vec(),
            image_rows: 32,
            image_cols: 32,
            channels: 1,
            seq_len: 5,
            conv_layers: vec![
                ConvLayerSpec {
                    filters: 8,
                    kernel: 3,
                    stride: 1,
                },
                ConvLayerSpec {
                    filters: 8,
                    kernel: 3,
                    stride: 2,
                },
            ],
            lstm_units: 16,
            merge_width: 32,
            batch_norm: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cameras.is_empty() {
            return bad("camera set must not be empty".into());
        }
        let mut seen = self.cameras.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.cameras.len() {
            return bad("camera set contains duplicates".into());
        }
        if self.seq_len == 0 {
            return bad("sequence length must be at least 1".into());
        }
        if self.image_rows == 0 || self.image_cols == 0 || self.channels == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.conv_layers.is_empty() {
            return bad("each image branch needs at least one ConvLSTM layer".into());
        }
        for (k, l) in self.conv_layers.iter().enumerate() {
            if l.filters == 0 || l.stride == 0 || l.kernel % 2 == 0 {
                return bad(format!(
                    "conv layer {k}: filters and stride must be positive and the kernel odd"
                ));
            }
        }
        if self.input_mode != InputMode::ImagesOnly && self.lstm_units == 0 {
            return bad("lstm_units must be positive when the state branch is active".into());
        }
        if self.merge_width == 0 {
            return bad("merge_width must be positive".into());
        }
        if self.batch_norm {
            return bad("batch normalization is reserved and not implemented".into());
        }
        Ok(())
    }

    pub fn has_state_branch(&self) -> bool {
        self.input_mode != InputMode::ImagesOnly
    }

    /// Spatial dims `(rows, cols)` of each conv layer's output.
    pub fn conv_output_dims(&self) -> Vec<(usize, usize)> {
        let (mut q, mut r) = (self.image_rows, self.image_cols);
        self.conv_layers
            .iter()
            .map(|l| {
                q = q.div_ceil(l.stride);
                r = r.div_ceil(l.stride);
                (q, r)
            })
            .collect()
    }

    /// Flattened length of one image branch's final hidden state.
    pub fn branch_feature_len(&self) -> usize {
        let (q, r) = *self.conv_output_dims().last().expect("validated");
        q * r * self.conv_layers.last().expect("validated").filters
    }

    pub fn concat_len(&self) -> usize {
        self.cameras.len() * self.branch_feature_len() + if self.has_state_branch() { self.lstm_units } else { 0 }
    }
}

/// `FILTERSxKERNELsSTRIDE`, e.g. `8x3s2`.
impl fmt::Display for ConvLayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}s{}", self.filters, self.kernel, self.stride)
    }
}

impl FromStr for ConvLayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad conv layer '{s}', expected e.g. 8x3s2"));
        let (filters, rest) = s.trim().split_once('x').ok_or_else(bad)?;
        let (kernel, stride) = rest.split_once('s').ok_or_else(bad)?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        Ok(ConvLayerSpec {
            filters: num(filters)?,
            kernel: num(kernel)?,
            stride: num(stride)?,
        })
    }
}

/// Comma-separated layer list.
pub fn parse_conv_layers(s: &str) -> Result<Vec<ConvLayerSpec>> {
    s.split(',').map(str::parse).collect()
}

pub fn format_conv_layers(layers: &[ConvLayerSpec]) -> String {
    layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_cameras(s: &str) -> Result<Vec<Camera>> {
    match s.trim() {
        "all3" | "all" => Ok(Camera::ALL.to_vec()),
        list => list.split(',').map(str::parse).collect(),
    }
}

pub fn format_cameras(cams: &[Camera]) -> String {
    cams.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
}
