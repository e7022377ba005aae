//! Monte-Carlo dropout over recurrent-layer weights.
//!
//! A pass draws one binary mask per targeted weight element and holds it for
//! every time step of the sequence. Masks multiply the raw weights with no
//! `1/(1-r)` rescaling; the deterministic forward pass uses no masks at all.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::SequenceSample;
use crate::error::{Error, Result};
use crate::net::{dpm_forward, ConvLstmLayer, LstmLayer, NetworkConfig, NetworkParams};
use crate::tensor::Tensor;

/// Which weight groups of each recurrent layer are subject to dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutTargets {
    /// Input-to-gate weights (`W_x*`).
    pub inputs: bool,
    /// Cell-state peephole weights (`W_c*`), the cell's own output feeding the gates.
    pub outputs: bool,
    /// Hidden-to-gate weights (`W_h*`).
    pub recurrent: bool,
}

impl DropoutTargets {
    pub const ALL: DropoutTargets = DropoutTargets {
        inputs: true,
        outputs: true,
        recurrent: true,
    };

    pub const NONE: DropoutTargets = DropoutTargets {
        inputs: false,
        outputs: false,
        recurrent: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    rate: f64,
    pub targets: DropoutTargets,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            rate: 0.01,
            targets: DropoutTargets::ALL,
        }
    }
}

impl DropoutSpec {
    pub fn new(rate: f64, targets: DropoutTargets) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(DropoutSpec { rate, targets })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Masks for one recurrent layer; `None` means the group is not dropped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerMasks {
    pub w_x: [Option<Tensor>; 4],
    pub w_h: [Option<Tensor>; 4],
    pub w_c: [Option<Tensor>; 3],
}

impl LayerMasks {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.w_x
            .iter()
            .chain(&self.w_h)
            .chain(&self.w_c)
            .filter_map(|m| m.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub seed: u64,
    pub branches: Vec<Vec<LayerMasks>>,
    pub state: Option<LayerMasks>,
}

impl MaskSet {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.branches
            .iter()
            .flatten()
            .chain(self.state.iter())
            .flat_map(|l| l.iter())
    }

    /// `(zeros, total)` over all mask entries.
    pub fn zero_count(&self) -> (usize, usize) {
        self.iter().fold((0, 0), |(z, n), t| {
            (z + t.data().iter().filter(|&&v| v == 0.0).count(), n + t.len())
        })
    }
}

fn bernoulli_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 })
}

fn layer_masks(
    w_x: &[Tensor; 4],
    w_h: &[Tensor; 4],
    w_c: &[Tensor; 3],
    spec: &DropoutSpec,
    rng: &mut ChaCha8Rng,
) -> LayerMasks {
    let t = spec.targets;
    let mut draw = |on: bool, w: &Tensor| on.then(|| bernoulli_mask(w.shape(), spec.rate, rng));
    LayerMasks {
        w_x: std::array::from_fn(|g| draw(t.inputs, &w_x[g])),
        w_h: std::array::from_fn(|g| draw(t.recurrent, &w_h[g])),
        w_c: std::array::from_fn(|g| draw(t.outputs, &w_c[g])),
    }
}

/// Independent Bernoulli(1 − r) entries for every targeted weight element of
/// every recurrent layer. The dense head is never masked.
pub fn sample_masks(spec: &DropoutSpec, params: &NetworkParams, seed: u64) -> MaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = |l: &ConvLstmLayer, rng: &mut ChaCha8Rng| layer_masks(&l.w_x, &l.w_h, &l.w_c, spec, rng);
    let lstm = |l: &LstmLayer, rng: &mut ChaCha8Rng| layer_masks(&l.w_x, &l.w_h, &l.w_c, spec, rng);
    let branches = params
        .branches
        .iter()
        .map(|b| b.iter().map(|l| conv(l, &mut rng)).collect())
        .collect();
    let state = params.state.as_ref().map(|l| lstm(l, &mut rng));
    MaskSet { seed, branches, state }
}

/// SplitMix64 finalizer applied to `seed ⊕ golden·(index+1)`; gives each
/// stochastic pass its own well-separated seed.
pub fn mix64(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One stochastic forward pass; returns P(collision).
pub fn stochastic_forward(
    params: &NetworkParams,
    config: &NetworkConfig,
    sample: &SequenceSample,
    spec: &DropoutSpec,
    seed: u64,
) -> Result<f64> {
    let masks = sample_masks(spec, params, seed);
    Ok(dpm_forward(params, config, sample, Some(&masks))?.data()[0])
}

/// Collision probabilities from `n` stochastic forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    samples: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("distribution needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "collision probability {bad} outside [0, 1]"
            )));
        }
        Ok(PredictiveDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pass_index,p_collision\n");
        for (i, p) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{i},{p}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// `n` stochastic passes with pass `i` seeded by `mix64(seed, i)`. Passes
/// may run in parallel; results are ordered by pass index.
pub fn run_sfp(
    params: &NetworkParams,
    config: &NetworkConfig,
    sample: &SequenceSample,
    spec: &DropoutSpec,
    n: usize,
    seed: u64,
) -> Result<PredictiveDistribution> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of passes must be positive".into()));
    }
    let samples: Vec<Result<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| stochastic_forward(params, config, sample, spec, mix64(seed, i)))
        .collect();
    PredictiveDistribution::new(samples.into_iter().collect::<Result<_>>()?)
}
