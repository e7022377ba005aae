//! `key = value` run configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dpm_core::dataset::{GenConfig, SplitFractions};
use dpm_core::dropout::{DropoutSpec, DropoutTargets};
use dpm_core::net::{format_cameras, format_conv_layers, parse_cameras, parse_conv_layers, NetworkConfig};
use dpm_core::sim::Scenario;
use dpm_core::stats::UncertaintyConfig;
use dpm_core::train::{FoldUnit, KFoldConfig, Optimizer, TrainConfig};
use sha2::{Digest, Sha256};

/// Where a configuration value came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    File { origin: String, line: usize },
    Override { index: usize },
    Validation,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::File { origin, line } => write!(f, "{origin}:{line}"),
            Location::Override { index } => write!(f, "--set #{index}"),
            Location::Validation => f.write_str("config"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{at}: unknown key '{key}'")]
    UnknownKey { at: Location, key: String },
    #[error("{at}: bad value for '{key}': {msg}")]
    BadValue { at: Location, key: String, msg: String },
    #[error("{at}: expected 'key = value'")]
    Syntax { at: Location },
    #[error("{at}: {msg}")]
    Invalid { at: Location, msg: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictConfig {
    pub passes: usize,
    pub bins: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { passes: 1000, bins: 20 }
    }
}

/// Everything a command needs. One `seed` drives data generation,
/// initialisation, batching, fold assignment and dropout masks.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub kfold: KFoldConfig,
    pub split: SplitFractions,
    pub predict: PredictConfig,
    pub uncertainty: UncertaintyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let net = NetworkConfig {
            image_rows: gen.rows,
            image_cols: gen.cols,
            seq_len: gen.seq_len,
            ..NetworkConfig::default()
        };
        RunConfig {
            seed: 0,
            gen,
            net,
            train: TrainConfig::default(),
            kfold: KFoldConfig::default(),
            split: SplitFractions::default(),
            predict: PredictConfig::default(),
            uncertainty: UncertaintyConfig::default(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("'{v}' is not a valid {}", short_type::<T>()))
}

fn short_type<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("'{v}' is not a boolean")),
    }
}

fn scenarios(v: &str) -> Result<Vec<Scenario>, String> {
    if v == "all" {
        return Ok(Scenario::ALL.to_vec());
    }
    v.split(',')
        .map(|s| {
            let id: u8 = num(s.trim())?;
            Scenario::from_id(id).map_err(|e| e.to_string())
        })
        .collect()
}

fn targets(v: &str) -> Result<DropoutTargets, String> {
    match v {
        "all" => return Ok(DropoutTargets::ALL),
        "none" => return Ok(DropoutTargets::NONE),
        _ => {}
    }
    let mut t = DropoutTargets::NONE;
    for part in v.split(',') {
        match part.trim() {
            "inputs" => t.inputs = true,
            "outputs" => t.outputs = true,
            "recurrent" => t.recurrent = true,
            other => return Err(format!("unknown dropout target '{other}'")),
        }
    }
    Ok(t)
}

fn format_targets(t: DropoutTargets) -> String {
    let mut parts = Vec::new();
    if t.inputs {
        parts.push("inputs");
    }
    if t.outputs {
        parts.push("outputs");
    }
    if t.recurrent {
        parts.push("recurrent");
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

fn adam_parts(o: Optimizer) -> (f64, f64, f64) {
    match o {
        Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
        Optimizer::Sgd => match Optimizer::adam() {
            Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Optimizer::Sgd => unreachable!(),
        },
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), SetError> {
        let bad = SetError::Value;
        match key {
            "seed" => self.seed = num(v).map_err(bad)?,

            "sim.lane_offset" => self.gen.geometry.lane_offset = num(v).map_err(bad)?,
            "sim.start_distance" => self.gen.geometry.start_distance = num(v).map_err(bad)?,
            "sim.vehicle_length" => self.gen.geometry.vehicle_length = num(v).map_err(bad)?,
            "sim.vehicle_width" => self.gen.geometry.vehicle_width = num(v).map_err(bad)?,
            "sim.a_max" => self.gen.geometry.dynamics.a_max = num(v).map_err(bad)?,
            "sim.top_speed" => self.gen.geometry.dynamics.top_speed = num(v).map_err(bad)?,
            "sim.dt" => self.gen.dt = num(v).map_err(bad)?,
            "sim.max_duration" => self.gen.max_duration = num(v).map_err(bad)?,
            "sim.delay_span" => self.gen.delay_span = num(v).map_err(bad)?,

            "scenarios" | "data.scenarios" => self.gen.scenarios = scenarios(v).map_err(bad)?,
            "data.episodes_per_scenario" => self.gen.episodes_per_scenario = num(v).map_err(bad)?,
            "data.cameras" => self.gen.cameras = parse_cameras(v).map_err(|e| bad(e.to_string()))?,
            "data.image_rows" => {
                self.gen.rows = num(v).map_err(bad)?;
                self.net.image_rows = self.gen.rows;
            }
            "data.image_cols" => {
                self.gen.cols = num(v).map_err(bad)?;
                self.net.image_cols = self.gen.cols;
            }
            "data.seq_len" => {
                self.gen.seq_len = num(v).map_err(bad)?;
                self.net.seq_len = self.gen.seq_len;
            }
            "data.window_stride" => self.gen.window_stride = num(v).map_err(bad)?,
            "data.horizon" => self.gen.horizon = num(v).map_err(bad)?,

            "net.input_mode" => self.net.input_mode = v.parse().map_err(|e: dpm_core::Error| bad(e.to_string()))?,
            "net.cameras" => self.net.cameras = parse_cameras(v).map_err(|e| bad(e.to_string()))?,
            "net.conv_layers" => self.net.conv_layers = parse_conv_layers(v).map_err(|e| bad(e.to_string()))?,
            "net.lstm_units" => self.net.lstm_units = num(v).map_err(bad)?,
            "net.merge_width" => self.net.merge_width = num(v).map_err(bad)?,

            "train.batch_size" => self.train.batch_size = num(v).map_err(bad)?,
            "train.learning_rate" => self.train.learning_rate = num(v).map_err(bad)?,
            "train.max_iterations" => self.train.max_iterations = num(v).map_err(bad)?,
            "train.patience" => self.train.patience = num(v).map_err(bad)?,
            "train.validation_interval" => self.train.validation_interval = num(v).map_err(bad)?,
            "train.optimizer" => {
                self.train.optimizer = match v {
                    "sgd" => Optimizer::Sgd,
                    "adam" => {
                        let (beta1, beta2, eps) = adam_parts(self.train.optimizer);
                        Optimizer::Adam { beta1, beta2, eps }
                    }
                    _ => return Err(bad(format!("'{v}' is not 'adam' or 'sgd'"))),
                }
            }
            "train.beta1" | "train.beta2" | "train.eps" => {
                let x: f64 = num(v).map_err(bad)?;
                let (mut beta1, mut beta2, mut eps) = adam_parts(self.train.optimizer);
                match key {
                    "train.beta1" => beta1 = x,
                    "train.beta2" => beta2 = x,
                    _ => eps = x,
                }
                if let Optimizer::Adam { .. } = self.train.optimizer {
                    self.train.optimizer = Optimizer::Adam { beta1, beta2, eps };
                } else {
                    return Err(bad("Adam parameters need train.optimizer = adam".into()));
                }
            }
            "train.dropout" => self.train.dropout_in_training = boolean(v).map_err(bad)?,

            "dropout.rate" => {
                let rate: f64 = num(v).map_err(bad)?;
                self.train.dropout =
                    DropoutSpec::new(rate, self.train.dropout.targets).map_err(|e| bad(e.to_string()))?;
            }
            "dropout.targets" => self.train.dropout.targets = targets(v).map_err(bad)?,

            "kfold.k" => self.kfold.k = num(v).map_err(bad)?,
            "kfold.unit" => self.kfold.unit = v.parse().map_err(|e: dpm_core::Error| bad(e.to_string()))?,
            "kfold.val_fraction" => self.kfold.val_fraction = num(v).map_err(bad)?,
            "kfold.threshold" => self.kfold.threshold = num(v).map_err(bad)?,

            "split.train" => self.split.train = num(v).map_err(bad)?,
            "split.validate" => self.split.validate = num(v).map_err(bad)?,

            "predict.passes" => self.predict.passes = num(v).map_err(bad)?,
            "predict.bins" => self.predict.bins = num(v).map_err(bad)?,

            "uncertainty.bins" => self.uncertainty.bins = num(v).map_err(bad)?,
            "uncertainty.smoothing" => self.uncertainty.smoothing = num(v).map_err(bad)?,
            "uncertainty.min_peak_mass" => self.uncertainty.min_peak_mass = num(v).map_err(bad)?,
            "uncertainty.max_valley_ratio" => self.uncertainty.max_valley_ratio = num(v).map_err(bad)?,
            "uncertainty.sigma_lo" => self.uncertainty.sigma_lo = num(v).map_err(bad)?,
            "uncertainty.min_samples" => self.uncertainty.min_samples = num(v).map_err(bad)?,

            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.gen;
        let (beta1, beta2, eps) = adam_parts(self.train.optimizer);
        let mut e = vec![
            ("seed", self.seed.to_string()),
            ("sim.lane_offset", g.geometry.lane_offset.to_string()),
            ("sim.start_distance", g.geometry.start_distance.to_string()),
            ("sim.vehicle_length", g.geometry.vehicle_length.to_string()),
            ("sim.vehicle_width", g.geometry.vehicle_width.to_string()),
            ("sim.a_max", g.geometry.dynamics.a_max.to_string()),
            ("sim.top_speed", g.geometry.dynamics.top_speed.to_string()),
            ("sim.dt", g.dt.to_string()),
            ("sim.max_duration", g.max_duration.to_string()),
            ("sim.delay_span", g.delay_span.to_string()),
            (
                "data.scenarios",
                g.scenarios
                    .iter()
                    .map(|s| s.id().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("data.episodes_per_scenario", g.episodes_per_scenario.to_string()),
            ("data.cameras", format_cameras(&g.cameras)),
            ("data.image_rows", g.rows.to_string()),
            ("data.image_cols", g.cols.to_string()),
            ("data.seq_len", g.seq_len.to_string()),
            ("data.window_stride", g.window_stride.to_string()),
            ("data.horizon", g.horizon.to_string()),
            ("net.input_mode", self.net.input_mode.to_string()),
            ("net.cameras", format_cameras(&self.net.cameras)),
            ("net.conv_layers", format_conv_layers(&self.net.conv_layers)),
            ("net.lstm_units", self.net.lstm_units.to_string()),
            ("net.merge_width", self.net.merge_width.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.max_iterations", self.train.max_iterations.to_string()),
            ("train.patience", self.train.patience.to_string()),
            ("train.validation_interval", self.train.validation_interval.to_string()),
            (
                "train.optimizer",
                match self.train.optimizer {
                    Optimizer::Sgd => "sgd".to_string(),
                    Optimizer::Adam { .. } => "adam".to_string(),
                },
            ),
        ];
        if let Optimizer::Adam { .. } = self.train.optimizer {
            e.push(("train.beta1", beta1.to_string()));
            e.push(("train.beta2", beta2.to_string()));
            e.push(("train.eps", eps.to_string()));
        }
        e.extend([
            ("train.dropout", self.train.dropout_in_training.to_string()),
            ("dropout.rate", self.train.dropout.rate().to_string()),
            ("dropout.targets", format_targets(self.train.dropout.targets)),
            ("kfold.k", self.kfold.k.to_string()),
            (
                "kfold.unit",
                match self.kfold.unit {
                    FoldUnit::Episodes => "episodes".to_string(),
                    FoldUnit::Samples => "samples".to_string(),
                },
            ),
            ("kfold.val_fraction", self.kfold.val_fraction.to_string()),
            ("kfold.threshold", self.kfold.threshold.to_string()),
            ("split.train", self.split.train.to_string()),
            ("split.validate", self.split.validate.to_string()),
            ("predict.passes", self.predict.passes.to_string()),
            ("predict.bins", self.predict.bins.to_string()),
            ("uncertainty.bins", self.uncertainty.bins.to_string()),
            ("uncertainty.smoothing", self.uncertainty.smoothing.to_string()),
            ("uncertainty.min_peak_mass", self.uncertainty.min_peak_mass.to_string()),
            (
                "uncertainty.max_valley_ratio",
                self.uncertainty.max_valley_ratio.to_string(),
            ),
            ("uncertainty.sigma_lo", self.uncertainty.sigma_lo.to_string()),
            ("uncertainty.min_samples", self.uncertainty.min_samples.to_string()),
        ]);
        e
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Copies the shared seed into the sub-configs and checks them.
    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        self.train.seed = self.seed;
        self.kfold.seed = self.seed;
        let invalid = |msg: String| ConfigError::Invalid {
            at: Location::Validation,
            msg,
        };
        self.net.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.split.validate().map_err(|e| invalid(e.to_string()))?;
        self.gen.geometry.validate().map_err(|e| invalid(e.to_string()))?;
        if self.gen.scenarios.is_empty() {
            return Err(invalid("data.scenarios is empty".into()));
        }
        if self.gen.episodes_per_scenario == 0 {
            return Err(invalid("data.episodes_per_scenario must be ≥ 1".into()));
        }
        if self.gen.window_stride == 0 {
            return Err(invalid("data.window_stride must be ≥ 1".into()));
        }
        if !(self.kfold.val_fraction >= 0.0 && self.kfold.val_fraction < 1.0) {
            return Err(invalid("kfold.val_fraction must be in [0, 1)".into()));
        }
        if self.kfold.k < 2 {
            return Err(invalid("kfold.k must be ≥ 2".into()));
        }
        if self.predict.passes == 0 || self.predict.bins == 0 {
            return Err(invalid("predict.passes and predict.bins must be ≥ 1".into()));
        }
        if let Some(c) = self.net.cameras.iter().find(|c| !self.gen.cameras.contains(c)) {
            return Err(invalid(format!("net.cameras includes {c}, which data.cameras lacks")));
        }
        Ok(self)
    }
}

/// Failure of a single assignment, before a location is attached.
#[derive(Debug)]
pub enum SetError {
    Unknown,
    Value(String),
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str, at: Location) -> Result<(), ConfigError> {
    cfg.set(key, value).map_err(|e| match e {
        SetError::Unknown => ConfigError::UnknownKey {
            at,
            key: key.to_string(),
        },
        SetError::Value(msg) => ConfigError::BadValue {
            at,
            key: key.to_string(),
            msg,
        },
    })
}

/// Parses config text, then applies `key=value` overrides in order.
pub fn parse_config(text: &str, origin: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = Location::File {
            origin: origin.to_string(),
            line: i + 1,
        };
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { at: at.clone() })?;
        apply(&mut cfg, k.trim(), v.trim(), at)?;
    }
    for (i, o) in overrides.iter().enumerate() {
        let at = Location::Override { index: i + 1 };
        let (k, v) = o.split_once('=').ok_or(ConfigError::Syntax { at: at.clone() })?;
        apply(&mut cfg, k.trim(), v.trim(), at)?;
    }
    cfg.finish()
}

/// Reads `path` (if any) and parses it with the overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    match path {
        None => parse_config("", "<defaults>", overrides),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let text = String::from_utf8(bytes).map_err(|_| ConfigError::Invalid {
                at: Location::File {
                    origin: p.display().to_string(),
                    line: 0,
                },
                msg: "config is not UTF-8".into(),
            })?;
            parse_config(&text, &p.display().to_string(), overrides)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("", "t", &[]).unwrap();
        assert_eq!(c, RunConfig::default().finish().unwrap());
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = parse_config("seed = 7\ntrain.optimizer = sgd\nnet.conv_layers = 4x3s2\n", "t", &[]).unwrap();
        assert_eq!(parse_config(&c.to_text(), "t", &[]).unwrap(), c);
        let d = RunConfig::default().finish().unwrap();
        assert_eq!(parse_config(&d.to_text(), "t", &[]).unwrap(), d);
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# header\nseed = 3 # trailing\n\nkfold.k = 4\n";
        let c = parse_config(text, "t", &["kfold.k=6".into()]).unwrap();
        assert_eq!((c.seed, c.kfold.k, c.train.seed, c.kfold.seed), (3, 6, 3, 3));
    }

    #[test]
    fn errors_carry_locations() {
        let e = parse_config("seed = 1\nbogus = 2\n", "f.cfg", &[]).unwrap_err();
        assert_eq!(e.to_string(), "f.cfg:2: unknown key 'bogus'");
        let e = parse_config("\n\ndropout.rate = banana\n", "f.cfg", &[]).unwrap_err();
        assert!(
            matches!(&e, ConfigError::BadValue { key, at: Location::File { line: 3, .. }, .. } if key == "dropout.rate")
        );
        let e = parse_config("", "f.cfg", &["seed=1".into(), "nope".into()]).unwrap_err();
        assert_eq!(e.to_string(), "--set #2: expected 'key = value'");
        assert!(parse_config("dropout.rate = 1.5", "t", &[]).is_err());
        assert!(parse_config("net.cameras = dashcam\ndata.cameras = left_mirror", "t", &[]).is_err());
    }
}
