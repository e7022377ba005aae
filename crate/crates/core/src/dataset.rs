//! Episodes to labelled fixed-length windows: truncation, windowing,
//! shuffling, splits, k-fold plans and the `DPMD` file format.
//!
//! `DPMD` layout (little-endian):
//!
//! ```text
//! "DPMD" | version u32 | count u64 | L u8 | cameras u8 | q u16 | r u16
//! per sample: label u8, then per frame: per camera q·r bytes,
//!             9 × f32 state, f32 action
//! optional trailer: "META" | cameras u8 | camera ids u8…
//!                   | per sample: episode u32, scenario u8, window start u32
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dropout::mix64;
use crate::error::{Error, Result};
use crate::sim::{
    find_delay_threshold, run_scenario, Camera, CameraSpec, Episode, EpisodeFrame, Scenario, ScenarioSpec, SimGeometry,
};
pub use crate::sim::{GrayImage, Label};

pub const STATE_LEN: usize = 9;
/// Divisors applied to the state vector before it enters the network:
/// camera mount xyz, vehicle xyz, speed, torque, accelerator.
pub const STATE_SCALE: [f64; STATE_LEN] = [1.0, 1.0, 1.0, 40.0, 40.0, 1.0, 10.0, 1.0, 1.0];
pub const MAGIC: &[u8; 4] = b"DPMD";
pub const META_MAGIC: &[u8; 4] = b"META";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 22;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub images: Vec<(Camera, GrayImage)>,
    pub state: [f32; STATE_LEN],
    pub action: f32,
}

impl Frame {
    pub fn image(&self, cam: Camera) -> Option<&GrayImage> {
        self.images.iter().find(|(c, _)| *c == cam).map(|(_, img)| img)
    }

    /// State = (dashcam mount xyz, vehicle x, y, 0, speed, torque, accelerator).
    pub fn from_episode_frame(f: &EpisodeFrame, mount: [f64; 3]) -> Frame {
        let s = &f.sensor;
        let state = [
            mount[0],
            mount[1],
            mount[2],
            s.x,
            s.y,
            0.0,
            s.speed,
            s.torque_cmd,
            if s.accelerator { 1.0 } else { 0.0 },
        ]
        .map(|v| v as f32);
        Frame {
            images: f.images.clone(),
            state,
            action: if f.action { 1.0 } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub frames: Vec<Arc<Frame>>,
    pub label: Label,
    pub episode_id: u32,
    pub scenario: Scenario,
    pub window_start: u32,
}

/// Provenance shared by every window cut from one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSource {
    pub label: Label,
    pub episode_id: u32,
    pub scenario: Scenario,
}

/// Frames within the five seconds up to and including the event.
pub fn truncate_episode(ep: &Episode) -> Vec<Frame> {
    truncate_episode_with(ep, 5.0, CameraSpec::default_for(Camera::Dashcam, 1, 1).mount)
}

pub fn truncate_episode_with(ep: &Episode, horizon: f64, mount: [f64; 3]) -> Vec<Frame> {
    const EPS: f64 = 1e-9;
    ep.frames
        .iter()
        .filter(|f| f.time >= ep.event_time - horizon - EPS && f.time <= ep.event_time + EPS)
        .map(|f| Frame::from_episode_frame(f, mount))
        .collect()
}

/// Windows of `l` consecutive frames starting every `stride` frames.
pub fn windowize(frames: &[Arc<Frame>], l: usize, stride: usize, source: WindowSource) -> Result<Vec<SequenceSample>> {
    if l == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window length and stride must be ≥ 1 (got {l}, {stride})"
        )));
    }
    if frames.len() < l {
        return Ok(Vec::new());
    }
    Ok((0..=frames.len() - l)
        .step_by(stride)
        .map(|start| SequenceSample {
            frames: frames[start..start + l].to_vec(),
            label: source.label,
            episode_id: source.episode_id,
            scenario: source.scenario,
            window_start: start as u32,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validate: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validate: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train > 0.0 && self.validate >= 0.0 && self.train + self.validate <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bad split fractions train={} validate={}",
                self.train, self.validate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<SequenceSample>,
    pub validate: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

pub fn shuffle_samples(samples: &mut [SequenceSample], seed: u64) {
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

/// Shuffles then cuts into train / validate / test (remainder).
pub fn assemble_dataset(mut samples: Vec<SequenceSample>, fractions: SplitFractions, seed: u64) -> Result<Split> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    fractions.validate()?;
    shuffle_samples(&mut samples, seed);
    let n = samples.len();
    let n_train = ((n as f64 * fractions.train).round() as usize).clamp(1, n);
    let n_val = ((n as f64 * fractions.validate).round() as usize).min(n - n_train);
    let test = samples.split_off(n_train + n_val);
    let validate = samples.split_off(n_train);
    Ok(Split {
        train: samples,
        validate,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Sample index → fold index.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_plan(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientSamples { needed: k, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, assignment })
}

/// Folds over groups (episodes): every sample of a group lands in the same
/// fold, and folds hold numbers of groups differing by at most one.
pub fn kfold_plan_grouped(groups: &[u32], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<u32> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let by_group = kfold_plan(ids.len(), k, seed)?;
    let fold_of: HashMap<u32, usize> = ids.iter().copied().zip(by_group.assignment).collect();
    Ok(FoldPlan {
        k,
        assignment: groups.iter().map(|g| fold_of[g]).collect(),
    })
}

/// A set of samples sharing one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub seq_len: usize,
    pub rows: usize,
    pub cols: usize,
    pub samples: Vec<SequenceSample>,
}

impl Dataset {
    pub fn check_layout(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.frames.len() != self.seq_len {
                return Err(Error::shape(
                    "dataset",
                    format!("sample {i} has {} frames, expected {}", s.frames.len(), self.seq_len),
                ));
            }
            for f in &s.frames {
                if f.images.len() != self.cameras.len()
                    || f.images
                        .iter()
                        .zip(&self.cameras)
                        .any(|((c, img), want)| c != want || img.rows() != self.rows || img.cols() != self.cols)
                {
                    return Err(Error::shape(
                        "dataset",
                        format!(
                            "sample {i} images do not match cameras {:?} at {}×{}",
                            self.cameras, self.rows, self.cols
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample_bytes(&self) -> u64 {
        sample_size(self.seq_len, self.cameras.len(), self.rows, self.cols)
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut s = DatasetSummary::default();
        for x in &self.samples {
            *s.by_class.entry(x.label.name()).or_default() += 1;
            *s.by_scenario.entry(x.scenario.id()).or_default() += 1;
        }
        s.samples = self.samples.len();
        s.episodes = {
            let mut ids: Vec<u32> = self.samples.iter().map(|x| x.episode_id).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSummary {
    pub samples: usize,
    pub episodes: usize,
    pub by_class: BTreeMap<&'static str, usize>,
    pub by_scenario: BTreeMap<u8, usize>,
}

impl DatasetSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,key,count\n");
        let _ = writeln!(out, "total,samples,{}", self.samples);
        let _ = writeln!(out, "total,episodes,{}", self.episodes);
        for (k, v) in &self.by_class {
            let _ = writeln!(out, "class,{k},{v}");
        }
        for (k, v) in &self.by_scenario {
            let _ = writeln!(out, "scenario,{k},{v}");
        }
        out
    }
}

/// Bytes per sample record.
pub fn sample_size(seq_len: usize, cameras: usize, rows: usize, cols: usize) -> u64 {
    1 + seq_len as u64 * (cameras as u64 * rows as u64 * cols as u64 + 4 * (STATE_LEN as u64 + 1))
}

pub fn serialize_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.check_layout()?;
    let narrow = |v: usize, what: &str, max: usize| {
        if v > max {
            Err(Error::InvalidArgument(format!("{what} {v} exceeds format limit {max}")))
        } else {
            Ok(v)
        }
    };
    let seq_len = narrow(ds.seq_len, "sequence length", u8::MAX as usize)? as u8;
    let cams = narrow(ds.cameras.len(), "camera count", u8::MAX as usize)? as u8;
    let rows = narrow(ds.rows, "rows", u16::MAX as usize)? as u16;
    let cols = narrow(ds.cols, "cols", u16::MAX as usize)? as u16;

    let n = ds.samples.len() as u64;
    let meta_len = 4 + 1 + ds.cameras.len() as u64 + 9 * n;
    let mut out = Vec::with_capacity((HEADER_LEN + n * ds.sample_bytes() + meta_len) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.push(seq_len);
    out.push(cams);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for s in &ds.samples {
        out.push(s.label.to_byte());
        for f in &s.frames {
            for (_, img) in &f.images {
                out.extend_from_slice(img.bytes());
            }
            for v in f.state {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&f.action.to_le_bytes());
        }
    }
    out.extend_from_slice(META_MAGIC);
    out.push(cams);
    out.extend(ds.cameras.iter().map(|c| c.index() as u8));
    for s in &ds.samples {
        out.extend_from_slice(&s.episode_id.to_le_bytes());
        out.push(s.scenario.id());
        out.extend_from_slice(&s.window_start.to_le_bytes());
    }
    Ok(out)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = serialize_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_dataset(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    fn fail(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            msg: msg.into(),
        }
    }
}

struct SampleMeta {
    episode_id: u32,
    scenario: Scenario,
    window_start: u32,
}

pub fn deserialize_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected DPMD"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let n = r.u64("sample count")?;
    let seq_len = r.u8("sequence length")? as usize;
    let n_cams = r.u8("camera count")? as usize;
    let rows = r.u16("rows")? as usize;
    let cols = r.u16("cols")? as usize;
    if seq_len == 0 || n_cams == 0 || rows == 0 || cols == 0 {
        return Err(r.fail(16, "zero dimension in header"));
    }
    let body = n
        .checked_mul(sample_size(seq_len, n_cams, rows, cols))
        .filter(|&b| b <= (bytes.len() as u64).saturating_sub(HEADER_LEN))
        .ok_or_else(|| r.fail(bytes.len(), format!("file too short for {n} samples")))?;

    // The trailer sits after the fixed-size body; read it first so frames
    // shared between overlapping windows can be deduplicated.
    let mut meta_reader = Reader {
        buf: bytes,
        pos: (HEADER_LEN + body) as usize,
    };
    let (cameras, metas) = if meta_reader.pos == bytes.len() {
        if n_cams > Camera::ALL.len() {
            return Err(r.fail(17, format!("{n_cams} cameras without a camera list")));
        }
        (Camera::ALL[..n_cams].to_vec(), None)
    } else {
        let at = meta_reader.pos;
        if meta_reader.take(4, "trailer magic")? != META_MAGIC {
            return Err(meta_reader.fail(at, "unexpected bytes after samples"));
        }
        let listed = meta_reader.u8("trailer camera count")? as usize;
        if listed != n_cams {
            return Err(meta_reader.fail(at + 4, format!("trailer lists {listed} cameras, header {n_cams}")));
        }
        let mut cameras = Vec::with_capacity(listed);
        for _ in 0..listed {
            let at = meta_reader.pos;
            let id = meta_reader.u8("camera id")?;
            cameras.push(
                Camera::from_index(id as usize)
                    .ok_or_else(|| meta_reader.fail(at, format!("unknown camera id {id}")))?,
            );
        }
        let mut metas = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let episode_id = meta_reader.u32("episode id")?;
            let at = meta_reader.pos;
            let scenario =
                Scenario::from_id(meta_reader.u8("scenario")?).map_err(|e| meta_reader.fail(at, e.to_string()))?;
            let window_start = meta_reader.u32("window start")?;
            metas.push(SampleMeta {
                episode_id,
                scenario,
                window_start,
            });
        }
        if meta_reader.pos != bytes.len() {
            return Err(meta_reader.fail(meta_reader.pos, "trailing bytes after trailer"));
        }
        (cameras, Some(metas))
    };

    let px = rows * cols;
    let mut shared: HashMap<(u32, u32), Arc<Frame>> = HashMap::new();
    let mut samples = Vec::with_capacity(n as usize);
    for i in 0..n as usize {
        let at = r.pos;
        let label =
            Label::from_byte(r.u8("label")?).ok_or_else(|| r.fail(at, format!("invalid label byte {}", bytes[at])))?;
        let meta = metas.as_ref().map(|m| &m[i]);
        let mut frames = Vec::with_capacity(seq_len);
        for j in 0..seq_len {
            let mut images = Vec::with_capacity(n_cams);
            for &cam in &cameras {
                let data = r.take(px, "image")?.to_vec();
                images.push((cam, GrayImage::new(rows, cols, data)?));
            }
            let mut state = [0f32; STATE_LEN];
            for v in &mut state {
                *v = r.f32("state")?;
            }
            let action = r.f32("action")?;
            let frame = Frame { images, state, action };
            let frame = match meta {
                Some(m) => {
                    let key = (m.episode_id, m.window_start + j as u32);
                    match shared.get(&key) {
                        Some(existing) if **existing == frame => existing.clone(),
                        _ => {
                            let a = Arc::new(frame);
                            shared.insert(key, a.clone());
                            a
                        }
                    }
                }
                None => Arc::new(frame),
            };
            frames.push(frame);
        }
        samples.push(SequenceSample {
            frames,
            label,
            episode_id: meta.map_or(i as u32, |m| m.episode_id),
            scenario: meta.map_or(Scenario::FromRight, |m| m.scenario),
            window_start: meta.map_or(0, |m| m.window_start),
        });
    }
    Ok(Dataset {
        cameras,
        seq_len,
        rows,
        cols,
        samples,
    })
}

/// Data-generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub geometry: SimGeometry,
    pub scenarios: Vec<Scenario>,
    pub episodes_per_scenario: usize,
    pub cameras: Vec<Camera>,
    pub rows: usize,
    pub cols: usize,
    pub dt: f64,
    pub max_duration: f64,
    pub seq_len: usize,
    pub window_stride: usize,
    /// Seconds kept before the event.
    pub horizon: f64,
    /// Delays are drawn from `[0, delay_span·d*]`, where `d*` is the
    /// crossing-scenario threshold.
    pub delay_span: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            geometry: SimGeometry::default(),
            scenarios: Scenario::ALL.to_vec(),
            episodes_per_scenario: 10,
            cameras: Camera::ALL.to_vec(),
            rows: 32,
            cols: 32,
            dt: 0.05,
            max_duration: 12.0,
            seq_len: 5,
            window_stride: 1,
            horizon: 5.0,
            delay_span: 2.0,
        }
    }
}

impl GenConfig {
    pub fn delay_threshold(&self) -> Result<f64> {
        find_delay_threshold(
            Scenario::FromRight,
            &self.geometry,
            self.dt,
            self.max_duration,
            0.0,
            self.max_duration,
            1e-6,
        )
    }
}

/// Runs every configured episode, truncates and windows it, and returns
/// the shuffled samples.
pub fn generate_dataset(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    if cfg.scenarios.is_empty() || cfg.cameras.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one scenario and one camera".into(),
        ));
    }
    let threshold = cfg.delay_threshold()?;
    let max_delay = cfg.delay_span * threshold;
    let cams: Vec<CameraSpec> = cfg
        .cameras
        .iter()
        .map(|&c| CameraSpec::default_for(c, cfg.rows, cfg.cols))
        .collect();
    let mount = CameraSpec::default_for(Camera::Dashcam, 1, 1).mount;
    let jobs: Vec<(u32, Scenario)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.episodes_per_scenario).map(move |e| (s, e)))
        .enumerate()
        .map(|(id, (s, _))| (id as u32, s))
        .collect();
    let per_episode: Vec<Result<Vec<SequenceSample>>> = jobs
        .par_iter()
        .map(|&(id, scenario)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, id as u64));
            let delay = rng.gen_range(0.0..=max_delay);
            let spec = ScenarioSpec {
                scenario,
                delay,
                dt: cfg.dt,
                max_duration: cfg.max_duration,
            };
            let ep = run_scenario(&spec, &cfg.geometry, &cams)?;
            let frames: Vec<Arc<Frame>> = truncate_episode_with(&ep, cfg.horizon, mount)
                .into_iter()
                .map(Arc::new)
                .collect();
            windowize(
                &frames,
                cfg.seq_len,
                cfg.window_stride,
                WindowSource {
                    label: ep.label,
                    episode_id: id,
                    scenario,
                },
            )
        })
        .collect();
    let mut samples = Vec::new();
    for r in per_episode {
        samples.extend(r?);
    }
    shuffle_samples(&mut samples, seed);
    Ok(Dataset {
        cameras: cfg.cameras.clone(),
        seq_len: cfg.seq_len,
        rows: cfg.rows,
        cols: cfg.cols,
        samples,
    })
}
