//! Classification metrics, one-way ANOVA with F-distribution tails, Gaussian
//! fits and histogram-based uncertainty classes for SFP distributions.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Binary confusion matrix; the positive class is collision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

pub fn accuracy_of(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::InsufficientSamples { needed: 1, got: 0 }),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// Matthews correlation; 0 whenever a marginal is empty.
pub fn mcc_of(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdConvention {
    /// Divide by n.
    Population,
    /// Divide by n − 1.
    Sample,
}

/// The convention reproducing the published fold summaries; used for every
/// reported standard deviation.
pub const REPORT_STD: StdConvention = StdConvention::Population;

pub fn mean_std(values: &[f64], convention: StdConvention) -> Result<(f64, f64)> {
    let needed = match convention {
        StdConvention::Population => 1,
        StdConvention::Sample => 2,
    };
    if values.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: values.len(),
        });
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let div = match convention {
        StdConvention::Population => n,
        StdConvention::Sample => n - 1.0,
    };
    Ok((mean, (ss / div).sqrt()))
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// P(F(df1, df2) > f).
pub fn f_survival(f: f64, df1: u32, df2: u32) -> f64 {
    if !(f > 0.0) || df1 == 0 || df2 == 0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let (d1, d2) = (df1 as f64, df2 as f64);
    reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Named groups of per-fold metric values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupResults {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl GroupResults {
    pub fn new(groups: Vec<(String, Vec<f64>)>) -> Self {
        GroupResults { groups }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.groups.push((name.into(), values));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df1: u32,
    pub df2: u32,
    pub ss_between: f64,
    pub ss_within: f64,
    /// Zero within-group variance; `f`/`p` follow the fixed convention
    /// (0/1 when the groups also agree, ∞/0 otherwise).
    pub degenerate: bool,
}

pub fn anova_oneway(groups: &GroupResults) -> Result<AnovaResult> {
    let g = groups.groups.len();
    if g < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: g });
    }
    if let Some((name, v)) = groups.groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "group '{name}' has {} values; ANOVA needs at least 2",
            v.len()
        )));
    }
    let n: usize = groups.groups.iter().map(|(_, v)| v.len()).sum();
    let grand = groups.groups.iter().flat_map(|(_, v)| v).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (_, v) in &groups.groups {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        ss_between += v.len() as f64 * (m - grand).powi(2);
        ss_within += v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df1 = (g - 1) as u32;
    let df2 = (n - g) as u32;
    // Tolerance relative to the data scale: rounding in the group means can
    // leave tiny positive sums for exactly constant groups.
    let scale = groups
        .groups
        .iter()
        .flat_map(|(_, v)| v)
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let negligible = |ss: f64| ss <= 1e-24 * scale * scale * n as f64;
    if negligible(ss_within) {
        let (f, p) = if negligible(ss_between) {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        };
        return Ok(AnovaResult {
            f,
            p,
            df1,
            df2,
            ss_between,
            ss_within,
            degenerate: true,
        });
    }
    let f = (ss_between / df1 as f64) / (ss_within / df2 as f64);
    Ok(AnovaResult {
        f,
        p: f_survival(f, df1, df2),
        df1,
        df2,
        ss_between,
        ss_within,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    /// Maximum-likelihood (population) variance.
    pub variance: f64,
}

impl GaussianFit {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianFit> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let (mean, std) = mean_std(samples, StdConvention::Population)?;
    Ok(GaussianFit {
        mean,
        variance: std * std,
    })
}

/// Equal-width bins over [0, 1]; 1.0 falls in the last bin. Values outside
/// the interval are clamped into the end bins.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Vec<u64>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    for &v in samples {
        let i = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts)
}

pub fn histogram_csv(counts: &[u64]) -> String {
    let bins = counts.len() as f64;
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{c}", i as f64 / bins, (i + 1) as f64 / bins);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UncertaintyClass {
    ConfidentUnimodal,
    DiffuseUnimodal,
    ConflictingBimodal,
}

impl UncertaintyClass {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyClass::ConfidentUnimodal => "confident_unimodal",
            UncertaintyClass::DiffuseUnimodal => "diffuse_unimodal",
            UncertaintyClass::ConflictingBimodal => "conflicting_bimodal",
        }
    }
}

impl fmt::Display for UncertaintyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyConfig {
    pub bins: usize,
    /// Moving-average width; odd.
    pub smoothing: usize,
    /// Fraction of all samples a peak's basin must hold.
    pub min_peak_mass: f64,
    /// Valley height relative to the smaller peak.
    pub max_valley_ratio: f64,
    pub sigma_lo: f64,
    pub min_samples: usize,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            bins: 20,
            smoothing: 3,
            min_peak_mass: 0.10,
            max_valley_ratio: 0.5,
            sigma_lo: 0.10,
            min_samples: 50,
        }
    }
}

fn smooth(counts: &[u64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..counts.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(counts.len() - 1);
            counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Bins that rise above their left neighbour and do not fall below their
/// right one; plateaus report their first bin.
fn local_maxima(s: &[f64]) -> Vec<usize> {
    (0..s.len())
        .filter(|&i| s[i] > 0.0 && (i == 0 || s[i] > s[i - 1]) && (i + 1 == s.len() || s[i] >= s[i + 1]))
        .collect()
}

/// True when two peaks each carry enough mass and are separated by a deep
/// enough valley in the smoothed histogram.
pub fn is_bimodal(samples: &[f64], cfg: &UncertaintyConfig) -> Result<bool> {
    let counts = histogram(samples, cfg.bins)?;
    let s = smooth(&counts, cfg.smoothing.max(1));
    let peaks = local_maxima(&s);
    if peaks.len() < 2 {
        return Ok(false);
    }
    // Basins split at the lowest smoothed bin between neighbouring peaks.
    let valleys: Vec<usize> = peaks
        .windows(2)
        .map(|w| {
            (w[0]..=w[1])
                .min_by(|&a, &b| s[a].total_cmp(&s[b]))
                .expect("non-empty range")
        })
        .collect();
    let total = samples.len() as f64;
    let mass: Vec<f64> = (0..peaks.len())
        .map(|j| {
            let lo = if j == 0 { 0 } else { valleys[j - 1] + 1 };
            let hi = if j == peaks.len() - 1 {
                counts.len() - 1
            } else {
                valleys[j]
            };
            counts[lo..=hi].iter().sum::<u64>() as f64 / total
        })
        .collect();
    let major: Vec<usize> = (0..peaks.len()).filter(|&j| mass[j] >= cfg.min_peak_mass).collect();
    for (x, &a) in major.iter().enumerate() {
        for &b in &major[x + 1..] {
            let (pa, pb) = (peaks[a], peaks[b]);
            let valley = s[pa..=pb].iter().copied().fold(f64::INFINITY, f64::min);
            if valley <= cfg.max_valley_ratio * s[pa].min(s[pb]) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

pub fn classify_uncertainty(samples: &[f64], cfg: &UncertaintyConfig) -> Result<UncertaintyClass> {
    if samples.len() < cfg.min_samples {
        return Err(Error::InsufficientSamples {
            needed: cfg.min_samples,
            got: samples.len(),
        });
    }
    if is_bimodal(samples, cfg)? {
        return Ok(UncertaintyClass::ConflictingBimodal);
    }
    let fit = fit_gaussian(samples)?;
    Ok(if fit.std() <= cfg.sigma_lo {
        UncertaintyClass::ConfidentUnimodal
    } else {
        UncertaintyClass::DiffuseUnimodal
    })
}
