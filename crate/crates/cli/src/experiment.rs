//! Camera and input-mode sweeps with k-fold evaluation and ANOVA.

use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use dpm_core::dataset::Dataset;
use dpm_core::net::{InputMode, NetworkConfig};
use dpm_core::sim::Camera;
use dpm_core::stats::{anova_oneway, AnovaResult, GroupResults};
use dpm_core::train::{run_kfold, FoldResult, KFoldReport, StopReason};
use dpm_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::svg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Camera,
    InputMode,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Camera => "camera",
            Sweep::InputMode => "input_mode",
        }
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "camera" => Ok(Sweep::Camera),
            "input_mode" => Ok(Sweep::InputMode),
            _ => Err(format!("sweep must be 'camera' or 'input_mode', got '{s}'")),
        }
    }
}

/// Network configurations compared by a sweep, named as in the reports.
pub fn sweep_groups(sweep: Sweep, base: &NetworkConfig) -> Vec<(String, NetworkConfig)> {
    match sweep {
        Sweep::Camera => [
            ("left", vec![Camera::LeftMirror]),
            ("dash", vec![Camera::Dashcam]),
            ("right", vec![Camera::RightMirror]),
            ("all3", Camera::ALL.to_vec()),
        ]
        .into_iter()
        .map(|(n, cameras)| {
            (
                n.to_string(),
                NetworkConfig {
                    cameras,
                    ..base.clone()
                },
            )
        })
        .collect(),
        Sweep::InputMode => InputMode::ALL
            .into_iter()
            .map(|m| {
                (
                    m.name().to_string(),
                    NetworkConfig {
                        input_mode: m,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

/// Git blob id computed with SHA-256: `sha256("blob <len>\0" ‖ bytes)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Header lines identifying how a report was produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// `(name, content hash)` of every input file.
    pub inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Provenance {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            inputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, name: &str, bytes: &[u8]) -> Self {
        self.inputs.push((name.to_string(), content_hash(bytes)));
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# command = {}\n# seed = {}\n# config_hash = {}\n",
            self.command, self.seed, self.config_hash
        );
        for (name, hash) in &self.inputs {
            let _ = writeln!(s, "# {name}_hash = {hash}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub sweep: Sweep,
    pub groups: Vec<(String, KFoldReport)>,
    pub anova_accuracy: AnovaResult,
    pub anova_mcc: AnovaResult,
    pub provenance: Provenance,
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::MaxIterations => "max_iterations",
        StopReason::EarlyStop => "early_stop",
    }
}

impl ExperimentReport {
    pub fn group(&self, name: &str) -> Option<&KFoldReport> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("group,fold,accuracy,mcc,tp,tn,fp,fn,train_size,val_size,test_size,iterations,stop\n");
        for (name, rep) in &self.groups {
            for f in &rep.folds {
                let c = f.counts;
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{},{},{},{},{},{},{},{}",
                    f.fold,
                    f.accuracy,
                    f.mcc,
                    c.tp,
                    c.tn,
                    c.fp,
                    c.fn_,
                    f.train_size,
                    f.val_size,
                    f.test_size,
                    f.final_iteration,
                    stop_name(f.stop_reason)
                );
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("group,accuracy_mean,accuracy_std,mcc_mean,mcc_std\n");
        for (name, rep) in &self.groups {
            let _ = writeln!(
                s,
                "{name},{},{},{},{}",
                rep.accuracy.0, rep.accuracy.1, rep.mcc.0, rep.mcc.1
            );
        }
        s
    }

    pub fn anova_csv(&self) -> String {
        anova_table(&[("accuracy", &self.anova_accuracy), ("mcc", &self.anova_mcc)])
    }

    pub fn to_text(&self) -> String {
        format!(
            "{}# sweep = {}\n\n{}\n{}\n{}",
            self.provenance.to_text(),
            self.sweep.name(),
            self.summary_csv(),
            self.anova_csv(),
            self.folds_csv()
        )
    }

    /// Writes `report.txt`, the three CSV tables and two bar charts.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let labels: Vec<String> = self.groups.iter().map(|(n, _)| n.clone()).collect();
        let (acc, acc_sd): (Vec<f64>, Vec<f64>) = self.groups.iter().map(|(_, r)| r.accuracy).unzip();
        let (mcc, mcc_sd): (Vec<f64>, Vec<f64>) = self.groups.iter().map(|(_, r)| r.mcc).unzip();
        let files = [
            ("report.txt", self.to_text()),
            ("folds.csv", self.folds_csv()),
            ("summary.csv", self.summary_csv()),
            ("anova.csv", self.anova_csv()),
            (
                "accuracy.svg",
                svg::bar_chart("mean accuracy", &labels, &acc, Some(&acc_sd)),
            ),
            ("mcc.svg", svg::bar_chart("mean MCC", &labels, &mcc, Some(&mcc_sd))),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

pub fn anova_table(rows: &[(&str, &AnovaResult)]) -> String {
    let mut s = String::from("metric,f,p,df1,df2,degenerate\n");
    for (metric, a) in rows {
        let _ = writeln!(s, "{metric},{},{},{},{},{}", a.f, a.p, a.df1, a.df2, a.degenerate);
    }
    s
}

/// Checks that `net` can be fed from `ds`.
pub fn check_compatible(net: &NetworkConfig, ds: &Dataset) -> Result<()> {
    if let Some(c) = net.cameras.iter().find(|c| !ds.cameras.contains(c)) {
        return Err(Error::MissingModality(format!(
            "network wants camera {c}, dataset holds {:?}",
            ds.cameras
        )));
    }
    if (net.image_rows, net.image_cols, net.seq_len) != (ds.rows, ds.cols, ds.seq_len) {
        return Err(Error::InvalidArgument(format!(
            "network expects {}×{} images in windows of {}, dataset has {}×{} in windows of {}",
            net.image_rows, net.image_cols, net.seq_len, ds.rows, ds.cols, ds.seq_len
        )));
    }
    Ok(())
}

/// Runs k-fold cross-validation for every group of the sweep on the same
/// folds and initial seed, then one-way ANOVA across groups.
pub fn run_experiment(
    cfg: &RunConfig,
    ds: &Dataset,
    sweep: Sweep,
    provenance: Provenance,
    mut progress: impl FnMut(&str, &FoldResult),
) -> Result<ExperimentReport> {
    let groups = sweep_groups(sweep, &cfg.net);
    for (_, net) in &groups {
        check_compatible(net, ds)?;
    }
    let mut out = Vec::with_capacity(groups.len());
    for (name, net) in groups {
        let rep = run_kfold(&ds.samples, &net, &cfg.train, &cfg.kfold, |f| progress(&name, f))?;
        out.push((name, rep));
    }
    let collect =
        |pick: fn(&KFoldReport) -> Vec<f64>| GroupResults::new(out.iter().map(|(n, r)| (n.clone(), pick(r))).collect());
    let anova_accuracy = anova_oneway(&collect(KFoldReport::accuracies))?;
    let anova_mcc = anova_oneway(&collect(KFoldReport::mccs))?;
    Ok(ExperimentReport {
        sweep,
        groups: out,
        anova_accuracy,
        anova_mcc,
        provenance,
    })
}
