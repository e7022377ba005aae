//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dpm_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use dpm_core::dataset::{assemble_dataset, deserialize_dataset, generate_dataset, serialize_dataset, Dataset};
use dpm_core::dropout::run_sfp;
use dpm_core::net::NetworkParams;
use dpm_core::sim::{dump_episode, run_scenario, CameraSpec, Scenario, ScenarioSpec};
use dpm_core::stats::{
    accuracy_of, anova_oneway, classify_uncertainty, fit_gaussian, histogram, histogram_csv, mcc_of, mean_std,
    GroupResults, REPORT_STD,
};
use dpm_core::train::{evaluate, train};

use crate::config::{load_config, ConfigError, RunConfig};
use crate::experiment::{anova_table, check_compatible, run_experiment, Provenance, Sweep};
use crate::svg;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] dpm_core::Error),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for data and model problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dpm", version, about = "Collision-risk prediction with a Bayesian ConvLSTM")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extra `key=value` assignment, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for episodes, folds and stochastic passes.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate episodes and write a DPMD dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on an 80/10/10 split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic evaluation of a model on every sample of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold comparison across cameras or input modes.
    Experiment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Sweep>()))]
        sweep: Sweep,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["episodes", "samples"])]
        fold_unit: Option<String>,
    },
    /// Predictive distribution of one sample from stochastic passes.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Number of stochastic forward passes.
        #[arg(long)]
        sfp: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-way ANOVA over a per-fold CSV with a `group` column.
    Anova {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated metric columns; default every numeric column.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class and per-scenario counts of a dataset.
    Inspect {
        #[arg(long)]
        data: PathBuf,
    },
    /// Render one episode to PGM frames and a state CSV.
    DumpEpisode {
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        delay: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| dpm_core::Error::io(path, e).into())
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| dpm_core::Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| dpm_core::Error::io(path, e).into())
}

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| dpm_core::Error::io(dir, e).into())
}

fn config_for(common: &Common, extra: &[String]) -> CliResult<RunConfig> {
    let mut sets = common.set.clone();
    if let Some(s) = common.seed {
        sets.push(format!("seed={s}"));
    }
    sets.extend_from_slice(extra);
    Ok(load_config(common.config.as_deref(), &sets)?)
}

/// Dataset plus its raw bytes (for the provenance hash).
fn load_dataset(path: &Path) -> CliResult<(Dataset, Vec<u8>)> {
    let bytes = read(path)?;
    Ok((deserialize_dataset(&bytes)?, bytes))
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be ≥ 1".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let common = &cli.common;
    match &cli.command {
        Command::GenData { out } => gen_data(&config_for(common, &[])?, out),
        Command::Train { data, out } => cmd_train(&config_for(common, &[])?, data, out),
        Command::Eval { model, data, out } => cmd_eval(&config_for(common, &[])?, model, data, out.as_deref()),
        Command::Experiment {
            data,
            sweep,
            out,
            fold_unit,
        } => {
            let extra: Vec<String> = fold_unit.iter().map(|u| format!("kfold.unit={u}")).collect();
            cmd_experiment(&config_for(common, &extra)?, data, *sweep, out)
        }
        Command::Predict {
            model,
            data,
            index,
            sfp,
            out,
        } => {
            let extra: Vec<String> = sfp.iter().map(|n| format!("predict.passes={n}")).collect();
            cmd_predict(&config_for(common, &extra)?, model, data, *index, out)
        }
        Command::Anova { input, metrics, out } => {
            cmd_anova(&config_for(common, &[])?, input, metrics.as_deref(), out.as_deref())
        }
        Command::Inspect { data } => {
            config_for(common, &[])?;
            cmd_inspect(data)
        }
        Command::DumpEpisode { scenario, delay, out } => cmd_dump(&config_for(common, &[])?, *scenario, *delay, out),
    }
}

/// Writes the dataset and `<out>.report.txt`; prints the report.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ds = generate_dataset(&cfg.gen, cfg.seed)?;
    let bytes = serialize_dataset(&ds)?;
    write(out, &bytes)?;
    let prov = Provenance::new("gen-data", cfg).with_input("dataset", &bytes);
    let report = format!("{}{}", prov.to_text(), ds.summary().to_csv());
    write(&sibling(out, "report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn metrics_csv(c: &dpm_core::stats::ConfusionCounts) -> CliResult<String> {
    Ok(format!(
        "n,tp,tn,fp,fn,accuracy,mcc\n{},{},{},{},{},{},{}\n",
        c.total(),
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        accuracy_of(c)?,
        mcc_of(c)
    ))
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    let (ds, bytes) = load_dataset(data)?;
    check_compatible(&cfg.net, &ds)?;
    let split = assemble_dataset(ds.samples, cfg.split, cfg.seed)?;
    let init = NetworkParams::init(&cfg.net, cfg.seed)?;
    let (params, report) = train(init, &cfg.net, &cfg.train, &split.train, &split.validate)?;
    eprintln!(
        "trained {} iterations in {:.1?} ({:?}, best at {})",
        report.final_iteration, report.wall_time, report.stop_reason, report.best_iteration
    );
    mkdir(out)?;
    let model = encode_checkpoint(&params, &cfg.net)?;
    write(&out.join("model.dpmw"), &model)?;
    write(&out.join("curve.csv"), report.to_csv())?;
    let train_pts: Vec<(f64, f64)> = report
        .curve
        .iter()
        .map(|p| (p.iteration as f64, p.train_loss))
        .collect();
    let val_pts: Vec<(f64, f64)> = report
        .curve
        .iter()
        .filter_map(|p| p.val_loss.map(|v| (p.iteration as f64, v)))
        .collect();
    write(
        &out.join("curve.svg"),
        svg::line_chart("cross-entropy loss", &[("train", train_pts), ("validate", val_pts)]),
    )?;
    let prov = Provenance::new("train", cfg)
        .with_input("dataset", &bytes)
        .with_input("model", &model);
    let mut text = prov.to_text();
    let _ = writeln!(
        text,
        "# train = {}, validate = {}, test = {}\n# final_iteration = {}, best_iteration = {}",
        split.train.len(),
        split.validate.len(),
        split.test.len(),
        report.final_iteration,
        report.best_iteration
    );
    if !split.test.is_empty() {
        let e = evaluate(&params, &cfg.net, &split.test, cfg.kfold.threshold)?;
        text.push_str(&metrics_csv(&e.counts)?);
    }
    write(&out.join("config.txt"), cfg.to_text())?;
    write(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, model: &Path, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let model_bytes = read(model)?;
    let (params, net) = decode_checkpoint(&model_bytes)?;
    let (ds, bytes) = load_dataset(data)?;
    check_compatible(&net, &ds)?;
    let e = evaluate(&params, &net, &ds.samples, cfg.kfold.threshold)?;
    let prov = Provenance::new("eval", cfg)
        .with_input("model", &model_bytes)
        .with_input("dataset", &bytes);
    let text = format!("{}{}", prov.to_text(), metrics_csv(&e.counts)?);
    if let Some(p) = out {
        write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn cmd_experiment(cfg: &RunConfig, data: &Path, sweep: Sweep, out: &Path) -> CliResult<()> {
    let (ds, bytes) = load_dataset(data)?;
    let prov = Provenance::new("experiment", cfg).with_input("dataset", &bytes);
    let report = run_experiment(cfg, &ds, sweep, prov, |group, f| {
        eprintln!(
            "{group} fold {}: accuracy {:.4} mcc {:.4} ({} iterations)",
            f.fold, f.accuracy, f.mcc, f.final_iteration
        )
    })?;
    report.write(out)?;
    write(&out.join("config.txt"), cfg.to_text())?;
    print!("{}\n{}", report.summary_csv(), report.anova_csv());
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, model: &Path, data: &Path, index: usize, out: &Path) -> CliResult<()> {
    let model_bytes = read(model)?;
    let (params, net) = decode_checkpoint(&model_bytes)?;
    let (ds, bytes) = load_dataset(data)?;
    check_compatible(&net, &ds)?;
    let sample = ds.samples.get(index).ok_or_else(|| {
        dpm_core::Error::InvalidArgument(format!(
            "sample index {index} out of range (dataset has {})",
            ds.samples.len()
        ))
    })?;
    let dist = run_sfp(&params, &net, sample, &cfg.train.dropout, cfg.predict.passes, cfg.seed)?;
    let counts = histogram(dist.samples(), cfg.predict.bins)?;
    mkdir(out)?;
    write(&out.join("samples.csv"), dist.to_csv())?;
    write(&out.join("histogram.csv"), histogram_csv(&counts))?;
    let labels: Vec<String> = (0..counts.len())
        .map(|i| format!("{:.2}", i as f64 / counts.len() as f64))
        .collect();
    let heights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    write(
        &out.join("histogram.svg"),
        svg::bar_chart("P(collision) over stochastic passes", &labels, &heights, None),
    )?;
    let mut fit_csv = String::from("mean,variance,std,class\n");
    match (
        fit_gaussian(dist.samples()),
        classify_uncertainty(dist.samples(), &cfg.uncertainty),
    ) {
        (Ok(fit), Ok(class)) => {
            let _ = writeln!(fit_csv, "{},{},{},{class}", fit.mean, fit.variance, fit.std());
        }
        (Ok(fit), Err(e)) => {
            eprintln!("not classified: {e}");
            let _ = writeln!(fit_csv, "{},{},{},", fit.mean, fit.variance, fit.std());
        }
        (Err(e), _) => eprintln!("no Gaussian fit: {e}"),
    }
    write(&out.join("fit.csv"), &fit_csv)?;
    let prov = Provenance::new("predict", cfg)
        .with_input("model", &model_bytes)
        .with_input("dataset", &bytes);
    let text = format!(
        "{}# index = {index}\n# label = {}\n# passes = {}\n{fit_csv}",
        prov.to_text(),
        sample.label.name(),
        dist.len()
    );
    write(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Parses `group,<metric>...` rows. Rows whose group is `mean` or `std` are
/// skipped, so a k-fold summary can be fed back. Without `wanted`, every
/// column other than `group` and `fold` that is numeric on all rows is a
/// metric.
pub fn parse_group_csv(text: &str, wanted: Option<&[String]>) -> CliResult<Vec<(String, GroupResults)>> {
    let invalid = |m: String| CliError::Data(dpm_core::Error::InvalidArgument(m));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| invalid("empty CSV".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let gcol = header
        .iter()
        .position(|&h| h == "group")
        .ok_or_else(|| invalid("CSV needs a 'group' column".into()))?;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(invalid(format!(
                "CSV row {} has {} cells, header has {}",
                n + 2,
                cells.len(),
                header.len()
            )));
        }
        if cells[gcol] != "mean" && cells[gcol] != "std" {
            rows.push((n + 2, cells));
        }
    }
    let metrics: Vec<usize> = match wanted {
        Some(names) => names
            .iter()
            .map(|m| {
                header
                    .iter()
                    .position(|h| h == m)
                    .ok_or_else(|| invalid(format!("CSV has no column '{m}'")))
            })
            .collect::<CliResult<_>>()?,
        None => (0..header.len())
            .filter(|&i| i != gcol && header[i] != "fold")
            .filter(|&i| rows.iter().all(|(_, c)| c[i].parse::<f64>().is_ok()))
            .collect(),
    };
    if metrics.is_empty() {
        return Err(invalid("CSV has no metric columns".into()));
    }
    let mut out: Vec<(String, GroupResults)> = metrics
        .iter()
        .map(|&i| (header[i].to_string(), GroupResults::default()))
        .collect();
    for (line, cells) in &rows {
        let group = cells[gcol];
        for (slot, &i) in out.iter_mut().zip(&metrics) {
            let v: f64 = cells[i]
                .parse()
                .map_err(|_| invalid(format!("CSV row {line}: '{}' is not a number", cells[i])))?;
            let groups = &mut slot.1.groups;
            match groups.iter_mut().find(|(g, _)| g == group) {
                Some((_, vals)) => vals.push(v),
                None => groups.push((group.to_string(), vec![v])),
            }
        }
    }
    Ok(out)
}

pub fn cmd_anova(cfg: &RunConfig, input: &Path, metrics: Option<&[String]>, out: Option<&Path>) -> CliResult<()> {
    let bytes = read(input)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| dpm_core::Error::InvalidArgument(format!("{} is not UTF-8", input.display())))?;
    let metrics = parse_group_csv(&text, metrics)?;
    let mut stats = String::from("group,metric,n,mean,std\n");
    let mut results = Vec::new();
    for (metric, groups) in &metrics {
        for (g, vals) in &groups.groups {
            let (m, s) = mean_std(vals, REPORT_STD)?;
            let _ = writeln!(stats, "{g},{metric},{},{m},{s}", vals.len());
        }
        results.push((metric.as_str(), anova_oneway(groups)?));
    }
    let rows: Vec<(&str, &_)> = results.iter().map(|(m, a)| (*m, a)).collect();
    let prov = Provenance::new("anova", cfg).with_input("input", &bytes);
    let report = format!("{}{}\n{stats}", prov.to_text(), anova_table(&rows));
    if let Some(p) = out {
        write(p, &report)?;
    }
    print!("{report}");
    Ok(())
}

pub fn cmd_inspect(data: &Path) -> CliResult<()> {
    let (ds, bytes) = load_dataset(data)?;
    print!(
        "# dataset_hash = {}\n# cameras = {}\n# image = {}x{}\n# seq_len = {}\n{}",
        crate::experiment::content_hash(&bytes),
        dpm_core::net::format_cameras(&ds.cameras),
        ds.rows,
        ds.cols,
        ds.seq_len,
        ds.summary().to_csv()
    );
    Ok(())
}

pub fn cmd_dump(cfg: &RunConfig, scenario: u8, delay: f64, out: &Path) -> CliResult<()> {
    let scenario = Scenario::from_id(scenario).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = ScenarioSpec {
        scenario,
        delay,
        dt: cfg.gen.dt,
        max_duration: cfg.gen.max_duration,
    };
    let cams: Vec<CameraSpec> = cfg
        .gen
        .cameras
        .iter()
        .map(|&c| CameraSpec::default_for(c, cfg.gen.rows, cfg.gen.cols))
        .collect();
    let ep = run_scenario(&spec, &cfg.gen.geometry, &cams)?;
    dump_episode(&ep, out)?;
    println!(
        "scenario {} delay {delay}: {} frames, label {}, event at {:.2} s",
        scenario.id(),
        ep.frames.len(),
        ep.label.name(),
        ep.event_time
    );
    Ok(())
}

/// Parses arguments, runs, and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
