//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness; exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dpm_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use dpm_core::dataset::{
    deserialize_dataset, serialize_dataset, Frame, GenConfig, GrayImage, SequenceSample, STATE_LEN,
};
use dpm_core::dropout::{mix64, run_sfp, sample_masks, DropoutSpec, DropoutTargets, MaskSet};
use dpm_core::net::{
    dpm_forward, dpm_forward_traced, dpm_gradients, ConvLayerSpec, InputMode, NetworkConfig, NetworkParams, StepTrace,
};
use dpm_core::sim::{find_delay_threshold, label_for_delay, Camera, Label, Scenario, SimGeometry};
use dpm_core::stats::{
    accuracy_of, anova_oneway, classify_uncertainty, f_survival, mcc_of, mean_std, ConfusionCounts, GroupResults,
    UncertaintyClass, UncertaintyConfig, REPORT_STD,
};
use dpm_core::train::{evaluate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type SweepResult = (Vec<Summary>, Vec<(String, f64)>, Duration);

fn check(cond: bool, pass: String, fail: String) -> Outcome {
    if cond {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dpm(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dpm"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run dpm: {e}"))?;
    if !out.status.success() {
        return Err(format!("dpm {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_mode: InputMode::ImagesStateAction,
        cameras: vec![Camera::Dashcam],
        image_rows: 6,
        image_cols: 6,
        channels: 1,
        seq_len: 3,
        conv_layers: vec![
            ConvLayerSpec {
                filters: 2,
                kernel: 3,
                stride: 1,
            },
            ConvLayerSpec {
                filters: 2,
                kernel: 3,
                stride: 2,
            },
        ],
        lstm_units: 3,
        merge_width: 4,
        batch_norm: false,
    }
}

fn random_sample(cfg: &NetworkConfig, label: Label, r: &mut ChaCha8Rng) -> SequenceSample {
    let frames = (0..cfg.seq_len)
        .map(|_| {
            let images = cfg
                .cameras
                .iter()
                .map(|&c| {
                    let data = (0..cfg.image_rows * cfg.image_cols).map(|_| r.gen::<u8>()).collect();
                    (c, GrayImage::new(cfg.image_rows, cfg.image_cols, data).unwrap())
                })
                .collect();
            let mut state = [0f32; STATE_LEN];
            for v in &mut state {
                *v = r.gen_range(-1.0..1.0);
            }
            Arc::new(Frame {
                images,
                state,
                action: if r.gen::<bool>() { 1.0 } else { 0.0 },
            })
        })
        .collect();
    SequenceSample {
        frames,
        label,
        episode_id: 0,
        scenario: Scenario::FromRight,
        window_start: 0,
    }
}

fn randomized_params(cfg: &NetworkConfig, seed: u64, scale: f64) -> NetworkParams {
    let mut p = NetworkParams::init(cfg, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-scale..=scale);
        }
    }
    p
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config();
    let p = randomized_params(&cfg, 31, 0.5);
    let mut r = ChaCha8Rng::seed_from_u64(32);
    let batch = [
        random_sample(&cfg, Label::Collision, &mut r),
        random_sample(&cfg, Label::NoCollision, &mut r),
    ];
    let refs: Vec<&SequenceSample> = batch.iter().collect();
    let (_, grads) = dpm_gradients(&p, &cfg, &refs).map_err(|e| e.to_string())?;
    let loss = |q: &NetworkParams| dpm_gradients(q, &cfg, &refs).unwrap().0;
    let eps = 1e-4;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for ti in 0..p.tensors().len() {
        for k in 0..p.tensors()[ti].len() {
            let mut q = p.clone();
            q.tensors_mut()[ti].data_mut()[k] += eps;
            let up = loss(&q);
            q.tensors_mut()[ti].data_mut()[k] -= 2.0 * eps;
            let down = loss(&q);
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[k];
            worst = worst.max((analytic - numeric).abs() / (analytic.abs() + 1e-8));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("{checked} parameters, worst relative error {worst:.2e}, {secs:.1} s"),
        format!("worst relative error {worst:.2e} (limit 1e-4), {secs:.1} s (limit 60 s)"),
    )
}

fn aggregation_oracle() -> Outcome {
    let acc = [
        0.8099, 0.8646, 0.8125, 0.8854, 0.9427, 0.7031, 0.7891, 0.8307, 0.6797, 0.9010,
    ];
    let mcc = [
        0.6218, 0.7326, 0.6275, 0.7704, 0.8817, 0.4435, 0.5787, 0.6672, 0.3597, 0.8012,
    ];
    let (am, asd) = mean_std(&acc, REPORT_STD).map_err(|e| e.to_string())?;
    let (mm, msd) = mean_std(&mcc, REPORT_STD).map_err(|e| e.to_string())?;
    let within = |x: f64, want: f64| (x - want).abs() <= 5e-4;
    let line = format!("accuracy {am:.4}/{asd:.4}, mcc {mm:.4}/{msd:.4}");
    check(
        within(am, 0.8219) && within(asd, 0.0790) && within(mm, 0.6484) && within(msd, 0.1521),
        line.clone(),
        format!("{line}; expected 0.8219/0.0790 and 0.6484/0.1521"),
    )
}

fn f_distribution_oracle() -> Outcome {
    let cases = [
        (8.039, 3, 36, 0.0003, 2e-4),
        (8.262, 3, 36, 0.0003, 2e-4),
        (2.238, 2, 27, 0.126, 5e-3),
        (1.799, 2, 27, 0.185, 5e-3),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (f, d1, d2, want, tol) in cases {
        let p = f_survival(f, d1, d2);
        ok &= (p - want).abs() <= tol;
        parts.push(format!("F({d1},{d2})={f} -> p={p:.4}"));
    }
    let line = parts.join("; ");
    check(ok, line.clone(), line)
}

struct Summary {
    group: String,
    accuracy: f64,
    mcc: f64,
}

fn parse_summary(text: &str) -> Result<Vec<Summary>, String> {
    text.lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let num = |i: usize| {
                c.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or(format!("bad summary row: {l}"))
            };
            Ok(Summary {
                group: c[0].to_string(),
                accuracy: num(1)?,
                mcc: num(3)?,
            })
        })
        .collect()
}

fn anova_ps(dir: &Path) -> Result<Vec<(String, f64)>, String> {
    let text = String::from_utf8(read(&dir.join("anova.csv"))?).map_err(|e| e.to_string())?;
    text.lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let p = c
                .get(2)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or(format!("bad anova row: {l}"))?;
            Ok((c[0].to_string(), p))
        })
        .collect()
}

/// Generates the dataset and runs one sweep with a frozen repository config.
fn sweep(dir: &Path, config: &str, sweep: &str) -> Result<SweepResult, String> {
    let start = Instant::now();
    let cfg = workspace_root().join("configs").join(config);
    let cfg = cfg.to_str().ok_or("non-UTF-8 path")?;
    dpm(dir, &["--config", cfg, "gen-data", "--out", "data.dpmd"])?;
    dpm(
        dir,
        &[
            "--config",
            cfg,
            "experiment",
            "--data",
            "data.dpmd",
            "--sweep",
            sweep,
            "--out",
            "ex",
        ],
    )?;
    let summary = parse_summary(&String::from_utf8_lossy(&read(&dir.join("ex/summary.csv"))?))?;
    Ok((summary, anova_ps(&dir.join("ex"))?, start.elapsed()))
}

fn camera_sweep() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (summary, _, elapsed) = sweep(tmp.path(), "camera_sweep.cfg", "camera")?;
    let all3 = summary.iter().find(|s| s.group == "all3").ok_or("no all3 group")?;
    let best_other = summary
        .iter()
        .filter(|s| s.group != "all3")
        .map(|s| s.mcc)
        .fold(f64::NEG_INFINITY, f64::max);
    let table: Vec<String> = summary
        .iter()
        .map(|s| format!("{} acc {:.4} mcc {:.4}", s.group, s.accuracy, s.mcc))
        .collect();
    let line = format!("{}; {:.0} min", table.join(", "), elapsed.as_secs_f64() / 60.0);
    check(
        summary.len() == 4 && all3.mcc > best_other && all3.accuracy >= 0.70 && elapsed < Duration::from_secs(7200),
        line.clone(),
        line,
    )
}

fn input_sweep() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (summary, ps, _) = sweep(tmp.path(), "input_sweep.cfg", "input_mode")?;
    let modes: Vec<&str> = InputMode::ALL.iter().map(|m| m.name()).collect();
    let complete = modes.iter().all(|m| summary.iter().any(|s| s.group == *m));
    let p_of = |metric: &str| ps.iter().find(|(m, _)| m == metric).map(|(_, p)| *p);
    let (pa, pm) = (p_of("accuracy"), p_of("mcc"));
    let valid = |p: Option<f64>| p.is_some_and(|p| (0.0..=1.0).contains(&p));
    let line = format!("{} groups, p(accuracy) = {pa:?}, p(mcc) = {pm:?}", summary.len());
    check(complete && valid(pa) && valid(pm), line.clone(), line)
}

fn dropout_invariants() -> Outcome {
    let cfg = tiny_config();
    let p = randomized_params(&cfg, 41, 0.6);
    let s = random_sample(&cfg, Label::Collision, &mut ChaCha8Rng::seed_from_u64(42));

    let zero = DropoutSpec::new(0.0, DropoutTargets::ALL).map_err(|e| e.to_string())?;
    let det = dpm_forward(&p, &cfg, &s, None).map_err(|e| e.to_string())?.data()[0];
    let dist = run_sfp(&p, &cfg, &s, &zero, 50, 1).map_err(|e| e.to_string())?;
    let zero_ok = dist.samples().iter().all(|&v| v == det);

    let spec = DropoutSpec::new(0.2, DropoutTargets::ALL).map_err(|e| e.to_string())?;
    let passes = 100u64;
    let mut constant = true;
    let mut logs: Vec<Vec<u64>> = Vec::new();
    for i in 0..passes {
        let masks = sample_masks(&spec, &p, mix64(9, i));
        let mut trace: Vec<StepTrace> = Vec::new();
        dpm_forward_traced(&p, &cfg, &s, Some(&masks), &mut |t| trace.push(t)).map_err(|e| e.to_string())?;
        let mut sites: Vec<_> = trace.iter().map(|t| t.site).collect();
        sites.dedup();
        let mut per_pass = Vec::new();
        for site in sites {
            let steps: Vec<&StepTrace> = trace.iter().filter(|t| t.site == site).collect();
            constant &=
                steps.len() == cfg.seq_len && steps.iter().all(|t| t.mask_fingerprint == steps[0].mask_fingerprint);
            per_pass.push(steps[0].mask_fingerprint);
        }
        logs.push(per_pass);
    }
    let (mut differ, mut pairs) = (0usize, 0usize);
    for a in 0..logs.len() {
        for b in a + 1..logs.len() {
            pairs += 1;
            differ += (logs[a] != logs[b]) as usize;
        }
    }
    let differ_frac = differ as f64 / pairs as f64;

    let (mut zeros, mut total, mut seed) = (0usize, 0usize, 0u64);
    while total < 100_000 {
        let m: MaskSet = sample_masks(&spec, &p, seed);
        let (z, n) = m.zero_count();
        zeros += z;
        total += n;
        seed += 1;
    }
    let rate = spec.rate();
    let se = (rate * (1.0 - rate) / total as f64).sqrt();
    let frac = zeros as f64 / total as f64;
    let frac_ok = (frac - rate).abs() <= 3.0 * se;

    let line = format!(
        "r=0 equals deterministic: {zero_ok}; masks constant over steps: {constant}; \
         pass pairs differing {:.4}; drop fraction {frac:.5} over {total} (|Δ| ≤ {:.5})",
        differ_frac,
        3.0 * se
    );
    check(
        zero_ok && constant && differ_frac >= 0.99 && frac_ok,
        line.clone(),
        line,
    )
}

fn simulator_labels() -> Outcome {
    let g = SimGeometry::default();
    let gen = GenConfig::default();
    let (dt, max) = (gen.dt, gen.max_duration);
    let mut r = ChaCha8Rng::seed_from_u64(71);
    let label = |s, d| label_for_delay(s, d, &g, dt, max).map_err(|e| e.to_string());
    let mut s3 = 0;
    let mut s4 = 0;
    for _ in 0..100 {
        s3 += (label(Scenario::HeadOnMiss, r.gen_range(0.0..3.0))? == Label::NoCollision) as usize;
        s4 += (label(Scenario::HeadOnCollision, r.gen_range(0.0..3.0))? == Label::Collision) as usize;
    }
    let mut parts = vec![format!("scenario 3 misses {s3}/100, scenario 4 collides {s4}/100")];
    let mut ok = s3 == 100 && s4 == 100;
    for s in [Scenario::FromRight, Scenario::FromLeft] {
        let d = find_delay_threshold(s, &g, dt, max, 0.0, 5.0, 1e-6).map_err(|e| e.to_string())?;
        let mut monotone = true;
        for i in 1..=50 {
            let off = 0.5 * i as f64 / 50.0;
            monotone &= label(s, d - off)? == Label::Collision && label(s, d + off)? == Label::NoCollision;
        }
        ok &= monotone && d > 0.5;
        parts.push(format!(
            "scenario {} threshold {d:.4} s, monotone ±0.5 s: {monotone}",
            s.id()
        ));
    }
    let line = parts.join("; ");
    check(ok, line.clone(), line)
}

fn pearson_binary(c: &ConfusionCounts) -> f64 {
    // Predicted and actual indicators per sample.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, x, y) in [(c.tp, 1.0, 1.0), (c.tn, 0.0, 0.0), (c.fp, 1.0, 0.0), (c.fn_, 0.0, 1.0)] {
        for _ in 0..n {
            xs.push(x);
            ys.push(y);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn metrics_oracles() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(81);
    let mut worst_mcc = 0.0f64;
    for _ in 0..1000 {
        let mut draw = || r.gen_range(0..60u64);
        let c = ConfusionCounts::new(draw(), draw(), draw(), draw());
        if c.total() == 0 {
            continue;
        }
        worst_mcc = worst_mcc.max((mcc_of(&c) - pearson_binary(&c)).abs());
    }

    let mut worst_f = 0.0f64;
    for _ in 0..100 {
        let g = r.gen_range(2..6);
        let groups: Vec<(String, Vec<f64>)> = (0..g)
            .map(|i| {
                let n = r.gen_range(2..12);
                (format!("g{i}"), (0..n).map(|_| r.gen_range(0.0..1.0)).collect())
            })
            .collect();
        let res = anova_oneway(&GroupResults::new(groups.clone())).map_err(|e| e.to_string())?;
        // Total minus within, computed without the group-mean decomposition.
        let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let n = all.len() as f64;
        let ss_total = all.iter().map(|x| x * x).sum::<f64>() - all.iter().sum::<f64>().powi(2) / n;
        let ss_within: f64 = groups
            .iter()
            .map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>() - v.iter().sum::<f64>().powi(2) / v.len() as f64)
            .sum();
        let ss_between = ss_total - ss_within;
        let df1 = (g - 1) as f64;
        let df2 = n - g as f64;
        let f = (ss_between / df1) / (ss_within / df2);
        worst_f = worst_f.max((res.f - f).abs() / f.abs().max(1.0));
    }
    let line = format!("max |mcc − pearson| {worst_mcc:.2e}; max F deviation {worst_f:.2e}");
    check(worst_mcc <= 1e-10 && worst_f <= 1e-10, line.clone(), line)
}

fn uncertainty_taxonomy() -> Outcome {
    let cfg = UncertaintyConfig::default();
    let cluster = |r: &mut ChaCha8Rng, mean: f64, std: f64, n: usize| -> Vec<f64> {
        let d = Normal::new(mean, std).unwrap();
        (0..n).map(|_| d.sample(r).clamp(0.0, 1.0)).collect()
    };
    let want = [
        UncertaintyClass::ConflictingBimodal,
        UncertaintyClass::ConfidentUnimodal,
        UncertaintyClass::DiffuseUnimodal,
    ];
    let mut runs = Vec::new();
    for _ in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(91);
        let mut mix = cluster(&mut r, 0.1, 0.02, 500);
        mix.extend(cluster(&mut r, 0.9, 0.02, 500));
        let tight = cluster(&mut r, 0.9, 0.03, 1000);
        let broad = cluster(&mut r, 0.5, 0.15, 1000);
        let got = [&mix, &tight, &broad]
            .iter()
            .map(|v| classify_uncertainty(v, &cfg).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(got);
    }
    let stable = runs.iter().all(|g| *g == runs[0]);
    let names: Vec<&str> = runs[0].iter().map(|c| c.name()).collect();
    let line = format!("{} (stable over 10 runs: {stable})", names.join(", "));
    check(runs[0] == want && stable, line.clone(), line)
}

const SMALL: &str = "\
seed = 5
data.episodes_per_scenario = 3
data.window_stride = 10
data.image_rows = 16
data.image_cols = 16
net.conv_layers = 2x3s2,2x3s2
net.lstm_units = 4
net.merge_width = 8
train.max_iterations = 12
train.validation_interval = 4
train.batch_size = 4
kfold.k = 3
";

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    std::fs::write(d.join("small.cfg"), SMALL).map_err(|e| e.to_string())?;
    for n in ["1", "2"] {
        dpm(
            d,
            &["--config", "small.cfg", "gen-data", "--out", &format!("d{n}.dpmd")],
        )?;
        dpm(
            d,
            &[
                "--config",
                "small.cfg",
                "experiment",
                "--data",
                "d1.dpmd",
                "--sweep",
                "camera",
                "--out",
                &format!("e{n}"),
            ],
        )?;
    }
    let mut identical = read(&d.join("d1.dpmd"))? == read(&d.join("d2.dpmd"))?;
    for f in [
        "report.txt",
        "folds.csv",
        "summary.csv",
        "anova.csv",
        "accuracy.svg",
        "mcc.svg",
    ] {
        identical &= read(&d.join("e1").join(f))? == read(&d.join("e2").join(f))?;
    }

    let bytes = read(&d.join("d1.dpmd"))?;
    let ds = deserialize_dataset(&bytes).map_err(|e| e.to_string())?;
    let dataset_rt = serialize_dataset(&ds).map_err(|e| e.to_string())? == bytes
        && deserialize_dataset(&serialize_dataset(&ds).unwrap()).unwrap() == ds;

    let net = NetworkConfig::default();
    let p = randomized_params(&net, 51, 1.0);
    let enc = encode_checkpoint(&p, &net).map_err(|e| e.to_string())?;
    let (q, net2) = decode_checkpoint(&enc).map_err(|e| e.to_string())?;
    let bits = |x: &NetworkParams| -> Vec<u64> {
        x.tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let checkpoint_rt = bits(&p) == bits(&q) && net2 == net && encode_checkpoint(&q, &net2).unwrap() == enc;

    let (acc, iters) = overfit()?;
    let line = format!(
        "byte-identical reruns: {identical}; dataset round trip: {dataset_rt}; \
         checkpoint round trip: {checkpoint_rt}; overfit accuracy {acc:.3} after {iters} iterations"
    );
    check(
        identical && dataset_rt && checkpoint_rt && acc == 1.0,
        line.clone(),
        line,
    )
}

/// Trains on twenty random sequences. Simulator windows are unsuitable here:
/// crossing episodes just either side of the delay threshold share nearly
/// identical early frames but carry opposite labels.
fn overfit() -> Result<(f64, usize), String> {
    let net = NetworkConfig {
        lstm_units: 6,
        merge_width: 8,
        ..tiny_config()
    };
    let mut r = ChaCha8Rng::seed_from_u64(61);
    let samples: Vec<SequenceSample> = (0..20)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Collision
            } else {
                Label::NoCollision
            };
            random_sample(&net, label, &mut r)
        })
        .collect();
    let tc = TrainConfig {
        batch_size: 20,
        learning_rate: 1e-2,
        max_iterations: 500,
        dropout_in_training: false,
        seed: 4,
        ..TrainConfig::default()
    };
    let p = NetworkParams::init(&net, 4).map_err(|e| e.to_string())?;
    let (trained, report) = train(p, &net, &tc, &samples, &[]).map_err(|e| e.to_string())?;
    let eval = evaluate(&trained, &net, &samples, 0.5).map_err(|e| e.to_string())?;
    Ok((
        accuracy_of(&eval.counts).map_err(|e| e.to_string())?,
        report.final_iteration,
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("fold aggregation oracle", aggregation_oracle),
        ("F-distribution oracle", f_distribution_oracle),
        ("camera sweep", camera_sweep),
        ("input ablation", input_sweep),
        ("MC-dropout invariants", dropout_invariants),
        ("simulator labels", simulator_labels),
        ("metrics oracles", metrics_oracles),
        ("uncertainty taxonomy", uncertainty_taxonomy),
        ("reproducibility and formats", reproducibility),
    ];
    let only: Option<usize> = std::env::var("DPM_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
