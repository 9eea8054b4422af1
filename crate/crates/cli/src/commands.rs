use crate::config::{Config, DataSection, ModelSection, Task};
use crate::report::{LatencyStats, RunReport};
use anyhow::{bail, Context, Result};
use fdiag::attribution::{evidence_chain_with_maps, grid_to_delimited};
use fdiag::cascade::{
    evaluate_cascade, expected_cost, sweep_to_delimited, threshold_sweep, CascadeConfig, CostModel,
};
use fdiag::channel_select::{
    fuse_select, grad_importance, mi_scores, se_channel_weights, ChannelScores, OverrideFile,
};
use fdiag::checkpoint;
use fdiag::data::{
    balance_dataset, ingest_and_preprocess, read_dataset, read_flight_csv, stratified_split, synth_generate,
    write_dataset, Dataset, PreprocessConfig, SynthSpec,
};
use fdiag::models::{ModelSpec, Network};
use fdiag::training::{evaluate, fit, mean_prediction_entropy, DistillConfig, FitOutcome, TrainConfig};
use fdiag::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_FILE: &str = "model.litn";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GRID_DIR: &str = "grids";

// -- data ---------------------------------------------------------------------

/// The dataset named by the config: a container, a flight directory, or
/// the synthetic generator.
pub fn build_dataset(cfg: &Config) -> Result<Dataset> {
    let d = &cfg.data;
    let mode = cfg.training.parallelism;
    if let Some(dir) = &d.dataset {
        return read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()));
    }
    if let Some(dir) = &d.flights {
        let mut flights = Vec::new();
        for (label, class_dir) in class_dirs(dir)? {
            let mut files: Vec<PathBuf> = fs::read_dir(&class_dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
            files.sort();
            for f in files {
                flights.push(read_flight_csv(&f, label).with_context(|| format!("reading {}", f.display()))?);
            }
        }
        let pre = PreprocessConfig { steps: d.steps, min_length: d.min_length, max_missing: d.max_missing };
        return Ok(ingest_and_preprocess(&flights, &pre, mode)?);
    }
    let mut spec = SynthSpec::standard(d.classes, d.channels, d.steps, d.per_class, cfg.run.seed);
    let amplitude = d.amplitude.unwrap_or(fdiag::data::STANDARD_AMPLITUDE * d.noise);
    spec.noise = d.noise;
    spec.distractors = d.distractors;
    for f in &mut spec.faults {
        f.amplitude = amplitude;
    }
    Ok(synth_generate(&spec, mode)?)
}

/// `<dir>/<class index>/` subdirectories, sorted by class.
fn class_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading flight directory {}", dir.display()))? {
        let p = e?.path();
        if !p.is_dir() {
            continue;
        }
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let label: usize = name
            .parse()
            .with_context(|| format!("flight subdirectory {name:?} is not a class index"))?;
        out.push((label, p));
    }
    if out.is_empty() {
        bail!("{} has no class subdirectories", dir.display());
    }
    out.sort();
    Ok(out)
}

pub fn task_view(ds: Dataset, task: Task) -> Dataset {
    match task {
        Task::Multiclass => ds,
        Task::Detection => ds.binary(),
        Task::Identification => ds.faults_only(),
    }
}

pub struct Splits {
    pub fit: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Train/test by `train_fraction`, then validation carved from train.
pub fn splits(ds: &Dataset, cfg: &Config) -> Result<Splits> {
    let seed = cfg.run.seed;
    let (train, test) = stratified_split(ds, cfg.data.train_fraction, seed)?;
    let (mut fit, val) = stratified_split(&train, 1.0 - cfg.data.val_fraction, seed.wrapping_add(1))?;
    if cfg.data.augment {
        fit = balance_dataset(&fit, cfg.data.warp_intensity, seed)?;
    }
    Ok(Splits { fit, val, test })
}

fn class_counts(ds: &Dataset) -> Value {
    json!(ds.class_counts())
}

// -- shared training ------------------------------------------------------------

/// Single-sample inference latency over `runs` timed calls after `warmup`.
pub fn measure_latency<R: Real>(net: &Network<R>, x: &Tensor<R>, warmup: usize, runs: usize) -> Result<LatencyStats> {
    for _ in 0..warmup {
        net.logits(x)?;
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(net.logits(std::hint::black_box(x))?);
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&ms))
}

fn one_sample<R: Real>(ds: &Dataset) -> Result<Tensor<R>> {
    let s = ds.samples.first().context("no samples to time inference on")?;
    Ok(s.tensor::<R>().reshape(&[1, s.channels, s.steps])?)
}

fn train_config(cfg: &Config, log: Option<PathBuf>) -> TrainConfig {
    TrainConfig { log_path: log, ..cfg.training.clone() }
}

struct Trained<R> {
    outcome: FitOutcome<R>,
    summary: BTreeMap<String, Value>,
}

/// Fits `spec` on the split and scores the best checkpoint on the test set.
fn train_and_score<R: Real>(
    spec: &ModelSpec,
    sp: &Splits,
    tc: &TrainConfig,
    teacher: Option<(&Network<R>, &DistillConfig)>,
) -> Result<Trained<R>> {
    let init = Network::<R>::new(spec, tc.seed)?;
    let start = Instant::now();
    let outcome = fit(&init, &sp.fit, &sp.val, tc, teacher)?;
    let fit_s = start.elapsed().as_secs_f64();
    let ev = evaluate(&outcome.model, &sp.test, tc.eval_batch, tc.parallelism)?;
    let m = &ev.metrics;
    let mut summary = BTreeMap::new();
    summary.insert("params".into(), json!(outcome.model.param_report().total));
    summary.insert("flops".into(), json!(outcome.model.flop_report(sp.test.steps).total));
    summary.insert("test_accuracy".into(), json!(m.accuracy));
    summary.insert("test_macro_f1".into(), json!(m.macro_f1));
    summary.insert("test_macro_precision".into(), json!(m.macro_precision));
    summary.insert("test_macro_recall".into(), json!(m.macro_recall));
    summary.insert("test_loss".into(), json!(ev.loss));
    summary.insert("mean_prediction_entropy".into(), json!(mean_prediction_entropy(&ev.logits)));
    summary.insert("best_epoch".into(), json!(outcome.best_epoch));
    summary.insert("best_val_metric".into(), json!(outcome.best_metric));
    summary.insert("epochs_run".into(), json!(outcome.history.len()));
    summary.insert("fit_seconds".into(), json!(fit_s));
    Ok(Trained { outcome, summary })
}

fn load_model<R: Real>(path: &Path) -> Result<Network<R>> {
    let (net, _) = checkpoint::load::<R>(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(net)
}

fn provenance(command: &str, cfg: &Config, extra: &[(&str, Value)]) -> Result<BTreeMap<String, Value>> {
    let mut p = BTreeMap::new();
    p.insert("command".to_string(), json!(command));
    p.insert("config".to_string(), serde_json::to_value(cfg)?);
    for (k, v) in extra {
        p.insert(k.to_string(), v.clone());
    }
    Ok(p)
}

fn counters<R: Real>(report: &mut RunReport, prefix: &str, net: &Network<R>, steps: usize) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    report.counters.insert(key("params"), net.param_report().total as u64);
    report.counters.insert(key("flops"), net.flop_report(steps).total);
}

fn insert_all(report: &mut RunReport, prefix: &str, summary: &BTreeMap<String, Value>) {
    for (k, v) in summary {
        report.metrics.insert(format!("{prefix}{k}"), v.clone());
    }
}

// -- commands ---------------------------------------------------------------------

pub fn gen_data(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let ds = report.timed("generate", || build_dataset(cfg))?;
    let dir = cfg.run.out.join(DATASET_DIR);
    report.timed("write", || write_dataset(&ds, &dir))?;
    report.metric("manifest", ds.manifest())?;
    report.metric("path", dir.display().to_string())?;
    Ok(())
}

pub fn train<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let ds = task_view(report.timed("data", || build_dataset(cfg))?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    report.metric("split_class_counts", json!({"fit": class_counts(&sp.fit), "val": class_counts(&sp.val), "test": class_counts(&sp.test)}))?;
    let spec = cfg.model.spec(ds.channels(), ds.classes)?;
    let tc = train_config(cfg, Some(cfg.run.out.join(HISTORY_FILE)));
    let t = report.timed("fit", || train_and_score::<R>(&spec, &sp, &tc, None))?;
    insert_all(report, "", &t.summary);
    let model = &t.outcome.model;
    let prov = provenance("train", cfg, &[("best_epoch", json!(t.outcome.best_epoch)), ("test", json!(t.summary))])?;
    checkpoint::save(model, prov, &cfg.run.out.join(MODEL_FILE))?;
    counters(report, "", model, ds.steps);
    let x = one_sample::<R>(&sp.test)?;
    let lat = report.timed("latency", || measure_latency(model, &x, cfg.bench.warmup, cfg.bench.runs))?;
    report.latency.insert("model".into(), lat);
    Ok(())
}

pub fn distill<R: Real>(cfg: &Config, teacher_path: &Path, report: &mut RunReport) -> Result<()> {
    let teacher = load_model::<R>(teacher_path)?;
    let ds = task_view(report.timed("data", || build_dataset(cfg))?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    let spec = cfg.model.spec(ds.channels(), ds.classes)?;
    let tc = train_config(cfg, Some(cfg.run.out.join(HISTORY_FILE)));
    let t = report.timed("fit", || train_and_score::<R>(&spec, &sp, &tc, Some((&teacher, &cfg.distill))))?;
    insert_all(report, "student.", &t.summary);
    let tev = evaluate(&teacher, &sp.test, tc.eval_batch, tc.parallelism)?;
    report.metric("teacher.test_accuracy", tev.metrics.accuracy)?;
    report.metric("teacher.test_macro_f1", tev.metrics.macro_f1)?;
    report.metric("teacher.test_macro_recall", tev.metrics.macro_recall)?;
    report.metric("teacher.mean_prediction_entropy", mean_prediction_entropy(&tev.logits))?;
    report.metric("accuracy_gap", tev.metrics.accuracy - t.summary["test_accuracy"].as_f64().unwrap_or(0.0))?;
    let prov = provenance(
        "distill",
        cfg,
        &[("teacher", json!(teacher_path.display().to_string())), ("best_epoch", json!(t.outcome.best_epoch))],
    )?;
    checkpoint::save(&t.outcome.model, prov, &cfg.run.out.join(MODEL_FILE))?;
    counters(report, "student", &t.outcome.model, ds.steps);
    counters(report, "teacher", &teacher, ds.steps);
    Ok(())
}

pub fn select_channels<R: Real>(
    cfg: &Config,
    model_path: &Path,
    overrides: Option<&Path>,
    report: &mut RunReport,
) -> Result<()> {
    let model = load_model::<R>(model_path)?;
    let ds = task_view(build_dataset(cfg)?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    let mode = cfg.training.parallelism;
    let batch = cfg.training.eval_batch;
    let mi = report.timed("mutual_information", || mi_scores(&sp.fit, cfg.channel_select.bins, mode))?;
    let grad = report.timed("gradient", || grad_importance(&model, &sp.val, batch, mode))?;
    let se = report
        .timed("se_gate", || se_channel_weights(&model, &sp.val, batch, mode))
        .context("channel selection needs a model trained with an input gate (model.gate_reduction > 0)")?;
    let path = overrides.map(Path::to_path_buf).or_else(|| cfg.channel_select.overrides.clone());
    let file = match &path {
        Some(p) => OverrideFile::load(p).with_context(|| format!("reading overrides {}", p.display()))?,
        None => OverrideFile::default(),
    };
    let sel = fuse_select(&ChannelScores::new(mi, grad, se)?, &file.overrides)?;
    let names = |idx: &[usize]| idx.iter().map(|&c| ds.channel_names[c].clone()).collect::<Vec<_>>();
    report.metric("retained_names", names(&sel.retained))?;
    report.metric("excluded_names", names(&sel.excluded))?;
    report.metric("selection", &sel)?;
    Ok(())
}

pub fn explain<R: Real>(
    cfg: &Config,
    model_path: &Path,
    class: Option<usize>,
    samples: Option<usize>,
    report: &mut RunReport,
) -> Result<()> {
    let model = load_model::<R>(model_path)?;
    let ds = task_view(build_dataset(cfg)?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    let a = &cfg.attribution;
    let class = class.or(a.class).unwrap_or(usize::from(ds.classes > 1));
    let n = samples.unwrap_or(a.samples);
    if class >= model.classes() {
        bail!("class {class} out of range for a {}-class model", model.classes());
    }
    let noise = (!a.noise_levels.is_empty()).then_some((a.noise_levels.as_slice(), cfg.run.seed));
    let (chain, maps) =
        report.timed("attribution", || evidence_chain_with_maps(&model, &sp.test, class, n, &a.methods, noise))?;
    report.metric("evidence_chain", &chain)?;
    report.metric("consensus_names", chain.consensus.iter().map(|&c| &ds.channel_names[c]).collect::<Vec<_>>())?;
    if a.dump_grids {
        let dir = cfg.run.out.join(GRID_DIR);
        fs::create_dir_all(&dir)?;
        for m in &maps {
            let path = dir.join(format!("{}.csv", m.method.name()));
            fs::write(&path, grid_to_delimited(m, &ds.channel_names)?)?;
        }
        report.metric("grid_dir", dir.display().to_string())?;
    }
    Ok(())
}

pub fn cascade<R: Real>(
    cfg: &Config,
    stage1_path: &Path,
    stage2_path: &Path,
    threshold: Option<f64>,
    report: &mut RunReport,
) -> Result<()> {
    let s1 = load_model::<R>(stage1_path)?;
    let s2 = load_model::<R>(stage2_path)?;
    let ds = build_dataset(cfg)?;
    let test = splits(&ds, cfg)?.test;
    let mut cc = CascadeConfig::new(&s1, &s2);
    cc.threshold = threshold.unwrap_or(cfg.cascade.threshold);
    let ev = report.timed("cascade", || {
        evaluate_cascade(&test, &cc, cfg.training.eval_batch, cfg.training.parallelism)
    })?;
    let (c1, c2) = (s1.flop_report(ds.steps).total, s2.flop_report(ds.steps).total);
    let p_normal = test.samples.iter().filter(|s| s.label == 0).count() as f64 / test.len() as f64;
    let cost = CostModel::new(c1 as f64, c2 as f64, p_normal)?;
    report.metric("threshold", cc.threshold)?;
    report.metric("metrics", &ev.metrics)?;
    report.metric("stage2_fraction", ev.stage2_fraction)?;
    report.metric("normal_fraction", p_normal)?;
    report.metric("expected_flops_per_sample", expected_cost(&cost))?;
    report.metric("observed_flops_per_sample", c1 as f64 + ev.stage2_fraction * c2 as f64)?;
    counters(report, "stage1", &s1, ds.steps);
    counters(report, "stage2", &s2, ds.steps);
    let x = one_sample::<R>(&test)?;
    for (name, net) in [("stage1", &s1), ("stage2", &s2)] {
        report.latency.insert(name.into(), measure_latency(net, &x, cfg.bench.warmup, cfg.bench.runs)?);
    }
    Ok(())
}

pub fn sweep_threshold<R: Real>(cfg: &Config, model_path: &Path, report: &mut RunReport) -> Result<()> {
    let model = load_model::<R>(model_path)?;
    let ds = build_dataset(cfg)?;
    let test = splits(&ds, cfg)?.test;
    let rows = report.timed("sweep", || {
        threshold_sweep(&model, &test, &cfg.cascade.thresholds, cfg.training.eval_batch, cfg.training.parallelism)
    })?;
    fs::write(cfg.run.out.join(SWEEP_FILE), sweep_to_delimited(&rows, ','))?;
    report.metric("sweep", &rows)?;
    Ok(())
}

fn bench_input<R: Real>(c: usize, t: usize, seed: u64) -> Tensor<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..c * t).map(|_| rng.random::<f64>()).collect();
    Tensor::from_f64(&[1, c, t], &data).expect("shape matches data")
}

pub fn bench<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let b = &cfg.bench;
    let x = bench_input::<R>(b.channels, b.steps, cfg.run.seed);
    let mut rows = Vec::new();
    for label in &b.branches {
        let section = ModelSection {
            task: Task::Multiclass,
            branches: label.clone(),
            kernels: None,
            depth: b.depth,
            filters: b.filters,
            bottleneck: b.bottleneck,
            gate_reduction: 0,
            ..cfg.model.clone()
        };
        let net = Network::<R>::new(&section.spec(b.channels, b.classes)?, cfg.run.seed)?;
        counters(report, label, &net, b.steps);
        let lat = report.timed(&format!("{label}.latency"), || measure_latency(&net, &x, b.warmup, b.runs))?;
        rows.push((label.clone(), net.param_report().total as f64, net.flop_report(b.steps).total as f64, lat.mean_ms));
        report.latency.insert(label.clone(), lat);
    }
    if let Some((base, bp, bf, bl)) = rows.last().cloned() {
        let mut rel = BTreeMap::new();
        for (label, p, f, l) in &rows {
            rel.insert(label.clone(), json!({"params": p / bp, "flops": f / bf, "latency": l / bl}));
        }
        report.metric(&format!("relative_to_{base}"), rel)?;
    }
    report.metric("threads", 1)?;
    Ok(())
}

// -- ablations ------------------------------------------------------------------

fn ablate_models<R: Real>(
    cfg: &Config,
    variants: Vec<(String, ModelSection)>,
    report: &mut RunReport,
) -> Result<Vec<BTreeMap<String, Value>>> {
    let ds = task_view(build_dataset(cfg)?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    let tc = train_config(cfg, None);
    let mut out = Vec::new();
    for (name, section) in variants {
        let spec = section.spec(ds.channels(), ds.classes)?;
        let t = report.timed(&name, || train_and_score::<R>(&spec, &sp, &tc, None))?;
        counters(report, &name, &t.outcome.model, ds.steps);
        report.metric(&format!("runs.{name}"), &t.summary)?;
        out.push(t.summary);
    }
    Ok(out)
}

fn strictly_increasing(v: &[BTreeMap<String, Value>], key: &str) -> bool {
    let xs: Vec<f64> = v.iter().filter_map(|s| s.get(key).and_then(Value::as_f64)).collect();
    xs.len() == v.len() && xs.windows(2).all(|w| w[0] < w[1])
}

pub fn ablate_branches<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let variants = cfg
        .ablate
        .branches
        .iter()
        .map(|b| (b.clone(), ModelSection { branches: b.clone(), kernels: None, ..cfg.model.clone() }))
        .collect();
    let runs = ablate_models::<R>(cfg, variants, report)?;
    report.metric("params_monotone", strictly_increasing(&runs, "params"))?;
    Ok(())
}

pub fn ablate_depth<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let variants = cfg
        .ablate
        .depths
        .iter()
        .map(|&d| (format!("depth{d}"), ModelSection { depth: d, ..cfg.model.clone() }))
        .collect();
    let runs = ablate_models::<R>(cfg, variants, report)?;
    report.metric("params_monotone", strictly_increasing(&runs, "params"))?;
    Ok(())
}

pub fn ablate_kernel<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let variants = cfg
        .ablate
        .kernels
        .iter()
        .map(|&k| {
            let m = ModelSection { branches: "1+1".into(), kernels: Some(vec![k]), ..cfg.model.clone() };
            (format!("k{k}"), m)
        })
        .collect();
    ablate_models::<R>(cfg, variants, report)?;
    Ok(())
}

/// Keeps `fraction` of every fault class (at least one sample each).
fn thin_faults(ds: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..ds.classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == class).collect();
        if class > 0 {
            idx.shuffle(&mut rng);
            let n = ((idx.len() as f64 * fraction).round() as usize).clamp(1.min(idx.len()), idx.len());
            idx.truncate(n);
            idx.sort_unstable();
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

pub fn ablate_augment<R: Real>(cfg: &Config, report: &mut RunReport) -> Result<()> {
    let frac = cfg.ablate.minority_fraction;
    if !(frac > 0.0 && frac <= 1.0) {
        bail!("ablate.minority_fraction must lie in (0, 1], got {frac}");
    }
    let ds = task_view(build_dataset(cfg)?, cfg.model.task);
    let plain = Config { data: DataSection { augment: false, ..cfg.data.clone() }, ..cfg.clone() };
    let base = splits(&ds, &plain)?;
    let thin = thin_faults(&base.fit, frac, cfg.run.seed);
    report.metric("thinned_class_counts", class_counts(&thin))?;
    let spec = cfg.model.spec(ds.channels(), ds.classes)?;
    let tc = train_config(cfg, None);
    for (name, intensity) in [("none", None), ("duplicate", Some(0.0)), ("timewarp", Some(cfg.data.warp_intensity))] {
        let fit_set = match intensity {
            None => thin.clone(),
            Some(s) => balance_dataset(&thin, s, cfg.run.seed)?,
        };
        let sp = Splits { fit: fit_set, val: base.val.clone(), test: base.test.clone() };
        let t = report.timed(name, || train_and_score::<R>(&spec, &sp, &tc, None))?;
        let mut summary = t.summary;
        summary.insert("train_class_counts".into(), class_counts(&sp.fit));
        report.metric(&format!("runs.{name}"), summary)?;
    }
    Ok(())
}

pub fn ablate_kd_grid<R: Real>(cfg: &Config, teacher_path: Option<&Path>, report: &mut RunReport) -> Result<()> {
    let ds = task_view(build_dataset(cfg)?, cfg.model.task);
    let sp = splits(&ds, cfg)?;
    let tc = train_config(cfg, None);
    let teacher = match teacher_path {
        Some(p) => load_model::<R>(p)?,
        None => {
            let section = ModelSection { branches: cfg.ablate.teacher_branches.clone(), kernels: None, ..cfg.model.clone() };
            let spec = section.spec(ds.channels(), ds.classes)?;
            let t = report.timed("teacher", || train_and_score::<R>(&spec, &sp, &tc, None))?;
            report.metric("runs.teacher", &t.summary)?;
            t.outcome.model
        }
    };
    counters(report, "teacher", &teacher, ds.steps);
    let spec = cfg.model.spec(ds.channels(), ds.classes)?;
    let hard = report.timed("hard", || train_and_score::<R>(&spec, &sp, &tc, None))?;
    report.metric("runs.hard", &hard.summary)?;
    for &tau in &cfg.ablate.taus {
        for &alpha in &cfg.ablate.alphas {
            let d = DistillConfig { tau, alpha };
            let name = format!("tau{tau}_alpha{alpha}");
            let t = report.timed(&name, || train_and_score::<R>(&spec, &sp, &tc, Some((&teacher, &d))))?;
            report.metric(&format!("runs.{name}"), &t.summary)?;
        }
    }
    Ok(())
}
