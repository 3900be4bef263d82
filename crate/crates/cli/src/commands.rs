use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde_json::json;

use fovlab::anomaly::{calibrate as fit_anomaly, detect, AnomalyModel};
use fovlab::attacks::{defend, spoof, AttackKind, AttackSpec, DEFAULT_BUDGET};
use fovlab::classical::ClassicalMethod;
use fovlab::config::{ExperimentConfig, FamilySource};
use fovlab::eval::{
    attack_label, benchmark, confusion, crossval_segnet, metrics, security_sweep, text_table, transfer_matrix,
    write_csv, write_jsonl, ConfusionCounts, Estimator, LearnedModel, MetricRecord, TestSet, SEARCH_GRID,
};
use fovlab::geometry::{planar_points, preprocess, FilterSpec, GridSpec, PointCloud};
use fovlab::scene::dataset::{load_split, Dataset, Frame, Manifest, Split};
use fovlab::segnet::{binarize, infer_mcd, infer_mle, train_with, write_history, Example, Network};
use fovlab::{seed, Error, Network32, Result};

use crate::{
    AttackArgs, AttackKindArg, BenchArgs, BenchMethod, CalibrateArgs, EstimateArgs, EvalArgs, InferArgs, Method,
    SplitArg, SweepArgs, SynthArgs, TrainArgs,
};

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    let non_empty = dir.is_dir() && fs::read_dir(dir)?.next().is_some();
    if non_empty {
        if !force {
            return Err(usage(format!("output directory {} is not empty (pass --force to replace it)", dir.display())));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn variant(manifest: &Manifest) -> &'static str {
    if manifest.attack.is_some() {
        "attacked"
    } else {
        "benign"
    }
}

fn write_tables<R: serde::Serialize + fovlab::eval::Tabular>(dir: &Path, stem: &str, rows: &[R]) -> Result<String> {
    fs::create_dir_all(dir)?;
    write_jsonl(BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?), rows)?;
    write_csv(File::create(dir.join(format!("{stem}.csv")))?, rows)?;
    let table = text_table(rows);
    fs::write(dir.join(format!("{stem}.txt")), &table)?;
    Ok(table)
}

fn frame_attack(spec: &AttackSpec, split: Split, i: usize) -> AttackSpec {
    spec.for_frame(seed::derive(seed::tag(split.as_str()), &[i as u64]))
}

fn load_network(path: &Path) -> Result<Network32> {
    if !path.exists() {
        return Err(Error::Missing(format!("checkpoint {}", path.display())));
    }
    Network::load(path)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(f) = &a.family {
        cfg.family = FamilySource::Preset(f.parse()?);
    }
    if let Some(n) = a.train {
        cfg.splits.train = n;
    }
    if let Some(n) = a.val {
        cfg.splits.val = n;
    }
    if let Some(n) = a.test {
        cfg.splits.test = n;
    }
    cfg.validate()?;
    a.common.announce(&cfg);
    let out = a.out.clone().or(cfg.output_dir.clone()).ok_or_else(|| usage("synth needs --out or an output_dir in the config"))?;
    prepare_out(&out, a.force)?;
    let ds = Dataset::synthesize(cfg.family.resolve(), cfg.lidar, cfg.grid, cfg.splits, cfg.seed)?;
    ds.save(&out)?;
    println!("{}", json!({ "out": out, "train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len() }));
    Ok(())
}

fn resolve_attack(a: &AttackArgs, cfg: &ExperimentConfig, extent: f64) -> Result<AttackSpec> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Missing(format!("attack spec {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("attack spec {}: {e}", p.display())))?
        }
        None => cfg.attack.clone().unwrap_or_else(|| AttackSpec::uniform(DEFAULT_BUDGET, extent, cfg.seed)),
    };
    if let Some(k) = a.kind {
        spec.kind = match k {
            AttackKindArg::Uniform => AttackKind::Uniform,
            AttackKindArg::Cluster => AttackKind::Cluster,
        };
    }
    if let Some(n) = a.points {
        spec.n_points = n;
    }
    if let Some(b) = a.bounds {
        spec.bounds = b;
    }
    if let Some(c) = &a.center {
        spec.cluster_center = [c[0], c[1]];
    }
    if let Some(s) = a.sigma {
        spec.cluster_sigma = s;
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn attack(a: AttackArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let mut ds = Dataset::load(&a.dataset)?;
    if ds.manifest.attack.is_some() {
        return Err(usage(format!("{} is already an adversarial variant", a.dataset.display())));
    }
    let spec = resolve_attack(&a, &cfg, ds.manifest.grid.extent)?;
    a.common.announce(&cfg);
    for split in Split::ALL {
        ds.frames_mut(split).par_iter_mut().enumerate().try_for_each(|(i, f)| -> Result<()> {
            f.cloud = spoof(&f.cloud, &frame_attack(&spec, split, i))?;
            Ok(())
        })?;
    }
    ds.manifest.attack = Some(spec.clone());
    prepare_out(&a.out, a.force)?;
    ds.save(&a.out)?;
    println!("{}", json!({ "out": a.out, "attack": spec }));
    Ok(())
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let split = split_of(a.split);
    let (manifest, frames) = load_split(&a.dataset, split)?;
    let method = match a.method {
        Method::Rayq => ClassicalMethod::Rayq { n_bins: a.bins },
        Method::Rayc => ClassicalMethod::Rayc,
        Method::Concave => ClassicalMethod::Concave { k: a.k },
    };
    let defense = a.defend.then(|| cfg.defense.unwrap_or_default());
    fs::create_dir_all(a.out.join("masks"))?;
    let entries = manifest.splits.get(split);
    let per_frame: Vec<(ConfusionCounts, f64)> = frames
        .par_iter()
        .zip(entries)
        .map(|(f, e)| {
            let cloud = match &defense {
                Some(d) => defend(&f.cloud, d)?,
                None => f.cloud.clone(),
            };
            let pred = method.estimate(&planar_points(&cloud, &cfg.filter)?, &f.mask.spec)?;
            let name = Path::new(&e.mask).file_name().expect("mask entries name a file");
            pred.save_pgm(a.out.join("masks").join(name))?;
            Ok((confusion(&pred, &f.mask)?, pred.iou(&f.mask)))
        })
        .collect::<Result<_>>()?;
    let frame_rows: Vec<serde_json::Value> = per_frame
        .iter()
        .enumerate()
        .map(|(i, (c, iou))| {
            let m = metrics(c);
            json!({ "frame": i, "iou": iou, "precision": m.precision, "recall": m.recall, "f1": m.f1 })
        })
        .collect();
    write_jsonl(BufWriter::new(File::create(a.out.join("frames.jsonl"))?), &frame_rows)?;
    let pooled = metrics(&per_frame.iter().map(|p| p.0).sum());
    let family = manifest.family.name.as_str();
    let record = MetricRecord::new(
        [family, family, variant(&manifest), method.name(), &attack_label(manifest.attack.as_ref())],
        pooled,
        None,
    );
    print!("{}", write_tables(&a.out, "metrics", &[record])?);
    Ok(())
}

/// Preprocessed examples; a seeded `fraction` of them spoofed first.
fn build_examples(
    frames: &[Frame],
    split: Split,
    filter: &FilterSpec,
    attack: &AttackSpec,
    fraction: f64,
    seed_base: u64,
) -> Result<Vec<Example<f32>>> {
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut seed::rng(seed_base, &[seed::tag("spoof-pick"), seed::tag(split.as_str())]));
    let n_spoof = (fraction * frames.len() as f64).round() as usize;
    let mut spoofed = vec![false; frames.len()];
    for &i in &order[..n_spoof] {
        spoofed[i] = true;
    }
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let cloud = if spoofed[i] { spoof(&f.cloud, &frame_attack(attack, split, i))? } else { f.cloud.clone() };
            Example::new(&preprocess(&cloud, filter, &f.mask.spec)?, &f.mask)
        })
        .collect()
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(ext);
    path.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    let manifest = fovlab::scene::dataset::load_manifest(&a.dataset)?;
    let t = &mut cfg.train;
    t.max_epochs = a.epochs.unwrap_or(t.max_epochs);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.batch_size = a.batch.unwrap_or(t.batch_size);
    t.patience = a.patience.unwrap_or(t.patience);
    let n = &mut cfg.net;
    n.depth = a.depth.unwrap_or(n.depth);
    n.base_channels = a.base.unwrap_or(n.base_channels);
    n.dropout_rate = a.dropout.unwrap_or(n.dropout_rate);
    n.resolution = manifest.grid.resolution;
    cfg.grid = manifest.grid;
    if !(0.0..=1.0).contains(&a.spoof_fraction) {
        return Err(usage("--spoof-fraction must lie in [0, 1]"));
    }
    if a.init.is_some() && (a.depth.is_some() || a.base.is_some() || a.dropout.is_some()) {
        return Err(usage("--init takes the architecture from the checkpoint; drop --depth/--base/--dropout"));
    }
    cfg.validate()?;
    a.common.announce(&cfg);
    let (_, train_frames) = load_split(&a.dataset, Split::Train)?;
    let (_, val_frames) = load_split(&a.dataset, Split::Val)?;
    let attack = cfg.attack.clone().unwrap_or_else(|| AttackSpec::uniform(DEFAULT_BUDGET, cfg.grid.extent, cfg.seed));
    let train_set = build_examples(&train_frames, Split::Train, &cfg.filter, &attack, a.spoof_fraction, cfg.seed)?;
    let val_set = build_examples(&val_frames, Split::Val, &cfg.filter, &attack, a.spoof_fraction, cfg.seed)?;

    if let Some(folds) = a.crossval {
        let candidates: Vec<_> = SEARCH_GRID
            .candidates()
            .into_iter()
            .filter(|c| a.cv_base.as_ref().is_none_or(|b| b.contains(&c.base_channels)))
            .collect();
        let cv = crossval_segnet(&train_set, &candidates, cfg.net, cfg.train, folds, cfg.seed)?;
        write_jsonl(BufWriter::new(File::create(sidecar(&a.out, ".crossval.jsonl"))?), &cv.rows)?;
        eprintln!("crossval best {:?} (mean val loss {:.6})", cv.best, cv.best_mean_loss);
        cfg.net.base_channels = cv.best.base_channels;
        cfg.net.dropout_rate = cv.best.dropout_rate;
        cfg.train.learning_rate = cv.best.learning_rate;
    }

    let net = match &a.init {
        Some(p) => {
            let net = load_network(p)?;
            if net.config().resolution != cfg.grid.resolution {
                return Err(Error::ShapeMismatch {
                    expected: format!("resolution {}", cfg.grid.resolution),
                    got: net.config().resolution.to_string(),
                });
            }
            net
        }
        None => Network::new(cfg.net, seed::derive(cfg.seed, &[seed::tag("init")]))?,
    };
    let out = train_with(net, &train_set, &val_set, &cfg.train, |r| {
        if !a.common.quiet {
            eprintln!("epoch {:>3}  train {:.6}  val {:.6}  {:.1}s", r.epoch, r.train_loss, r.val_loss, r.seconds);
        }
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    out.network.save(&a.out)?;
    write_history(BufWriter::new(File::create(sidecar(&a.out, ".jsonl"))?), &out.history)?;
    let best = &out.history[out.best_epoch];
    println!(
        "{}",
        json!({ "checkpoint": a.out, "epochs": out.history.len(), "best_epoch": best.epoch,
                "val_loss": best.val_loss, "stopped_early": out.stopped_early, "params": out.network.num_params() })
    );
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let net = load_network(&a.checkpoint)?;
    let is_csv = a.cloud.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let cloud: PointCloud<f64> = match (&a.pose, is_csv) {
        (Some(pose), _) => PointCloud::load_csv(&a.cloud, pose)?,
        (None, true) => return Err(usage("a CSV cloud needs --pose")),
        (None, false) => PointCloud::load(&a.cloud)?,
    };
    let grid = GridSpec::new(cfg.grid.extent, net.config().resolution)?;
    let image = preprocess(&cloud, &cfg.filter, &grid)?;
    let threshold = a.threshold.unwrap_or(cfg.mcd.threshold);
    let mut report = serde_json::Map::new();
    let prob = if a.mcd > 0 {
        let (prob, conf) = infer_mcd(&net, &image, a.mcd, cfg.mcd.seed)?;
        report.insert("mean_sigma".into(), json!(conf.mean()));
        if let Some(p) = &a.anomaly {
            let model = AnomalyModel::load(p)?;
            let (score, flagged) = detect(&conf, &model);
            report.insert("anomaly_score".into(), json!(score));
            report.insert("flagged".into(), json!(flagged));
        }
        prob
    } else {
        if a.anomaly.is_some() {
            return Err(usage("--anomaly needs --mcd passes"));
        }
        infer_mle(&net, &image)?
    };
    let mask = binarize(&prob, threshold)?;
    mask.save_pgm(&a.out)?;
    report.insert("visible_fraction".into(), json!(mask.visible_fraction()));
    println!("{}", serde_json::Value::Object(report));
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let net = load_network(&a.checkpoint)?;
    let (manifest, frames) = load_split(&a.dataset, Split::Val)?;
    if manifest.attack.is_some() {
        return Err(usage("calibration needs a benign dataset"));
    }
    let passes = a.passes.unwrap_or(cfg.mcd.passes);
    let maps = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let image = preprocess(&f.cloud, &cfg.filter, &f.mask.spec)?;
            Ok(infer_mcd(&net, &image, passes, seed::derive(cfg.mcd.seed, &[i as u64]))?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = fit_anomaly(&maps, a.quantile.unwrap_or(cfg.anomaly_quantile))?;
    model.save(&a.out)?;
    println!("{}", serde_json::to_string(&model)?);
    Ok(())
}

fn split_pair<'s>(arg: &'s str, flag: &str) -> Result<(&'s str, &'s str)> {
    arg.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| usage(format!("--{flag} expects NAME=PATH, got `{arg}`")))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let mut models = Vec::new();
    for arg in &a.models {
        let (label, path) = split_pair(arg, "model")?;
        let (train_set, variant) = label.split_once(':').unwrap_or((label, "benign"));
        let net = load_network(Path::new(path)).map_err(|e| match e {
            Error::Missing(_) => Error::Missing(format!("checkpoint for cell train={train_set} variant={variant}: {path}")),
            other => other,
        })?;
        models.push((train_set.to_owned(), variant.to_owned(), net));
    }
    let mut tests = Vec::new();
    for arg in &a.tests {
        let (name, dir) = split_pair(arg, "test")?;
        let (manifest, frames) = load_split(dir, Split::Test)?;
        let mut set = TestSet::from_frames(name, &frames, &cfg.filter, None)?;
        set.attack = attack_label(manifest.attack.as_ref());
        tests.push(set);
    }
    let learned: Vec<LearnedModel<'_, f32>> = models
        .iter()
        .map(|(t, v, net)| LearnedModel { train_set: t, variant: v, network: net })
        .collect();
    let mut mcd = cfg.mcd;
    mcd.passes = a.passes.unwrap_or(mcd.passes);
    let rows = transfer_matrix(&learned, &tests, &mcd)?;
    print!("{}", write_tables(&a.out, "metrics", &rows)?);
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let estimators: Vec<Estimator> = a.estimators.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let (manifest, frames) = load_split(&a.dataset, Split::Test)?;
    if manifest.attack.is_some() {
        return Err(usage("sweep spoofs frames itself; pass a benign dataset"));
    }
    let net = a.checkpoint.as_deref().map(load_network).transpose()?;
    let bounds = a.bounds.unwrap_or(manifest.grid.extent);
    let rows = security_sweep(&frames, &estimators, &a.counts, bounds, cfg.seed, net.as_ref(), &cfg.filter, &cfg.mcd)?;
    print!("{}", write_tables(&a.out, "sweep", &rows)?);
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    a.common.announce(&cfg);
    let (manifest, frames) = load_split(&a.dataset, Split::Test)?;
    if frames.is_empty() {
        return Err(usage("bench needs a non-empty test split"));
    }
    let n = frames.len();
    let (timing, resolution) = match a.method {
        BenchMethod::Rayq | BenchMethod::Rayc | BenchMethod::Concave => {
            let method = match a.method {
                BenchMethod::Rayq => ClassicalMethod::Rayq { n_bins: a.bins },
                BenchMethod::Rayc => ClassicalMethod::Rayc,
                _ => ClassicalMethod::Concave { k: fovlab::classical::DEFAULT_K },
            };
            let grid = GridSpec::new(manifest.grid.extent, a.resolution.unwrap_or(manifest.grid.resolution))?;
            let t = benchmark(a.runs, |i| {
                let pts = planar_points(&frames[i % n].cloud, &cfg.filter)?;
                method.estimate(&pts, &grid).map(drop)
            })?;
            (t, grid.resolution)
        }
        BenchMethod::Mle | BenchMethod::Mcd => {
            let path = a.checkpoint.as_deref().ok_or_else(|| usage("learned benchmarks need --checkpoint"))?;
            let net = load_network(path)?;
            let grid = GridSpec::new(manifest.grid.extent, net.config().resolution)?;
            let mcd = a.method == BenchMethod::Mcd;
            let t = benchmark(a.runs, |i| {
                let image = preprocess(&frames[i % n].cloud, &cfg.filter, &grid)?;
                if mcd {
                    infer_mcd(&net, &image, cfg.mcd.passes, seed::derive(cfg.mcd.seed, &[i as u64])).map(drop)
                } else {
                    infer_mle(&net, &image).map(drop)
                }
            })?;
            (t, grid.resolution)
        }
    };
    println!(
        "{}",
        json!({
            "method": format!("{:?}", a.method).to_lowercase(),
            "resolution": resolution,
            "runs": timing.runs,
            "median_ms": timing.median_ms,
            "p95_ms": timing.p95_ms,
            "median_hz": timing.hz(),
            "p95_hz": 1000.0 / timing.p95_ms,
        })
    );
    Ok(())
}
