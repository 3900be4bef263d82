use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auprc_scores, confusion, metrics, ConfusionCounts, MetricRecord, Metrics};
use crate::anomaly::nearest_rank;
use crate::attacks::{spoof, AttackKind, AttackSpec};
use crate::classical::ClassicalMethod;
use crate::error::{Error, Result};
use crate::geometry::{planar_points, preprocess, BevImage, FilterSpec, FovMask, PointCloud};
use crate::real::Real;
use crate::scene::dataset::Frame;
use crate::seed;
use crate::segnet::{self, binarize, infer_mcd, infer_mle, Example, NetConfig, Network, ProbMap, TrainConfig};

/// Anything that turns a cloud into a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Classical(ClassicalMethod),
    Mle,
    Mcd,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Classical(m) => m.name(),
            Estimator::Mle => "mle",
            Estimator::Mcd => "mcd",
        }
    }

    pub fn is_learned(&self) -> bool {
        !matches!(self, Estimator::Classical(_))
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Estimator::Mle),
            "mcd" => Ok(Estimator::Mcd),
            other => other.parse().map(Estimator::Classical),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McdSettings {
    pub passes: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for McdSettings {
    fn default() -> Self {
        Self { passes: 20, seed: 0, threshold: segnet::DEFAULT_THRESHOLD }
    }
}

/// Preprocessed evaluation frames with their ground truth.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub name: String,
    /// `none` for benign frames, otherwise e.g. `uniform-150`.
    pub attack: String,
    pub images: Vec<BevImage>,
    pub masks: Vec<FovMask>,
}

/// `none`, or `<kind>-<n_points>`.
pub fn attack_label(attack: Option<&AttackSpec>) -> String {
    match attack {
        None => "none".into(),
        Some(a) => {
            let kind = match a.kind {
                AttackKind::Uniform => "uniform",
                AttackKind::Cluster => "cluster",
            };
            format!("{kind}-{}", a.n_points)
        }
    }
}

impl TestSet {
    /// Preprocesses `frames` onto their mask grid, spoofing each cloud with a
    /// per-frame copy of `attack` first.
    pub fn from_frames(name: &str, frames: &[Frame], filter: &FilterSpec, attack: Option<&AttackSpec>) -> Result<Self> {
        let clouds: Vec<PointCloud<f64>> = match attack {
            Some(a) => spoof_frames(frames, a)?,
            None => frames.iter().map(|f| f.cloud.clone()).collect(),
        };
        let images = frames
            .par_iter()
            .zip(&clouds)
            .map(|(f, c)| preprocess(c, filter, &f.mask.spec))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            attack: attack_label(attack),
            images,
            masks: frames.iter().map(|f| f.mask.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// A trained network with the labels it is reported under.
#[derive(Debug, Clone, Copy)]
pub struct LearnedModel<'a, T> {
    pub train_set: &'a str,
    /// `benign` or `adversarial`.
    pub variant: &'a str,
    pub network: &'a Network<T>,
}

/// Spoofed copies of every frame's cloud; frame `i` uses `attack.for_frame(i)`,
/// so raising `n_points` only appends points.
pub fn spoof_frames(frames: &[Frame], attack: &AttackSpec) -> Result<Vec<PointCloud<f64>>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| spoof(&f.cloud, &attack.for_frame(i as u64)))
        .collect()
}

fn probability_map<T: Real>(
    net: &Network<T>,
    image: &BevImage,
    kind: Estimator,
    mcd: &McdSettings,
    frame: usize,
) -> Result<ProbMap<T>> {
    match kind {
        Estimator::Mle => infer_mle(net, image),
        Estimator::Mcd => Ok(infer_mcd(net, image, mcd.passes, seed::derive(mcd.seed, &[frame as u64]))?.0),
        Estimator::Classical(_) => Err(Error::config("classical estimators have no probability map")),
    }
}

/// Pooled metrics and AUPRC of `net` on `images`; MLE or MC-dropout mean,
/// binarized at `mcd.threshold`.
pub fn evaluate_learned<T: Real>(
    net: &Network<T>,
    images: &[BevImage],
    masks: &[FovMask],
    kind: Estimator,
    mcd: &McdSettings,
) -> Result<(Metrics, f64)> {
    if images.len() != masks.len() {
        return Err(Error::shape(format!("{} masks", images.len()), masks.len()));
    }
    if images.is_empty() {
        return Err(Error::invalid("no frames to evaluate"));
    }
    let maps: Vec<ProbMap<T>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| probability_map(net, img, kind, mcd, i))
        .collect::<Result<_>>()?;
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::with_capacity(maps.iter().map(|m| m.values.len()).sum());
    let mut labels = Vec::with_capacity(scores.capacity());
    for (pm, gt) in maps.iter().zip(masks) {
        counts += confusion(&binarize(pm, mcd.threshold)?, gt)?;
        scores.extend(pm.values.iter().map(|v| v.f64()));
        labels.extend_from_slice(&gt.cells);
    }
    Ok((metrics(&counts), auprc_scores(&scores, &labels)?))
}

/// Every model on every test set, MLE and MC dropout: one record per
/// (model, test set, inference mode).
pub fn transfer_matrix<T: Real>(
    models: &[LearnedModel<'_, T>],
    tests: &[TestSet],
    mcd: &McdSettings,
) -> Result<Vec<MetricRecord>> {
    let mut rows = Vec::new();
    for model in models {
        for test in tests {
            for kind in [Estimator::Mle, Estimator::Mcd] {
                let (m, a) = evaluate_learned(model.network, &test.images, &test.masks, kind, mcd)?;
                rows.push(MetricRecord::new(
                    [model.train_set, &test.name, model.variant, kind.name(), &test.attack],
                    m,
                    Some(a),
                ));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub estimator: String,
    pub spoof_points: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auprc: Option<f64>,
}

impl SweepRow {
    fn new(estimator: Estimator, spoof_points: usize, m: Metrics, auprc: Option<f64>) -> Self {
        Self { estimator: estimator.name().into(), spoof_points, precision: m.precision, recall: m.recall, f1: m.f1, auprc }
    }
}

fn classical_metrics(method: ClassicalMethod, clouds: &[PointCloud<f64>], masks: &[FovMask], filter: &FilterSpec) -> Result<Metrics> {
    let counts: Vec<ConfusionCounts> = clouds
        .par_iter()
        .zip(masks)
        .map(|(c, gt)| {
            let pts = planar_points(c, filter)?;
            confusion(&method.estimate(&pts, &gt.spec)?, gt)
        })
        .collect::<Result<_>>()?;
    Ok(metrics(&counts.into_iter().sum()))
}

/// Metrics of each estimator as uniform spoofing grows through `counts`.
/// Spoofed points are nested across counts. Learned estimators need `net`.
pub fn security_sweep<T: Real>(
    frames: &[Frame],
    estimators: &[Estimator],
    counts: &[usize],
    bounds: f64,
    seed: u64,
    net: Option<&Network<T>>,
    filter: &FilterSpec,
    mcd: &McdSettings,
) -> Result<Vec<SweepRow>> {
    if frames.is_empty() {
        return Err(Error::invalid("security sweep needs at least one frame"));
    }
    if estimators.iter().any(Estimator::is_learned) && net.is_none() {
        return Err(Error::config("learned estimators need a trained network"));
    }
    let budget = counts.iter().copied().max().unwrap_or(0);
    let masks: Vec<FovMask> = frames.iter().map(|f| f.mask.clone()).collect();
    let mut rows = Vec::new();
    for &n in counts {
        let attack = AttackSpec { budget, ..AttackSpec::uniform(n, bounds, seed) };
        let clouds = spoof_frames(frames, &attack)?;
        for &est in estimators {
            let row = match (est, net) {
                (Estimator::Classical(m), _) => SweepRow::new(est, n, classical_metrics(m, &clouds, &masks, filter)?, None),
                (_, Some(net)) => {
                    let images: Vec<BevImage> = clouds
                        .par_iter()
                        .zip(&masks)
                        .map(|(c, gt)| preprocess(c, filter, &gt.spec))
                        .collect::<Result<_>>()?;
                    let (m, a) = evaluate_learned(net, &images, &masks, est, mcd)?;
                    SweepRow::new(est, n, m, Some(a))
                }
                (_, None) => unreachable!("checked above"),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Median and 95th-percentile wall time of repeated calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runs: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    pub fn hz(&self) -> f64 {
        1000.0 / self.median_ms
    }
}

/// Runs `f` once to warm up, then `runs` timed times.
pub fn benchmark<F: FnMut(usize) -> Result<()>>(runs: usize, mut f: F) -> Result<Timing> {
    if runs == 0 {
        return Err(Error::config("benchmark needs at least one run"));
    }
    f(0)?;
    let mut ms = Vec::with_capacity(runs);
    for i in 0..runs {
        let t = Instant::now();
        f(i)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    Ok(Timing { runs, median_ms: nearest_rank(&ms, 0.5), p95_ms: nearest_rank(&ms, 0.95) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub width: usize,
    pub depth: usize,
    pub resolution: usize,
    pub params: usize,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub median_ms: Option<f64>,
    /// `ok`, or why the combination was skipped or failed.
    pub status: String,
}

/// Training, validation and test examples at one resolution.
#[derive(Debug, Clone)]
pub struct StudyData<T> {
    pub train: Vec<Example<T>>,
    pub val: Vec<Example<T>>,
    pub test: Vec<Example<T>>,
}

/// Fewest timed forward passes per study cell.
pub const MIN_TIMING_RUNS: usize = 50;

fn example_metrics<T: Real>(net: &Network<T>, test: &[Example<T>], threshold: f64) -> Result<Metrics> {
    let counts: Vec<ConfusionCounts> = test
        .par_iter()
        .map(|e| {
            let p = net.forward_normalized(&e.input, None)?;
            let mut c = ConfusionCounts::default();
            for (v, t) in p.iter().zip(&e.target) {
                match (v.f64() > threshold, t.f64() > 0.5) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    Ok(metrics(&counts.into_iter().sum()))
}

/// Trains and times one network per (resolution, depth, width). `data`
/// is asked once per resolution. Combinations the architecture rejects
/// are reported with their reason instead of aborting the study.
#[allow(clippy::too_many_arguments)]
pub fn parametric_study<T: Real, D>(
    widths: &[usize],
    depths: &[usize],
    resolutions: &[usize],
    dropout_rate: f64,
    train_cfg: &TrainConfig,
    threshold: f64,
    timing_runs: usize,
    mut data: D,
) -> Result<Vec<StudyRow>>
where
    D: FnMut(usize) -> Result<StudyData<T>>,
{
    let runs = timing_runs.max(MIN_TIMING_RUNS);
    let mut rows = Vec::new();
    for &resolution in resolutions {
        let mut cached: Option<StudyData<T>> = None;
        for &depth in depths {
            for &width in widths {
                let mut row = StudyRow {
                    width,
                    depth,
                    resolution,
                    params: 0,
                    precision: None,
                    f1: None,
                    median_ms: None,
                    status: "ok".into(),
                };
                let cfg = match NetConfig::new(depth, width, dropout_rate, resolution) {
                    Ok(c) => c,
                    Err(e) => {
                        row.status = format!("skipped: {e}");
                        rows.push(row);
                        continue;
                    }
                };
                row.params = segnet::param_count(&cfg);
                if cached.is_none() {
                    cached = Some(data(resolution)?);
                }
                let d = cached.as_ref().expect("filled above");
                if d.test.is_empty() {
                    return Err(Error::invalid("study needs test examples"));
                }
                let seed = seed::derive(train_cfg.seed, &[resolution as u64, depth as u64, width as u64]);
                let trained = Network::<T>::new(cfg, seed)
                    .and_then(|net| segnet::train(net, &d.train, &d.val, &TrainConfig { seed, ..*train_cfg }));
                let net = match trained {
                    Ok(out) => out.network,
                    Err(e @ Error::Numeric(_)) => {
                        row.status = format!("failed: {e}");
                        rows.push(row);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let m = example_metrics(&net, &d.test, threshold)?;
                let timing = benchmark(runs, |i| net.forward_normalized(&d.test[i % d.test.len()].input, None).map(drop))?;
                row.precision = Some(m.precision);
                row.f1 = Some(m.f1);
                row.median_ms = Some(timing.median_ms);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::scene::dataset::{synth_frames, Split};
    use crate::scene::{FamilyName, LidarModel, SceneFamily};

    fn frames(n: usize) -> Vec<Frame> {
        let fam = SceneFamily::preset(FamilyName::OutdoorSparse);
        let lidar = LidarModel::new(360, 75.0).unwrap().centered();
        let grid = GridSpec::new(32.0, 32).unwrap();
        synth_frames(&fam, &lidar, &grid, Split::Test, n, 3).unwrap()
    }

    #[test]
    fn estimator_names_parse_back() {
        for name in ["rayq", "rayc", "concave", "mle", "mcd"] {
            assert_eq!(name.parse::<Estimator>().unwrap().name(), name);
        }
        assert!("unet".parse::<Estimator>().is_err());
    }

    #[test]
    fn zero_spoof_row_matches_benign() {
        let fr = frames(4);
        let f = FilterSpec::default();
        let est = [Estimator::Classical(ClassicalMethod::Rayq { n_bins: 360 })];
        let rows = security_sweep::<f32>(&fr, &est, &[0, 40], 32.0, 1, None, &f, &McdSettings::default()).unwrap();
        let clouds: Vec<_> = fr.iter().map(|x| x.cloud.clone()).collect();
        let masks: Vec<_> = fr.iter().map(|x| x.mask.clone()).collect();
        let benign = classical_metrics(ClassicalMethod::Rayq { n_bins: 360 }, &clouds, &masks, &f).unwrap();
        assert_eq!(rows[0], SweepRow::new(est[0], 0, benign, None));
        assert_eq!(rows.len(), 2);
        assert!(security_sweep::<f32>(&fr, &[Estimator::Mle], &[0], 32.0, 1, None, &f, &McdSettings::default()).is_err());
    }

    #[test]
    fn spoofed_frames_are_nested() {
        let fr = frames(2);
        let small = spoof_frames(&fr, &AttackSpec::uniform(10, 20.0, 5)).unwrap();
        let large = spoof_frames(&fr, &AttackSpec::uniform(30, 20.0, 5)).unwrap();
        for (s, l) in small.iter().zip(&large) {
            assert_eq!(&l.points[..s.points.len()], &s.points[..]);
        }
    }

    #[test]
    fn single_family_transfer_has_four_rows() {
        let fr = frames(3);
        let f = FilterSpec::default();
        let benign = TestSet::from_frames("outdoor-sparse", &fr, &f, None).unwrap();
        let attacked = TestSet::from_frames("outdoor-sparse", &fr, &f, Some(&AttackSpec::uniform(50, 32.0, 2))).unwrap();
        assert_eq!(attacked.attack, "uniform-50");
        let net = Network::<f32>::new(NetConfig::new(3, 2, 0.1, 32).unwrap(), 0).unwrap();
        let model = LearnedModel { train_set: "outdoor-sparse", variant: "benign", network: &net };
        let mcd = McdSettings { passes: 3, ..Default::default() };
        let rows = transfer_matrix(&[model], &[benign.clone(), attacked], &mcd).unwrap();
        assert_eq!(rows.len(), 4);
        let again = transfer_matrix(&[model], &[benign], &mcd).unwrap();
        assert_eq!(rows[..2], again[..]);
    }

    #[test]
    fn study_skips_incompatible_combinations() {
        let train_cfg = TrainConfig { max_epochs: 1, batch_size: 2, ..Default::default() };
        let mut asked = Vec::new();
        let rows = parametric_study::<f32, _>(&[2], &[3, 6], &[32], 0.1, &train_cfg, 0.7, 1, |res| {
            asked.push(res);
            let fr = frames(3);
            let f = FilterSpec::default();
            let ex: Vec<Example<f32>> = fr
                .iter()
                .map(|x| Example::new(&preprocess(&x.cloud, &f, &x.mask.spec).unwrap(), &x.mask).unwrap())
                .collect();
            Ok(StudyData { train: ex[..2].to_vec(), val: ex[2..].to_vec(), test: ex.clone() })
        })
        .unwrap();
        assert_eq!(asked, vec![32]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[0].median_ms.unwrap() > 0.0);
        assert!(rows[1].status.starts_with("skipped"), "{}", rows[1].status);
        assert_eq!(rows[1].f1, None);
    }

    #[test]
    fn benchmark_percentiles() {
        let t = benchmark(10, |_| Ok(())).unwrap();
        assert_eq!(t.runs, 10);
        assert!(t.median_ms <= t.p95_ms);
        assert!(benchmark(0, |_| Ok(())).is_err());
    }
}
