//! Dataset directories: clouds, masks and scenes with a JSON manifest that
//! lists `(cloud, mask, scene)` triples per split.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scene, ground_truth_fov, simulate_lidar, LidarModel, Scene, SceneFamily};
use crate::attacks::AttackSpec;
use crate::error::{Error, Result};
use crate::geometry::{FovMask, GridSpec, PointCloud};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub cloud: String,
    pub mask: String,
    pub scene: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<FrameEntry>,
    pub val: Vec<FrameEntry>,
    pub test: Vec<FrameEntry>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[FrameEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<FrameEntry> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub family: SceneFamily,
    pub lidar: LidarModel,
    pub grid: GridSpec,
    pub seed: u64,
    /// Attack applied to the clouds, if this is an adversarial variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    pub splits: Splits,
}

/// One labelled example held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scene: Scene,
    pub cloud: PointCloud<f64>,
    pub mask: FovMask,
}

/// Frames requested per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Generates frame `index` of `split`; independent of every other frame.
pub fn synth_frame(
    family: &SceneFamily,
    lidar: &LidarModel,
    grid: &GridSpec,
    split: Split,
    index: usize,
    seed: u64,
) -> Result<Frame> {
    let frame_seed = seed::derive(seed, &[seed::tag(split.as_str()), index as u64]);
    let scene = generate_scene(family, frame_seed)?;
    let mut cloud = simulate_lidar(&scene, lidar, frame_seed)?;
    cloud.frame_id = index as u64;
    let mask = ground_truth_fov(&scene, lidar, grid);
    Ok(Frame { scene, cloud, mask })
}

pub fn synth_frames(
    family: &SceneFamily,
    lidar: &LidarModel,
    grid: &GridSpec,
    split: Split,
    count: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    (0..count)
        .into_par_iter()
        .map(|i| synth_frame(family, lidar, grid, split, i, seed))
        .collect()
}

fn entry(split: Split, i: usize) -> FrameEntry {
    let stem = format!("{}_{:05}", split.as_str(), i);
    FrameEntry {
        cloud: format!("clouds/{stem}.fvpc"),
        mask: format!("masks/{stem}.pgm"),
        scene: format!("scenes/{stem}.json"),
    }
}

/// In-memory dataset with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
    pub test: Vec<Frame>,
}

impl Dataset {
    pub fn synthesize(
        family: SceneFamily,
        lidar: LidarModel,
        grid: GridSpec,
        sizes: SplitSizes,
        seed: u64,
    ) -> Result<Self> {
        family.validate()?;
        lidar.validate()?;
        grid.validate()?;
        let mut splits = Splits::default();
        let mut frames: [Vec<Frame>; 3] = Default::default();
        for (k, split) in Split::ALL.into_iter().enumerate() {
            frames[k] = synth_frames(&family, &lidar, &grid, split, sizes.get(split), seed)?;
            *splits.get_mut(split) = (0..sizes.get(split)).map(|i| entry(split, i)).collect();
        }
        let [train, val, test] = frames;
        let manifest = Manifest { version: MANIFEST_VERSION, family, lidar, grid, seed, attack: None, splits };
        Ok(Self { manifest, train, val, test })
    }

    pub fn frames(&self, split: Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn frames_mut(&mut self, split: Split) -> &mut Vec<Frame> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Writes every file and the manifest under `dir` (created if needed).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["clouds", "masks", "scenes"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for split in Split::ALL {
            let entries = self.manifest.splits.get(split);
            let frames = self.frames(split);
            if entries.len() != frames.len() {
                return Err(Error::invalid(format!("{} split: manifest and frames disagree", split.as_str())));
            }
            frames.par_iter().zip(entries).try_for_each(|(f, e)| -> Result<()> {
                f.cloud.save(dir.join(&e.cloud))?;
                f.mask.save_pgm(dir.join(&e.mask))?;
                f.scene.save(dir.join(&e.scene))?;
                Ok(())
            })?;
        }
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = load_manifest(dir)?;
        let train = read_split(dir, &manifest, Split::Train)?;
        let val = read_split(dir, &manifest, Split::Val)?;
        let test = read_split(dir, &manifest, Split::Test)?;
        Ok(Self { manifest, train, val, test })
    }
}

/// Manifest and the frames of one split only.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<(Manifest, Vec<Frame>)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let frames = read_split(dir, &manifest, split)?;
    Ok((manifest, frames))
}

fn read_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Frame>> {
    manifest
        .splits
        .get(split)
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut cloud = PointCloud::load(resolve(dir, &e.cloud)?)?;
            cloud.frame_id = i as u64;
            let mask = FovMask::load_pgm(resolve(dir, &e.mask)?, manifest.grid.extent)?;
            if mask.spec != manifest.grid {
                return Err(Error::format("dataset", format!("{}: mask grid does not match manifest", e.mask)));
            }
            let scene = Scene::load(resolve(dir, &e.scene)?)?;
            Ok(Frame { scene, cloud, mask })
        })
        .collect()
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Missing(format!("dataset manifest {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format("dataset", format!("unsupported manifest version {}", manifest.version)));
    }
    Ok(manifest)
}

fn resolve(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = dir.join(rel);
    if !p.exists() {
        return Err(Error::Missing(format!("dataset file {}", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::FamilyName;

    fn tiny() -> Dataset {
        Dataset::synthesize(
            SceneFamily::preset(FamilyName::Indoor),
            LidarModel::new(90, 60.0).unwrap(),
            GridSpec::new(24.0, 16).unwrap(),
            SplitSizes { train: 3, val: 1, test: 2 },
            42,
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.test.len(), 2);
        for (a, b) in back.train.iter().zip(&ds.train) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.scene, b.scene);
            assert_eq!(a.cloud.len(), b.cloud.len());
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        fs::remove_file(dir.path().join(&ds.manifest.splits.val[0].mask)).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Missing(_))));
    }

    #[test]
    fn frames_are_independent_of_split_size() {
        let fam = SceneFamily::preset(FamilyName::Indoor);
        let lidar = LidarModel::new(90, 60.0).unwrap();
        let grid = GridSpec::new(24.0, 16).unwrap();
        let a = synth_frames(&fam, &lidar, &grid, Split::Train, 2, 5).unwrap();
        let b = synth_frames(&fam, &lidar, &grid, Split::Train, 4, 5).unwrap();
        assert_eq!(a[..], b[..2]);
    }
}
