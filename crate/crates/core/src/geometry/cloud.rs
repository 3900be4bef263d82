//! Point clouds and their on-disk formats.
//!
//! Binary layout (little endian): magic `FVPC`, `u32` version (1), the pose as
//! seven `f64` (`px py pz qw qx qy qz`), a `u32` point count, then `count * 3`
//! `f32` coordinates. The CSV flavour stores `x,y,z` rows with the pose in a
//! JSON sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::pose::{Pose, Quaternion};
use crate::error::{Error, Result};
use crate::real::Real;

pub const CLOUD_MAGIC: &[u8; 4] = b"FVPC";
pub const CLOUD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    /// Returns in the sensor frame, meters.
    pub points: Vec<[T; 3]>,
    pub pose: Pose<T>,
    pub frame_id: u64,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>, pose: Pose<T>, frame_id: u64) -> Result<Self> {
        let cloud = Self { points, pose, frame_id };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn empty(pose: Pose<T>) -> Self {
        Self { points: Vec::new(), pose, frame_id: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| p.map(|c| U::of(c.f64()))).collect(),
            pose: self.pose.cast(),
            frame_id: self.frame_id,
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let count = u32::try_from(self.points.len())
            .map_err(|_| Error::invalid("point cloud too large for the binary format"))?;
        w.write_all(CLOUD_MAGIC)?;
        w.write_u32::<LittleEndian>(CLOUD_VERSION)?;
        let q = &self.pose.attitude;
        for v in [
            self.pose.position[0],
            self.pose.position[1],
            self.pose.position[2],
            q.w,
            q.x,
            q.y,
            q.z,
        ] {
            w.write_f64::<LittleEndian>(v.f64())?;
        }
        w.write_u32::<LittleEndian>(count)?;
        for p in &self.points {
            for c in p {
                w.write_f32::<LittleEndian>(c.f64() as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CLOUD_MAGIC {
            return Err(Error::format("point cloud", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CLOUD_VERSION {
            return Err(Error::format("point cloud", format!("unsupported version {version}")));
        }
        let mut pose = [0f64; 7];
        for v in pose.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut points = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let mut p = [T::zero(); 3];
            for c in p.iter_mut() {
                *c = T::of(r.read_f32::<LittleEndian>()? as f64);
            }
            points.push(p);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("point cloud", "trailing bytes after point data"));
        }
        let pose = Pose {
            position: [T::of(pose[0]), T::of(pose[1]), T::of(pose[2])],
            attitude: Quaternion::new(T::of(pose[3]), T::of(pose[4]), T::of(pose[5]), T::of(pose[6])),
        };
        Self::new(points, pose, 0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }

    /// Loads `x,y,z` rows from `csv_path` and the pose from a JSON sidecar.
    pub fn load_csv(csv_path: impl AsRef<Path>, pose_path: impl AsRef<Path>) -> Result<Self> {
        let sidecar: PoseSidecar = serde_json::from_reader(BufReader::new(File::open(pose_path)?))?;
        let mut text = String::new();
        File::open(csv_path)?.read_to_string(&mut text)?;
        let points = parse_csv(&text)?;
        Self::new(points, sidecar.to_pose(), sidecar.frame_id.unwrap_or(0))
    }

    pub fn save_csv(&self, csv_path: impl AsRef<Path>, pose_path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(csv_path)?);
        writeln!(w, "x,y,z")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p[0], p[1], p[2])?;
        }
        w.flush()?;
        let sidecar = PoseSidecar::from_pose(&self.pose, Some(self.frame_id));
        serde_json::to_writer_pretty(BufWriter::new(File::create(pose_path)?), &sidecar)?;
        Ok(())
    }
}

fn parse_csv<T: Real>(text: &str) -> Result<Vec<[T; 3]>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.split(',').map(str::trim).eq(["x", "y", "z"]) => {}
        _ => return Err(Error::format("point cloud csv", "expected header `x,y,z`")),
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::format("point cloud csv", format!("line {}: expected 3 fields", n + 1)));
            }
            let mut p = [T::zero(); 3];
            for (c, f) in p.iter_mut().zip(&fields) {
                let v: f64 = f.parse().map_err(|_| {
                    Error::format("point cloud csv", format!("line {}: bad number `{f}`", n + 1))
                })?;
                *c = T::of(v);
            }
            Ok(p)
        })
        .collect()
}

/// JSON pose sidecar: `{"position":[x,y,z],"quaternion":[w,x,y,z],"frame_id":n}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSidecar {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u64>,
}

impl PoseSidecar {
    pub fn from_pose<T: Real>(pose: &Pose<T>, frame_id: Option<u64>) -> Self {
        let q = &pose.attitude;
        Self {
            position: pose.position.map(Real::f64),
            quaternion: [q.w.f64(), q.x.f64(), q.y.f64(), q.z.f64()],
            frame_id,
        }
    }

    pub fn to_pose<T: Real>(&self) -> Pose<T> {
        let q = self.quaternion;
        Pose {
            position: self.position.map(T::of),
            attitude: Quaternion::new(T::of(q[0]), T::of(q[1]), T::of(q[2]), T::of(q[3])),
        }
    }
}
