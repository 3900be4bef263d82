//! Sensor-centred square grids: count images and binary visibility masks.
//!
//! Cells are stored row-major with the row index taken from `y` and the
//! column index from `x`; row 0 / column 0 is the `(-extent, -extent)` corner.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Half-width in meters; the grid spans `[-extent, extent]` on both axes.
    pub extent: f64,
    /// Cells per side.
    pub resolution: usize,
}

impl GridSpec {
    pub const MIN_RESOLUTION: usize = 8;

    pub fn new(extent: f64, resolution: usize) -> Result<Self> {
        let spec = Self { extent, resolution };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::config(format!("grid extent must be positive, got {}", self.extent)));
        }
        if self.resolution < Self::MIN_RESOLUTION {
            return Err(Error::config(format!(
                "grid resolution must be at least {}, got {}",
                Self::MIN_RESOLUTION,
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size() * self.cell_size()
    }

    pub fn num_cells(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Center of cell `(row, col)` in meters, as `[x, y]`.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let s = self.cell_size();
        [-self.extent + (col as f64 + 0.5) * s, -self.extent + (row as f64 + 0.5) * s]
    }

    /// Centers of every cell in storage order.
    pub fn cell_centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.resolution).flat_map(move |r| (0..self.resolution).map(move |c| self.cell_center(r, c)))
    }

    /// Cell holding `(x, y)`, or `None` outside `[-extent, extent)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let s = self.cell_size();
        let col = ((x + self.extent) / s).floor();
        let row = ((y + self.extent) / s).floor();
        let n = self.resolution as f64;
        if col >= 0.0 && col < n && row >= 0.0 && row < n {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.resolution + col
    }
}

/// Per-cell point counts; the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub spec: GridSpec,
    pub counts: Vec<u32>,
}

impl BevImage {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, counts: vec![0; spec.num_cells()] }
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[self.spec.index(row, col)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Assigns each point to its cell and accumulates counts. Points outside the
/// half-open extent `[-extent, extent)` are dropped.
pub fn quantize<T: Real>(points: &[[T; 2]], spec: &GridSpec) -> BevImage {
    let mut img = BevImage::zeros(*spec);
    for p in points {
        if let Some((r, c)) = spec.cell_of(p[0].f64(), p[1].f64()) {
            img.counts[spec.index(r, c)] += 1;
        }
    }
    img
}

/// Binary visibility grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FovMask {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl FovMask {
    pub fn new(spec: GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != spec.num_cells() {
            return Err(Error::shape(spec.num_cells(), cells.len()));
        }
        Ok(Self { spec, cells })
    }

    pub fn filled(spec: GridSpec, value: bool) -> Self {
        Self { spec, cells: vec![value; spec.num_cells()] }
    }

    /// Evaluates `visible(x, y)` at every cell center.
    pub fn from_fn(spec: GridSpec, mut visible: impl FnMut([f64; 2]) -> bool) -> Self {
        let cells = spec.cell_centers().map(|c| visible(c)).collect();
        Self { spec, cells }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[self.spec.index(row, col)]
    }

    pub fn count_visible(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    pub fn visible_fraction(&self) -> f64 {
        self.count_visible() as f64 / self.cells.len() as f64
    }

    /// `true` when every visible cell of `other` is visible here.
    pub fn contains(&self, other: &FovMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| a || !b)
    }

    pub fn iou(&self, other: &FovMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.cells.iter().zip(&other.cells) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Binary PGM (`P5`, maxval 255): visible = 255, invisible = 0, rows in
    /// storage order.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.spec.resolution;
        write!(w, "P5\n{n} {n}\n255\n")?;
        let bytes: Vec<u8> = self.cells.iter().map(|&v| if v { 255 } else { 0 }).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Reads a PGM written by [`FovMask::write_pgm`]. The extent is not stored
    /// in the file and must be supplied.
    pub fn read_pgm<R: Read>(mut r: R, extent: f64) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format("pgm mask", "truncated header"));
            }
            fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::format("pgm mask", "expected P5"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format("pgm mask", format!("bad number `{s}`")));
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if w != h {
            return Err(Error::format("pgm mask", format!("mask must be square, got {w}x{h}")));
        }
        if maxval != 255 {
            return Err(Error::format("pgm mask", "maxval must be 255"));
        }
        let raster = buf.get(pos..).unwrap_or(&[]);
        if raster.len() != w * h {
            return Err(Error::format("pgm mask", format!("expected {} raster bytes, got {}", w * h, raster.len())));
        }
        let cells = raster
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                255 => Ok(true),
                other => Err(Error::format("pgm mask", format!("pixel value {other} is not 0 or 255"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(GridSpec::new(extent, w)?, cells)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>, extent: f64) -> Result<Self> {
        Self::read_pgm(BufReader::new(File::open(path)?), extent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_point_lands_in_center_cell() {
        let spec = GridSpec::new(75.0, 64).unwrap();
        let img = quantize(&[[0.0f64, 0.0]], &spec);
        assert_eq!(img.get(32, 32), 1);
        assert_eq!(img.total(), 1);
    }

    #[test]
    fn out_of_extent_and_upper_edge_dropped() {
        let spec = GridSpec::new(75.0, 64).unwrap();
        let img = quantize(&[[100.0f64, 0.0], [75.0, 0.0], [0.0, 75.0]], &spec);
        assert_eq!(img.total(), 0);
        let img = quantize(&[[-75.0f64, -75.0]], &spec);
        assert_eq!(img.get(0, 0), 1);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 64).is_err());
        assert!(GridSpec::new(10.0, 4).is_err());
        assert!((GridSpec::new(75.0, 64).unwrap().cell_size() - 2.34375).abs() < 1e-12);
    }

    #[test]
    fn pgm_bytes_are_exact() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let mut cells = vec![false; 64];
        cells[0] = true;
        cells[63] = true;
        let mask = FovMask::new(spec, cells).unwrap();
        let mut buf = Vec::new();
        mask.write_pgm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n8 8\n255\n");
        assert_eq!(buf.len(), 11 + 64);
        assert_eq!(buf[11], 255);
        assert_eq!(buf[12], 0);
        assert_eq!(buf[74], 255);
        assert_eq!(FovMask::read_pgm(&buf[..], 1.0).unwrap(), mask);
    }

    #[test]
    fn pgm_rejects_grey_levels() {
        let mut buf = b"P5\n8 8\n255\n".to_vec();
        buf.extend(std::iter::repeat_n(7u8, 64));
        assert!(FovMask::read_pgm(&buf[..], 1.0).is_err());
    }
}
