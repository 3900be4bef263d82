//! Checkpoints: `FVNT`, u32 version, u32 header length, JSON [`NetConfig`],
//! then every parameter as a little-endian `f32` in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EpochRecord, NetConfig, Network};
use crate::error::{Error, Result};
use crate::real::Real;

pub const NET_MAGIC: &[u8; 4] = b"FVNT";
pub const NET_VERSION: u32 = 1;

const MAX_HEADER: u32 = 1 << 16;

impl<T: Real> Network<T> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.config)?;
        w.write_all(NET_MAGIC)?;
        w.write_u32::<LittleEndian>(NET_VERSION)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        for p in &self.params {
            w.write_f32::<LittleEndian>(p.f64() as f32)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: String| Error::format("checkpoint", reason);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(format!("missing magic: {e}")))?;
        if &magic != NET_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if version != NET_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if len > MAX_HEADER {
            return Err(bad(format!("header length {len} is implausible")));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header).map_err(|e| bad(format!("truncated header: {e}")))?;
        let config: NetConfig = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        config.validate()?;
        let mut raw = vec![0f32; super::param_count(&config)];
        r.read_f32_into::<LittleEndian>(&mut raw)
            .map_err(|e| bad(format!("truncated parameters: {e}")))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Network::from_params(config, raw.into_iter().map(|v| T::of(v as f64)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

/// One JSON object per line.
pub fn write_history<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let cfg = NetConfig::new(3, 2, 0.1, 16).unwrap();
        let net = Network::<f32>::new(cfg, 4).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FVNT");
        assert_eq!(Network::<f32>::read_checkpoint(buf.as_slice()).unwrap(), net);
        let wide = Network::<f64>::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(wide.params()[5], net.params()[5] as f64);
        assert!(Network::<f32>::read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Network::<f32>::read_checkpoint(extra.as_slice()).is_err());
        buf[0] = b'X';
        assert!(Network::<f32>::read_checkpoint(buf.as_slice()).is_err());
    }
}
