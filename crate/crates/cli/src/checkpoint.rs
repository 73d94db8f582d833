//! Binary checkpoints: little-endian, magic `RICCNN01`.
//!
//! Layout after the magic: format version (u32), architecture tag
//! (u8 length + ASCII), image height (u32), RNG seed (u64), element width
//! in bytes (u8, 4 or 8), config echo (u32 length + UTF-8 JSON), tensor
//! count (u32), then per tensor: name (u16 length + UTF-8), rank (u8),
//! extents (u32 each) and values in the stored width. Offset fields are not
//! stored; they are rebuilt from the architecture and height on load.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ric_core::nn::{build_baseline, Network};
use ric_core::{ConvMode, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"RICCNN01";
pub const FORMAT_VERSION: u32 = 1;

/// A named tensor with values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ConvMode,
    pub height: usize,
    pub seed: u64,
    /// Bytes per stored value: 4 for `f32` models, 8 for `f64`.
    pub width: u8,
    /// JSON echo of the configuration that produced the weights.
    pub config: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, seed: u64, config: String) -> Self {
        let records = net
            .state()
            .into_iter()
            .map(|(name, t)| Record {
                name,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            arch: net.mode,
            height: net.height,
            seed,
            width: std::mem::size_of::<T>() as u8,
            config,
            records,
        }
    }

    /// Rebuilds the network, regenerating offsets, and loads every tensor.
    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut net = build_baseline::<T>(self.arch, self.height, self.seed)?;
        let state = self
            .records
            .iter()
            .map(|r| {
                let data = r.values.iter().map(|&v| T::from_f64_lossy(v)).collect();
                Ok((r.name.clone(), Tensor::from_vec(&r.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        net.load_state(&state)?;
        net.eval();
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let tag = self.arch.tag().as_bytes();
        out.push(tag.len() as u8);
        out.extend_from_slice(tag);
        out.extend_from_slice(&u32::try_from(self.height)?.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.width);
        out.extend_from_slice(&u32::try_from(self.config.len())?.to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&u32::try_from(self.records.len())?.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&u16::try_from(r.name.len())?.to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(u8::try_from(r.shape.len())?);
            for &d in &r.shape {
                out.extend_from_slice(&u32::try_from(d)?.to_le_bytes());
            }
            for &v in &r.values {
                match self.width {
                    4 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    8 => out.extend_from_slice(&v.to_le_bytes()),
                    w => bail!("unsupported value width {w}"),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(8)? == MAGIC, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(version == FORMAT_VERSION, "unsupported checkpoint version {version}");
        let tag_len = r.u8()? as usize;
        let tag = std::str::from_utf8(r.take(tag_len)?)?;
        let arch: ConvMode = tag.parse().map_err(anyhow::Error::msg)?;
        let height = r.u32()? as usize;
        let seed = r.u64()?;
        let width = r.u8()?;
        ensure!(width == 4 || width == 8, "unsupported value width {width}");
        let config_len = r.u32()? as usize;
        let config = String::from_utf8(r.take(config_len)?.to_vec())?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(width as usize).context("tensor too large")?)?;
            let values = if width == 4 {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            };
            records.push(Record { name, shape, values });
        }
        ensure!(
            r.pos == bytes.len(),
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        );
        Ok(Self {
            version,
            arch,
            height,
            seed,
            width,
            config,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("truncated checkpoint at byte {}", self.pos);
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }
}
