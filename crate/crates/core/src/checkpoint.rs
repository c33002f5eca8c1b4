//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes   "SCCNNCKP"
//! version    u32       1
//! input      3 × u32   channels, height, width
//! n_layers   u32
//! layer      u8 tag, then u32 fields
//!              0 conv     filters, extent, stride, padding
//!              1 maxpool  window, stride
//!              2 relu
//!              3 flatten
//!              4 dense    out_features
//!              5 softmax
//! input_mean f64       normalisation offset subtracted from every pixel
//! n_tensors  u32
//! tensor     u32 rank, rank × u32 extents, then f64 values row-major
//! ```
//!
//! Parameters appear in declaration order, weights before bias.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SCCNNCKP";
pub const VERSION: u32 = 1;

/// A trained network together with the input normalisation it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub input_mean: f64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = self.network.spec();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        for &d in &spec.input {
            put_u32(&mut out, d)?;
        }
        put_u32(&mut out, spec.layers.len())?;
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Conv {
                    filters,
                    extent,
                    stride,
                    padding,
                } => {
                    out.push(0);
                    for v in [filters, extent, stride, padding] {
                        put_u32(&mut out, v)?;
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    out.push(1);
                    put_u32(&mut out, window)?;
                    put_u32(&mut out, stride)?;
                }
                LayerSpec::Relu => out.push(2),
                LayerSpec::Flatten => out.push(3),
                LayerSpec::Dense { out_features } => {
                    out.push(4);
                    put_u32(&mut out, out_features)?;
                }
                LayerSpec::Softmax => out.push(5),
            }
        }
        out.extend_from_slice(&self.input_mean.to_le_bytes());
        let params = self.network.params();
        put_u32(&mut out, params.len())?;
        for t in params {
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let input = [r.u32()?, r.u32()?, r.u32()?];
        let n_layers = r.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            layers.push(match r.u8()? {
                0 => LayerSpec::Conv {
                    filters: r.u32()?,
                    extent: r.u32()?,
                    stride: r.u32()?,
                    padding: r.u32()?,
                },
                1 => LayerSpec::MaxPool {
                    window: r.u32()?,
                    stride: r.u32()?,
                },
                2 => LayerSpec::Relu,
                3 => LayerSpec::Flatten,
                4 => LayerSpec::Dense { out_features: r.u32()? },
                5 => LayerSpec::Softmax,
                tag => return Err(Error::Checkpoint(format!("unknown layer tag {tag}"))),
            });
        }
        let input_mean = r.f64()?;
        let n_tensors = r.u32()?;
        let mut params = Vec::with_capacity(n_tensors.min(1024));
        for _ in 0..n_tensors {
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let volume: usize = shape.iter().product();
            if volume.saturating_mul(8) > bytes.len() {
                return Err(Error::Checkpoint(format!("tensor {shape:?} larger than file")));
            }
            let data = (0..volume).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push(Tensor::new(shape, data)?);
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let network = Network::from_params(NetworkSpec { input, layers }, params)?;
        Ok(Checkpoint { network, input_mean })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
