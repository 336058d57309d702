//! Binary training checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes  "RENEUSCK"
//! version   u32
//! header    u64 length + JSON {config, iteration, param_count}
//! params    f64 × param_count   [sdf, appearance, ln s]
//! adam      u64 step, f64 beta1, beta2, eps, then m and v (f64 × param_count each)
//! digest    32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use reneus_core::nn::Adam;
use reneus_core::train::{TrainConfig, TrainState};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RENEUSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.state.params.len();
        let header = serde_json::to_vec(&Header {
            config: self.config,
            iteration: self.state.iteration,
            param_count: n,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(64 + header.len() + 24 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let adam = &self.state.adam;
        let floats = |out: &mut Vec<u8>, xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        floats(&mut out, &self.state.params);
        out.extend_from_slice(&adam.step.to_le_bytes());
        floats(&mut out, &[adam.beta1, adam.beta2, adam.eps]);
        floats(&mut out, &adam.m);
        floats(&mut out, &adam.v);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checkpoint digest mismatch".into());
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| format!("bad header: {e}"))?;
        let n = header.param_count;
        let params = r.f64s(n)?;
        let step = r.u64()?;
        let hyper = r.f64s(3)?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        if r.pos != body.len() {
            return Err("trailing bytes in checkpoint".into());
        }
        Ok(Self {
            config: header.config,
            state: TrainState {
                params,
                adam: Adam {
                    beta1: hyper[0],
                    beta2: hyper[1],
                    eps: hyper[2],
                    step,
                    m,
                    v,
                },
                iteration: header.iteration,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("truncated checkpoint")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let params: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let mut adam = Adam::new(params.len());
        let mut p = params.clone();
        adam.update(&mut p, &params, 1e-3);
        Checkpoint {
            config: TrainConfig {
                seed: 11,
                ..TrainConfig::default()
            },
            state: TrainState {
                params: p,
                adam,
                iteration: 1234,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[100] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().contains("digest"));
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 40]).is_err());
    }
}
