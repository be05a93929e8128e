//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SPNT"                magic
//! u32                    format version (1)
//! u32                    header length L
//! [u8; L]                UTF-8 JSON header {"config", "n", "f", "has_head"}
//! u32                    tensor count
//! per tensor:
//!   u32 rows, u32 cols
//!   rows·cols f64        row-major values
//! ```
//!
//! Tensors are stored in [`JgeParams::tensors`] order followed by the head
//! weights and bias when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::HeadParams;
use crate::jge::{JgeParams, NetworkConfig};

pub const MAGIC: &[u8; 4] = b"SPNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Node count of the graph the head was trained on.
    pub n: usize,
    pub f: usize,
    pub jge: JgeParams,
    pub head: Option<HeadParams>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    n: usize,
    f: usize,
    has_head: bool,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            n: self.n,
            f: self.f,
            has_head: self.head.is_some(),
        })?;
        let mut tensors = self.jge.tensors();
        if let Some(h) = &self.head {
            tensors.push(&h.w);
            tensors.push(&h.b);
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&to_u32(header.len(), "header length")?.to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
        for t in tensors {
            w.write_all(&to_u32(t.nrows(), "rows")?.to_le_bytes())?;
            w.write_all(&to_u32(t.ncols(), "cols")?.to_le_bytes())?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; rows * cols * 8];
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push(Array2::from_shape_vec((rows, cols), values).expect("length is rows·cols"));
        }
        let head = if header.has_head {
            if tensors.len() < 2 {
                return Err(Error::Checkpoint("head tensors missing".into()));
            }
            let b = tensors.pop().expect("checked");
            let w = tensors.pop().expect("checked");
            if w.nrows() != header.n || b.dim() != (header.n, 1) {
                return Err(Error::Checkpoint(format!(
                    "head shapes {:?}, {:?} for n = {}",
                    w.dim(),
                    b.dim(),
                    header.n
                )));
            }
            Some(HeadParams { w, b })
        } else {
            None
        };
        let jge = JgeParams::from_tensors(&header.config, header.f, tensors)
            .map_err(|e| Error::Checkpoint(format!("network tensors: {e}")))?;
        Ok(Self {
            config: header.config,
            n: header.n,
            f: header.f,
            jge,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jge::{init_params, Activation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_with_and_without_head() {
        let config = NetworkConfig::uniform(2, 3, 4, Activation::Tanh, false);
        let jge = init_params(&config, 5, 7);
        let head = HeadParams::init(6, config.head_input_len(5), &mut ChaCha8Rng::seed_from_u64(1));
        for head in [None, Some(head)] {
            let ck = Checkpoint {
                config: config.clone(),
                n: 6,
                f: 5,
                jge: jge.clone(),
                head,
            };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            Checkpoint::read_from(&b"NOPE0000"[..]),
            Err(Error::Checkpoint(_))
        ));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::read_from(bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
