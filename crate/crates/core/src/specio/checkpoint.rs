//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            5 bytes  "STEN1"
//! stages           u32
//! channels         stages x u32
//! convs_per_stage  u32
//! in_channels      u32
//! out_channels     u32
//! instance_norm    u8       0 or 1
//! tensor_count     u32
//! tensors          tensor_count x (u32 length, length x f32)
//! epoch            u64
//! seed             u64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::SpecioError;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"STEN1";

/// Architecture fields that determine the parameter layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub channels: Vec<u32>,
    pub convs_per_stage: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub instance_norm: bool,
}

impl ArchDescriptor {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchDescriptor,
    /// One flat block per parameter tensor, in declaration order.
    pub params: Vec<Vec<f32>>,
    pub epoch: u64,
    pub seed: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), SpecioError> {
    let path = path.as_ref();
    let total: usize = ckpt.params.iter().map(|p| 4 + 4 * p.len()).sum();
    let mut buf = Vec::with_capacity(64 + total);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let a = &ckpt.arch;
    buf.extend_from_slice(&(a.channels.len() as u32).to_le_bytes());
    for c in &a.channels {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(&a.convs_per_stage.to_le_bytes());
    buf.extend_from_slice(&a.in_channels.to_le_bytes());
    buf.extend_from_slice(&a.out_channels.to_le_bytes());
    buf.push(a.instance_norm as u8);
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for block in &ckpt.params {
        buf.extend_from_slice(&(block.len() as u32).to_le_bytes());
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());

    let mut file = fs::File::create(path).map_err(|e| SpecioError::io(path, e))?;
    file.write_all(&buf).map_err(|e| SpecioError::io(path, e))
}

/// Reads a checkpoint, optionally validating its architecture against `expected`.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&ArchDescriptor>,
) -> Result<Checkpoint, SpecioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SpecioError::io(path, e))?;
    let fail = |reason: String| SpecioError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(5).map_err(fail)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(fail("bad magic".into()));
    }
    let stages = r.u32().map_err(fail)? as usize;
    if stages > 64 {
        return Err(fail(format!("implausible stage count {stages}")));
    }
    let channels = (0..stages).map(|_| r.u32()).collect::<Result<Vec<_>, _>>().map_err(fail)?;
    let arch = ArchDescriptor {
        channels,
        convs_per_stage: r.u32().map_err(fail)?,
        in_channels: r.u32().map_err(fail)?,
        out_channels: r.u32().map_err(fail)?,
        instance_norm: match r.take(1).map_err(fail)?[0] {
            0 => false,
            1 => true,
            other => return Err(fail(format!("bad instance_norm flag {other}"))),
        },
    };
    if let Some(want) = expected {
        if want != &arch {
            return Err(fail(format!(
                "arch mismatch: file has {arch:?}, expected {want:?}"
            )));
        }
    }
    let count = r.u32().map_err(fail)? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32().map_err(fail)? as usize;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| fail("short read".into()))?).map_err(fail)?;
        params.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    let epoch = r.u64().map_err(fail)?;
    let seed = r.u64().map_err(fail)?;
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        arch,
        params,
        epoch,
        seed,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err("short read".into()),
        }
    }

    fn u32(&mut self) -> Result<u32, String> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, String> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
