//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "LMIL"
//! version      u8       1
//! input_size   u32
//! conv1_ch     u32
//! conv2_ch     u32
//! seed         u64
//! param_count  u32
//! params       param_count × f32 (IEEE-754)
//! ```

use std::fs;
use std::path::Path;

use super::{Architecture, ClassifierModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LMIL";
pub const CHECKPOINT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 * 3 + 8 + 4;

impl ClassifierModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        for v in [self.arch.input_size, self.arch.conv1_channels, self.arch.conv2_channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 5 {
            return Err(corrupt("file shorter than header"));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: bytes[4],
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("file shorter than header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let arch = Architecture {
            input_size: u32_at(5),
            conv1_channels: u32_at(9),
            conv2_channels: u32_at(13),
        };
        let seed = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let count = u32_at(25);
        if !arch.is_valid() || arch.parameter_count() != count {
            return Err(corrupt("parameter count disagrees with architecture"));
        }
        if bytes.len() != HEADER_LEN + 4 * count {
            return Err(corrupt(&format!(
                "expected {} bytes, found {}",
                HEADER_LEN + 4 * count,
                bytes.len()
            )));
        }
        let params: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Self { arch, params, seed })
    }
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ClassifierModel::from_bytes(&fs::read(path)?)
}
