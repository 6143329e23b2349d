//! TIM files: a 20-byte little-endian header followed by `gh·gw` f32 values.
//!
//! ```text
//! 0  "TIM1"
//! 4  version: u32 = 1
//! 8  grid height: u32
//! 12 grid width: u32
//! 16 provenance: u8, prompt id: u8, reserved: [u8; 2]
//! 20 values: [f32; gh·gw]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::teacher::{PromptId, Provenance, TeacherMap};

pub const TIM_MAGIC: &[u8; 4] = b"TIM1";
pub const TIM_VERSION: u32 = 1;
pub const TIM_HEADER_LEN: usize = 20;
/// Files whose values stray further than this from summing to one are
/// rejected.
const READ_SUM_TOL: f64 = 1e-3;

pub fn encode_tim(map: &TeacherMap) -> Vec<u8> {
    let (gh, gw) = map.grid();
    let mut out = Vec::with_capacity(TIM_HEADER_LEN + 4 * map.len());
    out.extend_from_slice(TIM_MAGIC);
    out.extend_from_slice(&TIM_VERSION.to_le_bytes());
    out.extend_from_slice(&(gh as u32).to_le_bytes());
    out.extend_from_slice(&(gw as u32).to_le_bytes());
    out.extend_from_slice(&[map.provenance.code(), map.prompt.code(), 0, 0]);
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses TIM bytes; `source` names the input in error messages.
pub fn decode_tim(bytes: &[u8], source: &str) -> Result<TeacherMap> {
    let fail = |msg: String| Error::format(source, msg);
    if bytes.len() < TIM_HEADER_LEN {
        return Err(fail(format!("header truncated at {} bytes", bytes.len())));
    }
    if &bytes[..4] != TIM_MAGIC {
        return Err(fail(format!("bad magic {:?}, expected TIM1", String::from_utf8_lossy(&bytes[..4]))));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(4);
    if version != TIM_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let (gh, gw) = (u32_at(8) as usize, u32_at(12) as usize);
    let provenance =
        Provenance::from_code(bytes[16]).ok_or_else(|| fail(format!("unknown provenance code {}", bytes[16])))?;
    let prompt = PromptId::from_code(bytes[17]).ok_or_else(|| fail(format!("unknown prompt id {}", bytes[17])))?;
    let n = gh
        .checked_mul(gw)
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(format!("invalid grid {gh}x{gw}")))?;
    let payload = &bytes[TIM_HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(fail(format!(
            "payload is {} bytes, grid {gh}x{gw} needs {}",
            payload.len(),
            4 * n
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TeacherMap::new(gh, gw, values, provenance, prompt, READ_SUM_TOL).map_err(|e| fail(e.to_string()))
}

pub fn write_tim(map: &TeacherMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_tim(map)).map_err(|e| Error::io(path, e))
}

pub fn read_tim(path: &Path) -> Result<TeacherMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tim(&bytes, &path.display().to_string())
}
