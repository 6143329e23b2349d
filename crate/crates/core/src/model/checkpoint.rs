//! Binary checkpoint format.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "IVIT" version
//! image patch channels embed_dim heads layers classes
//! gate_mode:u8 reserved:[u8; 3] gcn_hidden tensor_count
//! tensor_count × { name_len name_bytes rank dims[rank] f32[prod(dims)] }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GateMode, ModelConfig, Params};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IVIT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model configuration and parameters as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 4 * self.params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.image_size, c.patch_size, c.channels, c.embed_dim, c.heads, c.layers, c.classes] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&[c.gate_mode.code(), 0, 0, 0]);
        put_u32(&mut out, c.gcn_hidden)?;
        put_u32(&mut out, self.params.len())?;
        for (name, m) in self.params.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, 2)?;
            put_u32(&mut out, m.rows())?;
            put_u32(&mut out, m.cols())?;
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses `bytes`; `source` names the input in error messages.
    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, source };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(source, "bad magic, expected IVIT"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(source, format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let flags = r.take(4)?;
        let gate_mode = GateMode::from_code(flags[0])
            .ok_or_else(|| Error::format(source, format!("unknown gate mode code {}", flags[0])))?;
        let config = ModelConfig {
            image_size: dims[0],
            patch_size: dims[1],
            channels: dims[2],
            embed_dim: dims[3],
            heads: dims[4],
            layers: dims[5],
            classes: dims[6],
            gate_mode,
            gcn_hidden: r.u32()? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::format(source, format!("invalid config block: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(source, "tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            if !(1..=2).contains(&rank) {
                return Err(Error::format(source, format!("tensor `{name}` has rank {rank}")));
            }
            let mut shape = [1usize; 2];
            for d in shape.iter_mut().skip(2 - rank) {
                *d = r.u32()? as usize;
            }
            let n = shape[0]
                .checked_mul(shape[1])
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::format(source, format!("tensor `{name}` is truncated")))?;
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if params.contains(&name) {
                return Err(Error::format(source, format!("duplicate tensor `{name}`")));
            }
            params.insert(name, Matrix::from_vec(shape[0], shape[1], data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(source, format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(self.source, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attach_interaction, init_backbone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            layers: 1,
            classes: 3,
            gate_mode: GateMode::Convex,
            gcn_hidden: 4,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = init_backbone(&config, &mut rng).unwrap();
        attach_interaction(&mut params, &config, true, &mut rng).unwrap();
        Checkpoint { config, params }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"IVIT");
        let back = Checkpoint::decode(&bytes, "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad, "m"), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::decode(&bad, "m").is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1], "m").is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(Checkpoint::decode(&bad, "m").is_err());
        let mut bad = bytes;
        bad[8 + 4] = 5; // patch size 5 no longer divides 8
        assert!(Checkpoint::decode(&bad, "m").unwrap_err().to_string().contains("divisible"));
    }
}
