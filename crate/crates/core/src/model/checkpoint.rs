//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DIARSCK\0"
//! version    u32
//! config_len u32, then that many bytes of ModelConfig JSON
//! n_tensors  u32
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f64 values
//! sha256     32 bytes over everything above
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParameters, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DIARSCK\0";

pub fn write_checkpoint<W: Write>(params: &ModelParameters, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config).expect("config serialises");
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(params.specs.len() as u32).to_le_bytes());
    for spec in &params.specs {
        buf.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(spec.name.as_bytes());
        buf.extend_from_slice(&(spec.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(spec.cols as u32).to_le_bytes());
        for v in &params.values[spec.range()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(ModelError::Corrupt(format!(
                "truncated while reading {what}"
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParameters> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::Corrupt("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::Corrupt("checksum mismatch".into()));
    }

    let mut c = Cursor { buf: body, at: 12 };
    let config_len = c.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(config_len, "config")?)
        .map_err(|e| ModelError::Corrupt(format!("config: {e}")))?;
    let n = c.u32("tensor count")? as usize;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| ModelError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let raw = c.take(rows * cols * 8, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        arrays.push((name, data));
    }
    if c.at != body.len() {
        return Err(ModelError::Corrupt("trailing bytes".into()));
    }
    ModelParameters::from_named(&config, arrays)
}

pub fn save_checkpoint(params: &ModelParameters, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParameters> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParameters {
        let config = ModelConfig {
            dim_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_width: 8,
            seed: 3,
            ..ModelConfig::default()
        };
        ModelParameters::init(&config).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let p = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.config, p.config);
    }

    #[test]
    fn detects_damage_and_version() {
        let p = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let mut flipped = buf.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(
            read_checkpoint(&flipped[..]),
            Err(ModelError::Corrupt(_))
        ));
        let mut v2 = buf.clone();
        v2[8] = 2;
        assert!(matches!(
            read_checkpoint(&v2[..]),
            Err(ModelError::Version { found: 2, .. })
        ));
        assert!(read_checkpoint(&buf[..20]).is_err());
    }
}
