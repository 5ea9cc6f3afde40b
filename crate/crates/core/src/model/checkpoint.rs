//! Binary checkpoint: `ROTE1`, the config as `key = value` text, then each
//! parameter as name, shape and little-endian f64 values in declaration order.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, Param};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"ROTE1";

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v}")))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.len()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.num_params() * 8);
        buf.extend_from_slice(MAGIC);
        let cfg = self.config().to_kv();
        put_u64(&mut buf, cfg.len() as u64);
        buf.extend_from_slice(cfg.as_bytes());
        put_u64(&mut buf, self.params().len() as u64);
        for p in self.params() {
            put_u64(&mut buf, p.name.len() as u64);
            buf.extend_from_slice(p.name.as_bytes());
            put_u64(&mut buf, p.tensor.rank() as u64);
            for &d in p.tensor.shape() {
                put_u64(&mut buf, d as u64);
            }
            for v in p.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("missing ROTE1 header".into()));
        }
        let config = ModelConfig::from_kv(r.text()?)?;
        let count = r.len()?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.text()?.to_string();
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Param {
                name,
                tensor: Tensor::new(shape, data)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Model::from_params(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncodingMode;

    #[test]
    fn round_trip_all_modes() {
        for mode in EncodingMode::ALL {
            let m = Model::init(ModelConfig::new(11, mode), 3).unwrap();
            let back = Model::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back.config(), m.config());
            assert_eq!(back.params(), m.params());
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        let m = Model::init(ModelConfig::new(4, EncodingMode::YearOnly), 0).unwrap();
        let bytes = m.to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Model::from_bytes(b"ROTE2").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
    }

    #[test]
    fn shape_checked_against_config() {
        let m = Model::init(ModelConfig::new(4, EncodingMode::YearOnly), 0).unwrap();
        let text = m.config().to_kv();
        let other = text.replace("vocab_size = 4", "vocab_size = 5");
        let mut bytes = m.to_bytes();
        let start = MAGIC.len() + 8;
        bytes.splice(start..start + text.len(), other.bytes());
        assert!(matches!(Model::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
