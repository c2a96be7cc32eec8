//! Binary model container.
//!
//! Layout (all integers little-endian):
//! `DSIMNET1`, `u32` tensor count, then per tensor `u32` name length, UTF-8
//! name, `u8` group tag, `u8` rank, `u64` dims, `u8` dtype (0 = f64); after
//! the table, every tensor's values as `f64` in table order.

use std::path::Path;

use crate::backbone::{ModelParams, Param, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"DSIMNET1";
const DTYPE_F64: u8 = 0;

pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let params = model.params();
    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.group.tag());
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(DTYPE_F64);
    }
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.err(format!("truncated file while reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MODEL_MAGIC {
        r.pos = 0;
        return r.err("not a model file (bad magic)");
    }
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?).or_else(|_| {
            r.pos = at;
            r.err("tensor name is not UTF-8")
        })?;
        let at = r.pos;
        let group = ParamGroup::from_tag(r.u8("group")?).ok_or(Error::Parse {
            offset: at,
            msg: "unknown parameter group".into(),
        })?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = r.pos;
            let d = r.u64("dimension")?;
            if d > u32::MAX as u64 {
                r.pos = at;
                return r.err("dimension too large");
            }
            shape.push(d as usize);
        }
        if r.u8("dtype")? != DTYPE_F64 {
            r.pos -= 1;
            return r.err("unsupported dtype");
        }
        table.push((name.to_string(), group, shape));
    }
    let mut params = Vec::with_capacity(table.len());
    for (name, group, shape) in table {
        let n: usize = shape.iter().product();
        let Some(nbytes) = n.checked_mul(8) else {
            return r.err("tensor too large");
        };
        let raw = r.take(nbytes, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Param {
            name,
            group,
            value: Tensor::new(&shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return r.err("trailing bytes after the last tensor");
    }
    ModelParams::from_params(params)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{MlpConfig, MsAffConfig};

    fn small() -> ModelParams {
        ModelParams::init(
            MsAffConfig {
                features: 4,
                cam_ratio: 2,
            },
            MlpConfig { hidden: vec![6, 5] },
            11,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let m = small();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
        assert_eq!(back.mlp.hidden, vec![6, 5]);
        assert_eq!(back.backbone.cam_ratio, 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&path, &small()).unwrap();
        assert_eq!(load_model(&path).unwrap(), small());
    }

    #[test]
    fn corrupt_files_are_parse_errors() {
        let bytes = encode_model(&small());
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_model(&bytes[..cut]), Err(Error::Parse { .. })),
                "cut at {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_model(&extra), Err(Error::Parse { .. })));
        // first group tag sits after magic, count, name length and name
        let mut tag = bytes;
        let name_len = u32::from_le_bytes(tag[12..16].try_into().unwrap()) as usize;
        tag[16 + name_len] = 9;
        match decode_model(&tag) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + name_len),
            other => panic!("{other:?}"),
        }
    }
}
