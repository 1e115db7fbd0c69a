//! Binary checkpoints: magic, format version, config JSON, then every tensor as
//! `name, rank, dims, little-endian f64 data` in [`ModelParams::tensors`] order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const MAGIC: &[u8; 8] = b"TFORMEB\0";
pub const VERSION: u32 = 1;

pub fn encode(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let fail = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(fail)? != MAGIC {
        return Err(fail("not a tinyformer checkpoint".into()));
    }
    let version = r.u32().map_err(fail)?;
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}, expected {VERSION}")));
    }
    let len = r.u32().map_err(fail)? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(len).map_err(fail)?)
        .map_err(|e| fail(format!("bad config: {e}")))?;
    cfg.validate()?;
    let mut params = ModelParams::zeros(&cfg);
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = r.u32().map_err(fail)? as usize;
    if count != expected.len() {
        return Err(Error::ShapeMismatch {
            name: "<tensor count>".into(),
            expected: vec![expected.len()],
            found: vec![count],
        });
    }
    for ((name, shape), mut dst) in expected.into_iter().zip(params.tensors_mut()) {
        let name_len = r.u16().map_err(fail)? as usize;
        let found_name = String::from_utf8_lossy(r.take(name_len).map_err(fail)?).into_owned();
        if found_name != name {
            return Err(fail(format!("expected tensor `{name}`, found `{found_name}`")));
        }
        let rank = r.u8().map_err(fail)? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>().map_err(fail)?;
        if dims != shape {
            return Err(Error::ShapeMismatch { name, expected: shape, found: dims });
        }
        for v in dst.iter_mut() {
            *v = f64::from_le_bytes(r.take(8).map_err(fail)?.try_into().expect("eight bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode(params)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?
        .read_to_end(&mut bytes)?;
    decode(&bytes, path)
}
