//! Binary checkpoint container: magic, format version, config echo, then
//! named tensors as little-endian f64, for bit-exact round trips.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ClassifierParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CKCVCKPT";
const VERSION: u32 = 1;

pub fn save(path: &Path, config_echo: &str, params: &ClassifierParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let echo = config_echo.as_bytes();
    buf.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    buf.extend_from_slice(echo);

    let mut entries: Vec<(String, &Tensor)> = Vec::new();
    params.visit(&mut |name, t| entries.push((name, t)));
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, tensor) in entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u64).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

/// Load the config echo and named tensors.
pub fn load(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let echo_len = r.u64()? as usize;
    let echo = String::from_utf8(r.bytes(echo_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
    let count = r.u64()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u64()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.bytes(8)?.try_into().unwrap()));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok((echo, tensors))
}

/// Copy loaded tensors into a freshly constructed model, requiring an
/// exact name and shape match in both directions.
pub fn restore(params: &mut ClassifierParams, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut used = vec![false; tensors.len()];
    let mut failure: Option<Error> = None;
    params.visit_mut(&mut |name, slot| {
        if failure.is_some() {
            return;
        }
        match tensors.iter().position(|(n, _)| *n == name) {
            Some(i) => {
                let t = &tensors[i].1;
                if t.shape() != slot.shape() {
                    failure = Some(Error::Checkpoint(format!(
                        "tensor {name}: checkpoint shape {:?} does not match model shape {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                    return;
                }
                slot.data_mut().copy_from_slice(t.data());
                used[i] = true;
            }
            None => failure = Some(Error::Checkpoint(format!("missing tensor {name}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(i) = used.iter().position(|&u| !u) {
        return Err(Error::Checkpoint(format!(
            "checkpoint tensor {} has no slot in the model",
            tensors[i].0
        )));
    }
    Ok(())
}
