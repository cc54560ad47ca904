//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "PRKANCKP"
//! version    u32       1
//! header_len u64
//! header     JSON      {"spec": ModelSpec, "seed": u64}
//! count      u32       number of tensors
//! tensor*    name_len u32, name utf-8, rank u32, dims u64 * rank, data f64 * numel
//! ```
//!
//! Tensors appear in build order: every trainable parameter, then each
//! normalization layer's `running_mean` and `running_var`. Values are stored
//! as raw IEEE-754 bits, so a round trip is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelSpec;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PRKANCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
}

fn entries(model: &Model) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    for n in model.norms() {
        let prefix = n.gamma.name.trim_end_matches(".gamma");
        let d = n.dim();
        out.push((
            format!("{prefix}.running_mean"),
            Tensor::from_parts(vec![d], n.running_mean.clone()),
        ));
        out.push((
            format!("{prefix}.running_var"),
            Tensor::from_parts(vec![d], n.running_var.clone()),
        ));
    }
    out
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec: model.spec().clone(),
        seed: model.seed(),
    })?;
    let tensors = entries(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
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

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(hlen)?)?;
    let mut model = Model::build(&header.spec, header.seed)?;
    let expected = entries(&model);
    let count = cur.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, want) in &expected {
        let nlen = cur.u32()? as usize;
        let found = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        if found != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {found}")));
        }
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != want.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, found {shape:?}",
                want.shape()
            )));
        }
        let raw = cur.take(want.len() * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push(data);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let mut it = loaded.into_iter();
    for p in model.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::from_parts(shape, it.next().unwrap());
    }
    for n in model.norms_mut() {
        n.running_mean = it.next().unwrap();
        n.running_var = it.next().unwrap();
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::config::Variant;
    use crate::nn::{Mode, NormKind};
    use crate::layers::config::NormPosition;
    use crate::tensor::Tape;

    fn bits(m: &Model) -> Vec<u64> {
        entries(m)
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::new(Variant::DimSum)
            .with_norm(NormKind::Batch, NormPosition::Input)
            .with_structure(vec![16, 8, 3]);
        let mut m = Model::build(&spec, 3).unwrap();
        // move running statistics and weights off their initial values
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[4, 16], (0..64).map(|i| (i as f64).sin()).collect()).unwrap());
        m.forward(&mut tape, x, Mode::Train).unwrap();
        m.params_mut()[0].value.data_mut()[0] = std::f64::consts::PI / 3.0;
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(back.spec(), m.spec());
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::build(&ModelSpec::new(Variant::Fwv).with_structure(vec![8, 2]), 0).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
