//! Binary checkpoints.
//!
//! Layout, all integers little-endian u32:
//! magic `CPSERMDL`, version, label count, labels (name length, UTF-8 name, neutral flag
//! byte), tensor count, per tensor its rank and dims, then every parameter as an f64 in
//! tensor declaration order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AttentionParams, ModelError, ModelParams, Result, TENSOR_NAMES};
use crate::corpus::{EmotionLabel, LabelSet};

const MAGIC: &[u8; 8] = b"CPSERMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub labels: LabelSet,
    pub params: ModelParams,
}

fn err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut buf, self.labels.len());
        for label in self.labels.labels() {
            put_u32(&mut buf, label.name.len());
            buf.extend_from_slice(label.name.as_bytes());
            buf.push(label.is_neutral as u8);
        }
        let shapes = self.params.shapes();
        put_u32(&mut buf, shapes.len());
        for shape in &shapes {
            put_u32(&mut buf, shape.len());
            for d in shape {
                put_u32(&mut buf, *d);
            }
        }
        for (_, t) in self.params.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| err(path, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| err(path, e.to_string()))?;
        Self::from_bytes(&bytes).map_err(|reason| err(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n_labels = r.u32()? as usize;
        let mut labels = Vec::with_capacity(n_labels.min(1024));
        for _ in 0..n_labels {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| "label is not UTF-8".to_string())?
                .to_string();
            let neutral = r.take(1)?[0] != 0;
            labels.push(EmotionLabel::new(name, neutral));
        }
        let labels = LabelSet::new(labels).map_err(|e| e.to_string())?;

        let n_tensors = r.u32()? as usize;
        if n_tensors != TENSOR_NAMES.len() {
            return Err(format!(
                "expected {} tensors, found {n_tensors}",
                TENSOR_NAMES.len()
            ));
        }
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            if rank > 2 {
                return Err(format!("tensor rank {rank}"));
            }
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            shapes.push(dims);
        }
        let enc_w1 = matrix(&mut r, &shapes[0])?;
        let enc_b1 = vector(&mut r, &shapes[1])?;
        let enc_w2 = matrix(&mut r, &shapes[2])?;
        let enc_b2 = vector(&mut r, &shapes[3])?;
        let mu = matrix(&mut r, &shapes[4])?;
        let s = vector(&mut r, &shapes[5])?;
        let head_w = matrix(&mut r, &shapes[6])?;
        let head_b = vector(&mut r, &shapes[7])?;
        let out_w = matrix(&mut r, &shapes[8])?;
        let out_b = vector(&mut r, &shapes[9])?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let params = ModelParams {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            attention: AttentionParams { mu, s },
            head_w,
            head_b,
            out_w,
            out_b,
        };
        params.validate().map_err(|e| e.to_string())?;
        if params.out_b.len() != labels.len() {
            return Err(format!(
                "{} outputs for {} labels",
                params.out_b.len(),
                labels.len()
            ));
        }
        Ok(Self { labels, params })
    }
}

fn matrix(r: &mut Reader, shape: &[usize]) -> std::result::Result<Array2<f64>, String> {
    if shape.len() != 2 {
        return Err("expected a matrix".into());
    }
    let vals = r.f64s(shape[0] * shape[1])?;
    Ok(Array2::from_shape_vec((shape[0], shape[1]), vals).expect("sized"))
}

fn vector(r: &mut Reader, shape: &[usize]) -> std::result::Result<Array1<f64>, String> {
    if shape.len() != 1 {
        return Err("expected a vector".into());
    }
    Ok(Array1::from_vec(r.f64s(shape[0])?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err("truncated".into()),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
