//! Checkpoint and feature-matrix files.
//!
//! Checkpoint, little-endian: `b"POCK"`, `u32` version, `u32` JSON length,
//! JSON header (hyperparameters, step, optimizer step counts), `u32` tensor
//! count, then per tensor `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims, `f64` data.
//!
//! Features: `b"FEAT"`, `u32` rows, `u32` dim, `f32` data row-major.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SslError, SslHyper, SslState};
use crate::numeric::{AdamW, AdamWConfig, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"POCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    hyper: SslHyper,
    step: u64,
    adam: AdamWConfig,
    adam_steps: BTreeMap<String, u64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), SslError> {
    let v = u32::try_from(v).map_err(|_| SslError::Format("length exceeds u32".into()))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SslError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SslError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, SslError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn checkpoint_to_bytes(state: &SslState) -> Result<Vec<u8>, SslError> {
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for (k, v) in &state.student {
        tensors.push((format!("student.{k}"), v));
    }
    for (k, v) in &state.teacher {
        tensors.push((format!("teacher.{k}"), v));
    }
    tensors.push(("center.dino".into(), &state.dino_center));
    tensors.push(("center.ibot".into(), &state.ibot_center));
    let mut adam_steps = BTreeMap::new();
    for name in state.optimizer.param_names() {
        let (m, v, step) = state.optimizer.moments(name).expect("listed name");
        tensors.push((format!("adam.m.{name}"), m));
        tensors.push((format!("adam.v.{name}"), v));
        adam_steps.insert(name.clone(), step);
    }
    let header = Header { hyper: state.hyper.clone(), step: state.step, adam: state.optimizer.config, adam_steps };
    let json = serde_json::to_vec(&header).map_err(|e| SslError::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, tensors.len())?;
    for (name, t) in tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<SslState, SslError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(SslError::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(SslError::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(json_len)?).map_err(|e| SslError::Format(e.to_string()))?;
    let n = r.u32()?;
    let mut named = BTreeMap::new();
    for _ in 0..n {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| SslError::Format(e.to_string()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data =
            r.take(numel * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        named.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(SslError::Format("trailing bytes after checkpoint".into()));
    }
    let mut take = |key: &str| named.remove(key).ok_or_else(|| SslError::Format(format!("missing tensor {key}")));
    let dino_center = take("center.dino")?;
    let ibot_center = take("center.ibot")?;
    let mut optimizer = AdamW::new(header.adam);
    for (name, &step) in &header.adam_steps {
        let m = take(&format!("adam.m.{name}"))?;
        let v = take(&format!("adam.v.{name}"))?;
        optimizer.set_moments(name, m, v, step);
    }
    let mut student = ParamSet::new();
    let mut teacher = ParamSet::new();
    for (k, v) in named {
        if let Some(n) = k.strip_prefix("student.") {
            student.insert(n.to_string(), v);
        } else if let Some(n) = k.strip_prefix("teacher.") {
            teacher.insert(n.to_string(), v);
        } else {
            return Err(SslError::Format(format!("unexpected tensor {k}")));
        }
    }
    Ok(SslState { hyper: header.hyper, student, teacher, dino_center, ibot_center, optimizer, step: header.step })
}

pub fn save_checkpoint(state: &SslState, path: &Path) -> Result<(), SslError> {
    std::fs::write(path, checkpoint_to_bytes(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SslState, SslError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

pub fn features_to_bytes(features: &Tensor) -> Result<Vec<u8>, SslError> {
    let (rows, dim) = if features.numel() == 0 { (0, features.dims2().1) } else { features.dims2() };
    let mut out = Vec::with_capacity(12 + features.numel() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, rows)?;
    put_u32(&mut out, dim)?;
    for &v in features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Reads a feature matrix as `f64` rows.
pub fn features_from_bytes(bytes: &[u8]) -> Result<Vec<Vec<f64>>, SslError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FEATURE_MAGIC {
        return Err(SslError::Format("bad feature magic".into()));
    }
    let (rows, dim) = (r.u32()?, r.u32()?);
    let body = r.take(rows * dim * 4)?;
    if r.pos != bytes.len() {
        return Err(SslError::Format("trailing bytes after features".into()));
    }
    let vals: Vec<f64> =
        body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Ok(if dim == 0 { vec![Vec::new(); rows] } else { vals.chunks(dim).map(<[f64]>::to_vec).collect() })
}

pub fn save_features(features: &Tensor, path: &Path) -> Result<(), SslError> {
    std::fs::write(path, features_to_bytes(features)?)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<Vec<Vec<f64>>, SslError> {
    features_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::{next_batch, train_step};
    use crate::synth::two_cluster_patches;

    #[test]
    fn checkpoint_roundtrip_preserves_state_and_bytes() {
        let hyper = SslHyper { batch_size: 2, ..SslHyper::default() };
        let mut st = SslState::new(hyper).unwrap();
        let src = two_cluster_patches(2, 96, 1);
        let b = next_batch(&st, &src).unwrap();
        train_step(&mut st, &b).unwrap();
        let bytes = checkpoint_to_bytes(&st).unwrap();
        assert_eq!(&bytes[..4], b"POCK");
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, st);
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn feature_file_layout() {
        let t = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 1.0, 0.25]]).unwrap();
        let bytes = features_to_bytes(&t).unwrap();
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(features_from_bytes(&bytes).unwrap(), vec![vec![0.5, -1.0, 2.0], vec![0.0, 1.0, 0.25]]);
    }
}
