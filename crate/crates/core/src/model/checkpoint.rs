//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON
//! header, then raw little-endian tensor payloads in declaration order
//! (parameters, then AdamW first moments, then second moments when present).
//! The header stores the SHA-256 of the payload, verified on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::optimizer::AdamWState;
use crate::parameterization::{PlanDocument, ScalingPlan};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"CPCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub plan: PlanDocument,
    pub seed: u64,
    pub step: u64,
    pub dtype: String,
    pub tensors: Vec<TensorMeta>,
    pub optimizer_step: Option<u64>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub plan: ScalingPlan,
    pub seed: u64,
    pub step: u64,
    pub params: Parameters<T>,
    pub optimizer: Option<AdamWState<T>>,
}

fn elem_size<T: Real>() -> usize {
    std::mem::size_of::<T>()
}

fn push_tensor<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &x in t.data() {
        match elem_size::<T>() {
            4 => out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
            _ => out.extend_from_slice(&x.as_f64().to_le_bytes()),
        }
    }
}

fn read_tensor<T: Real>(bytes: &[u8], shape: &[usize]) -> Tensor<T> {
    let data = match elem_size::<T>() {
        4 => bytes.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect(),
        _ => bytes.chunks_exact(8).map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
    };
    Tensor::from_vec(shape, data)
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut payload = Vec::new();
    for t in &ckpt.params.tensors {
        push_tensor(&mut payload, &t.value);
    }
    if let Some(opt) = &ckpt.optimizer {
        for t in opt.m.iter().chain(&opt.v) {
            push_tensor(&mut payload, t);
        }
    }
    let header = CheckpointHeader {
        config: ckpt.config,
        plan: PlanDocument::from(&ckpt.plan),
        seed: ckpt.seed,
        step: ckpt.step,
        dtype: T::NAME.to_string(),
        tensors: ckpt
            .params
            .tensors
            .iter()
            .map(|t| TensorMeta { name: t.name.clone(), shape: t.value.shape().to_vec() })
            .collect(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.t),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.dtype != T::NAME {
        return Err(bad(format!("stored as {}, requested {}", header.dtype, T::NAME)));
    }
    let payload = &bytes[16 + hlen..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(bad("payload hash mismatch".into()));
    }
    let plan = ScalingPlan::try_from(header.plan.clone())?;
    let mut params = Parameters::<T>::init(&header.config, &plan, header.seed)?;
    let sizes: Vec<usize> =
        header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * elem_size::<T>()).collect();
    let param_bytes: usize = sizes.iter().sum();
    let expected = param_bytes * if header.optimizer_step.is_some() { 3 } else { 1 };
    if payload.len() != expected || header.tensors.len() != params.len() {
        return Err(bad(format!("payload has {} bytes, header describes {expected}", payload.len())));
    }

    let mut offset = 0;
    let mut take = |meta: &TensorMeta, size: usize| {
        let t = read_tensor::<T>(&payload[offset..offset + size], &meta.shape);
        offset += size;
        t
    };
    for ((p, meta), &size) in params.tensors.iter_mut().zip(&header.tensors).zip(&sizes) {
        if p.name != meta.name || p.value.shape() != meta.shape.as_slice() {
            return Err(bad(format!("tensor {} does not match config", meta.name)));
        }
        p.value = take(meta, size);
    }
    let optimizer = match header.optimizer_step {
        Some(t) => {
            let mut st = AdamWState::new(&params, &plan);
            st.t = t;
            for (m, (meta, &size)) in st.m.iter_mut().zip(header.tensors.iter().zip(&sizes)) {
                *m = take(meta, size);
            }
            for (v, (meta, &size)) in st.v.iter_mut().zip(header.tensors.iter().zip(&sizes)) {
                *v = take(meta, size);
            }
            Some(st)
        }
        None => None,
    };
    Ok(Checkpoint { config: header.config, plan, seed: header.seed, step: header.step, params, optimizer })
}
