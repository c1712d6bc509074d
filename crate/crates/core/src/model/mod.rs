//! Pre-LN decoder-only transformer with α-scaled residual branches, plus the
//! two toy residual networks used by the theory diagnostics.

mod checkpoint;
mod toy;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parameterization::{ParamRole, ScalingPlan};
use crate::tensor::{gaussian_init, Real, RngStream, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use toy::{ReluTrace, ToyLinearResNet, ToyReluResMLP};
pub use transformer::{ActivationTrace, ForwardPass, MergeSite, TraceEntry, Transformer};

/// LayerNorm ε. Only AdamW's ε is scaled with width and depth.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub layers: usize,
    #[serde(default = "default_d_head")]
    pub d_head: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

fn default_d_head() -> usize {
    64
}

impl ModelConfig {
    pub fn new(width: usize, layers: usize, vocab_size: usize, seq_len: usize) -> Self {
        ModelConfig { width, layers, d_head: 64, vocab_size, seq_len }
    }

    pub fn with_d_head(mut self, d_head: usize) -> Self {
        self.d_head = d_head;
        self
    }

    pub fn n_heads(&self) -> usize {
        self.width / self.d_head
    }

    pub fn ffn_width(&self) -> usize {
        4 * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.layers == 0 || self.vocab_size == 0 || self.seq_len == 0 || self.d_head == 0 {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.width.is_multiple_of(self.d_head) {
            return Err(Error::InvalidArgument(format!(
                "width {} is not a multiple of d_head {}",
                self.width, self.d_head
            )));
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        Slot::ALL.iter().map(|s| s.shape(self).iter().product::<usize>()).sum::<usize>() * self.layers
            + 2 * self.vocab_size * self.width
            + 2 * self.width
    }
}

/// Position of a tensor inside one transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Ln1G,
    Ln1B,
    WQkv,
    BQkv,
    WO,
    BO,
    Ln2G,
    Ln2B,
    WUp,
    BUp,
    WDown,
    BDown,
}

impl Slot {
    pub(crate) const ALL: [Slot; 12] = [
        Slot::Ln1G,
        Slot::Ln1B,
        Slot::WQkv,
        Slot::BQkv,
        Slot::WO,
        Slot::BO,
        Slot::Ln2G,
        Slot::Ln2B,
        Slot::WUp,
        Slot::BUp,
        Slot::WDown,
        Slot::BDown,
    ];

    fn name(self) -> &'static str {
        match self {
            Slot::Ln1G => "ln1.gain",
            Slot::Ln1B => "ln1.bias",
            Slot::WQkv => "attn.w_qkv",
            Slot::BQkv => "attn.b_qkv",
            Slot::WO => "attn.w_o",
            Slot::BO => "attn.b_o",
            Slot::Ln2G => "ln2.gain",
            Slot::Ln2B => "ln2.bias",
            Slot::WUp => "mlp.w_up",
            Slot::BUp => "mlp.b_up",
            Slot::WDown => "mlp.w_down",
            Slot::BDown => "mlp.b_down",
        }
    }

    fn role(self) -> ParamRole {
        match self {
            Slot::Ln1G | Slot::Ln1B | Slot::Ln2G | Slot::Ln2B => ParamRole::PreLn,
            Slot::WQkv | Slot::WO | Slot::WUp | Slot::WDown => ParamRole::HiddenWeight,
            Slot::BQkv | Slot::BO | Slot::BUp | Slot::BDown => ParamRole::HiddenBias,
        }
    }

    fn shape(self, c: &ModelConfig) -> Vec<usize> {
        let (n, f) = (c.width, c.ffn_width());
        match self {
            Slot::Ln1G | Slot::Ln1B | Slot::Ln2G | Slot::Ln2B | Slot::BO | Slot::BDown => vec![n],
            Slot::WQkv => vec![n, 3 * n],
            Slot::BQkv => vec![3 * n],
            Slot::WO => vec![n, n],
            Slot::WUp => vec![n, f],
            Slot::BUp => vec![f],
            Slot::WDown => vec![f, n],
        }
    }
}

/// Index of a layer tensor in declaration order.
pub(crate) fn layer_index(layer: usize, slot: Slot) -> usize {
    1 + layer * Slot::ALL.len() + slot as usize
}

pub(crate) const IDX_WTE: usize = 0;

pub(crate) fn final_index(c: &ModelConfig, k: usize) -> usize {
    1 + c.layers * Slot::ALL.len() + k
}

/// One trainable tensor together with its scaling role.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub role: ParamRole,
    pub layer: Option<usize>,
    pub value: Tensor<T>,
}

/// All transformer tensors in declaration order: embedding, per-layer blocks,
/// final LayerNorm gain and bias, unembedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub tensors: Vec<ParamTensor<T>>,
}

// Stream ids keep a tensor's init independent of the total depth.
fn stream_id(code: u64, layer: usize) -> u64 {
    (code << 32) | layer as u64
}

impl<T: Real> Parameters<T> {
    /// Deterministic initialization from `(seed, config, plan)`. LayerNorm
    /// gains start at one and LayerNorm biases at zero.
    pub fn init(config: &ModelConfig, plan: &ScalingPlan, seed: u64) -> Result<Self> {
        config.validate()?;
        let (n, v) = (config.width, config.vocab_size);
        let mut tensors = Vec::with_capacity(config.layers * Slot::ALL.len() + 4);
        let std = |role: ParamRole| plan.role(role).init_std;
        tensors.push(ParamTensor {
            name: "wte".into(),
            role: ParamRole::Embedding,
            layer: None,
            value: gaussian_init(RngStream::new(seed, stream_id(100, 0)), &[v, n], std(ParamRole::Embedding)),
        });
        for layer in 0..config.layers {
            for slot in Slot::ALL {
                let shape = slot.shape(config);
                let value = match slot {
                    Slot::Ln1G | Slot::Ln2G => Tensor::full(&shape, T::one()),
                    Slot::Ln1B | Slot::Ln2B => Tensor::zeros(&shape),
                    _ => {
                        gaussian_init(RngStream::new(seed, stream_id(slot as u64 + 1, layer)), &shape, std(slot.role()))
                    }
                };
                tensors.push(ParamTensor {
                    name: format!("layers.{layer}.{}", slot.name()),
                    role: slot.role(),
                    layer: Some(layer),
                    value,
                });
            }
        }
        tensors.push(ParamTensor {
            name: "ln_f.gain".into(),
            role: ParamRole::FinalLn,
            layer: None,
            value: Tensor::full(&[n], T::one()),
        });
        tensors.push(ParamTensor {
            name: "ln_f.bias".into(),
            role: ParamRole::FinalLn,
            layer: None,
            value: Tensor::zeros(&[n]),
        });
        tensors.push(ParamTensor {
            name: "w_unemb".into(),
            role: ParamRole::Unembedding,
            layer: None,
            value: gaussian_init(RngStream::new(seed, stream_id(101, 0)), &[v, n], std(ParamRole::Unembedding)),
        });
        Ok(Parameters { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &[T] {
        self.tensors[idx].value.data()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.value.shape())).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor { name: t.name.clone(), role: t.role, layer: t.layer, value: t.value.cast() })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameterization::{resolve_plan, BaseHyperparams, ParamKind};

    #[test]
    fn roles_cover_every_tensor() {
        let c = ModelConfig::new(64, 3, 50, 8);
        let plan = resolve_plan(ParamKind::MuP, &BaseHyperparams::default(), 64, 3).unwrap();
        let p: Parameters<f32> = Parameters::init(&c, &plan, 0).unwrap();
        assert_eq!(p.len(), 1 + 12 * 3 + 3);
        assert_eq!(p.scalar_count(), c.param_count());
        assert_eq!(p.tensors[IDX_WTE].role, ParamRole::Embedding);
        assert_eq!(p.tensors[final_index(&c, 2)].role, ParamRole::Unembedding);
        assert_eq!(p.tensors[layer_index(2, Slot::WO)].name, "layers.2.attn.w_o");
        assert_eq!(p.tensors[layer_index(1, Slot::BUp)].role, ParamRole::HiddenBias);
    }

    #[test]
    fn layer_init_independent_of_depth() {
        let base = BaseHyperparams::default();
        let c2 = ModelConfig::new(64, 2, 50, 8);
        let c5 = ModelConfig { layers: 5, ..c2 };
        let plan = resolve_plan(ParamKind::Sp, &base, 64, 2).unwrap();
        let a: Parameters<f32> = Parameters::init(&c2, &plan, 9).unwrap();
        let b: Parameters<f32> = Parameters::init(&c5, &plan, 9).unwrap();
        assert_eq!(a.tensors[layer_index(1, Slot::WUp)], b.tensors[layer_index(1, Slot::WUp)]);
        assert_eq!(a.tensors[final_index(&c2, 2)].value, b.tensors[final_index(&c5, 2)].value);
    }

    #[test]
    fn rejects_bad_head_split() {
        assert!(ModelConfig::new(100, 2, 10, 4).validate().is_err());
        assert!(ModelConfig::new(128, 2, 10, 4).validate().is_ok());
    }
}
