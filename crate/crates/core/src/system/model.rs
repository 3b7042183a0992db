//! Transformer shape descriptions and closed-form model sizes.

use serde::{Deserialize, Serialize};

use crate::dataflow::{AttentionConfig, NormKind};
use crate::error::{Error, Result};
use crate::quant::DEFAULT_GROUP_SIZE;

/// Bytes of one FP16 element. The embedding table and norm weights always
/// use this precision.
pub const FP16_BYTES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPrecision {
    Fp16,
    /// Four-bit codes with one FP16 scale per group of inputs.
    #[default]
    Int4,
}

fn default_group() -> usize {
    DEFAULT_GROUP_SIZE
}

fn default_norm() -> NormKind {
    NormKind::Rms
}

/// Decoder-only transformer with grouped-query attention and a gated MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: usize,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    pub vocab_size: usize,
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    #[serde(default)]
    pub weight_precision: WeightPrecision,
    #[serde(default = "default_group")]
    pub group_size: usize,
    /// The FP16 embedding table lives on external storage, not in DRAM.
    #[serde(default)]
    pub embedding_offloaded: bool,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    pub rope_theta: f64,
    pub max_context: usize,
    /// Advertised parameter count in billions, used for normalized
    /// performance.
    pub nominal_params_b: f64,
}

/// Weight rows × columns of one projection, `rows` being outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
}

impl MatrixShape {
    pub fn params(self) -> u64 {
        self.rows as u64 * self.cols as u64
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("model {}: {what}", self.name)));
        if self.layers == 0 || self.hidden_dim == 0 || self.head_dim == 0 || self.num_kv_heads == 0 {
            return bad("layers, hidden_dim, head_dim and num_kv_heads must be positive");
        }
        if self.num_q_heads % self.num_kv_heads != 0 {
            return bad("num_q_heads must be a multiple of num_kv_heads");
        }
        if self.head_dim % 2 != 0 || self.hidden_dim % 2 != 0 || self.intermediate_dim % 2 != 0 {
            return bad("hidden, intermediate and head dimensions must be even");
        }
        if self.weight_precision == WeightPrecision::Int4 {
            let g = self.group_size;
            if g == 0 || self.hidden_dim % g != 0 || self.intermediate_dim % g != 0 || self.q_dim() % g != 0 {
                return bad("group_size must divide every projection input dimension");
            }
        }
        if self.max_context == 0 || !(self.rope_theta > 0.0) || !(self.nominal_params_b > 0.0) {
            return bad("max_context, rope_theta and nominal_params_b must be positive");
        }
        Ok(())
    }

    pub fn q_dim(&self) -> usize {
        self.num_q_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.num_kv_heads * self.head_dim
    }

    pub fn group_size_ratio(&self) -> usize {
        self.num_q_heads / self.num_kv_heads
    }

    /// Per-layer projections in execution order.
    pub fn layer_matrices(&self) -> [(&'static str, MatrixShape); 7] {
        let (h, i, q, kv) = (self.hidden_dim, self.intermediate_dim, self.q_dim(), self.kv_dim());
        let m = |rows, cols| MatrixShape { rows, cols };
        [
            ("wq", m(q, h)),
            ("wk", m(kv, h)),
            ("wv", m(kv, h)),
            ("wo", m(h, q)),
            ("w_gate", m(i, h)),
            ("w_up", m(i, h)),
            ("w_down", m(h, i)),
        ]
    }

    pub fn lm_head(&self) -> MatrixShape {
        MatrixShape {
            rows: self.vocab_size,
            cols: self.hidden_dim,
        }
    }

    /// Stored bytes of a weight matrix in this model's precision.
    pub fn matrix_bytes(&self, shape: MatrixShape) -> u64 {
        match self.weight_precision {
            WeightPrecision::Fp16 => shape.params() * FP16_BYTES,
            WeightPrecision::Int4 => {
                shape.params() / 2 + (shape.params() / self.group_size as u64) * FP16_BYTES
            }
        }
    }

    /// INT8 key and value bytes for `context` cached tokens.
    pub fn kv_cache_bytes(&self, context: usize) -> u64 {
        2 * self.layers as u64 * self.kv_dim() as u64 * context as u64
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            num_q_heads: self.num_q_heads,
            num_kv_heads: self.num_kv_heads,
            head_dim: self.head_dim,
            hidden_dim: self.hidden_dim,
            max_context: self.max_context,
            rope_theta: self.rope_theta,
            uram_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBreakdown {
    /// FP16 embedding table.
    pub embedding_bytes: u64,
    pub attention_bytes: u64,
    pub mlp_bytes: u64,
    pub lm_head_bytes: u64,
    /// FP16 norm weights, two per layer plus the final one.
    pub norm_bytes: u64,
    /// Everything except the embedding table: the bytes streamed once per
    /// decoded token.
    pub weight_bytes: u64,
    pub total: u64,
    pub embedding_fraction: f64,
    pub weight_params: u64,
}

impl ModelBreakdown {
    /// Bytes that must sit in accelerator DRAM.
    pub fn resident_bytes(&self, embedding_offloaded: bool) -> u64 {
        if embedding_offloaded {
            self.weight_bytes
        } else {
            self.total
        }
    }
}

pub fn model_breakdown(spec: &ModelSpec) -> ModelBreakdown {
    let layers = spec.layers as u64;
    let mats = spec.layer_matrices();
    let sum = |range: std::ops::Range<usize>| -> u64 {
        mats[range].iter().map(|(_, s)| spec.matrix_bytes(*s)).sum::<u64>() * layers
    };
    let attention_bytes = sum(0..4);
    let mlp_bytes = sum(4..7);
    let lm_head_bytes = spec.matrix_bytes(spec.lm_head());
    let norm_bytes = (2 * layers + 1) * spec.hidden_dim as u64 * FP16_BYTES;
    let embedding_bytes = spec.vocab_size as u64 * spec.hidden_dim as u64 * FP16_BYTES;
    let weight_bytes = attention_bytes + mlp_bytes + lm_head_bytes + norm_bytes;
    let total = weight_bytes + embedding_bytes;
    let weight_params = mats.iter().map(|(_, s)| s.params()).sum::<u64>() * layers + spec.lm_head().params();
    ModelBreakdown {
        embedding_bytes,
        attention_bytes,
        mlp_bytes,
        lm_head_bytes,
        norm_bytes,
        weight_bytes,
        total,
        embedding_fraction: if total == 0 { 0.0 } else { embedding_bytes as f64 / total as f64 },
        weight_params,
    }
}
