//! Megatron-style tensor parallelism across cores that each own a channel.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::model::{MatrixShape, ModelSpec, WeightPrecision, FP16_BYTES};
use super::platform::Interconnect;
use crate::error::{Error, Result};
use crate::vpu::EngineConfig;

/// Weights and heads assigned to one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreWorkload {
    pub core: usize,
    pub q_heads: Range<usize>,
    pub kv_heads: Range<usize>,
    /// Rows of the up/gate projections and columns of the down projection.
    pub intermediate: Range<usize>,
    pub vocab: Range<usize>,
    pub attention_bytes: u64,
    pub mlp_bytes: u64,
    pub lm_head_bytes: u64,
    pub norm_bytes: u64,
    pub weight_bytes: u64,
    pub weight_params: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducePoint {
    /// Partial sums of the attention output projection.
    AttentionOutput,
    /// Partial sums of the MLP down projection.
    MlpDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllReducePoint {
    pub layer: usize,
    pub point: ReducePoint,
    /// FP16 partial-sum bytes each core contributes.
    pub bytes: u64,
    /// The reduction streams while the producing projection is still
    /// running.
    pub overlappable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorParallelPlan {
    pub cores: Vec<CoreWorkload>,
    pub all_reduces: Vec<AllReducePoint>,
}

impl TensorParallelPlan {
    pub fn total_weight_bytes(&self) -> u64 {
        self.cores.iter().map(|c| c.weight_bytes).sum()
    }
}

fn split(len: usize, parts: usize, i: usize) -> Range<usize> {
    let (base, extra) = (len / parts, len % parts);
    let start = i * base + i.min(extra);
    start..start + base + usize::from(i < extra)
}

/// Splits every layer across `cores`: attention by whole kv-head groups,
/// up/gate along their outputs, down along its inputs, the LM head along
/// the vocabulary. Norm weights stay on core 0.
pub fn tensor_parallel_partition(spec: &ModelSpec, cores: usize) -> Result<TensorParallelPlan> {
    spec.validate()?;
    let reject = |dim, value| Err(Error::Partition { dim, value, cores });
    if cores == 0 {
        return reject("cores", 0);
    }
    if spec.num_kv_heads % cores != 0 {
        return reject("num_kv_heads", spec.num_kv_heads);
    }
    if spec.intermediate_dim % cores != 0 {
        return reject("intermediate_dim", spec.intermediate_dim);
    }
    if spec.weight_precision == WeightPrecision::Int4 {
        // Input-split projections must keep whole quantization groups.
        if (spec.intermediate_dim / cores) % spec.group_size != 0 {
            return reject("intermediate_dim", spec.intermediate_dim);
        }
        if (spec.q_dim() / cores) % spec.group_size != 0 {
            return reject("num_q_heads", spec.num_q_heads);
        }
    }
    if spec.vocab_size < cores {
        return reject("vocab_size", spec.vocab_size);
    }

    let (h, hd, layers) = (spec.hidden_dim, spec.head_dim, spec.layers as u64);
    let g = spec.group_size_ratio();
    let m = |rows, cols| MatrixShape { rows, cols };
    let workloads = (0..cores)
        .map(|c| {
            let kv_heads = split(spec.num_kv_heads, cores, c);
            let q_heads = kv_heads.start * g..kv_heads.end * g;
            let intermediate = split(spec.intermediate_dim, cores, c);
            let vocab = split(spec.vocab_size, cores, c);
            let (qd, kvd, id) = (q_heads.len() * hd, kv_heads.len() * hd, intermediate.len());
            let attn = [m(qd, h), m(kvd, h), m(kvd, h), m(h, qd)];
            let mlp = [m(id, h), m(id, h), m(h, id)];
            let bytes = |ms: &[MatrixShape]| ms.iter().map(|s| spec.matrix_bytes(*s)).sum::<u64>() * layers;
            let params = |ms: &[MatrixShape]| ms.iter().map(|s| s.params()).sum::<u64>() * layers;
            let attention_bytes = bytes(&attn);
            let mlp_bytes = bytes(&mlp);
            let lm = m(vocab.len(), h);
            let lm_head_bytes = spec.matrix_bytes(lm);
            let norm_bytes = if c == 0 { (2 * layers + 1) * h as u64 * FP16_BYTES } else { 0 };
            CoreWorkload {
                core: c,
                q_heads,
                kv_heads,
                intermediate,
                vocab,
                attention_bytes,
                mlp_bytes,
                lm_head_bytes,
                norm_bytes,
                weight_bytes: attention_bytes + mlp_bytes + lm_head_bytes + norm_bytes,
                weight_params: params(&attn) + params(&mlp) + lm.params(),
            }
        })
        .collect();

    let all_reduces = if cores == 1 {
        Vec::new()
    } else {
        (0..spec.layers)
            .flat_map(|layer| {
                [ReducePoint::AttentionOutput, ReducePoint::MlpDown].map(|point| AllReducePoint {
                    layer,
                    point,
                    bytes: h as u64 * FP16_BYTES,
                    overlappable: true,
                })
            })
            .collect()
    };
    Ok(TensorParallelPlan {
        cores: workloads,
        all_reduces,
    })
}

/// One all-reduce placed against the projection that produces its operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllReduceInterval {
    pub layer: usize,
    pub point: ReducePoint,
    pub gemv_start: u64,
    pub gemv_end: u64,
    pub reduce_start: u64,
    pub reduce_end: u64,
    /// Cycles by which the reduction outlasts its GEMV.
    pub exposed_cycles: u64,
}

/// Cycles a core spends on one projection: the slower of streaming its
/// bytes and multiplying its weights.
pub fn gemv_cycles(spec: &ModelSpec, shape: MatrixShape, engine: &EngineConfig, bytes_per_cycle: f64) -> u64 {
    let memory = (spec.matrix_bytes(shape) as f64 / bytes_per_cycle).ceil() as u64;
    let compute = shape.params().div_ceil(engine.macs() as u64);
    memory.max(compute)
}

/// Places every all-reduce of `plan` on core 0's layer timeline. Partial
/// sums leave the core chunk by chunk as output rows complete, so a
/// reduction runs concurrently with its producer; only the ring steps of
/// the final chunk can outlast it.
pub fn allreduce_timeline(
    spec: &ModelSpec,
    plan: &TensorParallelPlan,
    engine: &EngineConfig,
    link: &Interconnect,
    bytes_per_cycle: f64,
) -> Vec<AllReduceInterval> {
    let n = plan.cores.len() as u64;
    if n < 2 {
        return Vec::new();
    }
    let core = &plan.cores[0];
    let (h, hd) = (spec.hidden_dim, spec.head_dim);
    let (qd, kvd, id) = (core.q_heads.len() * hd, core.kv_heads.len() * hd, core.intermediate.len());
    let m = |rows, cols| MatrixShape { rows, cols };
    let cyc = |s| gemv_cycles(spec, s, engine, bytes_per_cycle);
    let ring = |bytes: u64| 2 * (n - 1) * bytes.div_ceil(n).div_ceil(link.bytes_per_cycle);

    let chunk_rows = link.chunk_elements.min(h);
    let chunk_bytes = chunk_rows as u64 * FP16_BYTES;
    let tail = link.latency_cycles + ring(chunk_bytes);
    let stream = ring(h as u64 * FP16_BYTES);

    let mut t = 0u64;
    let mut out = Vec::with_capacity(plan.all_reduces.len());
    for layer in 0..spec.layers {
        let stages: [(&[MatrixShape], MatrixShape, ReducePoint); 2] = [
            (&[m(qd, h), m(kvd, h), m(kvd, h)], m(h, qd), ReducePoint::AttentionOutput),
            (&[m(id, h), m(id, h)], m(h, id), ReducePoint::MlpDown),
        ];
        for (before, producer, point) in stages {
            t += before.iter().map(|s| cyc(*s)).sum::<u64>();
            let gemv_start = t;
            let dur = cyc(producer);
            let gemv_end = gemv_start + dur;
            let reduce_start = gemv_start + (dur * chunk_rows as u64).div_ceil(h as u64);
            let reduce_end = gemv_end.max(reduce_start + stream) + tail;
            out.push(AllReduceInterval {
                layer,
                point,
                gemv_start,
                gemv_end,
                reduce_start,
                reduce_end,
                exposed_cycles: reduce_end - gemv_end,
            });
            t = reduce_end;
        }
    }
    out
}
