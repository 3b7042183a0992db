//! Memory budgets and decode-throughput estimates per platform.

use serde::{Deserialize, Serialize};

use super::model::{model_breakdown, ModelSpec, FP16_BYTES};
use super::partition::{allreduce_timeline, tensor_parallel_partition, TensorParallelPlan};
use super::platform::{bytes_per_second, embedding_fetch_latency, modeled_utilization, PlatformConfig};
use crate::dataflow::{schedule_gqa_optimized, AttentionConfig, TailCycleParams};
use crate::error::{Error, Result};

/// Parameter count of the reference dense 4-bit model used for normalized
/// performance, in billions.
pub const NORM_REFERENCE_PARAMS_B: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBudget {
    pub channel: String,
    pub capacity: u64,
    pub weights: u64,
    pub embedding: u64,
    pub kv_cache: u64,
    pub workspace: u64,
    pub reserved: u64,
    pub used: u64,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub model: String,
    pub platform: String,
    pub context: usize,
    pub channels: Vec<ChannelBudget>,
    pub fits: bool,
    /// First budget that does not fit, if any.
    pub overflow: Option<String>,
}

/// FP16 activation buffers a core keeps: residual stream, normalized input,
/// q/k/v, MLP intermediates, logits slice, and partial sums.
fn workspace_bytes(spec: &ModelSpec, intermediate: usize, vocab: usize) -> u64 {
    let elems = 4 * spec.hidden_dim + spec.q_dim() + 2 * spec.kv_dim() + 2 * intermediate + vocab;
    elems as u64 * FP16_BYTES
}

fn budgets(spec: &ModelSpec, platform: &PlatformConfig, plan: &TensorParallelPlan, context: usize) -> CapacityReport {
    let embedding = if spec.embedding_offloaded { 0 } else { model_breakdown(spec).embedding_bytes };
    let per_kv_head = 2 * spec.layers as u64 * spec.head_dim as u64 * context as u64;
    let channels: Vec<ChannelBudget> = plan
        .cores
        .iter()
        .zip(&platform.channels)
        .map(|(core, ch)| {
            let embedding = if core.core == 0 { embedding } else { 0 };
            let kv_cache = per_kv_head * core.kv_heads.len() as u64;
            let workspace = workspace_bytes(spec, core.intermediate.len(), core.vocab.len());
            let reserved = platform.reserved_bytes(ch);
            let used = core.weight_bytes + embedding + kv_cache + workspace + reserved;
            ChannelBudget {
                channel: ch.name.clone(),
                capacity: ch.capacity_bytes(),
                weights: core.weight_bytes,
                embedding,
                kv_cache,
                workspace,
                reserved,
                used,
                fits: used <= ch.capacity_bytes(),
            }
        })
        .collect();
    let overflow = channels.iter().find(|b| !b.fits).map(|b| {
        format!(
            "channel {}: {} bytes needed (weights {}, embedding {}, kv cache {}, workspace {}, reserved {}) > capacity {}",
            b.channel, b.used, b.weights, b.embedding, b.kv_cache, b.workspace, b.reserved, b.capacity
        )
    });
    CapacityReport {
        model: spec.name.clone(),
        platform: platform.name.clone(),
        context,
        fits: overflow.is_none(),
        channels,
        overflow,
    }
}

/// Itemized DRAM budget of every core's channel at `context` cached tokens.
pub fn capacity_check(spec: &ModelSpec, platform: &PlatformConfig, context: usize) -> Result<CapacityReport> {
    platform.validate()?;
    let plan = tensor_parallel_partition(spec, platform.cores)?;
    Ok(budgets(spec, platform, &plan, context))
}

/// Largest power-of-two context, up to the model's maximum, whose budget
/// fits. Zero when not even one token fits.
pub fn max_context(spec: &ModelSpec, platform: &PlatformConfig) -> Result<usize> {
    platform.validate()?;
    let plan = tensor_parallel_partition(spec, platform.cores)?;
    let mut best = 0;
    let mut ctx = 1;
    while ctx <= spec.max_context && budgets(spec, platform, &plan, ctx).fits {
        best = ctx;
        ctx *= 2;
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub model: String,
    pub platform: String,
    pub context_len: usize,
    pub cores: usize,
    pub tokens_per_s: f64,
    /// Tokens/s over the number of full weight transfers the nominal
    /// bandwidth allows per second.
    pub bw_efficiency: f64,
    /// Tokens/s scaled to a dense 4-bit 7B model.
    pub norm_perf: f64,
    pub per_inference_bytes: u64,
    /// Streaming utilization of the slowest channel, before the inference
    /// drop.
    pub dram_utilization: f64,
    pub pass_ms: f64,
    pub memory_ms: f64,
    pub compute_ms: f64,
    pub exposed_ms: f64,
    pub embedding_fetch_ms: f64,
    pub capacity: CapacityReport,
}

/// Single-batch decode rate with `context_len` cached tokens.
///
/// Each core streams its weight share and kv cache from its own channel;
/// the slowest core sets the pass time. Cycles no core can overlap (norm
/// reductions, schedule idle, all-reduce tails) are added on top. The
/// embedding fetch for the next token runs on the storage path in
/// parallel with the pass.
pub fn decode_throughput(spec: &ModelSpec, platform: &PlatformConfig, context_len: usize) -> Result<ThroughputReport> {
    let capacity = capacity_check(spec, platform, context_len)?;
    if let Some(msg) = &capacity.overflow {
        return Err(Error::Capacity(msg.clone()));
    }
    let plan = tensor_parallel_partition(spec, platform.cores)?;
    let clock_hz = platform.clock_mhz * 1e6;
    let macs_per_s = platform.engine.macs() as f64 * clock_hz;

    let mut memory_s = 0f64;
    let mut compute_s = 0f64;
    let mut slowest = 0f64;
    let mut min_util = 1f64;
    let mut core0_bpc = 0f64;
    for (core, ch) in plan.cores.iter().zip(&platform.channels) {
        let util = modeled_utilization(platform, ch)?;
        min_util = min_util.min(util);
        let rate = bytes_per_second(ch.bandwidth_gbps()) * util * (1.0 - platform.inference_drop);
        let kv_bytes = 2 * (spec.layers * core.kv_heads.len() * spec.head_dim * context_len) as u64;
        let kv_macs = 2 * (spec.layers * core.q_heads.len() * spec.head_dim * context_len) as u64;
        let mem = (core.weight_bytes + kv_bytes) as f64 / rate;
        let comp = (core.weight_params + kv_macs) as f64 / macs_per_s;
        if core.core == 0 {
            core0_bpc = rate / clock_hz;
        }
        if mem.max(comp) > slowest {
            slowest = mem.max(comp);
            memory_s = mem;
            compute_s = comp;
        }
    }

    let layers = spec.layers as u64;
    let norm_cycles = (2 * layers + 1) * spec.hidden_dim as u64;
    let core0 = &plan.cores[0];
    let attn = AttentionConfig {
        num_q_heads: core0.q_heads.len(),
        num_kv_heads: core0.kv_heads.len(),
        ..spec.attention_config()
    };
    let schedule = schedule_gqa_optimized(&attn, &platform.engine, context_len, TailCycleParams::default())?;
    let idle_cycles = schedule.vpu_idle_after_fill() * layers;
    let reduce_cycles: u64 = allreduce_timeline(spec, &plan, &platform.engine, &platform.interconnect, core0_bpc)
        .iter()
        .map(|r| r.exposed_cycles)
        .sum();
    let exposed_s = (norm_cycles + idle_cycles + reduce_cycles) as f64 / clock_hz;

    let pass_s = slowest + exposed_s;
    let breakdown = model_breakdown(spec);
    let embedding_fetch_ms = if spec.embedding_offloaded {
        embedding_fetch_latency(
            &platform.embedding_store,
            spec.hidden_dim as u64 * FP16_BYTES,
            breakdown.embedding_bytes,
        )?
    } else {
        0.0
    };
    let token_s = pass_s.max(embedding_fetch_ms / 1e3);
    let tokens_per_s = 1.0 / token_s;
    Ok(ThroughputReport {
        model: spec.name.clone(),
        platform: platform.name.clone(),
        context_len,
        cores: platform.cores,
        tokens_per_s,
        bw_efficiency: tokens_per_s * breakdown.weight_bytes as f64 / bytes_per_second(platform.bandwidth_gbps()),
        norm_perf: tokens_per_s * spec.nominal_params_b / NORM_REFERENCE_PARAMS_B,
        per_inference_bytes: breakdown.weight_bytes,
        dram_utilization: min_util,
        pass_ms: pass_s * 1e3,
        memory_ms: memory_s * 1e3,
        compute_ms: compute_s * 1e3,
        exposed_ms: exposed_s * 1e3,
        embedding_fetch_ms,
        capacity,
    })
}
