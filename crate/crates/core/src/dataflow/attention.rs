//! Functional attention for one decode step, executed stage by stage in the
//! order a schedule prescribes.

use half::f16;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kernels::{online_softmax, rope};
use super::schedule::{
    schedule_gqa_naive, schedule_gqa_optimized, AttentionConfig, StageOp, TailCycleParams, Timeline,
};
use crate::error::{Error, Result};
use crate::quant::{acc48_to_fp16, quantize_kv_int8, ActivationQuantizer, CodeMatrix, Int24, Q8Vector, QuantStats};
use crate::vpu::{run_axpy_gemv, run_dot_gemv, EngineConfig};

/// INT8 keys and values per kv head. Keys are stored after rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvCache {
    pub keys: Vec<Vec<Q8Vector>>,
    pub values: Vec<Vec<Q8Vector>>,
    pub max_context: usize,
}

impl KvCache {
    pub fn new(num_kv_heads: usize, max_context: usize) -> Self {
        Self {
            keys: vec![Vec::new(); num_kv_heads],
            values: vec![Vec::new(); num_kv_heads],
            max_context,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major INT8 codes of one head's cached vectors.
    fn codes(vectors: &[Q8Vector]) -> Vec<i8> {
        vectors.iter().flat_map(|v| v.codes.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Optimized,
    Naive,
}

/// Per-head inputs of one decode step, already projected.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    pub q: Vec<Vec<f16>>,
    pub k: Vec<Vec<f16>>,
    pub v: Vec<Vec<f16>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStep {
    /// Attention output per query head, before the output projection.
    pub heads: Vec<Vec<f16>>,
    pub timeline: Timeline,
    /// SHA-256 of the key codes each query head multiplied against.
    pub key_digests: Vec<[u8; 32]>,
    pub stats: QuantStats,
}

/// Scales `values` into INT24 with one shared scale, chosen from their
/// largest magnitude. Returns the codes and the scale.
fn to_int24(values: &[f64], stats: &mut QuantStats) -> (Vec<Int24>, f64) {
    let max = values.iter().fold(0f64, |m, v| m.max(v.abs()));
    let scale = if max == 0.0 { 1.0 } else { max / Int24::MAX as f64 };
    let codes = values
        .iter()
        .map(|v| {
            let (c, sat) = Int24::saturating((v / scale).round() as i64);
            stats.int24_saturations += u64::from(sat);
            c
        })
        .collect();
    (codes, scale)
}

fn check_inputs(cfg: &AttentionConfig, x: &AttentionInputs) -> Result<()> {
    let ok = |vs: &[Vec<f16>], n: usize| vs.len() == n && vs.iter().all(|v| v.len() == cfg.head_dim);
    if !ok(&x.q, cfg.num_q_heads) || !ok(&x.k, cfg.num_kv_heads) || !ok(&x.v, cfg.num_kv_heads) {
        return Err(Error::Shape("attention inputs do not match the head layout".into()));
    }
    Ok(())
}

/// Runs one decode step: rotates, appends the new key and value to `cache`,
/// then computes qK in DOT mode and sV in AXPY mode for every query head.
pub fn attention_decode_step(
    inputs: &AttentionInputs,
    cache: &mut KvCache,
    cfg: &AttentionConfig,
    engine: &EngineConfig,
    tails: TailCycleParams,
    kind: ScheduleKind,
) -> Result<AttentionStep> {
    cfg.validate()?;
    check_inputs(cfg, inputs)?;
    let position = cache.len();
    if position >= cache.max_context.min(cfg.max_context) {
        return Err(Error::ContextOverflow {
            requested: position + 1,
            limit: cache.max_context.min(cfg.max_context),
        });
    }
    let timeline = match kind {
        ScheduleKind::Optimized => schedule_gqa_optimized(cfg, engine, position, tails)?,
        ScheduleKind::Naive => schedule_gqa_naive(cfg, engine, position, tails)?,
    };

    let g = cfg.group_size();
    let d = cfg.head_dim;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut stats = QuantStats::default();
    let mut q_rot: Vec<Option<Vec<f16>>> = vec![None; cfg.num_q_heads];
    let mut scores: Vec<Option<Vec<f16>>> = vec![None; cfg.num_q_heads];
    let mut weights: Vec<Option<Vec<f16>>> = vec![None; cfg.num_q_heads];
    let mut heads: Vec<Vec<f16>> = vec![Vec::new(); cfg.num_q_heads];
    let mut key_digests = vec![[0u8; 32]; cfg.num_q_heads];

    let mut order: Vec<_> = timeline.entries.iter().collect();
    order.sort_by_key(|e| (e.start, e.end));
    for e in order {
        match e.op {
            // Projections were done by the caller; the value lands in the
            // cache once its projection completes.
            StageOp::QProj(_) | StageOp::KProj(_) | StageOp::OProj(_) => {}
            StageOp::VProj(kv) => cache.values[kv].push(quantize_kv_int8(&to_f32(&inputs.v[kv]))?),
            StageOp::RopeQ(h) => q_rot[h] = Some(rope(&inputs.q[h], position, cfg.rope_theta)?),
            StageOp::RopeK(kv) => {
                let k = rope(&inputs.k[kv], position, cfg.rope_theta)?;
                cache.keys[kv].push(quantize_kv_int8(&to_f32(&k))?);
            }
            StageOp::QK(h) => {
                let kv = h / g;
                let keys = &cache.keys[kv];
                let codes = KvCache::codes(keys);
                key_digests[h] = Sha256::digest(codes.iter().map(|&c| c as u8).collect::<Vec<_>>()).into();
                let q = q_rot[h].as_ref().expect("schedule rotates q before qK");
                let (x, q_scale) = ActivationQuantizer::default().quantize(q, &mut stats);
                let rep = run_dot_gemv(engine, CodeMatrix::new(keys.len(), d, &codes)?, &x)?;
                let s = rep
                    .result
                    .iter()
                    .zip(keys)
                    .map(|(&acc, k)| acc48_to_fp16(acc, q_scale * k.scale.to_f64() * inv_sqrt_d, &mut stats))
                    .collect();
                scores[h] = Some(s);
            }
            StageOp::Softmax(h) => {
                weights[h] = Some(online_softmax(scores[h].as_ref().expect("qK before softmax"))?);
            }
            StageOp::SV(h) => {
                let kv = h / g;
                let values = &cache.values[kv];
                let w = weights[h].as_ref().expect("softmax before sV");
                // Each value vector's scale folds into its weight.
                let folded: Vec<f64> = w
                    .iter()
                    .zip(values)
                    .map(|(s, v)| s.to_f64() * v.scale.to_f64())
                    .collect();
                let (s, s_scale) = to_int24(&folded, &mut stats);
                let codes = KvCache::codes(values);
                let rep = run_axpy_gemv(engine, CodeMatrix::new(values.len(), d, &codes)?, &s)?;
                heads[h] = rep
                    .result
                    .iter()
                    .map(|&acc| acc48_to_fp16(acc, s_scale, &mut stats))
                    .collect();
            }
        }
    }
    Ok(AttentionStep {
        heads,
        timeline,
        key_digests,
        stats,
    })
}

fn to_f32(v: &[f16]) -> Vec<f32> {
    v.iter().map(|x| x.to_f32()).collect()
}
