//! Desk-scale decode loop through the quantized datapath, checked against
//! an FP32 model of the same dequantized weights.
//!
//! The FP32 model also carries a first-order error budget: for every value,
//! the variance of the quantized datapath's deviation from it. Each rounding
//! (FP16 outputs, INT24 activations, INT8 cache entries, the INT24 folded
//! softmax weights) is taken as uniform within its half step and
//! independent of the others. Variances then flow through the linearized
//! network:
//!
//! * a GEMV maps input variances `σ²` to `Σ_c W_rc²·σ_c²`;
//! * RMS normalization uses its Jacobian `diag(w)(I − x̂x̂ᵀ)/rms`;
//! * RoPE rotates each pair's variances;
//! * in attention, a score error moves weight `t` by
//!   `w_t·(Δs_t − Σ_j w_j·Δs_j)`. The part of `Δs` that comes through the
//!   shared query is kept correlated across keys. The part from each key's
//!   own rounding is independent.
//!
//! A logit passes when it lies within `TOLERANCE_SIGMAS` standard
//! deviations of the reference. A worst-case interval bound composed the
//! same way is valid but vacuous at this depth, so it is not used.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{MatrixShape, ModelSpec, WeightPrecision};
use crate::dataflow::{
    attention_decode_step, normalize, silu, AttentionConfig, AttentionInputs, KvCache, NormKind, ScheduleKind,
    TailCycleParams, NORM_EPS,
};
use crate::error::{Error, Result};
use crate::quant::{quantize_weights_int4, ActivationQuantizer, CodeMatrix, Int24, QuantStats, QuantizedMatrix};
use crate::vpu::{run_dot_gemv, EngineConfig};

const FP16_UNIT: f64 = 1.0 / 2048.0;
const FP16_SUBNORMAL_STEP: f64 = 2.980_232_238_769_531_2e-8;
const FP32_SLACK: f64 = 1.0 / (1u64 << 20) as f64;

/// Half an INT24 step for a per-tensor scale set by `max_magnitude`.
fn int24_half_step(max_magnitude: f64) -> f64 {
    max_magnitude / (2.0 * Int24::MAX as f64)
}

/// Half an INT8 step for a vector whose largest element is at most
/// `max_magnitude`, allowing for the FP16 rounding of the scale and its
/// floor at the smallest normal.
fn int8_half_step(max_magnitude: f64) -> f64 {
    if max_magnitude == 0.0 {
        return 0.0;
    }
    (max_magnitude / 127.0 * (1.0 + 2.0 * FP16_UNIT)).max(f16::MIN_POSITIVE.to_f64()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub attn_norm: Vec<f16>,
    pub ffn_norm: Vec<f16>,
    pub wq: QuantizedMatrix,
    pub wk: QuantizedMatrix,
    pub wv: QuantizedMatrix,
    pub wo: QuantizedMatrix,
    pub w_gate: QuantizedMatrix,
    pub w_up: QuantizedMatrix,
    pub w_down: QuantizedMatrix,
}

impl LayerWeights {
    fn matrices(&self) -> [(&'static str, &QuantizedMatrix); 7] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w_gate", &self.w_gate),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyWeights {
    /// FP16, `vocab × hidden`.
    pub embedding: Vec<f16>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f16>,
    pub lm_head: QuantizedMatrix,
}

fn to_f16(v: Vec<f32>) -> Vec<f16> {
    v.into_iter().map(f16::from_f32).collect()
}

impl TinyWeights {
    /// Uniform weights in `±1/√fan_in`, embeddings in `±1`, norm weights in
    /// `[0.5, 1.5)`.
    pub fn random(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, |n, range| (0..n).map(|_| rng.gen_range(-range..range)).collect())
    }

    /// All projections and embeddings zero, norm weights one.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Self::build(spec, |n, _| vec![0.0; n])
    }

    fn build(spec: &ModelSpec, mut gen: impl FnMut(usize, f32) -> Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if spec.weight_precision != WeightPrecision::Int4 {
            return Err(Error::Config("the functional model runs INT4 weights only".into()));
        }
        let mut quant = |s: MatrixShape| {
            let w = gen(s.params() as usize, 1.0 / (s.cols as f32).sqrt());
            quantize_weights_int4(&w, s.rows, s.cols, spec.group_size)
        };
        let mats = spec.layer_matrices();
        let mut layers = Vec::with_capacity(spec.layers);
        for _ in 0..spec.layers {
            let m: Vec<QuantizedMatrix> = mats.iter().map(|(_, s)| quant(*s)).collect::<Result<_>>()?;
            let [wq, wk, wv, wo, w_gate, w_up, w_down]: [QuantizedMatrix; 7] =
                m.try_into().expect("seven layer matrices");
            layers.push(LayerWeights {
                attn_norm: Vec::new(),
                ffn_norm: Vec::new(),
                wq,
                wk,
                wv,
                wo,
                w_gate,
                w_up,
                w_down,
            });
        }
        let lm_head = quant(spec.lm_head())?;
        let h = spec.hidden_dim;
        let mut norm = || to_f16(gen(h, 0.5).into_iter().map(|v| v + 1.0).collect());
        for l in &mut layers {
            l.attn_norm = norm();
            l.ffn_norm = norm();
        }
        let final_norm = norm();
        let embedding = to_f16(gen(spec.vocab_size * h, 1.0));
        Ok(Self {
            embedding,
            layers,
            final_norm,
            lm_head,
        })
    }

    /// INT4 tensors under stable names, for the weight-directory format.
    pub fn tensors(&self) -> Vec<(String, &QuantizedMatrix)> {
        let mut out: Vec<(String, &QuantizedMatrix)> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.matrices().map(|(n, m)| (format!("layers.{i}.{n}"), m)))
            .collect();
        out.push(("lm_head".into(), &self.lm_head));
        out
    }
}

/// GEMV of a group-quantized matrix: one engine run per quantization group,
/// each scaled by its FP16 weight scale and the activation scale, summed in
/// FP32 and rounded to FP16.
pub fn quantized_gemv(
    engine: &EngineConfig,
    m: &QuantizedMatrix,
    x: &[f16],
    stats: &mut QuantStats,
) -> Result<Vec<f16>> {
    if x.len() != m.cols() {
        return Err(Error::Shape(format!("GEMV input {} vs {} columns", x.len(), m.cols())));
    }
    let (xq, act_scale) = ActivationQuantizer::default().quantize(x, stats);
    let (rows, g) = (m.rows(), m.group_size());
    let mut acc = vec![0f32; rows];
    let mut codes = Vec::with_capacity(rows * g);
    for grp in 0..m.groups_per_row() {
        codes.clear();
        for r in 0..rows {
            codes.extend((grp * g..(grp + 1) * g).map(|c| m.code(r, c)));
        }
        let rep = run_dot_gemv(engine, CodeMatrix::new(rows, g, &codes)?, &xq[grp * g..(grp + 1) * g])?;
        for (r, a) in rep.result.iter().enumerate() {
            acc[r] += (a.get() as f64 * m.scale(r, grp).to_f64() * act_scale) as f32;
        }
    }
    Ok(to_f16(acc))
}

fn add_f16(a: &[f16], b: &[f16]) -> Vec<f16> {
    a.iter().zip(b).map(|(x, y)| f16::from_f32(x.to_f32() + y.to_f32())).collect()
}

fn heads(v: &[f16], d: usize) -> Vec<Vec<f16>> {
    v.chunks_exact(d).map(<[f16]>::to_vec).collect()
}

/// The quantized datapath: INT4 GEMVs on the engine, INT8 kv cache, FP16
/// SPU kernels.
struct Quantized<'a> {
    spec: &'a ModelSpec,
    w: &'a TinyWeights,
    engine: &'a EngineConfig,
    attn: AttentionConfig,
    caches: Vec<KvCache>,
    stats: QuantStats,
}

impl Quantized<'_> {
    fn step(&mut self, token: usize) -> Result<Vec<f16>> {
        let (h, d) = (self.spec.hidden_dim, self.spec.head_dim);
        let mut x = self.w.embedding[token * h..(token + 1) * h].to_vec();
        let e = self.engine;
        for (l, lw) in self.w.layers.iter().enumerate() {
            let stats = &mut self.stats;
            let n = normalize(&x, &lw.attn_norm, NormKind::Rms)?;
            let inputs = AttentionInputs {
                q: heads(&quantized_gemv(e, &lw.wq, &n, stats)?, d),
                k: heads(&quantized_gemv(e, &lw.wk, &n, stats)?, d),
                v: heads(&quantized_gemv(e, &lw.wv, &n, stats)?, d),
            };
            let step = attention_decode_step(
                &inputs,
                &mut self.caches[l],
                &self.attn,
                e,
                TailCycleParams::default(),
                ScheduleKind::Optimized,
            )?;
            stats.merge(step.stats);
            let att: Vec<f16> = step.heads.concat();
            x = add_f16(&x, &quantized_gemv(e, &lw.wo, &att, stats)?);
            let n = normalize(&x, &lw.ffn_norm, NormKind::Rms)?;
            let gate = quantized_gemv(e, &lw.w_gate, &n, stats)?;
            let up = quantized_gemv(e, &lw.w_up, &n, stats)?;
            let a: Vec<f16> = gate
                .iter()
                .zip(&up)
                .map(|(g, u)| f16::from_f32(silu(*g).to_f32() * u.to_f32()))
                .collect();
            x = add_f16(&x, &quantized_gemv(e, &lw.w_down, &a, stats)?);
        }
        let n = normalize(&x, &self.w.final_norm, NormKind::Rms)?;
        quantized_gemv(e, &self.w.lm_head, &n, &mut self.stats)
    }
}

/// Number of standard deviations the tolerance allows.
pub const TOLERANCE_SIGMAS: f64 = 6.0;

/// FP32 values with the first-order variance of the quantized datapath's
/// deviation from each of them.
#[derive(Debug, Clone)]
struct Tracked {
    v: Vec<f32>,
    var: Vec<f64>,
}

/// Variance of FP16 rounding (with FP32 slack) of a result `y`, taking the
/// error as uniform within its bound.
fn rvar(y: f64) -> f64 {
    let half_step = (FP16_UNIT + FP32_SLACK) * y.abs() + FP16_SUBNORMAL_STEP;
    half_step * half_step / 3.0
}

/// Variance of a rounding uniform within `±half_step`.
fn uvar(half_step: f64) -> f64 {
    half_step * half_step / 3.0
}

impl Tracked {
    fn exact(v: Vec<f32>) -> Self {
        let var = vec![0.0; v.len()];
        Self { v, var }
    }

    fn max_abs(&self) -> f64 {
        (0..self.v.len()).fold(0f64, |m, i| m.max(self.v[i].abs() as f64 + TOLERANCE_SIGMAS * self.var[i].sqrt()))
    }

    fn slice(&self, r: std::ops::Range<usize>) -> Self {
        Self {
            v: self.v[r.clone()].to_vec(),
            var: self.var[r].to_vec(),
        }
    }

    fn add(&self, o: &Tracked) -> Self {
        let v: Vec<f32> = self.v.iter().zip(&o.v).map(|(a, b)| a + b).collect();
        let var = (0..v.len()).map(|i| self.var[i] + o.var[i] + rvar(v[i] as f64)).collect();
        Self { v, var }
    }
}

struct DenseMatrix {
    cols: usize,
    w: Vec<f32>,
}

impl DenseMatrix {
    fn from(m: &QuantizedMatrix) -> Self {
        Self {
            cols: m.cols(),
            w: m.dequantize(),
        }
    }

    fn gemv(&self, x: &Tracked) -> Tracked {
        let act = uvar(int24_half_step(x.max_abs()));
        let rows = self.w.len() / self.cols;
        let (mut v, mut var) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
        for row in self.w.chunks_exact(self.cols) {
            let (mut y, mut abs, mut s) = (0f64, 0f64, 0f64);
            for ((w, xv), xvar) in row.iter().zip(&x.v).zip(&x.var) {
                let w = *w as f64;
                y += w * *xv as f64;
                abs += (w * *xv as f64).abs();
                s += w * w * (xvar + act);
            }
            v.push(y as f32);
            var.push(s + uvar(FP32_SLACK * abs) + rvar(y));
        }
        Tracked { v, var }
    }
}

fn rms_norm(x: &Tracked, w: &[f16]) -> Tracked {
    let n = x.v.len() as f64;
    let ms = x.v.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / n + NORM_EPS as f64;
    let rms = ms.sqrt();
    // Jacobian diag(w)·(I − x̂x̂ᵀ)/rms with x̂ = x/(√n·rms).
    let xh: Vec<f64> = x.v.iter().map(|v| *v as f64 / (n.sqrt() * rms)).collect();
    let s: f64 = xh.iter().zip(&x.var).map(|(h, v)| h * h * v).sum();
    let (v, var) = (0..x.v.len())
        .map(|i| {
            let wi = w[i].to_f64();
            let y = x.v[i] as f64 / rms * wi;
            let h2 = xh[i] * xh[i];
            let var = (wi / rms).powi(2) * (x.var[i] * (1.0 - 2.0 * h2) + h2 * s).max(0.0);
            (y as f32, var + rvar(y))
        })
        .unzip();
    Tracked { v, var }
}

fn rope_tracked(x: &Tracked, position: usize, theta: f64) -> Tracked {
    let d = x.v.len() as f64;
    let mut v = Vec::with_capacity(x.v.len());
    let mut var = Vec::with_capacity(x.v.len());
    for i in 0..x.v.len() / 2 {
        let angle = position as f64 * theta.powf(-2.0 * i as f64 / d);
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (x.v[2 * i] as f64, x.v[2 * i + 1] as f64);
        let (va, vb) = (x.var[2 * i], x.var[2 * i + 1]);
        let (c2, s2) = (cos * cos, sin * sin);
        for (y, vy) in [(a * cos - b * sin, c2 * va + s2 * vb), (a * sin + b * cos, s2 * va + c2 * vb)] {
            v.push(y as f32);
            var.push(vy + rvar(y));
        }
    }
    Tracked { v, var }
}

/// Adds the INT8 cache rounding to every element.
fn cached(x: Tracked) -> Tracked {
    let u = uvar(int8_half_step(x.max_abs()));
    Tracked {
        var: x.var.iter().map(|v| v + u).collect(),
        v: x.v,
    }
}

struct LayerRef {
    w: [DenseMatrix; 7],
    keys: Vec<Vec<Tracked>>,
    values: Vec<Vec<Tracked>>,
}

struct Reference<'a> {
    spec: &'a ModelSpec,
    w: &'a TinyWeights,
    layers: Vec<LayerRef>,
    lm_head: DenseMatrix,
}

impl<'a> Reference<'a> {
    fn new(spec: &'a ModelSpec, w: &'a TinyWeights) -> Self {
        let layers = w
            .layers
            .iter()
            .map(|l| LayerRef {
                w: l.matrices().map(|(_, m)| DenseMatrix::from(m)),
                keys: vec![Vec::new(); spec.num_kv_heads],
                values: vec![Vec::new(); spec.num_kv_heads],
            })
            .collect();
        Self {
            spec,
            w,
            layers,
            lm_head: DenseMatrix::from(&w.lm_head),
        }
    }

    fn attention(&mut self, l: usize, q: &Tracked, k: &Tracked, v: &Tracked, position: usize) -> Tracked {
        let s = self.spec;
        let d = s.head_dim;
        let sqrt_d = (d as f64).sqrt();
        let layer = &mut self.layers[l];
        for kv in 0..s.num_kv_heads {
            let heads = kv * d..(kv + 1) * d;
            layer.keys[kv].push(cached(rope_tracked(&k.slice(heads.clone()), position, s.rope_theta)));
            layer.values[kv].push(cached(v.slice(heads)));
        }
        let mut out = Tracked {
            v: Vec::with_capacity(s.q_dim()),
            var: Vec::with_capacity(s.q_dim()),
        };
        for h in 0..s.num_q_heads {
            let kv = h / s.group_size_ratio();
            let mut qh = rope_tracked(&q.slice(h * d..(h + 1) * d), position, s.rope_theta);
            let act = uvar(int24_half_step(qh.max_abs()));
            qh.var.iter_mut().for_each(|v| *v += act);
            let (keys, values) = (&layer.keys[kv], &layer.values[kv]);

            // Score deviations split into the part shared through q and the
            // part independent per key (key rounding, score rounding).
            let mut scores = Vec::with_capacity(keys.len());
            let mut var_own = Vec::with_capacity(keys.len());
            for key in keys {
                let mut dot = 0f64;
                let mut vk = 0f64;
                for i in 0..d {
                    dot += qh.v[i] as f64 * key.v[i] as f64;
                    vk += (qh.v[i] as f64).powi(2) * key.var[i];
                }
                let sc = dot / sqrt_d;
                scores.push(sc);
                var_own.push(vk / d as f64 + rvar(sc));
            }
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
            let w: Vec<f64> = scores.iter().map(|x| (x - m).exp() / z).collect();
            let k_bar: Vec<f64> = (0..d).map(|i| keys.iter().zip(&w).map(|(k, wt)| wt * k.v[i] as f64).sum()).collect();
            let o: Vec<f64> = (0..d).map(|i| values.iter().zip(&w).map(|(v, wt)| wt * v.v[i] as f64).sum()).collect();

            let fold_max = w
                .iter()
                .zip(values)
                .map(|(wt, v)| wt * (1.0 + 2.0 * FP16_UNIT) * 2.0 * int8_half_step(v.max_abs()))
                .fold(0f64, f64::max);
            let fold_var = keys.len() as f64 * 127f64.powi(2) * uvar(int24_half_step(fold_max));
            for i in 0..d {
                // Through q: Δq · Σ_t w_t (k_t − k̄) v_t,i / √d.
                let mut var_q = 0f64;
                for j in 0..d {
                    let c: f64 = keys
                        .iter()
                        .zip(values)
                        .zip(&w)
                        .map(|((k, v), wt)| wt * (k.v[j] as f64 - k_bar[j]) * v.v[i] as f64)
                        .sum();
                    var_q += qh.var[j] * c * c / d as f64;
                }
                let mut var_t = 0f64;
                for (t, val) in values.iter().enumerate() {
                    let centered = val.v[i] as f64 - o[i];
                    var_t += w[t] * w[t] * var_own[t] * centered * centered;
                    var_t += rvar(w[t]) * (val.v[i] as f64).powi(2);
                    var_t += w[t] * w[t] * val.var[i];
                }
                out.v.push(o[i] as f32);
                out.var.push(var_q + var_t + fold_var + rvar(o[i]));
            }
        }
        out
    }

    fn step(&mut self, token: usize, position: usize) -> Tracked {
        let h = self.spec.hidden_dim;
        let w = self.w;
        let mut x = Tracked::exact(w.embedding[token * h..(token + 1) * h].iter().map(|v| v.to_f32()).collect());
        for l in 0..self.layers.len() {
            let lw = &w.layers[l];
            let n = rms_norm(&x, &lw.attn_norm);
            let [wq, wk, wv, ..] = &self.layers[l].w;
            let (q, k, v) = (wq.gemv(&n), wk.gemv(&n), wv.gemv(&n));
            let att = self.attention(l, &q, &k, &v, position);
            let dense = &self.layers[l].w;
            x = x.add(&dense[3].gemv(&att));
            let n = rms_norm(&x, &lw.ffn_norm);
            let (g, u) = (dense[4].gemv(&n), dense[5].gemv(&n));
            let (av, avar) = (0..g.v.len())
                .map(|i| {
                    let gv = g.v[i] as f64;
                    let sig = 1.0 / (1.0 + (-gv).exp());
                    let s = gv * sig;
                    let ds = sig * (1.0 + gv * (1.0 - sig));
                    let var_s = ds * ds * g.var[i] + rvar(s);
                    let uv = u.v[i] as f64;
                    let a = s * uv;
                    (a as f32, s * s * u.var[i] + uv * uv * var_s + rvar(a))
                })
                .unzip();
            x = x.add(&dense[6].gemv(&Tracked { v: av, var: avar }));
        }
        let n = rms_norm(&x, &w.final_norm);
        self.lm_head.gemv(&n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyStep {
    pub position: usize,
    pub token: usize,
    pub logits: Vec<f16>,
    pub reference: Vec<f32>,
    /// Per-logit tolerance, `TOLERANCE_SIGMAS` standard deviations.
    pub bound: Vec<f64>,
    pub max_deviation: f64,
    /// Largest deviation in units of its standard deviation.
    pub max_sigmas: f64,
    pub argmax: usize,
    pub reference_argmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyTrace {
    pub model: String,
    pub seed: u64,
    pub steps: Vec<TinyStep>,
    pub stats: QuantStats,
    /// SHA-256 over every step's logit bits.
    pub digest: String,
    pub within_bound: bool,
}

fn argmax<T: PartialOrd + Copy>(xs: impl Iterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in xs.enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Decodes `tokens` (teacher-forced) through both models.
pub fn run_tiny_with_weights(
    spec: &ModelSpec,
    weights: &TinyWeights,
    tokens: &[usize],
    engine: &EngineConfig,
    seed: u64,
) -> Result<TinyTrace> {
    spec.validate()?;
    if let Some(&t) = tokens.iter().find(|&&t| t >= spec.vocab_size) {
        return Err(Error::Config(format!("token {t} outside vocabulary of {}", spec.vocab_size)));
    }
    let attn = spec.attention_config();
    let mut quant = Quantized {
        spec,
        w: weights,
        engine,
        caches: (0..spec.layers).map(|_| KvCache::new(spec.num_kv_heads, spec.max_context)).collect(),
        attn,
        stats: QuantStats::default(),
    };
    let mut reference = Reference::new(spec, weights);
    let mut hasher = Sha256::new();
    let mut steps = Vec::with_capacity(tokens.len());
    for (position, &token) in tokens.iter().enumerate() {
        let logits = quant.step(token)?;
        let r = reference.step(token, position);
        for l in &logits {
            hasher.update(l.to_bits().to_le_bytes());
        }
        let diffs: Vec<f64> = logits.iter().zip(&r.v).map(|(q, v)| (q.to_f64() - *v as f64).abs()).collect();
        let max_deviation = diffs.iter().fold(0f64, |m, d| m.max(*d));
        let max_sigmas = diffs.iter().zip(&r.var).fold(0f64, |m, (d, v)| m.max(d / v.sqrt()));
        let bound = r.var.iter().map(|v| TOLERANCE_SIGMAS * v.sqrt()).collect();
        steps.push(TinyStep {
            position,
            token,
            argmax: argmax(logits.iter().map(|v| v.to_f32())),
            reference_argmax: argmax(r.v.iter().copied()),
            max_deviation,
            max_sigmas,
            logits,
            reference: r.v,
            bound,
        });
    }
    let within_bound = steps.iter().all(|s| s.max_sigmas <= TOLERANCE_SIGMAS);
    Ok(TinyTrace {
        model: spec.name.clone(),
        seed,
        steps,
        stats: quant.stats,
        digest: hex::encode(hasher.finalize()),
        within_bound,
    })
}

/// Seeded random weights and tokens, `steps` decode steps on the default
/// engine.
pub fn run_tiny_model_e2e(spec: &ModelSpec, seed: u64, steps: usize) -> Result<TinyTrace> {
    let weights = TinyWeights::random(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_6b65_6e73);
    let tokens: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..spec.vocab_size)).collect();
    run_tiny_with_weights(spec, &weights, &tokens, &EngineConfig::default(), seed)
}
