//! Cycle-level schedules of one attention layer during decoding.
//!
//! Stages run on two units. The VPU executes the GEMVs (projections, qK in
//! DOT mode, sV in AXPY mode) one at a time. The SPU finishes element-wise
//! work behind them: RoPE after each query and key projection and softmax
//! after each qK. An SPU stage streams alongside its producer, so it is
//! recorded only for its tail, starting when the producer ends.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vpu::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub max_context: usize,
    pub rope_theta: f64,
    /// URAMs available to the attention buffers, when constrained.
    #[serde(default)]
    pub uram_limit: Option<usize>,
}

impl AttentionConfig {
    pub fn group_size(&self) -> usize {
        self.num_q_heads / self.num_kv_heads
    }

    /// Query and key/value layout of the 8B model.
    pub fn llama3_8b() -> Self {
        Self {
            num_q_heads: 32,
            num_kv_heads: 8,
            head_dim: 128,
            hidden_dim: 4096,
            max_context: 4096,
            rope_theta: 500_000.0,
            uram_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_kv_heads == 0 || self.num_q_heads % self.num_kv_heads != 0 {
            return Err(Error::Config(format!(
                "{} query heads cannot be grouped over {} kv heads",
                self.num_q_heads, self.num_kv_heads
            )));
        }
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::Config("head_dim must be even and positive".into()));
        }
        if self.max_context == 0 {
            return Err(Error::Config("max_context must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailCycleParams {
    pub rope_tail: u64,
    pub softmax_tail: u64,
}

impl Default for TailCycleParams {
    fn default() -> Self {
        Self {
            rope_tail: 78,
            softmax_tail: 47,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Vpu,
    Spu,
}

/// One stage. Query-head stages carry the query head index, key/value
/// stages the kv head (group) index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "head", rename_all = "snake_case")]
pub enum StageOp {
    QProj(usize),
    KProj(usize),
    VProj(usize),
    RopeQ(usize),
    RopeK(usize),
    QK(usize),
    Softmax(usize),
    SV(usize),
    OProj(usize),
}

impl StageOp {
    pub fn unit(self) -> Unit {
        match self {
            StageOp::RopeQ(_) | StageOp::RopeK(_) | StageOp::Softmax(_) => Unit::Spu,
            _ => Unit::Vpu,
        }
    }

    pub fn head(self) -> usize {
        match self {
            StageOp::QProj(h)
            | StageOp::KProj(h)
            | StageOp::VProj(h)
            | StageOp::RopeQ(h)
            | StageOp::RopeK(h)
            | StageOp::QK(h)
            | StageOp::Softmax(h)
            | StageOp::SV(h)
            | StageOp::OProj(h) => h,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageOp::QProj(_) => "q_proj",
            StageOp::KProj(_) => "k_proj",
            StageOp::VProj(_) => "v_proj",
            StageOp::RopeQ(_) => "rope_q",
            StageOp::RopeK(_) => "rope_k",
            StageOp::QK(_) => "qk",
            StageOp::Softmax(_) => "softmax",
            StageOp::SV(_) => "sv",
            StageOp::OProj(_) => "o_proj",
        }
    }

    /// Stages whose results this stage consumes.
    pub fn dependencies(self, group_size: usize) -> Vec<StageOp> {
        match self {
            StageOp::RopeQ(h) => vec![StageOp::QProj(h)],
            StageOp::RopeK(g) => vec![StageOp::KProj(g)],
            StageOp::QK(h) => vec![StageOp::RopeQ(h), StageOp::RopeK(h / group_size)],
            StageOp::Softmax(h) => vec![StageOp::QK(h)],
            StageOp::SV(h) => vec![StageOp::Softmax(h), StageOp::VProj(h / group_size)],
            StageOp::OProj(h) => vec![StageOp::SV(h)],
            _ => vec![],
        }
    }

    /// The SPU stage that finishes this VPU stage's output, if any.
    fn follow_up(self) -> Option<StageOp> {
        match self {
            StageOp::QProj(h) => Some(StageOp::RopeQ(h)),
            StageOp::KProj(g) => Some(StageOp::RopeK(g)),
            StageOp::QK(h) => Some(StageOp::Softmax(h)),
            _ => None,
        }
    }
}

impl fmt::Display for StageOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.name(), self.head())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub unit: Unit,
    pub op: StageOp,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub group_size: usize,
    pub entries: Vec<TimelineEntry>,
}

/// GEMV and tail lengths of every stage kind at one context length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCosts {
    pub projection: u64,
    pub qk: u64,
    pub sv: u64,
    pub o_proj: u64,
    pub tails: TailCycleParams,
}

impl StageCosts {
    /// Costs for a decode step attending over `context_len` cached tokens
    /// plus the new one.
    pub fn new(cfg: &AttentionConfig, engine: &EngineConfig, context_len: usize, tails: TailCycleParams) -> Self {
        let keys = context_len + 1;
        Self {
            projection: engine.dot_cycles(cfg.head_dim, cfg.hidden_dim),
            qk: engine.dot_cycles(keys, cfg.head_dim),
            sv: engine.axpy_cycles(keys, cfg.head_dim),
            o_proj: engine.dot_cycles(cfg.hidden_dim, cfg.head_dim),
            tails,
        }
    }

    fn duration(&self, op: StageOp) -> u64 {
        match op {
            StageOp::QProj(_) | StageOp::KProj(_) | StageOp::VProj(_) => self.projection,
            StageOp::RopeQ(_) | StageOp::RopeK(_) => self.tails.rope_tail,
            StageOp::QK(_) => self.qk,
            StageOp::Softmax(_) => self.tails.softmax_tail,
            StageOp::SV(_) => self.sv,
            StageOp::OProj(_) => self.o_proj,
        }
    }
}

/// Places VPU stages in the given order, each as early as its inputs and
/// the VPU allow, and the SPU tails as soon as their producers finish.
pub fn build_timeline(order: &[StageOp], group_size: usize, costs: &StageCosts) -> Result<Timeline> {
    let mut done: HashMap<StageOp, u64> = HashMap::new();
    let mut entries = Vec::with_capacity(order.len() * 2);
    let (mut vpu_free, mut spu_free) = (0u64, 0u64);
    for &op in order {
        if op.unit() != Unit::Vpu {
            return Err(Error::Config(format!("{op} is not a VPU stage")));
        }
        let mut start = vpu_free;
        for dep in op.dependencies(group_size) {
            let end = *done
                .get(&dep)
                .ok_or_else(|| Error::Config(format!("{op} scheduled before its input {dep}")))?;
            start = start.max(end);
        }
        let end = start + costs.duration(op);
        entries.push(TimelineEntry {
            unit: Unit::Vpu,
            op,
            start,
            end,
        });
        done.insert(op, end);
        vpu_free = end;
        if let Some(tail) = op.follow_up() {
            let s = end.max(spu_free);
            let e = s + costs.duration(tail);
            entries.push(TimelineEntry {
                unit: Unit::Spu,
                op: tail,
                start: s,
                end: e,
            });
            done.insert(tail, e);
            spu_free = e;
        }
    }
    Ok(Timeline { group_size, entries })
}

fn check_context(cfg: &AttentionConfig, context_len: usize) -> Result<()> {
    cfg.validate()?;
    if context_len >= cfg.max_context {
        return Err(Error::ContextOverflow {
            requested: context_len + 1,
            limit: cfg.max_context,
        });
    }
    Ok(())
}

/// VPU order of the reordered grouped-query dataflow.
///
/// Two queries of each group are projected before the group's key and
/// value, inside the previous group's idle window, so their RoPE tails are
/// hidden. Every later query projection is slotted between two qK stages.
/// All qK stages of a group precede its sV stages, and each sV output feeds
/// the output projection straight away.
pub fn optimized_order(cfg: &AttentionConfig) -> Vec<StageOp> {
    let g = cfg.group_size();
    let prefix = g.min(2);
    let mut order = Vec::new();
    let head = |grp: usize, i: usize| grp * g + i;
    order.extend((0..prefix).map(|i| StageOp::QProj(head(0, i))));
    for grp in 0..cfg.num_kv_heads {
        order.push(StageOp::KProj(grp));
        order.push(StageOp::VProj(grp));
        order.push(StageOp::QK(head(grp, 0)));
        for i in prefix..g {
            order.push(StageOp::QProj(head(grp, i)));
            order.push(StageOp::QK(head(grp, i - 1)));
        }
        if g > 1 {
            order.push(StageOp::QK(head(grp, g - 1)));
        }
        if grp + 1 < cfg.num_kv_heads {
            order.extend((0..prefix).map(|i| StageOp::QProj(head(grp + 1, i))));
        }
        for i in 0..g {
            order.push(StageOp::SV(head(grp, i)));
            order.push(StageOp::OProj(head(grp, i)));
        }
    }
    order
}

/// VPU order of multi-head attention extended head by head to groups.
pub fn naive_order(cfg: &AttentionConfig) -> Vec<StageOp> {
    let g = cfg.group_size();
    if g == 1 {
        return optimized_order(cfg);
    }
    let mut order = Vec::new();
    for grp in 0..cfg.num_kv_heads {
        order.push(StageOp::KProj(grp));
        order.push(StageOp::VProj(grp));
        for h in grp * g..(grp + 1) * g {
            order.extend([StageOp::QProj(h), StageOp::QK(h), StageOp::SV(h), StageOp::OProj(h)]);
        }
    }
    order
}

pub fn schedule_gqa_optimized(
    cfg: &AttentionConfig,
    engine: &EngineConfig,
    context_len: usize,
    tails: TailCycleParams,
) -> Result<Timeline> {
    check_context(cfg, context_len)?;
    uram_budget(cfg).check_against(cfg.uram_limit)?;
    build_timeline(&optimized_order(cfg), cfg.group_size(), &StageCosts::new(cfg, engine, context_len, tails))
}

pub fn schedule_gqa_naive(
    cfg: &AttentionConfig,
    engine: &EngineConfig,
    context_len: usize,
    tails: TailCycleParams,
) -> Result<Timeline> {
    check_context(cfg, context_len)?;
    build_timeline(&naive_order(cfg), cfg.group_size(), &StageCosts::new(cfg, engine, context_len, tails))
}

impl Timeline {
    pub fn vpu_entries(&self) -> impl Iterator<Item = &TimelineEntry> {
        self.entries.iter().filter(|e| e.unit == Unit::Vpu)
    }

    pub fn total_cycles(&self) -> u64 {
        self.entries.iter().map(|e| e.end).max().unwrap_or(0)
    }

    /// VPU idle cycles immediately before each VPU stage after the first.
    pub fn vpu_gaps(&self) -> Vec<(StageOp, u64)> {
        let v: Vec<_> = self.vpu_entries().collect();
        v.windows(2).map(|w| (w[1].op, w[1].start - w[0].end)).collect()
    }

    pub fn vpu_idle_after_fill(&self) -> u64 {
        self.vpu_gaps().iter().map(|(_, g)| g).sum()
    }

    pub fn entry(&self, op: StageOp) -> Option<&TimelineEntry> {
        self.entries.iter().find(|e| e.op == op)
    }

    /// Checks unit exclusivity and that every consumer starts after its
    /// producers end.
    pub fn validate(&self) -> Result<()> {
        for unit in [Unit::Vpu, Unit::Spu] {
            let mut spans: Vec<_> = self.entries.iter().filter(|e| e.unit == unit).collect();
            spans.sort_by_key(|e| e.start);
            if let Some(w) = spans.windows(2).find(|w| w[1].start < w[0].end) {
                return Err(Error::Config(format!("{} overlaps {} on {unit:?}", w[1].op, w[0].op)));
            }
        }
        let ends: HashMap<StageOp, u64> = self.entries.iter().map(|e| (e.op, e.end)).collect();
        for e in &self.entries {
            if e.op.unit() != e.unit || e.end < e.start {
                return Err(Error::Config(format!("malformed entry {}", e.op)));
            }
            for dep in e.op.dependencies(self.group_size) {
                match ends.get(&dep) {
                    Some(&end) if end <= e.start => {}
                    Some(_) => return Err(Error::Config(format!("{} starts before {dep} ends", e.op))),
                    None => return Err(Error::Config(format!("{} lacks input {dep}", e.op))),
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("unit,op,head,start,end\n");
        for e in &self.entries {
            let unit = match e.unit {
                Unit::Vpu => "VPU",
                Unit::Spu => "SPU",
            };
            s.push_str(&format!("{unit},{},{},{},{}\n", e.op.name(), e.op.head(), e.start, e.end));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Bytes held by one URAM when used 64 bits wide.
pub const URAM_BYTES: usize = 4096 * 8;
const URAM_DEPTH: usize = 4096;
const URAM_WIDTH_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UramBudget {
    /// One INT8 k or v buffer at full context.
    pub urams_kv: usize,
    /// Naive ordering needs k and v resident together.
    pub urams_kv_naive: usize,
    /// Double-buffered FP16 softmax outputs for a whole group.
    pub urams_softmax: usize,
}

impl UramBudget {
    pub fn optimized_total(&self) -> usize {
        self.urams_kv + self.urams_softmax
    }

    pub fn naive_total(&self) -> usize {
        self.urams_kv_naive
    }

    pub fn fits(&self, available: usize) -> bool {
        self.optimized_total() <= available
    }

    pub fn check_against(&self, available: Option<usize>) -> Result<()> {
        match available {
            Some(n) if !self.fits(n) => Err(Error::UramBudget(format!(
                "need {} URAMs ({} kv + {} softmax), {n} available",
                self.optimized_total(),
                self.urams_kv,
                self.urams_softmax
            ))),
            _ => Ok(()),
        }
    }
}

pub fn uram_budget(cfg: &AttentionConfig) -> UramBudget {
    let kv = (cfg.max_context * cfg.head_dim).div_ceil(URAM_BYTES);
    // Softmax weights of the group's heads sit side by side in one word.
    let words_wide = (cfg.group_size() * 16).div_ceil(URAM_WIDTH_BITS);
    let deep = cfg.max_context.div_ceil(URAM_DEPTH);
    UramBudget {
        urams_kv: kv,
        urams_kv_naive: 2 * kv,
        urams_softmax: words_wide * deep * 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llama3_uram_figures() {
        let b = uram_budget(&AttentionConfig::llama3_8b());
        assert_eq!((b.urams_kv, b.urams_kv_naive, b.urams_softmax), (16, 32, 2));
        assert!(b.check_against(Some(17)).is_err());
        assert!(b.check_against(Some(64)).is_ok());
        let tight = AttentionConfig {
            uram_limit: Some(17),
            ..AttentionConfig::llama3_8b()
        };
        let err = schedule_gqa_optimized(&tight, &EngineConfig::default(), 10, TailCycleParams::default());
        assert!(matches!(err, Err(Error::UramBudget(_))));
    }

    #[test]
    fn group_one_matches_between_orders() {
        let cfg = AttentionConfig {
            num_q_heads: 4,
            num_kv_heads: 4,
            ..AttentionConfig::llama3_8b()
        };
        assert_eq!(naive_order(&cfg), optimized_order(&cfg));
    }

    #[test]
    fn context_overflow_rejected() {
        let cfg = AttentionConfig::llama3_8b();
        let err = schedule_gqa_optimized(&cfg, &EngineConfig::default(), 4096, TailCycleParams::default());
        assert!(matches!(err, Err(Error::ContextOverflow { .. })));
    }

    #[test]
    fn csv_header() {
        let cfg = AttentionConfig::llama3_8b();
        let t = schedule_gqa_optimized(&cfg, &EngineConfig::default(), 128, TailCycleParams::default()).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("unit,op,head,start,end\nVPU,q_proj,0,0,"));
    }
}
