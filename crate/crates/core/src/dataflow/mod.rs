//! SPU kernels, attention schedules and on-chip buffer accounting.

pub mod attention;
pub mod kernels;
pub mod schedule;

pub use attention::{attention_decode_step, AttentionInputs, AttentionStep, KvCache, ScheduleKind};
pub use kernels::{normalize, NORM_EPS, online_softmax, rope, silu, silu_vec, softmax_latency, NormKind, OnlineSoftmax};
pub use schedule::{
    build_timeline, naive_order, optimized_order, schedule_gqa_naive, schedule_gqa_optimized, uram_budget,
    AttentionConfig, StageCosts, StageOp, TailCycleParams, Timeline, TimelineEntry, Unit, UramBudget, URAM_BYTES,
};
