//! Whole-system estimates: model sizes, transfer and fetch latencies,
//! tensor-parallel partitioning, throughput, capacity, and an end-to-end
//! functional run of a tiny model.

mod model;
mod partition;
mod platform;
mod throughput;
mod tiny;

pub use model::{model_breakdown, MatrixShape, ModelBreakdown, ModelSpec, WeightPrecision, FP16_BYTES};
pub use partition::{
    allreduce_timeline, gemv_cycles, tensor_parallel_partition, AllReduceInterval, AllReducePoint, CoreWorkload,
    ReducePoint, TensorParallelPlan,
};
pub use platform::{
    bytes_per_second, embedding_fetch_latency, modeled_utilization, transfer_latency, ChannelConfig, EmbeddingStore,
    Interconnect, PlatformConfig, StorePath, TransferLatency, GIB, MIB, UTILIZATION_PROBE_BYTES,
};
pub use throughput::{
    capacity_check, decode_throughput, max_context, CapacityReport, ChannelBudget, ThroughputReport,
    NORM_REFERENCE_PARAMS_B,
};
pub use tiny::{
    quantized_gemv, run_tiny_model_e2e, run_tiny_with_weights, LayerWeights, TinyStep, TinyTrace, TinyWeights,
    TOLERANCE_SIGMAS,
};
