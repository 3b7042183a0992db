//! Boards, their memory channels, and the external embedding store.

use serde::{Deserialize, Serialize};

use crate::dram::{sweep_btt, DramChannel};
use crate::error::{Error, Result};
use crate::vpu::EngineConfig;

pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Bytes per second delivered by `gbps` of nominal bandwidth. A nominal
/// GB/s is counted as 1000 MiB/s, the unit in which model sizes are quoted.
pub fn bytes_per_second(gbps: f64) -> f64 {
    gbps * 1000.0 * MIB as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub name: String,
    pub dram: DramChannel,
    pub capacity_gib: f64,
    /// AXI ports the accelerator core uses on this channel.
    pub ports: usize,
}

impl ChannelConfig {
    pub fn bandwidth_gbps(&self) -> f64 {
        self.dram.timing.peak_gbps()
    }

    pub fn capacity_bytes(&self) -> u64 {
        (self.capacity_gib * GIB as f64).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorePath {
    /// Read into a filesystem buffer, copy, then DMA to the accelerator.
    Buffered,
    /// Stream straight into accelerator memory.
    #[default]
    Bypass,
}

/// Calibrated latency terms of the storage holding an offloaded embedding
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub name: String,
    pub seek_ms: f64,
    /// Sequential read bandwidth in MB/s (10^6 bytes).
    pub stream_mb_s: f64,
    pub path: StorePath,
    pub staging_ms: f64,
    pub dma_ms: f64,
    /// With a prebuilt cluster map a seek is O(1); without it the file's
    /// cluster chain is walked from the start.
    pub fast_seek: bool,
    pub cluster_bytes: u64,
    pub cluster_walk_us: f64,
}

impl EmbeddingStore {
    pub fn validate(&self) -> Result<()> {
        let terms = [self.seek_ms, self.staging_ms, self.dma_ms, self.cluster_walk_us];
        if terms.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || !(self.stream_mb_s > 0.0) || self.cluster_bytes == 0 {
            return Err(Error::Config(format!("embedding store {}: invalid latency terms", self.name)));
        }
        Ok(())
    }
}

/// Average milliseconds to fetch one `vector_bytes` row of a table of
/// `table_bytes`.
pub fn embedding_fetch_latency(store: &EmbeddingStore, vector_bytes: u64, table_bytes: u64) -> Result<f64> {
    store.validate()?;
    let mut ms = store.seek_ms + vector_bytes as f64 / (store.stream_mb_s * 1e3);
    if store.path == StorePath::Buffered {
        ms += store.staging_ms + store.dma_ms;
    }
    if !store.fast_seek {
        // A uniformly random row sits halfway down the chain on average.
        let clusters = table_bytes.div_ceil(store.cluster_bytes);
        ms += clusters as f64 / 2.0 * store.cluster_walk_us / 1e3;
    }
    Ok(ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferLatency {
    pub ms: f64,
    pub passes_per_s: f64,
}

/// Time to stream `model_bytes` once over `bandwidth_gbps` at `utilization`.
pub fn transfer_latency(model_bytes: u64, bandwidth_gbps: f64, utilization: f64) -> Result<TransferLatency> {
    if !(utilization > 0.0 && utilization <= 1.0) {
        return Err(Error::Config(format!("utilization {utilization} outside (0, 1]")));
    }
    if !(bandwidth_gbps > 0.0) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    let s = model_bytes as f64 / (bytes_per_second(bandwidth_gbps) * utilization);
    Ok(TransferLatency {
        ms: s * 1e3,
        passes_per_s: if s == 0.0 { f64::INFINITY } else { 1.0 / s },
    })
}

/// Link between cores used for all-reduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interconnect {
    pub bytes_per_cycle: u64,
    pub latency_cycles: u64,
    /// Output elements forwarded per all-reduce chunk.
    pub chunk_elements: usize,
}

impl Default for Interconnect {
    fn default() -> Self {
        Self {
            bytes_per_cycle: 32,
            latency_cycles: 64,
            chunk_elements: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub name: String,
    pub channels: Vec<ChannelConfig>,
    pub cores: usize,
    pub engine_preset: String,
    pub engine: EngineConfig,
    pub clock_mhz: f64,
    pub urams: usize,
    pub embedding_store: EmbeddingStore,
    /// Bytes per AXI transfer used for weight streaming.
    pub btt: u64,
    /// Utilization lost during inference relative to the isolated
    /// streaming benchmark (refresh collisions, kv traffic, control).
    pub inference_drop: f64,
    /// DRAM held back for the OS and buffers, per GiB of channel capacity.
    pub reserved_mib_per_gib: f64,
    #[serde(default)]
    pub interconnect: Interconnect,
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("platform {}: {what}", self.name)));
        if self.cores == 0 || self.cores > self.channels.len() {
            return bad(format!("{} cores need as many channels, have {}", self.cores, self.channels.len()));
        }
        for ch in &self.channels {
            ch.dram.validate()?;
            if ch.ports == 0 || !(ch.capacity_gib > 0.0) {
                return bad(format!("channel {} needs ports and capacity", ch.name));
            }
        }
        if !(self.clock_mhz > 0.0) || !(0.0..1.0).contains(&self.inference_drop) || !self.btt.is_power_of_two() {
            return bad("clock, inference drop or BTT out of range".into());
        }
        if self.interconnect.bytes_per_cycle == 0 || self.interconnect.chunk_elements == 0 {
            return bad("interconnect needs bandwidth and a chunk size".into());
        }
        self.engine.validate()?;
        self.embedding_store.validate()
    }

    /// Sum of the bandwidth of the channels owned by cores.
    pub fn bandwidth_gbps(&self) -> f64 {
        self.channels[..self.cores].iter().map(ChannelConfig::bandwidth_gbps).sum()
    }

    pub fn reserved_bytes(&self, ch: &ChannelConfig) -> u64 {
        (ch.capacity_gib * self.reserved_mib_per_gib * MIB as f64).round() as u64
    }
}

/// Size of the streaming benchmark used to measure channel utilization.
pub const UTILIZATION_PROBE_BYTES: u64 = 256 * 1024;

/// Utilization the channel sustains when streaming with the platform's BTT.
pub fn modeled_utilization(platform: &PlatformConfig, channel: &ChannelConfig) -> Result<f64> {
    let points = sweep_btt(&channel.dram, UTILIZATION_PROBE_BYTES, channel.ports, &[platform.btt])?;
    Ok(points[0].utilization)
}
