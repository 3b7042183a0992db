//! GEMV compute engine: segmented DSP MAC chains feeding a reduction tree.

pub mod dsp;
pub mod engine;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use dsp::{DspInputs, DspOutputs, DspPrimitiveState, InMode, OpMode};
pub use engine::{run_axpy_gemv, run_dot_gemv, run_dot_gemv_traced, DotTrace, EngineReport};
pub use tree::{reduce_partials, ReduceOutcome, Reduction, ReductionTreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    Dot,
    Axpy,
}

/// Geometry of the MAC array and its reduction tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// DSPs per sub-chain.
    pub chain_len: usize,
    pub num_chains: usize,
    pub reduction: Reduction,
    /// Activations travel the A1 cascade and are locked in A2.
    #[serde(default)]
    pub activation_prefetch: bool,
    /// AXPY mode supported.
    #[serde(default)]
    pub axpy: bool,
    /// AXPY results leave through the P cascade rather than fabric muxes.
    #[serde(default)]
    pub in_dsp_offload: bool,
}

impl Default for EngineConfig {
    /// The optimized hybrid engine: 128 MACs in sub-chains of 4.
    fn default() -> Self {
        Self {
            chain_len: 4,
            num_chains: 32,
            reduction: Reduction::SixInputChain,
            activation_prefetch: true,
            axpy: true,
            in_dsp_offload: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_len == 0 || self.num_chains == 0 {
            return Err(Error::Config("engine needs at least one DSP per chain and one chain".into()));
        }
        if self.num_chains > 1 && self.reduction == Reduction::None {
            return Err(Error::Config("several chains need a reduction tree".into()));
        }
        Ok(())
    }

    pub fn macs(&self) -> usize {
        self.chain_len * self.num_chains
    }

    /// Input columns consumed per activation window.
    pub fn width(&self) -> usize {
        self.macs()
    }

    pub fn tree(&self) -> ReductionTreeConfig {
        ReductionTreeConfig::new(self.num_chains, self.reduction)
    }

    /// The DSP that accumulates tree outputs across input tiles.
    fn accumulator_dsps(&self) -> usize {
        usize::from(self.num_chains > 1)
    }

    /// Cycles of one DOT GEMV over an `rows × cols` matrix, matching the
    /// stepped simulation.
    pub fn dot_cycles(&self, rows: usize, cols: usize) -> u64 {
        let l = self.chain_len as u64;
        let windows = (rows.div_ceil(self.chain_len) * cols.div_ceil(self.width())) as u64;
        // The first window's prefetch and latch, the windows themselves, and
        // the cascade drain of the last window.
        (windows + 2) * l + self.tree().latency() + self.accumulator_dsps() as u64
    }

    /// Cycles of one AXPY over `terms` vectors of length `dim`.
    pub fn axpy_cycles(&self, terms: usize, dim: usize) -> u64 {
        let tiles = dim.div_ceil(self.width()) as u64;
        tiles * (terms as u64 + self.chain_len as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp_count: usize,
    pub mac_dsps: usize,
    pub tree_dsps: usize,
    pub accumulator_dsps: usize,
    /// Fabric pipeline register sets, comparable only between presets.
    pub register_sets: usize,
}

/// DSP and fabric-register estimate for an engine configuration.
pub fn estimate_resources(cfg: &EngineConfig) -> Result<ResourceEstimate> {
    cfg.validate()?;
    let tree = cfg.tree();
    let mac_dsps = cfg.macs();
    let tree_dsps = tree.dsp_count();
    let accumulator_dsps = cfg.accumulator_dsps();
    let l = cfg.chain_len;
    // Without in-DSP prefetch each DSP of a chain needs its own delay line to
    // line its activation up with the cascaded partial sum.
    let skew = if cfg.activation_prefetch {
        0
    } else {
        cfg.num_chains * l * (l - 1) / 2
    };
    // Local AXPY accumulators collected through fabric.
    let collection = if cfg.axpy && !cfg.in_dsp_offload { mac_dsps } else { 0 };
    Ok(ResourceEstimate {
        dsp_count: mac_dsps + tree_dsps + accumulator_dsps,
        mac_dsps,
        tree_dsps,
        accumulator_dsps,
        register_sets: skew + collection + tree.register_sets(),
    })
}

/// Named engine variants of the resource comparison table.
pub fn engine_presets() -> Vec<(&'static str, EngineConfig)> {
    let tree = |reduction| EngineConfig {
        chain_len: 1,
        num_chains: 128,
        reduction,
        activation_prefetch: false,
        axpy: false,
        in_dsp_offload: false,
    };
    let hybrid = EngineConfig {
        chain_len: 4,
        num_chains: 32,
        reduction: Reduction::TwoInput,
        activation_prefetch: false,
        axpy: false,
        in_dsp_offload: false,
    };
    vec![
        ("fp16_mac_tree", tree(Reduction::TwoInput)),
        ("int24_mac_tree", tree(Reduction::TwoInput)),
        (
            "int24_mac_chain",
            EngineConfig {
                chain_len: 128,
                num_chains: 1,
                reduction: Reduction::None,
                ..hybrid.clone()
            },
        ),
        ("hybrid", hybrid.clone()),
        (
            "hybrid_plus_unopt",
            EngineConfig {
                axpy: true,
                ..hybrid
            },
        ),
        ("hybrid_plus", EngineConfig::default()),
    ]
}

pub fn engine_preset(name: &str) -> Result<EngineConfig> {
    let presets = engine_presets();
    presets
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c.clone())
        .ok_or_else(|| Error::UnknownPreset {
            kind: "engine",
            name: name.to_string(),
            known: presets.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "),
        })
}
