//! Reduction of sub-chain partial sums.
//!
//! The building block is a three-DSP adder chain taking six inputs: the first
//! DSP adds two operands (C and the concatenated A:B), the next two each add
//! two more operands onto the cascaded sum. Input pipeline depths of the later
//! DSPs absorb the systolic skew, so a block needs one set of 48 fabric
//! registers. A block with fewer than six inputs keeps only the DSPs it needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{wrap48, Acc48};

pub const BLOCK_INPUTS: usize = 6;
pub const BLOCK_DSPS: usize = 3;
/// Cycles from the last operand entering a block to its sum leaving it.
pub const BLOCK_LATENCY: u64 = 3;

/// Shape of the adder tree that merges the sub-chain outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Single chain, nothing to reduce.
    None,
    /// Binary tree of standalone DSP adders.
    TwoInput,
    /// Tree of six-input adder-chain blocks.
    SixInputChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLevel {
    pub inputs: usize,
    pub blocks: usize,
    pub dsps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionTreeConfig {
    pub fan_in: usize,
    pub reduction: Reduction,
    pub levels: Vec<TreeLevel>,
}

impl ReductionTreeConfig {
    pub fn new(fan_in: usize, reduction: Reduction) -> Self {
        let mut levels = Vec::new();
        let mut n = fan_in;
        let arity = match reduction {
            Reduction::None => 1,
            Reduction::TwoInput => 2,
            Reduction::SixInputChain => BLOCK_INPUTS,
        };
        while arity > 1 && n > 1 {
            let blocks = n.div_ceil(arity);
            // Each DSP consumes two fresh operands; a lone leftover input is
            // forwarded through a register.
            let dsps = (0..blocks)
                .map(|b| {
                    let k = (n - b * arity).min(arity);
                    if k >= 2 {
                        k.div_ceil(2)
                    } else {
                        0
                    }
                })
                .sum();
            levels.push(TreeLevel {
                inputs: n,
                blocks,
                dsps,
            });
            n = blocks;
        }
        Self {
            fan_in,
            reduction,
            levels,
        }
    }

    pub fn dsp_count(&self) -> usize {
        self.levels.iter().map(|l| l.dsps).sum()
    }

    pub fn block_count(&self) -> usize {
        self.levels.iter().map(|l| l.blocks).sum()
    }

    pub fn latency(&self) -> u64 {
        let per_level = match self.reduction {
            Reduction::None => 0,
            Reduction::TwoInput => 1,
            Reduction::SixInputChain => BLOCK_LATENCY,
        };
        self.levels.len() as u64 * per_level
    }

    /// Fabric register sets needed to align operands. A six-input block needs
    /// one set; a binary tree registers every odd input forwarded past a level.
    pub fn register_sets(&self) -> usize {
        match self.reduction {
            Reduction::None => 0,
            Reduction::SixInputChain => self.block_count(),
            Reduction::TwoInput => self.levels.iter().filter(|l| l.inputs % 2 == 1).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReduceOutcome {
    pub sum: Acc48,
    pub levels: usize,
    pub latency: u64,
    pub dsp_adders: usize,
}

/// Sums `partials` through a tree of six-input blocks, with 48-bit
/// two's-complement arithmetic inside each block.
pub fn reduce_partials(partials: &[Acc48]) -> Result<ReduceOutcome> {
    if partials.is_empty() {
        return Err(Error::Empty("reduction input"));
    }
    let cfg = ReductionTreeConfig::new(partials.len(), Reduction::SixInputChain);
    let mut level: Vec<i64> = partials.iter().map(|p| p.get()).collect();
    while level.len() > 1 {
        level = level
            .chunks(BLOCK_INPUTS)
            .map(|block| block.iter().fold(0i64, |acc, &v| wrap48(acc + v)))
            .collect();
    }
    Ok(ReduceOutcome {
        sum: Acc48::new(level[0]).expect("wrapped"),
        levels: cfg.levels.len(),
        latency: cfg.latency(),
        dsp_adders: cfg.dsp_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(v: i64) -> Acc48 {
        Acc48::new(v).unwrap()
    }

    #[test]
    fn single_input_passes_through() {
        let r = reduce_partials(&[acc(-42)]).unwrap();
        assert_eq!(r.sum.get(), -42);
        assert_eq!((r.levels, r.latency, r.dsp_adders), (0, 0, 0));
    }

    #[test]
    fn six_equal_values_use_one_block() {
        let r = reduce_partials(&[acc(11); 6]).unwrap();
        assert_eq!(r.sum.get(), 66);
        assert_eq!(r.levels, 1);
        assert_eq!(r.dsp_adders, 3);
        assert_eq!(r.latency, BLOCK_LATENCY);
    }

    #[test]
    fn thirty_two_partials() {
        let t = ReductionTreeConfig::new(32, Reduction::SixInputChain);
        // 5 full blocks + one block of 2, then a single full block.
        assert_eq!(t.levels.len(), 2);
        assert_eq!(t.dsp_count(), 15 + 1 + 3);
        assert_eq!(t.register_sets(), 7);
        let b = ReductionTreeConfig::new(32, Reduction::TwoInput);
        assert_eq!(b.dsp_count(), 31);
        assert_eq!(ReductionTreeConfig::new(128, Reduction::TwoInput).dsp_count(), 127);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(reduce_partials(&[]).is_err());
    }
}
