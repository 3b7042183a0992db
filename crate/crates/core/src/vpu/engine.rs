//! Cycle-stepped GEMV engine.
//!
//! DOT mode tiles the matrix into windows of `chain_len` rows by
//! `chain_len × num_chains` columns. DSP `j` of every chain holds one
//! activation for `chain_len` consecutive cycles and sees the window's rows
//! one per cycle, skewed by `j` so partial sums ripple down the P cascade.
//! Activations for the next window are shifted into the A1 registers while
//! the current window computes. DSP `j` latches A2 during load phase `j`,
//! reading A1 just before the cascade overwrites it.
//!
//! AXPY mode gives each DSP one output element. The scalar is broadcast on D,
//! the cached vector element arrives on B, and the product accumulates in P.
//! The accumulators then drain through the P cascade, one per cycle.

use serde::{Deserialize, Serialize};

use super::dsp::{DspInputs, DspPrimitiveState, InMode, OpMode};
use super::EngineConfig;
use crate::error::{Error, Result};
use crate::quant::{wrap48, Acc48, CodeMatrix, Int24};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineReport {
    /// One accumulator per output element, in the code domain.
    pub result: Vec<Acc48>,
    pub cycles: u64,
    pub dsp_count: usize,
    /// Accumulations that left the 48-bit range and wrapped.
    pub saturation_events: u64,
}

/// What each multiplier saw during a DOT run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotTrace {
    /// Per DSP (chain-major), the A2 value used for every row computed.
    pub multiplier_operands: Vec<Vec<i32>>,
    /// Per DSP, the cycles at whose end A2 latched a new activation.
    pub refresh_cycles: Vec<Vec<u64>>,
}

struct Chains {
    cells: Vec<DspPrimitiveState>,
    len: usize,
}

impl Chains {
    fn new(cfg: &EngineConfig, inmode: InMode, opmode: OpMode) -> Self {
        let mut cell = DspPrimitiveState::default();
        cell.configure(inmode, opmode);
        Self {
            cells: vec![cell; cfg.macs()],
            len: cfg.chain_len,
        }
    }

    fn set_opmode(&mut self, inmode: InMode, opmode: OpMode) {
        for c in &mut self.cells {
            c.configure(inmode, opmode);
        }
    }
}

pub fn run_dot_gemv(cfg: &EngineConfig, w: CodeMatrix<'_>, x: &[Int24]) -> Result<EngineReport> {
    dot_impl(cfg, w, x, None)
}

/// As [`run_dot_gemv`], also recording the multiplier operand stream.
pub fn run_dot_gemv_traced(
    cfg: &EngineConfig,
    w: CodeMatrix<'_>,
    x: &[Int24],
) -> Result<(EngineReport, DotTrace)> {
    let mut trace = DotTrace {
        multiplier_operands: vec![Vec::new(); cfg.macs()],
        refresh_cycles: vec![Vec::new(); cfg.macs()],
    };
    let report = dot_impl(cfg, w, x, Some(&mut trace))?;
    Ok((report, trace))
}

fn dot_impl(
    cfg: &EngineConfig,
    w: CodeMatrix<'_>,
    x: &[Int24],
    mut trace: Option<&mut DotTrace>,
) -> Result<EngineReport> {
    cfg.validate()?;
    if x.len() != w.cols {
        return Err(Error::Shape(format!(
            "activation length {} does not match {} matrix columns",
            x.len(),
            w.cols
        )));
    }
    let l = cfg.chain_len;
    let width = cfg.width();
    let tiles = w.cols.div_ceil(width);
    let row_blocks = w.rows.div_ceil(l);
    let windows = row_blocks * tiles;
    let dsp_count = super::estimate_resources(cfg)?.dsp_count;
    if windows == 0 {
        return Ok(EngineReport {
            result: vec![Acc48::ZERO; w.rows],
            cycles: 0,
            dsp_count,
            saturation_events: 0,
        });
    }

    // Window `w` covers row block `w / tiles` and column tile `w % tiles`.
    let window_of = |win: usize| (win / tiles, win % tiles);
    let activation = |win: usize, chain: usize, j: usize| {
        let col = window_of(win).1 * width + chain * l + j;
        x.get(col).copied().unwrap_or(Int24::ZERO)
    };
    let weight = |win: usize, chain: usize, j: usize, i: usize| {
        let (rb, t) = window_of(win);
        let (row, col) = (rb * l + i, t * width + chain * l + j);
        if row < w.rows && col < w.cols {
            w.at(row, col)
        } else {
            0
        }
    };

    let mut chains = Chains::new(cfg, InMode::DotOperand, OpMode::AccumulateCascade);
    let mut chain_out = vec![Acc48::ZERO; cfg.num_chains];
    let mut result = vec![Acc48::ZERO; w.rows];
    let mut saturation_events = 0u64;
    let last_cycle = (windows + 2) * l - 1;

    for cycle in 0..=last_cycle {
        for chain in 0..cfg.num_chains {
            let mut pcin = Acc48::ZERO;
            let mut acin = Int24::ZERO;
            // Window whose activations are being shifted in this cycle.
            let (load_win, phase) = (cycle / l, cycle % l);
            if load_win < windows {
                acin = activation(load_win, chain, l - 1 - phase);
            }
            for j in 0..l {
                let cell = &mut chains.cells[chain * l + j];
                cell.ce_a1 = load_win < windows && phase >= j;
                // Latch one cycle before the DSP's first row of a window.
                let latch = cycle >= l + j && (cycle - l - j) % l == 0;
                let latch_win = cycle.saturating_sub(l + j) / l;
                cell.ce_a2 = latch && latch_win < windows;
                if cell.ce_a2 {
                    if let Some(t) = trace.as_deref_mut() {
                        t.refresh_cycles[chain * l + j].push(cycle as u64);
                    }
                }
                // Row this DSP works on, if any.
                let active = (cycle > l + j).then(|| ((cycle - l - 1 - j) / l, (cycle - l - 1 - j) % l));
                let b = match active {
                    Some((win, i)) if win < windows => {
                        if let Some(t) = trace.as_deref_mut() {
                            t.multiplier_operands[chain * l + j].push(cell.a2.get());
                        }
                        weight(win, chain, j, i)
                    }
                    _ => 0,
                };
                let out = cell.step(DspInputs {
                    acin,
                    b,
                    d: Int24::ZERO,
                    pcin,
                })?;
                saturation_events += u64::from(out.overflow);
                // Neighbours see this cell's registers as they were before
                // the clock edge.
                pcin = out.pcout;
                acin = out.acout;
            }
            chain_out[chain] = chains.cells[chain * l + l - 1].p;
        }
        // The last DSP finished row `i` of window `win` this cycle.
        if cycle >= 2 * l {
            let (win, i) = ((cycle - 2 * l) / l, (cycle - 2 * l) % l);
            if win < windows {
                let row = window_of(win).0 * l + i;
                if row < w.rows {
                    let tile_sum = chain_out.iter().fold(0i64, |acc, p| wrap48(acc + p.get()));
                    result[row] = result[row].wrapping_add(tile_sum);
                }
            }
        }
    }

    let cycles = last_cycle as u64 + 1 + cfg.tree().latency() + usize::from(cfg.num_chains > 1) as u64;
    debug_assert_eq!(cycles, cfg.dot_cycles(w.rows, w.cols));
    Ok(EngineReport {
        result,
        cycles,
        dsp_count,
        saturation_events,
    })
}

/// Computes `Σ_i s[i] × v.row(i)` with one local accumulator per element.
pub fn run_axpy_gemv(cfg: &EngineConfig, v: CodeMatrix<'_>, s: &[Int24]) -> Result<EngineReport> {
    cfg.validate()?;
    if s.len() != v.rows {
        return Err(Error::Shape(format!(
            "{} scalars for {} cached vectors",
            s.len(),
            v.rows
        )));
    }
    let l = cfg.chain_len;
    let width = cfg.width();
    let dim = v.cols;
    let mut chains = Chains::new(cfg, InMode::AxpyOperand, OpMode::AccumulateLocal);
    let mut result = vec![Acc48::ZERO; dim];
    let mut saturation_events = 0u64;
    let mut cycles = 0u64;

    for tile in 0..dim.div_ceil(width) {
        chains.set_opmode(InMode::AxpyOperand, OpMode::AccumulateLocal);
        for cell in &mut chains.cells {
            cell.p = Acc48::ZERO;
        }
        for (i, &scalar) in s.iter().enumerate() {
            for (k, cell) in chains.cells.iter_mut().enumerate() {
                let e = tile * width + k;
                let b = if e < dim { v.at(i, e) } else { 0 };
                let out = cell.step(DspInputs {
                    b,
                    d: scalar,
                    ..Default::default()
                })?;
                saturation_events += u64::from(out.overflow);
            }
            cycles += 1;
        }
        chains.set_opmode(InMode::AxpyOperand, OpMode::OffloadCascade);
        for drain in 0..l {
            for chain in 0..cfg.num_chains {
                let mut pcin = Acc48::ZERO;
                for j in 0..chains.len {
                    let out = chains.cells[chain * l + j].step(DspInputs {
                        pcin,
                        ..Default::default()
                    })?;
                    pcin = out.pcout;
                }
                // The chain tail emits its own accumulator first.
                let e = tile * width + chain * l + (l - 1 - drain);
                if e < dim {
                    result[e] = pcin;
                }
            }
            cycles += 1;
        }
    }
    debug_assert_eq!(cycles, cfg.axpy_cycles(s.len(), dim));
    Ok(EngineReport {
        result,
        cycles,
        dsp_count: super::estimate_resources(cfg)?.dsp_count,
        saturation_events,
    })
}
