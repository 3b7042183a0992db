//! One DSP48E2-style multiply-accumulate cell.
//!
//! Register update semantics: `step` evaluates the datapath on the current
//! register contents and inputs, returns the cascade outputs (which are the
//! *current* registered values), then clocks every enabled register.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{wrap48, Acc48, Int24};

/// Which pre-adder input feeds the multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InMode {
    /// A path (cascaded activations) for DOT products.
    DotOperand,
    /// D path (broadcast scalar) for AXPY.
    AxpyOperand,
}

/// Selection of the W/X/Y/Z multiplexers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpMode {
    /// `P = PCIN + M`, the DOT chain.
    AccumulateCascade,
    /// `P = P + M`, in-place AXPY accumulation.
    AccumulateLocal,
    /// `P = PCIN`; X, Y and W are disabled so new operands are ignored.
    OffloadCascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DspPrimitiveState {
    /// Prefetch register on the A cascade.
    pub a1: Int24,
    /// Locked activation.
    pub a2: Int24,
    /// Last weight presented on B (sign-extended code).
    pub b: i8,
    /// AXPY operand.
    pub d: Int24,
    pub pre_adder_gate_a: bool,
    pub pre_adder_gate_d: bool,
    pub p: Acc48,
    pub inmode: InMode,
    pub opmode: OpMode,
    pub ce_a1: bool,
    pub ce_a2: bool,
}

impl Default for DspPrimitiveState {
    fn default() -> Self {
        Self {
            a1: Int24::ZERO,
            a2: Int24::ZERO,
            b: 0,
            d: Int24::ZERO,
            pre_adder_gate_a: true,
            pre_adder_gate_d: false,
            p: Acc48::ZERO,
            inmode: InMode::DotOperand,
            opmode: OpMode::AccumulateCascade,
            ce_a1: false,
            ce_a2: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DspInputs {
    /// Activation arriving on the A cascade (ACIN).
    pub acin: Int24,
    /// Weight code on B.
    pub b: i8,
    /// Scalar on D.
    pub d: Int24,
    /// Partial sum arriving on the P cascade (PCIN).
    pub pcin: Acc48,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DspOutputs {
    /// ACOUT, the registered A1 value.
    pub acout: Int24,
    /// PCOUT, the registered P value.
    pub pcout: Acc48,
    /// Set when the ALU result left the 48-bit range and wrapped.
    pub overflow: bool,
}

impl DspPrimitiveState {
    /// Sets INMODE/OPMODE and the matching pre-adder gates.
    pub fn configure(&mut self, inmode: InMode, opmode: OpMode) {
        self.inmode = inmode;
        self.opmode = opmode;
        let offload = opmode == OpMode::OffloadCascade;
        self.pre_adder_gate_a = !offload && inmode == InMode::DotOperand;
        self.pre_adder_gate_d = !offload && inmode == InMode::AxpyOperand;
    }

    pub fn validate(&self) -> Result<()> {
        match (self.opmode, self.pre_adder_gate_a, self.pre_adder_gate_d) {
            (_, true, true) => Err(Error::IllegalMode("both pre-adder gates open")),
            (OpMode::OffloadCascade, false, false) => Ok(()),
            (OpMode::OffloadCascade, _, _) => Err(Error::IllegalMode("operand gate open while offloading")),
            (_, false, false) => Err(Error::IllegalMode("no operand gate open in a compute mode")),
            _ => Ok(()),
        }
    }

    /// Value selected by the gated pre-adder.
    fn operand(&self) -> i64 {
        let a = if self.pre_adder_gate_a { self.a2.get() as i64 } else { 0 };
        let d = if self.pre_adder_gate_d { self.d.get() as i64 } else { 0 };
        a + d
    }

    /// Advances the cell by one clock.
    pub fn step(&mut self, inputs: DspInputs) -> Result<DspOutputs> {
        self.validate()?;
        let outputs = DspOutputs {
            acout: self.a1,
            pcout: self.p,
            overflow: false,
        };
        self.b = inputs.b;
        self.d = inputs.d;
        let product = self.operand() * inputs.b as i64;
        let exact = match self.opmode {
            OpMode::AccumulateCascade => inputs.pcin.get() + product,
            OpMode::AccumulateLocal => self.p.get() + product,
            OpMode::OffloadCascade => inputs.pcin.get(),
        };
        let wrapped = wrap48(exact);
        if self.ce_a2 {
            self.a2 = self.a1;
        }
        if self.ce_a1 {
            self.a1 = inputs.acin;
        }
        self.p = Acc48::new(wrapped).expect("wrapped into 48 bits");
        Ok(DspOutputs {
            overflow: wrapped != exact,
            ..outputs
        })
    }
}
