//! DDR4 channel behind a multi-port memory controller.

mod plan;
mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use plan::{
    plan_column_aligned, plan_per_port_chunks, plan_split, sweep_btt, sweep_csv, SweepPoint,
    SWEEP_CSV_HEADER,
};
pub use sim::{simulate_transfer, ArbitrationPolicy, AxiTransaction, TransferReport};

/// Bytes moved by one burst of eight beats on a 64-bit bus.
pub const BURST_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressField {
    Column,
    BankGroup,
    Bank,
    Row,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramGeometry {
    pub bank_groups: u64,
    pub banks_per_group: u64,
    /// Bytes reachable in one open row.
    pub row_bytes: u64,
    pub rows_per_bank: u64,
    pub column_unit: u64,
    /// Fields from least to most significant address bit.
    pub address_map: Vec<AddressField>,
}

impl Default for DramGeometry {
    /// One 4 GiB DDR4 channel with 8 KiB rows.
    fn default() -> Self {
        Self {
            bank_groups: 4,
            banks_per_group: 4,
            row_bytes: 1 << 13,
            rows_per_bank: 1 << 15,
            column_unit: BURST_BYTES,
            address_map: vec![
                AddressField::Column,
                AddressField::BankGroup,
                AddressField::Bank,
                AddressField::Row,
            ],
        }
    }
}

/// Decoded location of a byte. `column` is the byte offset within the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramLocation {
    pub bank_group: u64,
    pub bank: u64,
    pub row: u64,
    pub column: u64,
}

impl DramLocation {
    /// Flat bank index, unique across bank groups.
    pub fn bank_id(&self, geo: &DramGeometry) -> u64 {
        self.bank_group * geo.banks_per_group + self.bank
    }
}

impl DramGeometry {
    pub fn capacity(&self) -> u64 {
        self.row_bytes * self.bank_groups * self.banks_per_group * self.rows_per_bank
    }

    pub fn banks(&self) -> u64 {
        self.bank_groups * self.banks_per_group
    }

    fn field_size(&self, f: AddressField) -> u64 {
        match f {
            AddressField::Column => self.row_bytes,
            AddressField::BankGroup => self.bank_groups,
            AddressField::Bank => self.banks_per_group,
            AddressField::Row => self.rows_per_bank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            AddressField::Column,
            AddressField::BankGroup,
            AddressField::Bank,
            AddressField::Row,
        ];
        for f in fields {
            let n = self.field_size(f);
            if n == 0 || !n.is_power_of_two() {
                return Err(Error::Config(format!("{f:?} size {n} is not a power of two")));
            }
            if self.address_map.iter().filter(|&&m| m == f).count() != 1 {
                return Err(Error::Config(format!("address map must name {f:?} exactly once")));
            }
        }
        if self.address_map.len() != fields.len() {
            return Err(Error::Config("address map has extra fields".into()));
        }
        if self.column_unit == 0 || self.row_bytes % self.column_unit != 0 {
            return Err(Error::Config("row_bytes must be a multiple of column_unit".into()));
        }
        Ok(())
    }

    pub fn decode(&self, addr: u64) -> Result<DramLocation> {
        if addr >= self.capacity() {
            return Err(Error::AddressOutOfRange {
                addr,
                capacity: self.capacity(),
            });
        }
        let mut loc = DramLocation {
            bank_group: 0,
            bank: 0,
            row: 0,
            column: 0,
        };
        let mut rest = addr;
        for &f in &self.address_map {
            let n = self.field_size(f);
            let v = rest % n;
            rest /= n;
            match f {
                AddressField::Column => loc.column = v,
                AddressField::BankGroup => loc.bank_group = v,
                AddressField::Bank => loc.bank = v,
                AddressField::Row => loc.row = v,
            }
        }
        Ok(loc)
    }

    pub fn encode(&self, loc: DramLocation) -> u64 {
        self.address_map.iter().rev().fold(0, |acc, &f| {
            let v = match f {
                AddressField::Column => loc.column,
                AddressField::BankGroup => loc.bank_group,
                AddressField::Bank => loc.bank,
                AddressField::Row => loc.row,
            };
            acc * self.field_size(f) + v
        })
    }
}

/// Device timing in controller clock cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DramTiming {
    pub tRCD: u64,
    pub tRP: u64,
    pub tCL: u64,
    /// Bus cycles per burst of eight (double data rate).
    pub tBURST: u64,
    pub tCCD_S: u64,
    pub tCCD_L: u64,
    pub controller_clock_mhz: f64,
}

impl DramTiming {
    pub fn ddr4_2400() -> Self {
        Self {
            tRCD: 17,
            tRP: 17,
            tCL: 17,
            tBURST: 4,
            tCCD_S: 4,
            tCCD_L: 6,
            controller_clock_mhz: 1200.0,
        }
    }

    pub fn ddr4_2133() -> Self {
        Self {
            tRCD: 15,
            tRP: 15,
            tCL: 15,
            controller_clock_mhz: 1066.5,
            ..Self::ddr4_2400()
        }
    }

    pub fn bytes_per_cycle(&self) -> f64 {
        BURST_BYTES as f64 / self.tBURST as f64
    }

    pub fn peak_gbps(&self) -> f64 {
        self.bytes_per_cycle() * self.controller_clock_mhz / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        let cycles = [self.tRCD, self.tRP, self.tCL, self.tBURST, self.tCCD_S, self.tCCD_L];
        if cycles.contains(&0) || !(self.controller_clock_mhz > 0.0) {
            return Err(Error::Config("DRAM timing parameters must be positive".into()));
        }
        if self.tBURST != 4 {
            return Err(Error::Config("tBURST must be 4 cycles for BL8 on a DDR bus".into()));
        }
        Ok(())
    }
}

impl Default for DramTiming {
    fn default() -> Self {
        Self::ddr4_2400()
    }
}

/// Behaviour of the memory controller in front of the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Rows that may be open at once across all banks.
    pub bank_machines: usize,
    /// Bursts of look-ahead: an activate may issue once the burst this many
    /// places earlier has issued.
    pub lookahead_bursts: usize,
    /// Extra bus cycles when consecutive bursts target different banks.
    pub bank_switch_cycles: u64,
    /// Bus cycles of address and command setup per transfer.
    pub txn_overhead_cycles: u64,
    pub refresh: bool,
    /// Fraction of time lost to refresh when enabled.
    pub refresh_tax: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            bank_machines: 2,
            lookahead_bursts: 16,
            bank_switch_cycles: 1,
            txn_overhead_cycles: 12,
            refresh: true,
            refresh_tax: 0.03,
        }
    }
}

/// One memory channel: device geometry, timing and controller.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DramChannel {
    #[serde(default)]
    pub geometry: DramGeometry,
    #[serde(default)]
    pub timing: DramTiming,
    #[serde(default)]
    pub controller: ControllerConfig,
}

impl DramChannel {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.timing.validate()?;
        if self.controller.bank_machines == 0 {
            return Err(Error::Config("controller needs at least one bank machine".into()));
        }
        if !(0.0..1.0).contains(&self.controller.refresh_tax) {
            return Err(Error::Config("refresh tax must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
