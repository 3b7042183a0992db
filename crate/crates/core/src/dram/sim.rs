//! Burst-level event simulation of one channel.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{DramChannel, BURST_BYTES};
use crate::error::{Error, Result};

/// One AXI read issued by a port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxiTransaction {
    pub port: usize,
    pub base: u64,
    pub btt: u64,
    /// The port may not start this transaction earlier.
    pub issue_cycle: u64,
    /// Transactions sharing a transfer id are set up together, paying the
    /// controller's setup overhead once.
    pub transfer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrationPolicy {
    /// Rotate over ports with pending bursts, one burst each.
    #[default]
    RoundRobin,
    /// Round robin in an explicit port order.
    RoundRobinOrder(Vec<usize>),
    /// Always serve the lowest-numbered port with a pending burst.
    FixedPriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub bytes_moved: u64,
    pub cycles: u64,
    pub achieved_bandwidth_gbps: f64,
    pub utilization: f64,
    /// Row activations.
    pub row_switches: u64,
    /// Activations that first had to close another open row.
    pub bank_conflicts: u64,
}

struct Burst {
    bank: usize,
    bank_group: u64,
    row: u64,
    transfer: usize,
    issue_cycle: u64,
}

#[derive(Clone, Default)]
struct BankState {
    open_row: Option<u64>,
    ready: u64,
    last_cas: u64,
    last_use: usize,
}

fn port_queues(ch: &DramChannel, txns: &[AxiTransaction]) -> Result<Vec<VecDeque<Burst>>> {
    let geo = &ch.geometry;
    let ports = txns.iter().map(|t| t.port + 1).max().unwrap_or(0);
    let mut queues: Vec<VecDeque<Burst>> = (0..ports).map(|_| VecDeque::new()).collect();
    for t in txns {
        if t.btt == 0 {
            return Err(Error::Config("transaction with zero bytes to transfer".into()));
        }
        let end = t.base + t.btt;
        if end > geo.capacity() {
            return Err(Error::AddressOutOfRange {
                addr: end - 1,
                capacity: geo.capacity(),
            });
        }
        let mut addr = t.base / BURST_BYTES * BURST_BYTES;
        while addr < end {
            let loc = geo.decode(addr)?;
            queues[t.port].push_back(Burst {
                bank: loc.bank_id(geo) as usize,
                bank_group: loc.bank_group,
                row: loc.row,
                transfer: t.transfer,
                issue_cycle: t.issue_cycle,
            });
            addr += BURST_BYTES;
        }
    }
    Ok(queues)
}

/// Picks the next port to serve; `cursor` is the position after the last
/// port served in the rotation.
fn arbitrate(
    policy: &ArbitrationPolicy,
    queues: &[VecDeque<Burst>],
    cursor: &mut usize,
    now: u64,
) -> Option<usize> {
    let ready = |p: usize| queues.get(p).and_then(|q| q.front()).is_some_and(|b| b.issue_cycle <= now);
    match policy {
        ArbitrationPolicy::FixedPriority => (0..queues.len()).find(|&p| ready(p)),
        ArbitrationPolicy::RoundRobin => {
            let n = queues.len();
            let p = (0..n).map(|k| (*cursor + k) % n).find(|&p| ready(p))?;
            *cursor = (p + 1) % n;
            Some(p)
        }
        ArbitrationPolicy::RoundRobinOrder(order) => {
            let n = order.len();
            let k = (0..n).find(|&k| ready(order[(*cursor + k) % n]))?;
            let p = order[(*cursor + k) % n];
            *cursor = (*cursor + k + 1) % n;
            Some(p)
        }
    }
}

/// Runs the transactions to completion and reports the achieved bandwidth.
pub fn simulate_transfer(
    ch: &DramChannel,
    txns: &[AxiTransaction],
    policy: &ArbitrationPolicy,
) -> Result<TransferReport> {
    ch.validate()?;
    if let ArbitrationPolicy::RoundRobinOrder(order) = policy {
        let ports = txns.iter().map(|t| t.port + 1).max().unwrap_or(0);
        if (0..ports).any(|p| !order.contains(&p)) {
            return Err(Error::Config("arbitration order omits a port".into()));
        }
    }
    let t = &ch.timing;
    let c = &ch.controller;
    let mut queues = port_queues(ch, txns)?;
    let mut banks = vec![BankState::default(); ch.geometry.banks() as usize];
    let mut open_rows = 0usize;
    let mut cas_times: Vec<u64> = Vec::new();
    let mut started = HashSet::new();
    let mut prev: Option<(usize, u64)> = None;
    let mut cursor = 0usize;
    let (mut row_switches, mut bank_conflicts) = (0u64, 0u64);

    loop {
        // Earliest cycle at which the bus could carry another burst.
        let now = match prev {
            None => 0,
            Some(_) => cas_times.last().copied().unwrap_or(0) + t.tBURST,
        };
        let port = match arbitrate(policy, &queues, &mut cursor, now) {
            Some(p) => p,
            None => {
                let next = queues.iter().filter_map(|q| q.front()).map(|b| b.issue_cycle).min();
                match next {
                    // Nothing is ready yet: let time pass.
                    Some(at) => match arbitrate(policy, &queues, &mut cursor, at) {
                        Some(p) => p,
                        None => unreachable!("a burst becomes ready at its issue cycle"),
                    },
                    None => break,
                }
            }
        };
        let burst = queues[port].pop_front().expect("arbitrated port has a burst");
        let seq = cas_times.len();

        let mut bus = match prev {
            None => 0,
            Some((bank, bg)) => {
                let last = *cas_times.last().unwrap();
                let gap = if bank == burst.bank {
                    t.tBURST
                } else if bg == burst.bank_group {
                    t.tCCD_L.max(t.tBURST) + c.bank_switch_cycles
                } else {
                    t.tCCD_S.max(t.tBURST) + c.bank_switch_cycles
                };
                last + gap
            }
        };
        bus = bus.max(burst.issue_cycle);
        if started.insert(burst.transfer) {
            bus += c.txn_overhead_cycles;
        }

        if banks[burst.bank].open_row != Some(burst.row) {
            row_switches += 1;
            let mut act = if seq >= c.lookahead_bursts {
                cas_times[seq - c.lookahead_bursts]
            } else {
                0
            }
            .max(burst.issue_cycle);
            if banks[burst.bank].open_row.is_some() {
                bank_conflicts += 1;
                act = act.max(banks[burst.bank].last_cas + t.tBURST + t.tRP);
                open_rows -= 1;
            } else if open_rows >= c.bank_machines {
                // Free the least recently used bank machine.
                let victim = (0..banks.len())
                    .filter(|&b| banks[b].open_row.is_some())
                    .min_by_key(|&b| banks[b].last_use)
                    .expect("some row is open");
                bank_conflicts += 1;
                act = act.max(banks[victim].last_cas + t.tBURST + t.tRP);
                banks[victim].open_row = None;
                open_rows -= 1;
            }
            let bank = &mut banks[burst.bank];
            bank.open_row = Some(burst.row);
            bank.ready = act + t.tRCD;
            open_rows += 1;
        }

        let bank = &mut banks[burst.bank];
        let cas = bus.max(bank.ready);
        bank.last_cas = cas;
        bank.last_use = seq;
        cas_times.push(cas);
        prev = Some((burst.bank, burst.bank_group));
    }

    let bytes_moved: u64 = txns.iter().map(|t| t.btt).sum();
    let cycles = cas_times.last().map_or(0, |&last| last + t.tBURST + t.tCL);
    let derate = if c.refresh { 1.0 - c.refresh_tax } else { 1.0 };
    let utilization = if cycles == 0 {
        0.0
    } else {
        (bytes_moved as f64 / (cycles as f64 * t.bytes_per_cycle()) * derate).min(1.0)
    };
    Ok(TransferReport {
        bytes_moved,
        cycles,
        achieved_bandwidth_gbps: utilization * t.peak_gbps(),
        utilization,
        row_switches,
        bank_conflicts,
    })
}
