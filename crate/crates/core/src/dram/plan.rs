//! Transaction planning and bytes-to-transfer sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sim::{simulate_transfer, ArbitrationPolicy, AxiTransaction};
use super::{DramChannel, DramGeometry, BURST_BYTES};
use crate::error::{Error, Result};

pub const SWEEP_CSV_HEADER: &str = "btt_bytes,utilization,row_switches,bank_conflicts";

fn align_up(x: u64, to: u64) -> u64 {
    x.div_ceil(to) * to
}

/// Splits `[start, end)` into up to `ports` contiguous segments whose inner
/// boundaries fall on burst boundaries.
fn split_ports(start: u64, end: u64, ports: usize, transfer: usize, out: &mut Vec<AxiTransaction>) {
    let share = (end - start).div_ceil(ports as u64);
    let mut lo = start;
    for port in 0..ports {
        let hi = if port + 1 == ports {
            end
        } else {
            align_up(start + share * (port as u64 + 1), BURST_BYTES).min(end)
        };
        if hi > lo {
            out.push(AxiTransaction {
                port,
                base: lo,
                btt: hi - lo,
                issue_cycle: 0,
                transfer,
            });
        }
        lo = hi;
    }
}

/// Cuts `total` bytes into transfers of `btt` bytes, each shared by all
/// ports.
pub fn plan_split(base: u64, total: u64, ports: usize, btt: u64) -> Result<Vec<AxiTransaction>> {
    if total == 0 || ports == 0 || btt == 0 {
        return Err(Error::Config("plan needs bytes, ports and a transfer size".into()));
    }
    let mut out = Vec::new();
    let end = base + total;
    let mut start = base;
    let mut transfer = 0;
    while start < end {
        let stop = (start + btt).min(end);
        split_ports(start, stop, ports, transfer, &mut out);
        start = stop;
        transfer += 1;
    }
    Ok(out)
}

/// Transactions that never cross a row: a short head up to the first row
/// boundary, whole rows, then a short tail. All ports of a transfer work in
/// the same open row, each on its own column segment.
///
/// A head or tail too short to give every port a burst is set up together
/// with the neighbouring whole row, which lies in another bank: the head
/// one burst per port, the tail on the last port.
pub fn plan_column_aligned(base: u64, total: u64, ports: usize, geo: &DramGeometry) -> Result<Vec<AxiTransaction>> {
    if total == 0 || ports == 0 {
        return Err(Error::Config("plan needs bytes and ports".into()));
    }
    let end = base + total;
    let short = |lo: u64, hi: u64| hi.div_ceil(BURST_BYTES) - lo / BURST_BYTES < ports as u64;
    let first_row_end = (base / geo.row_bytes + 1) * geo.row_bytes;
    let last_row_start = ((end - 1) / geo.row_bytes) * geo.row_bytes;
    let lone_head = base % geo.row_bytes != 0 && first_row_end < end && short(base, first_row_end);
    let lone_tail = end % geo.row_bytes != 0 && last_row_start > base && short(last_row_start, end);
    let lone_tail = lone_tail && !(lone_head && last_row_start == first_row_end);

    let mut out = Vec::new();
    let mut start = if lone_head { first_row_end } else { base };
    let stop_at = if lone_tail { last_row_start } else { end };
    let mut transfer = 0;
    while start < stop_at {
        let stop = ((start / geo.row_bytes + 1) * geo.row_bytes).min(stop_at);
        split_ports(start, stop, ports, transfer, &mut out);
        start = stop;
        transfer += 1;
    }
    if lone_head {
        // One burst per port, so the head drains from its row in one run.
        let mut lo = base;
        let mut head = Vec::new();
        for port in 0.. {
            if lo >= first_row_end {
                break;
            }
            let hi = ((lo / BURST_BYTES + 1) * BURST_BYTES).min(first_row_end);
            head.push(AxiTransaction { port, base: lo, btt: hi - lo, issue_cycle: 0, transfer: 0 });
            lo = hi;
        }
        out.splice(0..0, head);
    }
    if lone_tail {
        let port = ports - 1;
        let transfer = transfer.saturating_sub(1);
        out.push(AxiTransaction { port, base: last_row_start, btt: end - last_row_start, issue_cycle: 0, transfer });
    }
    Ok(out)
}

/// The unoptimized layout: consecutive `btt` chunks dealt to ports in turn,
/// each its own transfer.
pub fn plan_per_port_chunks(base: u64, total: u64, ports: usize, btt: u64) -> Result<Vec<AxiTransaction>> {
    if total == 0 || ports == 0 || btt == 0 {
        return Err(Error::Config("plan needs bytes, ports and a transfer size".into()));
    }
    let end = base + total;
    Ok((0..)
        .map(|k| base + k * btt)
        .take_while(|&s| s < end)
        .enumerate()
        .map(|(k, s)| AxiTransaction {
            port: k % ports,
            base: s,
            btt: btt.min(end - s),
            issue_cycle: 0,
            transfer: k,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub btt_bytes: u64,
    pub utilization: f64,
    pub row_switches: u64,
    pub bank_conflicts: u64,
}

/// Utilization of a `matrix_bytes` read shared by `ports` ports, for each
/// transfer size. Points are computed in parallel and returned in input
/// order.
pub fn sweep_btt(ch: &DramChannel, matrix_bytes: u64, ports: usize, btts: &[u64]) -> Result<Vec<SweepPoint>> {
    if let Some(bad) = btts.iter().find(|b| !b.is_power_of_two()) {
        return Err(Error::Config(format!("BTT {bad} is not a power of two")));
    }
    btts.par_iter()
        .map(|&btt| {
            let plan = plan_split(0, matrix_bytes, ports, btt)?;
            let r = simulate_transfer(ch, &plan, &ArbitrationPolicy::RoundRobin)?;
            Ok(SweepPoint {
                btt_bytes: btt,
                utilization: r.utilization,
                row_switches: r.row_switches,
                bank_conflicts: r.bank_conflicts,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!(
            "{},{:.6},{},{}\n",
            p.btt_bytes, p.utilization, p.row_switches, p.bank_conflicts
        ));
    }
    s
}
