//! Oracle checks behind the `verify` command.

use std::path::Path;

use anyhow::anyhow;
use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use hbsim::dataflow::{online_softmax, rope, schedule_gqa_naive, schedule_gqa_optimized, AttentionConfig, TailCycleParams};
use hbsim::quant::format::verify_weight_dir;
use hbsim::quant::{CodeMatrix, Int24};
use hbsim::system::run_tiny_model_e2e;
use hbsim::vpu::{run_axpy_gemv, run_dot_gemv, EngineConfig, Reduction};
use hbsim::Presets;

use crate::output::Artifacts;
use crate::Failure;

const FP16_EPS: f64 = 0.0009765625;
const GEMV_INSTANCES: usize = 25;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    seed: u64,
    passed: bool,
    checks: &'a [CheckResult],
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(anyhow!("size `{s}` is not ROWSxCOLS"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

/// Signed 48-bit wraparound of an exact sum.
fn wrap48(v: i128) -> i64 {
    let m = 1i128 << 48;
    let r = v.rem_euclid(m);
    (if r >= m / 2 { r - m } else { r }) as i64
}

fn engines() -> [EngineConfig; 2] {
    [
        EngineConfig::default(),
        EngineConfig {
            chain_len: 3,
            num_chains: 5,
            reduction: Reduction::SixInputChain,
            ..EngineConfig::default()
        },
    ]
}

fn gemv_check(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<String, String> {
    let int24 = |rng: &mut ChaCha8Rng, n| -> Vec<Int24> {
        (0..n).map(|_| Int24::new(rng.gen_range(Int24::MIN..=Int24::MAX)).unwrap()).collect()
    };
    for i in 0..GEMV_INSTANCES {
        for cfg in engines() {
            let codes: Vec<i8> = (0..rows * cols).map(|_| rng.gen_range(-8..=7)).collect();
            let w = CodeMatrix::new(rows, cols, &codes).map_err(|e| e.to_string())?;
            let x = int24(rng, cols);
            let dot = run_dot_gemv(&cfg, w, &x).map_err(|e| e.to_string())?;
            for r in 0..rows {
                let want = wrap48((0..cols).map(|c| codes[r * cols + c] as i128 * x[c].get() as i128).sum());
                if dot.result[r].get() != want {
                    return Err(format!("DOT instance {i}, row {r}: {} != {want}", dot.result[r].get()));
                }
            }
            let s = int24(rng, rows);
            let axpy = run_axpy_gemv(&cfg, w, &s).map_err(|e| e.to_string())?;
            for c in 0..cols {
                let want = wrap48((0..rows).map(|r| s[r].get() as i128 * codes[r * cols + c] as i128).sum());
                if axpy.result[c].get() != want {
                    return Err(format!("AXPY instance {i}, element {c}: {} != {want}", axpy.result[c].get()));
                }
            }
        }
    }
    Ok(format!("{GEMV_INSTANCES} instances x 2 engines x DOT/AXPY bit-exact"))
}

fn random_f16(rng: &mut ChaCha8Rng, n: usize, range: f32) -> Vec<f16> {
    (0..n).map(|_| f16::from_f32(rng.gen_range(-range..range))).collect()
}

fn softmax_check(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0f64;
    for _ in 0..4 {
        let s = random_f16(rng, 4096, 12.0);
        let xs: Vec<f32> = s.iter().map(|v| v.to_f32()).collect();
        let m = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = xs.iter().map(|x| (x - m).exp()).sum();
        let got = online_softmax(&s).map_err(|e| e.to_string())?;
        for (g, x) in got.iter().zip(&xs) {
            worst = worst.max((g.to_f64() - ((x - m).exp() / z) as f64).abs() / FP16_EPS);
        }
    }
    if worst <= 2.0 {
        Ok(format!("max error {worst:.3} eps"))
    } else {
        Err(format!("max error {worst:.3} eps > 2"))
    }
}

fn rope_check(rng: &mut ChaCha8Rng) -> Result<String, String> {
    for _ in 0..100 {
        let x = random_f16(rng, 128, 4.0);
        let (a, b) = (rng.gen_range(0..4096), rng.gen_range(0..4096));
        let norm = |v: &[f16]| v.iter().map(|e| e.to_f64().powi(2)).sum::<f64>().sqrt();
        let max = x.iter().fold(0f64, |m, e| m.max(e.to_f64().abs()));
        let y = rope(&x, a, 500_000.0).map_err(|e| e.to_string())?;
        if (norm(&y) - norm(&x)).abs() > 2.0 * FP16_EPS * norm(&x).max(max) {
            return Err(format!("norm changed at position {a}"));
        }
        let twice = rope(&y, b, 500_000.0).map_err(|e| e.to_string())?;
        let once = rope(&x, a + b, 500_000.0).map_err(|e| e.to_string())?;
        if twice.iter().zip(&once).any(|(p, q)| (p.to_f64() - q.to_f64()).abs() > 4.0 * FP16_EPS * max) {
            return Err(format!("positions {a} + {b} not additive"));
        }
    }
    Ok("100 rotations norm-preserving and additive".into())
}

fn schedule_check() -> Result<String, String> {
    let engine = EngineConfig::default();
    let tails = TailCycleParams::default();
    for g in [2, 4, 8] {
        let cfg = AttentionConfig {
            num_kv_heads: 32 / g,
            ..AttentionConfig::llama3_8b()
        };
        let opt = schedule_gqa_optimized(&cfg, &engine, 1023, tails).map_err(|e| e.to_string())?;
        let naive = schedule_gqa_naive(&cfg, &engine, 1023, tails).map_err(|e| e.to_string())?;
        opt.validate().map_err(|e| format!("optimized, group {g}: {e}"))?;
        naive.validate().map_err(|e| format!("naive, group {g}: {e}"))?;
        if opt.vpu_idle_after_fill() != 0 {
            return Err(format!("optimized, group {g}: {} idle cycles", opt.vpu_idle_after_fill()));
        }
    }
    Ok("groups 2/4/8 valid, optimized without idle".into())
}

fn tiny_check(p: &Presets, seed: u64) -> Result<String, String> {
    let spec = p.model("tiny").map_err(|e| e.to_string())?;
    let a = run_tiny_model_e2e(&spec, seed, 8).map_err(|e| e.to_string())?;
    let b = run_tiny_model_e2e(&spec, seed, 8).map_err(|e| e.to_string())?;
    let sigmas = a.steps.iter().map(|s| s.max_sigmas).fold(0f64, f64::max);
    if !a.within_bound {
        return Err(format!("deviation reaches {sigmas:.2} sigma"));
    }
    if a.digest != b.digest {
        return Err("reruns differ".into());
    }
    Ok(format!("8 steps within bound (worst {sigmas:.2} sigma), digest {}", a.digest))
}

fn record(checks: &mut Vec<CheckResult>, name: impl Into<String>, r: Result<String, String>) {
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    checks.push(CheckResult {
        name: name.into(),
        passed,
        detail,
    });
}

pub fn run(
    p: &Presets,
    seed: u64,
    sizes: &[String],
    weights: Option<&Path>,
    out: &mut Artifacts,
) -> Result<Result<(), Failure>, Failure> {
    let shapes = sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (r, c) in shapes {
        record(&mut checks, format!("gemv {r}x{c}"), gemv_check(&mut rng, r, c));
    }
    record(&mut checks, "online softmax", softmax_check(&mut rng));
    record(&mut checks, "rope", rope_check(&mut rng));
    record(&mut checks, "schedule validity", schedule_check());
    record(&mut checks, "tiny model", tiny_check(p, seed));
    if let Some(dir) = weights {
        let r = verify_weight_dir(dir).map(|n| format!("{n} tensors match their manifest hashes")).map_err(|e| e.to_string());
        record(&mut checks, "weight manifest", r);
    }
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let passed = checks.iter().all(|c| c.passed);
    out.emit("verify", &VerifyReport { seed, passed, checks: &checks }, &checks)?;
    Ok(if passed {
        Ok(())
    } else {
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::Check(failed.join(", ")))
    })
}
