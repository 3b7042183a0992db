//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use half::f16;
use hbsim::dataflow::*;
use hbsim::dram::*;
use hbsim::quant::{CodeMatrix, Int24};
use hbsim::system::*;
use hbsim::vpu::{engine_preset, estimate_resources, run_axpy_gemv, run_dot_gemv, EngineConfig, Reduction};
use hbsim::Presets;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const FP16_EPS: f64 = 0.0009765625;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want
}

fn wrap48(v: BigInt) -> i64 {
    let m = BigInt::from(1i64 << 48);
    let mut r = ((v % &m) + &m) % &m;
    if r >= BigInt::from(1i64 << 47) {
        r -= m;
    }
    i64::try_from(r).unwrap()
}

fn random_engine(rng: &mut ChaCha8Rng) -> EngineConfig {
    if rng.gen_bool(0.3) {
        return EngineConfig::default();
    }
    let chains = rng.gen_range(1..7);
    EngineConfig {
        chain_len: rng.gen_range(1..6),
        num_chains: chains,
        reduction: if chains == 1 { Reduction::None } else { Reduction::SixInputChain },
        ..EngineConfig::default()
    }
}

fn int24s(rng: &mut ChaCha8Rng, n: usize) -> Vec<Int24> {
    (0..n).map(|_| Int24::new(rng.gen_range(Int24::MIN..=Int24::MAX)).unwrap()).collect()
}

fn gemv_bit_exact() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let shapes = (0..1000).map(|i| match i {
        0 => (1, 1),
        1 => (0, 5),
        2 => (5, 0),
        3 => (1, 300),
        4 => (300, 1),
        _ => (rng.gen_range(1..24), rng.gen_range(1..260)),
    });
    let shapes: Vec<_> = shapes.collect();
    for (i, (r, c)) in shapes.into_iter().enumerate() {
        let cfg = random_engine(&mut rng);
        let codes: Vec<i8> = (0..r * c).map(|_| rng.gen_range(-8..=7)).collect();
        let x = int24s(&mut rng, c);
        let dot = run_dot_gemv(&cfg, CodeMatrix::new(r, c, &codes).unwrap(), &x).map_err(|e| e.to_string())?;
        for row in 0..r {
            let want = wrap48((0..c).map(|k| BigInt::from(codes[row * c + k]) * BigInt::from(x[k].get())).sum());
            ensure(dot.result[row].get() == want, || format!("DOT instance {i} row {row}"))?;
        }
        // The same codes as a cache of r vectors of length c.
        let s = int24s(&mut rng, r);
        let axpy = run_axpy_gemv(&cfg, CodeMatrix::new(r, c, &codes).unwrap(), &s).map_err(|e| e.to_string())?;
        for e in 0..c {
            let want = wrap48((0..r).map(|t| BigInt::from(s[t].get()) * BigInt::from(codes[t * c + e])).sum());
            ensure(axpy.result[e].get() == want, || format!("AXPY instance {i} element {e}"))?;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("1000 instances per mode in {:.1} s", took.as_secs_f64()))
}

fn mode_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    for i in 0..200 {
        let cfg = random_engine(&mut rng);
        let n = rng.gen_range(1..80);
        let dim = [64, 128, rng.gen_range(1..160)][i % 3];
        let codes: Vec<i8> = (0..n * dim).map(|_| rng.gen()).collect();
        let s = int24s(&mut rng, n);
        let transposed: Vec<i8> = (0..dim).flat_map(|e| (0..n).map(move |t| (t, e))).map(|(t, e)| codes[t * dim + e]).collect();
        let axpy = run_axpy_gemv(&cfg, CodeMatrix::new(n, dim, &codes).unwrap(), &s).map_err(|e| e.to_string())?;
        let dot = run_dot_gemv(&cfg, CodeMatrix::new(dim, n, &transposed).unwrap(), &s).map_err(|e| e.to_string())?;
        ensure(axpy.result == dot.result, || format!("instance {i}: {n} x {dim}"))?;
    }
    Ok("200 attention-shaped instances".into())
}

fn table_i_dsps() -> Outcome {
    let dsp = |n| estimate_resources(&engine_preset(n).unwrap()).unwrap().dsp_count;
    let got = [dsp("int24_mac_tree"), dsp("hybrid"), dsp("hybrid_plus")];
    ensure(got == [256, 160, 148], || format!("{got:?}"))?;
    Ok(format!("{got:?}"))
}

fn btt_sweep_shape() -> Outcome {
    let ch = DramChannel::default();
    let btts: Vec<u64> = (10..=18).map(|k| 1 << k).collect();
    let pts = sweep_btt(&ch, 256 << 10, 4, &btts).map_err(|e| e.to_string())?;
    let best = pts.iter().max_by(|a, b| a.utilization.total_cmp(&b.utilization)).unwrap();
    ensure([1 << 13, 1 << 14].contains(&best.btt_bytes), || format!("peak at {}", best.btt_bytes))?;
    ensure(best.utilization >= 0.93, || format!("peak {}", best.utilization))?;
    let (lo, hi) = (pts[0].utilization, pts[8].utilization);
    ensure(lo <= best.utilization - 0.05 && hi <= best.utilization - 0.05, || format!("ends {lo} {hi}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
    let rr = ArbitrationPolicy::RoundRobin;
    for i in 0..100 {
        let base = rng.gen_range(0..1u64 << 22) & !(BURST_BYTES - 1);
        let total = rng.gen_range(4 * ch.geometry.row_bytes..24 * ch.geometry.row_bytes);
        let btt = ch.geometry.row_bytes;
        let sim = |plan: Vec<AxiTransaction>| simulate_transfer(&ch, &plan, &rr).unwrap().utilization;
        let aligned = sim(plan_column_aligned(base, total, 4, &ch.geometry).unwrap());
        let split = sim(plan_split(base, total, 4, btt).unwrap());
        ensure(aligned >= split, || format!("transfer {i}: aligned {aligned} < {split}"))?;
    }
    Ok(format!("peak {:.3} at BTT {}, ends {lo:.3}/{hi:.3}; aligned dominates on 100 transfers", best.utilization, best.btt_bytes))
}

fn table_ii() -> Outcome {
    let p = Presets::builtin().unwrap();
    let mut out = vec![];
    for (model, util, want) in [("llama3-8b", 0.95, 202.0), ("llama3-8b", 0.843, 228.0), ("llama2-7b", 0.95, 178.0), ("llama2-7b", 0.843, 201.0)] {
        let bytes = model_breakdown(&p.model(model).unwrap()).weight_bytes;
        let ms = transfer_latency(bytes, 19.2, util).map_err(|e| e.to_string())?.ms;
        ensure(rel(ms, want) <= 0.02, || format!("{model} at {util}: {ms:.1} ms vs {want}"))?;
        out.push(format!("{ms:.1}"));
    }
    Ok(format!("{} ms", out.join(" / ")))
}

fn table_iii() -> Outcome {
    let p = Presets::builtin().unwrap();
    let s = p.model("llama3-8b").unwrap();
    let table = model_breakdown(&s).embedding_bytes;
    let mut out = vec![];
    for (store, want) in [("sd_no_fast_seek", 152.0), ("sd_fast_seek", 2.8), ("sd_fast_seek_bypass", 1.5)] {
        let ms = embedding_fetch_latency(&p.store(store).unwrap(), 2 * s.hidden_dim as u64, table).map_err(|e| e.to_string())?;
        ensure(rel(ms, want) <= 0.05, || format!("{store}: {ms:.2} ms vs {want}"))?;
        out.push(format!("{ms:.2}"));
    }
    Ok(format!("{} ms", out.join(" / ")))
}

fn table_v() -> Outcome {
    let p = Presets::builtin().unwrap();
    let s = p.model("llama3-8b").unwrap();
    let mut out = vec![];
    for (platform, tok, eff) in [("kv260", 4.8, 0.94), ("zcu104", 8.6, 0.93), ("u250", 19.4, 0.91)] {
        let r = decode_throughput(&s, &p.platform(platform).unwrap(), 32).map_err(|e| e.to_string())?;
        ensure(rel(r.tokens_per_s, tok) <= 0.05, || format!("{platform}: {:.2} tok/s vs {tok}", r.tokens_per_s))?;
        ensure((r.bw_efficiency - eff).abs() <= 0.02, || format!("{platform}: efficiency {:.3} vs {eff}", r.bw_efficiency))?;
        out.push(format!("{platform} {:.2} tok/s ({:.1}%)", r.tokens_per_s, 100.0 * r.bw_efficiency));
    }
    Ok(out.join(", "))
}

fn random_f16(rng: &mut ChaCha8Rng, n: usize, range: f32) -> Vec<f16> {
    (0..n).map(|_| f16::from_f32(rng.gen_range(-range..range))).collect()
}

fn gqa_schedule() -> Outcome {
    let engine = EngineConfig::default();
    let tails = TailCycleParams::default();
    for g in [2, 4, 8] {
        let cfg = AttentionConfig {
            num_kv_heads: 32 / g,
            ..AttentionConfig::llama3_8b()
        };
        for ctx in [128, 1024, 4096] {
            let opt = schedule_gqa_optimized(&cfg, &engine, ctx - 1, tails).map_err(|e| e.to_string())?;
            ensure(opt.vpu_idle_after_fill() == 0, || format!("group {g}, context {ctx}: optimized idles"))?;
            let naive = schedule_gqa_naive(&cfg, &engine, ctx - 1, tails).map_err(|e| e.to_string())?;
            let gaps = naive.vpu_gaps();
            let before = |op| gaps.iter().find(|(o, _)| *o == op).map_or(0, |(_, c)| *c);
            for grp in 0..cfg.num_kv_heads {
                ensure(before(StageOp::QK(grp * g)) >= 78, || format!("group {g}, context {ctx}: group start {grp}"))?;
            }
            for h in 0..cfg.num_q_heads {
                ensure(before(StageOp::SV(h)) >= 47, || format!("group {g}, context {ctx}: sV {h}"))?;
            }
        }
    }

    // Functional outputs of both orders on a small attention block.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC8);
    for g in [2, 4, 8] {
        let cfg = AttentionConfig {
            num_q_heads: 2 * g,
            num_kv_heads: 2,
            head_dim: 16,
            hidden_dim: 32 * g,
            max_context: 32,
            rope_theta: 10_000.0,
            uram_limit: None,
        };
        let (mut a, mut b) = (KvCache::new(2, 32), KvCache::new(2, 32));
        for _ in 0..32 {
            let x = AttentionInputs {
                q: (0..2 * g).map(|_| random_f16(&mut rng, 16, 2.0)).collect(),
                k: (0..2).map(|_| random_f16(&mut rng, 16, 2.0)).collect(),
                v: (0..2).map(|_| random_f16(&mut rng, 16, 2.0)).collect(),
            };
            let o = attention_decode_step(&x, &mut a, &cfg, &engine, tails, ScheduleKind::Optimized).map_err(|e| e.to_string())?;
            let n = attention_decode_step(&x, &mut b, &cfg, &engine, tails, ScheduleKind::Naive).map_err(|e| e.to_string())?;
            ensure(o.heads == n.heads, || format!("group {g}: outputs differ"))?;
        }
    }
    Ok("no idle after fill; naive gaps >= 78 / 47; outputs identical".into())
}

fn uram_budgets() -> Outcome {
    let b = uram_budget(&AttentionConfig::llama3_8b());
    let got = (b.urams_kv, b.urams_kv_naive, b.urams_softmax);
    ensure(got == (16, 32, 2), || format!("{got:?}"))?;
    Ok(format!("kv {} / naive {} / softmax +{}", got.0, got.1, got.2))
}

fn numerical_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCA);
    let mut worst = [0f64; 4];
    for _ in 0..10 {
        let s = random_f16(&mut rng, 4096, 12.0);
        let xs: Vec<f32> = s.iter().map(|v| v.to_f32()).collect();
        let m = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = xs.iter().map(|x| (x - m).exp()).sum();
        for (g, x) in online_softmax(&s).map_err(|e| e.to_string())?.iter().zip(&xs) {
            worst[0] = worst[0].max((g.to_f64() - ((x - m).exp() / z) as f64).abs() / FP16_EPS);
        }
    }
    ensure(worst[0] <= 2.0, || format!("softmax error {:.2} eps", worst[0]))?;

    for _ in 0..200 {
        let x = random_f16(&mut rng, 128, 4.0);
        let (a, b) = (rng.gen_range(0..4096), rng.gen_range(0..4096));
        let norm = |v: &[f16]| v.iter().map(|e| e.to_f64().powi(2)).sum::<f64>().sqrt();
        let max = x.iter().fold(0f64, |m, e| m.max(e.to_f64().abs()));
        let y = rope(&x, a, 500_000.0).map_err(|e| e.to_string())?;
        ensure((norm(&y) - norm(&x)).abs() <= 2.0 * FP16_EPS * norm(&x).max(max), || "rope changed the norm".into())?;
        let twice = rope(&y, b, 500_000.0).unwrap();
        let once = rope(&x, a + b, 500_000.0).unwrap();
        for (p, q) in twice.iter().zip(&once) {
            ensure((p.to_f64() - q.to_f64()).abs() <= 4.0 * FP16_EPS * max, || format!("rope not additive: {p} vs {q}"))?;
        }
    }

    for kind in [NormKind::Rms, NormKind::Layer] {
        for _ in 0..20 {
            let x = random_f16(&mut rng, 4096, 3.0);
            let w = random_f16(&mut rng, 4096, 2.0);
            let xs: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
            let n = xs.len() as f64;
            let mean = if kind == NormKind::Layer { xs.iter().sum::<f64>() / n } else { 0.0 };
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            for ((g, v), wt) in normalize(&x, &w, kind).map_err(|e| e.to_string())?.iter().zip(&xs).zip(&w) {
                let want = (v - mean) / (var + NORM_EPS as f64).sqrt() * wt.to_f64();
                worst[2] = worst[2].max((g.to_f64() - want).abs() / (FP16_EPS * want.abs().max(1.0)));
            }
        }
    }
    ensure(worst[2] <= 4.0, || format!("normalize error {:.2} eps", worst[2]))?;
    for x in random_f16(&mut rng, 10_000, 10.0) {
        let v = x.to_f64();
        let want = v / (1.0 + (-v).exp());
        worst[3] = worst[3].max((silu(x).to_f64() - want).abs() / (FP16_EPS * want.abs().max(1.0)));
    }
    ensure(worst[3] <= 4.0, || format!("silu error {:.2} eps", worst[3]))?;
    Ok(format!("softmax {:.3} eps, normalize {:.2} eps, silu {:.2} eps; rope ok", worst[0], worst[2], worst[3]))
}

fn tiny_e2e() -> Outcome {
    let spec = Presets::builtin().unwrap().model("tiny").unwrap();
    let start = Instant::now();
    let a = run_tiny_model_e2e(&spec, 7, 8).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let b = run_tiny_model_e2e(&spec, 7, 8).map_err(|e| e.to_string())?;
    let sigmas = a.steps.iter().map(|s| s.max_sigmas).fold(0f64, f64::max);
    ensure(a.within_bound, || format!("deviation reaches {sigmas:.2} sigma"))?;
    ensure(a.digest == b.digest, || "reruns differ".into())?;
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("worst {sigmas:.2} of {TOLERANCE_SIGMAS} sigma, digest {}, {:.2} s", &a.digest[..12], took.as_secs_f64()))
}

fn capacity() -> Outcome {
    let p = Presets::builtin().unwrap();
    let kv = p.platform("kv260").unwrap();
    let resident = capacity_check(&p.model("llama3-8b-resident").unwrap(), &kv, 1).map_err(|e| e.to_string())?;
    ensure(!resident.fits, || "resident embedding fits".into())?;
    let offloaded = capacity_check(&p.model("llama3-8b").unwrap(), &kv, 4096).map_err(|e| e.to_string())?;
    ensure(offloaded.fits, || format!("offloaded fails: {:?}", offloaded.overflow))?;
    let before = max_context(&p.model("llama2-7b").unwrap(), &kv).map_err(|e| e.to_string())?;
    let after = max_context(&p.model("llama2-7b-offloaded").unwrap(), &kv).map_err(|e| e.to_string())?;
    ensure((before, after) == (1024, 2048), || format!("llama2-7b context {before} -> {after}"))?;
    Ok(format!("resident fails, offloaded fits at 4096; llama2-7b {before} -> {after}"))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("gemv bit-exactness", gemv_bit_exact),
        ("mode equivalence", mode_equivalence),
        ("dsp counts", table_i_dsps),
        ("btt sweep shape", btt_sweep_shape),
        ("weight transfer latency", table_ii),
        ("embedding fetch latency", table_iii),
        ("decode throughput", table_v),
        ("gqa schedule", gqa_schedule),
        ("uram budgets", uram_budgets),
        ("numerical kernels", numerical_kernels),
        ("tiny model end-to-end", tiny_e2e),
        ("capacity", capacity),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", 12 - failed, 12);
    if failed > 0 {
        std::process::exit(1);
    }
}
