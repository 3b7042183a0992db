use half::f16;
use hbsim::dataflow::*;
use hbsim::vpu::EngineConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 0.0009765625; // 2^-10

fn cfg_with_group(g: usize) -> AttentionConfig {
    AttentionConfig {
        num_kv_heads: 32 / g,
        ..AttentionConfig::llama3_8b()
    }
}

fn tails() -> TailCycleParams {
    TailCycleParams::default()
}

#[test]
fn optimized_has_no_vpu_idle() {
    for g in [2, 4, 8] {
        for keys in [128, 1024, 4096] {
            let t = schedule_gqa_optimized(&cfg_with_group(g), &EngineConfig::default(), keys - 1, tails()).unwrap();
            t.validate().unwrap();
            assert_eq!(t.vpu_idle_after_fill(), 0, "group {g}, {keys} keys");
        }
    }
}

#[test]
fn mha_only_drains_the_last_softmax() {
    let cfg = cfg_with_group(1);
    let t = schedule_gqa_optimized(&cfg, &EngineConfig::default(), 1023, tails()).unwrap();
    let gaps: Vec<_> = t.vpu_gaps().into_iter().filter(|(_, c)| *c > 0).collect();
    assert_eq!(gaps, vec![(StageOp::SV(31), 47)]);
}

#[test]
fn naive_exposes_both_tails() {
    for g in [2, 4, 8] {
        for keys in [128, 1024, 4096] {
            let cfg = cfg_with_group(g);
            let t = schedule_gqa_naive(&cfg, &EngineConfig::default(), keys - 1, tails()).unwrap();
            t.validate().unwrap();
            let gaps = t.vpu_gaps();
            let before = |op: StageOp| gaps.iter().find(|(o, _)| *o == op).map(|(_, c)| *c).unwrap();
            for grp in 0..cfg.num_kv_heads {
                assert!(before(StageOp::QK(grp * g)) >= 78);
            }
            for h in 0..cfg.num_q_heads {
                assert!(before(StageOp::SV(h)) >= 47);
            }
            let opt = schedule_gqa_optimized(&cfg, &EngineConfig::default(), keys - 1, tails()).unwrap();
            assert!(t.total_cycles() > opt.total_cycles());
        }
    }
}

#[test]
fn optimized_structure() {
    let cfg = cfg_with_group(4);
    let t = schedule_gqa_optimized(&cfg, &EngineConfig::default(), 1023, tails()).unwrap();
    for grp in 0..cfg.num_kv_heads {
        let heads = grp * 4..grp * 4 + 4;
        let last_qk = heads.clone().map(|h| t.entry(StageOp::QK(h)).unwrap().end).max().unwrap();
        let first_sv = heads.clone().map(|h| t.entry(StageOp::SV(h)).unwrap().start).min().unwrap();
        assert!(last_qk <= first_sv);
        for h in heads {
            // Local routing: the output projection starts the cycle sV ends.
            assert_eq!(t.entry(StageOp::OProj(h)).unwrap().start, t.entry(StageOp::SV(h)).unwrap().end);
        }
    }
    // The first two queries are projected before the first key.
    let pos = |op| t.vpu_entries().position(|e| e.op == op).unwrap();
    assert!(pos(StageOp::QProj(1)) < pos(StageOp::KProj(0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_schedule_is_valid(kv in 1usize..5, g in 1usize..9, keys in 1usize..3000) {
        let cfg = AttentionConfig { num_q_heads: kv * g, num_kv_heads: kv, ..AttentionConfig::llama3_8b() };
        for t in [
            schedule_gqa_optimized(&cfg, &EngineConfig::default(), keys, tails()).unwrap(),
            schedule_gqa_naive(&cfg, &EngineConfig::default(), keys, tails()).unwrap(),
        ] {
            prop_assert!(t.validate().is_ok());
            prop_assert_eq!(t.vpu_entries().count(), 2 * kv + 4 * kv * g);
        }
    }
}

fn random_f16(rng: &mut ChaCha8Rng, n: usize, range: f32) -> Vec<f16> {
    (0..n).map(|_| f16::from_f32(rng.gen_range(-range..range))).collect()
}

#[test]
fn online_softmax_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let s = random_f16(&mut rng, 4096, 12.0);
        let xs: Vec<f32> = s.iter().map(|v| v.to_f32()).collect();
        let m = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = xs.iter().map(|x| (x - m).exp()).sum();
        let got = online_softmax(&s).unwrap();
        for (g, x) in got.iter().zip(&xs) {
            let want = ((x - m).exp() / z) as f64;
            assert!((g.to_f64() - want).abs() <= 2.0 * EPS, "{g} vs {want}");
        }
    }
}

#[test]
fn rope_norm_and_additivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let x = random_f16(&mut rng, 128, 4.0);
        let (a, b) = (rng.gen_range(0..4096), rng.gen_range(0..4096));
        let norm = |v: &[f16]| v.iter().map(|e| e.to_f64().powi(2)).sum::<f64>().sqrt();
        let y = rope(&x, a, 500_000.0).unwrap();
        // Each output element carries at most half an ulp of rounding.
        let max = x.iter().fold(0f64, |m, e| m.max(e.to_f64().abs()));
        assert!((norm(&y) - norm(&x)).abs() <= 2.0 * EPS * norm(&x).max(max));
        let twice = rope(&y, b, 500_000.0).unwrap();
        let once = rope(&x, a + b, 500_000.0).unwrap();
        for (p, q) in twice.iter().zip(&once) {
            assert!((p.to_f64() - q.to_f64()).abs() <= 4.0 * EPS * max, "{p} vs {q}");
        }
    }
}

#[test]
fn normalize_and_silu_match_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for kind in [NormKind::Rms, NormKind::Layer] {
        for _ in 0..50 {
            let x = random_f16(&mut rng, 4096, 3.0);
            let w = random_f16(&mut rng, 4096, 2.0);
            let xs: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
            let n = xs.len() as f64;
            let mean = if kind == NormKind::Layer { xs.iter().sum::<f64>() / n } else { 0.0 };
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let got = normalize(&x, &w, kind).unwrap();
            for ((g, v), wt) in got.iter().zip(&xs).zip(&w) {
                let want = (v - mean) / (var + 1e-5).sqrt() * wt.to_f64();
                assert!((g.to_f64() - want).abs() <= 4.0 * EPS * want.abs().max(1.0));
            }
        }
    }
    for x in random_f16(&mut rng, 10_000, 10.0) {
        let v = x.to_f64();
        let want = v / (1.0 + (-v).exp());
        assert!((silu(x).to_f64() - want).abs() <= 2.0 * EPS * want.abs().max(1.0));
    }
}

fn tiny() -> AttentionConfig {
    AttentionConfig {
        num_q_heads: 4,
        num_kv_heads: 2,
        head_dim: 8,
        hidden_dim: 32,
        max_context: 16,
        rope_theta: 10_000.0,
        uram_limit: None,
    }
}

/// FP32 attention over unquantized rotated keys and values.
fn reference(cfg: &AttentionConfig, qs: &[Vec<f16>], ks: &[Vec<Vec<f32>>], vs: &[Vec<Vec<f32>>]) -> Vec<Vec<f32>> {
    let g = cfg.group_size();
    qs.iter()
        .enumerate()
        .map(|(h, q)| {
            let (k, v) = (&ks[h / g], &vs[h / g]);
            let s: Vec<f32> = k
                .iter()
                .map(|kj| q.iter().zip(kj).map(|(a, b)| a.to_f32() * b).sum::<f32>() / (cfg.head_dim as f32).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let z: f32 = s.iter().map(|x| (x - m).exp()).sum();
            (0..cfg.head_dim)
                .map(|e| s.iter().zip(v).map(|(x, vj)| (x - m).exp() / z * vj[e]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn attention_tracks_fp32_reference() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cache = KvCache::new(2, 16);
    let mut cache_naive = KvCache::new(2, 16);
    let (mut ks, mut vs) = (vec![vec![]; 2], vec![vec![]; 2]);
    for pos in 0..16 {
        let x = AttentionInputs {
            q: (0..4).map(|_| random_f16(&mut rng, 8, 2.0)).collect(),
            k: (0..2).map(|_| random_f16(&mut rng, 8, 2.0)).collect(),
            v: (0..2).map(|_| random_f16(&mut rng, 8, 2.0)).collect(),
        };
        for kv in 0..2 {
            ks[kv].push(rope(&x.k[kv], pos, cfg.rope_theta).unwrap().iter().map(|v| v.to_f32()).collect::<Vec<_>>());
            vs[kv].push(x.v[kv].iter().map(|v| v.to_f32()).collect::<Vec<_>>());
        }
        let e = EngineConfig::default();
        let opt = attention_decode_step(&x, &mut cache, &cfg, &e, tails(), ScheduleKind::Optimized).unwrap();
        let naive = attention_decode_step(&x, &mut cache_naive, &cfg, &e, tails(), ScheduleKind::Naive).unwrap();
        assert_eq!(opt.heads, naive.heads);
        assert_eq!(cache, cache_naive);
        assert_eq!(opt.key_digests[0], opt.key_digests[1]);

        let q_rot: Vec<Vec<f16>> = x.q.iter().map(|q| rope(q, pos, cfg.rope_theta).unwrap()).collect();
        let want = reference(&cfg, &q_rot, &ks, &vs);
        for (h, (got, want)) in opt.heads.iter().zip(&want).enumerate() {
            let kv = h / 2;
            let max_abs = |vecs: &Vec<Vec<f32>>| vecs.iter().flatten().fold(0f32, |m, v| m.max(v.abs())) as f64;
            let (kmax, vmax) = (max_abs(&ks[kv]), max_abs(&vs[kv]));
            let qnorm = q_rot[h].iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
            // Per-stage bounds: INT8 key rounding and FP16 score rounding
            // perturb each score; softmax turns a score error δ into at
            // most 2δ of weight mass (plus FP16 weight rounding); INT8
            // value rounding and the FP16 output add directly.
            let n = (pos + 1) as f64;
            let k_err = (kmax / 254.0) * (cfg.head_dim as f64).sqrt();
            let score_err = qnorm * k_err / (cfg.head_dim as f64).sqrt() + EPS * qnorm * kmax * 8f64.sqrt();
            let weight_l1 = 2.0 * ((score_err).exp() - 1.0) + n * EPS / 2.0;
            let bound = weight_l1 * vmax + vmax / 254.0 + EPS * vmax;
            for (g, w) in got.iter().zip(want) {
                let err = (g.to_f64() - *w as f64).abs();
                assert!(err <= bound, "pos {pos} head {h}: err {err} > bound {bound}");
            }
        }
    }
}
