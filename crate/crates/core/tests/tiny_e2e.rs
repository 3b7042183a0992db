use std::time::{Duration, Instant};

use hbsim::dataflow::NORM_EPS;
use hbsim::system::{run_tiny_model_e2e, run_tiny_with_weights, ModelSpec, TinyWeights};
use hbsim::vpu::EngineConfig;
use hbsim::Presets;

fn tiny() -> ModelSpec {
    Presets::builtin().unwrap().model("tiny").unwrap()
}

/// Plain f64 decoder over dequantized weights, written without any of the
/// library's kernels.
struct Oracle {
    spec: ModelSpec,
    emb: Vec<f64>,
    layers: Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>,
    final_norm: Vec<f64>,
    lm_head: Vec<f64>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

fn deq(m: &hbsim::quant::QuantizedMatrix) -> Vec<f64> {
    m.dequantize().into_iter().map(f64::from).collect()
}

fn halfs(v: &[half::f16]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

fn mv(w: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks(x.len()).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn rms(x: &[f64], w: &[f64]) -> Vec<f64> {
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + NORM_EPS as f64).sqrt();
    x.iter().zip(w).map(|(a, b)| a / r * b).collect()
}

fn rotate(x: &mut [f64], pos: usize, theta: f64) {
    let d = x.len();
    for i in 0..d / 2 {
        let a = pos as f64 / theta.powf(2.0 * i as f64 / d as f64);
        let (s, c) = a.sin_cos();
        let (p, q) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = p * c - q * s;
        x[2 * i + 1] = p * s + q * c;
    }
}

impl Oracle {
    fn new(spec: &ModelSpec, w: &TinyWeights) -> Self {
        let layers = w
            .layers
            .iter()
            .map(|l| {
                let ms = [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down].map(deq).to_vec();
                (halfs(&l.attn_norm), halfs(&l.ffn_norm), ms)
            })
            .collect();
        Self {
            spec: spec.clone(),
            emb: halfs(&w.embedding),
            layers,
            final_norm: halfs(&w.final_norm),
            lm_head: deq(&w.lm_head),
            keys: vec![Vec::new(); spec.layers * spec.num_kv_heads],
            values: vec![Vec::new(); spec.layers * spec.num_kv_heads],
        }
    }

    fn step(&mut self, token: usize, pos: usize) -> Vec<f64> {
        let s = self.spec.clone();
        let (h, d) = (s.hidden_dim, s.head_dim);
        let mut x = self.emb[token * h..(token + 1) * h].to_vec();
        for l in 0..s.layers {
            let (an, fnorm, m) = &self.layers[l];
            let n = rms(&x, an);
            let (q, k, v) = (mv(&m[0], &n), mv(&m[1], &n), mv(&m[2], &n));
            for kv in 0..s.num_kv_heads {
                let mut key = k[kv * d..(kv + 1) * d].to_vec();
                rotate(&mut key, pos, s.rope_theta);
                self.keys[l * s.num_kv_heads + kv].push(key);
                self.values[l * s.num_kv_heads + kv].push(v[kv * d..(kv + 1) * d].to_vec());
            }
            let mut att = Vec::new();
            for head in 0..s.num_q_heads {
                let slot = l * s.num_kv_heads + head * s.num_kv_heads / s.num_q_heads;
                let mut qh = q[head * d..(head + 1) * d].to_vec();
                rotate(&mut qh, pos, s.rope_theta);
                let scores: Vec<f64> = self.keys[slot]
                    .iter()
                    .map(|k| k.iter().zip(&qh).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for i in 0..d {
                    att.push(self.values[slot].iter().zip(&e).map(|(v, w)| v[i] * w / z).sum());
                }
            }
            x.iter_mut().zip(mv(&m[3], &att)).for_each(|(a, b)| *a += b);
            let n = rms(&x, fnorm);
            let (g, u) = (mv(&m[4], &n), mv(&m[5], &n));
            let act: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            x.iter_mut().zip(mv(&m[6], &act)).for_each(|(a, b)| *a += b);
        }
        mv(&self.lm_head, &rms(&x, &self.final_norm))
    }
}

#[test]
fn reference_path_matches_independent_oracle() {
    let spec = tiny();
    let weights = TinyWeights::random(&spec, 11).unwrap();
    let tokens = [3, 200, 17, 17, 99, 0];
    let trace = run_tiny_with_weights(&spec, &weights, &tokens, &EngineConfig::default(), 11).unwrap();
    let mut oracle = Oracle::new(&spec, &weights);
    for (pos, (&t, step)) in tokens.iter().zip(&trace.steps).enumerate() {
        let want = oracle.step(t, pos);
        for (got, want) in step.reference.iter().zip(&want) {
            assert!((*got as f64 - want).abs() <= 1e-4 * (1.0 + want.abs()), "pos {pos}: {got} vs {want}");
        }
        // The quantized logits stay close to the oracle in absolute terms too.
        let worst = step.logits.iter().zip(&want).map(|(q, w)| (q.to_f64() - w).abs()).fold(0f64, f64::max);
        assert!(worst < 0.05, "pos {pos}: {worst}");
    }
}

#[test]
fn quantized_logits_stay_within_bound() {
    let spec = tiny();
    let start = Instant::now();
    let trace = run_tiny_model_e2e(&spec, 7, 8).unwrap();
    assert!(start.elapsed() < Duration::from_secs(30));
    assert!(trace.within_bound, "{:?}", trace.steps.iter().map(|s| s.max_sigmas).collect::<Vec<_>>());
    assert_eq!(trace.steps.len(), 8);
    for s in &trace.steps {
        assert_eq!(s.argmax, s.reference_argmax);
        assert!(s.bound.iter().all(|b| b.is_finite() && *b > 0.0));
    }
}

#[test]
fn runs_are_bit_identical() {
    let spec = tiny();
    let a = run_tiny_model_e2e(&spec, 3, 5).unwrap();
    let b = run_tiny_model_e2e(&spec, 3, 5).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.steps, b.steps);
    assert_ne!(a.digest, run_tiny_model_e2e(&spec, 4, 5).unwrap().digest);
}

#[test]
fn zero_weights_give_constant_logits() {
    let spec = tiny();
    let weights = TinyWeights::zeros(&spec).unwrap();
    let trace = run_tiny_with_weights(&spec, &weights, &[1, 2, 3], &EngineConfig::default(), 0).unwrap();
    for s in &trace.steps {
        assert!(s.logits.iter().all(|l| l.to_f32() == 0.0));
    }
    assert!(trace.within_bound);
}

#[test]
fn tokens_outside_vocabulary_are_rejected() {
    let spec = tiny();
    let weights = TinyWeights::zeros(&spec).unwrap();
    assert!(run_tiny_with_weights(&spec, &weights, &[256], &EngineConfig::default(), 0).is_err());
}
