//! Element-wise SPU kernels. Inputs and outputs are FP16; arithmetic inside
//! a kernel runs in FP32 (FP64 for RoPE angles), rounding once on output.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Rms,
    Layer,
}

/// Rotates consecutive pairs `(x[2i], x[2i+1])` by
/// `position × theta^(-2i / len)` radians.
pub fn rope(x: &[f16], position: usize, theta: f64) -> Result<Vec<f16>> {
    if x.len() % 2 != 0 {
        return Err(Error::Shape(format!("RoPE needs an even length, got {}", x.len())));
    }
    let d = x.len() as f64;
    Ok(x.chunks_exact(2)
        .enumerate()
        .flat_map(|(i, pair)| {
            let angle = position as f64 * theta.powf(-2.0 * i as f64 / d);
            let (sin, cos) = angle.sin_cos();
            let (a, b) = (pair[0].to_f64(), pair[1].to_f64());
            [f16::from_f64(a * cos - b * sin), f16::from_f64(a * sin + b * cos)]
        })
        .collect())
}

/// Running state of a single-pass softmax: the maximum seen so far and the
/// sum of exponentials relative to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineSoftmax {
    pub max: f32,
    pub sum: f32,
}

impl Default for OnlineSoftmax {
    fn default() -> Self {
        Self {
            max: f32::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl OnlineSoftmax {
    pub fn push(&mut self, x: f32) {
        if x == f32::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub fn weight(&self, x: f32) -> f32 {
        if x == f32::NEG_INFINITY || self.sum == 0.0 {
            0.0
        } else {
            (x - self.max).exp() / self.sum
        }
    }
}

/// Softmax with the max search and exponential sum fused into one pass.
/// Masked (`-inf`) scores receive exactly zero weight.
pub fn online_softmax(scores: &[f16]) -> Result<Vec<f16>> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut state = OnlineSoftmax::default();
    for s in scores {
        state.push(s.to_f32());
    }
    Ok(scores.iter().map(|s| f16::from_f32(state.weight(s.to_f32()))).collect())
}

/// Modeled SPU cycles: one score per cycle, then the finalization tail.
pub fn softmax_latency(len: usize, tail: u64) -> u64 {
    len as u64 + tail
}

pub fn normalize(x: &[f16], weights: &[f16], kind: NormKind) -> Result<Vec<f16>> {
    if x.len() != weights.len() {
        return Err(Error::Shape(format!(
            "normalize: {} inputs, {} weights",
            x.len(),
            weights.len()
        )));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let n = x.len() as f32;
    let xs: Vec<f32> = x.iter().map(|v| v.to_f32()).collect();
    let mean = match kind {
        NormKind::Rms => 0.0,
        NormKind::Layer => xs.iter().sum::<f32>() / n,
    };
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    Ok(xs
        .iter()
        .zip(weights)
        .map(|(v, w)| f16::from_f32((v - mean) * inv * w.to_f32()))
        .collect())
}

pub fn silu(x: f16) -> f16 {
    let v = x.to_f32();
    f16::from_f32(v / (1.0 + (-v).exp()))
}

pub fn silu_vec(x: &[f16]) -> Vec<f16> {
    x.iter().map(|&v| silu(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: &[f32]) -> Vec<f16> {
        v.iter().map(|&x| f16::from_f32(x)).collect()
    }

    #[test]
    fn rope_identity_and_odd_rejection() {
        let x = h(&[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(rope(&x, 0, 10000.0).unwrap(), x);
        assert!(rope(&h(&[1.0, 2.0, 3.0]), 1, 10000.0).is_err());
    }

    #[test]
    fn rope_two_dims_is_plain_rotation() {
        let x = h(&[1.0, 0.0]);
        let y = rope(&x, 3, 1.0).unwrap();
        assert!((y[0].to_f64() - 3f64.cos()).abs() < 1e-3);
        assert!((y[1].to_f64() - 3f64.sin()).abs() < 1e-3);
    }

    #[test]
    fn softmax_small_cases() {
        assert_eq!(online_softmax(&h(&[4.5])).unwrap(), h(&[1.0]));
        let u = online_softmax(&h(&[2.0; 8])).unwrap();
        assert!(u.iter().all(|&w| w == f16::from_f32(0.125)));
        let masked = online_softmax(&[f16::NEG_INFINITY, f16::from_f32(1.0)]).unwrap();
        assert_eq!(masked[0], f16::ZERO);
        assert_eq!(masked[1], f16::ONE);
        assert!(online_softmax(&[]).is_err());
    }

    #[test]
    fn normalize_trivial() {
        let ones = h(&[1.0; 16]);
        assert!(normalize(&h(&[0.0; 16]), &ones, NormKind::Rms).unwrap().iter().all(|v| *v == f16::ZERO));
        let y = normalize(&ones, &ones, NormKind::Rms).unwrap();
        assert!(y.iter().all(|v| (v.to_f32() - 1.0).abs() < 1e-3));
        assert!(normalize(&ones, &ones[..3], NormKind::Layer).is_err());
    }

    #[test]
    fn silu_limits() {
        assert_eq!(silu(f16::ZERO), f16::ZERO);
        assert_eq!(silu(f16::from_f32(20.0)), f16::from_f32(20.0));
    }
}
