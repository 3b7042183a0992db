//! Number formats of the datapath and the quantizers that produce them.
//!
//! Weights are INT4 codes with one FP16 scale per `group_size` consecutive
//! inputs of a row. The kv cache is INT8 with one FP16 scale per cached vector.
//! Activations enter the compute engine as INT24 fixed point and products are
//! accumulated in 48-bit registers. Everything the scalar unit touches is FP16.

pub mod format;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar value handled by the scalar processing unit.
pub type Fp16Value = f16;

/// Default number of weights sharing one scale along the input dimension.
pub const DEFAULT_GROUP_SIZE: usize = 128;

/// Scale used for all-zero groups and vectors (smallest positive normal FP16).
pub const FP16_MIN_NORMAL: f16 = f16::MIN_POSITIVE;

pub const INT4_MIN: i8 = -8;
pub const INT4_MAX: i8 = 7;

/// Signed 24-bit fixed-point activation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Int24(i32);

impl Int24 {
    pub const MIN: i32 = -(1 << 23);
    pub const MAX: i32 = (1 << 23) - 1;
    pub const ZERO: Int24 = Int24(0);

    pub fn new(value: i32) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Int24(value))
    }

    /// Clamps into range; the flag reports whether clamping happened.
    pub fn saturating(value: i64) -> (Self, bool) {
        let clamped = value.clamp(Self::MIN as i64, Self::MAX as i64);
        (Int24(clamped as i32), clamped != value)
    }

    pub fn get(self) -> i32 {
        self.0
    }
}

/// Signed 48-bit accumulator register.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Acc48(i64);

impl Acc48 {
    pub const MIN: i64 = -(1 << 47);
    pub const MAX: i64 = (1 << 47) - 1;
    pub const ZERO: Acc48 = Acc48(0);

    pub fn new(value: i64) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Acc48(value))
    }

    pub fn get(self) -> i64 {
        self.0
    }

    /// Two's-complement 48-bit addition, as the DSP ALU performs it.
    pub fn wrapping_add(self, rhs: i64) -> Self {
        Acc48(wrap48(self.0.wrapping_add(rhs)))
    }
}

pub(crate) fn wrap48(v: i64) -> i64 {
    (v << 16) >> 16
}

/// Saturation and overflow events observed while converting between formats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantStats {
    pub int24_saturations: u64,
    pub fp16_overflows: u64,
}

impl QuantStats {
    pub fn merge(&mut self, other: QuantStats) {
        self.int24_saturations += other.int24_saturations;
        self.fp16_overflows += other.fp16_overflows;
    }
}

/// INT4 symmetric group-quantized weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    group_size: usize,
    /// Row-major, each in `[-8, 7]`.
    codes: Vec<i8>,
    /// One per `(row, group)`, row-major.
    scales: Vec<f16>,
}

impl QuantizedMatrix {
    /// Assembles a matrix from raw parts, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        group_size: usize,
        codes: Vec<i8>,
        scales: Vec<f16>,
    ) -> Result<Self> {
        if group_size == 0 || cols % group_size != 0 {
            return Err(Error::Shape(format!(
                "cols {cols} is not a multiple of group_size {group_size}"
            )));
        }
        if codes.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} codes, got {}",
                rows * cols,
                codes.len()
            )));
        }
        if scales.len() != rows * (cols / group_size) {
            return Err(Error::Shape(format!(
                "expected {} scales, got {}",
                rows * (cols / group_size),
                scales.len()
            )));
        }
        if let Some(c) = codes.iter().find(|c| !(INT4_MIN..=INT4_MAX).contains(*c)) {
            return Err(Error::Shape(format!("code {c} outside INT4 range")));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && s.to_f32() > 0.0)) {
            return Err(Error::Shape(format!("scale {s} is not finite and positive")));
        }
        Ok(Self {
            rows,
            cols,
            group_size,
            codes,
            scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_size
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    pub fn code(&self, row: usize, col: usize) -> i8 {
        self.codes[row * self.cols + col]
    }

    pub fn scale(&self, row: usize, group: usize) -> f16 {
        self.scales[row * self.groups_per_row() + group]
    }

    pub fn code_view(&self) -> CodeMatrix<'_> {
        CodeMatrix {
            rows: self.rows,
            cols: self.cols,
            codes: &self.codes,
        }
    }

    /// Dequantized value of one element: `code × scale` of its group.
    pub fn dequantize_at(&self, row: usize, col: usize) -> f32 {
        self.code(row, col) as f32 * self.scale(row, col / self.group_size).to_f32()
    }

    /// Dequantized matrix, row-major.
    pub fn dequantize(&self) -> Vec<f32> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.dequantize_at(r, c))
            .collect()
    }

    /// Bytes occupied in memory: packed nibbles plus FP16 scales.
    pub fn storage_bytes(&self) -> usize {
        self.codes.len().div_ceil(2) + self.scales.len() * 2
    }
}

/// Borrowed view of an integer code matrix, row-major.
///
/// The engine does not care whether codes came from INT4 weights or an INT8
/// cache; both fit in `i8`.
#[derive(Debug, Clone, Copy)]
pub struct CodeMatrix<'a> {
    pub rows: usize,
    pub cols: usize,
    pub codes: &'a [i8],
}

impl<'a> CodeMatrix<'a> {
    pub fn new(rows: usize, cols: usize, codes: &'a [i8]) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::Shape(format!(
                "code matrix {rows}x{cols} needs {} codes, got {}",
                rows * cols,
                codes.len()
            )));
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn at(&self, row: usize, col: usize) -> i8 {
        self.codes[row * self.cols + col]
    }
}

/// INT8 linearly quantized vector with a single FP16 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q8Vector {
    pub codes: Vec<i8>,
    pub scale: f16,
}

impl Q8Vector {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f32> {
        let s = self.scale.to_f32();
        self.codes.iter().map(|&c| c as f32 * s).collect()
    }
}

/// Rounds `max_abs / levels` to an FP16 scale, substituting the minimum
/// normal for all-zero inputs.
fn symmetric_scale(max_abs: f32, levels: f32) -> f16 {
    if max_abs == 0.0 {
        return FP16_MIN_NORMAL;
    }
    let s = f16::from_f32(max_abs / levels);
    // Tiny groups can underflow to a subnormal or zero scale.
    if s.to_f32() < FP16_MIN_NORMAL.to_f32() {
        FP16_MIN_NORMAL
    } else {
        s
    }
}

fn quantize_value(v: f32, scale: f16, lo: i8, hi: i8) -> i8 {
    (v / scale.to_f32()).round().clamp(lo as f32, hi as f32) as i8
}

/// Round-to-nearest symmetric INT4 quantization with one FP16 scale per
/// `group_size` inputs of each row. `weights` is row-major `rows × cols`.
pub fn quantize_weights_int4(
    weights: &[f32],
    rows: usize,
    cols: usize,
    group_size: usize,
) -> Result<QuantizedMatrix> {
    if group_size == 0 || cols % group_size != 0 {
        return Err(Error::Shape(format!(
            "group_size {group_size} does not divide cols {cols}"
        )));
    }
    if weights.len() != rows * cols {
        return Err(Error::Shape(format!(
            "expected {} weights, got {}",
            rows * cols,
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            row: i / cols,
            col: i % cols,
        });
    }

    let mut codes = Vec::with_capacity(weights.len());
    let mut scales = Vec::with_capacity(rows * cols / group_size);
    for row in weights.chunks_exact(cols) {
        for group in row.chunks_exact(group_size) {
            let max_abs = group.iter().fold(0f32, |m, w| m.max(w.abs()));
            let scale = symmetric_scale(max_abs, INT4_MAX as f32);
            scales.push(scale);
            codes.extend(group.iter().map(|&w| quantize_value(w, scale, INT4_MIN, INT4_MAX)));
        }
    }
    QuantizedMatrix::from_parts(rows, cols, group_size, codes, scales)
}

/// Linear INT8 quantization of one cache vector.
pub fn quantize_kv_int8(v: &[f32]) -> Result<Q8Vector> {
    if v.is_empty() {
        return Err(Error::Empty("kv vector"));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { row: 0, col: i });
    }
    let max_abs = v.iter().fold(0f32, |m, x| m.max(x.abs()));
    let scale = symmetric_scale(max_abs, 127.0);
    let codes = v
        .iter()
        .map(|&x| quantize_value(x, scale, i8::MIN, i8::MAX))
        .collect();
    Ok(Q8Vector { codes, scale })
}

/// Converts an FP16 activation to INT24 fixed point. Saturation is counted in
/// `stats`, never fatal.
pub fn activation_to_int24(x: f16, act_scale: f64, stats: &mut QuantStats) -> Int24 {
    debug_assert!(act_scale > 0.0);
    let q = (x.to_f64() / act_scale).round();
    let q = if q.is_nan() { 0 } else { q.clamp(i64::MIN as f64, i64::MAX as f64) as i64 };
    let (v, saturated) = Int24::saturating(q);
    if saturated {
        stats.int24_saturations += 1;
    }
    v
}

/// Activation quantizer policy. The scale is chosen per tensor from its
/// maximum magnitude, leaving `headroom_bits` of the INT24 range unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationQuantizer {
    pub headroom_bits: u32,
}

impl Default for ActivationQuantizer {
    fn default() -> Self {
        Self { headroom_bits: 0 }
    }
}

impl ActivationQuantizer {
    pub fn scale_for(&self, xs: &[f16]) -> f64 {
        let max_abs = xs.iter().fold(0f64, |m, x| m.max(x.to_f64().abs()));
        let full = (Int24::MAX >> self.headroom_bits) as f64;
        if max_abs == 0.0 || !max_abs.is_finite() {
            1.0
        } else {
            max_abs / full
        }
    }

    pub fn quantize(&self, xs: &[f16], stats: &mut QuantStats) -> (Vec<Int24>, f64) {
        let scale = self.scale_for(xs);
        let q = xs.iter().map(|&x| activation_to_int24(x, scale, stats)).collect();
        (q, scale)
    }
}

/// `FP16(round-to-nearest-even(a × combined_scale))`, computed exactly.
///
/// Overflow produces ±infinity and is counted in `stats`.
pub fn acc48_to_fp16(a: Acc48, combined_scale: f64, stats: &mut QuantStats) -> f16 {
    let out = exact_scaled_to_f16(a.get(), combined_scale);
    if out.is_infinite() {
        stats.fp16_overflows += 1;
    }
    out
}

/// Rounds the exact product `a × scale` to FP16, ties to even.
pub(crate) fn exact_scaled_to_f16(a: i64, scale: f64) -> f16 {
    assert!(scale.is_finite(), "combined scale must be finite");
    if a == 0 || scale == 0.0 {
        let neg = (a < 0) != scale.is_sign_negative();
        return if neg { f16::NEG_ZERO } else { f16::ZERO };
    }
    let (mant, exp) = decompose(scale.abs());
    let negative = (a < 0) != (scale < 0.0);
    let magnitude = (a.unsigned_abs() as u128) * mant as u128;
    let bits = round_to_f16_bits(magnitude, exp);
    f16::from_bits(if negative { bits | 0x8000 } else { bits })
}

/// Splits a positive finite f64 into `mant × 2^exp` with an integer mantissa.
fn decompose(x: f64) -> (u64, i32) {
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_field - 1075)
    }
}

/// Unsigned FP16 bit pattern of `m × 2^e`, round-to-nearest-even.
fn round_to_f16_bits(m: u128, e: i32) -> u16 {
    debug_assert!(m != 0);
    let msb = 127 - m.leading_zeros() as i32;
    // Exponent of the result, clamped into the subnormal floor.
    let mut exp = (msb + e).max(-14);
    // Value expressed in units of 2^(exp - 10).
    let shift = e - (exp - 10);
    let mut q: u128 = if shift >= 0 {
        if shift >= 20 {
            // Far above the FP16 range.
            return 0x7c00;
        }
        m << shift
    } else {
        let k = (-shift) as u32;
        if k >= 128 {
            0
        } else {
            let q = m >> k;
            let rem = m & ((1u128 << k) - 1);
            let half = 1u128 << (k - 1);
            if rem > half || (rem == half && q & 1 == 1) {
                q + 1
            } else {
                q
            }
        }
    };
    if q >= 1 << 11 {
        q >>= 1;
        exp += 1;
    }
    if exp > 15 {
        return 0x7c00;
    }
    if q < 1 << 10 {
        q as u16
    } else {
        (((exp + 15) as u16) << 10) | (q as u16 - (1 << 10))
    }
}
