use crate::models::ParamVector;

use super::MetricReport;

/// Per-tensor affine int8 code: `w ≈ (q − zero_point)·scale`, with the
/// tensor minimum mapped to −128 and the maximum to 127.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorQuant {
    pub scale: f64,
    pub zero_point: i64,
    pub min: f64,
    pub max: f64,
    pub codes: Vec<i8>,
}

pub fn quantize_tensor(values: &[f64]) -> TensorQuant {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max == min {
        // Constant tensors reconstruct from `min` alone.
        let min = if values.is_empty() { 0.0 } else { min };
        return TensorQuant { scale: 0.0, zero_point: 0, min, max: min, codes: vec![0; values.len()] };
    }
    let scale = (max - min) / 255.0;
    let zero_point = -128 - (min / scale).round() as i64;
    let codes = values
        .iter()
        .map(|w| ((w / scale).round() as i64 + zero_point).clamp(-128, 127) as i8)
        .collect();
    TensorQuant { scale, zero_point, min, max, codes }
}

impl TensorQuant {
    pub fn dequantize(&self) -> Vec<f64> {
        if self.scale == 0.0 {
            return vec![self.min; self.codes.len()];
        }
        self.codes.iter().map(|&q| (i64::from(q) - self.zero_point) as f64 * self.scale).collect()
    }
}

/// Quantization record of one weight or bias block.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorScale {
    pub layer: usize,
    pub block: &'static str,
    pub scale: f64,
    pub zero_point: i64,
    pub min: f64,
    pub max: f64,
    pub max_abs_error: f64,
}

/// Quantizes every weight matrix and bias vector separately and returns the
/// dequantized parameters with per-tensor records.
pub fn quantize_int8(params: &ParamVector) -> (ParamVector, Vec<TensorScale>) {
    let mut values = params.values().to_vec();
    let mut scales = Vec::new();
    for (i, range) in params.blocks().into_iter().enumerate() {
        let original = &params.values()[range.clone()];
        let q = quantize_tensor(original);
        let restored = q.dequantize();
        let max_abs_error = original.iter().zip(&restored).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        values[range].copy_from_slice(&restored);
        scales.push(TensorScale {
            layer: i / 2,
            block: if i % 2 == 0 { "weight" } else { "bias" },
            scale: q.scale,
            zero_point: q.zero_point,
            min: q.min,
            max: q.max,
            max_abs_error,
        });
    }
    let quantized = params.with_values(values).expect("same length");
    (quantized, scales)
}

/// Metrics before and after quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantReport {
    pub tensors: Vec<TensorScale>,
    pub before: MetricReport,
    pub after: MetricReport,
}

impl QuantReport {
    /// `after − before` per metric; absent when either side is.
    pub fn deltas(&self) -> Vec<(&'static str, Option<f64>)> {
        self.before
            .metrics()
            .into_iter()
            .zip(self.after.metrics())
            .map(|((name, b), (_, a))| (name, a.zip(b).map(|(a, b)| a - b)))
            .collect()
    }
}
