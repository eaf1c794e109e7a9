//! Int8 inference runtime for the policy network.
//!
//! Weights are symmetric per-tensor int8 and biases int32 in the accumulator
//! scale. Each layer accumulates `W_q * (x_q - zp)` in i32. Hidden layers
//! requantize the accumulator with a fixed-point multiplier onto a 12-bit
//! lookup index and read the asymmetric int8 activation (with zero point)
//! from a table. The final accumulator is rescaled once and squashed.
//! Inputs use scale 1/127 and zero point 0, matching the [-1, 1] observation
//! range.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

pub const INPUT_SCALE: f64 = 1.0 / 127.0;

/// Pre-activations are requantized to `[-PRE_LEVELS, PRE_LEVELS]` before
/// the activation lookup.
pub const PRE_LEVELS: i32 = 2047;

/// Symmetric per-tensor quantization. An all-zero tensor gets scale 1.
pub fn quantize_weights(w: &[f64]) -> (Vec<i8>, f64) {
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
    (w.iter().map(|v| (v / scale).round().clamp(-127.0, 127.0) as i8).collect(), scale)
}

pub fn dequantize_weights(q: &[i8], scale: f64) -> Vec<f64> {
    q.iter().map(|&v| v as f64 * scale).collect()
}

/// Fixed-point representation `multiplier * 2^-shift` with a Q31 multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FixedPoint {
    multiplier: i64,
    shift: u32,
}

impl FixedPoint {
    fn new(real: f64) -> Self {
        if !(real > 0.0) {
            return Self { multiplier: 0, shift: 31 };
        }
        let mut exp = real.log2().floor() as i32 + 1;
        let mut m = (real / 2f64.powi(exp) * 2f64.powi(31)).round() as i64;
        if m == 1 << 31 {
            m >>= 1;
            exp += 1;
        }
        let shift = (31 - exp).clamp(1, 62) as u32;
        Self { multiplier: m, shift }
    }

    fn apply(self, acc: i32) -> i32 {
        let prod = acc as i64 * self.multiplier;
        let rounded = (prod + (1i64 << (self.shift - 1))) >> self.shift;
        rounded.clamp(i32::MIN as i64, i32::MAX as i64) as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub weight_scale: f64,
    pub input_scale: f64,
    pub input_zero: i32,
    /// Scale of the requantized pre-activation (lookup index).
    pub pre_scale: f64,
    /// Output quantization of hidden layers (unused for the final layer).
    pub output_scale: f64,
    pub output_zero: i32,
    pub activation: Activation,
    row_sums: Vec<i32>,
    requant: FixedPoint,
    table: Vec<i8>,
}

impl QuantLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<i8>,
        bias: Vec<i32>,
        weight_scale: f64,
        input_scale: f64,
        input_zero: i32,
        pre_scale: f64,
        output_scale: f64,
        output_zero: i32,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != rows * cols || bias.len() != rows {
            return Err(Error::Checkpoint("quantized layer shape mismatch".into()));
        }
        for s in [weight_scale, input_scale, pre_scale] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::CorruptedModel(format!("invalid quantization scale {s}")));
            }
        }
        let row_sums = weights.chunks(cols).map(|r| r.iter().map(|&w| w as i32).sum()).collect();
        let requant = FixedPoint::new(weight_scale * input_scale / pre_scale);
        let mut layer = Self {
            rows,
            cols,
            weights,
            bias,
            weight_scale,
            input_scale,
            input_zero,
            pre_scale,
            output_scale,
            output_zero,
            activation,
            row_sums,
            requant,
            table: Vec::new(),
        };
        if output_scale > 0.0 {
            layer.table = (-PRE_LEVELS..=PRE_LEVELS)
                .map(|k| {
                    let y = activation.apply(pre_scale * k as f64);
                    ((y / output_scale).round() + output_zero as f64).clamp(-128.0, 127.0) as i8
                })
                .collect();
        }
        Ok(layer)
    }

    fn accumulate(&self, input: &[i8], r: usize) -> i32 {
        let row = &self.weights[r * self.cols..(r + 1) * self.cols];
        let dot: i32 = row.iter().zip(input).map(|(&w, &x)| w as i32 * x as i32).sum();
        self.bias[r] + dot - self.input_zero * self.row_sums[r]
    }

    fn hidden(&self, input: &[i8]) -> Vec<i8> {
        (0..self.rows)
            .map(|r| {
                let k = self.requant.apply(self.accumulate(input, r)).clamp(-PRE_LEVELS, PRE_LEVELS);
                self.table[(k + PRE_LEVELS) as usize]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPolicy {
    layers: Vec<QuantLayer>,
}

impl QuantizedPolicy {
    pub fn from_layers(layers: Vec<QuantLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Checkpoint("quantized policy has no layers".into()));
        };
        if last.rows != 1 {
            return Err(Error::Checkpoint("quantized policy must have a single output".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(Error::Checkpoint("quantized layer widths do not chain".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].cols
    }

    /// Integer inference; bit-reproducible for a given input.
    pub fn forward(&self, obs: &[f64]) -> Result<f64> {
        if obs.len() != self.input_len() {
            return Err(Error::InputDomain(format!("expected {} inputs, got {}", self.input_len(), obs.len())));
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InputDomain("non-finite observation".into()));
        }
        let mut act: Vec<i8> = obs.iter().map(|x| (x.clamp(-1.0, 1.0) / INPUT_SCALE).round() as i8).collect();
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        for layer in hidden {
            act = layer.hidden(&act);
        }
        let acc = last.accumulate(&act, 0);
        let z = acc as f64 * last.weight_scale * last.input_scale;
        Ok(last.activation.apply(z).clamp(-1.0, 1.0))
    }

    /// Mean wall time of one inference over `iterations` calls.
    pub fn benchmark(&self, obs: &[f64], iterations: usize) -> Result<Duration> {
        let start = Instant::now();
        let mut sink = 0.0;
        for _ in 0..iterations.max(1) {
            sink += self.forward(std::hint::black_box(obs))?;
        }
        std::hint::black_box(sink);
        Ok(start.elapsed() / iterations.max(1) as u32)
    }
}

/// Largest absolute pre-activation per layer over the calibration set.
pub fn calibrate(policy: &Mlp, calibration: &[Vec<f64>]) -> Result<Vec<f64>> {
    if calibration.is_empty() {
        return Err(Error::InputDomain("calibration set is empty".into()));
    }
    let mut ranges = vec![0.0f64; policy.layer_count()];
    for obs in calibration {
        if obs.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InputDomain("calibration entries must lie in [-1, 1]".into()));
        }
        let trace = policy.trace(obs)?;
        for (r, z) in ranges.iter_mut().zip(&trace.pre) {
            *r = z.iter().fold(*r, |m, v| m.max(v.abs()));
        }
    }
    Ok(ranges)
}

pub fn quantize(policy: &Mlp, calibration: &[Vec<f64>]) -> Result<QuantizedPolicy> {
    let ranges = calibrate(policy, calibration)?;
    quantize_with_ranges(policy, &ranges)
}

/// Quantizes with explicit per-layer pre-activation ranges.
pub fn quantize_with_ranges(policy: &Mlp, ranges: &[f64]) -> Result<QuantizedPolicy> {
    if ranges.len() != policy.layer_count() {
        return Err(Error::InputDomain("one range per layer required".into()));
    }
    if policy.widths().last() != Some(&1) {
        return Err(Error::InputDomain("policy must have a single output".into()));
    }
    let mut layers = Vec::with_capacity(policy.layer_count());
    let (mut input_scale, mut input_zero) = (INPUT_SCALE, 0);
    for l in 0..policy.layer_count() {
        let range = ranges[l];
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::DegenerateCalibration { layer: l });
        }
        let (rows, cols) = (policy.widths()[l + 1], policy.widths()[l]);
        let (weights, weight_scale) = quantize_weights(policy.weights(l));
        let acc_scale = weight_scale * input_scale;
        let bias = policy
            .bias(l)
            .iter()
            .map(|b| (b / acc_scale).round().clamp(i32::MIN as f64 / 2.0, i32::MAX as f64 / 2.0) as i32)
            .collect();
        let pre_scale = range / PRE_LEVELS as f64;
        let activation = policy.activation(l);
        let (output_scale, output_zero) = if l + 1 < policy.layer_count() {
            let lo = activation.apply(-range);
            let hi = activation.apply(range);
            let scale = (hi - lo) / 255.0;
            (scale, (-128.0 - lo / scale).round().clamp(-128.0, 127.0) as i32)
        } else {
            (0.0, 0)
        };
        let layer = QuantLayer::new(
            rows,
            cols,
            weights,
            bias,
            weight_scale,
            input_scale,
            input_zero,
            pre_scale,
            output_scale,
            output_zero,
            activation,
        )?;
        input_scale = output_scale;
        input_zero = output_zero;
        layers.push(layer);
    }
    QuantizedPolicy::from_layers(layers)
}
