//! Weight and activation quantizers.
//!
//! Weights use a modified DoReFa scheme: tanh-normalize into [-1, 1], round
//! onto the widest candidate grid, and derive every lower precision by
//! truncating least-significant code bits, plus a per-layer scalar offset
//! that re-aligns the mean shifted by the discarded bits. Activations use
//! PACT: clip to a learnable ceiling `alpha`, then round on a uniform grid.
//! Both quantizers train through straight-through surrogate gradients.
//!
//! Rounding ties go half-away-from-zero everywhere (`f64::round`), so the
//! exhaustive code-level tests are exact.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which side of a layer a quantizer applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantRole {
    Weight,
    Activation,
}

/// A validated bit-width choice for one quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub bits: u32,
    pub role: QuantRole,
}

impl QuantSpec {
    /// Validates `bits` against the candidate set (which excludes 0/skip).
    pub fn new(bits: u32, role: QuantRole, candidates: &[u32]) -> Result<Self> {
        if bits == 0 || !candidates.contains(&bits) {
            return Err(Error::BitWidthNotInSet { bits, set: candidates.to_vec() });
        }
        Ok(QuantSpec { bits, role })
    }
}

/// Learnable activation clipping level, one per (layer, precision).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParam {
    pub alpha: f64,
}

impl ClipParam {
    pub const MIN: f64 = 1e-3;

    pub fn new(alpha: f64) -> Self {
        ClipParam { alpha }
    }

    /// Re-projects onto alpha > 0 after an optimizer step.
    pub fn project(&mut self) {
        if self.alpha < Self::MIN {
            self.alpha = Self::MIN;
        }
    }
}

fn levels(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// Snap `x` in [0,1] onto the uniform grid with `2^bits` levels:
/// `quantize_b(x) = round((2^b - 1) x) / (2^b - 1)`.
pub fn quantize_level(x: f64, bits: u32) -> Result<f64> {
    if bits == 0 {
        return Err(Error::InvalidArgument { op: "quantize_level", detail: "bits must be >= 1".into() });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument {
            op: "quantize_level",
            detail: format!("input {x} outside [0,1]; clip/normalize first"),
        });
    }
    let l = levels(bits);
    Ok((x * l).round() / l)
}

/// Result of quantizing a weight tensor onto its widest grid.
#[derive(Debug, Clone)]
pub struct QuantizedWeights {
    /// Integer codes in [0, 2^bits - 1], one per weight.
    pub codes: Vec<u32>,
    /// max |tanh(W)| at quantization time.
    pub norm_scale: f32,
    /// Dequantized values in [-1, 1].
    pub values: Tensor,
}

/// DoReFa weight quantization: normalize through tanh into [-1,1] and round
/// onto the `bits`-wide grid. Errors on an all-zero tensor, whose
/// normalization scale would vanish.
pub fn dorefa_quantize(w: &Tensor, bits: u32) -> Result<QuantizedWeights> {
    if w.is_empty() {
        return Err(Error::InvalidArgument { op: "dorefa_quantize", detail: "empty weight tensor".into() });
    }
    let t: Vec<f64> = w.data().iter().map(|&x| x.tanh()).collect();
    let scale = t.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if scale == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let l = levels(bits);
    let mut codes = Vec::with_capacity(t.len());
    let mut values = Vec::with_capacity(t.len());
    for &tv in &t {
        let u = tv / (2.0 * scale) + 0.5;
        let code = (u * l).round() as u32;
        codes.push(code);
        values.push(2.0 * (code as f64) / l - 1.0);
    }
    Ok(QuantizedWeights {
        codes,
        norm_scale: scale as f32,
        values: Tensor::new(w.shape().to_vec(), values)?,
    })
}

/// One layer's entry in an [`AnyPrecisionStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoredLayer {
    pub shape: Vec<usize>,
    /// Codes on the widest grid.
    pub codes: Vec<u32>,
    pub norm_scale: f32,
    /// Mean-alignment offset per lower width, parallel to the store's
    /// `lower_widths`.
    pub mean_offsets: Vec<f64>,
}

/// Per-layer integer weight codes at the widest quantized bit-width. Every
/// lower precision is obtained from these codes alone, by right-shifting the
/// discarded bits and adding the layer's mean-alignment offset; the
/// full-precision weights are not consulted.
#[derive(Debug, Clone, PartialEq)]
pub struct AnyPrecisionStore {
    /// Widest quantized width b1: the grid the codes live on.
    pub widest_bits: u32,
    /// Lower widths derivable by truncation, descending.
    pub lower_widths: Vec<u32>,
    pub layers: Vec<StoredLayer>,
}

impl AnyPrecisionStore {
    /// Quantizes each layer onto the widest grid and fixes the per-width
    /// mean-alignment offsets.
    pub fn build(weights: &[&Tensor], widest_bits: u32, lower_widths: &[u32]) -> Result<Self> {
        for &b in lower_widths {
            if b == 0 || b >= widest_bits {
                return Err(Error::InvalidArgument {
                    op: "any_precision_store",
                    detail: format!("lower width {b} must be in 1..{widest_bits}"),
                });
            }
        }
        let mut layers = Vec::with_capacity(weights.len());
        for w in weights {
            let q = dorefa_quantize(w, widest_bits)?;
            let widest_mean = q.values.mean();
            let mean_offsets = lower_widths
                .iter()
                .map(|&b| {
                    let pre = dequant_mean(&q.codes, widest_bits, b);
                    widest_mean - pre
                })
                .collect();
            layers.push(StoredLayer {
                shape: w.shape().to_vec(),
                codes: q.codes,
                norm_scale: q.norm_scale,
                mean_offsets,
            });
        }
        Ok(AnyPrecisionStore {
            widest_bits,
            lower_widths: lower_widths.to_vec(),
            layers,
        })
    }

    /// Dequantized weights of `layer` at width `bits`, touching only codes
    /// and offsets. `bits == widest_bits` is the identity grid (offset 0).
    pub fn dequantize(&self, layer: usize, bits: u32) -> Result<Tensor> {
        let entry = &self.layers[layer];
        if bits == self.widest_bits {
            let l = levels(bits);
            let data = entry.codes.iter().map(|&c| 2.0 * c as f64 / l - 1.0).collect();
            return Tensor::new(entry.shape.clone(), data);
        }
        let Some(pos) = self.lower_widths.iter().position(|&b| b == bits) else {
            let mut set = vec![self.widest_bits];
            set.extend_from_slice(&self.lower_widths);
            return Err(Error::BitWidthNotInSet { bits, set });
        };
        let offset = entry.mean_offsets[pos];
        let shift = self.widest_bits - bits;
        let l = levels(bits);
        let data = entry
            .codes
            .iter()
            .map(|&c| 2.0 * ((c >> shift) as f64) / l - 1.0 + offset)
            .collect();
        Tensor::new(entry.shape.clone(), data)
    }
}

fn dequant_mean(codes: &[u32], from_bits: u32, to_bits: u32) -> f64 {
    let shift = from_bits - to_bits;
    let l = levels(to_bits);
    let sum: f64 = codes.iter().map(|&c| 2.0 * ((c >> shift) as f64) / l - 1.0).fold(0.0, |a, x| a + x);
    sum / codes.len() as f64
}

/// PACT activation quantization on plain tensors (inference path):
/// `alpha * quantize_b(clip(x, 0, alpha) / alpha)`. `bits: None` clips
/// without rounding.
pub fn pact_quantize(x: &Tensor, alpha: f64, bits: Option<u32>) -> Tensor {
    let lv = bits.map(levels);
    x.map(|v| {
        let c = v.clamp(0.0, alpha);
        match lv {
            Some(l) => alpha * ((c / alpha * l).round() / l),
            None => c,
        }
    })
}

/// Training-time weight quantization on the tape: quantize to the widest
/// grid, truncate to `bits`, re-align the mean — all differentiable through
/// straight-through rounding. Errors if the layer normalization scale is zero.
pub fn quantize_weights_var(g: &mut Graph, w: Var, widest_bits: u32, bits: u32) -> Result<Var> {
    if bits > widest_bits || bits == 0 {
        return Err(Error::InvalidArgument {
            op: "quantize_weights_var",
            detail: format!("width {bits} not derivable from {widest_bits}-bit codes"),
        });
    }
    let t = g.tanh(w);
    let am = g.abs_max(t);
    if g.value(am).item() == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let am2 = g.mul_scalar(am, 2.0);
    let u0 = g.div_by(t, am2)?;
    let u = g.add_scalar(u0, 0.5);
    let q_widest = g.trunc_grid_ste(u, widest_bits, widest_bits)?;
    let w_widest = {
        let s = g.mul_scalar(q_widest, 2.0);
        g.add_scalar(s, -1.0)
    };
    if bits == widest_bits {
        return Ok(w_widest);
    }
    let q_low = g.trunc_grid_ste(u, widest_bits, bits)?;
    let w_low_pre = {
        let s = g.mul_scalar(q_low, 2.0);
        g.add_scalar(s, -1.0)
    };
    // E[W_b] is re-aligned with E[W_b1] by a scalar offset.
    let m_widest = g.mean(w_widest);
    let m_low = g.mean(w_low_pre);
    let offset = g.sub(m_widest, m_low)?;
    g.add_by(w_low_pre, offset)
}

/// Packs codes little-endian at `bits` bits per code.
pub fn pack_codes(codes: &[u32], bits: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity((codes.len() * bits as usize).div_ceil(8));
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &c in codes {
        acc |= u64::from(c) << filled;
        filled += bits;
        while filled >= 8 {
            out.push((acc & 0xff) as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push((acc & 0xff) as u8);
    }
    out
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<u32>> {
    let needed = (count * bits as usize).div_ceil(8);
    if bytes.len() < needed {
        return Err(Error::format("code array", format!("{} bytes, need {}", bytes.len(), needed)));
    }
    let mask = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut iter = bytes.iter();
    for _ in 0..count {
        while filled < bits {
            acc |= u64::from(*iter.next().unwrap()) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= bits;
        filled -= bits;
    }
    Ok(out)
}
