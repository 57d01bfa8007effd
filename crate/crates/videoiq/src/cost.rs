//! Analytic compute (FLOPs) and memory accounting for quantized networks.
//!
//! The quantization scaling rule: a layer with m-bit weights and n-bit
//! activations costs `(m * n) / 64` of its full-precision FLOPs, while the
//! 32-bit action is the unquantized path and anchors the factor at exactly 1
//! (substituting m = n = 32 into the rule would give 16, which is vacuous —
//! 32-bit means "not quantized", not "quantized to a 32-level grid"). This
//! normalization reproduces the published uniform-baseline costs: 4-bit =
//! 0.25x and 2-bit = 0.0625x of full precision. One multiply-accumulate
//! counts as one FLOP by default ([`FlopsConvention::MacIsOne`]); batch-norm,
//! activation and pooling element counts are excluded from the scaled total
//! and tracked in a separate overhead bucket.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Linear,
    BatchNorm,
    Activation,
    Pool,
    RecurrentCell,
}

/// Geometry of one layer, sufficient for FLOPs/parameter accounting.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel height x width (1x1 for non-conv layers).
    pub kernel: (usize, usize),
    /// Output spatial height x width (1x1 for vector layers).
    pub out_spatial: (usize, usize),
    pub quantizable: bool,
}

impl LayerSpec {
    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        out_spatial: usize,
        quantizable: bool,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            out_spatial: (out_spatial, out_spatial),
            quantizable,
        }
    }

    pub fn linear(in_features: usize, out_features: usize, quantizable: bool) -> Self {
        LayerSpec {
            kind: LayerKind::Linear,
            in_channels: in_features,
            out_channels: out_features,
            kernel: (1, 1),
            out_spatial: (1, 1),
            quantizable,
        }
    }

    pub fn batch_norm(channels: usize, out_spatial: usize) -> Self {
        LayerSpec {
            kind: LayerKind::BatchNorm,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            out_spatial: (out_spatial, out_spatial),
            quantizable: false,
        }
    }

    pub fn activation(channels: usize, out_spatial: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Activation,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            out_spatial: (out_spatial, out_spatial),
            quantizable: false,
        }
    }

    pub fn pool(channels: usize, out_spatial: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Pool,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            out_spatial: (out_spatial, out_spatial),
            quantizable: false,
        }
    }

    pub fn recurrent_cell(in_features: usize, hidden: usize) -> Self {
        LayerSpec {
            kind: LayerKind::RecurrentCell,
            in_channels: in_features,
            out_channels: hidden,
            kernel: (1, 1),
            out_spatial: (1, 1),
            quantizable: false,
        }
    }

    /// Weight parameter count (the part a weight quantizer applies to).
    pub fn weight_params(&self) -> u64 {
        match self.kind {
            LayerKind::Conv2d => {
                (self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1) as u64
            }
            LayerKind::Linear => (self.in_channels * self.out_channels) as u64 + self.out_channels as u64,
            LayerKind::RecurrentCell => {
                let (i, h) = (self.in_channels as u64, self.out_channels as u64);
                4 * h * (i + h) + 4 * h
            }
            LayerKind::BatchNorm | LayerKind::Activation | LayerKind::Pool => 0,
        }
    }

    /// Non-weight stored parameters (batch-norm affine plus running stats).
    pub fn aux_params(&self) -> u64 {
        match self.kind {
            LayerKind::BatchNorm => 4 * self.out_channels as u64,
            _ => 0,
        }
    }
}

/// How many FLOPs one multiply-accumulate counts as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopsConvention {
    MacIsOne,
    MacIsTwo,
}

impl FlopsConvention {
    fn factor(self) -> f64 {
        match self {
            FlopsConvention::MacIsOne => 1.0,
            FlopsConvention::MacIsTwo => 2.0,
        }
    }
}

/// Multiply-accumulate count of one layer, counted as FLOPs under
/// [`FlopsConvention::MacIsOne`]. Batch-norm/activation/pool return 0 here;
/// their element counts go to [`layer_overhead_flops`].
pub fn layer_flops(spec: &LayerSpec) -> f64 {
    let (oh, ow) = spec.out_spatial;
    match spec.kind {
        LayerKind::Conv2d => {
            (spec.kernel.0 * spec.kernel.1 * spec.in_channels * spec.out_channels * oh * ow) as f64
        }
        LayerKind::Linear => (spec.in_channels * spec.out_channels) as f64,
        LayerKind::RecurrentCell => {
            let (i, h) = (spec.in_channels as f64, spec.out_channels as f64);
            4.0 * h * (i + h)
        }
        LayerKind::BatchNorm | LayerKind::Activation | LayerKind::Pool => 0.0,
    }
}

/// Elementwise work excluded from the quantization scaling rule.
pub fn layer_overhead_flops(spec: &LayerSpec) -> f64 {
    let elems = (spec.out_channels * spec.out_spatial.0 * spec.out_spatial.1) as f64;
    match spec.kind {
        LayerKind::BatchNorm => 2.0 * elems,
        LayerKind::Activation | LayerKind::Pool => elems,
        _ => 0.0,
    }
}

/// Scales a layer's full-precision FLOPs to m-bit weights / n-bit
/// activations: factor (m*n)/64 for quantized widths, 1 for the unquantized
/// 32-bit path. 4/4 -> 0.25, 2/2 -> 0.0625.
pub fn quantized_layer_flops(base_flops: f64, weight_bits: u32, act_bits: u32) -> f64 {
    if weight_bits >= 32 && act_bits >= 32 {
        return base_flops;
    }
    base_flops * (weight_bits as f64 * act_bits as f64) / 64.0
}

/// Precomputed per-frame compute cost for every action, plus model memory.
#[derive(Debug, Clone)]
pub struct CostTable {
    /// Ordered action set (bit-widths; 0 = skip), as given.
    pub actions: Vec<u32>,
    /// Recognizer FLOPs per frame, aligned with `actions`.
    pub flops_per_frame: Vec<f64>,
    /// Non-MAC recognizer work per frame (batch-norm/activation/pool).
    pub non_mac_overhead_per_frame: f64,
    /// Full-precision policy network cost per frame (its low-resolution
    /// input is baked into the policy arch's spatial dims).
    pub policy_overhead_per_frame: f64,
    /// Stored model variants: (label, bytes).
    pub memory_bytes: Vec<(String, u64)>,
}

impl CostTable {
    pub fn flops_for_action(&self, action: u32) -> Result<f64> {
        self.actions
            .iter()
            .position(|&a| a == action)
            .map(|i| self.flops_per_frame[i])
            .ok_or(Error::BitWidthNotInSet { bits: action, set: self.actions.clone() })
    }

    /// Per-frame cost including the always-paid policy overhead.
    pub fn effective_flops_for_action(&self, action: u32) -> Result<f64> {
        Ok(self.flops_for_action(action)? + self.policy_overhead_per_frame)
    }
}

/// Builds the per-action cost table for a recognizer arch and policy arch.
/// Action 0 (skip) costs zero recognizer FLOPs.
pub fn model_cost_table(
    arch: &[LayerSpec],
    actions: &[u32],
    policy_arch: &[LayerSpec],
    convention: FlopsConvention,
) -> Result<CostTable> {
    if arch.is_empty() {
        return Err(Error::InvalidArgument { op: "model_cost_table", detail: "empty arch".into() });
    }
    let f = convention.factor();
    let mut flops_per_frame = Vec::with_capacity(actions.len());
    for &a in actions {
        if a == 0 {
            flops_per_frame.push(0.0);
            continue;
        }
        let mut total = 0.0;
        for spec in arch {
            let base = layer_flops(spec) * f;
            total += if spec.quantizable { quantized_layer_flops(base, a, a) } else { base };
        }
        flops_per_frame.push(total);
    }
    let non_mac: f64 = arch.iter().map(layer_overhead_flops).sum();
    let policy_overhead: f64 = policy_arch
        .iter()
        .map(|s| layer_flops(s) * f + layer_overhead_flops(s))
        .sum();

    // Sanity: cost must grow with precision.
    let mut sorted: Vec<(u32, f64)> = actions.iter().copied().zip(flops_per_frame.iter().copied()).collect();
    sorted.sort_by_key(|&(a, _)| a);
    for pair in sorted.windows(2) {
        if pair[1].1 < pair[0].1 {
            return Err(Error::InvalidArgument {
                op: "model_cost_table",
                detail: format!("cost not monotone: {:?} vs {:?}", pair[0], pair[1]),
            });
        }
    }

    Ok(CostTable {
        actions: actions.to_vec(),
        flops_per_frame,
        non_mac_overhead_per_frame: non_mac,
        policy_overhead_per_frame: policy_overhead,
        memory_bytes: Vec::new(),
    })
}

/// A stored model variant for memory accounting.
#[derive(Debug, Clone)]
pub enum ModelVariant {
    /// Every quantizable weight stored at `bits`; everything else at 32-bit.
    Uniform { bits: u32 },
    /// Full-precision weights plus the truncation code store, one extra
    /// batch-norm bank and clip set per additional precision, and the policy
    /// network parameters.
    AnyPrecision { widest_bits: u32, num_precisions: usize, clip_params: u64, policy_params: u64 },
}

/// Storage for parameters, in bytes.
pub fn memory_footprint(arch: &[LayerSpec], variant: &ModelVariant) -> u64 {
    let quant_w: u64 = arch.iter().filter(|s| s.quantizable).map(|s| s.weight_params()).sum();
    let fp_w: u64 = arch.iter().filter(|s| !s.quantizable).map(|s| s.weight_params()).sum();
    let aux: u64 = arch.iter().map(|s| s.aux_params()).sum();
    match *variant {
        ModelVariant::Uniform { bits } => {
            (quant_w * bits as u64).div_ceil(8) + 4 * (fp_w + aux)
        }
        ModelVariant::AnyPrecision { widest_bits, num_precisions, clip_params, policy_params } => {
            let fp_all = 4 * (quant_w + fp_w + aux);
            let codes = (quant_w * widest_bits as u64).div_ceil(8);
            let extra_banks = 4 * aux * (num_precisions.saturating_sub(1) as u64);
            let clips = 4 * clip_params * num_precisions as u64;
            fp_all + codes + extra_banks + clips + 4 * policy_params
        }
    }
}

/// ResNet-18 at 224x224 input, for cost accounting only (never executed).
/// `quantize_all` marks every compute layer quantizable, matching how the
/// published uniform-baseline numbers scale; with it off, the first conv and
/// the classifier stay full-precision like an executable recognizer.
pub fn resnet18_spec(num_classes: usize, quantize_all: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let conv = |cin, cout, k, sp, q: bool| LayerSpec::conv2d(cin, cout, k, sp, q);
    layers.push(conv(3, 64, 7, 112, quantize_all));
    layers.push(LayerSpec::batch_norm(64, 112));
    layers.push(LayerSpec::activation(64, 112));
    layers.push(LayerSpec::pool(64, 56));
    // (in, out, spatial, downsample 1x1 present)
    let stages: [(usize, usize, usize, bool); 4] =
        [(64, 64, 56, false), (64, 128, 28, true), (128, 256, 14, true), (256, 512, 7, true)];
    for &(cin, cout, sp, down) in &stages {
        // block 1
        layers.push(conv(cin, cout, 3, sp, true));
        layers.push(LayerSpec::batch_norm(cout, sp));
        layers.push(LayerSpec::activation(cout, sp));
        layers.push(conv(cout, cout, 3, sp, true));
        layers.push(LayerSpec::batch_norm(cout, sp));
        if down {
            layers.push(conv(cin, cout, 1, sp, true));
            layers.push(LayerSpec::batch_norm(cout, sp));
        }
        layers.push(LayerSpec::activation(cout, sp));
        // block 2
        layers.push(conv(cout, cout, 3, sp, true));
        layers.push(LayerSpec::batch_norm(cout, sp));
        layers.push(LayerSpec::activation(cout, sp));
        layers.push(conv(cout, cout, 3, sp, true));
        layers.push(LayerSpec::batch_norm(cout, sp));
        layers.push(LayerSpec::activation(cout, sp));
    }
    layers.push(LayerSpec::pool(512, 1));
    layers.push(LayerSpec::linear(512, num_classes, quantize_all));
    layers
}

/// One row of a rendered cost report.
#[derive(Debug, Clone)]
pub struct CostReportRow {
    pub label: String,
    pub gflops_per_video: f64,
    pub ratio_to_fp: f64,
    pub memory_mib: f64,
}

/// Table-1-style cost report: uniform 32/4/2-bit rows for `frames` frames.
pub fn uniform_cost_report(
    arch: &[LayerSpec],
    frames: usize,
    convention: FlopsConvention,
) -> Result<Vec<CostReportRow>> {
    let table = model_cost_table(arch, &[32, 4, 2], &[], convention)?;
    let fp = table.flops_for_action(32)? * frames as f64;
    let mut rows = Vec::new();
    for &bits in &[32u32, 4, 2] {
        let flops = table.flops_for_action(bits)? * frames as f64;
        let mem = memory_footprint(arch, &ModelVariant::Uniform { bits });
        rows.push(CostReportRow {
            label: format!("Uniform ({bits}-bit)"),
            gflops_per_video: flops / 1e9,
            ratio_to_fp: flops / fp,
            memory_mib: mem as f64 / (1024.0 * 1024.0),
        });
    }
    Ok(rows)
}

pub fn render_report_text(rows: &[CostReportRow]) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<18} {:>14} {:>10} {:>12}\n", "model", "GFLOPs/video", "ratio", "memory MiB"));
    for r in rows {
        s.push_str(&format!(
            "{:<18} {:>14.2} {:>10.4} {:>12.2}\n",
            r.label, r.gflops_per_video, r.ratio_to_fp, r.memory_mib
        ));
    }
    s
}

pub fn render_report_csv(rows: &[CostReportRow]) -> String {
    let mut s = String::from("model,gflops_per_video,ratio_to_fp,memory_mib\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.label, r.gflops_per_video, r.ratio_to_fp, r.memory_mib));
    }
    s
}
