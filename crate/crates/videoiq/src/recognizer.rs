//! The any-precision recognition network.
//!
//! A compact per-frame classifier: four conv-BN-act blocks with stride-2
//! downsampling, global average pooling and a linear head. One shared set of
//! conv weights executes at every candidate precision; each precision owns a
//! separate batch-norm bank and clip (alpha) set to absorb the activation
//! statistics shift between precisions. The input, the first conv and the
//! classifier head are never quantized. At 32-bit the network runs the
//! unquantized weights with clip-only activations; at lower widths weights
//! are quantized live during training or dequantized from the truncation
//! code store during inference, and activations go through PACT.
//!
//! Video-level predictions average per-frame softmax probabilities over the
//! non-skipped frames; a fully skipped video falls back to the uniform
//! distribution.

use crate::cost::LayerSpec;
use crate::error::{Error, Result};
use crate::graph::{BnMode, Graph, Var};
use crate::kernels::{self, Conv2dGeom};
use crate::quant::{self, AnyPrecisionStore, ClipParam};
use crate::tensor::Tensor;
use rand::Rng;

pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub channels: [usize; NUM_BLOCKS],
    pub num_classes: usize,
    /// Candidate bit-widths B, descending, 32 first (the skip action is not
    /// a width and lives in the policy's action space).
    pub widths: Vec<u32>,
    pub alpha_init: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            input_h: 32,
            input_w: 32,
            channels: [16, 32, 64, 128],
            num_classes: 4,
            widths: vec![32, 4, 2],
            alpha_init: 4.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl RecognizerConfig {
    pub fn teacher(mut self) -> Self {
        self.widths = vec![32];
        self
    }

    /// Widest quantized width b1: the grid the code store lives on.
    pub fn widest_quantized(&self) -> u32 {
        self.widths.iter().copied().filter(|&b| b != 32).max().unwrap_or(32)
    }

    /// Spatial side after each stride-2 block.
    fn spatials(&self) -> [usize; NUM_BLOCKS] {
        let mut s = self.input_h;
        let mut out = [0; NUM_BLOCKS];
        for o in out.iter_mut() {
            s /= 2;
            *o = s;
        }
        out
    }

    /// Layer list for cost accounting. First conv and head stay
    /// full-precision, like the executable network.
    pub fn cost_spec(&self) -> Vec<LayerSpec> {
        let sp = self.spatials();
        let mut layers = Vec::new();
        let mut cin = 1;
        for (i, (&c, &s)) in self.channels.iter().zip(sp.iter()).enumerate() {
            layers.push(LayerSpec::conv2d(cin, c, 3, s, i != 0));
            layers.push(LayerSpec::batch_norm(c, s));
            layers.push(LayerSpec::activation(c, s));
            cin = c;
        }
        layers.push(LayerSpec::pool(self.channels[NUM_BLOCKS - 1], 1));
        layers.push(LayerSpec::linear(self.channels[NUM_BLOCKS - 1], self.num_classes, false));
        layers
    }
}

/// One precision's batch-norm parameters and running statistics for one
/// block.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBank {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnBank {
    fn identity(channels: usize) -> Self {
        BnBank {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// T frames plus one class label. The policy-resolution copies are exact
/// box-downsamples of the recognizer-resolution frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub label: usize,
    /// T frames at recognizer resolution, each (H, W).
    pub frames: Vec<Tensor>,
    /// T frames at policy resolution, each (h, w).
    pub policy_frames: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionNet {
    pub cfg: RecognizerConfig,
    /// Live full-precision conv kernels (shared across precisions; also the
    /// 32-bit execution path).
    pub convs: Vec<Tensor>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    /// [width index][block index].
    pub bn_banks: Vec<Vec<BnBank>>,
    /// [width index][block index].
    pub clips: Vec<Vec<ClipParam>>,
    /// Truncation code store, built once stage-1 training completes.
    pub store: Option<AnyPrecisionStore>,
    pub is_teacher: bool,
}

/// Graph handles for one forward pass at one precision.
pub struct RecognizerVars {
    pub convs: Vec<Var>,
    pub head_w: Var,
    pub head_b: Var,
    pub gammas: Vec<Var>,
    pub betas: Vec<Var>,
    pub alphas: Vec<Var>,
    /// Training-mode batch-norm nodes, for running-stat updates.
    pub bn_nodes: Vec<Option<Var>>,
}

impl RecognitionNet {
    pub fn new(cfg: RecognizerConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(NUM_BLOCKS);
        let mut cin = 1;
        for &c in &cfg.channels {
            let fan_in = 9 * cin;
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = c * cin * 9;
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            convs.push(Tensor::new(vec![c, cin, 3, 3], data).unwrap());
            cin = c;
        }
        let top = cfg.channels[NUM_BLOCKS - 1];
        let bound = (6.0 / top as f64).sqrt();
        let head_w = Tensor::new(
            vec![top, cfg.num_classes],
            (0..top * cfg.num_classes).map(|_| rng.random_range(-bound..bound)).collect(),
        )
        .unwrap();
        let head_b = Tensor::zeros(&[cfg.num_classes]);
        let bn_banks = cfg
            .widths
            .iter()
            .map(|_| cfg.channels.iter().map(|&c| BnBank::identity(c)).collect())
            .collect();
        let clips = cfg
            .widths
            .iter()
            .map(|_| (0..NUM_BLOCKS).map(|_| ClipParam::new(cfg.alpha_init)).collect())
            .collect();
        RecognitionNet {
            cfg,
            convs,
            head_w,
            head_b,
            bn_banks,
            clips,
            store: None,
            is_teacher: false,
        }
    }

    pub fn new_teacher(cfg: RecognizerConfig, rng: &mut impl Rng) -> Self {
        let mut net = RecognitionNet::new(cfg.teacher(), rng);
        net.is_teacher = true;
        net
    }

    /// Any-precision student initialized from a trained teacher: shared
    /// weights copied, the teacher's single bank and clip set replicated
    /// into every precision's bank.
    pub fn from_teacher(teacher: &RecognitionNet, widths: Vec<u32>) -> Self {
        let cfg = RecognizerConfig { widths: widths.clone(), ..teacher.cfg.clone() };
        let bn_banks = widths.iter().map(|_| teacher.bn_banks[0].clone()).collect();
        let clips = widths.iter().map(|_| teacher.clips[0].clone()).collect();
        RecognitionNet {
            cfg,
            convs: teacher.convs.clone(),
            head_w: teacher.head_w.clone(),
            head_b: teacher.head_b.clone(),
            bn_banks,
            clips,
            store: None,
            is_teacher: false,
        }
    }

    pub fn width_index(&self, width: u32) -> Result<usize> {
        self.cfg
            .widths
            .iter()
            .position(|&b| b == width)
            .ok_or(Error::BitWidthNotInSet { bits: width, set: self.cfg.widths.clone() })
    }

    /// Quantizes the shared weights onto the widest grid and freezes the
    /// truncation store used by the inference path.
    pub fn build_store(&mut self) -> Result<()> {
        let widest = self.cfg.widest_quantized();
        let lower: Vec<u32> =
            self.cfg.widths.iter().copied().filter(|&b| b != 32 && b != widest).collect();
        let quantized: Vec<&Tensor> = self.convs[1..].iter().collect();
        self.store = Some(AnyPrecisionStore::build(&quantized, widest, &lower)?);
        Ok(())
    }

    /// Loads one precision's parameter set onto a graph. Only the selected
    /// bank and clip set appear; other precisions' parameters stay off-tape.
    pub fn vars_for_width(&self, g: &mut Graph, width: u32, trainable: bool) -> Result<RecognizerVars> {
        let wi = self.width_index(width)?;
        let mut load = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let convs = self.convs.iter().map(&mut load).collect();
        let head_w = load(&self.head_w);
        let head_b = load(&self.head_b);
        let gammas = self.bn_banks[wi].iter().map(|b| load(&b.gamma)).collect();
        let betas = self.bn_banks[wi].iter().map(|b| load(&b.beta)).collect();
        let alphas = self.clips[wi].iter().map(|c| load(&Tensor::scalar(c.alpha))).collect();
        Ok(RecognizerVars {
            convs,
            head_w,
            head_b,
            gammas,
            betas,
            alphas,
            bn_nodes: vec![None; NUM_BLOCKS],
        })
    }

    /// Tape forward of a frame batch (N,1,H,W) at one precision. Training
    /// mode uses batch statistics (saved on `vars.bn_nodes` for running-stat
    /// updates); otherwise the bank's running statistics apply.
    pub fn forward_frames_var(
        &self,
        g: &mut Graph,
        vars: &mut RecognizerVars,
        frames: Var,
        width: u32,
        bn_train: bool,
    ) -> Result<Var> {
        if width == 0 {
            return Err(Error::InvalidArgument {
                op: "forward_frame",
                detail: "skip (width 0) executes nothing; handle it at the video level".into(),
            });
        }
        let wi = self.width_index(width)?;
        let widest = self.cfg.widest_quantized();
        let shape = g.value(frames).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.cfg.input_h || shape[3] != self.cfg.input_w
        {
            return Err(Error::shape(
                "forward_frame",
                format!("expected (N,1,{},{}), got {:?}", self.cfg.input_h, self.cfg.input_w, shape),
            ));
        }
        let mut x = frames;
        for block in 0..NUM_BLOCKS {
            // first conv stays full-precision
            let w = if block == 0 || width == 32 {
                vars.convs[block]
            } else {
                quant::quantize_weights_var(g, vars.convs[block], widest, width)?
            };
            let conv = g.conv2d(x, w, 2, 1)?;
            let mode = if bn_train {
                BnMode::Train
            } else {
                let bank = &self.bn_banks[wi][block];
                BnMode::Eval { mean: bank.running_mean.clone(), var: bank.running_var.clone() }
            };
            let bn = g.batch_norm(conv, vars.gammas[block], vars.betas[block], self.cfg.bn_eps, mode)?;
            if bn_train {
                vars.bn_nodes[block] = Some(bn);
            }
            // activations feeding quantized convs are PACT-rounded; the last
            // block (feeding the unquantized head) and the 32-bit path clip only
            let bits = if width != 32 && block + 1 < NUM_BLOCKS { Some(width) } else { None };
            x = g.pact(bn, vars.alphas[block], bits)?;
        }
        let pooled = g.global_avg_pool(x)?;
        let lin = g.matmul(pooled, vars.head_w)?;
        g.add_row_vec(lin, vars.head_b)
    }

    /// Weights a pure forward executes at `width` for quantized block
    /// `block` (1-based into convs).
    fn inference_weights(&self, block: usize, width: u32) -> Result<Tensor> {
        if width == 32 || block == 0 {
            return Ok(self.convs[block].clone());
        }
        match &self.store {
            Some(store) => store.dequantize(block - 1, width),
            None => Err(Error::InvalidArgument {
                op: "forward_frame",
                detail: format!("no code store built; cannot execute at {width}-bit"),
            }),
        }
    }

    /// Inference forward of a frame batch (N,1,H,W): logits (N, classes).
    /// Quantized widths read the truncation store only; the full-precision
    /// weights are not touched.
    pub fn forward_frames(&self, frames: &Tensor, width: u32) -> Result<Tensor> {
        if width == 0 {
            return Err(Error::InvalidArgument {
                op: "forward_frame",
                detail: "skip (width 0) executes nothing; handle it at the video level".into(),
            });
        }
        let wi = self.width_index(width)?;
        let shape = frames.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.cfg.input_h || shape[3] != self.cfg.input_w
        {
            return Err(Error::shape(
                "forward_frame",
                format!("expected (N,1,{},{}), got {:?}", self.cfg.input_h, self.cfg.input_w, shape),
            ));
        }
        let n = shape[0];
        let mut x = frames.clone();
        let mut side = self.cfg.input_h;
        let mut cin = 1;
        for block in 0..NUM_BLOCKS {
            let w = self.inference_weights(block, width)?;
            let c = self.cfg.channels[block];
            let geom = Conv2dGeom {
                batch: n,
                in_ch: cin,
                in_h: side,
                in_w: side,
                out_ch: c,
                k_h: 3,
                k_w: 3,
                stride: 2,
                pad: 1,
            };
            let conv = kernels::conv2d(x.data(), w.data(), &geom);
            side = geom.out_h();
            let bank = &self.bn_banks[wi][block];
            let bn = kernels::batchnorm_inference(
                &conv,
                n,
                c,
                side * side,
                &bank.running_mean,
                &bank.running_var,
                bank.gamma.data(),
                bank.beta.data(),
                self.cfg.bn_eps,
            );
            let bits = if width != 32 && block + 1 < NUM_BLOCKS { Some(width) } else { None };
            let alpha = self.clips[wi][block].alpha;
            let bn_t = Tensor::new(vec![n, c, side, side], bn)?;
            x = quant::pact_quantize(&bn_t, alpha, bits);
            cin = c;
        }
        let pooled = kernels::global_avg_pool(x.data(), n, cin, side * side);
        let m = self.cfg.num_classes;
        let mut logits = kernels::matmul(&pooled, self.head_w.data(), n, cin, m);
        for r in 0..n {
            for j in 0..m {
                logits[r * m + j] += self.head_b.data()[j];
            }
        }
        Tensor::matrix(n, m, logits)
    }

    /// Single-frame logits at one precision.
    pub fn forward_frame(&self, frame: &Tensor, width: u32) -> Result<Vec<f64>> {
        let batched = frame.reshape(vec![1, 1, self.cfg.input_h, self.cfg.input_w])?;
        Ok(self.forward_frames(&batched, width)?.into_data())
    }

    /// Video-level probabilities: mean of per-frame softmax vectors over the
    /// frames whose action is not skip. An all-skip video returns the
    /// uniform distribution.
    pub fn forward_video(&self, frames: &[Tensor], actions: &[u32]) -> Result<Vec<f64>> {
        if frames.len() != actions.len() {
            return Err(Error::shape(
                "forward_video",
                format!("{} frames vs {} actions", frames.len(), actions.len()),
            ));
        }
        let m = self.cfg.num_classes;
        let mut acc = vec![0.0; m];
        let mut used = 0usize;
        for (frame, &a) in frames.iter().zip(actions) {
            if a == 0 {
                continue;
            }
            let logits = self.forward_frame(frame, a)?;
            let p = kernels::softmax_rows(&logits, 1, m);
            for (s, &v) in acc.iter_mut().zip(&p) {
                *s += v;
            }
            used += 1;
        }
        if used == 0 {
            return Ok(vec![1.0 / m as f64; m]);
        }
        for s in acc.iter_mut() {
            *s /= used as f64;
        }
        Ok(acc)
    }

    /// Soft targets from a frozen full-precision teacher: the all-32 video
    /// prediction.
    pub fn teacher_probs(&self, frames: &[Tensor]) -> Result<Vec<f64>> {
        self.forward_video(frames, &vec![32; frames.len()])
    }

    /// Updates the running statistics of one precision's bank from the batch
    /// statistics saved on a training forward.
    pub fn update_running_stats(&mut self, g: &Graph, vars: &RecognizerVars, width: u32) -> Result<()> {
        let wi = self.width_index(width)?;
        let mom = self.cfg.bn_momentum;
        for (block, node) in vars.bn_nodes.iter().enumerate() {
            let Some(v) = node else { continue };
            let (mean, var) = g
                .bn_batch_stats(*v)
                .ok_or_else(|| Error::InvalidArgument { op: "update_running_stats", detail: "not a training batch-norm node".into() })?;
            let bank = &mut self.bn_banks[wi][block];
            for (r, &b) in bank.running_mean.iter_mut().zip(mean) {
                *r = (1.0 - mom) * *r + mom * b;
            }
            for (r, &b) in bank.running_var.iter_mut().zip(var) {
                *r = (1.0 - mom) * *r + mom * b;
            }
        }
        Ok(())
    }

    /// Shared trainable tensors (conv kernels and head), in a fixed order.
    pub fn shared_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.convs.iter_mut().collect();
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn shared_params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.convs.iter().collect();
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn param_count(&self) -> u64 {
        let shared: u64 = self.shared_params().iter().map(|t| t.len() as u64).sum();
        let banks: u64 = self
            .bn_banks
            .iter()
            .flatten()
            .map(|b| (b.gamma.len() + b.beta.len() + b.running_mean.len() + b.running_var.len()) as u64)
            .sum();
        let clips: u64 = (self.clips.len() * NUM_BLOCKS) as u64;
        shared + banks + clips
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![32, 32], (0..1024).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn trained_like_net(seed: u64) -> RecognitionNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = RecognitionNet::new(RecognizerConfig::default(), &mut rng);
        // make running stats non-trivial so eval BN is exercised
        for banks in net.bn_banks.iter_mut() {
            for (i, b) in banks.iter_mut().enumerate() {
                for (j, r) in b.running_mean.iter_mut().enumerate() {
                    *r = 0.01 * (i + 1) as f64 * (j % 5) as f64;
                }
                for (j, r) in b.running_var.iter_mut().enumerate() {
                    *r = 1.0 + 0.05 * ((i + j) % 3) as f64;
                }
            }
        }
        net.build_store().unwrap();
        net
    }

    #[test]
    fn logits_have_class_dimension() {
        let net = trained_like_net(0);
        let out = net.forward_frame(&frame(1), 32).unwrap();
        assert_eq!(out.len(), net.cfg.num_classes);
    }

    #[test]
    fn skip_width_is_rejected_per_frame() {
        let net = trained_like_net(0);
        assert!(net.forward_frame(&frame(1), 0).is_err());
        assert!(net.forward_frame(&frame(1), 16).is_err());
    }

    #[test]
    fn store_and_live_forward_agree() {
        // inference-mode forward (store) vs tape forward with frozen weights
        // (live quantization), both on the bank's running statistics.
        let net = trained_like_net(3);
        let f = frame(7);
        for &b in &[4u32, 2] {
            let store_logits = net.forward_frame(&f, b).unwrap();
            let mut g = Graph::new();
            let mut vars = net.vars_for_width(&mut g, b, false).unwrap();
            let fv = g.constant(f.reshape(vec![1, 1, 32, 32]).unwrap());
            let out = net.forward_frames_var(&mut g, &mut vars, fv, b, false).unwrap();
            let live = g.value(out).data();
            for (s, l) in store_logits.iter().zip(live) {
                assert!((s - l).abs() < 1e-5, "{b}-bit: {s} vs {l}");
            }
        }
    }

    #[test]
    fn teacher_initialized_student_matches_at_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let teacher = RecognitionNet::new_teacher(RecognizerConfig::default(), &mut rng);
        let student = RecognitionNet::from_teacher(&teacher, vec![32, 4, 2]);
        let f = frame(9);
        assert_eq!(teacher.forward_frame(&f, 32).unwrap(), student.forward_frame(&f, 32).unwrap());
    }

    #[test]
    fn quantized_paths_ignore_full_precision_weights() {
        // mutating the live copies of the quantized layers must not change
        // store-backed forwards (they read codes only), and must change the
        // 32-bit forward. The first conv is unquantized by design and reads
        // its live weights at every precision.
        let mut net = trained_like_net(11);
        let f = frame(13);
        let before_2 = net.forward_frame(&f, 2).unwrap();
        let before_4 = net.forward_frame(&f, 4).unwrap();
        let before_32 = net.forward_frame(&f, 32).unwrap();
        for w in net.convs[1..].iter_mut() {
            for v in w.data_mut() {
                *v += 0.37;
            }
        }
        assert_eq!(net.forward_frame(&f, 2).unwrap(), before_2);
        assert_eq!(net.forward_frame(&f, 4).unwrap(), before_4);
        assert_ne!(net.forward_frame(&f, 32).unwrap(), before_32);
    }

    #[test]
    fn shared_weight_mutation_changes_live_paths() {
        // without a store, every precision executes from the same live
        // weights; a single mutation shifts them all.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = RecognitionNet::new(RecognizerConfig::default(), &mut rng);
        let f = frame(23);
        let mut g = Graph::new();
        let mut before = Vec::new();
        for &b in &[32u32, 4, 2] {
            let mut vars = net.vars_for_width(&mut g, b, false).unwrap();
            let fv = g.constant(f.reshape(vec![1, 1, 32, 32]).unwrap());
            let out = net.forward_frames_var(&mut g, &mut vars, fv, b, false).unwrap();
            before.push(g.value(out).data().to_vec());
        }
        net.convs[1].data_mut()[0] += 1.5;
        let mut g = Graph::new();
        for (i, &b) in [32u32, 4, 2].iter().enumerate() {
            let mut vars = net.vars_for_width(&mut g, b, false).unwrap();
            let fv = g.constant(f.reshape(vec![1, 1, 32, 32]).unwrap());
            let out = net.forward_frames_var(&mut g, &mut vars, fv, b, false).unwrap();
            assert_ne!(g.value(out).data(), before[i].as_slice(), "width {b} unaffected");
        }
    }

    #[test]
    fn video_probs_average_non_skipped_frames() {
        let net = trained_like_net(17);
        let frames = vec![frame(1), frame(2), frame(3)];
        let m = net.cfg.num_classes;

        // one non-skipped frame: video prediction equals that frame's
        let solo = net.forward_video(&frames, &[0, 4, 0]).unwrap();
        let direct = kernels::softmax_rows(&net.forward_frame(&frames[1], 4).unwrap(), 1, m);
        assert_eq!(solo, direct);

        // all-skip: uniform fallback
        let skipped = net.forward_video(&frames, &[0, 0, 0]).unwrap();
        assert_eq!(skipped, vec![0.25; 4]);

        // permutation invariance given fixed per-frame actions
        let a = net.forward_video(&frames, &[32, 4, 2]).unwrap();
        let rev: Vec<Tensor> = frames.iter().rev().cloned().collect();
        let b = net.forward_video(&rev, &[2, 4, 32]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn per_frame_logits_independent_of_surrounding_actions() {
        let net = trained_like_net(19);
        let f = frame(29);
        let alone = net.forward_frame(&f, 2).unwrap();
        // same frame inside a longer video, different neighbors
        let again = net.forward_frame(&f, 2).unwrap();
        assert_eq!(alone, again);
    }

    #[test]
    fn teacher_probs_sum_to_one() {
        let net = trained_like_net(31);
        let frames = vec![frame(41), frame(42)];
        let p = net.teacher_probs(&frames).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bank_isolation_on_running_stat_update() {
        let mut net = trained_like_net(37);
        let other_banks_before: Vec<Vec<BnBank>> =
            vec![net.bn_banks[0].clone(), net.bn_banks[2].clone()];
        let f = frame(43).reshape(vec![1, 1, 32, 32]).unwrap();
        let mut g = Graph::new();
        let mut vars = net.vars_for_width(&mut g, 4, false).unwrap();
        let fv = g.constant(f);
        net.forward_frames_var(&mut g, &mut vars, fv, 4, true).unwrap();
        net.update_running_stats(&g, &vars, 4).unwrap();
        assert_eq!(net.bn_banks[0], other_banks_before[0], "32-bit bank touched");
        assert_eq!(net.bn_banks[2], other_banks_before[1], "2-bit bank touched");
    }

    #[test]
    fn toy_arch_is_about_100k_params() {
        let spec = RecognizerConfig::default().cost_spec();
        let params: u64 = spec.iter().map(|l| l.weight_params() + l.aux_params()).sum();
        assert!((90_000..120_000).contains(&params), "{params} params");
    }
}
