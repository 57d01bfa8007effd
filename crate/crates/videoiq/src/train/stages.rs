//! The three training loops and the policy-objective builder.

use super::{clip_global_norm, params_hash, stream_seed, Sgd, SgdUpdate, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::losses::{
    self, balance_loss, ce_loss, combine_policy_losses, efficiency_loss_soft, entropy_loss,
    kd_loss, BalanceForm, PolicyLossTerms,
};
use crate::policy::{
    gumbel_noise, gumbel_sample_var, temperature_at, ActionSpace, PolicyNet, PolicyVars,
    TempSchedule,
};
use crate::recognizer::{RecognitionNet, RecognizerConfig, VideoSample};
use crate::tensor::Tensor;
use crate::cost::CostTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-epoch loss rows, rendered as the training-log CSV.
#[derive(Debug, Clone, Default)]
pub struct StageLog {
    pub header: String,
    pub rows: Vec<String>,
}

impl StageLog {
    fn new(header: &str) -> Self {
        StageLog { header: header.to_string(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.clone();
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Last `n` rows, stored into checkpoints.
    pub fn tail(&self, n: usize) -> Vec<String> {
        self.rows.iter().rev().take(n).rev().cloned().collect()
    }
}

/// Stacks videos' frames into one (V*T, 1, S, S) batch, video-major.
pub fn frames_batch(videos: &[&VideoSample], policy_res: bool) -> Tensor {
    let source = |v: &VideoSample| if policy_res { &v.policy_frames } else { &v.frames };
    let side = source(videos[0])[0].shape()[0];
    let t = source(videos[0]).len();
    let mut data = Vec::with_capacity(videos.len() * t * side * side);
    for v in videos {
        for f in source(v) {
            data.extend_from_slice(f.data());
        }
    }
    Tensor::new(vec![videos.len() * t, 1, side, side], data).unwrap()
}

/// One frame index across videos: (V, 1, s, s).
fn frame_slab(videos: &[&VideoSample], frame: usize, policy_res: bool) -> Tensor {
    let source = |v: &VideoSample| if policy_res { &v.policy_frames } else { &v.frames };
    let side = source(videos[0])[0].shape()[0];
    let mut data = Vec::with_capacity(videos.len() * side * side);
    for v in videos {
        data.extend_from_slice(source(v)[frame].data());
    }
    Tensor::new(vec![videos.len(), 1, side, side], data).unwrap()
}

/// Video-level probabilities for a batch of videos at one uniform width,
/// through the pure inference path.
pub fn video_probs_batched(
    net: &RecognitionNet,
    videos: &[&VideoSample],
    width: u32,
) -> Result<Vec<Vec<f64>>> {
    let frames = frames_batch(videos, false);
    let logits = net.forward_frames(&frames, width)?;
    let m = net.cfg.num_classes;
    let t = videos[0].frames.len();
    let probs = kernels::softmax_rows(logits.data(), videos.len() * t, m);
    let mut out = Vec::with_capacity(videos.len());
    for v in 0..videos.len() {
        let mut acc = vec![0.0; m];
        for i in 0..t {
            let row = &probs[(v * t + i) * m..(v * t + i + 1) * m];
            for (a, &p) in acc.iter_mut().zip(row) {
                *a += p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= t as f64);
        out.push(acc);
    }
    Ok(out)
}

/// Frozen-teacher soft targets for every video, computed once per stage.
pub fn teacher_probs_all(teacher: &RecognitionNet, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.videos.len());
    for chunk in data.videos.chunks(32) {
        let refs: Vec<&VideoSample> = chunk.iter().collect();
        out.extend(video_probs_batched(teacher, &refs, 32)?);
    }
    Ok(out)
}

fn batch_teacher_tensor(probs: &[Vec<f64>], indices: &[usize], m: usize) -> Tensor {
    let mut data = Vec::with_capacity(indices.len() * m);
    for &i in indices {
        data.extend_from_slice(&probs[i]);
    }
    Tensor::matrix(indices.len(), m, data).unwrap()
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Scalar momentum buffers for the clip values, which are not tensors.
#[derive(Debug, Clone, Default)]
struct AlphaMomentum(Vec<f64>);

impl AlphaMomentum {
    fn step(
        &mut self,
        momentum: f64,
        alphas: &mut [crate::quant::ClipParam],
        grads: &[f64],
        lr: f64,
        wd: f64,
    ) {
        if self.0.is_empty() {
            self.0 = vec![0.0; alphas.len()];
        }
        for ((v, a), &g) in self.0.iter_mut().zip(alphas.iter_mut()).zip(grads) {
            *v = momentum * *v + g + wd * a.alpha;
            a.alpha -= lr * *v;
            a.project();
        }
    }
}

// ── stage 0: teacher ────────────────────────────────────────────────

/// Trains the full-precision teacher with plain cross-entropy over all-32
/// video predictions.
pub fn train_teacher(
    cfg: &TrainConfig,
    data: &Dataset,
    rec_cfg: &RecognizerConfig,
) -> Result<(RecognitionNet, StageLog)> {
    cfg.validate(&[32])?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1, 0));
    let teacher_cfg = RecognizerConfig { alpha_init: cfg.alpha_init, ..rec_cfg.clone() };
    let mut net = RecognitionNet::new_teacher(teacher_cfg, &mut rng);
    let mut sgd = Sgd::new(cfg.momentum);
    let mut alpha_m = AlphaMomentum::default();
    let clip32 = cfg.clip_setting(32).unwrap();
    let t = data.spec.frames_per_video;
    let mut log = StageLog::new("epoch,ce");

    for epoch in 0..cfg.teacher_epochs {
        let lr = cfg.lr_at(cfg.teacher_lr, epoch, cfg.teacher_epochs);
        let order = shuffled_indices(data.videos.len(), stream_seed(cfg.seed, 2, epoch));
        let mut epoch_ce = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let videos: Vec<&VideoSample> = chunk.iter().map(|&i| &data.videos[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
            let frames = frames_batch(&videos, false);

            let mut g = Graph::new();
            let mut vars = net.vars_for_width(&mut g, 32, true)?;
            let fv = g.constant(frames);
            let logits = net.forward_frames_var(&mut g, &mut vars, fv, 32, true)?;
            let probs = losses::consensus_probs_var(&mut g, logits, videos.len(), t)?;
            let loss = ce_loss(&mut g, probs, &labels)?;
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "teacher loss {loss_val} at seed {} epoch {epoch}",
                    cfg.seed
                )));
            }
            epoch_ce += loss_val;
            batches += 1.0;
            g.backward(loss)?;

            apply_recognizer_step(
                &mut net, &g, &vars, 32, &mut sgd, &mut alpha_m, cfg, lr, clip32.lr, clip32.wd,
            )?;
        }
        log.rows.push(format!("{epoch},{}", epoch_ce / batches));
    }
    Ok((net, log))
}

/// One optimizer step for a single-width recognizer pass.
#[allow(clippy::too_many_arguments)]
fn apply_recognizer_step(
    net: &mut RecognitionNet,
    g: &Graph,
    vars: &crate::recognizer::RecognizerVars,
    width: u32,
    sgd: &mut Sgd,
    alpha_m: &mut AlphaMomentum,
    cfg: &TrainConfig,
    lr: f64,
    alpha_lr: f64,
    alpha_wd: f64,
) -> Result<()> {
    let wi = net.width_index(width)?;
    net.update_running_stats(g, vars, width)?;
    let grab = |v: Var| g.grad(v).expect("trainable leaf").clone();
    let shared_grads: Vec<Tensor> = vars
        .convs
        .iter()
        .chain([&vars.head_w, &vars.head_b])
        .map(|&v| grab(v))
        .collect();
    let gamma_grads: Vec<Tensor> = vars.gammas.iter().map(|&v| grab(v)).collect();
    let beta_grads: Vec<Tensor> = vars.betas.iter().map(|&v| grab(v)).collect();
    let alpha_grads: Vec<f64> = vars.alphas.iter().map(|&v| grab(v).item()).collect();

    let mut updates = Vec::new();
    {
        let mut shared = net.convs.iter_mut().collect::<Vec<_>>();
        shared.push(&mut net.head_w);
        shared.push(&mut net.head_b);
        for (p, gr) in shared.into_iter().zip(shared_grads.iter()) {
            updates.push(SgdUpdate { param: p, grad: gr, lr, wd: cfg.weight_decay });
        }
        for (b, (gg, bg)) in
            net.bn_banks[wi].iter_mut().zip(gamma_grads.iter().zip(beta_grads.iter()))
        {
            updates.push(SgdUpdate { param: &mut b.gamma, grad: gg, lr, wd: 0.0 });
            updates.push(SgdUpdate { param: &mut b.beta, grad: bg, lr, wd: 0.0 });
        }
        sgd.step(&mut updates);
    }
    alpha_m.step(cfg.momentum, &mut net.clips[wi], &alpha_grads, alpha_lr, alpha_wd);
    Ok(())
}

// ── stage 1: any-precision recognizer ───────────────────────────────

/// Per-width results of one stage-1 batch pass.
struct WidthPass {
    shared_grads: Vec<Tensor>,
    gamma_grads: Vec<Tensor>,
    beta_grads: Vec<Tensor>,
    alpha_grads: Vec<f64>,
    bn_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    ce: f64,
    kd: f64,
}

fn run_width_pass(
    net: &RecognitionNet,
    frames: &Tensor,
    labels: &[usize],
    teacher_probs: &Tensor,
    frames_per_video: usize,
    width: u32,
) -> Result<WidthPass> {
    let mut g = Graph::new();
    let mut vars = net.vars_for_width(&mut g, width, true)?;
    let fv = g.constant(frames.clone());
    let logits = net.forward_frames_var(&mut g, &mut vars, fv, width, true)?;
    let probs = losses::consensus_probs_var(&mut g, logits, labels.len(), frames_per_video)?;
    let ce = ce_loss(&mut g, probs, labels)?;
    let kd = kd_loss(&mut g, teacher_probs, probs)?;
    let loss = g.add(ce, kd)?;
    let (ce_v, kd_v) = (g.value(ce).item(), g.value(kd).item());
    if !(ce_v.is_finite() && kd_v.is_finite()) {
        return Err(Error::Diverged(format!("{width}-bit pass: ce {ce_v}, kd {kd_v}")));
    }
    g.backward(loss)?;
    let grab = |v: Var| g.grad(v).expect("trainable leaf").clone();
    Ok(WidthPass {
        shared_grads: vars.convs.iter().chain([&vars.head_w, &vars.head_b]).map(|&v| grab(v)).collect(),
        gamma_grads: vars.gammas.iter().map(|&v| grab(v)).collect(),
        beta_grads: vars.betas.iter().map(|&v| grab(v)).collect(),
        alpha_grads: vars.alphas.iter().map(|&v| grab(v).item()).collect(),
        bn_stats: vars
            .bn_nodes
            .iter()
            .map(|n| n.map(|v| {
                let (m, s) = g.bn_batch_stats(v).unwrap();
                (m.to_vec(), s.to_vec())
            }))
            .collect(),
        ce: ce_v,
        kd: kd_v,
    })
}

/// Jointly trains one network under every candidate width with shared
/// weights: same input batch per width, losses gathered, one update. Builds
/// and freezes the truncation store on completion.
pub fn train_any_precision(
    cfg: &TrainConfig,
    data: &Dataset,
    teacher: &RecognitionNet,
    widths: Vec<u32>,
) -> Result<(RecognitionNet, StageLog)> {
    cfg.validate(&widths)?;
    let mut net = RecognitionNet::from_teacher(teacher, widths.clone());
    let teacher_probs = teacher_probs_all(teacher, data)?;
    let m = net.cfg.num_classes;
    let t = data.spec.frames_per_video;
    let mut sgd = Sgd::new(cfg.momentum);
    let mut alpha_m: Vec<AlphaMomentum> = widths.iter().map(|_| AlphaMomentum::default()).collect();
    let mut header = String::from("epoch");
    for b in &widths {
        header.push_str(&format!(",ce_{b},kd_{b}"));
    }
    header.push_str(",total");
    let mut log = StageLog::new(&header);

    for epoch in 0..cfg.stage1_epochs {
        let lr = cfg.lr_at(cfg.stage1_lr, epoch, cfg.stage1_epochs);
        let order = shuffled_indices(data.videos.len(), stream_seed(cfg.seed, 3, epoch));
        let mut epoch_terms = vec![0.0; widths.len() * 2];
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let videos: Vec<&VideoSample> = chunk.iter().map(|&i| &data.videos[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
            let frames = frames_batch(&videos, false);
            let tp = batch_teacher_tensor(&teacher_probs, chunk, m);

            // same input batch for every precision
            let passes: Vec<WidthPass> = if cfg.parallel_precisions {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = widths
                        .iter()
                        .map(|&b| {
                            let (net, frames, labels, tp) = (&net, &frames, &labels, &tp);
                            scope.spawn(move || run_width_pass(net, frames, labels, tp, t, b))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("width pass panicked")).collect()
                })
            } else {
                widths
                    .iter()
                    .map(|&b| run_width_pass(&net, &frames, &labels, &tp, t, b))
                    .collect()
            };
            let passes: Vec<WidthPass> = passes.into_iter().collect::<Result<_>>()?;

            // deterministic merge in width order
            let mut shared_grads = passes[0].shared_grads.clone();
            for p in &passes[1..] {
                for (acc, g) in shared_grads.iter_mut().zip(&p.shared_grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }

            for (wi, p) in passes.iter().enumerate() {
                for (block, stats) in p.bn_stats.iter().enumerate() {
                    if let Some((bm, bv)) = stats {
                        let bank = &mut net.bn_banks[wi][block];
                        let mom = net.cfg.bn_momentum;
                        for (r, &x) in bank.running_mean.iter_mut().zip(bm) {
                            *r = (1.0 - mom) * *r + mom * x;
                        }
                        for (r, &x) in bank.running_var.iter_mut().zip(bv) {
                            *r = (1.0 - mom) * *r + mom * x;
                        }
                    }
                }
                epoch_terms[wi * 2] += p.ce;
                epoch_terms[wi * 2 + 1] += p.kd;
            }
            batches += 1.0;

            let mut updates = Vec::new();
            {
                let mut shared = net.convs.iter_mut().collect::<Vec<_>>();
                shared.push(&mut net.head_w);
                shared.push(&mut net.head_b);
                for (p, gr) in shared.into_iter().zip(shared_grads.iter()) {
                    updates.push(SgdUpdate { param: p, grad: gr, lr, wd: cfg.weight_decay });
                }
                for (wi, p) in passes.iter().enumerate() {
                    for (b, (gg, bg)) in net.bn_banks[wi]
                        .iter_mut()
                        .zip(p.gamma_grads.iter().zip(p.beta_grads.iter()))
                    {
                        updates.push(SgdUpdate { param: &mut b.gamma, grad: gg, lr, wd: 0.0 });
                        updates.push(SgdUpdate { param: &mut b.beta, grad: bg, lr, wd: 0.0 });
                    }
                }
                sgd.step(&mut updates);
            }
            for (wi, p) in passes.iter().enumerate() {
                let clip = cfg.clip_setting(widths[wi]).unwrap();
                alpha_m[wi].step(cfg.momentum, &mut net.clips[wi], &p.alpha_grads, clip.lr, clip.wd);
            }
        }
        let mut row = format!("{epoch}");
        let mut total = 0.0;
        for v in &epoch_terms {
            row.push_str(&format!(",{}", v / batches));
            total += v / batches;
        }
        row.push_str(&format!(",{total}"));
        log.rows.push(row);
    }
    net.build_store()?;
    Ok((net, log))
}

// ── stage 2: policy ─────────────────────────────────────────────────

/// How the recognizer participates in the policy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyExecMode {
    /// Execute only the sampled precision per frame; its soft probability
    /// carries the gradient (forward hard, backward soft). The training
    /// path.
    HardStraightThrough,
    /// Execute every precision per frame, weighted by the soft vector. A
    /// smooth function of the logits, used by gradient checks.
    SoftMixture,
}

pub struct PolicyBatch<'a> {
    pub videos: Vec<&'a VideoSample>,
    pub labels: Vec<usize>,
    /// (V, classes) frozen-teacher soft targets.
    pub teacher_probs: Tensor,
}

pub struct PolicyObjective {
    pub total: Var,
    pub terms: PolicyLossTerms,
    /// Sampled hard action per (video, frame).
    pub hard_actions: Vec<Vec<u32>>,
}

struct FrameDecision {
    pi: Var,
    soft: Var,
    hard: Vec<usize>,
}

/// Builds the full stage-2 objective on the tape: policy forward over all
/// frames, Gumbel sampling per frame, recognizer execution (off-tape; the
/// recognizer is frozen), and the five-term combined loss.
#[allow(clippy::too_many_arguments)]
pub fn build_policy_objective(
    g: &mut Graph,
    policy: &PolicyNet,
    policy_vars: &PolicyVars,
    recognizer: &RecognitionNet,
    space: &ActionSpace,
    batch: &PolicyBatch<'_>,
    noise: &[Tensor],
    tau: f64,
    weights: &losses::LossWeights,
    cost_table: &CostTable,
    mode: PolicyExecMode,
) -> Result<PolicyObjective> {
    let videos = &batch.videos;
    let t = videos[0].policy_frames.len();
    if noise.len() != t {
        return Err(Error::shape("policy_objective", format!("{} noise slabs for {t} frames", noise.len())));
    }
    let v = videos.len();
    let hdim = policy.cfg.hidden;
    let mut hidden = g.constant(Tensor::zeros(&[v, hdim]));
    let mut cell = g.constant(Tensor::zeros(&[v, hdim]));
    let mut decisions = Vec::with_capacity(t);
    for (i, slab_noise) in noise.iter().enumerate() {
        let slab = g.constant(frame_slab(videos, i, true));
        let feat = policy.extract_features(g, slab, policy_vars)?;
        let step = policy.step(g, feat, hidden, cell, policy_vars)?;
        hidden = step.hidden;
        cell = step.cell;
        let clamped = g.clamp_min(step.pi, losses::PROB_EPS);
        let log_pi = g.log(clamped);
        let (soft, hard) = gumbel_sample_var(g, log_pi, tau, slab_noise)?;
        decisions.push(FrameDecision { pi: step.pi, soft, hard });
    }
    assemble_policy_losses(g, recognizer, space, batch, &decisions, weights, cost_table, mode)
}

/// Test-facing variant: the objective as a function of raw per-frame logits
/// (V*T, |actions|), frame-major within each video... rows are ordered
/// frame 0 of all videos, then frame 1, and so on.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective_from_logits(
    g: &mut Graph,
    logits: Var,
    recognizer: &RecognitionNet,
    space: &ActionSpace,
    batch: &PolicyBatch<'_>,
    noise: &[Tensor],
    tau: f64,
    weights: &losses::LossWeights,
    cost_table: &CostTable,
    mode: PolicyExecMode,
) -> Result<PolicyObjective> {
    let v = batch.videos.len();
    let t = noise.len();
    let mut decisions = Vec::with_capacity(t);
    for (i, slab_noise) in noise.iter().enumerate() {
        let rows = g.slice_rows(logits, i * v, (i + 1) * v)?;
        let pi = g.softmax(rows)?;
        let clamped = g.clamp_min(pi, losses::PROB_EPS);
        let log_pi = g.log(clamped);
        let (soft, hard) = gumbel_sample_var(g, log_pi, tau, slab_noise)?;
        decisions.push(FrameDecision { pi, soft, hard });
    }
    assemble_policy_losses(g, recognizer, space, batch, &decisions, weights, cost_table, mode)
}

#[allow(clippy::too_many_arguments)]
fn assemble_policy_losses(
    g: &mut Graph,
    recognizer: &RecognitionNet,
    space: &ActionSpace,
    batch: &PolicyBatch<'_>,
    decisions: &[FrameDecision],
    weights: &losses::LossWeights,
    cost_table: &CostTable,
    mode: PolicyExecMode,
) -> Result<PolicyObjective> {
    let videos = &batch.videos;
    let v = videos.len();
    let t = decisions.len();
    let m = recognizer.cfg.num_classes;
    let skip_idx = space.len() - 1;

    // recognizer outputs, off-tape: outputs[frame][video][width index]
    let mut outputs: Vec<Vec<Vec<Option<Vec<f64>>>>> =
        vec![vec![vec![None; space.len() - 1]; v]; t];
    for (i, d) in decisions.iter().enumerate() {
        for (wi, &width) in space.widths().iter().enumerate() {
            let need: Vec<usize> = (0..v)
                .filter(|&vi| match mode {
                    PolicyExecMode::HardStraightThrough => d.hard[vi] == wi,
                    PolicyExecMode::SoftMixture => true,
                })
                .collect();
            if need.is_empty() {
                continue;
            }
            let selected: Vec<&VideoSample> = need.iter().map(|&vi| videos[vi]).collect();
            let slab = frame_slab(&selected, i, false);
            let logits = recognizer.forward_frames(&slab, width)?;
            let probs = kernels::softmax_rows(logits.data(), need.len(), m);
            for (k, &vi) in need.iter().enumerate() {
                outputs[i][vi][wi] = Some(probs[k * m..(k + 1) * m].to_vec());
            }
        }
    }

    // per-video prediction: soft/straight-through weighted average of the
    // executed frame predictions, normalized by the participating weight
    let mut per_video = Vec::with_capacity(v);
    for vi in 0..v {
        let mut num: Option<Var> = None;
        let mut den: Option<Var> = None;
        for (i, d) in decisions.iter().enumerate() {
            let row = g.slice_rows(d.soft, vi, vi + 1)?;
            match mode {
                PolicyExecMode::HardStraightThrough => {
                    let a = d.hard[vi];
                    if a == skip_idx {
                        continue;
                    }
                    let sel = g.gather_row_cols(row, vec![a])?;
                    // straight-through: forward value 1, backward d(soft)
                    let sel_val = g.value(sel).item();
                    let centered = g.add_scalar(sel, 1.0 - sel_val);
                    let q = outputs[i][vi][a].as_ref().expect("executed branch");
                    let qv = g.constant(Tensor::matrix(1, m, q.clone())?);
                    let contrib = g.scale_by(qv, centered)?;
                    num = Some(match num {
                        None => contrib,
                        Some(acc) => g.add(acc, contrib)?,
                    });
                    den = Some(match den {
                        None => centered,
                        Some(acc) => g.add(acc, centered)?,
                    });
                }
                PolicyExecMode::SoftMixture => {
                    for wi in 0..space.len() - 1 {
                        let sel = g.gather_row_cols(row, vec![wi])?;
                        let q = outputs[i][vi][wi].as_ref().expect("soft mode executes all");
                        let qv = g.constant(Tensor::matrix(1, m, q.clone())?);
                        let contrib = g.scale_by(qv, sel)?;
                        num = Some(match num {
                            None => contrib,
                            Some(acc) => g.add(acc, contrib)?,
                        });
                        den = Some(match den {
                            None => sel,
                            Some(acc) => g.add(acc, sel)?,
                        });
                    }
                }
            }
        }
        let pv = match (num, den) {
            (Some(n), Some(d)) => g.div_by(n, d)?,
            // every frame skipped: uniform fallback
            _ => g.constant(Tensor::matrix(1, m, vec![1.0 / m as f64; m])?),
        };
        per_video.push(pv);
    }
    let video_probs = g.concat_rows(&per_video)?;
    let ce = ce_loss(g, video_probs, &batch.labels)?;
    let kd = kd_loss(g, &batch.teacher_probs, video_probs)?;

    let soft_stack = {
        let rows: Vec<Var> = decisions.iter().map(|d| d.soft).collect();
        g.concat_rows(&rows)?
    };
    let pi_stack = {
        let rows: Vec<Var> = decisions.iter().map(|d| d.pi).collect();
        g.concat_rows(&rows)?
    };
    let le = efficiency_loss_soft(g, soft_stack, cost_table, v)?;
    let lb = balance_loss(g, soft_stack, BalanceForm::Absolute)?;
    let ld = entropy_loss(g, pi_stack, v)?;
    let (total, terms) = combine_policy_losses(g, ce, kd, le, lb, ld, weights)?;

    let hard_actions = (0..v)
        .map(|vi| (0..t).map(|i| space.action_at(decisions[i].hard[vi])).collect())
        .collect();
    Ok(PolicyObjective { total, terms, hard_actions })
}

/// Resumable stage-2 state.
pub struct PolicyTrainState {
    pub policy: PolicyNet,
    pub optimizer: Sgd,
    pub epochs_done: usize,
    pub log: StageLog,
}

impl PolicyTrainState {
    pub fn fresh(cfg: &TrainConfig, policy_cfg: crate::policy::PolicyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 4, 0));
        PolicyTrainState {
            policy: PolicyNet::new(policy_cfg, &mut rng),
            optimizer: Sgd::new(cfg.momentum),
            epochs_done: 0,
            log: StageLog::new("epoch,tau,ce,kd,efficiency,balance,entropy,total"),
        }
    }
}

/// Trains the policy network against the frozen recognizer, from
/// `state.epochs_done` up to `cfg.stage2_epochs`.
pub fn train_policy_epochs(
    cfg: &TrainConfig,
    data: &Dataset,
    recognizer: &RecognitionNet,
    teacher: &RecognitionNet,
    state: &mut PolicyTrainState,
) -> Result<()> {
    let space = action_space_of(recognizer)?;
    cfg.validate(&space.widths())?;
    let cost_table = crate::cost::model_cost_table(
        &recognizer.cfg.cost_spec(),
        space.actions(),
        &state.policy.cfg.cost_spec(),
        crate::cost::FlopsConvention::MacIsOne,
    )?;
    let teacher_probs = teacher_probs_all(teacher, data)?;
    let m = recognizer.cfg.num_classes;
    let schedule = TempSchedule {
        initial: cfg.tau_initial,
        floor: cfg.tau_floor,
        rate: (cfg.tau_initial / cfg.tau_floor).ln() / cfg.stage2_epochs.max(1) as f64,
    };
    let frozen_hash = recognizer_hash(recognizer);

    while state.epochs_done < cfg.stage2_epochs {
        let epoch = state.epochs_done;
        let tau = temperature_at(epoch, &schedule);
        let lr = cfg.lr_at(cfg.stage2_lr, epoch, cfg.stage2_epochs);
        let order = shuffled_indices(data.videos.len(), stream_seed(cfg.seed, 5, epoch));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 6, epoch));
        let mut sums = PolicyLossTerms::default();
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let videos: Vec<&VideoSample> = chunk.iter().map(|&i| &data.videos[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
            let t = videos[0].policy_frames.len();
            let noise: Vec<Tensor> = (0..t)
                .map(|_| {
                    Tensor::matrix(
                        videos.len(),
                        space.len(),
                        gumbel_noise(&mut noise_rng, videos.len() * space.len()),
                    )
                    .unwrap()
                })
                .collect();
            let batch = PolicyBatch {
                labels,
                teacher_probs: batch_teacher_tensor(&teacher_probs, chunk, m),
                videos,
            };
            let mut g = Graph::new();
            let vars = state.policy.vars(&mut g, true);
            let obj = build_policy_objective(
                &mut g,
                &state.policy,
                &vars,
                recognizer,
                &space,
                &batch,
                &noise,
                tau,
                &cfg.loss_weights,
                &cost_table,
                PolicyExecMode::HardStraightThrough,
            )?;
            if !obj.terms.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "policy loss {} at seed {} epoch {epoch}",
                    obj.terms.total, cfg.seed
                )));
            }
            g.backward(obj.total)?;
            let mut grads: Vec<Tensor> =
                vars.all().iter().map(|&v| g.grad(v).expect("trainable leaf").clone()).collect();
            clip_global_norm(&mut grads, cfg.grad_clip);
            let mut params = state.policy.params_mut();
            let mut updates: Vec<SgdUpdate> = params
                .iter_mut()
                .zip(grads.iter())
                .map(|(p, gr)| SgdUpdate { param: p, grad: gr, lr, wd: 0.0 })
                .collect();
            state.optimizer.step(&mut updates);

            sums.ce += obj.terms.ce;
            sums.kd += obj.terms.kd;
            sums.efficiency += obj.terms.efficiency;
            sums.balance += obj.terms.balance;
            sums.entropy += obj.terms.entropy;
            sums.total += obj.terms.total;
            batches += 1.0;
        }
        // freeze contract: the recognizer must be bit-identical all stage
        assert_eq!(
            recognizer_hash(recognizer),
            frozen_hash,
            "recognizer parameters changed during policy training"
        );
        state.log.rows.push(format!(
            "{epoch},{tau},{},{},{},{},{},{}",
            sums.ce / batches,
            sums.kd / batches,
            sums.efficiency / batches,
            sums.balance / batches,
            sums.entropy / batches,
            sums.total / batches
        ));
        state.epochs_done += 1;
    }
    Ok(())
}

/// Fresh stage-2 run over the configured number of epochs.
pub fn train_policy(
    cfg: &TrainConfig,
    data: &Dataset,
    recognizer: &RecognitionNet,
    teacher: &RecognitionNet,
    policy_cfg: crate::policy::PolicyConfig,
) -> Result<(PolicyNet, StageLog)> {
    let mut state = PolicyTrainState::fresh(cfg, policy_cfg);
    train_policy_epochs(cfg, data, recognizer, teacher, &mut state)?;
    Ok((state.policy, state.log))
}

/// The action space a recognizer supports: its widths plus skip.
pub fn action_space_of(recognizer: &RecognitionNet) -> Result<ActionSpace> {
    let mut actions = recognizer.cfg.widths.clone();
    actions.push(0);
    ActionSpace::new(actions)
}

/// Hash of everything the freeze contract protects.
pub fn recognizer_hash(net: &RecognitionNet) -> u64 {
    let mut all: Vec<&Tensor> = net.shared_params();
    for banks in &net.bn_banks {
        for b in banks {
            all.push(&b.gamma);
            all.push(&b.beta);
        }
    }
    params_hash(all)
}
