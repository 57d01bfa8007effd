//! Training objectives.
//!
//! Stage 1 (any-precision recognizer): summed cross-entropy plus teacher
//! distillation across every candidate precision on the same input batch.
//! Stage 2 (policy): cross-entropy and distillation under the sampled
//! actions, plus three policy regularizers — expected compute (in GFLOPs, so
//! the weights transfer across network sizes), balanced action usage (L1
//! deviation from uniform usage; the signed sum telescopes to zero and
//! cannot act as a loss), and per-frame decision entropy.
//!
//! Builders return graph variables so each term is differentiable; reported
//! metrics recompute the hard sums separately.

use crate::cost::CostTable;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::recognizer::RecognitionNet;
use crate::tensor::Tensor;

/// Probability floor inside logs; quantized students can emit near-zero
/// probabilities.
pub const PROB_EPS: f64 = 1e-12;

/// Balance weights of the combined policy objective (w1, w2, w3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub efficiency: f64,
    pub balance: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { efficiency: 0.21, balance: 0.5, entropy: 0.1 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { efficiency: 0.0, balance: 0.0, entropy: 0.0 }
    }
}

/// How the deviation from uniform usage is aggregated in the balance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BalanceForm {
    #[default]
    Absolute,
    Squared,
}

/// Batch-mean negative log-probability of the true class:
/// `video_probs` is (V, classes), one probability row per video.
pub fn ce_loss(g: &mut Graph, video_probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.value(video_probs).shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "ce_loss",
            format!("probs {:?} vs {} labels", shape, labels.len()),
        ));
    }
    let picked = g.gather_row_cols(video_probs, labels.to_vec())?;
    if g.value(picked).data().iter().any(|&p| p < PROB_EPS) {
        log::warn!("ce_loss: probability at true class below {PROB_EPS:.0e}, clamping");
    }
    let clamped = g.clamp_min(picked, PROB_EPS);
    let lp = g.log(clamped);
    let m = g.mean(lp);
    Ok(g.neg(m))
}

/// Batch-mean KL(teacher || student). The teacher distribution is a
/// constant; zero-probability entries are clamped on both sides.
pub fn kd_loss(g: &mut Graph, teacher_probs: &Tensor, student_probs: Var) -> Result<Var> {
    let shape = g.value(student_probs).shape();
    if shape != teacher_probs.shape() {
        return Err(Error::shape(
            "kd_loss",
            format!("teacher {:?} vs student {:?}", teacher_probs.shape(), shape),
        ));
    }
    let videos = teacher_probs.shape()[0] as f64;
    // constant part: E_v sum_i y_t ln y_t
    let t_entropy: f64 = teacher_probs
        .data()
        .iter()
        .map(|&p| if p > 0.0 { p * p.max(PROB_EPS).ln() } else { 0.0 })
        .sum::<f64>()
        / videos;
    let t = g.constant(teacher_probs.clone());
    let clamped = g.clamp_min(student_probs, PROB_EPS);
    let ls = g.log(clamped);
    let cross = g.mul(t, ls)?;
    let s = g.sum(cross);
    let neg_cross = g.mul_scalar(s, -1.0 / videos);
    Ok(g.add_scalar(neg_cross, t_entropy))
}

/// Stage-1 joint objective: for each width b in the net's candidate set,
/// forward the same batch at b and accumulate ce + kd against the teacher.
/// Returns the summed loss and the per-width (ce, kd) values.
pub fn anyprec_objective(
    g: &mut Graph,
    net: &RecognitionNet,
    teacher_probs: &Tensor,
    frames: &Tensor,
    labels: &[usize],
    frames_per_video: usize,
) -> Result<(Var, Vec<WidthLoss>)> {
    let mut total: Option<Var> = None;
    let mut parts = Vec::new();
    for &b in &net.cfg.widths {
        let (loss, ce, kd) =
            anyprec_width_loss(g, net, teacher_probs, frames, labels, frames_per_video, b, false)?;
        parts.push(WidthLoss { width: b, ce, kd });
        total = Some(match total {
            None => loss,
            Some(acc) => g.add(acc, loss)?,
        });
    }
    Ok((total.expect("candidate set is never empty"), parts))
}

#[derive(Debug, Clone, Copy)]
pub struct WidthLoss {
    pub width: u32,
    pub ce: f64,
    pub kd: f64,
}

/// One width's ce + kd term of the stage-1 objective on its own (or a
/// shared) graph. `bn_train` selects batch statistics; the batch-norm nodes
/// are surfaced through the returned vars inside the training loop instead.
#[allow(clippy::too_many_arguments)]
pub fn anyprec_width_loss(
    g: &mut Graph,
    net: &RecognitionNet,
    teacher_probs: &Tensor,
    frames: &Tensor,
    labels: &[usize],
    frames_per_video: usize,
    width: u32,
    bn_train: bool,
) -> Result<(Var, f64, f64)> {
    let mut vars = net.vars_for_width(g, width, false)?;
    let fv = g.constant(frames.clone());
    let logits = net.forward_frames_var(g, &mut vars, fv, width, bn_train)?;
    let probs = consensus_probs_var(g, logits, labels.len(), frames_per_video)?;
    let ce = ce_loss(g, probs, labels)?;
    let kd = kd_loss(g, teacher_probs, probs)?;
    let loss = g.add(ce, kd)?;
    Ok((loss, g.value(ce).item(), g.value(kd).item()))
}

/// TSN consensus on the tape: per-frame softmax, averaged per video.
/// `frame_logits` is (V*T, classes) with each video's frames contiguous.
pub fn consensus_probs_var(
    g: &mut Graph,
    frame_logits: Var,
    videos: usize,
    frames_per_video: usize,
) -> Result<Var> {
    let rows = g.value(frame_logits).shape()[0];
    if rows != videos * frames_per_video {
        return Err(Error::shape(
            "consensus_probs",
            format!("{rows} rows != {videos} videos x {frames_per_video} frames"),
        ));
    }
    let probs = g.softmax(frame_logits)?;
    let mut per_video = Vec::with_capacity(videos);
    for v in 0..videos {
        let block = g.slice_rows(probs, v * frames_per_video, (v + 1) * frames_per_video)?;
        per_video.push(g.mean_rows(block)?);
    }
    g.concat_rows(&per_video)
}

/// Expected compute under the soft decisions, in GFLOPs: rows are the
/// per-frame soft vectors of the whole batch (V*T, |actions|), summed over
/// frames and averaged over videos.
pub fn efficiency_loss_soft(
    g: &mut Graph,
    soft_rows: Var,
    cost_table: &CostTable,
    videos: usize,
) -> Result<Var> {
    let cols = g.value(soft_rows).shape()[1];
    if cols != cost_table.actions.len() {
        return Err(Error::shape(
            "efficiency_loss",
            format!("{cols} action columns vs {} cost entries", cost_table.actions.len()),
        ));
    }
    let gflops: Vec<f64> = cost_table.flops_per_frame.iter().map(|&f| f / 1e9).collect();
    let fv = g.constant(Tensor::from_vec(gflops));
    let weighted = g.mul_row_vec(soft_rows, fv)?;
    let s = g.sum(weighted);
    Ok(g.mul_scalar(s, 1.0 / videos as f64))
}

/// Literal hard per-video compute: sum of the chosen actions' FLOPs, in
/// GFLOPs. This is what reports use.
pub fn efficiency_hard(actions: &[u32], cost_table: &CostTable) -> Result<f64> {
    let mut total = 0.0;
    for &a in actions {
        total += cost_table.flops_for_action(a)?;
    }
    Ok(total / 1e9)
}

/// Deviation of batch action usage from uniform. Usage is the soft-decision
/// mass per action, averaged over all frames of all videos.
pub fn balance_loss(g: &mut Graph, soft_rows: Var, form: BalanceForm) -> Result<Var> {
    let cols = g.value(soft_rows).shape()[1] as f64;
    let usage = g.mean_rows(soft_rows)?;
    let dev = g.add_scalar(usage, -1.0 / cols);
    let agg = match form {
        BalanceForm::Absolute => g.abs(dev),
        BalanceForm::Squared => g.mul(dev, dev)?,
    };
    Ok(g.sum(agg))
}

/// Summed per-frame entropy of the action distributions, averaged over
/// videos: pushes decisions toward determinism.
pub fn entropy_loss(g: &mut Graph, pi_rows: Var, videos: usize) -> Result<Var> {
    let clamped = g.clamp_min(pi_rows, PROB_EPS);
    let lp = g.log(clamped);
    let plogp = g.mul(pi_rows, lp)?;
    let s = g.sum(plogp);
    Ok(g.mul_scalar(s, -1.0 / videos as f64))
}

/// Per-term values of one policy objective evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyLossTerms {
    pub ce: f64,
    pub kd: f64,
    pub efficiency: f64,
    pub balance: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Weighted combination of the policy objective's five terms.
pub fn combine_policy_losses(
    g: &mut Graph,
    ce: Var,
    kd: Var,
    efficiency: Var,
    balance: Var,
    entropy: Var,
    weights: &LossWeights,
) -> Result<(Var, PolicyLossTerms)> {
    let mut terms = PolicyLossTerms {
        ce: g.value(ce).item(),
        kd: g.value(kd).item(),
        efficiency: g.value(efficiency).item(),
        balance: g.value(balance).item(),
        entropy: g.value(entropy).item(),
        total: 0.0,
    };
    let mut total = g.add(ce, kd)?;
    let we = g.mul_scalar(efficiency, weights.efficiency);
    total = g.add(total, we)?;
    let wb = g.mul_scalar(balance, weights.balance);
    total = g.add(total, wb)?;
    let wd = g.mul_scalar(entropy, weights.entropy);
    total = g.add(total, wd)?;
    terms.total = g.value(total).item();
    Ok((total, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{model_cost_table, FlopsConvention, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_of(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn ce_perfect_prediction_is_zero() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap());
        let l = ce_loss(&mut g, p, &[1]).unwrap();
        assert!(scalar_of(&g, l).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform_is_ln_m() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 4, vec![0.25; 4]).unwrap());
        let l = ce_loss(&mut g, p, &[2]).unwrap();
        assert!((scalar_of(&g, l) - 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn ce_hand_value() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 3, vec![0.5, 0.25, 0.25]).unwrap());
        let l = ce_loss(&mut g, p, &[1]).unwrap();
        assert!((scalar_of(&g, l) - 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let l = ce_loss(&mut g, p, &[1]).unwrap();
        let v = scalar_of(&g, l);
        assert!(v.is_finite() && (v - (-PROB_EPS.ln())).abs() < 1e-6);
    }

    #[test]
    fn kd_identity_is_zero() {
        let t = Tensor::matrix(1, 4, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let mut g = Graph::new();
        let s = g.constant(t.clone());
        let l = kd_loss(&mut g, &t, s).unwrap();
        assert!(scalar_of(&g, l).abs() < 1e-9);
    }

    #[test]
    fn kd_hand_value() {
        // KL([1,0] || [0.5,0.5]) = ln 2
        let t = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap());
        let l = kd_loss(&mut g, &t, s).unwrap();
        assert!((scalar_of(&g, l) - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn kd_nonnegative_over_random_pairs() {
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || {
                let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let t = Tensor::matrix(1, 4, draw()).unwrap();
            let mut g = Graph::new();
            let s = g.constant(Tensor::matrix(1, 4, draw()).unwrap());
            let l = kd_loss(&mut g, &t, s).unwrap();
            assert!(scalar_of(&g, l) >= -1e-12, "seed {seed}: {}", scalar_of(&g, l));
        }
    }

    fn tiny_table() -> CostTable {
        let arch = vec![LayerSpec::conv2d(1, 4, 3, 8, true), LayerSpec::linear(4, 2, false)];
        model_cost_table(&arch, &[32, 4, 2, 0], &[], FlopsConvention::MacIsOne).unwrap()
    }

    #[test]
    fn efficiency_all_skip_is_zero_and_all_32_sums() {
        let table = tiny_table();
        assert_eq!(efficiency_hard(&[0; 8], &table).unwrap(), 0.0);
        let t = 8;
        let want = t as f64 * table.flops_for_action(32).unwrap() / 1e9;
        let got = efficiency_hard(&vec![32; t], &table).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn efficiency_soft_uniform_expectation() {
        // p uniform over {32,4,2,0}: (T/4) * (F32 + F4 + F2)
        let table = tiny_table();
        let t = 8usize;
        let mut g = Graph::new();
        let rows = g.constant(Tensor::matrix(t, 4, vec![0.25; 4 * t]).unwrap());
        let l = efficiency_loss_soft(&mut g, rows, &table, 1).unwrap();
        let want = (t as f64 / 4.0)
            * (table.flops_for_action(32).unwrap()
                + table.flops_for_action(4).unwrap()
                + table.flops_for_action(2).unwrap())
            / 1e9;
        assert!((scalar_of(&g, l) - want).abs() < 1e-9);
    }

    #[test]
    fn efficiency_soft_hard_agree_at_one_hot() {
        let table = tiny_table();
        let actions = [32u32, 0, 2, 4];
        let mut rows = vec![0.0; 16];
        for (i, &a) in actions.iter().enumerate() {
            let j = table.actions.iter().position(|&x| x == a).unwrap();
            rows[i * 4 + j] = 1.0;
        }
        let mut g = Graph::new();
        let rv = g.constant(Tensor::matrix(4, 4, rows).unwrap());
        let l = efficiency_loss_soft(&mut g, rv, &table, 1).unwrap();
        let hard = efficiency_hard(&actions, &table).unwrap();
        assert!((scalar_of(&g, l) - hard).abs() < 1e-12);
    }

    #[test]
    fn balance_uniform_zero_one_hot_three_halves() {
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::matrix(6, 4, vec![0.25; 24]).unwrap());
        let l = balance_loss(&mut g, uniform, BalanceForm::Absolute).unwrap();
        assert!(scalar_of(&g, l).abs() < 1e-12);

        let mut onehot = vec![0.0; 24];
        for r in 0..6 {
            onehot[r * 4] = 1.0;
        }
        let oh = g.constant(Tensor::matrix(6, 4, onehot).unwrap());
        let l = balance_loss(&mut g, oh, BalanceForm::Absolute).unwrap();
        assert!((scalar_of(&g, l) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn balance_bounded_by_l1_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let mut rows = Vec::new();
            for _ in 0..5 {
                let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                rows.extend(v);
            }
            let mut g = Graph::new();
            let rv = g.constant(Tensor::matrix(5, 4, rows).unwrap());
            let l = balance_loss(&mut g, rv, BalanceForm::Absolute).unwrap();
            let v = scalar_of(&g, l);
            assert!((0.0..=2.0 * (1.0 - 0.25) + 1e-12).contains(&v));
        }
    }

    #[test]
    fn entropy_one_hot_zero_uniform_max() {
        let mut g = Graph::new();
        let mut onehot = vec![0.0; 32];
        for r in 0..8 {
            onehot[r * 4 + r % 4] = 1.0;
        }
        let oh = g.constant(Tensor::matrix(8, 4, onehot).unwrap());
        let l = entropy_loss(&mut g, oh, 1).unwrap();
        assert!(scalar_of(&g, l).abs() < 1e-9);

        let uniform = g.constant(Tensor::matrix(8, 4, vec![0.25; 32]).unwrap());
        let l = entropy_loss(&mut g, uniform, 1).unwrap();
        assert!((scalar_of(&g, l) - 8.0 * 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn entropy_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            let mut g = Graph::new();
            let rv = g.constant(Tensor::matrix(1, 4, v).unwrap());
            let l = entropy_loss(&mut g, rv, 1).unwrap();
            assert!(scalar_of(&g, l) >= -1e-12);
        }
    }

    #[test]
    fn zero_weights_reduce_policy_objective_to_ce_plus_kd() {
        let mut g = Graph::new();
        let ce = g.constant(Tensor::scalar(0.7));
        let kd = g.constant(Tensor::scalar(0.2));
        let le = g.constant(Tensor::scalar(123.0));
        let lb = g.constant(Tensor::scalar(45.0));
        let ld = g.constant(Tensor::scalar(6.0));
        let (total, terms) =
            combine_policy_losses(&mut g, ce, kd, le, lb, ld, &LossWeights::zero()).unwrap();
        assert!((scalar_of(&g, total) - 0.9).abs() < 1e-12);
        assert_eq!(terms.total, scalar_of(&g, total));
    }

    #[test]
    fn weighted_combination_recomposes_term_by_term() {
        let w = LossWeights::default(); // (0.21, 0.5, 0.1)
        let mut g = Graph::new();
        let ce = g.constant(Tensor::scalar(1.1));
        let kd = g.constant(Tensor::scalar(0.3));
        let le = g.constant(Tensor::scalar(2.0));
        let lb = g.constant(Tensor::scalar(0.8));
        let ld = g.constant(Tensor::scalar(4.0));
        let (total, terms) = combine_policy_losses(&mut g, ce, kd, le, lb, ld, &w).unwrap();
        let want = 1.1 + 0.3 + 0.21 * 2.0 + 0.5 * 0.8 + 0.1 * 4.0;
        assert!((scalar_of(&g, total) - want).abs() < 1e-12);
        assert!((terms.ce - 1.1).abs() < 1e-12);
        assert!((terms.efficiency - 2.0).abs() < 1e-12);
    }

    /// Two-action bandit: one learnable logit pair chooses between
    /// processing (cost 1 GFLOP, confident prediction) and skipping (free,
    /// uniform prediction). Trained end-to-end through the soft relaxation,
    /// the converged expected cost must not increase with w1.
    #[test]
    fn efficiency_weight_monotonically_reduces_expected_cost() {
        let train = |w1: f64| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut logits = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
            let lr = 0.5;
            for _ in 0..300 {
                let noise = crate::policy::gumbel_noise(&mut rng, 2);
                let mut g = Graph::new();
                let lv = g.param(logits.clone());
                let pi = g.softmax(lv).unwrap();
                let cl = g.clamp_min(pi, PROB_EPS);
                let log_pi = g.log(cl);
                let (soft, _) = crate::policy::gumbel_sample_var(
                    &mut g,
                    log_pi,
                    1.0,
                    &Tensor::matrix(1, 2, noise).unwrap(),
                )
                .unwrap();
                // soft-mixture prediction: process -> [0.9, 0.1], skip -> [0.5, 0.5]
                let outcomes = g.constant(Tensor::matrix(2, 2, vec![0.9, 0.1, 0.5, 0.5]).unwrap());
                let probs = g.matmul(soft, outcomes).unwrap();
                let ce = ce_loss(&mut g, probs, &[0]).unwrap();
                // expected cost: processing costs 1 GFLOP
                let costs = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
                let weighted = g.mul_row_vec(soft, costs).unwrap();
                let cost = g.sum(weighted);
                let wc = g.mul_scalar(cost, w1);
                let total = g.add(ce, wc).unwrap();
                g.backward(total).unwrap();
                let grad = g.grad(lv).unwrap().clone();
                for (p, d) in logits.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * d;
                }
            }
            let pi = crate::kernels::softmax_rows(logits.data(), 1, 2);
            pi[0] // expected GFLOPs at convergence
        };
        let costs: Vec<f64> = [0.0, 0.1, 1.0].iter().map(|&w| train(w)).collect();
        assert!(costs[0] >= costs[1] - 0.05, "{costs:?}");
        assert!(costs[1] >= costs[2] - 0.05, "{costs:?}");
        assert!(costs[0] > costs[2] + 0.3, "w1 had no effect: {costs:?}");
    }
}
