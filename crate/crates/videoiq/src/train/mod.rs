//! Two-stage training: the any-precision recognizer first (jointly across
//! precisions, distilled from a full-precision teacher), then the policy
//! network against the frozen recognizer. Momentum SGD throughout, with
//! dedicated (lr, weight-decay) settings for the per-precision clip values.

mod checkpoint;
mod stages;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use stages::{
    action_space_of, build_policy_objective, frames_batch, policy_objective_from_logits,
    recognizer_hash, teacher_probs_all, train_any_precision, train_policy, train_policy_epochs,
    train_teacher, video_probs_batched, PolicyBatch, PolicyExecMode, PolicyObjective,
    PolicyTrainState, StageLog,
};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::tensor::Tensor;

/// Learning setup for one precision's clip values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSetting {
    pub lr: f64,
    pub wd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub teacher_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub teacher_lr: f64,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub alpha_init: f64,
    /// (width, clip setting); must cover every candidate width.
    pub clip_settings: Vec<(u32, ClipSetting)>,
    pub loss_weights: LossWeights,
    pub tau_initial: f64,
    pub tau_floor: f64,
    /// Global-norm gradient clip for the policy stage.
    pub grad_clip: f64,
    pub seed: u64,
    /// Run the per-precision forwards of a stage-1 step on separate threads.
    pub parallel_precisions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            teacher_epochs: 30,
            stage1_epochs: 30,
            stage2_epochs: 20,
            teacher_lr: 0.05,
            stage1_lr: 0.02,
            stage2_lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            alpha_init: 4.0,
            clip_settings: vec![
                (32, ClipSetting { lr: 0.01, wd: 5e-4 }),
                (4, ClipSetting { lr: 0.01, wd: 5e-4 }),
                (2, ClipSetting { lr: 0.01, wd: 5e-3 }),
            ],
            loss_weights: LossWeights::default(),
            tau_initial: 5.0,
            tau_floor: 0.5,
            grad_clip: 5.0,
            seed: 1234,
            parallel_precisions: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, widths: &[u32]) -> Result<()> {
        if self.teacher_epochs == 0 || self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for &b in widths {
            if self.clip_setting(b).is_none() {
                return Err(Error::Config(format!("missing clip (lr, wd) setting for {b}-bit")));
            }
        }
        Ok(())
    }

    pub fn clip_setting(&self, width: u32) -> Option<ClipSetting> {
        self.clip_settings.iter().find(|(b, _)| *b == width).map(|(_, s)| *s)
    }

    /// Step decay: one 10x drop at two thirds of the stage.
    pub fn lr_at(&self, base: f64, epoch: usize, total: usize) -> f64 {
        if epoch >= total * 2 / 3 {
            base * 0.1
        } else {
            base
        }
    }
}

/// One parameter's pending update.
pub struct SgdUpdate<'a> {
    pub param: &'a mut Tensor,
    pub grad: &'a Tensor,
    pub lr: f64,
    pub wd: f64,
}

/// Momentum SGD. Velocities are keyed by position, so every step must pass
/// the same parameters in the same order.
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, updates: &mut [SgdUpdate<'_>]) {
        if self.velocity.is_empty() {
            self.velocity = updates.iter().map(|u| Tensor::zeros(u.param.shape())).collect();
        }
        assert_eq!(self.velocity.len(), updates.len(), "optimizer param count changed");
        for (v, u) in self.velocity.iter_mut().zip(updates.iter_mut()) {
            debug_assert_eq!(v.shape(), u.param.shape());
            let m = self.momentum;
            for ((vv, &g), p) in
                v.data_mut().iter_mut().zip(u.grad.data()).zip(u.param.data_mut().iter_mut())
            {
                *vv = m * *vv + g + u.wd * *p;
                *p -= u.lr * *vv;
            }
        }
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn restore_velocities(&mut self, v: Vec<Tensor>) {
        self.velocity = v;
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|&x| x * x).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
}

/// Derives a stream seed for (stage, epoch) so interrupted runs resume on
/// the exact noise and shuffle sequences.
pub fn stream_seed(master: u64, stage: u64, epoch: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((epoch as u64).wrapping_mul(0x94D0_49BB_1331_11EB))
}

/// FNV-1a over the raw bits of every parameter, for freeze-contract checks.
pub fn params_hash<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in params {
        for &x in t.data() {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_plain_descent_without_momentum() {
        let mut sgd = Sgd::new(0.0);
        let mut p = Tensor::from_vec(vec![1.0, -2.0]);
        let g = Tensor::from_vec(vec![0.5, 0.5]);
        sgd.step(&mut [SgdUpdate { param: &mut p, grad: &g, lr: 0.1, wd: 0.0 }]);
        assert_eq!(p.data(), &[0.95, -2.05]);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut sgd = Sgd::new(0.9);
        let mut p = Tensor::from_vec(vec![0.0]);
        let g = Tensor::from_vec(vec![1.0]);
        sgd.step(&mut [SgdUpdate { param: &mut p, grad: &g, lr: 1.0, wd: 0.0 }]);
        assert_eq!(p.data(), &[-1.0]); // v = 1
        sgd.step(&mut [SgdUpdate { param: &mut p, grad: &g, lr: 1.0, wd: 0.0 }]);
        assert!((p.data()[0] + 2.9).abs() < 1e-12); // v = 1.9
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut grads = vec![Tensor::from_vec(vec![3.0, 0.0]), Tensor::from_vec(vec![0.0, 4.0])];
        clip_global_norm(&mut grads, 5.0);
        assert_eq!(grads[0].data()[0], 3.0); // norm exactly 5, untouched
        clip_global_norm(&mut grads, 1.0);
        let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|&x| x * x).sum();
        assert!((sq.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_requires_clip_settings_for_all_widths() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate(&[32, 4, 2]).is_ok());
        assert!(cfg.validate(&[32, 4, 2, 8]).is_err());
    }

    #[test]
    fn lr_steps_down_late_in_stage() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0.1, 0, 30), 0.1);
        assert_eq!(cfg.lr_at(0.1, 19, 30), 0.1);
        assert!((cfg.lr_at(0.1, 20, 30) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn params_hash_detects_single_bit_change() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mut b = a.clone();
        let h1 = params_hash([&a]);
        assert_eq!(h1, params_hash([&b]));
        b.data_mut()[1] += 1e-15;
        assert_ne!(h1, params_hash([&b]));
    }
}
