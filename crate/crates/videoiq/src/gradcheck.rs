//! Central-finite-difference verification of recorded gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error between backward and central differences.
    pub max_rel_err: f64,
    /// The function records straight-through surrogate ops; the check was
    /// skipped unless surrogates were explicitly allowed.
    pub surrogate_present: bool,
    /// The check was actually performed.
    pub checked: bool,
    /// A probe evaluation produced NaN.
    pub nan_detected: bool,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked && !self.nan_detected && self.max_rel_err <= tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / denom
    }
}

/// Checks d(f)/d(point) against central differences with the given step.
/// `f` builds a scalar loss from the input variable on a fresh graph.
/// Functions containing surrogate-gradient ops are skipped (flagged in the
/// report) unless `allow_surrogates` is set.
pub fn finite_diff_check_with<F>(
    f: F,
    point: &Tensor,
    step: f64,
    allow_surrogates: bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let loss = f(&mut g, x)?;
    if g.has_surrogate_ops() && !allow_surrogates {
        return Ok(GradCheckReport {
            max_rel_err: f64::NAN,
            surrogate_present: true,
            checked: false,
            nan_detected: false,
        });
    }
    let surrogate_present = g.has_surrogate_ops();
    if g.value(loss).item().is_nan() {
        return Ok(GradCheckReport {
            max_rel_err: f64::NAN,
            surrogate_present,
            checked: false,
            nan_detected: true,
        });
    }
    g.backward(loss)?;
    let ad = g.grad(x).expect("input is a trainable leaf").clone();

    let eval = |pt: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.param(pt.clone());
        let loss = f(&mut g, x)?;
        Ok(g.value(loss).item())
    };

    let mut max_rel = 0.0f64;
    let mut nan_detected = false;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(&plus)?, eval(&minus)?);
        if fp.is_nan() || fm.is_nan() {
            nan_detected = true;
            continue;
        }
        let fd = (fp - fm) / (2.0 * step);
        max_rel = max_rel.max(rel_err(ad.data()[i], fd));
    }
    Ok(GradCheckReport { max_rel_err: max_rel, surrogate_present, checked: true, nan_detected })
}

/// [`finite_diff_check_with`] rejecting surrogate ops.
pub fn finite_diff_check<F>(f: F, point: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check_with(f, point, step, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_matches_to_1e5() {
        let r = finite_diff_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &Tensor::from_vec(vec![1.0, 2.0]),
            1e-4,
        )
        .unwrap();
        assert!(r.checked);
        assert!(r.max_rel_err < 1e-5, "rel err {}", r.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let r = finite_diff_check(
            |g, x| {
                let zero = g.mul_scalar(x, 0.0);
                Ok(g.sum(zero))
            },
            &Tensor::from_vec(vec![0.3, -0.7]),
            1e-4,
        )
        .unwrap();
        assert!(r.checked);
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn surrogate_op_skips_check_with_flag() {
        let r = finite_diff_check(
            |g, x| {
                let q = g.round_grid_ste(x, 3);
                Ok(g.sum(q))
            },
            &Tensor::from_vec(vec![0.4]),
            1e-4,
        )
        .unwrap();
        assert!(r.surrogate_present);
        assert!(!r.checked);
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences() {
        let r = finite_diff_check(
            |g, x| {
                let p = g.softmax(x)?;
                let picked = g.gather_row_cols(p, vec![0])?;
                let clamped = g.clamp_min(picked, 1e-12);
                let lp = g.log(clamped);
                let m = g.mean(lp);
                Ok(g.neg(m))
            },
            &Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "rel err {}", r.max_rel_err);
    }

    /// Every smooth op matches central differences at randomized points.
    /// Piecewise-linear ops (relu, abs, clip) are sampled away from their
    /// kinks, where the derivative is defined.
    #[test]
    fn all_ops_match_finite_differences_over_100_seeds() {
        let step = 1e-5;
        let tol = 1e-4;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rnd = |n: usize| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.random_range(-2.0..2.0);
                        // keep away from kinks at 0 and +-1
                        if v.abs() < 0.05 {
                            v + 0.1
                        } else if (v.abs() - 1.0).abs() < 0.05 {
                            v + 0.1
                        } else {
                            v
                        }
                    })
                    .collect()
            };

            // elementwise + reductions chain
            let w = Tensor::from_vec(rnd(6));
            let r = finite_diff_check(
                move |g, x| {
                    let c = g.constant(w.clone());
                    let m = g.mul(x, c)?;
                    let t = g.tanh(m);
                    let s = g.sigmoid(t);
                    let a = g.add(s, t)?;
                    let l = g.clamp_min(a, -0.9);
                    Ok(g.mean(l))
                },
                &Tensor::from_vec(rnd(6)),
                step,
            )
            .unwrap();
            assert!(r.max_rel_err < tol, "elementwise seed {seed}: {}", r.max_rel_err);

            // piecewise-linear ops away from kinks
            let r = finite_diff_check(
                |g, x| {
                    let rl = g.relu(x);
                    let ab = g.abs(rl);
                    let cl = g.clip(ab, 0.1, 1.9);
                    Ok(g.sum(cl))
                },
                &Tensor::from_vec(rnd(6)),
                step,
            )
            .unwrap();
            assert!(r.max_rel_err < tol, "piecewise seed {seed}: {}", r.max_rel_err);

            // matmul + row ops + softmax + log + gather
            let b = Tensor::matrix(3, 4, rnd(12)).unwrap();
            let bias = Tensor::from_vec(rnd(4));
            let scale = Tensor::from_vec(rnd(4));
            let r = finite_diff_check(
                move |g, x| {
                    let bv = g.constant(b.clone());
                    let mm = g.matmul(x, bv)?;
                    let bb = g.constant(bias.clone());
                    let ab = g.add_row_vec(mm, bb)?;
                    let sv = g.constant(scale.clone());
                    let ms = g.mul_row_vec(ab, sv)?;
                    let sm = g.softmax(ms)?;
                    let cl = g.clamp_min(sm, 1e-12);
                    let lg = g.log(cl);
                    let picked = g.gather_row_cols(lg, vec![1, 3])?;
                    Ok(g.mean(picked))
                },
                &Tensor::matrix(2, 3, rnd(6)).unwrap(),
                step,
            )
            .unwrap();
            assert!(r.max_rel_err < tol, "linear-chain seed {seed}: {}", r.max_rel_err);

            // conv + batchnorm (train mode) + pooling
            let kern = Tensor::new(vec![2, 1, 3, 3], rnd(18)).unwrap();
            let gamma = Tensor::from_vec(rnd(2));
            let beta = Tensor::from_vec(rnd(2));
            let r = finite_diff_check(
                move |g, x| {
                    let k = g.constant(kern.clone());
                    let conv = g.conv2d(x, k, 1, 1)?;
                    let ga = g.constant(gamma.clone());
                    let be = g.constant(beta.clone());
                    let bn = g.batch_norm(conv, ga, be, 1e-5, crate::graph::BnMode::Train)?;
                    let t = g.tanh(bn);
                    let p = g.global_avg_pool(t)?;
                    let sm = g.log_softmax(p)?;
                    Ok(g.mean(sm))
                },
                &Tensor::new(vec![2, 1, 4, 4], rnd(32)).unwrap(),
                step,
            )
            .unwrap();
            assert!(r.max_rel_err < tol, "conv-bn seed {seed}: {}", r.max_rel_err);

            // structural ops: slice/concat/scale_by/div_by/mean_rows/abs_max
            let r = finite_diff_check(
                |g, x| {
                    let top = g.slice_rows(x, 0, 1)?;
                    let bottom = g.slice_rows(x, 1, 3)?;
                    let mb = g.mean_rows(bottom)?;
                    let cat = g.concat_rows(&[top, mb])?;
                    let cols = g.concat_cols(cat, cat)?;
                    let am = g.abs_max(x);
                    let scaled = g.scale_by(cols, am)?;
                    let sm = g.sum(scaled);
                    let den = g.add_scalar(am, 3.0);
                    let one = g.reshape(sm, vec![1])?;
                    let divided = g.div_by(one, den)?;
                    Ok(g.sum(divided))
                },
                &Tensor::matrix(3, 2, rnd(6)).unwrap(),
                step,
            )
            .unwrap();
            assert!(r.max_rel_err < tol, "structural seed {seed}: {}", r.max_rel_err);
        }
    }
}
