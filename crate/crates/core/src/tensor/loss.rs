//! Fused loss primitives with hand-written gradients.

use super::tape::{sigmoid_value as sigmoid, Op, Tape, Var};
use super::{Result, Tensor, TensorError};
use crate::numeric::exact_sum;

/// Probability clamp for binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Bounds applied to log standard deviations before exponentiation.
pub const LOG_SIGMA_BOUNDS: (f64, f64) = (-10.0, 10.0);

fn check_binary(op: &'static str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&value) => Err(TensorError::NonBinaryTarget { op, value }),
        None => Ok(()),
    }
}

impl Tape {
    /// Mean squared error over all entries.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(TensorError::Shape {
                op: "mse_loss",
                left: p.shape(),
                right: t.shape(),
            });
        }
        if p.is_empty() {
            return Err(TensorError::Invalid("mse_loss of empty tensors".into()));
        }
        let n = p.len() as f64;
        let s = exact_sum(p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)));
        self.push(Tensor::scalar(s / n), Op::Mse(pred, target), "mse_loss")
    }

    /// `norm * mean(-[w*y*ln p + (1-y)*ln(1-p)])` with `p` clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn weighted_bce_loss(
        &mut self,
        pred: Var,
        target: &Tensor,
        pos_weight: f64,
        norm: f64,
    ) -> Result<Var> {
        self.bce_impl(pred, target, None, pos_weight, norm)
    }

    /// As [`Tape::weighted_bce_loss`], averaging only over entries where
    /// `mask` is 1.
    pub fn weighted_bce_loss_masked(
        &mut self,
        pred: Var,
        target: &Tensor,
        mask: &Tensor,
        pos_weight: f64,
        norm: f64,
    ) -> Result<Var> {
        self.bce_impl(pred, target, Some(mask), pos_weight, norm)
    }

    fn bce_impl(
        &mut self,
        pred: Var,
        target: &Tensor,
        mask: Option<&Tensor>,
        pos_weight: f64,
        norm: f64,
    ) -> Result<Var> {
        const OP: &str = "weighted_bce_loss";
        let p = self.value(pred);
        for other in std::iter::once(target).chain(mask) {
            if p.shape() != other.shape() {
                return Err(TensorError::Shape {
                    op: OP,
                    left: p.shape(),
                    right: other.shape(),
                });
            }
        }
        check_binary(OP, target)?;
        if let Some(m) = mask {
            check_binary(OP, m)?;
        }
        if !(pos_weight > 0.0) {
            return Err(TensorError::Invalid(format!(
                "pos_weight must be positive, got {pos_weight}"
            )));
        }
        let count = mask.map_or(p.len() as f64, |m| exact_sum(m.data().iter().copied()));
        let scale = if count > 0.0 { norm / count } else { 0.0 };
        let terms = p.data().iter().zip(target.data()).enumerate().map(|(i, (&pi, &y))| {
            if mask.is_some_and(|m| m.data()[i] == 0.0) {
                return 0.0;
            }
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(pos_weight * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        });
        let value = scale * exact_sum(terms);
        self.push(
            Tensor::scalar(value),
            Op::WeightedBce {
                pred,
                target: target.clone(),
                mask: mask.cloned(),
                pos_weight,
                scale,
            },
            OP,
        )
    }

    /// KL divergence of `N(mu, exp(log_sigma)^2)` to `N(0, I)`, averaged over
    /// every entry so its scale does not depend on the latent width.
    pub fn kl_gaussian(&mut self, mu: Var, log_sigma: Var) -> Result<Var> {
        let (m, ls) = (self.value(mu), self.value(log_sigma));
        if m.shape() != ls.shape() {
            return Err(TensorError::Shape {
                op: "kl_gaussian",
                left: m.shape(),
                right: ls.shape(),
            });
        }
        if m.rows() == 0 {
            return Err(TensorError::Invalid("kl_gaussian over zero rows".into()));
        }
        let (lo, hi) = LOG_SIGMA_BOUNDS;
        let terms = m.data().iter().zip(ls.data()).map(|(&mu, &l)| {
            let l = l.clamp(lo, hi);
            0.5 * (mu * mu + (2.0 * l).exp() - 1.0 - 2.0 * l)
        });
        let value = exact_sum(terms) / m.len() as f64;
        self.push(
            Tensor::scalar(value),
            Op::KlGaussian(mu, log_sigma),
            "kl_gaussian",
        )
    }

    /// Mean binary cross-entropy of `logits` against a constant label.
    pub fn bce_with_logits(&mut self, logits: Var, target: f64) -> Result<Var> {
        if target != 0.0 && target != 1.0 {
            return Err(TensorError::NonBinaryTarget {
                op: "bce_with_logits",
                value: target,
            });
        }
        let x = self.value(logits);
        if x.is_empty() {
            return Err(TensorError::Invalid("bce_with_logits of empty tensor".into()));
        }
        let n = x.len() as f64;
        let terms = x
            .data()
            .iter()
            .map(|&v| v.max(0.0) - v * target + (-v.abs()).exp().ln_1p());
        let value = exact_sum(terms) / n;
        self.push(
            Tensor::scalar(value),
            Op::BceLogits { logits, target },
            "bce_with_logits",
        )
    }

    pub(super) fn loss_vjp(&self, op: &Op, g: f64) -> Result<Vec<(Var, Tensor)>> {
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Mse(pred, target) => {
                let (p, t) = (self.node_value(*pred), self.node_value(*target));
                let k = 2.0 * g / p.len() as f64;
                let d = p.zip_map(t, |a, b| k * (a - b));
                res.push((*target, d.scale(-1.0)));
                res.push((*pred, d));
            }
            Op::WeightedBce {
                pred,
                target,
                mask,
                pos_weight,
                scale,
            } => {
                let p = self.node_value(*pred);
                let mut d = Tensor::zeros(p.rows(), p.cols());
                for (i, (&pi, &y)) in p.data().iter().zip(target.data()).enumerate() {
                    if mask.as_ref().is_some_and(|m| m.data()[i] == 0.0) {
                        continue;
                    }
                    if pi < BCE_EPS || pi > 1.0 - BCE_EPS {
                        continue;
                    }
                    d.data_mut()[i] = g * scale * (-pos_weight * y / pi + (1.0 - y) / (1.0 - pi));
                }
                res.push((*pred, d));
            }
            Op::KlGaussian(mu, log_sigma) => {
                let (m, ls) = (self.node_value(*mu), self.node_value(*log_sigma));
                let k = g / m.len() as f64;
                let (lo, hi) = LOG_SIGMA_BOUNDS;
                res.push((*mu, m.scale(k)));
                res.push((
                    *log_sigma,
                    ls.map(|l| {
                        if (lo..=hi).contains(&l) {
                            k * ((2.0 * l).exp() - 1.0)
                        } else {
                            0.0
                        }
                    }),
                ));
            }
            Op::BceLogits { logits, target } => {
                let x = self.node_value(*logits);
                let k = g / x.len() as f64;
                res.push((*logits, x.map(|v| k * (sigmoid(v) - target))));
            }
            other => unreachable!("not a loss op: {other:?}"),
        }
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::from_rows(&[v.to_vec()]).unwrap()
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(row(&[0.0, 0.0])).unwrap();
        let t = tape.constant(row(&[1.0, 1.0])).unwrap();
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);

        let mut tape = Tape::new();
        let p = tape.param(row(&[0.0])).unwrap();
        let t = tape.constant(row(&[1.0])).unwrap();
        let l = tape.mse_loss(p, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().item(), -2.0);

        let mut tape = Tape::new();
        let p = tape.constant(row(&[0.3, -0.7])).unwrap();
        let l = tape.mse_loss(p, p).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn bce_closed_form() {
        let mut tape = Tape::new();
        let p = tape.constant(row(&[0.5])).unwrap();
        let l = tape.weighted_bce_loss(p, &row(&[1.0]), 1.0, 1.0).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_perfect_reconstruction_is_near_zero() {
        let mut tape = Tape::new();
        let p = tape.constant(row(&[1.0, 0.0, 1.0])).unwrap();
        let l = tape
            .weighted_bce_loss(p, &row(&[1.0, 0.0, 1.0]), 3.0, 1.0)
            .unwrap();
        let v = tape.value(l).item();
        assert!((0.0..1e-6).contains(&v));
    }

    #[test]
    fn pos_weight_scales_only_positive_entries() {
        let target = row(&[1.0, 0.0]);
        let eval = |w: f64| {
            let mut tape = Tape::new();
            let p = tape.constant(row(&[0.3, 0.6])).unwrap();
            let l = tape.weighted_bce_loss(p, &target, w, 1.0).unwrap();
            tape.value(l).item()
        };
        let pos = -(0.3f64).ln() / 2.0;
        let neg = -(0.4f64).ln() / 2.0;
        assert!((eval(1.0) - (pos + neg)).abs() < 1e-14);
        assert!((eval(2.0) - (2.0 * pos + neg)).abs() < 1e-14);
    }

    #[test]
    fn bce_rejects_non_binary_target() {
        let mut tape = Tape::new();
        let p = tape.constant(row(&[0.5])).unwrap();
        assert!(matches!(
            tape.weighted_bce_loss(p, &row(&[0.5]), 1.0, 1.0),
            Err(TensorError::NonBinaryTarget { .. })
        ));
    }

    #[test]
    fn masked_bce_ignores_masked_entries() {
        let mut tape = Tape::new();
        let p = tape.constant(row(&[0.5, 0.999])).unwrap();
        let l = tape
            .weighted_bce_loss_masked(p, &row(&[1.0, 0.0]), &row(&[1.0, 0.0]), 1.0, 1.0)
            .unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_forms() {
        let kl = |mu: f64, ls: f64| {
            let mut tape = Tape::new();
            let m = tape.constant(row(&[mu])).unwrap();
            let l = tape.constant(row(&[ls])).unwrap();
            let k = tape.kl_gaussian(m, l).unwrap();
            tape.value(k).item()
        };
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert_eq!(kl(1.0, 0.0), 0.5);
        for &(m, l) in &[(0.3, -2.0), (-1.5, 1.2), (0.0, 9.0), (4.0, -9.5)] {
            assert!(kl(m, l) >= 0.0);
        }
    }

    #[test]
    fn bce_logits_matches_probability_form() {
        let mut tape = Tape::new();
        let x = tape.constant(row(&[0.0, 2.0])).unwrap();
        let l = tape.bce_with_logits(x, 1.0).unwrap();
        let expect = (std::f64::consts::LN_2 + (1.0 + (-2.0f64).exp()).ln()) / 2.0;
        assert!((tape.value(l).item() - expect).abs() < 1e-15);
    }
}
