//! Loss functions with analytic gradients with respect to network outputs.

use serde::{Deserialize, Serialize};

use super::NnError;

/// Scalar loss together with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Temperature-softened distribution `normalize(p^(1/tau))`.
pub fn soften(p: &[f64], temperature: f64) -> Vec<f64> {
    let inv = 1.0 / temperature;
    // Work in log space so tiny probabilities survive large 1/tau.
    let logs: Vec<f64> = p
        .iter()
        .map(|&v| if v > 0.0 { v.ln() * inv } else { f64::NEG_INFINITY })
        .collect();
    softmax(&logs)
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad, NnError> {
    if label >= logits.len() {
        return Err(NnError::InvalidParam(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok(LossGrad {
        loss: -logp[label],
        grad,
    })
}

/// Distillation mixing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillParams {
    pub temperature: f64,
    /// Weight of the hard-label cross-entropy term.
    pub mix: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            mix: 0.5,
        }
    }
}

/// `mix * CE(softmax(z), label) + (1 - mix) * tau^2 * KL(soften(base, tau) || softmax(z / tau))`.
pub fn distill_loss(
    logits: &[f64],
    base_probs: &[f64],
    label: usize,
    temperature: f64,
    mix: f64,
) -> Result<LossGrad, NnError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(NnError::InvalidParam(format!("temperature {temperature}")));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(NnError::InvalidParam(format!("mix {mix}")));
    }
    if logits.len() != base_probs.len() {
        return Err(NnError::ShapeMismatch {
            context: "distillation target",
            expected: logits.len(),
            got: base_probs.len(),
        });
    }
    let hard = cross_entropy(logits, label)?;

    let target = soften(base_probs, temperature);
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let log_student = log_softmax(&scaled);
    let kl: f64 = target
        .iter()
        .zip(&log_student)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &ls)| q * (q.ln() - ls))
        .sum::<f64>()
        .max(0.0);
    let t2 = temperature * temperature;

    let grad = hard
        .grad
        .iter()
        .zip(&log_student)
        .zip(&target)
        .map(|((&gh, &ls), &q)| mix * gh + (1.0 - mix) * temperature * (ls.exp() - q))
        .collect();
    Ok(LossGrad {
        loss: mix * hard.loss + (1.0 - mix) * t2 * kl,
        grad,
    })
}

/// Binary cross-entropy on a selector logit where firing on a wrong
/// prediction costs `w_fp` and abstaining on a right one costs `w_fn`.
///
/// Returns `(loss, dloss/dlogit)`.
pub fn weighted_selector_loss(
    logit: f64,
    label: bool,
    w_fp: f64,
    w_fn: f64,
) -> Result<(f64, f64), NnError> {
    if !logit.is_finite() {
        return Err(NnError::NonFinite("selector logit"));
    }
    if !(w_fp > 0.0) || !(w_fn > 0.0) {
        return Err(NnError::InvalidParam(format!("weights fp={w_fp} fn={w_fn}")));
    }
    let p = sigmoid(logit);
    Ok(if label {
        (w_fn * softplus(-logit), w_fn * (p - 1.0))
    } else {
        (w_fp * softplus(logit), w_fp * p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mix_one_is_plain_cross_entropy() {
        let z = [0.3, -1.2, 2.0];
        let base = [0.2, 0.5, 0.3];
        let d = distill_loss(&z, &base, 2, 2.0, 1.0).unwrap();
        let ce = cross_entropy(&z, 2).unwrap();
        assert!((d.loss - ce.loss).abs() < 1e-15);
        for (a, b) in d.grad.iter().zip(&ce.grad) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_vanishes_when_student_matches_soft_target() {
        let tau = 2.0;
        let base = [0.1, 0.6, 0.3];
        // softmax(z / tau) == soften(base, tau) when z = ln(base)
        let z: Vec<f64> = base.iter().map(|p: &f64| p.ln()).collect();
        let d = distill_loss(&z, &base, 1, tau, 0.0).unwrap();
        assert!(d.loss.abs() < 1e-12);
        assert!(d.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(distill_loss(&[0.0, 1.0], &[0.5, 0.5], 0, 0.0, 0.5).is_err());
        assert!(distill_loss(&[0.0, 1.0], &[0.5, 0.5], 0, 1.0, 1.5).is_err());
        assert!(distill_loss(&[0.0, 1.0], &[0.5, 0.5], 2, 1.0, 0.5).is_err());
        assert!(weighted_selector_loss(f64::NAN, true, 1.0, 1.0).is_err());
        assert!(weighted_selector_loss(0.0, true, 0.0, 1.0).is_err());
    }

    #[test]
    fn unit_weights_match_bce() {
        for &(z, g) in &[(0.7, true), (-1.3, false), (2.5, false), (0.0, true)] {
            let (l, d) = weighted_selector_loss(z, g, 1.0, 1.0).unwrap();
            let p = 1.0 / (1.0 + (-z as f64).exp());
            let y = if g { 1.0 } else { 0.0 };
            let bce = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((l - bce).abs() < 1e-12);
            assert!((d - (p - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn asymptotic_penalties_scale_with_weights() {
        let (fp, _) = weighted_selector_loss(40.0, false, 5.0, 1.0).unwrap();
        assert!((fp - 5.0 * 40.0).abs() < 1e-9);
        let (fneg, _) = weighted_selector_loss(-40.0, true, 5.0, 2.0).unwrap();
        assert!((fneg - 2.0 * 40.0).abs() < 1e-9);
    }

    #[test]
    fn soften_flattens() {
        let q = soften(&[0.9, 0.1], 2.0);
        assert!(q[0] < 0.9 && q[0] > 0.5);
        let same = soften(&[0.25, 0.75], 1.0);
        assert!((same[0] - 0.25).abs() < 1e-12 && (same[1] - 0.75).abs() < 1e-12);
    }
}
