//! Training objectives with hand-derived gradients.
//!
//! Every loss returns its value together with the gradient with respect to the
//! argument it is differentiated in: the feature `z` for ISAC, logits for the
//! classification and outlier terms.

use crate::error::{check_dim, PattError, Result};
use crate::vmf::{self, bessel_ratio, lse_unchecked, softmax, VmfMixture};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Weights and temperatures of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PattHyper {
    /// Contrastive temperature on the anchor feature.
    pub tau: f64,
    /// Logit temperature of the adjusted cross-entropy.
    pub epsilon: f64,
    /// Weight of the temperature-scaled logit-adjusted term.
    pub alpha: f64,
    /// Weight of the outlier-exposure term.
    pub beta: f64,
}

impl Default for PattHyper {
    fn default() -> Self {
        PattHyper {
            tau: 0.1,
            epsilon: 0.7,
            alpha: 0.5,
            beta: 0.1,
        }
    }
}

impl PattHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.epsilon > 0.0) {
            return Err(PattError::contract(format!(
                "tau and epsilon must be positive (tau={}, epsilon={})",
                self.tau, self.epsilon
            )));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(PattError::contract("alpha and beta must be nonnegative"));
        }
        Ok(())
    }
}

fn check_priors(priors: &[f64], y: usize) -> Result<()> {
    if y >= priors.len() {
        return Err(PattError::UnknownClass {
            class: y,
            classes: priors.len(),
        });
    }
    if !(priors[y] > 0.0) {
        return Err(PattError::ZeroPrior { class: y });
    }
    if priors.iter().any(|&p| !(p >= 0.0)) {
        return Err(PattError::contract("priors must be nonnegative"));
    }
    Ok(())
}

/// Cross-entropy of `softmax(logits)` against the uniform distribution.
///
/// Returns the raw value `lse(logits) - mean(logits)`, whose minimum is `ln K`.
pub fn oe_uniform_loss(logits: &[f64]) -> Result<LossValue> {
    let k = logits.len();
    if k < 2 {
        return Err(PattError::contract(
            "outlier loss needs at least two logits",
        ));
    }
    let mean = logits.iter().sum::<f64>() / k as f64;
    let value = lse_unchecked(logits) - mean;
    let inv_k = 1.0 / k as f64;
    let grad = softmax(logits).into_iter().map(|p| p - inv_k).collect();
    Ok(LossValue { value, grad })
}

/// Plain softmax cross-entropy; the `ce-baseline` objective.
pub fn ce_loss(logits: &[f64], y: usize) -> Result<LossValue> {
    if y >= logits.len() {
        return Err(PattError::UnknownClass {
            class: y,
            classes: logits.len(),
        });
    }
    let value = lse_unchecked(logits) - logits[y];
    let mut grad = softmax(logits);
    grad[y] -= 1.0;
    Ok(LossValue { value, grad })
}

/// Supervised contrastive loss of one anchor against a batch.
///
/// The anchor belongs to its own positive set, so `|B| = 1` gives 0.
pub fn scl_batch_loss(
    features: &[&[f64]],
    labels: &[usize],
    anchor_index: usize,
    tau: f64,
) -> Result<f64> {
    check_dim(features.len(), labels.len())?;
    if !(tau > 0.0) {
        return Err(PattError::contract("tau must be positive"));
    }
    let anchor = features
        .get(anchor_index)
        .ok_or_else(|| PattError::contract("anchor index out of range"))?;
    let y = labels[anchor_index];
    let mut positives = Vec::new();
    let mut all = Vec::with_capacity(features.len());
    for (z, &label) in features.iter().zip(labels) {
        check_dim(anchor.len(), z.len())?;
        let s = vmf::dot(anchor, z) / tau;
        all.push(s);
        if label == y {
            positives.push(s);
        }
    }
    if positives.is_empty() {
        return Err(PattError::contract("anchor has no positives"));
    }
    let n_pos = positives.len() as f64;
    Ok(n_pos.ln() - lse_unchecked(&positives) + lse_unchecked(&all))
}

/// Logit-adjusted cross-entropy: `-ln[pi_y e^{phi_y} / Σ pi_y' e^{phi_y'}]`.
pub fn la_loss(logits: &[f64], y: usize, priors: &[f64]) -> Result<LossValue> {
    tla_loss(logits, y, priors, 1.0)
}

/// Temperature-scaled logit adjustment: logits divided by `epsilon` before
/// the prior-weighted softmax.
pub fn tla_loss(logits: &[f64], y: usize, priors: &[f64], epsilon: f64) -> Result<LossValue> {
    check_dim(priors.len(), logits.len())?;
    check_priors(priors, y)?;
    if !(epsilon > 0.0) {
        return Err(PattError::contract("epsilon must be positive"));
    }
    let adjusted: Vec<f64> = logits
        .iter()
        .zip(priors)
        .map(|(l, p)| l / epsilon + p.ln())
        .collect();
    let value = lse_unchecked(&adjusted) - adjusted[y];
    let mut grad = softmax(&adjusted);
    grad[y] -= 1.0;
    grad.iter_mut().for_each(|g| *g /= epsilon);
    Ok(LossValue { value, grad })
}

/// Closed-form contrastive loss for an anchor `z` of class `y` against
/// infinitely many positives and negatives drawn from the class mixture.
///
/// `s_j = ln pi_j - ln pi_y + lnZ(k~_y) + lnZ(k_j) - lnZ(k_y) - lnZ(k~_j)` with
/// `k~_j = ||k_j mu_j + z / tau||`, and the loss is `lse(s)`. `z` is evaluated
/// as given, so the gradient is the ambient one in `R^d`.
pub fn isac_loss(mix: &VmfMixture, z: &[f64], y: usize, tau: f64) -> Result<LossValue> {
    check_dim(mix.dim(), z.len())?;
    mix.class(y)?;
    if !(tau > 0.0) {
        return Err(PattError::contract("tau must be positive"));
    }
    let d = mix.dim();
    let k = mix.num_classes();
    let priors = mix.priors();

    // Shifted concentrations and d k~_j / dz.
    let mut tilde = Vec::with_capacity(k);
    let mut dtilde = Vec::with_capacity(k);
    for c in mix.classes() {
        let v: Vec<f64> =
            c.mu.iter()
                .zip(z)
                .map(|(m, zi)| c.kappa * m + zi / tau)
                .collect();
        let kt = vmf::norm(&v);
        let dk: Vec<f64> = if kt > 0.0 {
            v.iter().map(|vi| vi / (tau * kt)).collect()
        } else {
            vec![0.0; d]
        };
        tilde.push(kt);
        dtilde.push(dk);
    }
    let log_z = |kappa: f64| vmf::log_norm_const(d, kappa);
    let lz_tilde: Vec<f64> = tilde.iter().map(|&t| log_z(t)).collect::<Result<_>>()?;
    let lz_class: Vec<f64> = mix.classes().iter().map(|c| c.log_norm_const()).collect();

    let base = lz_tilde[y] - lz_class[y] - priors[y].ln();
    let s: Vec<f64> = (0..k)
        .map(|j| base + priors[j].ln() + lz_class[j] - lz_tilde[j])
        .collect();
    let value = lse_unchecked(&s);
    let w = softmax(&s);

    // ds_j/dz = -A(k~_y) dk~_y + A(k~_j) dk~_j; weights sum to one.
    let a: Vec<f64> = tilde.iter().map(|&t| bessel_ratio(d, t)).collect();
    let mut grad: Vec<f64> = dtilde[y].iter().map(|g| -a[y] * g).collect();
    for j in 0..k {
        let coef = w[j] * a[j];
        grad.iter_mut()
            .zip(&dtilde[j])
            .for_each(|(g, dk)| *g += coef * dk);
    }
    Ok(LossValue { value, grad })
}

/// Per-sample value and gradients of `L_isac + alpha L_tla + beta mean(L_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PattLoss {
    pub value: f64,
    pub isac: f64,
    pub tla: f64,
    /// Mean outlier loss over the OOD logits; 0 when none were given.
    pub oe: f64,
    pub grad_z: Vec<f64>,
    pub grad_logits_id: Vec<f64>,
    pub grad_logits_ood: Vec<Vec<f64>>,
}

/// The combined objective for one ID sample and a batch of OOD logits.
#[allow(clippy::too_many_arguments)]
pub fn patt_total_loss(
    mix: &VmfMixture,
    z_id: &[f64],
    y: usize,
    logits_id: &[f64],
    logits_ood: &[Vec<f64>],
    hyper: &PattHyper,
    priors: &[f64],
) -> Result<PattLoss> {
    hyper.validate()?;
    let isac = isac_loss(mix, z_id, y, hyper.tau)?;
    let tla = tla_loss(logits_id, y, priors, hyper.epsilon)?;
    let mut oe = 0.0;
    let mut grad_logits_ood = Vec::with_capacity(logits_ood.len());
    if !logits_ood.is_empty() {
        let scale = hyper.beta / logits_ood.len() as f64;
        for logits in logits_ood {
            let l = oe_uniform_loss(logits)?;
            oe += l.value;
            grad_logits_ood.push(l.grad.into_iter().map(|g| scale * g).collect());
        }
        oe /= logits_ood.len() as f64;
    }
    Ok(PattLoss {
        value: isac.value + hyper.alpha * tla.value + hyper.beta * oe,
        isac: isac.value,
        tla: tla.value,
        oe,
        grad_z: isac.grad,
        grad_logits_id: tla.grad.into_iter().map(|g| hyper.alpha * g).collect(),
        grad_logits_ood,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{LN_10, LN_2, PI};

    use super::*;
    use crate::vmf::{UnitFeature, VmfParams};

    fn unit(v: &[f64]) -> UnitFeature {
        UnitFeature::normalize(v.to_vec()).unwrap()
    }

    fn z3(kappa: f64) -> f64 {
        (kappa / (4.0 * PI * kappa.sinh())).ln()
    }

    #[test]
    fn oe_examples() {
        let l = oe_uniform_loss(&[0.0; 10]).unwrap();
        assert!((l.value - LN_10).abs() < 1e-14);
        assert!(l.grad.iter().all(|g| g.abs() < 1e-15));
        let l = oe_uniform_loss(&[1.0, 0.0]).unwrap();
        assert!((l.value - (1.0 + (1.0 + (-1.0f64).exp()).ln() - 0.5)).abs() < 1e-14);
        assert!((l.value - 0.813262).abs() < 1e-6);
        let l = oe_uniform_loss(&[4.2; 6]).unwrap();
        assert!((l.value - 6f64.ln()).abs() < 1e-13);
        assert!(oe_uniform_loss(&[1.0]).is_err());
    }

    #[test]
    fn scl_examples() {
        let z = [0.6, 0.8];
        let batch: Vec<&[f64]> = vec![&z; 5];
        assert!((scl_batch_loss(&batch, &[1; 5], 0, 0.3).unwrap() - 5f64.ln()).abs() < 1e-13);
        assert_eq!(scl_batch_loss(&batch[..1], &[1], 0, 0.3).unwrap(), 0.0);

        // Two classes on orthogonal axes, tau = 1, anchor e1 of class 0.
        let (e1, e2, m1) = ([1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]);
        let batch: Vec<&[f64]> = vec![&e1, &m1, &e2, &e2];
        let e = 1f64.exp();
        let num = 0.5 * (e + 1.0 / e);
        let den = e + 1.0 / e + 2.0;
        let expected = -(num / den).ln();
        let got = scl_batch_loss(&batch, &[0, 0, 1, 1], 0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn scl_needs_positive_and_valid_anchor() {
        let z = [1.0, 0.0];
        let batch: Vec<&[f64]> = vec![&z];
        assert!(scl_batch_loss(&batch, &[0], 3, 1.0).is_err());
        assert!(scl_batch_loss(&batch, &[0], 0, 0.0).is_err());
    }

    #[test]
    fn la_examples() {
        let l = la_loss(&[0.0; 4], 2, &[0.25; 4]).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-14);
        let l = la_loss(&[0.0, 0.0], 1, &[0.9, 0.1]).unwrap();
        assert!((l.value - LN_10).abs() < 1e-13);
        let a = la_loss(&[0.3, -1.2, 2.0], 1, &[0.5, 0.2, 0.3]).unwrap();
        let b = la_loss(&[5.3, 3.8, 7.0], 1, &[0.5, 0.2, 0.3]).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        assert!(matches!(
            la_loss(&[0.0, 0.0], 1, &[1.0, 0.0]),
            Err(PattError::ZeroPrior { class: 1 })
        ));
    }

    #[test]
    fn tla_examples() {
        for eps in [0.1, 0.7, 3.0] {
            let l = tla_loss(&[0.0; 5], 3, &[0.2; 5], eps).unwrap();
            assert!((l.value - 5f64.ln()).abs() < 1e-13);
        }
        let logits = [1.3, -0.4, 0.8];
        let pri = [0.6, 0.3, 0.1];
        let a = tla_loss(&logits, 2, &pri, 0.7).unwrap();
        let scaled: Vec<f64> = logits.iter().map(|l| l / 2.5).collect();
        let b = tla_loss(&scaled, 2, &pri, 0.7 / 2.5).unwrap();
        assert!((a.value - b.value).abs() < 1e-13);

        let l = tla_loss(&[1.0, 0.0], 1, &[0.9, 0.1], 0.5).unwrap();
        let expected = -(0.1 / (0.9 * 2f64.exp() + 0.1)).ln();
        assert!((l.value - expected).abs() < 1e-13);

        let l1 = tla_loss(&logits, 0, &pri, 1.0).unwrap();
        let l2 = la_loss(&logits, 0, &pri).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn isac_identical_classes_give_ln_k() {
        let c = VmfParams::new(unit(&[1.0, 2.0, -1.0]), 4.0).unwrap();
        let mix = VmfMixture::new(vec![c; 3], vec![1.0 / 3.0; 3]).unwrap();
        let z = unit(&[0.1, -0.5, 0.7]);
        let l = isac_loss(&mix, &z, 1, 0.1).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn isac_two_axes_against_closed_form() {
        let a = VmfParams::new(unit(&[1.0, 0.0, 0.0]), 2.0).unwrap();
        let b = VmfParams::new(unit(&[-1.0, 0.0, 0.0]), 2.0).unwrap();
        let mix = VmfMixture::new(vec![a, b], vec![0.5, 0.5]).unwrap();
        let l = isac_loss(&mix, &[1.0, 0.0, 0.0], 0, 1.0).unwrap();
        // k~_1 = |2 + 1| = 3, k~_2 = |-2 + 1| = 1.
        let s1 = 0.0f64;
        let s2 = z3(3.0) + z3(2.0) - z3(2.0) - z3(1.0);
        let expected = s1.exp() + s2.exp();
        assert!((l.value - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn isac_single_class_is_zero() {
        let a = VmfParams::new(unit(&[1.0, 0.0, 0.0]), 2.0).unwrap();
        let mix = VmfMixture::new(vec![a], vec![1.0]).unwrap();
        let l = isac_loss(&mix, &[0.0, 1.0, 0.0], 0, 0.1).unwrap();
        assert!(l.value.abs() < 1e-15);
        assert!(l.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn isac_rejects_unknown_class() {
        let a = VmfParams::new(unit(&[1.0, 0.0]), 2.0).unwrap();
        let mix = VmfMixture::new(vec![a], vec![1.0]).unwrap();
        assert!(matches!(
            isac_loss(&mix, &[1.0, 0.0], 1, 0.1),
            Err(PattError::UnknownClass { .. })
        ));
    }

    #[test]
    fn total_loss_composition() {
        let a = VmfParams::new(unit(&[1.0, 0.0, 0.0]), 3.0).unwrap();
        let b = VmfParams::new(unit(&[0.0, 1.0, 0.0]), 1.0).unwrap();
        let mix = VmfMixture::new(vec![a, b], vec![0.8, 0.2]).unwrap();
        let z = unit(&[0.3, 0.9, 0.1]);
        let logits = [0.4, -0.3];
        let ood = vec![vec![1.0, 0.0], vec![-0.5, 2.0]];
        let priors = [0.8, 0.2];
        let hyper = PattHyper::default();
        let total = patt_total_loss(&mix, &z, 1, &logits, &ood, &hyper, &priors).unwrap();
        let isac = isac_loss(&mix, &z, 1, 0.1).unwrap().value;
        let tla = tla_loss(&logits, 1, &priors, 0.7).unwrap().value;
        let oe = 0.5
            * (oe_uniform_loss(&ood[0]).unwrap().value + oe_uniform_loss(&ood[1]).unwrap().value);
        assert!((total.value - (isac + 0.5 * tla + 0.1 * oe)).abs() < 1e-13);

        let zero = PattHyper {
            alpha: 0.0,
            beta: 0.0,
            ..hyper
        };
        let only = patt_total_loss(&mix, &z, 1, &logits, &ood, &zero, &priors).unwrap();
        assert!((only.value - isac).abs() < 1e-15);
    }

    #[test]
    fn total_loss_symmetric_case() {
        let c = VmfParams::new(unit(&[1.0, 1.0]), 2.0).unwrap();
        let mix = VmfMixture::new(vec![c; 4], vec![0.25; 4]).unwrap();
        let hyper = PattHyper::default();
        let l = patt_total_loss(
            &mix,
            &unit(&[1.0, 0.0]),
            2,
            &[0.0; 4],
            &[vec![0.0; 4]],
            &hyper,
            &[0.25; 4],
        )
        .unwrap();
        let ln4 = 2.0 * LN_2;
        assert!((l.value - ln4 * (1.0 + hyper.alpha + hyper.beta)).abs() < 1e-12);
    }
}
