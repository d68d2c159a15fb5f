//! Post-hoc feature calibration, OOD scores and post-hoc classifier baselines.

use std::path::Path;

use crate::error::{check_dim, PattError, Result};
use crate::model::{argmax, LinearClassifier};
use crate::vmf::{lse_unchecked, norm};

/// Below this spread a raw weight is treated as constant.
pub const SCALE_MIN_RANGE: f64 = 1e-12;

/// Channel weights extracted from training data, raw and mapped onto `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeight {
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
}

impl AttentionWeight {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let scaled = scale_weight(&raw);
        AttentionWeight { raw, scaled }
    }

    /// All-ones weight: leaves every feature unchanged.
    pub fn identity(dim: usize) -> Self {
        AttentionWeight {
            raw: vec![0.0; dim],
            scaled: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scaled.len()
    }

    /// One CSV line: the `d` raw values followed by the `d` scaled values.
    pub fn to_csv_line(&self) -> String {
        let fields: Vec<String> = self
            .raw
            .iter()
            .chain(&self.scaled)
            .map(|v| format!("{v:?}"))
            .collect();
        fields.join(",") + "\n"
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let values = line
            .trim()
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PattError::Format(format!("attention weight: {e}")))?;
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(PattError::Format(format!(
                "attention weight line has {} values, expected 2d",
                values.len()
            )));
        }
        let d = values.len() / 2;
        let w = AttentionWeight {
            raw: values[..d].to_vec(),
            scaled: values[d..].to_vec(),
        };
        if w.scaled.iter().any(|s| !(0.0..=2.0).contains(s)) {
            return Err(PattError::Format(
                "scaled attention weight outside [0, 2]".into(),
            ));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_line()).map_err(|e| PattError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| PattError::io(path, e))?;
        Self::from_csv_line(&s)
    }
}

/// `I^k(z) = (dS_y / dz^k) z^k`; for a linear classifier `W[y, k] z^k`.
pub fn channel_importance(z: &[f64], y: usize, clf: &LinearClassifier) -> Result<Vec<f64>> {
    check_dim(clf.dim, z.len())?;
    if y >= clf.num_classes() {
        return Err(PattError::UnknownClass {
            class: y,
            classes: clf.num_classes(),
        });
    }
    Ok(clf.row(y).iter().zip(z).map(|(w, zk)| w * zk).collect())
}

/// Raw attention weight
/// `A = (1/|N|) Σ_j [Σ_{N_j^in} I(z)/pi_j - Σ_{N_j^out} I(z)/pi_j]`.
///
/// ID samples use their true label; OOD samples are labelled by the
/// classifier's argmax. Each channel is reduced over sorted contributions, so
/// the result does not depend on sample order.
pub fn attention_weight(
    cb_id: &[(&[f64], usize)],
    ood: &[&[f64]],
    clf: &LinearClassifier,
    priors: &[f64],
) -> Result<Vec<f64>> {
    if cb_id.is_empty() {
        return Err(PattError::contract("attention weight needs ID samples"));
    }
    check_dim(clf.num_classes(), priors.len())?;
    let d = clf.dim;
    let total = (cb_id.len() + ood.len()) as f64;
    let mut contributions: Vec<Vec<f64>> = vec![Vec::with_capacity(cb_id.len() + ood.len()); d];

    let mut push = |z: &[f64], y: usize, sign: f64| -> Result<()> {
        let p = priors[y];
        if !(p > 0.0) {
            return Err(PattError::ZeroPrior { class: y });
        }
        for (k, v) in channel_importance(z, y, clf)?.into_iter().enumerate() {
            contributions[k].push(sign * v / p);
        }
        Ok(())
    };
    for &(z, y) in cb_id {
        push(z, y, 1.0)?;
    }
    for &z in ood {
        let y = argmax(&clf.logits(z)?);
        push(z, y, -1.0)?;
    }
    Ok(contributions
        .into_iter()
        .map(|mut c| {
            c.sort_by(f64::total_cmp);
            c.iter().sum::<f64>() / total
        })
        .collect())
}

/// Min-max map onto `[0, 2]`; a constant input maps to all ones.
pub fn scale_weight(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range >= SCALE_MIN_RANGE) {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|r| (2.0 * (r - min) / range).clamp(0.0, 2.0))
        .collect()
}

/// `z ⊙ A^scale`, without renormalization.
pub fn calibrate_feature(z: &[f64], scaled: &[f64]) -> Result<Vec<f64>> {
    check_dim(scaled.len(), z.len())?;
    Ok(z.iter().zip(scaled).map(|(a, b)| a * b).collect())
}

/// `ln Σ_j e^{logit_j}`; higher means more in-distribution.
pub fn energy_score(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(PattError::contract("energy score of empty logits"));
    }
    Ok(lse_unchecked(logits))
}

/// Maximum softmax probability.
pub fn msp_score(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(PattError::contract("MSP needs at least two logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((max - lse_unchecked(logits)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Energy,
    Msp,
}

impl ScoreKind {
    pub fn score(self, logits: &[f64]) -> Result<f64> {
        match self {
            ScoreKind::Energy => energy_score(logits),
            ScoreKind::Msp => msp_score(logits),
        }
    }
}

/// `W[y, :] / ||W[y, :]||^t` for every row; the bias is unchanged.
pub fn tau_norm_classifier(clf: &LinearClassifier, t: f64) -> Result<LinearClassifier> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PattError::contract(format!(
            "tau-norm exponent {t} not in [0, 1]"
        )));
    }
    let mut weight = Vec::with_capacity(clf.weight.len());
    for y in 0..clf.num_classes() {
        let row = clf.row(y);
        let n = norm(row);
        if !(n > 0.0) {
            return Err(PattError::contract(format!("classifier row {y} is zero")));
        }
        let s = n.powf(-t);
        weight.extend(row.iter().map(|w| w * s));
    }
    LinearClassifier::new(weight, clf.bias.clone(), clf.dim)
}

/// `logit_y - ln pi_y`.
pub fn posthoc_la_adjust(logits: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    check_dim(priors.len(), logits.len())?;
    if let Some(class) = priors.iter().position(|&p| !(p > 0.0)) {
        return Err(PattError::ZeroPrior { class });
    }
    Ok(logits.iter().zip(priors).map(|(l, p)| l - p.ln()).collect())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_10;

    use super::*;

    fn eye(d: usize) -> LinearClassifier {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        LinearClassifier::new(w, vec![0.0; d], d).unwrap()
    }

    #[test]
    fn importance_examples() {
        let z = [0.3, -0.5, 0.8];
        assert_eq!(
            channel_importance(&z, 1, &eye(3)).unwrap(),
            vec![0.0, -0.5, 0.0]
        );
        assert_eq!(
            channel_importance(&[0.0; 3], 2, &eye(3)).unwrap(),
            vec![0.0; 3]
        );
        assert!(channel_importance(&z, 3, &eye(3)).is_err());
    }

    #[test]
    fn importance_matches_finite_differences() {
        let w = vec![
            0.4, -1.1, 0.2, 0.9, 1.3, 0.5, -0.7, 0.0, -0.2, 0.6, 1.7, -0.3, 0.8, -0.4, 0.1, 1.2,
        ];
        let clf = LinearClassifier::new(w, vec![0.1, -0.2, 0.3, 0.05], 4).unwrap();
        let z = [0.5, -0.5, 0.1, 0.7];
        let got = channel_importance(&z, 2, &clf).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (clf.logits(&zp).unwrap()[2] - clf.logits(&zm).unwrap()[2]) / (2.0 * h);
            assert!((fd * z[k] - got[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn attention_hand_example() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let a = attention_weight(&[(&e1, 0), (&e2, 1)], &[], &eye(2), &[0.5, 0.5]).unwrap();
        assert_eq!(a, vec![1.0, 1.0]);
    }

    #[test]
    fn attention_cancels_for_matching_sets() {
        let a = [0.8, 0.6];
        let b = [-0.6, 0.8];
        let w = attention_weight(&[(&a, 0), (&b, 1)], &[&a, &b], &eye(2), &[0.7, 0.3]).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn attention_is_homogeneous_in_inverse_prior() {
        let a = [0.8, 0.6];
        let b = [-0.6, 0.8];
        let o = [0.1, -0.99];
        let base = attention_weight(&[(&a, 0), (&b, 1)], &[&o], &eye(2), &[0.7, 0.3]).unwrap();
        let scaled = attention_weight(&[(&a, 0), (&b, 1)], &[&o], &eye(2), &[0.35, 0.15]).unwrap();
        for (x, y) in base.iter().zip(&scaled) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_rejects_zero_prior() {
        let a = [0.8, 0.6];
        assert!(matches!(
            attention_weight(&[(&a, 1)], &[], &eye(2), &[1.0, 0.0]),
            Err(PattError::ZeroPrior { class: 1 })
        ));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_weight(&[0.3; 4]), vec![1.0; 4]);
        assert_eq!(scale_weight(&[-1.0, 0.0, 1.0]), vec![0.0, 1.0, 2.0]);
        let s = scale_weight(&[0.0, 1.0, 3.0]);
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-15 && s[0] == 0.0 && s[2] == 2.0);
    }

    #[test]
    fn calibrate_examples() {
        let z = [1.0, 2.0];
        assert_eq!(calibrate_feature(&z, &[1.0, 1.0]).unwrap(), z.to_vec());
        assert_eq!(calibrate_feature(&z, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(calibrate_feature(&z, &[0.5, 2.0]).unwrap(), vec![0.5, 4.0]);
        assert!(calibrate_feature(&z, &[1.0]).is_err());
    }

    #[test]
    fn score_examples() {
        assert!((energy_score(&[0.0; 10]).unwrap() - LN_10).abs() < 1e-14);
        assert!((energy_score(&[1.0, 0.0]).unwrap() - 1.313262).abs() < 1e-6);
        let l = [0.3, -1.0, 2.0];
        let shifted: Vec<f64> = l.iter().map(|v| v + 4.5).collect();
        assert!((energy_score(&shifted).unwrap() - energy_score(&l).unwrap() - 4.5).abs() < 1e-13);

        assert!((msp_score(&[0.0; 4]).unwrap() - 0.25).abs() < 1e-15);
        let e = 1f64.exp();
        assert!((msp_score(&[1.0, 0.0]).unwrap() - e / (e + 1.0)).abs() < 1e-15);
        assert!((msp_score(&[50.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tau_norm_examples() {
        let clf = LinearClassifier::new(vec![0.0, 4.0, 3.0, 4.0], vec![0.1, 0.2], 2).unwrap();
        assert_eq!(tau_norm_classifier(&clf, 0.0).unwrap(), clf);
        let unit = tau_norm_classifier(&clf, 1.0).unwrap();
        for y in 0..2 {
            assert!((norm(unit.row(y)) - 1.0).abs() < 1e-15);
        }
        let half = tau_norm_classifier(&clf, 0.5).unwrap();
        assert_eq!(half.row(0), &[0.0, 2.0]);
        assert_eq!(half.bias, clf.bias);
        let zero = LinearClassifier::new(vec![0.0, 0.0, 1.0, 0.0], vec![0.0; 2], 2).unwrap();
        assert!(tau_norm_classifier(&zero, 0.5).is_err());
    }

    #[test]
    fn posthoc_la_examples() {
        let out = posthoc_la_adjust(&[0.2, -0.1, 0.5], &[1.0 / 3.0; 3]).unwrap();
        let ln3 = 3f64.ln();
        assert!((out[0] - 0.2 - ln3).abs() < 1e-15 && argmax(&out) == 2);
        let out = posthoc_la_adjust(&[0.0, 0.0], &[0.9, 0.1]).unwrap();
        assert!((out[0] + 0.9f64.ln()).abs() < 1e-15 && (out[1] - LN_10).abs() < 1e-15);
        assert_eq!(argmax(&out), 1);
        let twice = posthoc_la_adjust(&out, &[0.9, 0.1]).unwrap();
        assert_ne!(twice, out);
        assert!(posthoc_la_adjust(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn attention_csv_round_trip() {
        let w = AttentionWeight::from_raw(vec![0.3, -1.25, 7.0]);
        let back = AttentionWeight::from_csv_line(&w.to_csv_line()).unwrap();
        assert_eq!(back, w);
        assert!(AttentionWeight::from_csv_line("1,2,3").is_err());
        assert!(AttentionWeight::from_csv_line("0,0,3,1").is_err());
    }
}
