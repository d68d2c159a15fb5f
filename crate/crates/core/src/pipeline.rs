//! Inference-side pipeline: attention extraction from a trained model and
//! scoring of ID/OOD test sets.

use crate::calibration::{
    attention_weight, calibrate_feature, posthoc_la_adjust, tau_norm_classifier, AttentionWeight,
    ScoreKind,
};
use crate::data::{class_balanced_subset, LabeledSet};
use crate::error::{check_dim, PattError, Result};
use crate::metrics::{evaluate, EvalReport, ScoredSample};
use crate::model::{argmax, EncoderClassifier, LinearClassifier};
use crate::vmf::VmfMixture;

/// Optional post-hoc adjustment of the classifier before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Posthoc {
    None,
    /// Subtract `ln pi_y` from every logit.
    LogitAdjust,
    /// Rescale classifier rows by `||W_y||^-t`.
    TauNorm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub score: ScoreKind,
    pub posthoc: Posthoc,
    pub tail_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score: ScoreKind::Energy,
            posthoc: Posthoc::None,
            tail_fraction: 1.0 / 3.0,
        }
    }
}

/// Attention weight of a trained model. `D^cb_in` takes `per_class` samples
/// of each class from `train_id` (default: the smallest class count); the
/// OOD side is the whole surrogate set.
pub fn extract_attention(
    model: &EncoderClassifier,
    train_id: &LabeledSet,
    train_ood: &LabeledSet,
    per_class: Option<usize>,
    seed: u64,
) -> Result<AttentionWeight> {
    check_dim(model.num_classes(), train_id.num_classes())?;
    let per_class = match per_class {
        Some(m) => m,
        None => train_id.class_counts.iter().copied().min().unwrap_or(0),
    };
    let cb = class_balanced_subset(train_id, per_class, seed)?;
    let priors = VmfMixture::priors_from_counts(&train_id.class_counts)?;
    let clf = model.classifier();

    let id_feats = features(model, &cb)?;
    let ood_feats = features(model, train_ood)?;
    let cb_pairs: Vec<(&[f64], usize)> = id_feats
        .iter()
        .zip(&cb.labels)
        .map(|(z, &y)| (z.as_slice(), y as usize))
        .collect();
    let ood_refs: Vec<&[f64]> = ood_feats.iter().map(Vec::as_slice).collect();
    let raw = attention_weight(&cb_pairs, &ood_refs, &clf, &priors)?;
    Ok(AttentionWeight::from_raw(raw))
}

fn features(model: &EncoderClassifier, set: &LabeledSet) -> Result<Vec<Vec<f64>>> {
    set.inputs
        .iter()
        .map(|x| model.encoder_forward(x).map(|(_, z)| z.into_inner()))
        .collect()
}

/// Classifier and logit post-processing shared by every scored sample.
struct Scorer<'a> {
    model: &'a EncoderClassifier,
    clf: LinearClassifier,
    scale: Option<&'a [f64]>,
    la_priors: Option<Vec<f64>>,
    kind: ScoreKind,
}

impl<'a> Scorer<'a> {
    fn new(
        model: &'a EncoderClassifier,
        attention: Option<&'a AttentionWeight>,
        class_counts: &[usize],
        cfg: &EvalConfig,
    ) -> Result<Self> {
        if let Some(a) = attention {
            check_dim(model.feature_dim(), a.dim())?;
        }
        let mut clf = model.classifier();
        let mut la_priors = None;
        match cfg.posthoc {
            Posthoc::None => {}
            Posthoc::LogitAdjust => la_priors = Some(VmfMixture::priors_from_counts(class_counts)?),
            Posthoc::TauNorm(t) => clf = tau_norm_classifier(&clf, t)?,
        }
        Ok(Scorer {
            model,
            clf,
            scale: attention.map(|a| a.scaled.as_slice()),
            la_priors,
            kind: cfg.score,
        })
    }

    /// `(score, predicted class)` of one raw input.
    fn score(&self, x: &[f64]) -> Result<(f64, usize)> {
        let (_, z) = self.model.encoder_forward(x)?;
        let logits = match self.scale {
            Some(s) => self.clf.logits(&calibrate_feature(&z, s)?)?,
            None => self.clf.logits(&z)?,
        };
        let logits = match &self.la_priors {
            Some(p) => posthoc_la_adjust(&logits, p)?,
            None => logits,
        };
        let s = self.kind.score(&logits)?;
        if !s.is_finite() {
            return Err(PattError::NonFinite {
                term: "OOD score".into(),
            });
        }
        Ok((s, argmax(&logits)))
    }
}

/// Scores every ID test sample, then every OOD test sample, in file order.
pub fn score_samples(
    model: &EncoderClassifier,
    attention: Option<&AttentionWeight>,
    test_id: &LabeledSet,
    test_ood: &LabeledSet,
    cfg: &EvalConfig,
) -> Result<Vec<ScoredSample>> {
    let scorer = Scorer::new(model, attention, &test_id.class_counts, cfg)?;
    let mut out = Vec::with_capacity(test_id.len() + test_ood.len());
    for (x, &y) in test_id.inputs.iter().zip(&test_id.labels) {
        let truth =
            usize::try_from(y).map_err(|_| PattError::contract("OOD label in the ID test set"))?;
        let (score, pred) = scorer.score(x)?;
        out.push(ScoredSample {
            score,
            is_id: true,
            labels: Some((truth, pred)),
        });
    }
    for x in &test_ood.inputs {
        let (score, _) = scorer.score(x)?;
        out.push(ScoredSample {
            score,
            is_id: false,
            labels: None,
        });
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &EncoderClassifier,
    attention: Option<&AttentionWeight>,
    test_id: &LabeledSet,
    test_ood: &LabeledSet,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<ScoredSample>)> {
    let samples = score_samples(model, attention, test_id, test_ood, cfg)?;
    let report = evaluate(&samples, &test_id.class_counts, cfg.tail_fraction)?;
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OOD_LABEL;

    fn toy() -> (EncoderClassifier, LabeledSet, LabeledSet) {
        let model = EncoderClassifier::new(3, &[5], 3, 2, 7).unwrap();
        let id = LabeledSet::new(
            vec![
                vec![1.0, 0.2, -0.3],
                vec![0.1, 0.9, 0.4],
                vec![-0.5, 0.5, 0.5],
            ],
            vec![0, 1, 1],
            vec![4, 2],
            3,
        )
        .unwrap();
        let ood = LabeledSet::new(
            vec![vec![0.3, -0.8, 0.1], vec![0.0, 0.0, 1.0]],
            vec![OOD_LABEL; 2],
            vec![4, 2],
            3,
        )
        .unwrap();
        (model, id, ood)
    }

    #[test]
    fn identity_weight_is_bit_exact() {
        let (model, id, ood) = toy();
        let cfg = EvalConfig::default();
        let plain = score_samples(&model, None, &id, &ood, &cfg).unwrap();
        let ones = AttentionWeight::identity(3);
        let cal = score_samples(&model, Some(&ones), &id, &ood, &cfg).unwrap();
        for (a, b) in plain.iter().zip(&cal) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a.labels, b.labels);
        }
        let constant = AttentionWeight::from_raw(vec![0.4; 3]);
        assert_eq!(constant.scaled, vec![1.0; 3]);
    }

    #[test]
    fn sample_order_and_sides() {
        let (model, id, ood) = toy();
        let s = score_samples(&model, None, &id, &ood, &EvalConfig::default()).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s[..3].iter().all(|x| x.is_id) && s[3..].iter().all(|x| !x.is_id));
        assert_eq!(s[1].labels.unwrap().0, 1);
    }

    #[test]
    fn attention_from_model_is_in_range() {
        let (model, id, ood) = toy();
        let a = extract_attention(&model, &id, &ood, None, 0).unwrap();
        assert_eq!(a.dim(), 3);
        assert!(a.scaled.iter().all(|v| (0.0..=2.0).contains(v)));
        assert_eq!(a, extract_attention(&model, &id, &ood, None, 0).unwrap());
    }

    #[test]
    fn posthoc_variants_run() {
        let (model, id, ood) = toy();
        for posthoc in [Posthoc::LogitAdjust, Posthoc::TauNorm(0.5)] {
            let cfg = EvalConfig {
                posthoc,
                score: ScoreKind::Msp,
                ..EvalConfig::default()
            };
            let (r, _) = evaluate_model(&model, None, &id, &ood, &cfg).unwrap();
            assert!((0.0..=1.0).contains(&r.auroc));
        }
    }
}
