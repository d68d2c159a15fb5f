use super::{norm, UnitFeature, VmfMixture, VmfParams};
use crate::error::{check_dim, PattError, Result};

/// Upper clamp on estimated concentrations.
pub const KAPPA_MAX: f64 = 1e4;

/// With previous statistics available, classes with fewer batch samples than
/// this keep their previous component (a single sample always has `r̄ = 1`).
pub const MIN_UPDATE_COUNT: usize = 2;

/// Banerjee's approximation `r̄ (d - r̄²) / (1 - r̄²)`, clamped to `[0, KAPPA_MAX]`.
pub(crate) fn banerjee_kappa(mean_resultant: f64, dim: usize) -> f64 {
    let r = mean_resultant.clamp(0.0, 1.0);
    let denom = 1.0 - r * r;
    if denom <= 1e-12 {
        return KAPPA_MAX;
    }
    (r * (dim as f64 - r * r) / denom).clamp(0.0, KAPPA_MAX)
}

/// Per-class vMF statistics from a batch of labelled hypersphere features.
///
/// Mean directions come from the normalized class resultant and concentrations
/// from [`banerjee_kappa`]. With `previous`, each updated class blends
/// `momentum * old + (1 - momentum) * batch` for both `mu` (renormalized) and
/// `kappa`. Priors are always recomputed from `class_counts`, the full
/// training-set class sizes.
pub fn estimate_class_stats(
    features: &[UnitFeature],
    labels: &[usize],
    class_counts: &[usize],
    previous: Option<&VmfMixture>,
    momentum: f64,
) -> Result<VmfMixture> {
    check_dim(features.len(), labels.len())?;
    if !(0.0..1.0).contains(&momentum) {
        return Err(PattError::contract(format!(
            "momentum {momentum} not in [0, 1)"
        )));
    }
    let k = class_counts.len();
    let dim = match (features.first(), previous) {
        (Some(f), _) => f.dim(),
        (None, Some(p)) => p.dim(),
        (None, None) => {
            return Err(PattError::contract(
                "no features and no previous statistics",
            ))
        }
    };
    if let Some(p) = previous {
        check_dim(k, p.num_classes())?;
        check_dim(dim, p.dim())?;
    }

    let mut resultants = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (z, &y) in features.iter().zip(labels) {
        check_dim(dim, z.dim())?;
        let r = resultants.get_mut(y).ok_or(PattError::UnknownClass {
            class: y,
            classes: k,
        })?;
        r.iter_mut().zip(z.iter()).for_each(|(a, b)| *a += b);
        counts[y] += 1;
    }

    let mut classes = Vec::with_capacity(k);
    for y in 0..k {
        let prev = previous.map(|p| &p.classes()[y]);
        let n = counts[y];
        let usable = match prev {
            Some(_) => n >= MIN_UPDATE_COUNT,
            None => n >= 1,
        };
        if !usable {
            match prev {
                Some(p) => {
                    classes.push(p.clone());
                    continue;
                }
                None => return Err(PattError::MissingClass { class: y }),
            }
        }
        let r = &resultants[y];
        let r_len = norm(r);
        let kappa_batch = banerjee_kappa(r_len / n as f64, dim);
        let mu_batch = if r_len > 1e-12 {
            UnitFeature::normalize(r.clone())?
        } else if let Some(p) = prev {
            p.mu.clone()
        } else {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            UnitFeature::new(e)?
        };
        let component = match prev {
            Some(p) if momentum > 0.0 => {
                let blended: Vec<f64> =
                    p.mu.iter()
                        .zip(mu_batch.iter())
                        .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
                        .collect();
                let mu = UnitFeature::normalize(blended).unwrap_or(mu_batch);
                let kappa = momentum * p.kappa + (1.0 - momentum) * kappa_batch;
                VmfParams::new(mu, kappa)?
            }
            _ => VmfParams::new(mu_batch, kappa_batch)?,
        };
        classes.push(component);
    }
    VmfMixture::new(classes, VmfMixture::priors_from_counts(class_counts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> UnitFeature {
        UnitFeature::normalize(v.to_vec()).unwrap()
    }

    #[test]
    fn banerjee_direct() {
        let expected = 0.5 * (3.0 - 0.25) / (1.0 - 0.25);
        assert!((banerjee_kappa(0.5, 3) - expected).abs() < 1e-15);
        assert!((expected - 1.8333).abs() < 1e-4);
        assert_eq!(banerjee_kappa(0.0, 3), 0.0);
        assert_eq!(banerjee_kappa(1.0, 3), KAPPA_MAX);
    }

    #[test]
    fn antipodal_pairs_give_zero_kappa() {
        let f = vec![
            unit(&[1.0, 0.0, 0.0]),
            unit(&[-1.0, 0.0, 0.0]),
            unit(&[0.0, 1.0, 0.0]),
            unit(&[0.0, -1.0, 0.0]),
        ];
        let mix = estimate_class_stats(&f, &[0, 0, 0, 0], &[4], None, 0.0).unwrap();
        assert!(mix.classes()[0].kappa.abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_clamp() {
        let z = unit(&[0.2, 0.3, -0.9]);
        let f = vec![z.clone(), z.clone(), z.clone(), unit(&[1.0, 0.0, 0.0])];
        let mix = estimate_class_stats(&f, &[0, 0, 0, 1], &[3, 1], None, 0.0).unwrap();
        let c = &mix.classes()[0];
        assert_eq!(c.kappa, KAPPA_MAX);
        for (a, b) in c.mu.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mix.priors(), &[0.75, 0.25]);
    }

    #[test]
    fn half_resultant_in_three_dims() {
        // Two unit vectors at angle 120 degrees: |r| = 1, r̄ = 0.5.
        let a = unit(&[1.0, 0.0, 0.0]);
        let b = unit(&[-0.5, 3f64.sqrt() / 2.0, 0.0]);
        let mix = estimate_class_stats(&[a, b], &[0, 0], &[2], None, 0.0).unwrap();
        assert!((mix.classes()[0].kappa - 0.5 * 2.75 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn missing_class_without_previous_errors() {
        let f = vec![unit(&[1.0, 0.0])];
        assert!(matches!(
            estimate_class_stats(&f, &[0], &[5, 5], None, 0.9),
            Err(PattError::MissingClass { class: 1 })
        ));
    }

    #[test]
    fn previous_fills_missing_and_small_classes() {
        let f = vec![unit(&[1.0, 0.1]), unit(&[1.0, -0.1]), unit(&[0.0, 1.0])];
        let first = estimate_class_stats(&f, &[0, 0, 1], &[2, 1], None, 0.0).unwrap();
        let next = estimate_class_stats(&f[..2], &[0, 0], &[2, 1], Some(&first), 0.9).unwrap();
        assert_eq!(next.classes()[1], first.classes()[1]);
    }

    #[test]
    fn ema_blends_kappa_and_direction() {
        let f1 = vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.2])];
        let f2 = vec![unit(&[0.0, 1.0]), unit(&[0.2, 1.0])];
        let a = estimate_class_stats(&f1, &[0, 0], &[2], None, 0.0).unwrap();
        let b = estimate_class_stats(&f2, &[0, 0], &[2], None, 0.0).unwrap();
        let blended = estimate_class_stats(&f2, &[0, 0], &[2], Some(&a), 0.5).unwrap();
        let c = &blended.classes()[0];
        assert!((c.kappa - 0.5 * (a.classes()[0].kappa + b.classes()[0].kappa)).abs() < 1e-9);
        assert!((c.mu[0] - c.mu[1]).abs() < 1e-12);
    }

    #[test]
    fn idempotent_on_repeated_batch() {
        let f = vec![
            unit(&[1.0, 0.3, 0.1]),
            unit(&[0.8, -0.2, 0.3]),
            unit(&[0.1, 1.0, 0.0]),
            unit(&[0.0, 0.9, 0.4]),
        ];
        let labels = [0, 0, 1, 1];
        let once = estimate_class_stats(&f, &labels, &[2, 2], None, 0.0).unwrap();
        let twice = estimate_class_stats(&f, &labels, &[2, 2], Some(&once), 0.9).unwrap();
        for (a, b) in once.classes().iter().zip(twice.classes()) {
            assert!((a.kappa - b.kappa).abs() < 1e-9);
            for (x, y) in a.mu.iter().zip(b.mu.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
