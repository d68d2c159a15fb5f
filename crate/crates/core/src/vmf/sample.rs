use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::{dot, UnitFeature, VmfParams};
use crate::error::{PattError, Result};

/// Uniform draw from `S^{dim-1}` by normalizing a standard Gaussian vector.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitFeature {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = UnitFeature::normalize(v) {
            return u;
        }
    }
}

/// `n` draws from `vMF(mu, kappa)` with a ChaCha stream seeded by `seed`.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<Vec<UnitFeature>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_vmf_with_rng(params, n, &mut rng)
}

/// Wood's rejection sampler: draw the cosine `w = mu^T z` from its marginal,
/// then a uniform tangent direction orthogonal to `mu`.
pub fn sample_vmf_with_rng<R: Rng + ?Sized>(
    params: &VmfParams,
    n: usize,
    rng: &mut R,
) -> Result<Vec<UnitFeature>> {
    if n == 0 {
        return Err(PattError::contract("sample_vmf needs n >= 1"));
    }
    let d = params.dim();
    let kappa = params.kappa;
    let dm1 = (d - 1) as f64;
    // b = (-2k + sqrt(4k² + (d-1)²)) / (d-1), rearranged to avoid cancellation.
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * dm1, 0.5 * dm1)
        .map_err(|e| PattError::contract(format!("beta distribution: {e}")))?;

    let mu = &params.mu;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        // Tangent direction: Gaussian vector with its mu-component removed.
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let proj = dot(&g, mu);
        let tangent: Vec<f64> = g
            .iter()
            .zip(mu.iter())
            .map(|(gi, mi)| gi - proj * mi)
            .collect();
        let Ok(v) = UnitFeature::normalize(tangent) else {
            continue;
        };
        let s = (1.0 - w * w).max(0.0).sqrt();
        let z: Vec<f64> = mu
            .iter()
            .zip(v.iter())
            .map(|(mi, vi)| w * mi + s * vi)
            .collect();
        out.push(UnitFeature::normalize(z)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(samples: &[UnitFeature]) -> Vec<f64> {
        let d = samples[0].dim();
        let mut m = vec![0.0; d];
        for s in samples {
            m.iter_mut().zip(s.iter()).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= samples.len() as f64);
        m
    }

    #[test]
    fn uniform_when_kappa_zero() {
        let p = VmfParams::new(UnitFeature::new(vec![0.0, 0.0, 1.0]).unwrap(), 0.0).unwrap();
        let s = sample_vmf(&p, 100_000, 1).unwrap();
        assert!(super::super::norm(&mean(&s)) < 0.02);
    }

    #[test]
    fn concentrated_around_mu() {
        let mu = UnitFeature::normalize(vec![1.0, -2.0, 0.5]).unwrap();
        let p = VmfParams::new(mu.clone(), 50.0).unwrap();
        let s = sample_vmf(&p, 10_000, 2).unwrap();
        let m = UnitFeature::normalize(mean(&s)).unwrap();
        let angle = dot(&m, &mu).clamp(-1.0, 1.0).acos();
        assert!(angle < 0.05, "angle {angle}");
        // E[mu^T z] = A_3(50) = coth(50) - 1/50.
        let mean_cos: f64 = s.iter().map(|z| dot(z, &mu)).sum::<f64>() / s.len() as f64;
        assert!((mean_cos - (1.0 / 50f64.tanh() - 0.02)).abs() < 2e-3);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = VmfParams::new(UnitFeature::normalize(vec![1.0; 5]).unwrap(), 3.0).unwrap();
        assert_eq!(
            sample_vmf(&p, 50, 9).unwrap(),
            sample_vmf(&p, 50, 9).unwrap()
        );
        assert_ne!(
            sample_vmf(&p, 50, 9).unwrap(),
            sample_vmf(&p, 50, 10).unwrap()
        );
    }

    #[test]
    fn circle_case_works() {
        let p = VmfParams::new(UnitFeature::new(vec![1.0, 0.0]).unwrap(), 4.0).unwrap();
        let s = sample_vmf(&p, 20_000, 3).unwrap();
        let mean_cos: f64 = s.iter().map(|z| z[0]).sum::<f64>() / s.len() as f64;
        // A_2(4) = I_1(4) / I_0(4)
        let a = crate::vmf::bessel_ratio(2, 4.0);
        assert!((mean_cos - a).abs() < 5e-3, "{mean_cos} vs {a}");
    }

    #[test]
    fn rejects_zero_count() {
        let p = VmfParams::new(UnitFeature::new(vec![1.0, 0.0]).unwrap(), 4.0).unwrap();
        assert!(sample_vmf(&p, 0, 0).is_err());
    }
}
