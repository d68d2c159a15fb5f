//! von Mises–Fisher distributions on the unit hypersphere.

mod estimate;
mod sample;
mod special;

use std::ops::Deref;

pub use estimate::{estimate_class_stats, KAPPA_MAX, MIN_UPDATE_COUNT};
pub use sample::{sample_uniform_sphere, sample_vmf, sample_vmf_with_rng};
pub use special::{bessel_ratio, log_bessel_i, log_norm_const, log_sphere_area, log_sum_exp};
pub(crate) use special::{lse_unchecked, softmax};

use crate::error::{check_dim, PattError, Result};

/// Tolerance on `||z|| = 1` for values declared to lie on the sphere.
pub const UNIT_NORM_TOL: f64 = 1e-9;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A point on the unit hypersphere `S^{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFeature(Vec<f64>);

impl UnitFeature {
    /// Wraps a vector that must already have unit norm.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(PattError::contract(format!("feature norm {n} is not 1")));
        }
        Ok(UnitFeature(v))
    }

    /// Projects a nonzero vector onto the sphere.
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if !(n > 1e-12) || !n.is_finite() {
            return Err(PattError::DegenerateEmbedding { norm: n });
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(UnitFeature(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for UnitFeature {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Mean direction and concentration of one vMF component.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub mu: UnitFeature,
    pub kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitFeature, kappa: f64) -> Result<Self> {
        if mu.dim() < 2 {
            return Err(PattError::contract("vMF dimension must be >= 2"));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(PattError::contract(format!(
                "kappa must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn log_norm_const(&self) -> f64 {
        special::log_norm_const_unchecked(self.dim(), self.kappa)
    }
}

/// `ln Z_d(kappa) + kappa mu^T z`.
pub fn vmf_log_pdf(params: &VmfParams, z: &[f64]) -> Result<f64> {
    check_dim(params.dim(), z.len())?;
    Ok(params.log_norm_const() + params.kappa * dot(&params.mu, z))
}

/// Per-class vMF components with class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixture {
    classes: Vec<VmfParams>,
    priors: Vec<f64>,
}

impl VmfMixture {
    pub fn new(classes: Vec<VmfParams>, priors: Vec<f64>) -> Result<Self> {
        if classes.is_empty() {
            return Err(PattError::contract("mixture needs at least one class"));
        }
        check_dim(classes.len(), priors.len())?;
        let dim = classes[0].dim();
        for c in &classes {
            check_dim(dim, c.dim())?;
        }
        if let Some(class) = priors.iter().position(|&p| !(p > 0.0)) {
            return Err(PattError::ZeroPrior { class });
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PattError::contract(format!("priors sum to {total}, not 1")));
        }
        Ok(VmfMixture { classes, priors })
    }

    /// Priors proportional to the given class counts.
    pub fn priors_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(PattError::contract("class counts are all zero"));
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(PattError::ZeroPrior { class });
        }
        Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    pub fn classes(&self) -> &[VmfParams] {
        &self.classes
    }

    pub fn class(&self, y: usize) -> Result<&VmfParams> {
        self.classes.get(y).ok_or(PattError::UnknownClass {
            class: y,
            classes: self.classes.len(),
        })
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
}

/// `ln Σ_y pi_y exp(vmf_log_pdf(class_y, z))`.
pub fn mixture_log_pdf(mix: &VmfMixture, z: &[f64]) -> Result<f64> {
    check_dim(mix.dim(), z.len())?;
    let terms: Vec<f64> = mix
        .classes
        .iter()
        .zip(&mix.priors)
        .map(|(c, p)| p.ln() + c.log_norm_const() + c.kappa * dot(&c.mu, z))
        .collect();
    Ok(lse_unchecked(&terms))
}

/// `ln E[exp(t^T z)]` for `z ~ vMF(mu, kappa)`: `ln Z_d(kappa) - ln Z_d(||kappa mu + t||)`.
pub fn vmf_mgf_log(params: &VmfParams, t: &[f64]) -> Result<f64> {
    check_dim(params.dim(), t.len())?;
    let shifted: Vec<f64> = params
        .mu
        .iter()
        .zip(t)
        .map(|(m, ti)| params.kappa * m + ti)
        .collect();
    let tilde = norm(&shifted);
    let d = params.dim();
    Ok(params.log_norm_const() - special::log_norm_const_unchecked(d, tilde))
}
