//! Datasets: labelled vectors, synthetic long-tailed generation and CSV IO.

mod csv_io;
mod synth;

pub use csv_io::{load_features_csv, save_features_csv};
pub use synth::{
    gen_longtail, longtail_counts, write_manifest, SynthConfig, SynthData, SynthGeometry,
};

use rand::seq::SliceRandom;

use crate::error::{PattError, Result};
use crate::seed::rng_for;
use crate::vmf::{norm, UNIT_NORM_TOL};

/// Label of surrogate and test outliers, in memory and on disk.
pub const OOD_LABEL: i32 = -1;

/// Input vectors with class labels.
///
/// `class_counts` always holds the per-class sizes of the training split the
/// set belongs to, so evaluation and calibration splits carry training priors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<i32>,
    pub class_counts: Vec<usize>,
    pub dim: usize,
}

impl LabeledSet {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<i32>,
        class_counts: Vec<usize>,
        dim: usize,
    ) -> Result<Self> {
        let set = LabeledSet {
            inputs,
            labels,
            class_counts,
            dim,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(PattError::contract(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.inputs.iter().position(|x| x.len() != self.dim) {
            return Err(PattError::DimensionMismatch {
                expected: self.dim,
                got: self.inputs[i].len(),
            });
        }
        let k = self.class_counts.len() as i32;
        if let Some(&y) = self
            .labels
            .iter()
            .find(|&&y| y != OOD_LABEL && !(0..k).contains(&y))
        {
            return Err(PattError::UnknownClass {
                class: y.max(0) as usize,
                classes: k as usize,
            });
        }
        Ok(())
    }

    /// Errors unless every input lies on the unit sphere.
    pub fn check_unit_norm(&self) -> Result<()> {
        for (i, x) in self.inputs.iter().enumerate() {
            let n = norm(x);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(PattError::contract(format!(
                    "row {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Errors unless `class_counts` equals the label histogram.
    pub fn check_counts_match_labels(&self) -> Result<()> {
        if self.label_histogram() != self.class_counts {
            return Err(PattError::contract("class_counts disagree with labels"));
        }
        Ok(())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.class_counts.len()];
        for &y in &self.labels {
            if y >= 0 {
                h[y as usize] += 1;
            }
        }
        h
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }
}

/// Up to `per_class` samples of every class, drawn without replacement.
///
/// The result is ordered by class and keeps the training `class_counts`.
pub fn class_balanced_subset(
    train: &LabeledSet,
    per_class: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if per_class == 0 {
        return Err(PattError::contract("per_class must be >= 1"));
    }
    let k = train.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in train.labels.iter().enumerate() {
        if y >= 0 {
            by_class[y as usize].push(i);
        }
    }
    let mut rng = rng_for(seed, "balanced-subset");
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (y, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            return Err(PattError::MissingClass { class: y });
        }
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(per_class) {
            inputs.push(train.inputs[i].clone());
            labels.push(y as i32);
        }
    }
    LabeledSet::new(inputs, labels, train.class_counts.clone(), train.dim)
}
