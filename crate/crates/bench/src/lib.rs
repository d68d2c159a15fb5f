//! Fixtures shared by the kernel benchmarks.

use patt_core::data::{gen_longtail, SynthConfig, SynthData};
use patt_core::vmf::{UnitFeature, VmfMixture, VmfParams};

/// A `k`-class mixture in `d` dimensions with spread-out means.
pub fn mixture(d: usize, k: usize) -> VmfMixture {
    let classes = (0..k)
        .map(|j| {
            let v: Vec<f64> = (0..d)
                .map(|i| ((i * 7 + j * 3) as f64 * 0.61).sin() + 0.01)
                .collect();
            VmfParams::new(UnitFeature::normalize(v).unwrap(), 5.0 + j as f64)
        })
        .collect::<Result<Vec<_>, _>>()
        .unwrap();
    VmfMixture::new(classes, vec![1.0 / k as f64; k]).unwrap()
}

pub fn unit(d: usize, phase: f64) -> UnitFeature {
    let v: Vec<f64> = (0..d).map(|i| (i as f64 * 1.3 + phase).cos()).collect();
    UnitFeature::normalize(v).unwrap()
}

/// Deterministic pseudo-scores for metric benchmarks.
pub fn scores(n: usize, offset: f64) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 * 12.9898).sin() * 43758.5453).fract() + offset)
        .collect()
}

pub fn small_dataset() -> SynthData {
    gen_longtail(&SynthConfig {
        max_per_class: 200,
        ood_train_count: 500,
        ood_test_count: 200,
        ..SynthConfig::default()
    })
    .unwrap()
}
