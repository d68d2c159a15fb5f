use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{LabeledSet, OOD_LABEL};
use crate::error::{PattError, Result};
use crate::seed::rng_for;
use crate::vmf::{dot, sample_uniform_sphere, sample_vmf_with_rng, UnitFeature, VmfParams};

/// Test-OOD directions keep their cosine to every ID and train-OOD direction below this.
pub const OOD_SEPARATION: f64 = 0.9;
const MAX_PLACEMENT_TRIES: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub feature_dim: usize,
    /// Dimension of the raw inputs; ignored when `features_direct` is set.
    pub input_dim: usize,
    pub imbalance_ratio: f64,
    pub max_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// vMF concentration of every ID class cluster.
    pub class_kappa: f64,
    /// Maximum cosine between two ID class directions.
    pub class_max_cos: f64,
    pub ood_train_clusters: usize,
    pub ood_test_clusters: usize,
    pub ood_kappa: f64,
    pub ood_train_count: usize,
    pub ood_test_count: usize,
    /// Standard deviation of Gaussian noise added to raw inputs.
    pub input_noise: f64,
    /// Emit the sphere features themselves instead of raw inputs.
    pub features_direct: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            feature_dim: 8,
            input_dim: 16,
            imbalance_ratio: 100.0,
            max_per_class: 500,
            val_per_class: 20,
            test_per_class: 100,
            class_kappa: 40.0,
            class_max_cos: 0.6,
            ood_train_clusters: 20,
            ood_test_clusters: 10,
            ood_kappa: 20.0,
            ood_train_count: 5000,
            ood_test_count: 1000,
            input_noise: 0.05,
            features_direct: false,
            seed: 0,
        }
    }
}

/// Exponential profile `floor(n_max * rho^{-y/(K-1)})`.
pub fn longtail_counts(
    classes: usize,
    max_per_class: usize,
    imbalance_ratio: f64,
) -> Result<Vec<usize>> {
    if classes == 0 {
        return Err(PattError::contract("need at least one class"));
    }
    if !(imbalance_ratio >= 1.0) || !imbalance_ratio.is_finite() {
        return Err(PattError::contract(format!(
            "imbalance ratio {imbalance_ratio} < 1"
        )));
    }
    if classes == 1 {
        return Ok(vec![max_per_class]);
    }
    let counts: Vec<usize> = (0..classes)
        .map(|y| {
            let frac = imbalance_ratio.powf(-(y as f64) / (classes - 1) as f64);
            // Slack absorbs powf rounding at exact integers (e.g. 500 / 100).
            (max_per_class as f64 * frac + 1e-9).floor() as usize
        })
        .collect();
    if counts[classes - 1] == 0 {
        return Err(PattError::contract(format!(
            "max_per_class {max_per_class} too small for ratio {imbalance_ratio}"
        )));
    }
    Ok(counts)
}

/// Cluster directions used by a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGeometry {
    pub class_dirs: Vec<UnitFeature>,
    pub ood_train_dirs: Vec<UnitFeature>,
    pub ood_test_dirs: Vec<UnitFeature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: LabeledSet,
    pub val_id: LabeledSet,
    pub test_id: LabeledSet,
    pub train_ood: LabeledSet,
    pub test_ood: LabeledSet,
    pub geometry: SynthGeometry,
}

fn place_directions(
    n: usize,
    dim: usize,
    avoid: &[&UnitFeature],
    max_cos_avoid: f64,
    max_cos_self: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UnitFeature>> {
    let mut out: Vec<UnitFeature> = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > MAX_PLACEMENT_TRIES {
            return Err(PattError::contract(format!(
                "cannot place {n} directions in {dim} dimensions with the requested separation"
            )));
        }
        let cand = sample_uniform_sphere(dim, rng);
        let ok_avoid = avoid.iter().all(|a| dot(a, &cand) < max_cos_avoid);
        let ok_self = out.iter().all(|a| dot(a, &cand) < max_cos_self);
        if ok_avoid && ok_self {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Fixed random affine map from features to raw inputs.
struct RawMap {
    weight: Vec<Vec<f64>>,
    offset: Vec<f64>,
    noise: f64,
}

impl RawMap {
    fn new(input_dim: usize, feature_dim: usize, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let weight = (0..input_dim)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let offset = (0..input_dim)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        RawMap {
            weight,
            offset,
            noise,
        }
    }

    fn apply(&self, z: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.weight
            .iter()
            .zip(&self.offset)
            .map(|(row, c)| dot(row, z) + c + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    map: Option<RawMap>,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn draw(
        &mut self,
        dir: &UnitFeature,
        kappa: f64,
        n: usize,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let params = VmfParams::new(dir.clone(), kappa)?;
        for z in sample_vmf_with_rng(&params, n, &mut self.rng)? {
            let x = match &self.map {
                Some(m) => m.apply(&z, &mut self.rng),
                None => z.into_inner(),
            };
            out.push(x);
        }
        Ok(())
    }

    fn id_split(
        &mut self,
        dirs: &[UnitFeature],
        per_class: &[usize],
        counts: &[usize],
    ) -> Result<LabeledSet> {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (y, (dir, &n)) in dirs.iter().zip(per_class).enumerate() {
            self.draw(dir, self.cfg.class_kappa, n, &mut inputs)?;
            labels.extend(std::iter::repeat_n(y as i32, n));
        }
        LabeledSet::new(inputs, labels, counts.to_vec(), self.dim())
    }

    fn ood_split(
        &mut self,
        dirs: &[UnitFeature],
        total: usize,
        counts: &[usize],
    ) -> Result<LabeledSet> {
        let mut inputs = Vec::new();
        let c = dirs.len();
        for (i, dir) in dirs.iter().enumerate() {
            let n = total / c + usize::from(i < total % c);
            self.draw(dir, self.cfg.ood_kappa, n, &mut inputs)?;
        }
        let labels = vec![OOD_LABEL; inputs.len()];
        LabeledSet::new(inputs, labels, counts.to_vec(), self.dim())
    }

    fn dim(&self) -> usize {
        if self.cfg.features_direct {
            self.cfg.feature_dim
        } else {
            self.cfg.input_dim
        }
    }
}

/// Long-tailed ID train split, balanced validation/test splits and two
/// surrogate/test OOD sets drawn from disjoint cluster directions.
pub fn gen_longtail(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.classes < 2 {
        return Err(PattError::contract("need at least two classes"));
    }
    if cfg.feature_dim < 2 || (!cfg.features_direct && cfg.input_dim == 0) {
        return Err(PattError::contract(
            "feature_dim must be >= 2 and input_dim >= 1",
        ));
    }
    if cfg.ood_train_clusters == 0 || cfg.ood_test_clusters == 0 {
        return Err(PattError::contract(
            "need at least one OOD cluster per split",
        ));
    }
    let counts = longtail_counts(cfg.classes, cfg.max_per_class, cfg.imbalance_ratio)?;
    let d = cfg.feature_dim;

    let mut geo_rng = rng_for(cfg.seed, "synth-geometry");
    let class_dirs = place_directions(cfg.classes, d, &[], 1.0, cfg.class_max_cos, &mut geo_rng)?;
    let id_refs: Vec<&UnitFeature> = class_dirs.iter().collect();
    let ood_train_dirs = place_directions(
        cfg.ood_train_clusters,
        d,
        &id_refs,
        OOD_SEPARATION,
        1.0,
        &mut geo_rng,
    )?;
    let mut avoid = id_refs.clone();
    avoid.extend(ood_train_dirs.iter());
    let ood_test_dirs = place_directions(
        cfg.ood_test_clusters,
        d,
        &avoid,
        OOD_SEPARATION,
        1.0,
        &mut geo_rng,
    )?;

    let mut map_rng = rng_for(cfg.seed, "synth-raw-map");
    let map = (!cfg.features_direct)
        .then(|| RawMap::new(cfg.input_dim, d, cfg.input_noise, &mut map_rng));
    let mut gen = Generator {
        cfg,
        map,
        rng: rng_for(cfg.seed, "synth-samples"),
    };

    let train = gen.id_split(&class_dirs, &counts, &counts)?;
    let val_id = gen.id_split(&class_dirs, &vec![cfg.val_per_class; cfg.classes], &counts)?;
    let test_id = gen.id_split(&class_dirs, &vec![cfg.test_per_class; cfg.classes], &counts)?;
    let train_ood = gen.ood_split(&ood_train_dirs, cfg.ood_train_count, &counts)?;
    let test_ood = gen.ood_split(&ood_test_dirs, cfg.ood_test_count, &counts)?;

    Ok(SynthData {
        train,
        val_id,
        test_id,
        train_ood,
        test_ood,
        geometry: SynthGeometry {
            class_dirs,
            ood_train_dirs,
            ood_test_dirs,
        },
    })
}

/// Plain-text `key = value` record of the generator settings and split sizes.
pub fn write_manifest(path: &Path, cfg: &SynthConfig, data: &SynthData) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# synthetic long-tailed dataset");
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "classes = {}", cfg.classes);
    let _ = writeln!(s, "feature_dim = {}", cfg.feature_dim);
    let _ = writeln!(s, "input_dim = {}", data.train.dim);
    let _ = writeln!(s, "imbalance_ratio = {:?}", cfg.imbalance_ratio);
    let _ = writeln!(s, "max_per_class = {}", cfg.max_per_class);
    let _ = writeln!(s, "class_kappa = {:?}", cfg.class_kappa);
    let _ = writeln!(s, "ood_kappa = {:?}", cfg.ood_kappa);
    let _ = writeln!(s, "features_direct = {}", cfg.features_direct);
    let counts: Vec<String> = data
        .train
        .class_counts
        .iter()
        .map(|c| c.to_string())
        .collect();
    let _ = writeln!(s, "class_counts = {}", counts.join(","));
    for (name, set) in [
        ("train", &data.train),
        ("val_id", &data.val_id),
        ("test_id", &data.test_id),
        ("train_ood", &data.train_ood),
        ("test_ood", &data.test_ood),
    ] {
        let _ = writeln!(s, "rows.{name} = {}", set.len());
    }
    std::fs::write(path, s).map_err(|e| PattError::io(path, e))
}
