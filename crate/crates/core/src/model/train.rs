use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::network::{EncoderClassifier, ForwardCache};
use super::optim::{Optimizer, OptimizerKind};
use crate::data::LabeledSet;
use crate::error::{check_dim, PattError, Result};
use crate::losses::{ce_loss, oe_uniform_loss, patt_total_loss, PattHyper};
use crate::seed::{derive_seed, rng_for};
use crate::vmf::{estimate_class_stats, UnitFeature, VmfMixture};

/// Which training objective a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `L_isac + alpha L_tla + beta L_out`.
    Patt,
    /// Cross-entropy plus `weight * L_out`.
    OeBaseline { weight: f64 },
    /// Cross-entropy only.
    CeBaseline,
}

impl Objective {
    fn uses_ood(&self, hyper: &PattHyper) -> bool {
        match *self {
            Objective::Patt => hyper.beta > 0.0,
            Objective::OeBaseline { weight } => weight > 0.0,
            Objective::CeBaseline => false,
        }
    }
}

/// When the vMF class statistics are refreshed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsRefresh {
    /// Exponential moving average over every minibatch.
    PerBatch,
    /// Recomputed from a full pass over the training set at each epoch start.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub ood_batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Seed of the surrogate-OOD stream; derived from `seed` when `None`.
    pub ood_seed: Option<u64>,
    pub hyper: PattHyper,
    pub objective: Objective,
    pub vmf_momentum: f64,
    pub stats_refresh: StatsRefresh,
    /// Hidden widths of the encoder; `None` selects the identity encoder.
    pub encoder_widths: Option<Vec<usize>>,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            ood_batch_size: 128,
            learning_rate: 3e-2,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            ood_seed: None,
            hyper: PattHyper::default(),
            objective: Objective::Patt,
            vmf_momentum: 0.9,
            stats_refresh: StatsRefresh::PerBatch,
            encoder_widths: Some(vec![64, 64]),
            feature_dim: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.ood_batch_size == 0 {
            return Err(PattError::contract("batch sizes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.vmf_momentum) {
            return Err(PattError::contract("vmf momentum must lie in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(PattError::contract("learning rate must be nonnegative"));
        }
        self.hyper.validate()
    }
}

/// Per-epoch means of the loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub isac: f64,
    pub tla: f64,
    pub oe: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// How the parameters were initialized, for reproducing the run.
    pub init: String,
    pub records: Vec<EpochRecord>,
}

/// Loss values of one step. Terms not used by the objective are 0; for the
/// baselines `tla` holds the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub total: f64,
    pub isac: f64,
    pub tla: f64,
    pub oe: f64,
}

/// Everything that changes between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: EncoderClassifier,
    pub mix: VmfMixture,
    pub optimizer: Optimizer,
    pub class_counts: Vec<usize>,
    pub priors: Vec<f64>,
}

impl TrainState {
    pub fn new(
        model: EncoderClassifier,
        mix: VmfMixture,
        optimizer: OptimizerKind,
        class_counts: Vec<usize>,
    ) -> Result<Self> {
        check_dim(model.num_classes(), class_counts.len())?;
        let priors = VmfMixture::priors_from_counts(&class_counts)?;
        let optimizer = Optimizer::new(optimizer, model.params().len());
        Ok(TrainState {
            model,
            mix,
            optimizer,
            class_counts,
            priors,
        })
    }
}

/// Step-level settings shared by every step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub objective: Objective,
    pub hyper: PattHyper,
    pub learning_rate: f64,
    pub vmf_momentum: f64,
    pub update_stats: bool,
}

fn finite(v: f64, term: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PattError::NonFinite { term: term() })
    }
}

/// Mean objective over a joint ID/OOD batch and its gradient with respect to
/// every model parameter. The vMF statistics are treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    model: &EncoderClassifier,
    mix: &VmfMixture,
    priors: &[f64],
    id_inputs: &[&[f64]],
    id_labels: &[usize],
    ood_inputs: &[&[f64]],
    objective: Objective,
    hyper: &PattHyper,
) -> Result<(StepStats, Vec<f64>)> {
    let id_caches = id_inputs
        .iter()
        .map(|x| model.forward_cached(x))
        .collect::<Result<Vec<_>>>()?;
    objective_from_caches(
        model, mix, priors, &id_caches, id_labels, ood_inputs, objective, hyper,
    )
}

#[allow(clippy::too_many_arguments)]
fn objective_from_caches(
    model: &EncoderClassifier,
    mix: &VmfMixture,
    priors: &[f64],
    id_caches: &[ForwardCache],
    id_labels: &[usize],
    ood_inputs: &[&[f64]],
    objective: Objective,
    hyper: &PattHyper,
) -> Result<(StepStats, Vec<f64>)> {
    check_dim(id_caches.len(), id_labels.len())?;
    if id_caches.is_empty() {
        return Err(PattError::contract("empty ID batch"));
    }
    hyper.validate()?;
    let (ood_weight, needs_ood) = match objective {
        Objective::Patt => (hyper.beta, hyper.beta > 0.0),
        Objective::OeBaseline { weight } => (weight, weight > 0.0),
        Objective::CeBaseline => (0.0, false),
    };
    if needs_ood && ood_inputs.is_empty() {
        return Err(PattError::contract(
            "outlier term is weighted but the OOD batch is empty",
        ));
    }

    let mut grads = vec![0.0; model.params().len()];
    let mut stats = StepStats::default();
    let inv_n = 1.0 / id_caches.len() as f64;

    for (i, (cache, &y)) in id_caches.iter().zip(id_labels).enumerate() {
        let logits = model.classifier_logits(&cache.z)?;
        match objective {
            Objective::Patt => {
                let l = patt_total_loss(mix, &cache.z, y, &logits, &[], hyper, priors)?;
                stats.isac += finite(l.isac, || format!("isac (ID sample {i})"))? * inv_n;
                stats.tla += finite(l.tla, || format!("tla (ID sample {i})"))? * inv_n;
                let gz: Vec<f64> = l.grad_z.iter().map(|g| g * inv_n).collect();
                let gl: Vec<f64> = l.grad_logits_id.iter().map(|g| g * inv_n).collect();
                model.backward(cache, Some(&gz), &gl, &mut grads)?;
            }
            Objective::OeBaseline { .. } | Objective::CeBaseline => {
                let l = ce_loss(&logits, y)?;
                stats.tla += finite(l.value, || format!("cross-entropy (ID sample {i})"))? * inv_n;
                let gl: Vec<f64> = l.grad.iter().map(|g| g * inv_n).collect();
                model.backward(cache, None, &gl, &mut grads)?;
            }
        }
    }

    if needs_ood {
        let scale = ood_weight / ood_inputs.len() as f64;
        for (j, x) in ood_inputs.iter().enumerate() {
            let cache = model.forward_cached(x)?;
            let logits = model.classifier_logits(&cache.z)?;
            let l = oe_uniform_loss(&logits)?;
            stats.oe += finite(l.value, || format!("outlier exposure (OOD sample {j})"))?
                / ood_inputs.len() as f64;
            let gl: Vec<f64> = l.grad.iter().map(|g| g * scale).collect();
            model.backward(&cache, None, &gl, &mut grads)?;
        }
    }

    stats.total = match objective {
        Objective::Patt => stats.isac + hyper.alpha * stats.tla + hyper.beta * stats.oe,
        Objective::OeBaseline { weight } => stats.tla + weight * stats.oe,
        Objective::CeBaseline => stats.tla,
    };
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(PattError::NonFinite {
            term: format!("gradient of parameter {k}"),
        });
    }
    Ok((stats, grads))
}

/// One optimizer step: refresh class statistics from the batch features,
/// evaluate the objective, backpropagate, update.
pub fn train_step(
    state: &mut TrainState,
    id_inputs: &[&[f64]],
    id_labels: &[usize],
    ood_inputs: &[&[f64]],
    cfg: &StepConfig,
) -> Result<StepStats> {
    let caches = id_inputs
        .iter()
        .map(|x| state.model.forward_cached(x))
        .collect::<Result<Vec<_>>>()?;
    if cfg.update_stats {
        let feats: Vec<UnitFeature> = caches.iter().map(|c| c.z.clone()).collect();
        state.mix = estimate_class_stats(
            &feats,
            id_labels,
            &state.class_counts,
            Some(&state.mix),
            cfg.vmf_momentum,
        )?;
    }
    let (stats, grads) = objective_from_caches(
        &state.model,
        &state.mix,
        &state.priors,
        &caches,
        id_labels,
        ood_inputs,
        cfg.objective,
        &cfg.hyper,
    )?;
    finite(stats.total, || "total loss".to_string())?;
    state
        .optimizer
        .step(state.model.params_mut(), &grads, cfg.learning_rate)?;
    Ok(stats)
}

/// vMF statistics of the whole training set under the current encoder.
pub fn full_pass_stats(model: &EncoderClassifier, set: &LabeledSet) -> Result<VmfMixture> {
    let mut feats = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for (x, &y) in set.inputs.iter().zip(&set.labels) {
        let (_, z) = model.encoder_forward(x)?;
        feats.push(z);
        labels.push(class_index(y)?);
    }
    estimate_class_stats(&feats, &labels, &set.class_counts, None, 0.0)
}

fn class_index(label: i32) -> Result<usize> {
    usize::try_from(label).map_err(|_| PattError::contract("OOD sample in an ID training set"))
}

pub fn predict(model: &EncoderClassifier, x: &[f64]) -> Result<usize> {
    let (_, z) = model.encoder_forward(x)?;
    Ok(argmax(&model.classifier_logits(&z)?))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &EncoderClassifier, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(PattError::contract("accuracy of an empty set"));
    }
    let mut correct = 0usize;
    for (x, &y) in set.inputs.iter().zip(&set.labels) {
        if predict(model, x)? as i64 == i64::from(y) {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Seeded cycling over a surrogate-OOD set, reshuffled on each pass.
struct OodStream<'a> {
    set: &'a LabeledSet,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> OodStream<'a> {
    fn new(set: &'a LabeledSet, rng: ChaCha8Rng) -> Self {
        OodStream {
            set,
            order: (0..set.len()).collect(),
            pos: set.len(),
            rng,
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.set.inputs[self.order[self.pos]].as_slice());
            self.pos += 1;
        }
        out
    }
}

/// A trained model with the class statistics needed at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: EncoderClassifier,
    pub mix: VmfMixture,
    pub history: TrainHistory,
}

pub fn init_model(
    config: &TrainConfig,
    input_dim: usize,
    num_classes: usize,
) -> Result<EncoderClassifier> {
    let seed = derive_seed(config.seed, "model");
    match &config.encoder_widths {
        Some(widths) => {
            EncoderClassifier::new(input_dim, widths, config.feature_dim, num_classes, seed)
        }
        None => {
            check_dim(config.feature_dim, input_dim)?;
            EncoderClassifier::identity(config.feature_dim, num_classes, seed)
        }
    }
}

/// Runs `epochs` passes of [`train_step`] over seeded shuffles of `train_id`,
/// drawing OOD minibatches from an independently seeded stream.
pub fn train(
    config: &TrainConfig,
    train_id: &LabeledSet,
    train_ood: &LabeledSet,
    val_id: Option<&LabeledSet>,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_id.is_empty() {
        return Err(PattError::contract("empty training set"));
    }
    let k = train_id.num_classes();
    if k < 2 {
        return Err(PattError::contract("training needs at least two classes"));
    }
    let labels: Vec<usize> = train_id
        .labels
        .iter()
        .map(|&y| class_index(y))
        .collect::<Result<_>>()?;
    let uses_ood = config.objective.uses_ood(&config.hyper);
    if uses_ood && train_ood.is_empty() {
        return Err(PattError::contract("objective needs surrogate OOD data"));
    }

    let model = init_model(config, train_id.dim, k)?;
    let mix = full_pass_stats(&model, train_id)?;
    let mut state = TrainState::new(model, mix, config.optimizer, train_id.class_counts.clone())?;
    let mut history = TrainHistory {
        init: format!(
            "uniform(+-1/sqrt(fan_in)) seed={}",
            derive_seed(config.seed, "model")
        ),
        records: Vec::with_capacity(config.epochs),
    };

    let mut id_rng = rng_for(config.seed, "id-shuffle");
    let ood_seed = config
        .ood_seed
        .unwrap_or_else(|| derive_seed(config.seed, "ood-stream"));
    let mut ood_stream = OodStream::new(train_ood, rng_for(ood_seed, "ood-shuffle"));
    let step_cfg = StepConfig {
        objective: config.objective,
        hyper: config.hyper,
        learning_rate: config.learning_rate,
        vmf_momentum: config.vmf_momentum,
        update_stats: config.stats_refresh == StatsRefresh::PerBatch,
    };

    let mut order: Vec<usize> = (0..train_id.len()).collect();
    for epoch in 0..config.epochs {
        if config.stats_refresh == StatsRefresh::PerEpoch {
            state.mix = full_pass_stats(&state.model, train_id)?;
        }
        order.shuffle(&mut id_rng);
        let mut sums = StepStats::default();
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| train_id.inputs[i].as_slice())
                .collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let ood = if uses_ood {
                ood_stream.next_batch(config.ood_batch_size)
            } else {
                Vec::new()
            };
            let s = train_step(&mut state, &xs, &ys, &ood, &step_cfg)?;
            sums.total += s.total;
            sums.isac += s.isac;
            sums.tla += s.tla;
            sums.oe += s.oe;
            steps += 1;
        }
        let n = steps as f64;
        let val_acc = val_id.map(|v| accuracy(&state.model, v)).transpose()?;
        history.records.push(EpochRecord {
            epoch,
            total: sums.total / n,
            isac: sums.isac / n,
            tla: sums.tla / n,
            oe: sums.oe / n,
            val_acc,
        });
    }
    Ok(TrainOutput {
        model: state.model,
        mix: state.mix,
        history,
    })
}
