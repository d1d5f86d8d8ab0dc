//! Local training, FedAvg aggregation and the model-distance priority.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::nn::{apply_sgd, loss_and_grads, Model};

/// Minibatch SGD settings for one round of local training.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainSettings {
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { eta: 1e-2, batch_size: 32, epochs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTraining {
    pub model: Model,
    /// Optimizer steps taken.
    pub steps: usize,
}

/// Trains a copy of `global` on the samples in `partition`.
///
/// The partition is reshuffled with `rng` at the start of every epoch; the
/// last partial batch of an epoch is kept.
pub fn local_train<R: Rng + ?Sized>(
    global: &Model,
    partition: &[usize],
    dataset: &Dataset,
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<LocalTraining> {
    if partition.is_empty() {
        return Err(invalid("local partition is empty"));
    }
    if settings.batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    if dataset.dim() != global.input_dim() {
        return Err(Error::DimensionMismatch { expected: global.input_dim(), actual: dataset.dim() });
    }
    let mut model = global.clone();
    let mut order = partition.to_vec();
    let mut steps = 0;
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.batch_size) {
            let batch = dataset.batch(chunk)?;
            let (_, grads) = loss_and_grads(&model, &batch)?;
            apply_sgd(&mut model, &grads, settings.eta)?;
            steps += 1;
        }
    }
    Ok(LocalTraining { model, steps })
}

/// A user's fresh local model together with its local dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub user_id: usize,
    pub model: Model,
    pub dataset_size: usize,
}

/// Dataset-size weighted parameter mean of the updates.
///
/// Updates are summed in ascending `user_id` order so the result does not
/// depend on arrival order. Each output parameter is clamped to the range
/// spanned by the inputs, which removes last-ulp rounding overshoot.
pub fn fed_avg(updates: &[LocalUpdate]) -> Result<Model> {
    let first = updates.first().ok_or_else(|| invalid("no updates to aggregate"))?;
    if updates.iter().any(|u| u.dataset_size == 0) {
        return Err(invalid("update with empty local dataset"));
    }
    for u in updates {
        first.model.check_same_shape(&u.model)?;
    }
    let mut sorted: Vec<&LocalUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.user_id);
    let total: f64 = sorted.iter().map(|u| u.dataset_size as f64).sum();

    let mut out = Model::zeros(&first.model.dims())?;
    let mut lo: Vec<f64> = first.model.params().copied().collect();
    let mut hi = lo.clone();
    for u in &sorted {
        let w = u.dataset_size as f64 / total;
        for (((acc, p), l), h) in out.params_mut().zip(u.model.params()).zip(&mut lo).zip(&mut hi) {
            *acc += w * p;
            *l = l.min(*p);
            *h = h.max(*p);
        }
    }
    for ((acc, l), h) in out.params_mut().zip(&lo).zip(&hi) {
        *acc = acc.clamp(*l, *h);
    }
    Ok(out)
}

/// Relative distance of a local model from the global one, as a product over
/// layers of `1 + |local_l - global_l| / |global_l|`. Always `>= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Priority(f64);

impl Priority {
    pub const ONE: Priority = Priority(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 1.0 {
            Ok(Priority(value))
        } else {
            Err(invalid("priority must be finite and at least 1"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn l2(values: impl Iterator<Item = f64>) -> f64 {
    libm::sqrt(values.map(|v| v * v).sum())
}

/// Priority of `local` relative to `global`. A layer's weights and bias are
/// measured together as one vector.
pub fn priority(local: &Model, global: &Model) -> Result<Priority> {
    local.check_same_shape(global)?;
    let mut product = 1.0;
    for (idx, (l, g)) in local.layers().iter().zip(global.layers()).enumerate() {
        let norm = l2(g.params().copied());
        if norm == 0.0 {
            return Err(Error::DegenerateInput(alloc::format!("global layer {idx} has zero norm")));
        }
        let dist = l2(l.params().zip(g.params()).map(|(a, b)| a - b));
        product *= 1.0 + dist / norm;
    }
    Priority::new(product)
}
