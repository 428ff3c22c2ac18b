use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{sigmoid, Architecture, ModelKind, ModelParams};
use super::optim::Adam;
use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::metrics::ScoreTable;
use crate::rng::derive_stream;

/// Stream id for parameter initialisation; epoch `e` shuffles with
/// `INIT_STREAM + 1 + e`. Bag streams count up from zero, so training draws
/// never share a stream with the dataset even when the seeds are equal.
pub const INIT_STREAM: u64 = 1 << 62;

/// Bags per reduction chunk. Gradients are summed inside a chunk in bag order
/// and chunk sums are added in chunk order, so the result does not depend on
/// how many worker threads run.
const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_bags: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_bags: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.batch_bags == 0 {
            return Err(Error::validation("batch_bags", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(name, "must lie in [0, 1)"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::validation("epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Mean bag loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

fn batch_gradient(params: &ModelParams, bags: &[&Bag]) -> Result<(Vec<f64>, f64)> {
    let partials = bags
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; params.len()];
            let mut loss = 0.0;
            for bag in chunk {
                loss += params.accumulate_gradient(bag, bag.label(), &mut grads)?;
            }
            Ok((grads, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (g, l) in partials {
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
        loss += l;
    }
    Ok((total, loss))
}

/// Mini-batch Adam on mean binary cross-entropy over bags.
pub fn train(kind: ModelKind, cfg: &TrainConfig, bags: &[Bag]) -> Result<TrainedModel> {
    let dim = bags.first().map_or(crate::milgen::DEFAULT_DIM, Bag::dim);
    train_architecture(Architecture::new(kind).with_input_dim(dim), cfg, bags)
}

pub fn train_architecture(
    arch: Architecture,
    cfg: &TrainConfig,
    bags: &[Bag],
) -> Result<TrainedModel> {
    cfg.validate()?;
    let positives = bags.iter().filter(|b| b.label().is_positive()).count();
    if positives == 0 || positives == bags.len() {
        return Err(Error::validation(
            "bags",
            "training set must contain both positive and negative bags",
        ));
    }
    if let Some(bag) = bags.iter().find(|b| b.dim() != arch.input_dim) {
        return Err(Error::Argument(format!(
            "bag {} has {}-dimensional instances, model expects {}",
            bag.bag_id(),
            bag.dim(),
            arch.input_dim
        )));
    }

    let mut params = ModelParams::init(arch, cfg.seed, INIT_STREAM);
    let mut adam = Adam::new(
        params.len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        derive_stream(cfg.seed, INIT_STREAM + 1 + epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_bags) {
            let batch_bags: Vec<&Bag> = batch.iter().map(|&i| &bags[i]).collect();
            let (mut grads, loss) = batch_gradient(&params, &batch_bags)?;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(params.values_mut(), &grads);
            epoch_loss += loss;
        }
        epoch_losses.push(epoch_loss / bags.len() as f64);
    }
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// `sigmoid(logit)` per bag.
pub fn score_bags(params: &ModelParams, bags: &[Bag]) -> Result<ScoreTable> {
    let scores = bags
        .par_iter()
        .map(|b| Ok((b.bag_id(), sigmoid(params.forward_bag(b)?))))
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::from_pairs(scores)
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient of the bag loss and
/// central finite differences, over `samples` randomly chosen parameters
/// plus the output bias.
pub fn check_gradients(
    params: &ModelParams,
    bag: &Bag,
    label: crate::bag::Label,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let (_, analytic) = params.gradient(bag, label)?;
    let mut stream = derive_stream(seed, 0);
    let mut indices: Vec<usize> = (0..samples)
        .map(|_| stream.below(params.len() as u64) as usize)
        .collect();
    indices.push(params.network().output_bias_index());

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + GRAD_CHECK_STEP;
        let plus = probe.loss(bag, label)?;
        probe.values_mut()[i] = original - GRAD_CHECK_STEP;
        let minus = probe.loss(bag, label)?;
        probe.values_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
