//! Reference MIL networks.
//!
//! | kind              | per-instance net    | pooling                          | head   |
//! |-------------------|---------------------|----------------------------------|--------|
//! | `Witness`         | d -> h -> h -> 1    | max over instance logits         | none   |
//! | `EmbedPool`       | d -> h -> h -> e    | feature-wise mean                | linear |
//! | `AttentionPool`   | d -> h -> h -> e    | softmax(u . tanh(V e_i + c))     | linear |
//! | `SingleInstance`  | d -> h -> h -> 1    | mean of instance probabilities   | none   |
//!
//! Only `Witness` is monotone in its instances, which is what makes it unable
//! to score a bag up for *missing* an instance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{dot, Activation, Dense, LayoutBuilder, Mlp};
use crate::bag::{Bag, Label};
use crate::error::{Error, Result};
use crate::milgen::DEFAULT_DIM;
use crate::rng::derive_stream;

/// Probability clamp for `SingleInstance` before converting to a logit.
const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Witness,
    EmbedPool,
    AttentionPool,
    SingleInstance,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Witness,
        ModelKind::EmbedPool,
        ModelKind::AttentionPool,
        ModelKind::SingleInstance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Witness => "witness",
            ModelKind::EmbedPool => "embed-pool",
            ModelKind::AttentionPool => "attention-pool",
            ModelKind::SingleInstance => "single-instance",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown model kind `{s}`; valid kinds: witness, embed-pool, attention-pool, single-instance"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden: usize,
    /// Instance embedding width for the pooling models.
    pub embed: usize,
    /// Width of the attention scoring layer.
    pub attention: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            input_dim: DEFAULT_DIM,
            hidden: 64,
            embed: 64,
            attention: 32,
            activation: Activation::Tanh,
        }
    }

    pub fn with_input_dim(mut self, input_dim: usize) -> Self {
        self.input_dim = input_dim;
        self
    }
}

/// Layer offsets for one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub instance: Mlp,
    pub attention_v: Option<Dense>,
    pub attention_u: Option<Dense>,
    pub head: Option<Dense>,
    param_count: usize,
}

impl Network {
    pub fn new(arch: Architecture) -> Self {
        let mut lb = LayoutBuilder::default();
        let pooled = matches!(arch.kind, ModelKind::EmbedPool | ModelKind::AttentionPool);
        let out = if pooled { arch.embed } else { 1 };
        let instance = Mlp::build(
            &mut lb,
            "instance",
            &[arch.input_dim, arch.hidden, arch.hidden, out],
            arch.activation,
            pooled,
        );
        let (attention_v, attention_u) = if arch.kind == ModelKind::AttentionPool {
            (
                Some(lb.dense("attention.v", arch.embed, arch.attention, true)),
                Some(lb.dense("attention.u", arch.attention, 1, false)),
            )
        } else {
            (None, None)
        };
        let head = pooled.then(|| lb.dense("head", arch.embed, 1, true));
        Self {
            arch,
            instance,
            attention_v,
            attention_u,
            head,
            param_count: lb.total(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.instance
            .layers
            .iter()
            .chain(self.attention_v.iter())
            .chain(self.attention_u.iter())
            .chain(self.head.iter())
    }

    /// Index of the bias feeding the bag logit directly: the head bias for
    /// pooling models, the output bias of the instance net otherwise.
    pub fn output_bias_index(&self) -> usize {
        let last = self.head.as_ref().unwrap_or_else(|| {
            self.instance
                .layers
                .last()
                .expect("instance net has layers")
        });
        last.bias_range().expect("output layer has a bias").start
    }
}

/// Trained or initialised parameters for one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    network: Network,
    values: Vec<f64>,
}

enum Pooling {
    Witness {
        winner: usize,
    },
    Mean {
        pooled: Vec<f64>,
    },
    Attention {
        hidden: Vec<Vec<f64>>,
        weights: Vec<f64>,
        pooled: Vec<f64>,
    },
    SingleInstance {
        probs: Vec<f64>,
        mean: f64,
        clamped: bool,
    },
}

/// Cached activations of one bag's forward pass.
pub struct BagTrace {
    order: Vec<usize>,
    instance_acts: Vec<Vec<Vec<f64>>>,
    pooling: Pooling,
    logit: f64,
}

impl BagTrace {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// Attention weights, for `AttentionPool` traces.
    pub fn attention_weights(&self) -> Option<&[f64]> {
        match &self.pooling {
            Pooling::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target` in {0, 1}.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Softmax whose normaliser is summed in `order`.
fn softmax(scores: &[f64], order: &[usize]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = order.iter().map(|&i| exps[i]).sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Instance indices sorted by value. Pooling sums run in this order, so a
/// bag's logit is bit-identical under any permutation of its instances.
fn canonical_order(bag: &Bag) -> Vec<usize> {
    let xs = bag.instances();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .as_slice()
            .iter()
            .zip(xs[b].as_slice())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let network = Network::new(arch);
        let values = vec![0.0; network.param_count()];
        Self { network, values }
    }

    /// Glorot-uniform weights and zero biases drawn from `(seed, stream_id)`.
    pub fn init(arch: Architecture, seed: u64, stream_id: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut stream = derive_stream(seed, stream_id);
        let layers: Vec<Dense> = params.network.layers().cloned().collect();
        for layer in layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut params.values[layer.weight_range()] {
                *w = (2.0 * stream.next_f64() - 1.0) * limit;
            }
        }
        params
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let network = Network::new(arch);
        if values.len() != network.param_count() {
            return Err(Error::Argument(format!(
                "{} parameters supplied, architecture needs {}",
                values.len(),
                network.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("params", "non-finite parameter"));
        }
        Ok(Self { network, values })
    }

    pub fn architecture(&self) -> Architecture {
        self.network.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.network.arch.kind
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_bag(&self, bag: &Bag) -> Result<()> {
        if bag.dim() != self.network.arch.input_dim {
            return Err(Error::Argument(format!(
                "bag {} has {}-dimensional instances, model expects {}",
                bag.bag_id(),
                bag.dim(),
                self.network.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn trace(&self, bag: &Bag) -> Result<BagTrace> {
        self.check_bag(bag)?;
        Ok(self.trace_unchecked(bag))
    }

    fn trace_unchecked(&self, bag: &Bag) -> BagTrace {
        let p = &self.values;
        let net = &self.network;
        let instance_acts: Vec<Vec<Vec<f64>>> = bag
            .instances()
            .iter()
            .map(|x| net.instance.forward(p, x.as_slice()))
            .collect();
        let order = canonical_order(bag);
        let output = |i: usize| instance_acts[i].last().expect("non-empty net").as_slice();
        let outputs = || order.iter().map(|&i| (i, output(i)));
        let (pooling, logit) = match net.arch.kind {
            ModelKind::Witness => {
                let mut winner = 0;
                let mut best = f64::NEG_INFINITY;
                for (i, o) in outputs() {
                    if o[0] > best {
                        best = o[0];
                        winner = i;
                    }
                }
                (Pooling::Witness { winner }, best)
            }
            ModelKind::EmbedPool => {
                let n = instance_acts.len() as f64;
                let mut pooled = vec![0.0; net.arch.embed];
                for (_, e) in outputs() {
                    for (z, v) in pooled.iter_mut().zip(e) {
                        *z += v;
                    }
                }
                pooled.iter_mut().for_each(|z| *z /= n);
                let logit = self.head_logit(&pooled);
                (Pooling::Mean { pooled }, logit)
            }
            ModelKind::AttentionPool => {
                let v = net.attention_v.as_ref().expect("attention layers");
                let u = net.attention_u.as_ref().expect("attention layers");
                let mut hidden = Vec::with_capacity(instance_acts.len());
                let mut scores = Vec::with_capacity(instance_acts.len());
                for i in 0..instance_acts.len() {
                    let mut h = vec![0.0; v.outputs];
                    v.forward(p, output(i), &mut h);
                    h.iter_mut().for_each(|x| *x = x.tanh());
                    scores.push(dot(&p[u.weight_range()], &h));
                    hidden.push(h);
                }
                let weights = softmax(&scores, &order);
                let mut pooled = vec![0.0; net.arch.embed];
                for (i, e) in outputs() {
                    for (z, x) in pooled.iter_mut().zip(e) {
                        *z += weights[i] * x;
                    }
                }
                let logit = self.head_logit(&pooled);
                (
                    Pooling::Attention {
                        hidden,
                        weights,
                        pooled,
                    },
                    logit,
                )
            }
            ModelKind::SingleInstance => {
                let probs: Vec<f64> = (0..instance_acts.len())
                    .map(|i| sigmoid(output(i)[0]))
                    .collect();
                let raw = order.iter().map(|&i| probs[i]).sum::<f64>() / probs.len() as f64;
                let mean = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
                let clamped = mean != raw;
                let logit = (mean / (1.0 - mean)).ln();
                (
                    Pooling::SingleInstance {
                        probs,
                        mean,
                        clamped,
                    },
                    logit,
                )
            }
        };
        BagTrace {
            order,
            instance_acts,
            pooling,
            logit,
        }
    }

    fn head_logit(&self, pooled: &[f64]) -> f64 {
        let head = self
            .network
            .head
            .as_ref()
            .expect("pooling model has a head");
        let mut out = [0.0];
        head.forward(&self.values, pooled, &mut out);
        out[0]
    }

    pub fn forward_bag(&self, bag: &Bag) -> Result<f64> {
        Ok(self.trace(bag)?.logit)
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logit).
    pub fn backward(&self, bag: &Bag, trace: &BagTrace, dlogit: f64, grads: &mut [f64]) {
        let p = &self.values;
        let net = &self.network;
        let mlp_back = |i: usize, g: &[f64], grads: &mut [f64]| {
            net.instance.backward(
                p,
                bag.instances()[i].as_slice(),
                &trace.instance_acts[i],
                g,
                grads,
            );
        };
        match &trace.pooling {
            Pooling::Witness { winner } => mlp_back(*winner, &[dlogit], grads),
            Pooling::Mean { pooled } => {
                let dz = self.head_backward(pooled, dlogit, grads);
                let n = trace.instance_acts.len() as f64;
                let de: Vec<f64> = dz.iter().map(|g| g / n).collect();
                for &i in &trace.order {
                    mlp_back(i, &de, grads);
                }
            }
            Pooling::Attention {
                hidden,
                weights,
                pooled,
            } => {
                let v = net.attention_v.as_ref().expect("attention layers");
                let u = net.attention_u.as_ref().expect("attention layers");
                let dz = self.head_backward(pooled, dlogit, grads);
                let embeds: Vec<&[f64]> = trace
                    .instance_acts
                    .iter()
                    .map(|a| a.last().expect("non-empty net").as_slice())
                    .collect();
                let dweights: Vec<f64> = embeds.iter().map(|e| dot(&dz, e)).collect();
                let expected: f64 = trace.order.iter().map(|&i| weights[i] * dweights[i]).sum();
                for &i in &trace.order {
                    let e = embeds[i];
                    let dscore = weights[i] * (dweights[i] - expected);
                    let mut dhidden = vec![0.0; v.outputs];
                    u.backward(p, &hidden[i], &[dscore], grads, Some(&mut dhidden));
                    for (g, h) in dhidden.iter_mut().zip(&hidden[i]) {
                        *g *= 1.0 - h * h;
                    }
                    let mut de: Vec<f64> = dz.iter().map(|g| weights[i] * g).collect();
                    v.backward(p, e, &dhidden, grads, Some(&mut de));
                    mlp_back(i, &de, grads);
                }
            }
            Pooling::SingleInstance {
                probs,
                mean,
                clamped,
            } => {
                if *clamped {
                    return;
                }
                let dmean = dlogit / (mean * (1.0 - mean));
                let n = probs.len() as f64;
                for &i in &trace.order {
                    let pi = probs[i];
                    mlp_back(i, &[dmean * pi * (1.0 - pi) / n], grads);
                }
            }
        }
    }

    fn head_backward(&self, pooled: &[f64], dlogit: f64, grads: &mut [f64]) -> Vec<f64> {
        let head = self
            .network
            .head
            .as_ref()
            .expect("pooling model has a head");
        let mut dz = vec![0.0; pooled.len()];
        head.backward(&self.values, pooled, &[dlogit], grads, Some(&mut dz));
        dz
    }

    /// Bag loss and its gradient accumulated into `grads`.
    pub fn accumulate_gradient(&self, bag: &Bag, label: Label, grads: &mut [f64]) -> Result<f64> {
        let trace = self.trace(bag)?;
        let target = label.target();
        self.backward(bag, &trace, sigmoid(trace.logit) - target, grads);
        Ok(bce_with_logit(trace.logit, target))
    }

    pub fn loss(&self, bag: &Bag, label: Label) -> Result<f64> {
        Ok(bce_with_logit(self.forward_bag(bag)?, label.target()))
    }

    pub fn gradient(&self, bag: &Bag, label: Label) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.len()];
        let loss = self.accumulate_gradient(bag, label, &mut grads)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::{InstanceRole, InstanceVector, Split};

    fn random_bag(seed: u64, n: usize) -> Bag {
        let mut s = derive_stream(seed, 0);
        let xs = (0..n)
            .map(|_| InstanceVector::new(s.next_gaussian_vector(0.0, 1.0, 16).unwrap()).unwrap())
            .collect();
        Bag::new(0, Label::Positive, Split::Train, xs, None).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let count = |k| Network::new(Architecture::new(k)).param_count();
        let mlp = 16 * 64 + 64 + 64 * 64 + 64;
        assert_eq!(count(ModelKind::Witness), mlp + 65);
        assert_eq!(count(ModelKind::SingleInstance), mlp + 65);
        assert_eq!(count(ModelKind::EmbedPool), mlp + 64 * 64 + 64 + 65);
        assert_eq!(
            count(ModelKind::AttentionPool),
            mlp + 64 * 64 + 64 + 64 * 32 + 32 + 32 + 65
        );
    }

    #[test]
    fn zero_witness_has_zero_logit() {
        let params = ModelParams::zeros(Architecture::new(ModelKind::Witness));
        for seed in 0..5 {
            assert_eq!(params.forward_bag(&random_bag(seed, 6)).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_network_output_bias_gradient() {
        for kind in ModelKind::ALL {
            let params = ModelParams::zeros(Architecture::new(kind));
            let bag = random_bag(3, 4);
            for label in [Label::Positive, Label::Negative] {
                let (_, g) = params.gradient(&bag, label).unwrap();
                let idx = params.network().output_bias_index();
                let expected = sigmoid(0.0) - label.target();
                if kind == ModelKind::SingleInstance {
                    // d logit / d f_i sums to one when every p_i is 1/2.
                    assert!((g[idx] - expected).abs() < 1e-12, "{kind}");
                } else {
                    assert_eq!(g[idx], expected, "{kind}");
                }
            }
        }
    }

    #[test]
    fn duplicating_the_witness_leaves_logit_unchanged() {
        let params = ModelParams::init(Architecture::new(ModelKind::Witness), 1, 0);
        let bag = random_bag(9, 7);
        let trace = params.trace(&bag).unwrap();
        let Pooling::Witness { winner } = trace.pooling else {
            unreachable!()
        };
        let dup = bag
            .with_instance(bag.instances()[winner].clone(), InstanceRole::Background)
            .unwrap();
        assert_eq!(params.forward_bag(&dup).unwrap(), trace.logit());
    }

    #[test]
    fn single_instance_attention_weight_is_one() {
        let params = ModelParams::init(Architecture::new(ModelKind::AttentionPool), 4, 0);
        let trace = params.trace(&random_bag(2, 1)).unwrap();
        assert_eq!(trace.attention_weights().unwrap(), &[1.0]);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let params = ModelParams::zeros(Architecture::new(ModelKind::Witness).with_input_dim(8));
        assert!(matches!(
            params.forward_bag(&random_bag(1, 2)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn bce_is_stable() {
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0) < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn model_kind_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!(matches!(
            "mi-net".parse::<ModelKind>(),
            Err(Error::Usage(_))
        ));
    }
}
