//! Dense layers and small MLP stacks over a flat parameter buffer.
//!
//! Layers own no storage; each one records its offset into a shared `[f64]`
//! so the optimiser, gradient checker and checkpoint code can treat every
//! model as a single vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
/// The summation order is fixed, which keeps results bit-reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..4 {
            acc[i] += ca[i] * cb[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Affine map `y = W x + b` with `W` stored row-major (`outputs x inputs`),
/// followed by the bias vector when present.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
    pub has_bias: bool,
}

impl Dense {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_len() + if self.has_bias { self.outputs } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias_range(&self) -> Option<std::ops::Range<usize>> {
        let start = self.offset + self.weight_len();
        self.has_bias.then(|| start..start + self.outputs)
    }

    pub fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &params[self.weight_range()];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(&w[j * self.inputs..(j + 1) * self.inputs], x);
        }
        if let Some(r) = self.bias_range() {
            for (o, b) in out.iter_mut().zip(&params[r]) {
                *o += b;
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and, when requested, the
    /// input gradient into `grad_in`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        grad_out: &[f64],
        grads: &mut [f64],
        grad_in: Option<&mut [f64]>,
    ) {
        let wr = self.weight_range();
        {
            let gw = &mut grads[wr.clone()];
            for (j, &g) in grad_out.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, x, &mut gw[j * self.inputs..(j + 1) * self.inputs]);
                }
            }
        }
        if let Some(r) = self.bias_range() {
            for (gb, g) in grads[r].iter_mut().zip(grad_out) {
                *gb += g;
            }
        }
        if let Some(gi) = grad_in {
            let w = &params[wr];
            for (j, &g) in grad_out.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[j * self.inputs..(j + 1) * self.inputs], gi);
                }
            }
        }
    }
}

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn dense(
        &mut self,
        name: impl Into<String>,
        inputs: usize,
        outputs: usize,
        has_bias: bool,
    ) -> Dense {
        let layer = Dense {
            name: name.into(),
            inputs,
            outputs,
            offset: self.next,
            has_bias,
        };
        self.next += layer.len();
        layer
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

/// Stack of dense layers with a shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Apply the activation after the last layer too.
    pub activate_output: bool,
}

impl Mlp {
    pub(crate) fn build(
        builder: &mut LayoutBuilder,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        activate_output: bool,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| builder.dense(format!("{prefix}.{i}"), w[0], w[1], true))
            .collect();
        Self {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    /// Post-activation output of every layer.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.forward(params, acts.last().map_or(x, |a| a.as_slice()), &mut out);
            if self.activated(i) {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Backpropagates `grad_output` (gradient with respect to the final
    /// post-activation output) into `grads`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        acts: &[Vec<f64>],
        grad_output: &[f64],
        grads: &mut [f64],
    ) {
        let mut g = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                for (gv, &y) in g.iter_mut().zip(&acts[i]) {
                    *gv *= self.activation.derivative_at_output(y);
                }
            }
            let input = if i == 0 { x } else { acts[i - 1].as_slice() };
            if i == 0 {
                self.layers[i].backward(params, input, &g, grads, None);
            } else {
                let mut grad_in = vec![0.0; self.layers[i].inputs];
                self.layers[i].backward(params, input, &g, grads, Some(&mut grad_in));
                g = grad_in;
            }
        }
    }
}
