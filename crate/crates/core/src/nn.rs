//! Fully connected networks in f64 with manual backpropagation.
//!
//! Parameters live in one flat buffer (per layer: row-major weights of shape
//! `out x in`, then the bias) so optimizers can treat them as a single vector.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Policy layer widths: 45 inputs, three hidden layers, one output.
pub const POLICY_WIDTHS: [usize; 5] = [45, 512, 256, 128, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Elu,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Elu => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Elu),
            other => Err(Error::Checkpoint(format!("unknown activation id {other}"))),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` feeds layer `l`; the last entry is the network output.
    pub values: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace has at least the input")
    }
}

impl Mlp {
    pub fn zeros(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Construction(format!("invalid layer widths {widths:?}")));
        }
        let mut offsets = vec![0];
        for w in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        let total = *offsets.last().unwrap();
        Ok(Self { widths: widths.to_vec(), hidden, output, params: vec![0.0; total], offsets })
    }

    /// Uniform fan-in initialization; the last layer is scaled by
    /// `output_gain` (small values keep initial actions near zero).
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, hidden, output)?;
        for l in 0..net.layer_count() {
            let fan_in = net.widths[l] as f64;
            let bound = (3.0 / fan_in).sqrt() * if l + 1 == net.layer_count() { output_gain } else { 1.0 };
            let (w, _) = net.layer_range(l);
            if bound > 0.0 {
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for p in &mut net.params[w] {
                    *p = dist.sample(rng);
                }
            }
        }
        Ok(net)
    }

    /// Builds a network from per-layer `(weights, bias)`, weights row-major.
    pub fn from_layers(
        widths: &[usize],
        layers: &[(Vec<f64>, Vec<f64>)],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, hidden, output)?;
        if layers.len() != net.layer_count() {
            return Err(Error::Construction(format!("expected {} layers, got {}", net.layer_count(), layers.len())));
        }
        for (l, (w, b)) in layers.iter().enumerate() {
            let (wr, br) = net.layer_range(l);
            if w.len() != wr.len() || b.len() != br.len() {
                return Err(Error::Construction(format!("layer {l} has wrong parameter count")));
            }
            net.params[wr].copy_from_slice(w);
            net.params[br].copy_from_slice(b);
        }
        Ok(net)
    }

    /// Same parameters with a different output activation.
    pub fn with_output_activation(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.offsets[l];
        let w_end = start + self.widths[l] * self.widths[l + 1];
        (start..w_end, w_end..w_end + self.widths[l + 1])
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        &self.params[self.layer_range(l).0]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.params[self.layer_range(l).1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Evaluates the network. Non-finite parameters or activations are
    /// reported as a corrupted model.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(x)?;
        Ok(trace.values.into_iter().next_back().unwrap())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.widths[0] {
            return Err(Error::InputDomain(format!("expected {} inputs, got {}", self.widths[0], x.len())));
        }
        let mut values = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layer_count());
        for l in 0..self.layer_count() {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            let w = self.weights(l);
            let b = self.bias(l);
            let input = values.last().unwrap();
            let z: Vec<f64> =
                (0..rows).map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(input).map(|(a, c)| a * c).sum::<f64>()).collect();
            let act = self.activation(l);
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptedModel(format!("non-finite activation in layer {l}")));
            }
            pre.push(z);
            values.push(y);
        }
        Ok(Trace { values, pre })
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len());
        let mut delta: Vec<f64> = grad_output.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            let act = self.activation(l);
            for r in 0..rows {
                delta[r] *= act.derivative(trace.pre[l][r], trace.values[l + 1][r]);
            }
            let (wr, br) = self.layer_range(l);
            let input = &trace.values[l];
            let gw = &mut grads[wr.clone()];
            for r in 0..rows {
                let d = delta[r];
                if d != 0.0 {
                    for (g, x) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            for (g, d) in grads[br].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let w = &self.params[wr];
                let mut next = vec![0.0; cols];
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        for (n, wv) in next.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                            *n += d * wv;
                        }
                    }
                }
                delta = next;
            }
        }
    }
}

/// The policy network: ELU hidden layers, tanh output in [-1, 1].
pub fn policy_net<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Mlp> {
    Mlp::random(widths, Activation::Elu, Activation::Tanh, 0.01, rng)
}

/// Value network: ELU hidden layers, identity output.
pub fn value_net<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Mlp> {
    Mlp::random(widths, Activation::Elu, Activation::Identity, 1.0, rng)
}

/// Scalar action in [-1, 1] from a single-output policy.
pub fn policy_action(net: &Mlp, obs: &[f64]) -> Result<f64> {
    Ok(net.forward(obs)?[0])
}
