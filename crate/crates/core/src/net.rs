//! Small fully-connected networks with hand-written backpropagation.
//!
//! All parameters live in one flat `f64` vector. Layer `l` with fan-in `i`
//! and fan-out `o` occupies `o * i` weights stored row-major (one row per
//! output unit) followed by `o` biases. Hidden layers use ReLU (subgradient 0
//! at the kink); the output layer is either the identity or a softmax.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("expected input of length {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("expected upstream gradient of length {expected}, got {got}")]
    UpstreamDim { expected: usize, got: usize },
    #[error("gradient has {got} entries but the network has {expected} parameters")]
    GradientLayout { expected: usize, got: usize },
    #[error("gradient contains non-finite entries ({count} of {len})")]
    NonFiniteGradient { count: usize, len: usize },
    #[error("invalid layer dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    InvalidStep(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// Flat gradient aligned with a [`Network`]'s parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
}

/// Layer inputs (post-activation) and the final pre-activation, kept for the
/// backward pass.
struct Trace {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Network {
    pub fn param_count(layer_dims: &[usize]) -> usize {
        layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_dims(layer_dims: &[usize]) -> Result<(), NetError> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(NetError::InvalidDims(layer_dims.to_vec()));
        }
        Ok(())
    }

    pub fn zeros(layer_dims: &[usize], output: OutputActivation) -> Result<Self, NetError> {
        Self::check_dims(layer_dims)?;
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            params: vec![0.0; Self::param_count(layer_dims)],
            output,
        })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn random(
        layer_dims: &[usize],
        output: OutputActivation,
        rng: &mut SimRng,
    ) -> Result<Self, NetError> {
        let mut net = Self::zeros(layer_dims, output)?;
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        layer_dims: &[usize],
        output: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self, NetError> {
        Self::check_dims(layer_dims)?;
        let expected = Self::param_count(layer_dims);
        if params.len() != expected {
            return Err(NetError::GradientLayout {
                expected,
                got: params.len(),
            });
        }
        Ok(Network {
            layer_dims: layer_dims.to_vec(),
            params,
            output,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient::zeros(self.params.len())
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::InputDim {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let n_layers = self.layer_dims.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut current = input.to_vec();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases =
                &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = biases.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
            }
            offset += fan_in * fan_out + fan_out;
            inputs.push(current);
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            current = z;
        }
        Trace {
            inputs,
            logits: current,
        }
    }

    /// Pre-activation of the output layer.
    pub fn forward_logits(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(input)?;
        Ok(self.trace(input).logits)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        let logits = self.forward_logits(input)?;
        Ok(match self.output {
            OutputActivation::Identity => logits,
            OutputActivation::Softmax => softmax(&logits),
        })
    }

    /// Hidden-layer pre-activations, concatenated; used to detect inputs
    /// sitting on a ReLU kink.
    pub fn hidden_preactivations(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(input)?;
        let n_layers = self.layer_dims.len() - 1;
        let mut out = Vec::new();
        let mut current = input.to_vec();
        let mut offset = 0;
        for l in 0..n_layers - 1 {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &self.params[offset + o * fan_in..offset + (o + 1) * fan_in];
                let z = self.params[offset + fan_in * fan_out + o]
                    + row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
                out.push(z);
                next.push(z.max(0.0));
            }
            offset += fan_in * fan_out + fan_out;
            current = next;
        }
        Ok(out)
    }

    /// `grad += J_logitsᵀ · upstream`, where `upstream` is the gradient with
    /// respect to the output pre-activation.
    pub fn accumulate_backward_logits(
        &self,
        input: &[f64],
        upstream: &[f64],
        grad: &mut Gradient,
    ) -> Result<(), NetError> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(NetError::UpstreamDim {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(NetError::GradientLayout {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let trace = self.trace(input);
        self.backprop(&trace, upstream.to_vec(), &mut grad.0);
        Ok(())
    }

    fn backprop(&self, trace: &Trace, mut delta: Vec<f64>, grad: &mut [f64]) {
        let n_layers = self.layer_dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.layer_dims[l] * self.layer_dims[l + 1] + self.layer_dims[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let off = offsets[l];
            let x = &trace.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // propagate to the previous layer's post-ReLU output
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * w;
                }
            }
            // ReLU mask: the stored input is max(z, 0), so x > 0 iff z > 0
            for (p, xi) in prev.iter_mut().zip(x) {
                if *xi <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Gradient with respect to the output pre-activation.
    pub fn backward_logits(&self, input: &[f64], upstream: &[f64]) -> Result<Gradient, NetError> {
        let mut g = self.zero_gradient();
        self.accumulate_backward_logits(input, upstream, &mut g)?;
        Ok(g)
    }

    /// `Jᵀ · upstream` for the Jacobian of the full output (after the output
    /// activation) with respect to the parameters.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradient, NetError> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(NetError::UpstreamDim {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let trace = self.trace(input);
        let delta = match self.output {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Softmax => {
                let p = softmax(&trace.logits);
                let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
                p.iter()
                    .zip(upstream)
                    .map(|(pi, ui)| pi * (ui - dot))
                    .collect()
            }
        };
        let mut g = self.zero_gradient();
        self.backprop(&trace, delta, &mut g.0);
        Ok(g)
    }

    /// `params ± lr · grad`. Leaves the network untouched when the gradient
    /// is misaligned or non-finite.
    pub fn apply_gradient(
        &mut self,
        grad: &Gradient,
        lr: f64,
        direction: Direction,
    ) -> Result<(), NetError> {
        if grad.len() != self.params.len() {
            return Err(NetError::GradientLayout {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let bad = grad.0.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(NetError::NonFiniteGradient {
                count: bad,
                len: grad.len(),
            });
        }
        let signed = match direction {
            Direction::Descent => -lr,
            Direction::Ascent => lr,
        };
        for (p, g) in self.params.iter_mut().zip(&grad.0) {
            *p += signed * g;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_dims: self.layer_dims.clone(),
            output_activation: self.output,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NetError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        Self::from_params(&ck.layer_dims, ck.output_activation, ck.params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Versioned on-disk form of a [`Network`]. Field order is fixed by the
/// declaration order below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub output_activation: OutputActivation,
    pub params: Vec<f64>,
}

/// Fixed affine preprocessing `(x − shift) ⊙ scale` applied to a model's
/// inputs before its network. Not trained and not part of the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct InputMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputMap {
    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Self {
        assert_eq!(shift.len(), scale.len(), "shift and scale lengths differ");
        InputMap { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, k))| (v - m) * k)
            .collect()
    }
}

/// Maps `x` through `map` when one is set.
pub fn map_input<'a>(map: Option<&InputMap>, x: &'a [f64]) -> Cow<'a, [f64]> {
    match map {
        Some(m) if m.dim() == x.len() => Cow::Owned(m.apply(x)),
        _ => Cow::Borrowed(x),
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Central-difference gradient of `f` over every parameter of `net`.
/// Only evaluates `f`; never touches the backward pass.
pub fn numeric_gradient<F>(net: &Network, eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&Network) -> f64,
{
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let orig = probe.params[i];
            probe.params[i] = orig + eps;
            let up = f(&probe);
            probe.params[i] = orig - eps;
            let down = f(&probe);
            probe.params[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `max_i |analytic_i − numeric_i| / max(1e-12, |numeric_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_relative_error_floored(analytic, numeric, 1e-12)
}

/// As [`max_relative_error`] with a caller-chosen denominator floor.
pub fn max_relative_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Compares backpropagation against central differences for a scalar loss
/// of the network output. `loss` returns the value and its gradient with
/// respect to the output.
pub fn finite_diff_check<L>(
    net: &Network,
    input: &[f64],
    loss: L,
    eps: f64,
) -> Result<f64, NetError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(NetError::InvalidStep(eps));
    }
    let out = net.forward(input)?;
    let (_, upstream) = loss(&out);
    let analytic = net.backward(input, &upstream)?;
    let numeric = numeric_gradient(net, eps, |n| {
        let o = n.forward(input).expect("input checked");
        loss(&o).0
    });
    Ok(max_relative_error(analytic.as_slice(), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn affine(w: f64, b: f64) -> Network {
        Network::from_params(&[1, 1], OutputActivation::Identity, vec![w, b]).unwrap()
    }

    #[test]
    fn param_count_matches_layout() {
        assert_eq!(Network::param_count(&[4, 32, 1]), 4 * 32 + 32 + 32 + 1);
        assert_eq!(
            Network::param_count(&[2, 128, 3]),
            2 * 128 + 128 + 128 * 3 + 3
        );
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::zeros(&[4, 8, 3], OutputActivation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn affine_forward() {
        let net = affine(2.0, -0.5);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![5.5]);
        // identity head passes negative pre-activations through
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![-6.5]);
    }

    #[test]
    fn softmax_symmetric_logits() {
        let net = Network::zeros(&[2, 2], OutputActivation::Softmax).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn input_dimension_checked() {
        let net = Network::zeros(&[4, 2], OutputActivation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NetError::InputDim { .. })
        ));
        assert!(matches!(
            net.backward(&[0.0; 4], &[1.0]),
            Err(NetError::UpstreamDim { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = Network::random(
            &[4, 16, 2],
            OutputActivation::Softmax,
            &mut rng_from_seed(1),
        )
        .unwrap();
        let g = net.backward(&[0.1, 0.2, -0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_gradient() {
        let g = affine(0.7, 0.1).backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.0, vec![3.0, 1.0]);
    }

    #[test]
    fn random_relu_net_matches_finite_differences() {
        let mut rng = rng_from_seed(2);
        let mut checked = 0;
        while checked < 20 {
            let net = Network::random(&[4, 32, 1], OutputActivation::Identity, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            if net
                .hidden_preactivations(&x)
                .unwrap()
                .iter()
                .any(|z| z.abs() < 1e-4)
            {
                continue;
            }
            let err = finite_diff_check(
                &net,
                &x,
                |o| (0.5 * o[0] * o[0] + o[0], vec![o[0] + 1.0]),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "relative error {err}");
            checked += 1;
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let net = Network::random(&[3, 8, 3], OutputActivation::Softmax, &mut rng).unwrap();
        let x = [0.3, -0.7, 0.2];
        let err = finite_diff_check(
            &net,
            &x,
            |o| (o[0].ln() + 2.0 * o[2], vec![1.0 / o[0], 0.0, 2.0]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn affine_quadratic_is_exact() {
        let err = finite_diff_check(
            &affine(1.3, -0.2),
            &[0.8],
            |o| (o[0] * o[0], vec![2.0 * o[0]]),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn step_outside_range_rejected() {
        let net = affine(1.0, 0.0);
        for eps in [0.0, -1e-5, 0.1] {
            assert!(matches!(
                finite_diff_check(&net, &[1.0], |o| (o[0], vec![1.0]), eps),
                Err(NetError::InvalidStep(_))
            ));
        }
    }

    #[test]
    fn apply_gradient_basics() {
        let mut rng = rng_from_seed(4);
        let net = Network::random(&[2, 4, 1], OutputActivation::Identity, &mut rng).unwrap();
        let g = Gradient(vec![1.0; net.num_params()]);

        let mut same = net.clone();
        same.apply_gradient(&g, 0.0, Direction::Descent).unwrap();
        assert_eq!(same, net);

        let mut down = net.clone();
        down.apply_gradient(&g, 0.1, Direction::Descent).unwrap();
        for (a, b) in down.params().iter().zip(net.params()) {
            assert!((a - (b - 0.1)).abs() < 1e-15);
        }
        down.apply_gradient(&g, 0.1, Direction::Ascent).unwrap();
        for (a, b) in down.params().iter().zip(net.params()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut net = affine(1.0, 2.0);
        let before = net.clone();
        let err = net
            .apply_gradient(&Gradient(vec![f64::NAN, 0.0]), 0.1, Direction::Descent)
            .unwrap_err();
        assert!(matches!(err, NetError::NonFiniteGradient { count: 1, .. }));
        assert_eq!(net, before);
        assert!(net
            .apply_gradient(&Gradient(vec![0.0]), 0.1, Direction::Descent)
            .is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = Network::random(
            &[4, 32, 2],
            OutputActivation::Softmax,
            &mut rng_from_seed(9),
        )
        .unwrap();
        let back = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        assert!(back
            .params()
            .iter()
            .zip(net.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let text = net.to_json();
        assert!(text.starts_with(
            "{\"version\":1,\"layer_dims\":[4,32,2],\"output_activation\":\"softmax\",\"params\":["
        ));
    }

    #[test]
    fn checkpoint_rejects_bad_payloads() {
        assert!(Network::from_json("{\"version\":2,\"layer_dims\":[1,1],\"output_activation\":\"identity\",\"params\":[0,0]}").is_err());
        assert!(Network::from_json("{\"version\":1,\"layer_dims\":[1,1],\"output_activation\":\"identity\",\"params\":[0]}").is_err());
        assert!(Network::from_json("{\"version\":1}").is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-700.0f64..700.0, 1..8)) {
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn serialization_round_trip(seed in any::<u64>(), hidden in 1usize..16) {
            let net = Network::random(&[3, hidden, 2], OutputActivation::Identity, &mut rng_from_seed(seed)).unwrap();
            let back = Network::from_json(&net.to_json()).unwrap();
            prop_assert!(back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
