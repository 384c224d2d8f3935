//! Fully connected segment scorer: ReLU hidden layers, sigmoid output.
//!
//! All weights and biases live in one flat buffer, layer by layer, each
//! layer as its row-major `out x in` weight matrix followed by its biases.
//! Gradients and optimizer accumulators use the same layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::FeatureBag;
use crate::{Error, Result};

/// Hidden layer widths used when none are given.
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 32];

/// Dropout rate applied to hidden activations during training by default.
pub const DEFAULT_DROPOUT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    values: Vec<f64>,
}

fn check_layer_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidConfig("network needs at least an input and an output layer".into()));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidConfig("layer widths must be positive".into()));
    }
    if layer_dims[layer_dims.len() - 1] != 1 {
        return Err(Error::InvalidConfig("output layer must have width 1".into()));
    }
    Ok(())
}

/// Total number of weights and biases for the given layer widths.
pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl ModelParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_layer_dims(layer_dims)?;
        Ok(Self { layer_dims: layer_dims.to_vec(), values: vec![0.0; param_count(layer_dims)] })
    }

    pub fn from_values(layer_dims: &[usize], values: Vec<f64>) -> Result<Self> {
        check_layer_dims(layer_dims)?;
        let expected = param_count(layer_dims);
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), values })
    }

    /// Zeroed buffer with this network's shape; used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self { layer_dims: self.layer_dims.clone(), values: vec![0.0; self.values.len()] }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
    }

    /// (weights start, biases start, layer end) in the flat buffer.
    fn layer_span(&self, layer: usize) -> (usize, usize, usize) {
        let start = param_count(&self.layer_dims[..=layer]);
        let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        (start, start + n_in * n_out, start + n_in * n_out + n_out)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (w, b, _) = self.layer_span(layer);
        &self.values[w..b]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let (_, b, e) = self.layer_span(layer);
        &self.values[b..e]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (w, b, _) = self.layer_span(layer);
        &mut self.values[w..b]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, b, e) = self.layer_span(layer);
        &mut self.values[b..e]
    }

    fn weights_and_biases_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b, e) = self.layer_span(layer);
        self.values[w..e].split_at_mut(b - w)
    }

    /// Iterates over every weight entry, skipping biases.
    pub fn weight_entries(&self) -> impl Iterator<Item = &f64> {
        (0..self.n_layers()).flat_map(move |l| self.weights(l).iter())
    }

    /// Adds `scale * other` element-wise.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::LengthMismatch { expected: self.values.len(), found: other.values.len() });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
///
/// `hidden` defaults to [`DEFAULT_HIDDEN`].
pub fn init_params(dim: usize, seed: u64, hidden: Option<&[usize]>) -> Result<ModelParams> {
    if dim == 0 {
        return Err(Error::InvalidConfig("feature dimension must be positive".into()));
    }
    let hidden = hidden.unwrap_or(&DEFAULT_HIDDEN);
    let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
    layer_dims.push(dim);
    layer_dims.extend_from_slice(hidden);
    layer_dims.push(1);
    let mut params = ModelParams::zeros(&layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..params.n_layers() {
        let (n_in, n_out) = (layer_dims[l], layer_dims[l + 1]);
        let limit = libm::sqrt(6.0 / (n_in + n_out) as f64);
        for w in params.weights_mut(l) {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(params)
}

/// Logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Dropout mode for a forward pass.
pub enum Dropout<'a> {
    /// Inference: hidden activations pass through unchanged.
    Off,
    /// Training: each hidden unit is zeroed with probability `rate` and the
    /// survivors scaled by `1 / (1 - rate)`. Masks come from `rng`.
    Active { rate: f64, rng: &'a mut dyn RngCore },
}

impl core::fmt::Debug for Dropout<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Dropout::Off => f.write_str("Off"),
            Dropout::Active { rate, .. } => write!(f, "Active {{ rate: {rate} }}"),
        }
    }
}

/// Values kept from one forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre_activations: Vec<Vec<f64>>,
    /// Scaled dropout masks for hidden layers, when dropout was active.
    masks: Vec<Option<Vec<f64>>>,
    score: f64,
}

impl ForwardTrace {
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre_activations[layer]
    }

    /// Smallest |pre-activation| over the ReLU layers.
    pub fn min_hidden_margin(&self) -> f64 {
        let hidden = self.pre_activations.len() - 1;
        self.pre_activations[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

pub fn forward(params: &ModelParams, x: &[f64], dropout: Dropout<'_>) -> Result<(f64, ForwardTrace)> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), found: x.len() });
    }
    let (rate, mut rng) = match dropout {
        Dropout::Off => (0.0, None),
        Dropout::Active { rate, rng } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidHyperparameter { name: "dropout_rate", value: rate });
            }
            (rate, Some(rng))
        }
    };
    let n_layers = params.n_layers();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers - 1);
    let mut current = x.to_vec();
    for l in 0..n_layers {
        let n_in = params.layer_dims[l];
        let weights = params.weights(l);
        let z: Vec<f64> = params
            .biases(l)
            .iter()
            .zip(weights.chunks_exact(n_in))
            .map(|(b, row)| b + row.iter().zip(&current).map(|(w, a)| w * a).sum::<f64>())
            .collect();
        let next = if l + 1 < n_layers {
            let mut a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            let mask = match rng.as_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..a.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    for (ai, mi) in a.iter_mut().zip(&m) {
                        *ai *= mi;
                    }
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            a
        } else {
            vec![sigmoid(z[0])]
        };
        inputs.push(core::mem::replace(&mut current, next));
        pre_activations.push(z);
    }
    let score = current[0];
    Ok((score, ForwardTrace { inputs, pre_activations, masks, score }))
}

/// Inference-mode score of a single feature vector.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<f64> {
    forward(params, x, Dropout::Off).map(|(s, _)| s)
}

/// Anomaly scores for every segment of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores {
    pub video_id: String,
    pub scores: Vec<f64>,
}

/// Scores every segment of a bag in inference mode.
pub fn score_bag(params: &ModelParams, bag: &FeatureBag) -> Result<SegmentScores> {
    if bag.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), found: bag.dim() });
    }
    let scores = bag.segments().map(|s| predict(params, s)).collect::<Result<Vec<_>>>()?;
    Ok(SegmentScores { video_id: bag.video_id().into(), scores })
}

/// Accumulates `d(loss)/d(params)` for one trace into `grad`, given
/// `upstream = d(loss)/d(score)`.
pub fn backward_into(params: &ModelParams, grad: &mut ModelParams, trace: &ForwardTrace, upstream: f64) -> Result<()> {
    if !params.same_shape(grad) {
        return Err(Error::LengthMismatch { expected: params.values.len(), found: grad.values.len() });
    }
    let n_layers = params.n_layers();
    if trace.inputs.len() != n_layers || trace.inputs[0].len() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), found: trace.inputs[0].len() });
    }
    if upstream == 0.0 {
        return Ok(());
    }
    let s = trace.score;
    let mut delta = vec![upstream * s * (1.0 - s)];
    for l in (0..n_layers).rev() {
        let n_in = params.layer_dims[l];
        let input = &trace.inputs[l];
        let (gw, gb) = grad.weights_and_biases_mut(l);
        for ((d, row), b) in delta.iter().zip(gw.chunks_exact_mut(n_in)).zip(gb.iter_mut()) {
            *b += d;
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if l == 0 {
            break;
        }
        let weights = params.weights(l);
        let mut below = vec![0.0; n_in];
        for (d, row) in delta.iter().zip(weights.chunks_exact(n_in)) {
            for (acc, w) in below.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
        let z = &trace.pre_activations[l - 1];
        let mask = trace.masks[l - 1].as_deref();
        for (i, acc) in below.iter_mut().enumerate() {
            // ReLU subgradient at exactly zero is 0.
            let gate = if z[i] > 0.0 { mask.map_or(1.0, |m| m[i]) } else { 0.0 };
            *acc *= gate;
        }
        delta = below;
    }
    Ok(())
}

/// Gradient of the loss with respect to all parameters, summed over traces.
pub fn backward(params: &ModelParams, traces: &[ForwardTrace], upstream: &[f64]) -> Result<ModelParams> {
    if traces.len() != upstream.len() {
        return Err(Error::LengthMismatch { expected: traces.len(), found: upstream.len() });
    }
    let mut grad = params.zeros_like();
    for (trace, &u) in traces.iter().zip(upstream) {
        backward_into(params, &mut grad, trace, u)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-1-1-1 network: w = (2, 0.5, -1), b = (-0.5, 0.25, 0.3).
    fn tiny() -> ModelParams {
        ModelParams::from_values(&[1, 1, 1, 1], vec![2.0, -0.5, 0.5, 0.25, -1.0, 0.3]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params(7, 11, None).unwrap();
        let b = init_params(7, 11, None).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.layer_dims(), &[7, 512, 32, 1]);
        assert!(a.biases(0).iter().all(|&b| b == 0.0));
        assert_ne!(a.values(), init_params(7, 12, None).unwrap().values());
        assert!(init_params(0, 1, None).is_err());

        let wide = init_params(12288, 0, None).unwrap();
        assert_eq!(wide.weights(0).len(), 512 * 12288);
        let limit = libm::sqrt(6.0 / (12288.0 + 512.0));
        assert!(wide.weights(0).iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_network_scores_half() {
        let p = ModelParams::zeros(&[3, 4, 2, 1]).unwrap();
        let (s, _) = forward(&p, &[1.0, -2.0, 5.0], Dropout::Off).unwrap();
        assert_eq!(s, 0.5);
    }

    #[test]
    fn hand_computed_chain() {
        // z1 = 1.5, z2 = 1.0, z3 = -0.7
        let (s, trace) = forward(&tiny(), &[1.0], Dropout::Off).unwrap();
        assert_eq!(trace.pre_activations(0), &[1.5]);
        assert_eq!(trace.pre_activations(1), &[1.0]);
        assert!((s - 0.331_812_227_831_834).abs() < 1e-15);

        let g = backward(&tiny(), &[trace], &[1.0]).unwrap();
        let d3 = s * (1.0 - s);
        let expected = [-0.5 * d3, -0.5 * d3, -1.5 * d3, -d3, d3, d3];
        for (a, e) in g.values().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_params(4, 2, Some(&[3])).unwrap();
        let (_, t) = forward(&p, &[0.1, 0.2, 0.3, 0.4], Dropout::Off).unwrap();
        let g = backward(&p, &[t.clone(), t], &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_rate_dropout_matches_inference() {
        let p = init_params(5, 9, Some(&[6, 3])).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = forward(&p, &x, Dropout::Off).unwrap();
        let b = forward(&p, &x, Dropout::Active { rate: 0.0, rng: &mut rng }).unwrap();
        assert_eq!(a.0, b.0);
        assert!(forward(&p, &x, Dropout::Active { rate: 1.0, rng: &mut rng }).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let p = init_params(4, 2, None).unwrap();
        assert_eq!(
            forward(&p, &[1.0], Dropout::Off).unwrap_err(),
            Error::DimensionMismatch { expected: 4, found: 1 }
        );
        let bag = FeatureBag::new("v", crate::corpus::Label::Normal, 2, &[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(score_bag(&p, &bag), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sigmoid_stays_open() {
        for z in [-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "{z} -> {s}");
        }
    }
}
