//! Hand-rolled multi-layer perceptron scoring descriptor pairs, with exact
//! reverse-mode gradients of the clamped cross-entropy and a plain
//! gradient-descent training loop.
//!
//! Hidden layers use leaky ReLU; the single output unit applies a logistic
//! so scores land in (0, 1). Gradients are derived for the loss as
//! implemented — including the probability clamp, whose saturated regions
//! contribute exactly zero gradient.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{LearnError, Result, SampleBatch, PROBABILITY_CLAMP};

/// Negative-side slope of the leaky ReLU activation.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully-connected network parameters. Layer `l` maps `layer_dims[l]`
/// inputs to `layer_dims[l + 1]` outputs; weights are stored row-major, one
/// row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    leaky_slope: f64,
}

impl MlpParams {
    /// Seeded uniform Xavier initialization; biases start at zero.
    pub fn new(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            leaky_slope: LEAKY_SLOPE,
        })
    }

    /// Default architecture for descriptors of dimension `c`: the pair
    /// concatenation enters at `2c` and funnels down to a single score.
    pub fn default_dims_for_feature_dim(c: usize) -> Vec<usize> {
        vec![2 * c, 2 * c, c, 1]
    }

    /// Rebuild from raw parts (used by the weight-file codec).
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        leaky_slope: f64,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(LearnError::InvalidArchitecture(format!(
                "expected {layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(LearnError::InvalidArchitecture(format!(
                    "layer {l} weights: expected {} values, got {}",
                    pair[0] * pair[1],
                    weights[l].len()
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(LearnError::InvalidArchitecture(format!(
                    "layer {l} biases: expected {} values, got {}",
                    pair[1],
                    biases[l].len()
                )));
            }
        }
        if !leaky_slope.is_finite() || leaky_slope < 0.0 {
            return Err(LearnError::InvalidArchitecture(format!(
                "leaky slope must be finite and non-negative, got {leaky_slope}"
            )));
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            leaky_slope,
        })
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(LearnError::InvalidArchitecture(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(LearnError::InvalidArchitecture(
                "layer dimensions must be positive".into(),
            ));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(LearnError::InvalidArchitecture(
                "output layer must have exactly one unit".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    fn leaky_derivative(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    /// Forward pass retaining per-layer pre-activations for backprop.
    /// Returns (pre-activations per layer, activations per layer including
    /// the input, final score).
    fn forward_trace(&self, input: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
        if input.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut activations = vec![input.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layer_count());
        for layer in 0..self.layer_count() {
            let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
            let prev = &activations[layer];
            let mut z = self.biases[layer].clone();
            for (row, z_row) in z.iter_mut().enumerate() {
                let w = &self.weights[layer][row * n_in..(row + 1) * n_in];
                *z_row += w.iter().zip(prev).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            let last = layer + 1 == self.layer_count();
            let a: Vec<f64> = if last {
                z.iter().map(|&v| logistic(v)).collect()
            } else {
                z.iter().map(|&v| self.leaky(v)).collect()
            };
            debug_assert_eq!(a.len(), n_out);
            pre_activations.push(z);
            activations.push(a);
        }
        let score = activations.last().unwrap()[0];
        Ok((pre_activations, activations, score))
    }
}

/// Numerically safe logistic function.
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Score a single concatenated descriptor pair in (0, 1).
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<f64> {
    let (_, _, score) = params.forward_trace(input)?;
    Ok(score)
}

/// Gradients of the total cross-entropy over a batch, plus the loss itself.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

impl MlpGradients {
    fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            loss: 0.0,
        }
    }
}

/// Exact gradients of the clamped cross-entropy over every pair in `batch`.
///
/// For a pair labeled positive the per-term loss is `-ln S`, for one labeled
/// negative `-ln(1 - S)`, with `S` clamped to
/// `[PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP]`. Where the clamp is active
/// the term is constant, so its gradient is exactly zero; elsewhere the
/// output-unit residual reduces to `S - 1` (positive) or `S` (negative).
pub fn mlp_gradients(params: &MlpParams, batch: &SampleBatch) -> Result<MlpGradients> {
    if batch.is_empty() {
        return Err(LearnError::NoValidSamples);
    }
    let expected = params.input_dim();
    if expected != 2 * batch.dim {
        return Err(LearnError::DimensionMismatch {
            expected,
            got: 2 * batch.dim,
        });
    }
    let mut grads = MlpGradients::zeros_like(params);
    let mut concat = vec![0.0; expected];
    let mut accumulate = |grads: &mut MlpGradients,
                          a: &[f64],
                          b: &[f64],
                          positive: bool|
     -> Result<()> {
        concat[..batch.dim].copy_from_slice(a);
        concat[batch.dim..].copy_from_slice(b);
        let (pre, acts, raw) = params.forward_trace(&concat)?;
        let s = raw.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        grads.loss += if positive { -s.ln() } else { -(1.0 - s).ln() };
        // On the clamp plateau the loss is locally constant in the raw score.
        let clamped = raw <= PROBABILITY_CLAMP || raw >= 1.0 - PROBABILITY_CLAMP;
        let residual = if clamped {
            0.0
        } else if positive {
            s - 1.0
        } else {
            s
        };
        // `residual` is already dL/dz for the output unit: the logistic'
        // factor cancels against the cross-entropy derivative.
        let mut delta = vec![residual];
        for layer in (0..params.layer_count()).rev() {
            let n_in = params.layer_dims[layer];
            let prev = &acts[layer];
            for (row, &d) in delta.iter().enumerate() {
                let w_grad = &mut grads.weights[layer][row * n_in..(row + 1) * n_in];
                for (g, &p) in w_grad.iter_mut().zip(prev) {
                    *g += d * p;
                }
                grads.biases[layer][row] += d;
            }
            if layer == 0 {
                break;
            }
            // delta for the previous layer: (W^T delta) * leaky'(z_prev)
            let mut next = vec![0.0; n_in];
            for (row, &d) in delta.iter().enumerate() {
                let w = &params.weights[layer][row * n_in..(row + 1) * n_in];
                for (n, &wi) in next.iter_mut().zip(w) {
                    *n += d * wi;
                }
            }
            for (n, &z) in next.iter_mut().zip(&pre[layer - 1]) {
                *n *= params.leaky_derivative(z);
            }
            delta = next;
        }
        Ok(())
    };

    for i in 0..batch.anchors.len() {
        accumulate(&mut grads, &batch.anchors[i], &batch.positives[i], true)?;
        accumulate(&mut grads, &batch.anchors[i], &batch.negatives[i], false)?;
    }
    for i in 0..batch.occ_anchors.len() {
        accumulate(
            &mut grads,
            &batch.occ_anchors[i],
            &batch.occ_negatives1[i],
            false,
        )?;
        accumulate(
            &mut grads,
            &batch.occ_anchors[i],
            &batch.occ_negatives2[i],
            false,
        )?;
    }
    Ok(grads)
}

/// Plain gradient-descent settings.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
        }
    }
}

/// Trains by full-batch gradient descent over `batches`, one pass per epoch.
///
/// Returns the trained parameters and the per-epoch loss trace (total over
/// all batches, evaluated before each epoch's updates are complete — i.e.
/// the loss each gradient step actually saw). Training aborts with
/// [`LearnError::DivergenceDetected`] if an epoch loss exceeds ten times the
/// first epoch's or stops being finite.
pub fn train_mlp(
    params: &MlpParams,
    batches: &[SampleBatch],
    config: &TrainConfig,
) -> Result<(MlpParams, Vec<f64>)> {
    if batches.iter().all(|b| b.is_empty()) {
        return Err(LearnError::NoValidSamples);
    }
    let mut current = params.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut initial: Option<f64> = None;
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in batches.iter().filter(|b| !b.is_empty()) {
            let grads = mlp_gradients(&current, batch)?;
            epoch_loss += grads.loss;
            for layer in 0..current.layer_count() {
                for (w, g) in current.weights[layer].iter_mut().zip(&grads.weights[layer]) {
                    *w -= config.learning_rate * g;
                }
                for (b, g) in current.biases[layer].iter_mut().zip(&grads.biases[layer]) {
                    *b -= config.learning_rate * g;
                }
            }
        }
        let baseline = *initial.get_or_insert(epoch_loss);
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * baseline.max(f64::MIN_POSITIVE) {
            return Err(LearnError::DivergenceDetected {
                initial: baseline,
                current: epoch_loss,
            });
        }
        trace.push(epoch_loss);
    }
    Ok((current, trace))
}
