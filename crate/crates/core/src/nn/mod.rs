//! A small dense feed-forward network with hand-written backpropagation.
//!
//! Rows of a batch matrix are samples. Weights are stored `fan_in x fan_out`
//! so a layer computes `batch . W + b`. Hidden layers use LeakyReLU; the
//! output layer is linear and, for discriminators, its two logits are read
//! through a softmax by the loss functions.

mod checkpoint;
mod gradcheck;
mod optim;

pub use checkpoint::{load_network, read_network, save_network, write_network};
pub use gradcheck::{central_difference, grad_check, relative_error};
pub use optim::{adagrad_step, sgd_step, OptimizerKind, OptimizerState};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Probabilities are clamped here before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub fn rectifier(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_matrix(m: &Array2<f64>, slope: f64) -> Array2<f64> {
    m.mapv(|x| leaky_relu(x, slope))
}

fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Linear,
    Softmax2,
}

impl OutputKind {
    fn as_str(self) -> &'static str {
        match self {
            OutputKind::Linear => "linear",
            OutputKind::Softmax2 => "softmax2",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(OutputKind::Linear),
            "softmax2" => Some(OutputKind::Softmax2),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture of an [`MlpNetwork`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub slope: f64,
    /// Drop probability applied to the network input in train mode.
    pub input_dropout: f64,
    /// Drop probability applied to every hidden activation in train mode.
    pub hidden_dropout: f64,
    pub output_kind: OutputKind,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("dims", "input and output dims must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_size == 0 {
            return Err(Error::config("hidden_size", "must be positive"));
        }
        if self.output_kind == OutputKind::Softmax2 && self.output_dim != 2 {
            return Err(Error::config("output_dim", "softmax2 output needs 2 units"));
        }
        for (field, p) in [
            ("input_dropout", self.input_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("{p} not in [0, 1]")));
            }
        }
        if !self.slope.is_finite() {
            return Err(Error::config("slope", "must be finite"));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_size));
            fan_in = self.hidden_size;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass and consumed by `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer, after dropout.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout masks (already scaled) for each layer input.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn mask(&self, layer: usize) -> Option<&Array2<f64>> {
        self.masks.get(layer).and_then(Option::as_ref)
    }

    pub fn layer_input(&self, layer: usize) -> &Array2<f64> {
        &self.inputs[layer]
    }
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Flattened view: weights then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    if rate >= 1.0 {
        return Array2::zeros(shape);
    }
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

impl MlpNetwork {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpNetwork { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: dims.len(),
                found: layers.len(),
            });
        }
        for ((fan_in, fan_out), layer) in dims.iter().zip(&layers) {
            if layer.weights.dim() != (*fan_in, *fan_out) {
                return Err(Error::DimensionMismatch {
                    context: "layer weights",
                    expected: fan_in * fan_out,
                    found: layer.weights.len(),
                });
            }
            if layer.bias.len() != *fan_out {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: *fan_out,
                    found: layer.bias.len(),
                });
            }
        }
        let net = MlpNetwork { spec, layers };
        net.check_finite()?;
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Mutable access to the `idx`-th scalar parameter in flattened order.
    pub fn parameter_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                let cols = l.weights.ncols();
                return &mut l.weights[(idx / cols, idx % cols)];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters".into()))
        }
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.spec.input_dim,
                found: batch.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&batch)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(last),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut current = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let rate = if i == 0 {
                self.spec.input_dropout
            } else {
                self.spec.hidden_dropout
            };
            let mask = (mode == Mode::Train && rate > 0.0)
                .then(|| dropout_mask(current.dim(), rate, rng));
            if let Some(m) = &mask {
                current *= m;
            }
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            cache.inputs.push(current);
            cache.masks.push(mask);
            if i < last {
                current = leaky_relu_matrix(&z, self.spec.slope);
                cache.pre_activations.push(z);
            } else {
                current = z;
            }
        }
        Ok((current, cache))
    }

    /// Eval-mode forward pass; deterministic.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let last = self.layers.len() - 1;
        let mut current = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            current = if i < last {
                leaky_relu_matrix(&z, self.spec.slope)
            } else {
                z
            };
        }
        Ok(current)
    }

    /// Gradients of the parameters and of the network input, given the
    /// gradient of the loss with respect to the raw outputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len()
            || cache.pre_activations.len() + 1 != self.layers.len()
        {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let rows = cache.inputs[0].nrows();
        if output_gradient.dim() != (rows, self.spec.output_dim) {
            return Err(Error::StaleCache(format!(
                "output gradient is {:?}, expected ({rows}, {})",
                output_gradient.dim(),
                self.spec.output_dim
            )));
        }
        for (input, layer) in cache.inputs.iter().zip(&self.layers) {
            if input.ncols() != layer.weights.nrows() || input.nrows() != rows {
                return Err(Error::StaleCache("layer input shape".into()));
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_gradient.to_owned();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            grads.push(Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut upstream = delta.dot(&layer.weights.t());
            if let Some(mask) = &cache.masks[i] {
                upstream *= mask;
            }
            if i > 0 {
                let slope = self.spec.slope;
                Zip::from(&mut upstream)
                    .and(&cache.pre_activations[i - 1])
                    .for_each(|g, &z| *g *= leaky_relu_grad(z, slope));
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient layer count",
                expected: self.layers.len(),
                found: grads.layers.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradients".into()));
        }
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            let gw = g.weights.as_standard_layout();
            let w = layer
                .weights
                .as_slice_mut()
                .expect("weights kept in standard layout");
            opt.step(2 * i, w, gw.as_slice().expect("standard layout"))?;
            let b = layer.bias.as_slice_mut().expect("contiguous bias");
            opt.step(2 * i + 1, b, g.bias.as_slice().expect("contiguous bias"))?;
        }
        self.check_finite()
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Two-class target distribution with label smoothing: the labelled class
/// gets `1 - smoothing`, the other class `smoothing`.
pub fn smoothed_target(label: usize, smoothing: f64) -> [f64; 2] {
    let mut t = [smoothing; 2];
    t[label] = 1.0 - smoothing;
    t
}

/// Summed cross-entropy of softmax(logits) against one smoothed label shared
/// by every row. Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    label: usize,
    smoothing: f64,
) -> (f64, Array2<f64>) {
    let probs = softmax_rows(logits);
    let target = smoothed_target(label, smoothing);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (p, mut g) in probs.outer_iter().zip(grad.outer_iter_mut()) {
        // Terms whose probability hit the floor contribute a constant.
        let mut active = [0.0; 2];
        for c in 0..2 {
            loss -= target[c] * p[c].max(PROBABILITY_FLOOR).ln();
            if p[c] > PROBABILITY_FLOOR {
                active[c] = target[c];
            }
        }
        let mass: f64 = active.iter().sum();
        for c in 0..2 {
            g[c] = p[c] * mass - active[c];
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, output: usize, hidden_layers: usize, hidden: usize) -> MlpSpec {
        MlpSpec {
            input_dim: input,
            output_dim: output,
            hidden_layers,
            hidden_size: hidden,
            slope: DEFAULT_LEAKY_SLOPE,
            input_dropout: 0.0,
            hidden_dropout: 0.0,
            output_kind: OutputKind::Linear,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn activations() {
        assert_eq!(leaky_relu(5.0, 0.2), 5.0);
        assert_eq!(leaky_relu(0.0, 0.2), 0.0);
        assert_abs_diff_eq!(leaky_relu(-2.0, 0.2), -0.4, epsilon = 1e-15);
        assert_eq!(rectifier(-1.0), 0.0);
        assert_eq!(rectifier(0.0), 0.0);
        assert_eq!(rectifier(0.3), 0.3);
        let m = leaky_relu_matrix(&array![[1.0, -1.0]], 0.5);
        assert_eq!(m, array![[1.0, -0.5]]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(3, 2, 1, 4);
        let layers = vec![
            Dense {
                weights: Array2::zeros((3, 4)),
                bias: Array1::zeros(4),
            },
            Dense {
                weights: Array2::zeros((4, 2)),
                bias: Array1::zeros(2),
            },
        ];
        let net = MlpNetwork::from_layers(s, layers).unwrap();
        let out = net.predict(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn identity_single_layer_eval() {
        let net = MlpNetwork::from_layers(
            spec(3, 3, 0, 0),
            vec![Dense {
                weights: Array2::eye(3),
                bias: Array1::zeros(3),
            }],
        )
        .unwrap();
        let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
        let (out, _) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn full_input_dropout_zeroes_hidden_preactivations() {
        let mut s = spec(4, 2, 1, 8);
        s.input_dropout = 1.0;
        let net = MlpNetwork::new(s, &mut rng()).unwrap();
        let x = Array2::from_elem((5, 4), 1.5);
        let (_, cache) = net.forward(x.view(), Mode::Train, &mut rng()).unwrap();
        assert!(cache.pre_activations[0].iter().all(|&v| v == 0.0));
        assert!(cache.mask(0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_ignores_dropout_and_is_pure() {
        let mut s = spec(4, 3, 2, 6);
        s.input_dropout = 0.5;
        s.hidden_dropout = 0.5;
        let net = MlpNetwork::new(s, &mut rng()).unwrap();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1);
        let a = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap().0;
        let b = net
            .forward(x.view(), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap()
            .0;
        assert_eq!(a, b);
        assert_eq!(a, net.predict(x.view()).unwrap());
    }

    #[test]
    fn input_dimension_checked() {
        let net = MlpNetwork::new(spec(4, 2, 1, 3), &mut rng()).unwrap();
        assert!(matches!(
            net.predict(Array2::zeros((1, 5)).view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_gradient_is_input_outer_product() {
        let net = MlpNetwork::new(spec(3, 2, 0, 0), &mut rng()).unwrap();
        let x = array![[1.0, 2.0, 3.0]];
        let (_, cache) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        let g = array![[1.0, -1.0]];
        let (grads, _) = net.backward(&cache, g.view()).unwrap();
        assert_eq!(grads.layers[0].weights, x.t().dot(&g));
        assert_eq!(grads.layers[0].bias, array![1.0, -1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = MlpNetwork::new(spec(3, 2, 2, 5), &mut rng()).unwrap();
        let x = Array2::from_elem((4, 3), 0.3);
        let (_, cache) = net.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        let (grads, input_grad) = net.backward(&cache, Array2::zeros((4, 2)).view()).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert!(input_grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let a = MlpNetwork::new(spec(3, 2, 2, 5), &mut rng()).unwrap();
        let b = MlpNetwork::new(spec(3, 2, 1, 5), &mut rng()).unwrap();
        let x = Array2::from_elem((4, 3), 0.3);
        let (_, cache) = b.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert!(matches!(
            a.backward(&cache, Array2::zeros((4, 2)).view()),
            Err(Error::StaleCache(_))
        ));
        let (_, cache) = a.forward(x.view(), Mode::Eval, &mut rng()).unwrap();
        assert!(matches!(
            a.backward(&cache, Array2::zeros((3, 2)).view()),
            Err(Error::StaleCache(_))
        ));
    }

    /// Sum of squared outputs weighted by fixed coefficients.
    fn weighted_loss(out: &Array2<f64>, coef: &Array2<f64>) -> f64 {
        (out * out * coef).sum() * 0.5
    }

    #[test]
    fn backward_matches_finite_differences_2_16_16_4() {
        let mut r = rng();
        let net = MlpNetwork::new(spec(2, 4, 2, 16), &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((6, 2), || r.random_range(-1.0..1.0));
        let coef = Array2::from_shape_simple_fn((6, 4), || r.random_range(0.5..1.5));
        let (out, cache) = net.forward(x.view(), Mode::Eval, &mut r).unwrap();
        let (grads, _) = net.backward(&cache, (&out * &coef).view()).unwrap();
        let err = grad_check(
            &net,
            &grads,
            |n| weighted_loss(&n.predict(x.view()).unwrap(), &coef),
            net.parameter_count(),
            &mut r,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut r = rng();
        let net = MlpNetwork::new(spec(3, 2, 2, 8), &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((4, 3), || r.random_range(-1.0..1.0));
        let coef = Array2::from_elem((4, 2), 1.0);
        let (out, cache) = net.forward(x.view(), Mode::Eval, &mut r).unwrap();
        let (_, gx) = net.backward(&cache, (&out * &coef).view()).unwrap();
        let mut xs = x.clone().into_raw_vec_and_offset().0;
        let numeric = central_difference(&mut xs, 1e-5, |v| {
            let m = Array2::from_shape_vec((4, 3), v.to_vec()).unwrap();
            weighted_loss(&net.predict(m.view()).unwrap(), &coef)
        });
        for (a, n) in gx.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn train_mode_gradient_reuses_dropout_masks() {
        let mut s = spec(3, 2, 2, 8);
        s.input_dropout = 0.3;
        s.hidden_dropout = 0.3;
        let mut r = rng();
        let net = MlpNetwork::new(s, &mut r).unwrap();
        let x = Array2::from_shape_simple_fn((5, 3), || r.random_range(-1.0..1.0));
        let coef = Array2::from_elem((5, 2), 1.0);
        let (out, cache) = net
            .forward(x.view(), Mode::Train, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let (grads, _) = net.backward(&cache, (&out * &coef).view()).unwrap();
        // Replaying the same seed reproduces the same masks.
        let err = grad_check(
            &net,
            &grads,
            |n| {
                let o = n
                    .forward(x.view(), Mode::Train, &mut ChaCha8Rng::seed_from_u64(5))
                    .unwrap()
                    .0;
                weighted_loss(&o, &coef)
            },
            net.parameter_count(),
            &mut r,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn softmax_cross_entropy_uniform_and_gradient() {
        let logits = array![[0.0, 0.0]];
        let (loss, _) = softmax_cross_entropy(logits.view(), 1, 0.0);
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
        let (loss, _) = softmax_cross_entropy(logits.view(), 0, 0.1);
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);

        let logits = array![[0.3, -1.2], [2.0, 0.5]];
        let (_, g) = softmax_cross_entropy(logits.view(), 0, 0.1);
        let mut flat = logits.clone().into_raw_vec_and_offset().0;
        let numeric = central_difference(&mut flat, 1e-6, |v| {
            let m = Array2::from_shape_vec((2, 2), v.to_vec()).unwrap();
            softmax_cross_entropy(m.view(), 0, 0.1).0
        });
        for (a, n) in g.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn smoothing_puts_one_minus_sigma_on_true_class() {
        assert_eq!(smoothed_target(1, 0.1), [0.1, 0.9]);
        assert_eq!(smoothed_target(0, 0.0), [1.0, 0.0]);
    }

    #[test]
    fn extreme_logits_clamp_probability() {
        let (loss, g) = softmax_cross_entropy(array![[1000.0, -1000.0]].view(), 1, 0.0);
        assert_abs_diff_eq!(loss, -PROBABILITY_FLOOR.ln(), epsilon = 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sgd_update_changes_parameters_and_rejects_nan() {
        let mut net = MlpNetwork::new(spec(2, 1, 0, 0), &mut rng()).unwrap();
        let before = net.clone();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].bias[0] = 1.0;
        let mut opt = OptimizerState::sgd(0.5);
        net.apply_gradients(&grads, &mut opt).unwrap();
        assert_eq!(net.layers[0].bias[0], before.layers[0].bias[0] - 0.5);
        grads.layers[0].weights[(0, 0)] = f64::NAN;
        assert!(matches!(
            net.apply_gradients(&grads, &mut opt),
            Err(Error::NonFinite(_))
        ));
    }
}
