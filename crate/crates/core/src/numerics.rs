//! Dense feed-forward network engine.
//!
//! Every subnetwork in the crate is an [`MlpParams`]: a chain of affine
//! layers with ReLU between hidden layers and a linear output. Output
//! activations that enforce distributional constraints live in
//! [`crate::families`], not here.
//!
//! Batches are row-major `batch × width` matrices. Weight matrices are
//! stored `out × in`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    /// Hidden ReLU layers followed by a linear output layer.
    pub fn chain(widths: &[usize]) -> Result<Vec<LayerSpec>> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("layer widths must be >= 1, got {widths:?}")));
        }
        let last = widths.len() - 2;
        Ok(widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_width: w[0],
                output_width: w[1],
                activation: if i == last { Activation::Linear } else { Activation::Relu },
            })
            .collect())
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.nrows()
    }
}

/// Weights and biases of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Per-layer inverted-dropout multipliers (0 or `1/(1-p)`), applied to a
/// layer's post-activation output.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    masks: Vec<Option<Array2<f64>>>,
}

impl DropoutMasks {
    /// Draws masks for the hidden layers listed in `after_layers`.
    pub fn sample<R: Rng + ?Sized>(
        params: &MlpParams,
        batch: usize,
        rate: f64,
        after_layers: &[usize],
        rng: &mut R,
    ) -> DropoutMasks {
        let n = params.layers.len();
        let mut masks = vec![None; n];
        if rate > 0.0 {
            let keep = 1.0 - rate;
            let scale = 1.0 / keep;
            for &l in after_layers {
                // the output layer never takes dropout
                if l + 1 >= n {
                    continue;
                }
                let width = params.layers[l].output_width();
                let m = Array2::from_shape_simple_fn((batch, width), || {
                    if rng.gen::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                masks[l] = Some(m);
            }
        }
        DropoutMasks { masks }
    }

    pub fn none(params: &MlpParams) -> DropoutMasks {
        DropoutMasks {
            masks: vec![None; params.layers.len()],
        }
    }

    pub fn get(&self, layer: usize) -> Option<&Array2<f64>> {
        self.masks.get(layer).and_then(|m| m.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.masks.iter().all(Option::is_none)
    }
}

/// Intermediate values from a forward pass, consumed by
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the (masked) input fed to layer `l`.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    masks: Option<DropoutMasks>,
    widths: Vec<usize>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |a| a.nrows())
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }

    pub fn masks(&self) -> Option<&DropoutMasks> {
        self.masks.as_ref()
    }
}

/// Weight and bias gradients, shape-congruent with an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl GradientBundle {
    pub fn zeros_like(params: &MlpParams) -> GradientBundle {
        GradientBundle {
            layers: params
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }

    /// Flattened in the same order as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Mutable contiguous slices in flat order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|(w, b)| {
            [
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ]
        })
    }
}

impl MlpParams {
    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<MlpParams> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_width() {
                return Err(Error::Dimension(format!(
                    "layer {i} bias has length {} for output width {}",
                    l.bias.len(),
                    l.output_width()
                )));
            }
            if l.input_width() == 0 || l.output_width() == 0 {
                return Err(Error::Dimension(format!("layer {i} has a zero width")));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(MlpParams { layers })
    }

    /// All-zero network for the given layer chain.
    pub fn zeros(specs: &[LayerSpec]) -> Result<MlpParams> {
        MlpParams::from_layers(
            specs
                .iter()
                .map(|s| Dense {
                    weights: Array2::zeros((s.output_width, s.input_width)),
                    bias: Array1::zeros(s.output_width),
                    activation: s.activation,
                })
                .collect(),
        )
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<MlpParams> {
        let mut params = MlpParams::zeros(specs)?;
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.input_width() + layer.output_width()) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_width)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Contiguous parameter slices in flat order.
    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_width() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_width()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("network input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Inference-only forward pass.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut a = input.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        masks: Option<&DropoutMasks>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let batch = input.nrows();
        if let Some(m) = masks {
            if m.masks.len() != self.layers.len() {
                return Err(Error::Dimension("dropout masks do not match layer count".into()));
            }
            for (l, mask) in m.masks.iter().enumerate() {
                if let Some(mask) = mask {
                    if mask.dim() != (batch, self.layers[l].output_width()) {
                        return Err(Error::Dimension(format!(
                            "dropout mask for layer {l} has shape {:?}",
                            mask.dim()
                        )));
                    }
                }
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let act = layer.activation;
            let mut out = z.mapv(|v| act.apply(v));
            if let Some(mask) = masks.and_then(|m| m.get(l)) {
                out *= mask;
            }
            inputs.push(a);
            pre_activations.push(z);
            a = out;
        }
        let mut widths = vec![self.input_width()];
        widths.extend(self.layers.iter().map(Dense::output_width));
        Ok((
            a,
            ForwardCache {
                inputs,
                pre_activations,
                masks: masks.cloned(),
                widths,
            },
        ))
    }

    /// Reverse-mode gradients given `upstream = ∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<GradientBundle> {
        let mut widths = vec![self.input_width()];
        widths.extend(self.layers.iter().map(Dense::output_width));
        if cache.widths != widths || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract("forward cache does not belong to this network".into()));
        }
        let batch = cache.batch_size();
        if upstream.dim() != (batch, self.output_width()) {
            return Err(Error::Contract(format!(
                "upstream gradient has shape {:?}, expected ({batch}, {})",
                upstream.dim(),
                self.output_width()
            )));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(mask) = cache.masks.as_ref().and_then(|m| m.get(l)) {
                delta *= mask;
            }
            if layer.activation == Activation::Relu {
                Zip::from(&mut delta)
                    .and(&cache.pre_activations[l])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            let gw = delta.t().dot(&cache.inputs[l]).as_standard_layout().into_owned();
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads })
    }
}

/// Relative error used by every gradient comparison in the crate.
///
/// The denominator is floored so that entries whose true gradient is
/// essentially zero are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat parameter index with the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss_fn` with central finite
/// differences over every parameter. `loss_fn` must be deterministic.
pub fn gradient_check<F>(params: &MlpParams, loss_fn: F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&MlpParams) -> (f64, GradientBundle),
{
    let (_, analytic) = loss_fn(params);
    let analytic = analytic.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    let mut worst_index = None;
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + step;
        probe.set_flat(&theta).expect("same length");
        let up = loss_fn(&probe).0;
        theta[i] = base[i] - step;
        probe.set_flat(&theta).expect("same length");
        let down = loss_fn(&probe).0;
        theta[i] = base[i];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic.get(i).copied().unwrap_or(f64::NAN), numeric);
        if !(err <= worst) {
            worst = err;
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_relative_error: worst,
        worst_index,
        checked: base.len(),
        tolerance,
        passed: worst < tolerance,
    }
}
