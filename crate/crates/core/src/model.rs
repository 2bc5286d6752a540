//! Model assembly and inference.
//!
//! A [`NamlssModel`] is a list of subnetworks whose outputs are summed into
//! the raw predictor `η` (one column per distributional parameter), plus
//! per-parameter intercepts. The architectures differ only in how subnets
//! map onto features and parameter columns:
//!
//! - [`Architecture::PerParameter`]: one scalar-output subnet per
//!   (parameter, feature) pair, ordered parameter-major.
//! - [`Architecture::SharedSubnets`]: one `K`-output subnet per feature.
//! - [`Architecture::Dense`]: a single fully connected network over all
//!   features (the DNN/MLP baselines and the interaction model).
//!
//! With `K = 1` the first two produce the same subnet list, the same
//! initialisation and the same random draws during training.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreprocessSpec};
use crate::error::{Error, Result};
use crate::families::{ActivationKind, Family, FamilyId, ParamVector};
use crate::numerics::{Activation, Dense, DropoutMasks, ForwardCache, GradientBundle, LayerSpec, MlpParams};
use crate::rng::{stream, Purpose};
use crate::special::sigmoid;
use crate::train::{train, TrainConfig, TrainHistory};

pub const MODEL_FORMAT: &str = "namlss-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    PerParameter,
    SharedSubnets,
    Dense,
}

impl Architecture {
    pub fn is_additive(self) -> bool {
        self != Architecture::Dense
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanLoss {
    SquaredError,
    /// Binary cross-entropy on a sigmoid output.
    CrossEntropy,
}

/// What the summed subnet outputs represent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Head {
    /// All `K` parameters of `family`, trained by its NLL.
    Distribution { family: Family },
    /// A single mean prediction trained by a point loss. `family` is the
    /// distribution used when a log-likelihood is requested for it.
    Mean {
        activation: ActivationKind,
        loss: MeanLoss,
        family: Family,
    },
}

impl Head {
    pub fn family(&self) -> &Family {
        match self {
            Head::Distribution { family } | Head::Mean { family, .. } => family,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Head::Distribution { family } => family.k(),
            Head::Mean { .. } => 1,
        }
    }
}

/// Hidden stack of one subnetwork and where its dropout layer sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubnetSpec {
    pub hidden: Vec<usize>,
    /// Index of the hidden layer followed by dropout.
    #[serde(default)]
    pub dropout_after: Option<usize>,
}

impl SubnetSpec {
    pub fn new(hidden: Vec<usize>) -> SubnetSpec {
        SubnetSpec {
            hidden,
            dropout_after: None,
        }
    }

    pub fn with_dropout_after(mut self, layer: usize) -> SubnetSpec {
        self.dropout_after = Some(layer);
        self
    }
}

/// Stack used by the non-location parameter subnets of the per-parameter
/// architecture.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ScaleSubnets {
    /// `[50, 25]` without dropout for the Normal variance, otherwise the
    /// main stack.
    #[default]
    Default,
    Same,
    Custom(SubnetSpec),
}

/// The pieces a built model is assembled from.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    pub head: Head,
    pub arch: Architecture,
    pub n_features: usize,
    pub hidden: SubnetSpec,
    pub scale: ScaleSubnets,
    pub trainable_intercepts: bool,
    pub seed: u64,
}

impl ModelBuilder {
    pub fn new(family: Family, arch: Architecture, n_features: usize, hidden: SubnetSpec) -> ModelBuilder {
        ModelBuilder {
            head: Head::Distribution { family },
            arch,
            n_features,
            hidden,
            scale: ScaleSubnets::Default,
            trainable_intercepts: false,
            seed: 0,
        }
    }

    pub fn head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn scale(mut self, scale: ScaleSubnets) -> Self {
        self.scale = scale;
        self
    }

    pub fn trainable_intercepts(mut self, on: bool) -> Self {
        self.trainable_intercepts = on;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn scale_spec(&self) -> SubnetSpec {
        match &self.scale {
            ScaleSubnets::Same => self.hidden.clone(),
            ScaleSubnets::Custom(s) => s.clone(),
            ScaleSubnets::Default => match self.head {
                Head::Distribution { family } if family.id == FamilyId::Normal => SubnetSpec::new(vec![50, 25]),
                _ => self.hidden.clone(),
            },
        }
    }

    pub fn build(self) -> Result<NamlssModel> {
        if self.n_features == 0 {
            return Err(Error::Config("a model needs at least one feature".into()));
        }
        if self.hidden.hidden.is_empty() {
            return Err(Error::Config("hidden stack must not be empty".into()));
        }
        let k = self.head.outputs();
        let mut layout: Vec<(Option<usize>, Vec<usize>, SubnetSpec)> = Vec::new();
        match self.arch {
            Architecture::PerParameter => {
                let scale = self.scale_spec();
                for p in 0..k {
                    let spec = if p == 0 { self.hidden.clone() } else { scale.clone() };
                    for j in 0..self.n_features {
                        layout.push((Some(j), vec![p], spec.clone()));
                    }
                }
            }
            Architecture::SharedSubnets => {
                for j in 0..self.n_features {
                    layout.push((Some(j), (0..k).collect(), self.hidden.clone()));
                }
            }
            Architecture::Dense => layout.push((None, (0..k).collect(), self.hidden.clone())),
        }
        let mut subnets = Vec::with_capacity(layout.len());
        for (i, (feature, outputs, spec)) in layout.into_iter().enumerate() {
            if spec.hidden.is_empty() {
                return Err(Error::Config("hidden stack must not be empty".into()));
            }
            if let Some(d) = spec.dropout_after {
                if d >= spec.hidden.len() {
                    return Err(Error::Config(format!(
                        "dropout after hidden layer {d} but the stack has {} layers",
                        spec.hidden.len()
                    )));
                }
            }
            let input = if feature.is_some() { 1 } else { self.n_features };
            let mut widths = vec![input];
            widths.extend(&spec.hidden);
            widths.push(outputs.len());
            let mut rng = stream(self.seed, Purpose::Init, i as u64);
            let mlp = MlpParams::glorot(&LayerSpec::chain(&widths)?, &mut rng)?;
            subnets.push(Subnet {
                feature,
                outputs,
                mlp,
                dropout_after: spec.dropout_after,
            });
        }
        Ok(NamlssModel {
            head: self.head,
            arch: self.arch,
            n_features: self.n_features,
            subnets,
            intercepts: vec![0.0; k],
            trainable_intercepts: self.trainable_intercepts,
            feature_names: (1..=self.n_features).map(|j| format!("x{j}")).collect(),
            preprocess: None,
            interaction: None,
        })
    }
}

/// One parameter-feature network.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    /// Input feature; `None` means all features.
    pub feature: Option<usize>,
    /// Raw-predictor columns this subnet adds into.
    pub outputs: Vec<usize>,
    pub mlp: MlpParams,
    pub dropout_after: Option<usize>,
}

/// Trained on the residuals of a converged base model.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionModel {
    pub net: NamlssModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamlssModel {
    pub head: Head,
    pub arch: Architecture,
    pub n_features: usize,
    pub subnets: Vec<Subnet>,
    pub intercepts: Vec<f64>,
    pub trainable_intercepts: bool,
    pub feature_names: Vec<String>,
    pub preprocess: Option<PreprocessSpec>,
    pub interaction: Option<Box<InteractionModel>>,
}

/// Gradient of the batch loss with respect to every model parameter.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub subnets: Vec<GradientBundle>,
    pub intercepts: Vec<f64>,
}

impl ModelGrad {
    pub fn squared_norm(&self) -> f64 {
        self.subnets.iter().map(GradientBundle::squared_norm).sum::<f64>()
            + self.intercepts.iter().map(|g| g * g).sum::<f64>()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.subnets {
            g.scale(factor);
        }
        for g in &mut self.intercepts {
            *g *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.subnets.iter().all(GradientBundle::is_finite) && self.intercepts.iter().all(|g| g.is_finite())
    }

    /// Flattened in [`NamlssModel::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.subnets.iter().flat_map(GradientBundle::to_flat).collect();
        out.extend(&self.intercepts);
        out
    }
}

/// Randomness applied during one training step.
#[derive(Debug, Clone, Default)]
pub struct StepNoise {
    /// Per-subnet dropout masks.
    pub dropout: Vec<Option<DropoutMasks>>,
    /// Per-feature multiplier: `0` when the feature is dropped, `1/(1-rate)`
    /// otherwise.
    pub feature_scale: Option<Vec<f64>>,
}

/// Everything a backward pass needs from the forward pass.
pub struct TrainForward {
    pub raw: Array2<f64>,
    caches: Vec<ForwardCache>,
    feature_scale: Option<Vec<f64>>,
}

impl NamlssModel {
    /// Model with `K×J` (per-parameter) or `J` (shared) subnets.
    pub fn build(family: Family, arch: Architecture, n_features: usize, hidden: &[usize], seed: u64) -> Result<NamlssModel> {
        ModelBuilder::new(family, arch, n_features, SubnetSpec::new(hidden.to_vec()))
            .seed(seed)
            .build()
    }

    pub fn family(&self) -> &Family {
        self.head.family()
    }

    /// Width of the raw predictor.
    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn num_params(&self) -> usize {
        self.subnets.iter().map(|s| s.mlp.num_params()).sum::<usize>()
            + if self.trainable_intercepts { self.intercepts.len() } else { 0 }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.subnets.iter().flat_map(|s| s.mlp.to_flat()).collect();
        if self.trainable_intercepts {
            out.extend(&self.intercepts);
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
        let mut offset = 0;
        for s in &mut self.subnets {
            let n = s.mlp.num_params();
            s.mlp.set_flat(&values[offset..offset + n])?;
            offset += n;
        }
        if self.trainable_intercepts {
            self.intercepts.copy_from_slice(&values[offset..]);
        }
        Ok(())
    }

    fn check_features(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension(format!(
                "data has {} feature columns, model expects {}",
                x.ncols(),
                self.n_features
            )));
        }
        Ok(())
    }

    fn subnet_input<'a>(subnet: &Subnet, x: &ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        match subnet.feature {
            Some(j) => x.slice_move(s![.., j..j + 1]),
            None => *x,
        }
    }

    fn subnet_outputs(&self, x: &ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.subnets
            .par_iter()
            .map(|s| s.mlp.predict(Self::subnet_input(s, x)))
            .collect()
    }

    /// `η = Σ_j f_j(x_j) + β`, summed left to right over subnets.
    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_features(&x)?;
        let outs = self.subnet_outputs(&x)?;
        let mut raw = Array2::zeros((x.nrows(), self.outputs()));
        for (s, out) in self.subnets.iter().zip(&outs) {
            for (c, &k) in s.outputs.iter().enumerate() {
                let mut col = raw.column_mut(k);
                col += &out.column(c);
            }
        }
        for (k, b) in self.intercepts.iter().enumerate() {
            raw.column_mut(k).mapv_inplace(|v| v + b);
        }
        Ok(raw)
    }

    /// Activated distribution parameters.
    pub fn predict_params(&self, x: ArrayView2<f64>) -> Result<ParamVector> {
        match self.head {
            Head::Distribution { family } => family.activate(self.predict_raw(x)?.view()),
            Head::Mean { .. } => Err(Error::Contract(
                "a mean-only model does not predict distribution parameters".into(),
            )),
        }
    }

    /// Mean of the base model, without interactions.
    pub fn predict_base_mean(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self.head {
            Head::Distribution { family } => family.mean(&self.predict_params(x)?),
            Head::Mean { activation, .. } => Ok(self.predict_raw(x)?.column(0).mapv(|v| activation.apply(v))),
        }
    }

    /// Mean prediction, including the interaction model when one is attached.
    pub fn predict_mean(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let base = self.predict_base_mean(x.view())?;
        match &self.interaction {
            Some(inter) => Ok(base + inter.net.predict_base_mean(x)?),
            None => Ok(base),
        }
    }

    /// `contribution[i, j, k] = f_j^(k)(x_ij)`.
    pub fn feature_contributions(&self, x: ArrayView2<f64>) -> Result<Array3<f64>> {
        if !self.arch.is_additive() {
            return Err(Error::Contract("a dense network has no per-feature decomposition".into()));
        }
        self.check_features(&x)?;
        let outs = self.subnet_outputs(&x)?;
        let mut out = Array3::zeros((x.nrows(), self.n_features, self.outputs()));
        for (s, o) in self.subnets.iter().zip(&outs) {
            let j = s.feature.expect("additive subnets have a feature");
            for (c, &k) in s.outputs.iter().enumerate() {
                let mut dst = out.slice_mut(s![.., j, k]);
                dst += &o.column(c);
            }
        }
        Ok(out)
    }

    /// Draws dropout masks and a feature-dropout mask for one batch.
    pub fn sample_noise<R: Rng + ?Sized>(
        &self,
        batch: usize,
        dropout: f64,
        feature_dropout: f64,
        rng: &mut R,
    ) -> StepNoise {
        let masks = self
            .subnets
            .iter()
            .map(|s| {
                s.dropout_after
                    .filter(|_| dropout > 0.0)
                    .map(|l| DropoutMasks::sample(&s.mlp, batch, dropout, &[l], rng))
            })
            .collect();
        let feature_scale = (feature_dropout > 0.0 && self.arch.is_additive()).then(|| {
            let keep = crate::train::feature_dropout_mask(self.n_features, feature_dropout, rng);
            let scale = 1.0 / (1.0 - feature_dropout);
            keep.into_iter().map(|k| if k { scale } else { 0.0 }).collect()
        });
        StepNoise {
            dropout: masks,
            feature_scale,
        }
    }

    /// Forward pass retaining caches.
    pub fn forward_train(&self, x: ArrayView2<f64>, noise: &StepNoise) -> Result<TrainForward> {
        self.check_features(&x)?;
        let results: Vec<(Array2<f64>, ForwardCache)> = self
            .subnets
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let masks = noise.dropout.get(i).and_then(|m| m.as_ref());
                s.mlp.forward(Self::subnet_input(s, &x), masks)
            })
            .collect::<Result<_>>()?;
        let mut raw = Array2::zeros((x.nrows(), self.outputs()));
        let mut caches = Vec::with_capacity(results.len());
        for (s, (out, cache)) in self.subnets.iter().zip(results) {
            let factor = match (&noise.feature_scale, s.feature) {
                (Some(fs), Some(j)) => fs[j],
                _ => 1.0,
            };
            for (c, &k) in s.outputs.iter().enumerate() {
                let mut col = raw.column_mut(k);
                if factor == 1.0 {
                    col += &out.column(c);
                } else {
                    col.scaled_add(factor, &out.column(c));
                }
            }
            caches.push(cache);
        }
        for (k, b) in self.intercepts.iter().enumerate() {
            raw.column_mut(k).mapv_inplace(|v| v + b);
        }
        Ok(TrainForward {
            raw,
            caches,
            feature_scale: noise.feature_scale.clone(),
        })
    }

    /// Batch-mean loss and `∂loss/∂η`.
    pub fn loss_and_raw_grad(&self, raw: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Array2<f64>)> {
        let n = y.len() as f64;
        match self.head {
            Head::Distribution { family } => {
                let params = family.activate(raw)?;
                let loss = family.nll(&params, y)?;
                let mut g = family.nll_grad(&params, y)?;
                g *= &family.activation_derivatives(raw);
                g /= n;
                Ok((loss, g))
            }
            Head::Mean { activation, loss, .. } => {
                let eta = raw.column(0);
                let mut g = Array2::zeros((y.len(), 1));
                let mut total = 0.0;
                match loss {
                    MeanLoss::SquaredError => {
                        for i in 0..y.len() {
                            let pred = activation.apply(eta[i]);
                            let r = pred - y[i];
                            total += r * r;
                            g[[i, 0]] = 2.0 * r * activation.derivative(eta[i]) / n;
                        }
                    }
                    MeanLoss::CrossEntropy => {
                        if activation != ActivationKind::Sigmoid {
                            return Err(Error::Contract("cross-entropy needs a sigmoid output".into()));
                        }
                        for i in 0..y.len() {
                            total += softplus_exact(eta[i]) - y[i] * eta[i];
                            g[[i, 0]] = (sigmoid(eta[i]) - y[i]) / n;
                        }
                    }
                }
                Ok((total / n, g))
            }
        }
    }

    /// Backpropagates `∂loss/∂η` through every subnet.
    pub fn backward(&self, fwd: &TrainForward, raw_grad: ArrayView2<f64>) -> Result<ModelGrad> {
        let subnets = self
            .subnets
            .par_iter()
            .zip(fwd.caches.par_iter())
            .map(|(s, cache)| {
                let mut up = raw_grad.select(Axis(1), &s.outputs);
                if let (Some(fs), Some(j)) = (&fwd.feature_scale, s.feature) {
                    up *= fs[j];
                }
                s.mlp.backward(cache, up.view())
            })
            .collect::<Result<Vec<_>>>()?;
        let intercepts = if self.trainable_intercepts {
            raw_grad.sum_axis(Axis(0)).to_vec()
        } else {
            Vec::new()
        };
        Ok(ModelGrad { subnets, intercepts })
    }

    /// Deterministic batch loss and gradient (no dropout).
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, ModelGrad)> {
        let fwd = self.forward_train(x, &StepNoise::default())?;
        let (loss, g) = self.loss_and_raw_grad(fwd.raw.view(), y)?;
        Ok((loss, self.backward(&fwd, g.view())?))
    }

    /// Mean training objective on `(x, y)` without dropout.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let raw = self.predict_raw(x)?;
        Ok(self.loss_and_raw_grad(raw.view(), y)?.0)
    }

    /// Visits parameter slices alongside their gradients in flat order.
    pub fn for_each_param_mut(&mut self, grad: &ModelGrad, mut f: impl FnMut(&mut [f64], &[f64])) {
        for (s, g) in self.subnets.iter_mut().zip(&grad.subnets) {
            for (p, gs) in s.mlp.slices_mut().zip(g.slices()) {
                f(p, gs);
            }
        }
        if self.trainable_intercepts {
            f(&mut self.intercepts, &grad.intercepts);
        }
    }

    /// Per-feature shape functions evaluated over each feature's observed
    /// range in `train_x`, centered by their mean over `train_x`.
    pub fn shape_functions(&self, train_x: ArrayView2<f64>, grid_size: usize) -> Result<ShapeFunctionTable> {
        if grid_size < 2 {
            return Err(Error::Config(format!("grid size must be at least 2, got {grid_size}")));
        }
        if train_x.nrows() == 0 {
            return Err(Error::Domain("shape functions need training data".into()));
        }
        let contributions = self.feature_contributions(train_x)?;
        let offsets = contributions.mean_axis(Axis(0)).expect("non-empty");
        let k = self.outputs();
        let mut curves = Vec::with_capacity(self.n_features);
        for j in 0..self.n_features {
            let col = train_x.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let grid: Vec<f64> = (0..grid_size)
                .map(|g| {
                    if g == grid_size - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * g as f64 / (grid_size - 1) as f64
                    }
                })
                .collect();
            let mut probe = Array2::zeros((grid_size, self.n_features));
            probe.column_mut(j).assign(&ArrayView1::from(&grid[..]));
            let c = self.feature_contributions(probe.view())?;
            let mut values = Array2::zeros((grid_size, k));
            for g in 0..grid_size {
                for p in 0..k {
                    values[[g, p]] = c[[g, j, p]] - offsets[[j, p]];
                }
            }
            let original: Vec<f64> = match &self.preprocess {
                Some(spec) => grid.iter().map(|&v| spec.invert_feature(j, v)).collect::<Result<_>>()?,
                None => grid,
            };
            curves.push(ShapeCurve {
                feature: self.feature_names[j].clone(),
                grid: original,
                values,
                offsets: (0..k).map(|p| offsets[[j, p]]).collect(),
            });
        }
        Ok(ShapeFunctionTable {
            param_names: self.param_names(),
            curves,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        match self.head {
            Head::Distribution { family } => family.param_names().iter().map(|s| s.to_string()).collect(),
            Head::Mean { .. } => vec!["mean".into()],
        }
    }

    /// Fits a fully connected network on the residuals `y - mean(θ̂)` of this
    /// model and attaches it.
    pub fn fit_interactions(
        &mut self,
        data: &Dataset,
        hidden: &SubnetSpec,
        config: &TrainConfig,
    ) -> Result<TrainHistory> {
        let family = match self.head {
            Head::Distribution { family } if family.has_mean() => family,
            _ => {
                return Err(Error::Contract(
                    "interactions need a distributional head with a defined mean".into(),
                ))
            }
        };
        let base = self.predict_base_mean(data.x.view())?;
        let residuals = &data.y - &base;
        let resid_data = Dataset {
            y: residuals,
            ..data.clone()
        };
        let net = ModelBuilder::new(family, Architecture::Dense, self.n_features, hidden.clone())
            .seed(config.seed)
            .trainable_intercepts(true)
            .build()?;
        let (net, history) = train(net, &resid_data, config)?;
        self.interaction = Some(Box::new(InteractionModel { net }));
        Ok(history)
    }

    /// Serialises to the versioned JSON model document.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from_model(self))?)
    }

    pub fn from_json(text: &str) -> Result<NamlssModel> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::Parse(format!("not a {MODEL_FORMAT} document")));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("model document has no version".into()))?;
        if version != MODEL_VERSION as u64 {
            return Err(Error::Version {
                found: version as u32,
                expected: MODEL_VERSION,
            });
        }
        let doc: ModelDocument = serde_json::from_value(value)?;
        doc.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NamlssModel> {
        NamlssModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn softplus_exact(x: f64) -> f64 {
    // unfloored, so cross-entropy is exact near zero loss
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One feature's curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCurve {
    pub feature: String,
    /// Grid in original (pre-scaling) units.
    pub grid: Vec<f64>,
    /// `grid × K` centered contributions on the raw additive scale.
    pub values: Array2<f64>,
    /// Constant removed from each curve.
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFunctionTable {
    pub param_names: Vec<String>,
    pub curves: Vec<ShapeCurve>,
}

impl ShapeFunctionTable {
    pub const HEADER: [&'static str; 5] = ["feature", "grid_value", "param_index", "contribution", "offset"];

    /// CSV with one row per (feature, grid point, parameter). Contributions
    /// are centered and on the raw (pre-activation) scale.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::HEADER)?;
        for c in &self.curves {
            for (g, &gv) in c.grid.iter().enumerate() {
                for k in 0..c.values.ncols() {
                    wtr.write_record([
                        c.feature.clone(),
                        fmt_f64(gv),
                        k.to_string(),
                        fmt_f64(c.values[[g, k]]),
                        fmt_f64(c.offsets[k]),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ShapeFunctionTable::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R, param_names: Vec<String>) -> Result<ShapeFunctionTable> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != Self::HEADER {
            return Err(Error::Parse(format!("unexpected shape table header {header:?}")));
        }
        let k = param_names.len();
        let mut curves: Vec<ShapeCurve> = Vec::new();
        let mut rows: Vec<(String, f64, usize, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number '{}': {e}", &rec[i])))
            };
            let p: usize = rec[2].parse().map_err(|_| Error::Parse(format!("bad index '{}'", &rec[2])))?;
            if p >= k {
                return Err(Error::Parse(format!("parameter index {p} out of range")));
            }
            rows.push((rec[0].to_string(), num(1)?, p, num(3)?, num(4)?));
        }
        for chunk in rows.chunks(k) {
            let name = &chunk[0].0;
            if curves.last().is_none_or(|c| &c.feature != name) {
                curves.push(ShapeCurve {
                    feature: name.clone(),
                    grid: Vec::new(),
                    values: Array2::zeros((0, k)),
                    offsets: chunk.iter().map(|r| r.4).collect(),
                });
            }
            let curve = curves.last_mut().expect("pushed");
            curve.grid.push(chunk[0].1);
            let row: Vec<f64> = chunk.iter().map(|r| r.3).collect();
            curve
                .values
                .push_row(ArrayView1::from(&row[..]))
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(ShapeFunctionTable { param_names, curves })
    }
}

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubnetDoc {
    feature: Option<usize>,
    outputs: Vec<usize>,
    dropout_after: Option<usize>,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    head: Head,
    arch: Architecture,
    n_features: usize,
    feature_names: Vec<String>,
    intercepts: Vec<f64>,
    trainable_intercepts: bool,
    preprocess: Option<PreprocessSpec>,
    subnets: Vec<SubnetDoc>,
    interaction: Option<Box<ModelDocument>>,
}

impl ModelDocument {
    fn from_model(m: &NamlssModel) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            head: m.head,
            arch: m.arch,
            n_features: m.n_features,
            feature_names: m.feature_names.clone(),
            intercepts: m.intercepts.clone(),
            trainable_intercepts: m.trainable_intercepts,
            preprocess: m.preprocess.clone(),
            subnets: m
                .subnets
                .iter()
                .map(|s| SubnetDoc {
                    feature: s.feature,
                    outputs: s.outputs.clone(),
                    dropout_after: s.dropout_after,
                    layers: s
                        .mlp
                        .layers()
                        .iter()
                        .map(|l| LayerDoc {
                            activation: l.activation,
                            weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                            bias: l.bias.to_vec(),
                        })
                        .collect(),
                })
                .collect(),
            interaction: m
                .interaction
                .as_ref()
                .map(|i| Box::new(ModelDocument::from_model(&i.net))),
        }
    }

    fn into_model(self) -> Result<NamlssModel> {
        let k = self.head.outputs();
        if self.intercepts.len() != k {
            return Err(Error::Parse(format!("expected {k} intercepts, found {}", self.intercepts.len())));
        }
        if self.feature_names.len() != self.n_features {
            return Err(Error::Parse("feature name count does not match n_features".into()));
        }
        let mut subnets = Vec::with_capacity(self.subnets.len());
        for (i, s) in self.subnets.into_iter().enumerate() {
            let mut layers = Vec::with_capacity(s.layers.len());
            for l in s.layers {
                let rows = l.weights.len();
                let cols = l.weights.first().map_or(0, Vec::len);
                if l.weights.iter().any(|r| r.len() != cols) {
                    return Err(Error::Parse(format!("subnet {i} has a ragged weight matrix")));
                }
                let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
                let weights = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Parse(e.to_string()))?;
                layers.push(Dense {
                    weights,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                });
            }
            let mlp = MlpParams::from_layers(layers).map_err(|e| Error::Parse(format!("subnet {i}: {e}")))?;
            if s.outputs.iter().any(|&o| o >= k) || mlp.output_width() != s.outputs.len() {
                return Err(Error::Parse(format!("subnet {i} outputs do not match the head")));
            }
            let expected_in = if s.feature.is_some() { 1 } else { self.n_features };
            if mlp.input_width() != expected_in || s.feature.is_some_and(|j| j >= self.n_features) {
                return Err(Error::Parse(format!("subnet {i} input does not match its feature")));
            }
            subnets.push(Subnet {
                feature: s.feature,
                outputs: s.outputs,
                mlp,
                dropout_after: s.dropout_after,
            });
        }
        let interaction = match self.interaction {
            Some(doc) => Some(Box::new(InteractionModel { net: doc.into_model()? })),
            None => None,
        };
        Ok(NamlssModel {
            head: self.head,
            arch: self.arch,
            n_features: self.n_features,
            subnets,
            intercepts: self.intercepts,
            trainable_intercepts: self.trainable_intercepts,
            feature_names: self.feature_names,
            preprocess: self.preprocess,
            interaction,
        })
    }
}
