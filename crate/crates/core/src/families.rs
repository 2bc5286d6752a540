//! Response distributions.
//!
//! Each [`Family`] knows its parameter count, the output activation that
//! maps an unconstrained additive predictor onto a valid parameter, its
//! per-observation negative log-likelihood and the analytic gradient of
//! that NLL with respect to the (post-activation) parameters.
//!
//! By default the likelihoods use the benchmark forms:
//! the Logistic family is the Bernoulli cross-entropy of the logistic CDF at
//! `(y - μ)/s`, the Inverse Gaussian omits its additive constants and
//! Johnson's S_U uses the symmetric two-term form. Setting
//! [`Family::canonical`] switches the Logistic, Inverse Gaussian and
//! Johnson's S_U families to their textbook densities.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, log_binomial_coefficient, log_gamma_unchecked, sigmoid, softplus};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Floor applied to the Inverse Gamma shape after activation so that the
/// mean `β/(α-1)` always exists.
pub const ALPHA_FLOOR: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyId {
    Normal,
    Logistic,
    Binomial,
    Poisson,
    InverseGaussian,
    Weibull,
    JohnsonsSu,
    InverseGamma,
}

impl FamilyId {
    pub const ALL: [FamilyId; 8] = [
        FamilyId::Normal,
        FamilyId::Logistic,
        FamilyId::Binomial,
        FamilyId::Poisson,
        FamilyId::InverseGaussian,
        FamilyId::Weibull,
        FamilyId::JohnsonsSu,
        FamilyId::InverseGamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyId::Normal => "normal",
            FamilyId::Logistic => "logistic",
            FamilyId::Binomial => "binomial",
            FamilyId::Poisson => "poisson",
            FamilyId::InverseGaussian => "inverse-gaussian",
            FamilyId::Weibull => "weibull",
            FamilyId::JohnsonsSu => "johnsons-su",
            FamilyId::InverseGamma => "inverse-gamma",
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = FamilyId::ALL.iter().map(|f| f.as_str()).collect();
                Error::Config(format!("unknown family '{s}'; valid ids: {}", valid.join(", ")))
            })
    }
}

/// Output activation `h^(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Linear,
    Softplus,
    Sigmoid,
    /// Softplus when it exceeds one, its reciprocal otherwise. Never below 1.
    InverseGammaAlpha,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Linear => x,
            ActivationKind::Softplus => softplus(x),
            ActivationKind::Sigmoid => sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
            ActivationKind::InverseGammaAlpha => {
                let sp = softplus(x);
                if sp > 1.0 {
                    sp
                } else {
                    1.0 / sp
                }
            }
        }
    }

    /// `dh/dx`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Linear => 1.0,
            ActivationKind::Softplus => sigmoid(x),
            ActivationKind::Sigmoid => {
                let p = sigmoid(x);
                p * (1.0 - p)
            }
            ActivationKind::InverseGammaAlpha => {
                let sp = softplus(x);
                if sp > 1.0 {
                    sigmoid(x)
                } else {
                    -sigmoid(x) / (sp * sp)
                }
            }
        }
    }
}

/// Post-activation distribution parameters, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Array2<f64>);

impl ParamVector {
    /// Wraps raw parameter values after checking them against the family.
    pub fn new(family: &Family, values: Array2<f64>) -> Result<ParamVector> {
        if values.ncols() != family.k() {
            return Err(Error::Dimension(format!(
                "{} expects {} parameters per row, got {}",
                family.id,
                family.k(),
                values.ncols()
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            if !family.params_valid(row.as_slice().unwrap_or(&row.to_vec())) {
                return Err(Error::Domain(format!(
                    "row {i}: parameters {:?} are invalid for {}",
                    row.to_vec(),
                    family.id
                )));
            }
        }
        Ok(ParamVector(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn column(&self, k: usize) -> ArrayView1<'_, f64> {
        self.0.column(k)
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Selects a subset of rows.
    pub fn select(&self, rows: &[usize]) -> ParamVector {
        ParamVector(self.0.select(Axis(0), rows))
    }
}

/// A response distribution together with its fixed settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub id: FamilyId,
    /// Number of trials for the Binomial family; ignored otherwise.
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Use the textbook density instead of the default likelihood.
    #[serde(default)]
    pub canonical: bool,
}

fn default_trials() -> u32 {
    1
}

impl Family {
    pub fn new(id: FamilyId) -> Family {
        Family {
            id,
            trials: 1,
            canonical: false,
        }
    }

    pub fn with_trials(mut self, trials: u32) -> Family {
        self.trials = trials;
        self
    }

    pub fn canonical(mut self, canonical: bool) -> Family {
        self.canonical = canonical;
        self
    }

    /// Number of distributional parameters `K`.
    pub fn k(&self) -> usize {
        match self.id {
            FamilyId::Binomial | FamilyId::Poisson => 1,
            FamilyId::JohnsonsSu => 4,
            _ => 2,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.id {
            FamilyId::Normal => &["mu", "sigma2"],
            FamilyId::Logistic => &["mu", "s"],
            FamilyId::Binomial => &["p"],
            FamilyId::Poisson => &["rate"],
            FamilyId::InverseGaussian => &["mu", "sigma"],
            FamilyId::Weibull => &["lambda", "shape"],
            FamilyId::JohnsonsSu => &["mu", "sigma", "omega", "skew"],
            FamilyId::InverseGamma => &["alpha", "beta"],
        }
    }

    pub fn activations(&self) -> Vec<ActivationKind> {
        use ActivationKind::*;
        match self.id {
            FamilyId::Normal => vec![Linear, Softplus],
            FamilyId::Logistic if self.canonical => vec![Linear, Softplus],
            FamilyId::Logistic => vec![Sigmoid, Softplus],
            FamilyId::Binomial => vec![Sigmoid],
            FamilyId::Poisson => vec![Softplus],
            FamilyId::InverseGaussian => vec![Softplus, Softplus],
            FamilyId::Weibull => vec![Softplus, Softplus],
            // the default form takes log(skew), so the skew must stay positive there
            FamilyId::JohnsonsSu if self.canonical => vec![Linear, Softplus, Softplus, Linear],
            FamilyId::JohnsonsSu => vec![Linear, Softplus, Softplus, Softplus],
            FamilyId::InverseGamma => vec![InverseGammaAlpha, Softplus],
        }
    }

    /// Whether `y` lies in the response domain.
    pub fn in_support(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.id {
            FamilyId::Normal | FamilyId::JohnsonsSu => true,
            FamilyId::Logistic if self.canonical => true,
            FamilyId::Logistic => (0.0..=1.0).contains(&y),
            FamilyId::Binomial => y >= 0.0 && y <= self.trials as f64 && y.fract() == 0.0,
            FamilyId::Poisson => y >= 0.0 && y.fract() == 0.0,
            FamilyId::InverseGaussian | FamilyId::Weibull | FamilyId::InverseGamma => y > 0.0,
        }
    }

    /// Whether one parameter row lies in the domain of the likelihood.
    pub fn params_valid(&self, theta: &[f64]) -> bool {
        if theta.len() != self.k() || !theta.iter().all(|v| v.is_finite()) {
            return false;
        }
        match self.id {
            FamilyId::Normal | FamilyId::Logistic => theta[1] > 0.0,
            FamilyId::Binomial => theta[0] > 0.0 && theta[0] < 1.0,
            FamilyId::Poisson => theta[0] > 0.0,
            FamilyId::InverseGaussian | FamilyId::Weibull | FamilyId::InverseGamma => {
                theta[0] > 0.0 && theta[1] > 0.0
            }
            FamilyId::JohnsonsSu => {
                theta[1] > 0.0 && theta[2] > 0.0 && (self.canonical || theta[3] > 0.0)
            }
        }
    }

    /// The stronger predicate satisfied by every activated parameter row:
    /// likelihood validity plus `α >= 1` for the Inverse Gamma shape.
    pub fn activation_constraint(&self, theta: &[f64]) -> bool {
        self.params_valid(theta) && (self.id != FamilyId::InverseGamma || theta[0] >= 1.0)
    }

    /// Applies the output activations column-wise to raw predictors `η`.
    pub fn activate(&self, raw: ArrayView2<f64>) -> Result<ParamVector> {
        if raw.ncols() != self.k() {
            return Err(Error::Dimension(format!(
                "{} expects {} raw columns, got {}",
                self.id,
                self.k(),
                raw.ncols()
            )));
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("raw predictor contains non-finite values".into()));
        }
        let acts = self.activations();
        let mut out = raw.to_owned();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            let act = acts[k];
            col.mapv_inplace(|x| act.apply(x));
            if act == ActivationKind::InverseGammaAlpha {
                col.mapv_inplace(|a| a.max(ALPHA_FLOOR));
            }
        }
        Ok(ParamVector(out))
    }

    /// `dθ/dη` for each entry of `raw`.
    pub fn activation_derivatives(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let acts = self.activations();
        let mut out = raw.to_owned();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            let act = acts[k];
            col.mapv_inplace(|x| act.derivative(x));
        }
        out
    }

    fn check_support(&self, y: ArrayView1<f64>) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !self.in_support(v) {
                return Err(Error::Domain(format!(
                    "observation {i} (y = {v}) is outside the support of {}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn check_shapes(&self, params: &ParamVector, y: ArrayView1<f64>) -> Result<()> {
        if params.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} parameter rows for {} observations",
                params.nrows(),
                y.len()
            )));
        }
        if params.0.ncols() != self.k() {
            return Err(Error::Dimension("parameter width does not match family".into()));
        }
        Ok(())
    }

    /// Negative log-likelihood of one observation.
    pub fn nll_obs(&self, theta: &[f64], y: f64) -> f64 {
        match self.id {
            FamilyId::Normal => {
                let (mu, var) = (theta[0], theta[1]);
                0.5 * (LN_2PI + var.ln()) + (y - mu).powi(2) / (2.0 * var)
            }
            FamilyId::Logistic => {
                let (mu, s) = (theta[0], theta[1]);
                let z = (y - mu) / s;
                if self.canonical {
                    z + s.ln() + 2.0 * softplus_raw(-z)
                } else {
                    // -[y log F(z) + (1-y) log(1-F(z))] with log F(z) = -softplus(-z)
                    y * softplus_raw(-z) + (1.0 - y) * softplus_raw(z)
                }
            }
            FamilyId::Binomial => {
                let p = theta[0];
                let n = self.trials as f64;
                -(y * p.ln() + (n - y) * (-p).ln_1p() + log_binomial_coefficient(n, y))
            }
            FamilyId::Poisson => {
                let rate = theta[0];
                rate - y * rate.ln() + log_gamma_unchecked(y + 1.0)
            }
            FamilyId::InverseGaussian => {
                let (mu, sigma) = (theta[0], theta[1]);
                let base = -0.5 * sigma.ln() + sigma * (y - mu).powi(2) / (2.0 * mu * mu * y);
                if self.canonical {
                    base + 0.5 * (LN_2PI + 3.0 * y.ln())
                } else {
                    base
                }
            }
            FamilyId::Weibull => {
                let (lambda, shape) = (theta[0], theta[1]);
                let ratio = y / lambda;
                -shape.ln() + shape * lambda.ln() + ratio.powf(shape) - (shape - 1.0) * y.ln()
            }
            FamilyId::JohnsonsSu => {
                let (mu, sigma, omega, skew) = (theta[0], theta[1], theta[2], theta[3]);
                if self.canonical {
                    let u = (y - mu) / sigma;
                    let z = skew + omega * u.asinh();
                    -omega.ln() + sigma.ln() + 0.5 * LN_2PI + 0.5 * u.mul_add(u, 1.0).ln() + 0.5 * z * z
                } else {
                    let r = ((y - mu) / sigma).powi(2);
                    let w2 = omega * omega;
                    -skew.ln() + omega.ln() + 0.5 * LN_2PI
                        + skew * skew / (2.0 * w2) * (r + (r / w2).ln_1p())
                }
            }
            FamilyId::InverseGamma => {
                let (alpha, beta) = (theta[0], theta[1]);
                (alpha + 1.0) * y.ln() + log_gamma_unchecked(alpha) - alpha * beta.ln() + beta / y
            }
        }
    }

    /// Gradient of [`Family::nll_obs`] with respect to each parameter.
    pub fn nll_grad_obs(&self, theta: &[f64], y: f64, out: &mut [f64]) {
        match self.id {
            FamilyId::Normal => {
                let (mu, var) = (theta[0], theta[1]);
                let d = y - mu;
                out[0] = -d / var;
                out[1] = 0.5 / var - d * d / (2.0 * var * var);
            }
            FamilyId::Logistic => {
                let (mu, s) = (theta[0], theta[1]);
                let z = (y - mu) / s;
                let p = sigmoid(z);
                let dz = if self.canonical { 2.0 * p - 1.0 } else { p - y };
                out[0] = -dz / s;
                out[1] = -dz * z / s + if self.canonical { 1.0 / s } else { 0.0 };
            }
            FamilyId::Binomial => {
                let p = theta[0];
                let n = self.trials as f64;
                out[0] = -y / p + (n - y) / (1.0 - p);
            }
            FamilyId::Poisson => {
                out[0] = 1.0 - y / theta[0];
            }
            FamilyId::InverseGaussian => {
                let (mu, sigma) = (theta[0], theta[1]);
                let d = y - mu;
                out[0] = -sigma * d / (mu * mu * mu);
                out[1] = -0.5 / sigma + d * d / (2.0 * mu * mu * y);
            }
            FamilyId::Weibull => {
                let (lambda, shape) = (theta[0], theta[1]);
                let log_ratio = (y / lambda).ln();
                let pow = (shape * log_ratio).exp();
                out[0] = shape / lambda * (1.0 - pow);
                out[1] = -1.0 / shape - log_ratio + pow * log_ratio;
            }
            FamilyId::JohnsonsSu => {
                let (mu, sigma, omega, skew) = (theta[0], theta[1], theta[2], theta[3]);
                if self.canonical {
                    let u = (y - mu) / sigma;
                    let root = u.mul_add(u, 1.0);
                    let s = u.asinh();
                    let z = skew + omega * s;
                    let d_u = u / root + z * omega / root.sqrt();
                    out[0] = -d_u / sigma;
                    out[1] = 1.0 / sigma - d_u * u / sigma;
                    out[2] = -1.0 / omega + z * s;
                    out[3] = z;
                } else {
                    let d = y - mu;
                    let s2 = sigma * sigma;
                    let r = d * d / s2;
                    let w2 = omega * omega;
                    let q = 1.0 + r / w2;
                    let c = skew * skew / (2.0 * w2);
                    let bracket = r + q.ln();
                    let d_r = c * (1.0 + 1.0 / (w2 * q));
                    out[0] = d_r * (-2.0 * d / s2);
                    out[1] = d_r * (-2.0 * r / sigma);
                    out[2] = 1.0 / omega - 2.0 * c / omega * bracket + c * (-2.0 * r / (w2 * omega)) / q;
                    out[3] = -1.0 / skew + skew / w2 * bracket;
                }
            }
            FamilyId::InverseGamma => {
                let (alpha, beta) = (theta[0], theta[1]);
                out[0] = y.ln() + digamma(alpha) - beta.ln();
                out[1] = -alpha / beta + 1.0 / y;
            }
        }
    }

    /// Mean negative log-likelihood over all observations.
    pub fn nll(&self, params: &ParamVector, y: ArrayView1<f64>) -> Result<f64> {
        Ok(self.nll_per_obs(params, y)?.mean().unwrap_or(f64::NAN))
    }

    /// Per-observation negative log-likelihoods.
    pub fn nll_per_obs(&self, params: &ParamVector, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_shapes(params, y)?;
        self.check_support(y)?;
        if y.is_empty() {
            return Err(Error::Domain("no observations".into()));
        }
        let mut out = Array1::zeros(y.len());
        for (i, (row, &yi)) in params.0.rows().into_iter().zip(y.iter()).enumerate() {
            let theta = row.to_vec();
            out[i] = self.nll_obs(&theta, yi);
        }
        Ok(out)
    }

    /// Per-observation gradient `∂NLL_i/∂θ_ik` (not divided by `n`). The chain
    /// rule through the output activation is left to the caller.
    pub fn nll_grad(&self, params: &ParamVector, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_shapes(params, y)?;
        self.check_support(y)?;
        let mut out = Array2::zeros((y.len(), self.k()));
        let mut buf = vec![0.0; self.k()];
        for ((row, &yi), mut g) in params.0.rows().into_iter().zip(y.iter()).zip(out.rows_mut()) {
            let theta = row.to_vec();
            self.nll_grad_obs(&theta, yi, &mut buf);
            g.assign(&ArrayView1::from(&buf[..]));
        }
        Ok(out)
    }

    /// Whether the distribution mean has a closed form. The two-term
    /// Johnson's S_U likelihood has none; [`Family::mean`] reports its
    /// location instead.
    pub fn has_mean(&self) -> bool {
        !(self.id == FamilyId::JohnsonsSu && !self.canonical)
    }

    /// Distribution mean of one parameter row.
    pub fn mean_obs(&self, theta: &[f64]) -> Result<f64> {
        Ok(match self.id {
            FamilyId::Normal | FamilyId::Logistic | FamilyId::InverseGaussian => theta[0],
            FamilyId::Binomial => self.trials as f64 * theta[0],
            FamilyId::Poisson => theta[0],
            FamilyId::Weibull => theta[0] * log_gamma_unchecked(1.0 + 1.0 / theta[1]).exp(),
            FamilyId::JohnsonsSu => {
                if self.canonical {
                    let (mu, sigma, omega, skew) = (theta[0], theta[1], theta[2], theta[3]);
                    mu - sigma * (0.5 / (omega * omega)).exp() * (skew / omega).sinh()
                } else {
                    // no closed form under the two-term likelihood; report location
                    theta[0]
                }
            }
            FamilyId::InverseGamma => {
                let (alpha, beta) = (theta[0], theta[1]);
                if alpha < ALPHA_FLOOR {
                    return Err(Error::Domain(format!(
                        "inverse gamma mean undefined for alpha = {alpha} (needs alpha > 1)"
                    )));
                }
                beta / (alpha - 1.0)
            }
        })
    }

    pub fn mean(&self, params: &ParamVector) -> Result<Array1<f64>> {
        params
            .0
            .rows()
            .into_iter()
            .map(|r| self.mean_obs(&r.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map(Array1::from)
    }

    /// Fills in the non-mean parameters for a mean-only predictor so its
    /// log-likelihood can be compared with distributional models.
    ///
    /// Normal and Logistic take the sample standard deviation of `y` as their
    /// scale (squared for the Normal variance). Inverse Gamma uses
    /// `α = μ²/(σ²+2)` and `β = μ·μ²/(σ²+1)` with `σ²` the sample variance of
    /// the mean predictions.
    pub fn approx_params_from_mean(
        &self,
        mean_preds: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Result<ParamVector> {
        let n = mean_preds.len();
        if n == 0 {
            return Err(Error::Domain("no mean predictions".into()));
        }
        let mut out = Array2::zeros((n, 2));
        match self.id {
            FamilyId::Normal | FamilyId::Logistic => {
                let sd = sample_variance(y).sqrt();
                let scale = if self.id == FamilyId::Normal { sd * sd } else { sd };
                for i in 0..n {
                    out[[i, 0]] = mean_preds[i];
                    out[[i, 1]] = scale;
                }
            }
            FamilyId::InverseGamma => {
                let var = sample_variance(mean_preds);
                for i in 0..n {
                    let (alpha, beta) = inverse_gamma_from_moments(mean_preds[i], var);
                    out[[i, 0]] = alpha;
                    out[[i, 1]] = beta;
                }
            }
            other => {
                return Err(Error::Contract(format!(
                    "mean-only parameter approximation is not defined for {other}"
                )))
            }
        }
        ParamVector::new(self, out)
    }
}

/// `(α, β)` from a mean and the variance of the mean predictions.
pub fn inverse_gamma_from_moments(mean: f64, variance: f64) -> (f64, f64) {
    let m2 = mean * mean;
    (m2 / (variance + 2.0), mean * m2 / (variance + 1.0))
}

/// Unbiased sample variance; zero for fewer than two values.
pub(crate) fn sample_variance(v: ArrayView1<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.sum() / n as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

#[inline]
fn softplus_raw(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
