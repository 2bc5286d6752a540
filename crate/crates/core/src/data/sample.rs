//! Response samplers for every family.

use ndarray::Array1;
use rand::Rng;

use crate::error::{Error, Result};
use crate::families::{Family, FamilyId, ParamVector};

/// Standard normal draw by Box–Muller (one of the pair is discarded).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 1] keeps the log finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Gamma(shape, 1) by Marsaglia–Tsang, boosted for `shape < 1`.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u = open_unit(rng);
        return gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Poisson by sequential inversion of the CDF. Large rates are split into
/// a sum of independent smaller ones so `exp(-rate)` never underflows.
pub fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    const CHUNK: f64 = 500.0;
    if rate > CHUNK {
        let parts = (rate / CHUNK).ceil();
        return (0..parts as usize).map(|_| poisson(rate / parts, rng)).sum();
    }
    let u: f64 = rng.gen();
    let mut k = 0.0;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1.0;
        p *= rate / k;
        cdf += p;
        if p == 0.0 && cdf < u {
            // rounding left the tail short of u
            break;
        }
    }
    k
}

/// Inverse Gaussian by Michael–Schucany–Haas.
pub fn inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let nu = standard_normal(rng);
    let y = nu * nu;
    let mu = mean;
    let x = mu + mu * mu * y / (2.0 * shape) - mu / (2.0 * shape) * (4.0 * mu * shape * y + mu * mu * y * y).sqrt();
    let u: f64 = rng.gen();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}

/// One draw from `family` at parameter row `theta`.
pub fn sample_one<R: Rng + ?Sized>(family: &Family, theta: &[f64], rng: &mut R) -> f64 {
    match family.id {
        FamilyId::Normal => theta[0] + theta[1].sqrt() * standard_normal(rng),
        FamilyId::Logistic => {
            let u = open_unit(rng);
            theta[0] + theta[1] * (u / (1.0 - u)).ln()
        }
        FamilyId::Binomial => (0..family.trials).filter(|_| rng.gen::<f64>() < theta[0]).count() as f64,
        FamilyId::Poisson => poisson(theta[0], rng),
        FamilyId::InverseGaussian => inverse_gaussian(theta[0], theta[1], rng),
        FamilyId::Weibull => {
            let u = open_unit(rng);
            theta[0] * (-u.ln()).powf(1.0 / theta[1])
        }
        FamilyId::JohnsonsSu => {
            // z = skew + omega * asinh((y - mu) / sigma) is standard normal
            let z = standard_normal(rng);
            theta[0] + theta[1] * ((z - theta[3]) / theta[2]).sinh()
        }
        FamilyId::InverseGamma => theta[1] / gamma(theta[0], rng),
    }
}

/// One draw per row of `params`.
pub fn sample<R: Rng + ?Sized>(family: &Family, params: &ParamVector, rng: &mut R) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(params.nrows());
    for (i, row) in params.view().rows().into_iter().enumerate() {
        let theta = row.to_vec();
        if !family.params_valid(&theta) {
            return Err(Error::Domain(format!("row {i}: invalid parameters {theta:?}")));
        }
        out[i] = sample_one(family, &theta, rng);
    }
    Ok(out)
}
