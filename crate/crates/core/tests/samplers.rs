//! Kolmogorov–Smirnov checks of every sampler against an independent CDF.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, InverseGamma, Normal, Poisson, Weibull};

use namlss::data::sample_one;
use namlss::families::{Family, FamilyId};

const DRAWS: usize = 100_000;
const KS_LIMIT: f64 = 0.01;

fn draws(family: &Family, theta: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..DRAWS).map(|_| sample_one(family, theta, &mut rng)).collect()
}

fn ks_continuous(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_integer(xs: &[f64], cdf: impl Fn(u64) -> f64) -> f64 {
    let max = xs.iter().copied().fold(0.0, f64::max) as u64;
    let n = xs.len() as f64;
    let mut counts = vec![0usize; max as usize + 1];
    for &x in xs {
        assert_eq!(x, x.trunc());
        counts[x as usize] += 1;
    }
    let mut acc = 0usize;
    let mut d = 0.0f64;
    for (k, c) in counts.iter().enumerate() {
        acc += c;
        d = d.max((acc as f64 / n - cdf(k as u64)).abs());
    }
    d
}

fn phi(z: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

#[test]
fn normal_ks() {
    let d = draws(&Family::new(FamilyId::Normal), &[1.5, 4.0], 1);
    let dist = Normal::new(1.5, 2.0).unwrap();
    let ks = ks_continuous(d, |x| dist.cdf(x));
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn logistic_ks() {
    let d = draws(&Family::new(FamilyId::Logistic), &[-0.5, 0.7], 2);
    let ks = ks_continuous(d, |x| 1.0 / (1.0 + (-(x + 0.5) / 0.7).exp()));
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn binomial_ks() {
    let fam = Family::new(FamilyId::Binomial).with_trials(15);
    let d = draws(&fam, &[0.3], 3);
    let dist = Binomial::new(0.3, 15).unwrap();
    let ks = ks_integer(&d, |k| dist.cdf(k));
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn poisson_ks() {
    for (rate, seed) in [(3.5, 4u64), (750.0, 5)] {
        let d = draws(&Family::new(FamilyId::Poisson), &[rate], seed);
        let dist = Poisson::new(rate).unwrap();
        let ks = ks_integer(&d, |k| dist.cdf(k));
        assert!(ks < KS_LIMIT, "rate {rate}: {ks}");
    }
}

#[test]
fn inverse_gaussian_ks() {
    let (mu, lambda) = (1.3, 2.2);
    let d = draws(&Family::new(FamilyId::InverseGaussian), &[mu, lambda], 6);
    let cdf = |y: f64| {
        let s = (lambda / y).sqrt();
        phi(s * (y / mu - 1.0)) + (2.0 * lambda / mu).exp() * phi(-s * (y / mu + 1.0))
    };
    let ks = ks_continuous(d, cdf);
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn weibull_ks() {
    let (scale, shape) = (2.0, 1.7);
    let d = draws(&Family::new(FamilyId::Weibull), &[scale, shape], 7);
    let dist = Weibull::new(shape, scale).unwrap();
    let ks = ks_continuous(d, |x| dist.cdf(x));
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn johnsons_su_ks() {
    let (mu, sigma, omega, skew) = (0.4, 1.2, 1.5, -0.6);
    let fam = Family::new(FamilyId::JohnsonsSu).canonical(true);
    let d = draws(&fam, &[mu, sigma, omega, skew], 8);
    let ks = ks_continuous(d, |y| phi(skew + omega * ((y - mu) / sigma).asinh()));
    assert!(ks < KS_LIMIT, "{ks}");
}

#[test]
fn inverse_gamma_ks() {
    for (alpha, beta, seed) in [(3.0, 2.0, 9u64), (1.2, 0.5, 10)] {
        let d = draws(&Family::new(FamilyId::InverseGamma), &[alpha, beta], seed);
        let dist = InverseGamma::new(alpha, beta).unwrap();
        let ks = ks_continuous(d, |x| dist.cdf(x));
        assert!(ks < KS_LIMIT, "alpha {alpha}: {ks}");
    }
}
