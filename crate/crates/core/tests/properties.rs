use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use namlss::data::{kfold, synth_dataset, synth_params, Dataset, PreprocessSpec, RawTable, SynthConfig, TargetMode};
use namlss::eval::{auc_riemann, heldout_loglik, mean_gamma_deviance, Prediction};
use namlss::families::{Family, FamilyId, ParamVector};
use namlss::model::{Architecture, ModelBuilder, SubnetSpec};
use namlss::train::{train, TrainConfig};

proptest! {
    #[test]
    fn folds_partition_indices(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let plan = kfold(n, k, seed).unwrap();
        prop_assert_eq!(plan.folds.len(), k);
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn numeric_columns_land_in_unit_interval(values in prop::collection::vec(-1e6f64..1e6, 2..60)) {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi > lo);
        let mut csv = String::from("a,y\n");
        for v in &values {
            csv.push_str(&format!("{v:?},1\n"));
        }
        let table = RawTable::from_reader(csv.as_bytes()).unwrap();
        let (ds, spec) = PreprocessSpec::fit(&table, "y", TargetMode::None, &[]).unwrap();
        for (i, v) in values.iter().enumerate() {
            let u = ds.x[[i, 0]];
            prop_assert!((-1.0..=1.0).contains(&u));
            let back = spec.invert_feature(0, u).unwrap();
            prop_assert!((back - v).abs() <= 1e-12 * lo.abs().max(hi.abs()));
        }
    }

    #[test]
    fn synth_params_total_and_positive(x in prop::collection::vec(0.0f64..=1.0, 5)) {
        let t = synth_params(Array2::from_shape_vec((1, 5), x).unwrap().view()).unwrap();
        prop_assert!(t.iter().all(|v| v.is_finite()));
        prop_assert!(t[[0, 1]] > 0.0 && t[[0, 3]] > 0.0);
    }

    #[test]
    fn gamma_deviance_nonnegative(y in 1e-6f64..1e6, p in 1e-6f64..1e6) {
        let d = mean_gamma_deviance(Array1::from(vec![y]).view(), Array1::from(vec![p]).view()).unwrap();
        prop_assert!(d >= 0.0);
    }
}

#[test]
fn auc_invariant_under_monotone_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 200;
    let y = Array1::from_shape_fn(n, |i| (i % 3 == 0) as u8 as f64);
    let s = Array1::from_shape_fn(n, |_| rng.gen::<f64>());
    let base = auc_riemann(y.view(), s.view()).unwrap();
    for m in 0..1000 {
        let a = rng.gen_range(0.1..5.0);
        let b = rng.gen_range(-3.0..3.0);
        let mapped = s.mapv(|v| match m % 4 {
            0 => a * v + b,
            1 => (a * v).exp(),
            2 => v.powi(3) + a * v,
            _ => (a * (v - 0.5)).atan(),
        });
        assert_eq!(auc_riemann(y.view(), mapped.view()).unwrap(), base, "map {m}");
    }
}

/// Multiplies every parameter by 1.1, keeping probabilities inside (0, 1).
fn perturbed(family: &Family, params: &ParamVector) -> ParamVector {
    let mut v = params.view().to_owned();
    v.mapv_inplace(|p| p * 1.1);
    if family.id == FamilyId::Binomial {
        v.mapv_inplace(|p| p.min(1.0 - 1e-9));
    }
    ParamVector::new(family, v).unwrap()
}

#[test]
fn true_parameters_dominate_perturbed_ones() {
    for id in [FamilyId::Normal, FamilyId::Poisson, FamilyId::Weibull, FamilyId::InverseGaussian, FamilyId::InverseGamma] {
        let family = Family::new(id);
        for seed in 0..20 {
            let d = synth_dataset(&SynthConfig::new(family, seed)).unwrap();
            let at_truth = heldout_loglik(&family, Prediction::Params(&d.params), d.y.view()).unwrap();
            let off = heldout_loglik(&family, Prediction::Params(&perturbed(&family, &d.params)), d.y.view()).unwrap();
            assert!(at_truth >= off, "{id} seed {seed}: {at_truth} < {off}");
            let nll_truth = family.nll(&d.params, d.y.view()).unwrap();
            assert!((at_truth + d.y.len() as f64 * nll_truth).abs() < 1e-9 * at_truth.abs());
        }
    }
}

#[test]
fn reported_loglik_matches_training_objective() {
    let family = Family::new(FamilyId::Normal);
    let d = synth_dataset(&SynthConfig { family, n: 300, seed: 4 }).unwrap();
    let model = ModelBuilder::new(family, Architecture::SharedSubnets, 5, SubnetSpec::new(vec![6])).seed(2).build().unwrap();
    let params = model.predict_params(d.x.view()).unwrap();
    let ll = heldout_loglik(&family, Prediction::Params(&params), d.y.view()).unwrap();
    let objective = model.loss(d.x.view(), d.y.view()).unwrap();
    assert!((ll + 300.0 * objective).abs() <= 1e-10 * ll.abs());
}

#[test]
fn monotone_effect_gives_monotone_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 800;
    let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |i| 2.0 * x[[i, 0]] + 0.05 * (rng.gen::<f64>() - 0.5));
    let data = Dataset::new(x, y).unwrap();
    let family = Family::new(FamilyId::Normal);
    let model = ModelBuilder::new(family, Architecture::PerParameter, 2, SubnetSpec::new(vec![16, 8])).seed(1).build().unwrap();
    let config = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 64,
        max_epochs: 150,
        early_stop_patience: 40,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, &data, &config).unwrap();
    let shapes = model.shape_functions(data.x.view(), 32).unwrap();
    let mu = shapes.curves[0].values.column(0).to_vec();
    assert!(mu.windows(2).all(|w| w[1] >= w[0]), "{mu:?}");
    assert!(mu[31] - mu[0] > 3.0);
}
