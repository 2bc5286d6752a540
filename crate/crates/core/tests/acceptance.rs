//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any of them fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use namlss::data::{kfold, sample_one, synth_dataset, Dataset, SynthConfig, TargetMode, PreprocessSpec, RawTable};
use namlss::eval::{auc_riemann, heldout_loglik, mean_gamma_deviance, mse, Prediction};
use namlss::families::{ActivationKind, Family, FamilyId, ALPHA_FLOOR};
use namlss::model::{Architecture, Head, MeanLoss, ModelBuilder, SubnetSpec};
use namlss::numerics::relative_error;
use namlss::train::{train, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All families in the default form plus the canonical variants that differ.
fn all_family_forms() -> Vec<Family> {
    let mut out: Vec<Family> = FamilyId::ALL.iter().map(|&id| Family::new(id)).collect();
    for id in [FamilyId::Logistic, FamilyId::InverseGaussian, FamilyId::JohnsonsSu] {
        out.push(Family::new(id).canonical(true));
    }
    out.push(Family::new(FamilyId::Binomial).with_trials(12));
    out
}

/// A random valid parameter row and a response drawn from it.
fn random_point(family: &Family, r: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    loop {
        let raw = Array2::from_shape_fn((1, family.k()), |_| r.gen_range(-1.5..1.5));
        let p = family.activate(raw.view()).expect("activation");
        let theta = p.view().row(0).to_vec();
        let y = sample_one(family, &theta, r);
        if family.in_support(y) && y.is_finite() && y.abs() < 1e6 {
            return (theta, y);
        }
    }
}

fn criterion_1() -> Outcome {
    const STEP: f64 = 1e-5;
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for family in all_family_forms() {
        let k = family.k();
        for _ in 0..100 {
            let (theta, y) = random_point(&family, &mut r);
            let mut grad = vec![0.0; k];
            family.nll_grad_obs(&theta, y, &mut grad);
            for p in 0..k {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[p] += STEP;
                dn[p] -= STEP;
                let fd = (family.nll_obs(&up, y) - family.nll_obs(&dn, y)) / (2.0 * STEP);
                let e = relative_error(grad[p], fd);
                if e > worst {
                    worst = e;
                    worst_at = format!("{} (canonical={}) d/d{}", family.id, family.canonical, family.param_names()[p]);
                }
            }
        }
    }
    if worst >= 1e-4 {
        return Err(format!("family gradients: max rel err {worst:.2e} at {worst_at}"));
    }

    let mut model_worst = 0.0f64;
    let mut model_at = String::new();
    let cases = [
        (Family::new(FamilyId::Normal), Architecture::PerParameter),
        (Family::new(FamilyId::Normal), Architecture::SharedSubnets),
        (Family::new(FamilyId::JohnsonsSu).canonical(true), Architecture::PerParameter),
        (Family::new(FamilyId::JohnsonsSu).canonical(true), Architecture::SharedSubnets),
        (Family::new(FamilyId::InverseGamma), Architecture::PerParameter),
        (Family::new(FamilyId::Poisson), Architecture::SharedSubnets),
        (Family::new(FamilyId::Weibull), Architecture::Dense),
    ];
    for (c, (family, arch)) in cases.iter().enumerate() {
        let mut model = ModelBuilder::new(*family, *arch, 3, SubnetSpec::new(vec![4, 3]))
            .trainable_intercepts(true)
            .seed(c as u64)
            .build()
            .map_err(|e| e.to_string())?;
        // zero initial biases put dead units exactly on the ReLU kink
        let jittered: Vec<f64> = model.to_flat().iter().map(|v| v + r.gen_range(-0.1..0.1)).collect();
        model.set_flat(&jittered).map_err(|e| e.to_string())?;
        let x = Array2::from_shape_fn((6, 3), |_| r.gen_range(-1.0..1.0));
        let truth = family.activate(Array2::from_shape_fn((6, family.k()), |_| r.gen_range(-1.0..1.0)).view()).unwrap();
        let y = Array1::from_shape_fn(6, |i| sample_one(family, &truth.view().row(i).to_vec(), &mut r));
        let (_, grad) = model.loss_and_grad(x.view(), y.view()).map_err(|e| e.to_string())?;
        let analytic = grad.to_flat();
        let base = model.to_flat();
        let mut probe = model.clone();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] += STEP;
            probe.set_flat(&v).unwrap();
            let up = probe.loss(x.view(), y.view()).unwrap();
            v[i] -= 2.0 * STEP;
            probe.set_flat(&v).unwrap();
            let dn = probe.loss(x.view(), y.view()).unwrap();
            let e = relative_error(analytic[i], (up - dn) / (2.0 * STEP));
            if e > model_worst {
                model_worst = e;
                model_at = format!("{} {:?} parameter {i}", family.id, arch);
            }
        }
    }
    check(
        model_worst < 1e-3,
        format!("family max rel err {worst:.2e} (< 1e-4); model max rel err {model_worst:.2e} (< 1e-3) at {model_at}"),
    )
}

fn criterion_2() -> Outcome {
    let mut max_gap = 0.0f64;
    for (id, seed) in [(FamilyId::Poisson, 11u64), (FamilyId::Binomial, 12)] {
        let family = Family::new(id);
        let synth = synth_dataset(&SynthConfig { family, n: 600, seed }).map_err(|e| e.to_string())?;
        let data = synth.dataset();
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            early_stop_patience: 1000,
            dropout: 0.2,
            feature_dropout: 0.1,
            seed,
            ..TrainConfig::default()
        };
        let hidden = SubnetSpec::new(vec![8, 4]).with_dropout_after(0);
        let mut histories = Vec::new();
        for arch in [Architecture::PerParameter, Architecture::SharedSubnets] {
            let model = ModelBuilder::new(family, arch, 5, hidden.clone()).seed(seed).build().map_err(|e| e.to_string())?;
            let (_, h) = train(model, &data, &config).map_err(|e| e.to_string())?;
            histories.push(h);
        }
        if histories[0].epochs.len() != 50 || histories[1].epochs.len() != 50 {
            return Err(format!("{id}: expected 50 epochs"));
        }
        for (a, b) in histories[0].epochs.iter().zip(&histories[1].epochs) {
            max_gap = max_gap.max((a.train_loss - b.train_loss).abs());
            max_gap = max_gap.max((a.validation_loss.unwrap() - b.validation_loss.unwrap()).abs());
        }
    }
    check(max_gap <= 1e-12, format!("max per-epoch loss gap {max_gap:.1e} over 50 epochs (<= 1e-12)"))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut locality_ok = true;
    for m in 0..1000u64 {
        let family = Family::new(FamilyId::ALL[r.gen_range(0..8)]);
        let arch = if r.gen::<bool>() { Architecture::PerParameter } else { Architecture::SharedSubnets };
        let j = r.gen_range(1..=5);
        let hidden: Vec<usize> = (0..r.gen_range(1..=3)).map(|_| r.gen_range(1..=6)).collect();
        let mut model = ModelBuilder::new(family, arch, j, SubnetSpec::new(hidden)).seed(m).build().unwrap();
        for b in &mut model.intercepts {
            *b = r.gen_range(-2.0..2.0);
        }
        let x = Array2::from_shape_fn((8, j), |_| r.gen_range(-1.0..1.0));
        let raw = model.predict_raw(x.view()).unwrap();
        let contrib = model.feature_contributions(x.view()).unwrap();
        let summed = contrib.sum_axis(Axis(1));
        for i in 0..8 {
            for k in 0..model.outputs() {
                worst = worst.max((raw[[i, k]] - summed[[i, k]] - model.intercepts[k]).abs());
            }
        }
        let f = r.gen_range(0..j);
        let mut x2 = x.clone();
        x2.column_mut(f).mapv_inplace(|v| v + r.gen_range(0.1..1.0));
        let contrib2 = model.feature_contributions(x2.view()).unwrap();
        for jj in (0..j).filter(|&jj| jj != f) {
            let a = contrib.index_axis(Axis(1), jj);
            let b = contrib2.index_axis(Axis(1), jj);
            if a.iter().zip(b.iter()).any(|(p, q)| p.to_bits() != q.to_bits()) {
                locality_ok = false;
            }
        }
    }
    check(
        worst < 1e-10 && locality_ok,
        format!("1000 models: max additivity error {worst:.1e} (< 1e-10); other features bitwise unchanged: {locality_ok}"),
    )
}

/// Gaussian log-likelihood summed over rows, written out directly.
fn gaussian_loglik(mu: &[f64], var: &[f64], y: &[f64]) -> f64 {
    mu.iter()
        .zip(var)
        .zip(y)
        .map(|((m, v), y)| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (y - m).powi(2) / (2.0 * v))
        .sum()
}

fn study_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 128,
        max_epochs: 400,
        early_stop_patience: 30,
        seed,
        ..TrainConfig::default()
    }
}

fn criterion_4() -> Outcome {
    let family = Family::new(FamilyId::Normal);
    let synth = synth_dataset(&SynthConfig::new(family, 2024)).map_err(|e| e.to_string())?;
    let data = synth.dataset();
    let plan = kfold(data.n(), 5, 101).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for f in 0..5 {
        let train_rows = plan.train(f);
        let test_rows = plan.test(f);
        let tr = data.select(&train_rows);
        let te = data.select(test_rows);
        let model = ModelBuilder::new(family, Architecture::PerParameter, 5, SubnetSpec::new(vec![32, 16]))
            .seed(f as u64)
            .build()
            .map_err(|e| e.to_string())?;
        let (model, _) = train(model, &tr, &study_config(f as u64)).map_err(|e| e.to_string())?;
        let params = model.predict_params(te.x.view()).map_err(|e| e.to_string())?;
        let ll = heldout_loglik(&family, Prediction::Params(&params), te.y.view()).map_err(|e| e.to_string())?;

        let truth = synth.params.select(test_rows);
        let oracle = gaussian_loglik(&truth.column(0).to_vec(), &truth.column(1).to_vec(), &te.y.to_vec());
        let n = tr.n() as f64;
        let mean = tr.y.sum() / n;
        let var = tr.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let intercept_only = gaussian_loglik(&vec![mean; te.n()], &vec![var; te.n()], &te.y.to_vec());
        let within = (ll - oracle).abs() <= 0.1 * oracle.abs();
        let margin = ll - intercept_only;
        ok &= within && margin >= 20.0;
        lines.push(format!("fold {}: l={ll:.1} oracle={oracle:.1} intercept-only={intercept_only:.1}", f + 1));
    }
    check(ok, lines.join("; "))
}

fn criterion_5() -> Outcome {
    let su = Family::new(FamilyId::JohnsonsSu).canonical(true);
    let normal = Family::new(FamilyId::Normal);
    let synth = synth_dataset(&SynthConfig::new(su, 5)).map_err(|e| e.to_string())?;
    let data = synth.dataset();
    let plan = kfold(data.n(), 5, 101).map_err(|e| e.to_string())?;
    let (mut ll_su, mut ll_gauss) = (0.0, 0.0);
    for f in 0..5 {
        let tr = data.select(&plan.train(f));
        let te = data.select(plan.test(f));
        let model = ModelBuilder::new(su, Architecture::PerParameter, 5, SubnetSpec::new(vec![32, 16]))
            .seed(f as u64)
            .build()
            .map_err(|e| e.to_string())?;
        let (model, _) = train(model, &tr, &study_config(f as u64)).map_err(|e| e.to_string())?;
        let params = model.predict_params(te.x.view()).map_err(|e| e.to_string())?;
        ll_su += heldout_loglik(&su, Prediction::Params(&params), te.y.view()).map_err(|e| e.to_string())?;

        let head = Head::Mean {
            activation: ActivationKind::Linear,
            loss: MeanLoss::SquaredError,
            family: normal,
        };
        let mlp = ModelBuilder::new(normal, Architecture::Dense, 5, SubnetSpec::new(vec![32, 16]))
            .head(head)
            .trainable_intercepts(true)
            .seed(f as u64)
            .build()
            .map_err(|e| e.to_string())?;
        let (mlp, _) = train(mlp, &tr, &study_config(f as u64)).map_err(|e| e.to_string())?;
        let mean = mlp.predict_mean(te.x.view()).map_err(|e| e.to_string())?;
        ll_gauss += heldout_loglik(&normal, Prediction::Mean(mean.view()), te.y.view()).map_err(|e| e.to_string())?;
    }
    let gain = (ll_su - ll_gauss) / ll_gauss.abs();
    check(
        gain >= 0.05,
        format!("5-fold l: Johnson's S_U {ll_su:.1} vs Gaussian approximation {ll_gauss:.1}, gain {:.1}% (>= 5%)", 100.0 * gain),
    )
}

fn mann_whitney(y: &[f64], s: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1.0 && y[j] == 0.0 {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut auc_err = 0.0f64;
    for t in 0..100 {
        let n = r.gen_range(2..200);
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(r.gen::<bool>())).collect();
        y[0] = 0.0;
        y[1] = 1.0;
        // every other instance uses coarse scores to force ties
        let s: Vec<f64> = (0..n)
            .map(|_| if t % 2 == 0 { r.gen::<f64>() } else { (r.gen::<f64>() * 5.0).floor() })
            .collect();
        let a = auc_riemann(Array1::from(y.clone()).view(), Array1::from(s.clone()).view()).unwrap();
        auc_err = auc_err.max((a - mann_whitney(&y, &s)).abs());
    }
    let (mut mse_err, mut dev_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.gen_range(1..500);
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..20.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..20.0)).collect();
        let mut sq = 0.0;
        let mut dv = 0.0;
        for i in 0..n {
            sq += (y[i] - p[i]) * (y[i] - p[i]);
            dv += (p[i] / y[i]).ln() + y[i] / p[i] - 1.0;
        }
        let (ya, pa) = (Array1::from(y), Array1::from(p));
        mse_err = mse_err.max((mse(ya.view(), pa.view()).unwrap() - sq / n as f64).abs());
        let d = mean_gamma_deviance(ya.view(), pa.view()).unwrap();
        dev_err = dev_err.max(relative_error(d, 2.0 * dv / n as f64));
    }
    let mut nonneg = true;
    for _ in 0..100_000 {
        let y = r.gen_range(1e-3..1e3);
        let p = r.gen_range(1e-3..1e3);
        let d = mean_gamma_deviance(Array1::from(vec![y]).view(), Array1::from(vec![p]).view()).unwrap();
        nonneg &= d >= 0.0 && (d == 0.0) == (y == p);
        let same = mean_gamma_deviance(Array1::from(vec![y]).view(), Array1::from(vec![y]).view()).unwrap();
        nonneg &= same == 0.0;
    }
    check(
        auc_err < 1e-9 && mse_err < 1e-12 && dev_err < 1e-12 && nonneg,
        format!(
            "AUC max err {auc_err:.1e} (< 1e-9); MSE {mse_err:.1e}, deviance {dev_err:.1e} (< 1e-12); deviance >= 0, zero iff equal: {nonneg}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let h = ActivationKind::InverseGammaAlpha;
    let mut r = rng(7);
    let mut min_out = f64::INFINITY;
    for i in 0..1_000_000 {
        let x = match i % 4 {
            0 => r.gen_range(-5.0..5.0),
            1 => r.gen_range(-50.0..50.0),
            2 => r.gen_range(-1e3..1e3),
            _ => f64::from_bits(r.gen::<u64>() & 0x7fef_ffff_ffff_ffff) * if r.gen::<bool>() { 1.0 } else { -1.0 },
        };
        if x.is_finite() {
            min_out = min_out.min(h.apply(x));
        }
    }
    let at_zero = h.apply(0.0);
    let expected = 1.0 / std::f64::consts::LN_2;
    let ig = Family::new(FamilyId::InverseGamma);
    let raw = Array2::from_shape_fn((20_000, 2), |(i, k)| if k == 0 { -40.0 + 80.0 * i as f64 / 20_000.0 } else { r.gen_range(-3.0..3.0) });
    let mean_ok = ig
        .activate(raw.view())
        .and_then(|p| ig.mean(&p))
        .map(|m| m.iter().all(|v| v.is_finite() && *v > 0.0))
        .unwrap_or(false);
    check(
        min_out >= 1.0 && (at_zero - expected).abs() < 1e-12 && mean_ok,
        format!("min output {min_out} (>= 1, floor {ALPHA_FLOOR}); h(0) = {at_zero:.9}; inverse gamma mean defined: {mean_ok}"),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_namlss"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn criterion_8() -> Outcome {
    let fit = [
        "--data", "d.csv", "--target", "y", "--family", "normal", "--ignore", "true_theta*", "--hidden", "8",
        "--learning-rate", "1e-3", "--max-epochs", "20", "--seed", "3",
    ];
    let mut commands: Vec<Vec<&str>> = vec![vec!["simulate", "--family", "normal", "--n", "400", "--seed", "7", "--out", "d.csv"]];
    commands.push([&["train"][..], &fit, &["--out", "m.json", "--history", "h.json"]].concat());
    commands.push([&["crossval"][..], &fit, &["--out", "r.json", "--table", "r.txt", "--folds-out", "f.json"]].concat());
    commands.push(vec!["evaluate", "--model", "m.json", "--data", "d.csv", "--metrics", "nll,mse", "--out", "e.json"]);
    commands.push(vec!["shapes", "--model", "m.json", "--data", "d.csv", "--grid", "16", "--out", "s.csv", "--plot", "plots"]);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for c in &commands {
            run_cli(c, d.path())?;
        }
    }
    let files = ["d.csv", "m.json", "h.json", "r.json", "r.txt", "f.json", "e.json", "s.csv", "plots/01_x1.svg", "plots/05_x5.svg"];
    for f in files {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs between identical runs"));
        }
    }
    let plan = kfold(3000, 5, 101).unwrap();
    let again = kfold(3000, 5, 101).unwrap();
    // fingerprint pinned from the first run of this suite
    let head: Vec<usize> = plan.folds[0][..5].to_vec();
    check(
        plan == again && head == PINNED_FOLD_HEAD,
        format!("{} files byte-identical across reruns; fold plan (seed 101) head {head:?}", files.len()),
    )
}

const PINNED_FOLD_HEAD: [usize; 5] = [2, 4, 6, 7, 9];

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    // relative to the magnitude of the column, so values near zero in an
    // offset column are not judged against their own tiny size
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / a.abs().max(b.abs()).max(scale);
    let n = 2000;
    let cols: Vec<(f64, f64)> = (0..4).map(|_| (r.gen_range(-1e3..1e3), 10f64.powf(r.gen_range(-3.0..4.0)))).collect();
    let mut csv = String::from("a,b,c,d,y\n");
    let mut ys = Vec::new();
    for _ in 0..n {
        let row: Vec<f64> = cols.iter().map(|(o, s)| o + s * r.gen_range(-1.0..1.0)).collect();
        let y = 10f64.powf(r.gen_range(-2.0..3.0));
        ys.push(y);
        csv.push_str(&format!("{:?},{:?},{:?},{:?},{y:?}\n", row[0], row[1], row[2], row[3]));
    }
    let table = RawTable::from_reader(csv.as_bytes()).map_err(|e| e.to_string())?;
    let mut worst_x = 0.0f64;
    let mut worst_y = [0.0f64; 2];
    let mut in_range = true;
    for (m, mode) in [TargetMode::Standardize, TargetMode::Log].into_iter().enumerate() {
        let (ds, spec): (Dataset, PreprocessSpec) = PreprocessSpec::fit(&table, "y", mode, &[]).map_err(|e| e.to_string())?;
        for (i, row) in table.rows.iter().enumerate() {
            for j in 0..4 {
                let v: f64 = row[j].parse().unwrap();
                let back = spec.invert_feature(j, ds.x[[i, j]]).unwrap();
                let scale = cols[j].0.abs() + cols[j].1;
                worst_x = worst_x.max(rel(v, back, scale));
                in_range &= (-1.0..=1.0).contains(&ds.x[[i, j]]);
            }
            let back = spec.target_transform.invert(ds.y[i]);
            worst_y[m] = worst_y[m].max(rel(ys[i], back, 0.0));
        }
    }
    check(
        worst_x < 1e-12 && worst_y[0] < 1e-12 && worst_y[1] < 1e-12 && in_range,
        format!(
            "numeric map {worst_x:.1e}, standardize {:.1e}, log/exp {:.1e} (all < 1e-12); features in [-1, 1]: {in_range}",
            worst_y[0], worst_y[1]
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient oracle", criterion_1),
        ("architecture equivalence", criterion_2),
        ("additivity and locality", criterion_3),
        ("synthetic normal study", criterion_4),
        ("johnson's su vs gaussian", criterion_5),
        ("metric oracles", criterion_6),
        ("alpha activation", criterion_7),
        ("determinism", criterion_8),
        ("preprocessing round trip", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.1}s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1}s) {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
