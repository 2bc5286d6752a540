//! Command-line interface.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold, synth_dataset, Dataset, PreprocessSpec, RawTable, SynthConfig, TargetMode};
use crate::error::{Error, Result};
use crate::eval::{aggregate_folds, evaluate_metrics, Metric, Prediction};
use crate::families::{ActivationKind, Family, FamilyId};
use crate::model::{Architecture, Head, MeanLoss, ModelBuilder, NamlssModel, ScaleSubnets, ShapeFunctionTable, SubnetSpec};
use crate::train::{train, TrainConfig, TrainHistory};

#[derive(Debug, Parser)]
#[command(name = "namlss", version, about = "Neural additive models for location, scale and shape")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from the synthetic benchmark functions.
    Simulate(SimulateArgs),
    /// Train one model on a CSV file.
    Train(TrainArgs),
    /// Run k-fold cross-validation and report metrics.
    Crossval(CrossvalArgs),
    /// Evaluate a saved model on a CSV file.
    Evaluate(EvaluateArgs),
    /// Export per-feature shape functions of a saved model.
    Shapes(ShapesArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: FamilyId,
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Binomial trials per observation.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Use the textbook density where it differs from the default form.
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchArg {
    PerParameter,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Additive distributional model.
    Namlss,
    /// Additive mean-only model.
    Nam,
    /// Fully connected distributional network.
    Dnn,
    /// Fully connected mean-only network.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CaHousing,
    Insurance,
    Fico,
    Airbnb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArg {
    None,
    Standardize,
    Log,
}

impl From<TargetArg> for TargetMode {
    fn from(t: TargetArg) -> TargetMode {
        match t {
            TargetArg::None => TargetMode::None,
            TargetArg::Standardize => TargetMode::Standardize,
            TargetArg::Log => TargetMode::Log,
        }
    }
}

/// Settings shared by `train` and `crossval`. Every field can also come
/// from `--config`; flags win over the file, and the file over a preset.
#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_parser = parse_family)]
    pub family: Option<FamilyId>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Hyperparameters of a benchmark setup.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hidden layer widths, e.g. `64,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub target_transform: Option<TargetArg>,
    /// Columns to drop; a trailing `*` matches a prefix.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Option<Vec<String>>,
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub canonical: bool,
    /// Train the per-parameter intercepts.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub feature_dropout: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history output path (default: next to the model).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 101)]
    pub fold_seed: u64,
    /// Comma-separated: nll, mse, gamma-deviance, auc.
    #[arg(long, default_value = "nll,mse")]
    pub metrics: String,
    /// Report JSON output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional text table output path.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Writes the fold assignment as JSON.
    #[arg(long)]
    pub folds_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "model")]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "nll,mse")]
    pub metrics: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    #[arg(long = "model")]
    pub model: PathBuf,
    /// Data whose feature ranges define the grid and centering.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for one SVG plot per feature.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<FamilyId, String> {
    s.parse::<FamilyId>().map_err(|e| e.to_string())
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target: Option<String>,
    pub family: Option<FamilyId>,
    pub arch: Option<ArchArg>,
    pub model: Option<ModelKind>,
    pub preset: Option<Preset>,
    pub hidden: Option<Vec<usize>>,
    pub dropout_after: Option<usize>,
    pub scale_hidden: Option<Vec<usize>>,
    pub target_transform: Option<TargetArg>,
    pub ignore: Option<Vec<String>>,
    pub trials: Option<u32>,
    pub canonical: Option<bool>,
    pub intercept: Option<bool>,
    /// Partial training configuration merged over the preset.
    pub train: Option<serde_json::Map<String, serde_json::Value>>,
}

/// Fully resolved settings of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPlan {
    pub target: String,
    pub family: Family,
    pub arch: ArchArg,
    pub model: ModelKind,
    pub hidden: SubnetSpec,
    pub scale: ScaleSubnets,
    pub target_mode: TargetMode,
    pub ignore: Vec<String>,
    pub intercept: bool,
    pub mean_activation: Option<ActivationKind>,
    pub train: TrainConfig,
}

struct PresetSpec {
    family: FamilyId,
    hidden: SubnetSpec,
    scale: ScaleSubnets,
    dropout: f64,
    batch_size: usize,
    target_mode: TargetMode,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::CaHousing, Preset::Insurance, Preset::Fico, Preset::Airbnb];

    fn spec(self) -> PresetSpec {
        match self {
            Preset::CaHousing => PresetSpec {
                family: FamilyId::Normal,
                hidden: SubnetSpec::new(vec![1000, 500, 100, 50, 25]).with_dropout_after(1),
                scale: ScaleSubnets::Custom(SubnetSpec::new(vec![50, 25])),
                dropout: 0.25,
                batch_size: 1024,
                target_mode: TargetMode::Standardize,
            },
            Preset::Insurance => PresetSpec {
                family: FamilyId::Normal,
                hidden: SubnetSpec::new(vec![250, 50, 25]).with_dropout_after(0),
                scale: ScaleSubnets::Custom(SubnetSpec::new(vec![50])),
                dropout: 0.5,
                batch_size: 256,
                target_mode: TargetMode::Standardize,
            },
            Preset::Fico => PresetSpec {
                family: FamilyId::Logistic,
                hidden: SubnetSpec::new(vec![250, 50, 25]).with_dropout_after(0),
                scale: ScaleSubnets::Custom(SubnetSpec::new(vec![50])),
                dropout: 0.5,
                batch_size: 1024,
                target_mode: TargetMode::None,
            },
            Preset::Airbnb => PresetSpec {
                family: FamilyId::InverseGamma,
                hidden: SubnetSpec::new(vec![512, 256, 50]).with_dropout_after(0),
                scale: ScaleSubnets::Same,
                dropout: 0.5,
                batch_size: 512,
                target_mode: TargetMode::None,
            },
        }
    }
}

/// Output activation and loss of a mean-only model.
fn mean_head(family: Family, model: ModelKind, activation: Option<ActivationKind>) -> Head {
    let default = match family.id {
        FamilyId::Logistic | FamilyId::Binomial => ActivationKind::Sigmoid,
        FamilyId::InverseGamma if model == ModelKind::Nam => ActivationKind::InverseGammaAlpha,
        FamilyId::InverseGamma => ActivationKind::Softplus,
        _ => ActivationKind::Linear,
    };
    let activation = activation.unwrap_or(default);
    let binary = matches!(family.id, FamilyId::Binomial | FamilyId::Logistic);
    let loss = if binary && activation == ActivationKind::Sigmoid {
        MeanLoss::CrossEntropy
    } else {
        MeanLoss::SquaredError
    };
    Head::Mean { activation, loss, family }
}

impl FitPlan {
    pub fn resolve(args: &FitArgs) -> Result<FitPlan> {
        let file = match &args.config {
            Some(p) => serde_json::from_str::<RunConfig>(&std::fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        let preset = args.preset.or(file.preset).map(Preset::spec);
        let family_id = args
            .family
            .or(file.family)
            .or(preset.as_ref().map(|p| p.family))
            .ok_or_else(|| Error::Config("--family is required (or a preset)".into()))?;
        let target = args
            .target
            .clone()
            .or(file.target)
            .ok_or_else(|| Error::Config("--target is required".into()))?;
        let trials = args.trials.or(file.trials).unwrap_or(1);
        if trials == 0 {
            return Err(Error::Config("--trials must be >= 1".into()));
        }
        let family = Family::new(family_id)
            .with_trials(trials)
            .canonical(args.canonical || file.canonical.unwrap_or(false));

        let mut train = TrainConfig::default();
        let mut hidden = SubnetSpec::new(vec![64, 32]);
        let mut scale = ScaleSubnets::Default;
        let mut target_mode = TargetMode::None;
        if let Some(p) = preset {
            hidden = p.hidden;
            scale = p.scale;
            train.dropout = p.dropout;
            train.batch_size = p.batch_size;
            target_mode = p.target_mode;
        }
        if let Some(h) = file.hidden {
            hidden = SubnetSpec::new(h);
        }
        if let Some(d) = file.dropout_after {
            hidden.dropout_after = Some(d);
        }
        if let Some(s) = file.scale_hidden {
            scale = ScaleSubnets::Custom(SubnetSpec::new(s));
        }
        if let Some(overrides) = file.train {
            let mut value = serde_json::to_value(&train)?;
            let obj = value.as_object_mut().expect("config serialises as an object");
            for (k, v) in overrides {
                obj.insert(k, v);
            }
            train = serde_json::from_value(value).map_err(|e| Error::Config(format!("train config: {e}")))?;
        }
        if let Some(h) = &args.hidden {
            hidden = SubnetSpec {
                hidden: h.clone(),
                dropout_after: hidden.dropout_after.filter(|d| *d < h.len()),
            };
        }
        if let Some(v) = args.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = args.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = args.max_epochs {
            train.max_epochs = v;
        }
        if let Some(v) = args.patience {
            train.early_stop_patience = v;
        }
        if let Some(v) = args.dropout {
            train.dropout = v;
        }
        if let Some(v) = args.feature_dropout {
            train.feature_dropout = v;
        }
        if let Some(v) = args.validation_fraction {
            train.validation_fraction = v;
        }
        if let Some(v) = args.seed {
            train.seed = v;
        }
        train.validate()?;
        if let Some(t) = args.target_transform.or(file.target_transform) {
            target_mode = t.into();
        }
        Ok(FitPlan {
            target,
            family,
            arch: args.arch.or(file.arch).unwrap_or(ArchArg::PerParameter),
            model: args.model.or(file.model).unwrap_or(ModelKind::Namlss),
            hidden,
            scale,
            target_mode,
            ignore: args.ignore.clone().or(file.ignore).unwrap_or_default(),
            intercept: args.intercept || file.intercept.unwrap_or(false),
            mean_activation: None,
            train,
        })
    }

    pub fn build_model(&self, data: &Dataset, spec: Option<&PreprocessSpec>) -> Result<NamlssModel> {
        let arch = match (self.model, self.arch) {
            (ModelKind::Dnn | ModelKind::Mlp, _) => Architecture::Dense,
            (ModelKind::Nam, _) => Architecture::PerParameter,
            (ModelKind::Namlss, ArchArg::PerParameter) => Architecture::PerParameter,
            (ModelKind::Namlss, ArchArg::Shared) => Architecture::SharedSubnets,
        };
        let mut builder = ModelBuilder::new(self.family, arch, data.n_features(), self.hidden.clone())
            .scale(self.scale.clone())
            .trainable_intercepts(self.intercept)
            .seed(self.train.seed);
        if matches!(self.model, ModelKind::Nam | ModelKind::Mlp) {
            builder = builder.head(mean_head(self.family, self.model, self.mean_activation));
        }
        let mut model = builder.build()?;
        model.feature_names = data.feature_names.clone();
        model.preprocess = spec.cloned();
        Ok(model)
    }

    fn fit(&self, data: &Dataset, spec: Option<&PreprocessSpec>) -> Result<(NamlssModel, TrainHistory)> {
        check_support(&self.family, data)?;
        let model = self.build_model(data, spec)?;
        train(model, data, &self.train)
    }
}

/// Rejects responses outside the family's support, naming the rows.
fn check_support(family: &Family, data: &Dataset) -> Result<()> {
    let bad: Vec<usize> = data
        .y
        .iter()
        .enumerate()
        .filter(|(_, y)| !family.in_support(**y))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = bad.iter().take(10).map(|i| i.to_string()).collect();
    let more = if bad.len() > 10 { format!(" and {} more", bad.len() - 10) } else { String::new() };
    Err(Error::Domain(format!(
        "{} response values outside the support of {}: rows {}{more}",
        bad.len(),
        family.id,
        shown.join(", ")
    )))
}

fn load_table(path: &Path) -> Result<RawTable> {
    RawTable::from_path(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let family = Family::new(args.family)
        .with_trials(args.trials.unwrap_or(1))
        .canonical(args.canonical);
    let data = synth_dataset(&SynthConfig {
        family,
        n: args.n,
        seed: args.seed,
    })?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_file(&args.out, &buf)?;
    Ok(format!("wrote {} rows to {}\n", args.n, args.out.display()))
}

/// Per-observation log-likelihood summed over `data`.
fn loglik(model: &NamlssModel, data: &Dataset) -> Result<f64> {
    let metrics = model_metrics(model, data, &[Metric::LogLikelihood])?;
    Ok(metrics[&Metric::LogLikelihood])
}

fn model_metrics(model: &NamlssModel, data: &Dataset, metrics: &[Metric]) -> Result<BTreeMap<Metric, f64>> {
    let family = *model.family();
    check_support(&family, data)?;
    let x = data.x.view();
    let mean = model.predict_mean(x)?;
    match model.head {
        Head::Distribution { .. } => {
            let params = model.predict_params(x)?;
            evaluate_metrics(metrics, &family, Prediction::Params(&params), mean.view(), data.y.view())
        }
        Head::Mean { .. } => evaluate_metrics(metrics, &family, Prediction::Mean(mean.view()), mean.view(), data.y.view()),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let plan = FitPlan::resolve(&args.fit)?;
    let table = load_table(&args.fit.data)?;
    let (data, spec) = PreprocessSpec::fit(&table, &plan.target, plan.target_mode, &plan.ignore)?;
    let data = Dataset {
        trials: Some(plan.family.trials),
        ..data
    };
    let (model, history) = plan.fit(&data, Some(&spec))?;
    model.save(&args.out).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot write {}: {io}", args.out.display())),
        other => other,
    })?;
    let history_path = args.history.clone().unwrap_or_else(|| args.out.with_extension("history.json"));
    write_file(&history_path, (serde_json::to_string_pretty(&history)? + "\n").as_bytes())?;
    let best = &history.epochs[history.best_epoch];
    let mut out = String::new();
    let _ = writeln!(
        out,
        "best epoch {}: train nll {:.6}, validation nll {}",
        best.epoch,
        best.train_loss,
        best.validation_loss.map_or("-".to_string(), |v| format!("{v:.6}"))
    );
    let _ = writeln!(out, "log-likelihood on {} rows: {:.4}", data.n(), loglik(&model, &data)?);
    Ok(out)
}

pub fn cmd_crossval(args: &CrossvalArgs) -> Result<String> {
    let plan = FitPlan::resolve(&args.fit)?;
    let metrics = Metric::parse_list(&args.metrics)?;
    let table = load_table(&args.fit.data)?;
    let (data, spec) = PreprocessSpec::fit(&table, &plan.target, plan.target_mode, &plan.ignore)?;
    let data = Dataset {
        trials: Some(plan.family.trials),
        ..data
    };
    let folds = kfold(data.n(), args.folds, args.fold_seed)?;
    if let Some(p) = &args.folds_out {
        write_file(p, (serde_json::to_string_pretty(&folds)? + "\n").as_bytes())?;
    }
    let per_fold = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train_data = data.select(&folds.train(f));
            let test_data = data.select(folds.test(f));
            let (model, _) = plan.fit(&train_data, Some(&spec))?;
            model_metrics(&model, &test_data, &metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate_folds(&per_fold)?;
    write_file(&args.out, (report.to_json()? + "\n").as_bytes())?;
    let table_text = report.to_table();
    if let Some(p) = &args.table {
        write_file(p, table_text.as_bytes())?;
    }
    Ok(table_text)
}

fn load_model(path: &Path) -> Result<NamlssModel> {
    NamlssModel::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn model_dataset(model: &NamlssModel, table: &RawTable) -> Result<Dataset> {
    let spec = model
        .preprocess
        .as_ref()
        .ok_or_else(|| Error::Contract("model carries no preprocessing; it was not trained from CSV".into()))?;
    spec.apply(table)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let metrics = Metric::parse_list(&args.metrics)?;
    let model = load_model(&args.model)?;
    if metrics.contains(&Metric::Auc) && !matches!(model.family().id, FamilyId::Binomial | FamilyId::Logistic) {
        return Err(Error::Domain(format!("AUC needs a binary response; model family is {}", model.family().id)));
    }
    let table = load_table(&args.data)?;
    let data = model_dataset(&model, &table)?;
    let values = model_metrics(&model, &data, &metrics)?;
    let named: BTreeMap<&str, f64> = values.iter().map(|(m, v)| (m.as_str(), *v)).collect();
    let text = serde_json::to_string_pretty(&named)? + "\n";
    if let Some(p) = &args.out {
        write_file(p, text.as_bytes())?;
    }
    Ok(text)
}

pub fn cmd_shapes(args: &ShapesArgs) -> Result<String> {
    if args.grid < 2 {
        return Err(Error::Config(format!("--grid must be at least 2, got {}", args.grid)));
    }
    let model = load_model(&args.model)?;
    let table = load_table(&args.data)?;
    let x = match &model.preprocess {
        Some(spec) => spec.apply_features(&table)?,
        None => return Err(Error::Contract("model carries no preprocessing; it was not trained from CSV".into())),
    };
    let shapes = model.shape_functions(x.view(), args.grid)?;
    let mut buf = Vec::new();
    shapes.write_csv(&mut buf)?;
    write_file(&args.out, &buf)?;
    if let Some(dir) = &args.plot {
        std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        for (j, curve) in shapes.curves.iter().enumerate() {
            let svg = render_svg(&shapes, j);
            let name = format!("{:02}_{}.svg", j + 1, sanitize(&curve.feature));
            write_file(&dir.join(name), svg.as_bytes())?;
        }
    }
    Ok(format!("wrote {} shape curves to {}\n", shapes.curves.len(), args.out.display()))
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Line plot of one feature's curves, one polyline per parameter.
pub fn render_svg(table: &ShapeFunctionTable, feature: usize) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let curve = &table.curves[feature];
    let k = curve.values.ncols();
    let xs = &curve.grid;
    let (x0, x1) = bounds(xs.iter().copied());
    let (y0, y1) = bounds(curve.values.iter().copied());
    let sx = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape_xml(&curve.feature)
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="10">{x0:.3}</text><text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{x1:.3}</text>"#,
        h - pad + 14.0,
        w - pad,
        h - pad + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{y1:.3}</text><text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{y0:.3}</text>"#,
        pad - 4.0,
        pad + 4.0,
        pad - 4.0,
        h - pad
    );
    for p in 0..k {
        let points: Vec<String> = xs
            .iter()
            .enumerate()
            .map(|(g, &x)| format!("{:.2},{:.2}", sx(x), sy(curve.values[[g, p]])))
            .collect();
        let color = PALETTE[p % PALETTE.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let name = table.param_names.get(p).map_or(String::new(), |n| escape_xml(n));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            pad + 6.0,
            pad + 14.0 + 13.0 * p as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        let c = if lo.is_finite() { lo } else { 0.0 };
        (c - 1.0, c + 1.0)
    } else {
        (lo, hi)
    }
}

/// Runs a parsed command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Shapes(a) => cmd_shapes(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_presets() {
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for p in ["ca-housing", "insurance", "fico", "airbnb"] {
            assert!(help.contains(p), "{p} missing from help");
        }
    }

    #[test]
    fn unknown_family_lists_ids() {
        let err = Cli::try_parse_from(["namlss", "simulate", "--family", "nosuch", "--out", "x.csv"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("inverse-gamma"), "{err}");
    }

    #[test]
    fn preset_resolution() {
        let cli = Cli::try_parse_from([
            "namlss", "train", "--data", "d.csv", "--target", "y", "--preset", "insurance", "--out", "m.json",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let plan = FitPlan::resolve(&a.fit).unwrap();
        assert_eq!(plan.hidden.hidden, vec![250, 50, 25]);
        assert_eq!(plan.hidden.dropout_after, Some(0));
        assert_eq!(plan.train.batch_size, 256);
        assert_eq!(plan.train.dropout, 0.5);
        assert_eq!(plan.family.id, FamilyId::Normal);
        assert_eq!(plan.target_mode, TargetMode::Standardize);
    }

    #[test]
    fn svg_has_one_polyline_per_parameter() {
        let curve = crate::model::ShapeCurve {
            feature: "a<b".into(),
            grid: vec![0.0, 1.0, 2.0],
            values: ndarray::array![[0.0, 1.0], [1.0, 0.5], [2.0, 0.0]],
            offsets: vec![0.0, 0.0],
        };
        let t = ShapeFunctionTable {
            param_names: vec!["mu".into(), "sigma2".into()],
            curves: vec![curve],
        };
        let svg = render_svg(&t, 0);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }
}
