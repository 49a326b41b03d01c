use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use backboot::backtest::{load_collection, run_backtest, save_collection};
use backboot::bootstrap::{write_forecasts_csv, write_samples_csv};
use backboot::dataset::{load_panel, save_panel, DataSchema, Panel};
use backboot::eval::{generate_synthetic, run_evaluation, NoiseKind, QuantileOracle, SyntheticSpec};
use backboot::pipeline::{train, TrainedDFModel};
use backboot::selector::{dependence_report, selector_sanity_check, Predicate, SelectorModel, DEFAULT_DCOR_CAP};
use backboot::{Error, Feature, ForecastTarget, Formula, RatioDenominator, SelectorKind, Stage};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::ConfigError;

/// Command-line values that replace configuration entries.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub formula: Option<Formula>,
    pub ratio_denominator: Option<RatioDenominator>,
    pub taus: Option<Vec<f64>>,
    pub folds: Option<usize>,
}

impl Overrides {
    /// Applies the overrides and returns them as `key = value` pairs.
    pub fn apply(&self, cfg: &mut RunConfig) -> BTreeMap<String, String> {
        let mut rec = BTreeMap::new();
        if let Some(seed) = self.seed {
            cfg.runtime.seed = seed;
            cfg.bootstrap.seed = seed;
            cfg.eval.seed = seed;
            for m in &mut cfg.methods {
                if let Some(b) = method_bootstrap(&mut m.kind) {
                    b.seed = seed;
                }
            }
            rec.insert("seed".into(), seed.to_string());
        }
        if let Some(f) = self.formula {
            cfg.bootstrap.formula = f;
            rec.insert("bootstrap.formula".into(), enum_name(&f));
        }
        if let Some(d) = self.ratio_denominator {
            cfg.bootstrap.ratio_denominator = d;
            rec.insert("bootstrap.ratio_denominator".into(), enum_name(&d));
        }
        if let Some(t) = &self.taus {
            cfg.forecast.taus = t.clone();
            cfg.eval.taus = t.clone();
            rec.insert("taus".into(), format!("{t:?}"));
        }
        if let Some(n) = self.folds {
            cfg.eval.n_folds = n;
            rec.insert("eval.n_folds".into(), n.to_string());
        }
        rec
    }
}

fn method_bootstrap(kind: &mut backboot::eval::MethodKind) -> Option<&mut backboot::BootstrapConfig> {
    use backboot::eval::MethodKind;
    match kind {
        MethodKind::Backtest { bootstrap, .. } | MethodKind::Fr { bootstrap } | MethodKind::Fm { bootstrap, .. } => {
            Some(bootstrap)
        }
        MethodKind::Oracle => None,
    }
}

fn enum_name<S: Serialize>(v: &S) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Written next to every command's outputs.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    tool_version: &'a str,
    config: &'a RunConfig,
    overrides: &'a BTreeMap<String, String>,
}

fn write_run_record(out: &Path, command: &str, cfg: &RunConfig, overrides: &BTreeMap<String, String>) -> anyhow::Result<()> {
    let rec = RunRecord { command, tool_version: env!("CARGO_PKG_VERSION"), config: cfg, overrides };
    write_json(&out.join("run.json"), &rec)?;
    let path = out.join("run.toml");
    std::fs::write(&path, cfg.to_toml()?).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn load_data(cfg: &RunConfig, data: Option<&Path>) -> anyhow::Result<Panel<f64>> {
    let path = cfg.data_path(data)?;
    Ok(load_panel(&path, &cfg.data.schema())?)
}

pub fn backtest(mut cfg: RunConfig, data: Option<&Path>, out: &Path, ov: &Overrides) -> anyhow::Result<()> {
    let overrides = ov.apply(&mut cfg);
    let panel = load_data(&cfg, data)?;
    let forecaster = cfg.model()?.build::<f64>()?;
    let plan = cfg.backtest.plan(&panel, forecaster.min_train_len())?;
    let coll = run_backtest(&panel, forecaster.as_ref(), &plan, cfg.runtime.seed).map_err(|e| e.in_stage(Stage::Backtest))?;
    ensure_dir(out)?;
    save_collection(&coll, out)?;
    write_run_record(out, "backtest", &cfg, &overrides)?;
    eprintln!("{} residuals from {} split points -> {}", coll.len(), coll.provenance().split_points.len(), out.display());
    Ok(())
}

pub fn train_cmd(mut cfg: RunConfig, data: Option<&Path>, out: &Path, ov: &Overrides) -> anyhow::Result<()> {
    let overrides = ov.apply(&mut cfg);
    let panel = load_data(&cfg, data)?;
    let forecaster = cfg.model()?.build::<f64>()?;
    let plan = cfg.backtest.plan(&panel, forecaster.min_train_len())?;
    let model = train(&panel, forecaster.as_ref(), &plan, &cfg.selector, &cfg.bootstrap)?;
    ensure_dir(out)?;
    model.save(out)?;
    write_run_record(out, "train", &cfg, &overrides)?;
    eprintln!("trained {} on {} residuals -> {}", model.config().model, model.residuals().len(), out.display());
    Ok(())
}

pub struct ForecastArgs<'a> {
    pub bundle: &'a Path,
    pub covariates: Option<&'a Path>,
    pub horizon: Option<usize>,
    pub samples: bool,
}

/// Data settings recorded by `train`; defaults when the bundle lacks them.
fn bundle_data_config(bundle: &Path) -> crate::config::DataConfig {
    std::fs::read_to_string(bundle.join("run.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| serde_json::from_value(v["config"]["data"].clone()).ok())
        .unwrap_or_default()
}

pub fn forecast(mut cfg: RunConfig, args: &ForecastArgs<'_>, out: &Path, ov: &Overrides) -> anyhow::Result<()> {
    if !args.bundle.join("config.json").exists() {
        return Err(Error::Io {
            path: args.bundle.join("config.json"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a model bundle"),
        }
        .into());
    }
    let model = TrainedDFModel::<f64>::load(args.bundle)?;
    cfg.bootstrap = model.bootstrap().clone();
    let overrides = ov.apply(&mut cfg);
    let model = model.with_bootstrap(cfg.bootstrap.clone(), overrides.clone())?;
    let data = bundle_data_config(args.bundle);
    let taus = &cfg.forecast.taus;
    for &t in taus {
        if !(t > 0.0 && t < 1.0) {
            bail!(ConfigError(format!("tau {t} outside (0, 1)")));
        }
    }
    let targets = match args.covariates {
        Some(path) => read_future_covariates(path, model.history(), &data.schema())?,
        None => {
            if !model.history().covariate_names().is_empty() {
                bail!(ConfigError("model uses covariates; pass --covariates with future values".into()));
            }
            let k = args
                .horizon
                .or(cfg.forecast.horizon)
                .ok_or_else(|| ConfigError("pass --horizon or set forecast.horizon".into()))?;
            model.history().series().iter().map(|s| ForecastTarget::univariate(s.id(), k)).collect()
        }
    };
    let dfs = model.forecast(&targets)?;
    ensure_dir(out)?;
    write_forecasts_csv(&dfs, taus, data.freq, create(&out.join("forecasts.csv"))?)?;
    if args.samples || cfg.forecast.write_samples {
        write_samples_csv(&dfs, data.freq, create(&out.join("samples.csv"))?)?;
    }
    #[derive(Serialize)]
    struct ForecastRecord<'a> {
        bundle: &'a Path,
        bundle_config: &'a backboot::BundleConfig,
        taus: &'a [f64],
        n_forecasts: usize,
        selector_fallbacks: usize,
        degenerate_multiplicative: usize,
    }
    write_json(
        &out.join("provenance.json"),
        &ForecastRecord {
            bundle: args.bundle,
            bundle_config: model.config(),
            taus,
            n_forecasts: dfs.len(),
            selector_fallbacks: dfs.iter().filter(|d| d.selector_fallback).count(),
            degenerate_multiplicative: dfs.iter().filter(|d| d.degenerate_multiplicative).count(),
        },
    )?;
    eprintln!("{} distribution forecasts -> {}", dfs.len(), out.display());
    Ok(())
}

/// Reads future covariates: one row per series and future time step, with
/// the id column, time column and every covariate of the training panel.
fn read_future_covariates(path: &Path, history: &Panel<f64>, schema: &DataSchema) -> anyhow::Result<Vec<ForecastTarget>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{} is missing column {name:?}", path.display())))
    };
    let id_col = col(&schema.id_col)?;
    let time_col = col(&schema.time_col)?;
    let cov_cols = history.covariate_names().iter().map(|n| col(n)).collect::<Result<Vec<_>, _>>()?;
    let mut rows: BTreeMap<String, Vec<(i64, Vec<f64>)>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(Error::from)?;
        let row = k + 2;
        let t = schema.freq.parse_time(&rec[time_col]).map_err(|message| Error::Parse { row, message })?;
        let x = cov_cols
            .iter()
            .map(|&c| {
                rec[c].parse::<f64>().map_err(|_| Error::Parse { row, message: format!("{:?} is not a number", &rec[c]) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.entry(rec[id_col].to_string()).or_default().push((t, x));
    }
    let mut targets = Vec::with_capacity(rows.len());
    for (id, mut steps) in rows {
        let series = history.get(&id).ok_or_else(|| Error::Schema(format!("series {id:?} is not in the training data")))?;
        steps.sort_by_key(|(t, _)| *t);
        for (k, (t, _)) in steps.iter().enumerate() {
            let want = series.end() + 1 + k as i64;
            if *t != want {
                return Err(Error::Gap { series: id, position: want }.into());
            }
        }
        targets.push(ForecastTarget::new(id, steps.into_iter().map(|(_, x)| x).collect()));
    }
    if targets.is_empty() {
        bail!(Error::Schema(format!("{} has no rows", path.display())));
    }
    Ok(targets)
}

pub fn evaluate(mut cfg: RunConfig, data: Option<&Path>, out: &Path, ov: &Overrides) -> anyhow::Result<()> {
    let overrides = ov.apply(&mut cfg);
    if cfg.methods.is_empty() {
        bail!(ConfigError("no [[methods]] configured".into()));
    }
    let forecaster = cfg.model()?.build::<f64>()?;
    let (panel, synthetic) = match (data.is_some() || cfg.data.path.is_some(), &cfg.simulate) {
        (true, _) => (load_data(&cfg, data)?, None),
        (false, Some(spec)) => {
            let d = generate_synthetic(spec)?;
            (d.panel.clone(), Some(d))
        }
        (false, None) => bail!(ConfigError("evaluate needs --data, data.path or a [simulate] section".into())),
    };
    let oracle = synthetic.as_ref().map(|d| &d.oracle as &dyn QuantileOracle);
    let report = match &synthetic {
        Some(d) if d.spec.noise_kind == NoiseKind::BiasedPfProbe => {
            run_evaluation(&panel, &d.probe_forecaster(forecaster), &cfg.methods, &cfg.eval, oracle)?
        }
        _ => run_evaluation(&panel, forecaster.as_ref(), &cfg.methods, &cfg.eval, oracle)?,
    };
    ensure_dir(out)?;
    let mut json = serde_json::to_value(&report)?;
    let runtime = json.as_object_mut().and_then(|o| o.remove("runtime_secs"));
    write_json(&out.join("report.json"), &json)?;
    write_json(&out.join("timing.json"), &serde_json::json!({ "runtime_secs": runtime }))?;
    report.write_csv(create(&out.join("folds.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    w.write_record(["method", "n_points", "mean_ace", "mean_ace_pooled", "mean_pinball", "mape_pf", "mape_bagging"])?;
    for m in &report.methods {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            m.name.clone(),
            m.n_points.to_string(),
            m.mean_ace.to_string(),
            m.mean_ace_pooled.to_string(),
            m.mean_pinball.to_string(),
            opt(m.mape_pf),
            opt(m.mape_bagging),
        ])?;
    }
    w.flush()?;
    write_run_record(out, "evaluate", &cfg, &overrides)?;
    for m in &report.methods {
        println!("{}\tmean_ace={:.4}\tpinball={:.4}\tpoints={}", m.name, m.mean_ace, m.mean_pinball, m.n_points);
    }
    Ok(())
}

pub struct SimulateArgs {
    pub kind: Option<NoiseKind>,
    pub series: Option<usize>,
    pub length: Option<usize>,
    pub sigma: Option<f64>,
    pub trend: Option<f64>,
    pub season: Option<f64>,
    pub drift: Option<f64>,
    pub bias: Option<f64>,
    pub noise_covariates: Option<usize>,
}

pub fn simulate(cfg: Option<RunConfig>, args: &SimulateArgs, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let base = cfg.and_then(|c| c.simulate);
    let mut spec = match (base, args.kind) {
        (Some(s), _) => s,
        (None, Some(kind)) => SyntheticSpec::new(kind, 20, 300, 1.0, 0),
        (None, None) => bail!(ConfigError("pass --kind or a config with a [simulate] section".into())),
    };
    if let Some(k) = args.kind {
        spec.noise_kind = k;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { spec.$field = v; })* };
    }
    set!(trend, season, drift, bias, noise_covariates, sigma);
    if let Some(n) = args.series {
        spec.n_series = n;
    }
    if let Some(n) = args.length {
        spec.length = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    ensure_dir(out)?;
    save_panel(&data.panel, out.join("panel.csv"), &DataSchema::default())?;
    write_json(&out.join("spec.json"), &spec)?;
    eprintln!("{} series x {} points -> {}", spec.n_series, spec.length, out.display());
    Ok(())
}

pub struct DiagnoseArgs<'a> {
    pub residuals: &'a Path,
    pub features: Vec<String>,
    pub rules: Vec<String>,
    pub cap: Option<usize>,
}

pub fn diagnose(cfg: Option<RunConfig>, args: &DiagnoseArgs<'_>, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let coll = load_collection::<f64>(args.residuals)?;
    let features: Vec<Feature> = if args.features.is_empty() {
        let mut f = vec![Feature::Horizon, Feature::SplitPoint, Feature::TargetTime, Feature::Forecast];
        f.extend(coll.extra_names().into_iter().map(Feature::Extra));
        f
    } else {
        args.features.iter().map(|s| s.parse()).collect::<backboot::Result<_>>().map_err(|e| ConfigError(e.to_string()))?
    };
    let rules: Vec<Predicate<f64>> =
        args.rules.iter().map(|s| s.parse()).collect::<backboot::Result<_>>().map_err(|e| ConfigError(e.to_string()))?;
    let seed = seed.or(cfg.as_ref().map(|c| c.runtime.seed)).unwrap_or(0);
    let dependence = dependence_report(&coll, &features, args.cap.unwrap_or(DEFAULT_DCOR_CAP), seed)?
        .with_rule_checks(&coll, &rules)?;
    let selector = match cfg.as_ref().map(|c| &c.selector) {
        Some(sc) if sc.variant != SelectorKind::Identity => sc.fit(&coll).map_err(|e| e.in_stage(Stage::Selector))?,
        _ if !rules.is_empty() => SelectorModel::rules(rules),
        _ => SelectorModel::identity(),
    };
    let sanity = selector_sanity_check(&selector, &coll)?;
    ensure_dir(out)?;
    write_json(&out.join("diagnostics.json"), &serde_json::json!({ "dependence": dependence, "sanity": sanity }))?;
    for f in &dependence.features {
        println!("{}\t{:.4}", f.feature, f.dcor);
    }
    Ok(())
}

/// Comma-separated quantile levels from the command line.
#[derive(Debug, Clone)]
pub struct Taus(pub Vec<f64>);

pub fn parse_taus(raw: &str) -> Result<Taus, String> {
    let taus = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(format!("tau {t} outside (0, 1)"));
    }
    Ok(Taus(taus))
}

pub fn default_out(cmd: &str) -> PathBuf {
    PathBuf::from(format!("backboot-{cmd}"))
}

