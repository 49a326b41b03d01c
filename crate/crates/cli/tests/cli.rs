use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_backboot"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn backboot")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Two series on 0..=19 with one covariate; `y = 2x + 1 ± 0.5`.
fn write_toy(dir: &Path) -> PathBuf {
    let mut csv = String::from("series_id,timestamp,target,x\n");
    for (id, scale) in [("a", 1.0), ("b", 3.0)] {
        for t in 0..20 {
            let x = scale * (t as f64 + 1.0);
            let wiggle = if t % 2 == 0 { 0.5 } else { -0.5 };
            csv.push_str(&format!("{id},{t},{},{x}\n", 2.0 * x + 1.0 + wiggle));
        }
    }
    let path = dir.join("toy.csv");
    fs::write(&path, csv).unwrap();
    path
}

const TOY_CONFIG: &str = r#"
version = 1
[model]
kind = "ridge"
lambda = 0.01
[backtest]
start = 9
step = 2
max_horizon = 3
[bootstrap]
B = 400
seed = 11
"#;

fn toy_setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    fs::write(dir.path().join("run.toml"), TOY_CONFIG).unwrap();
    dir
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

#[test]
fn backtest_writes_enumerated_residual_count() {
    let dir = toy_setup();
    ok(&["backtest", "--config", "run.toml", "--data", "toy.csv", "--out", "bt"], dir.path());
    // Splits 9, 11, …, 17 (strictly before the last index 19); each contributes
    // min(H, 19 − j) horizons per series.
    let per_series: i64 = (9..19).step_by(2).map(|j| (19 - j).min(3)).sum();
    let (header, rows) = read_rows(&dir.path().join("bt/residuals.csv"));
    assert_eq!(header[..3], ["eps", "series_id", "j"]);
    assert_eq!(rows.len() as i64, 2 * per_series);
    assert!(dir.path().join("bt/provenance.json").exists());
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bt/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["bootstrap"]["B"], 400);
    assert_eq!(run["config"]["eval"]["n_folds"], 20);
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = toy_setup();
    fs::write(dir.path().join("bad.toml"), "version = 1\n[backtest]\nmax_horizn = 3\n").unwrap();
    let out = run(&["backtest", "--config", "bad.toml", "--data", "toy.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_horizn"));
}

#[test]
fn missing_data_file_exits_3() {
    let dir = toy_setup();
    let out = run(&["backtest", "--config", "run.toml", "--data", "nowhere.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["forecast", "--bundle", "no_bundle", "--horizon", "2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn singular_fit_exits_4() {
    let dir = toy_setup();
    let cfg = TOY_CONFIG.replace("lambda = 0.01", "lambda = 0.0");
    fs::write(dir.path().join("zero.toml"), cfg).unwrap();
    let mut csv = String::from("series_id,timestamp,target,x,x2\n");
    for t in 0..20 {
        csv.push_str(&format!("a,{t},{t},1,1\n"));
    }
    fs::write(dir.path().join("collinear.csv"), csv).unwrap();
    let out = run(&["train", "--config", "zero.toml", "--data", "collinear.csv"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_future(dir: &Path) {
    let mut csv = String::from("series_id,timestamp,x\n");
    for (id, scale) in [("a", 1.0), ("b", 3.0)] {
        for t in 20..23 {
            csv.push_str(&format!("{id},{t},{}\n", scale * (t as f64 + 1.0)));
        }
    }
    fs::write(dir.join("future.csv"), csv).unwrap();
}

#[test]
fn train_then_forecast_gives_monotone_quantiles() {
    let dir = toy_setup();
    write_future(dir.path());
    ok(&["train", "--config", "run.toml", "--data", "toy.csv", "--out", "bundle"], dir.path());
    for f in ["model.json", "residuals.csv", "selector.json", "config.json", "provenance.json"] {
        assert!(dir.path().join("bundle").join(f).exists(), "{f}");
    }
    ok(&["forecast", "--bundle", "bundle", "--covariates", "future.csv", "--out", "fc"], dir.path());
    let (header, rows) = read_rows(&dir.path().join("fc/forecasts.csv"));
    assert_eq!(header.len(), 4 + 9);
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let qs: Vec<f64> = row[4..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
    }
    assert_eq!(rows[0][..3], ["a", "20", "1"]);
}

#[test]
fn single_tau_and_override_are_recorded() {
    let dir = toy_setup();
    write_future(dir.path());
    ok(&["train", "--config", "run.toml", "--data", "toy.csv", "--out", "bundle"], dir.path());
    ok(
        &[
            "forecast",
            "--bundle",
            "bundle",
            "--covariates",
            "future.csv",
            "--taus",
            "0.5",
            "--formula",
            "multiplicative",
            "--ratio-denominator",
            "observed-response",
            "--out",
            "fc",
        ],
        dir.path(),
    );
    let (header, _) = read_rows(&dir.path().join("fc/forecasts.csv"));
    assert_eq!(header, ["series_id", "time", "horizon", "point_forecast", "q_0.5"]);
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fc/provenance.json")).unwrap()).unwrap();
    let ov = &prov["bundle_config"]["overrides"];
    assert_eq!(ov["bootstrap.formula"], "multiplicative");
    assert_eq!(ov["bootstrap.ratio_denominator"], "observed_response");
    assert_eq!(prov["bundle_config"]["bootstrap"]["formula"], "multiplicative");
}

#[test]
fn forecast_rejects_covariate_schema_mismatch() {
    let dir = toy_setup();
    ok(&["train", "--config", "run.toml", "--data", "toy.csv", "--out", "bundle"], dir.path());
    fs::write(dir.path().join("future.csv"), "series_id,timestamp,z\na,20,1\n").unwrap();
    let out = run(&["forecast", "--bundle", "bundle", "--covariates", "future.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"x\""));
}

const EVAL_CONFIG: &str = r#"
version = 1
[model]
kind = "ridge"
lambda = 0.01
[eval]
n_folds = 3
horizon = 2
[simulate]
n_series = 4
length = 60
noise_kind = "additive_gaussian"
sigma = 1.0
seed = 2
[[methods]]
name = "BA"
method = "backtest"
[methods.bootstrap]
B = 200
[[methods]]
name = "FR"
method = "fr"
[methods.bootstrap]
B = 200
"#;

#[test]
fn evaluate_reports_each_method_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("eval.toml"), EVAL_CONFIG).unwrap();
    ok(&["evaluate", "--config", "eval.toml", "--seed", "9", "--out", "e1"], dir.path());
    ok(&["evaluate", "--config", "eval.toml", "--seed", "9", "--workers", "1", "--out", "e2"], dir.path());
    let (header, rows) = read_rows(&dir.path().join("e1/summary.csv"));
    assert_eq!(header[2], "mean_ace");
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["BA", "FR"]);
    for f in ["report.json", "folds.csv", "summary.csv"] {
        assert_eq!(fs::read(dir.path().join("e1").join(f)).unwrap(), fs::read(dir.path().join("e2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_honors_folds_flag() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("eval.toml"), EVAL_CONFIG.replace("length = 60", "length = 220")).unwrap();
    ok(&["evaluate", "--config", "eval.toml", "--folds", "100", "--out", "e"], dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_folds"], 100);
    assert_eq!(report["origins"].as_array().unwrap().len(), 100);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("e/run.json")).unwrap()).unwrap();
    assert_eq!(run["overrides"]["eval.n_folds"], "100");
}

#[test]
fn simulate_with_tiny_sigma_is_near_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--kind", "additive-gaussian", "--series", "2", "--length", "30", "--sigma", "1e-12", "--out", "s"], dir.path());
    let (header, rows) = read_rows(&dir.path().join("s/panel.csv"));
    assert_eq!(header[..4], ["series_id", "timestamp", "target", "level"]);
    assert_eq!(rows.len(), 60);
    for row in rows {
        let (y, level): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
        assert!((y - level).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn diagnose_ranks_horizon_first_on_random_walk_residuals() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["simulate", "--kind", "horizon-heteroscedastic", "--series", "10", "--length", "120", "--sigma", "1", "--seed", "3", "--out", "s"],
        dir.path(),
    );
    let cfg = "version = 1\n[data]\ncovariates = []\n[model]\nkind = \"seasonal_naive\"\nperiod = 1\n[backtest]\nstart = 40\nmax_horizon = 8\n";
    fs::write(dir.path().join("rw.toml"), cfg).unwrap();
    ok(&["backtest", "--config", "rw.toml", "--data", "s/panel.csv", "--out", "bt"], dir.path());
    ok(&["diagnose", "--residuals", "bt/residuals.csv", "--rule", "horizon <= 2", "--out", "dg"], dir.path());
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dg/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["dependence"]["features"][0]["feature"], "horizon");
    assert!(d["sanity"]["entries"].as_array().unwrap().iter().any(|e| e["significant"] == true));
}

#[test]
fn diagnose_on_zero_residuals_gives_zero_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("eps,series_id,j,t,h,forecast,observed\n");
    for j in 10..20 {
        for h in 1..=3 {
            let v = (j * h) as f64;
            csv.push_str(&format!("0,a,{j},{},{h},{v},{v}\n", j + h));
        }
    }
    fs::write(dir.path().join("zero.csv"), csv).unwrap();
    ok(&["diagnose", "--residuals", "zero.csv", "--out", "dg"], dir.path());
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dg/diagnostics.json")).unwrap()).unwrap();
    let feats = d["dependence"]["features"].as_array().unwrap();
    assert_eq!(feats.len(), 4);
    assert!(feats.iter().all(|f| f["dcor"] == 0.0), "{feats:?}");
}
