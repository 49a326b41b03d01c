use approx::{assert_abs_diff_eq, assert_relative_eq};
use backboot::bootstrap::{bootstrap_additive, bootstrap_multiplicative};
use backboot::dataset::split_at;
use backboot::eval::{generate_synthetic, NoiseKind, QuantileOracle, SyntheticSpec};
use backboot::forecasters::Ridge;
use backboot::rng::stream;
use backboot::{train, BacktestPlan, BootstrapConfig, ForecastTarget, SelectorConfig, TrainedDFModel};

const TAUS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

fn trained(origin: i64) -> (backboot::eval::SyntheticData, TrainedDFModel) {
    let mut spec = SyntheticSpec::new(NoiseKind::AdditiveGaussian, 10, 200, 1.0, 3);
    spec.season = 3.0;
    let d = generate_synthetic(&spec).unwrap();
    let (history, _) = split_at(&d.panel, origin);
    let model = train(
        &history,
        &Ridge::new(1e-3).unwrap(),
        &BacktestPlan::new(100, 1, 4).unwrap(),
        &SelectorConfig::default(),
        &BootstrapConfig::additive(2000, 3),
    )
    .unwrap();
    (d, model)
}

#[test]
fn forecast_quantiles_track_the_generating_process() {
    let origin = 190;
    let (d, model) = trained(origin);
    let dfs = model.forecast(&ForecastTarget::from_panel(&d.panel, origin, 4)).unwrap();
    assert_eq!(dfs.len(), 40);
    let mut err = 0.0;
    let mut n = 0.0;
    for df in &dfs {
        let qs = df.quantiles(&TAUS).unwrap();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]));
        for (&tau, q) in TAUS.iter().zip(&qs) {
            let truth = d.oracle.quantile(&df.series_id, df.origin, df.horizon, tau).unwrap();
            err += (q - truth).abs();
            n += 1.0;
        }
    }
    assert_abs_diff_eq!(err / n, 0.0, epsilon = 0.5);
}

#[test]
fn reloaded_bundle_forecasts_identically() {
    let origin = 180;
    let (d, model) = trained(origin);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = TrainedDFModel::load(dir.path()).unwrap();
    let targets = ForecastTarget::from_panel(&d.panel, origin, 3);
    assert_eq!(model.forecast(&targets).unwrap(), loaded.forecast(&targets).unwrap());
}

#[test]
fn additive_samples_shift_with_the_point_forecast() {
    let residuals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let base = bootstrap_additive(2.0, &residuals, 500, &mut stream(9, &[1])).unwrap();
    let shifted = bootstrap_additive(2.0 + 13.5, &residuals, 500, &mut stream(9, &[1])).unwrap();
    for (a, b) in base.iter().zip(&shifted) {
        assert_abs_diff_eq!(a + 13.5, *b, epsilon = 1e-12);
    }
}

#[test]
fn multiplicative_samples_scale_with_the_point_forecast() {
    let ratios: Vec<f64> = (0..50).map(|i| 0.1 * (i as f64 * 0.91).cos()).collect();
    let base = bootstrap_multiplicative(4.0, &ratios, 500, &mut stream(9, &[2])).unwrap();
    let scaled = bootstrap_multiplicative(4.0 * 2.5, &ratios, 500, &mut stream(9, &[2])).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert_relative_eq!(a * 2.5, *b, max_relative = 1e-12);
    }
}
