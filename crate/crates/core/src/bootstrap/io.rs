//! CSV output of distribution forecasts.

use std::io::Write;

use super::DistributionForecast;
use crate::dataset::Frequency;
use crate::error::Result;
use crate::scalar::Scalar;

/// Writes `series_id, time, horizon, point_forecast, q_<tau>…`.
pub fn write_forecasts_csv<T: Scalar, W: Write>(
    dfs: &[DistributionForecast<T>],
    taus: &[f64],
    freq: Frequency,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["series_id".to_string(), "time".into(), "horizon".into(), "point_forecast".into()];
    header.extend(taus.iter().map(|t| format!("q_{t}")));
    w.write_record(&header)?;
    for d in dfs {
        let mut row = vec![d.series_id.clone(), freq.format_time(d.target_time), d.horizon.to_string(), d.point_forecast.to_string()];
        for q in d.quantiles(taus)? {
            row.push(q.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<forecast csv>", e))?;
    Ok(())
}

/// Writes raw bootstrap samples as `series_id, time, b, value`.
pub fn write_samples_csv<T: Scalar, W: Write>(dfs: &[DistributionForecast<T>], freq: Frequency, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "time", "b", "value"])?;
    for d in dfs {
        let time = freq.format_time(d.target_time);
        for (b, v) in d.samples.iter().enumerate() {
            w.write_record([d.series_id.as_str(), time.as_str(), &b.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| crate::error::Error::io("<samples csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_quantile_columns() {
        let d = DistributionForecast {
            series_id: "a".into(),
            origin: 4,
            horizon: 1,
            target_time: 5,
            point_forecast: 2.0,
            samples: vec![1.0, 2.0, 3.0],
            selector_fallback: false,
            excluded_ratio_count: 0,
            degenerate_multiplicative: false,
            dropped_samples: 0,
        };
        let mut buf = Vec::new();
        write_forecasts_csv(std::slice::from_ref(&d), &[0.1, 0.5], Frequency::Integer, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "series_id,time,horizon,point_forecast,q_0.1,q_0.5\na,5,1,2,1.2,2\n");
        let mut buf = Vec::new();
        write_samples_csv(&[d], Frequency::Integer, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
