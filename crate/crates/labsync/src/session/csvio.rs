//! Stream CSV interchange: header `t,<ch1>,<ch2>,...`, `t` in seconds as
//! decimal text, one row per sample. Gap cells are empty (or `nan`).
//! Uniformity of the time column is validated to 1e-6 s of jitter before
//! conversion to a `UniformSeries`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::UniformSeries;

/// Maximum deviation of any timestamp from the fitted uniform grid.
pub const MAX_JITTER: f64 = 1e-6;

fn stream_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Stream {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Write a series; values are multiplied by `scale` on the way out (to
/// express SI-held data in the declared file unit).
pub fn write_series_csv(path: &Path, series: &UniformSeries, scale: f64) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "t")?;
    for name in series.channel_names() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for i in 0..series.len() {
        write!(w, "{}", series.time_at(i))?;
        for c in 0..series.channel_count() {
            let v = series.channel(c)[i];
            if v.is_finite() {
                write!(w, ",{}", v * scale)?;
            } else {
                write!(w, ",")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a stream CSV. When `declared_rate` is given the time column must
/// agree with it; otherwise the rate is inferred from the file. `scale`
/// multiplies every value on the way in (unit conversion to SI).
pub fn read_series_csv(
    path: &Path,
    declared_rate: Option<f64>,
    scale: f64,
) -> Result<UniformSeries> {
    let file = std::fs::File::open(path).map_err(|e| stream_err(path, e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| stream_err(path, "empty file"))?
        .map_err(|e| stream_err(path, e.to_string()))?;
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("t") {
        return Err(stream_err(path, "first header column must be 't'"));
    }
    let names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if names.is_empty() {
        return Err(stream_err(path, "no data columns"));
    }

    let mut times = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| stream_err(path, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: f64 = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| stream_err(path, format!("row {}: bad timestamp", lineno + 2)))?;
        times.push(t);
        for (c, chan) in channels.iter_mut().enumerate() {
            let cell = fields.next().ok_or_else(|| {
                stream_err(
                    path,
                    format!("row {}: missing column {}", lineno + 2, c + 2),
                )
            })?;
            let cell = cell.trim();
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                cell.parse().map_err(|_| {
                    stream_err(path, format!("row {}: bad value {cell:?}", lineno + 2))
                })?
            };
            chan.push(v * scale);
        }
        if fields.next().is_some() {
            return Err(stream_err(
                path,
                format!("row {}: too many columns", lineno + 2),
            ));
        }
    }
    if times.len() < 2 {
        return Err(stream_err(path, "need at least 2 rows"));
    }

    let inferred = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
    let rate = match declared_rate {
        Some(declared) => {
            if (inferred - declared).abs() > 1e-3 * declared {
                return Err(stream_err(
                    path,
                    format!("file rate {inferred:.6} Hz does not match declared {declared} Hz"),
                ));
            }
            declared
        }
        None => inferred,
    };
    let start = times[0];
    for (i, &t) in times.iter().enumerate() {
        let expected = start + i as f64 / rate;
        if (t - expected).abs() > MAX_JITTER {
            return Err(stream_err(
                path,
                format!(
                    "row {}: jitter {:.2e} s exceeds {MAX_JITTER:.0e}",
                    i + 2,
                    t - expected
                ),
            ));
        }
    }
    UniformSeries::new(start, rate, names, channels)
}

/// Read only the header and the first two rows: channel names and the
/// implied rate, for cheap manifest-time validation.
pub fn probe_csv(path: &Path) -> Result<(Vec<String>, Option<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| stream_err(path, e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| stream_err(path, "empty file"))?
        .map_err(|e| stream_err(path, e.to_string()))?;
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("t") {
        return Err(stream_err(path, "first header column must be 't'"));
    }
    let names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    let mut first_two = Vec::new();
    for line in lines.take(2) {
        let line = line.map_err(|e| stream_err(path, e.to_string()))?;
        let t: f64 = line
            .split(',')
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| stream_err(path, "bad timestamp in first rows"))?;
        first_two.push(t);
    }
    let rate = match first_two.as_slice() {
        [a, b] if b > a => Some(1.0 / (b - a)),
        _ => None,
    };
    Ok((names, rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_series() -> UniformSeries {
        UniformSeries::from_rows(
            0.5,
            50.0,
            vec!["x".into(), "y".into(), "z".into()],
            &(0..100)
                .map(|i| vec![i as f64, -(i as f64) * 0.5, f64::NAN])
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_values_and_gaps() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = sample_series();
        write_series_csv(&path, &s, 1.0).unwrap();
        let back = read_series_csv(&path, Some(50.0), 1.0).unwrap();
        assert_eq!(back.rate(), 50.0);
        assert_eq!(back.start_time(), 0.5);
        assert_eq!(back.channel(0), s.channel(0));
        assert!(back.channel(2).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn unit_scale_applied() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = UniformSeries::single(0.0, 10.0, "x", vec![1000.0, 2000.0, 3000.0]).unwrap();
        write_series_csv(&path, &s, 1.0).unwrap();
        let back = read_series_csv(&path, Some(10.0), 0.001).unwrap();
        assert_eq!(back.channel(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rate_mismatch_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_series_csv(&path, &sample_series(), 1.0).unwrap();
        let err = read_series_csv(&path, Some(100.0), 1.0).unwrap_err();
        assert!(err.to_string().contains("does not match declared"));
    }

    #[test]
    fn jitter_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut text = String::from("t,x\n");
        for i in 0..50 {
            let t = i as f64 / 50.0 + if i == 25 { 5e-5 } else { 0.0 };
            text.push_str(&format!("{t},{i}\n"));
        }
        std::fs::write(&path, text).unwrap();
        let err = read_series_csv(&path, Some(50.0), 1.0).unwrap_err();
        assert!(err.to_string().contains("jitter"), "{err}");
    }

    #[test]
    fn probe_reports_names_and_rate() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_series_csv(&path, &sample_series(), 1.0).unwrap();
        let (names, rate) = probe_csv(&path).unwrap();
        assert_eq!(names, vec!["x", "y", "z"]);
        assert!((rate.unwrap() - 50.0).abs() < 1e-6);
    }
}
