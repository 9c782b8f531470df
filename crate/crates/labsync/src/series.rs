//! Regularly sampled multi-channel time series.
//!
//! `UniformSeries` is the signal carrier shared by every other module. The
//! timestamp of row `i` is always `start_time + i / rate`; no per-row
//! timestamps are stored. Values may be NaN where a row is a marked gap
//! (marker occlusions); all numeric kernels state how they treat gaps.

use crate::error::{Error, Result};

/// Relative tolerance used when comparing sampling rates.
const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    start_time: f64,
    rate: f64,
    channel_names: Vec<String>,
    /// Column-major storage: one `Vec<f64>` per channel, all equal length.
    channels: Vec<Vec<f64>>,
}

impl UniformSeries {
    pub fn new(
        start_time: f64,
        rate: f64,
        channel_names: Vec<String>,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::NonPositiveRate(rate));
        }
        if channel_names.len() != channels.len() {
            return Err(Error::InvalidSeries(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                channels.len()
            )));
        }
        if channels.is_empty() {
            return Err(Error::InvalidSeries(
                "series needs at least one channel".into(),
            ));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidSeries("channels differ in length".into()));
        }
        if !start_time.is_finite() {
            return Err(Error::InvalidSeries("non-finite start time".into()));
        }
        Ok(Self {
            start_time,
            rate,
            channel_names,
            channels,
        })
    }

    /// Single-channel convenience constructor.
    pub fn single(start_time: f64, rate: f64, name: &str, values: Vec<f64>) -> Result<Self> {
        Self::new(start_time, rate, vec![name.to_string()], vec![values])
    }

    /// Build from row-major data (one inner `Vec` per time step).
    pub fn from_rows(
        start_time: f64,
        rate: f64,
        channel_names: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let n_ch = channel_names.len();
        let mut channels = vec![Vec::with_capacity(rows.len()); n_ch];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_ch {
                return Err(Error::InvalidSeries(format!(
                    "row {i} has {} values, expected {n_ch}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                channels[c].push(v);
            }
        }
        Self::new(start_time, rate, channel_names, channels)
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    /// Timestamp of the last row.
    pub fn end_time(&self) -> f64 {
        self.time_at(self.len().saturating_sub(1))
    }

    pub fn duration(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            (self.len() - 1) as f64 / self.rate
        }
    }

    pub fn time_at(&self, row: usize) -> f64 {
        self.start_time + row as f64 / self.rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channel_by_name(&self, name: &str) -> Result<&[f64]> {
        let idx = self
            .channel_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))?;
        Ok(&self.channels[idx])
    }

    /// Extract one channel as a new single-channel series.
    pub fn select_channel(&self, name: &str) -> Result<UniformSeries> {
        let values = self.channel_by_name(name)?.to_vec();
        UniformSeries::single(self.start_time, self.rate, name, values)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c[i]).collect()
    }

    pub fn rates_match(&self, other: &UniformSeries) -> bool {
        rates_equal(self.rate, other.rate)
    }

    /// Linear interpolation of every channel at time `t`; `None` outside the span.
    pub fn sample_at(&self, t: f64) -> Option<Vec<f64>> {
        let pos = (t - self.start_time) * self.rate;
        let n = self.len();
        if n == 0 || pos < -1e-9 || pos > (n - 1) as f64 + 1e-9 {
            return None;
        }
        let pos = pos.clamp(0.0, (n - 1) as f64);
        Some(self.channels.iter().map(|c| lerp_at(c, pos)).collect())
    }

    /// Sub-series over the half-open row range `[a, b)`.
    pub fn slice_rows(&self, a: usize, b: usize) -> Result<UniformSeries> {
        if a >= b || b > self.len() {
            return Err(Error::InvalidSeries(format!(
                "row range [{a}, {b}) invalid for length {}",
                self.len()
            )));
        }
        let channels = self.channels.iter().map(|c| c[a..b].to_vec()).collect();
        UniformSeries::new(
            self.time_at(a),
            self.rate,
            self.channel_names.clone(),
            channels,
        )
    }

    /// Carve `[t0, t1]` onto the sample grid: start rounded down, end rounded
    /// up, clamped to the series. Errors when the window misses the span.
    pub fn slice_time(&self, t0: f64, t1: f64) -> Result<UniformSeries> {
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(Error::InvalidSeries(format!(
                "time window [{t0}, {t1}] is empty"
            )));
        }
        let a = ((t0 - self.start_time) * self.rate + 1e-9).floor().max(0.0) as usize;
        let b_excl = ((t1 - self.start_time) * self.rate - 1e-9).ceil() as i64;
        let b = (b_excl.max(0) as usize).min(self.len());
        if a >= b {
            return Err(Error::InvalidSeries(format!(
                "time window [{t0}, {t1}] outside series span [{}, {}]",
                self.start_time,
                self.end_time()
            )));
        }
        self.slice_rows(a, b)
    }

    /// Resample onto a new uniform grid at `target_rate` by linear
    /// interpolation. The output starts at the same instant and is truncated
    /// to the last original timestamp. Original sample values are reproduced
    /// bit-exactly when `target_rate` is an integer multiple of the rate.
    pub fn resample(&self, target_rate: f64) -> Result<UniformSeries> {
        if !target_rate.is_finite() || target_rate <= 0.0 {
            return Err(Error::NonPositiveRate(target_rate));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::TooShort { len: n, min: 2 });
        }
        if rates_equal(self.rate, target_rate) {
            return Ok(self.clone());
        }
        let last = (n - 1) as f64;
        // Number of output samples: all k with k*rate/target <= n-1 (+eps).
        let m = ((last * target_rate) / self.rate + 1e-9).floor() as usize + 1;
        let mut channels = Vec::with_capacity(self.channels.len());
        for ch in &self.channels {
            let mut out = Vec::with_capacity(m);
            for k in 0..m {
                // (k * rate) / target is exact at knots for integer ratios.
                let pos = (k as f64 * self.rate) / target_rate;
                out.push(lerp_at(ch, pos.clamp(0.0, last)));
            }
            channels.push(out);
        }
        UniformSeries::new(
            self.start_time,
            target_rate,
            self.channel_names.clone(),
            channels,
        )
    }

    /// Per-row Euclidean norm of a 3-channel series.
    pub fn magnitude(&self) -> Result<UniformSeries> {
        if self.channel_count() != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                got: self.channel_count(),
            });
        }
        let (x, y, z) = (&self.channels[0], &self.channels[1], &self.channels[2]);
        let values = x
            .iter()
            .zip(y.iter())
            .zip(z.iter())
            .map(|((&a, &b), &c)| (a * a + b * b + c * c).sqrt())
            .collect();
        UniformSeries::single(self.start_time, self.rate, "magnitude", values)
    }

    /// Replace the start time, keeping samples and rate.
    pub fn with_start_time(&self, start_time: f64) -> UniformSeries {
        let mut out = self.clone();
        out.start_time = start_time;
        out
    }
}

pub(crate) fn rates_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATE_TOL * a.abs().max(b.abs())
}

/// Linear interpolation of `values` at fractional index `pos` (in range).
pub(crate) fn lerp_at(values: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 || i + 1 >= values.len() {
        values[i.min(values.len() - 1)]
    } else {
        (1.0 - frac) * values[i] + frac * values[i + 1]
    }
}
