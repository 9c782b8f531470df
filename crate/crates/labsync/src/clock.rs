//! Perturbation-based device alignment and affine clock-drift correction.
//!
//! All smartphones record the same half-tube rocking pattern; the lag of
//! each probe device relative to the reference is measured by gyroscope
//! cross-correlation at a perturbation event near the start and another
//! near the end of the session. Two lags identify an affine clock model
//! (skew + offset) which is then applied to remap the probe's streams onto
//! the reference timeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{lerp_at, UniformSeries};
use crate::xcorr::{estimate_lag, LagEstimate, LagMethod};

/// Minimum spacing between the two drift-fitting events; below this the
/// skew is not identifiable on consumer clocks.
pub const MIN_EVENT_SPACING: f64 = 60.0;

/// Sanity bound on |skew - 1| for consumer devices.
pub const SKEW_BOUND: f64 = 1e-3;

/// A rocking-perturbation window, in each device's own clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationEvent {
    /// (start, end) seconds; at least 2 s long.
    pub window: (f64, f64),
    /// Gyroscope channel to correlate; `None` picks the axis with the
    /// largest variance inside the window per device.
    #[serde(default)]
    pub axis: Option<String>,
}

impl PerturbationEvent {
    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.window;
        let window_ok = end > start && end - start >= 2.0;
        if !window_ok {
            return Err(Error::Manifest(format!(
                "perturbation window [{start}, {end}] must span at least 2 s"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.window.0 + self.window.1)
    }
}

/// Affine map from reference time to a device's own clock.
///
/// `probe_time(t) = skew * t + offset` is where the probe's recording of
/// reference instant `t` lives; applying the model resamples the probe
/// onto the reference timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub skew: f64,
    pub offset: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl ClockModel {
    pub fn identity() -> Self {
        Self {
            skew: 1.0,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.skew.is_finite() || (self.skew - 1.0).abs() >= SKEW_BOUND {
            return Err(Error::SkewOutOfRange(self.skew));
        }
        if !self.offset.is_finite() {
            return Err(Error::Manifest("non-finite clock offset".into()));
        }
        Ok(())
    }

    /// Probe-clock time corresponding to reference time `t`.
    pub fn probe_time(&self, t: f64) -> f64 {
        self.skew * t + self.offset
    }

    /// Reference time corresponding to probe-clock time `t`.
    pub fn reference_time(&self, t: f64) -> f64 {
        (t - self.offset) / self.skew
    }

    pub fn inverse(&self) -> ClockModel {
        ClockModel {
            skew: 1.0 / self.skew,
            offset: -self.offset / self.skew,
        }
    }
}

/// Lag of the probe device relative to the reference over one perturbation
/// event. Both gyroscope streams are sliced at the event window in their
/// own clocks, brought to the higher of the two rates, and cross-correlated
/// on the configured (or highest-variance) axis.
pub fn align_event(
    reference_gyro: &UniformSeries,
    probe_gyro: &UniformSeries,
    event: &PerturbationEvent,
    max_lag: f64,
) -> Result<LagEstimate> {
    event.validate()?;
    let (start, end) = event.window;
    for (s, which) in [(reference_gyro, "reference"), (probe_gyro, "probe")] {
        if start < s.start_time() - 1e-9 || end > s.end_time() + 1e-9 {
            return Err(Error::WindowOutsideSeries { start, end, which });
        }
    }
    let ref_win = reference_gyro.slice_time(start, end)?;
    let probe_win = probe_gyro.slice_time(start, end)?;
    let ref_axis = pick_axis(&ref_win, event.axis.as_deref())?;
    let probe_axis = pick_axis(&probe_win, event.axis.as_deref())?;
    let mut ref_sel = ref_win.select_channel(&ref_axis)?;
    let mut probe_sel = probe_win.select_channel(&probe_axis)?;
    let common = ref_sel.rate().max(probe_sel.rate());
    if !ref_sel.rates_match(&probe_sel) {
        ref_sel = ref_sel.resample(common)?;
        probe_sel = probe_sel.resample(common)?;
    }
    estimate_lag(
        &ref_sel,
        &probe_sel,
        max_lag,
        true,
        LagMethod::GyroPerturbation,
    )
}

fn pick_axis(window: &UniformSeries, axis: Option<&str>) -> Result<String> {
    if let Some(name) = axis {
        window.channel_by_name(name)?;
        return Ok(name.to_string());
    }
    let mut best = (0usize, f64::MIN);
    for c in 0..window.channel_count() {
        let values = window.channel(c);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        if var > best.1 {
            best = (c, var);
        }
    }
    Ok(window.channel_names()[best.0].clone())
}

/// The unique affine probe-clock model explaining the lags measured at two
/// events: the skew follows the lag drift between them and the offset
/// cancels the start-event lag exactly at `t_start`.
pub fn fit_clock_model(
    lag_start: f64,
    t_start: f64,
    lag_end: f64,
    t_end: f64,
) -> Result<ClockModel> {
    if t_end - t_start <= MIN_EVENT_SPACING {
        return Err(Error::EventsTooClose {
            gap: t_end - t_start,
            min: MIN_EVENT_SPACING,
        });
    }
    let skew = 1.0 + (lag_end - lag_start) / (t_end - t_start);
    let offset = lag_start - (skew - 1.0) * t_start;
    let model = ClockModel { skew, offset };
    model.validate()?;
    Ok(model)
}

/// Remap a probe series onto the reference timeline.
///
/// The output stays uniform at the original rate: output sample `k` sits at
/// reference time `start' + k / rate` and carries the probe value linearly
/// interpolated at `skew * t + offset`. An offset-only model therefore
/// shifts the start time and copies samples bit-exactly.
pub fn apply_clock_model(series: &UniformSeries, model: &ClockModel) -> Result<UniformSeries> {
    model.validate()?;
    let n = series.len();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let start = (series.start_time() - model.offset) / model.skew;
    // Source sample position for output index k is exactly skew * k.
    let m = (((n - 1) as f64) / model.skew + 1e-9).floor() as usize + 1;
    let last = (n - 1) as f64;
    let channels = (0..series.channel_count())
        .map(|c| {
            let ch = series.channel(c);
            (0..m)
                .map(|k| lerp_at(ch, (model.skew * k as f64).clamp(0.0, last)))
                .collect()
        })
        .collect();
    UniformSeries::new(
        start,
        series.rate(),
        series.channel_names().to_vec(),
        channels,
    )
}
