//! Force-based post-synchronization lag estimation.
//!
//! During standing and walking the summed ground-reaction-force magnitude
//! equals the body mass times the center-of-mass specific-force magnitude,
//! which a waist-worn accelerometer measures directly (gravity included on
//! both sides). The two magnitudes are brought to a common rate and
//! cross-correlated; since the correlation is normalized, the mass scale
//! cancels and only the temporal pattern matters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::UniformSeries;
use crate::xcorr::{estimate_lag, LagEstimate, LagMethod};

/// Minimum overlap between the accelerometer and the plates.
pub const MIN_FORCE_OVERLAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Participant mass in kilograms.
    pub mass: f64,
}

impl BodyParams {
    pub fn new(mass: f64) -> Result<Self> {
        if !(20.0..=300.0).contains(&mass) {
            return Err(Error::MassOutOfRange(mass));
        }
        Ok(Self { mass })
    }
}

/// Left and right force-plate streams (newtons), identical rate and start.
#[derive(Debug, Clone)]
pub struct ForcePlatePair {
    left: UniformSeries,
    right: UniformSeries,
}

impl ForcePlatePair {
    /// Vertical components may dip slightly negative from sensor noise but
    /// anything below -5 N indicates a miscalibrated or inverted plate.
    pub fn new(left: UniformSeries, right: UniformSeries) -> Result<Self> {
        for (s, side) in [(&left, "left"), (&right, "right")] {
            if s.channel_count() != 3 {
                return Err(Error::ChannelCount {
                    expected: 3,
                    got: s.channel_count(),
                });
            }
            let vertical = s.channel(2);
            if let Some(v) = vertical.iter().find(|v| v.is_finite() && **v < -5.0) {
                return Err(Error::InvalidForcePlates(format!(
                    "{side} plate vertical force {v} N below -5 N"
                )));
            }
        }
        if !left.rates_match(&right)
            || (left.start_time() - right.start_time()).abs() > 1e-9
            || left.len() != right.len()
        {
            return Err(Error::InvalidForcePlates(
                "plates must share rate, start and length".into(),
            ));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &UniformSeries {
        &self.left
    }

    pub fn right(&self) -> &UniformSeries {
        &self.right
    }

    pub fn rate(&self) -> f64 {
        self.left.rate()
    }

    pub fn slice_time(&self, t0: f64, t1: f64) -> Result<ForcePlatePair> {
        ForcePlatePair::new(
            self.left.slice_time(t0, t1)?,
            self.right.slice_time(t0, t1)?,
        )
    }
}

/// Per-step sum of the two plate force norms (sum of norms, not norm of
/// the sum).
pub fn summed_force_magnitude(plates: &ForcePlatePair) -> UniformSeries {
    let l = plates.left.magnitude().expect("validated 3 channels");
    let r = plates.right.magnitude().expect("validated 3 channels");
    let values = l
        .channel(0)
        .iter()
        .zip(r.channel(0))
        .map(|(a, b)| a + b)
        .collect();
    UniformSeries::single(
        plates.left.start_time(),
        plates.rate(),
        "force_magnitude",
        values,
    )
    .expect("shape preserved")
}

/// Lag of the waist accelerometer relative to the force plates.
///
/// Both magnitude signals are resampled to the higher of the two native
/// rates. `window` optionally restricts the correlation to an interval (for
/// overground plates that are loaded only part of the time); the default is
/// the full overlap. Mass affects only the residual diagnostic, not the
/// lag, because the correlation is normalized.
pub fn force_lag(
    com_accel: &UniformSeries,
    plates: &ForcePlatePair,
    body: &BodyParams,
    max_lag: f64,
    window: Option<(f64, f64)>,
) -> Result<LagEstimate> {
    BodyParams::new(body.mass)?;
    let mut phone_mag = com_accel.magnitude()?;
    let summed = summed_force_magnitude(plates);
    let mut reference = UniformSeries::single(
        summed.start_time(),
        summed.rate(),
        "specific_force",
        summed.channel(0).iter().map(|f| f / body.mass).collect(),
    )?;

    let overlap = reference.end_time().min(phone_mag.end_time())
        - reference.start_time().max(phone_mag.start_time());
    if overlap < MIN_FORCE_OVERLAP {
        return Err(Error::InsufficientOverlap {
            seconds: overlap.max(0.0),
            required: MIN_FORCE_OVERLAP,
        });
    }

    if let Some((t0, t1)) = window {
        reference = reference.slice_time(t0, t1)?;
        phone_mag = phone_mag.slice_time(t0, t1)?;
    }

    let common = reference.rate().max(phone_mag.rate());
    if !reference.rates_match(&phone_mag) {
        reference = reference.resample(common)?;
        phone_mag = phone_mag.resample(common)?;
    }

    estimate_lag(&reference, &phone_mag, max_lag, true, LagMethod::Force).map_err(|e| match e {
        Error::ZeroVariance(_) => Error::ZeroVariance("force plates unloaded"),
        other => other,
    })
}

/// RMS of the per-sample residual `||f1|| + ||f2|| - m * ||a||` over the
/// overlap, in newtons. Diagnoses calibration and plumbing; on noiseless
/// simulator output it vanishes.
pub fn force_residual_rms(
    com_accel: &UniformSeries,
    plates: &ForcePlatePair,
    body: &BodyParams,
) -> Result<f64> {
    let phone_mag = com_accel.magnitude()?;
    let summed = summed_force_magnitude(plates);
    // Walk the coarser grid and read the finer series at those instants;
    // when the grids nest (the usual 50 Hz in 1000 Hz case) no
    // interpolation happens at all.
    let (coarse, fine, fine_is_force) = if phone_mag.rate() <= summed.rate() {
        (&phone_mag, &summed, true)
    } else {
        (&summed, &phone_mag, false)
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..coarse.len() {
        let t = coarse.start_time() + i as f64 / coarse.rate();
        if let Some(v) = fine.sample_at(t) {
            let (force, accel) = if fine_is_force {
                (v[0], coarse.channel(0)[i])
            } else {
                (coarse.channel(0)[i], v[0])
            };
            let r = force - body.mass * accel;
            sum += r * r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientOverlap {
            seconds: 0.0,
            required: MIN_FORCE_OVERLAP,
        });
    }
    Ok((sum / count as f64).sqrt())
}
