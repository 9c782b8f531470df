//! Acceleration-based post-synchronization lag estimation.
//!
//! Three non-collinear markers on the smartphone give a rigid-body basis
//! per time step; the phone's accelerometer reading is rotated into the
//! lab frame through that basis, gravity is removed, and the result is
//! cross-correlated with the marker acceleration obtained by filtering the
//! positions and differentiating twice.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::lowpass_zero_phase;
use crate::series::UniformSeries;
use crate::xcorr::{estimate_lag, LagEstimate, LagMethod};

/// Minimum sine of the angle between the two triad edge vectors.
pub const COLLINEARITY_SINE: f64 = 0.05;

/// Marker gaps up to this many samples are bridged by linear interpolation;
/// longer gaps stay flagged and are excluded from cross-correlation.
pub const MAX_GAP_FILL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    X,
    Y,
    Z,
}

impl UpAxis {
    pub fn unit(&self) -> Vector3<f64> {
        match self {
            UpAxis::X => Vector3::x(),
            UpAxis::Y => Vector3::y(),
            UpAxis::Z => Vector3::z(),
        }
    }

    pub fn channel_name(&self) -> &'static str {
        match self {
            UpAxis::X => "x",
            UpAxis::Y => "y",
            UpAxis::Z => "z",
        }
    }
}

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and right-handedness to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let gram = m * m.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-9 {
            return Err(Error::NotARotation(format!(
                "R R^T deviates from I by {dev:.2e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::NotARotation(format!("determinant {det}")));
        }
        Ok(Rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }
}

/// Lab-frame conventions for gravity removal.
#[derive(Debug, Clone, Copy)]
pub struct FrameConventions {
    pub up_axis: UpAxis,
    /// Gravity magnitude in m/s^2.
    pub gravity: f64,
    /// Maps the phone sensor frame to the marker-triad frame.
    pub mount_rotation: Rotation,
}

impl Default for FrameConventions {
    fn default() -> Self {
        Self {
            up_axis: UpAxis::Z,
            gravity: 9.80665,
            mount_rotation: Rotation::identity(),
        }
    }
}

impl FrameConventions {
    pub fn validate(&self) -> Result<()> {
        if !self.gravity.is_finite() || self.gravity <= 0.0 {
            return Err(Error::Manifest(format!(
                "gravity {} must be positive",
                self.gravity
            )));
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        self.up_axis.unit() * self.gravity
    }
}

/// Gram-Schmidt basis of three non-collinear points, as the rotation from
/// the marker frame to the frame the points are expressed in.
pub fn marker_basis(m1: Vector3<f64>, m2: Vector3<f64>, m3: Vector3<f64>) -> Result<Rotation> {
    let edge1 = m2 - m1;
    let edge2 = m3 - m1;
    let n1 = edge1.norm();
    let n2 = edge2.norm();
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(Error::DegenerateTriad {
            row: 0,
            reason: "coincident markers".into(),
        });
    }
    let e1 = edge1 / n1;
    let rejected = edge2 - e1 * edge2.dot(&e1);
    // |rejected| / |edge2| is the sine of the angle between the edges
    if rejected.norm() / n2 <= COLLINEARITY_SINE {
        return Err(Error::DegenerateTriad {
            row: 0,
            reason: format!(
                "edge angle sine {:.4} below {COLLINEARITY_SINE}",
                rejected.norm() / n2
            ),
        });
    }
    let e2 = rejected / rejected.norm();
    let e3 = e1.cross(&e2);
    Rotation::from_matrix(Matrix3::from_columns(&[e1, e2, e3]))
}

/// Three marker-position series rigidly attached to one phone, identical
/// rate and start. Channels are x, y, z in the lab frame.
#[derive(Debug, Clone)]
pub struct MarkerTriad {
    markers: [UniformSeries; 3],
}

impl MarkerTriad {
    pub fn new(m1: UniformSeries, m2: UniformSeries, m3: UniformSeries) -> Result<Self> {
        let markers = [m1, m2, m3];
        for m in &markers {
            if m.channel_count() != 3 {
                return Err(Error::ChannelCount {
                    expected: 3,
                    got: m.channel_count(),
                });
            }
        }
        let (rate, start, len) = (markers[0].rate(), markers[0].start_time(), markers[0].len());
        for m in &markers[1..] {
            if !m.rates_match(&markers[0])
                || (m.start_time() - start).abs() > 1e-9
                || m.len() != len
            {
                return Err(Error::InvalidSeries(
                    "triad markers must share rate, start and length".into(),
                ));
            }
        }
        let _ = rate;
        Ok(Self { markers })
    }

    pub fn marker(&self, idx: usize) -> &UniformSeries {
        &self.markers[idx]
    }

    pub fn rate(&self) -> f64 {
        self.markers[0].rate()
    }

    pub fn start_time(&self) -> f64 {
        self.markers[0].start_time()
    }

    pub fn end_time(&self) -> f64 {
        self.markers[0].end_time()
    }

    pub fn len(&self) -> usize {
        self.markers[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, marker: usize, row: usize) -> Vector3<f64> {
        let m = &self.markers[marker];
        Vector3::new(m.channel(0)[row], m.channel(1)[row], m.channel(2)[row])
    }

    pub fn row_has_gap(&self, row: usize) -> bool {
        (0..3).any(|m| {
            let s = &self.markers[m];
            (0..3).any(|c| !s.channel(c)[row].is_finite())
        })
    }

    /// Marker-frame-to-lab rotation at one time step.
    pub fn basis_at(&self, row: usize) -> Result<Rotation> {
        marker_basis(self.point(0, row), self.point(1, row), self.point(2, row)).map_err(
            |e| match e {
                Error::DegenerateTriad { reason, .. } => Error::DegenerateTriad { row, reason },
                other => other,
            },
        )
    }

    /// Bridge per-channel gap runs of at most `MAX_GAP_FILL` samples by
    /// linear interpolation; longer runs stay NaN.
    pub fn fill_gaps(&self) -> MarkerTriad {
        let markers = [0, 1, 2].map(|m| {
            let s = &self.markers[m];
            let channels = (0..3)
                .map(|c| fill_gap_runs(s.channel(c), MAX_GAP_FILL))
                .collect();
            UniformSeries::new(
                s.start_time(),
                s.rate(),
                s.channel_names().to_vec(),
                channels,
            )
            .expect("shape preserved")
        });
        MarkerTriad { markers }
    }

    pub fn slice_time(&self, t0: f64, t1: f64) -> Result<MarkerTriad> {
        let m1 = self.markers[0].slice_time(t0, t1)?;
        let m2 = self.markers[1].slice_time(t0, t1)?;
        let m3 = self.markers[2].slice_time(t0, t1)?;
        MarkerTriad::new(m1, m2, m3)
    }
}

fn fill_gap_runs(values: &[f64], max_run: usize) -> Vec<f64> {
    let mut out = values.to_vec();
    let n = out.len();
    let mut i = 0;
    while i < n {
        if out[i].is_finite() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && !out[i].is_finite() {
            i += 1;
        }
        let run_len = i - run_start;
        let before = run_start
            .checked_sub(1)
            .map(|j| out[j])
            .filter(|v| v.is_finite());
        let after = out.get(i).copied().filter(|v| v.is_finite());
        if run_len <= max_run {
            if let (Some(a), Some(b)) = (before, after) {
                for (k, slot) in out[run_start..i].iter_mut().enumerate() {
                    let frac = (k + 1) as f64 / (run_len + 1) as f64;
                    *slot = a + (b - a) * frac;
                }
            }
        }
    }
    out
}

/// Rotate phone accelerometer readings into the lab frame and remove
/// gravity: `a_lab(t) = R(t) * M * a_phone(t) - g_up`, with `R(t)` the
/// triad basis at the triad's own timestamps. The phone series is read by
/// linear interpolation at those timestamps, so the output lives on the
/// (higher-rate) triad grid. Rows where any marker has a gap come out NaN.
pub fn phone_accel_to_lab(
    phone_accel: &UniformSeries,
    triad: &MarkerTriad,
    conventions: &FrameConventions,
) -> Result<UniformSeries> {
    conventions.validate()?;
    if phone_accel.channel_count() != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: phone_accel.channel_count(),
        });
    }
    // The triad must cover the phone span (a couple of samples of slack
    // absorbs carve rounding at differing rates).
    let slack = 2.0 / phone_accel.rate();
    if triad.start_time() > phone_accel.start_time() + slack
        || triad.end_time() < phone_accel.end_time() - slack
    {
        return Err(Error::SpanMismatch);
    }
    let g = conventions.gravity_vector();
    let mount = conventions.mount_rotation;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut out_start = None;
    for row in 0..triad.len() {
        let t = triad.start_time() + row as f64 / triad.rate();
        let Some(sample) = phone_accel.sample_at(t) else {
            continue;
        };
        if out_start.is_none() {
            out_start = Some(t);
        }
        if triad.row_has_gap(row) {
            x.push(f64::NAN);
            y.push(f64::NAN);
            z.push(f64::NAN);
            continue;
        }
        let basis = triad.basis_at(row)?;
        let a_phone = Vector3::new(sample[0], sample[1], sample[2]);
        let a_lab = basis.apply(&mount.apply(&a_phone)) - g;
        x.push(a_lab.x);
        y.push(a_lab.y);
        z.push(a_lab.z);
    }
    let start = out_start.ok_or(Error::SpanMismatch)?;
    UniformSeries::new(
        start,
        triad.rate(),
        vec!["x".into(), "y".into(), "z".into()],
        vec![x, y, z],
    )
}

/// Marker acceleration by zero-phase low-pass filtering of the positions
/// followed by second-order central differences (one-sided at the ends).
/// Gap runs split the signal; segments too short to filter stay NaN.
pub fn marker_acceleration(position: &UniformSeries, cutoff: f64) -> Result<UniformSeries> {
    if position.channel_count() != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: position.channel_count(),
        });
    }
    if position.len() < 5 {
        return Err(Error::TooShort {
            len: position.len(),
            min: 5,
        });
    }
    let rate = position.rate();
    let min_segment = 3 * (2 + 1) + 1;
    let channels = (0..3)
        .map(|c| {
            let values = position.channel(c);
            let mut out = vec![f64::NAN; values.len()];
            for (seg_start, seg_end) in finite_runs(values) {
                if seg_end - seg_start < min_segment.max(5) {
                    continue;
                }
                let seg =
                    UniformSeries::single(0.0, rate, "p", values[seg_start..seg_end].to_vec())?;
                let filtered = lowpass_zero_phase(&seg, cutoff, 2)?;
                let p = filtered.channel(0);
                let accel = second_difference(p, rate);
                out[seg_start..seg_end].copy_from_slice(&accel);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    UniformSeries::new(
        position.start_time(),
        rate,
        position.channel_names().to_vec(),
        channels,
    )
}

fn finite_runs(values: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if values[i].is_finite() {
            let start = i;
            while i < values.len() && values[i].is_finite() {
                i += 1;
            }
            runs.push((start, i));
        } else {
            i += 1;
        }
    }
    runs
}

fn second_difference(p: &[f64], rate: f64) -> Vec<f64> {
    let n = p.len();
    let r2 = rate * rate;
    let mut a = vec![0.0; n];
    for i in 1..n - 1 {
        a[i] = (p[i + 1] - 2.0 * p[i] + p[i - 1]) * r2;
    }
    a[0] = (p[2] - 2.0 * p[1] + p[0]) * r2;
    a[n - 1] = (p[n - 1] - 2.0 * p[n - 2] + p[n - 3]) * r2;
    a
}

/// Cross-correlate one axis of the lab-frame phone acceleration against the
/// same axis of the marker acceleration.
pub fn acceleration_lag(
    phone_accel_lab: &UniformSeries,
    marker_accel: &UniformSeries,
    axis: &str,
    max_lag: f64,
) -> Result<LagEstimate> {
    let reference = marker_accel.select_channel(axis)?;
    let probe = phone_accel_lab.select_channel(axis)?;
    estimate_lag(&reference, &probe, max_lag, true, LagMethod::Acceleration)
}
