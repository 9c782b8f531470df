//! Zero-phase Butterworth low-pass filtering.
//!
//! Coefficients are designed at run time by the bilinear transform with
//! frequency pre-warping. The zero-phase pass reflect-pads each end by
//! `3 * (order + 1)` samples, runs the filter forward and backward with
//! steady-state initial conditions, and averages with the reversed-order
//! pass; the output is exactly symmetric under time reversal of the
//! input.

use crate::error::{Error, Result};
use crate::series::UniformSeries;

/// Butterworth low-pass applied forward then backward (zero net phase).
///
/// `order` must be 2 or 4 and `cutoff` below the Nyquist frequency. The
/// series must be longer than `3 * (order + 1)` samples. DC gain is 1 to
/// within floating-point error, so constants pass through unchanged.
pub fn lowpass_zero_phase(
    series: &UniformSeries,
    cutoff: f64,
    order: usize,
) -> Result<UniformSeries> {
    let rate = series.rate();
    let nyquist = rate / 2.0;
    if !cutoff.is_finite() || cutoff <= 0.0 || cutoff >= nyquist {
        return Err(Error::CutoffAboveNyquist { cutoff, nyquist });
    }
    if order != 2 && order != 4 {
        return Err(Error::UnsupportedOrder(order));
    }
    let pad = 3 * (order + 1);
    if series.len() <= pad {
        return Err(Error::TooShort {
            len: series.len(),
            min: pad + 1,
        });
    }
    let (b, a) = butter_lowpass(order, cutoff, rate);
    let names = series.channel_names().to_vec();
    let channels = (0..series.channel_count())
        .map(|c| filtfilt(&b, &a, series.channel(c), pad))
        .collect();
    UniformSeries::new(series.start_time(), rate, names, channels)
}

/// Low-pass Butterworth design via bilinear transform with pre-warping.
/// Returns `(b, a)` with `a[0] = 1` and `sum(b) == sum(a)` (unit DC gain).
pub(crate) fn butter_lowpass(order: usize, cutoff: f64, rate: f64) -> (Vec<f64>, Vec<f64>) {
    use std::f64::consts::PI;
    let warped = (PI * cutoff / rate).tan();
    // Conjugate pole pairs of the analog prototype, scaled by the warped
    // cutoff, then mapped by z = (1 + s) / (1 - s).
    let mut a = vec![1.0];
    for k in 0..order / 2 {
        let theta = PI * (2 * (k as i32) + order as i32 + 1) as f64 / (2 * order) as f64;
        let (sr, si) = (warped * theta.cos(), warped * theta.sin());
        // z-pole for s = sr + i si
        let den = (1.0 - sr) * (1.0 - sr) + si * si;
        let zr = (1.0 - sr * sr - si * si) / den;
        let zi = 2.0 * si / den;
        // quadratic (z - p)(z - conj(p)) = z^2 - 2 Re(p) z + |p|^2
        let quad = [1.0, -2.0 * zr, zr * zr + zi * zi];
        a = poly_mul(&a, &quad);
    }
    // Numerator K (1 + z^-1)^order with K chosen so H(1) = 1 exactly.
    let mut binom = vec![1.0];
    for _ in 0..order {
        binom = poly_mul(&binom, &[1.0, 1.0]);
    }
    let k = a.iter().sum::<f64>() / binom.iter().sum::<f64>();
    let b = binom.iter().map(|c| c * k).collect();
    (b, a)
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &pi) in p.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

/// Steady-state initial filter state (direct form II transposed) such that a
/// constant input produces the same constant output from the first sample.
fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let n = a.len() - 1;
    // Solve (I - companion(a)^T) zi = b[1..] - a[1..] * b[0]
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        m[i][0] += a[i + 1];
        if i + 1 < n {
            m[i][i + 1] -= 1.0;
        }
    }
    let mut rhs: Vec<f64> = (0..n).map(|i| b[i + 1] - a[i + 1] * b[0]).collect();
    // Gaussian elimination with partial pivoting; n <= 4.
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        let d = m[col][col];
        let pivot_row = m[col].clone();
        for r in col + 1..n {
            let f = m[r][col] / d;
            for (c, pv) in pivot_row.iter().enumerate().skip(col) {
                m[r][c] -= f * pv;
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut zi = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[r][c] * zi[c];
        }
        zi[r] = acc / m[r][r];
    }
    zi
}

/// Direct form II transposed filter with initial state `zi` scaled by `x0`.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64], x0: f64) -> Vec<f64> {
    let n = a.len() - 1;
    let mut z: Vec<f64> = zi.iter().map(|v| v * x0).collect();
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z[0];
        for i in 0..n - 1 {
            z[i] = b[i + 1] * xi + z[i + 1] - a[i + 1] * yi;
        }
        z[n - 1] = b[n] * xi - a[n] * yi;
        y.push(yi);
    }
    y
}

/// Odd (endpoint-anchored) reflection padding of `pad` samples per end.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    ext
}

fn filt_forward_backward(b: &[f64], a: &[f64], zi: &[f64], ext: &[f64]) -> Vec<f64> {
    let fwd = lfilter(b, a, ext, zi, ext[0]);
    let mut rev: Vec<f64> = fwd.iter().rev().copied().collect();
    rev = lfilter(b, a, &rev, zi, rev[0]);
    rev.reverse();
    rev
}

fn filtfilt(b: &[f64], a: &[f64], x: &[f64], pad: usize) -> Vec<f64> {
    let zi = lfilter_zi(b, a);
    let ext = reflect_pad(x, pad);
    let fb = filt_forward_backward(b, a, &zi, &ext);
    // Backward-forward pass on the reversed extension; averaging the two
    // makes the output exactly symmetric under time reversal of the input.
    let ext_rev: Vec<f64> = ext.iter().rev().copied().collect();
    let bf = filt_forward_backward(b, a, &zi, &ext_rev);
    let n = x.len();
    (0..n)
        .map(|i| 0.5 * (fb[pad + i] + bf[ext.len() - 1 - pad - i]))
        .collect()
}

/// Squared magnitude response of the forward-backward cascade at `freq`,
/// i.e. `|H(f)|^2` of the underlying Butterworth low-pass.
pub fn zero_phase_gain(order: usize, cutoff: f64, rate: f64, freq: f64) -> f64 {
    use std::f64::consts::PI;
    let (b, a) = butter_lowpass(order, cutoff, rate);
    let omega = 2.0 * PI * freq / rate;
    let eval = |p: &[f64]| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, &c) in p.iter().enumerate() {
            re += c * (omega * k as f64).cos();
            im -= c * (omega * k as f64).sin();
        }
        (re, im)
    };
    let (br, bi) = eval(&b);
    let (ar, ai) = eval(&a);
    (br * br + bi * bi) / (ar * ar + ai * ai)
}
