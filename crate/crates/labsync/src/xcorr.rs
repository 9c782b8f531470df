//! Normalized cross-correlation lag estimation.
//!
//! The estimate is the argmax over integer sample lags of the Pearson
//! correlation computed over the overlapping window, optionally refined by
//! parabolic interpolation around the peak. Series are compared on their
//! absolute time axes: a difference in start times contributes to the
//! reported lag, so slicing both inputs at the same nominal clock window
//! gives the device-to-device offset directly.
//!
//! Two engines compute the same correlation values: a direct sliding-window
//! scan (also the only path when gap rows are present) and an FFT engine
//! used for large products. The two agree to well below 1e-9.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::UniformSeries;

/// Which signal pair produced a lag estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagMethod {
    Acceleration,
    Force,
    GyroPerturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagQuality {
    Ok,
    LowCorrelation,
    NearWindowEdge,
}

/// A lag in seconds; positive means the probe (second) series lags the
/// reference (first).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    pub lag: f64,
    pub peak_correlation: f64,
    pub method: LagMethod,
    pub quality: LagQuality,
}

/// Peak correlation below this flags `LagQuality::LowCorrelation`.
pub const LOW_CORRELATION: f64 = 0.2;

/// Default search half-window in seconds for the session pipeline.
pub const DEFAULT_MAX_LAG: f64 = 2.0;

/// Estimate the lag of `probe` relative to `reference`.
///
/// Both series must be single-channel and share the same rate (resample
/// first). The overlap must cover at least one second at every lag in
/// `[-max_lag, +max_lag]`. With `subsample`, the integer argmax is refined
/// by a parabolic fit through the three correlation values around it.
pub fn estimate_lag(
    reference: &UniformSeries,
    probe: &UniformSeries,
    max_lag: f64,
    subsample: bool,
    method: LagMethod,
) -> Result<LagEstimate> {
    for s in [reference, probe] {
        if s.channel_count() != 1 {
            return Err(Error::ChannelCount {
                expected: 1,
                got: s.channel_count(),
            });
        }
    }
    if !reference.rates_match(probe) {
        return Err(Error::RateMismatch {
            left: reference.rate(),
            right: probe.rate(),
        });
    }
    let rate = reference.rate();
    let delta = probe.start_time() - reference.start_time();
    let lag_min = ((-max_lag - delta) * rate - 1e-9).ceil() as i64;
    let lag_max = ((max_lag - delta) * rate + 1e-9).floor() as i64;
    if lag_min > lag_max {
        return Err(Error::InsufficientOverlap {
            seconds: 0.0,
            required: 1.0,
        });
    }

    let x = reference.channel(0);
    let y = probe.channel(0);
    let min_pairs = rate.ceil() as usize; // one second of data
    for lam in [lag_min, lag_max] {
        let (lo, hi) = overlap(x.len(), y.len(), lam);
        let n = hi.saturating_sub(lo);
        if n < min_pairs {
            return Err(Error::InsufficientOverlap {
                seconds: n as f64 / rate,
                required: 1.0,
            });
        }
    }

    let has_gaps = x.iter().chain(y.iter()).any(|v| !v.is_finite());
    check_variance(x, "reference")?;
    check_variance(y, "probe")?;

    // Remove global means up front; per-window Pearson is unaffected and the
    // sums become far better conditioned.
    let xm = finite_mean(x);
    let ym = finite_mean(y);
    let xc: Vec<f64> = x
        .iter()
        .map(|v| if v.is_finite() { v - xm } else { f64::NAN })
        .collect();
    let yc: Vec<f64> = y
        .iter()
        .map(|v| if v.is_finite() { v - ym } else { f64::NAN })
        .collect();

    let n_lags = (lag_max - lag_min + 1) as usize;
    let corr = if has_gaps {
        correlations_masked(&xc, &yc, lag_min, lag_max, min_pairs)
    } else if n_lags * xc.len().min(yc.len()) > 1 << 22 {
        correlations_fft(&xc, &yc, lag_min, lag_max, min_pairs)
    } else {
        correlations_direct(&xc, &yc, lag_min, lag_max, min_pairs)
    };

    let best = corr
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i)
        .ok_or(Error::ZeroVariance("no lag window had usable variance"))?;

    let mut lag_samples = (lag_min + best as i64) as f64;
    let mut peak = corr[best];
    if subsample && best > 0 && best + 1 < corr.len() {
        let (cm, c0, cp) = (corr[best - 1], corr[best], corr[best + 1]);
        if cm.is_finite() && cp.is_finite() {
            let den = cm - 2.0 * c0 + cp;
            if den < 0.0 {
                let d = (0.5 * (cm - cp) / den).clamp(-0.5, 0.5);
                lag_samples += d;
                peak = c0 - 0.25 * (cm - cp) * d;
            }
        }
    }
    let peak = peak.clamp(-1.0, 1.0);
    let lag = delta + lag_samples / rate;

    let quality = if peak < LOW_CORRELATION {
        LagQuality::LowCorrelation
    } else if (best as i64) <= 2 || (n_lags as i64 - 1 - best as i64) <= 2 {
        LagQuality::NearWindowEdge
    } else {
        LagQuality::Ok
    };

    Ok(LagEstimate {
        lag,
        peak_correlation: peak,
        method,
        quality,
    })
}

fn overlap(n: usize, m: usize, lag: i64) -> (usize, usize) {
    let lo = (-lag).max(0) as usize;
    let hi_signed = (n as i64).min(m as i64 - lag);
    (lo, hi_signed.max(0) as usize)
}

fn finite_mean(v: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &x in v {
        if x.is_finite() {
            sum += x;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn check_variance(v: &[f64], which: &'static str) -> Result<()> {
    let mean = finite_mean(v);
    let has_var = v.iter().any(|&x| x.is_finite() && (x - mean).abs() > 0.0);
    if has_var {
        Ok(())
    } else {
        Err(Error::ZeroVariance(which))
    }
}

fn pearson(sxy: f64, sx: f64, sy: f64, sxx: f64, syy: f64, count: f64) -> f64 {
    let cov = sxy - sx * sy / count;
    let vx = sxx - sx * sx / count;
    let vy = syy - sy * sy / count;
    if vx <= 0.0 || vy <= 0.0 {
        return f64::NAN;
    }
    cov / (vx * vy).sqrt()
}

fn correlations_direct(
    x: &[f64],
    y: &[f64],
    lag_min: i64,
    lag_max: i64,
    min_pairs: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity((lag_max - lag_min + 1) as usize);
    for lag in lag_min..=lag_max {
        let (lo, hi) = overlap(x.len(), y.len(), lag);
        if hi.saturating_sub(lo) < min_pairs {
            out.push(f64::NAN);
            continue;
        }
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let off = lag;
        for i in lo..hi {
            let a = x[i];
            let b = y[(i as i64 + off) as usize];
            sxy += a * b;
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
        }
        out.push(pearson(sxy, sx, sy, sxx, syy, (hi - lo) as f64));
    }
    out
}

fn correlations_masked(
    x: &[f64],
    y: &[f64],
    lag_min: i64,
    lag_max: i64,
    min_pairs: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity((lag_max - lag_min + 1) as usize);
    for lag in lag_min..=lag_max {
        let (lo, hi) = overlap(x.len(), y.len(), lag);
        let (mut sxy, mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut count = 0usize;
        for i in lo..hi {
            let a = x[i];
            let b = y[(i as i64 + lag) as usize];
            if a.is_finite() && b.is_finite() {
                sxy += a * b;
                sx += a;
                sy += b;
                sxx += a * a;
                syy += b * b;
                count += 1;
            }
        }
        if count < min_pairs {
            out.push(f64::NAN);
        } else {
            out.push(pearson(sxy, sx, sy, sxx, syy, count as f64));
        }
    }
    out
}

fn correlations_fft(
    x: &[f64],
    y: &[f64],
    lag_min: i64,
    lag_max: i64,
    min_pairs: usize,
) -> Vec<f64> {
    let n = x.len();
    let m = y.len();
    let size = (n + m).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut fx: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fx.resize(size, Complex64::new(0.0, 0.0));
    let mut fy: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fy.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut fx);
    fwd.process(&mut fy);
    let mut prod: Vec<Complex64> = fx
        .iter()
        .zip(fy.iter())
        .map(|(a, b)| a.conj() * b)
        .collect();
    inv.process(&mut prod);
    let scale = 1.0 / size as f64;
    // raw cross-correlation c[lag] = sum_i x[i] * y[i + lag]
    let c = |lag: i64| -> f64 {
        let idx = lag.rem_euclid(size as i64) as usize;
        prod[idx].re * scale
    };

    // prefix sums for windowed means and variances
    let pref = |v: &[f64], f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let mut p = Vec::with_capacity(v.len() + 1);
        p.push(0.0);
        let mut acc = 0.0;
        for &t in v {
            acc += f(t);
            p.push(acc);
        }
        p
    };
    let px = pref(x, &|v| v);
    let pxx = pref(x, &|v| v * v);
    let py = pref(y, &|v| v);
    let pyy = pref(y, &|v| v * v);

    let mut out = Vec::with_capacity((lag_max - lag_min + 1) as usize);
    for lag in lag_min..=lag_max {
        let (lo, hi) = overlap(n, m, lag);
        let count = hi.saturating_sub(lo);
        if count < min_pairs {
            out.push(f64::NAN);
            continue;
        }
        let (ylo, yhi) = ((lo as i64 + lag) as usize, (hi as i64 + lag) as usize);
        out.push(pearson(
            c(lag),
            px[hi] - px[lo],
            py[yhi] - py[ylo],
            pxx[hi] - pxx[lo],
            pyy[yhi] - pyy[ylo],
            count as f64,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_series(seed: u64, rate: f64, n: usize) -> UniformSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // band-limit slightly so subsample refinement has structure
        let mut prev = 0.0;
        let values = (0..n)
            .map(|_| {
                prev = 0.7 * prev + rng.random_range(-1.0..1.0);
                prev
            })
            .collect();
        UniformSeries::single(0.0, rate, "v", values).unwrap()
    }

    fn delayed(s: &UniformSeries, d: usize) -> UniformSeries {
        let x = s.channel(0);
        let mut out = vec![0.0; x.len()];
        out[d..].copy_from_slice(&x[..x.len() - d]);
        UniformSeries::single(s.start_time(), s.rate(), "v", out).unwrap()
    }

    #[test]
    fn self_correlation_is_zero_lag_unit_peak() {
        let s = noise_series(1, 100.0, 1000);
        let e = estimate_lag(&s, &s, 0.5, false, LagMethod::Acceleration).unwrap();
        assert_eq!(e.lag, 0.0);
        assert!((e.peak_correlation - 1.0).abs() <= 1e-9);
        assert_eq!(e.quality, LagQuality::Ok);
    }

    #[test]
    fn integer_shift_recovered_exactly() {
        let s = noise_series(2, 100.0, 2000);
        for d in [1usize, 7, 33, 150] {
            let p = delayed(&s, d);
            let e = estimate_lag(&s, &p, 2.0, false, LagMethod::Acceleration).unwrap();
            assert_eq!(e.lag, d as f64 / 100.0, "d={d}");
        }
    }

    #[test]
    fn amplitude_and_offset_invariance() {
        let s = noise_series(3, 100.0, 1500);
        let d = 12;
        let p = delayed(&s, d);
        let scaled = UniformSeries::single(
            0.0,
            100.0,
            "v",
            p.channel(0).iter().map(|v| 3.5 * v + 17.0).collect(),
        )
        .unwrap();
        let e = estimate_lag(&s, &scaled, 1.0, false, LagMethod::Acceleration).unwrap();
        assert_eq!(e.lag, d as f64 / 100.0);
    }

    #[test]
    fn start_time_shift_equals_content_shift() {
        let s = noise_series(4, 100.0, 1000);
        let moved = s.with_start_time(0.25);
        let e = estimate_lag(&s, &moved, 1.0, false, LagMethod::Acceleration).unwrap();
        assert!((e.lag - 0.25).abs() < 1e-12);
    }

    #[test]
    fn quarter_period_sinusoid() {
        let rate = 100.0;
        let n = 1000;
        let f = 1.0;
        let mk = |phase: f64| {
            let values = (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * f * (i as f64 / rate - phase)).sin())
                .collect();
            UniformSeries::single(0.0, rate, "v", values).unwrap()
        };
        let a = mk(0.0);
        let b = mk(0.25);
        let e = estimate_lag(&a, &b, 0.5, true, LagMethod::Acceleration).unwrap();
        assert!((e.lag - 0.25).abs() < 2e-3, "lag {}", e.lag);
    }

    #[test]
    fn fractional_delay_recovered_with_subsample() {
        // 0.066 s delay on a 100 Hz band-limited signal: integer resolution
        // alone gives +-0.005 s, parabolic refinement +-0.002 s.
        let rate = 100.0;
        let n = 3000;
        let f = |t: f64| {
            (2.0 * std::f64::consts::PI * 1.3 * t).sin()
                + 0.6 * (2.0 * std::f64::consts::PI * 2.9 * t + 1.0).sin()
                + 0.3 * (2.0 * std::f64::consts::PI * 0.7 * t + 2.0).sin()
        };
        let a = UniformSeries::single(0.0, rate, "v", (0..n).map(|i| f(i as f64 / rate)).collect())
            .unwrap();
        let b = UniformSeries::single(
            0.0,
            rate,
            "v",
            (0..n).map(|i| f(i as f64 / rate - 0.066)).collect(),
        )
        .unwrap();
        let coarse = estimate_lag(&a, &b, 0.5, false, LagMethod::Acceleration).unwrap();
        assert!((coarse.lag - 0.066).abs() <= 0.005, "coarse {}", coarse.lag);
        let fine = estimate_lag(&a, &b, 0.5, true, LagMethod::Acceleration).unwrap();
        assert!((fine.lag - 0.066).abs() <= 0.002, "fine {}", fine.lag);
    }

    #[test]
    fn symmetry_of_swapped_arguments() {
        let s = noise_series(5, 100.0, 1200);
        let p = delayed(&s, 9);
        let fwd = estimate_lag(&s, &p, 1.0, true, LagMethod::Acceleration).unwrap();
        let rev = estimate_lag(&p, &s, 1.0, true, LagMethod::Acceleration).unwrap();
        assert!((fwd.lag + rev.lag).abs() <= 0.01 + 1e-9);
    }

    #[test]
    fn low_correlation_flagged() {
        let a = noise_series(6, 100.0, 800);
        let b = noise_series(7, 100.0, 800);
        let e = estimate_lag(&a, &b, 0.5, false, LagMethod::Force).unwrap();
        assert_eq!(e.quality, LagQuality::LowCorrelation);
    }

    #[test]
    fn near_edge_flagged() {
        let s = noise_series(8, 100.0, 1000);
        let p = delayed(&s, 50);
        let e = estimate_lag(&s, &p, 0.5, false, LagMethod::Acceleration).unwrap();
        assert_eq!(e.lag, 0.5);
        assert_eq!(e.quality, LagQuality::NearWindowEdge);
    }

    #[test]
    fn error_cases() {
        let a = noise_series(9, 100.0, 500);
        let b = noise_series(9, 50.0, 500);
        assert!(matches!(
            estimate_lag(&a, &b, 0.5, false, LagMethod::Force),
            Err(Error::RateMismatch { .. })
        ));
        let short = noise_series(10, 100.0, 120);
        assert!(matches!(
            estimate_lag(&a, &short, 0.5, false, LagMethod::Force),
            Err(Error::InsufficientOverlap { .. })
        ));
        let flat = UniformSeries::single(0.0, 100.0, "v", vec![2.0; 500]).unwrap();
        assert!(matches!(
            estimate_lag(&flat, &a, 0.5, false, LagMethod::Force),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn masked_gaps_are_ignored() {
        let s = noise_series(11, 100.0, 1500);
        let d = 20;
        let mut probe_vals = delayed(&s, d).channel(0).to_vec();
        for v in probe_vals.iter_mut().take(760).skip(700) {
            *v = f64::NAN;
        }
        let p = UniformSeries::single(0.0, 100.0, "v", probe_vals).unwrap();
        let e = estimate_lag(&s, &p, 1.0, false, LagMethod::Acceleration).unwrap();
        assert_eq!(e.lag, d as f64 / 100.0);
    }

    #[test]
    fn fft_and_direct_agree() {
        for seed in 0..4 {
            let x = noise_series(100 + seed, 100.0, 4096);
            let y = delayed(&x, 31);
            let xm = finite_mean(x.channel(0));
            let xc: Vec<f64> = x.channel(0).iter().map(|v| v - xm).collect();
            let ym = finite_mean(y.channel(0));
            let yc: Vec<f64> = y.channel(0).iter().map(|v| v - ym).collect();
            let direct = correlations_direct(&xc, &yc, -200, 200, 100);
            let fft = correlations_fft(&xc, &yc, -200, 200, 100);
            for (i, (a, b)) in direct.iter().zip(fft.iter()).enumerate() {
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() <= 1e-9, "lag index {i}: {a} vs {b}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shift_equivariance(d in 1usize..120, seed in 0u64..1000) {
            let s = noise_series(seed, 100.0, 1600);
            let p = delayed(&s, d);
            let e = estimate_lag(&s, &p, 1.5, false, LagMethod::Acceleration).unwrap();
            prop_assert_eq!(e.lag, d as f64 / 100.0);
        }

        #[test]
        fn scale_invariance(d in 1usize..80, c in 0.1f64..50.0, b in -100.0f64..100.0) {
            let s = noise_series(42, 100.0, 1200);
            let p = delayed(&s, d);
            let scaled = UniformSeries::single(
                0.0, 100.0, "v",
                p.channel(0).iter().map(|v| c * v + b).collect(),
            ).unwrap();
            let e = estimate_lag(&s, &scaled, 1.0, false, LagMethod::Acceleration).unwrap();
            prop_assert_eq!(e.lag, d as f64 / 100.0);
        }
    }
}
