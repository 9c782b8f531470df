//! Vibration pulse-train codec.
//!
//! A test type is a 4-bit code carried in an 8-bit frame delimited by '11'
//! at both ends, one bit per second, a '1' being a 0.3 s vibration burst.
//! `encode` builds the frame, `synthesize` renders an accelerometer
//! magnitude signature for the simulator, and `decode` recovers the code
//! and the train onset from a recorded magnitude signal.
//!
//! Detection runs on a sliding-window mean of the baseline-removed
//! magnitude (a matched filter for the burst length). Thresholds adapt to
//! the recording in two passes: a crude half-height split isolates
//! candidate bursts, then the rest level and noise scale are re-estimated
//! from the remaining quiet samples only. Bit decisions compare each
//! slot's response against a midpoint calibrated from the four delimiter
//! slots, which are known '1's.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::UniformSeries;

/// Multiple of the rest noise deviation that a burst response must clear.
const NOISE_FLOOR_SIGMAS: f64 = 4.5;
/// Minimum fraction of the full response span for the lower threshold.
const SPAN_FRACTION: f64 = 0.15;
/// Upper threshold distance from rest, in units of (lower - rest).
const UPPER_MULTIPLE: f64 = 12.0;
/// Bimodality gate: the response span must exceed this many rest sigmas.
const STRUCTURE_SIGMAS: f64 = 6.0;
/// Payload bit decision point between rest level and delimiter response.
const BIT_DECISION_FRACTION: f64 = 0.45;
/// Minimum separation between detected peaks, in bit periods.
const PEAK_SEPARATION_PERIODS: f64 = 0.4;
/// Peaks further apart than this many bit periods start a new train.
const TRAIN_GAP_PERIODS: f64 = 5.5;
/// Baseline the synthesizer sits the magnitude on (stationary gravity).
const SYNTH_BASELINE: f64 = 9.81;

/// A 4-bit test-type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestCode(u8);

impl TestCode {
    pub fn new(value: u8) -> Result<Self> {
        if value > 15 {
            return Err(Error::CodeOutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> u8 {
        self.0
    }
}

/// The 8-bit vibration frame; index 0 is transmitted first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitFrame {
    bits: [bool; 8],
}

impl BitFrame {
    /// Validates the '11' delimiters at both ends.
    pub fn from_bits(bits: [bool; 8]) -> Result<Self> {
        if bits[0] && bits[1] && bits[6] && bits[7] {
            Ok(Self { bits })
        } else {
            Err(Error::DelimiterValidation)
        }
    }

    pub fn bits(&self) -> &[bool; 8] {
        &self.bits
    }

    /// The middle four bits, most-significant first.
    pub fn payload(&self) -> TestCode {
        let mut v = 0u8;
        for k in 2..6 {
            v = (v << 1) | self.bits[k] as u8;
        }
        TestCode(v)
    }
}

impl std::fmt::Display for BitFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.bits {
            write!(f, "{}", b as u8)?;
        }
        Ok(())
    }
}

/// Encode a test code as a vibration frame: delimiters around the 4-bit
/// payload, most-significant bit first.
pub fn encode(code: TestCode) -> BitFrame {
    let v = code.value();
    let mut bits = [true; 8];
    for k in 0..4 {
        bits[2 + k] = (v >> (3 - k)) & 1 == 1;
    }
    BitFrame { bits }
}

/// Pulse timing of the transmitter and the decoder's slot grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PulseTiming {
    /// Bit spacing in seconds.
    pub bit_period: f64,
    /// Burst duration for a '1'.
    pub vibration_on: f64,
    /// A detected peak within this distance of a slot counts for that slot.
    pub slot_tolerance: f64,
}

impl Default for PulseTiming {
    fn default() -> Self {
        Self {
            bit_period: 1.0,
            vibration_on: 0.3,
            slot_tolerance: 0.25,
        }
    }
}

impl PulseTiming {
    pub fn validate(&self) -> Result<()> {
        let on_ok = self.vibration_on > 0.0 && self.vibration_on < self.bit_period;
        if !on_ok {
            return Err(Error::InvalidTiming(format!(
                "vibration_on {} must lie in (0, bit_period {})",
                self.vibration_on, self.bit_period
            )));
        }
        let tol_ok = self.slot_tolerance > 0.0 && self.slot_tolerance < self.bit_period / 2.0;
        if !tol_ok {
            return Err(Error::InvalidTiming(format!(
                "slot_tolerance {} must lie in (0, bit_period/2 = {})",
                self.slot_tolerance,
                self.bit_period / 2.0
            )));
        }
        Ok(())
    }
}

/// Magnitude-domain detection thresholds, applied to the windowed response.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeThresholds {
    /// The windowed response must exceed this to count as vibration.
    pub lower: f64,
    /// Responses above this are rejected as gross motion.
    pub upper: f64,
}

impl DecodeThresholds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let order_ok = lower > 0.0 && lower < upper;
        if !order_ok {
            return Err(Error::InvalidThresholds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// Estimate thresholds from a recording, per the two-pass rule above.
    pub fn estimate(magnitude: &UniformSeries, timing: &PulseTiming) -> Result<Self> {
        let prep = Prepared::build(magnitude, timing)?;
        prep.estimate_thresholds().map(|(t, _)| t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameConfidence {
    Exact,
    RecoveredWithTolerance,
}

/// A decoded frame with its onset in the recording clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodedFrame {
    pub code: TestCode,
    /// Time the vibration first crossed the lower threshold.
    pub onset: f64,
    /// Detected burst peak times for the '1' slots.
    pub peak_times: Vec<f64>,
    pub confidence: FrameConfidence,
}

/// Render a frame as a 1-channel accelerometer magnitude series.
///
/// Burst `k` starts exactly at `k * bit_period` after the series start; the
/// burst is a rectified carrier at a quarter of the sampling rate under an
/// `amplitude` envelope, on a gravity baseline with Gaussian noise. Two
/// rest bit periods are appended so the decoder sees quiet context.
/// Deterministic for a fixed seed.
pub fn synthesize(
    frame: &BitFrame,
    timing: &PulseTiming,
    rate: f64,
    amplitude: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<UniformSeries> {
    timing.validate()?;
    if rate < 20.0 {
        return Err(Error::RateTooLow(rate));
    }
    let duration = 10.0 * timing.bit_period;
    let n = (duration * rate).round() as usize + 1;
    let mut values = vec![SYNTH_BASELINE; n];
    let carrier = rate / 4.0;
    for (k, &bit) in frame.bits.iter().enumerate() {
        if !bit {
            continue;
        }
        let t0 = k as f64 * timing.bit_period;
        let i0 = (t0 * rate).ceil() as usize;
        let i1 = (((t0 + timing.vibration_on) * rate).ceil() as usize).min(n);
        for (i, slot) in values.iter_mut().enumerate().take(i1).skip(i0) {
            let t = i as f64 / rate - t0;
            let phase = 2.0 * std::f64::consts::PI * carrier * t + std::f64::consts::FRAC_PI_4;
            *slot += amplitude * phase.sin().abs();
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    UniformSeries::single(0.0, rate, "magnitude", values)
}

/// Decode one frame from an accelerometer magnitude recording.
///
/// `thresholds` may be `None` to estimate them from the recording itself.
pub fn decode(
    magnitude: &UniformSeries,
    timing: &PulseTiming,
    thresholds: Option<DecodeThresholds>,
) -> Result<DecodedFrame> {
    let prep = Prepared::build(magnitude, timing)?;
    let (th, rest) = match thresholds {
        Some(t) => (t, prep.percentile_w(0.25)),
        None => prep.estimate_thresholds()?,
    };
    let peaks = prep.detect_peaks(&th);
    if peaks.is_empty() {
        return Err(Error::NoTrainFound);
    }
    let trains = prep.group_trains(&peaks);
    let train = trains
        .iter()
        .max_by_key(|t| t.len())
        .expect("at least one train when peaks exist");
    prep.decode_train(train, &th, rest)
}

/// Decode every train in a recording (one per motion-capture recording).
///
/// Undecodable trains are skipped and reported in the warning list; an
/// entirely quiet recording yields an empty result rather than an error.
pub fn decode_all(
    magnitude: &UniformSeries,
    timing: &PulseTiming,
    thresholds: Option<DecodeThresholds>,
) -> Result<(Vec<DecodedFrame>, Vec<String>)> {
    let prep = Prepared::build(magnitude, timing)?;
    let estimated = match thresholds {
        Some(t) => Some((t, prep.percentile_w(0.25))),
        None => prep.estimate_thresholds().ok(),
    };
    let Some((th, rest)) = estimated else {
        return Ok((Vec::new(), vec!["no vibration structure detected".into()]));
    };
    let peaks = prep.detect_peaks(&th);
    let mut frames = Vec::new();
    let mut warnings = Vec::new();
    for train in prep.group_trains(&peaks) {
        if train.len() < 4 {
            warnings.push(format!(
                "skipping burst group at {:.1} s: only {} peaks",
                prep.time(train[0]),
                train.len()
            ));
            continue;
        }
        match prep.decode_train(&train, &th, rest) {
            Ok(frame) => frames.push(frame),
            Err(e) => warnings.push(format!(
                "train at {:.1} s failed to decode: {e}",
                prep.time(train[0])
            )),
        }
    }
    Ok((frames, warnings))
}

/// Windowed representation of a magnitude recording, shared by the decode
/// entry points.
struct Prepared {
    start_time: f64,
    rate: f64,
    timing: PulseTiming,
    /// |magnitude - baseline|
    d: Vec<f64>,
    /// centered sliding mean of `d` over the burst duration
    w: Vec<f64>,
    win: usize,
}

impl Prepared {
    fn build(magnitude: &UniformSeries, timing: &PulseTiming) -> Result<Self> {
        timing.validate()?;
        if magnitude.channel_count() != 1 {
            return Err(Error::ChannelCount {
                expected: 1,
                got: magnitude.channel_count(),
            });
        }
        let rate = magnitude.rate();
        let min_len = (8.0 * timing.bit_period * rate).round() as usize;
        if magnitude.len() < min_len {
            return Err(Error::TooShort {
                len: magnitude.len(),
                min: min_len,
            });
        }
        let x = magnitude.channel(0);
        let baseline = percentile(&mut sorted(x), 0.5);
        let d: Vec<f64> = x.iter().map(|v| (v - baseline).abs()).collect();
        let mut win = (timing.vibration_on * rate).round().max(1.0) as usize;
        if win.is_multiple_of(2) {
            win += 1;
        }
        let w = sliding_mean(&d, win);
        Ok(Self {
            start_time: magnitude.start_time(),
            rate,
            timing: *timing,
            d,
            w,
            win,
        })
    }

    fn time(&self, idx: usize) -> f64 {
        self.start_time + idx as f64 / self.rate
    }

    fn index(&self, t: f64) -> f64 {
        (t - self.start_time) * self.rate
    }

    fn percentile_w(&self, q: f64) -> f64 {
        percentile(&mut sorted(&self.w), q)
    }

    fn estimate_thresholds(&self) -> Result<(DecodeThresholds, f64)> {
        let rest0 = self.percentile_w(0.25);
        let max_w = self.w.iter().cloned().fold(f64::MIN, f64::max);
        let span = max_w - rest0;
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::NoTrainFound);
        }
        // pass 1: crude half-height classification, dilated by one window
        let half = rest0 + 0.5 * span;
        let n = self.w.len();
        let mut quiet = vec![true; n];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            if self.w[i] > half {
                let lo = i.saturating_sub(self.win);
                let hi = (i + self.win + 1).min(n);
                for q in &mut quiet[lo..hi] {
                    *q = false;
                }
            }
        }
        // pass 2: rest statistics from uncontaminated samples only
        let mut rest_w_sum = 0.0;
        let mut rest_d = Vec::new();
        let mut count = 0usize;
        for ((&q, &w), &d) in quiet.iter().zip(&self.w).zip(&self.d) {
            if q {
                rest_w_sum += w;
                rest_d.push(d);
                count += 1;
            }
        }
        if count < 2 * self.win {
            return Err(Error::NoTrainFound);
        }
        let rest = rest_w_sum / count as f64;
        let mean_d = rest_d.iter().sum::<f64>() / count as f64;
        let var_d = rest_d
            .iter()
            .map(|v| (v - mean_d) * (v - mean_d))
            .sum::<f64>()
            / count as f64;
        let sigma_w = var_d.sqrt() / (self.win as f64).sqrt();
        if max_w - rest < STRUCTURE_SIGMAS * sigma_w {
            return Err(Error::NoTrainFound);
        }
        let lower = rest + (NOISE_FLOOR_SIGMAS * sigma_w).max(SPAN_FRACTION * (max_w - rest));
        let upper = rest + UPPER_MULTIPLE * (lower - rest);
        Ok((DecodeThresholds::new(lower, upper)?, rest))
    }

    /// Local maxima of the windowed response inside (lower, upper), with a
    /// minimum separation below one bit period.
    fn detect_peaks(&self, th: &DecodeThresholds) -> Vec<usize> {
        let w = &self.w;
        let n = w.len();
        let mut cand = Vec::new();
        for i in 1..n.saturating_sub(1) {
            if w[i] > th.lower && w[i] < th.upper && w[i] > w[i - 1] && w[i] >= w[i + 1] {
                cand.push(i);
            }
        }
        // greedy suppression, tallest first, like the usual peak pickers
        cand.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
        let sep = ((PEAK_SEPARATION_PERIODS * self.timing.bit_period * self.rate).round() as usize)
            .max(1);
        let mut taken: Vec<usize> = Vec::new();
        for &i in &cand {
            if taken.iter().all(|&j| i.abs_diff(j) >= sep) {
                taken.push(i);
            }
        }
        taken.sort_unstable();
        taken
    }

    /// Cluster peaks into trains split at gaps above `TRAIN_GAP_PERIODS`.
    fn group_trains(&self, peaks: &[usize]) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let gap = TRAIN_GAP_PERIODS * self.timing.bit_period * self.rate;
        for &p in peaks {
            match groups.last_mut() {
                Some(g) if (p - *g.last().unwrap()) as f64 <= gap => g.push(p),
                _ => groups.push(vec![p]),
            }
        }
        groups
    }

    fn slot_response(&self, slot_time: f64, th: &DecodeThresholds) -> (f64, usize) {
        let tol = self.timing.slot_tolerance;
        let lo_i = self.index(slot_time - tol).floor() as i64;
        let hi_i = self.index(slot_time + tol).ceil() as i64 + 1;
        let lo = lo_i.max(0) as usize;
        let hi = (hi_i.max(0) as usize).min(self.w.len());
        let mut best = f64::MIN;
        let mut best_i = lo;
        for i in lo..hi {
            if self.w[i] > best && self.w[i] < th.upper {
                best = self.w[i];
                best_i = i;
            }
        }
        (best, best_i)
    }

    fn decode_train(
        &self,
        train: &[usize],
        th: &DecodeThresholds,
        rest: f64,
    ) -> Result<DecodedFrame> {
        let bp = self.timing.bit_period;
        let tol = self.timing.slot_tolerance;
        // Anchor hypotheses: the first two peaks directly, then
        // one-period-early variants in case the opening burst went
        // undetected.
        let mut anchors: Vec<f64> = Vec::new();
        for shift in [0.0, bp] {
            for &p in train.iter().take(2) {
                let cand = self.time(p) - shift;
                if !anchors.iter().any(|a| (a - cand).abs() < 1e-9) {
                    anchors.push(cand);
                }
            }
        }
        let first_peak_time = self.time(train[0]);
        let mut saw_ambiguous = false;

        for &t0 in anchors.iter() {
            let trailing = train
                .iter()
                .filter(|&&p| self.time(p) > t0 + 7.0 * bp + tol)
                .count();
            let leading = train.iter().filter(|&&p| self.time(p) < t0 - tol).count();
            if trailing > 2 {
                saw_ambiguous = true;
                continue;
            }
            let responses: Vec<(f64, usize)> = (0..8)
                .map(|k| self.slot_response(t0 + k as f64 * bp, th))
                .collect();
            if ![0usize, 1, 6, 7]
                .iter()
                .all(|&k| responses[k].0 > th.lower && responses[k].0 < th.upper)
            {
                continue;
            }
            let mu1 = [0usize, 1, 6, 7]
                .iter()
                .map(|&k| responses[k].0)
                .sum::<f64>()
                / 4.0;
            let bit_thr = rest + BIT_DECISION_FRACTION * (mu1 - rest);
            let mut bits = [true; 8];
            for k in 2..6 {
                bits[k] = responses[k].0 > bit_thr;
            }
            let frame = BitFrame { bits };

            let mut peak_times = Vec::new();
            let mut max_dev: f64 = 0.0;
            for (k, &(resp, idx)) in responses.iter().enumerate() {
                if bits[k] && resp > th.lower {
                    let t = self.time(idx);
                    peak_times.push(t);
                    max_dev = max_dev.max((t - (t0 + k as f64 * bp)).abs());
                }
            }
            let onset = self.find_onset(t0, th);
            let clean = leading == 0
                && trailing == 0
                && (t0 - first_peak_time).abs() < 1e-9
                && max_dev <= 1.5 / self.rate + 1e-12;
            let confidence = if clean {
                FrameConfidence::Exact
            } else {
                FrameConfidence::RecoveredWithTolerance
            };
            return Ok(DecodedFrame {
                code: frame.payload(),
                onset,
                peak_times,
                confidence,
            });
        }
        if saw_ambiguous {
            Err(Error::AmbiguousTrain)
        } else {
            Err(Error::DelimiterValidation)
        }
    }

    /// First crossing of the raw deviation above the lower threshold in the
    /// burst leading up to the first peak.
    fn find_onset(&self, first_peak: f64, th: &DecodeThresholds) -> f64 {
        let lo = self
            .index(first_peak - self.timing.vibration_on)
            .floor()
            .max(0.0) as usize;
        let hi = (self.index(first_peak).ceil() as usize + 1).min(self.d.len());
        for i in lo..hi {
            if self.d[i] > th.lower {
                return self.time(i);
            }
        }
        first_peak - self.timing.vibration_on / 2.0
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Linear-interpolated percentile of a pre-sorted slice, `q` in [0, 1].
fn percentile(s: &mut [f64], q: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = q * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - frac) + s[i + 1] * frac
    } else {
        s[s.len() - 1]
    }
}

/// Centered moving average, zero-padded at the edges (the divisor is the
/// full window length everywhere, so responses taper at the boundaries
/// instead of inflating).
fn sliding_mean(d: &[f64], win: usize) -> Vec<f64> {
    let n = d.len();
    let half = win / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in d {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / win as f64
        })
        .collect()
}
