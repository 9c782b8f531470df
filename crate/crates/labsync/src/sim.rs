//! Deterministic synthetic-session generator.
//!
//! A simulated session lays out, on one true timeline: a rocking
//! perturbation near the start, one vibration train per test marking the
//! motion-capture recording start, the test motion itself, and a second
//! rocking perturbation near the end for drift identification. Phone
//! streams are stamped in each device's own (possibly skewed) clock with
//! the accelerometer content additionally delayed by the injected lag;
//! marker and force streams are stamped in the reference timeline. Every
//! sample is reproducible from `(params, seed)`: each stream draws its
//! noise from its own counter-based generator keyed by the seed and the
//! stream name.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{ClockModel, PerturbationEvent};
use crate::codec::{encode, PulseTiming, TestCode};
use crate::error::{Error, Result};
use crate::kinematics::{marker_basis, Rotation};
use crate::series::UniformSeries;
use crate::session::{
    Annotation, DeviceEntry, DeviceRole, SessionManifest, StreamEntry, StreamKind,
};

/// Sampling rates of the three recording systems.
pub const PHONE_RATE: f64 = 50.0;
pub const MARKER_RATE: f64 = 100.0;
pub const FORCE_RATE: f64 = 1000.0;

/// Vibration burst envelope used by the virtual motor.
pub const VIBRATION_AMPLITUDE: f64 = 3.0;

/// Rocking burst shape: frequency, exponential decay constant, duration.
const ROCK_FREQ: f64 = 1.5;
const ROCK_DECAY: f64 = 2.0;
const ROCK_SPAN: f64 = 5.0;
const ROCK_AMPLITUDE: f64 = 2.0;

/// Injected lags are realized on a 0.1 ms grid.
const LAG_QUANTUM: f64 = 1e-4;

const GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Gait,
    Balance,
    Perturbation,
}

/// Per-device clock error and sensor-pipeline lag.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeviceSim {
    /// Content delay of the accelerometer stream in seconds; this is the
    /// residual the lag estimators recover.
    pub injected_lag: f64,
    /// Own-clock model relative to the reference device.
    pub clock: ClockModel,
}

impl Default for DeviceSim {
    fn default() -> Self {
        Self {
            injected_lag: 0.066,
            clock: ClockModel::identity(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    /// Test duration in seconds (per test execution).
    pub duration: f64,
    pub gait_frequency: f64,
    /// Vertical CoM acceleration amplitude during gait, m/s^2.
    pub gait_amplitude: f64,
    /// Base frequency of the two-component postural sway model.
    pub sway_frequency: f64,
    /// RMS of the vertical sway acceleration, m/s^2.
    pub sway_amplitude: f64,
    pub noise_accel: f64,
    pub noise_gyro: f64,
    pub noise_force: f64,
    pub noise_marker: f64,
    /// Worn devices keyed by id; the reference device "master" is implicit.
    pub devices: BTreeMap<String, DeviceSim>,
    pub mass: f64,
    pub seed: u64,
    pub test_code: u8,
    pub test_label: String,
    /// Forces the spacing between the two perturbation events (seconds).
    pub event_gap: Option<f64>,
    /// Optional third rocking burst for mid-session residual checks; the
    /// window is not listed in the manifest.
    pub extra_perturbation: Option<(f64, f64)>,
}

impl ScenarioParams {
    pub fn gait(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Gait,
            duration: 120.0,
            gait_frequency: 2.0,
            gait_amplitude: 2.0,
            sway_frequency: 0.3,
            sway_amplitude: 0.02,
            noise_accel: 0.005,
            noise_gyro: 0.002,
            noise_force: 0.5,
            noise_marker: 0.0005,
            devices: BTreeMap::from([("waist".to_string(), DeviceSim::default())]),
            mass: 70.0,
            seed,
            test_code: 5,
            test_label: "UTT".into(),
            event_gap: None,
            extra_perturbation: None,
        }
    }

    pub fn balance(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Balance,
            duration: 30.0,
            test_code: 2,
            test_label: "SBT".into(),
            devices: BTreeMap::from([(
                "waist".to_string(),
                DeviceSim {
                    injected_lag: 0.067,
                    clock: ClockModel::identity(),
                },
            )]),
            ..Self::gait(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(Error::InvalidScenario("duration must be positive".into()));
        }
        for (name, v) in [
            ("gait_amplitude", self.gait_amplitude),
            ("sway_amplitude", self.sway_amplitude),
            ("noise_accel", self.noise_accel),
            ("noise_gyro", self.noise_gyro),
            ("noise_force", self.noise_force),
            ("noise_marker", self.noise_marker),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        let freqs_ok = self.gait_frequency > 0.0 && self.sway_frequency > 0.0;
        if !freqs_ok {
            return Err(Error::InvalidScenario(
                "frequencies must be positive".into(),
            ));
        }
        TestCode::new(self.test_code)?;
        for (id, dev) in &self.devices {
            dev.clock
                .validate()
                .map_err(|e| Error::InvalidScenario(format!("device {id}: {e}")))?;
        }
        Ok(())
    }
}

/// Everything needed to check a pipeline run against the construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Injected accelerometer lag per device, quantized to 0.1 ms.
    pub injected_lag: BTreeMap<String, f64>,
    /// Injected clock model per device (reference time to device clock).
    pub clock: BTreeMap<String, ClockModel>,
    pub codes: Vec<u8>,
    /// True vibration onsets in reference time, one per test.
    pub frame_onsets: Vec<f64>,
    /// Annotation windows in reference time.
    pub test_windows: Vec<(f64, f64)>,
    /// The two manifest perturbation windows, plus any extra check window.
    pub perturbation_windows: Vec<(f64, f64)>,
    /// True CoM acceleration (lab frame, gravity-free) over the mocap span.
    #[serde(skip)]
    pub com_accel: Option<UniformSeries>,
}

/// A generated session: manifest, streams keyed by file name, and truth.
#[derive(Debug, Clone)]
pub struct SimulatedSession {
    pub manifest: SessionManifest,
    pub streams: BTreeMap<String, UniformSeries>,
    pub ground_truth: GroundTruth,
}

impl SimulatedSession {
    /// Write the manifest, all stream CSVs and the ground truth to `dir`.
    ///
    /// Marker streams are written in millimetres (the manifest declares the
    /// unit) to exercise ingestion-side conversion; everything else is SI.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for device in &self.manifest.devices {
            for stream in &device.streams {
                let series = self.streams.get(&stream.file_path).ok_or_else(|| {
                    Error::Manifest(format!("missing stream {}", stream.file_path))
                })?;
                let scale = crate::session::unit_to_si_factor(stream.kind, &stream.units)?;
                crate::session::write_series_csv(
                    &dir.join(&stream.file_path),
                    series,
                    1.0 / scale,
                )?;
            }
        }
        let manifest_json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest_json)?;
        let truth_json = serde_json::to_string_pretty(&self.ground_truth)?;
        std::fs::write(dir.join("ground_truth.json"), truth_json)?;
        if let Some(com) = &self.ground_truth.com_accel {
            crate::session::write_series_csv(&dir.join("com_accel_truth.csv"), com, 1.0)?;
        }
        Ok(())
    }
}

/// Deterministic per-stream RNG: ChaCha seeded from SHA-256(seed, name).
fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

fn quantize_lag(lag: f64) -> f64 {
    (lag / LAG_QUANTUM).round() * LAG_QUANTUM
}

/// Continuous body motion over the whole session: a pure tone for gait, a
/// two-component sway for balance. Positions are the exact double integral
/// of the accelerations, so marker differentiation and the force
/// construction agree with the accelerometer content everywhere.
struct MotionModel {
    /// (amplitude, angular frequency, phase) per component and axis.
    components: [Vec<(f64, f64, f64)>; 3],
    base_height: f64,
}

impl MotionModel {
    fn new(params: &ScenarioParams) -> Self {
        let mut components: [Vec<(f64, f64, f64)>; 3] = [vec![], vec![], vec![]];
        match params.kind {
            ScenarioKind::Gait => {
                // Incommensurate partials around the step frequency keep the
                // autocorrelation aperiodic inside the lag search window, the
                // way stride-to-stride variability does for real walking;
                // weights are normalized to the RMS of a pure tone.
                let mut rng = stream_rng(params.seed, "gait_phases");
                let uniform = rand::distr::Uniform::new(0.0, 2.0 * std::f64::consts::PI)
                    .expect("valid range");
                let w = 2.0 * std::f64::consts::PI * params.gait_frequency;
                for (weight, ratio) in [(0.9, 1.0), (0.375, 2.31), (0.225, 0.45)] {
                    let phase = uniform.sample(&mut rng);
                    components[2].push((weight * params.gait_amplitude, w * ratio, phase));
                }
            }
            ScenarioKind::Balance | ScenarioKind::Perturbation => {
                let mut rng = stream_rng(params.seed, "sway_phases");
                let uniform = rand::distr::Uniform::new(0.0, 2.0 * std::f64::consts::PI)
                    .expect("valid range");
                let f1 = params.sway_frequency;
                let f2 = params.sway_frequency + 0.4;
                for (axis, scale) in [(0usize, 0.5), (1, 0.5), (2, 1.0)] {
                    for f in [f1, f2] {
                        let w = 2.0 * std::f64::consts::PI * f;
                        let phase = uniform.sample(&mut rng);
                        components[axis].push((scale * params.sway_amplitude, w, phase));
                    }
                }
            }
        }
        Self {
            components,
            base_height: 1.0,
        }
    }

    /// Gravity-free CoM acceleration in the lab frame.
    fn accel(&self, tau: f64) -> Vector3<f64> {
        let mut a = Vector3::zeros();
        for (axis, comps) in self.components.iter().enumerate() {
            for &(amp, w, phase) in comps {
                a[axis] += amp * (w * tau + phase).sin();
            }
        }
        a
    }

    fn position(&self, tau: f64) -> Vector3<f64> {
        let mut p = Vector3::new(0.0, 0.0, self.base_height);
        for (axis, comps) in self.components.iter().enumerate() {
            for &(amp, w, phase) in comps {
                p[axis] -= amp / (w * w) * (w * tau + phase).sin();
            }
        }
        p
    }
}

/// Session timeline derived from the parameters.
struct Timeline {
    event1: (f64, f64),
    event2: (f64, f64),
    rock_starts: Vec<f64>,
    /// (vibration onset, annotation window) per test.
    tests: Vec<(f64, (f64, f64))>,
    mocap_span: (f64, f64),
    session_end: f64,
}

impl Timeline {
    fn build(params: &ScenarioParams, tests: &[(u8, String)]) -> Result<Timeline> {
        let rock1 = 2.5;
        let event1 = (rock1 - 1.0, rock1 + ROCK_SPAN + 1.0);
        let mut test_layout = Vec::new();
        let mut cursor = 12.0;
        for _ in tests {
            let onset = cursor;
            let ann_start = onset + 9.5;
            let ann_end = ann_start + params.duration;
            test_layout.push((onset, (ann_start, ann_end)));
            cursor = ann_end + 3.0;
        }
        let last_end = test_layout.last().map(|(_, (_, e))| *e).unwrap_or(12.0);
        let rock2 = match params.event_gap {
            Some(gap) => rock1 + gap,
            None => (last_end + 4.0).max(rock1 + 90.0),
        };
        if rock2 < last_end + 3.0 {
            return Err(Error::InvalidScenario(format!(
                "event gap {:?} places the closing perturbation inside the tests",
                params.event_gap
            )));
        }
        let event2 = (rock2 - 1.0, rock2 + ROCK_SPAN + 1.0);
        let mut rock_starts = vec![rock1, rock2];
        if let Some((s, _)) = params.extra_perturbation {
            rock_starts.push(s + 1.0);
        }
        let mocap_span = (test_layout[0].0, last_end + 2.0);
        Ok(Timeline {
            event1,
            event2,
            rock_starts,
            tests: test_layout,
            mocap_span,
            session_end: event2.1 + 2.0,
        })
    }
}

fn rocking(tau: f64, rock_starts: &[f64]) -> f64 {
    let mut v = 0.0;
    for &start in rock_starts {
        let dt = tau - start;
        if (0.0..=ROCK_SPAN).contains(&dt) {
            v += ROCK_AMPLITUDE
                * (2.0 * std::f64::consts::PI * ROCK_FREQ * dt).sin()
                * (-dt / ROCK_DECAY).exp();
        }
    }
    v
}

fn vibration(tau: f64, onsets: &[f64], frames: &[[bool; 8]], timing: &PulseTiming) -> f64 {
    for (onset, bits) in onsets.iter().zip(frames) {
        let rel = tau - onset;
        if !(0.0..=8.0 * timing.bit_period).contains(&rel) {
            continue;
        }
        let k = (rel / timing.bit_period).floor() as usize;
        if k < 8 && bits[k] {
            let dt = rel - k as f64 * timing.bit_period;
            if dt < timing.vibration_on {
                let carrier = PHONE_RATE / 4.0;
                let phase = 2.0 * std::f64::consts::PI * carrier * dt + std::f64::consts::FRAC_PI_4;
                return VIBRATION_AMPLITUDE * phase.sin().abs();
            }
        }
    }
    0.0
}

/// Fixed world orientation of the phone body and its marker offsets
/// (phone frame, metres).
fn phone_orientation() -> Rotation {
    // rotate 90 degrees about x, then 30 about z
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
    let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
    Rotation::from_matrix((rz * rx).into_inner()).expect("proper rotation")
}

fn marker_offsets() -> [Vector3<f64>; 3] {
    [
        Vector3::new(0.05, 0.0, 0.01),
        Vector3::new(-0.03, 0.04, 0.012),
        Vector3::new(-0.02, -0.05, 0.008),
    ]
}

/// Generate a complete single-test session.
pub fn simulate(params: &ScenarioParams) -> Result<SimulatedSession> {
    simulate_session(params, &[(params.test_code, params.test_label.clone())])
}

/// Generate a session executing several tests back to back; the body
/// motion process runs continuously, each test carving its own window.
pub fn simulate_session(
    params: &ScenarioParams,
    tests: &[(u8, String)],
) -> Result<SimulatedSession> {
    params.validate()?;
    if tests.is_empty() {
        return Err(Error::InvalidScenario("at least one test required".into()));
    }
    let timing = PulseTiming::default();
    let timeline = Timeline::build(params, tests)?;
    let motion = MotionModel::new(params);
    let orientation = phone_orientation();
    let offsets = marker_offsets();
    let marker_frame = marker_basis(offsets[0], offsets[1], offsets[2]).expect("non-collinear");
    let mount = marker_frame.transpose();

    let frames: Vec<[bool; 8]> = tests
        .iter()
        .map(|(code, _)| Ok(*encode(TestCode::new(*code)?).bits()))
        .collect::<Result<_>>()?;
    let onsets: Vec<f64> = timeline.tests.iter().map(|(o, _)| *o).collect();

    let mut streams = BTreeMap::new();
    let mut devices = Vec::new();

    // --- master phone: reference clock, carries the vibration train ---
    let n_phone = (timeline.session_end * PHONE_RATE).floor() as usize + 1;
    {
        let mut rng = stream_rng(params.seed, "master_accel");
        let noise = gauss(params.noise_accel);
        let mut xs = Vec::with_capacity(n_phone);
        let mut ys = Vec::with_capacity(n_phone);
        let mut zs = Vec::with_capacity(n_phone);
        for k in 0..n_phone {
            let t = k as f64 / PHONE_RATE;
            let burst = vibration(t, &onsets, &frames, &timing);
            xs.push(draw(&noise, &mut rng));
            ys.push(draw(&noise, &mut rng));
            zs.push(GRAVITY + burst + draw(&noise, &mut rng));
        }
        streams.insert(
            "master_accel.csv".to_string(),
            UniformSeries::new(0.0, PHONE_RATE, xyz_names(), vec![xs, ys, zs])?,
        );
    }
    {
        let mut rng = stream_rng(params.seed, "master_gyro");
        let noise = gauss(params.noise_gyro);
        let mut xs = Vec::with_capacity(n_phone);
        let mut ys = Vec::with_capacity(n_phone);
        let mut zs = Vec::with_capacity(n_phone);
        for k in 0..n_phone {
            let t = k as f64 / PHONE_RATE;
            xs.push(draw(&noise, &mut rng));
            ys.push(rocking(t, &timeline.rock_starts) + draw(&noise, &mut rng));
            zs.push(draw(&noise, &mut rng));
        }
        streams.insert(
            "master_gyro.csv".to_string(),
            UniformSeries::new(0.0, PHONE_RATE, xyz_names(), vec![xs, ys, zs])?,
        );
    }
    devices.push(DeviceEntry {
        device_id: "master".into(),
        role: DeviceRole::Master,
        wear_location: "table".into(),
        streams: vec![
            StreamEntry::new(StreamKind::Accel, "master_accel.csv", PHONE_RATE, "m/s^2"),
            StreamEntry::new(StreamKind::Gyro, "master_gyro.csv", PHONE_RATE, "rad/s"),
            StreamEntry::new(StreamKind::Force, "forces.csv", FORCE_RATE, "N"),
        ],
    });

    // --- worn phones: own clocks, accelerometer content delayed ---
    let mut truth_lag = BTreeMap::new();
    let mut truth_clock = BTreeMap::new();
    truth_lag.insert("master".to_string(), 0.0);
    truth_clock.insert("master".to_string(), ClockModel::identity());
    for (id, dev) in &params.devices {
        let lag = quantize_lag(dev.injected_lag);
        truth_lag.insert(id.clone(), lag);
        truth_clock.insert(id.clone(), dev.clock);
        let accel_name = format!("{id}_accel.csv");
        let gyro_name = format!("{id}_gyro.csv");
        {
            let mut rng = stream_rng(params.seed, &accel_name);
            let noise = gauss(params.noise_accel);
            let mut xs = Vec::with_capacity(n_phone);
            let mut ys = Vec::with_capacity(n_phone);
            let mut zs = Vec::with_capacity(n_phone);
            for k in 0..n_phone {
                let own = k as f64 / PHONE_RATE;
                let tau = dev.clock.reference_time(own) - lag;
                let a_lab = motion.accel(tau) + Vector3::new(0.0, 0.0, GRAVITY);
                let a_sensor = orientation.transpose().apply(&a_lab);
                xs.push(a_sensor.x + draw(&noise, &mut rng));
                ys.push(a_sensor.y + draw(&noise, &mut rng));
                zs.push(a_sensor.z + draw(&noise, &mut rng));
            }
            streams.insert(
                accel_name.clone(),
                UniformSeries::new(0.0, PHONE_RATE, xyz_names(), vec![xs, ys, zs])?,
            );
        }
        {
            let mut rng = stream_rng(params.seed, &gyro_name);
            let noise = gauss(params.noise_gyro);
            let mut xs = Vec::with_capacity(n_phone);
            let mut ys = Vec::with_capacity(n_phone);
            let mut zs = Vec::with_capacity(n_phone);
            for k in 0..n_phone {
                let own = k as f64 / PHONE_RATE;
                let tau = dev.clock.reference_time(own);
                xs.push(draw(&noise, &mut rng));
                ys.push(rocking(tau, &timeline.rock_starts) + draw(&noise, &mut rng));
                zs.push(draw(&noise, &mut rng));
            }
            streams.insert(
                gyro_name.clone(),
                UniformSeries::new(0.0, PHONE_RATE, xyz_names(), vec![xs, ys, zs])?,
            );
        }
        devices.push(DeviceEntry {
            device_id: id.clone(),
            role: DeviceRole::Worn,
            wear_location: "central_back".into(),
            streams: vec![
                StreamEntry::new(StreamKind::Accel, &accel_name, PHONE_RATE, "m/s^2"),
                StreamEntry::new(StreamKind::Gyro, &gyro_name, PHONE_RATE, "rad/s"),
                StreamEntry::new(
                    StreamKind::MarkerPosition,
                    "waist_markers.csv",
                    MARKER_RATE,
                    "mm",
                ),
            ],
        });
    }

    // --- markers: reference timeline, rigid triad on the waist phone ---
    let (mocap_start, mocap_end) = timeline.mocap_span;
    let n_marker = ((mocap_end - mocap_start) * MARKER_RATE).floor() as usize + 1;
    {
        let mut rng = stream_rng(params.seed, "waist_markers");
        let noise = gauss(params.noise_marker);
        let mut cols: Vec<Vec<f64>> = (0..9).map(|_| Vec::with_capacity(n_marker)).collect();
        for j in 0..n_marker {
            let tau = mocap_start + j as f64 / MARKER_RATE;
            let com = motion.position(tau);
            for (m, off) in offsets.iter().enumerate() {
                let p = com + orientation.apply(off);
                for (c, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                    cols[3 * m + c].push(v + draw(&noise, &mut rng));
                }
            }
        }
        let names = (1..=3)
            .flat_map(|m| ["x", "y", "z"].map(|c| format!("m{m}_{c}")))
            .collect::<Vec<_>>();
        streams.insert(
            "waist_markers.csv".to_string(),
            UniformSeries::new(mocap_start, MARKER_RATE, names, cols)?,
        );
    }

    // --- force plates: reference timeline, norms sum to mass * |a| ---
    {
        let mut rng = stream_rng(params.seed, "forces");
        let noise = gauss(params.noise_force);
        let n_force = ((mocap_end - mocap_start) * FORCE_RATE).floor() as usize + 1;
        let mut cols: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(n_force)).collect();
        let half_gait = std::f64::consts::PI * params.gait_frequency;
        for j in 0..n_force {
            let tau = mocap_start + j as f64 / FORCE_RATE;
            let specific = motion.accel(tau) + Vector3::new(0.0, 0.0, GRAVITY);
            let total = specific * params.mass;
            let left_weight = match params.kind {
                ScenarioKind::Gait => (0.5 + 0.75 * (half_gait * tau).sin()).clamp(0.0, 1.0),
                _ => 0.5,
            };
            let left = total * left_weight;
            let right = total * (1.0 - left_weight);
            for (c, v) in [left.x, left.y, left.z, right.x, right.y, right.z]
                .into_iter()
                .enumerate()
            {
                cols[c].push(v + draw(&noise, &mut rng));
            }
        }
        let names = ["left", "right"]
            .iter()
            .flat_map(|s| ["fx", "fy", "fz"].map(|c| format!("{s}_{c}")))
            .collect::<Vec<_>>();
        streams.insert(
            "forces.csv".to_string(),
            UniformSeries::new(mocap_start, FORCE_RATE, names, cols)?,
        );
    }

    // --- ground-truth CoM acceleration over the mocap span ---
    let com_accel = {
        let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n_marker)).collect();
        for j in 0..n_marker {
            let tau = mocap_start + j as f64 / MARKER_RATE;
            let a = motion.accel(tau);
            cols[0].push(a.x);
            cols[1].push(a.y);
            cols[2].push(a.z);
        }
        UniformSeries::new(mocap_start, MARKER_RATE, xyz_names(), cols)?
    };

    let annotations: Vec<Annotation> = timeline
        .tests
        .iter()
        .zip(tests)
        .map(|((_, (start, end)), (_, label))| Annotation {
            test_label: label.clone(),
            condition: String::new(),
            start: *start,
            end: *end,
        })
        .collect();

    let mut code_table = BTreeMap::new();
    for (code, label) in tests {
        code_table.insert(*code, label.clone());
    }

    let manifest = SessionManifest {
        version: 1,
        devices,
        perturbation_events: vec![
            PerturbationEvent {
                window: timeline.event1,
                axis: None,
            },
            PerturbationEvent {
                window: timeline.event2,
                axis: None,
            },
        ],
        code_table,
        annotations,
        body: crate::kinetics::BodyParams { mass: params.mass },
        conventions: crate::session::ConventionsSpec {
            up_axis: crate::kinematics::UpAxis::Z,
            gravity: GRAVITY,
            mount_rotation: Some(matrix_rows(&mount)),
        },
        thresholds: None,
    };

    let mut perturbation_windows = vec![timeline.event1, timeline.event2];
    if let Some(w) = params.extra_perturbation {
        perturbation_windows.push(w);
    }

    Ok(SimulatedSession {
        manifest,
        streams,
        ground_truth: GroundTruth {
            injected_lag: truth_lag,
            clock: truth_clock,
            codes: tests.iter().map(|(c, _)| *c).collect(),
            frame_onsets: onsets,
            test_windows: timeline.tests.iter().map(|(_, w)| *w).collect(),
            perturbation_windows,
            com_accel: Some(com_accel),
        },
    })
}

/// Rocking-only gyro segments for at least two devices, for exercising the
/// alignment step in isolation. Content is identically shaped across
/// devices, shifted by each device's clock error.
pub fn simulate_perturbation(params: &ScenarioParams) -> Result<BTreeMap<String, UniformSeries>> {
    params.validate()?;
    if params.devices.is_empty() {
        return Err(Error::NeedTwoDevices(1));
    }
    let span = 20.0;
    let rock_starts = [5.0];
    let n = (span * PHONE_RATE) as usize;
    let mut out = BTreeMap::new();
    let mut make = |id: &str, clock: &ClockModel| -> Result<()> {
        let mut rng = stream_rng(params.seed, &format!("perturbation_{id}"));
        let noise = gauss(params.noise_gyro);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for k in 0..n {
            let own = k as f64 / PHONE_RATE;
            let tau = clock.reference_time(own);
            xs.push(draw(&noise, &mut rng));
            ys.push(rocking(tau, &rock_starts) + draw(&noise, &mut rng));
            zs.push(draw(&noise, &mut rng));
        }
        out.insert(
            id.to_string(),
            UniformSeries::new(0.0, PHONE_RATE, xyz_names(), vec![xs, ys, zs])?,
        );
        Ok(())
    };
    make("master", &ClockModel::identity())?;
    for (id, dev) in &params.devices {
        make(id, &dev.clock)?;
    }
    Ok(out)
}

fn xyz_names() -> Vec<String> {
    vec!["x".into(), "y".into(), "z".into()]
}

fn matrix_rows(r: &Rotation) -> [[f64; 3]; 3] {
    let m = r.matrix();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn gauss(sigma: f64) -> Option<Normal<f64>> {
    if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("finite sigma"))
    } else {
        None
    }
}

fn draw(noise: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    match noise {
        Some(n) => n.sample(rng),
        None => 0.0,
    }
}
