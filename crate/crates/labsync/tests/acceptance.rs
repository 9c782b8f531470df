//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured numbers.

use std::time::Instant;

use labsync::clock::{
    align_event, apply_clock_model, fit_clock_model, ClockModel, PerturbationEvent,
};
use labsync::codec::{decode, encode, PulseTiming, TestCode};
use labsync::filter::lowpass_zero_phase;
use labsync::kinematics::{
    marker_acceleration, marker_basis, phone_accel_to_lab, FrameConventions, MarkerTriad,
};
use labsync::series::UniformSeries;
use labsync::session::{run_pipeline, run_pipeline_from_path, MatchStatus, SessionData};
use labsync::sim::{simulate, simulate_session, DeviceSim, ScenarioParams};
use labsync::xcorr::{estimate_lag, LagMethod, LagQuality};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "{} criterion {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion}: {detail}");
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn iqr(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| {
        let pos = f * (values.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < values.len() {
            values[i] * (1.0 - frac) + values[i + 1] * frac
        } else {
            values[i]
        }
    };
    q(0.75) - q(0.25)
}

#[test]
fn criterion_1_codec_round_trip() {
    let start = Instant::now();
    let timing = PulseTiming::default();
    let amplitude = 3.0;

    // noiseless: every code at both rates decodes exactly
    let mut noiseless_ok = true;
    for rate in [50.0, 100.0] {
        for code in 0..16u8 {
            let s = labsync::codec::synthesize(
                &encode(TestCode::new(code).unwrap()),
                &timing,
                rate,
                amplitude,
                0.0,
                0,
            )
            .unwrap();
            match decode(&s, &timing, None) {
                Ok(f) if f.code.value() == code => {}
                other => {
                    noiseless_ok = false;
                    eprintln!("noiseless decode failed for code {code} at {rate} Hz: {other:?}");
                }
            }
        }
    }

    // noisy: 1000 seeded trials per code at each rate, sigma = amplitude / 4
    let trials = 1000u64;
    let mut failures = 0u64;
    let mut total = 0u64;
    for rate in [50.0, 100.0] {
        for code in 0..16u8 {
            for trial in 0..trials {
                let seed = trial * 4093 + code as u64 * 17 + rate as u64;
                let s = labsync::codec::synthesize(
                    &encode(TestCode::new(code).unwrap()),
                    &timing,
                    rate,
                    amplitude,
                    0.25 * amplitude,
                    seed,
                )
                .unwrap();
                total += 1;
                match decode(&s, &timing, None) {
                    Ok(f) if f.code.value() == code => {}
                    _ => failures += 1,
                }
            }
        }
    }
    let success = 1.0 - failures as f64 / total as f64;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = noiseless_ok && success >= 0.99 && elapsed < 30.0;
    verdict(
        "1 (codec round-trip)",
        pass,
        &format!(
            "noiseless exact: {noiseless_ok}; noisy success {:.2}% of {total} (>= 99% required); {elapsed:.1} s (< 30 s)",
            success * 100.0
        ),
    );
}

#[test]
fn criterion_2_gait_lag_recovery() {
    let start = Instant::now();
    let sessions = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_002);
    let mut err_acc = Vec::with_capacity(sessions);
    let mut err_force = Vec::with_capacity(sessions);
    for i in 0..sessions {
        let mut params = ScenarioParams::gait(i as u64 + 1);
        let lag = rng.random_range(0.04..0.09);
        params.devices.get_mut("waist").unwrap().injected_lag = lag;
        let session = simulate(&params).unwrap();
        let truth = session.ground_truth.injected_lag["waist"];
        let data = SessionData::from_parts(session.manifest, session.streams).unwrap();
        let report = run_pipeline(&data).unwrap();
        let entry = &report.entries[0];
        err_acc.push(entry.lag_acceleration.expect("acc lag").lag - truth);
        err_force.push(entry.lag_force.expect("force lag").lag - truth);
    }
    let frac_acc = err_acc.iter().filter(|e| e.abs() <= 0.005).count() as f64 / sessions as f64;
    let frac_force = err_force.iter().filter(|e| e.abs() <= 0.005).count() as f64 / sessions as f64;
    let mut abs_acc: Vec<f64> = err_acc.iter().map(|e| e.abs()).collect();
    let mut abs_force: Vec<f64> = err_force.iter().map(|e| e.abs()).collect();
    let med_acc = median(&mut abs_acc);
    let med_force = median(&mut abs_force);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = frac_acc >= 0.95
        && frac_force >= 0.95
        && med_acc <= 0.002
        && med_force <= 0.002
        && elapsed < 120.0;
    verdict(
        "2 (gait lag recovery)",
        pass,
        &format!(
            "within 5 ms: acc {:.1}% force {:.1}% (>= 95%); median |err| acc {:.2} ms force {:.2} ms (<= 2 ms); {elapsed:.0} s (< 120 s)",
            frac_acc * 100.0,
            frac_force * 100.0,
            med_acc * 1e3,
            med_force * 1e3
        ),
    );
}

#[test]
fn criterion_3_static_balance_contrast() {
    let start = Instant::now();
    let sessions = 100;
    let mut err_acc = Vec::new();
    let mut err_force = Vec::new();
    for i in 0..sessions {
        let params = ScenarioParams::balance(i as u64 + 1);
        let session = simulate(&params).unwrap();
        let truth = session.ground_truth.injected_lag["waist"];
        let data = SessionData::from_parts(session.manifest, session.streams).unwrap();
        let report = run_pipeline(&data).unwrap();
        let entry = &report.entries[0];
        err_acc.push(entry.lag_acceleration.expect("acc lag").lag - truth);
        err_force.push(entry.lag_force.expect("force lag").lag - truth);
    }
    let iqr_acc = iqr(&mut err_acc);
    let iqr_force = iqr(&mut err_force);
    let mut abs_force: Vec<f64> = err_force.iter().map(|e| e.abs()).collect();
    let med_force = median(&mut abs_force);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = iqr_force * 3.0 <= iqr_acc && med_force <= 0.010 && elapsed < 120.0;
    verdict(
        "3 (static-balance contrast)",
        pass,
        &format!(
            "IQR force {:.1} ms vs acc {:.1} ms (ratio {:.1}, need >= 3); force median |err| {:.1} ms (<= 10 ms); {elapsed:.0} s (< 120 s)",
            iqr_force * 1e3,
            iqr_acc * 1e3,
            iqr_acc / iqr_force.max(1e-12),
            med_force * 1e3
        ),
    );
}

#[test]
fn criterion_4_drift_correction() {
    let mut params = ScenarioParams::balance(77);
    params.event_gap = Some(7200.0);
    params.extra_perturbation = Some((3601.0, 3609.0));
    params.devices.insert(
        "waist".into(),
        DeviceSim {
            injected_lag: 0.0,
            clock: ClockModel {
                skew: 1.0 + 2e-5,
                offset: 0.05,
            },
        },
    );
    let session = simulate(&params).unwrap();
    let master_gyro = &session.streams["master_gyro.csv"];
    let waist_gyro = &session.streams["waist_gyro.csv"];
    let events = &session.manifest.perturbation_events;
    let l1 = align_event(master_gyro, waist_gyro, &events[0], 2.0).unwrap();
    let l2 = align_event(master_gyro, waist_gyro, &events[1], 2.0).unwrap();
    let model = fit_clock_model(l1.lag, events[0].center(), l2.lag, events[1].center()).unwrap();
    let corrected = apply_clock_model(waist_gyro, &model).unwrap();
    let sample_period = 1.0 / waist_gyro.rate();
    let mut residuals = Vec::new();
    for ev in events {
        residuals.push(align_event(master_gyro, &corrected, ev, 2.0).unwrap().lag);
    }
    let mid = PerturbationEvent {
        window: (3601.0, 3609.0),
        axis: None,
    };
    let mid_residual = align_event(master_gyro, &corrected, &mid, 2.0).unwrap().lag;
    let pass = residuals.iter().all(|r| r.abs() < sample_period) && mid_residual.abs() < 0.03;
    verdict(
        "4 (drift correction)",
        pass,
        &format!(
            "event residuals {:.2} ms, {:.2} ms (< {:.0} ms); midway {:.2} ms (< 30 ms)",
            residuals[0] * 1e3,
            residuals[1] * 1e3,
            sample_period * 1e3,
            mid_residual * 1e3
        ),
    );
}

#[test]
fn criterion_5_numeric_kernels() {
    // rotation orthonormality over random non-degenerate triads
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut max_ortho: f64 = 0.0;
    let mut made = 0;
    while made < 200 {
        let p = |rng: &mut ChaCha8Rng| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        };
        let (a, b, c) = (p(&mut rng), p(&mut rng), p(&mut rng));
        if let Ok(r) = marker_basis(a, b, c) {
            let m = r.matrix();
            let dev = (m * m.transpose() - nalgebra::Matrix3::identity())
                .abs()
                .max();
            let det_dev = (m.determinant() - 1.0).abs();
            max_ortho = max_ortho.max(dev).max(det_dev);
            made += 1;
        }
    }
    let rotation_ok = max_ortho <= 1e-9;

    // stationary gravity cancellation through the full transform
    let orientation = marker_basis(
        Vector3::new(0.1, 0.2, 0.3),
        Vector3::new(0.9, 0.1, 0.4),
        Vector3::new(0.2, 0.8, 0.1),
    )
    .unwrap();
    let offsets = [
        Vector3::new(0.05, 0.0, 0.01),
        Vector3::new(-0.03, 0.04, 0.012),
        Vector3::new(-0.02, -0.05, 0.008),
    ];
    let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    let n = 400;
    let mk_marker = |off: &Vector3<f64>| {
        let p = orientation.apply(off);
        UniformSeries::new(
            0.0,
            100.0,
            names.clone(),
            vec![vec![p.x; n], vec![p.y; n], vec![p.z; n]],
        )
        .unwrap()
    };
    let triad = MarkerTriad::new(
        mk_marker(&offsets[0]),
        mk_marker(&offsets[1]),
        mk_marker(&offsets[2]),
    )
    .unwrap();
    let conv = FrameConventions {
        mount_rotation: marker_basis(offsets[0], offsets[1], offsets[2])
            .unwrap()
            .transpose(),
        ..FrameConventions::default()
    };
    let g_sensor = orientation.transpose().apply(&conv.gravity_vector());
    let phone = UniformSeries::new(
        0.0,
        50.0,
        names.clone(),
        vec![
            vec![g_sensor.x; 200],
            vec![g_sensor.y; 200],
            vec![g_sensor.z; 200],
        ],
    )
    .unwrap();
    let lab = phone_accel_to_lab(&phone, &triad, &conv).unwrap();
    let gravity_residual = (0..3)
        .flat_map(|c| lab.channel(c).iter())
        .fold(0.0_f64, |m, &v| m.max(v.abs()));
    let gravity_ok = gravity_residual <= 1e-9;

    // Butterworth: DC gain and zero-phase on a 1 Hz tone
    let constant = UniformSeries::single(0.0, 100.0, "v", vec![2.5; 1000]).unwrap();
    let filtered = lowpass_zero_phase(&constant, 6.0, 2).unwrap();
    let dc_dev = filtered
        .channel(0)
        .iter()
        .fold(0.0_f64, |m, &v| m.max((v - 2.5).abs() / 2.5));
    let tone = UniformSeries::single(
        0.0,
        100.0,
        "v",
        (0..2000)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 100.0).sin())
            .collect(),
    )
    .unwrap();
    let tone_filtered = lowpass_zero_phase(&tone, 6.0, 2).unwrap();
    let phase_lag = estimate_lag(&tone, &tone_filtered, 0.5, true, LagMethod::Acceleration)
        .unwrap()
        .lag;
    let butter_ok = dc_dev <= 1e-6 && phase_lag.abs() < 0.5 / 100.0;

    // central differences exact on quadratics over the central 80%
    let rate = 100.0;
    let n = 1000;
    let c = 1.234;
    let quad = UniformSeries::new(
        0.0,
        rate,
        names.clone(),
        vec![
            (0..n)
                .map(|i| 0.5 * c * (i as f64 / rate).powi(2))
                .collect(),
            vec![0.0; n],
            vec![0.0; n],
        ],
    )
    .unwrap();
    let acc = marker_acceleration(&quad, 6.0).unwrap();
    let quad_dev = acc.channel(0)[n / 10..9 * n / 10]
        .iter()
        .fold(0.0_f64, |m, &v| m.max((v - c).abs() / c));
    let quad_ok = quad_dev <= 1e-6;

    // the force identity (sum of plate norms = mass * specific-force
    // magnitude) holds exactly pre-noise on every simulator scenario
    let mut identity_max: f64 = 0.0;
    for mut params in [ScenarioParams::gait(5), ScenarioParams::balance(5)] {
        params.noise_accel = 0.0;
        params.noise_gyro = 0.0;
        params.noise_force = 0.0;
        params.noise_marker = 0.0;
        params.devices.get_mut("waist").unwrap().injected_lag = 0.0;
        let session = simulate(&params).unwrap();
        let truth = session.ground_truth.com_accel.as_ref().unwrap();
        let forces = &session.streams["forces.csv"];
        let phone = &session.streams["waist_accel.csv"];
        let mass = session.manifest.body.mass;
        let sum_norm = |row: usize| {
            let f = |base: usize| {
                let v = Vector3::new(
                    forces.channel(base)[row],
                    forces.channel(base + 1)[row],
                    forces.channel(base + 2)[row],
                );
                v.norm()
            };
            f(0) + f(3)
        };
        // at the truth grid (nested in the force grid) the identity is exact
        for j in 0..truth.len() {
            let t = truth.start_time() + j as f64 / truth.rate();
            let row = ((t - forces.start_time()) * forces.rate()).round() as usize;
            let a_spec = Vector3::new(
                truth.channel(0)[j],
                truth.channel(1)[j],
                truth.channel(2)[j] + 9.80665,
            );
            identity_max = identity_max.max((sum_norm(row) - mass * a_spec.norm()).abs());
        }
        // and the phone magnitude carries the same specific force
        let mag = phone.magnitude().unwrap();
        for i in 0..mag.len() {
            let t = mag.time_at(i);
            if t < truth.start_time() || t > truth.end_time() {
                continue;
            }
            let j = ((t - truth.start_time()) * truth.rate()).round() as usize;
            let a_spec = Vector3::new(
                truth.channel(0)[j],
                truth.channel(1)[j],
                truth.channel(2)[j] + 9.80665,
            );
            identity_max = identity_max.max((mag.channel(0)[i] - a_spec.norm()).abs() * mass);
        }
    }
    let identity_ok = identity_max <= 1e-9 * 70.0; // per-sample force residual in newtons

    let pass = rotation_ok && gravity_ok && butter_ok && quad_ok && identity_ok;
    verdict(
        "5 (numeric kernels)",
        pass,
        &format!(
            "orthonormality {max_ortho:.1e} (<= 1e-9); gravity residual {gravity_residual:.1e} (<= 1e-9); DC dev {dc_dev:.1e} (<= 1e-6), tone lag {:.2} ms (< 5 ms); quadratic dev {quad_dev:.1e} (<= 1e-6); force-identity max residual {identity_max:.1e} N",
            phase_lag * 1e3
        ),
    );
}

#[test]
fn criterion_6_pipeline_end_to_end() {
    let mut params = ScenarioParams::gait(2024);
    params.duration = 30.0;
    let tests = [
        (5u8, "UTT".to_string()),
        (2, "SBT".to_string()),
        (3, "2MWT".to_string()),
    ];
    let session = simulate_session(&params, &tests).unwrap();
    let truth = session.ground_truth.injected_lag["waist"];

    // deliberately mislabel the middle annotation
    let mut manifest = session.manifest.clone();
    manifest.annotations[1].test_label = "UTT".into();

    let dir = tempfile::tempdir().unwrap();
    let broken = labsync::sim::SimulatedSession {
        manifest,
        streams: session.streams.clone(),
        ground_truth: session.ground_truth.clone(),
    };
    broken.write_to_dir(dir.path()).unwrap();
    let manifest_path = dir.path().join("manifest.json");

    let report1 = run_pipeline_from_path(&manifest_path).unwrap();
    let report2 = run_pipeline_from_path(&manifest_path).unwrap();
    let identical = report1.to_json() == report2.to_json();

    let mismatches: Vec<&labsync::session::ReportEntry> = report1
        .entries
        .iter()
        .filter(|e| e.status == MatchStatus::Mismatch)
        .collect();
    let matches: Vec<&labsync::session::ReportEntry> = report1
        .entries
        .iter()
        .filter(|e| e.status == MatchStatus::Match)
        .collect();
    let lags_ok = matches.iter().all(|e| {
        let a = e
            .lag_acceleration
            .map(|l| (l.lag - truth).abs() <= 0.005)
            .unwrap_or(false);
        let f = e
            .lag_force
            .map(|l| (l.lag - truth).abs() <= 0.005)
            .unwrap_or(false);
        let q = e
            .lag_acceleration
            .map(|l| l.quality == LagQuality::Ok)
            .unwrap_or(false);
        a && f && q
    });
    // exit contract: mismatches mean a problem report (CLI exit code 1)
    let signals_problem = report1.has_problems();

    let pass = identical
        && mismatches.len() == 1
        && matches.len() == 2
        && report1.entries.len() == 3
        && lags_ok
        && signals_problem;
    verdict(
        "6 (pipeline end-to-end)",
        pass,
        &format!(
            "entries {} (3 expected), mismatches {} (exactly 1), matched lags within 5 ms: {lags_ok}, byte-identical re-run: {identical}, problem flagged: {signals_problem}",
            report1.entries.len(),
            mismatches.len()
        ),
    );
}
