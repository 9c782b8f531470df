//! End-to-end session pipeline: clock sync, vibration decode, metadata
//! verification and per-test lag estimation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::clock::{align_event, apply_clock_model, fit_clock_model, ClockModel};
use crate::codec::{decode_all, DecodedFrame, PulseTiming};
use crate::error::{Error, Result};
use crate::kinematics::{acceleration_lag, marker_acceleration, phone_accel_to_lab, MarkerTriad};
use crate::kinetics::{force_lag, ForcePlatePair};
use crate::series::UniformSeries;
use crate::xcorr::DEFAULT_MAX_LAG;

use super::manifest::{
    load_manifest, unit_to_si_factor, Annotation, DeviceEntry, DeviceRole, SessionManifest,
    StreamKind,
};
use super::report::{MatchStatus, ReportEntry, VerificationReport};

/// A decoded frame pairs with the annotation nearest its onset within this
/// many seconds (operator button presses are never further off).
pub const PAIRING_WINDOW: f64 = 10.0;

/// Marker positions are low-passed at this cutoff before differentiation.
const MARKER_CUTOFF: f64 = 6.0;

/// A fully loaded session: validated manifest plus SI-converted streams.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub manifest: SessionManifest,
    /// Streams keyed by the manifest `file_path`.
    pub streams: BTreeMap<String, UniformSeries>,
    pub digest: String,
    pub warnings: Vec<String>,
}

impl SessionData {
    /// Load manifest and every referenced stream from disk.
    pub fn load(manifest_path: &Path) -> Result<SessionData> {
        let loaded = load_manifest(manifest_path)?;
        let mut streams = BTreeMap::new();
        for device in &loaded.manifest.devices {
            for stream in &device.streams {
                if streams.contains_key(&stream.file_path) {
                    continue;
                }
                let factor = unit_to_si_factor(stream.kind, &stream.units)?;
                let series = super::csvio::read_series_csv(
                    &loaded.base_dir.join(&stream.file_path),
                    Some(stream.rate),
                    factor,
                )?;
                streams.insert(stream.file_path.clone(), series);
            }
        }
        Ok(SessionData {
            manifest: loaded.manifest,
            streams,
            digest: loaded.digest,
            warnings: loaded.warnings,
        })
    }

    /// Assemble a session from in-memory parts (the simulator path).
    /// Streams must already be in SI units.
    pub fn from_parts(
        manifest: SessionManifest,
        streams: BTreeMap<String, UniformSeries>,
    ) -> Result<SessionData> {
        let warnings = manifest.validate()?;
        for device in &manifest.devices {
            for stream in &device.streams {
                let series = streams.get(&stream.file_path).ok_or_else(|| {
                    Error::Manifest(format!("stream {} not supplied", stream.file_path))
                })?;
                let expected = stream.kind.channel_count();
                if series.channel_count() != expected {
                    return Err(Error::ChannelCount {
                        expected,
                        got: series.channel_count(),
                    });
                }
            }
        }
        let digest = super::manifest::hex_digest(serde_json::to_string(&manifest)?.as_bytes());
        Ok(SessionData {
            manifest,
            streams,
            digest,
            warnings,
        })
    }

    fn stream_of(&self, device: &DeviceEntry, kind: StreamKind) -> Option<&UniformSeries> {
        device
            .stream(kind)
            .and_then(|s| self.streams.get(&s.file_path))
    }
}

/// Carve one sub-series per annotation on the sample grid (start rounded
/// down, end rounded up). Annotations outside the span come back as `None`
/// so callers can flag missing data without losing the rest.
pub fn segment_by_annotations(
    series: &UniformSeries,
    annotations: &[Annotation],
) -> Vec<(Annotation, Option<UniformSeries>)> {
    annotations
        .iter()
        .map(|ann| {
            let inside = ann.start >= series.start_time() - 1e-9
                && ann.end <= series.end_time() + 1.0 / series.rate() + 1e-9;
            let segment = if inside {
                series.slice_time(ann.start, ann.end).ok()
            } else {
                None
            };
            (ann.clone(), segment)
        })
        .collect()
}

/// Pair decoded frames with annotations and assign match statuses.
///
/// Each frame goes to the annotation whose interval contains its onset, or
/// the nearest one within [`PAIRING_WINDOW`]; every annotation and every
/// frame lands in exactly one entry.
pub fn verify_metadata(
    decoded: &[DecodedFrame],
    annotations: &[Annotation],
    code_table: &BTreeMap<u8, String>,
) -> Vec<ReportEntry> {
    let mut frames: Vec<&DecodedFrame> = decoded.iter().collect();
    frames.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());
    let mut used = vec![false; annotations.len()];
    let mut entries = Vec::new();
    for frame in frames {
        let onset = frame.onset;
        let mut best: Option<(usize, f64)> = None;
        for (i, ann) in annotations.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist = if onset >= ann.start && onset <= ann.end {
                0.0
            } else {
                (onset - ann.start).abs().min((onset - ann.end).abs())
            };
            if dist <= PAIRING_WINDOW && best.is_none_or(|(_, d)| dist < d) {
                best = Some((i, dist));
            }
        }
        let code = frame.code.value();
        let decoded_label = code_table.get(&code).cloned();
        let mut entry = ReportEntry {
            annotation: None,
            decoded_code: Some(code),
            decoded_label: decoded_label.clone(),
            onset: Some(onset),
            status: MatchStatus::MissingAnnotation,
            lag_acceleration: None,
            lag_force: None,
        };
        if let Some((i, _)) = best {
            used[i] = true;
            let ann = &annotations[i];
            entry.status = if decoded_label.as_deref() == Some(ann.test_label.as_str()) {
                MatchStatus::Match
            } else {
                MatchStatus::Mismatch
            };
            entry.annotation = Some(ann.clone());
        }
        entries.push(entry);
    }
    for (i, ann) in annotations.iter().enumerate() {
        if !used[i] {
            entries.push(ReportEntry {
                annotation: Some(ann.clone()),
                decoded_code: None,
                decoded_label: None,
                onset: None,
                status: MatchStatus::MissingVibration,
                lag_acceleration: None,
                lag_force: None,
            });
        }
    }
    entries.sort_by(|a, b| entry_sort_key(a).partial_cmp(&entry_sort_key(b)).unwrap());
    entries
}

fn entry_sort_key(e: &ReportEntry) -> f64 {
    e.annotation
        .as_ref()
        .map(|a| a.start)
        .or(e.onset)
        .unwrap_or(f64::MAX)
}

/// Split a 9-channel marker stream into a triad (channels are taken
/// positionally: marker 1 = columns 1..3, and so on).
fn triad_from_stream(stream: &UniformSeries) -> Result<MarkerTriad> {
    if stream.channel_count() != 9 {
        return Err(Error::ChannelCount {
            expected: 9,
            got: stream.channel_count(),
        });
    }
    let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    let mut markers = Vec::with_capacity(3);
    for m in 0..3 {
        let channels = (0..3).map(|c| stream.channel(3 * m + c).to_vec()).collect();
        markers.push(UniformSeries::new(
            stream.start_time(),
            stream.rate(),
            names.clone(),
            channels,
        )?);
    }
    let mut it = markers.into_iter();
    MarkerTriad::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
}

/// Split a 6-channel force stream into a left/right plate pair.
fn plates_from_stream(stream: &UniformSeries) -> Result<ForcePlatePair> {
    if stream.channel_count() != 6 {
        return Err(Error::ChannelCount {
            expected: 6,
            got: stream.channel_count(),
        });
    }
    let names = vec!["fx".to_string(), "fy".to_string(), "fz".to_string()];
    let side = |offset: usize| {
        UniformSeries::new(
            stream.start_time(),
            stream.rate(),
            names.clone(),
            (0..3)
                .map(|c| stream.channel(offset + c).to_vec())
                .collect(),
        )
    };
    ForcePlatePair::new(side(0)?, side(3)?)
}

/// Wear locations closest to the center of mass win the lag-device pick.
fn device_preference(device: &DeviceEntry, index: usize) -> (u8, usize) {
    let loc = device.wear_location.to_ascii_lowercase();
    let rank = if loc.contains("central_back") || loc.contains("central back") {
        0
    } else if loc.contains("waist") {
        1
    } else {
        2
    };
    (rank, index)
}

/// Fit a clock model for every device from the two perturbation events.
/// The master (and any timer) device maps to the identity.
pub fn fit_device_clocks(
    session: &SessionData,
) -> Result<(BTreeMap<String, ClockModel>, Vec<String>)> {
    let manifest = &session.manifest;
    let master = manifest.master();
    let mut warnings = Vec::new();
    let mut clock_models: BTreeMap<String, ClockModel> = BTreeMap::new();
    let master_gyro = session.stream_of(master, StreamKind::Gyro);
    for device in &manifest.devices {
        if device.role != DeviceRole::Worn {
            clock_models.insert(device.device_id.clone(), ClockModel::identity());
            continue;
        }
        let Some(gyro) = session.stream_of(device, StreamKind::Gyro) else {
            warnings.push(format!(
                "device {:?} has no gyroscope stream; assuming an already-synchronized clock",
                device.device_id
            ));
            clock_models.insert(device.device_id.clone(), ClockModel::identity());
            continue;
        };
        let Some(master_gyro) = master_gyro else {
            return Err(Error::Manifest(
                "master device needs a gyro stream to synchronize worn devices".into(),
            ));
        };
        let ev = &manifest.perturbation_events;
        let lag_start = align_event(master_gyro, gyro, &ev[0], DEFAULT_MAX_LAG)?;
        let lag_end = align_event(master_gyro, gyro, &ev[1], DEFAULT_MAX_LAG)?;
        for (which, lag) in [("start", &lag_start), ("end", &lag_end)] {
            if lag.quality != crate::xcorr::LagQuality::Ok {
                warnings.push(format!(
                    "device {:?}: {which}-event alignment quality {:?}",
                    device.device_id, lag.quality
                ));
            }
        }
        let model = fit_clock_model(lag_start.lag, ev[0].center(), lag_end.lag, ev[1].center())?;
        clock_models.insert(device.device_id.clone(), model);
    }
    Ok((clock_models, warnings))
}

/// Run the whole pipeline over a loaded session.
pub fn run_pipeline(session: &SessionData) -> Result<VerificationReport> {
    run_pipeline_opts(session, true)
}

/// Pipeline variant that can skip the (comparatively expensive) per-test
/// lag estimation, for metadata-only verification.
pub fn run_pipeline_opts(session: &SessionData, compute_lags: bool) -> Result<VerificationReport> {
    let manifest = &session.manifest;
    let mut warnings = session.warnings.clone();
    let conventions = manifest.conventions.to_conventions()?;
    let master = manifest.master();
    let timing = PulseTiming::default();

    // 1. device sync: align every worn device to the master at both events
    let (clock_models, sync_warnings) = fit_device_clocks(session)?;
    warnings.extend(sync_warnings);

    // 2. remap worn device-clock streams onto the master timeline
    let mut corrected: BTreeMap<String, UniformSeries> = BTreeMap::new();
    for device in &manifest.devices {
        let model = clock_models[&device.device_id];
        for stream in &device.streams {
            if !stream.kind.is_device_clock() {
                continue;
            }
            if let Some(series) = session.streams.get(&stream.file_path) {
                let series = if device.role == DeviceRole::Worn {
                    apply_clock_model(series, &model)?
                } else {
                    series.clone()
                };
                corrected.insert(stream.file_path.clone(), series);
            }
        }
    }

    // 3. decode the vibration trains on the master accelerometer
    let master_accel = session
        .stream_of(master, StreamKind::Accel)
        .ok_or_else(|| Error::Manifest("master device needs an accel stream".into()))?;
    let magnitude = master_accel.magnitude()?;
    let (frames, decode_warnings) = decode_all(&magnitude, &timing, manifest.thresholds)?;
    warnings.extend(decode_warnings);

    // 4. pair frames with annotations
    let mut entries = verify_metadata(&frames, &manifest.annotations, &manifest.code_table);

    // 5. residual lags per test execution, where the streams exist
    let mut kin_candidates: Vec<(usize, &DeviceEntry)> = manifest
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            d.stream(StreamKind::Accel).is_some() && d.stream(StreamKind::MarkerPosition).is_some()
        })
        .collect();
    kin_candidates.sort_by_key(|(i, d)| device_preference(d, *i));
    let kin_device = kin_candidates.first().map(|(_, d)| *d);

    let mut com_candidates: Vec<(usize, &DeviceEntry)> = manifest
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| d.stream(StreamKind::Accel).is_some() && d.role == DeviceRole::Worn)
        .collect();
    com_candidates.sort_by_key(|(i, d)| device_preference(d, *i));
    let com_device = com_candidates.first().map(|(_, d)| *d);
    let force_stream = manifest
        .devices
        .iter()
        .flat_map(|d| d.streams.iter())
        .find(|s| s.kind == StreamKind::Force)
        .and_then(|s| session.streams.get(&s.file_path));

    for entry in &mut entries {
        if !compute_lags {
            break;
        }
        let Some(ann) = entry.annotation.clone() else {
            continue;
        };

        if let Some(device) = kin_device {
            match kinematic_lag_for(session, &corrected, device, &ann, &conventions) {
                Ok(lag) => entry.lag_acceleration = Some(lag),
                Err(e) => warnings.push(format!(
                    "acceleration lag for {:?} [{:.1}, {:.1}]: {e}",
                    ann.test_label, ann.start, ann.end
                )),
            }
        }

        if let (Some(device), Some(force)) = (com_device, force_stream) {
            match kinetic_lag_for(session, &corrected, device, force, &ann, manifest) {
                Ok(lag) => entry.lag_force = Some(lag),
                Err(e) => warnings.push(format!(
                    "force lag for {:?} [{:.1}, {:.1}]: {e}",
                    ann.test_label, ann.start, ann.end
                )),
            }
        }
    }

    let summary = VerificationReport::summarize(&entries);
    Ok(VerificationReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        manifest_digest: session.digest.clone(),
        entries,
        summary,
        warnings,
    })
}

fn corrected_stream<'a>(
    session: &'a SessionData,
    corrected: &'a BTreeMap<String, UniformSeries>,
    device: &DeviceEntry,
    kind: StreamKind,
) -> Option<&'a UniformSeries> {
    let entry = device.stream(kind)?;
    corrected
        .get(&entry.file_path)
        .or_else(|| session.streams.get(&entry.file_path))
}

fn kinematic_lag_for(
    session: &SessionData,
    corrected: &BTreeMap<String, UniformSeries>,
    device: &DeviceEntry,
    ann: &Annotation,
    conventions: &crate::kinematics::FrameConventions,
) -> Result<crate::xcorr::LagEstimate> {
    let phone = corrected_stream(session, corrected, device, StreamKind::Accel)
        .ok_or_else(|| Error::Manifest("accel stream missing".into()))?;
    let markers = session
        .stream_of(device, StreamKind::MarkerPosition)
        .ok_or_else(|| Error::Manifest("marker stream missing".into()))?;
    let phone_seg = phone.slice_time(ann.start, ann.end)?;
    let triad = triad_from_stream(&markers.slice_time(ann.start, ann.end)?)?.fill_gaps();
    let lab = phone_accel_to_lab(&phone_seg, &triad, conventions)?;
    let marker_acc = marker_acceleration(triad.marker(0), MARKER_CUTOFF)?;
    acceleration_lag(
        &lab,
        &marker_acc,
        conventions.up_axis.channel_name(),
        DEFAULT_MAX_LAG,
    )
}

fn kinetic_lag_for(
    session: &SessionData,
    corrected: &BTreeMap<String, UniformSeries>,
    device: &DeviceEntry,
    force: &UniformSeries,
    ann: &Annotation,
    manifest: &SessionManifest,
) -> Result<crate::xcorr::LagEstimate> {
    let com = corrected_stream(session, corrected, device, StreamKind::Accel)
        .ok_or_else(|| Error::Manifest("accel stream missing".into()))?;
    let com_seg = com.slice_time(ann.start, ann.end)?;
    let plates = plates_from_stream(&force.slice_time(ann.start, ann.end)?)?;
    force_lag(&com_seg, &plates, &manifest.body, DEFAULT_MAX_LAG, None)
}

/// Load a session from a manifest path and run the pipeline.
pub fn run_pipeline_from_path(manifest_path: &Path) -> Result<VerificationReport> {
    let session = SessionData::load(manifest_path)?;
    run_pipeline(&session)
}
