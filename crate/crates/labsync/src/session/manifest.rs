//! Session manifest schema and validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::clock::PerturbationEvent;
use crate::codec::DecodeThresholds;
use crate::error::{Error, Result};
use crate::kinematics::{FrameConventions, Rotation, UpAxis};
use crate::kinetics::BodyParams;

use super::csvio::probe_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceRole {
    Worn,
    Master,
    Timer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Accel,
    Gyro,
    Magnetometer,
    MarkerPosition,
    Force,
}

impl StreamKind {
    pub fn channel_count(&self) -> usize {
        match self {
            StreamKind::Accel | StreamKind::Gyro | StreamKind::Magnetometer => 3,
            StreamKind::MarkerPosition => 9,
            StreamKind::Force => 6,
        }
    }

    /// Device-clock streams get remapped by the fitted clock model; the
    /// motion-capture streams already live on the session time base.
    pub fn is_device_clock(&self) -> bool {
        matches!(
            self,
            StreamKind::Accel | StreamKind::Gyro | StreamKind::Magnetometer
        )
    }
}

/// Conversion factor from a declared unit to SI for a given stream kind.
pub fn unit_to_si_factor(kind: StreamKind, units: &str) -> Result<f64> {
    let factor = match (kind, units) {
        (StreamKind::Accel, "m/s^2" | "m/s²") => 1.0,
        (StreamKind::Accel, "g") => 9.80665,
        (StreamKind::Gyro, "rad/s") => 1.0,
        (StreamKind::Gyro, "deg/s") => std::f64::consts::PI / 180.0,
        (StreamKind::MarkerPosition, "m") => 1.0,
        (StreamKind::MarkerPosition, "mm") => 1e-3,
        (StreamKind::MarkerPosition, "cm") => 1e-2,
        (StreamKind::Force, "N") => 1.0,
        (StreamKind::Force, "kN") => 1e3,
        (StreamKind::Magnetometer, "uT" | "µT") => 1.0,
        _ => {
            return Err(Error::Manifest(format!(
                "unsupported unit {units:?} for {kind:?} stream"
            )))
        }
    };
    Ok(factor)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEntry {
    pub kind: StreamKind,
    pub file_path: String,
    pub rate: f64,
    pub units: String,
}

impl StreamEntry {
    pub fn new(kind: StreamKind, file_path: &str, rate: f64, units: &str) -> Self {
        Self {
            kind,
            file_path: file_path.into(),
            rate,
            units: units.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub device_id: String,
    pub role: DeviceRole,
    #[serde(default)]
    pub wear_location: String,
    pub streams: Vec<StreamEntry>,
}

impl DeviceEntry {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamEntry> {
        self.streams.iter().find(|s| s.kind == kind)
    }
}

/// One operator-recorded test execution, in the timer-smartphone clock
/// (assumed synchronized with the master).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub test_label: String,
    #[serde(default)]
    pub condition: String,
    pub start: f64,
    pub end: f64,
}

impl Annotation {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Implausible durations for well-known test labels produce a warning,
    /// never an error.
    pub fn duration_warning(&self) -> Option<String> {
        let expected = if self.test_label.contains("UTT") {
            60.0
        } else if self.test_label.contains("2MWT") {
            120.0
        } else if self.test_label.contains("SBT") {
            30.0
        } else {
            return None;
        };
        let dur = self.duration();
        if (dur - expected).abs() > 0.5 * expected {
            Some(format!(
                "annotation {:?} lasts {dur:.1} s, expected about {expected:.0} s",
                self.test_label
            ))
        } else {
            None
        }
    }
}

/// Frame conventions as stored in the manifest; `mount_rotation` rows in
/// row-major order, identity when omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConventionsSpec {
    #[serde(default = "default_up_axis")]
    pub up_axis: UpAxis,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub mount_rotation: Option<[[f64; 3]; 3]>,
}

fn default_up_axis() -> UpAxis {
    UpAxis::Z
}

fn default_gravity() -> f64 {
    9.80665
}

impl Default for ConventionsSpec {
    fn default() -> Self {
        Self {
            up_axis: UpAxis::Z,
            gravity: default_gravity(),
            mount_rotation: None,
        }
    }
}

impl ConventionsSpec {
    pub fn to_conventions(&self) -> Result<FrameConventions> {
        let mount_rotation = match self.mount_rotation {
            None => Rotation::identity(),
            Some(rows) => {
                let m = Matrix3::new(
                    rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2],
                    rows[2][0], rows[2][1], rows[2][2],
                );
                Rotation::from_matrix(m)?
            }
        };
        let conv = FrameConventions {
            up_axis: self.up_axis,
            gravity: self.gravity,
            mount_rotation,
        };
        conv.validate()?;
        Ok(conv)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionManifest {
    #[serde(default = "default_version")]
    pub version: u32,
    pub devices: Vec<DeviceEntry>,
    pub perturbation_events: Vec<PerturbationEvent>,
    /// 4-bit code to test label, at most 16 entries.
    pub code_table: BTreeMap<u8, String>,
    pub annotations: Vec<Annotation>,
    pub body: BodyParams,
    #[serde(default)]
    pub conventions: ConventionsSpec,
    #[serde(default)]
    pub thresholds: Option<DecodeThresholds>,
}

fn default_version() -> u32 {
    1
}

impl SessionManifest {
    /// Structural validation; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let masters: Vec<&str> = self
            .devices
            .iter()
            .filter(|d| d.role == DeviceRole::Master)
            .map(|d| d.device_id.as_str())
            .collect();
        if masters.len() != 1 {
            return Err(Error::Manifest(format!(
                "exactly one master device required, found {}: [{}]",
                masters.len(),
                masters.join(", ")
            )));
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.devices {
            if !ids.insert(&d.device_id) {
                return Err(Error::Manifest(format!(
                    "duplicate device id {:?}",
                    d.device_id
                )));
            }
            for s in &d.streams {
                if !s.rate.is_finite() || s.rate <= 0.0 {
                    return Err(Error::Manifest(format!(
                        "stream {} has non-positive rate {}",
                        s.file_path, s.rate
                    )));
                }
                unit_to_si_factor(s.kind, &s.units)?;
            }
        }
        if self.perturbation_events.len() != 2 {
            return Err(Error::Manifest(format!(
                "exactly two perturbation events required, found {}",
                self.perturbation_events.len()
            )));
        }
        for e in &self.perturbation_events {
            e.validate()?;
        }
        if self.code_table.len() > 16 {
            return Err(Error::Manifest(
                "code table has more than 16 entries".into(),
            ));
        }
        if let Some(code) = self.code_table.keys().find(|c| **c > 15) {
            return Err(Error::CodeOutOfRange(*code));
        }
        {
            let mut labels = std::collections::BTreeSet::new();
            for label in self.code_table.values() {
                if !labels.insert(label) {
                    return Err(Error::Manifest(format!(
                        "duplicate code table label {label:?}"
                    )));
                }
            }
        }
        let mut sorted: Vec<&Annotation> = self.annotations.iter().collect();
        sorted.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::Manifest(format!(
                    "annotations {:?} and {:?} overlap",
                    pair[0].test_label, pair[1].test_label
                )));
            }
        }
        for a in &self.annotations {
            if a.end <= a.start {
                return Err(Error::Manifest(format!(
                    "annotation {:?} has non-positive duration",
                    a.test_label
                )));
            }
        }
        BodyParams::new(self.body.mass)?;
        self.conventions.to_conventions()?;
        if let Some(t) = self.thresholds {
            DecodeThresholds::new(t.lower, t.upper)?;
        }
        let warnings = self
            .annotations
            .iter()
            .filter_map(|a| a.duration_warning())
            .collect();
        Ok(warnings)
    }

    pub fn master(&self) -> &DeviceEntry {
        self.devices
            .iter()
            .find(|d| d.role == DeviceRole::Master)
            .expect("validated: exactly one master")
    }
}

/// A manifest together with its base directory and validation warnings.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: SessionManifest,
    pub base_dir: PathBuf,
    pub digest: String,
    pub warnings: Vec<String>,
}

/// Parse and fully validate a manifest: structural invariants plus
/// existence, channel counts and rates of every referenced stream file.
pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let manifest: SessionManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut warnings = manifest.validate()?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    for device in &manifest.devices {
        for stream in &device.streams {
            let file = base_dir.join(&stream.file_path);
            if !file.exists() {
                return Err(Error::Manifest(format!(
                    "stream file {} referenced by device {:?} does not exist",
                    file.display(),
                    device.device_id
                )));
            }
            let (names, rate) = probe_csv(&file)?;
            let expected = stream.kind.channel_count();
            if names.len() != expected {
                return Err(Error::Manifest(format!(
                    "{}: {:?} stream has {} channels, expected {expected}",
                    stream.file_path,
                    stream.kind,
                    names.len()
                )));
            }
            if let Some(rate) = rate {
                if (rate - stream.rate).abs() > 1e-3 * stream.rate {
                    return Err(Error::Manifest(format!(
                        "{}: file rate {rate:.4} Hz does not match declared {} Hz",
                        stream.file_path, stream.rate
                    )));
                }
            }
        }
    }
    warnings.sort();
    let digest = hex_digest(&bytes);
    Ok(LoadedManifest {
        manifest,
        base_dir,
        digest,
        warnings,
    })
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(out.len() * 2 + 7);
    hex.push_str("sha256:");
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
