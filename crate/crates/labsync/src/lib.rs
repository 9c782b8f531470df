//! Toolkit for verifying test-type metadata encoded in vibration pulse
//! trains and synchronizing smartphone IMU streams with motion-capture and
//! force-plate recordings.
//!
//! The crate is organised around a small set of signal kernels
//! ([`series`], [`filter`], [`xcorr`]) shared by the vibration [`codec`],
//! the perturbation-based device [`clock`] alignment, the two
//! post-synchronization lag estimators ([`kinematics`], [`kinetics`]), the
//! [`session`] ingestion/verification pipeline and the deterministic
//! [`sim`]ulator used as the ground-truth oracle in tests.

pub mod clock;
pub mod codec;
pub mod error;
pub mod filter;
pub mod kinematics;
pub mod kinetics;
pub mod series;
pub mod session;
pub mod sim;
pub mod xcorr;

pub use clock::{align_event, apply_clock_model, fit_clock_model, ClockModel, PerturbationEvent};
pub use codec::{
    decode, decode_all, encode, synthesize, BitFrame, DecodeThresholds, DecodedFrame,
    FrameConfidence, PulseTiming, TestCode,
};
pub use error::{Error, Result};
pub use filter::lowpass_zero_phase;
pub use kinematics::{
    acceleration_lag, marker_acceleration, marker_basis, phone_accel_to_lab, FrameConventions,
    MarkerTriad, Rotation, UpAxis,
};
pub use kinetics::{force_lag, summed_force_magnitude, BodyParams, ForcePlatePair};
pub use series::UniformSeries;
pub use session::{
    load_manifest, run_pipeline, segment_by_annotations, verify_metadata, Annotation, MatchStatus,
    ReportEntry, SessionManifest, VerificationReport,
};
pub use sim::{
    simulate, simulate_perturbation, simulate_session, DeviceSim, GroundTruth, ScenarioKind,
    ScenarioParams, SimulatedSession,
};
pub use xcorr::{estimate_lag, LagEstimate, LagMethod, LagQuality};
