//! Session ingestion, metadata verification and the end-to-end pipeline.
//!
//! A session is described by a JSON manifest naming the devices, their
//! stream CSV files, the two perturbation windows, the code table and the
//! operator annotations. The pipeline aligns device clocks, decodes the
//! vibration trains on the master accelerometer, cross-checks the decoded
//! test types against the annotations, estimates the residual lags per
//! test execution, and emits a machine-readable report.

mod csvio;
mod manifest;
mod pipeline;
mod report;

pub use csvio::{read_series_csv, write_series_csv};
pub use manifest::{
    load_manifest, unit_to_si_factor, Annotation, ConventionsSpec, DeviceEntry, DeviceRole,
    LoadedManifest, SessionManifest, StreamEntry, StreamKind,
};
pub use pipeline::{
    fit_device_clocks, run_pipeline, run_pipeline_from_path, run_pipeline_opts,
    segment_by_annotations, verify_metadata, SessionData,
};
pub use report::{MatchStatus, ReportEntry, ReportSummary, VerificationReport};
