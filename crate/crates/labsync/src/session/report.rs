//! Machine-readable verification report.

use serde::{Deserialize, Serialize};

use crate::xcorr::{LagEstimate, LagQuality};

use super::manifest::Annotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Match,
    Mismatch,
    MissingVibration,
    MissingAnnotation,
}

/// One row per test execution (or orphaned decoded frame).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportEntry {
    pub annotation: Option<Annotation>,
    pub decoded_code: Option<u8>,
    pub decoded_label: Option<String>,
    /// Decoded vibration onset in the master clock.
    pub onset: Option<f64>,
    pub status: MatchStatus,
    pub lag_acceleration: Option<LagEstimate>,
    pub lag_force: Option<LagEstimate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub matches: usize,
    pub mismatches: usize,
    pub missing_vibration: usize,
    pub missing_annotation: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub toolkit_version: String,
    pub manifest_digest: String,
    pub entries: Vec<ReportEntry>,
    pub summary: ReportSummary,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn summarize(entries: &[ReportEntry]) -> ReportSummary {
        let mut s = ReportSummary::default();
        for e in entries {
            match e.status {
                MatchStatus::Match => s.matches += 1,
                MatchStatus::Mismatch => s.mismatches += 1,
                MatchStatus::MissingVibration => s.missing_vibration += 1,
                MatchStatus::MissingAnnotation => s.missing_annotation += 1,
            }
        }
        s
    }

    /// True when verification found mismatches or failed quality checks
    /// (the CLI maps this to exit code 1).
    pub fn has_problems(&self) -> bool {
        self.entries.iter().any(|e| {
            e.status != MatchStatus::Match
                || e.lag_acceleration
                    .is_some_and(|l| l.quality != LagQuality::Ok)
                || e.lag_force.is_some_and(|l| l.quality != LagQuality::Ok)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
