//! Validation findings shared across record and partition checks.

use serde::{Deserialize, Serialize};

/// How severe a validation finding is.
///
/// Errors make a partition unusable; warnings are reported and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// One validation observation, optionally tied to a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub message: String,
}

impl Finding {
    pub fn error(record_id: Option<&str>, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Error,
            record_id: record_id.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn warning(record_id: Option<&str>, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            record_id: record_id.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// True when no finding in the slice is an error.
pub fn all_clear(findings: &[Finding]) -> bool {
    !findings.iter().any(Finding::is_error)
}
