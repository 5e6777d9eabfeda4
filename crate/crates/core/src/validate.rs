//! Configuration validation with JSON-style field paths.

use std::fmt;

use serde::Serialize;

use crate::fixed::Fixed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    /// Dotted path to the offending field, e.g. `basket.workloads`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Tolerance for "sums to one" checks: 1e-12.
pub const SUM_TOLERANCE: Fixed = Fixed::from_raw(1_000_000);

/// Accumulates errors under a path prefix.
#[derive(Debug, Default)]
pub struct Validator {
    prefix: Vec<String>,
    errors: Vec<ConfigError>,
}

impl Validator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nested<F: FnOnce(&mut Validator)>(&mut self, segment: &str, f: F) {
        self.prefix.push(segment.to_string());
        f(self);
        self.prefix.pop();
    }

    pub fn path(&self, field: &str) -> String {
        let mut parts = self.prefix.clone();
        if !field.is_empty() {
            parts.push(field.to_string());
        }
        parts.join(".")
    }

    pub fn error(&mut self, field: &str, message: impl Into<String>) {
        let path = self.path(field);
        self.errors.push(ConfigError {
            path,
            message: message.into(),
        });
    }

    pub fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.error(field, message);
        }
    }

    pub fn sums_to_one(&mut self, field: &str, values: impl IntoIterator<Item = Fixed>) {
        let total: Fixed = values.into_iter().sum();
        if (total - Fixed::ONE).abs() > SUM_TOLERANCE {
            self.error(field, format!("weights must sum to 1 (got {total})"));
        }
    }

    pub fn finish(self) -> Result<(), Vec<ConfigError>> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(self.errors)
        }
    }

    pub fn into_errors(self) -> Vec<ConfigError> {
        self.errors
    }
}
