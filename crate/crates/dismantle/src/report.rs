//! Report envelope shared by every subcommand.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One acceptance threshold and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable comparison, e.g. `>= 0.995`.
    pub limit: String,
    pub passed: bool,
}

impl Check {
    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!(">= {limit}"),
            passed: value >= limit,
        }
    }

    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("<= {limit}"),
            passed: value <= limit,
        }
    }

    pub fn above(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("> {limit}"),
            passed: value > limit,
        }
    }

    pub fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("< {limit}"),
            passed: value < limit,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Written as `<subcommand>.json`: run metadata plus the subcommand's summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub tool: String,
    pub tool_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Content hashes of the models, lattice and world used.
    pub hashes: BTreeMap<String, String>,
    pub runtime_s: f64,
    pub notes: Vec<String>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub summary: T,
}

impl<T> Report<T> {
    pub fn new(subcommand: &str, config: &RunConfig, summary: T) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            seed: config.seed,
            config: config.clone(),
            hashes: BTreeMap::new(),
            runtime_s: 0.0,
            notes: Vec::new(),
            checks: Vec::new(),
            passed: true,
            summary,
        }
    }

    pub fn with_checks(mut self, checks: Vec<Check>) -> Self {
        self.passed = all_passed(&checks);
        self.checks = checks;
        self
    }
}
