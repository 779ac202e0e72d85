//! Structured run reports: schema version, resolved configuration echo, module
//! payload and timings, serialized as JSON with stable key order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Report<P> {
    pub schema_version: u32,
    pub code_version: String,
    /// Fully-resolved configuration of the run, defaults included.
    pub config: serde_json::Value,
    pub payload: P,
    /// Stage name → seconds.
    pub timings: BTreeMap<String, f64>,
}

impl<P: Serialize> Report<P> {
    pub fn new(config: serde_json::Value, payload: P) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            payload,
            timings: BTreeMap::new(),
        }
    }

    pub fn with_timing(mut self, stage: &str, seconds: f64) -> Self {
        self.timings.insert(stage.to_string(), seconds);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub fn load_report<P: DeserializeOwned>(path: &Path) -> Result<Report<P>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}
