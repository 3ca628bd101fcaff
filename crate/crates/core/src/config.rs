//! Run configuration: built-in defaults, overridden by a JSON config
//! file, overridden in turn by command-line flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeConfig;
use crate::trainer::TrainConfig;

/// Everything a run needs. Unknown keys in the file are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Edge-list files forming the pre-training pool, in listing order.
    pub graphs: Vec<String>,
}

impl RunConfig {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<RunConfig> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    /// File config when given, built-in defaults otherwise. Flag
    /// overrides are applied by the caller on the returned value.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => Self::from_file(p),
            None => Ok(RunConfig::default()),
        }
    }
}
