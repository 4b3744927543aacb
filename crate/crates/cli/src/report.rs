use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::CliError;

pub const REPORT_FORMAT: &str = "orthoml-report";
pub const REPORT_VERSION: u32 = 1;

/// Self-describing JSON envelope shared by every command's report.
pub struct Report {
    fields: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig, workers: usize) -> Result<Self, CliError> {
        let mut fields = Map::new();
        fields.insert("format".into(), json!(REPORT_FORMAT));
        fields.insert("format_version".into(), json!(REPORT_VERSION));
        fields.insert("command".into(), json!(command));
        fields.insert("config".into(), to_value(config)?);
        fields.insert("workers".into(), json!(workers));
        fields.insert("available_cores".into(), json!(orthoml::runtime::available_cores()));
        Ok(Self { fields })
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) -> Result<&mut Self, CliError> {
        self.fields.insert(key.into(), to_value(&value)?);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        // a map of plain values cannot fail to serialize
        serde_json::to_string_pretty(&self.fields).expect("report serializes")
    }

    /// Writes to `out`, or stdout when there is none.
    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        write_text(out, &(self.to_json() + "\n"))
    }
}

fn to_value(v: &impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::from(orthoml::Error::from(e)))
}

pub fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| orthoml::Error::Io { path: path.to_path_buf(), source }.into())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|source| orthoml::Error::Io { path: "<stdout>".into(), source }.into())
        }
    }
}
