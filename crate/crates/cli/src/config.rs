use std::path::{Path, PathBuf};

use orthoml::refute::RefuteSettings;
use orthoml::{DgpSpec, DmlSpec, NuisanceSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything one run needs. Read from TOML, or from JSON when the file
/// ends in `.json` (which is how a report's `config` echo can be replayed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub dml: Option<DmlSpec>,
    #[serde(default)]
    pub refute: Option<RefuteSettings>,
    #[serde(default)]
    pub bench: Option<BenchSettings>,
    /// Worker threads; defaults to the number of available cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Whether `generate` appends the `__gt_*` columns.
    #[serde(default = "yes")]
    pub write_ground_truth: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(DgpSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub treatment: String,
    pub outcome: String,
    /// Empty means every other column except ground-truth ones.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub discrete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<(usize, usize)>,
    #[serde(default = "default_bench_workers")]
    pub workers: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_sizes() -> Vec<(usize, usize)> {
    vec![(10_000, 20), (100_000, 20)]
}

fn default_bench_workers() -> Vec<usize> {
    vec![1, 4]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config_unreadable", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        let parsed = if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|m| CliError::config("config_parse", m))
    }

    /// Replaces every seed in the config: data generator, folds, grids,
    /// refuters and benchmark.
    pub fn override_seed(&mut self, seed: u64) {
        if let DataSource::Synthetic(dgp) = &mut self.data {
            dgp.seed = seed;
        }
        if let Some(dml) = &mut self.dml {
            dml.seed = seed;
            for spec in [&mut dml.y_spec, &mut dml.t_spec] {
                if let NuisanceSpec::Grid(g) = spec {
                    g.seed = seed;
                }
            }
        }
        if let Some(r) = &mut self.refute {
            r.seed = seed;
        }
        if let Some(b) = &mut self.bench {
            b.seed = seed;
        }
    }

    pub fn dml(&self) -> Result<&DmlSpec, CliError> {
        self.dml.as_ref().ok_or_else(|| CliError::config("missing_section", "config has no [dml] section"))
    }
}
