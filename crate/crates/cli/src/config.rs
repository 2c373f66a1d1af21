//! TOML configuration files.
//!
//! A run configuration:
//!
//! ```toml
//! design = "humboldt.csv"        # relative to this file
//! units = "units.csv"            # optional, for moment_policy = "raw"
//! moment_policy = "proxy"        # supplied | proxy | raw
//! var_coefficient = "as-paper"   # as-paper | squared
//! format = "table"               # table | structured
//!
//! [constraint]
//! total = 1000                   # or: budget = 5000.0
//! overhead = 0.0
//!
//! [solver]
//! rel_tol = 1e-8
//! max_iters = 10000
//! multistarts = 8
//! seed = 0
//! neighborhood = 1
//!
//! [[models]]
//! name = "E"
//! kind = "weighting-e"
//! w = [0.5, 0.5]
//! reference = [7, 63, 119, 135, 200, 160, 98, 134, 84]   # optional
//! ```
//!
//! Model keys mirror the library's `ModelSpec` fields; `kind` is one of
//! `weighting-e`, `modified-e`, `weighting-v`, `weighting-p`,
//! `weighting-kataoka`, `goal-programming`, `goal-kataoka`,
//! `single-characteristic`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stratalloc::asymptotics::PopulationSpec;
use stratalloc::{Constraint, MomentPolicy, ModelSpec, SolverConfig, VarCoefficient};

use crate::args::Format;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKey {
    Table,
    Structured,
}

impl From<FormatKey> for Format {
    fn from(f: FormatKey) -> Self {
        match f {
            FormatKey::Table => Format::Table,
            FormatKey::Structured => Format::Structured,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub total: Option<usize>,
    pub budget: Option<f64>,
    #[serde(default)]
    pub overhead: f64,
}

impl ConstraintConfig {
    pub fn resolve(&self) -> CliResult<Constraint> {
        match (self.total, self.budget) {
            (Some(n), None) => Ok(Constraint::TotalSize { n }),
            (None, Some(budget)) => Ok(Constraint::Cost { budget }),
            (None, None) => Err(CliError::Invalid("constraint needs `total` or `budget`".into())),
            (Some(_), Some(_)) => Err(CliError::Invalid("constraint takes `total` or `budget`, not both".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    /// Allocation to compare against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<usize>>,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: Option<PathBuf>,
    pub units: Option<PathBuf>,
    pub moment_policy: Option<MomentPolicy>,
    pub var_coefficient: Option<VarCoefficient>,
    pub format: Option<FormatKey>,
    #[serde(default)]
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Sample size drawn from every stratum.
    pub n: usize,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    pub format: Option<FormatKey>,
    pub population: PopulationSpec,
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    toml::from_str(&read_text(path)?).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })
}

/// Resolves a path from a config file against the file's directory.
fn relative_to(config: &Path, path: &Path) -> PathBuf {
    match config.parent() {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut config: RunConfig = parse_toml(path)?;
        config.design = config.design.map(|p| relative_to(path, &p));
        config.units = config.units.map(|p| relative_to(path, &p));
        Ok(config)
    }
}

impl SimulateConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        parse_toml(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_entries_flatten_the_spec() {
        let text = r#"
            [constraint]
            total = 10

            [[models]]
            name = "P"
            kind = "weighting-p"
            w = [0.5, 0.5]
            targets = [1.0, 2.0]
            sense = "max"
            reference = [2, 8]
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        let entry = &config.models[0];
        assert_eq!(entry.reference, Some(vec![2, 8]));
        assert_eq!(
            entry.spec,
            ModelSpec::WeightingP {
                w: vec![0.5, 0.5],
                targets: Some(vec![1.0, 2.0]),
                tau_scalar: None,
                sense: stratalloc::Sense::Max,
            }
        );
        assert_eq!(config.solver, SolverConfig::default());
    }

    #[test]
    fn constraint_needs_exactly_one_bound() {
        assert!(ConstraintConfig::default().resolve().is_err());
        let both = ConstraintConfig {
            total: Some(5),
            budget: Some(5.0),
            overhead: 0.0,
        };
        assert!(both.resolve().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("desgin = \"x.csv\"").is_err());
    }
}
