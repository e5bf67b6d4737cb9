//! Declarative run configuration read from TOML.
//!
//! ```toml
//! [model]
//! family = "variance-components"   # scale-only | variance-components | ar1-residual | composite
//! response = "y"
//! fixed = ["age"]                  # numeric columns; an intercept is added unless intercept = false
//! groups = ["herd"]                # categorical columns, one variance ratio each
//!
//! [solver]
//! method = "average-information"
//! max_iter = 100
//! start = [1.0, 1.0]               # optional; sigma2 first
//!
//! [simulate]
//! n = 40
//! levels = { herd = 10 }
//! theta = [1.0, 2.0]
//! tau = [0.0]
//! seed = 7
//! replicates = 20000
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use infosplit_core::model::Family;
use infosplit_core::solver::{Method, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub response: String,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let wants_groups = matches!(self.family, Family::VarianceComponents | Family::Composite);
        if wants_groups && self.groups.is_empty() {
            return Err(CliError::config(format!(
                "family {} needs at least one grouping column",
                family_name(self.family)
            )));
        }
        if !wants_groups && !self.groups.is_empty() {
            return Err(CliError::config(format!(
                "family {} takes no grouping columns",
                family_name(self.family)
            )));
        }
        if !self.intercept && self.fixed.is_empty() {
            return Err(CliError::config(
                "no fixed effects: add columns or keep the intercept",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for name in std::iter::once(&self.response)
            .chain(&self.fixed)
            .chain(&self.groups)
        {
            if !seen.insert(name.as_str()) {
                return Err(CliError::config(format!("column `{name}` is used twice")));
            }
        }
        Ok(())
    }

    /// Names in θ-ordering: `sigma2`, one `gamma[<group>]` per group, then `phi`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = vec!["sigma2".to_string()];
        out.extend(self.groups.iter().map(|g| format!("gamma[{g}]")));
        if matches!(self.family, Family::Ar1Residual | Family::Composite) {
            out.push("phi".into());
        }
        out
    }
}

pub fn family_name(family: Family) -> &'static str {
    match family {
        Family::ScaleOnly => "scale-only",
        Family::VarianceComponents => "variance-components",
        Family::Ar1Residual => "ar1-residual",
        Family::Composite => "composite",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub method: Option<String>,
    pub grad_tol: Option<f64>,
    pub loglik_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_halvings: Option<usize>,
    pub ridge0: Option<f64>,
    pub start: Option<Vec<f64>>,
}

impl SolverSpec {
    /// Applies the file settings over the defaults; `method` (from a flag)
    /// wins over the file.
    pub fn resolve(&self, method: Option<&str>) -> Result<SolverConfig> {
        let mut config = SolverConfig::default();
        if let Some(name) = method.or(self.method.as_deref()) {
            config.method = name
                .parse::<Method>()
                .map_err(|e| CliError::config(e.to_string()))?;
        }
        let positive = |name: &str, v: Option<f64>, slot: &mut f64| -> Result<()> {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(CliError::config(format!(
                        "solver.{name} must be positive, got {v}"
                    )));
                }
                *slot = v;
            }
            Ok(())
        };
        positive("grad_tol", self.grad_tol, &mut config.grad_tol)?;
        positive("loglik_tol", self.loglik_tol, &mut config.loglik_tol)?;
        positive("ridge0", self.ridge0, &mut config.ridge0)?;
        if let Some(v) = self.max_iter {
            config.max_iter = v;
        }
        if let Some(v) = self.max_halvings {
            config.max_halvings = v;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub n: Option<usize>,
    /// Number of levels per grouping column; rows are assigned to levels in
    /// contiguous, nearly equal runs.
    #[serde(default)]
    pub levels: BTreeMap<String, usize>,
    pub theta: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub simulate: Option<SimulateSpec>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let config: ConfigFile = toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        config.model.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }
}
