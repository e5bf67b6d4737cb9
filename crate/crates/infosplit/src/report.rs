//! JSON reports. Each carries `schema_version`; the matching JSON Schema
//! files live in `schemas/`.

use infosplit_core::information::{InfoKind, InfoMatrix};
use infosplit_core::model::ThetaVector;
use infosplit_core::simulate::MonteCarloReport;
use infosplit_core::solver::{IterationRecord, Method, SolverConfig, Status};
use infosplit_core::verify::Check;
use serde::{Deserialize, Serialize};

use crate::config::ModelSpec;

pub const SCHEMA_VERSION: &str = "1.0";

pub const FIT_SCHEMA: &str = include_str!("../schemas/fit-report.schema.json");
pub const VERIFY_SCHEMA: &str = include_str!("../schemas/verify-report.schema.json");
pub const MONTE_CARLO_SCHEMA: &str = include_str!("../schemas/monte-carlo-report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub kind: InfoKind,
    /// Row-major.
    pub entries: Vec<Vec<f64>>,
}

impl From<&InfoMatrix> for MatrixJson {
    fn from(m: &InfoMatrix) -> Self {
        Self {
            kind: m.kind,
            entries: m
                .entries
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub method: Method,
    pub grad_tol: f64,
    pub loglik_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub ridge0: f64,
}

impl From<&SolverConfig> for SolverSettings {
    fn from(c: &SolverConfig) -> Self {
        Self {
            method: c.method,
            grad_tol: c.grad_tol,
            loglik_tol: c.loglik_tol,
            max_iter: c.max_iter,
            max_halvings: c.max_halvings,
            ridge0: c.ridge0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: String,
    pub command: String,
    pub data: String,
    pub model: ModelSpec,
    pub parameters: Vec<String>,
    pub method: Method,
    pub status: Status,
    pub exit_code: i32,
    pub theta_start: ThetaVector,
    pub theta_hat: ThetaVector,
    pub std_errors: Vec<Option<f64>>,
    pub loglik: f64,
    pub score: Vec<f64>,
    pub iterations: usize,
    pub loglik_trace: Vec<IterationRecord>,
    pub curvature: MatrixJson,
    pub solver: SolverSettings,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: String,
    pub command: String,
    pub data: String,
    pub model: ModelSpec,
    pub parameters: Vec<String>,
    pub theta: ThetaVector,
    pub all_passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignJson {
    pub n: usize,
    pub p: usize,
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloJson {
    pub schema_version: String,
    pub command: String,
    pub model: ModelSpec,
    pub parameters: Vec<String>,
    pub design: DesignJson,
    pub tau_true: Vec<f64>,
    /// Every `|z| ≤ 3`, with at most one entry in `(3, 4]`.
    pub expectations_hold: bool,
    pub max_abs_z: f64,
    #[serde(flatten)]
    pub report: MonteCarloReport,
}

/// Pretty JSON; non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}
