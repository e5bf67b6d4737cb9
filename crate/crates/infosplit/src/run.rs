//! The `fit`, `verify` and `simulate` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use infosplit_core::likelihood::profile_sigma2;
use infosplit_core::model::{CovarianceModel, ParamKind, ThetaVector};
use infosplit_core::simulate::{monte_carlo_information, Sampler, SimSpec};
use infosplit_core::solver::{fit, Status};
use infosplit_core::verify::run_identity_suite;
use nalgebra::DVector;

use crate::config::{ConfigFile, ModelSpec};
use crate::data::{parse_dataset, write_dataset, GroupFactor, Table};
use crate::error::{CliError, ExitCode, Result};
use crate::report::{
    to_json, DesignJson, FitReport, MatrixJson, MonteCarloJson, VerifyReport, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Default)]
pub struct FitArgs {
    pub data: PathBuf,
    pub config: PathBuf,
    pub method: Option<String>,
    pub max_iter: Option<usize>,
    pub no_intercept: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyArgs {
    pub data: PathBuf,
    pub theta: Option<Vec<f64>>,
    pub from_fit: Option<PathBuf>,
    /// Model layout; taken from the fit report when omitted.
    pub config: Option<PathBuf>,
    pub no_intercept: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub write_datasets: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// What a command produced: its exit code, the report text (if any) and a
/// one-line summary for the terminal.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit: ExitCode,
    pub report: Option<String>,
    pub summary: String,
}

fn emit(out: Option<&Path>, text: &str) -> Result<Option<String>> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
            Ok(None)
        }
        None => Ok(Some(text.to_string())),
    }
}

fn load_model_spec(path: &Path, no_intercept: bool) -> Result<ConfigFile> {
    let mut config = ConfigFile::load(path)?;
    if no_intercept {
        config.model.intercept = false;
        config.model.validate()?;
    }
    Ok(config)
}

fn default_start(table: &Table, model: &CovarianceModel) -> Result<ThetaVector> {
    let kappa: Vec<f64> = (0..model.m())
        .map(|k| match model.param_kind(k) {
            Ok(ParamKind::Gamma(_)) => Ok(1.0),
            Ok(ParamKind::Phi) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<std::result::Result<_, _>>()?;
    let sigma2 = profile_sigma2(&table.dataset, model, &kappa)?;
    Ok(ThetaVector::new(
        sigma2.max(model.bounds().sigma2_min),
        kappa,
    ))
}

fn theta_from(values: &[f64], spec: &ModelSpec, what: &str) -> Result<ThetaVector> {
    let names = spec.parameter_names();
    if values.len() != names.len() {
        return Err(CliError::config(format!(
            "{what} has {} entries; the model needs {} ({})",
            values.len(),
            names.len(),
            names.join(", ")
        )));
    }
    Ok(ThetaVector::from_slice(values).expect("non-empty"))
}

pub fn status_exit(status: Status) -> ExitCode {
    match status {
        Status::Converged => ExitCode::Success,
        Status::MaxIter => ExitCode::MaxIter,
        Status::Boundary => ExitCode::Boundary,
        Status::SingularCurvature => ExitCode::Numerical,
    }
}

pub fn run_fit(args: &FitArgs) -> Result<Outcome> {
    let config = load_model_spec(&args.config, args.no_intercept)?;
    let mut solver = config.solver.resolve(args.method.as_deref())?;
    if let Some(max_iter) = args.max_iter {
        solver.max_iter = max_iter;
    }
    let table = parse_dataset(&args.data, &config.model)?;
    let model = table.model()?;
    let start = match &config.solver.start {
        Some(values) => theta_from(values, &config.model, "solver.start")?,
        None => default_start(&table, &model)?,
    };

    let clock = Instant::now();
    let result = fit(&table.dataset, &model, &start, &solver)?;
    let elapsed = clock.elapsed().as_secs_f64();
    let exit = status_exit(result.status);
    let report = FitReport {
        schema_version: SCHEMA_VERSION.into(),
        command: "fit".into(),
        data: args.data.display().to_string(),
        model: config.model.clone(),
        parameters: config.model.parameter_names(),
        method: result.method,
        status: result.status,
        exit_code: exit.code(),
        theta_start: start,
        theta_hat: result.theta_hat.clone(),
        std_errors: result.std_errors.clone(),
        loglik: result.loglik,
        score: result.score.entries.iter().copied().collect(),
        iterations: result.iterations(),
        loglik_trace: result.loglik_trace.clone(),
        curvature: MatrixJson::from(&result.curvature),
        solver: (&solver).into(),
        elapsed_seconds: elapsed,
    };
    let summary = format!(
        "fit: {} {:?} after {} iterations, loglik {:.6}, theta {:?}",
        result.method,
        result.status,
        result.iterations(),
        result.loglik,
        result.theta_hat.to_vec()
    );
    Ok(Outcome {
        exit,
        report: emit(args.out.as_deref(), &to_json(&report))?,
        summary,
    })
}

pub fn read_fit_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn run_verify(args: &VerifyArgs) -> Result<Outcome> {
    let fitted = args.from_fit.as_deref().map(read_fit_report).transpose()?;
    let mut spec = match (&args.config, &fitted) {
        (Some(path), _) => load_model_spec(path, false)?.model,
        (None, Some(report)) => report.model.clone(),
        (None, None) => return Err(CliError::config("verify needs --config or --from-fit")),
    };
    if args.no_intercept {
        spec.intercept = false;
        spec.validate()?;
    }
    let theta = match (&args.theta, &fitted) {
        (Some(values), None) => theta_from(values, &spec, "--theta")?,
        (None, Some(report)) => {
            theta_from(&report.theta_hat.to_vec(), &spec, "fit report theta_hat")?
        }
        _ => {
            return Err(CliError::config(
                "give exactly one of --theta and --from-fit",
            ))
        }
    };
    let table = parse_dataset(&args.data, &spec)?;
    let model = table.model()?;
    let suite = run_identity_suite(&table.dataset, &model, &theta)?;
    let all_passed = suite.all_passed();
    let failed: Vec<&str> = suite
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let summary = if all_passed {
        format!("verify: all {} checks passed", suite.checks.len())
    } else {
        format!("verify: failed {}", failed.join(", "))
    };
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION.into(),
        command: "verify".into(),
        data: args.data.display().to_string(),
        parameters: spec.parameter_names(),
        model: spec,
        theta,
        all_passed,
        checks: suite.checks,
        warnings: suite.warnings,
    };
    Ok(Outcome {
        exit: if all_passed {
            ExitCode::Success
        } else {
            ExitCode::CheckFailed
        },
        report: emit(args.out.as_deref(), &to_json(&report))?,
        summary,
    })
}

/// Design described by `[simulate]`: an optional intercept, no other fixed
/// effects, and each grouping column split into contiguous runs of levels.
pub fn simulation_design(config: &ConfigFile) -> Result<(Table, SimSpec)> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::config("missing [simulate] section"))?;
    let spec = &config.model;
    if !spec.fixed.is_empty() {
        return Err(CliError::config(
            "simulation designs support the intercept only; remove model.fixed",
        ));
    }
    let n = sim
        .n
        .ok_or_else(|| CliError::config("simulate.n is required"))?;
    if n == 0 {
        return Err(CliError::config("simulate.n must be positive"));
    }
    if let Some(extra) = sim.levels.keys().find(|k| !spec.groups.contains(k)) {
        return Err(CliError::config(format!(
            "simulate.levels names unknown group `{extra}`"
        )));
    }
    let groups =
        spec.groups
            .iter()
            .map(|name| {
                let levels = *sim.levels.get(name).ok_or_else(|| {
                    CliError::config(format!("simulate.levels.{name} is required"))
                })?;
                if levels == 0 || levels > n {
                    return Err(CliError::config(format!(
                        "simulate.levels.{name} must lie in 1..={n}"
                    )));
                }
                let labels: Vec<String> = (0..n)
                    .map(|i| format!("{name}{}", i * levels / n + 1))
                    .collect();
                Ok(GroupFactor::from_labels(name, &labels))
            })
            .collect::<Result<Vec<_>>>()?;
    let table = Table::assemble(spec, vec![0.0; n], Vec::new(), groups)?;
    let model = table.model()?;
    let theta = theta_from(
        sim.theta
            .as_deref()
            .ok_or_else(|| CliError::config("simulate.theta is required"))?,
        spec,
        "simulate.theta",
    )?;
    let p = table.dataset.p();
    let tau = sim.tau.clone().unwrap_or_else(|| vec![0.0; p]);
    if tau.len() != p {
        return Err(CliError::config(format!(
            "simulate.tau needs {p} entries, got {}",
            tau.len()
        )));
    }
    let sim_spec = SimSpec {
        design: table.dataset.clone(),
        model,
        theta_true: theta,
        tau_true: DVector::from_vec(tau),
        seed: sim.seed.unwrap_or(0),
        replicates: sim.replicates.unwrap_or(0),
    };
    Ok((table, sim_spec))
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Outcome> {
    let config = ConfigFile::load(&args.config)?;
    let (table, mut spec) = simulation_design(&config)?;
    let sim = config
        .simulate
        .as_ref()
        .expect("checked by simulation_design");
    spec.seed = args
        .seed
        .or(sim.seed)
        .ok_or_else(|| CliError::config("a seed is required (--seed or simulate.seed)"))?;
    spec.replicates = args.replicates.or(sim.replicates).ok_or_else(|| {
        CliError::config("replicate count is required (--replicates or simulate.replicates)")
    })?;
    if spec.replicates == 0 {
        return Err(CliError::config("replicates must be positive"));
    }

    if let Some(dir) = &args.write_datasets {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let sampler = Sampler::new(&spec)?;
        for i in 0..spec.replicates {
            let replicate = table.with_response(sampler.sample(i as u64))?;
            write_dataset(&dataset_path(dir, i), &replicate)?;
        }
        return Ok(Outcome {
            exit: ExitCode::Success,
            report: None,
            summary: format!(
                "simulate: wrote {} datasets to {}",
                spec.replicates,
                dir.display()
            ),
        });
    }

    let report = monte_carlo_information(&spec)?;
    let expectations_hold = report.expectations_hold();
    let max_abs_z = report.z_scores().fold(0.0, f64::max);
    let json = MonteCarloJson {
        schema_version: SCHEMA_VERSION.into(),
        command: "simulate".into(),
        model: config.model.clone(),
        parameters: config.model.parameter_names(),
        design: DesignJson {
            n: table.dataset.n(),
            p: table.dataset.p(),
            levels: table.groups.iter().map(|g| g.levels.len()).collect(),
        },
        tau_true: spec.tau_true.iter().copied().collect(),
        expectations_hold,
        max_abs_z,
        report,
    };
    Ok(Outcome {
        exit: if expectations_hold {
            ExitCode::Success
        } else {
            ExitCode::CheckFailed
        },
        report: emit(args.out.as_deref(), &to_json(&json))?,
        summary: format!(
            "simulate: {} replicates, max |z| = {max_abs_z:.3}, expectations {}",
            spec.replicates,
            if expectations_hold { "hold" } else { "fail" }
        ),
    })
}

/// `replicate_00000.csv`, `replicate_00001.csv`, ...
pub fn dataset_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("replicate_{index:05}.csv"))
}
