//! Newton-type iteration on the score equations `S(θ) = 0`.
//!
//! The three methods differ only in the curvature matrix: observed
//! information (Newton–Raphson), Fisher information (Fisher scoring) or
//! average information. Steps are safeguarded by projection onto the
//! feasible box and by step halving until `ℓ_R` does not decrease.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::information::{check_dim, Assembler, InfoMatrix, QuadraticTerms, TraceTerms};
use crate::likelihood::{reml_loglik, RemlPoint, ScoreVector};
use crate::model::{CovarianceModel, Dataset, ParamKind, ThetaVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    NewtonRaphson,
    FisherScoring,
    AverageInformation,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::NewtonRaphson,
        Method::FisherScoring,
        Method::AverageInformation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NewtonRaphson => "newton-raphson",
            Method::FisherScoring => "fisher-scoring",
            Method::AverageInformation => "average-information",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method `{0}` (expected newton-raphson, fisher-scoring or average-information)")]
pub struct UnknownMethod(pub alloc::string::String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMethod(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Convergence when `‖S‖∞` drops below this.
    pub grad_tol: f64,
    /// Convergence when `|Δℓ_R| ≤ loglik_tol · max(1, |ℓ_R|)`.
    pub loglik_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub ridge0: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::AverageInformation,
            grad_tol: 1e-8,
            loglik_tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
            ridge0: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Status {
    Converged,
    MaxIter,
    Boundary,
    SingularCurvature,
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub score_norm: f64,
    /// Halvings needed to accept the step that produced this iterate.
    pub halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub theta_hat: ThetaVector,
    /// `None` for coordinates on the boundary, and everywhere unless the fit
    /// converged with a nonsingular curvature.
    pub std_errors: Vec<Option<f64>>,
    pub loglik_trace: Vec<IterationRecord>,
    pub status: Status,
    pub curvature: InfoMatrix,
    pub score: ScoreVector,
    pub loglik: f64,
}

impl FitResult {
    pub fn iterations(&self) -> usize {
        self.loglik_trace.last().map_or(0, |r| r.iteration)
    }
}

/// Solution of the regularized Newton system.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub delta: DVector<f64>,
    /// Ridge that made the system factorizable.
    pub ridge: f64,
}

/// Cholesky that also rejects numerically zero pivots.
fn factor(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let tiny = scale * f64::EPSILON * 16.0 * m.nrows() as f64;
    chol.l_dirty()
        .diagonal()
        .iter()
        .all(|d| d * d > tiny)
        .then_some(chol)
}

/// Solves `(M + ridge·D)δ = S` with `D = diag(|M_kk|)` (unit where zero),
/// escalating the ridge tenfold from `ridge0` up to `10⁶·ridge0` while the
/// factorization fails.
pub fn newton_step_with(
    curvature: &InfoMatrix,
    score: &ScoreVector,
    ridge: f64,
    ridge0: f64,
) -> Result<Step> {
    check_dim(&curvature.entries, score.len())?;
    let m = &curvature.entries;
    let scaling = DVector::from_iterator(
        m.nrows(),
        m.diagonal()
            .iter()
            .map(|d| if *d == 0.0 { 1.0 } else { d.abs() }),
    );
    let cap = 1e6 * ridge0.max(ridge);
    let mut r = ridge.max(0.0);
    loop {
        let regularized = m + DMatrix::from_diagonal(&(&scaling * r));
        if let Some(chol) = factor(&regularized) {
            return Ok(Step {
                delta: chol.solve(&score.entries),
                ridge: r,
            });
        }
        r = if r == 0.0 { ridge0 } else { r * 10.0 };
        if r.is_nan() || r > cap || r == 0.0 {
            return Err(Error::SingularCurvature { ridge: r });
        }
    }
}

/// [`newton_step_with`] using the default `ridge0`.
pub fn newton_step(curvature: &InfoMatrix, score: &ScoreVector, ridge: f64) -> Result<Step> {
    newton_step_with(curvature, score, ridge, SolverConfig::default().ridge0)
}

/// Square roots of the diagonal of the inverse curvature.
pub fn standard_errors(curvature: &InfoMatrix) -> Result<Vec<f64>> {
    let chol = factor(&curvature.entries).ok_or(Error::SingularCurvature { ridge: 0.0 })?;
    Ok(chol
        .inverse()
        .diagonal()
        .iter()
        .map(|v| libm::sqrt(*v))
        .collect())
}

struct Evaluation {
    loglik: f64,
    score: ScoreVector,
    curvature: InfoMatrix,
    /// Fisher information, kept for Newton–Raphson steps where the observed
    /// information is indefinite.
    fallback: Option<InfoMatrix>,
}

fn evaluate(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
    method: Method,
) -> Result<Evaluation> {
    let point = RemlPoint::new(data, model, theta)?;
    let q = QuadraticTerms::compute(&point, data.y())?;
    let asm = Assembler::for_point(&point);
    let (grad_traces, curvature, fallback) = match method {
        Method::AverageInformation => (point.grad_traces()?, asm.average(&q), None),
        Method::NewtonRaphson => {
            let tr = TraceTerms::compute(&point)?;
            let curvature = asm.observed(&tr, &q);
            let fisher = asm.fisher(&tr);
            (tr.p_grad, curvature, Some(fisher))
        }
        Method::FisherScoring => {
            let tr = TraceTerms::compute(&point)?;
            let curvature = asm.fisher(&tr);
            (tr.p_grad, curvature, None)
        }
    };
    Ok(Evaluation {
        loglik: point.loglik_from(q.y_p_y),
        score: point.score_from(q.y_p_y, &q.grad_forms, &grad_traces),
        curvature,
        fallback,
    })
}

/// Clamps θ onto the model's feasible box.
pub fn project_feasible(model: &CovarianceModel, theta: &ThetaVector) -> ThetaVector {
    let bounds = model.bounds();
    let mut out = theta.clone();
    out.sigma2 = out.sigma2.max(bounds.sigma2_min);
    for (k, value) in out.kappa.iter_mut().enumerate() {
        *value = match model.param_kind(k) {
            Ok(ParamKind::Gamma(_)) => value.max(bounds.gamma_min),
            Ok(ParamKind::Phi) => value.clamp(-bounds.phi_max(), bounds.phi_max()),
            Err(_) => *value,
        };
    }
    out
}

/// θ-indices sitting on the feasible boundary with the score pointing out.
fn active_bounds(model: &CovarianceModel, theta: &ThetaVector, score: &ScoreVector) -> Vec<usize> {
    let bounds = model.bounds();
    let at = |value: f64, bound: f64| (value - bound).abs() <= 1e-12 * bound.abs().max(1.0);
    let mut out = Vec::new();
    if at(theta.sigma2, bounds.sigma2_min) && score.entries[0] < 0.0 {
        out.push(0);
    }
    for (k, &value) in theta.kappa.iter().enumerate() {
        let s = score.entries[k + 1];
        let active = match model.param_kind(k) {
            Ok(ParamKind::Gamma(_)) => at(value, bounds.gamma_min) && s < 0.0,
            Ok(ParamKind::Phi) => {
                (at(value, bounds.phi_max()) && s > 0.0)
                    || (at(value, -bounds.phi_max()) && s < 0.0)
            }
            Err(_) => false,
        };
        if active {
            out.push(k + 1);
        }
    }
    out
}

/// Standard errors for the interior coordinates only.
fn interior_standard_errors(curvature: &InfoMatrix, active: &[usize]) -> Vec<Option<f64>> {
    let dim = curvature.dim();
    let free: Vec<usize> = (0..dim).filter(|i| !active.contains(i)).collect();
    let mut out = alloc::vec![None; dim];
    if free.is_empty() {
        return out;
    }
    let sub = InfoMatrix {
        kind: curvature.kind,
        entries: curvature.entries.select_rows(&free).select_columns(&free),
        theta: curvature.theta.clone(),
    };
    if let Ok(se) = standard_errors(&sub) {
        for (slot, value) in free.iter().zip(se) {
            out[*slot] = Some(value);
        }
    }
    out
}

/// Safeguarded Newton iteration from `theta0`.
///
/// Numerical trouble during the iteration is reported through
/// [`FitResult::status`]; only structural problems (infeasible start,
/// mismatched dimensions, a covariance that fails at the start) are errors.
pub fn fit(
    data: &Dataset,
    model: &CovarianceModel,
    theta0: &ThetaVector,
    config: &SolverConfig,
) -> Result<FitResult> {
    if model.n() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "covariance model size",
            expected: data.n(),
            found: model.n(),
        });
    }
    model.validate_params(theta0).into_result()?;
    let method = config.method;
    let mut theta = theta0.clone();
    let mut current = evaluate(data, model, &theta, method)?;
    let mut trace = alloc::vec![IterationRecord {
        iteration: 0,
        loglik: current.loglik,
        score_norm: current.score.inf_norm(),
        halvings: 0,
    }];
    let mut status = Status::MaxIter;

    for iteration in 1..=config.max_iter {
        if current.score.inf_norm() < config.grad_tol {
            status = Status::Converged;
            break;
        }
        let step = newton_step_with(&current.curvature, &current.score, 0.0, config.ridge0)
            .or_else(|err| match &current.fallback {
                Some(fisher) => newton_step_with(fisher, &current.score, 0.0, config.ridge0),
                None => Err(err),
            });
        let step = match step {
            Ok(step) => step,
            Err(_) => {
                status = Status::SingularCurvature;
                break;
            }
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        for halvings in 0..=config.max_halvings {
            let proposal = ThetaVector::from_dvector(&(theta.to_dvector() + &step.delta * alpha));
            let candidate = project_feasible(model, &proposal);
            if let Ok(eval) = reml_loglik(data, model, &candidate) {
                if eval.value >= current.loglik {
                    accepted = Some((candidate, halvings));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((candidate, halvings)) = accepted else {
            // No ascent along the direction within rounding: ℓ_R has stalled.
            status = Status::Converged;
            break;
        };

        let next = match evaluate(data, model, &candidate, method) {
            Ok(next) => next,
            Err(_) => {
                status = Status::SingularCurvature;
                break;
            }
        };
        let change = (next.loglik - current.loglik).abs();
        theta = candidate;
        current = next;
        trace.push(IterationRecord {
            iteration,
            loglik: current.loglik,
            score_norm: current.score.inf_norm(),
            halvings,
        });
        let flat = halvings == 0 && change <= config.loglik_tol * current.loglik.abs().max(1.0);
        if current.score.inf_norm() < config.grad_tol || flat {
            status = Status::Converged;
            break;
        }
    }

    let mut std_errors = alloc::vec![None; theta.len()];
    if status == Status::Converged {
        let active = active_bounds(model, &theta, &current.score);
        if !active.is_empty() {
            status = Status::Boundary;
        }
        std_errors = interior_standard_errors(&current.curvature, &active);
    }

    Ok(FitResult {
        method,
        theta_hat: theta,
        std_errors,
        loglik_trace: trace,
        status,
        loglik: current.loglik,
        score: current.score,
        curvature: current.curvature,
    })
}
