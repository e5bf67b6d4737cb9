//! Residual log-likelihood, its score, and finite-difference oracles.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CovarianceModel, Dataset, ThetaVector};
use crate::projection::ProjectionContext;

/// `½ log(2π)`.
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Factorized state at one parameter value. Everything downstream
/// (likelihood, scores, the four information matrices) is read off this.
#[derive(Debug, Clone)]
pub struct RemlPoint<'a> {
    data: &'a Dataset,
    model: &'a CovarianceModel,
    theta: ThetaVector,
    ctx: ProjectionContext,
}

impl<'a> RemlPoint<'a> {
    pub fn new(data: &'a Dataset, model: &'a CovarianceModel, theta: &ThetaVector) -> Result<Self> {
        if model.n() != data.n() {
            return Err(Error::DimensionMismatch {
                context: "covariance model size",
                expected: data.n(),
                found: model.n(),
            });
        }
        model.check_domain(theta)?;
        let h = model.assemble(&theta.kappa)?;
        let ctx = ProjectionContext::new(data.x(), h)?;
        Ok(Self {
            data,
            model,
            theta: theta.clone(),
            ctx,
        })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn model(&self) -> &'a CovarianceModel {
        self.model
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }

    pub fn ctx(&self) -> &ProjectionContext {
        &self.ctx
    }

    pub fn into_ctx(self) -> ProjectionContext {
        self.ctx
    }

    pub fn sigma2(&self) -> f64 {
        self.theta.sigma2
    }

    pub fn kappa(&self) -> &[f64] {
        &self.theta.kappa
    }

    /// `n − ν`.
    pub fn dof(&self) -> f64 {
        self.data.dof()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// `ℓ_R` given the quadratic form `yᵀPy`.
    pub fn loglik_from(&self, y_p_y: f64) -> f64 {
        let dof = self.dof();
        -dof * HALF_LN_2PI
            - 0.5
                * (dof * libm::log(self.sigma2())
                    + self.ctx.logdet_h()
                    + self.ctx.logdet_xthx()
                    + y_p_y / self.sigma2())
    }

    /// `tr(PḢ_k)` for every structure parameter.
    pub fn grad_traces(&self) -> Result<Vec<f64>> {
        (0..self.m())
            .map(|k| {
                let grad = self.model.cov_grad(self.kappa(), k)?;
                self.ctx.trace_p_times(&grad)
            })
            .collect()
    }

    /// Score from `yᵀPy`, `ξᵀḢ_kξ` and `tr(PḢ_k)`.
    pub fn score_from(&self, y_p_y: f64, grad_forms: &[f64], grad_traces: &[f64]) -> ScoreVector {
        let s = self.sigma2();
        let mut entries = DVector::zeros(self.m() + 1);
        entries[0] = -0.5 * (self.dof() / s - y_p_y / (s * s));
        for k in 0..self.m() {
            entries[k + 1] = -0.5 * (grad_traces[k] - grad_forms[k] / s);
        }
        ScoreVector { entries }
    }
}

/// Residual log-likelihood at one θ.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    /// `yᵀPy`.
    pub y_p_y: f64,
    pub theta: ThetaVector,
    pub ctx: ProjectionContext,
}

/// Gradient of `ℓ_R` in θ-ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub entries: DVector<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inf_norm(&self) -> f64 {
        self.entries.amax()
    }
}

/// `ℓ_R = −(n−ν)/2·log 2π − ½[(n−ν) log σ² + log|H| + log|XᵀH⁻¹X| + yᵀPy/σ²]`.
pub fn reml_loglik(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<LikelihoodEval> {
    let point = RemlPoint::new(data, model, theta)?;
    let xi = point.ctx().apply_p(data.y())?;
    let y_p_y = data.y().dot(&xi).max(0.0);
    let value = point.loglik_from(y_p_y);
    Ok(LikelihoodEval {
        value,
        y_p_y,
        theta: theta.clone(),
        ctx: point.into_ctx(),
    })
}

/// Analytic score; one `ξ = Py` shared by every entry.
pub fn score(data: &Dataset, model: &CovarianceModel, theta: &ThetaVector) -> Result<ScoreVector> {
    let point = RemlPoint::new(data, model, theta)?;
    let xi = point.ctx().apply_p(data.y())?;
    let y_p_y = data.y().dot(&xi);
    let grad_forms = (0..model.m())
        .map(|k| Ok(model.grad_matvec(&theta.kappa, k, &xi)?.dot(&xi)))
        .collect::<Result<Vec<_>>>()?;
    let traces = point.grad_traces()?;
    Ok(point.score_from(y_p_y, &grad_forms, &traces))
}

/// `yᵀPy / (n − ν)`, the root of the `σ²` score for fixed κ.
pub fn profile_sigma2(data: &Dataset, model: &CovarianceModel, kappa: &[f64]) -> Result<f64> {
    let theta = ThetaVector::new(1.0, kappa.to_vec());
    let eval = reml_loglik(data, model, &theta)?;
    Ok(eval.y_p_y / data.dof())
}

fn fd_steps(theta: &ThetaVector, rel_step: f64) -> Result<Vec<f64>> {
    if !(rel_step.is_finite() && rel_step > 0.0) {
        return Err(Error::InvalidStep(rel_step));
    }
    let mut steps: Vec<f64> = theta
        .to_vec()
        .iter()
        .map(|v| rel_step * v.abs().max(1.0))
        .collect();
    // σ² sets the scale of ℓ_R itself, so its step shrinks with it.
    steps[0] = rel_step * theta.sigma2.abs();
    Ok(steps)
}

fn shifted(theta: &ThetaVector, moves: &[(usize, f64)]) -> ThetaVector {
    let mut out = theta.clone();
    for &(index, delta) in moves {
        out.set(index, theta.get(index) + delta);
    }
    out
}

fn loglik_value(data: &Dataset, model: &CovarianceModel, theta: &ThetaVector) -> Result<f64> {
    Ok(reml_loglik(data, model, theta)?.value)
}

/// Central-difference gradient of [`reml_loglik`]. The step for `κ_k` is
/// `rel_step · max(1, |κ_k|)` and for `σ²` it is `rel_step · σ²`.
/// Verification only.
pub fn fd_score(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
    rel_step: f64,
) -> Result<ScoreVector> {
    let steps = fd_steps(theta, rel_step)?;
    let mut entries = DVector::zeros(theta.len());
    for (k, &h) in steps.iter().enumerate() {
        let plus = loglik_value(data, model, &shifted(theta, &[(k, h)]))?;
        let minus = loglik_value(data, model, &shifted(theta, &[(k, -h)]))?;
        entries[k] = (plus - minus) / (2.0 * h);
    }
    Ok(ScoreVector { entries })
}

/// Central second differences of [`reml_loglik`] (Hessian, not its negative).
pub fn fd_hessian(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let steps = fd_steps(theta, rel_step)?;
    let d = theta.len();
    let center = loglik_value(data, model, theta)?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = steps[i];
        let plus = loglik_value(data, model, &shifted(theta, &[(i, hi)]))?;
        let minus = loglik_value(data, model, &shifted(theta, &[(i, -hi)]))?;
        hess[(i, i)] = (plus - 2.0 * center + minus) / (hi * hi);
        for j in (i + 1)..d {
            let hj = steps[j];
            let pp = loglik_value(data, model, &shifted(theta, &[(i, hi), (j, hj)]))?;
            let pm = loglik_value(data, model, &shifted(theta, &[(i, hi), (j, -hj)]))?;
            let mp = loglik_value(data, model, &shifted(theta, &[(i, -hi), (j, hj)]))?;
            let mm = loglik_value(data, model, &shifted(theta, &[(i, -hi), (j, -hj)]))?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> (Dataset, CovarianceModel) {
        let data = Dataset::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let model = CovarianceModel::variance_components(3, vec![DMatrix::identity(3, 3)]).unwrap();
        (data, model)
    }

    #[test]
    fn tiny_loglik_value() {
        let (data, model) = tiny();
        let eval = reml_loglik(&data, &model, &ThetaVector::new(1.0, vec![0.0])).unwrap();
        // −log(2π) − ½(log 3 + 2)
        let expected = -libm::log(2.0 * core::f64::consts::PI) - 0.5 * (libm::log(3.0) + 2.0);
        assert!((eval.value - expected).abs() < 1e-13);
        assert!((eval.value - (-3.3872)).abs() < 1e-4);
        assert!((eval.y_p_y - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sigma2_rescaling_shift() {
        let (data, model) = tiny();
        let base = reml_loglik(&data, &model, &ThetaVector::new(1.0, vec![0.0])).unwrap();
        let c = 2.5;
        let scaled = reml_loglik(&data, &model, &ThetaVector::new(c, vec![0.0])).unwrap();
        let expected = -0.5 * (2.0 * libm::log(c) + base.y_p_y * (1.0 / c - 1.0));
        assert!((scaled.value - base.value - expected).abs() < 1e-13);
    }

    #[test]
    fn response_in_fixed_span() {
        let (data, model) = tiny();
        let data = data.with_response(DVector::from_element(3, 4.2)).unwrap();
        let theta = ThetaVector::new(1.7, vec![0.3]);
        let eval = reml_loglik(&data, &model, &theta).unwrap();
        assert!(eval.y_p_y.abs() < 1e-12);
        let expected = -2.0 * HALF_LN_2PI
            - 0.5 * (2.0 * libm::log(1.7) + eval.ctx.logdet_h() + eval.ctx.logdet_xthx());
        assert!((eval.value - expected).abs() < 1e-12);
    }

    #[test]
    fn tiny_score_vanishes() {
        let (data, model) = tiny();
        let theta = ThetaVector::new(1.0, vec![0.0]);
        let s = score(&data, &model, &theta).unwrap();
        assert!(s.inf_norm() < 1e-14, "{s:?}");
        // γ = 0 is on the domain edge; a one-sided check keeps the step inside.
        let fd = fd_score(&data, &model, &ThetaVector::new(1.0, vec![0.01]), 1e-6).unwrap();
        let s = score(&data, &model, &ThetaVector::new(1.0, vec![0.01])).unwrap();
        assert!((fd.entries - s.entries).amax() < 1e-7);
    }

    #[test]
    fn profile_sigma2_zeroes_first_score() {
        let (data, model) = tiny();
        let kappa = [0.8];
        let s2 = profile_sigma2(&data, &model, &kappa).unwrap();
        let s = score(&data, &model, &ThetaVector::new(s2, kappa.to_vec())).unwrap();
        assert!(s.entries[0].abs() < 1e-14);
    }

    #[test]
    fn zero_step_rejected() {
        let (data, model) = tiny();
        let theta = ThetaVector::new(1.0, vec![0.5]);
        assert_eq!(
            fd_score(&data, &model, &theta, 0.0).unwrap_err(),
            Error::InvalidStep(0.0)
        );
    }

    #[test]
    fn fd_near_boundary_reports_index() {
        let data = Dataset::new(
            DVector::from_vec(vec![0.1, -0.4, 0.9, 1.2]),
            DMatrix::from_element(4, 1, 1.0),
            DMatrix::zeros(4, 0),
        )
        .unwrap();
        let model = CovarianceModel::ar1(4).unwrap();
        let theta = ThetaVector::new(1.0, vec![0.99999]);
        assert!(matches!(
            fd_score(&data, &model, &theta, 1e-4),
            Err(Error::InfeasibleParams { index: 1, .. })
        ));
    }
}
