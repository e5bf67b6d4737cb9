//! Observed, Fisher, average and remainder information matrices.
//!
//! Every entry is assembled from two groups of ingredients evaluated at one
//! θ: trace terms that do not depend on `y` ([`TraceTerms`]) and quadratic
//! forms in `ξ = Py` ([`QuadraticTerms`]). With `s = σ²` and `d = n − ν`:
//!
//! | entry      | observed                                 | Fisher         | average     |
//! |------------|------------------------------------------|----------------|-------------|
//! | (σ², σ²)   | `yᵀPy/s³ − d/(2s²)`                      | `d/(2s²)`      | `yᵀPy/(2s³)`|
//! | (σ², κ_i)  | `yᵀPḢᵢPy/(2s²)`                          | `tr(PḢᵢ)/(2s)` | as observed |
//! | (κ_i, κ_j) | `½[tr(PḦᵢⱼ) − tr(PḢᵢPḢⱼ)] + [2yᵀPḢᵢPḢⱼPy − yᵀPḦᵢⱼPy]/(2s)` | `tr(PḢᵢPḢⱼ)/2` | `yᵀPḢᵢPḢⱼPy/(2s)` |
//!
//! The remainder is `(observed + Fisher)/2 − average`, written out in closed
//! form so that it can be averaged over simulated responses directly.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::RemlPoint;
use crate::model::{CovarianceModel, Dataset, ThetaVector};
use crate::projection::trace_of_product;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InfoKind {
    Observed,
    Fisher,
    Average,
    Remainder,
}

/// Symmetric `(m+1) × (m+1)` matrix in θ-ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub kind: InfoKind,
    pub entries: DMatrix<f64>,
    pub theta: ThetaVector,
}

impl InfoMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Smallest eigenvalue of the symmetric matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Trace terms at one θ; independent of the response.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTerms {
    /// `tr(PḢ_k)`.
    pub p_grad: Vec<f64>,
    /// `tr(PḦ_kl)`; exactly zero where `Ḧ_kl` vanishes identically.
    pub p_hess: DMatrix<f64>,
    /// `tr(PḢ_kPḢ_l)`.
    pub p_grad_p_grad: DMatrix<f64>,
}

impl TraceTerms {
    /// Forms `PḢ_k` for every k, which costs `n` applications of `P` each.
    pub fn compute(point: &RemlPoint<'_>) -> Result<Self> {
        let (model, ctx, kappa) = (point.model(), point.ctx(), point.kappa());
        let m = point.m();
        let grads = (0..m)
            .map(|k| model.cov_grad(kappa, k))
            .collect::<Result<Vec<_>>>()?;
        let p_grads = grads
            .iter()
            .map(|g| ctx.apply_p_matrix(g))
            .collect::<Result<Vec<_>>>()?;
        let p_grad = p_grads.iter().map(|pg| pg.trace()).collect();
        let mut p_hess = DMatrix::zeros(m, m);
        let mut p_grad_p_grad = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in k..m {
                let v = trace_of_product(&p_grads[k], &p_grads[l]);
                p_grad_p_grad[(k, l)] = v;
                p_grad_p_grad[(l, k)] = v;
                if !model.hess_is_zero(k, l) {
                    let t = ctx.trace_p_times(&model.cov_hess(kappa, k, l)?)?;
                    p_hess[(k, l)] = t;
                    p_hess[(l, k)] = t;
                }
            }
        }
        Ok(Self {
            p_grad,
            p_hess,
            p_grad_p_grad,
        })
    }
}

/// Response-dependent quadratic forms, computed with matrix-vector products
/// only: `ξ = Py`, `η_k = Ḣ_kξ`, `ζ_k = Pη_k`. That is `m + 1`
/// applications of `P` in total.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerms {
    pub xi: DVector<f64>,
    /// `yᵀPy = yᵀξ`.
    pub y_p_y: f64,
    /// `yᵀPḢ_kPy = η_kᵀξ`.
    pub grad_forms: Vec<f64>,
    /// `(k, l) ↦ η_kᵀζ_l = yᵀPḢ_kPḢ_lPy`, both triangles computed
    /// independently so the symmetry of the form can be checked.
    pub pair_forms: DMatrix<f64>,
    /// `yᵀPḦ_klPy = ξᵀḦ_klξ`.
    pub hess_forms: DMatrix<f64>,
}

impl QuadraticTerms {
    pub fn compute(point: &RemlPoint<'_>, y: &DVector<f64>) -> Result<Self> {
        let (model, ctx, kappa) = (point.model(), point.ctx(), point.kappa());
        let m = point.m();
        let xi = ctx.apply_p(y)?;
        let y_p_y = y.dot(&xi);
        let eta = (0..m)
            .map(|k| model.grad_matvec(kappa, k, &xi))
            .collect::<Result<Vec<_>>>()?;
        let zeta = eta
            .iter()
            .map(|e| ctx.apply_p(e))
            .collect::<Result<Vec<_>>>()?;
        let grad_forms = eta.iter().map(|e| e.dot(&xi)).collect();
        // The printed matvec recipe forms ζ = Pη_j and then returns η_iᵀξ;
        // the entry this recipe is meant to produce is η_iᵀζ_j.
        let pair_forms = DMatrix::from_fn(m, m, |k, l| eta[k].dot(&zeta[l]));
        let mut hess_forms = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in k..m {
                if let Some(hv) = model.hess_matvec(kappa, k, l, &xi)? {
                    let v = hv.dot(&xi);
                    hess_forms[(k, l)] = v;
                    hess_forms[(l, k)] = v;
                }
            }
        }
        Ok(Self {
            xi,
            y_p_y,
            grad_forms,
            pair_forms,
            hess_forms,
        })
    }
}

fn upper(m: &DMatrix<f64>, k: usize, l: usize) -> f64 {
    if k <= l {
        m[(k, l)]
    } else {
        m[(l, k)]
    }
}

/// Fills the upper triangle from `entry` and mirrors it.
fn build(dim: usize, mut entry: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = entry(i, j);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Assembles the four matrices from precomputed ingredients.
#[derive(Debug, Clone, Copy)]
pub struct Assembler<'t> {
    pub sigma2: f64,
    /// `n − ν`.
    pub dof: f64,
    pub m: usize,
    pub theta: &'t ThetaVector,
}

impl<'t> Assembler<'t> {
    pub fn for_point(point: &'t RemlPoint<'_>) -> Self {
        Self {
            sigma2: point.sigma2(),
            dof: point.dof(),
            m: point.m(),
            theta: point.theta(),
        }
    }

    fn wrap(&self, kind: InfoKind, entries: DMatrix<f64>) -> InfoMatrix {
        InfoMatrix {
            kind,
            entries,
            theta: self.theta.clone(),
        }
    }

    pub fn observed(&self, tr: &TraceTerms, q: &QuadraticTerms) -> InfoMatrix {
        let s = self.sigma2;
        let entries = build(self.m + 1, |i, j| match (i, j) {
            (0, 0) => q.y_p_y / (s * s * s) - self.dof / (2.0 * s * s),
            (0, j) => q.grad_forms[j - 1] / (2.0 * s * s),
            (i, j) => {
                let (k, l) = (i - 1, j - 1);
                0.5 * (tr.p_hess[(k, l)] - tr.p_grad_p_grad[(k, l)])
                    + (2.0 * upper(&q.pair_forms, k, l) - q.hess_forms[(k, l)]) / (2.0 * s)
            }
        });
        self.wrap(InfoKind::Observed, entries)
    }

    pub fn fisher(&self, tr: &TraceTerms) -> InfoMatrix {
        let s = self.sigma2;
        let entries = build(self.m + 1, |i, j| match (i, j) {
            (0, 0) => self.dof / (2.0 * s * s),
            (0, j) => tr.p_grad[j - 1] / (2.0 * s),
            (i, j) => 0.5 * tr.p_grad_p_grad[(i - 1, j - 1)],
        });
        self.wrap(InfoKind::Fisher, entries)
    }

    pub fn average(&self, q: &QuadraticTerms) -> InfoMatrix {
        let s = self.sigma2;
        let entries = build(self.m + 1, |i, j| match (i, j) {
            (0, 0) => q.y_p_y / (2.0 * s * s * s),
            (0, j) => q.grad_forms[j - 1] / (2.0 * s * s),
            (i, j) => upper(&q.pair_forms, i - 1, j - 1) / (2.0 * s),
        });
        self.wrap(InfoKind::Average, entries)
    }

    pub fn remainder(&self, tr: &TraceTerms, q: &QuadraticTerms) -> InfoMatrix {
        let s = self.sigma2;
        let entries = build(self.m + 1, |i, j| match (i, j) {
            (0, 0) => 0.0,
            (0, j) => tr.p_grad[j - 1] / (4.0 * s) - q.grad_forms[j - 1] / (4.0 * s * s),
            (i, j) => {
                let (k, l) = (i - 1, j - 1);
                0.25 * (tr.p_hess[(k, l)] - q.hess_forms[(k, l)] / s)
            }
        });
        self.wrap(InfoKind::Remainder, entries)
    }
}

/// Negative Hessian of `ℓ_R`.
pub fn observed_information(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<InfoMatrix> {
    let point = RemlPoint::new(data, model, theta)?;
    let tr = TraceTerms::compute(&point)?;
    let q = QuadraticTerms::compute(&point, data.y())?;
    Ok(Assembler::for_point(&point).observed(&tr, &q))
}

/// Expected information; never reads `y`.
pub fn fisher_information(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<InfoMatrix> {
    let point = RemlPoint::new(data, model, theta)?;
    let tr = TraceTerms::compute(&point)?;
    Ok(Assembler::for_point(&point).fisher(&tr))
}

/// Average information from `m + 1` applications of `P` and `m` gradient
/// matvecs; no trace terms.
pub fn average_information(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<InfoMatrix> {
    let point = RemlPoint::new(data, model, theta)?;
    let q = QuadraticTerms::compute(&point, data.y())?;
    Ok(Assembler::for_point(&point).average(&q))
}

/// The zero-mean remainder `(I_O + I)/2 − I_A`.
pub fn splitting_remainder(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<InfoMatrix> {
    let point = RemlPoint::new(data, model, theta)?;
    let tr = TraceTerms::compute(&point)?;
    let q = QuadraticTerms::compute(&point, data.y())?;
    Ok(Assembler::for_point(&point).remainder(&tr, &q))
}

/// All four matrices at one θ, sharing the factorization and terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationSet {
    pub observed: InfoMatrix,
    pub fisher: InfoMatrix,
    pub average: InfoMatrix,
    pub remainder: InfoMatrix,
}

impl InformationSet {
    pub fn compute(data: &Dataset, model: &CovarianceModel, theta: &ThetaVector) -> Result<Self> {
        let point = RemlPoint::new(data, model, theta)?;
        let tr = TraceTerms::compute(&point)?;
        let q = QuadraticTerms::compute(&point, data.y())?;
        let asm = Assembler::for_point(&point);
        Ok(Self {
            observed: asm.observed(&tr, &q),
            fisher: asm.fisher(&tr),
            average: asm.average(&q),
            remainder: asm.remainder(&tr, &q),
        })
    }

    pub fn splitting_residual(&self) -> SplittingResidual {
        SplittingResidual::of(self)
    }
}

/// Deviation from `(I_O + I)/2 = I_A + I_Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplittingResidual {
    /// `max |(I_O + I)/2 − I_A − I_Z|`.
    pub max_abs: f64,
    /// `max |(I_O + I)/2 − I_A − I_Z| / (1 + |(I_O + I)/2|)`.
    pub max_scaled: f64,
}

impl SplittingResidual {
    fn of(set: &InformationSet) -> Self {
        let mean = (&set.observed.entries + &set.fisher.entries) * 0.5;
        let resid = &mean - &set.average.entries - &set.remainder.entries;
        let mut max_abs = 0.0_f64;
        let mut max_scaled = 0.0_f64;
        for (r, a) in resid.iter().zip(mean.iter()) {
            max_abs = max_abs.max(r.abs());
            max_scaled = max_scaled.max(r.abs() / (1.0 + a.abs()));
        }
        Self {
            max_abs,
            max_scaled,
        }
    }
}

/// Evaluates all four matrices and reports the splitting residual.
pub fn check_splitting(
    data: &Dataset,
    model: &CovarianceModel,
    theta: &ThetaVector,
) -> Result<SplittingResidual> {
    Ok(InformationSet::compute(data, model, theta)?.splitting_residual())
}

/// Checks that `info` has the θ-dimension expected by `model`.
pub(crate) fn check_dim(info: &DMatrix<f64>, expected: usize) -> Result<()> {
    if info.nrows() != expected || info.ncols() != expected {
        return Err(Error::DimensionMismatch {
            context: "information matrix",
            expected,
            found: info.nrows(),
        });
    }
    Ok(())
}
