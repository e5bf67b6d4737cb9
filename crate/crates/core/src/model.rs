//! Linear mixed model structure `y = Xτ + Zu + ε` and the parametric
//! covariance families.
//!
//! The scaled covariance of `y` is `σ²H(κ)` with `H = R(φ) + Σ γᵢ ZᵢZᵢᵀ`.
//! Structure parameters are ordered random-effect ratios first, then the
//! autoregressive coefficient when the residual is AR(1).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observed response with its fixed- and random-effects designs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl Dataset {
    /// Validates dimensions, finiteness and full column rank of `x`.
    ///
    /// `z` may have zero columns for models without random effects.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidDataset(
                "fixed-effects design has no columns".into(),
            ));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "rows of X",
                expected: n,
                found: x.nrows(),
            });
        }
        if z.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "rows of Z",
                expected: n,
                found: z.nrows(),
            });
        }
        if let Some(what) = first_non_finite(&y, &x, &z) {
            return Err(Error::InvalidDataset(format!("non-finite value in {what}")));
        }
        let p = x.ncols();
        if n <= p {
            return Err(Error::InvalidDataset(format!(
                "need more observations ({n}) than fixed effects ({p})"
            )));
        }
        let rank = numerical_rank(&x);
        if rank < p {
            return Err(Error::RankDeficientX { rank, columns: p });
        }
        Ok(Self { y, x, z })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn b(&self) -> usize {
        self.z.ncols()
    }

    /// Rank of `X`; equal to `p` because rank deficiency is rejected at construction.
    pub fn nu(&self) -> usize {
        self.p()
    }

    /// Residual degrees of freedom `n − ν`.
    pub fn dof(&self) -> f64 {
        (self.n() - self.nu()) as f64
    }

    /// Same designs with a different response vector.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: self.n(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value in y".into()));
        }
        Ok(Self {
            y,
            x: self.x.clone(),
            z: self.z.clone(),
        })
    }
}

fn first_non_finite(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<&'static str> {
    if y.iter().any(|v| !v.is_finite()) {
        Some("y")
    } else if x.iter().any(|v| !v.is_finite()) {
        Some("X")
    } else if z.iter().any(|v| !v.is_finite()) {
        Some("Z")
    } else {
        None
    }
}

pub(crate) fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let tol = max * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Variance parameters `θ = (σ², κ)`.
///
/// Flattened index 0 is `σ²`, index `k + 1` is `κ_k`; every score vector and
/// information matrix uses this ordering.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThetaVector {
    pub sigma2: f64,
    pub kappa: Vec<f64>,
}

impl ThetaVector {
    pub fn new(sigma2: f64, kappa: Vec<f64>) -> Self {
        Self { sigma2, kappa }
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        let (&sigma2, kappa) = values.split_first()?;
        Some(Self::new(sigma2, kappa.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.kappa.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> f64 {
        if index == 0 {
            self.sigma2
        } else {
            self.kappa[index - 1]
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        if index == 0 {
            self.sigma2 = value;
        } else {
            self.kappa[index - 1] = value;
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.sigma2);
        out.extend_from_slice(&self.kappa);
        out
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_vec())
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Self::from_slice(v.as_slice()).expect("theta vector has at least one entry")
    }

    /// Infinity-norm distance between two parameter vectors of equal length.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Covariance family, derived from the residual structure and random blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Family {
    /// `H = I`; only `σ²` is estimated.
    ScaleOnly,
    /// `H = I + Σ γᵢ ZᵢZᵢᵀ`, linear in κ.
    VarianceComponents,
    /// `H = R(φ)` with `R_st = φ^|s−t|`.
    Ar1Residual,
    /// `H = R(φ) + Σ γᵢ ZᵢZᵢᵀ`.
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Residual {
    Identity,
    Ar1,
}

/// What a structure parameter controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Variance ratio of the random block with this index.
    Gamma(usize),
    /// AR(1) correlation of the residual.
    Phi,
}

/// Feasible region used by [`CovarianceModel::validate_params`] and by the
/// solver's box projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub sigma2_min: f64,
    pub gamma_min: f64,
    /// `|φ| ≤ 1 − ar1_margin`.
    pub ar1_margin: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            sigma2_min: 1e-10,
            gamma_min: 1e-8,
            ar1_margin: 1e-4,
        }
    }
}

impl Bounds {
    pub fn phi_max(&self) -> f64 {
        1.0 - self.ar1_margin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamIssue {
    /// Index in θ-ordering.
    pub index: usize,
    pub reason: String,
}

/// Outcome of [`CovarianceModel::validate_params`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Feasibility {
    pub issues: Vec<ParamIssue>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(issue) => Err(Error::InfeasibleParams {
                index: issue.index,
                reason: issue.reason,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RandomBlock {
    z: DMatrix<f64>,
    zzt: DMatrix<f64>,
}

/// Parametric structure of `H(κ)` with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    n: usize,
    residual: Residual,
    blocks: Vec<RandomBlock>,
    bounds: Bounds,
}

impl CovarianceModel {
    /// `residual` plus one variance ratio per entry of `blocks`; each block is
    /// an `n × bᵢ` design whose columns are consecutive columns of the
    /// dataset's `Z`.
    pub fn new(n: usize, residual: Residual, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        let blocks = blocks
            .into_iter()
            .map(|z| {
                if z.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        context: "rows of random-effects block",
                        expected: n,
                        found: z.nrows(),
                    });
                }
                if z.ncols() == 0 {
                    return Err(Error::InvalidDataset("empty random-effects block".into()));
                }
                let zzt = &z * z.transpose();
                Ok(RandomBlock { z, zzt })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            residual,
            blocks,
            bounds: Bounds::default(),
        })
    }

    pub fn scale_only(n: usize) -> Result<Self> {
        Self::new(n, Residual::Identity, Vec::new())
    }

    pub fn variance_components(n: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(n, Residual::Identity, blocks)
    }

    pub fn ar1(n: usize) -> Result<Self> {
        Self::new(n, Residual::Ar1, Vec::new())
    }

    pub fn composite(n: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(n, Residual::Ar1, blocks)
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn residual(&self) -> Residual {
        self.residual
    }

    /// Number of structure parameters `m`.
    pub fn m(&self) -> usize {
        self.blocks.len() + usize::from(self.residual == Residual::Ar1)
    }

    pub fn family(&self) -> Family {
        match (self.residual, self.blocks.is_empty()) {
            (Residual::Identity, true) => Family::ScaleOnly,
            (Residual::Identity, false) => Family::VarianceComponents,
            (Residual::Ar1, true) => Family::Ar1Residual,
            (Residual::Ar1, false) => Family::Composite,
        }
    }

    /// True when `H` is linear in κ, so every second derivative vanishes.
    pub fn is_linear(&self) -> bool {
        self.residual == Residual::Identity
    }

    pub fn param_kind(&self, k: usize) -> Result<ParamKind> {
        if k < self.blocks.len() {
            Ok(ParamKind::Gamma(k))
        } else if k == self.blocks.len() && self.residual == Residual::Ar1 {
            Ok(ParamKind::Phi)
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                len: self.m(),
            })
        }
    }

    /// Concatenated random-effects design `Z = [Z₁ … Z_k]`.
    pub fn design(&self) -> DMatrix<f64> {
        let b = self.blocks.iter().map(|blk| blk.z.ncols()).sum();
        let mut z = DMatrix::zeros(self.n, b);
        let mut col = 0;
        for blk in &self.blocks {
            z.columns_mut(col, blk.z.ncols()).copy_from(&blk.z);
            col += blk.z.ncols();
        }
        z
    }

    /// Column counts of the random blocks.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|blk| blk.z.ncols()).collect()
    }

    /// Checks θ against the declared [`Bounds`]; reports every violation.
    pub fn validate_params(&self, theta: &ThetaVector) -> Feasibility {
        let mut issues = Vec::new();
        let b = &self.bounds;
        if !(theta.sigma2.is_finite() && theta.sigma2 > 0.0) {
            issues.push(ParamIssue {
                index: 0,
                reason: "sigma2 must be positive".into(),
            });
        } else if theta.sigma2 < b.sigma2_min {
            issues.push(ParamIssue {
                index: 0,
                reason: format!("sigma2 below floor {:e}", b.sigma2_min),
            });
        }
        if theta.kappa.len() != self.m() {
            issues.push(ParamIssue {
                index: 1,
                reason: format!(
                    "expected {} structure parameters, got {}",
                    self.m(),
                    theta.kappa.len()
                ),
            });
            return Feasibility { issues };
        }
        for (k, &value) in theta.kappa.iter().enumerate() {
            let index = k + 1;
            if !value.is_finite() {
                issues.push(ParamIssue {
                    index,
                    reason: "parameter must be finite".into(),
                });
                continue;
            }
            match self.param_kind(k).expect("index checked against m") {
                ParamKind::Gamma(_) if value < b.gamma_min => issues.push(ParamIssue {
                    index,
                    reason: format!("variance ratio {value} below floor {:e}", b.gamma_min),
                }),
                ParamKind::Phi if value.abs() > b.phi_max() => issues.push(ParamIssue {
                    index,
                    reason: format!("|phi| = {} exceeds {}", value.abs(), b.phi_max()),
                }),
                _ => {}
            }
        }
        Feasibility { issues }
    }

    /// Looser check used by the evaluation routines: θ only has to define a
    /// valid covariance (`σ² > 0`, `γ ≥ 0`, `|φ| < 1`).
    pub fn check_domain(&self, theta: &ThetaVector) -> Result<()> {
        if !(theta.sigma2.is_finite() && theta.sigma2 > 0.0) {
            return Err(Error::InfeasibleParams {
                index: 0,
                reason: "sigma2 must be positive".into(),
            });
        }
        self.check_kappa(&theta.kappa)
    }

    fn check_kappa(&self, kappa: &[f64]) -> Result<()> {
        if kappa.len() != self.m() {
            return Err(Error::DimensionMismatch {
                context: "structure parameters",
                expected: self.m(),
                found: kappa.len(),
            });
        }
        for (k, &value) in kappa.iter().enumerate() {
            let bad = match self.param_kind(k)? {
                ParamKind::Gamma(_) => !(value.is_finite() && value >= 0.0),
                ParamKind::Phi => !(value.is_finite() && value.abs() < 1.0),
            };
            if bad {
                return Err(Error::InfeasibleParams {
                    index: k + 1,
                    reason: format!("{value} outside the covariance domain"),
                });
            }
        }
        Ok(())
    }

    fn phi(&self, kappa: &[f64]) -> f64 {
        match self.residual {
            Residual::Ar1 => kappa[self.blocks.len()],
            Residual::Identity => 0.0,
        }
    }

    /// Residual structure `R(φ)`.
    pub fn residual_cov(&self, kappa: &[f64]) -> Result<DMatrix<f64>> {
        self.check_kappa(kappa)?;
        Ok(self.residual_unchecked(kappa))
    }

    fn residual_unchecked(&self, kappa: &[f64]) -> DMatrix<f64> {
        match self.residual {
            Residual::Identity => DMatrix::identity(self.n, self.n),
            Residual::Ar1 => {
                let pw = powers(self.phi(kappa), self.n);
                DMatrix::from_fn(self.n, self.n, |s, t| pw[s.abs_diff(t)])
            }
        }
    }

    /// Random-effects covariance `G = blockdiag(γᵢ I)`.
    pub fn random_cov(&self, kappa: &[f64]) -> Result<DMatrix<f64>> {
        self.check_kappa(kappa)?;
        let sizes = self.block_sizes();
        let b: usize = sizes.iter().sum();
        let mut g = DMatrix::zeros(b, b);
        let mut offset = 0;
        for (size, gamma) in sizes.iter().zip(kappa) {
            for d in offset..offset + size {
                g[(d, d)] = *gamma;
            }
            offset += size;
        }
        Ok(g)
    }

    /// `H(κ)`, unchecked for positive definiteness.
    pub(crate) fn assemble(&self, kappa: &[f64]) -> Result<DMatrix<f64>> {
        self.check_kappa(kappa)?;
        let mut h = self.residual_unchecked(kappa);
        for (blk, gamma) in self.blocks.iter().zip(kappa) {
            h += &blk.zzt * *gamma;
        }
        Ok(h)
    }

    /// `H(κ)`; verified symmetric positive definite by a Cholesky factorization.
    pub fn cov_matrix(&self, kappa: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.assemble(kappa)?;
        if h.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { what: "H" });
        }
        Ok(h)
    }

    /// `Ḣ_k = ∂H/∂κ_k` (0-based structure index).
    pub fn cov_grad(&self, kappa: &[f64], k: usize) -> Result<DMatrix<f64>> {
        self.check_kappa(kappa)?;
        Ok(match self.param_kind(k)? {
            ParamKind::Gamma(i) => self.blocks[i].zzt.clone(),
            ParamKind::Phi => {
                let coef = ar1_first_derivative(self.phi(kappa), self.n);
                DMatrix::from_fn(self.n, self.n, |s, t| coef[s.abs_diff(t)])
            }
        })
    }

    /// `Ḧ_kl = ∂²H/∂κ_k∂κ_l`; zero except for the AR(1) `(φ, φ)` entry.
    pub fn cov_hess(&self, kappa: &[f64], k: usize, l: usize) -> Result<DMatrix<f64>> {
        self.check_kappa(kappa)?;
        let (a, b) = (self.param_kind(k)?, self.param_kind(l)?);
        Ok(match (a, b) {
            (ParamKind::Phi, ParamKind::Phi) => {
                let coef = ar1_second_derivative(self.phi(kappa), self.n);
                DMatrix::from_fn(self.n, self.n, |s, t| coef[s.abs_diff(t)])
            }
            _ => DMatrix::zeros(self.n, self.n),
        })
    }

    /// True when `Ḧ_kl` vanishes identically in κ.
    pub fn hess_is_zero(&self, k: usize, l: usize) -> bool {
        !matches!(
            (self.param_kind(k), self.param_kind(l)),
            (Ok(ParamKind::Phi), Ok(ParamKind::Phi))
        )
    }

    /// `Ḣ_k v` without forming `Ḣ_k` for random blocks.
    pub fn grad_matvec(&self, kappa: &[f64], k: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_kappa(kappa)?;
        self.check_len(v)?;
        Ok(match self.param_kind(k)? {
            ParamKind::Gamma(i) => {
                let z = &self.blocks[i].z;
                z * (z.transpose() * v)
            }
            ParamKind::Phi => toeplitz_matvec(&ar1_first_derivative(self.phi(kappa), self.n), v),
        })
    }

    /// `Ḧ_kl v`, or `None` when `Ḧ_kl` is identically zero.
    pub fn hess_matvec(
        &self,
        kappa: &[f64],
        k: usize,
        l: usize,
        v: &DVector<f64>,
    ) -> Result<Option<DVector<f64>>> {
        self.check_kappa(kappa)?;
        self.check_len(v)?;
        self.param_kind(k)?;
        self.param_kind(l)?;
        if self.hess_is_zero(k, l) {
            return Ok(None);
        }
        let coef = ar1_second_derivative(self.phi(kappa), self.n);
        Ok(Some(toeplitz_matvec(&coef, v)))
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "vector length",
                expected: self.n,
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// `φ^d` for lag `d = 0..n`.
fn powers(phi: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut acc = 1.0;
    for _ in 0..n {
        out.push(acc);
        acc *= phi;
    }
    out
}

/// `d·φ^(d−1)` by lag.
fn ar1_first_derivative(phi: f64, n: usize) -> Vec<f64> {
    let pw = powers(phi, n);
    (0..n)
        .map(|d| if d == 0 { 0.0 } else { d as f64 * pw[d - 1] })
        .collect()
}

/// `d(d−1)·φ^(d−2)` by lag.
fn ar1_second_derivative(phi: f64, n: usize) -> Vec<f64> {
    let pw = powers(phi, n);
    (0..n)
        .map(|d| {
            if d < 2 {
                0.0
            } else {
                (d * (d - 1)) as f64 * pw[d - 2]
            }
        })
        .collect()
}

/// Symmetric Toeplitz matrix with first row `coef`, applied to `v`.
fn toeplitz_matvec(coef: &[f64], v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(n, |s, _| (0..n).map(|t| coef[s.abs_diff(t)] * v[t]).sum())
}
