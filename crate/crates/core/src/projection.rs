//! Weighted projection `P = H⁻¹ − H⁻¹X(XᵀH⁻¹X)⁻¹XᵀH⁻¹` applied through
//! Cholesky solves, plus the mixed model equations route to `Py`.
//!
//! `P` is never formed; every product goes through triangular solves with
//! the factors of `H` and `XᵀH⁻¹X`.

use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, PivotBlock, Result};

/// Factorizations for one `(X, H)` pair.
#[derive(Debug)]
pub struct ProjectionContext {
    chol_h: Cholesky<f64, Dyn>,
    x: DMatrix<f64>,
    hinv_x: DMatrix<f64>,
    chol_xthx: Cholesky<f64, Dyn>,
    logdet_h: f64,
    logdet_xthx: f64,
    applications: AtomicUsize,
}

impl Clone for ProjectionContext {
    fn clone(&self) -> Self {
        Self {
            chol_h: self.chol_h.clone(),
            x: self.x.clone(),
            hinv_x: self.hinv_x.clone(),
            chol_xthx: self.chol_xthx.clone(),
            logdet_h: self.logdet_h,
            logdet_xthx: self.logdet_xthx,
            applications: AtomicUsize::new(self.p_applications()),
        }
    }
}

fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| libm::log(*d))
        .sum::<f64>()
}

impl ProjectionContext {
    /// Factors `h` and `XᵀH⁻¹X`. Fails rather than producing non-finite
    /// log-determinants.
    pub fn new(x: &DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "H against rows of X",
                expected: n,
                found: h.nrows(),
            });
        }
        let chol_h = h
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { what: "H" })?;
        let hinv_x = chol_h.solve(x);
        let mut xthx = x.transpose() * &hinv_x;
        symmetrize(&mut xthx);
        let chol_xthx = xthx
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { what: "X'H^-1X" })?;
        let logdet_h = logdet(&chol_h);
        let logdet_xthx = logdet(&chol_xthx);
        if !(logdet_h.is_finite() && logdet_xthx.is_finite()) {
            return Err(Error::NotPositiveDefinite { what: "H" });
        }
        Ok(Self {
            chol_h,
            x: x.clone(),
            hinv_x,
            chol_xthx,
            logdet_h,
            logdet_xthx,
            applications: AtomicUsize::new(0),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn logdet_h(&self) -> f64 {
        self.logdet_h
    }

    pub fn logdet_xthx(&self) -> f64 {
        self.logdet_xthx
    }

    /// Number of `P`-applications performed so far, counting one per vector
    /// (a matrix argument counts once per column).
    pub fn p_applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    fn check_rows(&self, rows: usize, context: &'static str) -> Result<()> {
        if rows != self.n() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n(),
                found: rows,
            });
        }
        Ok(())
    }

    /// `Pv`.
    pub fn apply_p(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(v.len(), "apply_P vector")?;
        self.applications.fetch_add(1, Ordering::Relaxed);
        let w = self.chol_h.solve(v);
        let s = self.chol_xthx.solve(&(self.x.transpose() * &w));
        Ok(w - &self.hinv_x * s)
    }

    /// `PM`, column by column.
    pub fn apply_p_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m.nrows(), "apply_P matrix")?;
        self.applications.fetch_add(m.ncols(), Ordering::Relaxed);
        let w = self.chol_h.solve(m);
        let s = self.chol_xthx.solve(&(self.x.transpose() * &w));
        Ok(w - &self.hinv_x * s)
    }

    /// `H⁻¹v`.
    pub fn solve_h(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(v.len(), "H solve")?;
        Ok(self.chol_h.solve(v))
    }

    /// `tr(PA) = tr(H⁻¹A) − tr((XᵀH⁻¹X)⁻¹ (H⁻¹X)ᵀ A (H⁻¹X))`.
    pub fn trace_p_times(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check_square(a)?;
        let hinv_a = self.chol_h.solve(a);
        let inner = self.hinv_x.transpose() * a * &self.hinv_x;
        let correction = self.chol_xthx.solve(&inner);
        Ok(hinv_a.trace() - correction.trace())
    }

    /// `tr(PAPB)`, forming `PA` and `PB` with `n` applications each.
    pub fn trace_pa_pb(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        self.check_square(a)?;
        self.check_square(b)?;
        let pa = self.apply_p_matrix(a)?;
        let pb = self.apply_p_matrix(b)?;
        Ok(trace_of_product(&pa, &pb))
    }

    fn check_square(&self, a: &DMatrix<f64>) -> Result<()> {
        self.check_rows(a.nrows(), "trace operand rows")?;
        self.check_rows(a.ncols(), "trace operand columns")
    }
}

/// `tr(AB)` without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solutions of the mixed model equations.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEffects {
    pub tau_hat: DVector<f64>,
    pub u_tilde: DVector<f64>,
    /// `y − Xτ̂ − Zũ`.
    pub e: DVector<f64>,
}

/// Solves
///
/// ```text
/// [XᵀR⁻¹X  XᵀR⁻¹Z      ] [τ̂]   [XᵀR⁻¹y]
/// [ZᵀR⁻¹X  ZᵀR⁻¹Z + G⁻¹] [ũ] = [ZᵀR⁻¹y]
/// ```
///
/// by Cholesky of the assembled coefficient matrix.
pub fn solve_mme(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<FittedEffects> {
    let n = x.nrows();
    let (p, b) = (x.ncols(), z.ncols());
    let check = |context, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                found,
            })
        }
    };
    check("rows of Z", n, z.nrows())?;
    check("rows of R", n, r.nrows())?;
    check("columns of R", n, r.ncols())?;
    check("rows of G", b, g.nrows())?;
    check("columns of G", b, g.ncols())?;
    check("length of y", n, y.len())?;
    if b == 0 {
        return Err(Error::InvalidDataset(
            "mixed model equations need at least one random effect".into(),
        ));
    }

    let chol_r = r
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { what: "R" })?;
    let g_inv = g
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { what: "G" })?
        .inverse();

    let mut w = DMatrix::zeros(n, p + b);
    w.columns_mut(0, p).copy_from(x);
    w.columns_mut(p, b).copy_from(z);
    let rinv_w = chol_r.solve(&w);
    let mut c = w.transpose() * &rinv_w;
    let mut random_block = c.view_mut((p, p), (b, b));
    random_block += &g_inv;
    symmetrize(&mut c);
    let rhs = rinv_w.transpose() * y;

    let chol_c = match c.clone().cholesky() {
        Some(chol) => chol,
        None => {
            let fixed_ok = c.view((0, 0), (p, p)).into_owned().cholesky().is_some();
            let block = if fixed_ok {
                PivotBlock::Random
            } else {
                PivotBlock::Fixed
            };
            return Err(Error::SingularCoefficientMatrix { block });
        }
    };
    let sol = chol_c.solve(&rhs);
    let tau_hat = sol.rows(0, p).into_owned();
    let u_tilde = sol.rows(p, b).into_owned();
    let e = y - x * &tau_hat - z * &u_tilde;
    Ok(FittedEffects {
        tau_hat,
        u_tilde,
        e,
    })
}

/// `Py` computed as `R⁻¹e` from the mixed model equations, for `H = R + ZGZᵀ`.
pub fn apply_p_via_mme(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let fitted = solve_mme(x, z, r, g, y)?;
    let chol_r = r
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { what: "R" })?;
    Ok(chol_r.solve(&fitted.e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn identity_h_with_intercept() {
        let ctx = ProjectionContext::new(&ones(3), DMatrix::identity(3, 3)).unwrap();
        assert_eq!(ctx.logdet_h(), 0.0);
        assert!((ctx.logdet_xthx() - libm::log(3.0)).abs() < 1e-15);
        let pv = ctx
            .apply_p(&DVector::from_vec(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert!((pv - DVector::from_vec(vec![-1.0, 0.0, 1.0])).amax() < 1e-15);
        let tr = ctx.trace_p_times(&DMatrix::identity(3, 3)).unwrap();
        assert!((tr - 2.0).abs() < 1e-14);
        let tr2 = ctx
            .trace_pa_pb(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3))
            .unwrap();
        assert!((tr2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_h() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let ctx = ProjectionContext::new(&x, DMatrix::identity(2, 2) * 4.0).unwrap();
        assert!((ctx.logdet_h() - 2.0 * libm::log(4.0)).abs() < 1e-14);
        assert!((ctx.logdet_xthx() - libm::log(0.25)).abs() < 1e-14);
    }

    #[test]
    fn annihilates_fixed_effects() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.0, 1.0, 0.1]);
        let mut h = DMatrix::from_fn(4, 4, |i, j| 0.4_f64.powi(i.abs_diff(j) as i32));
        h[(0, 0)] += 0.5;
        let ctx = ProjectionContext::new(&x, h.clone()).unwrap();
        for col in x.column_iter() {
            assert!(ctx.apply_p(&col.into_owned()).unwrap().amax() < 1e-14);
        }
        assert!((ctx.trace_p_times(&h).unwrap() - 2.0).abs() < 1e-12);
        assert!((ctx.trace_pa_pb(&h, &h).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn application_counter() {
        let ctx = ProjectionContext::new(&ones(3), DMatrix::identity(3, 3)).unwrap();
        ctx.apply_p(&DVector::zeros(3)).unwrap();
        ctx.apply_p_matrix(&DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(ctx.p_applications(), 3);
    }

    #[test]
    fn dimension_errors() {
        let ctx = ProjectionContext::new(&ones(3), DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            ctx.apply_p(&DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ctx.trace_p_times(&DMatrix::zeros(3, 2)).is_err());
        assert!(ProjectionContext::new(&ones(3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn not_positive_definite() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            ProjectionContext::new(&ones(2), h),
            Err(Error::NotPositiveDefinite { what: "H" })
        ));
    }

    #[test]
    fn mme_pure_fixed_effect_response() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let y = &x * DVector::from_vec(vec![0.5, -2.0]);
        let py = apply_p_via_mme(
            &x,
            &z,
            &DMatrix::identity(4, 4),
            &DMatrix::identity(2, 2),
            &y,
        )
        .unwrap();
        assert!(py.amax() < 1e-10);
    }

    #[test]
    fn mme_singular_fixed_block() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let err = solve_mme(
            &x,
            &DMatrix::identity(3, 3),
            &DMatrix::identity(3, 3),
            &DMatrix::identity(3, 3),
            &DVector::from_vec(vec![1.0, 2.0, 3.0]),
        );
        assert_eq!(
            err,
            Err(Error::SingularCoefficientMatrix {
                block: PivotBlock::Fixed
            })
        );
    }
}
