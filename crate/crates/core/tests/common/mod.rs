#![allow(dead_code)]

use infosplit_core::model::{CovarianceModel, Dataset, ThetaVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn indicator(levels: &[usize], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(levels.len(), k, |r, c| f64::from(u8::from(levels[r] == c)))
}

/// Observation `i` of `n` belongs to group `i / size`.
pub fn balanced_groups(n: usize, size: usize) -> DMatrix<f64> {
    let levels: Vec<usize> = (0..n).map(|i| i / size).collect();
    indicator(&levels, n.div_ceil(size))
}

pub fn intercept(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Linear,
    Ar1,
    Composite,
}

pub struct Instance {
    pub kind: Kind,
    pub data: Dataset,
    pub model: CovarianceModel,
    pub theta: ThetaVector,
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    x.column_mut(0).fill(1.0);
    x
}

fn random_block(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let levels = rng.random_range(2..=5usize);
    let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..levels)).collect();
    indicator(&assign, levels)
}

fn hcat(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let b = blocks.iter().map(|z| z.ncols()).sum();
    let mut z = DMatrix::zeros(n, b);
    let mut col = 0;
    for blk in blocks {
        z.columns_mut(col, blk.ncols()).copy_from(blk);
        col += blk.ncols();
    }
    z
}

/// Random instance with `n ∈ [lo_n, hi_n]`, `m ∈ [1, 4]`, a feasible interior
/// θ and a response drawn from the model.
pub fn random_instance(rng: &mut ChaCha8Rng, kind: Kind, lo_n: usize, hi_n: usize) -> Instance {
    let n = rng.random_range(lo_n..=hi_n);
    let p = rng.random_range(1..=2usize.min(n - 2));
    let x = random_design(rng, n, p);
    let n_blocks = match kind {
        Kind::Linear => rng.random_range(1..=4usize),
        Kind::Ar1 => 0,
        Kind::Composite => rng.random_range(1..=3usize),
    };
    let blocks: Vec<DMatrix<f64>> = (0..n_blocks).map(|_| random_block(rng, n)).collect();
    let z = hcat(&blocks, n);
    let model = match kind {
        Kind::Linear => CovarianceModel::variance_components(n, blocks),
        Kind::Ar1 => CovarianceModel::ar1(n),
        Kind::Composite => CovarianceModel::composite(n, blocks),
    }
    .unwrap();
    let mut kappa: Vec<f64> = (0..n_blocks).map(|_| rng.random_range(0.05..3.0)).collect();
    if kind != Kind::Linear {
        kappa.push(rng.random_range(-0.8..0.8));
    }
    let theta = ThetaVector::new(rng.random_range(0.3..3.0), kappa);
    let h = model.cov_matrix(&theta.kappa).unwrap();
    let l = h.cholesky().unwrap().l();
    let tau = normal_vec(rng, p);
    let y = &x * tau + l * normal_vec(rng, n) * theta.sigma2.sqrt();
    let data = Dataset::new(y, x, z).unwrap();
    Instance {
        kind,
        data,
        model,
        theta,
    }
}

pub fn any_kind(rng: &mut ChaCha8Rng) -> Kind {
    match rng.random_range(0..3) {
        0 => Kind::Linear,
        1 => Kind::Ar1,
        _ => Kind::Composite,
    }
}

/// Dense `P` built with explicit inverses; test oracle only.
pub fn dense_p(x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let hinv = h.clone().try_inverse().unwrap();
    let xthx_inv = (x.transpose() * &hinv * x).try_inverse().unwrap();
    &hinv - &hinv * x * xthx_inv * x.transpose() * &hinv
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// Information matrices assembled from dense `P`, `Ḣ` and `Ḧ`; test oracle only.
pub struct DenseInfo {
    pub observed: DMatrix<f64>,
    pub fisher: DMatrix<f64>,
    pub average: DMatrix<f64>,
    pub loglik: f64,
    pub score: DVector<f64>,
}

pub fn dense_info(inst: &Instance) -> DenseInfo {
    let (model, data, theta) = (&inst.model, &inst.data, &inst.theta);
    let kappa = &theta.kappa;
    let m = model.m();
    let s = theta.sigma2;
    let d = data.dof();
    let h = model.cov_matrix(kappa).unwrap();
    let p = dense_p(data.x(), &h);
    let y = data.y();
    let ypy = (y.transpose() * &p * y)[0];
    let grads: Vec<DMatrix<f64>> = (0..m).map(|k| model.cov_grad(kappa, k).unwrap()).collect();
    let dim = m + 1;
    let mut observed = DMatrix::zeros(dim, dim);
    let mut fisher = DMatrix::zeros(dim, dim);
    let mut average = DMatrix::zeros(dim, dim);
    let mut score = DVector::zeros(dim);
    observed[(0, 0)] = ypy / s.powi(3) - d / (2.0 * s * s);
    fisher[(0, 0)] = d / (2.0 * s * s);
    average[(0, 0)] = ypy / (2.0 * s.powi(3));
    score[0] = -0.5 * (d / s - ypy / (s * s));
    for k in 0..m {
        let g = (y.transpose() * &p * &grads[k] * &p * y)[0];
        let tr = (&p * &grads[k]).trace();
        score[k + 1] = -0.5 * (tr - g / s);
        for (mat, v) in [
            (&mut observed, g / (2.0 * s * s)),
            (&mut fisher, tr / (2.0 * s)),
            (&mut average, g / (2.0 * s * s)),
        ] {
            mat[(0, k + 1)] = v;
            mat[(k + 1, 0)] = v;
        }
        for l in 0..m {
            let hess = model.cov_hess(kappa, k, l).unwrap();
            let q = (y.transpose() * &p * &grads[k] * &p * &grads[l] * &p * y)[0];
            let hq = (y.transpose() * &p * &hess * &p * y)[0];
            let t2 = (&p * &grads[k] * &p * &grads[l]).trace();
            let th = (&p * &hess).trace();
            observed[(k + 1, l + 1)] = 0.5 * (th - t2) + (2.0 * q - hq) / (2.0 * s);
            fisher[(k + 1, l + 1)] = 0.5 * t2;
            average[(k + 1, l + 1)] = q / (2.0 * s);
        }
    }
    let logdet = |mat: DMatrix<f64>| {
        mat.symmetric_eigenvalues()
            .iter()
            .map(|e| e.ln())
            .sum::<f64>()
    };
    let hinv = h.clone().try_inverse().unwrap();
    let xthx = data.x().transpose() * hinv * data.x();
    let loglik = -0.5 * d * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * (d * s.ln() + logdet(h) + logdet(xthx) + ypy / s);
    DenseInfo {
        observed,
        fisher,
        average,
        loglik,
        score,
    }
}
