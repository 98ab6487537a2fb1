//! Normal equations `B^T G^{-1} B u = B^T G^{-1} F` by unpreconditioned
//! conjugate gradients, and the energy error `r^T G^{-1} r` with its
//! element-wise split.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::SystemMatrices;
use crate::error::{DpgError, Result};

/// A symmetric positive definite operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let r = self * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    }
}

/// `S = B^T G^{-1} B`.
pub struct NormalOperator<'a> {
    sys: &'a SystemMatrices,
}

impl<'a> NormalOperator<'a> {
    pub fn new(sys: &'a SystemMatrices) -> Self {
        Self { sys }
    }
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.sys.layout().n_trial()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; self.sys.layout().n_test()];
        self.sys.b.apply(x, &mut t);
        self.sys.gram.solve_in_place(&mut t);
        self.sys.b.apply_transpose(&t, y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

// sequential so that results do not depend on the thread count
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from a zero initial guess, stopped once the true
/// residual drops below `tol * ||b||`.
pub fn conjugate_gradient<A: LinearOperator>(a: &A, b: &[f64], tol: f64, max_iter: usize) -> CgResult {
    let n = a.dim();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return CgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let true_residual = |x: &[f64], r: &mut Vec<f64>, ap: &mut [f64]| {
        a.apply(x, ap);
        for ((ri, bi), ai) in r.iter_mut().zip(b).zip(ap.iter()) {
            *ri = bi - ai;
        }
    };
    while iterations < max_iter {
        if rr.sqrt() <= tol * bnorm {
            // the recursive residual drifts; confirm with the true one
            true_residual(&x, &mut r, &mut ap);
            rr = dot(&r, &r);
            if rr.sqrt() <= tol * bnorm {
                break;
            }
            p.copy_from_slice(&r);
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.par_iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        iterations += 1;
    }
    true_residual(&x, &mut r, &mut ap);
    let relative_residual = norm(&r) / bnorm;
    CgResult {
        x,
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual of the normal equations.
    pub relative_residual: f64,
    pub converged: bool,
    pub energy_error_sq: f64,
    pub indicators: Vec<f64>,
}

/// Default iteration cap: ten times the number of trial dofs.
pub fn default_max_iter(sys: &SystemMatrices) -> usize {
    10 * sys.layout().n_trial()
}

/// `B^T G^{-1} F`.
pub fn normal_rhs(sys: &SystemMatrices) -> Vec<f64> {
    let mut t = sys.load.clone();
    sys.gram.solve_in_place(&mut t);
    let mut rhs = vec![0.0; sys.layout().n_trial()];
    sys.b.apply_transpose(&t, &mut rhs);
    rhs
}

/// Minimize `(F - B u)^T G^{-1} (F - B u)` by CG on the normal equations.
/// Not reaching `tol` within `max_iter` is reported, not an error.
pub fn solve_normal_equations(sys: &SystemMatrices, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(DpgError::Config(format!("CG tolerance must be positive, got {tol}")));
    }
    let rhs = normal_rhs(sys);
    let cg = conjugate_gradient(&NormalOperator::new(sys), &rhs, tol, max_iter);
    let indicators = local_indicators(sys, &cg.x)?;
    let report = SolveReport {
        iterations: cg.iterations,
        relative_residual: cg.relative_residual,
        converged: cg.converged,
        energy_error_sq: indicators.iter().sum(),
        indicators,
    };
    Ok((cg.x, report))
}

/// Largest system solved by [`solve_dense`].
pub const DENSE_LIMIT: usize = 2000;

/// `S = B^T G^{-1} B` as a dense matrix.
pub fn dense_normal_matrix(sys: &SystemMatrices) -> Result<DMatrix<f64>> {
    let n = sys.layout().n_trial();
    if n > DENSE_LIMIT {
        return Err(DpgError::DimensionMismatch {
            expected: DENSE_LIMIT,
            got: n,
        });
    }
    let op = NormalOperator::new(sys);
    let mut s = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        s.set_column(j, &DVector::from_column_slice(&col));
    }
    Ok(s)
}

/// Direct Cholesky solve of the normal equations, for cross-checks.
pub fn solve_dense(sys: &SystemMatrices) -> Result<Vec<f64>> {
    let s = dense_normal_matrix(sys)?;
    // symmetrize away round-off before factorizing
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(DpgError::DenseSolve)?;
    Ok(chol.solve(&DVector::from_vec(normal_rhs(sys))).as_slice().to_vec())
}

fn residual(sys: &SystemMatrices, u: &[f64]) -> Result<Vec<f64>> {
    let l = sys.layout();
    if u.len() != l.n_trial() {
        return Err(DpgError::DimensionMismatch {
            expected: l.n_trial(),
            got: u.len(),
        });
    }
    let mut r = vec![0.0; l.n_test()];
    sys.b.apply(u, &mut r);
    r.par_iter_mut().zip(&sys.load).for_each(|(ri, fi)| *ri = fi - *ri);
    Ok(r)
}

/// `r_T^T G_T^{-1} r_T` per element for `r = F - B u`.
pub fn local_indicators(sys: &SystemMatrices, u: &[f64]) -> Result<Vec<f64>> {
    let r = residual(sys, u)?;
    let mut z = r.clone();
    sys.gram.solve_in_place(&mut z);
    let nb = sys.gram.block_dim();
    Ok(r.chunks(nb).zip(z.chunks(nb)).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().max(0.0)).collect())
}

/// `r^T G^{-1} r` for `r = F - B u`: the squared energy error.
pub fn energy_error_sq(sys: &SystemMatrices, u: &[f64]) -> Result<f64> {
    Ok(local_indicators(sys, u)?.iter().sum())
}

/// Optimal test function `G^{-1} B e_j` of trial dof `j`.
pub fn trial_to_test(sys: &SystemMatrices, j: usize) -> Result<Vec<f64>> {
    let n = sys.layout().n_trial();
    if j >= n {
        return Err(DpgError::DimensionMismatch { expected: n, got: j });
    }
    let mut col = sys.b.column(j);
    sys.gram.solve_in_place(&mut col);
    Ok(col)
}
