//! Steady state of a Lindblad master equation.
//!
//! The Liouvillian is split into the connected components of its sparsity
//! graph (each is an invariant subspace of `vec(ρ)`). Components up to
//! [`DIRECT_MAX`] coordinates are handled densely: a full-pivot LU reveals
//! the null-space dimension, and the trace-carrying component is solved with
//! one row replaced by the trace condition. Larger components use restarted
//! GMRES with a Jacobi preconditioner on the same trace-constrained system,
//! converged to a relative residual of `gmres_tol`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{DensityMatrix, OperatorMatrix, HERMITIAN_RTOL};

use super::sparse::{components, liouvillian, Csr};
use super::{record_invariants, Diagnostics, POSITIVITY_CHECK_MAX_DIM};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest component solved with dense linear algebra.
pub const DIRECT_MAX: usize = 4096;

/// Pivots below this fraction of the largest one count as null directions.
const NULL_PIVOT_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyStateMethod {
    /// Dense up to [`DIRECT_MAX`], iterative above.
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyStateOptions {
    pub method: SteadyStateMethod,
    pub gmres_tol: f64,
    pub gmres_restart: usize,
    pub max_iterations: usize,
    /// Accept only if `max|L ρ| ≤ residual_tol · max|ρ|`.
    pub residual_tol: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            method: SteadyStateMethod::Auto,
            gmres_tol: 1e-13,
            gmres_restart: 80,
            max_iterations: 50_000,
            residual_tol: 1e-9,
        }
    }
}

pub fn steady_state(hamiltonian: &OperatorMatrix, collapse_ops: &[OperatorMatrix]) -> Result<DensityMatrix> {
    steady_state_with(hamiltonian, collapse_ops, &SteadyStateOptions::default())
}

pub fn steady_state_with(
    hamiltonian: &OperatorMatrix,
    collapse_ops: &[OperatorMatrix],
    opts: &SteadyStateOptions,
) -> Result<DensityMatrix> {
    if collapse_ops.is_empty() {
        return Err(Error::InvalidInput(
            "steady state needs at least one collapse operator".into(),
        ));
    }
    for op in collapse_ops {
        if op.space() != hamiltonian.space() {
            return Err(Error::SpaceMismatch {
                left: hamiltonian.space().to_string(),
                right: op.space().to_string(),
            });
        }
    }
    let herm = hamiltonian.hermiticity_error();
    if herm > HERMITIAN_RTOL {
        return Err(Error::NonHermitian { deviation: herm });
    }
    let n = hamiltonian.dim();
    let l = liouvillian(hamiltonian, collapse_ops);
    let is_diag = |p: usize| p / n == p % n;

    let mut nullity = 0;
    let mut found: Option<(Vec<usize>, Vec<Complex64>)> = None;
    let mut pos = vec![usize::MAX; n * n];
    for comp in components(&l) {
        for (k, &p) in comp.iter().enumerate() {
            pos[p] = k;
        }
        let sub = l.restrict(&comp, &pos);
        let has_trace = comp.iter().any(|&p| is_diag(p));
        let direct = match opts.method {
            SteadyStateMethod::Direct => true,
            SteadyStateMethod::Iterative => false,
            SteadyStateMethod::Auto => comp.len() <= DIRECT_MAX,
        };
        if direct {
            let dense = sub.to_dense();
            let k = null_dimension(&dense);
            nullity += k;
            if k == 1 && has_trace {
                let x = solve_dense(dense, &comp, is_diag)?;
                found = Some((comp.clone(), x));
            }
        } else if has_trace {
            // iterative path: null dimension is not measured; a singular
            // constrained system shows up as GMRES stagnation
            let x = solve_gmres(&sub, &comp, is_diag, opts)?;
            nullity += 1;
            found = Some((comp.clone(), x));
        }
        for &p in &comp {
            pos[p] = usize::MAX;
        }
    }
    if nullity > 1 {
        return Err(Error::DegenerateNullSpace { dimension: nullity });
    }
    let (comp, x) = found.ok_or_else(|| Error::Solver("Liouvillian has no trace-carrying null vector".into()))?;

    let mut data = vec![ZERO; n * n];
    for (k, &p) in comp.iter().enumerate() {
        data[p] = x[k];
    }
    // symmetrise away round-off
    for i in 0..n {
        for j in i..n {
            let avg = 0.5 * (data[i * n + j] + data[j * n + i].conj());
            data[i * n + j] = avg;
            data[j * n + i] = avg.conj();
        }
    }
    let mut resid = vec![ZERO; n * n];
    l.matvec(&data, &mut resid);
    let r = resid.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if r > opts.residual_tol * scale {
        return Err(Error::Solver(format!(
            "steady-state residual {r:.3e} exceeds {:.1e} relative",
            opts.residual_tol
        )));
    }
    let rho = DensityMatrix::from_raw(hamiltonian.space().clone(), data)?;
    record_invariants(&Diagnostics {
        max_trace_drift: (rho.trace() - Complex64::new(1.0, 0.0)).norm(),
        max_hermiticity_error: rho.hermiticity_error(),
        min_eigenvalue: (n <= POSITIVITY_CHECK_MAX_DIM).then(|| rho.min_eigenvalue()),
        steps: 0,
        rejected_steps: 0,
        reduced_dim: comp.len(),
    });
    Ok(rho)
}

fn null_dimension(a: &DMatrix<Complex64>) -> usize {
    let m = a.nrows();
    if m == 0 {
        return 0;
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..m).map(|i| u[(i, i)].norm()).collect();
    let largest = pivots.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return m;
    }
    pivots.iter().filter(|&&p| p <= NULL_PIVOT_RTOL * largest).count()
}

/// Index (within the component) of the equation replaced by `Tr ρ = 1`.
fn trace_row(comp: &[usize], is_diag: impl Fn(usize) -> bool) -> usize {
    comp.iter().position(|&p| is_diag(p)).expect("component carries trace")
}

fn solve_dense(
    mut a: DMatrix<Complex64>,
    comp: &[usize],
    is_diag: impl Fn(usize) -> bool + Copy,
) -> Result<Vec<Complex64>> {
    let m = a.nrows();
    let r0 = trace_row(comp, is_diag);
    for (k, &p) in comp.iter().enumerate() {
        a[(r0, k)] = if is_diag(p) { ONE } else { ZERO };
    }
    let mut b = DVector::zeros(m);
    b[r0] = ONE;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Solver("trace-constrained Liouvillian is singular".into()))?;
    Ok(x.iter().copied().collect())
}

fn solve_gmres(
    sub: &Csr,
    comp: &[usize],
    is_diag: impl Fn(usize) -> bool + Copy,
    opts: &SteadyStateOptions,
) -> Result<Vec<Complex64>> {
    let m = sub.n;
    let r0 = trace_row(comp, is_diag);
    let mut trips = Vec::with_capacity(sub.nnz() + m);
    for r in 0..m {
        if r == r0 {
            continue;
        }
        for (c, v) in sub.row(r) {
            trips.push((r, c, v));
        }
    }
    for (k, &p) in comp.iter().enumerate() {
        if is_diag(p) {
            trips.push((r0, k, ONE));
        }
    }
    let a = Csr::from_triplets(m, trips);
    let mut b = vec![ZERO; m];
    b[r0] = ONE;
    gmres(&a, &b, opts)
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES with right Jacobi preconditioning. Converged when
/// `‖b − Ax‖ ≤ gmres_tol·‖b‖`.
pub(crate) fn gmres(a: &Csr, b: &[Complex64], opts: &SteadyStateOptions) -> Result<Vec<Complex64>> {
    let m = a.n;
    let inv_diag: Vec<Complex64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d.norm() > 0.0 { ONE / d } else { ONE })
        .collect();
    let precond = |v: &[Complex64]| -> Vec<Complex64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };
    let bnorm = norm(b);
    let target = opts.gmres_tol * bnorm;
    let restart = opts.gmres_restart.max(1);
    let mut x = vec![ZERO; m];
    let mut iterations = 0;
    let mut resid = vec![ZERO; m];
    loop {
        a.matvec(&x, &mut resid);
        for (r, bi) in resid.iter_mut().zip(b) {
            *r = bi - *r;
        }
        let beta = norm(&resid);
        if beta <= target {
            return Ok(x);
        }
        if iterations >= opts.max_iterations {
            return Err(Error::Solver(format!(
                "GMRES did not converge in {iterations} iterations (relative residual {:.3e})",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<Complex64>> = vec![resid.iter().map(|r| r / beta).collect()];
        let mut h = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..restart {
            let z = precond(&v[j]);
            let mut w = vec![ZERO; m];
            a.matvec(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&v[i], &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let (t0, t1) = (h[i][j], h[i + 1][j]);
                h[i][j] = cs[i] * t0 + sn[i] * t1;
                h[i + 1][j] = -sn[i].conj() * t0 + cs[i] * t1;
            }
            let (aa, bb) = (h[j][j], h[j + 1][j]);
            let r = (aa.norm_sqr() + bb.norm_sqr()).sqrt();
            if r == 0.0 {
                cs[j] = 1.0;
                sn[j] = ZERO;
            } else if aa.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = bb.conj() / bb.norm();
            } else {
                cs[j] = aa.norm() / r;
                sn[j] = (aa / aa.norm()) * bb.conj() / r;
            }
            h[j][j] = cs[j] * aa + sn[j] * bb;
            h[j + 1][j] = ZERO;
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iterations += 1;
            if hn > 0.0 {
                v.push(w.iter().map(|x| x / hn).collect());
            }
            if g[j + 1].norm() <= target || hn == 0.0 || iterations >= opts.max_iterations {
                break;
            }
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![ZERO; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![ZERO; m];
        for (i, yi) in y.iter().enumerate() {
            for (u, vk) in update.iter_mut().zip(&v[i]) {
                *u += yi * vk;
            }
        }
        for (xi, u) in x.iter_mut().zip(precond(&update)) {
            *xi += u;
        }
    }
}
