//! Dense complex Hermitian helpers (Cholesky, Jacobi eigensolver) for the
//! Cauchy-data matrices, plus matrix-free Krylov solvers (BiCGStab, CG) used
//! by the Dirichlet and variational solves.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<Complex64>>;

pub fn mat_vec(a: &Matrix, x: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

/// `<a, b> = sum conj(a_i) b_i`.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Cholesky factor `L` with `L L^H = A` for Hermitian positive definite `A`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.len();
    let mut l = vec![vec![Complex64::default(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k].conj();
            }
            if i == j {
                if sum.re <= 0.0 || sum.im.abs() > 1e-8 * sum.re.abs().max(1e-300) {
                    return Err(Error::IllConditioned {
                        context: "Cholesky pivot not positive".into(),
                        cond: sum.re,
                    });
                }
                l[i][j] = Complex64::new(sum.re.sqrt(), 0.0);
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solve `L L^H x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[i][k] * y[k];
            y[i] -= t;
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[k][i].conj() * y[k];
            y[i] -= t;
        }
        y[i] /= l[i][i];
    }
    y
}

/// Condition estimate of a Hermitian PD matrix from its extreme eigenvalues.
pub fn condition_estimate(a: &Matrix) -> Result<f64> {
    let (vals, _) = hermitian_eigen(a, 200)?;
    let max = vals.last().copied().unwrap_or(0.0);
    let min = vals.first().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues ascending and the matching eigenvectors as
/// columns.
pub fn hermitian_eigen(a: &Matrix, max_sweeps: usize) -> Result<(Vec<f64>, Matrix)> {
    let n = a.len();
    let mut m = a.clone();
    let mut v = vec![vec![Complex64::default(); n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    let diag_scale: f64 = m
        .iter()
        .enumerate()
        .map(|(i, row)| row[i].norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[p][q].norm());
            }
        }
        if off < 1e-14 * diag_scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = m[p][q];
                if b.norm() < 1e-300 {
                    continue;
                }
                let alpha = b / b.norm();
                let tau = (m[q][q].re - m[p][p].re) / (2.0 * b.norm());
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J = I except J[pp] = c, J[pq] = -s alpha, J[qp] = s conj(alpha), J[qq] = c
                let jpq = -alpha * s;
                let jqp = alpha.conj() * s;
                // columns update: M <- M J
                for i in 0..n {
                    let mip = m[i][p];
                    let miq = m[i][q];
                    m[i][p] = mip * c + miq * jqp;
                    m[i][q] = mip * jpq + miq * c;
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = vip * c + viq * jqp;
                    v[i][q] = vip * jpq + viq * c;
                }
                // rows update: M <- J^H M
                for i in 0..n {
                    let mpi = m[p][i];
                    let mqi = m[q][i];
                    m[p][i] = mpi * c + mqi * jqp.conj();
                    m[q][i] = mpi * jpq.conj() + mqi * c;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| m[i][i].re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut vecs = vec![vec![Complex64::default(); n]; n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for (i, row) in vecs.iter_mut().enumerate() {
            row[new_col] = v[i][old_col];
        }
    }
    Ok((sorted_vals, vecs))
}

/// Convergence record of a Krylov solve.
#[derive(Debug, Clone)]
pub struct IterStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub breakdown: bool,
}

/// BiCGStab for complex non-Hermitian operators, with an optional left
/// preconditioner applied as `precond(r)`.
pub fn bicgstab<Op, Pr>(
    apply: Op,
    precond: Pr,
    b: &[Complex64],
    x: &mut [Complex64],
    rel_tol: f64,
    max_iter: usize,
) -> IterStats
where
    Op: Fn(&[Complex64]) -> Vec<Complex64>,
    Pr: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let b_norm = norm(b).max(1e-300);
    let ax = apply(x);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let r0 = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut p = vec![Complex64::default(); n];
    let mut v = vec![Complex64::default(); n];
    let mut res = norm(&r) / b_norm;
    if res <= rel_tol {
        return IterStats {
            iterations: 0,
            residual: res,
            converged: true,
            breakdown: false,
        };
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.norm() < 1e-300 {
            return IterStats {
                iterations: it,
                residual: res,
                converged: false,
                breakdown: true,
            };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        v = apply(&ph);
        let denom = dot(&r0, &v);
        if denom.norm() < 1e-300 {
            return IterStats {
                iterations: it,
                residual: res,
                converged: false,
                breakdown: true,
            };
        }
        alpha = rho / denom;
        let s: Vec<Complex64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) / b_norm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return IterStats {
                iterations: it,
                residual: norm(&s) / b_norm,
                converged: true,
                breakdown: false,
            };
        }
        let sh = precond(&s);
        let t = apply(&sh);
        let tt = dot(&t, &t);
        if tt.norm() < 1e-300 {
            return IterStats {
                iterations: it,
                residual: res,
                converged: false,
                breakdown: true,
            };
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / b_norm;
        if res <= rel_tol {
            return IterStats {
                iterations: it,
                residual: res,
                converged: true,
                breakdown: false,
            };
        }
        if omega.norm() < 1e-300 {
            return IterStats {
                iterations: it,
                residual: res,
                converged: false,
                breakdown: true,
            };
        }
    }
    IterStats {
        iterations: max_iter,
        residual: res,
        converged: false,
        breakdown: false,
    }
}

/// Conjugate gradients for Hermitian positive semi-definite operators.
pub fn conjugate_gradient<Op>(
    apply: Op,
    b: &[Complex64],
    x: &mut [Complex64],
    rel_tol: f64,
    max_iter: usize,
) -> IterStats
where
    Op: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let b_norm = norm(b).max(1e-300);
    let ax = apply(x);
    let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut res = rs.norm().sqrt() / b_norm;
    if res <= rel_tol {
        return IterStats {
            iterations: 0,
            residual: res,
            converged: true,
            breakdown: false,
        };
    }
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap.norm() < 1e-300 {
            return IterStats {
                iterations: it,
                residual: res,
                converged: false,
                breakdown: true,
            };
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        res = rs_new.norm().sqrt() / b_norm;
        if res <= rel_tol {
            return IterStats {
                iterations: it,
                residual: res,
                converged: true,
                breakdown: false,
            };
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    IterStats {
        iterations: max_iter,
        residual: res,
        converged: false,
        breakdown: false,
    }
}
