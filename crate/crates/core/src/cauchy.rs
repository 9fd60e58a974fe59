//! Finite-dimensional Cauchy data sets, trace/quotient norms, dual norms,
//! and the pseudo-metric `dist` between data sets.
//!
//! The boundary basis is the constant trace plus per-face tensor sine modes
//! (vanishing on face edges, hence globally continuous). For each basis
//! function the Dirichlet problem is solved and the flux matrix
//! `G_flux[k][l] = <N u_k, T f_l>` recorded against the canonical
//! `(-lap + 1)`-minimizing extensions `v_l`, whose H^1 Gram matrix `G_tr`
//! realizes the quotient trace norm exactly on the span.
//!
//! `dist` replaces the sup over all H^1 solutions by the assembled span, so
//! it is a measured lower bound of the continuum pseudo-metric; consumers
//! sweep the basis size.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    bilinear_form, h1_norm_sq, solve_dirichlet, DirichletProblem, MeshPotentials, OmegaMesh,
};
use crate::linalg::{cholesky, cholesky_solve, hermitian_eigen, mat_vec, Matrix};
use crate::potential::PotentialPair;

/// Tensor sine boundary basis: the constant plus per-face `sin x sin` modes.
#[derive(Debug, Clone)]
pub struct BoundaryBasis {
    pub mesh: OmegaMesh,
    /// Full-mesh vectors, nonzero only on boundary nodes; all real-valued.
    pub functions: Vec<Vec<Complex64>>,
}

impl BoundaryBasis {
    /// Lowest `k` modes ordered by face-frequency `p^2 + q^2`.
    pub fn lowest(mesh: OmegaMesh, k: usize) -> Self {
        let mut functions = Vec::with_capacity(k);
        // constant trace first
        let mut constant = vec![Complex64::default(); mesh.node_count()];
        for p in 0..mesh.node_count() {
            if mesh.is_boundary(p) {
                constant[p] = Complex64::new(1.0, 0.0);
            }
        }
        functions.push(constant);
        // (p, q) mode list ordered by p^2 + q^2 then lexicographic
        let mut pq: Vec<(usize, usize)> = Vec::new();
        let cap = 8usize;
        for p in 1..=cap {
            for q in 1..=cap {
                pq.push((p, q));
            }
        }
        pq.sort_by_key(|&(p, q)| (p * p + q * q, p, q));
        'outer: for (p, q) in pq {
            // faces: (fixed axis, side) x modes in the two face coordinates
            for axis in 0..3usize {
                for side in [0usize, 1] {
                    if functions.len() >= k {
                        break 'outer;
                    }
                    functions.push(face_mode(&mesh, axis, side, p, q));
                }
            }
        }
        functions.truncate(k);
        BoundaryBasis { mesh, functions }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

fn face_mode(mesh: &OmegaMesh, axis: usize, side: usize, p: usize, q: usize) -> Vec<Complex64> {
    let n = mesh.n;
    let fixed = if side == 0 { 0 } else { n - 1 };
    let (t_axis, s_axis) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut values = vec![Complex64::default(); mesh.node_count()];
    for flat in 0..mesh.node_count() {
        let i = mesh.unflatten(flat);
        if i[axis] != fixed {
            continue;
        }
        let s = i[s_axis] as f64 / (n - 1) as f64;
        let t = i[t_axis] as f64 / (n - 1) as f64;
        let v = (p as f64 * std::f64::consts::PI * s).sin()
            * (q as f64 * std::f64::consts::PI * t).sin();
        values[flat] = Complex64::new(v, 0.0);
    }
    values
}

/// The canonical extension: traces extended by the `(-lap + 1)` minimizer,
/// realizing the quotient norm `inf { |v|_{H^1} : Tv = f }`.
pub fn canonical_extension(mesh: &OmegaMesh, trace: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut pot = MeshPotentials::zero(mesh);
    for qv in pot.q.iter_mut() {
        *qv = Complex64::new(1.0, 0.0);
    }
    let sol = solve_dirichlet(&DirichletProblem {
        mesh: *mesh,
        pot,
        boundary: trace.to_vec(),
        source: None,
    })?;
    Ok(sol.values)
}

/// Quotient trace norm of explicit boundary data.
pub fn trace_norm(mesh: &OmegaMesh, trace: &[Complex64]) -> Result<f64> {
    let v = canonical_extension(mesh, trace)?;
    Ok(h1_norm_sq(mesh, &v).sqrt())
}

/// Finite-dimensional Cauchy data for one potential pair.
#[derive(Debug, Clone)]
pub struct CauchyData {
    pub mesh: OmegaMesh,
    pub k: usize,
    /// Hash of the grid, mesh and potential samples.
    pub fingerprint: u64,
    /// Dirichlet solutions per basis function (full mesh).
    pub solutions: Vec<Vec<Complex64>>,
    /// Canonical extensions of the basis traces.
    pub extensions: Vec<Vec<Complex64>>,
    /// H^1 Gram matrix of the extensions (Hermitian positive definite).
    pub g_tr: Matrix,
    /// Flux pairings `B(u_k, v_l)`.
    pub g_flux: Matrix,
}

/// H^1 inner product of two mesh fields (edge gradients + trapezoid mass).
pub fn h1_inner(mesh: &OmegaMesh, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    let n = mesh.n;
    let ds = mesh.spacing();
    let mut acc = Complex64::default();
    for (axis, stride) in [(0usize, n * n), (1, n), (2, 1)] {
        for p in 0..mesh.node_count() {
            let i = mesh.unflatten(p);
            if i[axis] == n - 1 {
                continue;
            }
            let mut w = ds;
            for (a, &kk) in i.iter().enumerate() {
                if a != axis && (kk == 0 || kk == n - 1) {
                    w *= 0.5;
                }
            }
            acc += w * (u[p + stride] - u[p]) * (v[p + stride] - v[p]).conj();
        }
    }
    for p in 0..mesh.node_count() {
        acc += mesh.node_weight(p) * u[p] * v[p].conj();
    }
    acc
}

fn fingerprint(mesh: &OmegaMesh, pot: &MeshPotentials) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bits: u64| {
        h ^= bits;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    feed(mesh.n as u64);
    feed(mesh.half_side.to_bits());
    for c in pot.a.iter().chain(std::iter::once(&pot.q)) {
        for v in c {
            feed(v.re.to_bits());
            feed(v.im.to_bits());
        }
    }
    h
}

/// Assemble the Cauchy data for a pair on an aligned mesh: solve the
/// Dirichlet problem per basis trace and record all pairings.
///
/// `conjugate_potentials` assembles the data of `L_{conj A, conj q}` (needed
/// by the boundary-identity tests when the potentials are complex).
pub fn assemble_cauchy(
    pair: &PotentialPair,
    mesh: &OmegaMesh,
    k: usize,
    conjugate_potentials: bool,
) -> Result<CauchyData> {
    let pot0 = MeshPotentials::from_pair(mesh, pair)?;
    let pot = if conjugate_potentials {
        pot0.conjugated()
    } else {
        pot0
    };
    assemble_cauchy_from_mesh(mesh, &pot, k)
}

/// Assembly from already-sampled mesh potentials.
pub fn assemble_cauchy_from_mesh(
    mesh: &OmegaMesh,
    pot: &MeshPotentials,
    k: usize,
) -> Result<CauchyData> {
    let basis = BoundaryBasis::lowest(*mesh, k);
    let k = basis.len();
    let results: Vec<Result<(Vec<Complex64>, Vec<Complex64>)>> = basis
        .functions
        .par_iter()
        .map(|f| {
            let u = solve_dirichlet(&DirichletProblem {
                mesh: *mesh,
                pot: pot.clone(),
                boundary: f.clone(),
                source: None,
            })
            .map_err(|e| {
                Error::Precondition(format!("basis solve failed: {e}"))
            })?;
            let v = canonical_extension(mesh, f)?;
            Ok((u.values, v))
        })
        .collect();
    let mut solutions = Vec::with_capacity(k);
    let mut extensions = Vec::with_capacity(k);
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok((u, v)) => {
                solutions.push(u);
                extensions.push(v);
            }
            Err(e) => {
                return Err(Error::Precondition(format!(
                    "assembly aborted at basis index {idx}: {e}"
                )))
            }
        }
    }
    let mut g_tr = vec![vec![Complex64::default(); k]; k];
    let mut g_flux = vec![vec![Complex64::default(); k]; k];
    for i in 0..k {
        for j in 0..k {
            g_tr[i][j] = h1_inner(mesh, &extensions[i], &extensions[j]);
            g_flux[i][j] = bilinear_form(mesh, pot, &solutions[i], &extensions[j]);
        }
    }
    Ok(CauchyData {
        mesh: *mesh,
        k,
        fingerprint: fingerprint(mesh, pot),
        solutions,
        extensions,
        g_tr,
        g_flux,
    })
}

impl CauchyData {
    /// Trace norm of a span element with coefficients `c`.
    pub fn trace_norm_of(&self, c: &[Complex64]) -> f64 {
        quad_form(&self.g_tr, c).max(0.0).sqrt()
    }

    /// Flux-functional value vector of a span element: entries
    /// `sum_k c_k G_flux[k][l]`.
    pub fn flux_vector(&self, c: &[Complex64]) -> Vec<Complex64> {
        let k = self.k;
        let mut out = vec![Complex64::default(); k];
        for (kk, ck) in c.iter().enumerate() {
            for (l, o) in out.iter_mut().enumerate() {
                *o += ck * self.g_flux[kk][l];
            }
        }
        out
    }

    /// Mesh values of the span solution with coefficients `c`.
    pub fn span_solution(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.mesh.node_count()];
        for (ck, u) in c.iter().zip(&self.solutions) {
            for (o, uv) in out.iter_mut().zip(u) {
                *o += ck * uv;
            }
        }
        out
    }

    /// Gram condition estimate (largest over smallest eigenvalue).
    pub fn gram_condition(&self) -> Result<f64> {
        crate::linalg::condition_estimate(&self.g_tr)
    }

    /// Least-squares projection of an explicit trace onto the basis span in
    /// the trace norm; returns coefficients and the relative defect.
    pub fn project_trace(&self, trace: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
        let ext = canonical_extension(&self.mesh, trace)?;
        let mut rhs = vec![Complex64::default(); self.k];
        for (k, v) in self.extensions.iter().enumerate() {
            rhs[k] = h1_inner(&self.mesh, &ext, v).conj();
        }
        // G c = rhs with G[k][l] = <v_k, v_l>: the normal equations of
        // min |ext - sum c v|_{H^1}
        let l = cholesky(&self.g_tr)?;
        let c = cholesky_solve(&l, &rhs);
        // defect
        let mut recon = vec![Complex64::default(); self.mesh.node_count()];
        for (ck, v) in c.iter().zip(&self.extensions) {
            for (r, vv) in recon.iter_mut().zip(v) {
                *r += ck * vv;
            }
        }
        let mut diff = ext.clone();
        for (d, r) in diff.iter_mut().zip(&recon) {
            *d -= r;
        }
        let defect = h1_norm_sq(&self.mesh, &diff).sqrt() / h1_norm_sq(&self.mesh, &ext).sqrt().max(1e-300);
        Ok((c, defect))
    }
}

fn quad_form(g: &Matrix, c: &[Complex64]) -> f64 {
    let gc = mat_vec(g, c);
    c.iter()
        .zip(&gc)
        .map(|(ci, gi)| (ci.conj() * gi).re)
        .sum()
}

/// Dual (Riesz) norm of a functional-value vector over the basis span:
/// `sqrt(g^H G_tr^{-1} g)`.
pub fn trace_dual_norm(data: &CauchyData, g: &[Complex64]) -> Result<f64> {
    let cond = data.gram_condition()?;
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::IllConditioned {
            context: "trace Gram matrix".into(),
            cond,
        });
    }
    let l = cholesky(&data.g_tr)?;
    let sol = cholesky_solve(&l, g);
    let val: f64 = g.iter().zip(&sol).map(|(gi, si)| (gi.conj() * si).re).sum();
    Ok(val.max(0.0).sqrt())
}

/// Result of a `dist` evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistResult {
    pub value: f64,
    /// Set when the ascent made no verified progress over its spectral
    /// initializations.
    pub low_confidence: bool,
}

struct DistSide<'a> {
    from: &'a CauchyData,
    to: &'a CauchyData,
    g_l: Matrix,         // cholesky of G_tr
    inner_l: Matrix,     // cholesky of (G + T^H G^-1 T) for the inner solve
}

impl<'a> DistSide<'a> {
    fn new(from: &'a CauchyData, to: &'a CauchyData) -> Result<Self> {
        let k = from.k;
        let g = &from.g_tr;
        let g_l = cholesky(g)?;
        // T = G_flux(to)^T acting on d; build M = G + T^H G^-1 T
        let t = transpose(&to.g_flux);
        let mut m = g.clone();
        for col in 0..k {
            // columns of G^-1 T
            let tcol: Vec<Complex64> = (0..k).map(|r| t[r][col]).collect();
            let ginv_tcol = cholesky_solve(&g_l, &tcol);
            for row in 0..k {
                // (T^H G^-1 T)[row][col] = sum_r conj(T[r][row]) (G^-1 T)[r][col]
                let mut s = Complex64::default();
                for r in 0..k {
                    s += t[r][row].conj() * ginv_tcol[r];
                }
                m[row][col] += s;
            }
        }
        let inner_l = cholesky(&m)?;
        Ok(DistSide {
            from,
            to,
            g_l,
            inner_l,
        })
    }

    /// inf over d of `|c - d|_G + |T1 c - T2 d|_*` with 20 subgradient
    /// polish steps after the squared-surrogate solve.
    fn inner_inf(&self, c: &[Complex64]) -> f64 {
        let k = c.len();
        let t1 = transpose(&self.from.g_flux);
        let t2 = transpose(&self.to.g_flux);
        let phi = mat_vec(&t1, c);
        // surrogate solve: (G + T2^H G^-1 T2) d = G c + T2^H G^-1 phi
        let gc = mat_vec(&self.from.g_tr, c);
        let ginv_phi = cholesky_solve(&self.g_l, &phi);
        let mut rhs = gc.clone();
        for row in 0..k {
            let mut s = Complex64::default();
            for r in 0..k {
                s += t2[r][row].conj() * ginv_phi[r];
            }
            rhs[row] += s;
        }
        let mut d = cholesky_solve(&self.inner_l, &rhs);
        // iteratively reweighted least squares on the sum of two norms:
        // each pass solves (G/w1 + T2^H G^-1 T2 / w2) d = G c / w1
        // + T2^H G^-1 phi / w2 with weights from the previous iterate
        for _ in 0..25 {
            let diff: Vec<Complex64> = c.iter().zip(&d).map(|(a, b)| a - b).collect();
            let w1 = quad_form(&self.from.g_tr, &diff).max(0.0).sqrt();
            let t2d = mat_vec(&t2, &d);
            let fdiff: Vec<Complex64> = phi.iter().zip(&t2d).map(|(a, b)| a - b).collect();
            let sol = cholesky_solve(&self.g_l, &fdiff);
            let w2 = fdiff
                .iter()
                .zip(&sol)
                .map(|(gi, si)| (gi.conj() * si).re)
                .sum::<f64>()
                .max(0.0)
                .sqrt();
            let scale = (w1 + w2).max(1e-300);
            let w1 = w1.max(1e-12 * scale);
            let w2 = w2.max(1e-12 * scale);
            // M(w) = G / w1 + T2^H G^-1 T2 / w2; reuse the precomputed pieces
            let k = c.len();
            let mut m = vec![vec![Complex64::default(); k]; k];
            for col in 0..k {
                let t2col: Vec<Complex64> = (0..k).map(|r| t2[r][col]).collect();
                let g_t2col = cholesky_solve(&self.g_l, &t2col);
                for row in 0..k {
                    let mut s = Complex64::default();
                    for r in 0..k {
                        s += t2[r][row].conj() * g_t2col[r];
                    }
                    m[row][col] = self.from.g_tr[row][col] / w1 + s / w2;
                }
            }
            let gc2 = mat_vec(&self.from.g_tr, c);
            let ginv_phi2 = cholesky_solve(&self.g_l, &phi);
            let mut rhs2: Vec<Complex64> = gc2.iter().map(|v| v / w1).collect();
            for row in 0..k {
                let mut s = Complex64::default();
                for r in 0..k {
                    s += t2[r][row].conj() * ginv_phi2[r];
                }
                rhs2[row] += s / w2;
            }
            match cholesky(&m) {
                Ok(l) => {
                    let next = cholesky_solve(&l, &rhs2);
                    let moved: f64 = next
                        .iter()
                        .zip(&d)
                        .map(|(a, b)| (a - b).norm_sqr())
                        .sum::<f64>()
                        .sqrt();
                    d = next;
                    if moved < 1e-14 {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
        let objective = |d: &[Complex64]| -> f64 {
            let diff: Vec<Complex64> = c.iter().zip(d).map(|(a, b)| a - b).collect();
            let tr = quad_form(&self.from.g_tr, &diff).max(0.0).sqrt();
            let t2d = mat_vec(&t2, d);
            let fdiff: Vec<Complex64> = phi.iter().zip(&t2d).map(|(a, b)| a - b).collect();
            let sol = cholesky_solve(&self.g_l, &fdiff);
            let dual: f64 = fdiff
                .iter()
                .zip(&sol)
                .map(|(gi, si)| (gi.conj() * si).re)
                .sum();
            tr + dual.max(0.0).sqrt()
        };
        let mut best = objective(&d);
        let mut step = 0.5;
        for _ in 0..20 {
            // subgradient at d
            let diff: Vec<Complex64> = c.iter().zip(&d).map(|(a, b)| a - b).collect();
            let tr = quad_form(&self.from.g_tr, &diff).max(1e-300).sqrt();
            let g_diff = mat_vec(&self.from.g_tr, &diff);
            let t2d = mat_vec(&t2, &d);
            let fdiff: Vec<Complex64> = phi.iter().zip(&t2d).map(|(a, b)| a - b).collect();
            let ginv_fdiff = cholesky_solve(&self.g_l, &fdiff);
            let dual: f64 = fdiff
                .iter()
                .zip(&ginv_fdiff)
                .map(|(gi, si)| (gi.conj() * si).re)
                .sum::<f64>()
                .max(1e-300)
                .sqrt();
            let mut grad = vec![Complex64::default(); k];
            for row in 0..k {
                let mut s = Complex64::default();
                for r in 0..k {
                    s += t2[r][row].conj() * ginv_fdiff[r];
                }
                grad[row] = -g_diff[row] / (2.0 * tr) - s / (2.0 * dual);
            }
            let trial: Vec<Complex64> = d
                .iter()
                .zip(&grad)
                .map(|(dv, gv)| dv - step * gv)
                .collect();
            let val = objective(&trial);
            if val < best {
                best = val;
                d = trial;
            } else {
                step *= 0.5;
            }
        }
        best
    }

    /// Squared-surrogate PSD form `Q` with `V2(c) = c^H Q c`, used for
    /// spectral starting points.
    fn surrogate_q(&self) -> Matrix {
        let k = self.from.k;
        let t1 = transpose(&self.from.g_flux);
        let t2 = transpose(&self.to.g_flux);
        // Q = G + T1^H G^-1 T1 - R^H S^-1 R, R = G + T2^H G^-1 T1
        let mut q = self.from.g_tr.clone();
        let mut r_mat = self.from.g_tr.clone();
        for col in 0..k {
            let t1col: Vec<Complex64> = (0..k).map(|r| t1[r][col]).collect();
            let g_t1col = cholesky_solve(&self.g_l, &t1col);
            for row in 0..k {
                let mut s1 = Complex64::default();
                let mut s2 = Complex64::default();
                for rr in 0..k {
                    s1 += t1[rr][row].conj() * g_t1col[rr];
                    s2 += t2[rr][row].conj() * g_t1col[rr];
                }
                q[row][col] += s1;
                r_mat[row][col] += s2;
            }
        }
        for col in 0..k {
            let rcol: Vec<Complex64> = (0..k).map(|r| r_mat[r][col]).collect();
            let sinv_rcol = cholesky_solve(&self.inner_l, &rcol);
            for row in 0..k {
                let mut s = Complex64::default();
                for rr in 0..k {
                    s += r_mat[rr][row].conj() * sinv_rcol[rr];
                }
                q[row][col] -= s;
            }
        }
        q
    }

    /// sup over the unit trace-norm sphere by projected gradient ascent from
    /// spectral starting points.
    fn sup(&self, starts: usize, ascent_steps: usize) -> Result<(f64, bool)> {
        let k = self.from.k;
        let q = self.surrogate_q();
        // generalized problem Q v = lambda G v via the G-Cholesky transform
        let g_l = &self.g_l;
        // B = L^-1 Q L^-H
        let mut b = vec![vec![Complex64::default(); k]; k];
        // columns of L^-H e_j: solve L^H x = e_j
        let mut linv_cols: Vec<Vec<Complex64>> = Vec::with_capacity(k);
        for j in 0..k {
            let mut e = vec![Complex64::default(); k];
            e[j] = Complex64::new(1.0, 0.0);
            // solve L^H x = e  (upper triangular back-substitution)
            let mut x = e;
            for i in (0..k).rev() {
                for m in i + 1..k {
                    let t = g_l[m][i].conj() * x[m];
                    x[i] -= t;
                }
                x[i] /= g_l[i][i];
            }
            linv_cols.push(x);
        }
        for j in 0..k {
            let qx = mat_vec(&q, &linv_cols[j]);
            // forward substitution L y = qx
            let mut y = qx;
            for i in 0..k {
                for m in 0..i {
                    let t = g_l[i][m] * y[m];
                    y[i] -= t;
                }
                y[i] /= g_l[i][i];
            }
            for i in 0..k {
                b[i][j] = y[i];
            }
        }
        let (_vals, vecs) = hermitian_eigen(&b, 120)?;
        let mut best = 0.0f64;
        let mut improved = false;
        for s in 0..starts.min(k) {
            let col = k - 1 - s;
            let y: Vec<Complex64> = (0..k).map(|i| vecs[i][col]).collect();
            // c = L^-H y, then G-normalize
            let mut c = y;
            for i in (0..k).rev() {
                for m in i + 1..k {
                    let t = g_l[m][i].conj() * c[m];
                    c[i] -= t;
                }
                c[i] /= g_l[i][i];
            }
            let norm = quad_form(&self.from.g_tr, &c).max(1e-300).sqrt();
            for v in c.iter_mut() {
                *v /= norm;
            }
            let mut val = self.inner_inf(&c);
            best = best.max(val);
            // projected gradient ascent with envelope gradient
            let mut step = 0.3;
            for _ in 0..ascent_steps {
                let grad = self.envelope_gradient(&c);
                let mut trial: Vec<Complex64> =
                    c.iter().zip(&grad).map(|(cv, gv)| cv + step * gv).collect();
                let norm = quad_form(&self.from.g_tr, &trial).max(1e-300).sqrt();
                for v in trial.iter_mut() {
                    *v /= norm;
                }
                let tval = self.inner_inf(&trial);
                if tval > val {
                    val = tval;
                    c = trial;
                    improved = true;
                } else {
                    step *= 0.5;
                    if step < 1e-4 {
                        break;
                    }
                }
            }
            best = best.max(val);
        }
        Ok((best, improved || best == 0.0))
    }

    /// Gradient of `c -> inf_d J(c, d)` with the minimizer held fixed.
    fn envelope_gradient(&self, c: &[Complex64]) -> Vec<Complex64> {
        let k = c.len();
        let t1 = transpose(&self.from.g_flux);
        let t2 = transpose(&self.to.g_flux);
        let phi = mat_vec(&t1, c);
        let gc = mat_vec(&self.from.g_tr, c);
        let ginv_phi = cholesky_solve(&self.g_l, &phi);
        let mut rhs = gc.clone();
        for row in 0..k {
            let mut s = Complex64::default();
            for r in 0..k {
                s += t2[r][row].conj() * ginv_phi[r];
            }
            rhs[row] += s;
        }
        let d = cholesky_solve(&self.inner_l, &rhs);
        let diff: Vec<Complex64> = c.iter().zip(&d).map(|(a, b)| a - b).collect();
        let tr = quad_form(&self.from.g_tr, &diff).max(1e-300).sqrt();
        let g_diff = mat_vec(&self.from.g_tr, &diff);
        let t2d = mat_vec(&t2, &d);
        let fdiff: Vec<Complex64> = phi.iter().zip(&t2d).map(|(a, b)| a - b).collect();
        let ginv_fdiff = cholesky_solve(&self.g_l, &fdiff);
        let dual: f64 = fdiff
            .iter()
            .zip(&ginv_fdiff)
            .map(|(gi, si)| (gi.conj() * si).re)
            .sum::<f64>()
            .max(1e-300)
            .sqrt();
        let mut grad: Vec<Complex64> = g_diff.iter().map(|v| v / (2.0 * tr)).collect();
        for row in 0..k {
            let mut s = Complex64::default();
            for r in 0..k {
                s += t1[r][row].conj() * ginv_fdiff[r];
            }
            grad[row] += s / (2.0 * dual);
        }
        grad
    }
}

fn transpose(m: &Matrix) -> Matrix {
    let rows = m.len();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    let mut out = vec![vec![Complex64::default(); rows]; cols];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

/// The pseudo-metric between two assembled data sets: max over both orders
/// of sup-inf of trace-norm plus dual-norm gaps over unit-trace elements.
pub fn dist_cauchy(c1: &CauchyData, c2: &CauchyData) -> Result<DistResult> {
    if c1.k != c2.k || c1.mesh != c2.mesh {
        return Err(Error::Precondition(
            "dist requires the same mesh and basis size".into(),
        ));
    }
    let starts = 8;
    let steps = 25;
    let side12 = DistSide::new(c1, c2)?;
    let (v12, ok12) = side12.sup(starts, steps)?;
    let side21 = DistSide::new(c2, c1)?;
    let (v21, ok21) = side21.sup(starts, steps)?;
    Ok(DistResult {
        value: v12.max(v21),
        low_confidence: !(ok12 && ok21),
    })
}

/// Report of a gauge-invariance experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeReport {
    pub dist: f64,
    pub low_confidence: bool,
}

/// Measure `dist` between the data of `(A, q)` and `(A + grad phi, q)` for a
/// gauge function vanishing on the boundary nodes.
pub fn gauge_invariance_check(
    pair: &PotentialPair,
    phi: &crate::grid::ScalarField,
    mesh: &OmegaMesh,
    k: usize,
) -> Result<GaugeReport> {
    // phi must vanish on the boundary of the cube
    let grad = phi.d();
    let mut shifted = pair.clone();
    for (axis, comp) in shifted.a.components.iter_mut().enumerate() {
        for (v, g) in comp.iter_mut().zip(&grad.components[axis]) {
            *v += g;
        }
    }
    // boundary check on the mesh nodes
    let phi_mesh = mesh.sample_box_field(phi)?;
    for p in 0..mesh.node_count() {
        if mesh.is_boundary(p) && phi_mesh[p].norm() > 1e-12 {
            return Err(Error::Precondition(format!(
                "gauge function does not vanish on the boundary (node {p}: {})",
                phi_mesh[p]
            )));
        }
    }
    let c1 = assemble_cauchy(pair, mesh, k, false)?;
    let c2 = assemble_cauchy(&shifted, mesh, k, false)?;
    let d = dist_cauchy(&c1, &c2)?;
    Ok(GaugeReport {
        dist: d.value,
        low_confidence: d.low_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::besov::BesovIndex;
    use crate::gen::radial_bump;
    use crate::grid::{make_grid, ScalarField};
    use crate::potential::{ClassParams, PotentialPair};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn zero_pair(n_box: usize) -> PotentialPair {
        let g = make_grid(4.0, n_box).unwrap();
        PotentialPair::zero(
            &g,
            0.5,
            ClassParams {
                bound: 1.0,
                eps: 0.5,
                besov_r: BesovIndex::Inf,
            },
        )
    }

    #[test]
    fn trace_norm_examples() {
        let mesh = OmegaMesh::new(0.5, 7).unwrap();
        let zero = vec![Complex64::default(); mesh.node_count()];
        assert_eq!(trace_norm(&mesh, &zero).unwrap(), 0.0);

        // constant trace: the minimizer lies strictly below the constant
        // extension |1|_{H^1} = 1 on the unit cube
        let mut ones = vec![Complex64::default(); mesh.node_count()];
        for p in 0..mesh.node_count() {
            if mesh.is_boundary(p) {
                ones[p] = Complex64::new(1.0, 0.0);
            }
        }
        let t = trace_norm(&mesh, &ones).unwrap();
        assert!(t < 1.0, "minimizer beats the constant extension: {t}");
        assert!(t > 0.85, "sanity lower bound: {t}");

        // minimality against random extensions
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let f = mesh.sample(|x| Complex64::new(x[0] + x[1] * x[2], 0.2 * x[2]));
        let tn = trace_norm(&mesh, &f).unwrap();
        for _ in 0..10 {
            let mut w = canonical_extension(&mesh, &f).unwrap();
            for p in 0..mesh.node_count() {
                if !mesh.is_boundary(p) {
                    w[p] += Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        * 0.3;
                }
            }
            let h1 = h1_norm_sq(&mesh, &w).sqrt();
            assert!(tn <= h1 + 1e-12, "minimality: {tn} vs {h1}");
        }
    }

    #[test]
    fn assemble_zero_potential_and_constant_flux() {
        let pair = zero_pair(32);
        let mesh = OmegaMesh::new(0.5, 5).unwrap();
        let data = assemble_cauchy(&pair, &mesh, 6, false).unwrap();
        assert_eq!(data.k, 6);
        // <N u, T 1> = 0 for the harmonic solutions: the constant is basis
        // element 0, so column 0 of the flux matrix vanishes
        for k in 0..data.k {
            assert!(
                data.g_flux[k][0].norm() < 1e-8,
                "flux against constant: {}",
                data.g_flux[k][0]
            );
        }
        // Gram is positive definite
        let cond = data.gram_condition().unwrap();
        assert!(cond.is_finite() && cond < 1e6, "condition {cond}");
    }

    #[test]
    fn flux_against_constant_equals_volume_integral() {
        // K = 1, constant trace, potentials (0, q): the pairing is
        // integral |grad u|^2 + q u^2 against the constant extension of 1
        let g = make_grid(4.0, 64).unwrap();
        let mut pair = zero_pair(64);
        let w = crate::gen::BoxWindow {
            plateau: 0.3,
            support: 0.46,
        };
        pair.q = ScalarField::from_fn(&g, |x| Complex64::new(0.4 * w.eval(x), 0.0));
        let mesh = OmegaMesh::new(0.5, 9).unwrap();
        let data = assemble_cauchy(&pair, &mesh, 1, false).unwrap();
        let u = &data.solutions[0];
        let v = &data.extensions[0];
        let pot = MeshPotentials::from_pair(&mesh, &pair).unwrap();
        let direct = bilinear_form(&mesh, &pot, u, v);
        assert!((data.g_flux[0][0] - direct).norm() < 1e-9 * direct.norm().max(1e-12));
    }

    #[test]
    fn riesz_identity_and_duality() {
        let pair = zero_pair(32);
        let mesh = OmegaMesh::new(0.5, 5).unwrap();
        let data = assemble_cauchy(&pair, &mesh, 8, false).unwrap();
        // g = G_tr e1 has dual norm |e1|_G
        let k = data.k;
        let e1: Vec<Complex64> = (0..k)
            .map(|i| {
                if i == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::default()
                }
            })
            .collect();
        let g = mat_vec(&data.g_tr, &e1);
        let dual = trace_dual_norm(&data, &g).unwrap();
        let direct = data.trace_norm_of(&e1);
        assert!((dual - direct).abs() < 1e-10 * direct);
        // zero functional
        let z = vec![Complex64::default(); k];
        assert_eq!(trace_dual_norm(&data, &z).unwrap(), 0.0);

        // duality inequality on random pairs
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let c: Vec<Complex64> = (0..k)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let gv: Vec<Complex64> = (0..k)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            // pairing <g, f> = sum c_l g_l (bilinear in the basis coords)
            let pairing: Complex64 = c.iter().zip(&gv).map(|(a, b)| a * b).sum();
            let bound = trace_dual_norm(&data, &gv_conj(&gv)).unwrap() * data.trace_norm_of(&c);
            assert!(
                pairing.norm() <= bound * (1.0 + 1e-8),
                "duality: {} vs {}",
                pairing.norm(),
                bound
            );
        }
    }

    fn gv_conj(g: &[Complex64]) -> Vec<Complex64> {
        g.iter().map(|v| v.conj()).collect()
    }

    #[test]
    fn dist_identical_zero_and_symmetry() {
        let pair = zero_pair(32);
        let mesh = OmegaMesh::new(0.5, 5).unwrap();
        let data = assemble_cauchy(&pair, &mesh, 6, false).unwrap();
        let d = dist_cauchy(&data, &data).unwrap();
        assert!(d.value <= 1e-10, "dist(C,C) = {}", d.value);
    }

    #[test]
    fn dist_one_dimensional_oracle() {
        // synthetic K = 1 data: g11 = 1, flux gamma_1 = 0, gamma_2 = s:
        // dist = max(min(1, s), s) = s for s <= 1
        let mesh = OmegaMesh::new(0.5, 5).unwrap();
        let mk = |gamma: f64| CauchyData {
            mesh,
            k: 1,
            fingerprint: 0,
            solutions: vec![vec![Complex64::default(); mesh.node_count()]],
            extensions: vec![vec![Complex64::default(); mesh.node_count()]],
            g_tr: vec![vec![Complex64::new(1.0, 0.0)]],
            g_flux: vec![vec![Complex64::new(gamma, 0.0)]],
        };
        for s in [0.3, 0.05] {
            let c1 = mk(0.0);
            let c2 = mk(s);
            let d = dist_cauchy(&c1, &c2).unwrap();
            assert!(
                (d.value - s).abs() < 1e-8,
                "oracle dist {s}, got {}",
                d.value
            );
        }
        // s = 2: the inf saturates at the trace term: dist = max(min(1,2), 2)
        let c1 = mk(0.0);
        let c2 = mk(2.0);
        let d = dist_cauchy(&c1, &c2).unwrap();
        assert!((d.value - 2.0).abs() < 1e-8, "oracle dist 2, got {}", d.value);
    }

    #[test]
    fn gauge_invariance_small_dist() {
        let g = make_grid(4.0, 32).unwrap();
        let pair = PotentialPair::zero(
            &g,
            0.5,
            ClassParams {
                bound: 1.0,
                eps: 0.5,
                besov_r: BesovIndex::Inf,
            },
        );
        let phi = ScalarField::from_fn(&g, |x| {
            Complex64::new(0.05 * radial_bump(x, 0.35), 0.0)
        });
        let mesh = OmegaMesh::new(0.5, 5).unwrap();
        let rep = gauge_invariance_check(&pair, &phi, &mesh, 10).unwrap();
        assert!(rep.dist <= 5e-3, "gauge dist {}", rep.dist);

        // phi = 0 gives dist 0
        let z = ScalarField::zeros(&g);
        let rep0 = gauge_invariance_check(&pair, &z, &mesh, 10).unwrap();
        assert!(rep0.dist <= 1e-10);

        // a gauge function violating the boundary condition is rejected
        let bad = ScalarField::from_fn(&g, |_| Complex64::new(0.1, 0.0));
        assert!(gauge_invariance_check(&pair, &bad, &mesh, 10).is_err());
    }
}
