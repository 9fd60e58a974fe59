//! Fourier extraction of the magnetic-field and electric-potential
//! differences from CGO pairs, and the low/high-frequency stability
//! schedules.
//!
//! For a target frequency `xi` the product of the two CGO solutions is
//! `u1 conj(u2) = e^{i x.xi} (a1 + r1) conj(a2 + r2)`, so the boundary
//! pairing of the pair concentrates at `xi`. The magnetic extraction
//! multiplies the pairing by `h` to isolate the transverse projection of
//! `(A1 - A2)^` against the retained exponential weights; two frames
//! (`mu2` and `-mu2`) recover both projections and with them every 2-form
//! component. The electric extraction evaluates the gauge-modified pairing
//! with the cutoff gauge from the Hodge decomposition; the exponential
//! weights are kept and logged, and the test families are checked to
//! converge regardless.
//!
//! The `interior` mode evaluates the volume pairings with known potentials
//! (the oracle path); the `boundary` mode reconstructs the same number from
//! the assembled Cauchy matrices and the CGO traces only.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{besov_norm, diff_seminorm, sobolev_norm, BesovIndex, BesovParams};
use crate::cauchy::CauchyData;
use crate::cgo::{build_cgo, make_zetas, CgoSolution, Which, Zetas};
use crate::error::{Error, Result};
use crate::forward::{bilinear_form, MeshPotentials, OmegaMesh};
use crate::grid::{AnyField, ScalarField, VectorField};
use crate::hodge::GaugeData;
use crate::potential::PotentialPair;
use crate::stats::{fit_line, fit_loglog};

/// How a pairing is evaluated: volume quadrature with known potentials, or
/// Cauchy-data matrices plus CGO traces only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionMode {
    Interior,
    Boundary,
}

/// One extraction sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub xi: [f64; 3],
    pub h: f64,
    pub pairing: Complex64,
    /// `h^{eps/(eps+2)}`, the semiclassical error indicator.
    pub rate_term: f64,
    /// `dist e^{c/h}` when the caller supplies `(dist, c)`.
    pub dist_term: f64,
    /// sup of the retained exponential weights of the two solutions.
    pub weight_sup: f64,
    pub converged: bool,
}

/// Both sides of the boundary identity and their gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub volume: Complex64,
    pub boundary: Complex64,
    pub gap: f64,
    pub magnitudes: f64,
    pub warn_not_solution: bool,
}

/// Evaluate both sides of the interior/boundary identity for explicit mesh
/// solutions: `u1` solves the `(A1, q1)` problem, `u2` the conjugated
/// `(A2, q2)` problem.
pub fn integral_identity_check(
    mesh: &OmegaMesh,
    pot1: &MeshPotentials,
    pot2: &MeshPotentials,
    u1: &[Complex64],
    u2: &[Complex64],
) -> IdentityCheck {
    let u2_conj: Vec<Complex64> = u2.iter().map(|v| v.conj()).collect();
    let u1_conj: Vec<Complex64> = u1.iter().map(|v| v.conj()).collect();
    let pot2_conj = pot2.conjugated();
    // boundary side: B_1(u1, conj u2) - conj(B_2'(u2, conj u1))
    let b1 = bilinear_form(mesh, pot1, u1, &u2_conj);
    let b2 = bilinear_form(mesh, &pot2_conj, u2, &u1_conj).conj();
    let boundary = b1 - b2;
    // volume side: i (A1 - A2).(u1 grad conj u2 - conj u2 grad u1)
    // + (A1^2 - A2^2 + q1 - q2) u1 conj u2, with the same edge quadrature
    let a_diff = [
        pot1.a[0]
            .iter()
            .zip(&pot2.a[0])
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>(),
        pot1.a[1]
            .iter()
            .zip(&pot2.a[1])
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>(),
        pot1.a[2]
            .iter()
            .zip(&pot2.a[2])
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>(),
    ];
    let mut volume = crate::forward::magnetic_form(mesh, &a_diff, u1, &u2_conj);
    for p in 0..mesh.node_count() {
        let mut sq_diff = Complex64::default();
        for axis in 0..3 {
            sq_diff += pot1.a[axis][p] * pot1.a[axis][p] - pot2.a[axis][p] * pot2.a[axis][p];
        }
        sq_diff += pot1.q[p] - pot2.q[p];
        volume += mesh.node_weight(p) * sq_diff * u1[p] * u2_conj[p];
    }
    let r1 = crate::forward::interior_residual(mesh, pot1, u1, None);
    let r2 = crate::forward::interior_residual(mesh, &pot2_conj, u2, None);
    IdentityCheck {
        volume,
        boundary,
        gap: (volume - boundary).norm(),
        magnitudes: b1.norm() + b2.norm() + volume.norm(),
        warn_not_solution: r1 > 1e-6 || r2 > 1e-6,
    }
}

/// `e^{i x.xi}` sampled on the box grid.
fn oscillation(grid: &std::sync::Arc<crate::grid::Grid>, xi: [f64; 3]) -> Vec<Complex64> {
    (0..grid.node_count())
        .map(|flat| {
            let x = grid.position(flat);
            Complex64::new(0.0, x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2]).exp()
        })
        .collect()
}

struct PairProducts {
    /// `u1 conj(u2) e^{-i x.xi}` (the bounded profile product `p1 conj p2`).
    prod: Vec<Complex64>,
    /// bounded factor of `u1 grad(conj u2) - conj(u2) grad u1`, i.e. the
    /// bracket with the `e^{i x.xi}` oscillation removed.
    grad_bracket: [Vec<Complex64>; 3],
    osc: Vec<Complex64>,
}

fn pair_products(u1: &CgoSolution, u2: &CgoSolution) -> PairProducts {
    let g = u1.amplitude.grid().clone();
    let h = u1.zetas.h;
    let p1 = u1.profile();
    let p2 = u2.profile();
    let grad_p1 = [
        g.derivative(&p1.values, 0),
        g.derivative(&p1.values, 1),
        g.derivative(&p1.values, 2),
    ];
    let grad_p2 = [
        g.derivative(&p2.values, 0),
        g.derivative(&p2.values, 1),
        g.derivative(&p2.values, 2),
    ];
    let z1 = u1.zetas.zeta(Which::One);
    let z2 = u2.zetas.zeta(Which::Two);
    let vh = [
        z2[0].conj() - z1[0],
        z2[1].conj() - z1[1],
        z2[2].conj() - z1[2],
    ];
    let n = g.node_count();
    let mut prod = Vec::with_capacity(n);
    let mut bracket = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for i in 0..n {
        let pp = p1.values[i] * p2.values[i].conj();
        prod.push(pp);
        for a in 0..3 {
            bracket[a].push(
                vh[a] / h * pp + p1.values[i] * grad_p2[a][i].conj()
                    - p2.values[i].conj() * grad_p1[a][i],
            );
        }
    }
    PairProducts {
        prod,
        grad_bracket: bracket,
        osc: oscillation(&g, u1.zetas.xi),
    }
}

/// Interior-mode pairing of the plain boundary identity for a CGO pair.
pub fn interior_pairing(
    p1: &PotentialPair,
    p2: &PotentialPair,
    u1: &CgoSolution,
    u2: &CgoSolution,
) -> Complex64 {
    let g = p1.grid().clone();
    let parts = pair_products(u1, u2);
    let cell = g.cell_volume();
    let i_unit = Complex64::i();
    let mut acc = Complex64::default();
    for idx in 0..g.node_count() {
        let mut mag = Complex64::default();
        let mut sq = Complex64::default();
        for a in 0..3 {
            let d = p1.a.components[a][idx] - p2.a.components[a][idx];
            mag += d * parts.grad_bracket[a][idx];
            sq += p1.a.components[a][idx] * p1.a.components[a][idx]
                - p2.a.components[a][idx] * p2.a.components[a][idx];
        }
        sq += p1.q.values[idx] - p2.q.values[idx];
        acc += parts.osc[idx] * (i_unit * mag + sq * parts.prod[idx]) * cell;
    }
    acc
}

/// Gauge-modified interior pairing (the electric-extraction integrand) with
/// `phi` from the Hodge gauge: the magnetic difference is repaired to
/// `A1 - A2 - grad phi` and everything is weighted by `e^{i phi}`.
pub fn interior_pairing_gauged(
    p1: &PotentialPair,
    p2: &PotentialPair,
    u1: &CgoSolution,
    u2: &CgoSolution,
    gauge: &GaugeData,
) -> Complex64 {
    let g = p1.grid().clone();
    let parts = pair_products(u1, u2);
    let cell = g.cell_volume();
    let i_unit = Complex64::i();
    let grad_phi = gauge.phi.d();
    let mut acc = Complex64::default();
    for idx in 0..g.node_count() {
        let w = (i_unit * gauge.phi.values[idx]).exp();
        let mut mag = Complex64::default();
        let mut sq = Complex64::default();
        let mut d_dot_gphi = Complex64::default();
        for a in 0..3 {
            let a2_mod = p2.a.components[a][idx] + grad_phi.components[a][idx];
            let d = p1.a.components[a][idx] - a2_mod;
            mag += d * parts.grad_bracket[a][idx];
            sq += p1.a.components[a][idx] * p1.a.components[a][idx] - a2_mod * a2_mod;
            d_dot_gphi += d * grad_phi.components[a][idx];
        }
        sq += p1.q.values[idx] - p2.q.values[idx] - d_dot_gphi;
        acc += w * parts.osc[idx] * (i_unit * mag + sq * parts.prod[idx]) * cell;
    }
    acc
}

/// Map every mesh node to its box-grid flat index (meshes must align).
pub fn mesh_to_box_indices(
    mesh: &OmegaMesh,
    grid: &crate::grid::Grid,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(mesh.node_count());
    for p in 0..mesh.node_count() {
        let x = mesh.position(p);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] + grid.half_width()) / grid.spacing();
            let k = t.round();
            if (t - k).abs() > 1e-9 {
                return Err(Error::Precondition(format!(
                    "mesh node {x:?} not aligned with the box grid"
                )));
            }
            idx[a] = k as usize % grid.n();
        }
        out.push(grid.flatten(idx[0], idx[1], idx[2]));
    }
    Ok(out)
}

/// Boundary-mode pairing: project the CGO traces onto the basis and read the
/// flux gap from the assembled matrices only. The second data set must be
/// that of the conjugated second problem (equal to the plain one for real
/// potentials).
pub fn boundary_pairing(
    c1: &CauchyData,
    c2_conj: &CauchyData,
    u1: &CgoSolution,
    u2: &CgoSolution,
) -> Result<(Complex64, f64)> {
    let mesh = &c1.mesh;
    let grid = u1.amplitude.grid().clone();
    let map = mesh_to_box_indices(mesh, &grid)?;
    let mut tr1 = vec![Complex64::default(); mesh.node_count()];
    let mut tr2 = vec![Complex64::default(); mesh.node_count()];
    for p in 0..mesh.node_count() {
        if mesh.is_boundary(p) {
            tr1[p] = u1.eval_u(map[p]);
            tr2[p] = u2.eval_u(map[p]);
        }
    }
    let (coef1, defect1) = c1.project_trace(&tr1)?;
    let (coef2, defect2) = c2_conj.project_trace(&tr2)?;
    let k = c1.k;
    let mut first = Complex64::default();
    let mut second = Complex64::default();
    for kk in 0..k {
        for l in 0..k {
            first += coef1[kk] * coef2[l].conj() * c1.g_flux[kk][l];
            second += coef2[kk] * coef1[l].conj() * c2_conj.g_flux[kk][l];
        }
    }
    Ok((first - second.conj(), defect1.max(defect2)))
}

/// The four CGO builds of one extraction frame pair: both solutions in the
/// base frame and in the `mu2`-flipped frame.
pub struct FramePair {
    pub zetas: Zetas,
    pub u1: CgoSolution,
    pub u2: CgoSolution,
    pub u1_flip: CgoSolution,
    pub u2_flip: CgoSolution,
}

/// Build the CGO quadruple for one `(xi, h)` extraction.
pub fn build_frame_pair(
    p1: &PotentialPair,
    p2: &PotentialPair,
    xi: [f64; 3],
    h: f64,
) -> Result<FramePair> {
    let zetas = make_zetas(xi, h)?;
    let flipped = zetas.flipped_frame();
    let domain = p1.support_half_side;
    let builds: Vec<Result<CgoSolution>> = [
        (p1, &zetas, Which::One),
        (p2, &zetas, Which::Two),
        (p1, &flipped, Which::One),
        (p2, &flipped, Which::Two),
    ]
    .into_par_iter()
    .map(|(pair, z, which)| build_cgo(pair, z, which, domain))
    .collect();
    let mut it = builds.into_iter();
    let u1 = it.next().unwrap()?;
    let u2 = it.next().unwrap()?;
    let u1_flip = it.next().unwrap()?;
    let u2_flip = it.next().unwrap()?;
    Ok(FramePair {
        zetas,
        u1,
        u2,
        u1_flip,
        u2_flip,
    })
}

/// Extracted 2-form Fourier coefficient estimate at one `(xi, h)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaExtraction {
    /// Components in the order (1,2), (1,3), (2,3).
    pub coeffs: [Complex64; 3],
    pub records: Vec<ExtractionRecord>,
}

/// Extract the 2-form coefficients of `d(A1 - A2)` at `xi` from the two
/// frame pairings: solve for both transverse projections of the weighted
/// `(A1 - A2)^` and assemble `-i (xi_j a_k - xi_k a_j)`.
pub fn extract_da_hat(
    p1: &PotentialPair,
    p2: &PotentialPair,
    frames: &FramePair,
    mode: ExtractionMode,
    data: Option<(&CauchyData, &CauchyData)>,
    dist_context: Option<(f64, f64)>,
) -> Result<DaExtraction> {
    let z = &frames.zetas;
    let h = z.h;
    let eps = p1.class.eps;
    let (pair_plus, pair_minus, defect) = match mode {
        ExtractionMode::Interior => (
            interior_pairing(p1, p2, &frames.u1, &frames.u2),
            interior_pairing(p1, p2, &frames.u1_flip, &frames.u2_flip),
            0.0,
        ),
        ExtractionMode::Boundary => {
            let (c1, c2) = data.ok_or_else(|| {
                Error::Precondition("boundary mode requires assembled Cauchy data".into())
            })?;
            let (g1, d1) = boundary_pairing(c1, c2, &frames.u1, &frames.u2)?;
            let (g2, d2) = boundary_pairing(c1, c2, &frames.u1_flip, &frames.u2_flip)?;
            (g1, g2, d1.max(d2))
        }
    };
    let _ = defect;
    // h P = -2 i (mu1 + i s mu2).(weighted A-hat) + O(h): estimator per frame
    let g_plus = Complex64::i() * h * pair_plus / 2.0;
    let g_minus = Complex64::i() * h * pair_minus / 2.0;
    let xi_norm = (z.xi[0] * z.xi[0] + z.xi[1] * z.xi[1] + z.xi[2] * z.xi[2]).sqrt();
    let s = (1.0 - h * h * xi_norm * xi_norm / 4.0).max(0.0).sqrt();
    let a1 = (g_plus + g_minus) / 2.0;
    let a2 = (g_plus - g_minus) / (2.0 * Complex64::i() * s);
    // transverse part of the weighted (A1 - A2)^ at xi
    let perp = [
        a1 * z.perp1[0] + a2 * z.perp2[0],
        a1 * z.perp1[1] + a2 * z.perp2[1],
        a1 * z.perp1[2] + a2 * z.perp2[2],
    ];
    let coeff = |j: usize, k: usize| -Complex64::i() * (z.xi[j] * perp[k] - z.xi[k] * perp[j]);
    let rate = h.powf(eps / (eps + 2.0));
    let dist_term = dist_context
        .map(|(d, c)| d * (c / h).exp())
        .unwrap_or(0.0);
    let weight_sup = frames
        .u1
        .diag
        .weight_sup
        .max(frames.u2.diag.weight_sup)
        .max(frames.u1_flip.diag.weight_sup)
        .max(frames.u2_flip.diag.weight_sup);
    let converged = frames.u1.diag.converged
        && frames.u2.diag.converged
        && frames.u1_flip.diag.converged
        && frames.u2_flip.diag.converged;
    let record = |pairing: Complex64| ExtractionRecord {
        xi: z.xi,
        h,
        pairing,
        rate_term: rate,
        dist_term,
        weight_sup,
        converged,
    };
    Ok(DaExtraction {
        coeffs: [coeff(0, 1), coeff(0, 2), coeff(1, 2)],
        records: vec![record(pair_plus), record(pair_minus)],
    })
}

/// Extracted electric Fourier coefficient estimate at one `(xi, h)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QExtraction {
    pub coeff: Complex64,
    pub record: ExtractionRecord,
    /// Set when the gauge gradient pushes the modified potential noticeably
    /// past the class bound of the plain one.
    pub warn_class_excess: bool,
}

/// Extract `(q1 - q2)^(xi)` from the gauge-modified pairing; the CGO pair is
/// the same one used for the magnetic extraction.
pub fn extract_q_hat(
    p1: &PotentialPair,
    p2: &PotentialPair,
    frames: &FramePair,
    gauge: &GaugeData,
    mode: ExtractionMode,
    data: Option<(&CauchyData, &CauchyData)>,
    dist_context: Option<(f64, f64)>,
) -> Result<QExtraction> {
    let z = &frames.zetas;
    let h = z.h;
    let eps = p1.class.eps;
    let pairing = match mode {
        ExtractionMode::Interior => {
            interior_pairing_gauged(p1, p2, &frames.u1, &frames.u2, gauge)
        }
        ExtractionMode::Boundary => {
            let (c1, c2) = data.ok_or_else(|| {
                Error::Precondition("boundary mode requires assembled Cauchy data".into())
            })?;
            let (g, _) = boundary_pairing(c1, c2, &frames.u1, &frames.u2)?;
            g
        }
    };
    // class-excess warning: sup |A2 + grad phi| against the class bound
    let grad_phi = gauge.phi.d();
    let mut shifted = p2.a.clone();
    for (axis, comp) in shifted.components.iter_mut().enumerate() {
        for (v, gp) in comp.iter_mut().zip(&grad_phi.components[axis]) {
            *v += gp;
        }
    }
    let warn_class_excess = shifted.sup_norm() > 3.0 * p2.class.bound;
    let rate = h.powf(eps / (eps + 2.0));
    let dist_term = dist_context.map(|(d, c)| d * (c / h).exp()).unwrap_or(0.0);
    Ok(QExtraction {
        coeff: pairing,
        record: ExtractionRecord {
            xi: z.xi,
            h,
            pairing,
            rate_term: rate,
            dist_term,
            weight_sup: frames.u1.diag.weight_sup.max(frames.u2.diag.weight_sup),
            converged: frames.u1.diag.converged && frames.u2.diag.converged,
        },
        warn_class_excess,
    })
}

/// Spectral coefficient of a 2-form at an exact lattice frequency; the
/// ground truth for extraction tests.
pub fn two_form_coeff_at(field: &crate::grid::TwoFormField, xi: [f64; 3]) -> Result<[Complex64; 3]> {
    let g = field.grid().clone();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let t = xi[a] / g.freq_unit();
        let k = t.round();
        if (t - k).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "frequency {xi:?} is not on the dual lattice"
            )));
        }
        idx[a] = k.rem_euclid(g.n() as f64) as usize;
    }
    let flat = g.flatten(idx[0], idx[1], idx[2]);
    Ok([
        g.to_spectral(&field.components[0])[flat],
        g.to_spectral(&field.components[1])[flat],
        g.to_spectral(&field.components[2])[flat],
    ])
}

/// Scalar analogue of [`two_form_coeff_at`].
pub fn scalar_coeff_at(field: &ScalarField, xi: [f64; 3]) -> Result<Complex64> {
    let g = field.grid().clone();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let t = xi[a] / g.freq_unit();
        let k = t.round();
        if (t - k).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "frequency {xi:?} is not on the dual lattice"
            )));
        }
        idx[a] = k.rem_euclid(g.n() as f64) as usize;
    }
    Ok(g.to_spectral(&field.values)[g.flatten(idx[0], idx[1], idx[2])])
}

/// Schedule knobs of the stability assembly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub eps: f64,
    pub lambda: f64,
    pub theta: f64,
    pub besov_delta: f64,
    pub besov_r: BesovIndex,
}

/// Constants fitted on a calibration family and then frozen.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FittedConstants {
    /// Exponential growth rate in `dist e^{c/h}` (twice the fitted H^1
    /// growth of a single solution).
    pub c_exp: f64,
    /// `h = c_prime |log dist|^{-1}` for the magnetic schedules.
    pub c_prime: f64,
    /// Decay exponent scale of the magnetic bound reused inside the
    /// electric schedules; clamped to the universal range (0, 1).
    pub c_tilde: f64,
    /// Frozen prefactors of the four bound shapes.
    pub pref_da_sobolev: f64,
    pub pref_da_besov: f64,
    pub pref_q_sobolev: f64,
    pub pref_q_besov: f64,
    /// Largest h for which the CGO builds converged during calibration.
    pub h_max: f64,
}

const DIM: f64 = 3.0;

/// A priori size inputs of the tail bounds, measured once per family.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailInputs {
    /// `|A1 - A2|_{B^{2,inf}_eps}` of the unit perturbation.
    pub a_seminorm: f64,
    /// `|A1 - A2|_inf` of the unit perturbation.
    pub a_sup: f64,
    /// Derivative L^1 mass of the mollifier profile.
    pub c_psi: f64,
    /// Support volume estimate.
    pub supp_vol: f64,
    /// `|q1 - q2|_{L^2}` of the unit perturbation.
    pub q_l2: f64,
    /// Dyadic `eps`-norm of the unit magnetic perturbation.
    pub a_dyadic_eps: f64,
    /// Largest dyadic `eps`-norm of the electric potentials (a priori Besov
    /// bound; `None` when unavailable, which skips the Besov variant).
    pub q_dyadic_eps: Option<f64>,
}

/// The four schedule bounds at one perturbation scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleBounds {
    pub h_da: f64,
    pub rho_da: f64,
    pub k_da: usize,
    pub h_q: f64,
    pub rho_q: f64,
    pub k_q: usize,
    pub da_sobolev: f64,
    pub da_besov: f64,
    pub q_sobolev: f64,
    pub q_besov: Option<f64>,
    pub notes: Vec<String>,
}

/// Evaluate the four bound shapes for a measured `dist` at perturbation
/// scale `t` (the tail inputs scale linearly with `t`).
pub fn schedule_bounds(
    dist: f64,
    t: f64,
    params: &ScheduleParams,
    consts: &FittedConstants,
    tails: &TailInputs,
) -> ScheduleBounds {
    let eps = params.eps;
    let mut notes = Vec::new();
    let logd = dist.max(1e-300).ln().abs().max(1.0);
    let cap = consts.h_max.min(1.0);

    // magnetic H^-1 schedule
    let h_da = (consts.c_prime / logd).min(cap);
    let rho_exp = 2.0 * eps * (1.0 + eps) / ((2.0 + eps) * (DIM + DIM * eps + 2.0 * eps));
    let mut rho = h_da.powf(-rho_exp).max(1.0);
    if rho > 2.0 / h_da {
        rho = 2.0 / h_da;
        notes.push(format!("rho clipped to 2/h at t={t}"));
    }
    if h_da < consts.c_prime / logd {
        notes.push(format!("h clipped to calibrated maximum at t={t}"));
    }
    let rate = |h: f64| h.powf(eps / (eps + 2.0));
    let tau_rho = rho.powf(-1.0 / (eps + 1.0));
    let tail_da = t
        * (tails.c_psi * tails.a_sup * tails.supp_vol.sqrt() / (rho * tau_rho)
            + tau_rho.powf(eps) * tails.a_seminorm);
    let low_da = rho.powf(DIM / 2.0) * (dist * (consts.c_exp / h_da).exp() + rate(h_da));
    let da_sobolev = consts.pref_da_sobolev * (low_da + tail_da);

    // magnetic Besov schedule
    let h_db = (2.0 * consts.c_prime / logd).min(cap);
    let k_exp = eps / ((eps + 2.0) * (params.besov_delta - 1.0 + eps + DIM));
    let k_da = (-(h_db.powf(k_exp)).log2()).floor().max(0.0) as usize;
    let besov_tail = t * 2.0 * tails.a_dyadic_eps
        * 2f64.powf(-(k_da as f64) * (params.besov_delta - 1.0 + eps));
    let da_besov = consts.pref_da_besov
        * (2f64.powf(DIM * k_da as f64) * (dist * (consts.c_exp / h_db).exp() + rate(h_db))
            + besov_tail);

    // electric H^-lambda schedule
    let q_h_exp = consts.c_tilde * params.theta * eps * eps / (6.0 * DIM);
    let mut h_q = (consts.c_prime * logd.powf(-q_h_exp)).min(cap);
    let rho_q_exp = 2.0 * eps / ((2.0 + eps) * (DIM + 2.0 * params.lambda));
    let mut rho_q = h_q.powf(-rho_q_exp).max(1.0);
    if rho_q > 2.0 / h_q {
        rho_q = 2.0 / h_q;
        notes.push(format!("rho_q clipped to 2/h at t={t}"));
    }
    if h_q < 1e-12 {
        h_q = 1e-12;
    }
    let mid = |h: f64| logd.powf(-consts.c_tilde * params.theta * eps * eps / DIM) * h.powf(-2.5);
    let low_q = rho_q.powf(DIM / 2.0)
        * (dist * (consts.c_exp / h_q).exp() + rate(h_q) + mid(h_q));
    let tail_q = t * tails.q_l2 * rho_q.powf(-params.lambda);
    let q_sobolev = consts.pref_q_sobolev * (low_q + tail_q);

    // electric Besov schedule (needs the a priori Besov bound on q)
    let q_besov = tails.q_dyadic_eps.map(|qb| {
        let h_qb = (2.0 * consts.c_prime * logd.powf(-q_h_exp)).min(cap);
        let kq_exp = eps / ((eps + 2.0) * (eps + DIM));
        let k_q = (-(h_qb.powf(kq_exp)).log2()).floor().max(0.0) as usize;
        consts.pref_q_besov
            * (2f64.powf(DIM * k_q as f64)
                * (dist * (consts.c_exp / h_qb).exp() + rate(h_qb) + mid(h_qb))
                + t * qb * 2f64.powf(-(k_q as f64) * eps))
    });
    if q_besov.is_none() {
        notes.push("electric Besov variant skipped: no a priori Besov bound".into());
    }
    let kq_exp = eps / ((eps + 2.0) * (eps + DIM));
    let k_q = (-(h_q.powf(kq_exp)).log2()).floor().max(0.0) as usize;

    ScheduleBounds {
        h_da,
        rho_da: rho,
        k_da,
        h_q,
        rho_q,
        k_q,
        da_sobolev,
        da_besov,
        q_sobolev,
        q_besov,
        notes,
    }
}

/// Direct norms of a perturbation-family member.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectNorms {
    pub da_sobolev: f64,
    pub da_besov: f64,
    pub q_sobolev: f64,
    pub q_besov: f64,
}

/// Measure the four direct norms of a difference pair.
pub fn direct_norms(
    a_diff: &VectorField,
    q_diff: &ScalarField,
    params: &ScheduleParams,
) -> DirectNorms {
    let da = a_diff.d();
    DirectNorms {
        da_sobolev: sobolev_norm(&AnyField::TwoForm(da.clone()), -1.0),
        da_besov: besov_norm(
            &AnyField::TwoForm(da),
            BesovParams {
                s: -params.besov_delta,
                r: params.besov_r,
            },
        )
        .value,
        q_sobolev: sobolev_norm(&AnyField::Scalar(q_diff.clone()), -params.lambda),
        q_besov: besov_norm(
            &AnyField::Scalar(q_diff.clone()),
            BesovParams {
                s: 0.0,
                r: params.besov_r,
            },
        )
        .value,
    }
}

/// Fit the exponential growth constant from the H^1 sizes of CGO builds over
/// an h-ladder: `log |u|_{H^1} <= c'/h + b`, returning `2 c'` (both
/// solutions of a pairing contribute).
pub fn fit_exp_constant(pair: &PotentialPair, xi: [f64; 3], hs: &[f64]) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &h in hs {
        let z = make_zetas(xi, h)?;
        let sol = build_cgo(pair, &z, Which::One, pair.support_half_side)?;
        xs.push(1.0 / h);
        ys.push(sol.diag.h1_domain.max(1e-300).ln());
    }
    let (slope, _) = fit_line(&xs, &ys);
    Ok((2.0 * slope).max(0.1))
}

/// Measure the tail inputs of a family from its unit perturbation.
pub fn measure_tails(
    a_diff_unit: &VectorField,
    q_diff_unit: &ScalarField,
    pots: (&ScalarField, &ScalarField),
    eps: f64,
    support_half_side: f64,
) -> Result<TailInputs> {
    let a_seminorm = diff_seminorm(&AnyField::Vector(a_diff_unit.clone()), eps, BesovIndex::Inf)?
        .value;
    let a_dyadic = besov_norm(
        &AnyField::Vector(a_diff_unit.clone()),
        BesovParams {
            s: eps,
            r: BesovIndex::Inf,
        },
    )
    .value;
    let q_l2 = crate::grid::scalar_l2(q_diff_unit);
    let qb = |q: &ScalarField| {
        besov_norm(
            &AnyField::Scalar(q.clone()),
            BesovParams {
                s: eps,
                r: BesovIndex::Inf,
            },
        )
        .value
    };
    let q_dyadic_eps = Some(qb(pots.0).max(qb(pots.1)));
    // derivative L^1 mass measured on a small reference grid
    let ref_grid = crate::grid::make_grid(1.0, 32)?;
    let c_psi = crate::mollify::profile_derivative_l1(&ref_grid, 0);
    Ok(TailInputs {
        a_seminorm,
        a_sup: a_diff_unit.sup_norm(),
        c_psi,
        supp_vol: (2.0 * support_half_side).powi(3),
        q_l2,
        a_dyadic_eps: a_dyadic,
        q_dyadic_eps,
    })
}

/// Fit the decay exponent of the magnetic bound against `|log dist|` over a
/// family, clamped to the universal band `(0, 1)`.
pub fn fit_c_tilde(dists: &[f64], da_directs: &[f64], eps: f64) -> f64 {
    let xs: Vec<f64> = dists.iter().map(|d| d.max(1e-300).ln().abs().ln()).collect();
    let ys: Vec<f64> = da_directs.iter().map(|v| v.max(1e-300).ln()).collect();
    if xs.len() < 2 {
        return 0.5;
    }
    let (slope, _) = fit_line(&xs, &ys);
    let c = -slope * DIM / (eps * eps);
    if !c.is_finite() {
        return 0.5;
    }
    c.clamp(0.05, 0.95)
}

/// Fit a bound prefactor: the smallest constant putting every calibration
/// point under the shape, with 30% headroom.
pub fn fit_prefactor(directs: &[f64], shapes: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (d, s) in directs.iter().zip(shapes) {
        if *s > 0.0 {
            worst = worst.max(d / s);
        }
    }
    (1.3 * worst).max(1e-6)
}

/// Fitted extraction error-model constants `|err| <= C |xi| (dist e^{c/h}
/// + h^{eps/(eps+2)})`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorModel {
    pub c_exp: f64,
    pub prefactor: f64,
}

/// Fit the prefactor of the extraction error model on calibration samples
/// `(xi_norm, h, err)` given the measured `dist` and frozen `c`.
pub fn fit_error_model(
    samples: &[(f64, f64, f64)],
    dist: f64,
    c_exp: f64,
    eps: f64,
) -> ErrorModel {
    let mut worst = 0.0f64;
    for &(xi_norm, h, err) in samples {
        let shape = xi_norm * (dist * (c_exp / h).exp() + h.powf(eps / (eps + 2.0)));
        if shape > 0.0 {
            worst = worst.max(err / shape);
        }
    }
    ErrorModel {
        c_exp,
        prefactor: 1.1 * worst,
    }
}

/// Slope of an extraction error curve in `h` (for the rate checks).
pub fn error_slope(hs: &[f64], errs: &[f64]) -> f64 {
    fit_loglog(hs, errs)
}
