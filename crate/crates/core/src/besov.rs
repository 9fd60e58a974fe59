//! Littlewood-Paley blocks, Besov and Sobolev norms, the first-difference
//! seminorm, and admissibility checks.
//!
//! The dyadic family starts from a smooth radial cutoff `eta` with
//! `eta = 1` on `|xi| <= 1` and `eta = 0` on `|xi| >= 2`, and
//! `kappa(xi) = eta(xi) - eta(2 xi)`. Block `j = 0` applies `eta`, block
//! `j >= 1` applies `kappa(2^{-j} xi)`; the family telescopes to a partition
//! of unity. The exact profile of `eta` is a module constant: every
//! equivalence constant between the dyadic and difference characterizations
//! depends on it and is only ever measured, never asserted.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::smoothstep;
use crate::grid::{kahan_sum_real, AnyField, Grid};
use crate::potential::PotentialPair;

/// Besov integrability index; the artifact supports `r in {1, 2, inf}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BesovIndex {
    One,
    Two,
    Inf,
}

/// Smoothness/integrability parameters of a Besov norm.
#[derive(Debug, Clone, Copy)]
pub struct BesovParams {
    pub s: f64,
    pub r: BesovIndex,
}

/// The radial cutoff profile: 1 on `|xi| <= 1`, 0 on `|xi| >= 2`.
pub fn eta(r: f64) -> f64 {
    smoothstep(2.0 - r.abs())
}

/// `kappa(xi) = eta(xi) - eta(2 xi)`, supported on `1/2 <= |xi| <= 2`.
pub fn kappa(r: f64) -> f64 {
    eta(r) - eta(2.0 * r)
}

/// Dyadic multiplier family realized on a grid's dual lattice.
#[derive(Debug, Clone)]
pub struct LPFamily {
    grid: Arc<Grid>,
    max_block: usize,
}

impl LPFamily {
    pub fn new(grid: &Arc<Grid>) -> Self {
        let nyq = grid.nyquist_radius();
        // tail beyond this block is reported, not silently dropped
        let max_block = (nyq.log2().floor() as i64 - 1).max(0) as usize;
        LPFamily {
            grid: grid.clone(),
            max_block,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Largest block index the norms sum to.
    pub fn max_block(&self) -> usize {
        self.max_block
    }

    /// Fields band-limited to `|xi| <= 2^max_block` are covered exactly.
    pub fn coverage_radius(&self) -> f64 {
        2f64.powi(self.max_block as i32)
    }

    /// Multiplier value of block `j` at radius `|xi|`.
    pub fn block_multiplier(&self, j: usize, r: f64) -> f64 {
        if j == 0 {
            eta(r)
        } else {
            kappa(r / 2f64.powi(j as i32))
        }
    }

    /// Largest deviation of the telescoped partition of unity from 1 over
    /// the whole dual lattice.
    pub fn partition_defect(&self) -> f64 {
        let g = &self.grid;
        let needed = (3f64.sqrt() * g.nyquist_radius()).log2().ceil() as usize + 1;
        let mut worst = 0.0f64;
        for flat in 0..g.node_count() {
            let xi = g.xi(flat);
            let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            let mut sum = 0.0;
            for j in 0..=needed {
                sum += self.block_multiplier(j, r);
            }
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }
}

/// Apply Littlewood-Paley block `j` to a field.
pub fn lp_project(family: &LPFamily, u: &AnyField, j: usize) -> Result<AnyField> {
    let g = family.grid();
    if 2f64.powi(j as i32 + 1) > g.nyquist_radius() {
        return Err(Error::BlockBeyondNyquist {
            requested: j,
            max: family.max_block(),
        });
    }
    let apply = |vals: &[Complex64]| {
        g.apply_multiplier(vals, |xi| {
            let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            Complex64::new(family.block_multiplier(j, r), 0.0)
        })
    };
    Ok(match u {
        AnyField::Scalar(f) => AnyField::Scalar(crate::grid::ScalarField::from_values(
            g,
            apply(&f.values),
        )),
        AnyField::Vector(f) => AnyField::Vector(crate::grid::VectorField::from_components(
            g,
            [
                apply(&f.components[0]),
                apply(&f.components[1]),
                apply(&f.components[2]),
            ],
        )),
        AnyField::TwoForm(f) => AnyField::TwoForm(crate::grid::TwoFormField::from_components(
            g,
            [
                apply(&f.components[0]),
                apply(&f.components[1]),
                apply(&f.components[2]),
            ],
        )),
    })
}

/// Spectral energy density `sum_components |u_hat(xi)|^2 / (2L)^3` per
/// lattice point.
fn spectral_density(u: &AnyField) -> Vec<f64> {
    let g = u.grid();
    let mut density = vec![0.0; g.node_count()];
    let norm = (2.0 * g.half_width()).powi(3);
    for comp in u.component_slices() {
        let coeffs = g.to_spectral(comp);
        for (d, c) in density.iter_mut().zip(&coeffs) {
            *d += c.norm_sqr() / norm;
        }
    }
    density
}

/// Result of a truncated dyadic norm: the value, the truncation index, and
/// the L^2 mass beyond the covered region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BesovNormReport {
    pub value: f64,
    pub max_block: usize,
    pub tail_l2: f64,
    pub block_l2: Vec<f64>,
}

/// Dyadic Besov norm `(sum_j 2^{r s j} |Delta_j u|_{L^2}^r)^{1/r}` (sup for
/// `r = inf`), truncated at the Nyquist-limited maximal block.
pub fn besov_norm(u: &AnyField, params: BesovParams) -> BesovNormReport {
    let g = u.grid();
    let family = LPFamily::new(g);
    let density = spectral_density(u);
    let jmax = family.max_block();
    let mut block_l2 = Vec::with_capacity(jmax + 1);
    let mut radii = Vec::with_capacity(g.node_count());
    for flat in 0..g.node_count() {
        let xi = g.xi(flat);
        radii.push((xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt());
    }
    for j in 0..=jmax {
        let mass = kahan_sum_real(radii.iter().zip(&density).map(|(r, d)| {
            let m = family.block_multiplier(j, *r);
            m * m * d
        }));
        block_l2.push(mass.max(0.0).sqrt());
    }
    // mass not reproduced by the telescoped sum eta(2^{-jmax} xi)
    let tail = kahan_sum_real(radii.iter().zip(&density).map(|(r, d)| {
        let covered = eta(*r / 2f64.powi(jmax as i32));
        (1.0 - covered) * (1.0 - covered) * d
    }));
    let value = match params.r {
        BesovIndex::One => block_l2
            .iter()
            .enumerate()
            .map(|(j, b)| 2f64.powf(params.s * j as f64) * b)
            .sum(),
        BesovIndex::Two => block_l2
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let w = 2f64.powf(params.s * j as f64) * b;
                w * w
            })
            .sum::<f64>()
            .sqrt(),
        BesovIndex::Inf => block_l2
            .iter()
            .enumerate()
            .map(|(j, b)| 2f64.powf(params.s * j as f64) * b)
            .fold(0.0, f64::max),
    };
    BesovNormReport {
        value,
        max_block: jmax,
        tail_l2: tail.max(0.0).sqrt(),
        block_l2,
    }
}

/// Bessel-weighted Sobolev norm
/// `( (2L)^{-3} sum_xi (1+|xi|^2)^s |u_hat|^2 )^{1/2}`.
pub fn sobolev_norm(u: &AnyField, s: f64) -> f64 {
    let g = u.grid();
    let density = spectral_density(u);
    let total = kahan_sum_real(density.iter().enumerate().map(|(flat, d)| {
        let xi = g.xi(flat);
        let w = 1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        w.powf(s) * d
    }));
    total.max(0.0).sqrt()
}

/// Quadrature layout of the first-difference seminorm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeminormQuadrature {
    /// Coarsest dyadic shell index (shell `m` covers `|y| in [2^-m, 2^-m+1]`).
    pub coarsest_shell: i32,
    pub shells: usize,
    pub directions: usize,
}

/// Measured seminorm together with the quadrature that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeminormReport {
    pub value: f64,
    pub quadrature: SeminormQuadrature,
}

/// 26 lattice directions (the nonzero offsets of a 3x3x3 stencil).
fn directions26() -> Vec<[f64; 3]> {
    let mut dirs = Vec::with_capacity(26);
    for a in -1i32..=1 {
        for b in -1i32..=1 {
            for c in -1i32..=1 {
                if a == 0 && b == 0 && c == 0 {
                    continue;
                }
                let v = [a as f64, b as f64, c as f64];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                dirs.push([v[0] / n, v[1] / n, v[2] / n]);
            }
        }
    }
    dirs
}

/// `|A(.+y) - A|_{L^2}^2` for one component from its spectral density, using
/// the translation phase `|e^{-i y.xi} - 1|^2 = 4 sin^2(y.xi / 2)`.
fn translation_diff_sq(grid: &Grid, density: &[f64], y: [f64; 3]) -> f64 {
    let mut total = 0.0;
    for (flat, d) in density.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        let xi = grid.xi(flat);
        let s = (0.5 * (y[0] * xi[0] + y[1] * xi[1] + y[2] * xi[2])).sin();
        total += 4.0 * s * s * d;
    }
    total
}

/// First-difference Besov seminorm `|u|_{B^{2,r}_eps}` of a scalar or vector
/// field, by dyadic-shell quadrature over translation vectors.
pub fn diff_seminorm(u: &AnyField, eps: f64, r: BesovIndex) -> Result<SeminormReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Precondition(format!(
            "seminorm exponent must lie in (0,1), got {eps}"
        )));
    }
    if u.degree() == crate::grid::FormDegree::TwoForm {
        return Err(Error::DegreeUnsupported(2));
    }
    let g = u.grid();
    let dirs = directions26();
    let m_max = (1.0 / g.spacing()).log2().floor() as i32;
    let m_min = 0i32;
    let shells: Vec<i32> = (m_min..=m_max).collect();
    let n = 3.0;
    let r_pow: Option<f64> = match r {
        BesovIndex::One => Some(1.0),
        BesovIndex::Two => Some(2.0),
        BesovIndex::Inf => None,
    };
    let mut total_sq = 0.0;
    for comp in u.component_slices() {
        let mut density = vec![0.0; g.node_count()];
        let norm = (2.0 * g.half_width()).powi(3);
        let coeffs = g.to_spectral(comp);
        for (d, c) in density.iter_mut().zip(&coeffs) {
            *d += c.norm_sqr() / norm;
        }
        match r_pow {
            Some(rp) => {
                let mut integral = 0.0;
                for &m in &shells {
                    let radius = 2f64.powi(-m) * std::f64::consts::SQRT_2;
                    let vol = (28.0 * std::f64::consts::PI / 3.0) * 2f64.powi(-3 * m);
                    let mean: f64 = dirs
                        .iter()
                        .map(|d| {
                            let y = [d[0] * radius, d[1] * radius, d[2] * radius];
                            translation_diff_sq(g, &density, y).sqrt().powf(rp)
                        })
                        .sum::<f64>()
                        / dirs.len() as f64;
                    integral += vol * mean / radius.powf(n + rp * eps);
                }
                total_sq += integral.powf(2.0 / rp);
            }
            None => {
                let mut sup = 0.0f64;
                for &m in &shells {
                    let radius = 2f64.powi(-m) * std::f64::consts::SQRT_2;
                    for d in &dirs {
                        let y = [d[0] * radius, d[1] * radius, d[2] * radius];
                        let val = translation_diff_sq(g, &density, y).sqrt() / radius.powf(eps);
                        sup = sup.max(val);
                    }
                }
                total_sq += sup * sup;
            }
        }
    }
    Ok(SeminormReport {
        value: total_sq.sqrt(),
        quadrature: SeminormQuadrature {
            coarsest_shell: m_min,
            shells: shells.len(),
            directions: dirs.len(),
        },
    })
}

/// Admissibility report for a potential pair against its class bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub a_sup: f64,
    pub a_seminorm: f64,
    pub q_sup: f64,
    pub sum: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Measure `|A|_inf + |A|_{B^{2,r}_eps} + |q|_inf` and compare to the class
/// bound.
pub fn admissibility_check(p: &PotentialPair) -> Result<AdmissibilityReport> {
    let a_sup = p.a.sup_norm();
    let a_seminorm = diff_seminorm(
        &AnyField::Vector(p.a.clone()),
        p.class.eps,
        p.class.besov_r,
    )?
    .value;
    let q_sup = p.q.sup_norm();
    let sum = a_sup + a_seminorm + q_sup;
    Ok(AdmissibilityReport {
        a_sup,
        a_seminorm,
        q_sup,
        sum,
        bound: p.class.bound,
        pass: sum <= p.class.bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{band_limited_scalar, rough_vector, BoxWindow, RoughFieldSpec};
    use crate::grid::{make_grid, scalar_l2, ScalarField, VectorField};
    use crate::potential::ClassParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn partition_of_unity_on_lattice() {
        for (l, n) in [(4.0, 16), (std::f64::consts::PI, 16), (2.5, 32)] {
            let g = make_grid(l, n).unwrap();
            let fam = LPFamily::new(&g);
            assert!(fam.partition_defect() < 1e-12, "defect at L={l}, N={n}");
        }
    }

    #[test]
    fn block_support() {
        // kappa(2^-j .) vanishes outside [2^{j-1}, 2^{j+1}]
        for j in 1..6usize {
            let lo = 2f64.powi(j as i32 - 1);
            let hi = 2f64.powi(j as i32 + 1);
            for t in 0..200 {
                let r = 0.01 + t as f64 * 0.2;
                let v = kappa(r / 2f64.powi(j as i32));
                if r < lo * 0.999 || r > hi * 1.001 {
                    assert_eq!(v, 0.0, "j={j} r={r}");
                }
            }
        }
    }

    #[test]
    fn lp_project_single_mode_and_reassembly() {
        let g = make_grid(2.0 * std::f64::consts::PI, 32).unwrap();
        let fam = LPFamily::new(&g);
        // |xi0| = 1.5 is on this lattice (frequency unit 1/2) and sits in
        // blocks 0 and 1 only
        let xi0 = [1.5, 0.0, 0.0];
        let u = ScalarField::from_fn(&g, |x| Complex64::new(0.0, x[0] * xi0[0]).exp());
        let r = 1.5;
        for j in 0..=fam.max_block() {
            let proj = lp_project(&fam, &AnyField::Scalar(u.clone()), j).unwrap();
            let expect = fam.block_multiplier(j, r);
            if let AnyField::Scalar(p) = proj {
                let got = p.values[0] / u.values[0];
                assert!(
                    (got - Complex64::new(expect, 0.0)).norm() < 1e-10,
                    "block {j}: got {got}, expected {expect}"
                );
            }
        }
        assert!((fam.block_multiplier(1, r) - kappa(r / 2.0)).abs() < 1e-15);

        // partition reassembly on a covered band-limited field
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let v = band_limited_scalar(&g, fam.coverage_radius(), &mut rng);
        let mut acc = ScalarField::zeros(&g);
        for j in 0..=fam.max_block() {
            if let AnyField::Scalar(p) = lp_project(&fam, &AnyField::Scalar(v.clone()), j).unwrap()
            {
                for (a, b) in acc.values.iter_mut().zip(&p.values) {
                    *a += b;
                }
            }
        }
        let diff: f64 = acc
            .values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-12 * scalar_l2(&v) / g.cell_volume().sqrt());
    }

    #[test]
    fn lp_project_constant_passthrough_and_block_error() {
        let g = make_grid(4.0, 16).unwrap();
        let fam = LPFamily::new(&g);
        let c = ScalarField::from_fn(&g, |_| Complex64::new(2.5, -1.0));
        let p = lp_project(&fam, &AnyField::Scalar(c.clone()), 0).unwrap();
        if let AnyField::Scalar(p) = p {
            for (a, b) in p.values.iter().zip(&c.values) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        let err = lp_project(&fam, &AnyField::Scalar(c), 20);
        assert!(matches!(err, Err(Error::BlockBeyondNyquist { max, .. }) if max == fam.max_block()));
    }

    #[test]
    fn sobolev_norm_values() {
        use std::f64::consts::PI;
        let g = make_grid(PI, 16).unwrap();
        // single mode: (1+|xi0|^2)^{s/2} |u|_L2
        let u = ScalarField::from_fn(&g, |x| Complex64::new(0.0, 2.0 * x[2]).exp());
        let l2 = scalar_l2(&u);
        let s = -0.7;
        let got = sobolev_norm(&AnyField::Scalar(u.clone()), s);
        let expect = (1.0 + 4.0f64).powf(s / 2.0) * l2;
        assert!((got - expect).abs() < 1e-12 * expect);

        // s = 0 equals the L2 norm
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let v = band_limited_scalar(&g, 5.0, &mut rng);
        let got = sobolev_norm(&AnyField::Scalar(v.clone()), 0.0);
        assert!((got - scalar_l2(&v)).abs() < 1e-12 * scalar_l2(&v));

        // dA for A = (0, sin x1, 0) at s = -1: |cos x1|_L2 / sqrt(2)
        let a = VectorField::from_fn(&g, |x| {
            [
                Complex64::default(),
                Complex64::new(x[0].sin(), 0.0),
                Complex64::default(),
            ]
        });
        let da = a.d();
        let cos = ScalarField::from_fn(&g, |x| Complex64::new(x[0].cos(), 0.0));
        let expect = scalar_l2(&cos) / 2f64.sqrt();
        let got = sobolev_norm(&AnyField::TwoForm(da), -1.0);
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn besov_norm_zero_and_single_block() {
        let g = make_grid(std::f64::consts::PI, 32).unwrap();
        let z = ScalarField::zeros(&g);
        let rep = besov_norm(
            &AnyField::Scalar(z),
            BesovParams {
                s: -0.5,
                r: BesovIndex::Two,
            },
        );
        assert_eq!(rep.value, 0.0);

        // mode with |xi0| = 3: inside block 1 (support [1,4]) and block 2
        // ([2,8]); for r = inf the norm is sup_j 2^{sj} kappa_j(3) |u|
        let u = ScalarField::from_fn(&g, |x| Complex64::new(0.0, 3.0 * x[0]).exp());
        let l2 = scalar_l2(&u);
        let s = 0.8;
        let rep = besov_norm(
            &AnyField::Scalar(u),
            BesovParams {
                s,
                r: BesovIndex::Inf,
            },
        );
        let fam = LPFamily::new(&g);
        let mut expect = 0.0f64;
        for j in 0..=fam.max_block() {
            expect = expect.max(2f64.powf(s * j as f64) * fam.block_multiplier(j, 3.0) * l2);
        }
        assert!((rep.value - expect).abs() < 1e-10 * expect);
        assert!(rep.tail_l2 < 1e-12 * l2);
    }

    #[test]
    fn diff_seminorm_basics() {
        let g = make_grid(4.0, 16).unwrap();
        let z = VectorField::zeros(&g);
        let rep = diff_seminorm(&AnyField::Vector(z), 0.5, BesovIndex::Inf).unwrap();
        assert_eq!(rep.value, 0.0);

        // homogeneity of degree 1
        let w = BoxWindow {
            plateau: 0.3,
            support: 0.46,
        };
        let spec = RoughFieldSpec {
            seed: 4,
            ..Default::default()
        };
        let a = rough_vector(&g, &spec, w);
        let mut a2 = a.clone();
        a2.scale(Complex64::new(3.0, 0.0));
        let r1 = diff_seminorm(&AnyField::Vector(a), 0.5, BesovIndex::Inf)
            .unwrap()
            .value;
        let r2 = diff_seminorm(&AnyField::Vector(a2), 0.5, BesovIndex::Inf)
            .unwrap()
            .value;
        assert!((r2 - 3.0 * r1).abs() < 1e-10 * r2);
    }

    #[test]
    fn diff_seminorm_translation_invariance() {
        let g = make_grid(4.0, 16).unwrap();
        let w = BoxWindow {
            plateau: 0.25,
            support: 0.4,
        };
        let spec = RoughFieldSpec {
            seed: 8,
            ..Default::default()
        };
        let a = rough_vector(&g, &spec, w);
        // shift node values by a lattice vector (periodic roll by 3 nodes)
        let shift = 3usize;
        let n = g.n();
        let mut rolled = a.clone();
        for (c_dst, c_src) in rolled.components.iter_mut().zip(&a.components) {
            for i1 in 0..n {
                for i2 in 0..n {
                    for i3 in 0..n {
                        let src = g.flatten(i1, i2, (i3 + shift) % n);
                        c_dst[g.flatten(i1, i2, i3)] = c_src[src];
                    }
                }
            }
        }
        let r1 = diff_seminorm(&AnyField::Vector(a), 0.5, BesovIndex::Two)
            .unwrap()
            .value;
        let r2 = diff_seminorm(&AnyField::Vector(rolled), 0.5, BesovIndex::Two)
            .unwrap()
            .value;
        assert!((r1 - r2).abs() < 1e-10 * r1);
    }

    #[test]
    fn diff_seminorm_single_mode_oracle() {
        // A = (sin x1, 0, 0): |A(.+y) - A|_L2 = 2 |sin(y1/2)| |sin x1|_L2
        use std::f64::consts::PI;
        let g = make_grid(PI, 32).unwrap();
        let a = VectorField::from_fn(&g, |x| {
            [
                Complex64::new(x[0].sin(), 0.0),
                Complex64::default(),
                Complex64::default(),
            ]
        });
        let eps = 0.5;
        let sin_l2 = scalar_l2(&ScalarField::from_fn(&g, |x| {
            Complex64::new(x[0].sin(), 0.0)
        }));
        let got = diff_seminorm(&AnyField::Vector(a), eps, BesovIndex::Inf)
            .unwrap()
            .value;
        // oracle: same shell/direction sampling, closed-form difference
        let dirs = directions26();
        let m_max = (1.0 / g.spacing()).log2().floor() as i32;
        let mut sup = 0.0f64;
        for m in 0..=m_max {
            let radius = 2f64.powi(-m) * std::f64::consts::SQRT_2;
            for d in &dirs {
                let y1 = d[0] * radius;
                let diff = 2.0 * (y1 / 2.0).sin().abs() * sin_l2;
                sup = sup.max(diff / radius.powf(eps));
            }
        }
        assert!(
            (got - sup).abs() < 0.02 * sup,
            "seminorm {got} vs oracle {sup}"
        );
    }

    #[test]
    fn admissibility_examples() {
        let g = make_grid(4.0, 16).unwrap();
        let class = ClassParams {
            bound: 1.0,
            eps: 0.5,
            besov_r: BesovIndex::Inf,
        };
        let p = PotentialPair::zero(&g, 0.5, class);
        let rep = admissibility_check(&p).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.sum, 0.0);

        let mut p2 = PotentialPair::zero(&g, 0.5, class);
        let w = BoxWindow {
            plateau: 0.3,
            support: 0.46,
        };
        p2.q = ScalarField::from_fn(&g, |x| Complex64::new(2.0 * w.eval(x), 0.0));
        let rep = admissibility_check(&p2).unwrap();
        assert!(!rep.pass);
        assert!((rep.q_sup - 2.0).abs() < 1e-12);
    }

    #[test]
    fn generated_pair_measured_bound_passes() {
        let g = make_grid(4.0, 16).unwrap();
        let mut p = crate::potential::generate_pair(&g, &Default::default());
        let rep = admissibility_check(&p).unwrap();
        p.class.bound = (1.1 * rep.sum).max(1.0);
        let rep2 = admissibility_check(&p).unwrap();
        assert!(rep2.pass);
    }
}
