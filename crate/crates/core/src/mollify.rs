//! Smoothing split `A = smooth + rough` by convolution against a compactly
//! supported bump at scale `tau`.
//!
//! The base profile is the standard bump `exp(-1/(1-|x|^2))` renormalized on
//! the grid so its discrete integral is exactly 1. The split obeys two
//! quantitative rates, both checked numerically: the rough part satisfies
//! `|A - Psi_tau * A|_{L^2} <= tau^eps |A|_{B^{2,inf}_eps}` and derivatives
//! of the smooth part satisfy
//! `|d^alpha (Psi_tau * A)|_inf <= |d^alpha Psi|_{L^1} tau^{-|alpha|} |A|_inf`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

/// Discrete mollifier at scale `tau`, normalized to unit discrete mass.
#[derive(Debug, Clone)]
pub struct Mollifier {
    grid: Arc<Grid>,
    pub tau: f64,
    /// Node values of the normalized kernel.
    pub kernel: Vec<f64>,
    /// Spectral coefficients of the kernel.
    kernel_hat: Vec<Complex64>,
}

/// Unnormalized bump profile on the unit ball, as a function of `r^2`.
fn bump_profile(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// Build the scale-`tau` mollifier. Requires `tau >= 2 * spacing` so the
/// kernel is resolvable, and `tau <= 1`.
pub fn make_mollifier(grid: &Arc<Grid>, tau: f64) -> Result<Mollifier> {
    let min_tau = 2.0 * grid.spacing();
    if tau < min_tau - 1e-12 {
        return Err(Error::UnresolvableScale { tau, min: min_tau });
    }
    if tau > 1.0 {
        return Err(Error::Precondition(format!(
            "mollifier scale must satisfy tau <= 1, got {tau}"
        )));
    }
    let mut kernel = vec![0.0; grid.node_count()];
    let mut mass = 0.0;
    for (flat, k) in kernel.iter_mut().enumerate() {
        let x = grid.position(flat);
        let r2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (tau * tau);
        let v = bump_profile(r2);
        *k = v;
        mass += v;
    }
    let scale = 1.0 / (mass * grid.cell_volume());
    for k in kernel.iter_mut() {
        *k *= scale;
    }
    let complex: Vec<Complex64> = kernel.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let kernel_hat = grid.to_spectral(&complex);
    Ok(Mollifier {
        grid: grid.clone(),
        tau,
        kernel,
        kernel_hat,
    })
}

impl Mollifier {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Discrete integral of the kernel (1 up to rounding).
    pub fn mass(&self) -> f64 {
        self.kernel.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Kernel transform at a frequency vector, by direct quadrature; used by
    /// single-mode oracles.
    pub fn kernel_hat_at(&self, xi: [f64; 3]) -> Complex64 {
        let mut acc = Complex64::default();
        for (flat, k) in self.kernel.iter().enumerate() {
            if *k == 0.0 {
                continue;
            }
            let x = self.grid.position(flat);
            let phase = x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2];
            acc += Complex64::new(0.0, phase).exp() * *k;
        }
        acc * self.grid.cell_volume()
    }

    /// FFT convolution of one component with the kernel.
    pub fn convolve(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut coeffs = self.grid.to_spectral(values);
        for (c, k) in coeffs.iter_mut().zip(&self.kernel_hat) {
            *c *= k;
        }
        self.grid.to_physical(&coeffs)
    }
}

/// The two halves of the mollifier split.
#[derive(Debug, Clone)]
pub struct SplitField {
    pub smooth: VectorField,
    pub rough: VectorField,
}

fn support_radius_inf(values: &[Complex64], grid: &Grid, floor: f64) -> f64 {
    let mut r = 0.0f64;
    for (flat, v) in values.iter().enumerate() {
        if v.norm() > floor {
            let x = grid.position(flat);
            r = r.max(x[0].abs().max(x[1].abs()).max(x[2].abs()));
        }
    }
    r
}

/// Split `A` into a convolved smooth part and the exact complement.
///
/// Errors when the support of `A` comes within `tau` of the box boundary, so
/// periodic wrap-around cannot contaminate the convolution.
pub fn split(a: &VectorField, mol: &Mollifier) -> Result<SplitField> {
    let g = a.grid();
    let sup = a.sup_norm();
    let floor = sup * 1e-14;
    let mut radius = 0.0f64;
    for c in &a.components {
        radius = radius.max(support_radius_inf(c, g, floor));
    }
    let available = g.half_width() - radius;
    if available < mol.tau {
        return Err(Error::SupportCollar {
            needed: mol.tau,
            available,
        });
    }
    let smooth = VectorField::from_components(
        g,
        [
            mol.convolve(&a.components[0]),
            mol.convolve(&a.components[1]),
            mol.convolve(&a.components[2]),
        ],
    );
    let mut rough = a.clone();
    for (r, s) in rough.components.iter_mut().zip(&smooth.components) {
        for (rv, sv) in r.iter_mut().zip(s) {
            *rv -= sv;
        }
    }
    Ok(SplitField { smooth, rough })
}

/// Scalar variant of [`split`].
pub fn split_scalar(q: &ScalarField, mol: &Mollifier) -> Result<(ScalarField, ScalarField)> {
    let g = q.grid();
    let radius = support_radius_inf(&q.values, g, q.sup_norm() * 1e-14);
    let available = g.half_width() - radius;
    if available < mol.tau {
        return Err(Error::SupportCollar {
            needed: mol.tau,
            available,
        });
    }
    let smooth = ScalarField::from_values(g, mol.convolve(&q.values));
    let mut rough = q.clone();
    for (rv, sv) in rough.values.iter_mut().zip(&smooth.values) {
        *rv -= sv;
    }
    Ok((smooth, rough))
}

/// `|d_axis Psi|_{L^1}` for the unit-scale profile, measured once; enters
/// the smooth-part derivative rate.
pub fn profile_derivative_l1(grid: &Arc<Grid>, axis: usize) -> f64 {
    let mol = make_mollifier(grid, 1.0).expect("unit scale is resolvable on reference grids");
    let complex: Vec<Complex64> = mol.kernel.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let d = grid.derivative(&complex, axis);
    d.iter().map(|v| v.norm()).sum::<f64>() * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{rough_vector, BoxWindow, RoughFieldSpec};
    use crate::grid::{make_grid, vector_l2};

    #[test]
    fn normalization_and_support() {
        let g = make_grid(1.0, 32).unwrap();
        let mol = make_mollifier(&g, 1.0).unwrap();
        assert!((mol.mass() - 1.0).abs() < 1e-10);

        let mol = make_mollifier(&g, 0.25).unwrap();
        assert!((mol.mass() - 1.0).abs() < 1e-10);
        for (flat, k) in mol.kernel.iter().enumerate() {
            let x = g.position(flat);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if r > 0.25 {
                assert_eq!(*k, 0.0);
            }
        }
    }

    #[test]
    fn unresolvable_scale_rejected() {
        let g = make_grid(1.0, 32).unwrap();
        let err = make_mollifier(&g, g.spacing() / 4.0);
        assert!(matches!(err, Err(Error::UnresolvableScale { .. })));
        if let Err(Error::UnresolvableScale { min, .. }) = err {
            assert!((min - 2.0 * g.spacing()).abs() < 1e-15);
        }
    }

    #[test]
    fn split_zero_and_linearity() {
        let g = make_grid(1.0, 32).unwrap();
        let mol = make_mollifier(&g, 0.25).unwrap();
        let z = VectorField::zeros(&g);
        let s = split(&z, &mol).unwrap();
        assert_eq!(vector_l2(&s.smooth), 0.0);
        assert_eq!(vector_l2(&s.rough), 0.0);

        let w = BoxWindow {
            plateau: 0.3,
            support: 0.5,
        };
        let a = rough_vector(
            &g,
            &RoughFieldSpec {
                seed: 3,
                ..Default::default()
            },
            w,
        );
        let b = rough_vector(
            &g,
            &RoughFieldSpec {
                seed: 5,
                ..Default::default()
            },
            w,
        );
        let mut ab = a.clone();
        for (c, d) in ab.components.iter_mut().zip(&b.components) {
            for (x, y) in c.iter_mut().zip(d) {
                *x += y;
            }
        }
        let sa = split(&a, &mol).unwrap();
        let sb = split(&b, &mol).unwrap();
        let sab = split(&ab, &mol).unwrap();
        let scale = vector_l2(&sab.smooth).max(1e-300);
        for k in 0..3 {
            for i in 0..g.node_count() {
                let lin = sa.smooth.components[k][i] + sb.smooth.components[k][i];
                assert!((sab.smooth.components[k][i] - lin).norm() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn split_single_mode_oracle() {
        // A = (sin x3, 0, 0): the smooth part scales the mode by the real
        // factor kernel_hat(e3), so |rough|_2 = |1 - kernel_hat(e3)| |A|_2.
        use std::f64::consts::PI;
        let g = make_grid(PI, 64).unwrap();
        let a = VectorField::from_fn(&g, |x| {
            [
                Complex64::new(x[2].sin(), 0.0),
                Complex64::default(),
                Complex64::default(),
            ]
        });
        // sin has no compact support; convolve directly (periodic convolution
        // is exact for a lattice mode) instead of going through the collar
        // check in `split`
        let mol = make_mollifier(&g, 0.5).unwrap();
        let smooth = mol.convolve(&a.components[0]);
        let mut rough = a.components[0].clone();
        for (rv, sv) in rough.iter_mut().zip(&smooth) {
            *rv -= sv;
        }
        let factor = mol.kernel_hat_at([0.0, 0.0, 1.0]);
        assert!(factor.im.abs() < 1e-10);
        let a_l2 = vector_l2(&a);
        let expect = (Complex64::new(1.0, 0.0) - factor).norm() * a_l2;
        let got = (rough.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_volume()).sqrt();
        assert!(
            (got - expect).abs() < 1e-8 * a_l2,
            "rough {got} vs oracle {expect}"
        );
    }

    #[test]
    fn collar_violation_rejected() {
        let g = make_grid(1.0, 32).unwrap();
        let w = BoxWindow {
            plateau: 0.6,
            support: 0.9,
        };
        let a = rough_vector(
            &g,
            &RoughFieldSpec {
                seed: 1,
                ..Default::default()
            },
            w,
        );
        let mol = make_mollifier(&g, 0.5).unwrap();
        assert!(matches!(split(&a, &mol), Err(Error::SupportCollar { .. })));
    }

    #[test]
    fn rough_part_rate_and_derivative_bound() {
        let g = make_grid(1.0, 64).unwrap();
        let eps = 0.5;
        let w = BoxWindow {
            plateau: 0.25,
            support: 0.4,
        };
        let spec = RoughFieldSpec {
            eps,
            base_freq: 4.0,
            shells: 6,
            modes_per_shell: 24,
            amplitude: 1.0,
            seed: 12,
        };
        let a = rough_vector(&g, &spec, w);
        let seminorm = crate::besov::diff_seminorm(
            &crate::grid::AnyField::Vector(a.clone()),
            eps,
            crate::besov::BesovIndex::Inf,
        )
        .unwrap()
        .value;
        for tau in [0.5, 0.25, 0.125, 0.0625] {
            let mol = make_mollifier(&g, tau).unwrap();
            let s = split(&a, &mol).unwrap();
            let ratio = vector_l2(&s.rough) / tau.powf(eps);
            assert!(
                ratio <= 1.2 * seminorm,
                "tau={tau}: ratio {ratio} vs seminorm {seminorm}"
            );
        }
        // smooth-part gradient grows no faster than tau^{-1}
        let tau = 0.125;
        let mol = make_mollifier(&g, tau).unwrap();
        let s = split(&a, &mol).unwrap();
        let sup_a = a.sup_norm();
        let c_psi = profile_derivative_l1(&g, 0);
        for axis in 0..3 {
            let d = g.derivative(&s.smooth.components[0], axis);
            let sup_d = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(
                sup_d <= c_psi * sup_a / tau * 1.05,
                "axis {axis}: {sup_d} vs bound {}",
                c_psi * sup_a / tau
            );
        }
    }
}
