//! Deterministic generators for test potentials and random fields.
//!
//! Rough fields with a prescribed Hölder-type L^2 modulus of continuity are
//! built as windowed sums of fixed plane-wave modes whose amplitudes decay
//! like `|omega|^{-(3/2 + eps)}`. The mode list depends only on the seed, so
//! the same field can be sampled on any grid.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::grid::{Grid, ScalarField, TwoFormField, VectorField};

/// Standard normal sample via Box-Muller.
pub fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn complex_gaussian(rng: &mut ChaCha12Rng) -> Complex64 {
    Complex64::new(gaussian(rng), gaussian(rng)) / std::f64::consts::SQRT_2
}

/// Smooth transition equal to 0 for `t <= 0` and 1 for `t >= 1`.
pub fn smoothstep(t: f64) -> f64 {
    fn m(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }
    let a = m(t);
    let b = m(1.0 - t);
    a / (a + b)
}

/// Radial bump `exp(-1/(1 - r^2))` supported in `|x| <= radius`, peak 1 at 0.
pub fn radial_bump(x: [f64; 3], radius: f64) -> f64 {
    let r2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Smooth box window: 1 on `|x_a| <= plateau`, 0 outside `|x_a| >= support`.
#[derive(Debug, Clone, Copy)]
pub struct BoxWindow {
    pub plateau: f64,
    pub support: f64,
}

impl BoxWindow {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut w = 1.0;
        for a in x {
            w *= smoothstep((self.support - a.abs()) / (self.support - self.plateau));
        }
        w
    }
}

/// Fixed list of plane-wave modes with Hölder-type amplitude decay.
///
/// Frequencies populate dyadic shells `base_freq * [2^j, 2^{j+1})` for
/// `j < shells`; amplitudes scale like `|omega|^{-(3/2 + eps)}`.
#[derive(Debug, Clone)]
pub struct RoughFieldSpec {
    pub eps: f64,
    pub base_freq: f64,
    pub shells: usize,
    pub modes_per_shell: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for RoughFieldSpec {
    fn default() -> Self {
        RoughFieldSpec {
            eps: 0.5,
            base_freq: 2.0,
            shells: 7,
            modes_per_shell: 24,
            amplitude: 1.0,
            seed: 1,
        }
    }
}

/// One real-valued mode sum; evaluation is grid independent.
#[derive(Debug, Clone)]
pub struct ModeSum {
    modes: Vec<([f64; 3], f64, f64)>, // (omega, cos coef, sin coef)
}

impl ModeSum {
    pub fn new(spec: &RoughFieldSpec, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(stream));
        let mut modes = Vec::new();
        let mut norm2 = 0.0;
        for j in 0..spec.shells {
            let lo = spec.base_freq * (1 << j) as f64;
            for _ in 0..spec.modes_per_shell {
                let dir = {
                    let v = [gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                    [v[0] / n, v[1] / n, v[2] / n]
                };
                let r = lo * (1.0 + rng.random::<f64>());
                let omega = [dir[0] * r, dir[1] * r, dir[2] * r];
                let amp = r.powf(-(1.5 + spec.eps));
                let (c, s) = (amp * gaussian(&mut rng), amp * gaussian(&mut rng));
                norm2 += c * c + s * s;
                modes.push((omega, c, s));
            }
        }
        // normalize so the un-windowed RMS is `amplitude`
        let scale = spec.amplitude / (norm2 / 2.0).sqrt().max(1e-300);
        for m in modes.iter_mut() {
            m.1 *= scale;
            m.2 *= scale;
        }
        ModeSum { modes }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut v = 0.0;
        for (omega, c, s) in &self.modes {
            let p = omega[0] * x[0] + omega[1] * x[1] + omega[2] * x[2];
            v += c * p.cos() + s * p.sin();
        }
        v
    }
}

/// Windowed rough scalar field sampled on a grid.
pub fn rough_scalar(grid: &Arc<Grid>, spec: &RoughFieldSpec, window: BoxWindow) -> ScalarField {
    let sum = ModeSum::new(spec, 7);
    ScalarField::from_fn(grid, |x| Complex64::new(window.eval(x) * sum.eval(x), 0.0))
}

/// Windowed rough vector field (independent mode sums per component).
pub fn rough_vector(grid: &Arc<Grid>, spec: &RoughFieldSpec, window: BoxWindow) -> VectorField {
    let sums = [
        ModeSum::new(spec, 11),
        ModeSum::new(spec, 13),
        ModeSum::new(spec, 17),
    ];
    VectorField::from_fn(grid, |x| {
        let w = window.eval(x);
        [
            Complex64::new(w * sums[0].eval(x), 0.0),
            Complex64::new(w * sums[1].eval(x), 0.0),
            Complex64::new(w * sums[2].eval(x), 0.0),
        ]
    })
}

/// Smooth compactly supported scalar field (windowed low-frequency sum).
pub fn smooth_scalar(grid: &Arc<Grid>, seed: u64, amplitude: f64, window: BoxWindow) -> ScalarField {
    let spec = RoughFieldSpec {
        eps: 1.0,
        base_freq: 1.5,
        shells: 2,
        modes_per_shell: 8,
        amplitude,
        seed,
    };
    rough_scalar(grid, &spec, window)
}

/// Smooth compactly supported vector field.
pub fn smooth_vector(grid: &Arc<Grid>, seed: u64, amplitude: f64, window: BoxWindow) -> VectorField {
    let spec = RoughFieldSpec {
        eps: 1.0,
        base_freq: 1.5,
        shells: 2,
        modes_per_shell: 8,
        amplitude,
        seed,
    };
    rough_vector(grid, &spec, window)
}

/// Remove the component means without enlarging the support: subtracts the
/// mean times a normalized interior bump.
pub fn project_zero_mean(field: &mut VectorField, bump_radius: f64) {
    let g = field.grid().clone();
    let cell = g.cell_volume();
    let bump: Vec<f64> = (0..g.node_count())
        .map(|flat| radial_bump(g.position(flat), bump_radius))
        .collect();
    let bump_mass = bump.iter().sum::<f64>() * cell;
    for comp in field.components.iter_mut() {
        let mean: Complex64 = comp.iter().sum::<Complex64>() * cell;
        let corr = mean / bump_mass;
        for (v, b) in comp.iter_mut().zip(&bump) {
            *v -= corr * b;
        }
    }
}

fn band_limited(grid: &Arc<Grid>, cutoff: f64, rng: &mut ChaCha12Rng) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::default(); grid.node_count()];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        let xi = grid.xi(flat);
        let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        if r <= cutoff {
            *c = complex_gaussian(rng);
        }
    }
    let vals = grid.to_physical(&coeffs);
    // normalize to O(1) L2 size
    let n2: f64 = vals.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume();
    let s = 1.0 / n2.sqrt().max(1e-300);
    vals.into_iter().map(|v| v * s).collect()
}

/// Random complex band-limited scalar field with unit L^2 norm.
pub fn band_limited_scalar(grid: &Arc<Grid>, cutoff: f64, rng: &mut ChaCha12Rng) -> ScalarField {
    ScalarField::from_values(grid, band_limited(grid, cutoff, rng))
}

/// Random complex band-limited vector field.
pub fn band_limited_vector(grid: &Arc<Grid>, cutoff: f64, rng: &mut ChaCha12Rng) -> VectorField {
    VectorField::from_components(
        grid,
        [
            band_limited(grid, cutoff, rng),
            band_limited(grid, cutoff, rng),
            band_limited(grid, cutoff, rng),
        ],
    )
}

/// Random complex band-limited 2-form.
pub fn band_limited_two_form(grid: &Arc<Grid>, cutoff: f64, rng: &mut ChaCha12Rng) -> TwoFormField {
    TwoFormField::from_components(
        grid,
        [
            band_limited(grid, cutoff, rng),
            band_limited(grid, cutoff, rng),
            band_limited(grid, cutoff, rng),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn window_is_plateau_and_compact() {
        let w = BoxWindow {
            plateau: 0.3,
            support: 0.45,
        };
        assert_eq!(w.eval([0.0, 0.1, -0.2]), 1.0);
        assert_eq!(w.eval([0.5, 0.0, 0.0]), 0.0);
        let mid = w.eval([0.4, 0.0, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn mode_sum_is_deterministic_and_grid_free() {
        let spec = RoughFieldSpec::default();
        let a = ModeSum::new(&spec, 11);
        let b = ModeSum::new(&spec, 11);
        let x = [0.17, -0.53, 0.21];
        assert_eq!(a.eval(x), b.eval(x));
    }

    #[test]
    fn zero_mean_projection_kills_means() {
        let g = make_grid(4.0, 16).unwrap();
        let w = BoxWindow {
            plateau: 0.3,
            support: 0.48,
        };
        let mut a = smooth_vector(&g, 5, 1.0, w);
        project_zero_mean(&mut a, 0.4);
        let cell = g.cell_volume();
        for comp in &a.components {
            let mean: Complex64 = comp.iter().sum::<Complex64>() * cell;
            assert!(mean.norm() < 1e-12);
        }
        // support still inside the window
        for (flat, v) in a.components[0].iter().enumerate() {
            let x = g.position(flat);
            if x.iter().any(|c| c.abs() > 0.49) {
                assert_eq!(v.norm(), 0.0);
            }
        }
    }
}
