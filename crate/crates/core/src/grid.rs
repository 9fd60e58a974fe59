//! Periodic computational box and complex fields of form degree 0, 1, 2.
//!
//! The box is `[-L, L)^3` sampled on `N` points per axis (N even), with the
//! dual lattice `xi in (pi/L) * Z^3` wrapped to `[-N/2, N/2)` per axis. The
//! Fourier convention is
//!
//! ```text
//! f_hat(xi) = integral f(x) e^{+i x.xi} dx,
//! ```
//!
//! so the differentiation multiplier is `-i xi`. All derivative and
//! codifferential operators are exact spectral operators under this
//! convention; `d` and `delta` are adjoint with respect to the L^2 pairing
//! `<u, v> = integral u conj(v) dx`.
//!
//! 2-forms are stored by components in the fixed order (1,2), (1,3), (2,3).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Degree of a differential form on the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormDegree {
    Scalar,
    OneForm,
    TwoForm,
}

impl FormDegree {
    pub fn as_u8(self) -> u8 {
        match self {
            FormDegree::Scalar => 0,
            FormDegree::OneForm => 1,
            FormDegree::TwoForm => 2,
        }
    }

    pub fn component_count(self) -> usize {
        match self {
            FormDegree::Scalar => 1,
            _ => 3,
        }
    }
}

/// Periodic box `[-L, L)^3` with `N` nodes per axis and FFT plans.
pub struct Grid {
    half_width: f64,
    n: usize,
    spacing: f64,
    freq_unit: f64,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("half_width", &self.half_width)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.half_width == other.half_width
    }
}

/// Build a grid. `N` must be even with `8 <= N <= 256`, `L > 0`.
pub fn make_grid(half_width: f64, n: usize) -> Result<Arc<Grid>> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::GridParam(format!(
            "half-width must be positive and finite, got {half_width}"
        )));
    }
    if n % 2 != 0 || !(8..=256).contains(&n) {
        return Err(Error::GridParam(format!(
            "points per axis must be even and in [8, 256], got {n}"
        )));
    }
    let mut planner = FftPlanner::new();
    Ok(Arc::new(Grid {
        half_width,
        n,
        spacing: 2.0 * half_width / n as f64,
        freq_unit: std::f64::consts::PI / half_width,
        fft_fwd: planner.plan_fft_forward(n),
        fft_inv: planner.plan_fft_inverse(n),
    }))
}

impl Grid {
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Frequency quantum `pi / L`.
    pub fn freq_unit(&self) -> f64 {
        self.freq_unit
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Volume element of the node quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    /// Largest per-axis frequency magnitude, `(pi/L) * N/2`.
    pub fn nyquist_radius(&self) -> f64 {
        self.freq_unit * (self.n / 2) as f64
    }

    /// Node coordinate along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    /// Node position from a flat index.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let [i1, i2, i3] = self.unflatten(flat);
        [self.coord(i1), self.coord(i2), self.coord(i3)]
    }

    /// Wrapped integer frequency along one axis.
    pub fn wrapped(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Dual-lattice point from a flat index.
    pub fn xi(&self, flat: usize) -> [f64; 3] {
        let [k1, k2, k3] = self.unflatten(flat);
        [
            self.freq_unit * self.wrapped(k1) as f64,
            self.freq_unit * self.wrapped(k2) as f64,
            self.freq_unit * self.wrapped(k3) as f64,
        ]
    }

    pub fn flatten(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.n + i2) * self.n + i3
    }

    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let i3 = flat % self.n;
        let rest = flat / self.n;
        [rest / self.n, rest % self.n, i3]
    }

    fn fft3(&self, values: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        debug_assert_eq!(values.len(), n * n * n);
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        // axis 3: contiguous lines
        for line in values.chunks_exact_mut(n) {
            fft.process_with_scratch(line, &mut scratch);
        }
        // axes 2 and 1: gather strided lines
        let mut line = vec![Complex64::default(); n];
        for (axis_stride, outer, inner) in [(n, n, n), (n * n, n, n)] {
            let axis1 = axis_stride == n * n;
            for a in 0..outer {
                for b in 0..inner {
                    let base = if axis1 { a * n + b } else { a * n * n + b };
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = values[base + j * axis_stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, slot) in line.iter().enumerate() {
                        values[base + j * axis_stride] = *slot;
                    }
                }
            }
        }
    }

    /// Forward transform: `f_hat(xi_k) = spacing^3 * (-1)^{k1+k2+k3} * IDFT(f)`.
    pub fn to_spectral(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut out = values.to_vec();
        self.fft3(&mut out, &self.fft_inv);
        let scale = self.cell_volume();
        self.apply_center_phase(&mut out, scale);
        out
    }

    /// Inverse transform of [`Grid::to_spectral`].
    pub fn to_physical(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = coeffs.to_vec();
        self.apply_center_phase(&mut out, 1.0);
        self.fft3(&mut out, &self.fft_fwd);
        let scale = 1.0 / (2.0 * self.half_width).powi(3);
        for v in out.iter_mut() {
            *v *= scale;
        }
        out
    }

    /// Multiply entry `k` by `scale * (-1)^{k1+k2+k3}`, the phase that centers
    /// the transform at the box midpoint.
    fn apply_center_phase(&self, values: &mut [Complex64], scale: f64) {
        let n = self.n;
        for i1 in 0..n {
            for i2 in 0..n {
                let row = (i1 * n + i2) * n;
                let base_parity = (i1 + i2) % 2;
                for i3 in 0..n {
                    let s = if (base_parity + i3) % 2 == 0 {
                        scale
                    } else {
                        -scale
                    };
                    values[row + i3] *= s;
                }
            }
        }
    }

    /// Apply a Fourier multiplier `m(xi)` to node values.
    pub fn apply_multiplier<F>(&self, values: &[Complex64], m: F) -> Vec<Complex64>
    where
        F: Fn([f64; 3]) -> Complex64,
    {
        let mut coeffs = self.to_spectral(values);
        for (flat, c) in coeffs.iter_mut().enumerate() {
            *c *= m(self.xi(flat));
        }
        self.to_physical(&coeffs)
    }

    /// Spectral partial derivative along `axis` (multiplier `-i xi_axis`).
    pub fn derivative(&self, values: &[Complex64], axis: usize) -> Vec<Complex64> {
        assert!(axis < 3);
        self.apply_multiplier(values, |xi| Complex64::new(0.0, -xi[axis]))
    }
}

/// Compensated (Kahan) summation of complex terms.
pub fn kahan_sum<I: IntoIterator<Item = Complex64>>(terms: I) -> Complex64 {
    let mut sum = Complex64::default();
    let mut comp = Complex64::default();
    for t in terms {
        let y = t - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
    }
    sum
}

/// Compensated summation of real terms.
pub fn kahan_sum_real<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for t in terms {
        let y = t - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
    }
    sum
}

macro_rules! field_common {
    ($name:ident) => {
        impl $name {
            pub fn grid(&self) -> &Arc<Grid> {
                &self.grid
            }

            /// True when all stored values are finite.
            pub fn is_finite(&self) -> bool {
                self.component_slices()
                    .iter()
                    .all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
            }
        }
    };
}

/// Complex scalar field (0-form) on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    pub values: Vec<Complex64>,
}

field_common!(ScalarField);

/// Complex vector field, identified with a 1-form.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    pub components: [Vec<Complex64>; 3],
}

field_common!(VectorField);

/// Complex 2-form stored by components (1,2), (1,3), (2,3).
#[derive(Debug, Clone)]
pub struct TwoFormField {
    grid: Arc<Grid>,
    pub components: [Vec<Complex64>; 3],
}

field_common!(TwoFormField);

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![Complex64::default(); grid.node_count()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), grid.node_count());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    /// Sample a closure at the grid nodes.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.node_count())
            .map(|flat| f(grid.position(flat)))
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn component_slices(&self) -> Vec<&[Complex64]> {
        vec![&self.values]
    }

    pub fn degree(&self) -> FormDegree {
        FormDegree::Scalar
    }

    /// Exterior derivative of a 0-form: the gradient.
    pub fn d(&self) -> VectorField {
        let g = &self.grid;
        VectorField {
            grid: g.clone(),
            components: [
                g.derivative(&self.values, 0),
                g.derivative(&self.values, 1),
                g.derivative(&self.values, 2),
            ],
        }
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in self.values.iter_mut() {
            *v *= s;
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let z = vec![Complex64::default(); grid.node_count()];
        VectorField {
            grid: grid.clone(),
            components: [z.clone(), z.clone(), z],
        }
    }

    pub fn from_components(grid: &Arc<Grid>, components: [Vec<Complex64>; 3]) -> Self {
        for c in &components {
            assert_eq!(c.len(), grid.node_count());
        }
        VectorField {
            grid: grid.clone(),
            components,
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> [Complex64; 3]) -> Self {
        let mut components = [
            Vec::with_capacity(grid.node_count()),
            Vec::with_capacity(grid.node_count()),
            Vec::with_capacity(grid.node_count()),
        ];
        for flat in 0..grid.node_count() {
            let v = f(grid.position(flat));
            for (c, val) in components.iter_mut().zip(v) {
                c.push(val);
            }
        }
        VectorField {
            grid: grid.clone(),
            components,
        }
    }

    pub fn component_slices(&self) -> Vec<&[Complex64]> {
        self.components.iter().map(|c| c.as_slice()).collect()
    }

    pub fn degree(&self) -> FormDegree {
        FormDegree::OneForm
    }

    /// Exterior derivative of a 1-form: component (j,k) is
    /// `d_j A_k - d_k A_j`.
    pub fn d(&self) -> TwoFormField {
        let g = &self.grid;
        let [a1, a2, a3] = &self.components;
        let pair = |j: &Vec<Complex64>, k: &Vec<Complex64>, ja: usize, ka: usize| {
            let djk = g.derivative(k, ja);
            let dkj = g.derivative(j, ka);
            djk.iter().zip(dkj).map(|(x, y)| x - y).collect::<Vec<_>>()
        };
        TwoFormField {
            grid: g.clone(),
            components: [pair(a1, a2, 0, 1), pair(a1, a3, 0, 2), pair(a2, a3, 1, 2)],
        }
    }

    /// Codifferential of a 1-form: `-div`.
    pub fn delta(&self) -> ScalarField {
        let g = &self.grid;
        let d1 = g.derivative(&self.components[0], 0);
        let d2 = g.derivative(&self.components[1], 1);
        let d3 = g.derivative(&self.components[2], 2);
        let values = d1
            .iter()
            .zip(d2.iter().zip(d3))
            .map(|(a, (b, c))| -(a + b + c))
            .collect();
        ScalarField {
            grid: g.clone(),
            values,
        }
    }

    pub fn scale(&mut self, s: Complex64) {
        for c in self.components.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Pointwise Euclidean sup norm `sup_x |A(x)|`.
    pub fn sup_norm(&self) -> f64 {
        let [a1, a2, a3] = &self.components;
        (0..a1.len())
            .map(|i| (a1[i].norm_sqr() + a2[i].norm_sqr() + a3[i].norm_sqr()).sqrt())
            .fold(0.0, f64::max)
    }
}

impl TwoFormField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let z = vec![Complex64::default(); grid.node_count()];
        TwoFormField {
            grid: grid.clone(),
            components: [z.clone(), z.clone(), z],
        }
    }

    pub fn from_components(grid: &Arc<Grid>, components: [Vec<Complex64>; 3]) -> Self {
        for c in &components {
            assert_eq!(c.len(), grid.node_count());
        }
        TwoFormField {
            grid: grid.clone(),
            components,
        }
    }

    pub fn component_slices(&self) -> Vec<&[Complex64]> {
        self.components.iter().map(|c| c.as_slice()).collect()
    }

    pub fn degree(&self) -> FormDegree {
        FormDegree::TwoForm
    }

    /// Codifferential of a 2-form, the adjoint of `d` on 1-forms:
    ///
    /// ```text
    /// (delta F)_1 =  d2 F12 + d3 F13
    /// (delta F)_2 = -d1 F12 + d3 F23
    /// (delta F)_3 = -d1 F13 - d2 F23
    /// ```
    pub fn delta(&self) -> VectorField {
        let g = &self.grid;
        let [f12, f13, f23] = &self.components;
        let d2_f12 = g.derivative(f12, 1);
        let d3_f13 = g.derivative(f13, 2);
        let d1_f12 = g.derivative(f12, 0);
        let d3_f23 = g.derivative(f23, 2);
        let d1_f13 = g.derivative(f13, 0);
        let d2_f23 = g.derivative(f23, 1);
        let n = g.node_count();
        let mut c1 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        let mut c3 = Vec::with_capacity(n);
        for i in 0..n {
            c1.push(d2_f12[i] + d3_f13[i]);
            c2.push(-d1_f12[i] + d3_f23[i]);
            c3.push(-d1_f13[i] - d2_f23[i]);
        }
        VectorField {
            grid: g.clone(),
            components: [c1, c2, c3],
        }
    }

    pub fn scale(&mut self, s: Complex64) {
        for c in self.components.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// A field of any degree, used by the generic `d`/`delta` entry points and by
/// the CGOF container.
#[derive(Debug, Clone)]
pub enum AnyField {
    Scalar(ScalarField),
    Vector(VectorField),
    TwoForm(TwoFormField),
}

impl AnyField {
    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            AnyField::Scalar(f) => f.grid(),
            AnyField::Vector(f) => f.grid(),
            AnyField::TwoForm(f) => f.grid(),
        }
    }

    pub fn degree(&self) -> FormDegree {
        match self {
            AnyField::Scalar(_) => FormDegree::Scalar,
            AnyField::Vector(_) => FormDegree::OneForm,
            AnyField::TwoForm(_) => FormDegree::TwoForm,
        }
    }

    pub fn component_slices(&self) -> Vec<&[Complex64]> {
        match self {
            AnyField::Scalar(f) => f.component_slices(),
            AnyField::Vector(f) => f.component_slices(),
            AnyField::TwoForm(f) => f.component_slices(),
        }
    }
}

/// Exterior derivative for degree 0 or 1; degree-2 input is rejected.
pub fn d_form(u: &AnyField) -> Result<AnyField> {
    match u {
        AnyField::Scalar(f) => Ok(AnyField::Vector(f.d())),
        AnyField::Vector(f) => Ok(AnyField::TwoForm(f.d())),
        AnyField::TwoForm(_) => Err(Error::DegreeUnsupported(2)),
    }
}

/// Codifferential for degree 1 or 2; degree-0 input is rejected.
pub fn delta_form(u: &AnyField) -> Result<AnyField> {
    match u {
        AnyField::Scalar(_) => Err(Error::DegreeUnsupported(0)),
        AnyField::Vector(f) => Ok(AnyField::Scalar(f.delta())),
        AnyField::TwoForm(f) => Ok(AnyField::Vector(f.delta())),
    }
}

fn check_same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if a.n() != b.n() || a.half_width() != b.half_width() {
        return Err(Error::GridMismatch {
            lhs_n: a.n(),
            lhs_l: a.half_width(),
            rhs_n: b.n(),
            rhs_l: b.half_width(),
        });
    }
    Ok(())
}

fn component_inner(u: &[Complex64], v: &[Complex64], cell: f64) -> Complex64 {
    kahan_sum(u.iter().zip(v).map(|(a, b)| a * b.conj())) * cell
}

/// L^2 pairing `sum u conj(v) * spacing^3` between same-degree fields.
pub fn inner_product(u: &AnyField, v: &AnyField) -> Result<Complex64> {
    check_same_grid(u.grid(), v.grid())?;
    if u.degree() != v.degree() {
        return Err(Error::DegreeUnsupported(v.degree().as_u8()));
    }
    let cell = u.grid().cell_volume();
    let us = u.component_slices();
    let vs = v.component_slices();
    Ok(kahan_sum(
        us.iter().zip(vs).map(|(a, b)| component_inner(a, b, cell)),
    ))
}

/// L^2 norm of a field of any degree.
pub fn l2_norm(u: &AnyField) -> f64 {
    let cell = u.grid().cell_volume();
    let total = kahan_sum_real(
        u.component_slices()
            .iter()
            .map(|c| kahan_sum_real(c.iter().map(|v| v.norm_sqr())) * cell),
    );
    total.max(0.0).sqrt()
}

/// L^2 norm helpers for the concrete field types.
pub fn scalar_l2(u: &ScalarField) -> f64 {
    l2_norm(&AnyField::Scalar(u.clone()))
}

pub fn vector_l2(u: &VectorField) -> f64 {
    l2_norm(&AnyField::Vector(u.clone()))
}

pub fn two_form_l2(u: &TwoFormField) -> f64 {
    l2_norm(&AnyField::TwoForm(u.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::band_limited_scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn make_grid_validates_parameters() {
        assert!(make_grid(std::f64::consts::PI, 16).is_ok());
        assert!(matches!(
            make_grid(std::f64::consts::PI, 7),
            Err(Error::GridParam(_))
        ));
        assert!(make_grid(2.5, 32).is_ok());
        assert!(make_grid(-1.0, 16).is_err());
        assert!(make_grid(1.0, 300).is_err());
    }

    #[test]
    fn grid_spacing_and_frequencies() {
        let g = make_grid(std::f64::consts::PI, 16).unwrap();
        assert!((g.spacing() - 2.0 * std::f64::consts::PI / 16.0).abs() < 1e-15);
        assert!((g.freq_unit() - 1.0).abs() < 1e-15);
        let wrapped: Vec<i64> = (0..16).map(|i| g.wrapped(i)).collect();
        assert_eq!(wrapped[0], 0);
        assert_eq!(wrapped[7], 7);
        assert_eq!(wrapped[8], -8);
        assert_eq!(wrapped[15], -1);

        let g2 = make_grid(2.5, 32).unwrap();
        assert!((g2.spacing() - 0.15625).abs() < 1e-15);
        assert!((g2.freq_unit() - std::f64::consts::PI / 2.5).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_and_parseval() {
        let g = make_grid(1.3, 16).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let u = band_limited_scalar(&g, 6.0, &mut rng);
        let coeffs = g.to_spectral(&u.values);
        let back = g.to_physical(&coeffs);
        let err: f64 = u
            .values
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12 * u.sup_norm());

        // Parseval: |u|_L2^2 = (2L)^-3 sum |u_hat|^2
        let phys = kahan_sum_real(u.values.iter().map(|v| v.norm_sqr())) * g.cell_volume();
        let spec = kahan_sum_real(coeffs.iter().map(|v| v.norm_sqr()))
            / (2.0 * g.half_width()).powi(3);
        assert!(rel(phys, spec) < 1e-12);
    }

    #[test]
    fn single_mode_transform_value() {
        // u = e^{i x . xi0} has spectral mass (2L)^3 at xi0 under this convention.
        let g = make_grid(std::f64::consts::PI, 16).unwrap();
        let xi0 = [1.0, 0.0, 2.0];
        let u = ScalarField::from_fn(&g, |x| {
            Complex64::new(0.0, x[0] * xi0[0] + x[1] * xi0[1] + x[2] * xi0[2]).exp()
        });
        let coeffs = g.to_spectral(&u.values);
        let vol = (2.0 * g.half_width()).powi(3);
        for (flat, c) in coeffs.iter().enumerate() {
            let xi = g.xi(flat);
            // e^{ix.xi0} integrates against e^{+ix.xi}: mass sits at xi = -xi0.
            let expect = if (xi[0] + xi0[0]).abs() < 1e-9
                && (xi[1] + xi0[1]).abs() < 1e-9
                && (xi[2] + xi0[2]).abs() < 1e-9
            {
                Complex64::new(vol, 0.0)
            } else {
                Complex64::default()
            };
            assert!((c - expect).norm() < 1e-9 * vol);
        }
    }

    #[test]
    fn derivative_single_mode() {
        let g = make_grid(std::f64::consts::PI, 16).unwrap();
        let u = ScalarField::from_fn(&g, |x| Complex64::new(x[0].sin(), 0.0));
        let du = g.derivative(&u.values, 0);
        for flat in 0..g.node_count() {
            let x = g.position(flat);
            assert!((du[flat] - Complex64::new(x[0].cos(), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn d_of_single_mode_one_form() {
        // A = (0, sin x1, 0) -> dA has only the (1,2)-component cos x1.
        let g = make_grid(std::f64::consts::PI, 16).unwrap();
        let a = VectorField::from_fn(&g, |x| {
            [
                Complex64::default(),
                Complex64::new(x[0].sin(), 0.0),
                Complex64::default(),
            ]
        });
        let da = a.d();
        for flat in 0..g.node_count() {
            let x = g.position(flat);
            assert!((da.components[0][flat] - Complex64::new(x[0].cos(), 0.0)).norm() < 1e-12);
            assert!(da.components[1][flat].norm() < 1e-12);
            assert!(da.components[2][flat].norm() < 1e-12);
        }
    }

    #[test]
    fn d_compose_d_vanishes() {
        let g = make_grid(1.7, 12).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let psi = band_limited_scalar(&g, 5.0, &mut rng);
        let ddpsi = psi.d().d();
        let scale = psi.sup_norm();
        for c in &ddpsi.components {
            for v in c {
                assert!(v.norm() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn gradient_field_has_no_curl() {
        let g = make_grid(2.0, 16).unwrap();
        let psi = ScalarField::from_fn(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            Complex64::new((-r2).exp() * (1.0 - (r2 / 3.0).min(1.0)).powi(2), 0.0)
        });
        let grad = psi.d();
        let curl = grad.d();
        let num = two_form_l2(&curl);
        let den = vector_l2(&grad);
        assert!(num < 1e-10 * den, "relative curl {}", num / den);
    }

    #[test]
    fn adjointness_of_d_and_delta() {
        let g = make_grid(1.1, 12).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let alpha = crate::gen::band_limited_vector(&g, 4.0, &mut rng);
            let beta = crate::gen::band_limited_two_form(&g, 4.0, &mut rng);
            let lhs = inner_product(
                &AnyField::TwoForm(alpha.d()),
                &AnyField::TwoForm(beta.clone()),
            )
            .unwrap();
            let rhs = inner_product(
                &AnyField::Vector(alpha.clone()),
                &AnyField::Vector(beta.delta()),
            )
            .unwrap();
            let scale = lhs.norm().max(rhs.norm()).max(1e-30);
            assert!((lhs - rhs).norm() < 1e-12 * scale);

            let psi = band_limited_scalar(&g, 4.0, &mut rng);
            let w = crate::gen::band_limited_vector(&g, 4.0, &mut rng);
            let lhs = inner_product(&AnyField::Vector(psi.d()), &AnyField::Vector(w.clone()))
                .unwrap();
            let rhs = inner_product(
                &AnyField::Scalar(psi.clone()),
                &AnyField::Scalar(w.delta()),
            )
            .unwrap();
            let scale = lhs.norm().max(rhs.norm()).max(1e-30);
            assert!((lhs - rhs).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn inner_product_examples() {
        use std::f64::consts::PI;
        let g = make_grid(PI, 16).unwrap();
        let one = ScalarField::from_fn(&g, |_| Complex64::new(1.0, 0.0));
        let ip = inner_product(
            &AnyField::Scalar(one.clone()),
            &AnyField::Scalar(one.clone()),
        )
        .unwrap();
        assert!(rel(ip.re, (2.0 * PI).powi(3)) < 1e-12);

        let e1 = ScalarField::from_fn(&g, |x| Complex64::new(0.0, x[0]).exp());
        let e2 = ScalarField::from_fn(&g, |x| Complex64::new(0.0, 2.0 * x[0]).exp());
        let ip = inner_product(&AnyField::Scalar(e1), &AnyField::Scalar(e2)).unwrap();
        assert!(ip.norm() < 1e-12 * (2.0 * PI).powi(3));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g1 = make_grid(1.0, 8).unwrap();
        let g2 = make_grid(1.0, 16).unwrap();
        let u = ScalarField::zeros(&g1);
        let v = ScalarField::zeros(&g2);
        assert!(matches!(
            inner_product(&AnyField::Scalar(u), &AnyField::Scalar(v)),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn degree_errors() {
        let g = make_grid(1.0, 8).unwrap();
        let f2 = AnyField::TwoForm(TwoFormField::zeros(&g));
        assert!(matches!(d_form(&f2), Err(Error::DegreeUnsupported(2))));
        let f0 = AnyField::Scalar(ScalarField::zeros(&g));
        assert!(matches!(delta_form(&f0), Err(Error::DegreeUnsupported(0))));
    }

    #[test]
    fn delta_of_zero_two_form_is_zero() {
        let g = make_grid(1.0, 8).unwrap();
        let f = TwoFormField::zeros(&g);
        let d = f.delta();
        assert!(vector_l2(&d) == 0.0);
    }
}
