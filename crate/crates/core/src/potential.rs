//! Potential pairs `(A, q)` compactly supported in a cube, with their
//! admissibility class parameters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::besov::BesovIndex;
use crate::error::{Error, Result};
use crate::gen::{project_zero_mean, rough_scalar, rough_vector, BoxWindow, RoughFieldSpec};
use crate::grid::{Grid, ScalarField, VectorField};

/// A priori class parameters: bound `M >= 1`, Hölder exponent
/// `eps in (0,1)`, Besov integrability index `r`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassParams {
    pub bound: f64,
    pub eps: f64,
    pub besov_r: BesovIndex,
}

/// Magnetic and electric potentials supported in the cube
/// `|x_a| <= support_half_side`, extended by zero to the box.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub a: VectorField,
    pub q: ScalarField,
    /// Half side of the axis-aligned support cube (centered at the origin).
    pub support_half_side: f64,
    pub class: ClassParams,
}

impl PotentialPair {
    /// Zero potentials with the given class parameters.
    pub fn zero(grid: &Arc<Grid>, support_half_side: f64, class: ClassParams) -> Self {
        PotentialPair {
            a: VectorField::zeros(grid),
            q: ScalarField::zeros(grid),
            support_half_side,
            class,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.a.grid()
    }

    /// True when both fields vanish at every node outside the support cube.
    pub fn support_ok(&self) -> bool {
        let g = self.grid();
        let half = self.support_half_side + 1e-12;
        for flat in 0..g.node_count() {
            let x = g.position(flat);
            if x.iter().any(|c| c.abs() > half) {
                if self.q.values[flat].norm() != 0.0 {
                    return false;
                }
                if self.a.components.iter().any(|c| c[flat].norm() != 0.0) {
                    return false;
                }
            }
        }
        true
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.class.bound >= 1.0) {
            return Err(Error::Precondition(format!(
                "class bound must be >= 1, got {}",
                self.class.bound
            )));
        }
        if !(self.class.eps > 0.0 && self.class.eps < 1.0) {
            return Err(Error::Precondition(format!(
                "Hölder exponent must lie in (0,1), got {}",
                self.class.eps
            )));
        }
        if !self.a.is_finite() || !self.q.is_finite() {
            return Err(Error::Precondition("potential has non-finite values".into()));
        }
        if !self.support_ok() {
            return Err(Error::Precondition(
                "potential does not vanish outside its support cube".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters for a generated rough admissible pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedPairSpec {
    pub seed: u64,
    pub eps: f64,
    pub besov_r: BesovIndex,
    pub amplitude_a: f64,
    pub amplitude_q: f64,
    /// Plateau half-side of the support window.
    pub plateau: f64,
    /// Support half-side of the window (strictly inside the domain cube).
    pub support: f64,
    /// Dyadic frequency shells in the mode sum.
    pub shells: usize,
    /// Project the magnetic components to zero mean (keeps Hodge comparisons
    /// against the free-space oracle clean).
    pub zero_mean_a: bool,
}

impl Default for GeneratedPairSpec {
    fn default() -> Self {
        GeneratedPairSpec {
            seed: 1,
            eps: 0.5,
            besov_r: BesovIndex::Inf,
            amplitude_a: 0.15,
            amplitude_q: 0.3,
            plateau: 0.3,
            support: 0.46,
            shells: 6,
            zero_mean_a: true,
        }
    }
}

/// Generate a rough pair. The class bound starts at 1 and is usually reset to
/// 1.1 x the measured admissibility sum.
pub fn generate_pair(grid: &Arc<Grid>, spec: &GeneratedPairSpec) -> PotentialPair {
    let window = BoxWindow {
        plateau: spec.plateau,
        support: spec.support,
    };
    let rough = RoughFieldSpec {
        eps: spec.eps,
        base_freq: 2.0,
        shells: spec.shells,
        modes_per_shell: 24,
        amplitude: spec.amplitude_a,
        seed: spec.seed,
    };
    let mut a = rough_vector(grid, &rough, window);
    if spec.zero_mean_a {
        project_zero_mean(&mut a, spec.plateau.min(0.45));
    }
    let rough_q = RoughFieldSpec {
        amplitude: spec.amplitude_q,
        seed: spec.seed.wrapping_add(101),
        ..rough
    };
    let q = rough_scalar(grid, &rough_q, window);
    PotentialPair {
        a,
        q,
        support_half_side: spec.support,
        class: ClassParams {
            bound: 1.0,
            eps: spec.eps,
            besov_r: spec.besov_r,
        },
    }
}
