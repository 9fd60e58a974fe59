//! Symmetry and convergence probe for the masked Hodge solves.

use cgolab_core::gen::{project_zero_mean, rough_vector, BoxWindow, RoughFieldSpec};
use cgolab_core::hodge::{decompose_ball, helmholtz_oracle, BallGeometry, HodgeOptions};
use cgolab_core::grid::{make_grid, vector_l2};

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(24);
    let g = make_grid(4.0, n).unwrap();
    let w = BoxWindow {
        plateau: 0.3,
        support: 0.46,
    };
    let mut u = rough_vector(
        &g,
        &RoughFieldSpec {
            seed: 21,
            shells: 4,
            ..Default::default()
        },
        w,
    );
    project_zero_mean(&mut u, 0.4);
    let geom = BallGeometry {
        inner_radius: 1.0,
        outer_radius: 1.6,
    };
    let t0 = std::time::Instant::now();
    let mut opts = HodgeOptions::default();
    opts.completion_passes = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(opts.completion_passes);
    let h = decompose_ball(&u, geom, opts).unwrap();
    println!(
        "N={n}: residual_rel={:.3e} ntrace={:.3e} coexact={:.4} u-dpsi={:.4} time={:?}",
        h.residual_rel,
        h.normal_trace_rel,
        h.coexact_l2,
        h.u_minus_dpsi_l2,
        t0.elapsed()
    );
    for (i, s) in h.stats.iter().enumerate() {
        println!(
            "  solve {i}: iters={} residual={:.3e} converged={}",
            s.iterations, s.residual, s.converged
        );
    }
    let split = helmholtz_oracle(&u);
    println!(
        "oracle divfree = {:.4}, stage1 coexact = {:.4} (gap {:.2}%), final coexact = {:.4} (gap {:.2}%)",
        vector_l2(&split.divergence_free),
        h.coexact_stage1_l2,
        100.0 * (h.coexact_stage1_l2 - vector_l2(&split.divergence_free)).abs()
            / vector_l2(&split.divergence_free),
        h.coexact_l2,
        100.0 * (h.coexact_l2 - vector_l2(&split.divergence_free)).abs()
            / vector_l2(&split.divergence_free)
    );
}
