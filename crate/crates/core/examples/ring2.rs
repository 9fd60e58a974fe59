use cgolab_core::gen::smoothstep;
use cgolab_core::grid::{make_grid, ScalarField};
use num_complex::Complex64;

fn main() {
    let g = make_grid(2.0, 48).unwrap();
    let rho = ScalarField::from_fn(&g, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        Complex64::new(smoothstep((0.85 - r) / 0.45), 0.0)
    });
    let grad = rho.d();
    let mut sup_in = 0.0f64;
    let mut sup_out = 0.0f64;
    for flat in 0..g.node_count() {
        let x = g.position(flat);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let mag = (0..3)
            .map(|a| grad.components[a][flat].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if r <= 1.0 {
            sup_in = sup_in.max(mag);
        } else {
            sup_out = sup_out.max(mag);
        }
    }
    println!("L=2 N=48: sup_in={sup_in:.3} sup_out={sup_out:.3e} ratio={:.3e}", sup_out / sup_in);
}
