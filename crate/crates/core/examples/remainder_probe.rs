//! Remainder-rate probe: |r|_{H^1_scl} and |w|_{H^-1_scl} against h.

use cgolab_core::cgo::{build_cgo, make_zetas, Which};
use cgolab_core::grid::make_grid;
use cgolab_core::potential::{generate_pair, GeneratedPairSpec};
use cgolab_core::stats::fit_loglog;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let l: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let amp: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let g = make_grid(l, n).unwrap();
    let mut pair = generate_pair(
        &g,
        &GeneratedPairSpec {
            seed: 5,
            eps: 0.5,
            amplitude_a: amp,
            amplitude_q: amp * 2.0,
            shells: 4,
            ..Default::default()
        },
    );
    pair.class.bound = 3.0;
    let xi = [0.0, 0.0, 2.0 * g.freq_unit()];
    let mut hs = Vec::new();
    let mut rs = Vec::new();
    let mut ws = Vec::new();
    for k in 2..=6 {
        let h = 2f64.powi(-k);
        let z = match make_zetas(xi, h) {
            Ok(z) => z,
            Err(e) => { println!("h=2^-{k}: {e}"); continue; }
        };
        match build_cgo(&pair, &z, Which::One, 0.5) {
            Ok(sol) => {
                println!(
                    "h=2^-{k}: |r|_H1scl(dom)={:.4e} (box {:.4e}) |w|_Hm1scl={:.4e} conv={}",
                    sol.diag.remainder.remainder_h1scl_domain,
                    sol.diag.remainder.remainder_h1scl,
                    sol.diag.w_hm1scl,
                    sol.diag.converged,
                );
                hs.push(h);
                rs.push(sol.diag.remainder.remainder_h1scl_domain);
                ws.push(sol.diag.w_hm1scl);
            }
            Err(e) => println!("h=2^-{k}: {e}"),
        }
    }
    println!(
        "r-slope = {:.4} (target {:.4}), w-slope = {:.4} (target {:.4})",
        fit_loglog(&hs, &rs),
        0.5 / 2.5,
        fit_loglog(&hs, &ws),
        1.0 + 0.5 / 2.5
    );
}
