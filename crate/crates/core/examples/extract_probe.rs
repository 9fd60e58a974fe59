//! Extraction error-curve probe for single-mode differences.

use cgolab_core::besov::BesovIndex;
use cgolab_core::gen::BoxWindow;
use cgolab_core::grid::{make_grid, ScalarField, VectorField};
use cgolab_core::potential::{ClassParams, PotentialPair};
use cgolab_core::reconstruct::{build_frame_pair, extract_da_hat, two_form_coeff_at, ExtractionMode};
use num_complex::Complex64;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    let kmax: i32 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let l: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let g = make_grid(l, n).unwrap();
    let unit = g.freq_unit();
    let w = BoxWindow { plateau: 0.32, support: 0.46 };
    let amp = 0.02;
    let delta = VectorField::from_fn(&g, |x| {
        [
            Complex64::new(amp * w.eval(x) * (2.0 * unit * x[2]).cos(), 0.0),
            Complex64::default(),
            Complex64::default(),
        ]
    });
    let class = ClassParams { bound: 2.0, eps: 0.5, besov_r: BesovIndex::Inf };
    let bg_amp: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let mut base = PotentialPair::zero(&g, 0.46, class);
    if bg_amp > 0.0 {
        let base_freq: f64 = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(2.0);
        let shells: usize = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(4);
        let window = cgolab_core::gen::BoxWindow { plateau: 0.3, support: 0.46 };
        let spec = cgolab_core::gen::RoughFieldSpec {
            eps: 0.5,
            base_freq,
            shells,
            modes_per_shell: 64,
            amplitude: bg_amp,
            seed: 77,
        };
        let mut bg_a = cgolab_core::gen::rough_vector(&g, &spec, window);
        cgolab_core::gen::project_zero_mean(&mut bg_a, 0.42);
        let bg_q = cgolab_core::gen::rough_scalar(&g, &spec, window);
        let rough = cgolab_core::potential::PotentialPair {
            a: bg_a,
            q: bg_q,
            support_half_side: 0.46,
            class,
        };
        let sem = cgolab_core::besov::diff_seminorm(
            &cgolab_core::grid::AnyField::Vector(rough.a.clone()),
            0.5,
            BesovIndex::Inf,
        )
        .unwrap()
        .value;
        println!("background: sup={:.3}, seminorm={:.3}", rough.a.sup_norm(), sem);
        base.a = rough.a;
        base.q = rough.q;
    }
    let mut p1 = base.clone();
    for (axis, c) in p1.a.components.iter_mut().enumerate() {
        for (v, d) in c.iter_mut().zip(&delta.components[axis]) {
            *v += d;
        }
    }
    let _ = ScalarField::zeros(&g);
    let xi = [0.0, 0.0, 2.0 * unit];
    let mut diff = p1.a.clone();
    for (axis, c) in diff.components.iter_mut().enumerate() {
        for (v, d) in c.iter_mut().zip(&base.a.components[axis]) {
            *v -= d;
        }
    }
    let truth = two_form_coeff_at(&diff.d(), xi).unwrap();
    let scale: f64 = truth.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    println!("N={n} truth scale {scale:.4e}");
    let mut hs = Vec::new();
    let mut es = Vec::new();
    let kmin: i32 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1);
    for k in kmin..=kmax {
        let h = 2f64.powi(-k);
        let t0 = std::time::Instant::now();
        match build_frame_pair(&p1, &base, xi, h) {
            Ok(frames) => {
                let out = extract_da_hat(&p1, &base, &frames, ExtractionMode::Interior, None, None).unwrap();
                let err: f64 = out.coeffs.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
                println!("  h=2^-{k}: rel_err={:.4e} conv={} time={:?}", err / scale,
                    out.records.iter().all(|r| r.converged), t0.elapsed());
                hs.push(h);
                es.push(err / scale);
            }
            Err(e) => println!("  h=2^-{k}: {e}"),
        }
    }
    if hs.len() >= 2 {
        println!("slope = {:.4} (target {:.4})", cgolab_core::stats::fit_loglog(&hs, &es), 0.5 / 2.5);
    }
}
