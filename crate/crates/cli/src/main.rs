//! Experiment harness for the boundary-data laboratory: forward solves,
//! Cauchy data assembly, CGO construction, distances, Hodge checks, norms,
//! Fourier extraction, and full stability sweeps.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde_json::json;

use cgolab_core::besov::{besov_norm, diff_seminorm, BesovIndex, BesovParams};
use cgolab_core::cauchy::{assemble_cauchy, dist_cauchy, CauchyData};
use cgolab_core::cgo::{build_cgo, make_zetas, Which};
use cgolab_core::forward::{solve_dirichlet, DirichletProblem, MeshPotentials, OmegaMesh};
use cgolab_core::grid::{AnyField, ScalarField};
use cgolab_core::hodge::{
    decompose_ball, gauge_cutoff, gauge_phi, helmholtz_oracle, BallGeometry, HodgeOptions,
};
use cgolab_core::io::{load_field, load_matrix, save_field, save_matrix};
use cgolab_core::reconstruct::{
    build_frame_pair, extract_da_hat, extract_q_hat, ExtractionMode,
};
use cgolab_core::sweep::{run_sweep, rows_to_csv, SweepConfig};
use cgolab_core::{inner_product, VectorField};

#[derive(Parser)]
#[command(name = "cgolab", about = "numerical laboratory for magnetic Schrödinger boundary data", version)]
struct Cli {
    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Base seed override for generated inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for commands that write multiple files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem for a pair and boundary data.
    Forward {
        #[arg(long)]
        pair: PathBuf,
        /// CGOF scalar field whose trace supplies the boundary data.
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        omega_half_side: f64,
        #[arg(long, default_value_t = 9)]
        mesh_n: usize,
    },
    /// Build a CGO solution; writes the profile a + r (CGOF) and
    /// diagnostics including the zeta vectors (JSON).
    Cgo {
        #[arg(long, value_parser = parse_vec3)]
        xi: [f64; 3],
        #[arg(long)]
        h: f64,
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, default_value_t = 1)]
        which: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diag: PathBuf,
    },
    /// Assemble the finite-dimensional Cauchy data of a pair.
    Cauchy {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        omega_half_side: f64,
        #[arg(long, default_value_t = 9)]
        mesh_n: usize,
    },
    /// Pseudo-metric distance between two assembled data sets.
    Dist {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Hodge decomposition of a pair difference with all estimate ratios.
    HodgeCheck {
        #[arg(long)]
        pair_a: PathBuf,
        #[arg(long)]
        pair_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        inner_radius: f64,
        #[arg(long, default_value_t = 1.6)]
        outer_radius: f64,
    },
    /// Besov/Sobolev norms of a CGOF field.
    BesovNorm {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        s: f64,
        #[arg(long, default_value = "2")]
        r: String,
        /// Also report the first-difference seminorm at this exponent.
        #[arg(long)]
        seminorm_eps: Option<f64>,
    },
    /// Extract the magnetic-field difference coefficients at one frequency.
    ExtractDa {
        #[arg(long)]
        pair_a: PathBuf,
        #[arg(long)]
        pair_b: PathBuf,
        #[arg(long, value_parser = parse_vec3)]
        xi: [f64; 3],
        #[arg(long)]
        h: f64,
        #[arg(long, default_value = "interior")]
        mode: String,
        #[arg(long, default_value_t = 14)]
        k: usize,
    },
    /// Extract the electric-potential difference coefficient at one
    /// frequency (builds the gauge from the Hodge decomposition).
    ExtractQ {
        #[arg(long)]
        pair_a: PathBuf,
        #[arg(long)]
        pair_b: PathBuf,
        #[arg(long, value_parser = parse_vec3)]
        xi: [f64; 3],
        #[arg(long)]
        h: f64,
        #[arg(long, default_value = "interior")]
        mode: String,
        #[arg(long, default_value_t = 14)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        inner_radius: f64,
        #[arg(long, default_value_t = 1.6)]
        outer_radius: f64,
    },
    /// Full stability sweep over a perturbation family.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {}", parts.len()));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_besov_r(s: &str) -> anyhow::Result<BesovIndex> {
    match s {
        "1" => Ok(BesovIndex::One),
        "2" => Ok(BesovIndex::Two),
        "inf" | "Inf" | "INF" => Ok(BesovIndex::Inf),
        other => bail!("unsupported Besov index {other} (use 1, 2 or inf)"),
    }
}

fn save_cauchy(base: &Path, data: &CauchyData) -> anyhow::Result<()> {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cauchy")
        .to_string();
    let dir = base.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).ok();
    let tr_name = format!("{stem}.g_tr.cgom");
    let flux_name = format!("{stem}.g_flux.cgom");
    save_matrix(dir.join(&tr_name), &data.g_tr)?;
    save_matrix(dir.join(&flux_name), &data.g_flux)?;
    let header = json!({
        "mesh": {"half_side": data.mesh.half_side, "n": data.mesh.n},
        "k": data.k,
        "fingerprint": format!("{:016x}", data.fingerprint),
        "g_tr": tr_name,
        "g_flux": flux_name,
    });
    std::fs::write(base, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

fn load_cauchy(base: &Path) -> anyhow::Result<CauchyData> {
    let text = std::fs::read_to_string(base)
        .with_context(|| format!("reading Cauchy header {}", base.display()))?;
    let header: serde_json::Value = serde_json::from_str(&text)?;
    let dir = base.parent().unwrap_or_else(|| Path::new("."));
    let mesh = OmegaMesh::new(
        header["mesh"]["half_side"].as_f64().context("mesh.half_side")?,
        header["mesh"]["n"].as_u64().context("mesh.n")? as usize,
    )?;
    let k = header["k"].as_u64().context("k")? as usize;
    let fingerprint = u64::from_str_radix(
        header["fingerprint"].as_str().context("fingerprint")?,
        16,
    )?;
    let g_tr = load_matrix(dir.join(header["g_tr"].as_str().context("g_tr")?))?;
    let g_flux = load_matrix(dir.join(header["g_flux"].as_str().context("g_flux")?))?;
    if g_tr.len() != k || g_flux.len() != k {
        bail!("matrix dimensions disagree with the header K = {k}");
    }
    Ok(CauchyData {
        mesh,
        k,
        fingerprint,
        solutions: Vec::new(),
        extensions: Vec::new(),
        g_tr,
        g_flux,
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match cli.command {
        Command::Forward {
            pair,
            boundary,
            out,
            omega_half_side,
            mesh_n,
        } => {
            let pair = config::load_pair(&pair)?;
            let mesh = OmegaMesh::new(omega_half_side, mesh_n)?;
            let pot = MeshPotentials::from_pair(&mesh, &pair)?;
            let boundary_field = match load_field(&boundary)? {
                AnyField::Scalar(s) => s,
                _ => bail!("boundary file must hold a scalar field"),
            };
            let trace = mesh.sample_box_field(&boundary_field)?;
            let sol = solve_dirichlet(&DirichletProblem {
                mesh,
                pot,
                boundary: trace,
                source: None,
            })?;
            // write the solution back onto the box grid (zero off the mesh)
            let g = pair.grid().clone();
            let mut values = vec![Complex64::default(); g.node_count()];
            let map = cgolab_core::reconstruct::mesh_to_box_indices(&mesh, &g)?;
            for (p, &flat) in map.iter().enumerate() {
                values[flat] = sol.values[p];
            }
            save_field(&out, &AnyField::Scalar(ScalarField::from_values(&g, values)))?;
            println!(
                "{}",
                json!({
                    "out": out,
                    "iterations": sol.stats.iterations,
                    "residual": sol.stats.residual,
                })
            );
        }
        Command::Cgo {
            xi,
            h,
            pair,
            which,
            out,
            diag,
        } => {
            let pair = config::load_pair(&pair)?;
            let which = match which {
                1 => Which::One,
                2 => Which::Two,
                other => bail!("--which must be 1 or 2, got {other}"),
            };
            let zetas = make_zetas(xi, h)?;
            let sol = build_cgo(&pair, &zetas, which, pair.support_half_side)?;
            // the exponential factor overflows representable range away from
            // the domain; the profile a + r plus the zeta data in the
            // diagnostics reconstruct u pointwise
            save_field(&out, &AnyField::Scalar(sol.profile()))?;
            let z = sol.zetas.zeta(which);
            let diag_value = json!({
                "xi": xi,
                "h": h,
                "tau": sol.tau,
                "zeta": z.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                "diagnostics": sol.diag,
            });
            std::fs::write(&diag, serde_json::to_string_pretty(&diag_value)?)?;
            println!(
                "{}",
                json!({"out": out, "diag": diag, "converged": sol.diag.converged})
            );
        }
        Command::Cauchy {
            pair,
            k,
            out,
            omega_half_side,
            mesh_n,
        } => {
            let pair = config::load_pair(&pair)?;
            let mesh = OmegaMesh::new(omega_half_side, mesh_n)?;
            let data = assemble_cauchy(&pair, &mesh, k, false)?;
            save_cauchy(&out, &data)?;
            println!(
                "{}",
                json!({"out": out, "k": data.k, "gram_condition": data.gram_condition()?})
            );
        }
        Command::Dist { a, b } => {
            let ca = load_cauchy(&a)?;
            let cb = load_cauchy(&b)?;
            if ca.fingerprint == cb.fingerprint {
                // same potentials; still a legitimate evaluation
            }
            let d = dist_cauchy(&ca, &cb)?;
            println!(
                "{}",
                json!({"dist": d.value, "low_confidence": d.low_confidence})
            );
        }
        Command::HodgeCheck {
            pair_a,
            pair_b,
            out,
            inner_radius,
            outer_radius,
        } => {
            let pa = config::load_pair(&pair_a)?;
            let pb = config::load_pair(&pair_b)?;
            let mut diff: VectorField = pa.a.clone();
            for (axis, comp) in diff.components.iter_mut().enumerate() {
                for (v, w) in comp.iter_mut().zip(&pb.a.components[axis]) {
                    *v -= w;
                }
            }
            let geom = BallGeometry {
                inner_radius,
                outer_radius,
            };
            let h = decompose_ball(&diff, geom, HodgeOptions::default())?;
            let chi = gauge_cutoff(pa.grid(), &geom, 0.15);
            let gauge = gauge_phi(&h, &chi)?;
            let oracle = helmholtz_oracle(&diff);
            let oracle_l2 = cgolab_core::grid::vector_l2(&oracle.divergence_free);
            let du_hm1 = cgolab_core::besov::sobolev_norm(&AnyField::TwoForm(diff.d()), -1.0);
            let report = json!({
                "reconstruction_residual_rel": h.residual_rel,
                "normal_trace_rel": h.normal_trace_rel,
                "coexact_l2": h.coexact_l2,
                "coexact_stage1_l2": h.coexact_stage1_l2,
                "oracle_divfree_l2": oracle_l2,
                "oracle_ratio": h.coexact_stage1_l2 / oracle_l2.max(1e-300),
                "u_minus_dpsi_over_du_hm1": h.u_minus_dpsi_l2 / du_hm1.max(1e-300),
                "psi_annulus_h1_over_du_hm1": gauge.psi_annulus_h1 / du_hm1.max(1e-300),
            });
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("{report}");
        }
        Command::BesovNorm {
            field,
            s,
            r,
            seminorm_eps,
        } => {
            let f = load_field(&field)?;
            let r = parse_besov_r(&r)?;
            let rep = besov_norm(&f, BesovParams { s, r });
            let sobolev = cgolab_core::besov::sobolev_norm(&f, s);
            let seminorm = match seminorm_eps {
                Some(eps) => Some(diff_seminorm(&f, eps, r)?.value),
                None => None,
            };
            println!(
                "{}",
                json!({
                    "field": field,
                    "s": s,
                    "besov": rep.value,
                    "max_block": rep.max_block,
                    "tail_l2": rep.tail_l2,
                    "sobolev": sobolev,
                    "seminorm": seminorm,
                })
            );
        }
        Command::ExtractDa {
            pair_a,
            pair_b,
            xi,
            h,
            mode,
            k,
        } => {
            let pa = config::load_pair(&pair_a)?;
            let pb = config::load_pair(&pair_b)?;
            let frames = build_frame_pair(&pa, &pb, xi, h)?;
            let (mode, data) = extraction_mode(&mode, &pa, &pb, k)?;
            let out = extract_da_hat(
                &pa,
                &pb,
                &frames,
                mode,
                data.as_ref().map(|(a, b)| (a, b)),
                None,
            )?;
            println!("{}", serde_json::to_string(&out)?);
        }
        Command::ExtractQ {
            pair_a,
            pair_b,
            xi,
            h,
            mode,
            k,
            inner_radius,
            outer_radius,
        } => {
            let pa = config::load_pair(&pair_a)?;
            let pb = config::load_pair(&pair_b)?;
            let mut diff = pa.a.clone();
            for (axis, comp) in diff.components.iter_mut().enumerate() {
                for (v, w) in comp.iter_mut().zip(&pb.a.components[axis]) {
                    *v -= w;
                }
            }
            let geom = BallGeometry {
                inner_radius,
                outer_radius,
            };
            let hodge = decompose_ball(&diff, geom, HodgeOptions::default())?;
            let chi = gauge_cutoff(pa.grid(), &geom, 0.15);
            let gauge = gauge_phi(&hodge, &chi)?;
            let frames = build_frame_pair(&pa, &pb, xi, h)?;
            let (mode, data) = extraction_mode(&mode, &pa, &pb, k)?;
            let out = extract_q_hat(
                &pa,
                &pb,
                &frames,
                &gauge,
                mode,
                data.as_ref().map(|(a, b)| (a, b)),
                None,
            )?;
            println!("{}", serde_json::to_string(&out)?);
        }
        Command::Sweep { config } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading sweep config {}", path.display()))?;
                    serde_json::from_str::<SweepConfig>(&text)?
                }
                None => SweepConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
                cfg.perturb_seed = seed.wrapping_mul(3).wrapping_add(7);
            }
            let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("sweep-out"));
            std::fs::create_dir_all(&out_dir)?;
            let mut manifest = vec![json!({"stage": "config", "status": "ok"})];
            match run_sweep(&cfg) {
                Ok(report) => {
                    std::fs::write(
                        out_dir.join("sweep.csv"),
                        rows_to_csv(&report.calibration_rows),
                    )?;
                    std::fs::write(
                        out_dir.join("sweep_heldout.csv"),
                        rows_to_csv(&report.heldout_rows),
                    )?;
                    std::fs::write(
                        out_dir.join("report.json"),
                        serde_json::to_string_pretty(&report)?,
                    )?;
                    // gnuplot-ready log-log data: |log dist| against norms
                    let mut dat = String::from("# logdist da_direct da_bound q_direct q_bound\n");
                    for r in report
                        .calibration_rows
                        .iter()
                        .chain(&report.heldout_rows)
                    {
                        dat.push_str(&format!(
                            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e}\n",
                            r.dist.max(1e-300).ln().abs(),
                            r.da_hm1_direct,
                            r.da_hm1_bound,
                            r.q_hlambda_direct,
                            r.q_hlambda_bound
                        ));
                    }
                    std::fs::write(out_dir.join("stability.dat"), dat)?;
                    manifest.push(json!({"stage": "sweep", "status": "ok"}));
                    println!(
                        "{}",
                        json!({"out_dir": out_dir, "rows": report.calibration_rows.len()})
                    );
                }
                Err(e) => {
                    manifest.push(json!({"stage": "sweep", "status": "failed", "error": e.to_string()}));
                    std::fs::write(
                        out_dir.join("manifest.json"),
                        serde_json::to_string_pretty(&manifest)?,
                    )?;
                    return Err(e.into());
                }
            }
            std::fs::write(
                out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
        }
    }
    Ok(())
}

/// Build the extraction mode and, for the boundary path, the assembled data.
fn extraction_mode(
    mode: &str,
    pa: &cgolab_core::PotentialPair,
    pb: &cgolab_core::PotentialPair,
    k: usize,
) -> anyhow::Result<(ExtractionMode, Option<(CauchyData, CauchyData)>)> {
    match mode {
        "interior" => Ok((ExtractionMode::Interior, None)),
        "boundary" => {
            let mesh = OmegaMesh::new(pa.support_half_side.min(0.5), 7)?;
            let c1 = assemble_cauchy(pa, &mesh, k, false)?;
            let c2 = assemble_cauchy(pb, &mesh, k, false)?;
            Ok((ExtractionMode::Boundary, Some((c1, c2))))
        }
        other => bail!("unknown extraction mode {other} (interior|boundary)"),
    }
}

#[allow(dead_code)]
fn unused_inner_product_reference() {
    // keeps the re-export surface exercised in the binary crate
    let _ = inner_product;
}
