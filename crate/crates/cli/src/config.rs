//! JSON configuration types: potential-pair specifications and experiment
//! configs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cgolab_core::besov::admissibility_check;
use cgolab_core::grid::{make_grid, AnyField, Grid};
use cgolab_core::io::load_field;
use cgolab_core::potential::{generate_pair, ClassParams, GeneratedPairSpec, PotentialPair};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub l: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> anyhow::Result<Arc<Grid>> {
        Ok(make_grid(self.l, self.n)?)
    }
}

/// A potential pair on disk: either generated from a seed or loaded from
/// CGOF files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairSpecFile {
    Generated {
        grid: GridSpec,
        #[serde(flatten)]
        spec: GeneratedPairSpec,
        /// Class bound = this factor times the measured admissibility sum.
        #[serde(default = "default_bound_scale")]
        bound_scale: f64,
    },
    Files {
        /// CGOF vector field (paths relative to the spec file).
        a: PathBuf,
        /// CGOF scalar field.
        q: PathBuf,
        support_half_side: f64,
        class: ClassParams,
    },
}

fn default_bound_scale() -> f64 {
    1.1
}

pub fn load_pair(path: &Path) -> anyhow::Result<PotentialPair> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading pair spec {}", path.display()))?;
    let spec: PairSpecFile = serde_json::from_str(&text)?;
    match spec {
        PairSpecFile::Generated {
            grid,
            spec,
            bound_scale,
        } => {
            let g = grid.build()?;
            let mut pair = generate_pair(&g, &spec);
            let report = admissibility_check(&pair)?;
            pair.class.bound = (bound_scale * report.sum).max(1.0);
            pair.validate()?;
            Ok(pair)
        }
        PairSpecFile::Files {
            a,
            q,
            support_half_side,
            class,
        } => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            let a_field = match load_field(dir.join(&a))? {
                AnyField::Vector(v) => v,
                other => bail!("{} holds a degree-{} field, expected a 1-form",
                    a.display(), other.degree().as_u8()),
            };
            let q_field = match load_field(dir.join(&q))? {
                AnyField::Scalar(s) => s,
                other => bail!("{} holds a degree-{} field, expected a scalar",
                    q.display(), other.degree().as_u8()),
            };
            let pair = PotentialPair {
                a: a_field,
                q: q_field,
                support_half_side,
                class,
            };
            pair.validate()?;
            Ok(pair)
        }
    }
}
