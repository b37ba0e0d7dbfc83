//! Deterministic competitor constructions, each with the terms of the energy
//! bound it is designed to meet.

mod competitors;
mod dyadic;
mod grid;

pub use competitors::{
    covering_competitor, covering_with, greedy_centers, shift_competitor, shrink_competitor, CoveringResult,
};
pub use dyadic::{
    build_fragment, build_fragments, dyadic_branch, DyadicResult, Fragment, FragmentParams, DEFAULT_DELTA,
    DEFAULT_DEPTH, MIN_CELL_WIDTH,
};
pub use grid::{
    block_grid_norm, dirac_grid, dirac_grid_energy, effective_depth, static_branches, uniform_grid,
    uniform_grid_bound, uniform_grid_energy, unit_fragment,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measure::Measure;
use crate::pattern::IrrigationPattern;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

fn default_m() -> f64 {
    1.0
}

/// A construction with its parameters, as read from experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstructionSpec {
    UniformGrid {
        #[serde(rename = "N")]
        n: usize,
        r: f64,
        #[serde(rename = "T")]
        t: f64,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    DiracGrid {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "T")]
        t: f64,
    },
    DyadicBranch {
        source_x: f64,
        #[serde(default = "default_m")]
        mass: f64,
        center: f64,
        r: f64,
        eps: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    StaticBranches {
        measure: Measure,
        #[serde(rename = "T")]
        t: f64,
    },
    Covering {
        base: Box<ConstructionSpec>,
        eps: f64,
        alpha: f64,
        #[serde(default = "default_m", rename = "M")]
        m: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    Shrink {
        base: Box<ConstructionSpec>,
        eps: f64,
    },
    Shift {
        base: Box<ConstructionSpec>,
        eps: f64,
        eta: f64,
    },
}

/// A built pattern with, where the construction defines them, its measured
/// internal energy on the rebuilt layer and the terms of its bound.
#[derive(Debug, Clone, Serialize)]
pub struct Construction {
    pub pattern: IrrigationPattern,
    pub measured: Option<f64>,
    pub bound_terms: Vec<f64>,
}

impl ConstructionSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UniformGrid { .. } => "uniform_grid",
            Self::DiracGrid { .. } => "dirac_grid",
            Self::DyadicBranch { .. } => "dyadic_branch",
            Self::StaticBranches { .. } => "static_branches",
            Self::Covering { .. } => "covering",
            Self::Shrink { .. } => "shrink",
            Self::Shift { .. } => "shift",
        }
    }

    /// Height of the pattern this spec builds.
    pub fn height(&self) -> f64 {
        match self {
            Self::UniformGrid { t, .. } | Self::DiracGrid { t, .. } | Self::StaticBranches { t, .. } => *t,
            Self::DyadicBranch { eps, .. } => *eps,
            Self::Covering { base, .. } | Self::Shrink { base, .. } | Self::Shift { base, .. } => base.height(),
        }
    }

    /// The same spec at height `t`; fragments keep their own height.
    pub fn with_height(&self, new_t: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::UniformGrid { t, .. } | Self::DiracGrid { t, .. } | Self::StaticBranches { t, .. } => *t = new_t,
            Self::DyadicBranch { .. } => {}
            Self::Covering { base, .. } | Self::Shrink { base, .. } | Self::Shift { base, .. } => {
                **base = base.with_height(new_t)
            }
        }
        out
    }

    /// Builds the pattern. `s` only enters the bound terms of `uniform_grid`.
    pub fn build(&self, s: f64) -> Result<Construction> {
        let plain = |pattern| Construction { pattern, measured: None, bound_terms: Vec::new() };
        Ok(match self {
            Self::UniformGrid { n, r, t, depth } => Construction {
                pattern: uniform_grid(*n, *r, *t, *depth)?,
                measured: None,
                bound_terms: uniform_grid_bound(*n, *r, *t, s).to_vec(),
            },
            Self::DiracGrid { n, t } => Construction {
                pattern: dirac_grid(*n, *t)?,
                measured: None,
                bound_terms: vec![2.0 * t * *n as f64, (*n as f64).powf(-2.0 * s)],
            },
            Self::DyadicBranch { source_x, mass, center, r, eps, delta, depth } => {
                let d = dyadic_branch(*source_x, *mass, *center, *r, *eps, *delta, *depth)?;
                Construction { pattern: d.pattern, measured: Some(d.measured), bound_terms: d.bound_terms.to_vec() }
            }
            Self::StaticBranches { measure, t } => plain(static_branches(measure, *t)?),
            Self::Covering { base, eps, alpha, m, delta, depth } => {
                let b = base.build(s)?;
                let c = covering_with(&b.pattern, *eps, *alpha, *m, *delta, *depth)?;
                Construction { pattern: c.pattern, measured: Some(c.measured), bound_terms: c.bound_terms.to_vec() }
            }
            Self::Shrink { base, eps } => plain(shrink_competitor(&base.build(s)?.pattern, *eps)?),
            Self::Shift { base, eps, eta } => plain(shift_competitor(&base.build(s)?.pattern, *eps, *eta)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let json = r#"{"kind": "covering", "eps": 0.01, "alpha": 1.0,
            "base": {"kind": "static_branches", "T": 1.0,
                     "measure": {"type": "atomic", "atoms": [[0.5, 1.0]]}}}"#;
        let spec: ConstructionSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.height(), 1.0);
        let back: ConstructionSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let c = spec.with_height(2.0).build(0.5).unwrap();
        assert_eq!(c.pattern.t_max(), 2.0);
        assert!(c.measured.is_some());
    }
}
