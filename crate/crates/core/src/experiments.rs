//! Scaling-law sweeps, dimension sweeps and validator runs over constructions
//! and optimized patterns. Everything here is deterministic and returns plain
//! data; file output and caching live in the command-line driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{
    covering_competitor, dirac_grid_energy, uniform_grid_energy, ConstructionSpec, DEFAULT_DEPTH,
};
use crate::dimension::{
    ahlfors_fit, beta_c, beta_con, beta_reg, box_dimension, dyadic_radii, frostman_proxy, rational, to_f64,
    AhlforsEstimate, Direction, FrostmanProxy,
};
use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::measure::{Block, BlockMeasure, Measure};
use crate::optimizer::{self, topology_search, Move, OptimizationTrace, OptimizerConfig};
use crate::pattern::{BoundaryMode, IrrigationPattern, TipKind};
use crate::validate::{validate, ValidationConfig, ValidationReport};

pub const POINTS_PER_DECADE: usize = 8;
/// Fits below this r² are flagged, not rejected.
pub const MIN_R_SQUARED: f64 = 0.95;
/// Slack on the universal `eps^{1/3}` local bound.
pub const FLOOR_SLACK: f64 = 0.05;

/// `per_decade` log-spaced points from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && per_decade > 0) {
        return Err(Error::Config(format!("log grid needs 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round().max(1.0) as usize;
    Ok((0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
    /// Set when `r_squared` is below [`MIN_R_SQUARED`].
    pub flagged: bool,
}

impl ScalingFit {
    /// Log-log fit over at least four points.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidParameter(format!("scaling fit needs 4 points, got {}", points.len())));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().cloned().unzip();
        let f = LinearFit::log_log(&xs, &ys)?;
        Ok(Self {
            exponent: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            points,
            flagged: f.r_squared < MIN_R_SQUARED,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GlobalScaling,
    LocalScaling,
    DimensionSweep,
    ValidatorSuite,
    ConstructionBench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    #[serde(default = "default_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "default_tol")]
    pub position_tol: f64,
    #[serde(default = "default_moves")]
    pub topology_moves: Vec<Move>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub perturb: f64,
}

fn default_outer() -> usize {
    6
}
fn default_tol() -> f64 {
    1e-10
}
fn default_moves() -> Vec<Move> {
    Move::ALL.to_vec()
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_outer_iters: default_outer(),
            position_tol: default_tol(),
            topology_moves: default_moves(),
            rng_seed: 0,
            perturb: 0.0,
        }
    }
}

fn default_k() -> usize {
    1024
}
fn default_per_decade() -> usize {
    POINTS_PER_DECADE
}
fn default_true() -> bool {
    true
}
fn default_m() -> f64 {
    1.0
}

/// One experiment run. Grids come either as explicit values or as `[lo, hi]`
/// ranges expanded with `per_decade` log-spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub s_values: Vec<f64>,
    #[serde(rename = "T_values", default)]
    pub t_values: Option<Vec<f64>>,
    #[serde(rename = "T_range", default)]
    pub t_range: Option<[f64; 2]>,
    #[serde(default)]
    pub eps_values: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_range: Option<[f64; 2]>,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    #[serde(default)]
    pub seeds: Vec<ConstructionSpec>,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// `None` picks atomic tips for `s > 1/2` and blocks otherwise.
    #[serde(default)]
    pub boundary_mode: Option<BoundaryMode>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Runs the optimizer from `seeds` where the experiment uses patterns.
    #[serde(default)]
    pub optimize: bool,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Also minimize over the whole construction family (global scaling).
    #[serde(default)]
    pub family_search: bool,
    /// Dyadic depth of grid constructions built for dimension sweeps.
    #[serde(default)]
    pub depth: Option<usize>,
    /// Regularity exponent for covering competitors; estimated from the tips when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(rename = "M", default = "default_m")]
    pub m_const: f64,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            s_values: Vec::new(),
            t_values: None,
            t_range: None,
            eps_values: None,
            eps_range: None,
            per_decade: POINTS_PER_DECADE,
            seeds: Vec::new(),
            k: default_k(),
            boundary_mode: None,
            output_dir: None,
            cache: true,
            optimize: false,
            optimizer: OptimizerSettings::default(),
            family_search: false,
            depth: None,
            alpha: None,
            m_const: 1.0,
        }
    }

    fn grid(&self, values: &Option<Vec<f64>>, range: &Option<[f64; 2]>, name: &str) -> Result<Option<Vec<f64>>> {
        let g = match (values, range) {
            (Some(_), Some(_)) => return Err(Error::Config(format!("give {name}_values or {name}_range, not both"))),
            (Some(v), None) => v.clone(),
            (None, Some([lo, hi])) => log_grid(*lo, *hi, self.per_decade)?,
            (None, None) => return Ok(None),
        };
        if g.is_empty() {
            return Err(Error::Config(format!("{name} grid is empty")));
        }
        if g.iter().any(|v| !(*v > 0.0 && v.is_finite())) || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("{name} grid must be positive and increasing")));
        }
        Ok(Some(g))
    }

    pub fn t_grid(&self) -> Result<Option<Vec<f64>>> {
        self.grid(&self.t_values, &self.t_range, "T")
    }

    pub fn eps_grid(&self) -> Result<Option<Vec<f64>>> {
        self.grid(&self.eps_values, &self.eps_range, "eps")
    }

    /// Checks everything the chosen experiment needs.
    pub fn validate(&self) -> Result<()> {
        for &s in &self.s_values {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("s = {s} outside (0, 1)")));
            }
        }
        let t = self.t_grid()?;
        let eps = self.eps_grid()?;
        let need_s = !matches!(self.experiment, ExperimentKind::ValidatorSuite | ExperimentKind::ConstructionBench);
        if need_s && self.s_values.is_empty() {
            return Err(Error::Config("s_values is empty".into()));
        }
        match self.experiment {
            ExperimentKind::GlobalScaling if t.is_none() => Err(Error::Config("global scaling needs a T grid".into())),
            ExperimentKind::LocalScaling if eps.is_none() => Err(Error::Config("local scaling needs an eps grid".into())),
            ExperimentKind::LocalScaling | ExperimentKind::ValidatorSuite | ExperimentKind::ConstructionBench
                if self.seeds.is_empty() =>
            {
                Err(Error::Config("seeds is empty".into()))
            }
            _ if self.optimize && self.seeds.is_empty() => Err(Error::Config("optimize needs seeds".into())),
            _ if self.k == 0 => Err(Error::Config("K must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn mode_for(&self, s: f64) -> BoundaryMode {
        self.boundary_mode.unwrap_or(if s > 0.5 { BoundaryMode::Atomic } else { BoundaryMode::Block })
    }

    pub fn optimizer_config(&self, s: f64, t: f64) -> OptimizerConfig {
        let mut c = OptimizerConfig::new(s, t, self.mode_for(s));
        c.k = self.k;
        c.max_outer_iters = self.optimizer.max_outer_iters;
        c.position_tol = self.optimizer.position_tol;
        c.topology_moves = self.optimizer.topology_moves.clone();
        c.rng_seed = self.optimizer.rng_seed;
        c.perturb = self.optimizer.perturb;
        c.restarts = self.seeds.iter().map(|sp| sp.with_height(t)).collect();
        c
    }
}

/// Which bound governs the minimal energy at `(s, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `T >= 1`: a single unit block per period, `E ~ T`.
    Thick,
    /// `s <= 1/4`: uniform tips, `E ~ T^{1/3}`.
    Uniform,
    /// `1/4 < s <= 1/2`: separated blocks, `E ~ T^{(1+2s)/(5-2s)}`.
    Intermediate,
    /// `s > 1/2`: point tips, `E ~ T^{2s/(2s+1)}`.
    Dirac,
}

pub fn regime(s: f64, t: f64) -> Regime {
    if t >= 1.0 {
        Regime::Thick
    } else if s <= 0.25 {
        Regime::Uniform
    } else if s <= 0.5 {
        Regime::Intermediate
    } else {
        Regime::Dirac
    }
}

pub fn regime_exponent(s: f64, regime: Regime) -> f64 {
    match regime {
        Regime::Thick => 1.0,
        Regime::Uniform => 1.0 / 3.0,
        Regime::Intermediate => rational(s).map(|q| to_f64(&beta_c(&q, 1))).unwrap_or(f64::NAN),
        Regime::Dirac => 2.0 * s / (2.0 * s + 1.0),
    }
}

fn round_count(x: f64) -> usize {
    x.round().max(1.0) as usize
}

/// The construction whose parameters balance the energy terms at `(s, T)`,
/// with unit prefactors.
pub fn prescribed_construction(s: f64, t: f64) -> ConstructionSpec {
    let depth = DEFAULT_DEPTH;
    match regime(s, t) {
        Regime::Thick => ConstructionSpec::UniformGrid { n: 1, r: 1.0, t, depth },
        Regime::Uniform => {
            let n = round_count(t.powf(-2.0 / 3.0));
            ConstructionSpec::UniformGrid { n, r: 1.0 / n as f64, t, depth }
        }
        Regime::Intermediate => {
            let n = round_count(t.powf(-2.0 * (2.0 - 2.0 * s) / (5.0 - 2.0 * s)));
            let r = (t / n as f64).powf(1.0 / (3.0 - 2.0 * s)).min(1.0 / n as f64);
            ConstructionSpec::UniformGrid { n, r, t, depth }
        }
        Regime::Dirac => ConstructionSpec::DiracGrid { n: round_count(t.powf(-1.0 / (2.0 * s + 1.0))), t },
    }
}

/// Full energy of a construction, through the closed forms where they exist.
pub fn construction_energy(spec: &ConstructionSpec, s: f64, mode: BoundaryMode, k: usize) -> Result<f64> {
    match *spec {
        ConstructionSpec::UniformGrid { n, r, t, depth } => uniform_grid_energy(n, r, t, s, depth),
        ConstructionSpec::DiracGrid { n, t } => dirac_grid_energy(n, t, s),
        _ => Ok(spec.build(s)?.pattern.full_energy(s, mode, k)?.total),
    }
}

/// Minimum over grid counts `N` and block widths `r <= 1/N` (and Dirac grids for `s > 1/2`).
pub fn best_of_family(s: f64, t: f64) -> Result<(ConstructionSpec, f64)> {
    let mut counts: Vec<usize> = (0..=120).map(|i| round_count(10f64.powf(i as f64 / 24.0))).collect();
    counts.dedup();
    let candidates: Vec<ConstructionSpec> = counts
        .iter()
        .flat_map(|&n| {
            let grids = (0..40).map(move |j| ConstructionSpec::UniformGrid {
                n,
                r: 0.85f64.powi(j) / n as f64,
                t,
                depth: DEFAULT_DEPTH,
            });
            let dirac = (s > 0.5).then_some(ConstructionSpec::DiracGrid { n, t });
            grids.chain(dirac)
        })
        .collect();
    let energies: Vec<Result<f64>> =
        candidates.par_iter().map(|c| construction_energy(c, s, BoundaryMode::Block, 0)).collect();
    let mut best: Option<(ConstructionSpec, f64)> = None;
    for (c, e) in candidates.into_iter().zip(energies) {
        let e = e?;
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((c, e));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("empty construction family".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalPoint {
    #[serde(rename = "T")]
    pub t: f64,
    pub construction: ConstructionSpec,
    pub prescribed: f64,
    pub family: Option<f64>,
    pub optimized: Option<f64>,
    /// Smallest certified energy among the evaluated candidates.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalScaling {
    pub s: f64,
    pub regime: Regime,
    pub predicted: f64,
    /// Fit of the prescribed construction energies.
    pub prescribed_fit: ScalingFit,
    /// Fit of the best energies, including family minima and optimizer output.
    pub best_fit: ScalingFit,
    pub points: Vec<GlobalPoint>,
    pub warning: Option<String>,
}

pub fn run_global_scaling(cfg: &ExperimentConfig) -> Result<Vec<GlobalScaling>> {
    cfg.validate()?;
    let ts = cfg.t_grid()?.unwrap_or_default();
    cfg.s_values
        .iter()
        .map(|&s| {
            let regimes: Vec<Regime> = ts.iter().map(|&t| regime(s, t)).collect();
            let warning = regimes
                .windows(2)
                .any(|w| w[0] != w[1])
                .then(|| format!("T grid straddles regimes at s = {s}; the fit mixes exponents"));
            let points: Vec<GlobalPoint> = ts
                .par_iter()
                .map(|&t| global_point(cfg, s, t))
                .collect::<Result<_>>()?;
            let prescribed_fit = ScalingFit::new(points.iter().map(|p| (p.t, p.prescribed)).collect())?;
            let best_fit = ScalingFit::new(points.iter().map(|p| (p.t, p.best)).collect())?;
            Ok(GlobalScaling {
                s,
                regime: regimes[regimes.len() / 2],
                predicted: regime_exponent(s, regimes[regimes.len() / 2]),
                prescribed_fit,
                best_fit,
                points,
                warning,
            })
        })
        .collect()
}

fn global_point(cfg: &ExperimentConfig, s: f64, t: f64) -> Result<GlobalPoint> {
    let construction = prescribed_construction(s, t);
    let prescribed = construction_energy(&construction, s, cfg.mode_for(s), cfg.k)?;
    let family = if cfg.family_search { Some(best_of_family(s, t)?.1) } else { None };
    let optimized = if cfg.optimize { Some(topology_search(&cfg.optimizer_config(s, t))?.final_energy()) } else { None };
    let best = [Some(prescribed), family, optimized].into_iter().flatten().fold(f64::INFINITY, f64::min);
    Ok(GlobalPoint { t, construction, prescribed, family, optimized, best })
}

/// Base pattern of a pattern-driven experiment: the first seed at height `t`,
/// or the optimizer's best pattern, which must have converged.
fn base_pattern(cfg: &ExperimentConfig, s: f64, t: f64) -> Result<(IrrigationPattern, Option<OptimizationTrace>)> {
    if cfg.optimize {
        let tr = topology_search(&cfg.optimizer_config(s, t))?;
        if !tr.converged {
            return Err(Error::StaleInput(format!(
                "optimizer at s = {s}, T = {t} still improving after {} outer iterations",
                cfg.optimizer.max_outer_iters
            )));
        }
        return Ok((tr.pattern.clone(), Some(tr)));
    }
    let seed = cfg.seeds.first().ok_or_else(|| Error::Config("seeds is empty".into()))?;
    Ok((seed.with_height(t).build(s)?.pattern, None))
}

/// Boundary measure of a pattern: blocks when every tip is a block, else atoms.
pub fn tips_measure(p: &IrrigationPattern) -> Result<Measure> {
    let blocks = p.tips().iter().all(|t| matches!(t.kind, TipKind::Block { .. }));
    p.tip_measure(if blocks { BoundaryMode::Block } else { BoundaryMode::Atomic })
}

/// Smallest scale a finite boundary measure resolves: the smallest block
/// width or gap between distinct support points, floored at `2^{-20}`.
pub fn resolution(mu: &Measure) -> f64 {
    let mut pts = mu.support_points();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let gap = pts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let width = match mu {
        Measure::Block(b) => b.blocks().iter().map(|bl| bl.width).fold(f64::INFINITY, f64::min),
        Measure::Atomic(_) => f64::INFINITY,
    };
    gap.min(width).min(1.0).max(0.5f64.powi(20))
}

/// Finest dyadic level the estimators look at.
pub const MAX_DEPTH: u32 = 12;

/// Dyadic exponents `j` from 2 to [`MAX_DEPTH`]. Blocks stand in for finer
/// structure, so for them the window stops at the resolution; atoms are
/// exact at every scale.
fn resolved_depths(mu: &Measure) -> Vec<u32> {
    let jmax = match mu {
        Measure::Atomic(_) => MAX_DEPTH,
        Measure::Block(_) => (-resolution(mu).log2()).floor().clamp(3.0, MAX_DEPTH as f64) as u32,
    };
    (2..=jmax).collect()
}

/// Mass of each cell of the `2^j` dyadic grid, as touching blocks. Scales
/// above `2^{-j}` see the same measure up to one cell.
pub fn coarsen(mu: &Measure, j: u32) -> Result<Measure> {
    let n = 1usize << j;
    let h = 1.0 / n as f64;
    let mut cells = vec![0.0; n];
    let cell = |x: f64| ((x.rem_euclid(1.0) * n as f64) as usize).min(n - 1);
    match mu {
        Measure::Atomic(a) => a.atoms().iter().for_each(|&(x, m)| cells[cell(x)] += m),
        Measure::Block(b) => {
            for bl in b.blocks() {
                let (lo, hi) = (bl.center - 0.5 * bl.width, bl.center + 0.5 * bl.width);
                let density = bl.mass / bl.width;
                let mut k = (lo / h).floor();
                while k * h < hi {
                    let overlap = hi.min((k + 1.0) * h) - lo.max(k * h);
                    cells[(k as i64).rem_euclid(n as i64) as usize] += density * overlap.max(0.0);
                    k += 1.0;
                }
            }
        }
    }
    let blocks = cells
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, &m)| Block { center: (i as f64 + 0.5) * h, width: h, mass: m })
        .collect();
    Ok(Measure::Block(BlockMeasure::new(blocks)?))
}

/// `mu` itself when it is small, else its coarsening at [`MAX_DEPTH`].
fn estimation_measure(mu: Measure) -> Result<Measure> {
    if mu.support_points().len() <= 1 << MAX_DEPTH {
        Ok(mu)
    } else {
        coarsen(&mu, MAX_DEPTH)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalScaling {
    pub s: f64,
    pub alpha_est: f64,
    pub alpha_used: f64,
    /// `I(T - eps, T)` of the covering competitor.
    pub fit: ScalingFit,
    /// `I(T - eps, T)` of the base pattern itself.
    pub direct_fit: ScalingFit,
    pub beta_con: f64,
    pub beta_reg: Option<f64>,
    /// Both fitted slopes at least `1/3 - FLOOR_SLACK`.
    pub floor_ok: bool,
}

pub fn run_local_scaling(cfg: &ExperimentConfig) -> Result<Vec<LocalScaling>> {
    cfg.validate()?;
    let eps = cfg.eps_grid()?.unwrap_or_default();
    let t = cfg.t_grid()?.and_then(|g| g.first().copied()).unwrap_or(1.0);
    cfg.s_values
        .iter()
        .map(|&s| {
            let (base, _) = base_pattern(cfg, s, t)?;
            let mu = estimation_measure(tips_measure(&base)?)?;
            let est = ahlfors_fit(&mu, Direction::Lower, &dyadic_radii(2, *resolved_depths(&mu).last().unwrap_or(&3)), &[])?;
            let alpha_est = est.alpha;
            let alpha = cfg.alpha.unwrap_or(alpha_est.clamp(1e-3, 1.0));
            let rows: Vec<(f64, f64, f64)> = eps
                .par_iter()
                .map(|&e| {
                    let c = covering_competitor(&base, e, alpha, cfg.m_const)?;
                    let (p, k) = base.internal_energy(t - e, t)?;
                    Ok((e, c.measured, p + k))
                })
                .collect::<Result<_>>()?;
            let fit = ScalingFit::new(rows.iter().map(|r| (r.0, r.1)).collect())?;
            let direct_fit = ScalingFit::new(rows.iter().map(|r| (r.0, r.2)).collect())?;
            let q_s = rational(s)?;
            let q_a = rational(alpha)?;
            let floor = 1.0 / 3.0 - FLOOR_SLACK;
            Ok(LocalScaling {
                s,
                alpha_est,
                alpha_used: alpha,
                floor_ok: fit.exponent >= floor && direct_fit.exponent >= floor,
                fit,
                direct_fit,
                beta_con: to_f64(&beta_con(&q_a)),
                beta_reg: beta_reg(&q_s, &q_a).ok().map(|q| to_f64(&q)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionRow {
    pub s: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub source: String,
    pub ahlfors: AhlforsEstimate,
    pub box_dimension: f64,
    pub frostman: FrostmanProxy,
    pub alpha_bar: f64,
    /// Box-counting estimate minus the conjectured dimension.
    pub discrepancy: f64,
    pub r_min: f64,
}

pub fn run_dimension_sweep(cfg: &ExperimentConfig) -> Result<Vec<DimensionRow>> {
    cfg.validate()?;
    let ts = cfg.t_grid()?.unwrap_or_else(|| vec![1e-2]);
    let depth = cfg.depth.unwrap_or(6);
    let jobs: Vec<(f64, f64)> = cfg.s_values.iter().flat_map(|&s| ts.iter().map(move |&t| (s, t))).collect();
    jobs.iter()
        .map(|&(s, t)| {
            let (pattern, source) = if cfg.optimize {
                (base_pattern(cfg, s, t)?.0, "optimized".to_string())
            } else {
                let spec = match prescribed_construction(s, t) {
                    ConstructionSpec::UniformGrid { n, r, t, .. } => ConstructionSpec::UniformGrid { n, r, t, depth },
                    other => other,
                };
                let kind = spec.kind().to_string();
                (spec.build(s)?.pattern, kind)
            };
            let mu = estimation_measure(tips_measure(&pattern)?)?;
            let depths = resolved_depths(&mu);
            let jmax = *depths.last().unwrap_or(&3);
            let alpha_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
            let ahlfors = ahlfors_fit(&mu, Direction::Upper, &dyadic_radii(2, jmax), &alpha_grid)?;
            let bx = box_dimension(&mu, &depths)?;
            let gammas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
            let frostman = frostman_proxy(&mu, &gammas, 1 << 8, 1 << 14)?;
            let a_bar = to_f64(&crate::dimension::alpha_bar(&rational(s)?, 1));
            Ok(DimensionRow {
                s,
                t,
                source,
                r_min: ahlfors.r_min,
                ahlfors,
                box_dimension: bx,
                frostman,
                alpha_bar: a_bar,
                discrepancy: bx - a_bar,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatorRow {
    pub id: String,
    /// `construction`, `optimized` or `fixture`.
    pub origin: String,
    pub report: ValidationReport,
    /// Hard failures here make the suite fail.
    pub enforced: bool,
}

impl ValidatorRow {
    pub fn hard_failure(&self) -> bool {
        self.enforced && !self.report.all_passed()
    }
}

/// Counterexamples the validator must reject.
pub fn adversarial_fixtures() -> Vec<(String, IrrigationPattern)> {
    use crate::pattern::PatternBuilder;
    let mut out = Vec::new();
    // Two branches that swap order between t = 0 and t = T.
    let mut b = PatternBuilder::new();
    let (r1, r2) = (b.node(0.0, 0.2), b.node(0.0, 0.6));
    let (l1, l2) = (b.node(1.0, 0.7), b.node(1.0, 0.3));
    b.edge(r1, l1, 0.5);
    b.edge(r2, l2, 0.5);
    b.tip(l1, TipKind::Atom);
    b.tip(l2, TipKind::Atom);
    out.push(("crossing".to_string(), b.build(1.0, true).expect("crossing fixture")));
    // A split whose halves merge again.
    let mut b = PatternBuilder::new();
    let r = b.node(0.0, 0.5);
    let (u, v) = (b.node(0.3, 0.4), b.node(0.3, 0.6));
    let m = b.node(0.15, 0.5);
    let j = b.node(0.7, 0.5);
    let l = b.node(1.0, 0.5);
    b.edge(r, m, 1.0);
    b.edge(m, u, 0.5);
    b.edge(m, v, 0.5);
    b.edge(u, j, 0.5);
    b.edge(v, j, 0.5);
    b.edge(j, l, 1.0);
    b.tip(l, TipKind::Atom);
    out.push(("loop".to_string(), b.build(1.0, true).expect("loop fixture")));
    out
}

pub fn run_validator_suite(cfg: &ExperimentConfig) -> Result<Vec<ValidatorRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let s_values = if cfg.s_values.is_empty() { vec![0.75] } else { cfg.s_values.clone() };
    let t = cfg.t_grid()?.and_then(|g| g.first().copied());
    for (i, spec) in cfg.seeds.iter().enumerate() {
        let spec = t.map_or_else(|| spec.clone(), |t| spec.with_height(t));
        let p = spec.build(s_values[0])?.pattern;
        rows.push(ValidatorRow {
            id: format!("seed{i}:{}", spec.kind()),
            origin: "construction".into(),
            report: validate(&p, &ValidationConfig::for_constructions()),
            enforced: false,
        });
    }
    if cfg.optimize {
        let t = t.unwrap_or(1.0);
        for &s in &s_values {
            let tr = topology_search(&cfg.optimizer_config(s, t))?;
            rows.push(ValidatorRow {
                id: format!("optimized:s={s}:T={t}"),
                origin: "optimized".into(),
                report: tr.validation.clone(),
                enforced: true,
            });
        }
    }
    for (name, p) in adversarial_fixtures() {
        rows.push(ValidatorRow {
            id: format!("fixture:{name}"),
            origin: "fixture".into(),
            report: validate(&p, &ValidationConfig::for_constructions()),
            enforced: false,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub id: String,
    pub s: f64,
    pub spec: ConstructionSpec,
    pub energy: crate::pattern::EnergyBreakdown,
    pub measured: Option<f64>,
    pub bound_terms: Vec<f64>,
    pub nodes: usize,
    pub tips: usize,
}

pub fn run_construction_bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let s_values = if cfg.s_values.is_empty() { vec![0.75] } else { cfg.s_values.clone() };
    let jobs: Vec<(usize, f64)> = (0..cfg.seeds.len()).flat_map(|i| s_values.iter().map(move |&s| (i, s))).collect();
    jobs.par_iter()
        .map(|&(i, s)| {
            let spec = &cfg.seeds[i];
            let c = spec.build(s)?;
            let mode = cfg.mode_for(s);
            let energy = if mode == BoundaryMode::Atomic {
                optimizer::energy(&c.pattern, &cfg.optimizer_config(s, c.pattern.t_max()))?
            } else {
                c.pattern.full_energy(s, mode, cfg.k)?
            };
            Ok(BenchRow {
                id: format!("seed{i}:{}", spec.kind()),
                s,
                spec: spec.clone(),
                energy,
                measured: c.measured,
                bound_terms: c.bound_terms,
                nodes: c.pattern.nodes().len(),
                tips: c.pattern.tips().len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_has_eight_per_decade() {
        let g = log_grid(1e-4, 1e-1, 8).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[8] - 1e-3).abs() < 1e-15);
        assert!((g[24] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn fit_needs_four_points() {
        assert!(ScalingFit::new(vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).is_err());
        let f = ScalingFit::new(vec![(1.0, 1.0), (2.0, 2.1), (3.0, 2.9), (4.0, 4.2)]).unwrap();
        assert!(!f.flagged);
    }

    #[test]
    fn regimes_and_exponents() {
        assert_eq!(regime(0.2, 1e-3), Regime::Uniform);
        assert_eq!(regime(0.4, 1e-3), Regime::Intermediate);
        assert_eq!(regime(0.75, 1e-3), Regime::Dirac);
        assert_eq!(regime(0.75, 2.0), Regime::Thick);
        assert!((regime_exponent(0.4, Regime::Intermediate) - 3.0 / 7.0).abs() < 1e-15);
        assert!((regime_exponent(0.75, Regime::Dirac) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn config_grid_checks() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::GlobalScaling);
        cfg.s_values = vec![0.4];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.t_values = Some(vec![0.1, 0.01]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.t_values = None;
        cfg.t_range = Some([1e-3, 1e-1]);
        cfg.validate().unwrap();
        assert_eq!(cfg.t_grid().unwrap().unwrap().len(), 17);
    }

    #[test]
    fn coarsening_keeps_cell_masses() {
        let mu = Measure::Block(crate::fixtures::cantor_blocks(9));
        let c = coarsen(&mu, 6).unwrap();
        assert!((c.total_mass() - 1.0).abs() < 1e-12);
        for x in [0.1, 0.3, 0.7, 0.9] {
            let r = 0.125;
            assert!((c.ball_mass(x, r) - mu.ball_mass(x, r)).abs() <= 2.0 * mu.ball_mass(x, 1.0 / 64.0) + 1e-12);
        }
        let lebesgue = coarsen(&Measure::Block(crate::fixtures::lebesgue_blocks(1000)), 4).unwrap();
        assert!((lebesgue.ball_mass(0.5, 0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adversarial_fixtures_fail() {
        let fixtures = adversarial_fixtures();
        assert_eq!(fixtures.len(), 2);
        for (name, p) in fixtures {
            let rep = validate(&p, &ValidationConfig::for_constructions());
            assert!(!rep.all_passed(), "{name}");
            assert!(rep.failures().iter().all(|f| f.witness.is_some()));
        }
    }
}
