//! Staged experiment runs: boundary set, hull, Lipschitz and volume profiles,
//! heat and Green shell integrals, smoothing, barrier and harmonic ball sweep,
//! driven by a versioned JSON configuration and reported as JSON, CSV and SVG.
//!
//! Each stage draws from its own child of the seed stream, so switching a
//! stage off leaves the outputs of the others unchanged. A stage that errors
//! marks every stage depending on it as skipped and the report as partial.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barrier::{
    assemble_phi, bump_profile, delta_field, phi_shell, subharmonicity_probe, validity_radius, GreenSpec, DELTA_MIN_RADIUS,
};
use crate::boundary::{
    bent_boundary, bent_embed, gen_cantor, gen_pair, gen_round_circle, gen_snowflake, invariant_dimension, BentPlaneFamily,
    BoundarySet,
};
use crate::error::{Error, Result};
use crate::fit::{fit_decay, DecayFit};
use crate::geometry::{SpaceConfig, SpacePoint};
use crate::hull::{build_hull, dist_to_hull, lipschitz_profile, volume_profile, GeodesicHull, PairPolicy};
use crate::kernel::{decay_fit, greens_shell_bound, shell_heat_sweep, KernelModel, ShellOptions};
use crate::mesh::mesh_ball;
use crate::mollify::{
    build_net, color_net, fd_tension, periodic_net, shell_points, smooth_map, DiscreteMap, PointMap, RegionMesh, Retraction,
    SeparatedNet, UnfoldedRetraction,
};
use crate::report::{hex, DecayPlot, ExperimentReport, LogLine, Provenance, StageResult, StageStatus, Table, Uncertainty};
use crate::rng::RandomStream;
use crate::solver::{ball_sweep_inspect, schoen_yau_check, SolveOptions, StencilInterpolant};

pub const SCHEMA_VERSION: u32 = 1;

/// Configurations shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("thm13-cantor-h3", include_str!("../configs/thm13-cantor-h3.json")),
    ("geodesic-h2", include_str!("../configs/geodesic-h2.json")),
    ("bent-plane-h3", include_str!("../configs/bent-plane-h3.json")),
    ("circle-h3", include_str!("../configs/circle-h3.json")),
];

pub fn bundled(name: &str) -> Result<ExperimentConfig> {
    let name = name.trim_end_matches(".json");
    match BUNDLED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => ExperimentConfig::from_json(text),
        None => Err(Error::Config(format!("no bundled config named {name:?}"))),
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub a: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Two antipodal-at-`angle` ideal points.
    Pair { angle: f64 },
    RoundCircle { m: usize },
    Cantor { ratio: f64, depth: usize },
    Snowflake { roughness: f64, depth: usize },
    BentPlane { theta: f64, m: usize },
}

impl GeneratorSpec {
    /// Dimension of the limit set, when known in closed form.
    pub fn theoretical_dimension(&self) -> Option<f64> {
        match *self {
            GeneratorSpec::Pair { .. } => Some(0.0),
            GeneratorSpec::RoundCircle { .. } | GeneratorSpec::BentPlane { .. } => Some(1.0),
            GeneratorSpec::Cantor { ratio, .. } => Some(2f64.ln() / (1.0 / ratio).ln()),
            GeneratorSpec::Snowflake { roughness, .. } => Some(2f64.ln() / -(0.25 + roughness * roughness).sqrt().ln()),
        }
    }

    fn build(&self, n: usize) -> Result<BoundarySet> {
        match *self {
            GeneratorSpec::Pair { angle } => gen_pair(n, angle),
            GeneratorSpec::RoundCircle { m } => gen_round_circle(m, n),
            GeneratorSpec::Cantor { ratio, depth } => gen_cantor(ratio, depth, n),
            GeneratorSpec::Snowflake { roughness, depth } => gen_snowflake(roughness, depth),
            GeneratorSpec::BentPlane { theta, m } => bent_boundary(&BentPlaneFamily::new(theta)?, m),
        }
    }
}

/// Closed interval with optional ends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl Band {
    pub fn between(lo: f64, hi: f64) -> Self {
        Self { lo: Some(lo), hi: Some(hi) }
    }
    pub fn at_least(lo: f64) -> Self {
        Self { lo: Some(lo), hi: None }
    }
    pub fn at_most(hi: f64) -> Self {
        Self { lo: None, hi: Some(hi) }
    }
    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && self.lo.map_or(true, |l| x >= l) && self.hi.map_or(true, |h| x <= h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    #[serde(default = "DimensionSpec::trials")]
    pub trials: usize,
    #[serde(default = "DimensionSpec::t_max")]
    pub t_max: f64,
    /// Default: within 0.15 of the closed-form dimension, when there is one.
    #[serde(default)]
    pub band: Option<Band>,
}

impl DimensionSpec {
    fn trials() -> usize {
        4
    }
    fn t_max() -> f64 {
        2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSpec {
    #[serde(default = "LipschitzSpec::shells")]
    pub shells: Vec<f64>,
    #[serde(default = "LipschitzSpec::pairs")]
    pub pairs: usize,
    #[serde(default = "LipschitzSpec::step")]
    pub step: f64,
    /// Band on the log-slope; default `[-1.25 a, -0.7 a]`.
    #[serde(default)]
    pub band: Option<Band>,
}

impl LipschitzSpec {
    fn shells() -> Vec<f64> {
        vec![1.0, 2.0, 3.0, 4.0, 5.0]
    }
    fn pairs() -> usize {
        200
    }
    fn step() -> f64 {
        0.01
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    #[serde(default = "one")]
    pub d: f64,
    #[serde(default = "VolumeSpec::rho_max")]
    pub rho_max: f64,
    #[serde(default = "VolumeSpec::samples")]
    pub samples: usize,
    /// Band on the growth rate; default at most `a beta + 0.3`.
    #[serde(default)]
    pub band: Option<Band>,
}

impl VolumeSpec {
    fn rho_max() -> f64 {
        8.0
    }
    fn samples() -> usize {
        100_000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSpec {
    #[serde(default = "HeatSpec::d")]
    pub d: f64,
    #[serde(default = "HeatSpec::times")]
    pub times: Vec<f64>,
    #[serde(default = "HeatSpec::samples")]
    pub samples: usize,
    #[serde(default = "HeatSpec::radius_max")]
    pub radius_max: f64,
    /// Band on the decay rate; default at least `0.5 a^2 beta (n - 1 - beta)`.
    #[serde(default)]
    pub band: Option<Band>,
    /// Largest accepted `stderr / rate`.
    #[serde(default = "HeatSpec::max_rel_stderr")]
    pub max_rel_stderr: f64,
}

impl HeatSpec {
    fn d() -> f64 {
        2.0
    }
    fn times() -> Vec<f64> {
        (1..=10).map(f64::from).collect()
    }
    fn samples() -> usize {
        2000
    }
    fn radius_max() -> f64 {
        24.0
    }
    fn max_rel_stderr() -> f64 {
        0.2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenStageSpec {
    #[serde(default = "HeatSpec::d")]
    pub d: f64,
    /// Evaluation points at these distances from the origin along a random ray.
    #[serde(default = "GreenStageSpec::radii")]
    pub radii: Vec<f64>,
    #[serde(default = "GreenStageSpec::samples")]
    pub samples: usize,
}

impl GreenStageSpec {
    fn radii() -> Vec<f64> {
        vec![0.0, 2.0, 4.0, 8.0]
    }
    fn samples() -> usize {
        1000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSpec {
    #[serde(default = "MollifierSpec::r")]
    pub r: f64,
    /// Region mesh spacing (below `r / 2`).
    #[serde(default = "MollifierSpec::h")]
    pub h: f64,
    /// Translation length of an invariant net along the single geodesic of
    /// the hull; the net is then built on one period and copied.
    #[serde(default)]
    pub period: Option<f64>,
}

impl MollifierSpec {
    fn r() -> f64 {
        0.5
    }
    fn h() -> f64 {
        0.15
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    #[serde(default = "BarrierSpec::probes")]
    pub probes: usize,
    /// Probes are drawn at distance at most this from the origin ...
    #[serde(default = "BarrierSpec::probe_radius")]
    pub probe_radius: f64,
    /// ... and at hull distance in `[min_hull_distance, probe_radius)`.
    #[serde(default = "BarrierSpec::min_hull_distance")]
    pub min_hull_distance: f64,
    /// Candidate validity radii, increasing, from 2.
    #[serde(default = "BarrierSpec::radius_grid")]
    pub radius_grid: Vec<f64>,
    /// Required lower bound on the Laplacian of delta beyond the validity radius.
    #[serde(default = "BarrierSpec::floor")]
    pub floor: f64,
    #[serde(default = "BarrierSpec::fd_h")]
    pub fd_h: f64,
    /// Shell parameters whose sups are compared.
    #[serde(default = "BarrierSpec::shells")]
    pub shells: Vec<f64>,
    #[serde(default = "BarrierSpec::shell_tolerance")]
    pub shell_tolerance: f64,
    /// Working probes for the Green term.
    #[serde(default = "BarrierSpec::working")]
    pub working: usize,
    /// Required: `Delta Phi >= factor exp(-a dist)` at `fraction` of the probes.
    #[serde(default = "BarrierSpec::factor")]
    pub factor: f64,
    #[serde(default = "BarrierSpec::fraction")]
    pub fraction: f64,
}

impl BarrierSpec {
    fn probes() -> usize {
        1000
    }
    fn probe_radius() -> f64 {
        8.0
    }
    fn min_hull_distance() -> f64 {
        0.2
    }
    fn radius_grid() -> Vec<f64> {
        vec![2.0, 2.5, 3.0, 3.5, 4.0]
    }
    fn floor() -> f64 {
        0.1
    }
    fn fd_h() -> f64 {
        0.02
    }
    fn shells() -> Vec<f64> {
        vec![4.0, 6.0, 8.0]
    }
    fn shell_tolerance() -> f64 {
        0.01
    }
    fn working() -> usize {
        8
    }
    fn factor() -> f64 {
        0.5
    }
    fn fraction() -> f64 {
        0.95
    }
}

/// Dirichlet data of the ball sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryData {
    /// The smoothed map, sampled on the largest mesh.
    #[default]
    Smoothed,
    /// The retraction itself.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub radii: Vec<f64>,
    pub h: f64,
    #[serde(default = "SolverSpec::tol")]
    pub tol: f64,
    #[serde(default = "SolverSpec::max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub boundary: BoundaryData,
    /// Largest accepted ratio of sup distances at the last two radii (when
    /// there are two).
    #[serde(default = "SolverSpec::plateau")]
    pub plateau: f64,
    #[serde(default = "SolverSpec::sy_slack")]
    pub sy_slack: f64,
    #[serde(default = "BarrierSpec::fraction")]
    pub sy_fraction: f64,
}

impl SolverSpec {
    fn tol() -> f64 {
        1e-3
    }
    fn max_iters() -> usize {
        20_000
    }
    fn plateau() -> f64 {
        1.1
    }
    fn sy_slack() -> f64 {
        0.05
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullSpec {
    #[serde(default)]
    pub policy: PairPolicy,
}

/// A full experiment. Sections left out disable their stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub space: SpaceSpec,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub hull: HullSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat: Option<HeatSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green: Option<GreenStageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollifier: Option<MollifierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn check(ok: bool, path: &str, msg: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(field(path, msg))
    }
}

fn positive(x: f64, path: &str) -> Result<()> {
    check(x > 0.0 && x.is_finite(), path, format!("must be positive, got {x}"))
}

fn increasing(v: &[f64], path: &str) -> Result<()> {
    check(!v.is_empty() && v.windows(2).all(|w| w[1] > w[0]), path, "must be a nonempty increasing list")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }

    /// Checks every section against the preconditions of the stage it feeds.
    pub fn validate(&self) -> Result<()> {
        check(self.schema == SCHEMA_VERSION, "schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema))?;
        check(!self.name.is_empty(), "name", "must not be empty")?;
        check(self.space.n == 2 || self.space.n == 3, "space.n", format!("must be 2 or 3, got {}", self.space.n))?;
        positive(self.space.a, "space.a")?;
        let n = self.space.n;
        match self.generator {
            GeneratorSpec::Pair { angle } => {
                check(angle > 0.0 && angle <= std::f64::consts::PI, "generator.angle", format!("must lie in (0, pi], got {angle}"))?
            }
            GeneratorSpec::RoundCircle { m } => check(m >= 8, "generator.m", format!("must be at least 8, got {m}"))?,
            GeneratorSpec::Cantor { ratio, depth } => {
                check(ratio > 0.0 && ratio < 0.5, "generator.ratio", format!("must lie in (0, 1/2), got {ratio}"))?;
                check((1..=24).contains(&depth), "generator.depth", format!("must lie in 1..=24, got {depth}"))?;
            }
            GeneratorSpec::Snowflake { roughness, depth } => {
                check(n == 3, "generator", "snowflake curves live in the sphere at infinity of H3")?;
                check((0.0..0.5).contains(&roughness), "generator.roughness", format!("must lie in [0, 1/2), got {roughness}"))?;
                check((1..=16).contains(&depth), "generator.depth", format!("must lie in 1..=16, got {depth}"))?;
            }
            GeneratorSpec::BentPlane { theta, m } => {
                check(n == 3, "generator", "the bent plane lives in H3")?;
                check(
                    (0.0..std::f64::consts::FRAC_PI_2).contains(&theta),
                    "generator.theta",
                    format!("must lie in [0, pi/2), got {theta}"),
                )?;
                check(m >= 4, "generator.m", format!("must be at least 4, got {m}"))?;
            }
        }
        if let Some(d) = &self.dimension {
            check(d.trials <= 64, "dimension.trials", "at most 64")?;
            check(d.t_max >= 0.0, "dimension.t_max", "must be nonnegative")?;
        }
        if let Some(l) = &self.lipschitz {
            increasing(&l.shells, "lipschitz.shells")?;
            check(l.shells.len() >= 3, "lipschitz.shells", "need at least 3 shells for a slope")?;
            check(l.pairs > 0, "lipschitz.pairs", "must be positive")?;
            positive(l.step, "lipschitz.step")?;
        }
        if let Some(v) = &self.volume {
            positive(v.d, "volume.d")?;
            check(v.rho_max >= 4.0, "volume.rho_max", "must be at least 4 (the fit starts at 2)")?;
            check(v.samples >= 100, "volume.samples", "must be at least 100")?;
        }
        if let Some(h) = &self.heat {
            check(h.d >= 0.0, "heat.d", "must be nonnegative")?;
            increasing(&h.times, "heat.times")?;
            check(h.times.len() >= 5 && h.times[0] >= 1.0, "heat.times", "need at least 5 times, all >= 1")?;
            check(h.samples >= 10, "heat.samples", "must be at least 10")?;
            positive(h.radius_max, "heat.radius_max")?;
            positive(h.max_rel_stderr, "heat.max_rel_stderr")?;
        }
        if let Some(g) = &self.green {
            check(g.d >= 0.0, "green.d", "must be nonnegative")?;
            check(!g.radii.is_empty() && g.radii.iter().all(|r| *r >= 0.0), "green.radii", "must be nonnegative and nonempty")?;
            check(g.samples >= 10, "green.samples", "must be at least 10")?;
        }
        if let Some(m) = &self.mollifier {
            positive(m.h, "mollifier.h")?;
            check(m.r > 2.0 * m.h, "mollifier.r", format!("must exceed twice mollifier.h, got {}", m.r))?;
            if let Some(p) = m.period {
                check(p > 2.0 * m.r, "mollifier.period", format!("must exceed 2 r, got {p}"))?;
                check(
                    matches!(self.generator, GeneratorSpec::Pair { angle } if angle == std::f64::consts::PI),
                    "mollifier.period",
                    "needs a single geodesic through the origin (pair with angle pi)",
                )?;
            }
        }
        if let Some(b) = &self.barrier {
            check(self.mollifier.is_some(), "barrier", "needs the mollifier section")?;
            check(b.probes >= 10, "barrier.probes", "must be at least 10")?;
            check(b.probe_radius > 2.0, "barrier.probe_radius", "must exceed 2")?;
            check(b.min_hull_distance > 0.0, "barrier.min_hull_distance", "must be positive")?;
            increasing(&b.radius_grid, "barrier.radius_grid")?;
            check(b.radius_grid[0] >= DELTA_MIN_RADIUS, "barrier.radius_grid", "must start at 2 or above")?;
            positive(b.fd_h, "barrier.fd_h")?;
            increasing(&b.shells, "barrier.shells")?;
            positive(b.shell_tolerance, "barrier.shell_tolerance")?;
            check(b.working >= 1 && b.working <= b.probes, "barrier.working", "must lie in 1..=probes")?;
            check((0.0..=1.0).contains(&b.fraction), "barrier.fraction", "must lie in [0, 1]")?;
        }
        if let Some(s) = &self.solver {
            increasing(&s.radii, "solver.radii")?;
            check(s.h > 0.0 && s.h <= s.radii[0] / 4.0, "solver.h", "must lie in (0, radii[0] / 4]")?;
            positive(s.tol, "solver.tol")?;
            check(s.max_iters > 0, "solver.max_iters", "must be positive")?;
            check(s.plateau >= 1.0, "solver.plateau", "must be at least 1")?;
            check(s.sy_slack >= 0.0, "solver.sy_slack", "must be nonnegative")?;
            if matches!(self.generator, GeneratorSpec::BentPlane { .. }) {
                check(s.boundary == BoundaryData::Raw, "solver.boundary", "the bent-plane sweep takes raw data")?;
            }
            if s.boundary == BoundaryData::Smoothed {
                check(self.mollifier.is_some(), "solver.boundary", "smoothed data needs the mollifier section")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// stages

/// Stage identifiers in execution order. The position of a stage is the
/// child index of its random stream.
pub const STAGES: &[&str] = &["gen", "dimension", "hull", "lipschitz", "volume", "heat", "green", "smooth", "phi", "solve"];

fn stream(root: &RandomStream, id: &str) -> RandomStream {
    root.child(STAGES.iter().position(|s| *s == id).expect("known stage") as u64)
}

fn need<'x, T>(x: &'x Option<T>, what: &str) -> Result<&'x T> {
    x.as_ref().ok_or_else(|| Error::Config(format!("{what} is not available")))
}

struct Runner<'o> {
    stages: Vec<StageResult>,
    timings: BTreeMap<String, f64>,
    observe: &'o mut dyn FnMut(&StageResult, f64),
}

impl Runner<'_> {
    fn ok(&self, id: &str) -> bool {
        self.stages.iter().any(|s| s.id == id && s.status == StageStatus::Ok)
    }

    fn run<T>(&mut self, id: &str, deps: &[&str], f: impl FnOnce(&mut StageResult) -> Result<T>) -> Option<T> {
        let mut st = StageResult::new(id);
        if let Some(bad) = deps.iter().find(|d| !self.ok(d)) {
            st.status = StageStatus::Skipped(format!("stage {bad} did not complete"));
            (self.observe)(&st, 0.0);
            self.stages.push(st);
            return None;
        }
        let t = Instant::now();
        let out = f(&mut st);
        let secs = t.elapsed().as_secs_f64();
        let value = match out {
            Ok(v) => Some(v),
            Err(e) => {
                st.status = StageStatus::Failed(e.to_string());
                None
            }
        };
        self.timings.insert(id.into(), secs);
        (self.observe)(&st, secs);
        self.stages.push(st);
        value
    }
}

fn decay_plot(name: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64], fit: Option<&DecayFit>) -> DecayPlot {
    DecayPlot {
        name: name.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        points: x.iter().zip(y).map(|(&a, &b)| [a, b]).collect(),
        fit: fit.map(|f| LogLine { intercept: f.log_prefactor, slope: -f.rate }),
        bands: vec![],
    }
}

fn band_edges(b: &Band) -> Vec<f64> {
    b.lo.into_iter().chain(b.hi).collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Barrier outputs used by the sweep cross-check.
struct PhiSummary {
    sup: f64,
    tension_ratio: f64,
}

/// Runs every enabled stage.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_observed(cfg, |_, _| {})
}

/// [`run`], calling `observe` with every finished stage and its wall time.
pub fn run_observed(cfg: &ExperimentConfig, mut observe: impl FnMut(&StageResult, f64)) -> Result<ExperimentReport> {
    cfg.validate()?;
    let space = SpaceConfig::new(cfg.space.n, cfg.space.a)?;
    let (n, a) = (cfg.space.n, cfg.space.a);
    let origin = space.origin();
    let root = RandomStream::new(cfg.seed);
    let mut r = Runner { stages: vec![], timings: BTreeMap::new(), observe: &mut observe };

    let set = r.run("gen", &[], |st| {
        let s = cfg.generator.build(n)?;
        st.exact("points", s.len() as f64);
        if let Some(b) = cfg.generator.theoretical_dimension() {
            st.exact("beta_theory", b);
        }
        st.artifacts.insert("boundary".into(), serde_json::to_value(&s)?);
        Ok(s)
    });

    let mut beta = cfg.generator.theoretical_dimension();
    if let Some(ds) = &cfg.dimension {
        let est = r.run("dimension", &["gen"], |st| {
            let est = invariant_dimension(need(&set, "boundary set")?, &stream(&root, "dimension"), ds.trials, ds.t_max)?;
            st.measure("beta", est.beta, Uncertainty::Tolerance(est.residual));
            st.exact("scales", est.scales as f64);
            let band = ds.band.or_else(|| beta.map(|b| Band::between(b - 0.15, b + 0.15)));
            if let Some(band) = band {
                st.check("beta", est.beta, band);
            }
            let mut t = Table::new("trials", &["trial", "translation", "slope"]);
            for g in est.per_gamma.iter().flatten() {
                t.push(vec![g.trial as f64, g.translation, g.slope]);
            }
            st.tables.push(t);
            Ok(est.beta)
        });
        beta = beta.or(est);
    }

    let hull = r.run("hull", &["gen"], |st| {
        let h = build_hull(need(&set, "boundary set")?, cfg.hull.policy, a, &stream(&root, "hull"))?;
        st.exact("lines", h.num_lines() as f64);
        st.exact("pad", h.pad);
        st.artifacts.insert("hull".into(), serde_json::to_value(&h)?);
        Ok(h)
    });

    if let Some(ls) = &cfg.lipschitz {
        r.run("lipschitz", &["hull"], |st| {
            let prof = lipschitz_profile(need(&hull, "hull")?, &stream(&root, "lipschitz"), &ls.shells, ls.pairs, ls.step)?;
            let slope = -prof.fit.rate;
            st.measure("slope", slope, Uncertainty::Stderr(prof.fit.rate_stderr));
            let band = ls.band.unwrap_or(Band::between(-1.25 * a, -0.7 * a));
            st.check("slope", slope, band);
            let mut t = Table::new("profile", &["shell", "ratio", "pairs", "seam_pairs"]);
            for i in 0..prof.shells.len() {
                t.push(vec![prof.shells[i], prof.ratios[i], prof.pairs_used[i] as f64, prof.seam_pairs[i] as f64]);
            }
            st.tables.push(t);
            let mut plot = decay_plot("profile", "hull distance", "max stretch", &prof.shells, &prof.ratios, Some(&prof.fit));
            plot.band_slopes(&band_edges(&band));
            st.plots.push(plot);
            Ok(())
        });
    }

    if let Some(vs) = &cfg.volume {
        r.run("volume", &["hull"], |st| {
            let prof = volume_profile(need(&hull, "hull")?, &origin, vs.d, vs.rho_max, vs.samples, &stream(&root, "volume"))?;
            let rate = prof.growth_rate();
            st.measure("rate", rate, Uncertainty::Stderr(prof.growth_stderr()));
            st.exact("empty_annuli", prof.empty_annuli.len() as f64);
            let band = vs.band.or_else(|| beta.map(|b| Band::at_most(a * b + 0.3)));
            match band {
                Some(band) => {
                    st.check("rate", rate, band);
                }
                None => return Err(field("volume.band", "no default without a known dimension")),
            }
            let mut t = Table::new("profile", &["rho", "volume", "stderr", "hits", "samples"]);
            for i in 0..prof.rho_grid.len() {
                t.push(vec![prof.rho_grid[i], prof.volume[i], prof.volume_stderr[i], prof.hits[i] as f64, prof.samples[i] as f64]);
            }
            st.tables.push(t);
            let mut plot = decay_plot("profile", "rho", "volume", &prof.rho_grid, &prof.volume, None);
            plot.fit = Some(LogLine { intercept: prof.fit.log_prefactor, slope: rate });
            plot.band_slopes(&band.map(|b| band_edges(&b)).unwrap_or_default());
            st.plots.push(plot);
            Ok(())
        });
    }

    let model = KernelModel::exact(space);
    if let Some(hs) = &cfg.heat {
        r.run("heat", &["hull"], |st| {
            let opts = ShellOptions { samples: hs.samples, radius_max: hs.radius_max, ..ShellOptions::default() };
            let sweep = shell_heat_sweep(&model, need(&hull, "hull")?, &origin, hs.d, &hs.times, &stream(&root, "heat"), &opts)?;
            let fit = decay_fit(&sweep.values)?;
            st.measure("rate", fit.rate, Uncertainty::Stderr(fit.rate_stderr));
            st.measure("radius", sweep.radius, Uncertainty::Tolerance(0.0));
            let band = match hs.band {
                Some(b) => b,
                None => {
                    let b = beta.ok_or_else(|| field("heat.band", "no default without a known dimension"))?;
                    let threshold = 0.5 * a * a * b * (n as f64 - 1.0 - b);
                    st.exact("threshold", threshold);
                    Band::at_least(threshold)
                }
            };
            st.check("rate", fit.rate, band);
            st.check("relative_stderr", fit.rate_stderr / fit.rate.abs(), Band::at_most(hs.max_rel_stderr));
            st.check("truncated", flag(sweep.truncated), Band::at_most(0.0));
            let mut t = Table::new("shell", &["t", "value", "stderr"]);
            for v in &sweep.values {
                t.push(vec![v.t, v.value, v.stderr]);
            }
            st.tables.push(t);
            let ts: Vec<f64> = sweep.values.iter().map(|v| v.t).collect();
            let vs: Vec<f64> = sweep.values.iter().map(|v| v.value).collect();
            let mut plot = decay_plot("shell", "t", "shell integral", &ts, &vs, Some(&fit));
            plot.band_slopes(&band_edges(&band).iter().map(|r| -r).collect::<Vec<_>>());
            st.plots.push(plot);
            Ok(())
        });
    }

    if let Some(gs) = &cfg.green {
        r.run("green", &["hull"], |st| {
            let mut rng = stream(&root, "green");
            let dir = space.random_direction(&mut rng);
            let xs: Vec<SpacePoint> = gs.radii.iter().map(|&t| space.point_at(&dir[..n], t)).collect::<Result<_>>()?;
            let opts = ShellOptions { samples: gs.samples, ..ShellOptions::default() };
            let rep = greens_shell_bound(&model, need(&hull, "hull")?, gs.d, &xs, &rng.child(0), &opts)?;
            st.measure("max", rep.max, Uncertainty::Stderr(rep.stderr[rep.argmax]));
            st.check("max", rep.max, Band::at_least(0.0));
            st.check("truncated", rep.truncated.iter().filter(|t| **t).count() as f64, Band::at_most(0.0));
            let mut t = Table::new("mass", &["radius", "hull_distance", "value", "stderr", "truncated"]);
            for i in 0..xs.len() {
                t.push(vec![gs.radii[i], rep.hull_distance[i], rep.value[i], rep.stderr[i], flag(rep.truncated[i])]);
            }
            st.tables.push(t);
            Ok(())
        });
    }

    let hull_ref = hull.as_ref();
    let smoothed = match (&cfg.mollifier, hull_ref) {
        (Some(ms), _) => r.run("smooth", &["hull"], |st| {
            let hull = need(&hull, "hull")?;
            let probes = match &cfg.barrier {
                Some(bs) => draw_probes(&space, hull, bs, &stream(&root, "phi").child(0))?,
                None => vec![],
            };
            let net = mollifier_net(cfg, ms, &space, hull, &probes)?;
            st.exact("net_centers", net.len() as f64);
            st.exact("classes", net.classes as f64);
            st.exact("class_separation", net.class_separation());
            let sm = smooth_map(Retraction { hull }, &net)?;
            if !probes.is_empty() {
                st.exact("probe_displacement", sm.sup_displacement(&probes)?);
            }
            Ok((sm, probes))
        }),
        (None, _) => None,
    };

    let phi = match (&cfg.barrier, &smoothed) {
        (Some(bs), _) => r.run("phi", &["smooth"], |st| {
            let hull = need(&hull, "hull")?;
            let (sm, probes) = need(&smoothed, "smoothed map")?;
            barrier_stage(st, bs, &space, hull, sm, probes, &stream(&root, "phi").child(1))
        }),
        (None, _) => None,
    };

    if let Some(ss) = &cfg.solver {
        let mut deps = vec!["hull"];
        if ss.boundary == BoundaryData::Smoothed {
            deps.push("smooth");
            if cfg.barrier.is_some() {
                deps.push("phi");
            }
        }
        r.run("solve", &deps, |st| {
            let hull = need(&hull, "hull")?;
            let opts = SolveOptions { tol: ss.tol, max_iters: ss.max_iters, ..SolveOptions::default() };
            match (&cfg.generator, ss.boundary) {
                (GeneratorSpec::BentPlane { theta, .. }, _) => {
                    let family = BentPlaneFamily::new(*theta)?;
                    let plane = SpaceConfig::new(2, a)?;
                    let map = UnfoldedRetraction { hull, family };
                    let witness = |mesh: &crate::mesh::BallMesh, sol: &DiscreteMap| -> Result<f64> {
                        let interp = StencilInterpolant::new(mesh, &sol.values, plane)?;
                        let mut w: f64 = 0.0;
                        for (x, _) in shell_points(&plane, &plane.origin(), mesh.radius - 2.0 * ss.h, ss.h)? {
                            let hx = interp.eval(&bent_embed(&family, &x)?)?;
                            w = w.max(plane.dist(&x, &hx));
                        }
                        Ok(w)
                    };
                    sweep_stage(st, &map, &space, ss, &opts, Some(&witness))?;
                }
                (_, BoundaryData::Raw) => {
                    sweep_stage(st, &Retraction { hull }, &space, ss, &opts, None)?;
                }
                (_, BoundaryData::Smoothed) => {
                    let (sm, _) = need(&smoothed, "smoothed map")?;
                    let rmax = *ss.radii.last().expect("validated");
                    let big = mesh_ball(space, &origin, rmax, ss.h)?;
                    let data = DiscreteMap::materialize(sm, space, big.vertices)?;
                    let last = sweep_stage(st, &data, &space, ss, &opts, None)?;
                    if let Some(p) = &phi {
                        let bound = 2.0 * p.tension_ratio * p.sup;
                        st.exact("barrier_bound", bound);
                        st.check("sup_dist_over_barrier_bound", last / bound, Band::at_most(1.0));
                    }
                }
            }
            Ok(())
        });
    }
    let _ = hull_ref;

    let stages = r.stages;
    let partial = stages.iter().any(|s| s.status != StageStatus::Ok);
    let passed = !partial && stages.iter().all(|s| s.passed());
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        provenance: Provenance {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            schema: SCHEMA_VERSION,
            config_hash: cfg.hash()?,
            result_hash: ExperimentReport::hash_stages(&stages)?,
        },
        stages,
        partial,
        passed,
        timings: r.timings,
    })
}

/// Probes at distance below `probe_radius` from the origin and hull distance
/// in `[min_hull_distance, probe_radius)`.
fn draw_probes(space: &SpaceConfig, hull: &GeodesicHull, bs: &BarrierSpec, rng: &RandomStream) -> Result<Vec<SpacePoint>> {
    let mut rng = rng.clone();
    let mut probes = Vec::with_capacity(bs.probes);
    let mut tries = 0usize;
    while probes.len() < bs.probes {
        tries += 1;
        if tries > 1000 * bs.probes {
            return Err(field("barrier.min_hull_distance", "probe rejection rate too high"));
        }
        let dir = space.random_direction(&mut rng);
        let p = space.point_at(&dir[..space.n], rng.uniform_in(0.0, bs.probe_radius))?;
        let (dk, _) = dist_to_hull(&p, hull)?;
        if dk >= bs.min_hull_distance && dk < bs.probe_radius {
            probes.push(p);
        }
    }
    Ok(probes)
}

/// Net for the smoothing: an invariant net on a strip around the hull line
/// when a period is given, otherwise a colored net on balls around the probes
/// and, for smoothed sweep data, the largest solver ball.
fn mollifier_net(
    cfg: &ExperimentConfig,
    ms: &MollifierSpec,
    space: &SpaceConfig,
    hull: &GeodesicHull,
    probes: &[SpacePoint],
) -> Result<SeparatedNet> {
    let origin = space.origin();
    let solver_reach = cfg.solver.as_ref().filter(|s| s.boundary == BoundaryData::Smoothed).map(|s| *s.radii.last().expect("validated"));
    if let Some(period) = ms.period {
        let probe_reach = cfg.barrier.as_ref().map(|b| b.probe_radius);
        let reach = solver_reach.into_iter().chain(probe_reach).fold(0.0, f64::max) + ms.r + 0.5;
        let line = hull.line(0);
        let shift = space.translation(&line, period)?;
        let u = hull.endpoints(0).1.direction();
        let strip: Vec<SpacePoint> = shell_points(space, &origin, reach + period, ms.h)?
            .into_iter()
            .map(|x| x.0)
            .filter(|p| {
                let t = ((p.c[1] * u[0] + p.c[2] * u[1] + p.c[3] * u[2]) / p.c[0]).atanh() / space.a;
                t.abs() < 0.5 * period
            })
            .collect();
        let strip = RegionMesh::from_points(*space, strip, ms.h)?;
        let copies = (reach / period).ceil() as usize + 1;
        return periodic_net(&strip, ms.r, &shift, copies, |q| space.dist(&origin, q) < reach);
    }
    let mut points = vec![];
    if !probes.is_empty() {
        points.extend(RegionMesh::balls(*space, probes, ms.r + ms.h, ms.h)?.points);
    }
    if let Some(rmax) = solver_reach {
        points.extend(RegionMesh::ball(*space, &origin, rmax + ms.r + ms.h, ms.h)?.points);
    }
    if points.is_empty() {
        points.extend(RegionMesh::ball(*space, &origin, 2.0 * ms.r, ms.h)?.points);
    }
    let region = RegionMesh::from_points(*space, points, ms.h)?;
    color_net(&build_net(&region, ms.r)?)
}

fn barrier_stage<M: PointMap>(
    st: &mut StageResult,
    bs: &BarrierSpec,
    space: &SpaceConfig,
    hull: &GeodesicHull,
    sm: &M,
    probes: &[SpacePoint],
    rng: &RandomStream,
) -> Result<PhiSummary> {
    let a = space.a;
    let delta = delta_field(sm, *space)?;
    let mut far = vec![];
    for p in probes {
        if dist_to_hull(p, hull)?.0 >= DELTA_MIN_RADIUS {
            far.push(*p);
        }
    }
    let (c, rep) = validity_radius(&delta, hull, &far, bs.fd_h, &bs.radius_grid, bs.floor)?;
    st.exact("validity_radius", c);
    st.measure("lap_lower", rep.min_laplacian, Uncertainty::Tolerance(bs.fd_h * bs.fd_h));
    st.measure("grad_upper", rep.max_gradient, Uncertainty::Tolerance(bs.fd_h * bs.fd_h));
    let profile = bump_profile(rep.min_laplacian, rep.max_gradient.powi(2), a)?;
    st.exact("eps", profile.eps);
    st.check("profile_audit", flag(profile.audit(100_000).is_ok()), Band::at_least(1.0));
    let mut sups = vec![];
    for &d in &bs.shells {
        let s = phi_shell(profile, &delta, d, c)?.sup();
        st.exact(&format!("shell_sup_{d}"), s);
        sups.push(s);
    }
    let (lo, hi) = sups.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
    st.check("shell_sup_spread", (hi - lo) / hi, Band::at_most(bs.shell_tolerance));

    let phi = assemble_phi(profile, &delta, hull, &GreenSpec::default(), c, &probes[..bs.working], rng)?;
    st.exact("sup_bound", phi.sup_bound);
    st.measure("green_stderr_max", phi.green_stderr_max, Uncertainty::Tolerance(0.0));
    let sub = subharmonicity_probe(&phi, hull, probes, bs.fd_h)?;
    st.measure("c_min", sub.c_min, Uncertainty::Tolerance(bs.fd_h * bs.fd_h));
    st.measure("c_q05", sub.c_q05, Uncertainty::Tolerance(bs.fd_h * bs.fd_h));
    st.check("fraction_above", sub.fraction_above(a, bs.factor), Band::at_least(bs.fraction));

    // constant of |tau(smoothed map)| <= C' Delta Phi over the probes
    let mut ratio: f64 = 0.0;
    let mut t = Table::new("probes", &["hull_distance", "value", "laplacian", "tension"]);
    for (p, rec) in probes.iter().zip(&sub.records) {
        let tau = fd_tension(sm, space, p, bs.fd_h)?;
        if rec.laplacian > 0.0 {
            ratio = ratio.max(tau / rec.laplacian);
        }
        t.push(vec![rec.hull_distance, rec.value, rec.laplacian, tau]);
    }
    st.measure("tension_ratio", ratio, Uncertainty::Tolerance(bs.fd_h * bs.fd_h));
    st.tables.push(t);

    let pos: Vec<(f64, f64)> = sub.records.iter().filter(|r| r.laplacian > 0.0).map(|r| (r.hull_distance, r.laplacian)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pos.into_iter().unzip();
    let fit = if x.len() >= 2 { fit_decay(&x, &y, None).ok() } else { None };
    let mut plot = decay_plot("laplacian", "hull distance", "Laplacian", &x, &y, fit.as_ref());
    plot.bands = vec![LogLine { intercept: bs.factor.ln(), slope: -a }];
    st.plots.push(plot);
    Ok(PhiSummary { sup: phi.sup_bound, tension_ratio: ratio })
}

type Witness<'w> = &'w dyn Fn(&crate::mesh::BallMesh, &DiscreteMap) -> Result<f64>;

/// Ball sweep with Schoen-Yau checks at every radius; returns the last sup distance.
fn sweep_stage<M: PointMap>(
    st: &mut StageResult,
    map: &M,
    source: &SpaceConfig,
    ss: &SolverSpec,
    opts: &SolveOptions,
    witness: Option<Witness<'_>>,
) -> Result<f64> {
    let target = map.target();
    let mut sy = vec![];
    let mut wit = vec![];
    let out = ball_sweep_inspect(map, *source, &source.origin(), &ss.radii, ss.h, opts, |mesh, sol| {
        let f: Vec<SpacePoint> = mesh.vertices.iter().map(|p| map.eval(p)).collect::<Result<_>>()?;
        sy.push(schoen_yau_check(mesh, &sol.values, &f, &target, ss.sy_slack)?.fraction_ok);
        if let Some(w) = witness {
            wit.push(w(mesh, sol)?);
        }
        Ok(())
    })?;
    let rep = &out.report;
    let mut t = Table::new("sweep", &["radius", "vertices", "iterations", "converged", "residual", "sup_dist", "schoen_yau", "witness"]);
    for (i, s) in rep.reports.iter().enumerate() {
        t.push(vec![
            s.radius,
            s.vertices as f64,
            s.iterations as f64,
            flag(s.converged),
            s.residual,
            s.sup_dist,
            sy[i],
            wit.get(i).copied().unwrap_or(f64::NAN),
        ]);
    }
    st.tables.push(t);
    let last = *rep.sup_dists().last().expect("nonempty sweep");
    st.measure("sup_dist", last, Uncertainty::Tolerance(ss.h));
    st.check("unconverged", rep.reports.iter().filter(|s| !s.converged).count() as f64, Band::at_most(0.0));
    if rep.reports.len() >= 2 {
        st.check("plateau", rep.plateau_ratio(), Band::at_most(ss.plateau));
    }
    st.check("schoen_yau", sy.iter().copied().fold(1.0, f64::min), Band::at_least(ss.sy_fraction));
    if let Some(&w) = wit.last() {
        st.measure("witness", w, Uncertainty::Tolerance(ss.h));
        st.check("witness", w, Band::at_least(0.0));
        if wit.len() >= 2 {
            st.check("witness_plateau", w / wit[wit.len() - 2], Band::at_most(ss.plateau));
        }
    }
    Ok(last)
}
