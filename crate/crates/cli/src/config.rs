//! Experiment configuration: a versioned TOML document, validated in full
//! before anything is computed.

use std::path::{Path, PathBuf};

use greenlab::flow::FieldKind;
use greenlab::space::DEFAULT_POINT_BUDGET;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// The only schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

/// Upper limit on any sampling budget (pairs, triples, seeds, functions).
pub const MAX_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    pub space: SpaceConfig,
    #[serde(default)]
    pub grounding: GroundingConfig,
    pub heat: Option<HeatConfig>,
    pub green: Option<GreenConfig>,
    pub maximal: Option<MaximalConfig>,
    pub flow: Option<FlowConfig>,
    pub transport: Option<TransportConfig>,
    pub dimension: Option<DimensionConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Also write every trajectory of the flow stage (large).
    #[serde(default)]
    pub trajectories: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            trajectories: false,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("greenlab-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    /// Regular lattice `side^dim` with spacing `spacing`.
    Grid {
        dim: usize,
        side: usize,
        spacing: f64,
        #[serde(default = "one")]
        measure_scale: f64,
        /// Attach the Euclidean volume model beyond the sampled range. Without
        /// it `F`, `H` and the Green far field are undefined.
        #[serde(default = "yes")]
        tail_model: bool,
        core_fraction: Option<f64>,
        #[serde(default = "default_budget")]
        point_budget: u64,
    },
    /// A space document written by `space build` (plus its coordinate block
    /// for point clouds).
    File {
        path: PathBuf,
        coordinates: Option<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_budget() -> u64 {
    DEFAULT_POINT_BUDGET
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    #[default]
    Dirichlet,
    Shift,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingConfig {
    #[serde(default)]
    pub mode: GroundingMode,
    /// Green shift `c` (the operator shift in `shift` mode, where it must be
    /// positive).
    #[serde(default)]
    pub c: f64,
    /// Time cutoff `ε` of the Green integral.
    #[serde(default)]
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Auto,
    Spectral,
    Stepping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    pub times: Vec<f64>,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default = "heat_sources")]
    pub sources: usize,
    #[serde(default = "heat_pairs")]
    pub pairs: usize,
    /// Crank-Nicolson steps of the cross-check kernel; 0 skips the check.
    #[serde(default = "heat_steps")]
    pub reference_steps: usize,
}

fn heat_sources() -> usize {
    4
}

fn heat_pairs() -> usize {
    24
}

fn heat_steps() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    /// Compare `G` with `F` and `|∇G|` with `H`.
    #[serde(default = "yes")]
    pub estimates: bool,
    #[serde(default = "green_sources")]
    pub sources: usize,
    #[serde(default = "green_pairs")]
    pub pairs: usize,
    /// Physical distance range of the pairs; default `[3h, core/2]`.
    pub distance_range: Option<[f64; 2]>,
    /// Points of the `d_G` table used by the triangle fit.
    #[serde(default = "table_points")]
    pub table_points: usize,
    #[serde(default = "triples")]
    pub triples: usize,
    #[serde(default = "midpoint_triples")]
    pub midpoint_triples: usize,
    #[serde(default = "doubling_sources")]
    pub doubling_sources: usize,
    /// `d_G` radii of the doubling fit; by default the `d_G` range of table
    /// pairs at physical distance `2h .. max(3h, core/4)`.
    pub doubling_radii: Option<Vec<f64>>,
}

fn green_sources() -> usize {
    6
}

fn green_pairs() -> usize {
    200
}

fn table_points() -> usize {
    32
}

fn triples() -> usize {
    2000
}

fn midpoint_triples() -> usize {
    500
}

fn doubling_sources() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximalConfig {
    /// Evaluation points of the `M^G ≤ C M` fit.
    #[serde(default = "maximal_points")]
    pub points: usize,
    /// Random test functions (ball indicators are added on top).
    #[serde(default = "maximal_functions")]
    pub functions: usize,
    /// Pairs of the scalar Green-maximal fit.
    #[serde(default = "maximal_pairs")]
    pub pairs: usize,
}

fn maximal_points() -> usize {
    24
}

fn maximal_functions() -> usize {
    10
}

fn maximal_pairs() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub field: FieldKind,
    pub horizon: f64,
    pub dt: Option<f64>,
    /// Lusin levels `ε`, each in `(0, 1)`.
    #[serde(default = "lusin_eps")]
    pub lusin_eps: Vec<f64>,
    #[serde(default = "lusin_pairs")]
    pub lusin_pairs: usize,
    /// Centres of the Crippa-De Lellis functional lie within this physical
    /// radius of the origin; default `0.35 core`.
    pub centre_radius: Option<f64>,
    /// Physical radii whose `d_G` values are the ball radii of the
    /// functional; default `[0.25, 0.5] core`.
    pub phi_radius_range: Option<[f64; 2]>,
    #[serde(default = "phi_radii")]
    pub phi_radii: usize,
    #[serde(default = "derivative_pairs")]
    pub derivative_pairs: usize,
    #[serde(default = "vector_pairs")]
    pub vector_pairs: usize,
}

fn lusin_eps() -> Vec<f64> {
    vec![0.1]
}

fn lusin_pairs() -> usize {
    2000
}

fn phi_radii() -> usize {
    4
}

fn derivative_pairs() -> usize {
    100
}

fn vector_pairs() -> usize {
    40
}

/// Uniform measure on the lattice points inside a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Ball { centre: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { centre, radius } => {
                let d2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 < radius * radius
            }
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Region::Ball { centre, .. } => centre.len(),
            Region::Box { lo, .. } => lo.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub source: Region,
    pub target: Region,
    #[serde(default = "transport_times")]
    pub times: Vec<f64>,
    #[serde(default)]
    pub curvature: f64,
    /// Dimension parameter `N'` of the entropy; default the ambient dimension.
    pub n_prime: Option<f64>,
    #[serde(default = "bin_cells")]
    pub bin_cells: usize,
    #[serde(default = "bandwidth_cells")]
    pub bandwidth_cells: f64,
    #[serde(default = "drift_steps")]
    pub drift_steps: usize,
}

fn transport_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn bin_cells() -> usize {
    1
}

fn bandwidth_cells() -> f64 {
    1.0
}

fn drift_steps() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    /// Radius window; default `[4h, min(core/2, sampled radius)]`.
    pub window: Option<[f64; 2]>,
    /// Points in the per-point table; every core point enters the
    /// histogram regardless.
    #[serde(default = "dimension_points")]
    pub table_points: usize,
    #[serde(default = "yes")]
    pub asymptotics: bool,
    /// Seeds of the constancy diagnostic (needs a flow section).
    #[serde(default = "constancy_samples")]
    pub constancy_samples: usize,
}

fn dimension_points() -> usize {
    200
}

fn constancy_samples() -> usize {
    400
}

/// Every tolerance must be strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Residual of the ball-integral identities of `F` and `H`.
    pub fubini: f64,
    pub semigroup: f64,
    pub cross_mode: f64,
    /// Cap on every fitted constant for it to count as finite.
    pub constant_cap: f64,
    /// Slack on `Φ_{0,r} ≤ log 2`.
    pub phi_zero: f64,
    /// Coupled-derivative residual relative to the Gronwall scale.
    pub derivative: f64,
    pub lusin_deficit: f64,
    pub duality_gap: f64,
    pub speed: f64,
    pub pushforward_cells: f64,
    /// Allowed negative CD slack relative to `|lhs|`.
    pub cd_slack: f64,
    pub asymptotics: f64,
    pub constancy_tv: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            fubini: 0.02,
            semigroup: 1e-8,
            cross_mode: 0.01,
            constant_cap: 1e6,
            phi_zero: 1e-9,
            derivative: 0.05,
            lusin_deficit: 0.1,
            duality_gap: 1e-8,
            speed: 0.01,
            pushforward_cells: 2.0,
            cd_slack: 1e-9,
            asymptotics: 0.05,
            constancy_tv: 0.05,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 13] {
        [
            ("fubini", self.fubini),
            ("semigroup", self.semigroup),
            ("cross_mode", self.cross_mode),
            ("constant_cap", self.constant_cap),
            ("phi_zero", self.phi_zero),
            ("derivative", self.derivative),
            ("lusin_deficit", self.lusin_deficit),
            ("duality_gap", self.duality_gap),
            ("speed", self.speed),
            ("pushforward_cells", self.pushforward_cells),
            ("cd_slack", self.cd_slack),
            ("asymptotics", self.asymptotics),
            ("constancy_tv", self.constancy_tv),
        ]
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn budget(name: &str, v: usize) -> Result<()> {
    if v <= MAX_SAMPLES {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} = {v} exceeds the sampling cap {MAX_SAMPLES}"
        )))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        for (name, v) in self.tolerances.entries() {
            positive(&format!("tolerances.{name}"), v)?;
        }
        let ambient = match &self.space {
            SpaceConfig::Grid {
                dim,
                side,
                spacing,
                measure_scale,
                core_fraction,
                point_budget,
                ..
            } => {
                if *dim == 0 || *side < 3 {
                    return Err(invalid("grid needs dim ≥ 1 and side ≥ 3"));
                }
                positive("space.spacing", *spacing)?;
                positive("space.measure_scale", *measure_scale)?;
                if let Some(f) = core_fraction {
                    if !(*f > 0.0 && *f < 1.0) {
                        return Err(invalid(format!("space.core_fraction {f} outside (0, 1)")));
                    }
                }
                let points = (*side as u128)
                    .checked_pow(*dim as u32)
                    .unwrap_or(u128::MAX);
                if points > *point_budget as u128 {
                    return Err(invalid(format!(
                        "{side}^{dim} points exceed the point budget {point_budget}"
                    )));
                }
                Some(*dim)
            }
            SpaceConfig::File { .. } => None,
        };
        let g = &self.grounding;
        if !(g.c >= 0.0 && g.c.is_finite()) || !(g.eps >= 0.0 && g.eps.is_finite()) {
            return Err(invalid("grounding.c and grounding.eps must be nonnegative"));
        }
        if g.mode == GroundingMode::Shift {
            positive("grounding.c (shift mode)", g.c)?;
        }
        if let Some(h) = &self.heat {
            if h.times.is_empty() {
                return Err(invalid("heat.times is empty"));
            }
            for &t in &h.times {
                positive("heat.times", t)?;
            }
            budget("heat.pairs", h.pairs)?;
            if h.sources == 0 || h.pairs == 0 {
                return Err(invalid("heat needs sources and pairs"));
            }
        }
        if let Some(gc) = &self.green {
            for (n, v) in [
                ("green.pairs", gc.pairs),
                ("green.triples", gc.triples),
                ("green.midpoint_triples", gc.midpoint_triples),
                ("green.table_points", gc.table_points),
            ] {
                budget(n, v)?;
            }
            if gc.sources == 0 || gc.pairs == 0 || gc.doubling_sources == 0 {
                return Err(invalid("green needs sources, pairs and doubling sources"));
            }
            if gc.table_points < 3 {
                return Err(invalid("green.table_points must be at least 3"));
            }
            if let Some([a, b]) = gc.distance_range {
                positive("green.distance_range", a)?;
                if b <= a {
                    return Err(invalid("green.distance_range is empty"));
                }
            }
            if let Some(r) = &gc.doubling_radii {
                for &v in r {
                    positive("green.doubling_radii", v)?;
                }
            }
        }
        if let Some(m) = &self.maximal {
            budget("maximal.points", m.points)?;
            budget("maximal.functions", m.functions)?;
            budget("maximal.pairs", m.pairs)?;
            if m.points == 0 || m.pairs == 0 {
                return Err(invalid("maximal needs points and pairs"));
            }
        }
        if let Some(f) = &self.flow {
            positive("flow.horizon", f.horizon)?;
            if let Some(dt) = f.dt {
                positive("flow.dt", dt)?;
            }
            for &e in &f.lusin_eps {
                if !(e > 0.0 && e < 1.0) {
                    return Err(invalid(format!("flow.lusin_eps {e} outside (0, 1)")));
                }
            }
            if let Some(r) = f.centre_radius {
                positive("flow.centre_radius", r)?;
            }
            if let Some([a, b]) = f.phi_radius_range {
                positive("flow.phi_radius_range", a)?;
                if b <= a {
                    return Err(invalid("flow.phi_radius_range is empty"));
                }
            }
            if f.phi_radii == 0 {
                return Err(invalid("flow.phi_radii must be positive"));
            }
            budget("flow.lusin_pairs", f.lusin_pairs)?;
            budget("flow.derivative_pairs", f.derivative_pairs)?;
            budget("flow.vector_pairs", f.vector_pairs)?;
        }
        if let Some(t) = &self.transport {
            for r in [&t.source, &t.target] {
                if let Some(n) = ambient {
                    if r.dim() != n {
                        return Err(invalid(format!(
                            "transport region has dimension {}, space has {n}",
                            r.dim()
                        )));
                    }
                }
                match r {
                    Region::Ball { radius, .. } => positive("transport region radius", *radius)?,
                    Region::Box { lo, hi } => {
                        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                            return Err(invalid("transport box needs lo < hi in every axis"));
                        }
                    }
                }
            }
            for &s in &t.times {
                if !(s > 0.0 && s < 1.0) {
                    return Err(invalid(format!("transport time {s} outside (0, 1)")));
                }
            }
            if let Some(n) = t.n_prime {
                positive("transport.n_prime", n)?;
            }
            if !t.curvature.is_finite() {
                return Err(invalid("transport.curvature must be finite"));
            }
            if t.bin_cells == 0 || t.drift_steps == 0 {
                return Err(invalid(
                    "transport.bin_cells and drift_steps must be positive",
                ));
            }
            positive("transport.bandwidth_cells", t.bandwidth_cells)?;
        }
        if let Some(d) = &self.dimension {
            if let Some([a, b]) = d.window {
                positive("dimension.window", a)?;
                if b <= a {
                    return Err(invalid("dimension.window is empty"));
                }
            }
            budget("dimension.table_points", d.table_points)?;
            budget("dimension.constancy_samples", d.constancy_samples)?;
        }
        Ok(())
    }
}
