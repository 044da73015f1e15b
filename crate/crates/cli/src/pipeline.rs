//! Stage orchestration: space → heat → green → maximal → flow → transport →
//! dimension. Every stage appends rows to the bundle and owns its ledger
//! files; a module error stops the run with a failure record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use greenlab::dimension::{
    constancy_diagnostic, core_dimension_summary, default_window, estimate_dimension,
    estimate_dimensions, verify_green_asymptotics, write_dimension_csv, Window,
};
use greenlab::flow::{
    cell_average_g, integrate_rlf, make_field, phi_star, verify_green_derivative,
    verify_lusin_lipschitz, verify_rlf_axioms, verify_vector_maximal, write_trajectories_csv,
    FieldKind, FlowResult, GreenEvaluator, HistogramConfig, StationaryKernel, TestFunction,
    VectorFieldSpec, RIGID_TOLERANCE,
};
use greenlab::green::{
    fit_g_doubling, fit_proportionality, fit_quasi_triangle, midpoint_triples, psi_tail_comparison,
    quasi_metric, verify_green_estimates, write_ratio_csv, GreenField,
};
use greenlab::heat::{
    assemble_laplacian, fit_gaussian_bounds, verify_heat_properties, Grounding, HeatBackend,
    HeatKernel, LaplaceOperator,
};
use greenlab::maximal::{
    hardy_littlewood, verify_mg_domination, verify_scalar_green_maximal, write_maximal_csv,
    RadiusSearch,
};
use greenlab::sampling::{self, random_triples, stratified_pairs, subsample};
use greenlab::space::{
    build_grid_space_with_budget, read_coordinates, write_coordinates, MeasureLaw, SpaceDoc,
};
use greenlab::transport::{
    geodesic_drift, geodesic_speed_ratio, solve_w2, verify_cd_entropy, verify_geodesic_pushforward,
    write_plan_csv, DiscreteMeasure,
};
use greenlab::MmSpace;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{
    BackendChoice, ExperimentConfig, GroundingMode, Region, SpaceConfig, TransportConfig,
};
use crate::plot::{
    emit_plot_data, histogram_series, CD_SLACK, DIMENSION_HISTOGRAM, GRADIENT_RATIO, GREEN_RATIO,
    PHI_STAR_HISTOGRAM,
};
use crate::report::{Bound, Bundle, FailureRecord, SeriesPoint};
use crate::{HarnessError, Result};

/// Identifiers of the estimates under test, carried by every report row.
pub mod statement {
    pub const SPACE: &str = "space.sample";
    pub const VOLUME_IDENTITIES: &str = "space.tail_integral_identities";
    pub const HEAT_SEMIGROUP: &str = "heat.semigroup_property";
    pub const HEAT_BACKENDS: &str = "heat.backend_agreement";
    pub const HEAT_GAUSSIAN: &str = "heat.gaussian_bounds";
    pub const GREEN_COMPARISON: &str = "green.comparison_with_volume_integrals";
    pub const GREEN_PSI: &str = "green.heat_integral_comparison";
    pub const GREEN_TRIANGLE: &str = "green.quasi_triangle_inequality";
    pub const GREEN_POWER_LAW: &str = "green.quasi_metric_power_law";
    pub const GREEN_DOUBLING: &str = "green.ball_doubling";
    pub const MAXIMAL_DOMINATION: &str = "maximal.green_maximal_domination";
    pub const MAXIMAL_SCALAR: &str = "maximal.scalar_green_estimate";
    pub const FLOW_AXIOMS: &str = "flow.regular_lagrangian_flow";
    pub const FLOW_DERIVATIVE: &str = "flow.coupled_green_derivative";
    pub const FLOW_VECTOR: &str = "flow.vector_green_estimate";
    pub const FLOW_PHI: &str = "flow.crippa_de_lellis_functional";
    pub const FLOW_LUSIN: &str = "flow.lusin_lipschitz_regularity";
    pub const TRANSPORT_PLAN: &str = "transport.optimal_plan";
    pub const TRANSPORT_GEODESIC: &str = "transport.constant_speed_geodesic";
    pub const TRANSPORT_PUSHFORWARD: &str = "transport.drift_pushforward";
    pub const TRANSPORT_CD: &str = "transport.entropy_convexity";
    pub const DIMENSION_REGULAR: &str = "dimension.regular_set";
    pub const DIMENSION_ASYMPTOTICS: &str = "dimension.green_asymptotics";
    pub const DIMENSION_CONSTANCY: &str = "dimension.constancy_along_flow";
}

use statement as st;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Space,
    Heat,
    Green,
    Maximal,
    Flow,
    Transport,
    Dimension,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Space,
        Stage::Heat,
        Stage::Green,
        Stage::Maximal,
        Stage::Flow,
        Stage::Transport,
        Stage::Dimension,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Space => "space",
            Stage::Heat => "heat",
            Stage::Green => "green",
            Stage::Maximal => "maximal",
            Stage::Flow => "flow",
            Stage::Transport => "transport",
            Stage::Dimension => "dimension",
        }
    }

    fn configured(self, cfg: &ExperimentConfig) -> bool {
        match self {
            Stage::Space => true,
            Stage::Heat => cfg.heat.is_some(),
            Stage::Green => cfg.green.is_some(),
            Stage::Maximal => cfg.maximal.is_some(),
            Stage::Flow => cfg.flow.is_some(),
            Stage::Transport => cfg.transport.is_some(),
            Stage::Dimension => cfg.dimension.is_some(),
        }
    }
}

/// Run the requested stages (every configured one when `stages` is empty)
/// and write the bundle, ledgers and plot data into the output directory.
/// A module error ends the run early; the bundle then carries the failure.
pub fn run_experiment(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Bundle> {
    cfg.validate()?;
    let mut selected: Vec<Stage> = if stages.is_empty() {
        Stage::ALL
            .into_iter()
            .filter(|s| s.configured(cfg))
            .collect()
    } else {
        let mut v = stages.to_vec();
        v.push(Stage::Space);
        v
    };
    selected.sort_unstable();
    selected.dedup();
    if let Some(s) = selected.iter().find(|s| !s.configured(cfg)) {
        return Err(HarnessError::MissingSection(s.name()));
    }
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut ctx = Context {
        cfg,
        dir: dir.clone(),
        bundle: Bundle::new(cfg.seed),
        statement: st::SPACE,
        space: None,
        op: None,
        field: None,
        kernel: None,
        flow: None,
    };
    for &stage in &selected {
        ctx.bundle.stages.push(stage.name().into());
        let outcome = match stage {
            Stage::Space => ctx.space_stage(),
            Stage::Heat => ctx.heat_stage(),
            Stage::Green => ctx.green_stage(),
            Stage::Maximal => ctx.maximal_stage(),
            Stage::Flow => ctx.flow_stage(),
            Stage::Transport => ctx.transport_stage(),
            Stage::Dimension => ctx.dimension_stage(),
        };
        match outcome {
            Ok(()) => {}
            Err(HarnessError::Module(e)) => {
                ctx.bundle.failure = Some(FailureRecord {
                    stage: stage.name().into(),
                    statement: ctx.statement.into(),
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let bundle = ctx.bundle;
    bundle.write(&dir)?;
    emit_plot_data(&bundle, &[], &dir.join("plots"))?;
    Ok(bundle)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    bundle: Bundle,
    /// Statement under test, named in the failure record.
    statement: &'static str,
    space: Option<Arc<MmSpace>>,
    op: Option<Arc<LaplaceOperator>>,
    field: Option<Arc<GreenField>>,
    kernel: Option<Arc<StationaryKernel>>,
    flow: Option<(VectorFieldSpec, FlowResult)>,
}

/// Geometric sequence of `count` values from `lo` to `hi`.
fn geometric(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Context<'_> {
    /// Substream of the single seeded generator, one per stage, so a stage
    /// draws the same samples whether run alone or in a full pipeline.
    fn rng(&self, stage: Stage) -> ChaCha8Rng {
        let mut r = sampling::rng(self.cfg.seed);
        r.set_stream(stage as u64);
        r
    }

    fn space(&self) -> Arc<MmSpace> {
        self.space.clone().expect("space stage runs first")
    }

    fn op(&mut self) -> Result<Arc<LaplaceOperator>> {
        if let Some(op) = &self.op {
            return Ok(op.clone());
        }
        let grounding = match self.cfg.grounding.mode {
            GroundingMode::Dirichlet => Grounding::Dirichlet,
            GroundingMode::Shift => Grounding::Shift(self.cfg.grounding.c),
        };
        let op = Arc::new(assemble_laplacian(self.space(), grounding)?);
        self.op = Some(op.clone());
        Ok(op)
    }

    fn field(&mut self) -> Result<Arc<GreenField>> {
        if let Some(f) = &self.field {
            return Ok(f.clone());
        }
        let op = self.op()?;
        let g = &self.cfg.grounding;
        let field = Arc::new(GreenField::new(op, g.c, g.eps)?);
        self.field = Some(field.clone());
        Ok(field)
    }

    fn kernel(&mut self) -> Result<Arc<StationaryKernel>> {
        if let Some(k) = &self.kernel {
            return Ok(k.clone());
        }
        let k = Arc::new(StationaryKernel::build(&self.space())?);
        self.kernel = Some(k.clone());
        Ok(k)
    }

    fn cap(&self) -> Bound {
        Bound::AtMost {
            limit: self.cfg.tolerances.constant_cap,
        }
    }

    /// Core points at least half as deep as the deepest one.
    fn deep_core(&self) -> Vec<usize> {
        let space = self.space();
        let core = space.core_points();
        let deepest = core.iter().map(|&i| space.clearance(i)).fold(0.0, f64::max);
        core.into_iter()
            .filter(|&i| space.clearance(i) >= 0.5 * deepest)
            .collect()
    }

    fn space_stage(&mut self) -> Result<()> {
        self.statement = st::SPACE;
        let space = match &self.cfg.space {
            SpaceConfig::Grid {
                dim,
                side,
                spacing,
                measure_scale,
                tail_model,
                core_fraction,
                point_budget,
            } => {
                let law = if *measure_scale == 1.0 {
                    MeasureLaw::Lebesgue
                } else {
                    MeasureLaw::Scaled(*measure_scale)
                };
                let mut s =
                    build_grid_space_with_budget(*dim, *side, *spacing, law, *point_budget)?;
                if !tail_model {
                    s = s.with_tail(None);
                }
                if let Some(f) = core_fraction {
                    s = s.with_core_fraction(*f);
                }
                s
            }
            SpaceConfig::File { path, coordinates } => {
                let text = std::fs::read_to_string(path)?;
                let doc: SpaceDoc = serde_json::from_str(&text)?;
                let coords = match coordinates {
                    Some(p) => Some(read_coordinates(p)?),
                    None => None,
                };
                MmSpace::from_doc(&doc, coords)?
            }
        };
        let coordinate_file = space
            .coordinate_block()
            .map(|block| (block.to_vec(), "coordinates.bin"));
        let doc = space.to_doc(coordinate_file.as_ref().map(|c| c.1));
        if let Some((block, name)) = &coordinate_file {
            write_coordinates(&self.dir.join(name), block)?;
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        std::fs::write(self.dir.join("space.json"), text)?;
        let b = &mut self.bundle;
        b.info(st::SPACE, "points", space.len() as f64);
        b.info(st::SPACE, "core_points", space.core_points().len() as f64);
        b.info(st::SPACE, "core_radius", space.core_radius());
        if let Some(t) = space.tail() {
            b.info(st::SPACE, "tail_exponent", t.exponent);
            let x = space.centre();
            let radius = (0.5 * space.core_radius()).min(space.sampled_radius(x));
            // F and H exist only for non-parabolic growth.
            if t.exponent > 2.0 && space.is_core(x) && radius > 0.0 {
                self.statement = st::VOLUME_IDENTITIES;
                let rep = space.verify_integral_identities(x, radius)?;
                let bound = Bound::AtMost {
                    limit: self.cfg.tolerances.fubini,
                };
                b.check(
                    st::VOLUME_IDENTITIES,
                    "f_identity_residual",
                    rep.f_residual,
                    bound,
                );
                b.check(
                    st::VOLUME_IDENTITIES,
                    "h_identity_residual",
                    rep.h_residual,
                    bound,
                );
            }
        }
        self.space = Some(Arc::new(space));
        Ok(())
    }

    fn heat_stage(&mut self) -> Result<()> {
        let hc = self.cfg.heat.clone().expect("configured");
        let tol = self.cfg.tolerances.clone();
        let space = self.space();
        let op = self.op()?;
        let mut rng = self.rng(Stage::Heat);
        let backend = match hc.backend {
            BackendChoice::Auto => HeatBackend::Auto,
            BackendChoice::Spectral => HeatBackend::Spectral { modes: None },
            BackendChoice::Stepping => HeatBackend::Stepping {
                steps: hc.reference_steps.max(1),
            },
        };
        self.statement = st::HEAT_SEMIGROUP;
        let kernel = HeatKernel::new(op.clone(), backend)?;
        let spectral = matches!(kernel.backend(), HeatBackend::Spectral { .. });
        let reference = if spectral && hc.reference_steps > 0 {
            Some(HeatKernel::new(
                op.clone(),
                HeatBackend::Stepping {
                    steps: hc.reference_steps,
                },
            )?)
        } else {
            None
        };
        let core = space.core_points();
        let sources = subsample(&core, hc.sources, &mut rng);
        let h = op.resolution();
        let pairs = stratified_pairs(
            &space,
            &sources,
            &core,
            (h, space.core_radius()),
            hc.pairs,
            &mut rng,
        );
        if pairs.is_empty() {
            return Err(greenlab::Error::InvalidParameter(
                "no core pairs for the heat checks".into(),
            )
            .into());
        }
        let rep = verify_heat_properties(&kernel, &hc.times, &pairs, reference.as_ref())?;
        let b = &mut self.bundle;
        if spectral {
            b.check(
                st::HEAT_SEMIGROUP,
                "semigroup_residual",
                rep.semigroup_residual,
                Bound::AtMost {
                    limit: tol.semigroup,
                },
            );
        } else {
            b.info(
                st::HEAT_SEMIGROUP,
                "semigroup_residual",
                rep.semigroup_residual,
            );
        }
        b.info(
            st::HEAT_SEMIGROUP,
            "symmetry_residual",
            rep.symmetry_residual,
        );
        b.info(
            st::HEAT_SEMIGROUP,
            "positivity_violation",
            rep.positivity_violation,
        );
        b.info(st::HEAT_SEMIGROUP, "mass_min", rep.mass_min);
        b.info(st::HEAT_SEMIGROUP, "mass_max", rep.mass_max);
        if let Some(c) = rep.cross_mode {
            b.check(
                st::HEAT_BACKENDS,
                "backend_disagreement",
                c,
                Bound::AtMost {
                    limit: tol.cross_mode,
                },
            );
        }
        let window = (4.0 * h * h, space.core_radius().powi(2));
        let times: Vec<f64> = hc
            .times
            .iter()
            .copied()
            .filter(|&t| t >= window.0 && t <= window.1)
            .collect();
        if times.is_empty() {
            b.info(st::HEAT_GAUSSIAN, "gaussian_times_in_window", 0.0);
            return Ok(());
        }
        self.statement = st::HEAT_GAUSSIAN;
        let fit = fit_gaussian_bounds(&kernel, &times, &pairs, tol.constant_cap)?;
        let cap = self.cap();
        let b = &mut self.bundle;
        b.check(st::HEAT_GAUSSIAN, "gaussian_c1", fit.c1, cap);
        b.info(st::HEAT_GAUSSIAN, "gaussian_c_fit", fit.c);
        b.info(st::HEAT_GAUSSIAN, "gaussian_c1_gradient", fit.c1_gradient);
        Ok(())
    }

    fn green_stage(&mut self) -> Result<()> {
        let gc = self.cfg.green.clone().expect("configured");
        let space = self.space();
        let field = self.field()?;
        let h = field.op().resolution();
        let mut rng = self.rng(Stage::Green);
        let core = space.core_points();
        let cap = self.cap();
        if gc.estimates {
            self.statement = st::GREEN_COMPARISON;
            let [lo, hi] = gc
                .distance_range
                .unwrap_or([3.0 * h, 0.5 * space.core_radius()]);
            let sources = subsample(&core, gc.sources, &mut rng);
            let pairs = stratified_pairs(&space, &sources, &core, (lo, hi), gc.pairs, &mut rng);
            let rep = verify_green_estimates(&field, &pairs, self.cfg.tolerances.constant_cap)?;
            write_ratio_csv(create(&self.dir, "green_ratio.csv")?, &rep)?;
            let b = &mut self.bundle;
            b.check(st::GREEN_COMPARISON, "c2", rep.c2, cap);
            b.info(st::GREEN_COMPARISON, "g_over_f_min", rep.ratio_min);
            b.info(st::GREEN_COMPARISON, "g_over_f_median", rep.ratio_median);
            b.info(st::GREEN_COMPARISON, "g_over_f_max", rep.ratio_max);
            b.info(st::GREEN_COMPARISON, "grad_over_h_min", rep.grad_ratio_min);
            b.info(
                st::GREEN_COMPARISON,
                "grad_over_h_median",
                rep.grad_ratio_median,
            );
            b.info(st::GREEN_COMPARISON, "grad_over_h_max", rep.grad_ratio_max);
            b.info(st::GREEN_COMPARISON, "pairs_used", rep.pairs.len() as f64);
            let series = |label: &str, f: fn(&greenlab::green::PairRatio) -> f64| {
                rep.pairs
                    .iter()
                    .map(|p| SeriesPoint {
                        x: p.d,
                        y: f(p),
                        series: label.into(),
                    })
                    .collect::<Vec<_>>()
            };
            b.series
                .insert(GREEN_RATIO.into(), series("G/F", |p| p.ratio));
            b.series
                .insert(GRADIENT_RATIO.into(), series("gradG/H", |p| p.grad_ratio));
            if let Some(tail) = space.tail() {
                self.statement = st::GREEN_PSI;
                let psi = psi_tail_comparison(|s| tail.volume(s), &geometric(0.1, 10.0, 21))?;
                let b = &mut self.bundle;
                b.info(st::GREEN_PSI, "psi_ratio_min", psi.min);
                b.info(st::GREEN_PSI, "psi_ratio_max", psi.max);
            }
        }

        self.statement = st::GREEN_TRIANGLE;
        let points = subsample(&core, gc.table_points, &mut rng);
        let table = quasi_metric(&field, &points)?;
        let positions: Vec<usize> = (0..table.len()).collect();
        let mut triples = random_triples(&positions, gc.triples, &mut rng);
        triples.extend(midpoint_triples(
            &space,
            &table,
            gc.midpoint_triples,
            &mut rng,
        ));
        let tri = fit_quasi_triangle(&table, &triples);
        let b = &mut self.bundle;
        b.check(st::GREEN_TRIANGLE, "ct", tri.ct, cap);
        b.info(st::GREEN_TRIANGLE, "triples_used", tri.triples_used as f64);
        let span = (2.0 * h, (0.25 * space.core_radius()).max(3.0 * h));
        if let Ok(fit) = fit_proportionality(&space, &table, (span.0, 0.5 * space.core_radius())) {
            b.info(st::GREEN_POWER_LAW, "dg_prefactor", fit.prefactor);
            b.info(st::GREEN_POWER_LAW, "dg_exponent", fit.exponent);
        }

        // Sources near the centre keep B^G(x, 2r) inside the core.
        self.statement = st::GREEN_DOUBLING;
        let centre = space.centre();
        let near: Vec<usize> = core
            .iter()
            .copied()
            .filter(|&i| space.dist(centre, i) <= 0.25 * space.core_radius())
            .collect();
        let sources = subsample(&near, gc.doubling_sources, &mut rng);
        let radii = match &gc.doubling_radii {
            Some(r) => r.clone(),
            None => {
                let mut dg: Vec<f64> = Vec::new();
                for a in 0..table.len() {
                    for c in a + 1..table.len() {
                        let d = space.dist(table.points[a], table.points[c]);
                        if d >= span.0 && d <= span.1 {
                            dg.extend(table.get(a, c));
                        }
                    }
                }
                let lo = dg.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = dg.iter().copied().fold(0.0, f64::max);
                if dg.is_empty() || !(hi > lo) {
                    return Err(greenlab::Error::InvalidParameter(
                        "no table pairs in the doubling range; set green.doubling_radii".into(),
                    )
                    .into());
                }
                geometric(lo, hi, 4)
            }
        };
        let dbl = fit_g_doubling(&field, &sources, &radii)?;
        let b = &mut self.bundle;
        b.check(st::GREEN_DOUBLING, "cg", dbl.cg, cap);
        b.info(
            st::GREEN_DOUBLING,
            "doubling_samples",
            dbl.samples.len() as f64,
        );
        Ok(())
    }

    fn maximal_stage(&mut self) -> Result<()> {
        let mc = self.cfg.maximal.clone().expect("configured");
        let space = self.space();
        let field = self.field()?;
        let mut rng = self.rng(Stage::Maximal);
        let cap = self.cap();
        self.statement = st::MAXIMAL_DOMINATION;
        let deep = self.deep_core();
        let points = subsample(&deep, mc.points, &mut rng);
        let n = space.len();
        let mut functions: Vec<Vec<f64>> = (0..mc.functions)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let radius = 0.25 * space.core_radius();
        for &c in points.iter().take(4) {
            let mut f = vec![0.0; n];
            for y in space.ball(c, radius) {
                f[y] = 1.0;
            }
            functions.push(f);
        }
        let dom = verify_mg_domination(&field, &functions, &points, RadiusSearch::Exact)?;
        let b = &mut self.bundle;
        b.check(st::MAXIMAL_DOMINATION, "mg_over_m", dom.c, cap);

        self.statement = st::MAXIMAL_SCALAR;
        let f: Vec<f64> = (0..n)
            .map(|i| if space.is_core(i) { 1.0 } else { 0.0 })
            .collect();
        let pairs = stratified_pairs(
            &space,
            &points,
            &points,
            (0.25 * space.core_radius(), space.core_radius()),
            mc.pairs,
            &mut rng,
        );
        let fit = verify_scalar_green_maximal(&field, &f, &pairs, RadiusSearch::Exact)?;
        write_maximal_csv(create(&self.dir, "maximal.csv")?, &fit)?;
        let b = &mut self.bundle;
        b.check(st::MAXIMAL_SCALAR, "cm_scalar", fit.cm, cap);
        b.info(st::MAXIMAL_SCALAR, "cm_pairs", fit.rows.len() as f64);
        Ok(())
    }

    fn flow_stage(&mut self) -> Result<()> {
        let fc = self.cfg.flow.clone().expect("configured");
        let tol = self.cfg.tolerances.clone();
        let space = self.space();
        let mut rng = self.rng(Stage::Flow);
        let cap = self.cap();
        self.statement = st::FLOW_AXIOMS;
        let spec = make_field(fc.field.clone(), &space)?;
        let kernel = self.kernel()?;
        let seeds: Vec<usize> = (0..space.len()).filter(|&i| space.is_interior(i)).collect();
        let result = integrate_rlf(&space, &spec, &seeds, 0.0, fc.horizon, fc.dt)?;
        if self.cfg.output.trajectories {
            write_trajectories_csv(create(&self.dir, "trajectories.csv")?, &result)?;
        }
        let w = spec.half_width;
        let hist = HistogramConfig {
            seed: self.cfg.seed,
            ..HistogramConfig::default()
        };
        let rlf = verify_rlf_axioms(
            &space,
            &spec,
            &result,
            &TestFunction::standard_set(spec.dim, w),
            hist,
        )?;
        let b = &mut self.bundle;
        if matches!(spec.kind, FieldKind::Constant { .. }) {
            b.check(
                st::FLOW_AXIOMS,
                "flow_equation_residual",
                rlf.condition3_residual,
                Bound::AtMost { limit: 1e-10 },
            );
        } else {
            b.info(
                st::FLOW_AXIOMS,
                "flow_equation_residual",
                rlf.condition3_residual,
            );
        }
        b.info(
            st::FLOW_AXIOMS,
            "flow_equation_relative",
            rlf.condition3_relative,
        );
        b.check(
            st::FLOW_AXIOMS,
            "compressibility_l",
            rlf.compressibility.l,
            cap,
        );
        b.info(st::FLOW_AXIOMS, "seeds_exited", rlf.seeds_exited as f64);

        // Φ on d_G balls whose physical radii span the configured range.
        self.statement = st::FLOW_PHI;
        let core = space.core_radius();
        let centre_radius = fc.centre_radius.unwrap_or(0.35 * core);
        let centres: Vec<usize> = (0..result.seeds.len())
            .filter(|&i| {
                norm(result.position(i, 0)) < centre_radius && space.is_core(result.seeds[i])
            })
            .collect();
        let [rlo, rhi] = fc.phi_radius_range.unwrap_or([0.25 * core, 0.5 * core]);
        let origin = vec![0.0; spec.dim];
        let mut radii = Vec::new();
        for rho in geometric(rlo, rhi, fc.phi_radii) {
            let mut p = origin.clone();
            p[0] = rho;
            radii.push(kernel.dg(&origin, &p)?);
        }
        let steps: Vec<usize> = (0..=result.steps()).collect();
        let table = phi_star(&space, &result, kernel.as_ref(), &centres, &steps, &radii)?;
        let mut phi0 = 0.0f64;
        for c in 0..table.centres.len() {
            for r in 0..radii.len() {
                let v = table.get(c, 0, r);
                if v.is_finite() {
                    phi0 = phi0.max(v);
                }
            }
        }
        let star_max = table.phi_star.iter().copied().fold(0.0, f64::max);
        let b = &mut self.bundle;
        b.check(
            st::FLOW_PHI,
            "phi_at_time_zero",
            phi0,
            Bound::AtMost {
                limit: std::f64::consts::LN_2 + tol.phi_zero,
            },
        );
        b.info(st::FLOW_PHI, "phi_star_max", star_max);
        b.info(st::FLOW_PHI, "phi_star_l2", table.norm_l2);
        b.series.insert(
            PHI_STAR_HISTOGRAM.into(),
            histogram_series(&table.phi_star, 20, "phi_star"),
        );

        self.statement = st::FLOW_LUSIN;
        let lusin = verify_lusin_lipschitz(
            &space,
            &result,
            kernel.as_ref(),
            &table,
            &fc.lusin_eps,
            fc.lusin_pairs,
            self.cfg.seed,
        )?;
        let b = &mut self.bundle;
        b.info(st::FLOW_LUSIN, "pointwise_c", lusin.pointwise_c);
        for level in &lusin.levels {
            let tag = format!("eps_{}", level.eps);
            b.check(
                st::FLOW_LUSIN,
                &format!("lusin_deficit_{tag}"),
                level.deficit,
                Bound::AtMost {
                    limit: tol.lusin_deficit,
                },
            );
            b.check(
                st::FLOW_LUSIN,
                &format!("lusin_lipschitz_{tag}"),
                level.lipschitz,
                cap,
            );
        }

        self.statement = st::FLOW_DERIVATIVE;
        let g = cell_average_g(&spec, &space, 0.0)?;
        let all: Vec<usize> = (0..space.len()).collect();
        let mg = hardy_littlewood(&space, &g, &all, RadiusSearch::Exact)?;
        let core_seeds: Vec<usize> = (0..result.seeds.len())
            .filter(|&i| space.is_core(result.seeds[i]))
            .collect();
        let pairs: Vec<(usize, usize)> = (0..fc.derivative_pairs)
            .map(|_| {
                (
                    core_seeds[rng.gen_range(0..core_seeds.len())],
                    core_seeds[rng.gen_range(0..core_seeds.len())],
                )
            })
            .filter(|p| p.0 != p.1)
            .collect();
        let der = verify_green_derivative(&space, &spec, &result, kernel.as_ref(), &mg, &pairs, 1)?;
        let b = &mut self.bundle;
        if spec.is_rigid() || der.evaluations == 0 {
            b.info(st::FLOW_DERIVATIVE, "derivative_absolute", der.absolute_max);
        } else {
            b.check(
                st::FLOW_DERIVATIVE,
                "derivative_relative",
                der.relative_max,
                Bound::AtMost {
                    limit: tol.derivative,
                },
            );
        }

        self.statement = st::FLOW_VECTOR;
        let points: Vec<usize> = {
            let deep = self.deep_core();
            subsample(&deep, 16, &mut rng)
        };
        let pairs = stratified_pairs(
            &space,
            &points,
            &points,
            (0.25 * core, core),
            fc.vector_pairs,
            &mut rng,
        );
        let vec_fit = verify_vector_maximal(
            &space,
            &spec,
            kernel.as_ref(),
            &pairs,
            0.0,
            RadiusSearch::Exact,
        )?;
        let b = &mut self.bundle;
        if vec_fit.rigid {
            b.check(
                st::FLOW_VECTOR,
                "rigid_normalized_lhs",
                vec_fit.normalized_lhs,
                Bound::AtMost {
                    limit: RIGID_TOLERANCE,
                },
            );
        } else {
            b.check(st::FLOW_VECTOR, "cm_vector", vec_fit.cm, cap);
        }
        self.flow = Some((spec, result));
        Ok(())
    }

    fn transport_stage(&mut self) -> Result<()> {
        let tc: TransportConfig = self.cfg.transport.clone().expect("configured");
        let tol = self.cfg.tolerances.clone();
        let space = self.space();
        self.statement = st::TRANSPORT_PLAN;
        let pick = |r: &Region| -> Vec<usize> {
            (0..space.len())
                .filter(|&i| space.coords(i).is_some_and(|x| r.contains(&x)))
                .collect()
        };
        let (a, c) = (pick(&tc.source), pick(&tc.target));
        if a.is_empty() || c.is_empty() {
            return Err(greenlab::Error::InvalidParameter(
                "a transport region holds no lattice points".into(),
            )
            .into());
        }
        let plan = solve_w2(
            &space,
            &DiscreteMeasure::uniform(a),
            &DiscreteMeasure::uniform(c),
        )?;
        write_plan_csv(create(&self.dir, "transport_plan.csv")?, &plan)?;
        let b = &mut self.bundle;
        b.info(st::TRANSPORT_PLAN, "w2", plan.w2());
        b.check(
            st::TRANSPORT_PLAN,
            "duality_gap",
            plan.duality_gap,
            Bound::AtMost {
                limit: tol.duality_gap,
            },
        );

        self.statement = st::TRANSPORT_GEODESIC;
        let mut speed = 0.0f64;
        for &t in &tc.times {
            speed = speed.max((geodesic_speed_ratio(&plan, 0.0, t)? - 1.0).abs());
        }
        self.bundle.check(
            st::TRANSPORT_GEODESIC,
            "speed_deviation",
            speed,
            Bound::AtMost { limit: tol.speed },
        );

        self.statement = st::TRANSPORT_PUSHFORWARD;
        let drift = geodesic_drift(&space, &plan, tc.bandwidth_cells)?;
        let mut cells = 0.0f64;
        for &t in &tc.times {
            let rep = verify_geodesic_pushforward(&space, &plan, &drift, 0.0, t, tc.drift_steps)?;
            cells = cells.max(rep.error_cells);
        }
        self.bundle.check(
            st::TRANSPORT_PUSHFORWARD,
            "pushforward_cells",
            cells,
            Bound::AtMost {
                limit: tol.pushforward_cells,
            },
        );

        self.statement = st::TRANSPORT_CD;
        let n_prime = tc
            .n_prime
            .unwrap_or_else(|| space.ambient_dim().unwrap_or(1) as f64);
        let cd = verify_cd_entropy(
            &space,
            &plan,
            tc.curvature,
            n_prime,
            &tc.times,
            tc.bin_cells,
        )?;
        // Negative slack within the binning noise (the change under bin
        // doubling) still counts as equality.
        let margin = cd
            .rows
            .iter()
            .map(|r| {
                (r.slack + r.refinement_change * r.lhs.abs()) / r.lhs.abs().max(f64::MIN_POSITIVE)
            })
            .fold(f64::INFINITY, f64::min);
        let b = &mut self.bundle;
        b.info(st::TRANSPORT_CD, "cd_worst_slack", cd.worst_slack);
        b.check(
            st::TRANSPORT_CD,
            "cd_relative_margin",
            margin,
            Bound::AtLeast {
                limit: -tol.cd_slack,
            },
        );
        b.info(
            st::TRANSPORT_CD,
            "cd_refinement_advisory",
            cd.refinement_advisory as u8 as f64,
        );
        b.series.insert(
            CD_SLACK.into(),
            cd.rows
                .iter()
                .map(|r| SeriesPoint {
                    x: r.t,
                    y: r.slack,
                    series: "slack".into(),
                })
                .collect(),
        );
        Ok(())
    }

    fn dimension_stage(&mut self) -> Result<()> {
        let dc = self.cfg.dimension.clone().expect("configured");
        let tol = self.cfg.tolerances.clone();
        let space = self.space();
        let mut rng = self.rng(Stage::Dimension);
        self.statement = st::DIMENSION_REGULAR;
        let window = match dc.window {
            Some([lo, hi]) => Window::new(lo, hi)?,
            None => default_window(&space)?,
        };
        let summary = core_dimension_summary(&space, window);
        let core = space.core_points();
        let table =
            estimate_dimensions(&space, &subsample(&core, dc.table_points, &mut rng), window);
        write_dimension_csv(create(&self.dir, "dimension.csv")?, &table)?;
        let total = core.len().max(1) as f64;
        let b = &mut self.bundle;
        b.info(st::DIMENSION_REGULAR, "window_lo", window.lo);
        b.info(st::DIMENSION_REGULAR, "window_hi", window.hi);
        for (k, count) in &summary.histogram {
            b.info(
                st::DIMENSION_REGULAR,
                &format!("fraction_k{k}"),
                *count as f64 / total,
            );
        }
        b.info(
            st::DIMENSION_REGULAR,
            "estimate_failures",
            summary.failures as f64,
        );
        // Points whose window leaves the sampled range have no estimate and
        // are counted separately above.
        if let Some(n) = space.ambient_dim().filter(|_| space.lattice().is_some()) {
            let hits = summary.histogram.get(&n).copied().unwrap_or(0);
            let resolved: usize = summary.histogram.values().sum();
            b.check(
                st::DIMENSION_REGULAR,
                "fraction_ambient_dimension",
                hits as f64 / resolved as f64,
                Bound::AtLeast { limit: 1.0 },
            );
        }
        let mut histogram_series: Vec<SeriesPoint> = summary
            .histogram
            .iter()
            .map(|(&k, &c)| SeriesPoint {
                x: k as f64,
                y: c as f64 / total,
                series: "core".into(),
            })
            .collect();

        let centre = space.centre();
        if dc.asymptotics && space.is_core(centre) {
            self.statement = st::DIMENSION_ASYMPTOTICS;
            let k = estimate_dimension(&space, centre, window)?.k;
            if k >= 3 {
                let rep = verify_green_asymptotics(&space, centre, window)?;
                let b = &mut self.bundle;
                b.info(st::DIMENSION_ASYMPTOTICS, "plateau", rep.plateau);
                b.info(st::DIMENSION_ASYMPTOTICS, "predicted", rep.predicted);
                b.check(
                    st::DIMENSION_ASYMPTOTICS,
                    "plateau_deviation",
                    rep.plateau_deviation,
                    Bound::AtMost {
                        limit: tol.asymptotics,
                    },
                );
            } else {
                self.bundle
                    .info(st::DIMENSION_ASYMPTOTICS, "centre_dimension", k as f64);
            }
        }

        if let Some((spec, _)) = &self.flow {
            self.statement = st::DIMENSION_CONSTANCY;
            let fc = self.cfg.flow.as_ref().expect("flow ran");
            let ball: Vec<usize> = core
                .iter()
                .copied()
                .filter(|&i| {
                    space
                        .coords(i)
                        .is_some_and(|x| norm(&x) < 0.5 * space.core_radius())
                })
                .collect();
            let seeds = subsample(&ball, dc.constancy_samples, &mut rng);
            let result = integrate_rlf(&space, spec, &seeds, 0.0, fc.horizon, fc.dt)?;
            let rep = constancy_diagnostic(&space, &result, window, tol.constancy_tv)?;
            let b = &mut self.bundle;
            b.check(
                st::DIMENSION_CONSTANCY,
                "histogram_tv",
                rep.tv_distance,
                Bound::AtMost {
                    limit: tol.constancy_tv,
                },
            );
            b.info(
                st::DIMENSION_CONSTANCY,
                "dimension_drop",
                rep.dimension_drop,
            );
            let keys: Vec<usize> = rep
                .before
                .keys()
                .chain(rep.after.keys())
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let s = rep.samples.max(1) as f64;
            let aligned = |label: &str, counts: &BTreeMap<usize, usize>, unresolved: usize| {
                let mut v: Vec<SeriesPoint> = keys
                    .iter()
                    .map(|k| SeriesPoint {
                        x: *k as f64,
                        y: counts.get(k).copied().unwrap_or(0) as f64 / s,
                        series: label.into(),
                    })
                    .collect();
                // Unresolved samples sit at k = 0.
                v.push(SeriesPoint {
                    x: 0.0,
                    y: unresolved as f64 / s,
                    series: label.into(),
                });
                v
            };
            histogram_series = aligned("before", &rep.before, rep.unresolved_before);
            histogram_series.extend(aligned("after", &rep.after, rep.unresolved_after));
        }
        self.bundle
            .series
            .insert(DIMENSION_HISTOGRAM.into(), histogram_series);
        Ok(())
    }
}
