//! Experiment configuration: one TOML file with nested sections.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hymlab::flows::{FlowOptions, PipelineOptions};
use hymlab::hermitian::HermitianField;
use hymlab::{BundleSpec, ExtensionClass, Geometry, C64};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub strict: bool,
    pub geometry: GeometrySection,
    pub bundle: BundleDef,
    #[serde(default)]
    pub metric: MetricSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub segre: SegreSection,
    #[serde(default)]
    pub nef: NefSection,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Flat,
    Sheared,
    /// `e^{φ} ω₀` with `φ = amplitude · sin(2π x₀ / L₀)`
    Conformal,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub kind: GeometryKind,
    pub grid: Vec<usize>,
    #[serde(default = "unit_periods")]
    pub periods: Vec<f64>,
    #[serde(default)]
    pub amplitude: f64,
}

fn unit_periods() -> Vec<f64> {
    vec![1.0; 4]
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDef {
    /// `trivial`, `flat_line`, `flux_line` or `extension`
    pub builtin: String,
    pub rank: Option<usize>,
    pub holonomy: Option<[f64; 4]>,
    pub k: Option<[i64; 2]>,
    /// extension class `β = b₁ dz̄₁ + b₂ dz̄₂` as `[[re, im], [re, im]]`
    pub b: Option<[[f64; 2]; 2]>,
    /// operations applied in order to the builtin, top level only
    #[serde(default)]
    pub compose: Vec<ComposeStep>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeStep {
    /// `direct_sum`, `tensor`, `dual` or `det`
    pub op: String,
    pub with: Option<BundleDef>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    /// `identity`, `random_smooth` or `diag`
    pub initial: String,
    pub seed: u64,
    pub amplitude: f64,
    pub values: Vec<f64>,
    /// second random metric for the metric-independence check
    pub compare_seed: Option<u64>,
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection { initial: "identity".into(), seed: 0, amplitude: 0.2, values: Vec::new(), compare_seed: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub dt: f64,
    pub t_max: f64,
    pub dt_min: f64,
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub stop_on_plateau: bool,
    pub precondition: bool,
    pub solve_tol: f64,
    pub solve_max_iter: usize,
    pub eps_schedule: Vec<f64>,
    pub target_ratio: f64,
    /// `ε` for the `perturbed` subcommand
    pub eps: f64,
    /// also co-evolve the connection flow and report the gauge relation
    pub gauge_check: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowOptions::default();
        let p = PipelineOptions::default();
        FlowSection {
            dt: f.dt,
            t_max: f.t_max,
            dt_min: f.dt_min,
            plateau_tol: f.plateau_tol,
            plateau_window: f.plateau_window,
            stop_on_plateau: f.stop_on_plateau,
            precondition: f.precondition,
            solve_tol: f.solve_tol,
            solve_max_iter: f.solve_max_iter,
            eps_schedule: p.schedule,
            target_ratio: p.target_ratio,
            eps: 0.5,
            gauge_check: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub sample_every: usize,
    /// 0 disables periodic checkpoints; the final state is always written
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, sample_every: 1, checkpoint_every: 0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegreSection {
    pub fiber_res: usize,
    /// amplitude of `φ = a sin(2π x₀/L₀)` for the `O_E(1)` metric change
    pub phi_amplitude: f64,
}

impl Default for SegreSection {
    fn default() -> Self {
        SegreSection { fiber_res: hymlab::projectivization::DEFAULT_FIBER_RES, phi_amplitude: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NefSection {
    pub eps: Vec<f64>,
}

impl Default for NefSection {
    fn default() -> Self {
        NefSection { eps: vec![0.0, 0.01, 0.1] }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: cannot read: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that must pass before any field is allocated.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        if g.grid.len() != 4 || g.grid.iter().any(|&n| n < 8 || n % 2 == 1 || n > 128) {
            return Err(invalid("geometry.grid", format!("need four even sizes in 8..=128, got {:?}", g.grid)));
        }
        if g.periods.len() != 4 || g.periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(invalid("geometry.periods", format!("need four positive periods, got {:?}", g.periods)));
        }
        if !g.amplitude.is_finite() || g.amplitude.abs() > 0.45 {
            return Err(invalid("geometry.amplitude", format!("{} outside [-0.45, 0.45]", g.amplitude)));
        }
        self.bundle.validate_composed()?;
        let m = &self.metric;
        match m.initial.as_str() {
            "identity" => {}
            "random_smooth" => {
                if !(m.amplitude.is_finite() && m.amplitude >= 0.0 && m.amplitude <= 5.0) {
                    return Err(invalid("metric.amplitude", format!("{} outside [0, 5]", m.amplitude)));
                }
            }
            "diag" => {
                if m.values.is_empty() || m.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(invalid("metric.values", "diag needs positive entries"));
                }
            }
            other => return Err(invalid("metric.initial", format!("unknown initial metric {other:?}"))),
        }
        let f = &self.flow;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must be positive")))
            }
        };
        positive("flow.dt", f.dt)?;
        positive("flow.t_max", f.t_max)?;
        positive("flow.dt_min", f.dt_min)?;
        positive("flow.solve_tol", f.solve_tol)?;
        positive("flow.target_ratio", f.target_ratio)?;
        if f.t_max / f.dt > 1e7 {
            return Err(invalid("flow.t_max", "more than 1e7 steps"));
        }
        if !(f.eps > 0.0 && f.eps <= 1.0) {
            return Err(invalid("flow.eps", format!("{} outside (0, 1]", f.eps)));
        }
        if f.eps_schedule.is_empty() || f.eps_schedule.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(invalid("flow.eps_schedule", "entries must lie in (0, 1]"));
        }
        let o = &self.output;
        if o.sample_every == 0 {
            return Err(invalid("output.sample_every", "must be at least 1"));
        }
        if !o.checkpoint_every.is_multiple_of(o.sample_every) {
            return Err(invalid("output.checkpoint_every", "must be a multiple of output.sample_every"));
        }
        if !(2..=512).contains(&self.segre.fiber_res) {
            return Err(invalid("segre.fiber_res", format!("{} outside 2..=512", self.segre.fiber_res)));
        }
        if self.nef.eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(invalid("nef.eps", "entries must be nonnegative"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry, CliError> {
        let g = &self.geometry;
        Ok(match g.kind {
            GeometryKind::Flat => Geometry::make_flat_torus(&g.grid, &g.periods)?,
            GeometryKind::Sheared => Geometry::make_sheared_gauduchon_torus(&g.grid, &g.periods, g.amplitude)?,
            GeometryKind::Conformal => {
                let (a, l) = (g.amplitude, g.periods[0]);
                Geometry::make_conformal_torus(&g.grid, &g.periods, |x| a * (2.0 * PI * x[0] / l).sin())?
            }
        })
    }

    pub fn bundle(&self, geom: &Geometry) -> Result<BundleSpec, CliError> {
        let mut spec = self.bundle.build(geom, "bundle")?;
        for (i, step) in self.bundle.compose.iter().enumerate() {
            let field = format!("bundle.compose[{i}]");
            let other = || -> Result<BundleSpec, CliError> {
                step.with.as_ref().ok_or_else(|| invalid(&field, "missing `with`"))?.build(geom, &field)
            };
            spec = match step.op.as_str() {
                "direct_sum" => spec.direct_sum(&other()?)?,
                "tensor" => spec.tensor(&other()?)?,
                "dual" => spec.dual(),
                "det" => spec.det(),
                op => return Err(invalid(&field, format!("unknown op {op:?}"))),
            };
        }
        spec.validate(geom)?;
        Ok(spec)
    }

    pub fn metric(&self, spec: &BundleSpec, geom: &Geometry, seed: Option<u64>) -> Result<HermitianField, CliError> {
        let m = &self.metric;
        Ok(match m.initial.as_str() {
            "random_smooth" => HermitianField::random_smooth(spec, geom, seed.unwrap_or(m.seed), m.amplitude),
            "diag" => HermitianField::diag(&m.values, spec, geom)?,
            _ => HermitianField::identity(spec, geom),
        })
    }

    pub fn flow_options(&self) -> FlowOptions {
        let f = &self.flow;
        FlowOptions {
            dt: f.dt,
            t_max: f.t_max,
            dt_min: f.dt_min,
            plateau_tol: f.plateau_tol,
            plateau_window: f.plateau_window,
            stop_on_plateau: f.stop_on_plateau,
            sample_every: self.output.sample_every,
            precondition: f.precondition,
            keep_history: false,
            solve_tol: f.solve_tol,
            solve_max_iter: f.solve_max_iter,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            schedule: self.flow.eps_schedule.clone(),
            flow: self.flow_options(),
            target_ratio: self.flow.target_ratio,
        }
    }
}

impl BundleDef {
    fn validate_composed(&self) -> Result<(), CliError> {
        self.validate("bundle")?;
        for (i, step) in self.compose.iter().enumerate() {
            let field = format!("bundle.compose[{i}]");
            match (step.op.as_str(), &step.with) {
                ("direct_sum" | "tensor", Some(w)) if !w.compose.is_empty() => {
                    return Err(invalid(&field, "nested composition is not supported"))
                }
                ("direct_sum" | "tensor", Some(w)) => w.validate(&field)?,
                ("direct_sum" | "tensor", None) => return Err(invalid(&field, "missing `with`")),
                ("dual" | "det", _) => {}
                (op, _) => return Err(invalid(&field, format!("unknown op {op:?}"))),
            }
        }
        Ok(())
    }
}

impl BundleDef {
    fn validate(&self, field: &str) -> Result<(), CliError> {
        match self.builtin.as_str() {
            "trivial" => match self.rank {
                Some(r) if (1..=hymlab::linalg::MAX_RANK).contains(&r) => Ok(()),
                _ => Err(invalid(field, format!("trivial needs rank in 1..={}", hymlab::linalg::MAX_RANK))),
            },
            "flat_line" => match self.holonomy {
                Some(h) if h.iter().all(|x| x.is_finite()) => Ok(()),
                _ => Err(invalid(field, "flat_line needs a finite `holonomy`")),
            },
            "flux_line" => self.k.map(|_| ()).ok_or_else(|| invalid(field, "flux_line needs `k`")),
            "extension" => match self.b {
                Some(b) if b.iter().flatten().all(|x| x.is_finite()) => Ok(()),
                _ => Err(invalid(field, "extension needs `b`")),
            },
            other => Err(invalid(field, format!("unknown builtin {other:?}"))),
        }
    }

    fn build(&self, geom: &Geometry, field: &str) -> Result<BundleSpec, CliError> {
        self.validate(field)?;
        Ok(match self.builtin.as_str() {
            "trivial" => BundleSpec::trivial_bundle(self.rank.unwrap_or(1)),
            "flat_line" => BundleSpec::flat_line(self.holonomy.unwrap_or_default()),
            "flux_line" => BundleSpec::flux_line(self.k.unwrap_or_default()),
            _ => {
                let b = self.b.unwrap_or_default();
                BundleSpec::extension_bundle(&ExtensionClass::constant(
                    geom,
                    [C64::new(b[0][0], b[0][1]), C64::new(b[1][0], b[1][1])],
                ))
            }
        })
    }
}
