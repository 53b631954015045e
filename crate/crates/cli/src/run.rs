//! Subcommand bodies and the `summary.json` layout.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use hymlab::chern_weil::{
    chern_numbers_strict, degree, energy_identity, harmonic_line_metric, lambda_of, nef_residual, transgression_check,
    GAUDUCHON_TOL,
};
use hymlab::flows::{approx_flat_pipeline, co_evolve, hym_flow_from, perturbed_solve, FlowState, TraceRow};
use hymlab::hermitian::{curvature, he_residual, trace_normalize, HermitianField};
use hymlab::io::{Checkpoint, TraceWriter};
use hymlab::projectivization::segre_report;
use hymlab::{BundleSpec, Geometry};

use crate::config::ExperimentConfig;
use crate::{CliError, Command, Common};

/// Top-level keys are fixed; sections a subcommand does not produce are null.
#[derive(Debug, Default, Serialize)]
struct Summary {
    geometry: Option<Value>,
    chern: Option<Value>,
    flow: Option<Value>,
    pipeline: Option<Value>,
    projectivization: Option<Value>,
    errors: Vec<Value>,
}

struct Ctx {
    cfg: ExperimentConfig,
    common: Common,
    out: PathBuf,
    strict: bool,
    summary: Summary,
}

impl Ctx {
    fn new(common: Common) -> Result<Self, CliError> {
        let cfg = ExperimentConfig::load(&common.config)?;
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(CliError::Config("--threads: must be at least 1".into()));
            }
            // a second initialization in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        let strict = common.strict || cfg.strict;
        Ok(Ctx { cfg, common, out, strict, summary: Summary::default() })
    }

    fn checkpoint_dir(&self) -> Result<PathBuf, CliError> {
        let d = self.out.join("checkpoints");
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn write_summary(&self) -> Result<(), CliError> {
        let w = BufWriter::new(File::create(self.out.join("summary.json"))?);
        serde_json::to_writer_pretty(w, &self.summary)?;
        Ok(())
    }

    fn setup(&mut self) -> Result<(Geometry, BundleSpec), CliError> {
        let geom = self.cfg.geometry()?;
        let (rho1, rho2) = geom.gauduchon_residual();
        let g = &self.cfg.geometry;
        self.summary.geometry = Some(json!({
            "kind": g.kind,
            "grid": g.grid,
            "periods": g.periods,
            "amplitude": g.amplitude,
            "volume": geom.volume(),
            "gauduchon_residual": [rho1, rho2],
            "kahler_residual": geom.kahler_residual(),
        }));
        if rho1 > GAUDUCHON_TOL && self.strict {
            return Err(hymlab::Error::NotGauduchon { residual: rho1, limit: GAUDUCHON_TOL }.into());
        }
        let spec = self.cfg.bundle(&geom)?;
        Ok((geom, spec))
    }

    fn metric(&self, spec: &BundleSpec, geom: &Geometry) -> Result<HermitianField, CliError> {
        self.cfg.metric(spec, geom, self.common.seed)
    }
}

fn error_entry(e: &CliError, context: &str) -> Value {
    json!({ "kind": e.kind(), "context": context, "message": e.to_string() })
}

type Body = Box<dyn FnOnce(&mut Ctx) -> Result<(), CliError>>;

pub(crate) fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (common, body): (Common, Body) = match cmd {
        Command::CheckGeometry(c) => (c, Box::new(check_geometry)),
        Command::Chern(c) => (c, Box::new(chern)),
        Command::Flow { common, resume } => (common, Box::new(move |ctx: &mut Ctx| flow(ctx, resume.as_deref()))),
        Command::Perturbed { common, eps } => (common, Box::new(move |ctx: &mut Ctx| perturbed(ctx, eps))),
        Command::ApproxFlat(c) => (c, Box::new(approx_flat)),
        Command::Segre(c) => (c, Box::new(segre)),
        Command::NefCert { common, eps } => (common, Box::new(move |ctx: &mut Ctx| nef_cert(ctx, eps))),
    };
    let mut ctx = Ctx::new(common)?;
    let result = body(&mut ctx);
    if let Err(e) = &result {
        ctx.summary.errors.push(error_entry(e, "run"));
    }
    ctx.write_summary()?;
    result
}

fn check_geometry(ctx: &mut Ctx) -> Result<(), CliError> {
    let geom = ctx.cfg.geometry()?;
    let (rho1, rho2) = geom.gauduchon_residual();
    let corrected = geom.gauduchon_correct()?;
    let after = corrected.gauduchon_residual().0;
    let g = &ctx.cfg.geometry;
    ctx.summary.geometry = Some(json!({
        "kind": g.kind,
        "grid": g.grid,
        "periods": g.periods,
        "amplitude": g.amplitude,
        "volume": geom.volume(),
        "gauduchon_residual": [rho1, rho2],
        "kahler_residual": geom.kahler_residual(),
        "is_gauduchon": rho1 <= GAUDUCHON_TOL,
        "corrected_gauduchon_residual": after,
        "correction_reduction": if after > 0.0 { rho1 / after } else { f64::INFINITY },
    }));
    if rho1 > GAUDUCHON_TOL && ctx.strict {
        return Err(hymlab::Error::NotGauduchon { residual: rho1, limit: GAUDUCHON_TOL }.into());
    }
    Ok(())
}

fn chern(ctx: &mut Ctx) -> Result<(), CliError> {
    let (geom, spec) = ctx.setup()?;
    let h = ctx.metric(&spec, &geom)?;
    let report = chern_numbers_strict(&spec, &h, &geom, ctx.strict)?;
    let identity = energy_identity(&spec, &h, &geom, report.lambda)?;
    let transgression = match ctx.cfg.metric.compare_seed {
        Some(seed) => {
            let h2 = HermitianField::random_smooth(&spec, &geom, seed, ctx.cfg.metric.amplitude);
            Some(transgression_check(&spec, &h, &h2, &geom)?)
        }
        None => None,
    };
    ctx.summary.chern = Some(json!({
        "label": spec.label(),
        "report": report,
        "energy_identity": identity,
        "transgression": transgression,
    }));
    Ok(())
}

#[derive(Serialize)]
struct FlowSummary {
    label: String,
    lambda: f64,
    resumed_from: Option<String>,
    steps: usize,
    t_final: f64,
    halvings: usize,
    stopped_on_plateau: bool,
    energy_balance: hymlab::flows::EnergyBalance,
    max_energy_increase: f64,
    first: TraceRow,
    last: TraceRow,
    gauge: Option<hymlab::flows::CoEvolution>,
}

fn checkpoint_name(step: usize) -> String {
    format!("step_{step:08}.bin")
}

fn flow(ctx: &mut Ctx, resume: Option<&Path>) -> Result<(), CliError> {
    let (geom, spec) = ctx.setup()?;
    let opts = ctx.cfg.flow_options();
    let lambda = lambda_of(&spec, &geom)?;
    let state = match resume {
        Some(p) => Checkpoint::load(p)?.into_state(&spec, &geom)?,
        None => FlowState::initial(ctx.metric(&spec, &geom)?, &opts),
    };
    let start_step = state.step;
    let ck_dir = ctx.checkpoint_dir()?;
    let every = ctx.cfg.output.checkpoint_every;
    let mut trace = TraceWriter::new(BufWriter::new(File::create(ctx.out.join("trace.csv"))?))?;
    let mut cb = |row: &TraceRow, st: &FlowState| -> hymlab::Result<()> {
        trace.write_row(row)?;
        if every > 0 && st.step > start_step && st.step.is_multiple_of(every) {
            Checkpoint::from_state(&geom, st, 0.0).save(&ck_dir.join(checkpoint_name(st.step)))?;
        }
        Ok(())
    };
    let result = hym_flow_from(&spec, state, &geom, lambda, 0.0, &opts, &mut cb);
    trace.flush()?;
    let tr = result?;
    Checkpoint::from_state(&geom, &tr.state, 0.0).save(&ck_dir.join("final.bin"))?;
    let gauge = if ctx.cfg.flow.gauge_check {
        Some(co_evolve(&spec, &ctx.metric(&spec, &geom)?, &geom, &opts)?)
    } else {
        None
    };
    let summary = FlowSummary {
        label: spec.label().to_string(),
        lambda,
        resumed_from: resume.map(|p| p.display().to_string()),
        steps: tr.state.step,
        t_final: tr.state.t,
        halvings: tr.halvings,
        stopped_on_plateau: tr.stopped_on_plateau,
        energy_balance: tr.energy_balance(),
        max_energy_increase: tr.max_energy_increase(),
        first: tr.rows[0].clone(),
        last: tr.last().clone(),
        gauge,
    };
    if summary.halvings > 0 {
        log::warn!("step size was halved {} times", summary.halvings);
    }
    ctx.summary.flow = Some(serde_json::to_value(summary)?);
    Ok(())
}

fn perturbed(ctx: &mut Ctx, eps: Option<f64>) -> Result<(), CliError> {
    let eps = eps.unwrap_or(ctx.cfg.flow.eps);
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CliError::Config(format!("--eps: {eps} outside (0, 1]")));
    }
    let (geom, spec) = ctx.setup()?;
    let opts = ctx.cfg.flow_options();
    let lambda = lambda_of(&spec, &geom)?;
    let k = trace_normalize(&ctx.metric(&spec, &geom)?, lambda, &spec, &geom)?;
    let sol = perturbed_solve(&spec, &k, eps, &geom, &opts)?;
    let curv = curvature(&sol.metric, &spec, &geom)?;
    let path = ctx.checkpoint_dir()?.join("perturbed.bin");
    Checkpoint::from_state(&geom, &FlowState::initial(sol.metric.clone(), &opts), eps).save(&path)?;
    ctx.summary.flow = Some(json!({
        "perturbed": {
            "label": spec.label(),
            "eps": eps,
            "lambda": lambda,
            "residual": sol.residual,
            "iterations": sol.iterations,
            "history": sol.history,
            "he_residual": he_residual(&curv, &sol.metric, lambda),
            "min_eig_H": sol.metric.min_eig(),
            "checkpoint": path.display().to_string(),
        }
    }));
    Ok(())
}

fn approx_flat(ctx: &mut Ctx) -> Result<(), CliError> {
    let (geom, spec) = ctx.setup()?;
    let opts = ctx.cfg.pipeline_options();
    let mut trace = TraceWriter::new(BufWriter::new(File::create(ctx.out.join("trace.csv"))?))?;
    let result = approx_flat_pipeline(&spec, &geom, &opts, &mut |row| trace.write_row(row));
    trace.flush()?;
    let rep = result?;
    for s in &rep.stages {
        if let Some(msg) = &s.error {
            ctx.summary.errors.push(json!({ "kind": "numerics", "context": format!("stage eps = {}", s.eps), "message": msg }));
        }
    }
    if !rep.hypothesis_holds {
        log::warn!("{}: numerically flat hypothesis violated", rep.label);
    }
    ctx.summary.chern = Some(json!({ "label": spec.label(), "report": rep.chern }));
    ctx.summary.pipeline = Some(serde_json::to_value(&rep)?);
    Ok(())
}

fn segre(ctx: &mut Ctx) -> Result<(), CliError> {
    let (geom, spec) = ctx.setup()?;
    let h = ctx.metric(&spec, &geom)?;
    let a = ctx.cfg.segre.phi_amplitude;
    let l = geom.periods()[0];
    let phi = geom.spectral().sample_re(|x| a * (2.0 * PI * x[0] / l).sin());
    let rep = segre_report(&spec, &h, &geom, ctx.cfg.segre.fiber_res, (a != 0.0).then_some(&phi))?;
    ctx.summary.projectivization = Some(serde_json::to_value(&rep)?);
    Ok(())
}

/// Residuals above `-NEF_ROUNDOFF` count as nonnegative.
const NEF_ROUNDOFF: f64 = 1e-9;

fn nef_cert(ctx: &mut Ctx, eps: Vec<f64>) -> Result<(), CliError> {
    let eps = if eps.is_empty() { ctx.cfg.nef.eps.clone() } else { eps };
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(CliError::Config("--eps: entries must be nonnegative".into()));
    }
    let (geom, spec) = ctx.setup()?;
    if spec.rank() != 1 {
        ctx.summary.chern = Some(json!({
            "nef": { "label": spec.label(), "rank": spec.rank(), "certificate": "none",
                     "note": "explicit nef metric families are only exhibited for line bundles" }
        }));
        return Ok(());
    }
    let h = ctx.metric(&spec, &geom)?;
    let deg = degree(&spec, &h, &geom)?;
    let residuals = eps.iter().map(|&e| nef_residual(&spec, &h, e, &geom)).collect::<hymlab::Result<Vec<_>>>()?;
    let harmonic = if deg.abs() < 1e-8 {
        let hl = harmonic_line_metric(&spec, &h, &geom)?;
        let res = eps.iter().map(|&e| nef_residual(&spec, &hl.metric, e, &geom)).collect::<hymlab::Result<Vec<_>>>()?;
        Some(json!({
            "flatness_defect": hl.flatness_defect,
            "c1_sq_term": hl.c1_sq_term,
            "residuals": res,
            "nonnegative": res.iter().map(|r| *r >= -NEF_ROUNDOFF).collect::<Vec<_>>(),
        }))
    } else {
        None
    };
    ctx.summary.chern = Some(json!({
        "nef": {
            "label": spec.label(),
            "rank": 1,
            "degree": deg,
            "eps": eps,
            "residuals": residuals,
            "nonnegative": residuals.iter().map(|r| *r >= -NEF_ROUNDOFF).collect::<Vec<_>>(),
            "harmonic": harmonic,
        }
    }));
    Ok(())
}
