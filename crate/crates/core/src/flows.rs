//! The perturbed Hermitian-Einstein equation, the Hermitian-Yang-Mills flow
//! and its gauge equivalent connection flow, with the diagnostics used along
//! the approximate Hermitian flat pipeline.
//!
//! Time stepping is a preconditioned exponential Euler scheme. With
//! `Θ = iΛF - λId` the update is
//!
//! `H ← H^{1/2} exp(-2dt P[H^{1/2} Θ H^{-1/2}]) H^{1/2}`,
//!
//! where `P = (1 - dt κ Δ)⁻¹` acts entrywise in Fourier space and `κ` bounds
//! `g⁻¹`. On the linearized flow this is backward Euler for the Laplacian
//! part, so steps are not limited by the grid spacing. Positivity is kept
//! by construction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bundle::BundleSpec;
use crate::chern_weil::{chern_numbers, lambda_of, ChernReport};
use crate::endo::{endo_exp, endo_sqrt, EndoField, EndoForm01};
use crate::field::{pairwise_sum, Field};
use crate::geometry::Geometry;
use crate::hermitian::{
    check_metric, curvature, curvature_norm_sq, curvature_of, endo_norm_sq, endo_norm_sq_at, form11_norm_sq_at,
    he_residual, relative_log, trace_normalize, trace_residual, CurvatureField, HermitianField,
};
use crate::linalg::Mat;
use crate::spectral::D;
use crate::{Error, Result, C64};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub dt: f64,
    /// flow horizon, the hard cap of every run
    pub t_max: f64,
    /// floor for automatic step halving
    pub dt_min: f64,
    /// stop once sup|F| changes by less than this fraction over the window
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub stop_on_plateau: bool,
    /// record a trace row every this many steps
    pub sample_every: usize,
    /// heat-filter preconditioning of the update
    pub precondition: bool,
    /// keep pointwise `|F|²` at every recorded row for `local_energy`
    pub keep_history: bool,
    /// residual target of `perturbed_solve`
    pub solve_tol: f64,
    pub solve_max_iter: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: 1e-3,
            t_max: 1.0,
            dt_min: 1e-8,
            plateau_tol: 1e-4,
            plateau_window: 50,
            stop_on_plateau: false,
            sample_every: 1,
            precondition: true,
            keep_history: false,
            solve_tol: 1e-8,
            solve_max_iter: 500,
        }
    }
}

impl FlowOptions {
    fn check(&self) -> Result<()> {
        let ok = self.dt > 0.0 && self.dt.is_finite() && self.t_max >= 0.0 && self.dt_min > 0.0;
        if !ok || self.sample_every == 0 || self.plateau_window == 0 {
            return Err(Error::Precondition(format!("invalid flow options {self:?}")));
        }
        Ok(())
    }
}

/// One line of the flow trace. Column order is the CSV schema.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub eps: f64,
    pub ym_energy: f64,
    #[serde(rename = "sup_F")]
    pub sup_f: f64,
    pub he_residual: f64,
    #[serde(rename = "min_eig_H")]
    pub min_eig_h: f64,
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    /// pointwise `|F|²`
    pub f_sq: Vec<f64>,
}

/// Resumable state of a flow run.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub metric: HermitianField,
    /// sup|F| over the last plateau window
    pub recent_sup_f: Vec<f64>,
}

impl FlowState {
    pub fn initial(metric: HermitianField, opts: &FlowOptions) -> Self {
        FlowState { step: 0, t: 0.0, dt: opts.dt, metric, recent_sup_f: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub rows: Vec<TraceRow>,
    /// `∫₀ᵗ 2∫|∂A/∂t|²` at each row
    pub dissipated: Vec<f64>,
    pub history: Vec<Snapshot>,
    pub state: FlowState,
    pub halvings: usize,
    pub stopped_on_plateau: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyBalance {
    /// `YM(0) - YM(T)`
    pub drop: f64,
    /// `2∫∫|∂A/∂t|²` by the trapezoid rule
    pub dissipated: f64,
    /// `|drop - dissipated| / drop`
    pub relative_error: f64,
}

impl FlowTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least one row")
    }

    pub fn final_metric(&self) -> &HermitianField {
        &self.state.metric
    }

    /// Largest increase of YM between consecutive rows.
    pub fn max_energy_increase(&self) -> f64 {
        self.rows.windows(2).map(|w| w[1].ym_energy - w[0].ym_energy).fold(0.0, f64::max)
    }

    pub fn energy_balance(&self) -> EnergyBalance {
        let drop = self.rows[0].ym_energy - self.last().ym_energy;
        let dissipated = *self.dissipated.last().unwrap_or(&0.0);
        let relative_error = if drop.abs() > 0.0 { (drop - dissipated).abs() / drop.abs() } else { dissipated.abs() };
        EnergyBalance { drop, dissipated, relative_error }
    }
}

/// What a flow evaluates at every accepted state.
struct Eval {
    curv: CurvatureField,
    ym: f64,
    sup_f: f64,
    he: f64,
    f_sq: Vec<f64>,
}

fn evaluate(spec: &BundleSpec, h: &HermitianField, geom: &Geometry, lambda: f64) -> Result<Eval> {
    let curv = curvature(h, spec, geom)?;
    let f_sq = curvature_norm_sq(&curv.f, h.endo(), geom);
    let ym = geom.integrate(&Field::from_real(f_sq.iter().cloned()))?;
    let sup_f = f_sq.iter().cloned().fold(0.0, f64::max).sqrt();
    let he = he_residual(&curv, h, lambda);
    Ok(Eval { curv, ym, sup_f, he, f_sq })
}

/// `∂̄_E X`, with `(∂̄_E X)_k̄ = ∇⁰_k̄ X + [a_k̄, X]`.
pub fn dbar_endo(spec: &BundleSpec, a: &EndoForm01, x: &EndoField, geom: &Geometry) -> EndoForm01 {
    let comps = (0..geom.complex_dim())
        .map(|k| {
            let mut d = spec.nabla0(x, D::Zb(k), geom);
            d.add_assign(&a.comps[k].commutator(x));
            d
        })
        .collect();
    EndoForm01 { comps }
}

/// Pointwise `|β|²_H` of an endomorphism valued (0,1) form.
pub fn form01_norm_sq(b: &EndoForm01, h: &EndoField, geom: &Geometry) -> Vec<f64> {
    let n = geom.complex_dim();
    (0..geom.len())
        .map(|idx| {
            let hm = h.at(idx);
            let hinv = hm.inverse().expect("positive metric");
            let p = geom.coframe(idx);
            let comps: Vec<Mat> = b.comps.iter().map(|c| c.at(idx)).collect();
            (0..n)
                .map(|c| {
                    let mut t = Mat::zeros(hm.dim());
                    for (k, bk) in comps.iter().enumerate() {
                        t = t.add(&bk.scale(p.get(k, c).conj()));
                    }
                    endo_norm_sq_at(&t, &hm, &hinv)
                })
                .sum()
        })
        .collect()
}

/// `2∫|∂A/∂t|² = 4∫|∂̄_E iΛF|²_H`, the instantaneous YM dissipation rate.
fn dissipation_rate(spec: &BundleSpec, a: &EndoForm01, theta: &EndoField, h: &EndoField, geom: &Geometry) -> Result<f64> {
    let d = dbar_endo(spec, a, theta, geom);
    Ok(4.0 * geom.integrate(&Field::from_real(form01_norm_sq(&d, h, geom)))?)
}

/// Entrywise Fourier multiplier `2dt / (1 - dt κ Δ)`, or plain `2dt`.
fn flow_multiplier(geom: &Geometry, dt: f64, precondition: bool) -> impl Fn(usize) -> C64 + Copy + '_ {
    let tau = if precondition { dt * geom.kappa() } else { 0.0 };
    move |idx| C64::new(2.0 * dt / (1.0 - tau * geom.spectral().laplacian_symbol(idx)), 0.0)
}

/// `H^{1/2} exp(-P[H^{1/2} R H^{-1/2}]) H^{1/2}` for an `H`-self-adjoint `R`.
fn exp_update(
    spec: &BundleSpec,
    h: &HermitianField,
    r: &EndoField,
    geom: &Geometry,
    mult: impl Fn(usize) -> C64 + Copy,
) -> Result<HermitianField> {
    let s = endo_sqrt(h.endo())?;
    let sinv = s.inverse()?;
    let x = s.mul(r).mul(&sinv).map(|_, m| m.hermitian_part());
    let y = x.multiply(geom.spectral(), mult).map(|_, m| m.hermitian_part().scale_re(-1.0));
    let hn = s.mul(&endo_exp(&y)).mul(&s).map(|_, m| m.hermitian_part());
    HermitianField::new(hn, spec)
}

/// Rescales each block of a bundle with several flux classes so that its
/// log-determinant averages to zero. Curvature is unchanged; this only keeps
/// the blocks within floating point range when their slopes differ.
fn renormalize_blocks(spec: &BundleSpec, h: HermitianField, geom: &Geometry) -> HermitianField {
    let classes = spec.classes();
    if classes.len() < 2 {
        return h;
    }
    let r = spec.rank();
    let mut scale = vec![1.0; r];
    for class in &classes {
        let logdet: Vec<f64> = (0..geom.len())
            .map(|idx| {
                let m = h.at(idx);
                let sub = Mat::from_fn(class.len(), |i, j| m.get(class[i], class[j]));
                sub.determinant().re.ln()
            })
            .collect();
        let mean = pairwise_sum(&logdet) / geom.len() as f64;
        for &p in class {
            scale[p] = (-mean / class.len() as f64).exp();
        }
    }
    let h = h.into_endo().map(|_, m| Mat::from_fn(r, |p, q| m.get(p, q) * (scale[p] * scale[q]).sqrt()));
    HermitianField::new(h, spec).expect("block rescaling keeps positivity")
}

fn row(step: usize, t: f64, eps: f64, ev: &Eval, h: &HermitianField, dt: f64) -> TraceRow {
    TraceRow { step, t, eps, ym_energy: ev.ym, sup_f: ev.sup_f, he_residual: ev.he, min_eig_h: h.min_eig(), dt }
}

/// Hermitian-Yang-Mills flow `H⁻¹∂H/∂t = -2(iΛF - λId)` from `h0` up to
/// `opts.t_max`.
pub fn hym_flow(
    spec: &BundleSpec,
    h0: &HermitianField,
    geom: &Geometry,
    lambda: f64,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    hym_flow_from(spec, FlowState::initial(h0.clone(), opts), geom, lambda, 0.0, opts, &mut |_, _| Ok(()))
}

/// Continues a flow from `state`. `eps` only labels the trace rows. The
/// callback sees every recorded row together with the state it belongs to.
pub fn hym_flow_from(
    spec: &BundleSpec,
    mut state: FlowState,
    geom: &Geometry,
    lambda: f64,
    eps: f64,
    opts: &FlowOptions,
    callback: &mut dyn FnMut(&TraceRow, &FlowState) -> Result<()>,
) -> Result<FlowTrace> {
    opts.check()?;
    spec.validate(geom)?;
    let a = spec.perturbation_or_zero(geom);
    let r = spec.rank();
    let id = EndoField::identity(r, geom.len());

    let mut ev = evaluate(spec, &state.metric, geom, lambda)?;
    let mut rate = dissipation_rate(spec, &a, &ev.curv.mean, state.metric.endo(), geom)?;
    let mut cumulative = 0.0;
    let mut rows = Vec::new();
    let mut dissipated = Vec::new();
    let mut history = Vec::new();
    let first = row(state.step, state.t, eps, &ev, &state.metric, state.dt);
    callback(&first, &state)?;
    rows.push(first);
    dissipated.push(0.0);
    if opts.keep_history {
        history.push(Snapshot { t: state.t, f_sq: ev.f_sq.clone() });
    }
    let mut window: VecDeque<f64> = state.recent_sup_f.iter().cloned().collect();
    let mut halvings = 0;
    let mut stopped_on_plateau = false;
    let t_end = opts.t_max;

    while state.t < t_end * (1.0 - 1e-12) {
        let theta = ev.curv.mean.sub(&id.scale_re(lambda));
        let mut dt = state.dt.min(t_end - state.t);
        let (h_new, ev_new) = loop {
            let cand = exp_update(spec, &state.metric, &theta, geom, flow_multiplier(geom, dt, opts.precondition))?;
            let cand = renormalize_blocks(spec, cand, geom);
            let e = evaluate(spec, &cand, geom, lambda)?;
            if e.ym <= ev.ym * (1.0 + 1e-10) + 1e-13 {
                break (cand, e);
            }
            dt *= 0.5;
            halvings += 1;
            if dt < opts.dt_min {
                return Err(Error::StepInstability { dt });
            }
            state.dt = dt;
        };
        let rate_new = dissipation_rate(spec, &a, &ev_new.curv.mean, h_new.endo(), geom)?;
        cumulative += 0.5 * dt * (rate + rate_new);
        rate = rate_new;
        state.metric = h_new;
        ev = ev_new;
        state.step += 1;
        state.t += dt;

        window.push_back(ev.sup_f);
        if window.len() > opts.plateau_window + 1 {
            window.pop_front();
        }
        state.recent_sup_f = window.iter().cloned().collect();
        let plateau = window.len() > opts.plateau_window
            && (window[0] - ev.sup_f).abs() <= opts.plateau_tol * ev.sup_f.max(f64::MIN_POSITIVE);
        let done = state.t >= t_end * (1.0 - 1e-12) || (opts.stop_on_plateau && plateau);
        if state.step.is_multiple_of(opts.sample_every) || done {
            let rw = row(state.step, state.t, eps, &ev, &state.metric, dt);
            callback(&rw, &state)?;
            rows.push(rw);
            dissipated.push(cumulative);
            if opts.keep_history {
                history.push(Snapshot { t: state.t, f_sq: ev.f_sq.clone() });
            }
        }
        if opts.stop_on_plateau && plateau {
            stopped_on_plateau = true;
            break;
        }
    }
    Ok(FlowTrace { rows, dissipated, history, state, halvings, stopped_on_plateau })
}

#[derive(Clone, Debug)]
pub struct PerturbedSolution {
    pub metric: HermitianField,
    /// `sup|iΛF - λId + ε log(K⁻¹H)|_H`
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Residual of `iΛF_H - λId + ε log(K⁻¹H) = 0`.
pub fn perturbed_residual(
    spec: &BundleSpec,
    k: &HermitianField,
    h: &HermitianField,
    eps: f64,
    lambda: f64,
    geom: &Geometry,
) -> Result<(EndoField, f64)> {
    let curv = curvature(h, spec, geom)?;
    let r = spec.rank();
    let mut res = curv.mean.sub(&EndoField::identity(r, geom.len()).scale_re(lambda));
    res.add_assign(&relative_log(k.endo(), h.endo())?.scale_re(eps));
    let sup = endo_norm_sq(&res, h.endo()).into_iter().fold(0.0, f64::max).sqrt();
    Ok((res, sup))
}

/// Solves the perturbed equation by a damped pseudo-time iteration of
/// `H⁻¹∂H/∂t = -2(iΛF - λId + ε log f)`, preconditioned by the inverse of
/// its linearization `ε - L` about flat space.
pub fn perturbed_solve(
    spec: &BundleSpec,
    k: &HermitianField,
    eps: f64,
    geom: &Geometry,
    opts: &FlowOptions,
) -> Result<PerturbedSolution> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Precondition(format!("perturbation parameter must lie in (0, 1], got {eps}")));
    }
    let lambda = lambda_of(spec, geom)?;
    let r = spec.rank() as f64;
    let tr = trace_residual(k, lambda, spec, geom)?;
    if tr > 1e-6 * (1.0 + r * lambda.abs()) {
        return Err(Error::Precondition(format!(
            "background metric is not trace normalized (sup|tr iΛF - rλ| = {tr:.3e})"
        )));
    }
    let c = 0.5 * (0..geom.len()).map(|i| geom.metric_inverse(i).trace().re).sum::<f64>()
        / (geom.len() * geom.complex_dim()) as f64;
    let spectral = geom.spectral();

    let mut h = k.clone();
    let (mut res, mut sup) = perturbed_residual(spec, k, &h, eps, lambda, geom)?;
    let mut history = vec![sup];
    let mut damping: f64 = 1.0;
    let mut iterations = 0;
    while sup > opts.solve_tol {
        if iterations >= opts.solve_max_iter || damping < 1e-6 {
            return Err(Error::NonConvergence { what: "perturbed_solve", iterations, last: sup, history });
        }
        iterations += 1;
        let th = damping;
        let mult = move |idx: usize| C64::new(th / (eps - c * spectral.laplacian_symbol(idx)), 0.0);
        let cand = exp_update(spec, &h, &res, geom, mult)?;
        let (cres, csup) = perturbed_residual(spec, k, &cand, eps, lambda, geom)?;
        if csup < sup {
            h = cand;
            res = cres;
            sup = csup;
            history.push(sup);
            damping = (damping * 1.5).min(1.0);
        } else {
            damping *= 0.5;
        }
    }
    Ok(PerturbedSolution { metric: h, residual: sup, iterations, history })
}

/// Complex gauge transformation with `σ*σ = H₀⁻¹H`, where `*` is the
/// `H₀`-adjoint: `σ = H₀^{-1/2} (H₀^{-1/2} H H₀^{-1/2})^{1/2} H₀^{1/2}`.
pub fn sigma_of(h0: &HermitianField, h: &HermitianField) -> Result<EndoField> {
    let s0 = endo_sqrt(h0.endo())?;
    let s0inv = s0.inverse()?;
    let mid = s0inv.mul(h.endo()).mul(&s0inv).map(|_, m| m.hermitian_part());
    Ok(s0inv.mul(&endo_sqrt(&mid)?).mul(&s0))
}

/// Connection on the unitary side, `H₀`-unitary with (0,1) part `alpha`.
#[derive(Clone, Debug)]
pub struct GaugeState {
    pub step: usize,
    pub t: f64,
    pub alpha: EndoForm01,
}

fn gauge_eval(spec: &BundleSpec, alpha: &EndoForm01, h0: &HermitianField, geom: &Geometry) -> Result<(CurvatureField, Vec<f64>)> {
    let curv = curvature_of(spec, alpha, h0.endo(), geom)?;
    let f_sq = curvature_norm_sq(&curv.f, h0.endo(), geom);
    Ok((curv, f_sq))
}

/// One explicit step of `∂α/∂t = ∂̄_A(iΛF_A)`, filtered like the metric flow.
fn gauge_step(
    spec: &BundleSpec,
    alpha: &EndoForm01,
    theta: &EndoField,
    geom: &Geometry,
    dt: f64,
    precondition: bool,
) -> EndoForm01 {
    let d = dbar_endo(spec, alpha, theta, geom);
    let mult = flow_multiplier(geom, dt, precondition);
    let comps = alpha
        .comps
        .iter()
        .zip(&d.comps)
        .map(|(a, dk)| a.add(&dk.multiply(geom.spectral(), move |i| mult(i) * 0.5)))
        .collect();
    EndoForm01 { comps }
}

/// Gauge equivalent flow `∂A/∂t = i(∂̄_A - ∂_A)Λ F_A` from `A(0) = (∂̄_E, H₀)`,
/// at fixed step `opts.dt`. Rows report `|F_A|_{H₀}`.
pub fn gauge_flow(spec: &BundleSpec, h0: &HermitianField, geom: &Geometry, opts: &FlowOptions) -> Result<(Vec<TraceRow>, GaugeState)> {
    opts.check()?;
    spec.validate(geom)?;
    check_metric(spec, h0.endo())?;
    let mut st = GaugeState { step: 0, t: 0.0, alpha: spec.perturbation_or_zero(geom) };
    let mut rows = Vec::new();
    let lambda = lambda_of(spec, geom)?;
    loop {
        let (curv, f_sq) = gauge_eval(spec, &st.alpha, h0, geom)?;
        if st.step.is_multiple_of(opts.sample_every) || st.t >= opts.t_max * (1.0 - 1e-12) {
            rows.push(TraceRow {
                step: st.step,
                t: st.t,
                eps: 0.0,
                ym_energy: geom.integrate(&Field::from_real(f_sq.iter().cloned()))?,
                sup_f: f_sq.iter().cloned().fold(0.0, f64::max).sqrt(),
                he_residual: he_residual(&curv, h0, lambda),
                min_eig_h: h0.min_eig(),
                dt: opts.dt,
            });
        }
        if st.t >= opts.t_max * (1.0 - 1e-12) {
            break;
        }
        let dt = opts.dt.min(opts.t_max - st.t);
        st.alpha = gauge_step(spec, &st.alpha, &curv.mean, geom, dt, opts.precondition);
        st.t += dt;
        st.step += 1;
    }
    Ok((rows, st))
}

/// `sup_x | |F_A|²_{H₀} - |F_H|²_H |`
pub fn gauge_relation_residual(
    spec: &BundleSpec,
    h0: &HermitianField,
    alpha: &EndoForm01,
    h: &HermitianField,
    geom: &Geometry,
) -> Result<f64> {
    let (_, fa) = gauge_eval(spec, alpha, h0, geom)?;
    let ch = curvature(h, spec, geom)?;
    let fh = curvature_norm_sq(&ch.f, h.endo(), geom);
    Ok(fa.iter().zip(&fh).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoEvolution {
    pub times: Vec<f64>,
    /// gauge relation residual at each time
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Runs both flows side by side at fixed step `opts.dt` up to `opts.t_max`
/// and records the gauge relation residual at every step.
pub fn co_evolve(spec: &BundleSpec, h0: &HermitianField, geom: &Geometry, opts: &FlowOptions) -> Result<CoEvolution> {
    opts.check()?;
    spec.validate(geom)?;
    let lambda = lambda_of(spec, geom)?;
    let r = spec.rank();
    let id = EndoField::identity(r, geom.len());
    let mut h = h0.clone();
    let mut alpha = spec.perturbation_or_zero(geom);
    let mut t = 0.0;
    let mut times = Vec::new();
    let mut residuals = Vec::new();
    loop {
        let ch = curvature(&h, spec, geom)?;
        let fh = curvature_norm_sq(&ch.f, h.endo(), geom);
        let (ca, fa) = gauge_eval(spec, &alpha, h0, geom)?;
        times.push(t);
        residuals.push(fa.iter().zip(&fh).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        if t >= opts.t_max * (1.0 - 1e-12) {
            break;
        }
        let dt = opts.dt.min(opts.t_max - t);
        let theta = ch.mean.sub(&id.scale_re(lambda));
        h = exp_update(spec, &h, &theta, geom, flow_multiplier(geom, dt, opts.precondition))?;
        alpha = gauge_step(spec, &alpha, &ca.mean, geom, dt, opts.precondition);
        t += dt;
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(CoEvolution { times, residuals, max_residual })
}

/// Periodic flat distance on the torus.
fn torus_distance(x: &[f64], y: &[f64], periods: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(periods)
        .map(|((a, b), l)| {
            let d = (a - b).rem_euclid(*l);
            let d = d.min(l - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `R^{2-2n} ∫_{P_R(x₀,t₀)} |F|²` over the parabolic cylinder
/// `B_R(x₀) × [t₀ - R², t₀ + R²]`, from the retained history.
pub fn local_energy(trace: &FlowTrace, geom: &Geometry, x0: &[f64], t0: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0) || radius > geom.min_period() / 4.0 {
        return Err(Error::Precondition(format!(
            "radius {radius} must lie in (0, {}] (half the injectivity radius)",
            geom.min_period() / 4.0
        )));
    }
    let (lo, hi) = (t0 - radius * radius, t0 + radius * radius);
    let tol = 1e-12 * (1.0 + t0.abs());
    let (Some(first), Some(last)) = (trace.history.first(), trace.history.last()) else {
        return Err(Error::Precondition("no retained history".into()));
    };
    if first.t > lo + tol || last.t < hi - tol {
        return Err(Error::Precondition(format!(
            "history covers [{}, {}], the cylinder needs [{lo}, {hi}]",
            first.t, last.t
        )));
    }
    let spectral = geom.spectral();
    let inside: Vec<usize> = (0..geom.len())
        .filter(|&i| torus_distance(&spectral.coords(i), x0, geom.periods()) < radius)
        .collect();
    let density = geom.volume_density();
    let ball = |s: &Snapshot| -> f64 {
        let v: Vec<f64> = inside.iter().map(|&i| s.f_sq[i] * density[i]).collect();
        pairwise_sum(&v) * geom.cell_volume()
    };
    let snaps: Vec<&Snapshot> = trace.history.iter().filter(|s| s.t >= lo - tol && s.t <= hi + tol).collect();
    let integral = match snaps.len() {
        0 => 0.0,
        1 => ball(snaps[0]) * (hi - lo),
        _ => snaps.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (ball(w[0]) + ball(w[1]))).sum(),
    };
    let n = geom.complex_dim() as i32;
    Ok(radius.powi(2 - 2 * n) * integral)
}

#[derive(Clone, Debug)]
pub struct BochnerRecord {
    /// `|F|` at the later time
    pub f_norm: Vec<f64>,
    /// `(Δ - ∂_t)|F|²`
    pub heat: Vec<f64>,
    /// `|∇_A F|²`
    pub grad_sq: Vec<f64>,
    /// `min_x [(Δ - ∂_t)|F|² - 2|∇_A F|²]`
    pub margin: f64,
}

/// Fields entering the Bochner inequality along a flow, from two nearby
/// states `(t₀, H₀)` and `(t₁, H₁)`.
pub fn bochner_monitor(
    spec: &BundleSpec,
    geom: &Geometry,
    prev: (f64, &HermitianField),
    cur: (f64, &HermitianField),
) -> Result<BochnerRecord> {
    let dt = cur.0 - prev.0;
    if !(dt > 0.0) {
        return Err(Error::Precondition("bochner_monitor needs increasing times".into()));
    }
    let n = geom.complex_dim();
    let h = cur.1;
    let c0 = curvature(prev.1, spec, geom)?;
    let c1 = curvature(h, spec, geom)?;
    let f0 = curvature_norm_sq(&c0.f, prev.1.endo(), geom);
    let f1 = curvature_norm_sq(&c1.f, h.endo(), geom);

    // Δ_g = 2 g^{k̄j} ∂_j ∂_k̄ on functions
    let lap = crate::hermitian::complex_laplacian(&Field::from_real(f1.iter().cloned()), geom).scale_re(2.0);
    let heat: Vec<f64> = (0..geom.len()).map(|i| lap[i].re - (f1[i] - f0[i]) / dt).collect();

    // ∇'_j F = ∇⁰_j F + [B'_j, F] and ∇''_k F = ∇⁰_k̄ F + [a_k, F]
    let a = spec.perturbation_or_zero(geom);
    let hinv = h.endo().inverse()?;
    let b10 = crate::hermitian::connection_10(spec, &a, h.endo(), &hinv, geom);
    let mut grad_sq = vec![0.0; geom.len()];
    for (dir, conn) in [(0usize, &b10.comps), (1usize, &a.comps)] {
        let derivs: Vec<Vec<EndoField>> = (0..n)
            .map(|m| {
                c1.f.comps
                    .iter()
                    .map(|fc| {
                        let d = if dir == 0 { D::Z(m) } else { D::Zb(m) };
                        let mut x = spec.nabla0(fc, d, geom);
                        x.add_assign(&conn[m].commutator(fc));
                        x
                    })
                    .collect()
            })
            .collect();
        for (idx, g) in grad_sq.iter_mut().enumerate() {
            let hm = h.at(idx);
            let hi = hinv.at(idx);
            let p = geom.coframe(idx);
            for c in 0..n {
                let mut combo: Vec<Mat> = vec![Mat::zeros(hm.dim()); n * n];
                for (m, dm) in derivs.iter().enumerate() {
                    let w = if dir == 0 { p.get(m, c) } else { p.get(m, c).conj() };
                    for (q, x) in dm.iter().enumerate() {
                        combo[q] = combo[q].add(&x.at(idx).scale(w));
                    }
                }
                *g += form11_norm_sq_at(&combo, n, p, &hm, &hi);
            }
        }
    }
    let margin = heat.iter().zip(&grad_sq).map(|(h, g)| h - 2.0 * g).fold(f64::INFINITY, f64::min);
    Ok(BochnerRecord { f_norm: f1.iter().map(|x| x.sqrt()).collect(), heat, grad_sq, margin })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub schedule: Vec<f64>,
    pub flow: FlowOptions,
    /// final sup|F| must drop below this fraction of the identity metric value
    pub target_ratio: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            schedule: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            flow: FlowOptions::default(),
            target_ratio: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub eps: f64,
    /// `sup|iΛF - λId|` at `H_ε`
    pub he_residual_eps: f64,
    pub solve_residual: f64,
    pub solve_iterations: usize,
    pub sup_f_start: f64,
    pub sup_f_after: f64,
    pub he_residual_after: f64,
    pub ym_start: f64,
    pub ym_end: f64,
    pub steps: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub label: String,
    pub lambda: f64,
    pub chern: ChernReport,
    pub hypothesis_holds: bool,
    pub identity_sup_f: f64,
    pub identity_he_residual: f64,
    pub stages: Vec<StageReport>,
    pub sup_f_monotone: bool,
    pub he_residual_monotone: bool,
    /// final sup|F| over the identity metric value
    pub final_ratio: f64,
    pub target_met: bool,
}

/// The approximate Hermitian flat construction: for each `ε` in the schedule
/// solve the perturbed equation and run the flow from its solution.
/// `on_row` receives every trace row of every stage.
pub fn approx_flat_pipeline(
    spec: &BundleSpec,
    geom: &Geometry,
    opts: &PipelineOptions,
    on_row: &mut dyn FnMut(&TraceRow) -> Result<()>,
) -> Result<PipelineReport> {
    let id = HermitianField::identity(spec, geom);
    let chern = chern_numbers(spec, &id, geom)?;
    let hypothesis_holds = chern.numerically_flat_hypothesis;
    if !hypothesis_holds {
        log::warn!(
            "{}: ch1.[w] = {:.3e}, ch2 = {:.3e}; the numerically flat hypothesis fails",
            spec.label(),
            chern.ch1_omega,
            chern.ch2
        );
    }
    let lambda = lambda_of(spec, geom)?;
    let ev = evaluate(spec, &id, geom, lambda)?;
    let k = trace_normalize(&id, lambda, spec, geom)?;

    let mut stages = Vec::new();
    for &eps in &opts.schedule {
        let stage = (|| -> Result<StageReport> {
            let sol = perturbed_solve(spec, &k, eps, geom, &opts.flow)?;
            let he_eps = he_residual(&curvature(&sol.metric, spec, geom)?, &sol.metric, lambda);
            let mut cb = |rw: &TraceRow, _: &FlowState| on_row(rw);
            let tr = hym_flow_from(spec, FlowState::initial(sol.metric.clone(), &opts.flow), geom, lambda, eps, &opts.flow, &mut cb)?;
            Ok(StageReport {
                eps,
                he_residual_eps: he_eps,
                solve_residual: sol.residual,
                solve_iterations: sol.iterations,
                sup_f_start: tr.rows[0].sup_f,
                sup_f_after: tr.last().sup_f,
                he_residual_after: tr.last().he_residual,
                ym_start: tr.rows[0].ym_energy,
                ym_end: tr.last().ym_energy,
                steps: tr.state.step,
                error: None,
            })
        })();
        stages.push(stage.unwrap_or_else(|e| {
            log::error!("pipeline stage eps = {eps}: {e}");
            StageReport {
                eps,
                he_residual_eps: f64::NAN,
                solve_residual: f64::NAN,
                solve_iterations: 0,
                sup_f_start: f64::NAN,
                sup_f_after: f64::NAN,
                he_residual_after: f64::NAN,
                ym_start: f64::NAN,
                ym_end: f64::NAN,
                steps: 0,
                error: Some(e.to_string()),
            }
        }));
    }

    let ok: Vec<&StageReport> = stages.iter().filter(|s| s.error.is_none()).collect();
    let monotone = |f: &dyn Fn(&StageReport) -> f64| ok.windows(2).all(|w| f(w[1]) <= f(w[0]) * (1.0 + 1e-9) + 1e-12);
    let sup_f_monotone = ok.len() == stages.len() && monotone(&|s| s.sup_f_after);
    let he_residual_monotone = ok.len() == stages.len() && monotone(&|s| s.he_residual_eps);
    let final_sup = stages.last().map(|s| s.sup_f_after).unwrap_or(f64::NAN);
    let final_ratio = if ev.sup_f > 0.0 { final_sup / ev.sup_f } else { 0.0 };
    Ok(PipelineReport {
        label: spec.label().to_string(),
        lambda,
        chern,
        hypothesis_holds,
        identity_sup_f: ev.sup_f,
        identity_he_residual: ev.he,
        stages,
        sup_f_monotone,
        he_residual_monotone,
        final_ratio,
        target_met: final_ratio <= opts.target_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ExtensionClass;

    fn flat() -> Geometry {
        Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0; 4]).unwrap()
    }

    fn ext(g: &Geometry, b: f64) -> BundleSpec {
        BundleSpec::extension_bundle(&ExtensionClass::constant(g, [C64::new(b, 0.0), C64::new(0.0, 0.0)]))
    }

    #[test]
    fn flat_bundle_is_stationary() {
        let g = flat();
        let l = BundleSpec::flat_line([0.1, 0.2, 0.3, 0.4]);
        let h = HermitianField::identity(&l, &g);
        let opts = FlowOptions { dt: 0.01, t_max: 0.05, ..Default::default() };
        let tr = hym_flow(&l, &h, &g, 0.0, &opts).unwrap();
        assert!(tr.rows.iter().all(|r| r.sup_f == 0.0));
        assert!(tr.final_metric().endo().sub(h.endo()).max_abs() < 1e-14);
    }

    #[test]
    fn hermitian_einstein_input_is_a_fixed_point() {
        let g = flat();
        let l = BundleSpec::flux_line([1, 1]);
        let h = HermitianField::identity(&l, &g);
        let lambda = lambda_of(&l, &g).unwrap();
        let opts = FlowOptions { dt: 0.01, t_max: 0.1, ..Default::default() };
        let tr = hym_flow(&l, &h, &g, lambda, &opts).unwrap();
        assert!(tr.final_metric().endo().sub(h.endo()).max_abs() < 1e-10);
    }

    #[test]
    fn extension_flow_follows_the_rescaling_ode() {
        // H stays diagonal and constant; with u = |b|² h₁/h₂ one has
        // u' = -4u², so u(t) = u₀ / (1 + 4u₀ t) and sup|F| = √2 u
        let g = flat();
        let b: f64 = 0.5;
        let e = ext(&g, b);
        let opts = FlowOptions { dt: 1e-3, t_max: 0.5, ..Default::default() };
        let tr = hym_flow(&e, &HermitianField::identity(&e, &g), &g, 0.0, &opts).unwrap();
        let u0 = b * b;
        let u = u0 / (1.0 + 4.0 * u0 * 0.5);
        let got = tr.last().sup_f / 2f64.sqrt();
        assert!((got - u).abs() < 1e-3 * u, "{got} vs {u}");
        assert!(tr.rows.windows(2).all(|w| w[1].sup_f < w[0].sup_f));
        assert!(tr.energy_balance().relative_error < 1e-2);
    }

    #[test]
    fn perturbed_solve_cases() {
        let g = flat();
        let l = BundleSpec::flat_line([0.0; 4]);
        let k = HermitianField::identity(&l, &g);
        let sol = perturbed_solve(&l, &k, 0.5, &g, &FlowOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(matches!(perturbed_solve(&l, &k, 0.0, &g, &FlowOptions::default()), Err(Error::Precondition(_))));

        let e = ext(&g, 0.5);
        let id = HermitianField::identity(&e, &g);
        let sol = perturbed_solve(&e, &id, 1.0, &g, &FlowOptions::default()).unwrap();
        assert!(sol.residual < 1e-6);
        let he0 = he_residual(&curvature(&id, &e, &g).unwrap(), &id, 0.0);
        let he1 = he_residual(&curvature(&sol.metric, &e, &g).unwrap(), &sol.metric, 0.0);
        assert!(he1 < he0);
    }

    #[test]
    fn gauge_flow_starts_on_the_relation() {
        let g = flat();
        let e = ext(&g, 0.5);
        let h = HermitianField::random_smooth(&e, &g, 4, 0.1);
        let a = e.perturbation_or_zero(&g);
        assert!(gauge_relation_residual(&e, &h, &a, &h, &g).unwrap() < 1e-12);
        let s = sigma_of(&h, &h).unwrap();
        assert!(s.sub(&EndoField::identity(2, g.len())).max_abs() < 1e-12);
    }

    #[test]
    fn sigma_squares_to_relative_metric() {
        let g = flat();
        let e = BundleSpec::trivial_bundle(2);
        let h0 = HermitianField::random_smooth(&e, &g, 1, 0.3);
        let h1 = HermitianField::random_smooth(&e, &g, 2, 0.3);
        let s = sigma_of(&h0, &h1).unwrap();
        let h0inv = h0.endo().inverse().unwrap();
        // σ* = H₀⁻¹ σ† H₀
        let star = h0inv.mul(&s.adjoint()).mul(h0.endo());
        let lhs = star.mul(&s);
        let rhs = h0inv.mul(h1.endo());
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);
    }

    #[test]
    fn local_energy_preconditions() {
        let g = flat();
        let l = BundleSpec::flat_line([0.0; 4]);
        let opts = FlowOptions { dt: 0.01, t_max: 0.05, keep_history: true, ..Default::default() };
        let tr = hym_flow(&l, &HermitianField::identity(&l, &g), &g, 0.0, &opts).unwrap();
        assert_eq!(local_energy(&tr, &g, &[0.5; 4], 0.025, 0.1).unwrap(), 0.0);
        assert!(local_energy(&tr, &g, &[0.5; 4], 0.025, 0.3).is_err());
        assert!(local_energy(&tr, &g, &[0.5; 4], 0.045, 0.1).is_err());
    }
}
