//! Fiber integration over the projectivized bundle `P(E)` of a rank 2 bundle.
//!
//! `P(E)` is the bundle of lines in `E` and `O_E(1)` is the dual of the
//! tautological line. Over a base point the line spanned by `v = e₁ + ζ e₂`,
//! for a local holomorphic frame `e`, gives an affine fiber coordinate `ζ`
//! that misses one point of each fiber, which carries no measure. The
//! tautological line has the induced metric `ψ = v†Gv`, with `G` the metric in
//! the holomorphic frame, and `Ξ = (i/2π) Θ(O_E(1)) = (i/2π) ∂∂̄ log ψ`.
//!
//! At each base point the holomorphic frame is normalized to agree with the
//! background frame to first order in `z`, so that
//!
//! - `G = H`,
//! - `∂_j G = ∇⁰_j H - a_j† H`,
//! - `∂_j ∂̄_k G = -H F_{jk̄} + (∂_k G)† H⁻¹ ∂_j G`.
//!
//! Derivatives along the fiber are then exact rational functions of `ζ`, and
//! base derivatives come from the spectral curvature. Fibers are integrated in
//! `s = |ζ|²/(1+|ζ|²) ∈ (0,1)` with Gauss-Legendre nodes, and in `arg ζ` with
//! the trapezoid rule. In these variables `i dζ∧dζ̄ = ds dθ/(1-s)²`, and the
//! angular average of a smooth density on the fiber is smooth in `s` at both
//! poles.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::BundleSpec;
use crate::chern_weil::{chern_forms, segre_forms};
use crate::endo::EndoField;
use crate::field::Field;
use crate::forms::{volume_sign, FormField};
use crate::geometry::Geometry;
use crate::hermitian::{curvature, HermitianField};
use crate::quadrature::gauss_legendre;
use crate::spectral::D;
use crate::{Error, Result, C64};

pub const DEFAULT_FIBER_RES: usize = 64;
/// Fiber volume defect accepted by the quadrature self-test.
pub const FIBER_VOLUME_TOL: f64 = 1e-6;
/// Acceptance tolerances for `k = 0, 1, 2`.
pub const SEGRE_TOL: [f64; 3] = [1e-4, 1e-4, 2e-3];

type M2 = [[C64; 2]; 2];
/// Coefficients `X_{αβ̄}` of `Ξ = i Σ X_{αβ̄} dw_α ∧ dw̄_β` in `w = (z₁, z₂, ζ)`.
pub type XiMatrix = [[C64; 3]; 3];

const ZERO: C64 = C64::new(0.0, 0.0);

/// Product rule on one fiber: nodes `ζ` and weights for `∫ f i dζ∧dζ̄`.
#[derive(Clone, Debug)]
pub struct FiberQuadrature {
    res: usize,
    nodes: Vec<C64>,
    weights: Vec<f64>,
}

impl FiberQuadrature {
    /// `res` Gauss-Legendre nodes in `s` times `res` equispaced angles.
    pub fn new(res: usize) -> Result<Self> {
        if res < 2 {
            return Err(Error::Precondition(format!("fiber resolution {res} below 2")));
        }
        let (x, w) = gauss_legendre(res);
        let dtheta = 2.0 * PI / res as f64;
        let mut nodes = Vec::with_capacity(res * res);
        let mut weights = Vec::with_capacity(res * res);
        for (xi, wi) in x.iter().zip(&w) {
            let s = 0.5 * (xi + 1.0);
            let rho = (s / (1.0 - s)).sqrt();
            let weight = 0.5 * wi * dtheta / ((1.0 - s) * (1.0 - s));
            for m in 0..res {
                let theta = dtheta * (m as f64 + 0.5);
                nodes.push(C64::from_polar(rho, theta));
                weights.push(weight);
            }
        }
        Ok(FiberQuadrature { res, nodes, weights })
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn nodes(&self) -> &[C64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Second order jet of the holomorphic-frame metric at one base point.
#[derive(Clone, Copy, Debug)]
struct Jet {
    h: M2,
    dg: [M2; 2],
    ddg: [M2; 4],
}

/// The total space of `P(E) → X` sampled as base grid × fiber quadrature.
#[derive(Clone, Debug)]
pub struct FiberedGrid {
    base: Geometry,
    fiber: FiberQuadrature,
    jets: Vec<Jet>,
    segre: Vec<FormField>,
}

fn m2(m: &crate::linalg::Mat) -> M2 {
    [[m.get(0, 0), m.get(0, 1)], [m.get(1, 0), m.get(1, 1)]]
}

/// `v† M v` with `v = (1, ζ)`.
#[inline]
fn quad(m: &M2, z: C64) -> C64 {
    m[0][0] + m[0][1] * z + z.conj() * (m[1][0] + m[1][1] * z)
}

fn det3(x: &XiMatrix) -> C64 {
    x[0][0] * (x[1][1] * x[2][2] - x[1][2] * x[2][1]) - x[0][1] * (x[1][0] * x[2][2] - x[1][2] * x[2][0])
        + x[0][2] * (x[1][0] * x[2][1] - x[1][1] * x[2][0])
}

impl Jet {
    fn psi(&self, z: C64) -> f64 {
        quad(&self.h, z).re
    }

    /// `X = (1/2π)(∂∂̄ψ/ψ - ∂ψ ∂̄ψ/ψ²)`, minus an optional base block.
    fn xi(&self, z: C64, shift: Option<&[C64; 4]>) -> XiMatrix {
        let psi = self.psi(z);
        let h = &self.h;
        let p = [quad(&self.dg[0], z), quad(&self.dg[1], z), z.conj() * h[1][1] + h[0][1]];
        let mut s = [[ZERO; 3]; 3];
        for j in 0..2 {
            for k in 0..2 {
                s[j][k] = quad(&self.ddg[2 * j + k], z);
            }
            // ∂̄_ζ ∂_j ψ = (∂_j G v)₂ and its conjugate partner
            s[j][2] = self.dg[j][1][0] + self.dg[j][1][1] * z;
            s[2][j] = s[j][2].conj();
        }
        s[2][2] = h[1][1];
        let c = 1.0 / (2.0 * PI);
        let mut x = [[ZERO; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                x[a][b] = (s[a][b] / psi - p[a] * p[b].conj() / (psi * psi)) * c;
            }
        }
        if let Some(d) = shift {
            for j in 0..2 {
                for k in 0..2 {
                    x[j][k] -= d[2 * j + k];
                }
            }
        }
        x
    }
}

/// Assembles the jets of `H` needed for `Ξ` together with the Segre forms of
/// `(E, H)`, which the fiber integrals are checked against.
pub fn build_fibered_grid(spec: &BundleSpec, h: &HermitianField, geom: &Geometry, fiber_res: usize) -> Result<FiberedGrid> {
    if spec.rank() != 2 {
        return Err(Error::Precondition(format!("projectivization needs rank 2, got {}", spec.rank())));
    }
    if geom.complex_dim() != 2 {
        return Err(Error::Precondition("projectivization needs a surface".into()));
    }
    let fiber = FiberQuadrature::new(fiber_res)?;
    let curv = curvature(h, spec, geom)?;
    let a = spec.perturbation_or_zero(geom);
    let dh = spec.nabla0_many(h.endo(), &[&[D::Z(0)], &[D::Z(1)]], geom);
    let hinv = h.endo().inverse()?;
    let m: Vec<EndoField> = (0..2).map(|j| dh[j].sub(&a.comps[j].adjoint().mul(h.endo()))).collect();
    let jets = (0..geom.len())
        .map(|idx| {
            let hm = h.at(idx);
            let hi = hinv.at(idx);
            let mj = [m[0].at(idx), m[1].at(idx)];
            let mut ddg = [[[ZERO; 2]; 2]; 4];
            for j in 0..2 {
                for k in 0..2 {
                    let q = hm.mul(&curv.f.get(j, k).at(idx)).scale_re(-1.0);
                    let q = q.add(&mj[k].adjoint().mul(&hi).mul(&mj[j]));
                    ddg[2 * j + k] = m2(&q);
                }
            }
            Jet { h: m2(&hm), dg: [m2(&mj[0]), m2(&mj[1])], ddg }
        })
        .collect();
    let c = chern_forms(&curv.f, 2, 2);
    let segre = segre_forms(&c, 2);
    Ok(FiberedGrid { base: geom.clone(), fiber, jets, segre })
}

impl FiberedGrid {
    pub fn base(&self) -> &Geometry {
        &self.base
    }

    pub fn fiber(&self) -> &FiberQuadrature {
        &self.fiber
    }

    /// Segre forms `s₀, s₁, s₂` of the bundle metric, from the Chern forms.
    pub fn segre(&self) -> &[FormField] {
        &self.segre
    }

    /// Induced metric `|v|²_H` on the tautological line at fiber node `node`.
    pub fn induced_metric(&self, idx: usize, node: usize) -> f64 {
        self.jets[idx].psi(self.fiber.nodes[node])
    }

    pub fn xi_at(&self, idx: usize, node: usize) -> XiMatrix {
        self.jets[idx].xi(self.fiber.nodes[node], None)
    }

    /// `∫_fiber f i dζ∧dζ̄` at every base point, for a density built from `Ξ`.
    pub fn fiber_integrate(&self, f: impl Fn(usize, &XiMatrix) -> C64 + Sync) -> Field {
        self.integrate_with(None, |idx, x| [f(idx, x), ZERO, ZERO, ZERO]).into_iter().map(|v| v[0]).collect()
    }

    fn integrate_with(&self, shift: Option<&[[C64; 4]]>, f: impl Fn(usize, &XiMatrix) -> [C64; 4] + Sync) -> Vec<[C64; 4]> {
        let nodes = &self.fiber.nodes;
        let weights = &self.fiber.weights;
        (0..self.jets.len())
            .into_par_iter()
            .map(|idx| {
                let jet = &self.jets[idx];
                let sh = shift.map(|s| &s[idx]);
                let mut acc = [ZERO; 4];
                for (z, w) in nodes.iter().zip(weights) {
                    let v = f(idx, &jet.xi(*z, sh));
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b * *w;
                    }
                }
                acc
            })
            .collect()
    }

    fn pushforward_shifted(&self, power: usize, shift: Option<&[[C64; 4]]>) -> Result<FormField> {
        let n = 2;
        let len = self.jets.len();
        let vals = match power {
            1 => self.integrate_with(shift, |_, x| [x[2][2], ZERO, ZERO, ZERO]),
            // coefficient of (i dz_a∧dz̄_b)∧(i dζ∧dζ̄) in Ξ²
            2 => self.integrate_with(shift, |_, x| {
                let mut out = [ZERO; 4];
                for a in 0..2 {
                    for b in 0..2 {
                        out[2 * a + b] = (x[a][b] * x[2][2] - x[a][2] * x[2][b]) * 2.0;
                    }
                }
                out
            }),
            3 => self.integrate_with(shift, |_, x| [det3(x) * 6.0, ZERO, ZERO, ZERO]),
            _ => return Err(Error::Precondition(format!("push-forward power {power} outside 1..=3"))),
        };
        let comp = |c: usize| -> Field { vals.iter().map(|v| v[c]).collect() };
        Ok(match power {
            1 => FormField::scalar(n, comp(0)),
            2 => {
                let a: Vec<Vec<Field>> = (0..2).map(|j| (0..2).map(|k| comp(2 * j + k)).collect()).collect();
                FormField::from_i_coeffs(n, &a)
            }
            _ => {
                let mut f = FormField::zero(n, len);
                f.add_component((1u32 << (2 * n)) - 1, &comp(0).scale(volume_sign(n)));
                f
            }
        })
    }
}

/// `π_*(Ξ^power)` as a base form of degree `2(power - 1)`.
pub fn pushforward(grid: &FiberedGrid, power: usize) -> Result<FormField> {
    grid.pushforward_shifted(power, None)
}

/// Largest deviation of `π_*Ξ` from 1 over the base.
pub fn fiber_volume_defect(grid: &FiberedGrid) -> Result<f64> {
    let vol = pushforward(grid, 1)?;
    Ok(vol.component_or_zero(0).iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max))
}

fn self_test(grid: &FiberedGrid) -> Result<f64> {
    let defect = fiber_volume_defect(grid)?;
    if !(defect <= FIBER_VOLUME_TOL) {
        return Err(Error::FiberResolution { defect, resolution: grid.fiber.res });
    }
    Ok(defect)
}

/// `∫_X α ∧ ω^{2-k}` for a base form of degree `2k`.
fn pair_with_omega(grid: &FiberedGrid, form: &FormField, k: usize) -> Result<f64> {
    let omega = grid.base.omega();
    let mut w = form.clone();
    for _ in k..2 {
        w = w.wedge(&omega);
    }
    Ok(grid.base.integrate_top(&w)?.re)
}

#[derive(Clone, Debug, Serialize)]
pub struct SegreCheck {
    pub k: usize,
    /// `∫ π_*(Ξ^{1+k}) ∧ ω^{2-k}`
    pub pushforward: f64,
    /// `∫ s_k ∧ ω^{2-k}`
    pub segre: f64,
    /// difference of the two integrals divided by the volume
    pub discrepancy: f64,
    /// largest pointwise coefficient difference
    pub pointwise: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn coefficient_sup(f: &FormField) -> f64 {
    f.sup_norm()
}

/// Compares `π_*(Ξ^{1+k})` with `s_k(E, H)`, `k ∈ {0, 1, 2}`.
pub fn segre_check(grid: &FiberedGrid, k: usize) -> Result<SegreCheck> {
    if k > 2 {
        return Err(Error::Precondition(format!("Segre degree {k} outside 0..=2")));
    }
    self_test(grid)?;
    let push = pushforward(grid, k + 1)?;
    let s = &grid.segre[k];
    let pushforward = pair_with_omega(grid, &push, k)?;
    let segre = pair_with_omega(grid, s, k)?;
    let discrepancy = (pushforward - segre).abs() / grid.base.volume();
    let tolerance = SEGRE_TOL[k];
    Ok(SegreCheck {
        k,
        pushforward,
        segre,
        discrepancy,
        pointwise: coefficient_sup(&push.sub(s)),
        tolerance,
        passed: discrepancy <= tolerance,
    })
}

/// Changes the metric on `O_E(1)` from `h` to `e^φ h` for a base function
/// `φ`, and returns the larger change of `∫ Ξ²∧π*ω` and `∫ Ξ³`.
pub fn oe1_metric_change_invariance(grid: &FiberedGrid, phi: &Field) -> Result<f64> {
    grid.base.check_len(phi.len())?;
    let chains: Vec<[D; 2]> = (0..4).map(|c| [D::Z(c / 2), D::Zb(c % 2)]).collect();
    let refs: Vec<&[D]> = chains.iter().map(|c| &c[..]).collect();
    let dd = grid.base.spectral().diff_many(phi, &refs);
    let c = 1.0 / (2.0 * PI);
    let shift: Vec<[C64; 4]> = (0..phi.len()).map(|idx| [dd[0][idx] * c, dd[1][idx] * c, dd[2][idx] * c, dd[3][idx] * c]).collect();
    let mut worst: f64 = 0.0;
    for (power, k) in [(2, 1), (3, 2)] {
        let before = pair_with_omega(grid, &grid.pushforward_shifted(power, None)?, k)?;
        let after = pair_with_omega(grid, &grid.pushforward_shifted(power, Some(&shift))?, k)?;
        worst = worst.max((after - before).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct SegreReport {
    pub label: String,
    pub fiber_res: usize,
    pub volume_defect: f64,
    pub checks: Vec<SegreCheck>,
    /// `∫ Ξ³ = ∫ s₂`, nonnegative when `O_E(1)` is nef
    pub s2_integral: f64,
    pub oe1_invariance: Option<f64>,
    pub passed: bool,
}

/// All three Segre checks, plus the `O_E(1)` invariance test when `phi` is given.
pub fn segre_report(
    spec: &BundleSpec,
    h: &HermitianField,
    geom: &Geometry,
    fiber_res: usize,
    phi: Option<&Field>,
) -> Result<SegreReport> {
    let grid = build_fibered_grid(spec, h, geom, fiber_res)?;
    let volume_defect = self_test(&grid)?;
    let checks = (0..3).map(|k| segre_check(&grid, k)).collect::<Result<Vec<_>>>()?;
    let oe1_invariance = phi.map(|p| oe1_metric_change_invariance(&grid, p)).transpose()?;
    let passed = checks.iter().all(|c| c.passed) && oe1_invariance.is_none_or(|v| v < 1e-4);
    Ok(SegreReport {
        label: spec.label().to_string(),
        fiber_res,
        volume_defect,
        s2_integral: checks[2].pushforward,
        checks,
        oe1_invariance,
        passed,
    })
}
