//! Chern and Segre forms, degrees, Chern numbers and the integral identities
//! built from them.

use std::f64::consts::PI;

use serde::Serialize;

use crate::bundle::BundleSpec;
use crate::endo::{EndoField, EndoForm11};
use crate::field::Field;
use crate::forms::{volume_sign, FormField};
use crate::geometry::Geometry;
use crate::hermitian::{
    curvature, curvature_norm_sq, endo_norm_sq, trace_normalize, CurvatureField, HermitianField,
};
use crate::linalg::Mat;
use crate::{Error, Result, C64};

/// Gauduchon residual above which degrees are no longer metric independent.
pub const GAUDUCHON_TOL: f64 = 1e-8;
/// Chern numbers below this count as vanishing.
pub const VANISHING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ChernReport {
    pub rank: usize,
    pub deg: f64,
    pub slope: f64,
    pub lambda: f64,
    /// `∫ ch₁ ∧ ω`
    pub ch1_omega: f64,
    /// `∫ ch₂`
    pub ch2: f64,
    /// `∫ c₁²`
    pub c1_sq: f64,
    /// `∫ c₂`
    pub c2: f64,
    /// `∫ c₁` against the normalized area form of each coordinate plane
    pub flux_pairings: [f64; 2],
    pub bogomolov: Bogomolov,
    pub gauduchon_residual: f64,
    /// both `ch₁·[ω]` and `ch₂` vanish
    pub numerically_flat_hypothesis: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Bogomolov {
    /// `4π²(2c₂ - (r-1)/r c₁²) = ∫ tr(F⊥ ∧ F⊥)`
    pub quantity: f64,
    /// `quantity / 4π²`
    pub normalized: f64,
    /// `∫|F⊥|²`
    pub f_perp_sq: f64,
    /// `∫|ΛF⊥|²`
    pub lambda_f_perp_sq: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyIdentity {
    /// `∫|F|²`
    pub lhs: f64,
    /// `∫|iΛF - λ Id|²`
    pub he_term: f64,
    /// `-8π² ∫ ch₂`
    pub ch2_term: f64,
    /// `λ² r Vol`
    pub lambda_term: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct HarmonicLine {
    pub metric: HermitianField,
    /// `∫|Θ|²`
    pub flatness_defect: f64,
    /// `-4π² ∫ c₁²`, equal to the defect once `iΛΘ = 0`
    pub c1_sq_term: f64,
}

/// Top coefficient of `A ∧ B` for raw (1,1) coefficients on a surface.
#[inline]
fn wedge11_top(a: &[Mat], b: &[Mat]) -> Mat {
    // dz1 dz̄1 ∧ dz2 dz̄2 = -dV,  dz1 dz̄2 ∧ dz2 dz̄1 = dV
    let t = a[0].mul(&b[3]).add(&a[3].mul(&b[0]));
    let u = a[1].mul(&b[2]).add(&a[2].mul(&b[1]));
    u.sub(&t)
}

fn top_form(n: usize, top: Field) -> FormField {
    let mut f = FormField::zero(n, top.len());
    f.add_component((1u32 << (2 * n)) - 1, &top.scale(volume_sign(n)));
    f
}

/// `c₀ = 1, c₁ = (i/2π) tr F, c₂ = (c₁² - tr(iF/2π)²)/2`, for `k ≤ min(r, 2)`.
pub fn chern_forms(f: &EndoForm11, r: usize, n: usize) -> Vec<FormField> {
    assert_eq!(n, 2, "Chern forms are implemented for surfaces");
    let len = f.len();
    let t = C64::new(0.0, 1.0 / (2.0 * PI));
    let mut c1 = FormField::zero(n, len);
    for j in 0..n {
        for k in 0..n {
            c1.add_component(FormField::dz(j) | FormField::dzb(n, k), &f.get(j, k).trace().scale(t));
        }
    }
    let mut out = vec![FormField::scalar(n, Field::constant(len, C64::new(1.0, 0.0))), c1.clone()];
    if r >= 2 {
        let p2 = Field(
            (0..len)
                .map(|idx| {
                    let m: Vec<Mat> = f.at(idx).iter().map(|x| x.scale(t)).collect();
                    wedge11_top(&m, &m).trace()
                })
                .collect(),
        );
        let c1sq = c1.wedge(&c1).top();
        out.push(top_form(n, (&c1sq - &p2).scale_re(0.5)));
    }
    out
}

/// `s₀ = 1`, `s_k = -Σ_{i=1..k} c_i s_{k-i}` up to `k = n`.
pub fn segre_forms(c: &[FormField], n: usize) -> Vec<FormField> {
    let len = c[0].grid_len();
    let nd = c[0].complex_dim();
    let zero = FormField::zero(nd, len);
    let get = |i: usize| c.get(i).cloned().unwrap_or_else(|| zero.clone());
    let mut s = vec![FormField::scalar(nd, Field::constant(len, C64::new(1.0, 0.0)))];
    for k in 1..=n {
        let mut sk = FormField::zero(nd, len);
        for i in 1..=k {
            sk = sk.sub(&get(i).wedge(&s[k - i]));
        }
        s.push(sk);
    }
    s
}

/// `ch₂ = (c₁² - 2c₂)/2`
pub fn ch2_form(c: &[FormField]) -> FormField {
    let c1sq = c[1].wedge(&c[1]);
    match c.get(2) {
        Some(c2) => c1sq.sub(&c2.scale(C64::new(2.0, 0.0))).scale(C64::new(0.5, 0.0)),
        None => c1sq.scale(C64::new(0.5, 0.0)),
    }
}

fn check_gauduchon(geom: &Geometry, strict: bool) -> Result<f64> {
    let (rho, _) = geom.gauduchon_residual();
    if rho > GAUDUCHON_TOL {
        if strict {
            return Err(Error::NotGauduchon { residual: rho, limit: GAUDUCHON_TOL });
        }
        log::warn!("Gauduchon residual {rho:.3e} exceeds {GAUDUCHON_TOL:.0e}; degrees depend on the metric");
    }
    Ok(rho)
}

fn degree_of(curv: &CurvatureField, geom: &Geometry) -> Result<f64> {
    Ok(geom.integrate(&curv.mean.trace())? / (2.0 * PI))
}

/// `deg_ω E = ∫ c₁(E, H) ∧ ω = (1/2π) ∫ tr(iΛF) ω²/2`
pub fn degree(spec: &BundleSpec, h: &HermitianField, geom: &Geometry) -> Result<f64> {
    degree_strict(spec, h, geom, false)
}

pub fn degree_strict(spec: &BundleSpec, h: &HermitianField, geom: &Geometry, strict: bool) -> Result<f64> {
    check_gauduchon(geom, strict)?;
    degree_of(&curvature(h, spec, geom)?, geom)
}

pub fn slope(spec: &BundleSpec, h: &HermitianField, geom: &Geometry) -> Result<f64> {
    Ok(degree(spec, h, geom)? / spec.rank() as f64)
}

/// `λ = 2π μ / Vol`, evaluated with the background metric.
pub fn lambda_of(spec: &BundleSpec, geom: &Geometry) -> Result<f64> {
    let mu = slope(spec, &HermitianField::identity(spec, geom), geom)?;
    Ok(2.0 * PI * mu / geom.volume())
}

fn bogomolov_of(curv: &CurvatureField, h: &HermitianField, geom: &Geometry) -> Result<Bogomolov> {
    let r = h.rank();
    let n = geom.complex_dim();
    let fp = curv.f.map(|c| {
        let tr = c.trace().scale_re(1.0 / r as f64);
        c.sub(&EndoField::from_scalar(&tr, &Mat::identity(r)))
    });
    let mean_p = {
        let tr = curv.mean.trace().scale_re(1.0 / r as f64);
        curv.mean.sub(&EndoField::from_scalar(&tr, &Mat::identity(r)))
    };
    let f_perp_sq = geom.integrate(&Field::from_real(curvature_norm_sq(&fp, h.endo(), geom)))?;
    let lambda_f_perp_sq = geom.integrate(&Field::from_real(endo_norm_sq(&mean_p, h.endo())))?;
    let top = Field((0..geom.len()).map(|idx| wedge11_top(&fp.at(idx), &fp.at(idx)).trace()).collect());
    let quantity = geom.integrate_flat(&top).re;
    debug_assert_eq!(n, 2);
    Ok(Bogomolov { quantity, normalized: quantity / (4.0 * PI * PI), f_perp_sq, lambda_f_perp_sq })
}

pub fn bogomolov_quantity(spec: &BundleSpec, h: &HermitianField, geom: &Geometry) -> Result<Bogomolov> {
    bogomolov_of(&curvature(h, spec, geom)?, h, geom)
}

/// Pairing of `c₁` with the normalized area form of each coordinate plane,
/// an integer for every metric.
fn flux_pairings(c1: &FormField, geom: &Geometry) -> [f64; 2] {
    let p = geom.periods();
    let a = [p[0] * p[1], p[2] * p[3]];
    // c₁ ∧ i dz₂dz̄₂ = c₁₁ dV, c₁ ∧ i dz₁dz̄₁ = c₂₂ dV
    [
        geom.integrate_flat(&c1.i_coeff(0, 0)).re / a[1],
        geom.integrate_flat(&c1.i_coeff(1, 1)).re / a[0],
    ]
}

pub fn chern_numbers(spec: &BundleSpec, h: &HermitianField, geom: &Geometry) -> Result<ChernReport> {
    chern_numbers_strict(spec, h, geom, false)
}

pub fn chern_numbers_strict(
    spec: &BundleSpec,
    h: &HermitianField,
    geom: &Geometry,
    strict: bool,
) -> Result<ChernReport> {
    let rho = check_gauduchon(geom, strict)?;
    let curv = curvature(h, spec, geom)?;
    let r = spec.rank();
    let c = chern_forms(&curv.f, r, geom.complex_dim());
    let deg = degree_of(&curv, geom)?;
    let ch1_omega = geom.integrate_top(&c[1].wedge(&geom.omega()))?.re;
    let ch2 = geom.integrate_top(&ch2_form(&c))?.re;
    let c1_sq = geom.integrate_top(&c[1].wedge(&c[1]))?.re;
    let c2 = match c.get(2) {
        Some(c2) => geom.integrate_top(c2)?.re,
        None => 0.0,
    };
    let slope = deg / r as f64;
    Ok(ChernReport {
        rank: r,
        deg,
        slope,
        lambda: 2.0 * PI * slope / geom.volume(),
        ch1_omega,
        ch2,
        c1_sq,
        c2,
        flux_pairings: flux_pairings(&c[1], geom),
        bogomolov: bogomolov_of(&curv, h, geom)?,
        gauduchon_residual: rho,
        numerically_flat_hypothesis: ch1_omega.abs() < VANISHING_TOL && ch2.abs() < VANISHING_TOL,
    })
}

/// Largest change of the four Chern numbers between two metrics.
pub fn transgression_check(
    spec: &BundleSpec,
    h1: &HermitianField,
    h2: &HermitianField,
    geom: &Geometry,
) -> Result<f64> {
    let a = chern_numbers(spec, h1, geom)?;
    let b = chern_numbers(spec, h2, geom)?;
    Ok([
        (a.ch1_omega - b.ch1_omega).abs(),
        (a.ch2 - b.ch2).abs(),
        (a.c1_sq - b.c1_sq).abs(),
        (a.c2 - b.c2).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// `∫|F|² = ∫|iΛF - λId|² - 8π² ∫ch₂ + λ² r Vol`
pub fn energy_identity(
    spec: &BundleSpec,
    h: &HermitianField,
    geom: &Geometry,
    lambda: f64,
) -> Result<EnergyIdentity> {
    let curv = curvature(h, spec, geom)?;
    let r = spec.rank();
    let lhs = geom.integrate(&Field::from_real(curvature_norm_sq(&curv.f, h.endo(), geom)))?;
    let shifted = curv.mean.sub(&EndoField::identity(r, geom.len()).scale_re(lambda));
    let he_term = geom.integrate(&Field::from_real(endo_norm_sq(&shifted, h.endo())))?;
    let c = chern_forms(&curv.f, r, geom.complex_dim());
    let ch2_term = -8.0 * PI * PI * geom.integrate_top(&ch2_form(&c))?.re;
    let lambda_term = lambda * lambda * r as f64 * geom.volume();
    let residual = (lhs - he_term - ch2_term - lambda_term).abs();
    Ok(EnergyIdentity { lhs, he_term, ch2_term, lambda_term, residual })
}

/// Metric on a degree-zero line bundle with `iΛΘ = 0`, starting from `h0`.
pub fn harmonic_line_metric(line: &BundleSpec, h0: &HermitianField, geom: &Geometry) -> Result<HarmonicLine> {
    if line.rank() != 1 {
        return Err(Error::Precondition(format!("harmonic_line_metric needs a line bundle, got rank {}", line.rank())));
    }
    let deg = degree(line, h0, geom)?;
    if deg.abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "harmonic_line_metric needs degree 0, got {deg:.6}"
        )));
    }
    let metric = trace_normalize(h0, 0.0, line, geom)?;
    let curv = curvature(&metric, line, geom)?;
    let flatness_defect = geom.integrate(&Field::from_real(curvature_norm_sq(&curv.f, metric.endo(), geom)))?;
    let c = chern_forms(&curv.f, 1, geom.complex_dim());
    let c1_sq_term = -4.0 * PI * PI * geom.integrate_top(&c[1].wedge(&c[1]))?.re;
    Ok(HarmonicLine { metric, flatness_defect, c1_sq_term })
}

/// `min_x λ_min(iΘ(h) + εω)` measured against `ω`.
pub fn nef_residual(line: &BundleSpec, h: &HermitianField, eps: f64, geom: &Geometry) -> Result<f64> {
    if line.rank() != 1 {
        return Err(Error::Precondition(format!("nef_residual needs a line bundle, got rank {}", line.rank())));
    }
    let curv = curvature(h, line, geom)?;
    let n = geom.complex_dim();
    let mut worst = f64::INFINITY;
    for idx in 0..geom.len() {
        let f = curv.f.at(idx);
        // iΘ = i Σ Θ_{jk̄} dz_j ∧ dz̄_k, so its Hermitian coefficient matrix is Θ_{jk̄}
        let theta = Mat::from_fn(n, |j, k| f[j * n + k].get(0, 0));
        let p = geom.coframe(idx);
        let t = p.transpose().mul(&theta).mul(&p.transpose().adjoint());
        worst = worst.min(t.eigh().min());
    }
    Ok(worst + eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ExtensionClass;

    fn flat() -> Geometry {
        Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0; 4]).unwrap()
    }

    #[test]
    fn zero_curvature_gives_trivial_forms() {
        let g = flat();
        let f = EndoForm11::zeros(2, 2, g.len());
        let c = chern_forms(&f, 2, 2);
        assert_eq!(c.len(), 3);
        assert_eq!(c[1].sup_norm(), 0.0);
        assert_eq!(c[2].sup_norm(), 0.0);
        let s = segre_forms(&c, 2);
        assert!(s[0].component(0).unwrap().iter().all(|x| *x == C64::new(1.0, 0.0)));
        assert_eq!(s[1].sup_norm(), 0.0);
        assert_eq!(s[2].sup_norm(), 0.0);
    }

    #[test]
    fn pointwise_c2_matches_determinant_expansion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut rnd = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mats: Vec<Mat> = (0..4).map(|_| Mat::from_fn(2, |_, _| rnd())).collect();
        let mut f = EndoForm11::zeros(2, 2, 1);
        for q in 0..4 {
            f.comps[q] = EndoField::from_mats(&[mats[q]]);
        }
        let c = chern_forms(&f, 2, 2);
        // det(I + tX) with X = iF/2π as a matrix of 2-forms: the t² coefficient
        // is X₁₁ ∧ X₂₂ - X₁₂ ∧ X₂₁ in the fiber indices
        let t = C64::new(0.0, 1.0 / (2.0 * PI));
        let x: Vec<Mat> = mats.iter().map(|m| m.scale(t)).collect();
        let entry = |p: usize, q: usize| -> Vec<Mat> { x.iter().map(|m| Mat::from_fn(1, |_, _| m.get(p, q))).collect() };
        let direct = wedge11_top(&entry(0, 0), &entry(1, 1)).get(0, 0) - wedge11_top(&entry(0, 1), &entry(1, 0)).get(0, 0);
        let ours = c[2].top()[0];
        assert!((ours - direct).norm() < 1e-15);
    }

    #[test]
    fn segre_recurrence_closed_forms() {
        let g = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 0.1).unwrap();
        let e = BundleSpec::extension_bundle(&ExtensionClass::constant(&g, [C64::new(0.5, 0.0), C64::new(0.1, 0.2)]));
        let h = HermitianField::random_smooth(&e, &g, 5, 0.5);
        let curv = curvature(&h, &e, &g).unwrap();
        let c = chern_forms(&curv.f, 2, 2);
        let s = segre_forms(&c, 2);
        assert!(s[1].add(&c[1]).sup_norm() < 1e-15);
        let closed = c[1].wedge(&c[1]).sub(&c[2]);
        assert!(s[2].sub(&closed).sup_norm() < 1e-14);
    }

    #[test]
    fn flux_line_numbers() {
        let g = flat();
        for k in [[1, 0], [0, 1], [2, -1], [1, 1]] {
            let l = BundleSpec::flux_line(k);
            let rep = chern_numbers(&l, &HermitianField::identity(&l, &g), &g).unwrap();
            assert!((rep.flux_pairings[0] - k[0] as f64).abs() < 1e-12);
            assert!((rep.flux_pairings[1] - k[1] as f64).abs() < 1e-12);
            assert!((rep.deg - (k[0] + k[1]) as f64).abs() < 1e-12);
            assert!((rep.c1_sq - 2.0 * (k[0] * k[1]) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_and_extension_degrees_vanish() {
        let g = flat();
        let l = BundleSpec::flat_line([0.4, 0.0, -1.0, 2.0]);
        assert!(degree(&l, &HermitianField::identity(&l, &g), &g).unwrap().abs() < 1e-10);
        let e = BundleSpec::extension_bundle(&ExtensionClass::constant(&g, [C64::new(0.5, 0.0), C64::new(0.0, 0.0)]));
        let h = HermitianField::random_smooth(&e, &g, 1, 0.2);
        assert!(degree(&e, &h, &g).unwrap().abs() < 1e-8);
    }

    #[test]
    fn energy_identity_extension_closed_form() {
        let g = flat();
        let b: f64 = 0.5;
        let e = BundleSpec::extension_bundle(&ExtensionClass::constant(&g, [C64::new(b, 0.0), C64::new(0.0, 0.0)]));
        let rep = energy_identity(&e, &HermitianField::identity(&e, &g), &g, 0.0).unwrap();
        let expect = 2.0 * b.powi(4) * g.volume();
        assert!((rep.lhs - expect).abs() < 1e-12);
        assert!((rep.he_term - expect).abs() < 1e-12);
        assert!(rep.residual < 1e-12);
    }

    #[test]
    fn energy_identity_flux_line_has_lambda_term() {
        let g = flat();
        let l = BundleSpec::flux_line([1, 1]);
        let lambda = lambda_of(&l, &g).unwrap();
        assert!((lambda - 4.0 * PI).abs() < 1e-12);
        let rep = energy_identity(&l, &HermitianField::identity(&l, &g), &g, lambda).unwrap();
        assert!(rep.lambda_term > 1.0);
        assert!(rep.residual < 1e-9);
    }

    #[test]
    fn bogomolov_negative_control() {
        let g = flat();
        let s = BundleSpec::flux_line([1, 1]).direct_sum(&BundleSpec::flux_line([-1, -1])).unwrap();
        let b = bogomolov_quantity(&s, &HermitianField::identity(&s, &g), &g).unwrap();
        assert!((b.quantity + 16.0 * PI * PI).abs() < 1e-9);
        assert!((b.quantity - (b.f_perp_sq - b.lambda_f_perp_sq)).abs() < 1e-9);
    }

    #[test]
    fn nef_residual_signs() {
        let g = flat();
        let l = BundleSpec::flat_line([0.0; 4]);
        let r = nef_residual(&l, &HermitianField::identity(&l, &g), 0.01, &g).unwrap();
        assert!((r - 0.01).abs() < 1e-15);
        let neg = BundleSpec::flux_line([-1, -1]);
        assert!(nef_residual(&neg, &HermitianField::identity(&neg, &g), 0.01, &g).unwrap() < 0.0);
        let pos = BundleSpec::flux_line([1, 1]);
        assert!(nef_residual(&pos, &HermitianField::identity(&pos, &g), 0.0, &g).unwrap() >= 0.0);
    }
}
