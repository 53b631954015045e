//! Hermitian metrics on complex 2-tori sampled on periodic grids.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::elliptic::{gmres, GmresOptions};
use crate::field::{pairwise_sum, pairwise_sum_c, Field};
use crate::forms::FormField;
use crate::linalg::Mat;
use crate::spectral::Spectral;
use crate::{Error, Result, C64};

/// Builtin surfaces only. The data model would allow other dimensions but the
/// Chern-Weil and flow code is written for surfaces.
pub const COMPLEX_DIM: usize = 2;

/// A compact Hermitian surface `(C²/Λ, ω)` on a uniform grid.
#[derive(Clone, Debug)]
pub struct Geometry {
    spec: Arc<Spectral>,
    n: usize,
    /// `g_{jk̄}` at every grid point
    g: Vec<Mat>,
    ginv: Vec<Mat>,
    /// unitary coframe `P = (L⁻¹)ᵀ` with `g = L L†`
    coframe: Vec<Mat>,
    density: Vec<f64>,
    volume: f64,
    kappa: f64,
}

fn validate_grid(grid_shape: &[usize], periods: &[f64]) -> Result<()> {
    if grid_shape.len() != 2 * COMPLEX_DIM || periods.len() != grid_shape.len() {
        return Err(Error::InvalidGeometry(format!(
            "builtin geometries are complex surfaces: need 4 grid entries and 4 periods, got {} and {}",
            grid_shape.len(),
            periods.len()
        )));
    }
    for &m in grid_shape {
        if m < 8 || m % 2 != 0 {
            return Err(Error::InvalidGeometry(format!(
                "grid entries must be even and at least 8, got {m}"
            )));
        }
    }
    for &l in periods {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "degenerate lattice: period {l} must be positive and finite"
            )));
        }
    }
    Ok(())
}

impl Geometry {
    /// Builds a geometry from pointwise metric coefficients, rejecting any
    /// non-positive sample.
    pub fn from_metric(spec: Arc<Spectral>, g: Vec<Mat>) -> Result<Self> {
        let n = spec.ndim() / 2;
        if g.len() != spec.len() {
            return Err(Error::GridMismatch { expected: spec.len(), found: g.len() });
        }
        let mut ginv = Vec::with_capacity(g.len());
        let mut coframe = Vec::with_capacity(g.len());
        let mut density = Vec::with_capacity(g.len());
        let mut kappa: f64 = 0.0;
        for (idx, m) in g.iter().enumerate() {
            let h = m.hermitian_part();
            let e = h.eigh();
            if !(e.min() > 0.0) || h.sub(m).max_abs() > 1e-12 * (1.0 + m.max_abs()) {
                return Err(Error::NotPositive { worst: e.min(), index: idx });
            }
            let l = h.cholesky().ok_or(Error::NotPositive { worst: e.min(), index: idx })?;
            let linv = l.inverse().expect("positive definite");
            ginv.push(h.inverse().expect("positive definite"));
            coframe.push(linv.transpose());
            density.push(h.determinant().re);
            kappa = kappa.max(1.0 / e.min());
        }
        let cell: f64 = spec
            .shape()
            .iter()
            .zip(spec.periods())
            .map(|(&m, &l)| l / m as f64)
            .product();
        let volume = pairwise_sum(&density) * cell;
        debug_assert_eq!(n, COMPLEX_DIM);
        Ok(Geometry { spec, n, g, ginv, coframe, density, volume, kappa })
    }

    pub fn make_flat_torus(grid_shape: &[usize], periods: &[f64]) -> Result<Self> {
        validate_grid(grid_shape, periods)?;
        let spec = Arc::new(Spectral::new(grid_shape, periods));
        let g = vec![Mat::identity(COMPLEX_DIM); spec.len()];
        Self::from_metric(spec, g)
    }

    /// `ω = ω₀ + ∂γ + conj(∂γ)` with `γ = amplitude · s · dz̄₁` and
    /// `s = sin(2π x₂ / L₂)`, a function on the second complex plane.
    /// `∂∂̄ω = 0` identically while `dω ≠ 0` for nonzero amplitude.
    pub fn make_sheared_gauduchon_torus(
        grid_shape: &[usize],
        periods: &[f64],
        amplitude: f64,
    ) -> Result<Self> {
        validate_grid(grid_shape, periods)?;
        let spec = Arc::new(Spectral::new(grid_shape, periods));
        let n = COMPLEX_DIM;
        let l2 = periods[2];
        let s = spec.sample_re(|x| amplitude * (2.0 * PI * x[2] / l2).sin());
        let mut gamma = FormField::zero(n, spec.len());
        gamma.add_component(FormField::dzb(n, 0), &s);
        let dg = gamma.d_partial(&spec);
        let shear = dg.add(&dg.conj());
        let coeff: Vec<Vec<Field>> =
            (0..n).map(|j| (0..n).map(|k| shear.i_coeff(j, k)).collect()).collect();
        let g = (0..spec.len())
            .map(|idx| {
                Mat::from_fn(n, |j, k| {
                    let base = if j == k { 1.0 } else { 0.0 };
                    coeff[j][k][idx] + base
                })
            })
            .collect();
        Self::from_metric(spec, g)
    }

    /// `e^{φ} ω₀` for a smooth periodic `φ`.
    pub fn make_conformal_torus(
        grid_shape: &[usize],
        periods: &[f64],
        phi: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        validate_grid(grid_shape, periods)?;
        let spec = Arc::new(Spectral::new(grid_shape, periods));
        let g = (0..spec.len())
            .map(|idx| Mat::identity(COMPLEX_DIM).scale_re(phi(&spec.coords(idx)).exp()))
            .collect();
        Self::from_metric(spec, g)
    }

    /// The same surface with metric `f · ω`.
    pub fn conformal(&self, f: &Field) -> Result<Self> {
        let g = self.g.iter().zip(f.iter()).map(|(m, x)| m.scale_re(x.re)).collect();
        Self::from_metric(self.spec.clone(), g)
    }

    pub fn complex_dim(&self) -> usize {
        self.n
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    pub fn grid_shape(&self) -> &[usize] {
        self.spec.shape()
    }

    pub fn periods(&self) -> &[f64] {
        self.spec.periods()
    }

    #[inline]
    pub fn metric(&self, idx: usize) -> &Mat {
        &self.g[idx]
    }

    #[inline]
    pub fn metric_inverse(&self, idx: usize) -> &Mat {
        &self.ginv[idx]
    }

    #[inline]
    pub fn coframe(&self, idx: usize) -> &Mat {
        &self.coframe[idx]
    }

    pub fn volume_density(&self) -> &[f64] {
        &self.density
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Largest eigenvalue of `g⁻¹` over the grid: the stiffest direction of
    /// the metric Laplacian relative to the flat one.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec
            .shape()
            .iter()
            .zip(self.spec.periods())
            .map(|(&m, &l)| l / m as f64)
            .product()
    }

    /// Shortest lattice period.
    pub fn min_period(&self) -> f64 {
        self.periods().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec)
            || (self.grid_shape() == other.grid_shape() && self.periods() == other.periods())
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::GridMismatch { expected: self.len(), found: len });
        }
        Ok(())
    }

    /// `ω = i Σ g_{jk̄} dz_j ∧ dz̄_k`
    pub fn omega(&self) -> FormField {
        let n = self.n;
        let coeffs: Vec<Vec<Field>> = (0..n)
            .map(|j| (0..n).map(|k| Field(self.g.iter().map(|m| m.get(j, k)).collect())).collect())
            .collect();
        FormField::from_i_coeffs(n, &coeffs)
    }

    /// `Λ_ω` of a (1,1)-form: `Λ(i dz_j ∧ dz̄_k) = g^{k̄j}`.
    pub fn contract(&self, form: &FormField) -> Result<Field> {
        form.expect_bidegree(1, 1)?;
        self.check_len(form.grid_len())?;
        let n = self.n;
        let mut out = Field::zeros(self.len());
        for j in 0..n {
            for k in 0..n {
                let a = form.i_coeff(j, k);
                for (idx, o) in out.0.iter_mut().enumerate() {
                    *o += self.ginv[idx].get(k, j) * a[idx];
                }
            }
        }
        Ok(out)
    }

    /// `∫ f ω^n/n!`, real part.
    pub fn integrate(&self, density: &Field) -> Result<f64> {
        Ok(self.integrate_c(density)?.re)
    }

    pub fn integrate_c(&self, density: &Field) -> Result<C64> {
        self.check_len(density.len())?;
        let w: Vec<C64> = density.iter().zip(&self.density).map(|(f, d)| f * d).collect();
        Ok(pairwise_sum_c(&w) * self.cell_volume())
    }

    /// Integral of a top-degree form.
    pub fn integrate_top(&self, form: &FormField) -> Result<C64> {
        self.check_len(form.grid_len())?;
        let top = form.top();
        Ok(pairwise_sum_c(&top.0) * self.cell_volume())
    }

    /// Integral of a scalar against the flat coordinate measure.
    pub fn integrate_flat(&self, f: &Field) -> C64 {
        pairwise_sum_c(&f.0) * self.cell_volume()
    }

    pub fn d_bar(&self, f: &Field) -> Result<FormField> {
        self.check_len(f.len())?;
        Ok(FormField::scalar(self.n, f.clone()).d_bar(&self.spec))
    }

    pub fn d(&self, f: &Field) -> Result<FormField> {
        self.check_len(f.len())?;
        Ok(FormField::scalar(self.n, f.clone()).d(&self.spec))
    }

    /// `(sup|∂∂̄ω^{n-1}|, sup|∂∂̄ω^{n-2}|)`. On a surface `ω^0 = 1`, so the
    /// second entry vanishes identically.
    pub fn gauduchon_residual(&self) -> (f64, f64) {
        let ddbar = self.omega().d_bar(&self.spec).d_partial(&self.spec);
        (ddbar.top().max_abs(), 0.0)
    }

    /// `sup|dω|`, zero exactly when the metric is Kähler.
    pub fn kahler_residual(&self) -> f64 {
        self.omega().d(&self.spec).sup_norm()
    }

    /// Real operator `f ↦ top(i ∂∂̄(f ω))`, whose kernel consists of the
    /// Gauduchon conformal factors.
    fn gauduchon_operator(&self, omega: &FormField, f: &Field) -> Field {
        let fo = omega.mul_field(f);
        fo.d_bar(&self.spec).d_partial(&self.spec).top().scale(C64::new(0.0, 1.0))
    }

    /// Positive `f` with `∂∂̄(f ω) = 0`, normalized so that `f ω` has the
    /// volume of `ω`.
    pub fn gauduchon_factor(&self) -> Result<Field> {
        let omega = self.omega();
        let len = self.len();
        let one = Field::constant(len, C64::new(1.0, 0.0));
        let b = -&self.gauduchon_operator(&omega, &one);
        let (rho, _) = self.gauduchon_residual();
        if rho <= 1e-14 {
            return Ok(one);
        }

        // the principal part is c·Δ for a constant c fixed on the mean metric
        let probe = self.spec.sample_re(|x| (2.0 * PI * x[0] / self.periods()[0]).cos());
        let mp = self.gauduchon_operator(&omega, &probe);
        let lp = self.spec.multiply(&probe, |i| C64::new(self.spec.laplacian_symbol(i), 0.0));
        let c = crate::elliptic::dot(&lp, &mp).re / crate::elliptic::dot(&lp, &lp).re;
        let c = if c.abs() > 1e-12 { c } else { 0.5 };
        let spec = &self.spec;
        let precond = |r: &Field| spec.inverse_laplacian(r).scale_re(1.0 / c);
        let apply = |v: &Field| {
            let mut v = v.clone();
            let mean = v.mean();
            for x in v.0.iter_mut() {
                *x -= mean;
            }
            spec.drop_unresolved(&self.gauduchon_operator(&omega, &v))
        };
        let opts = GmresOptions { tol: 1e-13, restart: 60, max_iter: 600 };
        let sol = gmres(apply, precond, &spec.drop_unresolved(&b), None, opts, "gauduchon_correct")?;

        let mut v = sol.x;
        let mean = v.mean();
        let f: Vec<f64> = v.0.iter_mut().map(|x| 1.0 + (*x - mean).re).collect();
        let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::NonConvergence {
                what: "gauduchon_correct (conformal factor lost positivity)",
                iterations: sol.iterations,
                last: min,
                history: sol.history,
            });
        }
        // volume of f ω scales like f^n
        let fn_: Vec<f64> = f.iter().zip(&self.density).map(|(x, d)| x.powi(self.n as i32) * d).collect();
        let vol = pairwise_sum(&fn_) * self.cell_volume();
        let s = (self.volume / vol).powf(1.0 / self.n as f64);
        Ok(Field::from_real(f.into_iter().map(|x| x * s)))
    }

    /// Gauduchon metric in the conformal class of `ω`, same total volume.
    pub fn gauduchon_correct(&self) -> Result<Geometry> {
        let f = self.gauduchon_factor()?;
        self.conformal(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn flat_volume_is_product_of_periods() {
        let g = Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(close(g.volume(), 1.0, 1e-14));
        let g = Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!(close(g.volume(), 4.0, 1e-14));
        let one = Field::constant(g.len(), C64::new(1.0, 0.0));
        assert!(close(g.integrate(&one).unwrap(), 4.0, 1e-14));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            Geometry::make_flat_torus(&[16, 16, 15, 16], &[1.0; 4]),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(Geometry::make_flat_torus(&[8, 8], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn contraction_of_omega_and_of_a_coordinate_form() {
        let g = Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0; 4]).unwrap();
        let c = g.contract(&g.omega()).unwrap();
        assert!((&c - &Field::constant(g.len(), C64::new(2.0, 0.0))).max_abs() < 1e-14);
        let one = Field::constant(g.len(), C64::new(1.0, 0.0));
        let zero = Field::zeros(g.len());
        let f = FormField::from_i_coeffs(2, &[vec![one.clone(), zero.clone()], vec![zero.clone(), zero]]);
        assert!((&g.contract(&f).unwrap() - &one).max_abs() < 1e-14);
        let b01 = FormField::scalar(2, g.spectral().sample_re(|x| x[0].sin())).d_bar(g.spectral());
        assert!(matches!(g.contract(&b01), Err(Error::Bidegree(1, 1, 0, 1))));
    }

    #[test]
    fn sheared_metric_amplitude_zero_is_flat() {
        let a = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 0.0).unwrap();
        for idx in 0..a.len() {
            assert!(a.metric(idx).sub(&Mat::identity(2)).max_abs() < 1e-15);
        }
    }

    #[test]
    fn sheared_metric_is_gauduchon_but_not_kahler() {
        let g = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 0.1).unwrap();
        let (rho1, rho2) = g.gauduchon_residual();
        assert!(rho1 < 1e-10, "rho1 = {rho1}");
        assert_eq!(rho2, 0.0);
        assert!(g.kahler_residual() > 1e-2);
    }

    #[test]
    fn large_shear_is_rejected() {
        let r = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 10.0);
        match r {
            Err(Error::NotPositive { worst, .. }) => assert!(worst < 0.0),
            other => panic!("expected positivity error, got {other:?}"),
        }
    }

    #[test]
    fn conformal_distortion_is_not_gauduchon_and_gets_corrected() {
        let phi = |x: &[f64]| 0.2 * (2.0 * PI * x[0]).sin();
        // the first axis is refined so that e^{-φ} is resolved to round-off
        let g = Geometry::make_conformal_torus(&[16, 8, 8, 8], &[1.0; 4], phi).unwrap();
        let (rho_before, _) = g.gauduchon_residual();
        assert!(rho_before > 1e-3);
        let f = g.gauduchon_factor().unwrap();
        // f ω is then a constant multiple of the flat metric
        let ratio: Vec<f64> = (0..g.len())
            .map(|i| f[i].re * phi(&g.spectral().coords(i)).exp())
            .collect();
        let spread = ratio.iter().cloned().fold(f64::MIN, f64::max) - ratio.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-8, "spread {spread}");
        let h = g.gauduchon_correct().unwrap();
        assert!(h.gauduchon_residual().0 < 1e-8);
        assert!(h.gauduchon_residual().0 * 1e4 <= rho_before);
        assert!(close(h.volume(), g.volume(), 1e-12));
    }

    #[test]
    fn correction_of_gauduchon_input_is_identity() {
        let g = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 0.1).unwrap();
        let f = g.gauduchon_factor().unwrap();
        assert!(f.iter().all(|x| (x.re - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ddbar_exact_forms_integrate_to_zero() {
        let g = Geometry::make_sheared_gauduchon_torus(&[8, 8, 8, 8], &[1.0; 4], 0.15).unwrap();
        let a = g.spectral().sample_re(|x| (2.0 * PI * (x[0] + x[3])).sin() * (2.0 * PI * x[2]).cos());
        let dd = FormField::scalar(2, a).d_bar(g.spectral()).d_partial(g.spectral());
        let top = dd.wedge(&g.omega());
        assert!(g.integrate_top(&top).unwrap().norm() < 1e-9);
    }
}
