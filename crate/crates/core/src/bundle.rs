//! Holomorphic bundles on the torus as sums of twisted line bundles with an
//! endomorphism-valued Dolbeault perturbation.
//!
//! Every summand carries integer flux per complex coordinate plane and a
//! holonomy angle per lattice generator. The background connection of a
//! summand is a constant-curvature Landau-gauge connection plus a constant
//! flat part realizing the holonomy. Sections of a flux line are
//! quasi-periodic, but endomorphisms between summands with equal flux are
//! periodic, so perturbations and metrics are restricted to be block diagonal
//! over flux classes and are sampled directly on the grid.

use std::f64::consts::{PI, SQRT_2};

use crate::endo::{EndoField, EndoForm01};
use crate::field::Field;
use crate::geometry::Geometry;
use crate::linalg::{Mat, MAX_RANK};
use crate::spectral::D;
use crate::{Error, Result, C64};

/// One line bundle summand of the smooth splitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summand {
    /// first Chern class: flux through the `z_1`- and `z_2`-planes
    pub flux: [i64; 2],
    /// holonomy angle along each real lattice generator
    pub holonomy: [f64; 4],
}

impl Summand {
    pub const TRIVIAL: Summand = Summand { flux: [0, 0], holonomy: [0.0; 4] };

    fn dual(&self) -> Summand {
        Summand {
            flux: [-self.flux[0], -self.flux[1]],
            holonomy: self.holonomy.map(|t| -t),
        }
    }

    fn tensor(&self, other: &Summand) -> Summand {
        let mut holonomy = [0.0; 4];
        for (m, h) in holonomy.iter_mut().enumerate() {
            *h = self.holonomy[m] + other.holonomy[m];
        }
        Summand { flux: [self.flux[0] + other.flux[0], self.flux[1] + other.flux[1]], holonomy }
    }

    /// Constant flat connection coefficients `(A'_j, A''_j̄)`.
    pub fn holonomy_connection(&self, periods: &[f64]) -> ([C64; 2], [C64; 2]) {
        let mut a10 = [C64::new(0.0, 0.0); 2];
        let mut a01 = [C64::new(0.0, 0.0); 2];
        for j in 0..2 {
            let ta = self.holonomy[2 * j] / periods[2 * j];
            let tb = self.holonomy[2 * j + 1] / periods[2 * j + 1];
            a01[j] = C64::new(tb, -ta) / SQRT_2;
            a10[j] = -a01[j].conj();
        }
        (a10, a01)
    }

    /// Background curvature `F₀_{jj̄}`, constant and diagonal.
    pub fn flux_curvature(&self, periods: &[f64]) -> [f64; 2] {
        [0, 1].map(|j| 2.0 * PI * self.flux[j] as f64 / (periods[2 * j] * periods[2 * j + 1]))
    }

    /// Transition function for translation by the `m`-th lattice generator,
    /// `s(x + L_m e_m) = e_m(x) s(x)`.
    pub fn automorphy_factor(&self, m: usize, x: &[f64], periods: &[f64]) -> C64 {
        let j = m / 2;
        let mut phase = self.holonomy[m];
        if m.is_multiple_of(2) {
            phase += 2.0 * PI * self.flux[j] as f64 * x[m + 1] / periods[m + 1];
        }
        C64::from_polar(1.0, phase)
    }
}

/// A holomorphic bundle `(E, ∂̄_E)` with `∂̄_E = ∂̄_{A₀} + a`.
#[derive(Clone, Debug)]
pub struct BundleSpec {
    summands: Vec<Summand>,
    a: Option<EndoForm01>,
    grid: Option<(Vec<usize>, Vec<f64>)>,
    label: String,
}

/// A `∂̄`-closed scalar (0,1)-form `β`, the class of an extension of `O` by `O`.
#[derive(Clone, Debug)]
pub struct ExtensionClass {
    beta: Vec<Field>,
    constant: Option<[C64; 2]>,
    grid: (Vec<usize>, Vec<f64>),
}

fn grid_of(geom: &Geometry) -> (Vec<usize>, Vec<f64>) {
    (geom.grid_shape().to_vec(), geom.periods().to_vec())
}

impl ExtensionClass {
    /// `β = Σ b_k dz̄_k + ∂̄ψ`, closed by construction.
    pub fn new(geom: &Geometry, b: [C64; 2], psi: Option<&Field>) -> Result<Self> {
        let len = geom.len();
        let mut beta: Vec<Field> = b.iter().map(|&c| Field::constant(len, c)).collect();
        if let Some(psi) = psi {
            geom.check_len(psi.len())?;
            for (k, bk) in beta.iter_mut().enumerate() {
                *bk += &geom.spectral().diff(psi, &[D::Zb(k)]);
            }
        }
        let constant = if psi.is_none() { Some(b) } else { None };
        Ok(ExtensionClass { beta, constant, grid: grid_of(geom) })
    }

    pub fn constant(geom: &Geometry, b: [C64; 2]) -> Self {
        Self::new(geom, b, None).expect("constant classes are closed")
    }

    pub fn exact(geom: &Geometry, psi: &Field) -> Result<Self> {
        Self::new(geom, [C64::new(0.0, 0.0); 2], Some(psi))
    }

    /// Arbitrary coefficients, rejected unless `∂̄β = 0` within `1e-10`.
    pub fn from_components(geom: &Geometry, beta: [Field; 2]) -> Result<Self> {
        geom.check_len(beta[0].len())?;
        geom.check_len(beta[1].len())?;
        let class = ExtensionClass { beta: beta.to_vec(), constant: None, grid: grid_of(geom) };
        let residual = class.closedness_residual(geom);
        if residual > 1e-10 {
            return Err(Error::Integrability { residual });
        }
        Ok(class)
    }

    /// `sup|∂̄β|`
    pub fn closedness_residual(&self, geom: &Geometry) -> f64 {
        let s = geom.spectral();
        let d = &s.diff(&self.beta[1], &[D::Zb(0)]) - &s.diff(&self.beta[0], &[D::Zb(1)]);
        d.max_abs()
    }

    /// Constant coefficients are harmonic for the flat metric.
    pub fn is_harmonic(&self) -> bool {
        self.constant.is_some()
    }

    pub fn components(&self) -> &[Field] {
        &self.beta
    }
}

impl BundleSpec {
    fn from_summands(summands: Vec<Summand>, label: String) -> Self {
        assert!(!summands.is_empty() && summands.len() <= MAX_RANK, "rank out of range");
        BundleSpec { summands, a: None, grid: None, label }
    }

    pub fn trivial_bundle(r: usize) -> Self {
        Self::from_summands(vec![Summand::TRIVIAL; r], format!("trivial({r})"))
    }

    pub fn flat_line(holonomy: [f64; 4]) -> Self {
        Self::from_summands(
            vec![Summand { flux: [0, 0], holonomy }],
            format!("flat_line({:?})", holonomy),
        )
    }

    pub fn flux_line(k: [i64; 2]) -> Self {
        Self::from_summands(vec![Summand { flux: k, holonomy: [0.0; 4] }], format!("flux_line({:?})", k))
    }

    /// Rank-2 extension `0 → O → E → O → 0` with `a = N β`, `N = E₁₂`.
    pub fn extension_bundle(class: &ExtensionClass) -> Self {
        let len = class.beta[0].len();
        let n_mat = Mat::from_fn(2, |i, j| if i == 0 && j == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let comps = class.beta.iter().map(|b| EndoField::from_scalar(b, &n_mat)).collect();
        debug_assert_eq!(len, class.beta[1].len());
        BundleSpec {
            summands: vec![Summand::TRIVIAL; 2],
            a: Some(EndoForm01 { comps }),
            grid: Some(class.grid.clone()),
            label: "extension".into(),
        }
    }

    /// Arbitrary perturbation without any integrability check.
    pub fn with_perturbation_unchecked(summands: Vec<Summand>, a: EndoForm01, geom: &Geometry) -> Self {
        let mut b = Self::from_summands(summands, "custom".into());
        b.a = Some(a);
        b.grid = Some(grid_of(geom));
        b
    }

    pub fn rank(&self) -> usize {
        self.summands.len()
    }

    pub fn summands(&self) -> &[Summand] {
        &self.summands
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn perturbation(&self) -> Option<&EndoForm01> {
        self.a.as_ref()
    }

    pub fn flux(&self) -> [i64; 2] {
        self.summands.iter().fold([0, 0], |acc, s| [acc[0] + s.flux[0], acc[1] + s.flux[1]])
    }

    /// Endomorphisms `p ← q` are periodic fields iff the summands share flux.
    #[inline]
    pub fn same_class(&self, p: usize, q: usize) -> bool {
        self.summands[p].flux == self.summands[q].flux
    }

    /// Summand indices grouped by flux class, in order of first appearance.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for p in 0..self.rank() {
            match out.iter_mut().find(|c| self.same_class(c[0], p)) {
                Some(c) => c.push(p),
                None => out.push(vec![p]),
            }
        }
        out
    }

    /// Zeroes every entry linking different flux classes.
    pub fn project_blocks(&self, m: &Mat) -> Mat {
        Mat::from_fn(m.dim(), |p, q| if self.same_class(p, q) { m.get(p, q) } else { C64::new(0.0, 0.0) })
    }

    /// Checks grid compatibility and the resolution guard `|k_j| ≤ N/4`.
    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        if let Some((shape, periods)) = &self.grid {
            if shape.as_slice() != geom.grid_shape() || periods.as_slice() != geom.periods() {
                return Err(Error::Incompatible(format!(
                    "bundle '{}' was built on grid {:?} with periods {:?}, geometry has {:?} / {:?}",
                    self.label,
                    shape,
                    periods,
                    geom.grid_shape(),
                    geom.periods()
                )));
            }
        }
        let shape = geom.grid_shape();
        for s in &self.summands {
            for j in 0..2 {
                let limit = (shape[2 * j].min(shape[2 * j + 1]) / 4) as i64;
                if s.flux[j].abs() > limit {
                    return Err(Error::Nyquist { flux: s.flux[j], limit });
                }
            }
        }
        Ok(())
    }

    /// The perturbation `a`, materialized as zero fields when absent.
    pub fn perturbation_or_zero(&self, geom: &Geometry) -> EndoForm01 {
        match &self.a {
            Some(a) => a.clone(),
            None => EndoForm01::zeros(geom.complex_dim(), self.rank(), geom.len()),
        }
    }

    /// `F₀_{jj̄}` of every summand.
    pub fn background_curvature(&self, geom: &Geometry) -> Vec<[f64; 2]> {
        self.summands.iter().map(|s| s.flux_curvature(geom.periods())).collect()
    }

    /// Covariant derivative of an endomorphism field along `d` for the
    /// background connection: `∂X + (A₀^p - A₀^q) X` entrywise. Flux terms
    /// cancel within a class, so only holonomy differences enter.
    pub fn nabla0(&self, x: &EndoField, d: D, geom: &Geometry) -> EndoField {
        self.nabla0_many(x, &[&[d]], geom).pop().expect("one chain")
    }

    /// Several chains of background covariant derivatives of `x` from one
    /// forward transform per entry. Within an entry `∇⁰` is `∂ + c` with a
    /// constant `c`, so a chain is the Fourier multiplier `Π(σ_d + c_d)`.
    /// Spatially constant entries skip the transforms, since every
    /// derivative symbol vanishes on the zero mode.
    pub fn nabla0_many(&self, x: &EndoField, chains: &[&[D]], geom: &Geometry) -> Vec<EndoField> {
        let spec = geom.spectral();
        let conn: Vec<_> = self.summands.iter().map(|s| s.holonomy_connection(geom.periods())).collect();
        let r = self.rank();
        let shift = |p: usize, q: usize, d: D| match d {
            D::Z(j) => conn[p].0[j] - conn[q].0[j],
            D::Zb(j) => conn[p].1[j] - conn[q].1[j],
            D::X(_) => panic!("background derivative along a real direction"),
        };
        let mut out: Vec<EndoField> = chains.iter().map(|_| EndoField::zeros(r, x.len())).collect();
        for p in 0..r {
            for q in 0..r {
                let f = x.comp(p, q);
                let v0 = f[0];
                if f.iter().all(|v| *v == v0) {
                    if v0 == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for (o, ch) in out.iter_mut().zip(chains) {
                        let c: C64 = ch.iter().map(|&d| shift(p, q, d)).product();
                        if c != C64::new(0.0, 0.0) {
                            *o.comp_mut(p, q) = Field::constant(x.len(), c * v0);
                        }
                    }
                    continue;
                }
                let s = spec.forward(f);
                for (o, ch) in out.iter_mut().zip(chains) {
                    let cs: Vec<C64> = ch.iter().map(|&d| shift(p, q, d)).collect();
                    let mut t = s.clone();
                    for (idx, v) in t.0.iter_mut().enumerate() {
                        let m: C64 = ch.iter().zip(&cs).map(|(&d, c)| spec.symbol(d, idx) + c).product();
                        *v *= m;
                    }
                    *o.comp_mut(p, q) = spec.inverse(t);
                }
            }
        }
        out
    }

    /// `sup|∂̄a + a∧a|`: the (0,2) coefficient `∇⁰_1̄ a_2̄ - ∇⁰_2̄ a_1̄ + [a_1̄, a_2̄]`.
    pub fn integrability_residual(&self, geom: &Geometry) -> f64 {
        let Some(a) = &self.a else { return 0.0 };
        let d1 = self.nabla0(&a.comps[1], D::Zb(0), geom);
        let d2 = self.nabla0(&a.comps[0], D::Zb(1), geom);
        d1.sub(&d2).add(&a.comps[0].commutator(&a.comps[1])).max_abs()
    }

    /// Cocycle defect of the automorphy factors over every grid point and
    /// every pair of generators.
    pub fn cocycle_residual(&self, geom: &Geometry) -> f64 {
        let periods = geom.periods();
        let mut worst: f64 = 0.0;
        for s in &self.summands {
            for idx in 0..geom.len() {
                let x = geom.spectral().coords(idx);
                for m in 0..4 {
                    for p in 0..4 {
                        let mut xp = x.clone();
                        xp[p] += periods[p];
                        let mut xm = x.clone();
                        xm[m] += periods[m];
                        let lhs = s.automorphy_factor(m, &xp, periods) * s.automorphy_factor(p, &x, periods);
                        let rhs = s.automorphy_factor(p, &xm, periods) * s.automorphy_factor(m, &x, periods);
                        worst = worst.max((lhs - rhs).norm());
                    }
                }
            }
        }
        worst
    }

    fn check_compatible(&self, other: &BundleSpec) -> Result<Option<(Vec<usize>, Vec<f64>)>> {
        match (&self.grid, &other.grid) {
            (Some(a), Some(b)) if a != b => Err(Error::Incompatible(format!(
                "'{}' and '{}' live on different grids",
                self.label, other.label
            ))),
            (Some(a), _) => Ok(Some(a.clone())),
            (None, b) => Ok(b.clone()),
        }
    }

    pub fn dual(&self) -> BundleSpec {
        BundleSpec {
            summands: self.summands.iter().map(Summand::dual).collect(),
            a: self.a.as_ref().map(|a| a.map(|c| c.transpose().scale_re(-1.0))),
            grid: self.grid.clone(),
            label: format!("dual({})", self.label),
        }
    }

    pub fn direct_sum(&self, other: &BundleSpec) -> Result<BundleSpec> {
        let grid = self.check_compatible(other)?;
        let (r1, r2) = (self.rank(), other.rank());
        if r1 + r2 > MAX_RANK {
            return Err(Error::Incompatible(format!("rank {} exceeds {MAX_RANK}", r1 + r2)));
        }
        let summands = self.summands.iter().chain(&other.summands).cloned().collect();
        let a = if self.a.is_none() && other.a.is_none() {
            None
        } else {
            let len = self.a.as_ref().or(other.a.as_ref()).map(|a| a.len()).unwrap();
            let a1 = self.a.clone().unwrap_or_else(|| EndoForm01::zeros(2, r1, len));
            let a2 = other.a.clone().unwrap_or_else(|| EndoForm01::zeros(2, r2, len));
            let comps = a1
                .comps
                .iter()
                .zip(&a2.comps)
                .map(|(x, y)| {
                    EndoField::from_fn(r1 + r2, len, |idx| {
                        let (mx, my) = (x.at(idx), y.at(idx));
                        Mat::from_fn(r1 + r2, |p, q| {
                            if p < r1 && q < r1 {
                                mx.get(p, q)
                            } else if p >= r1 && q >= r1 {
                                my.get(p - r1, q - r1)
                            } else {
                                C64::new(0.0, 0.0)
                            }
                        })
                    })
                })
                .collect();
            Some(EndoForm01 { comps })
        };
        Ok(BundleSpec { summands, a, grid, label: format!("{}+{}", self.label, other.label) })
    }

    pub fn tensor(&self, other: &BundleSpec) -> Result<BundleSpec> {
        let grid = self.check_compatible(other)?;
        let (r1, r2) = (self.rank(), other.rank());
        if r1 * r2 > MAX_RANK {
            return Err(Error::Incompatible(format!("rank {} exceeds {MAX_RANK}", r1 * r2)));
        }
        let summands = self
            .summands
            .iter()
            .flat_map(|s| other.summands.iter().map(move |t| s.tensor(t)))
            .collect();
        let a = if self.a.is_none() && other.a.is_none() {
            None
        } else {
            let len = self.a.as_ref().or(other.a.as_ref()).map(|a| a.len()).unwrap();
            let a1 = self.a.clone().unwrap_or_else(|| EndoForm01::zeros(2, r1, len));
            let a2 = other.a.clone().unwrap_or_else(|| EndoForm01::zeros(2, r2, len));
            let (i1, i2) = (Mat::identity(r1), Mat::identity(r2));
            let comps = a1
                .comps
                .iter()
                .zip(&a2.comps)
                .map(|(x, y)| {
                    EndoField::from_fn(r1 * r2, len, |idx| x.at(idx).kron(&i2).add(&i1.kron(&y.at(idx))))
                })
                .collect();
            Some(EndoForm01 { comps })
        };
        Ok(BundleSpec { summands, a, grid, label: format!("{}*{}", self.label, other.label) })
    }

    /// `det E`, whose perturbation is `tr a`.
    pub fn det(&self) -> BundleSpec {
        let s = self.summands.iter().skip(1).fold(self.summands[0], |acc, t| acc.tensor(t));
        let a = self.a.as_ref().map(|a| {
            a.map(|c| EndoField::from_scalar(&c.trace(), &Mat::identity(1)))
        });
        BundleSpec { summands: vec![s], a, grid: self.grid.clone(), label: format!("det({})", self.label) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::make_flat_torus(&[8, 8, 8, 8], &[1.0; 4]).unwrap()
    }

    #[test]
    fn flat_line_with_zero_holonomy_is_trivial() {
        let l = BundleSpec::flat_line([0.0; 4]);
        assert_eq!(l.summands(), BundleSpec::trivial_bundle(1).summands());
        assert!(l.perturbation().is_none());
    }

    #[test]
    fn dual_negates_holonomy_and_flux() {
        let l = BundleSpec::flat_line([0.1, 0.2, -0.3, 0.4]).dual();
        assert_eq!(l.summands()[0].holonomy, [-0.1, -0.2, 0.3, -0.4]);
        assert_eq!(BundleSpec::flux_line([1, -2]).dual().flux(), [-1, 2]);
    }

    #[test]
    fn det_of_line_is_itself_and_fluxes_add() {
        let l = BundleSpec::flux_line([2, 1]);
        assert_eq!(l.det().summands(), l.summands());
        let s = BundleSpec::flux_line([1, 0]).direct_sum(&BundleSpec::flux_line([0, 3])).unwrap();
        assert_eq!(s.det().flux(), [1, 3]);
        let t = BundleSpec::flux_line([1, 1]).tensor(&BundleSpec::flux_line([-2, 1])).unwrap();
        assert_eq!(t.flux(), [-1, 2]);
    }

    #[test]
    fn nyquist_guard() {
        let g = geom();
        assert!(BundleSpec::flux_line([2, 2]).validate(&g).is_ok());
        assert!(matches!(BundleSpec::flux_line([3, 0]).validate(&g), Err(Error::Nyquist { flux: 3, limit: 2 })));
    }

    #[test]
    fn extension_integrability() {
        let g = geom();
        let zero = ExtensionClass::constant(&g, [C64::new(0.0, 0.0); 2]);
        let e0 = BundleSpec::extension_bundle(&zero);
        assert_eq!(e0.perturbation().unwrap().max_abs(), 0.0);
        let e = BundleSpec::extension_bundle(&ExtensionClass::constant(&g, [C64::new(0.5, 0.0), C64::new(0.0, 0.2)]));
        assert!(e.integrability_residual(&g) < 1e-12);
        assert_eq!(e.det().perturbation().unwrap().max_abs(), 0.0);
        assert_eq!(BundleSpec::trivial_bundle(3).integrability_residual(&g), 0.0);
    }

    #[test]
    fn non_closed_forms_are_detected() {
        let g = geom();
        let f = g.spectral().sample_re(|x| (2.0 * PI * x[0]).sin());
        let zero = Field::zeros(g.len());
        assert!(matches!(
            ExtensionClass::from_components(&g, [zero.clone(), f.clone()]),
            Err(Error::Integrability { .. })
        ));
        let n = Mat::from_fn(2, |i, j| if i == 0 && j == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let a = EndoForm01 { comps: vec![EndoField::zeros(2, g.len()), EndoField::from_scalar(&f, &n)] };
        let b = BundleSpec::with_perturbation_unchecked(vec![Summand::TRIVIAL; 2], a, &g);
        assert!(b.integrability_residual(&g) > 0.01);
    }

    #[test]
    fn automorphy_factors_satisfy_the_cocycle_condition() {
        let g = geom();
        let b = BundleSpec::flux_line([2, -1])
            .direct_sum(&BundleSpec::flat_line([0.3, 0.1, 0.0, 1.0]))
            .unwrap();
        assert!(b.cocycle_residual(&g) < 1e-12);
    }

    #[test]
    fn classes_group_equal_flux() {
        let b = BundleSpec::flux_line([1, 1])
            .direct_sum(&BundleSpec::trivial_bundle(1))
            .unwrap()
            .direct_sum(&BundleSpec::flux_line([1, 1]))
            .unwrap();
        assert_eq!(b.classes(), vec![vec![0, 2], vec![1]]);
    }
}
