//! Endomorphism-valued fields and forms.
//!
//! Storage is component-major: entry `(i, j)` of the matrix field is a
//! contiguous [`Field`], which keeps spectral differentiation cheap. Pointwise
//! matrix algebra gathers one [`Mat`] per grid point.

use crate::field::Field;
use crate::linalg::Mat;
use crate::spectral::{Spectral, D};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct EndoField {
    r: usize,
    len: usize,
    comps: Vec<Field>,
}

impl EndoField {
    pub fn zeros(r: usize, len: usize) -> Self {
        EndoField { r, len, comps: vec![Field::zeros(len); r * r] }
    }

    pub fn identity(r: usize, len: usize) -> Self {
        Self::constant(&Mat::identity(r), len)
    }

    pub fn constant(m: &Mat, len: usize) -> Self {
        let r = m.dim();
        let comps = (0..r * r).map(|c| Field::constant(len, m.get(c / r, c % r))).collect();
        EndoField { r, len, comps }
    }

    pub fn from_fn(r: usize, len: usize, f: impl Fn(usize) -> Mat) -> Self {
        let mut out = Self::zeros(r, len);
        for idx in 0..len {
            out.set_at(idx, &f(idx));
        }
        out
    }

    pub fn from_mats(mats: &[Mat]) -> Self {
        let r = mats[0].dim();
        Self::from_fn(r, mats.len(), |idx| mats[idx])
    }

    /// Scalar field times a constant matrix.
    pub fn from_scalar(f: &Field, m: &Mat) -> Self {
        let r = m.dim();
        let comps = (0..r * r).map(|c| f.scale(m.get(c / r, c % r))).collect();
        EndoField { r, len: f.len(), comps }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn comp(&self, i: usize, j: usize) -> &Field {
        &self.comps[i * self.r + j]
    }

    pub fn comp_mut(&mut self, i: usize, j: usize) -> &mut Field {
        &mut self.comps[i * self.r + j]
    }

    pub fn components(&self) -> &[Field] {
        &self.comps
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Mat {
        let r = self.r;
        Mat::from_fn(r, |i, j| self.comps[i * r + j][idx])
    }

    #[inline]
    pub fn set_at(&mut self, idx: usize, m: &Mat) {
        let r = self.r;
        for i in 0..r {
            for j in 0..r {
                self.comps[i * r + j][idx] = m.get(i, j);
            }
        }
    }

    pub fn to_mats(&self) -> Vec<Mat> {
        (0..self.len).map(|idx| self.at(idx)).collect()
    }

    /// Pointwise map `M(x) ↦ f(x, M(x))`.
    pub fn map(&self, f: impl Fn(usize, &Mat) -> Mat) -> EndoField {
        let first = if self.len > 0 { f(0, &self.at(0)) } else { Mat::zeros(self.r) };
        let mut out = Self::zeros(first.dim(), self.len);
        for idx in 0..self.len {
            let m = if idx == 0 { first } else { f(idx, &self.at(idx)) };
            out.set_at(idx, &m);
        }
        out
    }

    pub fn try_map(&self, f: impl Fn(usize, &Mat) -> Result<Mat>) -> Result<EndoField> {
        let mut out = Self::zeros(self.r, self.len);
        for idx in 0..self.len {
            out.set_at(idx, &f(idx, &self.at(idx))?);
        }
        Ok(out)
    }

    pub fn zip_map(&self, other: &EndoField, f: impl Fn(usize, &Mat, &Mat) -> Mat) -> EndoField {
        assert_eq!(self.len, other.len);
        let r = f(0, &self.at(0), &other.at(0)).dim();
        let mut out = Self::zeros(r, self.len);
        for idx in 0..self.len {
            out.set_at(idx, &f(idx, &self.at(idx), &other.at(idx)));
        }
        out
    }

    fn componentwise(&self, f: impl Fn(&Field) -> Field) -> EndoField {
        EndoField { r: self.r, len: self.len, comps: self.comps.iter().map(f).collect() }
    }

    pub fn add(&self, other: &EndoField) -> EndoField {
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a + b).collect();
        EndoField { r: self.r, len: self.len, comps }
    }

    pub fn sub(&self, other: &EndoField) -> EndoField {
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a - b).collect();
        EndoField { r: self.r, len: self.len, comps }
    }

    pub fn add_assign(&mut self, other: &EndoField) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            *a += b;
        }
    }

    pub fn scale(&self, s: C64) -> EndoField {
        self.componentwise(|f| f.scale(s))
    }

    pub fn scale_re(&self, s: f64) -> EndoField {
        self.componentwise(|f| f.scale_re(s))
    }

    pub fn mul_scalar_field(&self, g: &Field) -> EndoField {
        self.componentwise(|f| f * g)
    }

    /// Pointwise matrix product.
    pub fn mul(&self, other: &EndoField) -> EndoField {
        let r = self.r;
        let mut out = Self::zeros(r, self.len);
        for i in 0..r {
            for k in 0..r {
                let a = self.comp(i, k);
                for j in 0..r {
                    let b = other.comp(k, j);
                    let o = out.comp_mut(i, j);
                    for ((o, x), y) in o.0.iter_mut().zip(&a.0).zip(&b.0) {
                        *o += x * y;
                    }
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &EndoField) -> EndoField {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn adjoint(&self) -> EndoField {
        let r = self.r;
        let comps = (0..r * r).map(|c| self.comp(c % r, c / r).conj()).collect();
        EndoField { r, len: self.len, comps }
    }

    pub fn transpose(&self) -> EndoField {
        let r = self.r;
        let comps = (0..r * r).map(|c| self.comp(c % r, c / r).clone()).collect();
        EndoField { r, len: self.len, comps }
    }

    pub fn trace(&self) -> Field {
        let mut t = Field::zeros(self.len);
        for i in 0..self.r {
            t += self.comp(i, i);
        }
        t
    }

    /// Sup over the grid of the largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    /// Componentwise derivative chain.
    pub fn diff(&self, spec: &Spectral, ops: &[D]) -> EndoField {
        self.componentwise(|f| spec.diff(f, ops))
    }

    /// Componentwise Fourier multiplier.
    pub fn multiply(&self, spec: &Spectral, m: impl Fn(usize) -> C64 + Copy) -> EndoField {
        self.componentwise(|f| spec.multiply(f, m))
    }

    pub fn inverse(&self) -> Result<EndoField> {
        self.try_map(|idx, m| {
            m.inverse().ok_or(Error::NonPositiveEndo { min: 0.0, max: m.max_abs(), index: idx })
        })
    }
}

/// `Σ_j X_j dz_j`
#[derive(Clone, Debug, PartialEq)]
pub struct EndoForm10 {
    pub comps: Vec<EndoField>,
}

/// `Σ_k X_k̄ dz̄_k`
#[derive(Clone, Debug, PartialEq)]
pub struct EndoForm01 {
    pub comps: Vec<EndoField>,
}

/// `Σ_{jk} F_{jk̄} dz_j ∧ dz̄_k`, stored at `j * n + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EndoForm11 {
    pub n: usize,
    pub comps: Vec<EndoField>,
}

impl EndoForm01 {
    pub fn zeros(n: usize, r: usize, len: usize) -> Self {
        EndoForm01 { comps: vec![EndoField::zeros(r, len); n] }
    }

    pub fn rank(&self) -> usize {
        self.comps[0].rank()
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty() || self.comps[0].is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn map(&self, f: impl Fn(&EndoField) -> EndoField) -> EndoForm01 {
        EndoForm01 { comps: self.comps.iter().map(f).collect() }
    }
}

impl EndoForm10 {
    pub fn map(&self, f: impl Fn(&EndoField) -> EndoField) -> EndoForm10 {
        EndoForm10 { comps: self.comps.iter().map(f).collect() }
    }
}

impl EndoForm11 {
    pub fn zeros(n: usize, r: usize, len: usize) -> Self {
        EndoForm11 { n, comps: vec![EndoField::zeros(r, len); n * n] }
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> &EndoField {
        &self.comps[j * self.n + k]
    }

    pub fn get_mut(&mut self, j: usize, k: usize) -> &mut EndoField {
        &mut self.comps[j * self.n + k]
    }

    pub fn rank(&self) -> usize {
        self.comps[0].rank()
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    /// Coefficient matrices `F_{jk̄}` at one grid point.
    pub fn at(&self, idx: usize) -> Vec<Mat> {
        self.comps.iter().map(|c| c.at(idx)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn add(&self, other: &EndoForm11) -> EndoForm11 {
        EndoForm11 { n: self.n, comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, other: &EndoForm11) -> EndoForm11 {
        EndoForm11 { n: self.n, comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.sub(b)).collect() }
    }

    pub fn map(&self, f: impl Fn(&EndoField) -> EndoField) -> EndoForm11 {
        EndoForm11 { n: self.n, comps: self.comps.iter().map(f).collect() }
    }

    /// Pointwise trace, as the coefficients of a scalar (1,1) form.
    pub fn trace(&self) -> Vec<Field> {
        self.comps.iter().map(|c| c.trace()).collect()
    }
}

fn positive_eigs(idx: usize, m: &Mat) -> Result<crate::linalg::Eigh> {
    let e = m.eigh();
    if !(e.min() > 0.0) {
        return Err(Error::NonPositiveEndo { min: e.min(), max: e.max(), index: idx });
    }
    Ok(e)
}

/// Pointwise matrix exponential of a Hermitian field.
pub fn endo_exp(s: &EndoField) -> EndoField {
    s.map(|_, m| m.herm_map(f64::exp))
}

/// Pointwise logarithm of a positive Hermitian field.
pub fn endo_log(p: &EndoField) -> Result<EndoField> {
    p.try_map(|idx, m| Ok(positive_eigs(idx, m)?.map(f64::ln)))
}

/// Pointwise positive square root of a positive Hermitian field.
pub fn endo_sqrt(p: &EndoField) -> Result<EndoField> {
    p.try_map(|idx, m| Ok(positive_eigs(idx, m)?.map(f64::sqrt)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_of_identity_vanishes() {
        let id = EndoField::identity(2, 10);
        assert!(endo_log(&id).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let p = EndoField::constant(&Mat::diag(&[4.0, 9.0]), 3);
        let s = endo_sqrt(&p).unwrap();
        assert!(s.sub(&EndoField::constant(&Mat::diag(&[2.0, 3.0]), 3)).max_abs() < 1e-14);
    }

    #[test]
    fn exp_inverts_log_on_random_positive_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mats: Vec<Mat> = (0..50)
            .map(|_| {
                let b = Mat::from_fn(3, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                b.mul(&b.adjoint()).add(&Mat::identity(3).scale_re(0.05))
            })
            .collect();
        let p = EndoField::from_mats(&mats);
        let back = endo_exp(&endo_log(&p).unwrap());
        assert!(back.sub(&p).max_abs() < 1e-10);
        let s = endo_sqrt(&p).unwrap();
        assert!(s.mul(&s).sub(&p).max_abs() < 1e-10);
    }

    #[test]
    fn non_positive_input_is_rejected() {
        let p = EndoField::constant(&Mat::diag(&[1.0, -1.0]), 2);
        assert!(matches!(endo_log(&p), Err(Error::NonPositiveEndo { .. })));
        assert!(matches!(endo_sqrt(&p), Err(Error::NonPositiveEndo { .. })));
    }

    #[test]
    fn pointwise_product_matches_mat() {
        let a = EndoField::from_fn(2, 4, |i| Mat::from_fn(2, |p, q| C64::new((i + p) as f64, q as f64)));
        let b = EndoField::from_fn(2, 4, |i| Mat::from_fn(2, |p, q| C64::new(q as f64, (i * p) as f64)));
        let c = a.mul(&b);
        for idx in 0..4 {
            assert!(c.at(idx).sub(&a.at(idx).mul(&b.at(idx))).max_abs() < 1e-14);
        }
    }
}
