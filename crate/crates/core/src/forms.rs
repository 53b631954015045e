//! Scalar differential forms on a complex torus.
//!
//! A form is a map from basis monomials to coefficient fields. Monomials are
//! bitmasks over the `2n` generators ordered `dz_1..dz_n, dz̄_1..dz̄_n`, and
//! the coefficient of a mask multiplies the wedge of its generators in
//! increasing bit order.

use std::collections::BTreeMap;

use crate::field::Field;
use crate::spectral::{Spectral, D};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct FormField {
    n: usize,
    len: usize,
    comps: BTreeMap<u32, Field>,
}

/// Sign of `e_A ∧ e_B` relative to `e_{A∪B}`, or `None` when they overlap.
pub fn wedge_sign(a: u32, b: u32) -> Option<f64> {
    if a & b != 0 {
        return None;
    }
    let mut inversions = 0;
    let mut rest = a;
    while rest != 0 {
        let bit = rest.trailing_zeros();
        inversions += (b & ((1u32 << bit) - 1)).count_ones();
        rest &= rest - 1;
    }
    Some(if inversions % 2 == 0 { 1.0 } else { -1.0 })
}

impl FormField {
    pub fn zero(n: usize, len: usize) -> Self {
        FormField { n, len, comps: BTreeMap::new() }
    }

    pub fn scalar(n: usize, f: Field) -> Self {
        let mut out = Self::zero(n, f.len());
        out.comps.insert(0, f);
        out
    }

    /// `i Σ a_{jk} dz_j ∧ dz̄_k`, the usual encoding of real (1,1)-forms.
    pub fn from_i_coeffs(n: usize, a: &[Vec<Field>]) -> Self {
        let len = a[0][0].len();
        let mut out = Self::zero(n, len);
        let i = C64::new(0.0, 1.0);
        for j in 0..n {
            for k in 0..n {
                out.add_component(Self::dz(j) | Self::dzb(n, k), &a[j][k].scale(i));
            }
        }
        out
    }

    #[inline]
    pub fn dz(j: usize) -> u32 {
        1 << j
    }

    #[inline]
    pub fn dzb(n: usize, j: usize) -> u32 {
        1 << (n + j)
    }

    pub fn complex_dim(&self) -> usize {
        self.n
    }

    pub fn grid_len(&self) -> usize {
        self.len
    }

    pub fn components(&self) -> impl Iterator<Item = (u32, &Field)> {
        self.comps.iter().map(|(m, f)| (*m, f))
    }

    pub fn component(&self, mask: u32) -> Option<&Field> {
        self.comps.get(&mask)
    }

    pub fn component_or_zero(&self, mask: u32) -> Field {
        self.comps.get(&mask).cloned().unwrap_or_else(|| Field::zeros(self.len))
    }

    pub fn add_component(&mut self, mask: u32, f: &Field) {
        match self.comps.get_mut(&mask) {
            Some(g) => *g += f,
            None => {
                self.comps.insert(mask, f.clone());
            }
        }
    }

    /// `(p, q)` of a monomial.
    pub fn mask_bidegree(&self, mask: u32) -> (usize, usize) {
        let holo = (1u32 << self.n) - 1;
        ((mask & holo).count_ones() as usize, (mask >> self.n).count_ones() as usize)
    }

    /// Bidegree if every stored component shares one.
    pub fn bidegree(&self) -> Option<(usize, usize)> {
        let mut it = self.comps.keys().map(|&m| self.mask_bidegree(m));
        let first = it.next()?;
        it.all(|b| b == first).then_some(first)
    }

    pub fn expect_bidegree(&self, p: usize, q: usize) -> Result<()> {
        match self.bidegree() {
            None => Ok(()),
            Some((a, b)) if a == p && b == q => Ok(()),
            Some((a, b)) => Err(Error::Bidegree(p, q, a, b)),
        }
    }

    pub fn add(&self, other: &FormField) -> FormField {
        let mut out = self.clone();
        for (m, f) in &other.comps {
            out.add_component(*m, f);
        }
        out
    }

    pub fn sub(&self, other: &FormField) -> FormField {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> FormField {
        let comps = self.comps.iter().map(|(m, f)| (*m, f.scale(s))).collect();
        FormField { n: self.n, len: self.len, comps }
    }

    /// Multiplies every coefficient pointwise by a scalar field.
    pub fn mul_field(&self, g: &Field) -> FormField {
        let comps = self.comps.iter().map(|(m, f)| (*m, f * g)).collect();
        FormField { n: self.n, len: self.len, comps }
    }

    pub fn wedge(&self, other: &FormField) -> FormField {
        let mut out = FormField::zero(self.n, self.len);
        for (&a, fa) in &self.comps {
            for (&b, fb) in &other.comps {
                if let Some(s) = wedge_sign(a, b) {
                    out.add_component(a | b, &(fa * fb).scale_re(s));
                }
            }
        }
        out
    }

    /// Complex conjugate form.
    pub fn conj(&self) -> FormField {
        let n = self.n;
        let mut out = FormField::zero(n, self.len);
        for (&m, f) in &self.comps {
            // conjugate generators keep their order; re-sort them
            let mut mask = 0u32;
            let mut sign = 1.0;
            for bit in 0..2 * n {
                if m & (1 << bit) != 0 {
                    let g = if bit < n { bit + n } else { bit - n };
                    let s = wedge_sign(mask, 1 << g).expect("distinct generators");
                    sign *= s;
                    mask |= 1 << g;
                }
            }
            out.add_component(mask, &f.conj().scale_re(sign));
        }
        out
    }

    fn apply_derivative(&self, spec: &Spectral, gens: &[(u32, D)]) -> FormField {
        let mut out = FormField::zero(self.n, self.len);
        for (&m, f) in &self.comps {
            let ds: Vec<&[D]> = gens
                .iter()
                .filter(|(g, _)| m & g == 0)
                .map(|(_, d)| std::slice::from_ref(d))
                .collect();
            let fields = spec.diff_many(f, &ds);
            let mut it = fields.into_iter();
            for (g, _) in gens.iter().filter(|(g, _)| m & g == 0) {
                let df = it.next().expect("one field per generator");
                let s = wedge_sign(*g, m).expect("checked disjoint");
                out.add_component(m | g, &df.scale_re(s));
            }
        }
        out
    }

    pub fn d_bar(&self, spec: &Spectral) -> FormField {
        let gens: Vec<_> = (0..self.n).map(|j| (Self::dzb(self.n, j), D::Zb(j))).collect();
        self.apply_derivative(spec, &gens)
    }

    pub fn d_partial(&self, spec: &Spectral) -> FormField {
        let gens: Vec<_> = (0..self.n).map(|j| (Self::dz(j), D::Z(j))).collect();
        self.apply_derivative(spec, &gens)
    }

    pub fn d(&self, spec: &Spectral) -> FormField {
        self.d_partial(spec).add(&self.d_bar(spec))
    }

    /// Largest coefficient modulus over all components and grid points.
    pub fn sup_norm(&self) -> f64 {
        self.comps.values().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    /// Coefficient `a_{jk}` in `i Σ a_{jk} dz_j ∧ dz̄_k`.
    pub fn i_coeff(&self, j: usize, k: usize) -> Field {
        let mask = Self::dz(j) | Self::dzb(self.n, k);
        self.component_or_zero(mask).scale(C64::new(0.0, -1.0))
    }

    /// Coefficient of a top-degree form relative to the volume form
    /// `Π_j (i dz_j ∧ dz̄_j)`.
    pub fn top(&self) -> Field {
        let full = (1u32 << (2 * self.n)) - 1;
        self.component_or_zero(full).scale(C64::new(1.0, 0.0) / volume_sign(self.n))
    }
}

/// Coefficient of `dz_1..dz_n dz̄_1..dz̄_n` in `Π_j (i dz_j ∧ dz̄_j)`.
pub fn volume_sign(n: usize) -> C64 {
    let mut mask = 0u32;
    let mut c = C64::new(1.0, 0.0);
    for j in 0..n {
        let pair = FormField::dz(j) | FormField::dzb(n, j);
        let s = wedge_sign(FormField::dz(j), FormField::dzb(n, j)).unwrap();
        c *= C64::new(0.0, s);
        c *= wedge_sign(mask, pair).unwrap();
        mask |= pair;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec() -> Spectral {
        Spectral::new(&[8, 8, 8, 8], &[1.0, 1.0, 1.0, 1.0])
    }

    fn smooth(s: &Spectral, a: f64) -> Field {
        s.sample(|x| {
            C64::new(
                (2.0 * PI * (x[0] + a * x[2])).sin() + 0.3 * (2.0 * PI * x[1]).cos() * (2.0 * PI * x[3]).sin(),
                a * (4.0 * PI * x[2]).cos() + (2.0 * PI * (x[1] - x[3])).sin(),
            )
        })
    }

    #[test]
    fn wedge_signs() {
        assert_eq!(wedge_sign(0b01, 0b10), Some(1.0));
        assert_eq!(wedge_sign(0b10, 0b01), Some(-1.0));
        assert_eq!(wedge_sign(0b11, 0b01), None);
        assert_eq!(wedge_sign(0b1010, 0b0101), Some(-1.0));
    }

    #[test]
    fn volume_form_is_positive_orientation() {
        // (i dz1 dz̄1)(i dz2 dz̄2) = i² dz1 dz̄1 dz2 dz̄2 = -(-1) dz1 dz2 dz̄1 dz̄2
        assert_eq!(volume_sign(2), C64::new(1.0, 0.0));
        assert_eq!(volume_sign(1), C64::new(0.0, 1.0));
    }

    #[test]
    fn d_squared_vanishes() {
        let s = spec();
        let f = FormField::scalar(2, smooth(&s, 0.5));
        assert!(f.d(&s).d(&s).sup_norm() < 1e-10);
        assert!(f.d_bar(&s).d_bar(&s).sup_norm() < 1e-10);
        assert!(f.d_partial(&s).d_partial(&s).sup_norm() < 1e-10);
        let a = f.d_partial(&s).d_bar(&s);
        let b = f.d_bar(&s).d_partial(&s);
        assert!(a.add(&b).sup_norm() < 1e-10);
    }

    #[test]
    fn conj_is_involutive_and_real_11_forms_are_fixed() {
        let s = spec();
        let f = smooth(&s, 0.2);
        let g = smooth(&s, 0.7);
        let omega = FormField::from_i_coeffs(
            2,
            &[
                vec![f.map(|x| C64::new(x.re, 0.0)), g.clone()],
                vec![g.conj(), Field::constant(s.len(), C64::new(1.0, 0.0))],
            ],
        );
        assert!(omega.conj().sub(&omega).sup_norm() < 1e-14);
        let beta = FormField::scalar(2, f).d_bar(&s);
        assert!(beta.conj().conj().sub(&beta).sup_norm() < 1e-14);
        assert_eq!(beta.conj().bidegree(), Some((1, 0)));
    }

    #[test]
    fn wedge_is_graded_commutative() {
        let s = spec();
        let a = FormField::scalar(2, smooth(&s, 0.1)).d(&s);
        let b = FormField::scalar(2, smooth(&s, 0.9)).d_bar(&s);
        assert!(a.wedge(&b).add(&b.wedge(&a)).sup_norm() < 1e-12);
    }
}
