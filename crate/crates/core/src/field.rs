//! Complex scalar fields sampled on a periodic grid, plus deterministic
//! reductions.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::C64;

/// A complex scalar field in row-major grid order (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Field(pub Vec<C64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(vec![C64::new(0.0, 0.0); len])
    }

    pub fn constant(len: usize, v: C64) -> Self {
        Field(vec![v; len])
    }

    pub fn from_real(values: impl IntoIterator<Item = f64>) -> Self {
        Field(values.into_iter().map(|x| C64::new(x, 0.0)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        Field(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(C64, C64) -> C64) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scale(&self, s: C64) -> Field {
        self.map(|x| x * s)
    }

    pub fn scale_re(&self, s: f64) -> Field {
        self.map(|x| x * s)
    }

    pub fn conj(&self) -> Field {
        self.map(|x| x.conj())
    }

    pub fn re(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.im.abs()))
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &Field) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    pub fn mean(&self) -> C64 {
        pairwise_sum_c(&self.0) / self.len() as f64
    }
}

impl FromIterator<C64> for Field {
    fn from_iter<I: IntoIterator<Item = C64>>(iter: I) -> Self {
        Field(iter.into_iter().collect())
    }
}

impl Index<usize> for Field {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Field {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.0[i]
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|x| -x)
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += b;
        }
    }
}

impl SubAssign<&Field> for Field {
    fn sub_assign(&mut self, rhs: &Field) {
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a -= b;
        }
    }
}

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation. The split points depend only on the length,
/// so the result is reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_sum_c(xs: &[C64]) -> C64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = C64::new(0.0, 0.0);
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum_c(&xs[..mid]) + pairwise_sum_c(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_sum_of_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let xs = vec![0.1; 1 << 20];
        let naive: f64 = xs.iter().sum();
        let pw = pairwise_sum(&xs);
        let exact = 0.1 * (1 << 20) as f64;
        assert!((pw - exact).abs() <= (naive - exact).abs());
    }
}
