//! Fourier spectral calculus on uniform periodic grids.
//!
//! Fields are stored row-major with the last axis fastest. First derivative
//! symbols zero the Nyquist mode (its derivative is not representable as a
//! real sample), and higher derivatives are products of first derivative
//! symbols so that operator identities such as `∂∂̄ = -∂̄∂` hold exactly at
//! the discrete level.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::field::Field;
use crate::C64;

/// A first-order derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D {
    /// `∂/∂z_j`
    Z(usize),
    /// `∂/∂z̄_j`
    Zb(usize),
    /// `∂/∂x_m`
    X(usize),
}

type Plan = Arc<dyn Fft<f64>>;

pub struct Spectral {
    shape: Vec<usize>,
    periods: Vec<f64>,
    len: usize,
    /// forward and inverse plan per axis
    plans: Vec<(Plan, Plan)>,
    /// angular wavenumber of each axis at each grid index, Nyquist zeroed
    k: Vec<Vec<f64>>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral")
            .field("shape", &self.shape)
            .field("periods", &self.periods)
            .finish()
    }
}

impl Spectral {
    pub fn new(shape: &[usize], periods: &[f64]) -> Self {
        assert_eq!(shape.len(), periods.len());
        let len: usize = shape.iter().product();
        let mut planner = FftPlanner::new();
        let plans = shape
            .iter()
            .map(|&n| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            .collect();

        let strides = strides(shape);
        let k = (0..shape.len())
            .map(|ax| {
                let n = shape[ax];
                let scale = 2.0 * PI / periods[ax];
                (0..len)
                    .map(|idx| {
                        let m = (idx / strides[ax]) % n;
                        if 2 * m == n {
                            0.0
                        } else if 2 * m < n {
                            scale * m as f64
                        } else {
                            scale * (m as f64 - n as f64)
                        }
                    })
                    .collect()
            })
            .collect();
        Spectral { shape: shape.to_vec(), periods: periods.to_vec(), len, plans, k }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Angular wavenumber of axis `ax` at spectral index `idx`.
    #[inline]
    pub fn wavenumber(&self, ax: usize, idx: usize) -> f64 {
        self.k[ax][idx]
    }

    /// Grid coordinates of the sample at `idx`.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let st = strides(&self.shape);
        (0..self.ndim())
            .map(|ax| {
                let m = (idx / st[ax]) % self.shape[ax];
                self.periods[ax] * m as f64 / self.shape[ax] as f64
            })
            .collect()
    }

    /// Samples `f(x)` at every grid point.
    pub fn sample(&self, f: impl Fn(&[f64]) -> C64) -> Field {
        Field((0..self.len).map(|i| f(&self.coords(i))).collect())
    }

    pub fn sample_re(&self, f: impl Fn(&[f64]) -> f64) -> Field {
        self.sample(|x| C64::new(f(x), 0.0))
    }

    #[inline]
    pub fn symbol(&self, d: D, idx: usize) -> C64 {
        let i = C64::new(0.0, 1.0);
        match d {
            D::X(m) => i * self.k[m][idx],
            D::Z(j) => (i * self.k[2 * j][idx] + self.k[2 * j + 1][idx]) / SQRT_2,
            D::Zb(j) => (i * self.k[2 * j][idx] - self.k[2 * j + 1][idx]) / SQRT_2,
        }
    }

    fn symbol_chain(&self, ops: &[D], idx: usize) -> C64 {
        ops.iter().fold(C64::new(1.0, 0.0), |acc, &d| acc * self.symbol(d, idx))
    }

    /// Symbol of the flat Laplacian `Σ ∂²/∂x_m²`.
    #[inline]
    pub fn laplacian_symbol(&self, idx: usize) -> f64 {
        -self.k.iter().map(|k| k[idx] * k[idx]).sum::<f64>()
    }

    pub fn forward(&self, f: &Field) -> Field {
        assert_eq!(f.len(), self.len, "field does not match grid");
        let mut data = f.0.clone();
        self.transform(&mut data, false);
        Field(data)
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, mut s: Field) -> Field {
        self.transform(&mut s.0, true);
        let norm = 1.0 / self.len as f64;
        for x in s.0.iter_mut() {
            *x *= norm;
        }
        s
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        let mut buf = Vec::new();
        let ndim = self.shape.len();
        for ax in 0..ndim {
            let n = self.shape[ax];
            let plan = if inverse { &self.plans[ax].1 } else { &self.plans[ax].0 };
            let inner: usize = self.shape[ax + 1..].iter().product();
            if inner == 1 {
                plan.process(data);
                continue;
            }
            let block = n * inner;
            buf.resize(block, C64::new(0.0, 0.0));
            for chunk in data.chunks_mut(block) {
                for i in 0..inner {
                    for k in 0..n {
                        buf[i * n + k] = chunk[k * inner + i];
                    }
                }
                plan.process(&mut buf);
                for i in 0..inner {
                    for k in 0..n {
                        chunk[k * inner + i] = buf[i * n + k];
                    }
                }
            }
        }
    }

    /// Applies a Fourier multiplier given per spectral index.
    pub fn multiply(&self, f: &Field, m: impl Fn(usize) -> C64) -> Field {
        let mut s = self.forward(f);
        for (idx, x) in s.0.iter_mut().enumerate() {
            *x *= m(idx);
        }
        self.inverse(s)
    }

    /// Applies the composition of first-order derivatives `ops`.
    pub fn diff(&self, f: &Field, ops: &[D]) -> Field {
        self.multiply(f, |idx| self.symbol_chain(ops, idx))
    }

    /// Several derivative chains of the same field from a single forward
    /// transform.
    pub fn diff_many(&self, f: &Field, chains: &[&[D]]) -> Vec<Field> {
        let s = self.forward(f);
        chains
            .iter()
            .map(|ops| {
                let mut t = s.clone();
                for (idx, x) in t.0.iter_mut().enumerate() {
                    *x *= self.symbol_chain(ops, idx);
                }
                self.inverse(t)
            })
            .collect()
    }

    /// Implicit heat filter `(1 - τΔ)⁻¹`, with `Δ` the flat Laplacian.
    pub fn heat_filter(&self, f: &Field, tau: f64) -> Field {
        self.multiply(f, |idx| C64::new(1.0 / (1.0 - tau * self.laplacian_symbol(idx)), 0.0))
    }

    /// Solves `Δu = f` for mean-zero `u`; the mean of `f` is ignored.
    pub fn inverse_laplacian(&self, f: &Field) -> Field {
        self.multiply(f, |idx| {
            let l = self.laplacian_symbol(idx);
            if l == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0 / l, 0.0)
            }
        })
    }

    /// Removes the non-constant modes annihilated by every first derivative.
    /// They sit in the Nyquist corners of the spectrum and lie outside the
    /// range of any differential operator.
    pub fn drop_unresolved(&self, f: &Field) -> Field {
        self.multiply(f, |idx| {
            if idx != 0 && self.k.iter().all(|k| k[idx] == 0.0) {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0, 0.0)
            }
        })
    }

    /// Removes the Nyquist content and every mode above `frac` of the
    /// resolved band on any axis.
    pub fn low_pass(&self, f: &Field, frac: f64) -> Field {
        let kmax: Vec<f64> = (0..self.ndim())
            .map(|ax| frac * PI * self.shape[ax] as f64 / self.periods[ax])
            .collect();
        let st = strides(&self.shape);
        self.multiply(f, |idx| {
            for ax in 0..self.ndim() {
                let m = (idx / st[ax]) % self.shape[ax];
                if 2 * m == self.shape[ax] || self.k[ax][idx].abs() > kmax[ax] {
                    return C64::new(0.0, 0.0);
                }
            }
            C64::new(1.0, 0.0)
        })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        st[ax] = st[ax + 1] * shape[ax + 1];
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Spectral {
        Spectral::new(&[8, 8, 8, 8], &[1.0, 1.0, 2.0, 1.5])
    }

    #[test]
    fn roundtrip() {
        let s = grid();
        let f = s.sample(|x| C64::new((x[0] * 3.0).sin() + x[3], x[1] * x[2]));
        let g = s.inverse(s.forward(&f));
        assert!((&f - &g).max_abs() < 1e-13);
    }

    #[test]
    fn single_mode_derivatives_are_exact() {
        let s = grid();
        let k = [2.0 * PI * 2.0, 2.0 * PI * 1.0, PI * 3.0, 2.0 * PI / 1.5];
        let phase = |x: &[f64]| k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let f = s.sample(|x| C64::from_polar(1.0, phase(x)));
        let i = C64::new(0.0, 1.0);
        for m in 0..4 {
            let exact = f.scale(i * k[m]);
            assert!((&s.diff(&f, &[D::X(m)]) - &exact).max_abs() < 1e-12 * k[m]);
        }
        let dz = s.diff(&f, &[D::Z(1)]);
        let exact = f.scale((i * k[2] + k[3]) / SQRT_2);
        assert!((&dz - &exact).max_abs() < 1e-11);
    }

    #[test]
    fn functions_of_the_other_plane_are_dbar_closed_in_this_one() {
        let s = Spectral::new(&[16, 16, 8, 8], &[1.0, 1.0, 1.0, 1.0]);
        let g = s.sample(|x| C64::new(0.0, 2.0 * PI * (x[2] + 2.0 * x[3])).exp());
        assert!(s.diff(&g, &[D::Zb(0)]).max_abs() < 1e-12);
        assert!(s.diff(&g, &[D::Zb(1)]).max_abs() > 1.0);
    }

    #[test]
    fn mixed_derivatives_anticommute_and_square_to_zero_on_forms() {
        let s = grid();
        let f = s.sample(|x| C64::new((2.0 * PI * x[0]).sin() * (PI * x[2]).cos(), (2.0 * PI * x[1]).cos()));
        let a = s.diff(&f, &[D::Z(0), D::Zb(1)]);
        let b = s.diff(&f, &[D::Zb(1), D::Z(0)]);
        assert!((&a - &b).max_abs() < 1e-11);
        // flat Laplacian equals 2 Σ ∂_j ∂̄_j
        let lap = s.multiply(&f, |i| C64::new(s.laplacian_symbol(i), 0.0));
        let mut sum = s.diff(&f, &[D::Z(0), D::Zb(0)]);
        sum += &s.diff(&f, &[D::Z(1), D::Zb(1)]);
        assert!((&lap - &sum.scale_re(2.0)).max_abs() < 1e-10);
    }

    #[test]
    fn inverse_laplacian_solves_poisson() {
        let s = grid();
        let u = s.sample_re(|x| (2.0 * PI * x[0]).sin() + (PI * x[2]).cos() * (2.0 * PI * x[3] / 1.5).sin());
        let lap = s.multiply(&u, |i| C64::new(s.laplacian_symbol(i), 0.0));
        let v = s.inverse_laplacian(&lap);
        assert!((&u - &v).max_abs() < 1e-12);
    }
}
