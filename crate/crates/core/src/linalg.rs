//! Stack-allocated complex matrices for pointwise endomorphism work.
//!
//! Bundle ranks stay small (at most [`MAX_RANK`]), so every grid point carries
//! its own fixed-capacity matrix and no heap traffic happens inside the
//! pointwise loops. Hermitian spectral calculus uses cyclic complex Jacobi
//! rotations, which converge to machine precision for these sizes.

use crate::C64;

/// Largest supported bundle rank.
pub const MAX_RANK: usize = 4;
const CAP: usize = MAX_RANK * MAX_RANK;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    a: [C64; CAP],
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_RANK).contains(&n), "matrix size {n} out of range");
        Mat { n, a: [C64::new(0.0, 0.0); CAP] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * MAX_RANK + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i * MAX_RANK + j] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.a[i * MAX_RANK + i] = C64::new(*v, 0.0);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.a[i * MAX_RANK + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.a[i * MAX_RANK + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: C64) {
        self.a[i * MAX_RANK + j] += v;
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * MAX_RANK + k];
                if x.re == 0.0 && x.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * MAX_RANK + j] += x * other.a[k * MAX_RANK + j];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        let mut out = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[i * MAX_RANK + j] += other.a[i * MAX_RANK + j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        let mut out = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[i * MAX_RANK + j] -= other.a[i * MAX_RANK + j];
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Mat {
        let mut out = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[i * MAX_RANK + j] *= s;
            }
        }
        out
    }

    pub fn scale_re(&self, s: f64) -> Mat {
        self.scale(C64::new(s, 0.0))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Mat {
        Mat::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `self * other - other * self`
    pub fn commutator(&self, other: &Mat) -> Mat {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn frobenius_sq(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.get(i, j).norm_sqr();
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s = s.max(self.get(i, j).norm());
            }
        }
        s
    }

    /// `(A + A†) / 2`
    pub fn hermitian_part(&self) -> Mat {
        Mat::from_fn(self.n, |i, j| (self.get(i, j) + self.get(j, i).conj()) * 0.5)
    }

    pub fn kron(&self, other: &Mat) -> Mat {
        let (p, q) = (self.n, other.n);
        Mat::from_fn(p * q, |r, c| {
            self.get(r / q, c / q) * other.get(r % q, c % q)
        })
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Mat> {
        let n = self.n;
        let mut a = *self;
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a.get(col, col).norm();
            for r in col + 1..n {
                let v = a.get(r, col).norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    let t = a.get(col, j);
                    a.set(col, j, a.get(piv, j));
                    a.set(piv, j, t);
                    let t = inv.get(col, j);
                    inv.set(col, j, inv.get(piv, j));
                    inv.set(piv, j, t);
                }
            }
            let d = C64::new(1.0, 0.0) / a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) * d);
                inv.set(col, j, inv.get(col, j) * d);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f.re == 0.0 && f.im == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let v = a.get(r, j) - f * a.get(col, j);
                    a.set(r, j, v);
                    let v = inv.get(r, j) - f * inv.get(col, j);
                    inv.set(r, j, v);
                }
            }
        }
        Some(inv)
    }

    pub fn determinant(&self) -> C64 {
        let n = self.n;
        let mut a = *self;
        let mut det = C64::new(1.0, 0.0);
        for col in 0..n {
            let mut piv = col;
            let mut best = a.get(col, col).norm();
            for r in col + 1..n {
                let v = a.get(r, col).norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return C64::new(0.0, 0.0);
            }
            if piv != col {
                for j in 0..n {
                    let t = a.get(col, j);
                    a.set(col, j, a.get(piv, j));
                    a.set(piv, j, t);
                }
                det = -det;
            }
            let d = a.get(col, col);
            det *= d;
            for r in col + 1..n {
                let f = a.get(r, col) / d;
                for j in col..n {
                    let v = a.get(r, j) - f * a.get(col, j);
                    a.set(r, j, v);
                }
            }
        }
        det
    }

    /// Lower-triangular `L` with `A = L L†`, or `None` if `A` is not
    /// positive definite.
    pub fn cholesky(&self) -> Option<Mat> {
        let n = self.n;
        let mut l = Mat::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l.set(j, j, C64::new(d, 0.0));
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s / d);
            }
        }
        Some(l)
    }

    /// Eigen-decomposition of a Hermitian matrix: `A = V diag(w) V†`.
    /// Only the Hermitian part of `self` is used.
    pub fn eigh(&self) -> Eigh {
        jacobi_eigh(&self.hermitian_part())
    }

    /// `V f(w) V†` for a Hermitian matrix.
    pub fn herm_map(&self, f: impl Fn(f64) -> f64) -> Mat {
        self.eigh().map(f)
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Copy, Debug)]
pub struct Eigh {
    pub values: [f64; MAX_RANK],
    pub vectors: Mat,
}

impl Eigh {
    pub fn dim(&self) -> usize {
        self.vectors.n
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.dim() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let v = &self.vectors;
        let fw: Vec<f64> = (0..n).map(|k| f(self.values[k])).collect();
        Mat::from_fn(n, |i, j| {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..n {
                s += v.get(i, k) * v.get(j, k).conj() * fw[k];
            }
            s
        })
    }
}

fn jacobi_eigh(a: &Mat) -> Eigh {
    let n = a.n;
    let mut m = *a;
    let mut v = Mat::identity(n);
    if n > 1 {
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for _sweep in 0..60 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += m.get(p, q).norm_sqr();
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    let abs = apq.norm();
                    if abs <= 1e-300 {
                        continue;
                    }
                    // Rotation in the (p, q) plane that zeroes the off-diagonal pair.
                    let app = m.get(p, p).re;
                    let aqq = m.get(q, q).re;
                    let phase = apq / abs;
                    let tau = (aqq - app) / (2.0 * abs);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let t = if tau == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // Columns p, q of the unitary: [c, s*phase; -s*conj(phase)... ]
                    let gpp = C64::new(c, 0.0);
                    let gqq = C64::new(c, 0.0);
                    let gpq = phase * s;
                    let gqp = -phase.conj() * s;
                    // m <- G† m G where G acts on columns p, q.
                    for k in 0..n {
                        let mkp = m.get(k, p);
                        let mkq = m.get(k, q);
                        m.set(k, p, mkp * gpp + mkq * gqp);
                        m.set(k, q, mkp * gpq + mkq * gqq);
                    }
                    for k in 0..n {
                        let mpk = m.get(p, k);
                        let mqk = m.get(q, k);
                        m.set(p, k, gpp.conj() * mpk + gqp.conj() * mqk);
                        m.set(q, k, gpq.conj() * mpk + gqq.conj() * mqk);
                    }
                    m.set(p, q, C64::new(0.0, 0.0));
                    m.set(q, p, C64::new(0.0, 0.0));
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, vkp * gpp + vkq * gqp);
                        v.set(k, q, vkp * gpq + vkq * gqq);
                    }
                }
            }
        }
    }
    let mut order: [usize; MAX_RANK] = [0, 1, 2, 3];
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i).re).collect();
    order[..n].sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut values = [0.0; MAX_RANK];
    let mut vectors = Mat::zeros(n);
    for (dst, &src) in order[..n].iter().enumerate() {
        values[dst] = diag[src];
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    Eigh { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_herm(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let m = Mat::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        m.hermitian_part()
    }

    #[test]
    fn eigh_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=MAX_RANK {
            for _ in 0..50 {
                let a = random_herm(&mut rng, n);
                let e = a.eigh();
                let back = e.map(|x| x);
                assert!(back.sub(&a).max_abs() < 1e-13, "n={n}");
                let vv = e.vectors.adjoint().mul(&e.vectors);
                assert!(vv.sub(&Mat::identity(n)).max_abs() < 1e-13);
                for k in 1..n {
                    assert!(e.values[k - 1] <= e.values[k]);
                }
            }
        }
    }

    #[test]
    fn eigh_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=MAX_RANK {
            let a = random_herm(&mut rng, n);
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                nalgebra::Complex::new(a.get(i, j).re, a.get(i, j).im)
            });
            let mut reference: Vec<f64> = na.symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let ours = a.eigh();
            for k in 0..n {
                assert!((ours.values[k] - reference[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=MAX_RANK {
            let a = Mat::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let inv = a.inverse().unwrap();
            assert!(a.mul(&inv).sub(&Mat::identity(n)).max_abs() < 1e-12);
            let d = a.determinant() * inv.determinant();
            assert!((d - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(Mat::zeros(2).inverse().is_none());
    }

    #[test]
    fn kron_of_identities() {
        let k = Mat::identity(2).kron(&Mat::diag(&[2.0, 3.0]));
        assert_eq!(k.dim(), 4);
        assert_eq!(k.get(1, 1), C64::new(3.0, 0.0));
        assert_eq!(k.get(2, 2), C64::new(2.0, 0.0));
    }

    #[test]
    fn cholesky_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=MAX_RANK {
            let b = Mat::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let a = b.mul(&b.adjoint()).add(&Mat::identity(n).scale_re(0.1));
            let l = a.cholesky().unwrap();
            assert!(l.mul(&l.adjoint()).sub(&a).max_abs() < 1e-12);
        }
        assert!(Mat::diag(&[1.0, -1.0]).cholesky().is_none());
    }
}
