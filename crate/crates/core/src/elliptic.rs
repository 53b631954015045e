//! Krylov solver for the scalar elliptic problems on the grid.

use crate::field::{pairwise_sum, pairwise_sum_c, Field};
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    /// relative residual target `|b - Ax| / |b|`
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { tol: 1e-11, restart: 40, max_iter: 400 }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Field,
    pub iterations: usize,
    /// relative residual after each inner iteration
    pub history: Vec<f64>,
}

pub fn dot(a: &Field, b: &Field) -> C64 {
    let prod: Vec<C64> = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).collect();
    pairwise_sum_c(&prod)
}

pub fn norm(a: &Field) -> f64 {
    let sq: Vec<f64> = a.iter().map(|x| x.norm_sqr()).collect();
    pairwise_sum(&sq).sqrt()
}

/// Restarted GMRES with right preconditioning: solves `A M y = b`, `x = M y`.
pub fn gmres(
    apply: impl Fn(&Field) -> Field,
    precond: impl Fn(&Field) -> Field,
    b: &Field,
    x0: Option<&Field>,
    opts: GmresOptions,
    what: &'static str,
) -> Result<Solution> {
    let bnorm = norm(b);
    let mut x = x0.cloned().unwrap_or_else(|| Field::zeros(b.len()));
    let mut history = Vec::new();
    if bnorm == 0.0 && x0.is_none() {
        return Ok(Solution { x, iterations: 0, history });
    }
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let m = opts.restart.max(1);
    let mut total = 0;

    loop {
        let r = b - &apply(&x);
        let beta = norm(&r);
        let rel = beta / scale;
        if history.is_empty() {
            history.push(rel);
        }
        if rel <= opts.tol {
            return Ok(Solution { x, iterations: total, history });
        }
        if total >= opts.max_iter {
            return Err(Error::NonConvergence { what, iterations: total, last: rel, history });
        }

        let mut v: Vec<Field> = vec![r.scale_re(1.0 / beta)];
        let mut z: Vec<Field> = Vec::with_capacity(m);
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;

        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(vi, &w);
                h[i][k] = hik;
                w.axpy(-hik, vi);
            }
            let wn = norm(&w);
            h[k + 1][k] = C64::new(wn, 0.0);

            for i in 0..k {
                let t = cs[i].conj() * h[i][k] + sn[i].conj() * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[k] = C64::new(1.0, 0.0);
                sn[k] = C64::new(0.0, 0.0);
            } else {
                cs[k] = a / den;
                sn[k] = bb / den;
            }
            h[k][k] = cs[k].conj() * a + sn[k].conj() * bb;
            h[k + 1][k] = C64::new(0.0, 0.0);
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];

            total += 1;
            k_used = k + 1;
            let rel = g[k + 1].norm() / scale;
            history.push(rel);
            if rel <= opts.tol || wn <= 1e-300 || total >= opts.max_iter {
                break;
            }
            v.push(w.scale_re(1.0 / wn));
        }

        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.axpy(*yj, &z[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Spectral;
    use std::f64::consts::PI;

    #[test]
    fn solves_variable_coefficient_helmholtz() {
        let s = Spectral::new(&[16, 16], &[1.0, 1.0]);
        let c = s.sample_re(|x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
        let apply = |u: &Field| {
            let lap = s.multiply(u, |i| C64::new(s.laplacian_symbol(i), 0.0));
            &(&c * u) - &lap
        };
        let exact = s.sample_re(|x| (2.0 * PI * x[1]).cos() + 0.2 * (4.0 * PI * x[0]).sin());
        let b = apply(&exact);
        let pre = |r: &Field| s.multiply(r, |i| C64::new(1.0 / (1.0 - s.laplacian_symbol(i)), 0.0));
        let sol = gmres(apply, pre, &b, None, GmresOptions::default(), "test").unwrap();
        assert!((&sol.x - &exact).max_abs() < 1e-9);
        assert!(sol.iterations < 40);
    }
}
