//! Restarted GMRES and preconditioned CG on flat vectors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions { tol: 1e-12, restart: 120, max_iter: 4000 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Final ‖b − Ax‖/‖b‖.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves A x = b from x = 0.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: KrylovOptions,
) -> Result<(Vec<f64>, KrylovStats)> {
    let n = b.len();
    let bn = nrm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, KrylovStats { iterations: 0, residual: 0.0 }));
    }
    let m = opts.restart;
    let mut total = 0;
    let mut r = b.to_vec();
    loop {
        let beta = nrm(&r);
        if beta / bn < opts.tol {
            return Ok((x, KrylovStats { iterations: total, residual: beta / bn }));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&v[j]);
            // modified Gram-Schmidt, applied twice
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[i][j] += c;
                    w.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
                }
            }
            let wn = nrm(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = h[j][j].hypot(h[j + 1][j]);
            cs[j] = h[j][j] / den;
            sn[j] = h[j + 1][j] / den;
            h[j][j] = den;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            total += 1;
            if (g[j + 1] / bn).abs() < opts.tol || wn == 0.0 || total >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|t| t / wn).collect());
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|l| h[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            x.iter_mut().zip(&v[i]).for_each(|(a, b)| *a += yi * b);
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        if total >= opts.max_iter {
            let res = nrm(&r) / bn;
            if res < opts.tol {
                return Ok((x, KrylovStats { iterations: total, residual: res }));
            }
            return Err(Error::Convergence(format!("GMRES stagnated at relative residual {res:.3e} after {total} iterations")));
        }
    }
}

/// Conjugate gradients for symmetric positive definite A with preconditioner M⁻¹.
pub fn pcg(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    opts: KrylovOptions,
) -> Result<(Vec<f64>, KrylovStats)> {
    let bn = nrm(b);
    let mut x = vec![0.0; b.len()];
    if bn == 0.0 {
        return Ok((x, KrylovStats { iterations: 0, residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=opts.max_iter {
        let ap = apply(&p);
        let a = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(u, v)| *u += a * v);
        r.iter_mut().zip(&ap).for_each(|(u, v)| *u -= a * v);
        let res = nrm(&r) / bn;
        if res < opts.tol {
            return Ok((x, KrylovStats { iterations: it, residual: res }));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(u, v)| *u = v + beta * *u);
    }
    Err(Error::Convergence(format!("CG did not reach {:.1e} in {} iterations", opts.tol, opts.max_iter)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let a = [[4.0, 1.0, 0.0], [2.0, 3.0, 1.0], [0.0, -1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let op = |x: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect();
        let opts = KrylovOptions { restart: 2, ..Default::default() };
        let (x, st) = gmres(op, &b, opts).unwrap();
        let ax: Vec<f64> = op(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-11);
        }
        assert!(st.residual < 1e-12);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let op = |x: &[f64]| vec![a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
        let (x, _) = pcg(op, |r| r.to_vec(), &[1.0, 2.0], KrylovOptions::default()).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12 && (x[1] - 7.0 / 11.0).abs() < 1e-12);
    }
}
