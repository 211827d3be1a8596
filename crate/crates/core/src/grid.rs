//! Uniform periodic grids and Fourier-spectral operators.

use crate::error::{Error, Result};
use crate::torus::{add, scale, Torus, Vec2};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Samples on an N×N grid; node (i, j) sits at (i/N) a₁ + (j/N) a₂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub n: usize,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(n: usize) -> Self {
        GridField { n, data: vec![0.0; n * n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        GridField { n, data: vec![c; n * n] }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField { n: self.n, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, o: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        assert_eq!(self.n, o.n);
        GridField {
            n: self.n,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &GridField) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> GridField {
        self.map(|v| a * v)
    }

    pub fn add(&self, o: &GridField) -> GridField {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &GridField) -> GridField {
        self.zip(o, |a, b| a - b)
    }

    /// ∫_Ω f g on the unit-area torus (trapezoid rule).
    pub fn inner(&self, o: &GridField) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| a * b).sum::<f64>() / self.data.len() as f64
    }

    pub fn l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Componentwise pair of fields.
pub type FieldPair = [GridField; 2];

pub fn pair_inner(a: &FieldPair, b: &FieldPair) -> f64 {
    a[0].inner(&b[0]) + a[1].inner(&b[1])
}

/// A torus with an N×N grid and FFT plans.
#[derive(Clone)]
pub struct Grid {
    pub torus: Torus,
    pub n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    ksq: Vec<f64>,
    kvec: Vec<Vec2>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("torus", &self.torus).finish()
    }
}

fn mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(torus: Torus, n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("grid.n = {n} must be a power of two >= 4")));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let b = torus.b;
        let mut ksq = vec![0.0; n * n];
        let mut kvec = vec![[0.0; 2]; n * n];
        for i in 0..n {
            for j in 0..n {
                let (m1, m2) = (mode(i, n) as f64, mode(j, n) as f64);
                let nyq = i == n / 2 || j == n / 2;
                let k = add(scale(m1, b[0]), scale(m2, b[1]));
                let mut q = m1 * m1 * crate::torus::dot(b[0], b[0])
                    + m2 * m2 * crate::torus::dot(b[1], b[1]);
                if !nyq {
                    q += 2.0 * m1 * m2 * crate::torus::dot(b[0], b[1]);
                }
                ksq[i * n + j] = q;
                kvec[i * n + j] = if nyq { [0.0; 2] } else { k };
            }
        }
        Ok(Grid { torus, n, fft, ifft, ksq, kvec })
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        let h = 1.0 / self.n as f64;
        self.torus.to_cart([i as f64 * h, j as f64 * h])
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(Vec2) -> f64 + Sync) -> GridField {
        let n = self.n;
        let data: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| f(self.node(idx / n, idx % n)))
            .collect();
        GridField { n, data }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.ifft } else { &self.fft };
        buf.par_chunks_mut(n).for_each(|row| plan.process(row));
        transpose(buf, n);
        buf.par_chunks_mut(n).for_each(|row| plan.process(row));
        transpose(buf, n);
    }

    pub fn forward(&self, f: &GridField) -> Vec<Complex64> {
        assert_eq!(f.n, self.n);
        let mut buf: Vec<Complex64> = f.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    pub fn inverse(&self, mut buf: Vec<Complex64>) -> GridField {
        self.transform(&mut buf, true);
        let s = 1.0 / (self.n * self.n) as f64;
        GridField { n: self.n, data: buf.iter().map(|c| c.re * s).collect() }
    }

    fn multiply(&self, f: &GridField, m: impl Fn(usize) -> Complex64 + Sync) -> GridField {
        let mut h = self.forward(f);
        h.par_iter_mut().enumerate().for_each(|(i, c)| *c *= m(i));
        self.inverse(h)
    }

    pub fn laplacian(&self, f: &GridField) -> GridField {
        self.multiply(f, |i| Complex64::new(-self.ksq[i], 0.0))
    }

    /// Mean-zero u with −Δu = f.
    pub fn poisson_solve(&self, f: &GridField) -> Result<GridField> {
        let m = f.mean();
        if m.abs() > 1e-10 * f.max_abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Solvability(format!(
                "right-hand side has mean {m:.3e}, must vanish"
            )));
        }
        Ok(self.multiply(f, |i| {
            if i == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0 / self.ksq[i], 0.0)
            }
        }))
    }

    /// (Δ − s)⁻¹ f for s > 0.
    pub fn shifted_inverse(&self, f: &GridField, s: f64) -> GridField {
        self.multiply(f, |i| Complex64::new(-1.0 / (self.ksq[i] + s), 0.0))
    }

    pub fn gradient(&self, f: &GridField) -> [GridField; 2] {
        let h = self.forward(f);
        let comp = |c: usize| {
            let mut g = h.clone();
            g.iter_mut().enumerate().for_each(|(i, v)| *v *= Complex64::new(0.0, self.kvec[i][c]));
            self.inverse(g)
        };
        [comp(0), comp(1)]
    }

    /// Trigonometric interpolation onto an m×m grid, m ≥ n.
    pub fn upsample(&self, f: &GridField, m: usize) -> Result<GridField> {
        let n = self.n;
        if m < n || !m.is_power_of_two() {
            return Err(Error::Config(format!("upsample target {m} invalid for n = {n}")));
        }
        let h = self.forward(f);
        let mut big = vec![Complex64::new(0.0, 0.0); m * m];
        let targets = |i: usize| -> Vec<(usize, f64)> {
            let k = mode(i, n);
            if i == n / 2 {
                vec![(m - n / 2, 0.5), (n / 2, 0.5)]
            } else if k >= 0 {
                vec![(k as usize, 1.0)]
            } else {
                vec![((m as i64 + k) as usize, 1.0)]
            }
        };
        for i in 0..n {
            for (ti, wi) in targets(i) {
                for j in 0..n {
                    for (tj, wj) in targets(j) {
                        big[ti * m + tj] += h[i * n + j] * (wi * wj);
                    }
                }
            }
        }
        let fine = Grid::new(self.torus.clone(), m)?;
        let mut g = fine.inverse(big);
        let s = (m * m) as f64 / (n * n) as f64;
        g.data.iter_mut().for_each(|v| *v *= s);
        Ok(g)
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Local cubic interpolation of a periodic grid field at arbitrary points.
#[derive(Debug, Clone)]
pub struct Interpolant {
    torus: Torus,
    field: GridField,
}

impl Interpolant {
    /// Spectrally refines `f` by `factor` before local interpolation.
    pub fn new(grid: &Grid, f: &GridField, factor: usize) -> Result<Self> {
        let field = if factor > 1 { grid.upsample(f, grid.n * factor)? } else { f.clone() };
        Ok(Interpolant { torus: grid.torus.clone(), field })
    }

    pub fn value(&self, x: Vec2) -> f64 {
        let m = self.field.n;
        let fr = self.torus.to_frac(x);
        let u = fr[0] * m as f64;
        let v = fr[1] * m as f64;
        let (i0, j0) = (u.floor(), v.floor());
        let (tu, tv) = (u - i0, v - j0);
        let wu = lagrange4(tu);
        let wv = lagrange4(tv);
        let mi = m as i64;
        let mut s = 0.0;
        for a in 0..4 {
            let ii = ((i0 as i64 + a as i64 - 1).rem_euclid(mi)) as usize;
            let mut r = 0.0;
            for b in 0..4 {
                let jj = ((j0 as i64 + b as i64 - 1).rem_euclid(mi)) as usize;
                r += wv[b] * self.field.data[ii * m + jj];
            }
            s += wu[a] * r;
        }
        s
    }

    pub fn fine(&self) -> &GridField {
        &self.field
    }
}

fn lagrange4(t: f64) -> [f64; 4] {
    // nodes at -1, 0, 1, 2
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}
