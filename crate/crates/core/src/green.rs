//! Doubly periodic Green function by Ewald summation.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::special::{e1, ein, phi, EULER_GAMMA};
use crate::torus::{add, dot, norm, scale, sub, Torus, Vec2};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

pub type Mat2 = [[f64; 2]; 2];

/// Ewald splitting used unless another is requested; balances the image and
/// Fourier sums on a unit-area cell.
pub const DEFAULT_ETA: f64 = 4.0;

/// Evaluates G(x,p) with −ΔG = δ_p − 1 and ∫_Ω G = 0, plus its regular part γ.
#[derive(Debug, Clone)]
pub struct GreenEvaluator {
    pub torus: Torus,
    pub eta: f64,
    pub accuracy: f64,
    /// Constant added to G and γ; zero gives the mean-zero normalization.
    pub offset: f64,
    real: Vec<Vec2>,
    /// Half of the dual lattice within the cutoff, with weights 2e^{−k²/4η²}/k²,
    /// stored in rows of fixed m₁ so phases follow by recurrence.
    fourier: Vec<FourierRow>,
    smax: f64,
}

#[derive(Debug, Clone)]
struct FourierRow {
    m1: f64,
    m2_lo: f64,
    modes: Vec<(Vec2, f64)>,
}

impl GreenEvaluator {
    pub fn new(torus: Torus, accuracy: f64) -> Result<Self> {
        Self::with_eta(torus, DEFAULT_ETA, accuracy)
    }

    pub fn with_eta(torus: Torus, eta: f64, accuracy: f64) -> Result<Self> {
        if !(accuracy > 0.0 && accuracy < 1.0) || eta <= 0.0 {
            return Err(Error::Config(format!(
                "green accuracy {accuracy} and splitting {eta} must be positive, accuracy < 1"
            )));
        }
        let smax = (1.0 / accuracy).ln() + 4.0;
        // real-space images of a minimum-image displacement
        let rr = smax.sqrt() / eta + torus.covering_radius();
        let real = torus.lattice_within(rr);
        let kmax = 2.0 * eta * smax.sqrt();
        // |mᵢ| = |k·aᵢ|/2π ≤ kmax|aᵢ|/2π
        let mlim = |a: Vec2| (kmax * norm(a) / (2.0 * PI)).ceil() as i64;
        let (l1, l2) = (mlim(torus.a[0]), mlim(torus.a[1]));
        if real.len() > 200_000 || (l1 + 1) * (2 * l2 + 1) > 200_000 {
            return Err(Error::Convergence(format!(
                "Ewald truncation budget exceeded for eta = {eta}"
            )));
        }
        let mut fourier = Vec::new();
        for m1 in 0..=l1 {
            let lo = if m1 == 0 { 1 } else { -l2 };
            let mut modes = Vec::new();
            let mut first = None;
            for m2 in lo..=l2 {
                let k = add(scale(m1 as f64, torus.b[0]), scale(m2 as f64, torus.b[1]));
                let k2 = dot(k, k);
                let w = if k2 <= kmax * kmax { 2.0 * (-k2 / (4.0 * eta * eta)).exp() / k2 } else { 0.0 };
                if w > 0.0 || first.is_some() {
                    first.get_or_insert(m2);
                    modes.push((k, w));
                }
            }
            while modes.last().is_some_and(|m| m.1 == 0.0) {
                modes.pop();
            }
            if let Some(m2_lo) = first {
                fourier.push(FourierRow { m1: m1 as f64, m2_lo: m2_lo as f64, modes });
            }
        }
        Ok(GreenEvaluator { torus, eta, accuracy, offset: 0.0, real, fourier, smax })
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset = c;
        self
    }

    pub fn robin(&self) -> f64 {
        self.regular_r([0.0, 0.0])
    }

    /// Calls f(k, w, cos k·r, sin k·r) for every retained mode.
    #[inline]
    fn modes(&self, r: Vec2, mut f: impl FnMut(Vec2, f64, f64, f64)) {
        let t1 = dot(self.torus.b[0], r);
        let t2 = dot(self.torus.b[1], r);
        let (s2, c2) = t2.sin_cos();
        for row in &self.fourier {
            let (mut s, mut c) = (row.m1 * t1 + row.m2_lo * t2).sin_cos();
            for &(k, w) in &row.modes {
                f(k, w, c, s);
                let cn = c * c2 - s * s2;
                s = s * c2 + c * s2;
                c = cn;
            }
        }
    }

    fn smooth_part(&self, r: Vec2) -> f64 {
        let mut s = 0.0;
        self.modes(r, |_, w, c, _| s += w * c);
        s - 1.0 / (4.0 * self.eta * self.eta) + self.offset
    }

    fn real_part(&self, r: Vec2, skip_origin: bool) -> f64 {
        let e2 = self.eta * self.eta;
        let mut s = 0.0;
        for n in &self.real {
            if skip_origin && n[0] == 0.0 && n[1] == 0.0 {
                continue;
            }
            let v = add(r, *n);
            let q = e2 * dot(v, v);
            if q < self.smax {
                s += e1(q);
            }
        }
        s / (4.0 * PI)
    }

    fn regular_r(&self, r: Vec2) -> f64 {
        let e2 = self.eta * self.eta;
        let q = e2 * dot(r, r);
        self.smooth_part(r)
            + self.real_part(r, true)
            + (ein(q) - EULER_GAMMA - 2.0 * self.eta.ln()) / (4.0 * PI)
    }

    fn disp(&self, x: Vec2, p: Vec2) -> Vec2 {
        self.torus.min_image(sub(x, p))
    }

    /// G(x, p).
    pub fn green(&self, x: Vec2, p: Vec2) -> Result<f64> {
        let r = self.disp(x, p);
        if dot(r, r) == 0.0 {
            return Err(Error::Singularity(format!("G evaluated at coincident points {x:?}")));
        }
        Ok(self.smooth_part(r) + self.real_part(r, false))
    }

    /// γ(x, p) = G(x, p) + ln|x − p|/(2π), continuous at x = p.
    pub fn green_regular(&self, x: Vec2, p: Vec2) -> f64 {
        self.regular_r(self.disp(x, p))
    }

    /// G when the displacement is already minimum-image and nonzero.
    pub fn green_disp(&self, r: Vec2) -> f64 {
        self.smooth_part(r) + self.real_part(r, false)
    }

    fn grad_smooth(&self, r: Vec2) -> Vec2 {
        let mut g = [0.0; 2];
        self.modes(r, |k, w, _, s| {
            g[0] -= w * s * k[0];
            g[1] -= w * s * k[1];
        });
        g
    }

    fn grad_real(&self, r: Vec2, skip_origin: bool) -> Vec2 {
        let e2 = self.eta * self.eta;
        let mut g = [0.0; 2];
        for n in &self.real {
            if skip_origin && n[0] == 0.0 && n[1] == 0.0 {
                continue;
            }
            let v = add(r, *n);
            let v2 = dot(v, v);
            let q = e2 * v2;
            if q < self.smax {
                let c = -(-q).exp() / (2.0 * PI * v2);
                g[0] += c * v[0];
                g[1] += c * v[1];
            }
        }
        g
    }

    /// ∇ₓG(x, p).
    pub fn green_grad(&self, x: Vec2, p: Vec2) -> Result<Vec2> {
        let r = self.disp(x, p);
        if dot(r, r) == 0.0 {
            return Err(Error::Singularity(format!("∇G evaluated at coincident points {x:?}")));
        }
        Ok(add(self.grad_smooth(r), self.grad_real(r, false)))
    }

    /// ∇ₓγ(x, p).
    pub fn green_regular_grad(&self, x: Vec2, p: Vec2) -> Vec2 {
        let r = self.disp(x, p);
        let e2 = self.eta * self.eta;
        let (ph, _) = phi(e2 * dot(r, r));
        let c = e2 * ph / (2.0 * PI);
        add(add(self.grad_smooth(r), self.grad_real(r, true)), [c * r[0], c * r[1]])
    }

    fn hess_smooth(&self, r: Vec2) -> Mat2 {
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        self.modes(r, |k, w, c, _| {
            let wc = w * c;
            h00 -= wc * k[0] * k[0];
            h01 -= wc * k[0] * k[1];
            h11 -= wc * k[1] * k[1];
        });
        [[h00, h01], [h01, h11]]
    }

    fn hess_real(&self, r: Vec2, skip_origin: bool) -> Mat2 {
        let e2 = self.eta * self.eta;
        let mut h = [[0.0; 2]; 2];
        for n in &self.real {
            if skip_origin && n[0] == 0.0 && n[1] == 0.0 {
                continue;
            }
            let v = add(r, *n);
            let v2 = dot(v, v);
            let q = e2 * v2;
            if q < self.smax {
                let e = (-q).exp();
                for a in 0..2 {
                    for b in 0..2 {
                        let d = if a == b { 1.0 } else { 0.0 };
                        let t = e * (d / v2 - 2.0 * v[a] * v[b] / (v2 * v2))
                            - 2.0 * e2 * e * v[a] * v[b] / v2;
                        h[a][b] -= t / (2.0 * PI);
                    }
                }
            }
        }
        h
    }

    /// Hessian in x of G(x, p).
    pub fn green_hess(&self, x: Vec2, p: Vec2) -> Result<Mat2> {
        let r = self.disp(x, p);
        if dot(r, r) == 0.0 {
            return Err(Error::Singularity(format!("∇²G evaluated at coincident points {x:?}")));
        }
        Ok(madd(self.hess_smooth(r), self.hess_real(r, false)))
    }

    /// Hessian in x of γ(x, p).
    pub fn green_regular_hess(&self, x: Vec2, p: Vec2) -> Mat2 {
        let r = self.disp(x, p);
        let e2 = self.eta * self.eta;
        let (ph, dph) = phi(e2 * dot(r, r));
        let mut h = madd(self.hess_smooth(r), self.hess_real(r, true));
        for a in 0..2 {
            for b in 0..2 {
                let d = if a == b { 1.0 } else { 0.0 };
                h[a][b] += e2 / (2.0 * PI) * (ph * d + 2.0 * e2 * dph * r[a] * r[b]);
            }
        }
        h
    }

    /// γ(·, p) at every grid node. The Fourier part of a sharply split Ewald
    /// sum is one inverse FFT; the image sum is then local to p.
    pub fn regular_table(&self, grid: &Grid, p: Vec2) -> Result<GridField> {
        let n = grid.n;
        let t = &self.torus;
        let amax = norm(t.a[0]).max(norm(t.a[1]));
        let root = self.smax.sqrt();
        // largest η whose Fourier cutoff stays inside the grid's modes
        let eta = ((n as f64 / 2.0 - 1.0) * PI / (amax * root)).min(60.0);
        if eta < 1.0 {
            return Ok(grid.sample(|x| self.green_regular(x, p)));
        }
        let ev = GreenEvaluator::with_eta(t.clone(), eta, self.accuracy)?.with_offset(self.offset);
        let nn = (n * n) as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        let wrap = |m: f64| (m as i64).rem_euclid(n as i64) as usize;
        for row in &ev.fourier {
            for (idx, &(k, w)) in row.modes.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let m2 = row.m2_lo + idx as f64;
                let c = Complex64::from_polar(0.5 * w * nn, -dot(k, p));
                buf[wrap(row.m1) * n + wrap(m2)] += c;
                buf[wrap(-row.m1) * n + wrap(-m2)] += c.conj();
            }
        }
        let mut f = grid.inverse(buf);
        let e2 = eta * eta;
        let base = -1.0 / (4.0 * e2) + self.offset;
        f.data.par_iter_mut().enumerate().for_each(|(idx, v)| {
            let x = grid.node(idx / n, idx % n);
            let r = t.min_image(sub(x, p));
            let q = e2 * dot(r, r);
            let origin = if q < ev.smax {
                (ein(q) - EULER_GAMMA - 2.0 * eta.ln()) / (4.0 * PI)
            } else {
                norm(r).ln() / (2.0 * PI)
            };
            *v += base + ev.real_part(r, true) + origin;
        });
        Ok(f)
    }

    /// G(·, p) and γ(·, p) on a grid; G is NaN at a node equal to p.
    pub fn table(&self, grid: &Grid, p: Vec2) -> Result<(GridField, GridField)> {
        let gam = self.regular_table(grid, p)?;
        let n = grid.n;
        let g = GridField {
            n,
            data: gam
                .data
                .iter()
                .enumerate()
                .map(|(idx, &v)| {
                    let d = self.torus.dist(grid.node(idx / n, idx % n), p);
                    if d == 0.0 {
                        f64::NAN
                    } else {
                        v - d.ln() / (2.0 * PI)
                    }
                })
                .collect(),
        };
        Ok((g, gam))
    }
}

pub fn madd(a: Mat2, b: Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

/// u₀(x) = −4π Σ G(x, pⱼ) over a vortex multiset.
#[derive(Debug, Clone)]
pub struct VortexPotential {
    /// Distinct vortex locations with multiplicities.
    pub sites: Vec<(Vec2, usize)>,
}

impl VortexPotential {
    pub fn new(torus: &Torus, vortices: &[Vec2]) -> Result<Self> {
        if vortices.is_empty() {
            return Err(Error::Config("vortex list is empty".into()));
        }
        let mut sites: Vec<(Vec2, usize)> = Vec::new();
        for v in vortices {
            let w = torus.wrap(*v);
            match sites.iter_mut().find(|(s, _)| torus.dist(*s, w) < 1e-12) {
                Some(s) => s.1 += 1,
                None => sites.push((w, 1)),
            }
        }
        Ok(VortexPotential { sites })
    }

    pub fn count(&self) -> usize {
        self.sites.iter().map(|s| s.1).sum()
    }

    pub fn value(&self, ev: &GreenEvaluator, x: Vec2) -> Result<f64> {
        let mut s = 0.0;
        for (p, m) in &self.sites {
            s += *m as f64 * ev.green(x, *p)?;
        }
        Ok(-4.0 * PI * s)
    }

    pub fn grad(&self, ev: &GreenEvaluator, x: Vec2) -> Result<Vec2> {
        let mut g = [0.0; 2];
        for (p, m) in &self.sites {
            let d = ev.green_grad(x, *p)?;
            g[0] -= 4.0 * PI * *m as f64 * d[0];
            g[1] -= 4.0 * PI * *m as f64 * d[1];
        }
        Ok(g)
    }

    pub fn hess(&self, ev: &GreenEvaluator, x: Vec2) -> Result<Mat2> {
        let mut h = [[0.0; 2]; 2];
        for (p, m) in &self.sites {
            let d = ev.green_hess(x, *p)?;
            for a in 0..2 {
                for b in 0..2 {
                    h[a][b] -= 4.0 * PI * *m as f64 * d[a][b];
                }
            }
        }
        Ok(h)
    }

    /// Minimum torus distance from x to a vortex.
    pub fn distance(&self, torus: &Torus, x: Vec2) -> f64 {
        self.sites.iter().map(|(p, _)| torus.dist(x, *p)).fold(f64::INFINITY, f64::min)
    }

    /// Samples u₀ on a grid, −∞ at a vortex node.
    pub fn sample_with_poles(&self, ev: &GreenEvaluator, grid: &Grid) -> Result<GridField> {
        let mut f = GridField::zeros(grid.n);
        for (p, m) in &self.sites {
            let (g, _) = ev.table(grid, *p)?;
            let w = -4.0 * PI * *m as f64;
            for (v, g) in f.data.iter_mut().zip(&g.data) {
                *v += if g.is_nan() { f64::NEG_INFINITY } else { w * g };
            }
        }
        Ok(f)
    }

    /// Samples u₀ on a grid; errors if a vortex sits on a node.
    pub fn sample(&self, ev: &GreenEvaluator, grid: &Grid) -> Result<GridField> {
        let f = self.sample_with_poles(ev, grid)?;
        if !f.is_finite() {
            return Err(Error::Singularity("a vortex lies on a grid node".into()));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_part_matches_green_plus_log() {
        let ev = GreenEvaluator::new(Torus::square(), 1e-15).unwrap();
        let x = [0.31, 0.17];
        let p = [0.05, 0.9];
        let r = norm(ev.torus.min_image(sub(x, p)));
        let g = ev.green(x, p).unwrap();
        assert!((ev.green_regular(x, p) - g - r.ln() / (2.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn coincident_points_are_singular() {
        let ev = GreenEvaluator::new(Torus::square(), 1e-15).unwrap();
        assert!(matches!(ev.green([0.2, 0.2], [1.2, 0.2]), Err(Error::Singularity(_))));
    }

    #[test]
    fn analytic_hessian_matches_gradient_differences() {
        let t = Torus::new([1.0, 0.0], [0.3, 1.2]).unwrap();
        let ev = GreenEvaluator::new(t, 1e-15).unwrap();
        let p = [0.1, 0.2];
        let x = [0.45, 0.61];
        let h = ev.green_hess(x, p).unwrap();
        let hr = ev.green_regular_hess(x, p);
        let s = 1e-5;
        for b in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[b] += s;
            xm[b] -= s;
            let gp = ev.green_grad(xp, p).unwrap();
            let gm = ev.green_grad(xm, p).unwrap();
            let rp = ev.green_regular_grad(xp, p);
            let rm = ev.green_regular_grad(xm, p);
            for a in 0..2 {
                assert!(((gp[a] - gm[a]) / (2.0 * s) - h[a][b]).abs() < 1e-7);
                assert!(((rp[a] - rm[a]) / (2.0 * s) - hr[a][b]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn multiplicities_are_merged() {
        let t = Torus::square();
        let v = VortexPotential::new(&t, &[[0.5, 0.5], [1.5, 0.5], [0.2, 0.1]]).unwrap();
        assert_eq!(v.sites.len(), 2);
        assert_eq!(v.count(), 3);
    }
}
