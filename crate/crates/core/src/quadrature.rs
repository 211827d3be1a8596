//! Quadrature on the torus for integrands with sharp peaks at known points.

use crate::special::gl_interval;
use crate::torus::{add, Torus, Vec2};
use rayon::prelude::*;
use std::f64::consts::PI;

fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 1 for r ≤ a, 0 for r ≥ b, C^∞ in between.
pub fn taper(r: f64, a: f64, b: f64) -> f64 {
    if r <= a {
        1.0
    } else if r >= b {
        0.0
    } else {
        let t = (r - a) / (b - a);
        let p = psi(1.0 - t);
        p / (p + psi(t))
    }
}

/// First and second radial derivatives of `taper`.
pub fn taper_derivs(r: f64, a: f64, b: f64) -> (f64, f64) {
    if r <= a || r >= b {
        return (0.0, 0.0);
    }
    // S(t) = p(1−t)/(p(1−t)+p(t)) with p(t) = e^{−1/t}
    let w = b - a;
    let t = (r - a) / w;
    let (u, v) = (1.0 - t, t);
    let pu = psi(u);
    let pv = psi(v);
    // d/dt p(u) = −p(u)/u², d/dt p(v) = p(v)/v²
    let dpu = -pu / (u * u);
    let dpv = pv / (v * v);
    let d2pu = pu * (1.0 / u.powi(4) - 2.0 / u.powi(3));
    let d2pv = pv * (1.0 / v.powi(4) - 2.0 / v.powi(3));
    let den = pu + pv;
    let dden = dpu + dpv;
    let d2den = d2pu + d2pv;
    let s1 = (dpu * den - pu * dden) / (den * den);
    let s2 = (d2pu * den - pu * d2den) / (den * den) - 2.0 * dden * s1 / den;
    (s1 / w, s2 / (w * w))
}

/// A disc where the integrand is resolved in polar coordinates.
#[derive(Debug, Clone)]
pub struct Patch {
    pub center: Vec2,
    /// Radius of a derivative kink (0 if none).
    pub kink: f64,
    /// Length scale of the peak at the center.
    pub scale: f64,
    /// The patch weight is 1 up to `plateau` and vanishes beyond `outer`.
    pub plateau: f64,
    pub outer: f64,
}

impl Patch {
    /// A patch around a bubble of radius `d` and height `mu`, with the taper
    /// placed between 1.05 d and `outer`.
    pub fn bubble(center: Vec2, d: f64, mu: f64, outer: f64) -> Self {
        Patch { center, kink: d, scale: 1.0 / mu, plateau: 1.05 * d, outer }
    }

    fn radial_breaks(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        let lim = if self.kink > 0.0 { self.kink } else { self.plateau };
        let mut r = self.scale.min(lim);
        while r < lim {
            b.push(r);
            r *= 2.0;
        }
        b.push(lim);
        if self.plateau > lim {
            b.push(self.plateau);
        }
        // the taper gets several panels
        let m = 6;
        for i in 1..=m {
            b.push(self.plateau + (self.outer - self.plateau) * i as f64 / m as f64);
        }
        b
    }
}

/// Resolution of `integrate`.
#[derive(Debug, Clone, Copy)]
pub struct QuadLevel {
    pub grid: usize,
    pub angular: usize,
    pub radial: usize,
}

impl QuadLevel {
    pub fn base() -> Self {
        QuadLevel { grid: 128, angular: 64, radial: 12 }
    }

    pub fn refine(self) -> Self {
        QuadLevel { grid: 2 * self.grid, angular: 2 * self.angular, radial: self.radial + 6 }
    }
}

/// ∫_Ω f for a vector of integrands: trapezoid rule on f·(1 − Σχ) and
/// polar Gauss rules on f·χ inside each patch.
pub fn integrate<const K: usize>(
    torus: &Torus,
    patches: &[Patch],
    level: QuadLevel,
    f: impl Fn(Vec2) -> [f64; K] + Sync,
) -> [f64; K] {
    integrate_split(torus, patches, level, |_, x| f(x), &f)
}

/// As `integrate`, with the grid integrand given node index and position so
/// callers can use tabulated values.
pub fn integrate_split<const K: usize>(
    torus: &Torus,
    patches: &[Patch],
    level: QuadLevel,
    grid_f: impl Fn(usize, Vec2) -> [f64; K] + Sync,
    polar_f: impl Fn(Vec2) -> [f64; K] + Sync,
) -> [f64; K] {
    let m = level.grid;
    let h = 1.0 / m as f64;
    let rows: Vec<[f64; K]> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; K];
            for j in 0..m {
                let x = torus.to_cart([i as f64 * h, j as f64 * h]);
                let mut w = 1.0;
                for p in patches {
                    let r = torus.dist(x, p.center);
                    if r < p.outer {
                        w -= taper(r, p.plateau, p.outer);
                    }
                }
                if w > 0.0 {
                    let v = grid_f(i * m + j, x);
                    for k in 0..K {
                        acc[k] += w * v[k];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; K];
    for r in &rows {
        for k in 0..K {
            total[k] += r[k] * h * h;
        }
    }
    for p in patches {
        let br = p.radial_breaks();
        let na = level.angular;
        let dphi = 2.0 * PI / na as f64;
        let panels: Vec<[f64; K]> = br
            .windows(2)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|ab| {
                let mut acc = [0.0; K];
                for (r, wr) in gl_interval(level.radial, ab[0], ab[1]) {
                    let chi = taper(r, p.plateau, p.outer);
                    if chi == 0.0 {
                        continue;
                    }
                    for a in 0..na {
                        let phi = (a as f64 + 0.5) * dphi;
                        let y = add(p.center, [r * phi.cos(), r * phi.sin()]);
                        let v = polar_f(y);
                        for k in 0..K {
                            acc[k] += v[k] * chi * r * wr * dphi;
                        }
                    }
                }
                acc
            })
            .collect();
        for pa in &panels {
            for k in 0..K {
                total[k] += pa[k];
            }
        }
    }
    total
}

/// Refines until two successive levels agree to `rel` in every component.
pub fn integrate_adaptive<const K: usize>(
    torus: &Torus,
    patches: &[Patch],
    rel: f64,
    max_grid: usize,
    f: impl Fn(Vec2) -> [f64; K] + Sync,
) -> ([f64; K], QuadLevel, f64) {
    refine_until(rel, max_grid, |level| integrate(torus, patches, level, &f))
}

/// Drives `eval` through successive levels until two agree to `rel`.
pub fn refine_until<const K: usize>(
    rel: f64,
    max_grid: usize,
    mut eval: impl FnMut(QuadLevel) -> [f64; K],
) -> ([f64; K], QuadLevel, f64) {
    let mut level = QuadLevel::base();
    let mut prev = eval(level);
    loop {
        let next_level = level.refine();
        let next = eval(next_level);
        let mut worst: f64 = 0.0;
        for k in 0..K {
            worst = worst.max((next[k] - prev[k]).abs() / next[k].abs().max(1e-300));
        }
        if worst < rel || next_level.grid >= max_grid {
            return (next, next_level, worst);
        }
        prev = next;
        level = next_level;
    }
}

/// ∫₀ᴿ r ln r dr.
pub fn r_log_r(r: f64) -> f64 {
    0.5 * r * r * r.ln() - 0.25 * r * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taper_derivatives_match_differences() {
        let (a, b) = (0.1, 0.4);
        for r in [0.12, 0.2, 0.33, 0.39] {
            let s = 1e-5;
            let (d1, d2) = taper_derivs(r, a, b);
            let fd1 = (taper(r + s, a, b) - taper(r - s, a, b)) / (2.0 * s);
            let fd2 = (taper(r + s, a, b) - 2.0 * taper(r, a, b) + taper(r - s, a, b)) / (s * s);
            assert!((d1 - fd1).abs() < 1e-7 * (1.0 + d1.abs()));
            assert!((d2 - fd2).abs() < 1e-3 * (1.0 + d2.abs()));
        }
    }

    #[test]
    fn integrates_peaked_bubble() {
        let t = Torus::square();
        let c = [0.3, 0.6];
        let mu = 200.0;
        let patch = Patch::bubble(c, 0.1, mu, 0.15);
        let bump = |r: f64| 8.0 * mu * mu / (1.0 + mu * mu * r * r).powi(2) * taper(r, 0.2, 0.4);
        let f = |x: Vec2| [bump(t.dist(x, c)), 1.0];
        let (v, _, err) = integrate_adaptive(&t, &[patch], 1e-10, 1024, f);
        assert!(err < 1e-10, "{err}");
        assert!((v[1] - 1.0).abs() < 1e-12);
        let mut exact = 0.0;
        let mut a = 0.0;
        let mut b: f64 = 1e-3;
        while a < 0.4 {
            for (r, w) in gl_interval(20, a, b.min(0.4)) {
                exact += 2.0 * PI * w * r * bump(r);
            }
            a = b;
            b *= 1.5;
        }
        assert!((v[0] - exact).abs() < 1e-9 * exact, "{} {}", v[0], exact);
    }
}
