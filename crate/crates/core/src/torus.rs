//! Flat torus geometry.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

/// A point on the torus, stored by its canonical Cartesian representative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(pub Vec2);

/// ℝ² modulo the lattice spanned by `a`, rescaled to unit area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Torus {
    /// User basis after rescaling; fractional coordinates and grids refer to it.
    pub a: [Vec2; 2],
    /// Dual basis with a_i · b_j = 2π δ_ij.
    pub b: [Vec2; 2],
    /// Gauss-reduced basis, used for minimum-image searches.
    pub reduced: [Vec2; 2],
    /// Factor applied to input lengths.
    pub length_scale: f64,
    inv: [[f64; 2]; 2],
    inv_reduced: [[f64; 2]; 2],
}

impl Torus {
    /// Builds the torus from two lattice vectors, rescaling so that |Ω| = 1.
    pub fn new(a1: Vec2, a2: Vec2) -> Result<Self> {
        let det = a1[0] * a2[1] - a1[1] * a2[0];
        if !det.is_finite() || det.abs() <= 1e-12 * norm(a1) * norm(a2) {
            return Err(Error::Config(format!(
                "lattice vectors {a1:?} and {a2:?} are linearly dependent"
            )));
        }
        let s = 1.0 / det.abs().sqrt();
        let a = [scale(s, a1), scale(s, a2)];
        let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        // rows of inv map Cartesian to fractional coordinates
        let inv = [[a[1][1] / d, -a[1][0] / d], [-a[0][1] / d, a[0][0] / d]];
        let b = [scale(2.0 * PI, inv[0]), scale(2.0 * PI, inv[1])];
        let reduced = gauss_reduce(a[0], a[1]);
        let r = reduced;
        let dr = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        let inv_reduced = [[r[1][1] / dr, -r[1][0] / dr], [-r[0][1] / dr, r[0][0] / dr]];
        Ok(Torus { a, b, reduced, length_scale: s, inv, inv_reduced })
    }

    pub fn square() -> Self {
        Torus::new([1.0, 0.0], [0.0, 1.0]).expect("square lattice")
    }

    pub fn area(&self) -> f64 {
        (self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]).abs()
    }

    pub fn to_cart(&self, f: Vec2) -> Vec2 {
        add(scale(f[0], self.a[0]), scale(f[1], self.a[1]))
    }

    pub fn to_frac(&self, x: Vec2) -> Vec2 {
        [dot(self.inv[0], x), dot(self.inv[1], x)]
    }

    /// Canonical representative in the half-open fundamental parallelogram.
    pub fn wrap(&self, x: Vec2) -> Vec2 {
        let f = self.to_frac(x);
        let mut g = [f[0] - f[0].floor(), f[1] - f[1].floor()];
        for c in g.iter_mut() {
            if *c >= 1.0 {
                *c = 0.0;
            }
        }
        self.to_cart(g)
    }

    pub fn point(&self, x: Vec2) -> TorusPoint {
        TorusPoint(self.wrap(x))
    }

    pub fn point_frac(&self, f: Vec2) -> TorusPoint {
        self.point(self.to_cart(f))
    }

    /// Shortest representative of a displacement.
    pub fn min_image(&self, d: Vec2) -> Vec2 {
        let r = &self.reduced;
        let f = [dot(self.inv_reduced[0], d), dot(self.inv_reduced[1], d)];
        let base = sub(d, add(scale(f[0].round(), r[0]), scale(f[1].round(), r[1])));
        let mut best = base;
        let mut bn = dot(base, base);
        for i in -1..=1 {
            for j in -1..=1 {
                if i == 0 && j == 0 {
                    continue;
                }
                let c = sub(base, add(scale(i as f64, r[0]), scale(j as f64, r[1])));
                let cn = dot(c, c);
                if cn < bn {
                    bn = cn;
                    best = c;
                }
            }
        }
        best
    }

    pub fn dist(&self, x: Vec2, p: Vec2) -> f64 {
        norm(self.min_image(sub(x, p)))
    }

    pub fn shortest_vector(&self) -> f64 {
        norm(self.reduced[0]).min(norm(self.reduced[1]))
    }

    /// Half the shortest lattice vector.
    pub fn injectivity_radius(&self) -> f64 {
        0.5 * self.shortest_vector()
    }

    /// Lattice vectors of length at most `radius`.
    pub fn lattice_within(&self, radius: f64) -> Vec<Vec2> {
        enumerate_within(&self.reduced, radius)
    }

    /// Dual lattice vectors of length at most `radius`, origin excluded.
    pub fn dual_within(&self, radius: f64) -> Vec<Vec2> {
        let rb = gauss_reduce(self.b[0], self.b[1]);
        enumerate_within(&rb, radius)
            .into_iter()
            .filter(|k| dot(*k, *k) > 0.0)
            .collect()
    }

    /// Circumradius of the Wigner-Seitz cell.
    pub fn covering_radius(&self) -> f64 {
        let u = self.reduced[0];
        let mut v = self.reduced[1];
        if dot(u, v) < 0.0 {
            v = scale(-1.0, v);
        }
        let w = sub(u, v);
        let area2 = (u[0] * v[1] - u[1] * v[0]).abs();
        norm(u) * norm(v) * norm(w) / (2.0 * area2)
    }
}

fn gauss_reduce(mut u: Vec2, mut v: Vec2) -> [Vec2; 2] {
    if dot(u, u) > dot(v, v) {
        std::mem::swap(&mut u, &mut v);
    }
    loop {
        let m = (dot(u, v) / dot(u, u)).round();
        v = sub(v, scale(m, u));
        if dot(v, v) >= dot(u, u) {
            break;
        }
        std::mem::swap(&mut u, &mut v);
    }
    [u, v]
}

fn enumerate_within(r: &[Vec2; 2], radius: f64) -> Vec<Vec2> {
    let det = (r[0][0] * r[1][1] - r[0][1] * r[1][0]).abs();
    // |n_i| <= radius * |r_j| / det bounds every lattice point in the disc
    let n0 = (radius * norm(r[1]) / det).ceil() as i64 + 1;
    let n1 = (radius * norm(r[0]) / det).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -n0..=n0 {
        for j in -n1..=n1 {
            let v = add(scale(i as f64, r[0]), scale(j as f64, r[1]));
            if dot(v, v) <= radius * radius {
                out.push(v);
            }
        }
    }
    out
}
