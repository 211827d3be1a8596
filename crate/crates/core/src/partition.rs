//! Torus Voronoi (and power) cells around bubble centers.

use crate::error::{Error, Result};
use crate::torus::{dot, norm, sub, Torus, Vec2};
use serde::{Deserialize, Serialize};

/// A convex cell in coordinates centered at its site; vertices counterclockwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub center: Vec2,
    pub vertices: Vec<Vec2>,
}

/// One polygon edge seen from the site: unit normal angle φ₀, distance h and
/// the angular range [φa, φb] (φb > φa) it subtends.
#[derive(Debug, Clone, Copy)]
pub struct EdgeView {
    pub phi0: f64,
    pub h: f64,
    pub phi_a: f64,
    pub phi_b: f64,
}

impl Cell {
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let mut s = 0.0;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            s += a[0] * b[1] - a[1] * b[0];
        }
        0.5 * s
    }

    pub fn edges(&self) -> Vec<EdgeView> {
        let v = &self.vertices;
        let mut out = Vec::with_capacity(v.len());
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            let e = sub(b, a);
            let len = norm(e);
            // outward normal of a counterclockwise polygon
            let nrm = [e[1] / len, -e[0] / len];
            let h = dot(nrm, a);
            let phi0 = nrm[1].atan2(nrm[0]);
            let mut phi_a = a[1].atan2(a[0]);
            let mut phi_b = b[1].atan2(b[0]);
            // keep the range within (−π, π] around φ₀
            let wrap = |x: f64| {
                let mut d = x - phi0;
                while d <= -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                phi0 + d
            };
            phi_a = wrap(phi_a);
            phi_b = wrap(phi_b);
            out.push(EdgeView { phi0, h, phi_a, phi_b });
        }
        out
    }

    /// Distance from the site to the nearest edge.
    pub fn inradius(&self) -> f64 {
        self.edges().iter().map(|e| e.h).fold(f64::INFINITY, f64::min)
    }

    /// Distance from the site to the farthest vertex.
    pub fn circumradius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    /// ∫_{ℝ²∖cell} |y|⁻⁴ dy, exact: each edge contributes ∫cos²(φ−φ₀)/(2h²) dφ.
    pub fn exterior_inverse_quartic(&self) -> f64 {
        self.edges()
            .iter()
            .map(|e| {
                let f = |t: f64| 0.5 * t + 0.25 * (2.0 * t).sin();
                (f(e.phi_b - e.phi0) - f(e.phi_a - e.phi0)) / (2.0 * e.h * e.h)
            })
            .sum()
    }
}

/// Cells Ω₁..Ω_k covering the torus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellPartition {
    pub cells: Vec<Cell>,
    pub weights: Vec<f64>,
}

impl CellPartition {
    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    /// B_{dⱼ}(qⱼ) ⊂⊂ Ωⱼ for every j.
    pub fn contains_balls(&self, radii: &[f64]) -> bool {
        self.cells.iter().zip(radii).all(|(c, d)| c.inradius() > *d)
    }
}

/// Clips a convex polygon to {y : y·v ≤ c}.
fn clip(poly: &[Vec2], v: Vec2, c: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let side = |p: Vec2| dot(p, v) - c;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sa, sb) = (side(a), side(b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn dedupe(poly: Vec<Vec2>, tol: f64) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(poly.len());
    for p in poly {
        if out.last().is_none_or(|q| norm(sub(p, *q)) > tol) {
            out.push(p);
        }
    }
    while out.len() > 1 && norm(sub(out[0], *out.last().unwrap())) <= tol {
        out.pop();
    }
    out
}

/// Power cells {x : |x−qⱼ|² − wⱼ ≤ |x−q_l−n|² − w_l}; zero weights give the
/// Voronoi cells. Equidistant points go to both neighbors' boundaries, so ties
/// need no rule beyond distinct centers.
pub fn power_partition(torus: &Torus, q: &[Vec2], w: &[f64]) -> Result<CellPartition> {
    if q.is_empty() || q.len() != w.len() {
        return Err(Error::Config("partition needs one weight per center".into()));
    }
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            if torus.dist(q[i], q[j]) < 1e-12 {
                return Err(Error::Singularity(format!("centers {i} and {j} coincide")));
            }
        }
    }
    let rc = torus.covering_radius();
    let images = torus.lattice_within(3.0 * rc + 1e-9);
    let mut cells = Vec::with_capacity(q.len());
    for j in 0..q.len() {
        let big = 4.0 * rc;
        let mut poly = vec![[-big, -big], [big, -big], [big, big], [-big, big]];
        for l in 0..q.len() {
            let base = torus.min_image(sub(q[l], q[j]));
            for n in &images {
                let v = [base[0] + n[0], base[1] + n[1]];
                if dot(v, v) < 1e-24 {
                    continue;
                }
                poly = clip(&poly, v, 0.5 * (dot(v, v) + w[j] - w[l]));
                if poly.len() < 3 {
                    return Err(Error::Degenerate(format!("cell {j} is empty for weights {w:?}")));
                }
            }
        }
        let poly = dedupe(poly, 1e-13);
        cells.push(Cell { center: q[j], vertices: poly });
    }
    let part = CellPartition { cells, weights: w.to_vec() };
    let a = part.total_area();
    if (a - torus.area()).abs() > 1e-9 {
        return Err(Error::Degenerate(format!("cells cover area {a}, expected {}", torus.area())));
    }
    Ok(part)
}

pub fn voronoi_partition(torus: &Torus, q: &[Vec2]) -> Result<CellPartition> {
    power_partition(torus, q, &vec![0.0; q.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_is_the_whole_torus() {
        let t = Torus::new([1.0, 0.0], [0.4, 0.8]).unwrap();
        let p = voronoi_partition(&t, &[[0.2, 0.3]]).unwrap();
        assert!((p.cells[0].area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exterior_integral_of_a_square() {
        // square of half-side s: ∫ outside |y|⁻⁴ = 4∫_{-π/4}^{π/4} cos²φ/(2s²) dφ
        let s: f64 = 0.5;
        let c = Cell { center: [0.0, 0.0], vertices: vec![[-s, -s], [s, -s], [s, s], [-s, s]] };
        let expect = 4.0 * ((std::f64::consts::PI / 4.0) + 0.5) / (2.0 * s * s);
        assert!((c.exterior_inverse_quartic() - expect).abs() < 1e-12);
        assert!((c.inradius() - s).abs() < 1e-15);
    }
}
