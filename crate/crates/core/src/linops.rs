//! The simplified linear operator L_μ, its approximate kernel, the projection
//! Q_μ, weighted norms and the projected solve.
//!
//! Kernel and range pairs have equal components, so each is stored as one field
//! standing for the pair (f, f).

use crate::bubble::{liouville_radial, BubbleParams};
use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid, GridField};
use crate::krylov::{gmres, pcg, KrylovOptions, KrylovStats};
use crate::quadrature::{taper, taper_derivs};
use crate::torus::{sub, Torus, Vec2};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// W = Σⱼ 1_{B_{dⱼ}(xⱼ)} e^{V_{xⱼ,μⱼ}} on the grid.
pub fn coupling_weight(grid: &Grid, params: &BubbleParams) -> GridField {
    let t = &grid.torus;
    grid.sample(|y| {
        let mut w = 0.0;
        for j in 0..params.k() {
            let r = t.dist(y, params.centers[j]);
            if r < params.radii[j] {
                w += liouville_radial(params.mus[j], r).exp();
            }
        }
        w
    })
}

/// L(v₁, v₂) = (Δv₁ + Wv₂, Δv₂ + Wv₁).
pub fn apply_l(grid: &Grid, w: &GridField, v: &FieldPair) -> FieldPair {
    let l0 = grid.laplacian(&v[0]);
    let l1 = grid.laplacian(&v[1]);
    [l0.add(&w.zip(&v[1], |a, b| a * b)), l1.add(&w.zip(&v[0], |a, b| a * b))]
}

/// (ℒ₁(v₁+v₂), ℒ₂(v₁−v₂)) with ℒ₁ = Δ + W and ℒ₂ = Δ − W.
pub fn split_apply(grid: &Grid, w: &GridField, v: &FieldPair) -> (GridField, GridField) {
    let s = v[0].add(&v[1]);
    let d = v[0].sub(&v[1]);
    (channel(grid, w, &s, 1.0), channel(grid, w, &d, -1.0))
}

fn channel(grid: &Grid, w: &GridField, f: &GridField, sign: f64) -> GridField {
    grid.laplacian(f).add(&w.zip(f, |a, b| sign * a * b))
}

/// Undoes `split_apply`: L v = ((a + b)/2, (a − b)/2).
pub fn recombine(sum: &GridField, diff: &GridField) -> FieldPair {
    [sum.add(diff).scaled(0.5), sum.sub(diff).scaled(0.5)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    /// Denominators 1 + μ²|y − x|² (the Liouville kernel scaling).
    #[default]
    Standard,
    /// Denominators 1 + μ|y − x|².
    Verbatim,
}

/// Radial and Cartesian pieces of one kernel element around a center.
#[derive(Debug, Clone, Copy)]
struct Bump {
    center: Vec2,
    mu: f64,
    d: f64,
    variant: KernelVariant,
}

impl Bump {
    fn m(&self) -> f64 {
        match self.variant {
            KernelVariant::Standard => self.mu * self.mu,
            KernelVariant::Verbatim => self.mu,
        }
    }

    /// χ(r)·2/(μ(1 + m r²)) and its Laplacian.
    fn dilation(&self, r: f64) -> (f64, f64) {
        let m = self.m();
        let q = 1.0 + m * r * r;
        let g = 2.0 / (self.mu * q);
        let g1 = -4.0 * m * r / (self.mu * q * q);
        // g'' + g'/r
        let lap_g = -8.0 * m * (1.0 - m * r * r) / (self.mu * q * q * q);
        let chi = taper(r, self.d, 2.0 * self.d);
        let (c1, c2) = taper_derivs(r, self.d, 2.0 * self.d);
        let lap_chi = if r > 0.0 { c2 + c1 / r } else { 0.0 };
        (chi * g, chi * lap_g + 2.0 * c1 * g1 + g * lap_chi)
    }

    /// χ(r)·μ²zᵢ/(1 + m r²) for displacement z.
    fn translation(&self, z: Vec2, i: usize) -> f64 {
        let r2 = z[0] * z[0] + z[1] * z[1];
        taper(r2.sqrt(), self.d, 2.0 * self.d) * self.mu * self.mu * z[i] / (1.0 + self.m() * r2)
    }
}

/// Approximate kernel Y₀, Y_{i,j} and Z = ΔY, with the Gram matrix ⟨Z_a, Y_b⟩.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    /// Y₀ first, then Y_{1,j}, Y_{2,j} for j = 1..k.
    pub y: Vec<GridField>,
    pub z: Vec<GridField>,
    /// gram[(b, a)] = ∫⟨Z_a pair, Y_b pair⟩.
    pub gram: DMatrix<f64>,
    pub gram_condition: f64,
    pub variant: KernelVariant,
}

fn check_supports(torus: &Torus, params: &BubbleParams) -> Result<()> {
    let k = params.k();
    for i in 0..k {
        if 2.0 * params.radii[i] >= torus.injectivity_radius() {
            return Err(Error::Config(format!(
                "cutoff support 2d = {:.4} reaches the injectivity radius {:.4}",
                2.0 * params.radii[i],
                torus.injectivity_radius()
            )));
        }
        for j in i + 1..k {
            if torus.dist(params.centers[i], params.centers[j]) <= 2.0 * (params.radii[i] + params.radii[j]) {
                return Err(Error::Config(format!("cutoff supports B(x, 2d) of bubbles {i} and {j} overlap")));
            }
        }
    }
    Ok(())
}

fn bumps(params: &BubbleParams, variant: KernelVariant) -> Vec<Bump> {
    (0..params.k())
        .map(|j| Bump { center: params.centers[j], mu: params.mus[j], d: params.radii[j], variant })
        .collect()
}

impl KernelBasis {
    pub fn new(grid: &Grid, params: &BubbleParams, variant: KernelVariant) -> Result<Self> {
        let t = &grid.torus;
        check_supports(t, params)?;
        let b = bumps(params, variant);
        let mut y = vec![y0_field(grid, params, variant)];
        for bj in &b {
            for i in 0..2 {
                y.push(grid.sample(|p| bj.translation(t.min_image(sub(p, bj.center)), i)));
            }
        }
        let z: Vec<GridField> = y.iter().map(|f| grid.laplacian(f)).collect();
        let m = y.len();
        let gram = DMatrix::from_fn(m, m, |bi, a| 2.0 * z[a].inner(&y[bi]));
        let sv = gram.clone().singular_values();
        let gram_condition = sv.max() / sv.min();
        if !gram_condition.is_finite() || gram_condition > 1e14 {
            return Err(Error::Degenerate(format!("kernel Gram matrix condition number {gram_condition:.3e}")));
        }
        Ok(KernelBasis { y, z, gram, gram_condition, variant })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// ⟨v, (f, f)⟩ = ∫(v₁ + v₂) f.
    fn pairing(v: &FieldPair, f: &GridField) -> f64 {
        v[0].inner(f) + v[1].inner(f)
    }

    /// Solves gram·c = rhs with the columns rescaled to unit norm.
    fn gram_solve(m: &DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
        let s: Vec<f64> = (0..m.ncols()).map(|c| m.column(c).norm()).collect();
        let ms = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] / s[c]);
        let x = ms.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("singular kernel Gram matrix".into()))?;
        Ok(DVector::from_iterator(x.len(), x.iter().zip(&s).map(|(v, sc)| v / sc)))
    }

    /// Q u = u − c₀Z₀ − Σc_{i,j}Z_{i,j} with all Y-pairings of Q u zero.
    pub fn project_q(&self, u: &FieldPair) -> Result<(FieldPair, Vec<f64>)> {
        let rhs = DVector::from_iterator(self.len(), self.y.iter().map(|yb| Self::pairing(u, yb)));
        let c = Self::gram_solve(&self.gram, rhs)?;
        let mut out = u.clone();
        for (a, za) in self.z.iter().enumerate() {
            out[0].axpy(-c[a], za);
            out[1].axpy(-c[a], za);
        }
        Ok((out, c.iter().copied().collect()))
    }

    /// ω − Σb_aY_a with all Z-pairings zero, i.e. the nearest element of E.
    pub fn project_e(&self, v: &FieldPair) -> Result<(FieldPair, Vec<f64>)> {
        let rhs = DVector::from_iterator(self.len(), self.z.iter().map(|zb| Self::pairing(v, zb)));
        let c = Self::gram_solve(&self.gram.transpose(), rhs)?;
        let mut out = v.clone();
        for (a, ya) in self.y.iter().enumerate() {
            out[0].axpy(-c[a], ya);
            out[1].axpy(-c[a], ya);
        }
        Ok((out, c.iter().copied().collect()))
    }

    /// Largest |⟨v, Y_b⟩| / (‖v‖‖Y_b‖), 0 for membership in F.
    pub fn range_violation(&self, v: &FieldPair) -> f64 {
        let vn = (v[0].inner(&v[0]) + v[1].inner(&v[1])).sqrt().max(f64::MIN_POSITIVE);
        self.y
            .iter()
            .map(|yb| Self::pairing(v, yb).abs() / (vn * (2.0 * yb.inner(yb)).sqrt()))
            .fold(0.0, f64::max)
    }

    /// Largest |⟨v, Z_b⟩| / (‖v‖‖Z_b‖), 0 for membership in E.
    pub fn kernel_violation(&self, v: &FieldPair) -> f64 {
        let vn = (v[0].inner(&v[0]) + v[1].inner(&v[1])).sqrt().max(f64::MIN_POSITIVE);
        self.z
            .iter()
            .map(|zb| Self::pairing(v, zb).abs() / (vn * (2.0 * zb.inner(zb)).sqrt()))
            .fold(0.0, f64::max)
    }
}

/// The dilation element Y₀ alone.
pub fn y0_field(grid: &Grid, params: &BubbleParams, variant: KernelVariant) -> GridField {
    let t = &grid.torus;
    let b = bumps(params, variant);
    let scale: Vec<f64> = params.rho.iter().map(|r| (params.rho[0] / r).sqrt()).collect();
    grid.sample(|p| {
        let mut v = -1.0 / params.mus[0];
        for (i, bi) in b.iter().enumerate() {
            v += scale[i] * bi.dilation(t.dist(p, bi.center)).0;
        }
        v
    })
}

/// L(Y₀) evaluated with the exact Laplacian of Y₀ at the given points (first component).
pub fn l_y0_pointwise(torus: &Torus, params: &BubbleParams, variant: KernelVariant, points: &[Vec2]) -> Vec<f64> {
    let b = bumps(params, variant);
    let scale: Vec<f64> = params.rho.iter().map(|r| (params.rho[0] / r).sqrt()).collect();
    points
        .par_iter()
        .map(|&p| {
            let mut val = -1.0 / params.mus[0];
            let mut lap = 0.0;
            let mut w = 0.0;
            for (i, bi) in b.iter().enumerate() {
                let r = torus.dist(p, bi.center);
                let (g, lg) = bi.dilation(r);
                val += scale[i] * g;
                lap += scale[i] * lg;
                if r < bi.d {
                    w += liouville_radial(bi.mu, r).exp();
                }
            }
            lap + w * val
        })
        .collect()
}

/// α and the per-bubble windows of the X/Y norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedNormCfg {
    pub alpha: f64,
    pub centers: Vec<Vec2>,
    pub mus: Vec<f64>,
    pub radii: Vec<f64>,
}

impl WeightedNormCfg {
    pub fn new(params: &BubbleParams, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Ok(WeightedNormCfg { alpha, centers: params.centers.clone(), mus: params.mus.clone(), radii: params.radii.clone() })
    }

    fn rho(&self, s: f64) -> f64 {
        (1.0 + s).powf(1.0 + 0.5 * self.alpha)
    }

    fn rho_hat(&self, s: f64) -> f64 {
        1.0 / ((1.0 + s) * (2.0 + s).ln().powf(1.0 + 0.5 * self.alpha))
    }

    /// Window j containing node x (|x − xⱼ| < 2dⱼ), with the rescaled radius.
    fn window(&self, torus: &Torus, x: Vec2) -> Option<(usize, f64)> {
        (0..self.centers.len()).find_map(|j| {
            let r = torus.dist(x, self.centers[j]);
            (r < 2.0 * self.radii[j]).then(|| (j, self.mus[j] * r))
        })
    }

    fn in_core(&self, torus: &Torus, x: Vec2) -> bool {
        (0..self.centers.len()).any(|j| torus.dist(x, self.centers[j]) < self.radii[j])
    }

    /// Windows use y = μⱼ(x − xⱼ), so ‖Δξ̃ρ‖² = μ⁻²∫|Δξ|²ρ² dx and ‖ξ̃ρ̂‖² = μ²∫ξ²ρ̂² dx on B_{2dⱼ}(xⱼ).
    pub fn norm_x(&self, grid: &Grid, v: &FieldPair) -> f64 {
        let lap = [grid.laplacian(&v[0]), grid.laplacian(&v[1])];
        let n = grid.n;
        let total = row_sums(n, |idx| {
                let x = grid.node(idx / n, idx % n);
                let mut s = 0.0;
                if let Some((j, y)) = self.window(&grid.torus, x) {
                    let mu = self.mus[j];
                    let (a, b) = (self.rho(y).powi(2) / (mu * mu), self.rho_hat(y).powi(2) * mu * mu);
                    for i in 0..2 {
                        s += a * lap[i].data[idx].powi(2) + b * v[i].data[idx].powi(2);
                    }
                }
                if !self.in_core(&grid.torus, x) {
                    for i in 0..2 {
                        s += lap[i].data[idx].powi(2) + v[i].data[idx].powi(2);
                    }
                }
                s
            });
        (total / (n * n) as f64).sqrt()
    }

    /// μ⁻⁴‖ξ̃ρ‖² = μ⁻²∫ξ²ρ² dx on each window, plus ∫ξ² off the cores.
    pub fn norm_y(&self, grid: &Grid, v: &FieldPair) -> f64 {
        let n = grid.n;
        let total = row_sums(n, |idx| {
                let x = grid.node(idx / n, idx % n);
                let sq = v[0].data[idx].powi(2) + v[1].data[idx].powi(2);
                let mut s = 0.0;
                if let Some((j, y)) = self.window(&grid.torus, x) {
                    s += self.rho(y).powi(2) / self.mus[j].powi(2) * sq;
                }
                if !self.in_core(&grid.torus, x) {
                    s += sq;
                }
                s
            });
        (total / (n * n) as f64).sqrt()
    }
}

/// Σ f(idx) over an n×n grid, summed row by row so the result does not depend on scheduling.
fn row_sums(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let rows: Vec<f64> = (0..n).into_par_iter().map(|i| (i * n..(i + 1) * n).map(&f).sum()).collect();
    rows.iter().sum()
}

pub fn sup_norm(v: &FieldPair) -> f64 {
    v[0].max_abs().max(v[1].max_abs())
}

/// Result of the bordered solve.
#[derive(Debug, Clone)]
pub struct ProjectedSolution {
    pub omega: FieldPair,
    /// Lω − rhs = Σ c_a Z_a.
    pub multipliers: Vec<f64>,
    pub stats: [KrylovStats; 2],
    /// ‖Lω − rhs − ΣcZ‖ / ‖rhs‖ on the grid.
    pub residual: f64,
    /// Largest normalized Z-pairing of ω.
    pub constraint: f64,
}

/// Solves Lω = rhs + Σc_aZ_a with ⟨ω, Z_a⟩ = 0.
///
/// The sum channel carries the bordered system with right preconditioner
/// (Δ − 1)⁻¹; the difference channel ℒ₂ is negative definite and uses CG.
pub fn solve_projected(
    grid: &Grid,
    w: &GridField,
    basis: &KernelBasis,
    rhs: &FieldPair,
    opts: KrylovOptions,
) -> Result<ProjectedSolution> {
    let n2 = grid.len();
    let m = basis.len();
    let nn = (n2 as f64).sqrt();
    let zn: Vec<f64> = basis.z.iter().map(|z| z.l2()).collect();
    let hs = rhs[0].add(&rhs[1]);
    let hd = rhs[0].sub(&rhs[1]);
    let field = |x: &[f64]| GridField { n: grid.n, data: x.to_vec() };

    // unknowns: preconditioned sum-channel field, then scaled multipliers c'_a = c_a‖Z_a‖
    let apply = |x: &[f64]| -> Vec<f64> {
        let p = grid.shifted_inverse(&field(&x[..n2]), 1.0);
        // Δp = s + p since (Δ − 1)p = s
        let mut top: Vec<f64> = x[..n2].iter().zip(&p.data).zip(&w.data).map(|((s, pv), wv)| s + pv + wv * pv).collect();
        for a in 0..m {
            let c = 2.0 * x[n2 + a] / zn[a];
            top.iter_mut().zip(&basis.z[a].data).for_each(|(t, z)| *t -= c * z);
        }
        let mut out: Vec<f64> = top.iter().map(|t| t / nn).collect();
        for a in 0..m {
            out.push(p.inner(&basis.z[a]) / zn[a]);
        }
        out
    };
    let mut b: Vec<f64> = hs.data.iter().map(|v| v / nn).collect();
    b.extend(std::iter::repeat_n(0.0, m));
    let (x, st_s) = gmres(apply, &b, opts)?;
    let s = grid.shifted_inverse(&field(&x[..n2]), 1.0);
    let multipliers: Vec<f64> = (0..m).map(|a| x[n2 + a] / zn[a]).collect();

    // −ℒ₂ = −Δ + W, preconditioned by (1 − Δ)⁻¹
    let neg_l2 = |x: &[f64]| -> Vec<f64> {
        let f = field(x);
        let l = grid.laplacian(&f);
        l.data.iter().zip(x).zip(&w.data).map(|((lv, xv), wv)| -lv + wv * xv).collect()
    };
    let prec = |r: &[f64]| grid.shifted_inverse(&field(r), 1.0).data.iter().map(|v| -v).collect();
    let neg_hd: Vec<f64> = hd.data.iter().map(|v| -v).collect();
    let (dv, st_d) = pcg(neg_l2, prec, &neg_hd, opts)?;
    let d = field(&dv);

    let omega = recombine(&s, &d);
    let lw = apply_l(grid, w, &omega);
    let mut res = [lw[0].sub(&rhs[0]), lw[1].sub(&rhs[1])];
    for (a, z) in basis.z.iter().enumerate() {
        res[0].axpy(-multipliers[a], z);
        res[1].axpy(-multipliers[a], z);
    }
    let rn = (rhs[0].inner(&rhs[0]) + rhs[1].inner(&rhs[1])).sqrt().max(f64::MIN_POSITIVE);
    let residual = (res[0].inner(&res[0]) + res[1].inner(&res[1])).sqrt() / rn;
    let constraint = basis.kernel_violation(&omega);
    Ok(ProjectedSolution { omega, multipliers, stats: [st_s, st_d], residual, constraint })
}

/// Smallest eigenvalue of −ℒ₂ = −Δ + W by inverse iteration.
pub fn difference_channel_min_eigen(grid: &Grid, w: &GridField, iters: usize) -> Result<f64> {
    let field = |x: &[f64]| GridField { n: grid.n, data: x.to_vec() };
    let op = |x: &[f64]| -> Vec<f64> {
        let l = grid.laplacian(&field(x));
        l.data.iter().zip(x).zip(&w.data).map(|((lv, xv), wv)| -lv + wv * xv).collect()
    };
    let prec = |r: &[f64]| grid.shifted_inverse(&field(r), 1.0).data.iter().map(|v| -v).collect::<Vec<f64>>();
    let mut v = vec![1.0; grid.len()];
    let mut lambda = f64::NAN;
    for _ in 0..iters {
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= nv);
        let (u, _) = pcg(op, prec, &v, KrylovOptions { tol: 1e-10, ..Default::default() })?;
        let av = op(&u);
        let num: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
        let den: f64 = u.iter().map(|a| a * a).sum();
        let next = num / den;
        let done = (next - lambda).abs() < 1e-10 * next.abs();
        lambda = next;
        v = u;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// Deterministic probe fields: bubble-scale and smooth bumps with random signs.
pub fn probe_fields(grid: &Grid, params: &BubbleParams, count: usize, seed: u64) -> Vec<FieldPair> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = &grid.torus;
    (0..count)
        .map(|_| {
            let mut terms: Vec<(Vec2, f64, [f64; 2])> = Vec::new();
            for j in 0..params.k() {
                for scale in [1.0, 4.0, 16.0] {
                    let w = scale / params.mus[j];
                    let off = [rng.gen_range(-1.0..1.0) * w, rng.gen_range(-1.0..1.0) * w];
                    terms.push((sub(params.centers[j], off), w, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]));
                }
            }
            for _ in 0..3 {
                let c = t.to_cart([rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
                terms.push((c, 0.15, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]));
            }
            let f = |comp: usize| {
                grid.sample(|x| {
                    terms
                        .iter()
                        .map(|(c, w, a)| {
                            let r = t.dist(x, *c) / w;
                            a[comp] * (-0.5 * r * r).exp() / (w * w)
                        })
                        .sum()
                })
            };
            [f(0), f(1)]
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub mu: f64,
    pub bound: f64,
    pub bound_over_log: f64,
    /// max ‖Q h‖_Y / ‖h‖_Y over the probes.
    pub projection_constant: f64,
    pub iterations: usize,
}

/// (‖ω‖∞ + ‖ω‖_X)/‖h‖_Y maximized over projected probes h, for one μ.
pub fn inverse_bound_at(
    grid: &Grid,
    params: &BubbleParams,
    alpha: f64,
    probes: usize,
    seed: u64,
    opts: KrylovOptions,
) -> Result<BoundRow> {
    let w = coupling_weight(grid, params);
    let basis = KernelBasis::new(grid, params, KernelVariant::Standard)?;
    let cfg = WeightedNormCfg::new(params, alpha)?;
    let mut bound: f64 = 0.0;
    let mut proj: f64 = 0.0;
    let mut iterations = 0;
    for u in probe_fields(grid, params, probes, seed) {
        let (h, _) = basis.project_q(&u)?;
        proj = proj.max(cfg.norm_y(grid, &h) / cfg.norm_y(grid, &u));
        let sol = solve_projected(grid, &w, &basis, &h, opts)?;
        iterations += sol.stats[0].iterations + sol.stats[1].iterations;
        let ratio = (sup_norm(&sol.omega) + cfg.norm_x(grid, &sol.omega)) / cfg.norm_y(grid, &h);
        bound = bound.max(ratio);
    }
    let mu = params.mu;
    Ok(BoundRow { mu, bound, bound_over_log: bound / mu.ln(), projection_constant: proj, iterations })
}
