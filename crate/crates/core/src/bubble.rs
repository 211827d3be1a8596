//! Explicit approximate solution: Liouville bubbles glued to Green tails.

use crate::error::{Error, Result};
use crate::green::GreenEvaluator;
use crate::grid::{Grid, GridField};
use crate::problem::{Discretization, Problem};
use crate::quadrature::{integrate_split, refine_until, Patch};
use crate::torus::{add, dot, scale, sub, Torus, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use crate::io::csv_error;
use std::path::Path;

/// V_{x,μ}(y) = ln(8μ²/(1+μ²|y−x|²)²), evaluated in the plane.
pub fn liouville_profile(x: Vec2, mu: f64, y: Vec2) -> f64 {
    let d = sub(y, x);
    liouville_radial(mu, dot(d, d).sqrt())
}

pub fn liouville_radial(mu: f64, r: f64) -> f64 {
    (8.0 * mu * mu).ln() - 2.0 * (mu * mu * r * r).ln_1p()
}

/// (V′(r), V″(r)).
pub fn liouville_radial_derivs(mu: f64, r: f64) -> (f64, f64) {
    let m2 = mu * mu;
    let q = 1.0 + m2 * r * r;
    (-4.0 * m2 * r / q, -4.0 * m2 * (1.0 - m2 * r * r) / (q * q))
}

/// ∫_{B_d} V_{0,μ}.
pub fn liouville_disc_integral(mu: f64, d: f64) -> f64 {
    let s = mu * mu * d * d;
    PI * d * d * (8.0 * mu * mu).ln() - 2.0 * PI / (mu * mu) * ((1.0 + s) * s.ln_1p() - s)
}

/// ∫_{B_d} e^{V_{0,μ}} = 8π(1 − 1/θ).
pub fn liouville_disc_mass(mu: f64, d: f64) -> f64 {
    let s = mu * mu * d * d;
    8.0 * PI * s / (1.0 + s)
}

/// μ₁ = μ and μᵢ = √(ρ₁/ρᵢ) μ.
pub fn coupled_heights(mu: f64, rho: &[f64]) -> Result<Vec<f64>> {
    if rho.is_empty() {
        return Err(Error::Domain("weight list is empty".into()));
    }
    if let Some(r) = rho.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Domain(format!("bubble weight {r} must be positive")));
    }
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("height {mu} must be positive")));
    }
    Ok(rho
        .iter()
        .enumerate()
        .map(|(i, r)| if i == 0 { mu } else { (rho[0] / r).sqrt() * mu })
        .collect())
}

/// ρᵢ and ρ*ᵢ: e^{8πγ(xᵢ,xᵢ) + 8πΣ_{j≠i}G(xᵢ,xⱼ) + u₀,ₛ(xᵢ)} for s = 1, 2.
pub fn weights(problem: &Problem, centers: &[Vec2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ev = &problem.green;
    let mut rho = Vec::with_capacity(centers.len());
    let mut rho_star = Vec::with_capacity(centers.len());
    for (i, &x) in centers.iter().enumerate() {
        let mut s = 8.0 * PI * ev.green_regular(x, x);
        for (j, &y) in centers.iter().enumerate() {
            if j != i {
                s += 8.0 * PI * ev.green(x, y)?;
            }
        }
        rho.push((s + problem.u0(0, x)?).exp());
        rho_star.push((s + problem.u0(1, x)?).exp());
    }
    Ok((rho, rho_star))
}

fn vortex_sites(problem: &Problem) -> impl Iterator<Item = Vec2> + '_ {
    problem.u0.iter().flat_map(|v| v.sites.iter().map(|s| s.0))
}

/// d = min(⅓ min distance among centers and from centers to vortices, ¼ injectivity radius).
pub fn default_radius(problem: &Problem, centers: &[Vec2]) -> Result<f64> {
    let t = &problem.torus;
    let mut m = f64::INFINITY;
    for (i, &x) in centers.iter().enumerate() {
        for &y in &centers[i + 1..] {
            m = m.min(t.dist(x, y));
        }
        for v in vortex_sites(problem) {
            m = m.min(t.dist(x, v));
        }
    }
    let d = (m / 3.0).min(0.25 * t.injectivity_radius());
    if !(d > 0.0) {
        return Err(Error::Singularity("a bubble center coincides with another center or a vortex".into()));
    }
    Ok(d)
}

/// Centers, heights and radii of the bubbles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BubbleParams {
    pub centers: Vec<Vec2>,
    pub mu: f64,
    pub radii: Vec<f64>,
    /// θᵢ = 1 + (μᵢdᵢ)².
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_star: Vec<f64>,
    pub mus: Vec<f64>,
}

impl BubbleParams {
    pub fn new(problem: &Problem, centers: &[Vec2], mu: f64) -> Result<Self> {
        let d = default_radius(problem, centers)?;
        Self::with_radii(problem, centers, mu, &vec![d; centers.len()])
    }

    pub fn with_radii(problem: &Problem, centers: &[Vec2], mu: f64, radii: &[f64]) -> Result<Self> {
        let t = &problem.torus;
        if centers.is_empty() || radii.len() != centers.len() {
            return Err(Error::Config(format!(
                "need one radius per center, got {} centers and {} radii",
                centers.len(),
                radii.len()
            )));
        }
        if radii.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("bubble radii must be positive".into()));
        }
        let centers: Vec<Vec2> = centers.iter().map(|c| t.wrap(*c)).collect();
        for (i, &x) in centers.iter().enumerate() {
            if radii[i] >= t.injectivity_radius() {
                return Err(Error::Config(format!(
                    "bubble radius {} exceeds the injectivity radius",
                    radii[i]
                )));
            }
            for (j, &y) in centers.iter().enumerate().skip(i + 1) {
                if t.dist(x, y) < radii[i] + radii[j] {
                    return Err(Error::Config(format!("bubble balls {i} and {j} overlap")));
                }
            }
            if problem.vortex_distance(x) <= radii[i] {
                return Err(Error::Config(format!("bubble ball {i} contains a vortex")));
            }
        }
        let (rho, rho_star) = weights(problem, &centers)?;
        let mus = coupled_heights(mu, &rho)?;
        let theta = mus.iter().zip(radii).map(|(m, d)| 1.0 + (m * d).powi(2)).collect();
        Ok(BubbleParams { centers, mu, radii: radii.to_vec(), theta, rho, rho_star, mus })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// 1 − 1/θᵢ.
    pub fn tail(&self, i: usize) -> f64 {
        1.0 - 1.0 / self.theta[i]
    }

    /// Bubble branch of ω*ᵢ, valid near xᵢ.
    pub fn omega_star_inner(&self, ev: &GreenEvaluator, i: usize, y: Vec2) -> f64 {
        let r = ev.torus.dist(y, self.centers[i]);
        liouville_radial(self.mus[i], r) + 8.0 * PI * self.tail(i) * ev.green_regular(y, self.centers[i])
    }

    /// Green-tail branch of ω*ᵢ.
    pub fn omega_star_outer(&self, ev: &GreenEvaluator, i: usize, y: Vec2) -> Result<f64> {
        let d = self.radii[i];
        Ok(liouville_radial(self.mus[i], d)
            + 8.0 * PI * self.tail(i) * (ev.green(y, self.centers[i])? + d.ln() / (2.0 * PI)))
    }

    pub fn omega_star_inner_grad(&self, ev: &GreenEvaluator, i: usize, y: Vec2) -> Vec2 {
        let r = ev.torus.min_image(sub(y, self.centers[i]));
        let m2 = self.mus[i] * self.mus[i];
        let v = scale(-4.0 * m2 / (1.0 + m2 * dot(r, r)), r);
        add(v, scale(8.0 * PI * self.tail(i), ev.green_regular_grad(y, self.centers[i])))
    }

    pub fn omega_star_outer_grad(&self, ev: &GreenEvaluator, i: usize, y: Vec2) -> Result<Vec2> {
        Ok(scale(8.0 * PI * self.tail(i), ev.green_grad(y, self.centers[i])?))
    }

    /// ω*ᵢ(y).
    pub fn omega_star_i(&self, ev: &GreenEvaluator, i: usize, y: Vec2) -> f64 {
        let r = ev.torus.dist(y, self.centers[i]);
        if r < self.radii[i] {
            self.omega_star_inner(ev, i, y)
        } else {
            // r ≥ dᵢ > 0
            self.omega_star_outer(ev, i, y).unwrap_or(f64::NAN)
        }
    }

    /// Σᵢ ω*ᵢ(y).
    pub fn omega_star(&self, ev: &GreenEvaluator, y: Vec2) -> f64 {
        (0..self.k()).map(|i| self.omega_star_i(ev, i, y)).sum()
    }

    pub fn omega_star_grad(&self, ev: &GreenEvaluator, y: Vec2) -> Vec2 {
        let mut g = [0.0; 2];
        for i in 0..self.k() {
            let r = ev.torus.dist(y, self.centers[i]);
            let gi = if r < self.radii[i] {
                self.omega_star_inner_grad(ev, i, y)
            } else {
                self.omega_star_outer_grad(ev, i, y).unwrap_or([f64::NAN; 2])
            };
            g = add(g, gi);
        }
        g
    }

    /// ΔΣω* = Σᵢ[8π(1 − 1/θᵢ) − 1_{Bᵢ}e^{Vᵢ}].
    pub fn omega_star_laplacian(&self, torus: &Torus, y: Vec2) -> f64 {
        let mut s = 0.0;
        for i in 0..self.k() {
            s += 8.0 * PI * self.tail(i);
            let r = torus.dist(y, self.centers[i]);
            if r < self.radii[i] {
                s -= liouville_radial(self.mus[i], r).exp();
            }
        }
        s
    }

    /// ∫_Ω Σω*, in closed form. `offset` is the additive constant of G.
    pub fn omega_star_integral(&self, offset: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.k() {
            let (mu, d) = (self.mus[i], self.radii[i]);
            let area = PI * d * d;
            // ∫_B γ − ∫_B G = −(1/2π)∫_B ln r
            let log_disc = 0.5 * d * d * d.ln() - 0.25 * d * d;
            s += liouville_disc_integral(mu, d) + liouville_radial(mu, d) * (1.0 - area);
            s += 8.0 * PI * self.tail(i) * (offset + log_disc + d.ln() / (2.0 * PI) * (1.0 - area));
        }
        s
    }

    /// Σω* at every node of `grid`.
    pub fn omega_star_grid(&self, ev: &GreenEvaluator, grid: &Grid) -> Result<GridField> {
        let n = grid.n;
        let mut out = GridField::zeros(n);
        for i in 0..self.k() {
            let gam = ev.regular_table(grid, self.centers[i])?;
            let (mu, d, x) = (self.mus[i], self.radii[i], self.centers[i]);
            let tail = 8.0 * PI * self.tail(i);
            let vd = liouville_radial(mu, d);
            for (idx, v) in out.data.iter_mut().enumerate() {
                let r = ev.torus.dist(grid.node(idx / n, idx % n), x);
                let g = gam.data[idx];
                *v += if r < d {
                    liouville_radial(mu, r) + tail * g
                } else {
                    vd + tail * (g - r.ln() / (2.0 * PI) + d.ln() / (2.0 * PI))
                };
            }
        }
        Ok(out)
    }

    /// f_{s,j,x,μ}(y) = u₀,ₛ(y) − u₀,ₛ(xⱼ) + 8π[(γ(y,xⱼ) − γ(xⱼ,xⱼ))(1 − 1/θⱼ)
    /// + Σ_{l≠j}(G(y,x_l) − G(xⱼ,x_l))(1 − 1/θ_l)].
    pub fn f_local(&self, problem: &Problem, species: usize, j: usize, y: Vec2) -> Result<f64> {
        let ev = &problem.green;
        let xj = self.centers[j];
        let mut s = (ev.green_regular(y, xj) - ev.green_regular(xj, xj)) * self.tail(j);
        for l in 0..self.k() {
            if l != j {
                let xl = self.centers[l];
                s += (ev.green(y, xl)? - ev.green(xj, xl)?) * self.tail(l);
            }
        }
        Ok(problem.u0(species, y)? - problem.u0(species, xj)? + 8.0 * PI * s)
    }

    /// Quadrature patches around each bubble.
    pub fn patches(&self, problem: &Problem) -> Result<Vec<Patch>> {
        let t = &problem.torus;
        let mut out = Vec::new();
        for i in 0..self.k() {
            let x = self.centers[i];
            let mut outer = 0.9 * t.injectivity_radius();
            for (j, &y) in self.centers.iter().enumerate() {
                if j != i {
                    outer = outer.min(0.45 * t.dist(x, y));
                }
            }
            outer = outer.min(0.7 * problem.vortex_distance(x));
            let d = self.radii[i];
            if outer < 1.15 * d {
                return Err(Error::Config(format!(
                    "bubble {i}: radius {d:.4} leaves no room for the quadrature taper"
                )));
            }
            out.push(Patch::bubble(x, d, self.mus[i], outer));
        }
        Ok(out)
    }
}

/// Which form of the approximate solution to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// ω_μ + c_{i,μ} for any k.
    General,
    /// ω*_{x₁,μ₁} − u₀,ᵢ(x₁), k = 1 only.
    Simple,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadOptions {
    /// Successive refinement levels must agree to this relative tolerance.
    pub rel: f64,
    pub max_grid: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { rel: 1e-8, max_grid: 2048 }
    }
}

/// c_{1,μ}, c_{2,μ} with the integrals that define them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Normalization {
    pub c: [f64; 2],
    /// ∫e^{u₀,₁+ω}, ∫e^{u₀,₂+ω}, ∫e^{u₀,₁+u₀,₂+2ω}.
    pub integrals: [f64; 3],
    pub quad_grid: usize,
    pub quad_change: f64,
}

/// ∫e^{u₀,₁+ω}, ∫e^{u₀,₂+ω} and ∫e^{u₀,₁+u₀,₂+2ω} for ω = Σω* − shift.
pub fn bubble_integrals(
    problem: &Problem,
    params: &BubbleParams,
    shift: f64,
    quad: QuadOptions,
) -> Result<([f64; 3], usize, f64)> {
    let ev = &problem.green;
    let patches = params.patches(problem)?;
    let mut failure = None;
    let (v, level, change) = refine_until(quad.rel, quad.max_grid, |level| {
        let tables = Grid::new(problem.torus.clone(), level.grid).and_then(|g| {
            let om = params.omega_star_grid(ev, &g)?;
            let u1 = problem.u0[0].sample_with_poles(ev, &g)?;
            let u2 = problem.u0[1].sample_with_poles(ev, &g)?;
            Ok((om, u1, u2))
        });
        let (om, u1, u2) = match tables {
            Ok(t) => t,
            Err(e) => {
                failure.get_or_insert(e);
                return [f64::NAN; 3];
            }
        };
        let integrand = |w: f64, a: f64, b: f64| {
            let (ea, eb) = ((a + w).exp(), (b + w).exp());
            [ea, eb, ea * eb]
        };
        integrate_split(
            &problem.torus,
            &patches,
            level,
            |idx, _| integrand(om.data[idx] - shift, u1.data[idx], u2.data[idx]),
            |y| {
                let w = params.omega_star(ev, y) - shift;
                match (problem.u0(0, y), problem.u0(1, y)) {
                    (Ok(a), Ok(b)) => integrand(w, a, b),
                    _ => [f64::NAN; 3],
                }
            },
        )
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Convergence(format!("bubble integrals not finite: {v:?}")));
    }
    Ok((v, level.grid, change))
}

/// Closed-form constants for given integrals: with a = I₁₂/(I₁I₂) and
/// T = 16kπε²/(1 + √(1 − 32kπε²a)), e^{cᵢ} = T/Iᵢ.
pub fn constants_from_integrals(integrals: [f64; 3], eps: f64, k: usize) -> Result<[f64; 2]> {
    let [i1, i2, i12] = integrals;
    let a = i12 / (i1 * i2);
    let e = 8.0 * k as f64 * PI * eps * eps;
    let disc = 1.0 - 4.0 * e * a;
    if disc < 0.0 {
        return Err(Error::Domain(format!(
            "ε too large for this bubble height (discriminant {disc:.3e} at ε = {eps})"
        )));
    }
    let t = 2.0 * e / (1.0 + disc.sqrt());
    Ok([t.ln() - i1.ln(), t.ln() - i2.ln()])
}

pub fn normalization_constants(
    problem: &Problem,
    params: &BubbleParams,
    shift: f64,
    eps: f64,
    quad: QuadOptions,
) -> Result<Normalization> {
    let k = problem.k()?;
    let (integrals, quad_grid, quad_change) = bubble_integrals(problem, params, shift, quad)?;
    let c = constants_from_integrals(integrals, eps, k)?;
    Ok(Normalization { c, integrals, quad_grid, quad_change })
}

/// The approximate solution (U₁,μ, U₂,μ) = (ω_μ + c₁, ω_μ + c₂) on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxSolution {
    pub params: BubbleParams,
    pub eps: f64,
    pub assembly: Assembly,
    /// ω_μ = Σω* − shift; the shift is the grid mean of Σω*.
    pub omega: GridField,
    pub shift: f64,
    pub c: [f64; 2],
    pub u: [GridField; 2],
    pub normalization: Option<Normalization>,
}

pub fn build_omega(problem: &Problem, params: &BubbleParams, grid: &Grid) -> Result<(GridField, f64)> {
    let star = params.omega_star_grid(&problem.green, grid)?;
    let shift = star.mean();
    let mut om = star.map(|v| v - shift);
    // remove the rounding left by the subtraction
    let m = om.mean();
    om.data.iter_mut().for_each(|v| *v -= m);
    Ok((om, shift + m))
}

pub fn assemble_approx(
    problem: &Problem,
    disc: &Discretization,
    params: &BubbleParams,
    eps: f64,
    assembly: Assembly,
    quad: QuadOptions,
) -> Result<ApproxSolution> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("ε = {eps} must be positive")));
    }
    let k = problem.k()?;
    if k != params.k() {
        return Err(Error::Config(format!(
            "{} bubble centers given but the vortex counts imply k = {k}",
            params.k()
        )));
    }
    let (omega, shift) = build_omega(problem, params, &disc.grid)?;
    let (c, normalization) = match assembly {
        Assembly::General => {
            let nc = normalization_constants(problem, params, shift, eps, quad)?;
            (nc.c, Some(nc))
        }
        Assembly::Simple => {
            if k != 1 {
                return Err(Error::Config(format!("the simple assembly needs k = 1, got k = {k}")));
            }
            let x = params.centers[0];
            (
                [shift - problem.u0(0, x)?, shift - problem.u0(1, x)?],
                None,
            )
        }
    };
    let u = [omega.map(|v| v + c[0]), omega.map(|v| v + c[1])];
    Ok(ApproxSolution { params: params.clone(), eps, assembly, omega, shift, c, u, normalization })
}

impl ApproxSolution {
    /// Uᵢ at an arbitrary point.
    pub fn value(&self, problem: &Problem, i: usize, y: Vec2) -> f64 {
        self.params.omega_star(&problem.green, y) - self.shift + self.c[i]
    }

    /// ΔUᵢ in closed form on the grid (the same for both species).
    pub fn laplacian(&self, grid: &Grid) -> GridField {
        grid.sample(|y| self.params.omega_star_laplacian(&grid.torus, y))
    }

    pub fn scalars(&self) -> ApproxScalars {
        ApproxScalars {
            eps: self.eps,
            mu: self.params.mu,
            centers: self.params.centers.clone(),
            mus: self.params.mus.clone(),
            radii: self.params.radii.clone(),
            theta: self.params.theta.clone(),
            rho: self.params.rho.clone(),
            rho_star: self.params.rho_star.clone(),
            c: self.c,
            shift: self.shift,
            assembly: self.assembly,
            integrals: self.normalization.map(|n| n.integrals),
        }
    }

    /// Grid dump with columns x1, x2, U1, U2.
    pub fn write_csv(&self, grid: &Grid, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["x1", "x2", "U1", "U2"]).map_err(|e| csv_error(path, e))?;
        let n = grid.n;
        for idx in 0..n * n {
            let x = grid.node(idx / n, idx % n);
            w.write_record(&[
                x[0].to_string(),
                x[1].to_string(),
                self.u[0].data[idx].to_string(),
                self.u[1].data[idx].to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// JSON sidecar with the scalar data.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.scalars())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxScalars {
    pub eps: f64,
    pub mu: f64,
    pub centers: Vec<Vec2>,
    pub mus: Vec<f64>,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_star: Vec<f64>,
    pub c: [f64; 2],
    pub shift: f64,
    pub assembly: Assembly,
    pub integrals: Option<[f64; 3]>,
}

/// E₁ = −ΔU₁ + ε⁻²e^{U₂+u₀,₂}(e^{U₁+u₀,₁} − 1) + 8kπ and E₂ symmetrically.
pub fn residual(problem: &Problem, disc: &Discretization, approx: &ApproxSolution) -> Result<[GridField; 2]> {
    let k = problem.k()? as f64;
    let lap = approx.laplacian(&disc.grid);
    let e2 = 1.0 / (approx.eps * approx.eps);
    let a = approx.u[0].add(&disc.u0[0]);
    let b = approx.u[1].add(&disc.u0[1]);
    let n = disc.grid.n;
    let mut out = [GridField::zeros(n), GridField::zeros(n)];
    for idx in 0..n * n {
        let (ea, eb) = (a.data[idx].exp(), b.data[idx].exp());
        let base = -lap.data[idx] + 8.0 * k * PI;
        out[0].data[idx] = base + e2 * eb * (ea - 1.0);
        out[1].data[idx] = base + e2 * ea * (eb - 1.0);
    }
    Ok(out)
}

/// sup over the balls of |E₂ − [e^{Vᵢ}(1 − e^{f₁,ᵢ}) + Σ8π/θ_l]|/(1 + e^{Vᵢ}) (and the
/// species-swapped analogue for E₁), returned per species.
pub fn leading_structure_defect(
    problem: &Problem,
    disc: &Discretization,
    approx: &ApproxSolution,
    res: &[GridField; 2],
) -> Result<[f64; 2]> {
    let p = &approx.params;
    let grid = &disc.grid;
    let n = grid.n;
    let const_part: f64 = p.theta.iter().map(|t| 8.0 * PI / t).sum();
    let mut worst = [0.0f64; 2];
    for idx in 0..n * n {
        let y = grid.node(idx / n, idx % n);
        for j in 0..p.k() {
            let r = problem.torus.dist(y, p.centers[j]);
            if r >= p.radii[j] {
                continue;
            }
            let ev = liouville_radial(p.mus[j], r).exp();
            for (s, w) in worst.iter_mut().enumerate() {
                // Eₛ is driven by the other species' coupling
                let f = p.f_local(problem, 1 - s, j, y)?;
                let lead = ev * (1.0 - f.exp()) + const_part;
                *w = w.max((res[s].data[idx] - lead).abs() / (1.0 + ev));
            }
        }
    }
    Ok(worst)
}
