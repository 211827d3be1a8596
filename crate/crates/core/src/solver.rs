//! Nonlinear solves: the projected fixed point around an approximate solution,
//! the reduced equations in (x, μ), full Newton on the grid and continuation in ε.

use crate::bubble::{assemble_approx, weights, ApproxSolution, Assembly, BubbleParams, QuadOptions};
use crate::diagnostics::{measure, BubbleDiagnostics, DiagnosticsOptions};
use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid, GridField};
use crate::krylov::{gmres, KrylovOptions};
use crate::linops::{
    coupling_weight, solve_projected, sup_norm, y0_field, KernelBasis, KernelVariant, WeightedNormCfg,
};
use crate::problem::{Discretization, Problem};
use crate::reduction::{analyze, gstar_grad, newton_critical, DsqOptions, SearchOptions, Tolerances};
use crate::special::gl_interval;
use crate::torus::Vec2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

const EXP_LO: f64 = -700.0;
const EXP_HI: f64 = 50.0;

/// e^x with x clamped to [−700, 50]; clamped calls are counted.
fn guarded_exp(x: f64, clamps: &mut usize) -> f64 {
    if x > EXP_HI {
        *clamps += 1;
        EXP_HI.exp()
    } else if x < EXP_LO {
        *clamps += 1;
        EXP_LO.exp()
    } else {
        x.exp()
    }
}

/// Coupling densities at a = w + u₀ for every node.
struct Densities {
    /// pᵢ = ε⁻²e^{a₃₋ᵢ}(1 − e^{aᵢ}).
    p: FieldPair,
    /// ε⁻²e^{a₁+a₂}.
    r: GridField,
    clamps: usize,
}

fn densities(a: &FieldPair, eps: f64) -> Densities {
    let n = a[0].n;
    let le = -2.0 * eps.ln();
    let mut clamps = 0;
    let mut p = [GridField::zeros(n), GridField::zeros(n)];
    let mut r = GridField::zeros(n);
    for idx in 0..n * n {
        let (a1, a2) = (a[0].data[idx], a[1].data[idx]);
        let e1 = guarded_exp(a1 + le, &mut clamps);
        let e2 = guarded_exp(a2 + le, &mut clamps);
        let e12 = guarded_exp(a1 + a2 + le, &mut clamps);
        p[0].data[idx] = e2 - e12;
        p[1].data[idx] = e1 - e12;
        r.data[idx] = e12;
    }
    Densities { p, r, clamps }
}

/// Right side g together with the number of clamped exponentials.
#[derive(Debug, Clone)]
pub struct RhsEval {
    pub g: FieldPair,
    pub clamps: usize,
}

/// Everything the fixed-point map needs around one approximate solution.
#[derive(Debug, Clone)]
pub struct ProjectedSystem {
    /// W = Σ1_{Bⱼ}e^{Vⱼ}.
    pub weight: GridField,
    /// ΔU in closed form.
    pub lap_u: GridField,
    pub basis: KernelBasis,
    pub norms: WeightedNormCfg,
    pub flux: f64,
    pub eps: f64,
    /// Uᵢ + u₀,ᵢ.
    base: FieldPair,
}

impl ProjectedSystem {
    pub fn new(
        problem: &Problem,
        disc: &Discretization,
        approx: &ApproxSolution,
        alpha: f64,
        variant: KernelVariant,
    ) -> Result<Self> {
        let grid = &disc.grid;
        let params = &approx.params;
        Ok(ProjectedSystem {
            weight: coupling_weight(grid, params),
            lap_u: approx.laplacian(grid),
            basis: KernelBasis::new(grid, params, variant)?,
            norms: WeightedNormCfg::new(params, alpha)?,
            flux: problem.flux(),
            eps: approx.eps,
            base: [approx.u[0].add(&disc.u0[0]), approx.u[1].add(&disc.u0[1])],
        })
    }

    fn shifted(&self, omega: &FieldPair) -> FieldPair {
        [self.base[0].add(&omega[0]), self.base[1].add(&omega[1])]
    }

    /// gᵢ = Wω₃₋ᵢ − ε⁻²e^{U₃₋ᵢ+u₀,₃₋ᵢ+ω₃₋ᵢ}(1 − e^{Uᵢ+u₀,ᵢ+ωᵢ}) + 8kπ − ΔUᵢ.
    pub fn nonlinear_rhs(&self, omega: &FieldPair) -> RhsEval {
        let d = densities(&self.shifted(omega), self.eps);
        let g = [0, 1].map(|i| {
            let mut out = self.weight.zip(&omega[1 - i], |w, o| w * o);
            for (idx, v) in out.data.iter_mut().enumerate() {
                *v += self.flux - self.lap_u.data[idx] - d.p[i].data[idx];
            }
            out
        });
        RhsEval { g, clamps: d.clamps }
    }

    /// Fᵢ = Δ(Uᵢ + ωᵢ) + ε⁻²e^{…}(1 − e^{…}) − 8kπ at U + ω.
    pub fn full_residual(&self, grid: &Grid, omega: &FieldPair) -> FieldPair {
        let d = densities(&self.shifted(omega), self.eps);
        [0, 1].map(|i| {
            let mut out = grid.laplacian(&omega[i]);
            for (idx, v) in out.data.iter_mut().enumerate() {
                *v += self.lap_u.data[idx] + d.p[i].data[idx] - self.flux;
            }
            out
        })
    }

    /// Derivative of g at ω applied to v, which equals L v − J v.
    pub fn rhs_derivative(&self, omega: &FieldPair, v: &FieldPair) -> FieldPair {
        let d = densities(&self.shifted(omega), self.eps);
        [0, 1].map(|i| {
            let mut out = GridField::zeros(v[0].n);
            for (idx, o) in out.data.iter_mut().enumerate() {
                let (vi, vj) = (v[i].data[idx], v[1 - i].data[idx]);
                *o = self.weight.data[idx] * vj - d.p[i].data[idx] * vj + d.r.data[idx] * vi;
            }
            out
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    /// Stop when ‖ωⁿ⁺¹ − ωⁿ‖_X < tol·‖ωⁿ⁺¹‖_X.
    pub tol: f64,
    pub max_iter: usize,
    pub krylov: KrylovOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { tol: 1e-9, max_iter: 40, krylov: KrylovOptions { tol: 1e-11, ..Default::default() } }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointStep {
    pub iteration: usize,
    pub change_x: f64,
    pub change_sup: f64,
    pub norm_x: f64,
    /// ‖ωⁿ⁺¹ − ωⁿ‖_X / ‖ωⁿ − ωⁿ⁻¹‖_X, absent on the first step.
    pub factor: Option<f64>,
    pub clamps: usize,
    pub krylov_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub omega: FieldPair,
    /// c₀ then c_{i,j} from the last projected solve.
    pub multipliers: Vec<f64>,
    pub log: Vec<FixedPointStep>,
}

impl FixedPoint {
    /// Largest measured contraction factor.
    pub fn max_factor(&self) -> Option<f64> {
        self.log.iter().filter_map(|s| s.factor).reduce(f64::max)
    }
}

fn log_summary(log: &[FixedPointStep]) -> String {
    log.iter()
        .map(|s| match s.factor {
            Some(f) => format!("#{} Δ={:.3e} q={f:.3}", s.iteration, s.change_x),
            None => format!("#{} Δ={:.3e}", s.iteration, s.change_x),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Iterates ω ← (QL)⁻¹Q g(ω) from `start` (zero when absent).
pub fn fixed_point_solve(
    sys: &ProjectedSystem,
    grid: &Grid,
    start: Option<&FieldPair>,
    opts: FixedPointOptions,
) -> Result<FixedPoint> {
    let n = grid.n;
    let mut omega = start.cloned().unwrap_or_else(|| [GridField::zeros(n), GridField::zeros(n)]);
    let mut log: Vec<FixedPointStep> = Vec::new();
    let mut prev_change: Option<f64> = None;
    let mut bad = 0;
    for it in 1..=opts.max_iter {
        let rhs = sys.nonlinear_rhs(&omega);
        let sol = solve_projected(grid, &sys.weight, &sys.basis, &rhs.g, opts.krylov)?;
        let diff = [sol.omega[0].sub(&omega[0]), sol.omega[1].sub(&omega[1])];
        let change_x = sys.norms.norm_x(grid, &diff);
        let norm_x = sys.norms.norm_x(grid, &sol.omega);
        let factor = prev_change.filter(|p| *p > 0.0).map(|p| change_x / p);
        log.push(FixedPointStep {
            iteration: it,
            change_x,
            change_sup: sup_norm(&diff),
            norm_x,
            factor,
            clamps: rhs.clamps,
            krylov_iterations: sol.stats[0].iterations + sol.stats[1].iterations,
        });
        omega = sol.omega;
        if change_x <= opts.tol * norm_x.max(f64::MIN_POSITIVE) {
            return Ok(FixedPoint { omega, multipliers: sol.multipliers, log });
        }
        bad = if factor.is_some_and(|f| f >= 1.0) { bad + 1 } else { 0 };
        if bad >= 3 {
            return Err(Error::Convergence(format!(
                "fixed-point map is not contracting: {}",
                log_summary(&log)
            )));
        }
        prev_change = Some(change_x);
    }
    Err(Error::Convergence(format!(
        "fixed point not reached in {} iterations: {}",
        opts.max_iter,
        log_summary(&log)
    )))
}

/// A = ∫_{ℝ²} 8/(1+|y|²)² · |y|²/(1+|y|²) dy, by Gauss-Legendre after r = tan θ.
pub fn translation_constant() -> f64 {
    // the integrand becomes 16π sin³θ cosθ on [0, π/2]
    gl_interval(24, 0.0, 0.5 * PI)
        .iter()
        .map(|(t, w)| w * 16.0 * PI * t.sin().powi(3) * t.cos())
        .sum()
}

/// The 2k + 1 pairings of the full residual with the kernel pairs, and their models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedResidual {
    /// ⟨F, (Y₀, Y₀)⟩.
    pub r0: f64,
    /// ⟨F, (Y_{h,j}, Y_{h,j})⟩ in the order (j, h).
    pub r: Vec<f64>,
    pub a_const: f64,
    /// −⟨−ε⁻²e^{U₁+U₂+u₀,₁+u₀,₂}(1, 1), (Y₀, Y₀)⟩/(ε²μ₁).
    pub b_const: f64,
    /// (A/2)(∂f₁ + ∂f₂) at the centers, same order as `r`.
    pub r_model: Vec<f64>,
    /// −(8/μ₁³)𝒟⁽²⁾ − Bε²μ₁, when 𝒟⁽²⁾ was supplied.
    pub r0_model: Option<f64>,
}

impl ReducedResidual {
    pub fn dimension(&self) -> usize {
        1 + self.r.len()
    }

    pub fn is_finite(&self) -> bool {
        self.r0.is_finite() && self.r.iter().all(|v| v.is_finite())
    }
}

fn pair_with(f: &FieldPair, y: &GridField, area: f64) -> f64 {
    (f[0].inner(y) + f[1].inner(y)) * area
}

/// B from the pairing of the product density with Y₀, at ω = 0.
pub fn b_estimate(grid: &Grid, base: &FieldPair, y0: &GridField, eps: f64, mu1: f64) -> f64 {
    let d = densities(base, eps);
    let neg = [d.r.scaled(-1.0), d.r.scaled(-1.0)];
    -pair_with(&neg, y0, grid.torus.area()) / (eps * eps * mu1)
}

/// Evaluates the pairings of the full residual at U + ω.
pub fn reduced_residual(
    problem: &Problem,
    sys: &ProjectedSystem,
    grid: &Grid,
    approx: &ApproxSolution,
    omega: &FieldPair,
    dsq: Option<f64>,
) -> Result<ReducedResidual> {
    let area = grid.torus.area();
    let f = sys.full_residual(grid, omega);
    let r0 = pair_with(&f, &sys.basis.y[0], area);
    let r: Vec<f64> = sys.basis.y[1..].iter().map(|y| pair_with(&f, y, area)).collect();
    let a_const = translation_constant();
    let [g1, g2] = gstar_grad(problem, &approx.params.centers)?;
    let r_model = g1.iter().zip(&g2).map(|(a, b)| 0.5 * a_const * (a + b)).collect();
    let mu1 = approx.params.mus[0];
    let b_const = b_estimate(grid, &sys.base, &sys.basis.y[0], sys.eps, mu1);
    let r0_model = dsq.map(|s| -8.0 / mu1.powi(3) * s - b_const * sys.eps * sys.eps * mu1);
    Ok(ReducedResidual { r0, r, a_const, b_const, r_model, r0_model })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducedOptions {
    /// Admissible band [β₁, β₂] for μ√ε.
    pub window: [f64; 2],
    /// Passes of the B-estimate / height update.
    pub b_passes: usize,
    /// Move the centers to a nearby critical point of G₁* + G₂* first.
    pub translate: bool,
    pub search: SearchOptions,
    pub dsq: DsqOptions,
    pub tolerances: Tolerances,
    pub variant: KernelVariant,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            window: [0.2, 5.0],
            b_passes: 3,
            translate: true,
            search: SearchOptions::default(),
            dsq: DsqOptions::default(),
            tolerances: Tolerances::default(),
            variant: KernelVariant::Standard,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub centers: Vec<Vec2>,
    pub mu: f64,
    pub eps: f64,
    pub b_const: f64,
    pub dsq: f64,
    /// μ√ε.
    pub beta: f64,
}

/// Leading-order B = (64π/3)Σᵢ ρ₁/ρᵢ.
pub fn b_leading(rho: &[f64]) -> f64 {
    64.0 * PI / 3.0 * rho.iter().map(|r| rho[0] / r).sum::<f64>()
}

/// Root μ = (8|S|/(Bε²))^{1/4} of the height balance, checked against the window on μ√ε.
pub fn balance_height(s: f64, b: f64, eps: f64, window: [f64; 2]) -> Result<f64> {
    if !(s < 0.0) {
        return Err(Error::NoAdmissibleHeight(format!(
            "𝒟⁽²⁾ = {s:.4e} is not negative; the height balance has no root"
        )));
    }
    if !(b > 0.0) {
        return Err(Error::NoAdmissibleHeight(format!("estimated B = {b:.4e} is not positive")));
    }
    let mu = (8.0 * s.abs() / (b * eps * eps)).powf(0.25);
    let beta = mu * eps.sqrt();
    if !(beta >= window[0] && beta <= window[1]) {
        return Err(Error::NoAdmissibleHeight(format!(
            "μ√ε = {beta:.4} lies outside the admissible window [{}, {}] (reduced.window)",
            window[0], window[1]
        )));
    }
    Ok(mu)
}

/// Translation Newton on ∇(G₁* + G₂*), then the quartic height balance
/// Bε²μ = (8/μ³)|𝒟⁽²⁾|.
pub fn solve_reduced(
    problem: &Problem,
    disc: &Discretization,
    seed: &[Vec2],
    eps: f64,
    opts: &ReducedOptions,
) -> Result<ReducedSolution> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("ε = {eps} must be positive")));
    }
    let centers = if opts.translate { newton_critical(problem, seed, &opts.search)? } else { seed.to_vec() };
    let report = analyze(problem, &centers, opts.tolerances, Some(&opts.dsq))?;
    let s = report.dsq.as_ref().map(|d| d.value).unwrap_or(f64::NAN);
    if !(s < 0.0) {
        return Err(Error::NoAdmissibleHeight(format!(
            "𝒟⁽²⁾ = {s:.4e} is not negative at the centers {centers:?}; the height balance has no root"
        )));
    }
    let (rho, _) = weights(problem, &centers)?;
    let mut b = b_leading(&rho);
    let mut mu = balance_height(s, b, eps, opts.window)?;
    for _ in 0..opts.b_passes {
        let params = BubbleParams::new(problem, &centers, mu)?;
        let approx = assemble_approx(problem, disc, &params, eps, Assembly::General, QuadOptions::default())?;
        let base = [approx.u[0].add(&disc.u0[0]), approx.u[1].add(&disc.u0[1])];
        let y0 = y0_field(&disc.grid, &params, opts.variant);
        b = b_estimate(&disc.grid, &base, &y0, eps, params.mus[0]);
        mu = balance_height(s, b, eps, opts.window)?;
    }
    Ok(ReducedSolution { centers, mu, eps, b_const: b, dsq: s, beta: mu * eps.sqrt() })
}

/// The full system on the grid, in the unknowns wᵢ = uᵢ − u₀,ᵢ.
#[derive(Debug, Clone)]
pub struct FullSystem<'a> {
    pub disc: &'a Discretization,
    pub eps: f64,
    pub flux: f64,
}

impl<'a> FullSystem<'a> {
    pub fn new(problem: &Problem, disc: &'a Discretization, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("ε = {eps} must be positive")));
        }
        Ok(FullSystem { disc, eps, flux: problem.flux() })
    }

    fn shifted(&self, w: &FieldPair) -> FieldPair {
        [w[0].add(&self.disc.u0[0]), w[1].add(&self.disc.u0[1])]
    }

    fn eval(&self, w: &FieldPair) -> (FieldPair, Densities) {
        let d = densities(&self.shifted(w), self.eps);
        let f = [0, 1].map(|i| {
            let mut out = self.disc.grid.laplacian(&w[i]);
            out.data.iter_mut().zip(&d.p[i].data).for_each(|(o, p)| *o += p - self.flux);
            out
        });
        (f, d)
    }

    /// Fᵢ = Δwᵢ + ε⁻²e^{u₃₋ᵢ}(1 − e^{uᵢ}) − 8kπ.
    pub fn residual(&self, w: &FieldPair) -> FieldPair {
        self.eval(w).0
    }

    /// |∫ε⁻²e^{u₃₋ᵢ}(1 − e^{uᵢ}) − 8kπ|/8kπ per species (the torus has unit area).
    pub fn identity_defects(&self, w: &FieldPair) -> [f64; 2] {
        let d = densities(&self.shifted(w), self.eps);
        let a = self.disc.grid.torus.area();
        [0, 1].map(|i| (d.p[i].mean() * a - self.flux * a).abs() / (self.flux * a))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Accept when ‖F‖∞ < tol·ε⁻².
    pub tol: f64,
    /// After acceptance keep iterating toward ‖F‖∞ < polish·8kπ while that still pays off.
    pub polish: f64,
    pub max_iter: usize,
    pub krylov: KrylovOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            polish: 1e-10,
            max_iter: 40,
            krylov: KrylovOptions { tol: 1e-10, restart: 150, max_iter: 3000 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonStep {
    pub iteration: usize,
    pub residual_inf: f64,
    pub damping: f64,
    pub krylov_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub w: FieldPair,
    pub residual_inf: f64,
    pub history: Vec<NewtonStep>,
    pub identity_defects: [f64; 2],
    pub warnings: Vec<String>,
}

fn rms(f: &FieldPair) -> f64 {
    (0.5 * (f[0].inner(&f[0]) + f[1].inner(&f[1]))).sqrt()
}

/// Damped Newton with Fourier Jacobian-vector products and GMRES.
pub fn newton_solve(
    problem: &Problem,
    disc: &Discretization,
    eps: f64,
    init: &FieldPair,
    opts: NewtonOptions,
) -> Result<NewtonReport> {
    let sys = FullSystem::new(problem, disc, eps)?;
    let grid = &disc.grid;
    let n2 = grid.len();
    let accept = opts.tol / (eps * eps);
    let target = accept.min(opts.polish * sys.flux);
    let mut w = init.clone();
    let (mut f, mut dens) = sys.eval(&w);
    if dens.clamps > 0 {
        return Err(Error::Domain(format!("initial guess overflows the exponential guard at {} nodes", dens.clamps)));
    }
    let mut res = sup_norm(&f);
    let mut history = vec![NewtonStep { iteration: 0, residual_inf: res, damping: 0.0, krylov_iterations: 0 }];
    let mut warnings = Vec::new();
    let res0 = rms(&f);
    let field = |x: &[f64]| GridField { n: grid.n, data: x.to_vec() };
    for it in 1..=opts.max_iter {
        if res <= target {
            break;
        }
        // right preconditioner (Δ − 1)⁻¹ per component; Δv = s + v
        let (p, r) = (&dens.p, &dens.r);
        let apply = |s: &[f64]| -> Vec<f64> {
            let v = [grid.shifted_inverse(&field(&s[..n2]), 1.0), grid.shifted_inverse(&field(&s[n2..]), 1.0)];
            let mut out = Vec::with_capacity(2 * n2);
            for i in 0..2 {
                let (vi, vj) = (&v[i].data, &v[1 - i].data);
                for idx in 0..n2 {
                    out.push(s[i * n2 + idx] + vi[idx] + p[i].data[idx] * vj[idx] - r.data[idx] * vi[idx]);
                }
            }
            out
        };
        let rhs: Vec<f64> = f[0].data.iter().chain(&f[1].data).map(|v| -v).collect();
        let forcing = (1e-3 * rms(&f) / res0).clamp(opts.krylov.tol, 1e-4);
        let (s, st) = gmres(apply, &rhs, KrylovOptions { tol: forcing, ..opts.krylov })?;
        let step = [grid.shifted_inverse(&field(&s[..n2]), 1.0), grid.shifted_inverse(&field(&s[n2..]), 1.0)];
        if st.iterations >= opts.krylov.restart * 4 {
            warnings.push(format!(
                "step {it}: {} Krylov iterations, the Jacobian is close to singular along the translation modes",
                st.iterations
            ));
        }
        let merit = rms(&f);
        let mut lam = 1.0;
        let mut accepted = None;
        while lam >= 1.0 / 1024.0 {
            let trial = [w[0].add(&step[0].scaled(lam)), w[1].add(&step[1].scaled(lam))];
            let (ft, dt) = sys.eval(&trial);
            if dt.clamps == 0 && ft[0].is_finite() && ft[1].is_finite() && rms(&ft) <= (1.0 - 1e-4 * lam) * merit {
                accepted = Some((trial, ft, dt));
                break;
            }
            lam *= 0.5;
        }
        let Some((wt, ft, dt)) = accepted else {
            if res <= accept {
                break;
            }
            return Err(Error::Convergence(format!(
                "Newton line search failed at step {it} with ‖F‖∞ = {res:.3e} (accept below {accept:.3e})"
            )));
        };
        let new_res = sup_norm(&ft);
        w = wt;
        f = ft;
        dens = dt;
        history.push(NewtonStep { iteration: it, residual_inf: new_res, damping: lam, krylov_iterations: st.iterations });
        // once acceptable, stop when polishing no longer gains an order of magnitude
        let stalled = res <= accept && new_res > 0.1 * res;
        res = new_res;
        if stalled {
            break;
        }
    }
    if res > accept {
        return Err(Error::Convergence(format!(
            "Newton stopped at ‖F‖∞ = {res:.3e} after {} steps (accept below {accept:.3e})",
            history.len() - 1
        )));
    }
    let identity_defects = sys.identity_defects(&w);
    Ok(NewtonReport { w, residual_inf: res, history, identity_defects, warnings })
}

/// Settings of a continuation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub eps0: f64,
    /// εₙ₊₁ = σεₙ.
    pub ratio: f64,
    pub steps: usize,
    pub alpha: f64,
    /// w_init = blend·w_prev + (1 − blend)·(U + ω).
    pub blend: f64,
    /// Consecutive failed attempts tolerated before aborting.
    pub max_retries: usize,
    /// Skip the projected fixed point and start Newton from U directly.
    pub skip_fixed_point: bool,
    pub reduced: ReducedOptions,
    pub fixed_point: FixedPointOptions,
    pub newton: NewtonOptions,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            eps0: 0.005,
            ratio: 0.8,
            steps: 12,
            alpha: 0.1,
            blend: 0.7,
            max_retries: 3,
            skip_fixed_point: false,
            reduced: ReducedOptions::default(),
            fixed_point: FixedPointOptions::default(),
            newton: NewtonOptions::default(),
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) {
            return Err(Error::Config(format!("sweep.eps0 = {} must be positive", self.eps0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!("sweep.ratio = {} must lie in (0, 1)", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::Config(format!("sweep.blend = {} must lie in [0, 1]", self.blend)));
        }
        if self.steps == 0 {
            return Err(Error::Config("sweep.steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.eps0 * self.ratio.powi(i as i32)).collect()
    }
}

/// One accepted continuation step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub eps: f64,
    pub mu: f64,
    pub centers: Vec<Vec2>,
    pub b_const: f64,
    pub dsq: f64,
    /// Largest contraction factor of the fixed point, if it ran.
    pub contraction: Option<f64>,
    pub omega_sup: Option<f64>,
    pub newton_iterations: usize,
    pub residual_inf: f64,
    pub identity_defects: [f64; 2],
    pub diagnostics: BubbleDiagnostics,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Continuation state; serializable as a versioned checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationState {
    pub version: u32,
    pub options: SweepOptions,
    /// Seed centers q.
    pub seed: Vec<Vec2>,
    /// Remaining and past targets, strictly decreasing.
    pub schedule: Vec<f64>,
    /// Index of the next target in `schedule`.
    pub next: usize,
    pub w: Option<FieldPair>,
    pub centers: Vec<Vec2>,
    pub mu: Option<f64>,
    pub history: Vec<StepRecord>,
    pub failures: usize,
    /// Messages of failed attempts, in order.
    pub failure_log: Vec<String>,
}

impl ContinuationState {
    pub fn new(seed: &[Vec2], options: SweepOptions) -> Result<Self> {
        options.validate()?;
        Ok(ContinuationState {
            version: CHECKPOINT_VERSION,
            schedule: options.schedule(),
            options,
            seed: seed.to_vec(),
            next: 0,
            w: None,
            centers: seed.to_vec(),
            mu: None,
            history: Vec::new(),
            failures: 0,
            failure_log: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.schedule.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: ContinuationState = crate::io::read_json(path)?;
        if s.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "{}: checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                s.version
            )));
        }
        Ok(s)
    }

    /// Per-step table with columns step, eps, mu, then per bubble m1, m2, beta.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let k = self.seed.len();
        let mut header: Vec<String> = ["step", "eps", "mu", "residual_inf", "identity1", "identity2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for j in 1..=k {
            header.extend([format!("m1_{j}"), format!("m2_{j}"), format!("beta_{j}"), format!("drift_{j}")]);
        }
        header.extend(["flux_defect".to_string(), "profile_rms".to_string()]);
        let rows: Vec<Vec<f64>> = self
            .history
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let d = &h.diagnostics;
                let mut row = vec![i as f64, h.eps, h.mu, h.residual_inf, h.identity_defects[0], h.identity_defects[1]];
                for j in 0..k {
                    row.extend([d.masses[j][0], d.masses[j][1], d.heights[j], d.drift[j]]);
                }
                row.push(d.flux_defect);
                row.push(d.profile_rms.iter().copied().fold(0.0, f64::max));
                row
            })
            .collect();
        let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        crate::io::write_table(path, &h, &rows)
    }
}

/// One attempt at ε; returns the new w and the record.
fn attempt(
    problem: &Problem,
    disc: &Discretization,
    state: &ContinuationState,
    eps: f64,
) -> Result<(FieldPair, StepRecord)> {
    let o = &state.options;
    let red = solve_reduced(problem, disc, &state.centers, eps, &o.reduced)?;
    let params = BubbleParams::new(problem, &red.centers, red.mu)?;
    let approx = assemble_approx(problem, disc, &params, eps, Assembly::General, QuadOptions::default())?;
    let (guess, contraction, omega_sup) = if o.skip_fixed_point {
        (approx.u.clone(), None, None)
    } else {
        let sys = ProjectedSystem::new(problem, disc, &approx, o.alpha, o.reduced.variant)?;
        let fp = fixed_point_solve(&sys, &disc.grid, None, o.fixed_point)?;
        let g = [approx.u[0].add(&fp.omega[0]), approx.u[1].add(&fp.omega[1])];
        (g, fp.max_factor(), Some(sup_norm(&fp.omega)))
    };
    let nr = match &state.w {
        Some(prev) => {
            let b = o.blend;
            let init = [0, 1].map(|i| prev[i].scaled(b).add(&guess[i].scaled(1.0 - b)));
            match newton_solve(problem, disc, eps, &init, o.newton) {
                Ok(nr) => nr,
                Err(e) => {
                    log::info!("ε = {eps:.4e}: blended start failed ({e}), restarting from the approximation");
                    newton_solve(problem, disc, eps, &guess, o.newton)?
                }
            }
        }
        None => newton_solve(problem, disc, eps, &guess, o.newton)?,
    };
    for wmsg in &nr.warnings {
        log::warn!("ε = {eps:.4e}: {wmsg}");
    }
    let diagnostics = measure(problem, disc, &nr.w, eps, &state.seed, &params, &o.diagnostics)?;
    let record = StepRecord {
        eps,
        mu: red.mu,
        centers: red.centers,
        b_const: red.b_const,
        dsq: red.dsq,
        contraction,
        omega_sup,
        newton_iterations: nr.history.len() - 1,
        residual_inf: nr.residual_inf,
        identity_defects: nr.identity_defects,
        diagnostics,
    };
    Ok((nr.w, record))
}

/// Advances the sweep by at most `max_steps` accepted steps (all when `None`).
///
/// A failed attempt inserts the geometric midpoint between the last accepted ε
/// and the failed target; `on_step` runs after every accepted step.
pub fn continue_sweep(
    problem: &Problem,
    disc: &Discretization,
    state: &mut ContinuationState,
    max_steps: Option<usize>,
    mut on_step: impl FnMut(&ContinuationState) -> Result<()>,
) -> Result<()> {
    let mut taken = 0;
    while !state.is_done() && max_steps.is_none_or(|m| taken < m) {
        let eps = state.schedule[state.next];
        match attempt(problem, disc, state, eps) {
            Ok((w, rec)) => {
                state.centers = rec.centers.clone();
                state.mu = Some(rec.mu);
                state.w = Some(w);
                state.history.push(rec);
                state.next += 1;
                state.failures = 0;
                taken += 1;
                on_step(state)?;
            }
            Err(e) => {
                state.failures += 1;
                state.failure_log.push(format!("ε = {eps:.5e}: {e}"));
                log::warn!("continuation step at ε = {eps:.5e} failed: {e}");
                if state.failures > state.options.max_retries {
                    return Err(Error::Convergence(format!(
                        "continuation aborted after {} consecutive failures; last: {e}",
                        state.failures
                    )));
                }
                let prev = state.history.last().map(|h| h.eps);
                match prev {
                    Some(p) => state.schedule.insert(state.next, (p * eps).sqrt()),
                    None => return Err(e),
                }
            }
        }
    }
    Ok(())
}

/// Runs a full sweep from the seed centers.
pub fn continuation_sweep(
    problem: &Problem,
    disc: &Discretization,
    seed: &[Vec2],
    options: SweepOptions,
    on_step: impl FnMut(&ContinuationState) -> Result<()>,
) -> Result<ContinuationState> {
    let mut state = ContinuationState::new(seed, options)?;
    continue_sweep(problem, disc, &mut state, None, on_step)?;
    Ok(state)
}
