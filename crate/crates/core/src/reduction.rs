//! Reduced energies G₁*, G₂*, the quantity 𝒟⁽²⁾ and critical-point search.

use crate::bubble::weights;
use crate::error::{Error, Result};
use crate::green::Mat2;
use crate::partition::{voronoi_partition, Cell, CellPartition};
use crate::problem::Problem;
use crate::special::gl_interval;
use crate::torus::{add, sub, Vec2};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// (G₁*(q), G₂*(q)) with G_s* = Σu₀,ₛ(qᵢ) + 8πΣ_{i<j}G(qᵢ,qⱼ).
pub fn gstar(problem: &Problem, q: &[Vec2]) -> Result<[f64; 2]> {
    let mut pair = 0.0;
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            pair += problem.green.green(q[i], q[j])?;
        }
    }
    let mut out = [8.0 * PI * pair; 2];
    for x in q {
        out[0] += problem.u0(0, *x)?;
        out[1] += problem.u0(1, *x)?;
    }
    Ok(out)
}

/// Gradients of G₁* and G₂*, ordered (q₁ₓ, q₁ᵧ, q₂ₓ, …).
pub fn gstar_grad(problem: &Problem, q: &[Vec2]) -> Result<[Vec<f64>; 2]> {
    let k = q.len();
    let mut g = [vec![0.0; 2 * k], vec![0.0; 2 * k]];
    for j in 0..k {
        let mut pair = [0.0; 2];
        for l in 0..k {
            if l != j {
                let d = problem.green.green_grad(q[j], q[l])?;
                pair = add(pair, [8.0 * PI * d[0], 8.0 * PI * d[1]]);
            }
        }
        for s in 0..2 {
            let u = problem.u0_grad(s, q[j])?;
            g[s][2 * j] = u[0] + pair[0];
            g[s][2 * j + 1] = u[1] + pair[1];
        }
    }
    Ok(g)
}

/// Hessians of G₁* and G₂*.
pub fn gstar_hess(problem: &Problem, q: &[Vec2]) -> Result<[DMatrix<f64>; 2]> {
    let k = q.len();
    let mut h = [DMatrix::zeros(2 * k, 2 * k), DMatrix::zeros(2 * k, 2 * k)];
    let put = |m: &mut DMatrix<f64>, r: usize, c: usize, b: Mat2, s: f64| {
        for a in 0..2 {
            for bb in 0..2 {
                m[(2 * r + a, 2 * c + bb)] += s * b[a][bb];
            }
        }
    };
    for j in 0..k {
        for l in 0..k {
            if l == j {
                continue;
            }
            let d = problem.green.green_hess(q[j], q[l])?;
            for m in h.iter_mut() {
                put(m, j, j, d, 8.0 * PI);
                // G depends on x − p, so the mixed block is −∇²G
                put(m, j, l, d, -8.0 * PI);
            }
        }
        for (s, m) in h.iter_mut().enumerate() {
            put(m, j, j, problem.u0_hess(s, q[j])?, 1.0);
        }
    }
    Ok(h)
}

/// f_{s,j,q}(y) = u₀,ₛ(y) − u₀,ₛ(qⱼ) + 8π[γ(y,qⱼ) − γ(qⱼ,qⱼ) + Σ_{l≠j}(G(y,q_l) − G(qⱼ,q_l))].
pub fn f_local(problem: &Problem, species: usize, j: usize, q: &[Vec2], y: Vec2) -> Result<f64> {
    let b = green_bracket(problem, j, q, y)?;
    Ok(problem.u0(species, y)? - problem.u0(species, q[j])? + 8.0 * PI * b)
}

pub fn f_local_grad(problem: &Problem, species: usize, j: usize, q: &[Vec2], y: Vec2) -> Result<Vec2> {
    let ev = &problem.green;
    let mut g = ev.green_regular_grad(y, q[j]);
    for (l, &x) in q.iter().enumerate() {
        if l != j {
            g = add(g, ev.green_grad(y, x)?);
        }
    }
    let u = problem.u0_grad(species, y)?;
    Ok([u[0] + 8.0 * PI * g[0], u[1] + 8.0 * PI * g[1]])
}

fn green_bracket(problem: &Problem, j: usize, q: &[Vec2], y: Vec2) -> Result<f64> {
    let ev = &problem.green;
    let mut b = ev.green_regular(y, q[j]) - ev.green_regular(q[j], q[j]);
    for (l, &x) in q.iter().enumerate() {
        if l != j {
            b += ev.green(y, x)? - ev.green(q[j], x)?;
        }
    }
    Ok(b)
}

/// Settings for the 𝒟⁽²⁾ quadrature.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsqOptions {
    /// Decreasing excision radii.
    pub deltas: Vec<f64>,
    /// Angle pairs (y, 2qⱼ − y) per circle.
    pub angular: usize,
    /// Gauss points per radial panel.
    pub radial: usize,
}

impl Default for DsqOptions {
    fn default() -> Self {
        DsqOptions { deltas: vec![0.08, 0.04, 0.02, 0.01], angular: 64, radial: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsqRow {
    pub delta: f64,
    pub value: f64,
    /// Richardson value from this row and the previous one (O(δ²) model).
    pub richardson: Option<f64>,
    /// (D(δ₋₂) − D(δ₋₁))/(D(δ₋₁) − D(δ)); about 4 when δ halves.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsqReport {
    pub value: f64,
    pub table: Vec<DsqRow>,
    pub converged: bool,
    /// |last Richardson value − previous Richardson value|.
    pub error_estimate: f64,
}

/// Contributions of one cell and species: integral over the cell outside
/// B_δ for each δ (ascending index = descending δ), minus the exterior.
fn cell_terms(
    problem: &Problem,
    q: &[Vec2],
    j: usize,
    cell: &Cell,
    opts: &DsqOptions,
) -> Result<[Vec<f64>; 2]> {
    let r_in = 0.9 * cell.inradius();
    let qj = q[j];
    if opts.deltas.first().is_some_and(|d| *d >= r_in) {
        return Err(Error::Config(format!(
            "dsq: δ = {} must be below 0.9 × cell inradius {:.4}",
            opts.deltas[0], r_in
        )));
    }
    let u0q = [problem.u0(0, qj)?, problem.u0(1, qj)?];
    let ev = &problem.green;
    let mut base = ev.green_regular(qj, qj);
    for (l, &x) in q.iter().enumerate() {
        if l != j {
            base += ev.green(qj, x)?;
        }
    }
    let f_pair = |y: Vec2| -> Result<[f64; 2]> {
        let mut b = ev.green_regular(y, qj) - base;
        for (l, &x) in q.iter().enumerate() {
            if l != j {
                b += ev.green(y, x)?;
            }
        }
        let b = 8.0 * PI * b;
        Ok([problem.u0(0, y)? - u0q[0] + b, problem.u0(1, y)? - u0q[1] + b])
    };
    // annulus r ∈ [ρ_a, ρ_b]: ∫ r⁻³ ⟨e^f − 1⟩ dr dφ, with points paired through qⱼ
    let na = opts.angular;
    let annulus = |ra: f64, rb: f64| -> Result<[f64; 2]> {
        let mut acc = [0.0; 2];
        // geometric panels resolve the r⁻³ weight
        let mut edges = vec![ra];
        while *edges.last().unwrap() * 1.6 < rb {
            let next = edges.last().unwrap() * 1.6;
            edges.push(next);
        }
        edges.push(rb);
        for w in edges.windows(2) {
            for (r, wr) in gl_interval(opts.radial, w[0], w[1]) {
                let mut ring = [0.0; 2];
                for a in 0..na {
                    let phi = PI * (a as f64 + 0.5) / na as f64;
                    let d = [r * phi.cos(), r * phi.sin()];
                    let fp = f_pair(add(qj, d))?;
                    let fm = f_pair(sub(qj, d))?;
                    for s in 0..2 {
                        ring[s] += fp[s].exp_m1() + fm[s].exp_m1();
                    }
                }
                for s in 0..2 {
                    acc[s] += wr * ring[s] * (PI / na as f64) / (r * r * r);
                }
            }
        }
        Ok(acc)
    };
    // cell minus B_{r_in}: fans over each edge
    let mut outer = [0.0; 2];
    for e in cell.edges() {
        let npan = ((e.phi_b - e.phi_a) / 0.15).ceil().max(1.0) as usize;
        for p in 0..npan {
            let a = e.phi_a + (e.phi_b - e.phi_a) * p as f64 / npan as f64;
            let b = e.phi_a + (e.phi_b - e.phi_a) * (p + 1) as f64 / npan as f64;
            for (phi, wphi) in gl_interval(opts.radial, a, b) {
                let rmax = e.h / (phi - e.phi0).cos();
                let dir = [phi.cos(), phi.sin()];
                for half in 0..2 {
                    let (lo, hi) = if half == 0 {
                        (r_in, 0.5 * (r_in + rmax))
                    } else {
                        (0.5 * (r_in + rmax), rmax)
                    };
                    for (r, wr) in gl_interval(opts.radial, lo, hi) {
                        let f = f_pair(add(qj, [r * dir[0], r * dir[1]]))?;
                        for s in 0..2 {
                            outer[s] += wphi * wr * f[s].exp_m1() / (r * r * r);
                        }
                    }
                }
            }
        }
    }
    let ext = cell.exterior_inverse_quartic();
    let mut out = [Vec::new(), Vec::new()];
    let mut running = outer;
    let mut prev = r_in;
    for &d in &opts.deltas {
        let piece = annulus(d, prev)?;
        for s in 0..2 {
            running[s] += piece[s];
            out[s].push(running[s] - ext);
        }
        prev = d;
    }
    Ok(out)
}

/// 𝒟⁽²⁾(q) for a given partition, with its δ table.
pub fn dsq_with_partition(
    problem: &Problem,
    q: &[Vec2],
    partition: &CellPartition,
    opts: &DsqOptions,
) -> Result<DsqReport> {
    if opts.deltas.is_empty() || opts.deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("dsq: δ schedule must be nonempty and decreasing".into()));
    }
    let (rho, rho_star) = weights(problem, q)?;
    let m = opts.deltas.len();
    let mut vals = vec![0.0; m];
    for (j, cell) in partition.cells.iter().enumerate() {
        let t = cell_terms(problem, q, j, cell, opts)?;
        for i in 0..m {
            vals[i] += rho[j] / rho[0] * t[0][i] + rho_star[j] / rho_star[0] * t[1][i];
        }
    }
    let mut table = Vec::with_capacity(m);
    for i in 0..m {
        let richardson = (i > 0).then(|| {
            let r = (opts.deltas[i - 1] / opts.deltas[i]).powi(2);
            (r * vals[i] - vals[i - 1]) / (r - 1.0)
        });
        let ratio = (i > 1).then(|| (vals[i - 2] - vals[i - 1]) / (vals[i - 1] - vals[i]));
        table.push(DsqRow { delta: opts.deltas[i], value: vals[i], richardson, ratio });
    }
    let last = table.last().unwrap();
    // a ratio well above 4 means the δ² term is absent (symmetric cells); the raw values then converge faster
    let fast = last.ratio.is_some_and(|r| r > 5.0);
    let value = if fast { last.value } else { last.richardson.unwrap_or(last.value) };
    let error_estimate = if fast {
        (vals[m - 1] - vals[m - 2]).abs()
    } else if m >= 3 {
        (table[m - 1].richardson.unwrap() - table[m - 2].richardson.unwrap()).abs()
    } else {
        (vals[m - 1] - vals[0]).abs()
    };
    let converged = match last.ratio {
        Some(r) => fast || (r - 4.0).abs() < 1.0 || error_estimate < 1e-9 * (1.0 + value.abs()),
        None => false,
    };
    if !converged {
        log::warn!("dsq: δ-extrapolation not converged (ratio {:?}); gradient may be too large", last.ratio);
    }
    Ok(DsqReport { value, table, converged, error_estimate })
}

/// 𝒟⁽²⁾(q) on the Voronoi partition of q.
pub fn dsq(problem: &Problem, q: &[Vec2], opts: &DsqOptions) -> Result<DsqReport> {
    let part = voronoi_partition(&problem.torus, q)?;
    dsq_with_partition(problem, q, &part, opts)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub grad: f64,
    pub nondeg: f64,
    pub a1: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { grad: 1e-8, nondeg: 1e-6, a1: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Maximum,
    Minimum,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flags {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub a4: bool,
}

/// Everything known about one candidate blow-up configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub centers: Vec<Vec2>,
    pub gstar: [f64; 2],
    pub grad: [Vec<f64>; 2],
    /// Hessian of G₁* + G₂*, row-major.
    pub hessian: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub kind: CriticalKind,
    /// max |(u₀,₁ − u₀,₂)(qᵢ) − (u₀,₁ − u₀,₂)(qⱼ)|.
    pub a1_deviation: f64,
    pub dsq: Option<DsqReport>,
    pub flags: Flags,
    pub tolerances: Tolerances,
}

/// Evaluates G*, derivatives, 𝒟⁽²⁾ and the assumption flags at q.
pub fn analyze(problem: &Problem, q: &[Vec2], tol: Tolerances, dsq_opts: Option<&DsqOptions>) -> Result<ReductionReport> {
    let g = gstar(problem, q)?;
    let grad = gstar_grad(problem, q)?;
    let [h1, h2] = gstar_hess(problem, q)?;
    let h = h1 + h2;
    let h = (&h + h.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    let kind = if eig.iter().any(|e| e.abs() <= tol.nondeg) {
        CriticalKind::Degenerate
    } else if eig.iter().all(|e| *e < 0.0) {
        CriticalKind::Maximum
    } else if eig.iter().all(|e| *e > 0.0) {
        CriticalKind::Minimum
    } else {
        CriticalKind::Saddle
    };
    let diffs: Vec<f64> = q
        .iter()
        .map(|x| Ok(problem.u0(0, *x)? - problem.u0(1, *x)?))
        .collect::<Result<_>>()?;
    let mut a1_deviation: f64 = 0.0;
    for a in &diffs {
        for b in &diffs {
            a1_deviation = a1_deviation.max((a - b).abs());
        }
    }
    let dsq = match dsq_opts {
        Some(o) => Some(dsq(problem, q, o)?),
        None => None,
    };
    let gn = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let flags = Flags {
        a1: a1_deviation < tol.a1,
        a2: gn(&grad[0]) < tol.grad && gn(&grad[1]) < tol.grad,
        a3: eig.iter().all(|e| e.abs() > tol.nondeg),
        a4: dsq.as_ref().is_some_and(|d| d.value < 0.0),
    };
    let hessian = (0..h.nrows()).map(|r| h.row(r).iter().copied().collect()).collect();
    Ok(ReductionReport {
        centers: q.to_vec(),
        gstar: g,
        grad,
        hessian,
        eigenvalues: eig,
        kind,
        a1_deviation,
        dsq,
        flags,
        tolerances: tol,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Seeds per axis for each center (k = 1 uses the full grid).
    pub seeds_per_axis: usize,
    /// Seed count for k ≥ 2, drawn from the product grid.
    pub multi_seeds: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { seeds_per_axis: 8, multi_seeds: 64, seed: 1, max_iter: 60, grad_tol: 1e-10 }
    }
}

fn total_grad(problem: &Problem, q: &[Vec2]) -> Result<DVector<f64>> {
    let [a, b] = gstar_grad(problem, q)?;
    Ok(DVector::from_iterator(a.len(), a.iter().zip(&b).map(|(x, y)| x + y)))
}

/// Damped Newton on ∇(G₁* + G₂*) from one seed.
pub fn newton_critical(problem: &Problem, seed: &[Vec2], opts: &SearchOptions) -> Result<Vec<Vec2>> {
    let t = &problem.torus;
    let mut q: Vec<Vec2> = seed.iter().map(|x| t.wrap(*x)).collect();
    let mut g = total_grad(problem, &q)?;
    for _ in 0..opts.max_iter {
        if g.norm() < opts.grad_tol {
            return Ok(q);
        }
        let [h1, h2] = gstar_hess(problem, &q)?;
        let h = h1 + h2;
        let step = match h.clone().lu().solve(&g) {
            Some(s) => s,
            None => g.clone(),
        };
        let mut lam = 1.0;
        let mut accepted = false;
        while lam > 1e-4 {
            let trial: Vec<Vec2> =
                q.iter().enumerate().map(|(i, x)| t.wrap([x[0] - lam * step[2 * i], x[1] - lam * step[2 * i + 1]])).collect();
            if let Ok(gt) = total_grad(problem, &trial) {
                if gt.norm() < (1.0 - 1e-4 * lam) * g.norm() {
                    q = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if g.norm() < opts.grad_tol {
        Ok(q)
    } else {
        Err(Error::Convergence(format!("critical-point Newton stalled at |∇| = {:.3e}", g.norm())))
    }
}

fn same_configuration(problem: &Problem, a: &[Vec2], b: &[Vec2]) -> bool {
    // every center of a matches a distinct center of b modulo the lattice
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        match (0..b.len()).find(|&j| !used[j] && problem.torus.dist(*x, b[j]) < 1e-7) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

/// Critical points of G₁* + G₂* from a seed lattice plus `guesses`, deduplicated.
pub fn find_critical_points(
    problem: &Problem,
    k: usize,
    guesses: &[Vec<Vec2>],
    opts: &SearchOptions,
    tol: Tolerances,
    dsq_opts: Option<&DsqOptions>,
) -> Result<Vec<ReductionReport>> {
    let t = &problem.torus;
    let m = opts.seeds_per_axis;
    let lattice: Vec<Vec2> = (0..m * m)
        .map(|s| t.to_cart([(s / m) as f64 / m as f64 + 0.5 / m as f64, (s % m) as f64 / m as f64 + 0.5 / m as f64]))
        .collect();
    let mut seeds: Vec<Vec<Vec2>> = guesses.to_vec();
    if k == 1 {
        seeds.extend(lattice.iter().map(|x| vec![*x]));
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.multi_seeds {
            seeds.push((0..k).map(|_| lattice[rng.gen_range(0..lattice.len())]).collect());
        }
    }
    let mut found: Vec<Vec<Vec2>> = Vec::new();
    for s in &seeds {
        let min_sep = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| t.dist(s[i], s[j]))
            .fold(f64::INFINITY, f64::min);
        if min_sep < 1e-9 || s.iter().any(|x| problem.vortex_distance(*x) < 1e-9) {
            continue;
        }
        let Ok(q) = newton_critical(problem, s, opts) else { continue };
        let sep = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| t.dist(q[i], q[j]))
            .fold(f64::INFINITY, f64::min);
        if sep < 1e-6 || q.iter().any(|x| problem.vortex_distance(*x) < 1e-6) {
            continue;
        }
        if !found.iter().any(|f| same_configuration(problem, f, &q)) {
            found.push(q);
        }
    }
    found.sort_by(|a, b| {
        let key = |v: &Vec<Vec2>| {
            let f = t.to_frac(v[0]);
            (f[0], f[1])
        };
        key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal)
    });
    found.iter().map(|q| analyze(problem, q, tol, dsq_opts)).collect()
}

/// ∇(G₁* + G₂*) norm for a configuration.
pub fn total_grad_norm(problem: &Problem, q: &[Vec2]) -> Result<f64> {
    Ok(total_grad(problem, q)?.norm())
}

impl DsqReport {
    /// Columns delta, value, richardson, ratio (NaN where undefined).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let rows: Vec<Vec<f64>> = self
            .table
            .iter()
            .map(|r| vec![r.delta, r.value, r.richardson.unwrap_or(f64::NAN), r.ratio.unwrap_or(f64::NAN)])
            .collect();
        crate::io::write_table(path, &["delta", "value", "richardson", "ratio"], &rows)
    }
}
