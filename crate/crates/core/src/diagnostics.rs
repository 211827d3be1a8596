//! Local masses, heights, blow-up profiles, the flux relation and the
//! (a₁)–(a₅) certificate, with CSV and SVG export.

use crate::bubble::BubbleParams;
use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid, GridField};
use crate::problem::{Discretization, Problem};
use crate::solver::ContinuationState;
use crate::torus::Vec2;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsOptions {
    /// Radius of the mass balls; default 0.45·min(injectivity radius, ½ min center distance).
    pub radius: Option<f64>,
    /// Profile window |y| ≤ window in rescaled variables.
    pub window: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions { radius: None, window: 5.0 }
    }
}

impl DiagnosticsOptions {
    pub fn radius_for(&self, grid: &Grid, centers: &[Vec2]) -> f64 {
        self.radius.unwrap_or_else(|| default_mass_radius(grid, centers))
    }
}

pub fn default_mass_radius(grid: &Grid, centers: &[Vec2]) -> f64 {
    let t = &grid.torus;
    let mut r = t.injectivity_radius();
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            r = r.min(0.5 * t.dist(*a, *b));
        }
    }
    0.45 * r
}

/// Densities (ε⁻²e^{u₂}(1 − e^{u₁}), ε⁻²e^{u₁}(1 − e^{u₂})) for u = u₀ + w.
pub fn mass_densities(disc: &Discretization, w: &FieldPair, eps: f64) -> FieldPair {
    let le = -2.0 * eps.ln();
    let u = [w[0].add(&disc.u0[0]), w[1].add(&disc.u0[1])];
    [0, 1].map(|i| u[1 - i].zip(&u[i], |a, b| (a + le).exp() - (a + b + le).exp()))
}

fn check_balls(grid: &Grid, centers: &[Vec2], d: f64) -> Result<()> {
    let t = &grid.torus;
    if !(d > 0.0) || d >= t.injectivity_radius() {
        return Err(Error::Config(format!("mass radius {d} must lie in (0, injectivity radius)")));
    }
    for (i, a) in centers.iter().enumerate() {
        for (j, b) in centers.iter().enumerate().skip(i + 1) {
            if t.dist(*a, *b) <= 2.0 * d {
                return Err(Error::Config(format!(
                    "mass balls of radius {d:.4} around centers {i} and {j} overlap (diagnostics.radius)"
                )));
            }
        }
    }
    Ok(())
}

/// (m₁,ⱼ, m₂,ⱼ) = ∫_{B_d(qⱼ)} of the two densities, by the grid rule.
pub fn local_masses(disc: &Discretization, w: &FieldPair, eps: f64, centers: &[Vec2], d: f64) -> Result<Vec<[f64; 2]>> {
    check_balls(&disc.grid, centers, d)?;
    let dens = mass_densities(disc, w, eps);
    Ok(ball_sums(&disc.grid, &dens, centers, d))
}

fn ball_sums(grid: &Grid, dens: &FieldPair, centers: &[Vec2], d: f64) -> Vec<[f64; 2]> {
    let n = grid.n;
    let cell = grid.torus.area() / (n * n) as f64;
    centers
        .iter()
        .map(|c| {
            let mut m = [0.0; 2];
            for idx in 0..n * n {
                if grid.torus.dist(grid.node(idx / n, idx % n), *c) < d {
                    m[0] += dens[0].data[idx] * cell;
                    m[1] += dens[1].data[idx] * cell;
                }
            }
            m
        })
        .collect()
}

/// |1/M₁ + 1/M₂ − 1/(4π)|.
pub fn flux_relation(m1: f64, m2: f64) -> f64 {
    (1.0 / m1 + 1.0 / m2 - 1.0 / (4.0 * PI)).abs()
}

/// Location and value of a refined grid maximum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Peak {
    pub position: Vec2,
    pub value: f64,
}

/// Maximum of `f` over nodes within `d` of `center`.
///
/// The top node is refined by a quadratic fit of e^{−(f − f₀)/2} on its 3×3
/// neighbourhood, which is exact for a Liouville bubble.
pub fn ball_peak(grid: &Grid, f: &GridField, center: Vec2, d: f64) -> Peak {
    let n = grid.n;
    let mut best = (0, f64::NEG_INFINITY);
    for idx in 0..n * n {
        if grid.torus.dist(grid.node(idx / n, idx % n), center) < d && f.data[idx] > best.1 {
            best = (idx, f.data[idx]);
        }
    }
    let (i, j) = (best.0 / n, best.0 % n);
    let f0 = best.1;
    let g = |a: isize, b: isize| {
        let ii = (i as isize + a).rem_euclid(n as isize) as usize;
        let jj = (j as isize + b).rem_euclid(n as isize) as usize;
        (-(f.data[ii * n + jj] - f0) / 2.0).exp()
    };
    let bx = 0.5 * (g(1, 0) - g(-1, 0));
    let by = 0.5 * (g(0, 1) - g(0, -1));
    let dxx = g(1, 0) - 2.0 + g(-1, 0);
    let dyy = g(0, 1) - 2.0 + g(0, -1);
    let dxy = 0.25 * (g(1, 1) - g(1, -1) - g(-1, 1) + g(-1, -1));
    let det = dxx * dyy - dxy * dxy;
    let mut off = [0.0; 2];
    let mut value = f0;
    if dxx > 0.0 && det > 0.0 {
        let xi = -(dyy * bx - dxy * by) / det;
        let eta = -(dxx * by - dxy * bx) / det;
        let gmin = 1.0 + 0.5 * (bx * xi + by * eta);
        if xi.abs() <= 1.0 && eta.abs() <= 1.0 && gmin > 0.0 {
            off = [xi, eta];
            value = f0 - 2.0 * gmin.ln();
        }
    }
    let h = 1.0 / n as f64;
    let position = grid.torus.wrap(grid.torus.to_cart([(i as f64 + off[0]) * h, (j as f64 + off[1]) * h]));
    Peak { position, value }
}

/// Rescaled samples ũ(y) = u(x + y/μ) − β on |y| ≤ window and the fit to
/// ln(8/(1+|y|²)²) + c.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFit {
    /// (|y|, ũ) at every node inside the window.
    pub samples: Vec<[f64; 2]>,
    pub constant: f64,
    pub rms: f64,
}

pub fn limit_profile(s: f64) -> f64 {
    (8.0 / (1.0 + s * s).powi(2)).ln()
}

pub fn blowup_profile(grid: &Grid, u: &GridField, center: Vec2, beta: f64, mu: f64, window: f64, d: f64) -> Result<ProfileFit> {
    if window > d * mu {
        return Err(Error::Config(format!(
            "profile window {window} exceeds d·μ = {:.3} (diagnostics.window)",
            d * mu
        )));
    }
    let n = grid.n;
    let mut samples = Vec::new();
    for idx in 0..n * n {
        let s = mu * grid.torus.dist(grid.node(idx / n, idx % n), center);
        if s <= window {
            samples.push([s, u.data[idx] - beta]);
        }
    }
    if samples.is_empty() {
        return Err(Error::Domain("no grid node inside the profile window".into()));
    }
    let m = samples.len() as f64;
    let constant = samples.iter().map(|[s, v]| v - limit_profile(*s)).sum::<f64>() / m;
    let rms = (samples.iter().map(|[s, v]| (v - limit_profile(*s) - constant).powi(2)).sum::<f64>() / m).sqrt();
    Ok(ProfileFit { samples, constant, rms })
}

/// Per-step bubbling measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BubbleDiagnostics {
    pub radius: f64,
    /// (m₁,ⱼ, m₂,ⱼ) over B_d(xⱼ).
    pub masses: Vec<[f64; 2]>,
    /// Integral of the densities off the balls, per species.
    pub remainder: [f64; 2],
    /// (M₁,ⱼ, M₂,ⱼ): masses extrapolated from radii d/2 and d with a d⁻² tail.
    pub flux: Vec<[f64; 2]>,
    /// max over j of |1/M₁ + 1/M₂ − 1/4π| relative to 1/4π.
    pub flux_defect: f64,
    /// βⱼ = max over B_d of max(u₁, u₂).
    pub heights: Vec<f64>,
    /// x_{i,j} per bubble and species.
    pub argmax: Vec<[Vec2; 2]>,
    /// uᵢ(x_{i,j}).
    pub peaks: Vec<[f64; 2]>,
    /// max of uᵢ off the balls.
    pub far_max: [f64; 2],
    /// max over i of |x_{i,j} − qⱼ| with q the seed centers.
    pub drift: Vec<f64>,
    /// μ from the height, √(e^{βⱼ}/(8ε²)).
    pub mu_eff: Vec<f64>,
    pub profile_rms: Vec<f64>,
    pub profile_constant: Vec<f64>,
}

/// Measures a solution w (u = u₀ + w) with balls around the current centers.
pub fn measure(
    problem: &Problem,
    disc: &Discretization,
    w: &FieldPair,
    eps: f64,
    seed: &[Vec2],
    params: &BubbleParams,
    opts: &DiagnosticsOptions,
) -> Result<BubbleDiagnostics> {
    let grid = &disc.grid;
    let centers = &params.centers;
    let d = opts.radius_for(grid, centers);
    check_balls(grid, centers, d)?;
    let dens = mass_densities(disc, w, eps);
    let masses = ball_sums(grid, &dens, centers, d);
    let half = ball_sums(grid, &dens, centers, 0.5 * d);
    let flux: Vec<[f64; 2]> =
        masses.iter().zip(&half).map(|(m, h)| [0, 1].map(|i| (4.0 * m[i] - h[i]) / 3.0)).collect();
    let flux_defect =
        flux.iter().map(|m| flux_relation(m[0], m[1]) * 4.0 * PI).fold(0.0, f64::max);
    let u = [w[0].add(&disc.u0[0]), w[1].add(&disc.u0[1])];
    let mut heights = Vec::new();
    let mut argmax = Vec::new();
    let mut peaks = Vec::new();
    let mut drift = Vec::new();
    let mut mu_eff = Vec::new();
    let mut profile_rms = Vec::new();
    let mut profile_constant = Vec::new();
    for (j, c) in centers.iter().enumerate() {
        let p = [ball_peak(grid, &u[0], *c, d), ball_peak(grid, &u[1], *c, d)];
        let beta = p[0].value.max(p[1].value);
        let q = seed.get(j).copied().unwrap_or(*c);
        drift.push(p.iter().map(|pk| grid.torus.dist(pk.position, q)).fold(0.0, f64::max));
        let mu = (beta.exp() / (8.0 * eps * eps)).sqrt();
        let top = if p[0].value >= p[1].value { 0 } else { 1 };
        let window = opts.window.min(d * mu);
        let fit = blowup_profile(grid, &u[top], p[top].position, p[top].value, mu, window, d)?;
        heights.push(beta);
        argmax.push([p[0].position, p[1].position]);
        peaks.push([p[0].value, p[1].value]);
        mu_eff.push(mu);
        profile_rms.push(fit.rms);
        profile_constant.push(fit.constant);
    }
    let n = grid.n;
    let cell = grid.torus.area() / (n * n) as f64;
    let mut far_max = [f64::NEG_INFINITY; 2];
    let mut remainder = [0.0; 2];
    for idx in 0..n * n {
        let x = grid.node(idx / n, idx % n);
        if centers.iter().all(|c| grid.torus.dist(x, *c) >= d) {
            for i in 0..2 {
                far_max[i] = far_max[i].max(u[i].data[idx]);
                remainder[i] += dens[i].data[idx] * cell;
            }
        }
    }
    for i in 0..2 {
        let total = masses.iter().map(|m| m[i]).sum::<f64>() + remainder[i];
        let defect = (total - problem.flux()).abs() / problem.flux();
        if defect > 1e-6 {
            log::warn!("species {}: local masses plus remainder miss 8kπ by {defect:.2e} relative", i + 1);
        }
    }
    Ok(BubbleDiagnostics {
        radius: d,
        masses,
        remainder,
        flux,
        flux_defect,
        heights,
        argmax,
        peaks,
        far_max,
        drift,
        mu_eff,
        profile_rms,
        profile_constant,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateOptions {
    /// A quantity counts as bounded when its slope against ln(1/ε) stays below this.
    pub bounded_slope: f64,
    /// (a₅) also passes when every ratio stays below this level.
    pub a5_floor: f64,
    /// (a₄) also passes when every difference stays below this level.
    pub a4_floor: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions { bounded_slope: 0.25, a5_floor: 0.5, a4_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendFlag {
    pub name: String,
    /// Least-squares slope against ln(1/ε).
    pub slope: f64,
    pub values: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub eps: Vec<f64>,
    pub flags: Vec<TrendFlag>,
}

impl Certificate {
    pub fn all_pass(&self) -> bool {
        self.flags.iter().all(|f| f.pass)
    }

    pub fn flag(&self, name: &str) -> Option<&TrendFlag> {
        self.flags.iter().find(|f| f.name == name)
    }
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Trend flags (a₁)–(a₅) over the accepted steps of a sweep.
pub fn bubbling_certificate(state: &ContinuationState, opts: &CertificateOptions) -> Result<Certificate> {
    let h = &state.history;
    if h.len() < 3 {
        return Err(Error::InsufficientHistory(format!(
            "the certificate needs at least 3 accepted steps, the state has {}",
            h.len()
        )));
    }
    let eps: Vec<f64> = h.iter().map(|s| s.eps).collect();
    let logs: Vec<f64> = eps.iter().map(|e| (1.0 / e).ln()).collect();
    let lift = |e: f64| 2.0 * (1.0 / e).ln();
    let a1: Vec<f64> = h
        .iter()
        .map(|s| s.diagnostics.peaks.iter().flat_map(|p| p.iter()).fold(f64::INFINITY, |m, v| m.min(*v)) + lift(s.eps))
        .collect();
    let a2: Vec<f64> = h.iter().map(|s| s.diagnostics.far_max[0].max(s.diagnostics.far_max[1]) + lift(s.eps)).collect();
    let a3: Vec<f64> = h.iter().map(|s| s.diagnostics.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let a4: Vec<f64> =
        h.iter().map(|s| s.diagnostics.peaks.iter().map(|p| (p[0] - p[1]).abs()).fold(0.0, f64::max)).collect();
    let a5: Vec<f64> = h
        .iter()
        .map(|s| {
            let d = &s.diagnostics;
            (0..d.drift.len()).map(|j| d.drift[j] / (s.eps * (-0.5 * d.heights[j]).exp())).fold(0.0, f64::max)
        })
        .collect();
    let flag = |name: &str, values: Vec<f64>, test: &dyn Fn(f64, &[f64]) -> bool| {
        let slope = fit_slope(&logs, &values);
        TrendFlag { name: name.to_string(), slope, pass: test(slope, &values), values }
    };
    let maxv = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let flags = vec![
        flag("a1", a1, &|s, _| s > 0.0),
        flag("a2", a2, &|s, _| s < 0.0),
        flag("a3", a3, &|s, _| s < 0.0),
        flag("a4", a4, &|s, v| s <= opts.bounded_slope || maxv(v) <= opts.a4_floor),
        flag("a5", a5, &|s, v| s <= opts.bounded_slope || maxv(v) <= opts.a5_floor),
    ];
    Ok(Certificate { eps, flags })
}

/// Line plot of one or more (x, y) series; x on a log axis when `log_x`.
pub fn plot_series(path: &Path, title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)], log_x: bool) -> Result<()> {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    if pts.is_empty() {
        return Err(Error::Domain(format!("{}: nothing to plot", path.display())));
    }
    let tx = |x: f64| if log_x { x.ln() } else { x };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x0 = x0.min(tx(*x));
        x1 = x1.max(tx(*x));
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let pad = |a: f64, b: f64| if b > a { 0.05 * (b - a) } else { 0.5 * a.abs().max(1.0) };
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let plot_err = |e: String| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e) };
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(|e| plot_err(e.to_string()))?;
    let xl = if log_x { format!("ln {x_label}") } else { x_label.to_string() };
    chart.configure_mesh().x_desc(xl).draw().map_err(|e| plot_err(e.to_string()))?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let data: Vec<(f64, f64)> = s.iter().map(|(x, y)| (tx(*x), *y)).collect();
        chart
            .draw_series(LineSeries::new(data.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(data.iter().map(|p| Circle::new(*p, 3, color.filled())))
            .map_err(|e| plot_err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}

/// Writes the sweep table, the certificate (when available) and the mass and profile plots into `dir`.
pub fn export_report(state: &ContinuationState, dir: &Path, opts: &CertificateOptions) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let table = dir.join("sweep.csv");
    state.write_csv(&table)?;
    out.push(table);
    if let Ok(cert) = bubbling_certificate(state, opts) {
        let p = dir.join("certificate.json");
        crate::io::write_json(&p, &cert)?;
        out.push(p);
    }
    if !state.history.is_empty() {
        let k = state.seed.len();
        let mut series = Vec::new();
        for j in 0..k {
            for i in 0..2 {
                let s: Vec<(f64, f64)> =
                    state.history.iter().map(|h| (h.eps, h.diagnostics.masses[j][i] / (8.0 * PI))).collect();
                series.push((format!("m{}_{} / 8π", i + 1, j + 1), s));
            }
        }
        let p = dir.join("masses.svg");
        plot_series(&p, "local masses", "ε", &series, true)?;
        out.push(p);
        let rms: Vec<(f64, f64)> = state
            .history
            .iter()
            .map(|h| (h.eps, h.diagnostics.profile_rms.iter().copied().fold(0.0, f64::max)))
            .collect();
        let p = dir.join("profile_rms.svg");
        plot_series(&p, "profile fit RMS", "ε", &[("rms".to_string(), rms)], true)?;
        out.push(p);
    }
    Ok(out)
}
