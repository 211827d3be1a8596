use crate::{Failure, Input};
use csbubble::bubble::{assemble_approx, residual, ApproxScalars, Assembly, BubbleParams, QuadOptions};
use csbubble::config::{RunConfig, Setup};
use csbubble::diagnostics::{bubbling_certificate, export_report};
use csbubble::green::{GreenEvaluator, DEFAULT_ETA};
use csbubble::io::{write_json, write_table};
use csbubble::krylov::KrylovOptions;
use csbubble::linops::{inverse_bound_at, BoundRow};
use csbubble::problem::Discretization;
use csbubble::reduction::{analyze, find_critical_points, ReductionReport};
use csbubble::solver::{continuation_sweep, continue_sweep, solve_reduced, ContinuationState, ReducedSolution, StepRecord};
use csbubble::torus::{sub, Vec2};
use csbubble::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

type Outcome = std::result::Result<(), Failure>;

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    Ok(cfg.output.clone())
}

fn prepare(cfg: &RunConfig) -> Result<(Setup, Discretization)> {
    let s = cfg.setup()?;
    let d = cfg.discretize(&s)?;
    Ok((s, d))
}

/// Fractional coordinates in the frame of the configuration file.
fn frac(s: &Setup, x: Vec2) -> Vec2 {
    let t = &s.problem.torus;
    t.to_frac(t.wrap(sub(x, s.shift))).map(|f| {
        let f = f.rem_euclid(1.0);
        if 1.0 - f < 1e-12 { 0.0 } else { f }
    })
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

#[derive(Serialize)]
struct GreenReport {
    a1: Vec2,
    a2: Vec2,
    area: f64,
    robin: f64,
    /// Pole of the tabulated G(·, p), in grid coordinates.
    pole: Vec2,
    eta: [f64; 2],
    /// max |G_η₁ − G_η₂| over the sample points.
    splitting_difference: f64,
    samples: Vec<[f64; 3]>,
}

pub fn green(input: &Input) -> Outcome {
    let cfg = input.load()?;
    let (s, d) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let ev = &s.problem.green;
    let t = &s.problem.torus;
    let pole = cfg.vortices.species1.first().map(|f| t.wrap(csbubble::torus::add(t.to_cart(*f), s.shift))).unwrap_or(s.shift);
    let other = GreenEvaluator::with_eta(t.clone(), 2.0 * DEFAULT_ETA, cfg.grid.green_accuracy)?;
    let mut samples = Vec::new();
    let mut diff: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let x = t.to_cart([(i as f64 + 0.37) / 8.0, (j as f64 + 0.61) / 8.0]);
            if t.dist(x, pole) < 1e-9 {
                continue;
            }
            let g = ev.green(x, pole)?;
            diff = diff.max((g - other.green(x, pole)?).abs());
            samples.push([x[0], x[1], g]);
        }
    }
    let report = GreenReport {
        a1: t.a[0],
        a2: t.a[1],
        area: t.area(),
        robin: ev.robin(),
        pole,
        eta: [DEFAULT_ETA, 2.0 * DEFAULT_ETA],
        splitting_difference: diff,
        samples,
    };
    write_json(&dir.join("green.json"), &report)?;
    let (g, gam) = ev.table(&d.grid, pole)?;
    let n = d.grid.n;
    let rows: Vec<Vec<f64>> = (0..n * n)
        .map(|idx| {
            let x = d.grid.node(idx / n, idx % n);
            vec![x[0], x[1], g.data[idx], gam.data[idx]]
        })
        .collect();
    write_table(&dir.join("green.csv"), &["x1", "x2", "G", "gamma"], &rows)?;
    println!("robin constant {:.15e}", report.robin);
    println!("splitting difference {:.3e}", diff);
    Ok(())
}

#[derive(Serialize)]
struct PointReport {
    /// Centers in fractional coordinates of the configuration frame.
    fractional: Vec<Vec2>,
    /// Sign of 𝒟⁽²⁾ when it was computed.
    sign: Option<char>,
    report: ReductionReport,
}

#[derive(Serialize)]
struct PointList {
    shift: Vec2,
    points: Vec<PointReport>,
}

fn point_list(s: &Setup, reports: Vec<ReductionReport>) -> PointList {
    let points = reports
        .into_iter()
        .map(|r| PointReport {
            fractional: r.centers.iter().map(|x| frac(s, *x)).collect(),
            sign: r.dsq.as_ref().map(|d| if d.value < 0.0 { '-' } else { '+' }),
            report: r,
        })
        .collect();
    PointList { shift: s.shift, points }
}

fn print_points(list: &PointList) {
    for (i, p) in list.points.iter().enumerate() {
        let at: Vec<String> = p.fractional.iter().map(|f| format!("({:.6}, {:.6})", f[0], f[1])).collect();
        let mut line = format!("{} {} {:?}", i + 1, at.join(" "), p.report.kind);
        if let Some(d) = &p.report.dsq {
            line.push_str(&format!(" D2 = {:.6e} ({})", d.value, p.sign.unwrap_or('?')));
        }
        println!("{line}");
    }
}

pub fn critpoints(input: &Input) -> Outcome {
    let cfg = input.load()?;
    let k = cfg.require_bubbling().map_err(usage)?;
    let (s, _) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let guesses: Vec<Vec<Vec2>> = if s.centers.is_empty() { Vec::new() } else { vec![s.centers.clone()] };
    let found = find_critical_points(&s.problem, k, &guesses, &cfg.search, cfg.tolerances, None)?;
    let list = point_list(&s, found);
    write_json(&dir.join("critpoints.json"), &list)?;
    print_points(&list);
    Ok(())
}

pub fn dsq(input: &Input, at_centers: bool) -> Outcome {
    let cfg = input.load()?;
    let k = if at_centers { cfg.require_centers() } else { cfg.require_bubbling() }.map_err(usage)?;
    let (s, _) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let reports = if at_centers {
        vec![analyze(&s.problem, &s.centers, cfg.tolerances, Some(&cfg.dsq))?]
    } else {
        let guesses: Vec<Vec<Vec2>> = if s.centers.is_empty() { Vec::new() } else { vec![s.centers.clone()] };
        find_critical_points(&s.problem, k, &guesses, &cfg.search, cfg.tolerances, Some(&cfg.dsq))?
    };
    for (i, r) in reports.iter().enumerate() {
        if let Some(d) = &r.dsq {
            d.write_csv(&dir.join(format!("dsq_{}.csv", i + 1)))?;
        }
    }
    let list = point_list(&s, reports);
    write_json(&dir.join("dsq.json"), &list)?;
    print_points(&list);
    Ok(())
}

#[derive(Serialize)]
struct ApproxReport {
    reduced: ReducedSolution,
    approx: ApproxScalars,
    /// ‖E‖∞ per species.
    residual_inf: [f64; 2],
}

pub fn approx(input: &Input) -> Outcome {
    let cfg = input.load()?;
    cfg.require_centers().map_err(usage)?;
    let (s, d) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let eps = cfg.solve.eps;
    let red = solve_reduced(&s.problem, &d, &s.centers, eps, &cfg.sweep.reduced)?;
    let params = BubbleParams::new(&s.problem, &red.centers, red.mu)?;
    let ap = assemble_approx(&s.problem, &d, &params, eps, Assembly::General, QuadOptions::default())?;
    let e = residual(&s.problem, &d, &ap)?;
    ap.write_csv(&d.grid, &dir.join("approx.csv"))?;
    let report = ApproxReport { reduced: red, approx: ap.scalars(), residual_inf: [e[0].max_abs(), e[1].max_abs()] };
    write_json(&dir.join("approx.json"), &report)?;
    println!(
        "eps {:.6e} mu {:.6e} mu*sqrt(eps) {:.4} residual {:.3e} {:.3e}",
        eps, report.reduced.mu, report.reduced.beta, report.residual_inf[0], report.residual_inf[1]
    );
    Ok(())
}

fn print_step(i: usize, h: &StepRecord) {
    let m: Vec<String> = h
        .diagnostics
        .masses
        .iter()
        .map(|m| format!("{:.4}/{:.4}", m[0] / (8.0 * std::f64::consts::PI), m[1] / (8.0 * std::f64::consts::PI)))
        .collect();
    println!(
        "step {i} eps {:.5e} mu {:.4e} residual {:.2e} identities {:.1e} {:.1e} masses/8pi {}",
        h.eps,
        h.mu,
        h.residual_inf,
        h.identity_defects[0],
        h.identity_defects[1],
        m.join(" ")
    );
}

pub fn solve(input: &Input) -> Outcome {
    let cfg = input.load()?;
    cfg.require_centers().map_err(usage)?;
    let (s, d) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let mut opts = cfg.sweep.clone();
    opts.eps0 = cfg.solve.eps;
    opts.steps = 1;
    let state = continuation_sweep(&s.problem, &d, &s.centers, opts, |_| Ok(()))?;
    let rec = &state.history[0];
    write_json(&dir.join("solve.json"), rec)?;
    let w = state.w.as_ref().expect("accepted step stores w");
    let n = d.grid.n;
    let rows: Vec<Vec<f64>> = (0..n * n)
        .map(|idx| {
            let x = d.grid.node(idx / n, idx % n);
            vec![x[0], x[1], w[0].data[idx] + d.u0[0].data[idx], w[1].data[idx] + d.u0[1].data[idx]]
        })
        .collect();
    write_table(&dir.join("solution.csv"), &["x1", "x2", "u1", "u2"], &rows)?;
    print_step(0, rec);
    Ok(())
}

pub fn sweep(input: &Input, resume: bool, max_steps: Option<usize>) -> Outcome {
    let cfg = input.load()?;
    let k = cfg.require_centers().map_err(usage)?;
    let (s, d) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let ckpt = dir.join("checkpoint.json");
    let table = dir.join("sweep.csv");
    let mut state = if resume {
        let st = ContinuationState::load(&ckpt)?;
        if st.seed.len() != k {
            return Err(usage(Error::Config(format!(
                "{} holds {} centers but the configuration gives k = {k} (centers)",
                ckpt.display(),
                st.seed.len()
            ))));
        }
        st
    } else {
        ContinuationState::new(&s.centers, cfg.sweep.clone())?
    };
    let start = state.history.len();
    let res = continue_sweep(&s.problem, &d, &mut state, max_steps, |st| {
        st.save(&ckpt)?;
        st.write_csv(&table)?;
        print_step(st.history.len() - 1, st.history.last().expect("step recorded"));
        Ok(())
    });
    if let Err(e) = res {
        if state.history.len() > start {
            log::warn!("progress up to step {} is in {}", state.history.len() - 1, ckpt.display());
        }
        return Err(e.into());
    }
    if state.history.is_empty() {
        state.save(&ckpt)?;
        state.write_csv(&table)?;
    }
    Ok(())
}

pub fn linops_bound(input: &Input) -> Outcome {
    let cfg = input.load()?;
    cfg.require_centers().map_err(usage)?;
    let (s, d) = prepare(&cfg)?;
    let dir = output_dir(&cfg)?;
    let mut rows: Vec<BoundRow> = Vec::new();
    for &mu in &cfg.linops.mus {
        let params = BubbleParams::new(&s.problem, &s.centers, mu)?;
        let row =
            inverse_bound_at(&d.grid, &params, cfg.sweep.alpha, cfg.linops.probes, cfg.linops.seed, KrylovOptions::default())?;
        println!("mu {:.4e} bound {:.6e} bound/ln(mu) {:.6e}", row.mu, row.bound, row.bound_over_log);
        rows.push(row);
    }
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.mu, r.bound, r.bound_over_log, r.projection_constant, r.iterations as f64])
        .collect();
    write_table(
        &dir.join("linops_bound.csv"),
        &["mu", "bound", "bound_over_log", "projection_constant", "iterations"],
        &table,
    )?;
    write_json(&dir.join("linops_bound.json"), &rows)?;
    Ok(())
}

pub fn report(input: &Input, checkpoint: Option<&Path>, strict: bool) -> Outcome {
    let cfg = input.load()?;
    let dir = output_dir(&cfg)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join("checkpoint.json"));
    let state = ContinuationState::load(&path)?;
    let files = export_report(&state, &dir, &cfg.certificate)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    match bubbling_certificate(&state, &cfg.certificate) {
        Ok(cert) => {
            for f in &cert.flags {
                println!("{} {} slope {:.4}", f.name, if f.pass { "pass" } else { "FAIL" }, f.slope);
            }
            if strict && !cert.all_pass() {
                let failed: Vec<&str> = cert.flags.iter().filter(|f| !f.pass).map(|f| f.name.as_str()).collect();
                return Err(Failure::Computation(Error::Convergence(format!(
                    "certificate flags failed: {} (certificate thresholds)",
                    failed.join(", ")
                ))));
            }
        }
        Err(e) if strict => return Err(Failure::Computation(e)),
        Err(e) => println!("no certificate: {e}"),
    }
    Ok(())
}
