use csbubble::bubble::*;
use csbubble::green::GreenEvaluator;
use csbubble::problem::{off_grid_shift, Discretization, Problem};
use csbubble::quadrature::{integrate_adaptive, Patch};
use csbubble::special::gl_interval;
use csbubble::torus::{add, dot, Torus, Vec2};
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

/// Square torus, two vortices of each species at the cell center; the bubble
/// sits at the half-period point away from them.
fn square_k1(n: usize) -> (Problem, Vec2) {
    let t = Torus::square();
    let p = [0.5, 0.5];
    let s = off_grid_shift(&t, n, &[p]);
    let ev = GreenEvaluator::new(t, 1e-15).unwrap();
    let v = add(p, s);
    (Problem::new(ev, &[v, v], &[v, v]).unwrap(), add([0.0, 0.0], s))
}

/// k = 1 with different vortex sets for the two species.
fn mixed_k1() -> (Problem, Vec2) {
    let t = Torus::new([1.0, 0.0], [0.2, 1.1]).unwrap();
    let ev = GreenEvaluator::new(t, 1e-15).unwrap();
    let pr = Problem::new(ev, &[[0.51, 0.43], [0.47, 0.6]], &[[0.55, 0.5], [0.45, 0.52]]).unwrap();
    (pr, [0.03, 0.02])
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn profile_center_value_and_equation() {
    let x = [0.3, -0.2];
    let mu = 17.0;
    assert_eq!(liouville_profile(x, mu, x), (8.0 * mu * mu).ln());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let r = rng.gen_range(0.0..2.0f64);
        let (d1, d2) = liouville_radial_derivs(mu, r);
        let lap = if r == 0.0 { 2.0 * d2 } else { d2 + d1 / r };
        let res = lap + liouville_radial(mu, r).exp();
        assert!(res.abs() < 1e-9 * (1.0 + mu * mu), "{res}");
    }
}

#[test]
fn profile_mass_is_eight_pi() {
    // radial quadrature on geometric panels plus the tail beyond R in closed form
    let mu = 23.0;
    let mut s = 0.0;
    let (mut a, mut b) = (0.0, 1e-3);
    while a < 1e4 {
        for (r, w) in gl_interval(16, a, b) {
            s += 2.0 * PI * r * w * liouville_radial(mu, r).exp();
        }
        a = b;
        b *= 1.5;
    }
    // ∫_{|y|>R} e^V = 8π/(1+μ²R²)
    s += 8.0 * PI / (1.0 + mu * mu * a * a);
    assert!((s - 8.0 * PI).abs() < 1e-10, "{s}");
    let d = 0.1;
    assert!((liouville_disc_mass(mu, d) - 8.0 * PI * (1.0 - 1.0 / (1.0 + mu * mu * d * d))).abs() < 1e-13);
}

#[test]
fn coupled_heights_examples() {
    assert_eq!(coupled_heights(7.0, &[3.0]).unwrap(), vec![7.0]);
    let m = coupled_heights(10.0, &[1.0, 4.0]).unwrap();
    assert_eq!(m[1], 5.0);
    let rho = [0.37, 2.9, 1e-3, 55.0];
    let m = coupled_heights(31.0, &rho).unwrap();
    for i in 0..rho.len() {
        let dev = (rho[i] * m[i] * m[i] - rho[0] * m[0] * m[0]).abs() / (rho[0] * m[0] * m[0]);
        assert!(dev < 1e-14);
    }
    assert!(coupled_heights(1.0, &[1.0, 0.0]).is_err());
    assert!(coupled_heights(1.0, &[1.0, -2.0]).is_err());
}

#[test]
fn weights_formulas_and_normalization_invariance() {
    let (pr, q) = square_k1(128);
    let (rho, rho_star) = weights(&pr, &[q]).unwrap();
    assert_eq!(rho, rho_star);
    let ev = &pr.green;
    let expect = (8.0 * PI * ev.green_regular(q, q) + pr.u0(0, q).unwrap()).exp();
    assert!((rho[0] / expect - 1.0).abs() < 1e-14);

    let t = Torus::new([1.0, 0.0], [0.3, 0.95]).unwrap();
    let v1 = [[0.1, 0.1], [0.4, 0.2], [0.6, 0.7], [0.2, 0.8]];
    let v2 = [[0.5, 0.5], [0.9, 0.3], [0.3, 0.45], [0.75, 0.15]];
    let centers = [[0.25, 0.5], [0.8, 0.55]];
    let mut ratios = Vec::new();
    for c in [0.0, 0.37] {
        let ev = GreenEvaluator::new(t.clone(), 1e-15).unwrap().with_offset(c);
        let pr = Problem::new(ev, &v1, &v2).unwrap();
        let (rho, rho_star) = weights(&pr, &centers).unwrap();
        for i in 0..2 {
            let r = rho_star[i] / rho[i];
            let e = (pr.u0(1, centers[i]).unwrap() - pr.u0(0, centers[i]).unwrap()).exp();
            assert!((r / e - 1.0).abs() < 1e-12);
        }
        ratios.push(rho[0] / rho[1]);
    }
    assert!((ratios[0] / ratios[1] - 1.0).abs() < 1e-12);
}

#[test]
fn center_on_vortex_is_rejected() {
    let (pr, _) = square_k1(128);
    let v = pr.u0[0].sites[0].0;
    assert!(weights(&pr, &[v]).is_err());
    assert!(BubbleParams::new(&pr, &[v], 10.0).is_err());
}

#[test]
fn overlapping_balls_are_a_config_error() {
    let t = Torus::square();
    let ev = GreenEvaluator::new(t, 1e-15).unwrap();
    let v = [[0.1, 0.1], [0.1, 0.1], [0.6, 0.6], [0.6, 0.6]];
    let pr = Problem::new(ev, &v, &v).unwrap();
    let c = [[0.3, 0.8], [0.45, 0.8]];
    let err = BubbleParams::with_radii(&pr, &c, 20.0, &[0.1, 0.1]).unwrap_err();
    assert!(matches!(err, csbubble::Error::Config(_)));
    assert!(BubbleParams::with_radii(&pr, &c, 20.0, &[0.07, 0.07]).is_ok());
}

#[test]
fn omega_star_is_c1_across_the_ball_boundary() {
    let (pr, _) = mixed_k1();
    let ev = &pr.green;
    for mu in [5.0, 40.0, 300.0] {
        let par = BubbleParams::with_radii(&pr, &[[0.03, 0.02], [0.52, 1.05]], mu, &[0.12, 0.1]).unwrap();
        for i in 0..2 {
            let (x, d) = (par.centers[i], par.radii[i]);
            for a in 0..32 {
                let phi = 2.0 * PI * a as f64 / 32.0;
                let n = [phi.cos(), phi.sin()];
                let y = add(x, [d * n[0], d * n[1]]);
                let vin = par.omega_star_inner(ev, i, y);
                let vout = par.omega_star_outer(ev, i, y).unwrap();
                let gin = par.omega_star_inner_grad(ev, i, y);
                let gout = par.omega_star_outer_grad(ev, i, y).unwrap();
                assert!((vin - vout).abs() < 1e-10, "value jump {}", vin - vout);
                let jump = dot(gin, n) - dot(gout, n);
                assert!(jump.abs() < 1e-10, "derivative jump {jump}");
            }
        }
    }
}

#[test]
fn omega_star_integral_matches_quadrature() {
    let (pr, _) = mixed_k1();
    let par = BubbleParams::with_radii(&pr, &[[0.03, 0.02], [0.52, 1.05]], 30.0, &[0.12, 0.1]).unwrap();
    let patches: Vec<Patch> =
        (0..2).map(|i| Patch::bubble(par.centers[i], par.radii[i], par.mus[i], 1.6 * par.radii[i])).collect();
    let (v, _, _) = integrate_adaptive(&pr.torus, &patches, 1e-11, 1024, |y| [par.omega_star(&pr.green, y)]);
    let exact = par.omega_star_integral(0.0);
    assert!((v[0] - exact).abs() < 1e-9 * (1.0 + exact.abs()), "{} {}", v[0], exact);
}

#[test]
fn omega_has_zero_grid_mean_and_matches_pointwise() {
    let (pr, q) = square_k1(128);
    let disc = Discretization::new(&pr, 128).unwrap();
    let par = BubbleParams::new(&pr, &[q], 25.0).unwrap();
    let (om, shift) = build_omega(&pr, &par, &disc.grid).unwrap();
    assert!(om.mean().abs() < 1e-10);
    for (i, j) in [(0, 0), (3, 77), (64, 64), (100, 5)] {
        let y = disc.grid.node(i, j);
        let v = par.omega_star(&pr.green, y) - shift;
        assert!((om.data[i * 128 + j] - v).abs() < 1e-11);
    }
}

#[test]
fn omega_peak_tracks_two_log_inverse_eps() {
    let (pr, q) = square_k1(128);
    let mut dev = Vec::new();
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        let par = BubbleParams::new(&pr, &[q], 2.0 / f64::sqrt(eps)).unwrap();
        let shift = par.omega_star_integral(pr.green.offset);
        let peak = (0..50)
            .map(|a| {
                let r = par.radii[0] * 0.5 * a as f64 / 50.0;
                par.omega_star(&pr.green, add(q, [r, 0.3 * r])) - shift
            })
            .fold(f64::MIN, f64::max);
        dev.push(peak - 2.0 * (1.0 / eps).ln());
    }
    let range = dev.iter().cloned().fold(f64::MIN, f64::max) - dev.iter().cloned().fold(f64::MAX, f64::min);
    assert!(range < 1.0, "{dev:?}");
}

#[test]
fn constants_follow_the_asymptotic_slopes() {
    let (pr, q) = square_k1(128);
    let (mut ls, mut cs, mut peaks) = (vec![], vec![], vec![]);
    for eps in [2e-3, 1e-3, 5e-4, 2.5e-4] {
        let par = BubbleParams::new(&pr, &[q], 2.0 / f64::sqrt(eps)).unwrap();
        let shift = par.omega_star_integral(0.0);
        let nc = normalization_constants(&pr, &par, shift, eps, QuadOptions::default()).unwrap();
        assert!(nc.quad_change < 1e-8);
        assert_eq!(nc.c[0], nc.c[1]);
        ls.push((1.0 / eps).ln());
        cs.push(nc.c[0]);
        peaks.push(par.omega_star(&pr.green, q) - shift);
    }
    let sc = slope(&ls, &cs);
    let sp = slope(&ls, &peaks);
    assert!((sc + 3.0).abs() < 0.1, "c slope {sc}");
    assert!((sp - 2.0).abs() < 0.1, "peak slope {sp}");
}

#[test]
fn constants_solve_their_quadratic() {
    let (pr, q) = mixed_k1();
    let par = BubbleParams::new(&pr, &[q], 30.0).unwrap();
    let eps = 0.01;
    let nc = normalization_constants(&pr, &par, 0.0, eps, QuadOptions::default()).unwrap();
    let [i1, i2, i12] = nc.integrals;
    assert!(nc.c[0] != nc.c[1]);
    // T = e^{c₁}I₁ = e^{c₂}I₂ and T = 8kπε² + T² I₁₂/(I₁I₂)
    let t1 = nc.c[0].exp() * i1;
    let t2 = nc.c[1].exp() * i2;
    assert!((t1 / t2 - 1.0).abs() < 1e-12);
    let lhs = t1;
    let rhs = 8.0 * PI * eps * eps + t1 * t1 * i12 / (i1 * i2);
    assert!((lhs / rhs - 1.0).abs() < 1e-12);
    // a large ε leaves no real root
    let err = constants_from_integrals(nc.integrals, 1.0, 1).unwrap_err();
    assert!(err.to_string().contains("ε too large"));
}

#[test]
fn simple_and_general_assemblies_agree_up_to_constants() {
    let n = 128;
    let (pr, q) = square_k1(n);
    let disc = Discretization::new(&pr, n).unwrap();
    let par = BubbleParams::new(&pr, &[q], 30.0).unwrap();
    let eps = 4.0 / (30.0 * 30.0);
    let gen = assemble_approx(&pr, &disc, &par, eps, Assembly::General, QuadOptions::default()).unwrap();
    let sim = assemble_approx(&pr, &disc, &par, eps, Assembly::Simple, QuadOptions::default()).unwrap();
    for s in 0..2 {
        let d = gen.u[s].sub(&sim.u[s]);
        let m = d.mean();
        assert!(d.data.iter().all(|v| (v - m).abs() < 1e-10));
        let g1 = disc.grid.gradient(&gen.u[s]);
        let g2 = disc.grid.gradient(&sim.u[s]);
        for a in 0..2 {
            assert!(g1[a].sub(&g2[a]).max_abs() < 1e-8);
        }
    }
    let diff = gen.u[0].sub(&gen.u[1]);
    assert!(diff.data.iter().all(|v| (v - (gen.c[0] - gen.c[1])).abs() < 1e-12));
    assert!((gen.omega.mean()).abs() < 1e-10);
}

#[test]
fn max_of_u_tracks_constant_plus_two_log() {
    let n = 64;
    let (pr, q) = square_k1(n);
    let disc = Discretization::new(&pr, n).unwrap();
    let mut dev = Vec::new();
    for eps in [2e-2, 1e-2, 5e-3, 2.5e-3] {
        let par = BubbleParams::new(&pr, &[q], 1.2 / f64::sqrt(eps)).unwrap();
        let ap = assemble_approx(&pr, &disc, &par, eps, Assembly::General, QuadOptions::default()).unwrap();
        let top = ap.value(&pr, 0, q);
        dev.push(top - 2.0 * (1.0 / eps).ln() - ap.c[0]);
    }
    let range = dev.iter().cloned().fold(f64::MIN, f64::max) - dev.iter().cloned().fold(f64::MAX, f64::min);
    assert!(range < 1.0, "{dev:?}");
}

#[test]
fn residual_is_species_symmetric_for_equal_vortices() {
    let n = 64;
    let (pr, q) = square_k1(n);
    let disc = Discretization::new(&pr, n).unwrap();
    let par = BubbleParams::new(&pr, &[q], 20.0).unwrap();
    let ap = assemble_approx(&pr, &disc, &par, 0.01, Assembly::General, QuadOptions::default()).unwrap();
    let e = residual(&pr, &disc, &ap).unwrap();
    assert_eq!(e[0], e[1]);
}

#[test]
fn residual_leading_structure_decays() {
    let n = 128;
    let (pr, q) = square_k1(n);
    let disc = Discretization::new(&pr, n).unwrap();
    let (mut lm, mut ld) = (vec![], vec![]);
    for eps in [4e-3, 2e-3, 1e-3, 5e-4] {
        let mu = 2.0 / f64::sqrt(eps);
        let par = BubbleParams::new(&pr, &[q], mu).unwrap();
        let ap = assemble_approx(&pr, &disc, &par, eps, Assembly::General, QuadOptions::default()).unwrap();
        let e = residual(&pr, &disc, &ap).unwrap();
        let d = leading_structure_defect(&pr, &disc, &ap, &e).unwrap();
        lm.push(mu.ln());
        ld.push(d[1].ln());
    }
    let s = -slope(&lm, &ld);
    assert!(s >= 1.8, "decay exponent {s}, {ld:?}");
}

#[test]
fn weight_relation_defect_decays_like_inverse_height() {
    // vortex sets invariant under the half-period translation make the
    // difference u₀,₁ − u₀,₂ equal at q and q + (½,½)
    let t = Torus::square();
    let ev = GreenEvaluator::new(t, 1e-15).unwrap();
    let v1 = [[0.1, 0.2], [0.6, 0.7], [0.3, 0.9], [0.8, 0.4]];
    let v2 = [[0.15, 0.6], [0.65, 0.1], [0.4, 0.35], [0.9, 0.85]];
    let pr = Problem::new(ev, &v1, &v2).unwrap();
    let q = [[0.2, 0.45], [0.7, 0.95]];
    let (mut lm, mut ld) = (vec![], vec![]);
    for mu in [40.0, 80.0, 160.0, 320.0] {
        let x = [add(q[0], [0.3 / mu, -0.2 / mu]), add(q[1], [-0.1 / mu, 0.4 / mu])];
        let par = BubbleParams::with_radii(&pr, &x, mu, &[0.05, 0.05]).unwrap();
        let base = par.rho_star[0] * par.mus[0] * par.mus[0];
        let dev = (par.rho_star[1] * par.mus[1] * par.mus[1] - base).abs() / base;
        lm.push(mu.ln());
        ld.push(dev.ln());
    }
    let s = -slope(&lm, &ld);
    assert!((s - 1.0).abs() < 0.1, "{s}");
}

#[test]
fn export_writes_grid_and_sidecar() {
    let n = 16;
    let (pr, q) = square_k1(n);
    let disc = Discretization::new(&pr, n).unwrap();
    let par = BubbleParams::new(&pr, &[q], 5.0).unwrap();
    let ap = assemble_approx(&pr, &disc, &par, 0.05, Assembly::General, QuadOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("approx.csv");
    let json = dir.path().join("approx.json");
    ap.write_csv(&disc.grid, &csv).unwrap();
    ap.write_json(&json).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,U1,U2");
    assert_eq!(text.lines().count(), n * n + 1);
    let s: ApproxScalars = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(s.c, ap.c);
    assert_eq!(s.mus, par.mus);
    let missing = dir.path().join("no/such/dir/a.csv");
    assert!(matches!(ap.write_csv(&disc.grid, &missing), Err(csbubble::Error::Io { .. })));
}
