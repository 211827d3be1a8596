use csbubble::bubble::BubbleParams;
use csbubble::green::GreenEvaluator;
use csbubble::grid::{FieldPair, Grid, GridField};
use csbubble::krylov::KrylovOptions;
use csbubble::linops::*;
use csbubble::problem::{off_grid_shift, Problem};
use csbubble::torus::{add, Torus, Vec2};

const SWEEP: [f64; 4] = [20.0, 40.0, 80.0, 160.0];

/// Square k = 1 preset on an n-grid: (problem, grid, bubble center).
fn square_k1(n: usize) -> (Problem, Grid, Vec2) {
    let t = Torus::square();
    let p = [0.5, 0.5];
    let s = off_grid_shift(&t, n, &[p]);
    let ev = GreenEvaluator::new(t.clone(), 1e-15).unwrap();
    let v = add(p, s);
    (Problem::new(ev, &[v, v], &[v, v]).unwrap(), Grid::new(t, n).unwrap(), s)
}

fn square_k2(n: usize) -> (Problem, Grid, Vec<Vec2>) {
    let t = Torus::square();
    let v = [[0.0, 0.0], [0.5, 0.5], [0.25, 0.0], [0.75, 0.5]];
    let s = off_grid_shift(&t, n, &v);
    let v: Vec<Vec2> = v.iter().map(|x| add(*x, s)).collect();
    let ev = GreenEvaluator::new(t.clone(), 1e-15).unwrap();
    let q = vec![add([0.125, 0.5], s), add([0.625, 0.0], s)];
    (Problem::new(ev, &v, &v).unwrap(), Grid::new(t, n).unwrap(), q)
}

fn diff_sup(a: &FieldPair, b: &FieldPair) -> f64 {
    sup_norm(&[a[0].sub(&b[0]), a[1].sub(&b[1])])
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
fn l_on_constant_pairs() {
    let (pr, grid, x) = square_k1(64);
    let params = BubbleParams::new(&pr, &[x], 20.0).unwrap();
    let w = coupling_weight(&grid, &params);
    let one = GridField::constant(64, 1.0);
    let l = apply_l(&grid, &w, &[one.clone(), one.clone()]);
    assert!(l[0].sub(&w).max_abs() < 1e-12 * w.max_abs() && l[1].sub(&w).max_abs() < 1e-12 * w.max_abs());
    let l = apply_l(&grid, &w, &[one.clone(), one.scaled(-1.0)]);
    assert!(l[0].add(&w).max_abs() < 1e-12 * w.max_abs() && l[1].sub(&w).max_abs() < 1e-12 * w.max_abs());
}

#[test]
fn split_channels_reconstruct_l_and_swap_symmetrically() {
    let (pr, grid, x) = square_k1(128);
    let params = BubbleParams::new(&pr, &[x], 40.0).unwrap();
    let w = coupling_weight(&grid, &params);
    let v = &probe_fields(&grid, &params, 1, 11)[0];
    let l = apply_l(&grid, &w, v);
    let (a, b) = split_apply(&grid, &w, v);
    let r = recombine(&a, &b);
    assert!(diff_sup(&l, &r) < 1e-12 * sup_norm(&l), "{}", diff_sup(&l, &r) / sup_norm(&l));
    let swapped = apply_l(&grid, &w, &[v[1].clone(), v[0].clone()]);
    assert!(diff_sup(&swapped, &[l[1].clone(), l[0].clone()]) == 0.0);
}

#[test]
fn l_of_dilation_kernel_decays_like_mu_cubed() {
    let (pr, grid, x) = square_k1(256);
    let n = grid.n;
    let pts: Vec<Vec2> = (0..n * n).map(|i| grid.node(i / n, i % n)).collect();
    let mut sups = Vec::new();
    for mu in SWEEP {
        let params = BubbleParams::new(&pr, &[x], mu).unwrap();
        let r = l_y0_pointwise(&grid.torus, &params, KernelVariant::Standard, &pts);
        sups.push(r.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }
    let lx: Vec<f64> = SWEEP.iter().map(|m| m.ln()).collect();
    let ly: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    let s = -slope(&lx, &ly);
    assert!(s >= 2.7, "slope {s}, sups {sups:?}");
}

#[test]
fn kernel_basis_shape() {
    let (pr, grid, q) = square_k2(128);
    let params = BubbleParams::new(&pr, &q, 30.0).unwrap();
    let b = KernelBasis::new(&grid, &params, KernelVariant::Standard).unwrap();
    assert_eq!(b.len(), 5);
    let n = grid.n;
    for (a, y) in b.y.iter().enumerate().skip(1) {
        let j = (a - 1) / 2;
        for idx in 0..n * n {
            let p = grid.node(idx / n, idx % n);
            if grid.torus.dist(p, params.centers[j]) >= 2.0 * params.radii[j] {
                assert_eq!(y.data[idx], 0.0);
            }
        }
    }
    for z in &b.z {
        assert!(z.mean().abs() < 1e-12 * z.max_abs());
    }
    // Y_{1,j} is odd in the first coordinate, Z_{2,j} in the second
    for j in 0..2 {
        let (y1, z2) = (&b.y[1 + 2 * j], &b.z[2 + 2 * j]);
        assert!(y1.inner(z2).abs() < 1e-8 * y1.l2() * z2.l2());
    }
    assert!(b.gram_condition.is_finite());
}

#[test]
fn verbatim_variant_is_available() {
    let (pr, grid, x) = square_k1(128);
    let params = BubbleParams::new(&pr, &[x], 20.0).unwrap();
    let a = KernelBasis::new(&grid, &params, KernelVariant::Standard).unwrap();
    let b = KernelBasis::new(&grid, &params, KernelVariant::Verbatim).unwrap();
    assert!(a.y[0].sub(&b.y[0]).max_abs() > 1e-3);
}

#[test]
fn overlapping_cutoffs_are_rejected() {
    let (pr, grid, _) = square_k1(64);
    let params = BubbleParams::with_radii(&pr, &[[0.1, 0.1], [0.3, 0.1]], 20.0, &[0.06, 0.06]).unwrap();
    assert!(matches!(KernelBasis::new(&grid, &params, KernelVariant::Standard), Err(csbubble::Error::Config(_))));
}

#[test]
fn projection_is_idempotent_and_exact() {
    let (pr, grid, q) = square_k2(128);
    let params = BubbleParams::new(&pr, &q, 40.0).unwrap();
    let b = KernelBasis::new(&grid, &params, KernelVariant::Standard).unwrap();
    let u = &probe_fields(&grid, &params, 1, 5)[0];
    let (qu, c) = b.project_q(u).unwrap();
    assert!(b.range_violation(&qu) < 1e-10);
    let (qqu, c2) = b.project_q(&qu).unwrap();
    assert!(diff_sup(&qqu, &qu) < 1e-10 * sup_norm(&qu));
    for (a, ca) in c2.iter().enumerate() {
        assert!((ca * b.z[a].max_abs()).abs() < 1e-10 * sup_norm(&qu));
    }
    let mut back = qu.clone();
    for (a, za) in b.z.iter().enumerate() {
        back[0].axpy(c[a], za);
        back[1].axpy(c[a], za);
    }
    assert!(diff_sup(&back, u) < 1e-12 * sup_norm(u));
}

#[test]
fn weighted_norms() {
    let (pr, grid, x) = square_k1(256);
    let params = BubbleParams::new(&pr, &[x], 40.0).unwrap();
    let cfg = WeightedNormCfg::new(&params, 0.1).unwrap();
    let zero = [GridField::zeros(256), GridField::zeros(256)];
    assert_eq!(cfg.norm_x(&grid, &zero), 0.0);
    assert_eq!(cfg.norm_y(&grid, &zero), 0.0);
    let v = &probe_fields(&grid, &params, 1, 2)[0];
    let v2 = [v[0].scaled(2.0), v[1].scaled(2.0)];
    assert!((cfg.norm_x(&grid, &v2) - 2.0 * cfg.norm_x(&grid, v)).abs() < 1e-12 * cfg.norm_x(&grid, v));
    assert!((cfg.norm_y(&grid, &v2) - 2.0 * cfg.norm_y(&grid, v)).abs() < 1e-12 * cfg.norm_y(&grid, v));
    // bump exp(−1/(1 − (r/a)²)) away from the bubble: ∫ bump² by radial Gauss quadrature
    let c = add(x, [0.5, 0.5]);
    let a = 0.2;
    let bump = |r: f64| if r < a { (-1.0 / (1.0 - (r / a).powi(2))).exp() } else { 0.0 };
    let f = grid.sample(|y| bump(grid.torus.dist(y, c)));
    let mut exact = 0.0;
    for (r, wr) in csbubble::special::gl_interval(40, 0.0, a) {
        exact += 2.0 * std::f64::consts::PI * r * wr * bump(r).powi(2);
    }
    let ny = cfg.norm_y(&grid, &[f, GridField::zeros(256)]);
    assert!((ny - exact.sqrt()).abs() < 1e-6, "{ny} {}", exact.sqrt());
    assert!(WeightedNormCfg::new(&params, 1.5).is_err());
}

#[test]
fn manufactured_solution_is_recovered() {
    let (pr, grid, q) = square_k2(256);
    let params = BubbleParams::new(&pr, &q, 40.0).unwrap();
    let w = coupling_weight(&grid, &params);
    let b = KernelBasis::new(&grid, &params, KernelVariant::Standard).unwrap();
    let (exact, _) = b.project_e(&probe_fields(&grid, &params, 1, 9)[0]).unwrap();
    assert!(b.kernel_violation(&exact) < 1e-12);
    let rhs = apply_l(&grid, &w, &exact);
    let sol = solve_projected(&grid, &w, &b, &rhs, KrylovOptions::default()).unwrap();
    assert!(diff_sup(&sol.omega, &exact) < 1e-8 * sup_norm(&exact), "{}", diff_sup(&sol.omega, &exact) / sup_norm(&exact));
    assert!(sol.residual < 1e-9 && sol.constraint < 1e-9);
    let mut zc = GridField::zeros(256);
    for (a, z) in b.z.iter().enumerate() {
        zc.axpy(sol.multipliers[a], z);
    }
    assert!(zc.l2() < 1e-8 * (rhs[0].l2() + rhs[1].l2()));
    // linearity
    let rhs3 = [rhs[0].scaled(-3.0), rhs[1].scaled(-3.0)];
    let sol3 = solve_projected(&grid, &w, &b, &rhs3, KrylovOptions::default()).unwrap();
    let scaled = [sol.omega[0].scaled(-3.0), sol.omega[1].scaled(-3.0)];
    assert!(diff_sup(&sol3.omega, &scaled) < 1e-10 * sup_norm(&scaled));
}

#[test]
fn difference_channel_stays_invertible() {
    // −ℒ₂ = −Δ + W is positive; its L² bottom drifts only like 1/ln μ
    let (pr, grid, x) = square_k1(256);
    let mut lams = Vec::new();
    for mu in SWEEP {
        let params = BubbleParams::new(&pr, &[x], mu).unwrap();
        let w = coupling_weight(&grid, &params);
        lams.push(difference_channel_min_eigen(&grid, &w, 30).unwrap());
    }
    assert!(lams.iter().all(|l| *l > 1.0), "{lams:?}");
    let scaled: Vec<f64> = lams.iter().zip(SWEEP).map(|(l, m)| l * m.ln()).collect();
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(*s), b.max(*s)));
    assert!(hi / lo < 1.25, "{scaled:?}");
}

#[test]
fn inverse_bound_resolution_and_k2_comparison() {
    let opts = KrylovOptions::default();
    for mu in [20.0, 40.0] {
        let (pr, g1, x) = square_k1(128);
        let (_, g2, _) = square_k1(256);
        let params = BubbleParams::new(&pr, &[x], mu).unwrap();
        let a = inverse_bound_at(&g1, &params, 0.1, 3, 7, opts).unwrap().bound;
        let b = inverse_bound_at(&g2, &params, 0.1, 3, 7, opts).unwrap().bound;
        assert!((a - b).abs() < 0.05 * b, "μ = {mu}: {a} {b}");
    }
    let (pr, g, x) = square_k1(256);
    let one = inverse_bound_at(&g, &BubbleParams::new(&pr, &[x], 40.0).unwrap(), 0.1, 3, 7, opts).unwrap();
    let (pr2, g2, q) = square_k2(256);
    let two = inverse_bound_at(&g2, &BubbleParams::new(&pr2, &q, 40.0).unwrap(), 0.1, 3, 7, opts).unwrap();
    let r = two.bound / one.bound;
    assert!((0.5..2.0).contains(&r), "k=1 {} k=2 {}", one.bound, two.bound);
}
