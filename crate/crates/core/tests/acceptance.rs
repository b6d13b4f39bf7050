//! One line per acceptance criterion, then a single assertion over all of
//! them. Lines go straight to stdout so they show up without `--nocapture`.

mod common;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use hypershell::atlas::{build_chart, ChartExtent};
use hypershell::characteristic::*;
use hypershell::korn::*;
use hypershell::principal::*;
use hypershell::regions::{Monotonicity, PlanarCurve, PlanarRegion, RegionGrid};
use hypershell::small::{dot3, inv2, mv2, sub3};
use hypershell::strain::*;
use hypershell::surface::*;
use hypershell::CurveOnSurface;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0xC0FFEE;

struct Sheet(Vec<(usize, bool)>);

impl Sheet {
    fn report(&mut self, id: usize, ok: bool, detail: String) {
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {id}: {} | {detail}", if ok { "PASS" } else { "FAIL" }).unwrap();
        self.0.push((id, ok));
    }
}

fn max_err(f: &GridPairField, exact: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let l = f.lattice();
    let mut m: f64 = 0.0;
    for j in 0..l.ny {
        for i in 0..l.nx {
            if let Some(v) = f.node(i, j) {
                let e = exact([l.x(i), l.y(j)]);
                m = m.max((v[0] - e[0]).abs()).max((v[1] - e[1]).abs());
            }
        }
    }
    m
}

fn criterion_1(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let square = PlanarRegion::r([0.0, 0.0], 1.0, 1.0).unwrap();
    let growth = CharSystem::constant([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
    let bc = BoundaryData::R { q1: Func1::constant(1.0), q2: Func1::zero() };
    let f = solve_region(&RegionGrid::new(square.clone(), 129), &growth, &bc, &SolveOptions::default()).unwrap();
    let err = max_err(&f, |x| [x[0].exp(), 0.0]);

    let solve = |n: usize| solve_region(&RegionGrid::new(square.clone(), n), &growth, &bc, &SolveOptions::default()).unwrap();
    let fields: Vec<GridPairField> = [33, 65, 129, 257].into_iter().map(solve).collect();
    let exact = |f: &GridPairField| {
        let l = f.lattice();
        let mut s = 0.0;
        for j in 0..l.ny {
            for i in 0..l.nx {
                let v = f.node(i, j).unwrap();
                s += ((v[0] - l.x(i).exp()).powi(2) + v[1].powi(2)) * l.dx * l.dy;
            }
        }
        s.sqrt()
    };
    let errs: Vec<f64> = fields.iter().map(exact).collect();
    let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
    let order = fitted_order(&hs, &errs);
    let secs = t0.elapsed().as_secs_f64();
    sheet.report(1, err <= 1e-4 && order >= 1.5 && secs < 5.0, format!("max error {err:.2e} at 129², order {order:.2} over 33²→257², {secs:.2} s"));
}

fn rotation_bc(c: f64) -> BoundaryData {
    BoundaryData::R { q1: Func1::new(move |y| (c * y).sin()), q2: Func1::new(move |x| (c * x).cos()) }
}

fn criterion_2(sheet: &mut Sheet) {
    let sys = CharSystem::constant([[0.0, 2.0], [-2.0, 0.0]], [0.0, 0.0]);
    let thr = contraction_threshold(&sys, [0.0, 0.0], 4.0, 33, 12).unwrap();
    let small = 0.5 * thr;
    let grid = RegionGrid::new(PlanarRegion::r([0.0, 0.0], small, small).unwrap(), 65);
    let f = solve_primitive(&grid, &sys, &rotation_bc(2.0), None).unwrap();
    let ratios = f.reports[0].ratios();
    let worst_ratio = ratios.iter().cloned().fold(0.0, f64::max);

    let big = PlanarRegion::r([0.0, 0.0], 4.0 * thr, 4.0 * thr).unwrap();
    let f = solve_region(&RegionGrid::new(big.clone(), 257), &sys, &rotation_bc(2.0), &SolveOptions::default()).unwrap();
    let fine = solve_region(&RegionGrid::new(big, 513), &sys, &rotation_bc(2.0), &SolveOptions::default()).unwrap();
    let l = f.lattice();
    let mut d: f64 = 0.0;
    for j in 0..l.ny {
        for i in 0..l.nx {
            let a = f.node(i, j).unwrap();
            let b = fine.node(2 * i, 2 * j).unwrap();
            d = d.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
    }
    let ok = !ratios.is_empty() && worst_ratio < 0.9 && f.depth() >= 1 && d <= 1e-3;
    sheet.report(2, ok, format!("threshold {thr:.3}, worst Picard ratio {worst_ratio:.3}, 4× region depth {} differs from 513² by {d:.2e}", f.depth()));
}

fn criterion_3(sheet: &mut Sheet) {
    let cases = [
        ("paraboloid", paraboloid(), para_anchor(), 0.5),
        ("monkey saddle", monkey(), monkey_anchor(), 0.3),
    ];
    let mut ok = true;
    let mut parts = vec![];
    for (name, s, anchor, r) in cases {
        let t0 = Instant::now();
        let c = build_chart(s, &anchor, ChartExtent::around(0.0, r, 129)).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let d = c.diagnostics();
        ok &= d.asymptotic_residual <= 1e-6 && d.kappa_identity <= 1e-6 && secs < 30.0;
        parts.push(format!("{name}: Π/ω {:.1e}, ω²+κ det G {:.1e}, {secs:.2} s", d.asymptotic_residual, d.kappa_identity));
    }
    sheet.report(3, ok, parts.join("; "));
}

fn para_chart(n: usize) -> Arc<hypershell::atlas::AsymptoticChart> {
    half_chart(paraboloid(), para_anchor(), 0.5, n)
}

fn monkey_chart(n: usize) -> Arc<hypershell::atlas::AsymptoticChart> {
    half_chart(monkey(), monkey_anchor(), 0.3, n)
}

fn round_trip_residual(chart: &Arc<hypershell::atlas::AsymptoticChart>, len: f64, mf: &ManufacturedField) -> f64 {
    let beta = PlanarCurve::new(0.0, 0.9 * len, Monotonicity::Increasing, |s| [0.6 * s, s], |_| [0.6, 1.0]).unwrap();
    let gamma = PlanarCurve::new(0.0, len, Monotonicity::Decreasing, |t| [t, -t], |_| [1.0, -1.0]).unwrap();
    let region = PlanarRegion::xi_minus(beta.clone(), gamma.clone()).unwrap();
    let (m1, m2) = (mf.clone(), mf.clone());
    let b = beta.clone();
    let q1 = Func1::new(move |t| b.tangent(t)[0] * m1.values(b.at(t))[0]);
    let (c, g) = (chart.clone(), gamma.clone());
    let phi = move |t: f64| {
        let x = g.at(t);
        let v = m2.values(x);
        mv2(inv2(c.metric_at(x).unwrap()).unwrap(), [v[0], v[1]])
    };
    let bc = convert_boundary_data(chart, &beta, q1, &gamma, phi).unwrap();
    let u = StrainField::manufactured(chart, |x| mf.eval(x));
    let sol = solve_strain_local(chart, region, &u, &bc, &SolveOptions::default()).unwrap();
    let back = strain_of(chart, &sol.displacement).unwrap();
    let mut um = u.clone();
    um.mask = back.mask.clone();
    back.l2_diff(&u, chart, None) / um.l2(chart)
}

fn pasting_error(g: &GlobalField, taus: Vec<f64>, t_end: f64, n: usize) -> (f64, f64) {
    let spec = PastingSpec {
        anchor: para_anchor(),
        zeta: CurveOnSurface::line([0.0, 0.0], [1.0, 1.0], 0.0, 1.0),
        s0: taus[0],
        taus,
        t_end,
        n,
        opts: SolveOptions::default(),
    };
    let p = paste_charts(paraboloid(), &spec, &g.problem(&spec.anchor, &spec.zeta)).unwrap();
    let mut err: f64 = 0.0;
    for piece in &p.pieces {
        let exact = g.on_chart(&piece.chart);
        let d = &piece.solution.displacement;
        for k in 0..d.lattice.len() {
            if d.mask[k] {
                let a = d.tangential(&piece.chart, k);
                let b = exact.tangential(&piece.chart, k);
                err = err.max(dot3(sub3(a, b), sub3(a, b)).sqrt());
            }
        }
    }
    let disc = p.overlaps.iter().map(|o| o.discrepancy).fold(0.0, f64::max);
    (disc, err)
}

fn criterion_4(sheet: &mut Sheet) {
    let ns = [33, 65, 129];
    let hs: Vec<f64> = ns.iter().map(|n| 1.0 / (*n - 1) as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut ok = true;
    let mut parts = vec![];
    type Mk = fn(usize) -> Arc<hypershell::atlas::AsymptoticChart>;
    for (name, mk, len) in [("paraboloid", para_chart as Mk, 0.5), ("monkey saddle", monkey_chart as Mk, 0.3)] {
        let charts: Vec<_> = ns.iter().map(|&n| mk(n)).collect();
        let (mut worst_order, mut worst_c) = (f64::INFINITY, 0.0f64);
        for _ in 0..20 {
            let mf = ManufacturedField::random(&mut rng, 3, 3.0);
            let e: Vec<f64> = charts.iter().map(|c| round_trip_residual(c, len, &mf)).collect();
            worst_order = worst_order.min(fitted_order(&hs, &e));
            for (err, h) in e.iter().zip(&hs) {
                worst_c = worst_c.max(err / h.powf(1.5));
            }
        }
        ok &= worst_order >= 1.3 && worst_c.is_finite();
        parts.push(format!("{name}: min order {worst_order:.2}, C {worst_c:.2e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let g = GlobalField::random(paraboloid(), &mut rng, 2.0);
    for (label, taus, t_end) in [("2-chart", vec![0.3], 0.8), ("3-chart", vec![0.25, 0.5], 0.9)] {
        let (disc, err) = pasting_error(&g, taus, t_end, 33);
        ok &= disc <= 10.0 * err;
        parts.push(format!("{label} overlap {disc:.2e} vs single-chart {err:.2e}"));
    }
    sheet.report(4, ok, parts.join("; "));
}

fn criterion_5(sheet: &mut Sheet) {
    let s = MonkeySaddle::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 20);
    let (mut sum_ok, mut tested) = (true, 0);
    while tested < 100 {
        let u = [rng.gen_range(0.3..2.0), rng.gen_range(-1.0..1.0)];
        let geo = local_geometry(&s, u).unwrap();
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let m = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = geo.g_norm(m);
        if let Ok((t1, t2)) = boundary_operators(&s, TangentVector::new(u, [m[0] / n, m[1] / n]), TangentVector::new(u, x)) {
            for k in 0..2 {
                let tol = 4.0 * f64::EPSILON * (t1.comp[k].abs() + t2.comp[k].abs());
                sum_ok &= (t1.comp[k] + t2.comp[k] - x[k]).abs() <= tol;
            }
            tested += 1;
        }
    }
    // on z = uv the parameters are asymptotic, so T1 and T2 keep one component each
    let p = HyperbolicParaboloid::<f64>::default();
    let mut pure: f64 = 0.0;
    for _ in 0..100 {
        let u = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        let geo = local_geometry(&p, u).unwrap();
        let n = geo.g_norm([1.0, -1.0]);
        let mu = TangentVector::new(u, [-1.0 / n, 1.0 / n]);
        let b = [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)];
        let (t1, t2) = boundary_operators(&p, mu, TangentVector::new(u, b)).unwrap();
        pure = pure.max((t1.comp[0] - b[0]).abs()).max(t1.comp[1].abs()).max(t2.comp[0].abs()).max((t2.comp[1] - b[1]).abs());
    }
    let reg = MonkeyRegion::new(1.5).unwrap();
    let big = MonkeySaddle::new(ParamBox::new([-8.0; 2], [8.0; 2]));
    let kinds: Vec<Option<Connection>> = (0..3)
        .map(|which| {
            let (beta, gamma, zeta) = reg.corner_curves(which, 0.0, 0.1);
            classify_connection(&big, &beta, &gamma, &zeta).unwrap()
        })
        .collect();
    let h2 = kinds.iter().all(|k| *k == Some(Connection::H2));
    sheet.report(5, sum_ok && pure <= 1e-8 && h2, format!("T1+T2=Id to rounding on {tested} samples: {sum_ok}; pure-component defect {pure:.1e}; connection points {kinds:?}"));
}

fn criterion_6(sheet: &mut Sheet) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut min_order = f64::INFINITY;
    for (s, lo, hi) in [(paraboloid(), [-0.5, -0.5], [0.5, 0.5]), (monkey(), [0.3, -0.3], [0.9, 0.3])] {
        for _ in 0..3 {
            let t = trig3(&mut rng, 3, 3.0);
            let f = move |u: [f64; 2]| [t[0].value(u), t[1].value(u), t[2].value(u)];
            let steps = [2e-2, 1e-2, 5e-3];
            let res: Vec<f64> = steps.iter().map(|h| divergence_identity_check(s.as_ref(), &f, lo, hi, 9, *h).unwrap().max_residual).collect();
            min_order = min_order.min(fitted_order(&steps, &res));
        }
    }
    let mut worst: f64 = 0.0;
    for s in [paraboloid(), monkey()] {
        for _ in 0..10 {
            let d = ShellDisplacement::random(&mut rng, 2, 2.0);
            let u = [rng.gen_range(0.3..0.8), rng.gen_range(-0.3..0.3)];
            let r = shell_identity_check(s.as_ref(), &d, u, 0.025, 1e-4).unwrap();
            worst = worst.max(r.grad_rel).max(r.sym_rel);
        }
    }
    sheet.report(6, min_order >= 1.8 && worst <= 1e-3, format!("divergence identity residual order {min_order:.2}; shell identities worst relative residual {worst:.1e}"));
}

fn criterion_7(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let mut lam: f64 = 0.0;
    for i in 1..=40 {
        let x1 = -2.0 + 0.1 * i as f64 - 0.05;
        let (l1, _) = principal_curvatures([x1, 0.0]).unwrap();
        lam = lam.max((l1 - lambda1_on_axis(x1)).abs());
    }
    let xe = x2_eta_limit(-1.0).unwrap().extrapolated;
    let e1 = eta_limit(1.0).unwrap().extrapolated;
    let r = 1.0 / 10f64.sqrt();
    let mut zeta_ok = true;
    let mut zs = vec![];
    for positive in [true, false] {
        let above = zeta_limit(-1.0, 1.0, positive, 0).unwrap().extrapolated;
        let below = zeta_limit(-1.0, -1.0, positive, 0).unwrap().extrapolated;
        zeta_ok &= (above.abs() - r).abs() <= 1e-3 && (below.abs() - r).abs() <= 1e-3 && above * below < 0.0;
        zs.push(format!("({above:.4}, {below:.4})"));
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = lam <= 1e-10 && (xe + 1.375).abs() <= 1e-3 && e1.abs() <= 1e-3 && zeta_ok && secs < 1.0;
    sheet.report(7, ok, format!("λ1 gap {lam:.1e}; x2·η → {xe:.6}; η(1,·) → {e1:.1e}; ζ1 above/below per branch {}; {secs:.3} s", zs.join(" ")));
}

fn criterion_8(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let (lo, hi) = MONKEY_STRIP;
    let hs = [0.2, 0.141, 0.1, 0.071, 0.05];
    let recs: Vec<QuotientRecord> = hs
        .iter()
        .map(|h| korn_quotient_checked(&ShellModel::new(monkey(), lo, hi, *h).unwrap(), modes_for(*h, lo, hi)).unwrap())
        .collect();
    let fit = fit_scaling(&recs, 0.02);
    let local: Vec<f64> = recs.windows(2).map(|w| (w[1].lambda_max / w[0].lambda_max).ln() / (w[1].h / w[0].h).ln()).collect();
    let steepening = local.windows(2).all(|w| w[1] < w[0]);
    let synth: Vec<QuotientRecord> = hs
        .iter()
        .map(|h| QuotientRecord { h: *h, lambda_max: 2.5 * h.powf(-4.0 / 3.0), dim: 0, modes: 0, residual: 0.0, deflated: 0, saturation: Some(0.0) })
        .collect();
    let synth_slope = fit_scaling(&synth, 0.02).unwrap().slope;
    let secs = t0.elapsed().as_secs_f64();
    let sat = recs.iter().map(|r| r.saturation.unwrap()).fold(0.0, f64::max);
    let (ok, slope) = match &fit {
        Ok(f) => ((-1.55..=-1.10).contains(&f.slope), format!("{:.3} ± {:.3}", f.slope, f.stderr)),
        Err(e) => (false, format!("fit refused: {e}")),
    };
    let ok = ok && steepening && (synth_slope + 4.0 / 3.0).abs() <= 1e-6 && secs < 600.0;
    let lams: Vec<String> = recs.iter().map(|r| format!("{:.2}", r.lambda_max)).collect();
    let loc: Vec<String> = local.iter().map(|s| format!("{s:.2}")).collect();
    sheet.report(8, ok, format!("λmax [{}]; slope {slope}; local slopes [{}]; max basis change {:.2}%; synthetic {synth_slope:.9}; {secs:.1} s", lams.join(", "), loc.join(", "), 100.0 * sat));
}

fn criterion_9(sheet: &mut Sheet) {
    let s = paraboloid();
    let region = ProbeRegion::new(s.as_ref(), [-0.4, -0.3], [0.8, 0.3], [-0.2, 0.6]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 11);
    let fields: Vec<_> = (0..50).map(|_| trig3(&mut rng, 3, 4.0)).collect();
    let plain: Vec<Box<dyn Fn([f64; 2]) -> [f64; 3] + Sync>> = fields
        .iter()
        .map(|t| Box::new(move |u: [f64; 2]| [t[0].value(u), t[1].value(u), t[2].value(u)]) as Box<dyn Fn([f64; 2]) -> [f64; 3] + Sync>)
        .collect();
    let clamped: Vec<_> = plain.iter().map(|f| region.clamped(f.as_ref())).collect();
    let plain_refs: Vec<&dyn Fn([f64; 2]) -> [f64; 3]> = plain.iter().map(|f| f.as_ref() as &dyn Fn([f64; 2]) -> [f64; 3]).collect();
    let clamped_refs: Vec<&dyn Fn([f64; 2]) -> [f64; 3]> = clamped.iter().map(|f| f as &dyn Fn([f64; 2]) -> [f64; 3]).collect();
    let mut ok = true;
    let mut parts = vec![];
    for (est, set) in [(Estimate::Tangential, &plain_refs), (Estimate::Normal, &clamped_refs)] {
        let reps: Vec<ProbeReport> = [65, 129, 257].iter().map(|n| rigidity_estimate_probe(s.as_ref(), &region, set, est, *n).unwrap()).collect();
        for w in reps.windows(2) {
            ok &= w[1].constant.is_finite() && (w[1].constant / w[0].constant - 1.0).abs() <= 0.3;
        }
        for r in &reps {
            ok &= r.violations == 0 && r.samples.iter().all(|p| p.lhs <= r.constant * p.rhs * (1.0 + 1e-12));
        }
        let cs: Vec<String> = reps.iter().map(|r| format!("{:.3}", r.constant)).collect();
        parts.push(format!("{est:?} C at 65/129/257: [{}]", cs.join(", ")));
    }
    sheet.report(9, ok, parts.join("; "));
}

#[test]
fn acceptance_criteria() {
    let mut sheet = Sheet(vec![]);
    criterion_1(&mut sheet);
    criterion_2(&mut sheet);
    criterion_3(&mut sheet);
    criterion_4(&mut sheet);
    criterion_5(&mut sheet);
    criterion_6(&mut sheet);
    criterion_7(&mut sheet);
    criterion_8(&mut sheet);
    criterion_9(&mut sheet);
    let failed: Vec<usize> = sheet.0.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
