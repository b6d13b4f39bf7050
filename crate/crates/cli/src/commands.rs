use std::sync::Arc;

use hypershell::atlas::{build_chart, ChartExtent};
use hypershell::characteristic::{contraction_threshold, solve_primitive, solve_region, BoundaryData, CharSystem, Func1, GridPairField, SolveOptions};
use hypershell::io;
use hypershell::korn::{fit_scaling, korn_quotient_checked, modes_for, QuotientRecord, ShellModel};
use hypershell::principal::{eta_limit, lambda1_on_axis, principal_curvatures, principal_obstruction_report, x2_eta_limit, zeta_limit};
use hypershell::regions::{Monotonicity, PlanarCurve, PlanarRegion, RegionGrid};
use hypershell::small::{inv2, mv2};
use hypershell::strain::{convert_boundary_data, solve_strain_local, strain_of, Displacement, ManufacturedField, StrainField};
use hypershell::surface::{asymptotic_directions_at, local_geometry, ParamBox, Surface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::{solver_failure, Cli, Command, Failure, Out};

pub fn run(cli: &Cli) -> Result<String, Failure> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::SurfaceInfo => {
            let mut c: SurfaceInfoConfig = load(cfg)?;
            if let Some(g) = cli.grid {
                c.samples = g;
            }
            surface_info(&c, cli.tol.unwrap_or(0.0), &Out::create(&cli.out)?)
        }
        Command::SolveStrain => {
            let mut c: SolveStrainConfig = load(cfg)?;
            c.grid = cli.grid.unwrap_or(c.grid);
            c.tol = cli.tol.unwrap_or(c.tol);
            c.seed = cli.seed.unwrap_or(c.seed);
            solve_strain(&c, &Out::create(&cli.out)?)
        }
        Command::KornScale => {
            let mut c: KornConfig = load(cfg)?;
            c.nodes = cli.grid.or(c.nodes);
            c.max_change = cli.tol.unwrap_or(c.max_change);
            c.seed = cli.seed.unwrap_or(c.seed);
            korn_scale(&c, &Out::create(&cli.out)?)
        }
        Command::AppendixVerify => {
            let mut c: AppendixConfig = load(cfg)?;
            c.tol = cli.tol.unwrap_or(c.tol);
            appendix_verify(&c, &Out::create(&cli.out)?)
        }
        Command::RegionSelftest => {
            let mut c: SelftestConfig = load(cfg)?;
            c.grid = cli.grid.unwrap_or(c.grid);
            c.tol = cli.tol.unwrap_or(c.tol);
            region_selftest(&c, &Out::create(&cli.out)?)
        }
    }
}

/// One pass/fail line of a verification report.
#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    target: f64,
    error: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn near(name: &'static str, value: f64, target: f64, tolerance: f64) -> Self {
        let error = (value - target).abs();
        Check { name, value, target, error, tolerance, pass: error <= tolerance }
    }

    /// `value ≤ limit` (or `≥` when `at_least`).
    fn bound(name: &'static str, value: f64, limit: f64, at_least: bool) -> Self {
        let pass = if at_least { value >= limit } else { value <= limit };
        Check { name, value, target: limit, error: if pass { 0.0 } else { (value - limit).abs() }, tolerance: 0.0, pass }
    }
}

fn summarize(checks: &[Check]) -> String {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        format!("all {} checks passed", checks.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))
    }
}

// ---------------------------------------------------------------- surface-info

fn surface_info(c: &SurfaceInfoConfig, tol: f64, out: &Out) -> Result<String, Failure> {
    let s = c.surface.build()?;
    let b = match c.region {
        Some(_) => c.region_box(s.as_ref())?,
        // difference-based surfaces need a margin for their stencils
        None if !s.is_analytic() => {
            let d = s.domain();
            let m = [0.02 * (d.hi[0] - d.lo[0]), 0.02 * (d.hi[1] - d.lo[1])];
            ParamBox::new([d.lo[0] + m[0], d.lo[1] + m[1]], [d.hi[0] - m[0], d.hi[1] - m[1]])
        }
        None => c.region_box(s.as_ref())?,
    };
    if c.samples < 2 {
        return Err(Failure::config("samples must be at least 2"));
    }
    let n = c.samples;
    let at = |i: usize, k: usize| b.lo[k] + (b.hi[k] - b.lo[k]) * i as f64 / (n - 1) as f64;
    let mut rows = Vec::with_capacity(n * n);
    let (mut kmin, mut kmax, mut argmax) = (f64::INFINITY, f64::NEG_INFINITY, [0.0; 2]);
    for j in 0..n {
        for i in 0..n {
            let u = [at(i, 0), at(j, 1)];
            let geo = local_geometry(s.as_ref(), u).map_err(|e| Failure::config(format!("cannot sample {u:?}: {e}")))?;
            let k = geo.kappa;
            kmin = kmin.min(k);
            if k > kmax {
                kmax = k;
                argmax = u;
            }
            let (k1, k2) = principal_pair(s.as_ref(), u);
            let (a, d) = asymptotic_directions_at(&geo).unwrap_or(([f64::NAN; 2], [f64::NAN; 2]));
            rows.push(vec![u[0], u[1], k, k1, k2, a[0], a[1], d[0], d[1]]);
        }
    }
    let centre = [0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1])];
    let kc = local_geometry(s.as_ref(), centre).map_err(solver_failure)?.kappa;
    let hyperbolic = kmax < -tol;
    out.write("samples.csv", |w| io::write_csv(w, &["u1", "u2", "kappa", "k1", "k2", "a1", "a2", "b1", "b2"], rows))?;
    out.json(
        "surface_info.json",
        &json!({
            "surface": s.name(),
            "region": [b.lo, b.hi],
            "samples_per_axis": n,
            "kappa_min": kmin,
            "kappa_max": kmax,
            "kappa_max_at": argmax,
            "kappa_centre": kc,
            "centre": centre,
            "hyperbolic": hyperbolic,
            "margin": tol,
        }),
    )?;
    if !hyperbolic {
        return Err(Failure::new(3, format!("not hyperbolic: curvature reaches {kmax:e} at {argmax:?}")));
    }
    Ok(format!("{}: curvature in [{kmin:e}, {kmax:e}] on {:?}..{:?}, {} at the centre", s.name(), b.lo, b.hi, kc))
}

/// Principal curvatures from the trace and determinant of the shape operator.
fn principal_pair(s: &dyn Surface<f64>, u: [f64; 2]) -> (f64, f64) {
    let Ok(geo) = local_geometry(s, u) else { return (f64::NAN, f64::NAN) };
    let c0 = geo.shape([1.0, 0.0]);
    let c1 = geo.shape([0.0, 1.0]);
    let h = 0.5 * (c0[0] + c1[1]);
    let d = (h * h - geo.kappa).max(0.0).sqrt();
    (h + d, h - d)
}

// ---------------------------------------------------------------- solve-strain

fn diagnostic(out: &Out, stage: &str, e: hypershell::Error) -> Failure {
    let f = solver_failure(e);
    if let Err(w) = out.json("diagnostic.json", &json!({ "stage": stage, "exit_code": f.code, "error": f.message })) {
        return w;
    }
    Failure::new(f.code, format!("{stage}: {}", f.message))
}

fn solve_strain(c: &SolveStrainConfig, out: &Out) -> Result<String, Failure> {
    c.validate()?;
    let surface = c.surface.build()?;
    let anchor = c.anchor.curve()?;
    let len = c.chart_length;
    let n = c.grid;
    let chart = build_chart(surface, &anchor, ChartExtent::new([0.0, -len], [len, len], n, 2 * n - 1)).map_err(|e| diagnostic(out, "chart", e))?;
    let chart = Arc::new(chart);
    let d = chart.diagnostics();

    let slope = c.beta_slope;
    let beta = PlanarCurve::new(0.0, 0.9 * len, Monotonicity::Increasing, move |s| [slope * s, s], move |_| [slope, 1.0]).map_err(solver_failure)?;
    let gamma = PlanarCurve::new(0.0, len, Monotonicity::Decreasing, |t| [t, -t], |_| [1.0, -1.0]).map_err(solver_failure)?;
    let region = PlanarRegion::xi_minus(beta.clone(), gamma.clone()).map_err(solver_failure)?;

    let manufactured = match &c.field {
        FieldSpec::Zero => None,
        FieldSpec::Manufactured { terms, kmax } => Some(ManufacturedField::random(&mut ChaCha8Rng::seed_from_u64(c.seed), *terms, *kmax)),
    };
    let (u, bc) = match &manufactured {
        None => {
            let u = StrainField::from_fn(&chart, |_| [0.0; 3]);
            let bc = convert_boundary_data(&chart, &beta, Func1::zero(), &gamma, |_| [0.0; 2]).map_err(|e| diagnostic(out, "boundary data", e))?;
            (u, bc)
        }
        Some(mf) => {
            let u = StrainField::manufactured(&chart, |x| mf.eval(x));
            let (m1, m2, b) = (mf.clone(), mf.clone(), beta.clone());
            let q1 = Func1::new(move |t| b.tangent(t)[0] * m1.values(b.at(t))[0]);
            let (ch, g) = (chart.clone(), gamma.clone());
            let phi = move |t: f64| {
                let x = g.at(t);
                let v = m2.values(x);
                match ch.metric_at(x).and_then(inv2) {
                    Some(gi) => mv2(gi, [v[0], v[1]]),
                    None => [f64::NAN; 2],
                }
            };
            let bc = convert_boundary_data(&chart, &beta, q1, &gamma, phi).map_err(|e| diagnostic(out, "boundary data", e))?;
            (u, bc)
        }
    };
    let sol = solve_strain_local(&chart, region, &u, &bc, &SolveOptions::default()).map_err(|e| diagnostic(out, "solve", e))?;
    let back = strain_of(&chart, &sol.displacement).map_err(|e| diagnostic(out, "strain", e))?;
    let mut um = u.clone();
    um.mask = back.mask.clone();
    let diff = back.l2_diff(&u, &chart, None);
    let norm = um.l2(&chart);
    let residual = if norm > 0.0 { diff / norm } else { diff };

    let errors = match &manufactured {
        Some(mf) => {
            let exact = Displacement::from_fn(&chart, Some(sol.displacement.mask.clone()), |x| mf.values(x));
            sol.displacement.max_diff(&exact)
        }
        None => {
            let z = Displacement::from_fn(&chart, Some(sol.displacement.mask.clone()), |_| [0.0; 3]);
            sol.displacement.max_diff(&z)
        }
    };
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let pass = worst <= c.tol;
    let step = chart.lattice.dx;

    out.write("displacement.csv", |w| io::displacement_csv(w, &sol.displacement))?;
    out.write("displacement.gpf", |w| io::displacement_dump(w, &sol.displacement))?;
    out.write("strain.csv", |w| io::strain_csv(w, &back))?;
    out.write("strain.gpf", |w| io::strain_dump(w, &back))?;
    out.write("chart.gpf", |w| io::chart_dump(w, &chart))?;
    out.write("error_table.csv", |w| io::write_csv(w, &["grid", "step", "err_W1", "err_W2", "err_w", "strain_residual"], [vec![n as f64, step, errors[0], errors[1], errors[2], residual]]))?;
    out.json(
        "summary.json",
        &json!({
            "surface": chart.surface.name(),
            "grid": n,
            "step": step,
            "field": c.field,
            "seed": c.seed,
            "solved_nodes": sol.displacement.mask.iter().filter(|m| **m).count(),
            "max_error": { "W1": errors[0], "W2": errors[1], "w": errors[2] },
            "strain_residual": residual,
            "tol": c.tol,
            "pass": pass,
            "chart": {
                "asymptotic_residual": d.asymptotic_residual,
                "kappa_identity": d.kappa_identity,
                "min_abs_omega": d.min_abs_omega,
            },
        }),
    )?;
    let line = format!("max error {worst:e} (tol {:e}), strain residual {residual:e} at grid {n}", c.tol);
    if pass {
        Ok(line)
    } else {
        Err(Failure::new(4, line))
    }
}

// ---------------------------------------------------------------- korn-scale

fn korn_scale(c: &KornConfig, out: &Out) -> Result<String, Failure> {
    c.validate()?;
    let records = match &c.synthetic {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            c.thicknesses
                .iter()
                .map(|h| {
                    let e = if s.noise > 0.0 { s.noise * rng.gen_range(-1.0..1.0) } else { 0.0 };
                    QuotientRecord { h: *h, lambda_max: s.coefficient * h.powf(s.exponent) * (1.0 + e), dim: 0, modes: 0, residual: 0.0, deflated: 0, saturation: Some(0.0) }
                })
                .collect()
        }
        None => korn_records(c, out)?,
    };
    let fit = fit_scaling(&records, c.max_change).map_err(solver_failure);
    out.write("records.csv", |w| io::records_csv(w, &records))?;
    let fit = fit?;
    let local: Vec<f64> = records.windows(2).map(|w| (w[1].lambda_max / w[0].lambda_max).ln() / (w[1].h / w[0].h).ln()).collect();
    let mut doc = io::scaling_json(&records, &fit);
    doc["local_slopes"] = json!(local);
    doc["max_change"] = json!(c.max_change);
    doc["synthetic"] = json!(c.synthetic.is_some());
    out.json("scaling.json", &doc)?;
    Ok(format!("slope {:.4} ± {:.4} over {} thicknesses", fit.slope, fit.stderr, fit.points))
}

/// Korn quotients with the basis grown by `√2` until the last halving of
/// the dimension moves `λmax` by less than `max_change`.
fn korn_records(c: &KornConfig, out: &Out) -> Result<Vec<QuotientRecord>, Failure> {
    let surface = c.surface.build()?;
    let (lo, hi) = (c.strip[0], c.strip[1]);
    let mut records: Vec<QuotientRecord> = Vec::new();
    for (i, &h) in c.thicknesses.iter().enumerate() {
        let mut m = c.modes.as_ref().map_or_else(|| modes_for(h, lo, hi), |v| v[i]);
        loop {
            let shell = ShellModel::new(surface.clone(), lo, hi, h).and_then(|s| s.with_nodes(c.nodes.unwrap_or(4 * m + 9))).map_err(solver_failure)?;
            let rec = korn_quotient_checked(&shell, m).map_err(solver_failure)?;
            let change = rec.saturation.unwrap_or(f64::INFINITY);
            eprintln!("h = {h}: {m} modes, λmax = {}, change {:.3}%", rec.lambda_max, 100.0 * change);
            if change <= c.max_change {
                records.push(rec);
                break;
            }
            let next = (m as f64 * 2f64.sqrt()).ceil() as usize;
            if next > c.max_modes {
                records.push(rec);
                out.write("records.csv", |w| io::records_csv(w, &records))?;
                return Err(Failure::new(5, format!("h = {h}: λmax still moves by {:.2}% at {m} modes (budget {})", 100.0 * change, c.max_modes)));
            }
            m = next;
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------- appendix-verify

fn appendix_verify(c: &AppendixConfig, out: &Out) -> Result<String, Failure> {
    if !(c.tol > 0.0 && c.formula_tol > 0.0 && c.axis_samples > 0) {
        return Err(Failure::config("tolerances and axis_samples must be positive"));
    }
    let e = |r: hypershell::Result<f64>| r.map_err(|e| Failure::new(6, e.to_string()));
    let mut checks = vec![];
    for (name, sign) in [("lambda1_formula_negative_axis", -1.0), ("lambda1_formula_positive_axis", 1.0)] {
        let mut gap: f64 = 0.0;
        for i in 0..c.axis_samples {
            let x1 = sign * (0.1 + 1.9 * (i as f64 + 0.5) / c.axis_samples as f64);
            let (l1, _) = principal_curvatures([x1, 0.0]).map_err(|e| Failure::new(6, e.to_string()))?;
            gap = gap.max((l1 - lambda1_on_axis(x1)).abs());
        }
        checks.push(Check::bound(name, gap, c.formula_tol, false));
    }
    checks.push(Check::near("x2_eta_limit_at_minus_one", e(x2_eta_limit(-1.0).map(|l| l.extrapolated))?, -1.375, c.tol));
    checks.push(Check::near("eta_limit_at_plus_one", e(eta_limit(1.0).map(|l| l.extrapolated))?, 0.0, c.tol));
    let r = 1.0 / 10f64.sqrt();
    let mut opposite = true;
    for (positive, names) in [(true, ["zeta1_above_branch_plus", "zeta1_below_branch_plus"]), (false, ["zeta1_above_branch_minus", "zeta1_below_branch_minus"])] {
        let above = e(zeta_limit(-1.0, 1.0, positive, 0).map(|l| l.extrapolated))?;
        let below = e(zeta_limit(-1.0, -1.0, positive, 0).map(|l| l.extrapolated))?;
        opposite &= above * below < 0.0;
        checks.push(Check::near(names[0], above.abs(), r, c.tol));
        checks.push(Check::near(names[1], below.abs(), r, c.tol));
    }
    checks.push(Check::bound("zeta1_sides_have_opposite_signs", if opposite { 1.0 } else { 0.0 }, 1.0, true));
    let report = principal_obstruction_report(-1.0, 1.0).map_err(|e| Failure::new(6, e.to_string()))?;
    checks.push(Check::near("zeta1_jump_at_minus_one", report.branches[0].zeta1_jump, 2.0 * r, c.tol));
    checks.push(Check::bound("every_branch_discontinuous", if report.obstructed { 1.0 } else { 0.0 }, 1.0, true));
    let pass = checks.iter().all(|c| c.pass);
    out.json("appendix.json", &json!({ "checks": checks, "obstruction": report, "pass": pass }))?;
    let line = summarize(&checks);
    if pass {
        Ok(line)
    } else {
        Err(Failure::new(6, line))
    }
}

// ---------------------------------------------------------------- region-selftest

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

fn l2_err(f: &GridPairField, exact: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let l = f.lattice();
    let mut s = 0.0;
    for j in 0..l.ny {
        for i in 0..l.nx {
            if let Some(v) = f.node(i, j) {
                let e = exact([l.x(i), l.y(j)]);
                s += ((v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)) * l.dx * l.dy;
            }
        }
    }
    s.sqrt()
}

fn region_selftest(c: &SelftestConfig, out: &Out) -> Result<String, Failure> {
    if c.grid < 9 || !(c.tol > 0.0) {
        return Err(Failure::config("grid must be at least 9 and tol positive"));
    }
    let fail = |e: hypershell::Error| Failure::new(4, e.to_string());
    let opts = SolveOptions::default();
    let square = PlanarRegion::r([0.0, 0.0], 1.0, 1.0).map_err(fail)?;
    let mut checks = vec![];

    // f1 = e^{x1}, f2 = 0 from ∂1 f1 = f1 with unit data on x1 = 0
    let growth = CharSystem::constant([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
    let bc = BoundaryData::R { q1: Func1::constant(1.0), q2: Func1::zero() };
    let exp_exact = |x: [f64; 2]| [x[0].exp(), 0.0];
    let f = solve_region(&RegionGrid::new(square.clone(), c.grid), &growth, &bc, &opts).map_err(fail)?;
    checks.push(Check::bound("exponential_max_error", max_err(&f, exp_exact), c.tol, false));

    let ns = [33usize, 65, 129, 257];
    let mut errs = vec![];
    for n in ns {
        let f = solve_region(&RegionGrid::new(square.clone(), n), &growth, &bc, &opts).map_err(fail)?;
        errs.push(l2_err(&f, exp_exact));
    }
    checks.push(Check::bound("exponential_order", (errs[0] / errs[3]).log2() / 3.0, c.min_order, true));

    // pure transport is reproduced to rounding
    let bc = BoundaryData::R { q1: Func1::new(|y| y), q2: Func1::new(|x| x) };
    let f = solve_primitive(&RegionGrid::new(square.clone(), 33), &CharSystem::zero(), &bc, None).map_err(fail)?;
    checks.push(Check::bound("transport_exact", max_err(&f, |x| [x[1], x[0]]), 1e-13, false));

    // rotation coupling: f1 = sin 2(x1+x2), f2 = cos 2(x1+x2)
    let rot = CharSystem::constant([[0.0, 2.0], [-2.0, 0.0]], [0.0, 0.0]);
    let rot_bc = || BoundaryData::R { q1: Func1::new(|y| (2.0 * y).sin()), q2: Func1::new(|x| (2.0 * x).cos()) };
    let rot_exact = |x: [f64; 2]| [(2.0 * (x[0] + x[1])).sin(), (2.0 * (x[0] + x[1])).cos()];
    let thr = contraction_threshold(&rot, [0.0, 0.0], 4.0, 33, 12).map_err(fail)?;
    let small = PlanarRegion::r([0.0, 0.0], 0.5 * thr, 0.5 * thr).map_err(fail)?;
    let f = solve_primitive(&RegionGrid::new(small, 65), &rot, &rot_bc(), None).map_err(fail)?;
    let worst = f.reports[0].ratios().iter().cloned().fold(0.0, f64::max);
    checks.push(Check::bound("picard_ratio_below_threshold", worst, 0.9, false));
    let big = PlanarRegion::r([0.0, 0.0], 4.0 * thr, 4.0 * thr).map_err(fail)?;
    let f = solve_region(&RegionGrid::new(big, 257), &rot, &rot_bc(), &opts).map_err(fail)?;
    checks.push(Check::bound("subdivided_max_error", max_err(&f, rot_exact), 1e-3, false));
    checks.push(Check::bound("subdivision_depth", f.depth() as f64, 1.0, true));

    let pass = checks.iter().all(|c| c.pass);
    out.json("selftest.json", &json!({ "checks": checks, "contraction_threshold": thr, "exponential_l2_errors": errs, "pass": pass }))?;
    let line = summarize(&checks);
    if pass {
        Ok(line)
    } else {
        Err(Failure::new(4, line))
    }
}
