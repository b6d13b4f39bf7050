mod common;

use common::*;
use hypershell::error::Error;
use hypershell::korn::*;
use hypershell::strain::TrigField;
use hypershell::surface::local_geometry;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0xC0FFEE;

fn field_of(t: &[TrigField; 3]) -> impl Fn([f64; 2]) -> [f64; 3] + Sync + '_ {
    move |u| [t[0].value(u), t[1].value(u), t[2].value(u)]
}

fn strip_shell(h: f64) -> ShellModel {
    ShellModel::new(monkey(), MONKEY_STRIP.0, MONKEY_STRIP.1, h).unwrap()
}

fn small_shell(h: f64, nq: usize) -> ShellModel {
    strip_shell(h).with_nodes(nq).unwrap()
}

fn random_coeffs(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn quad(m: &DMatrix<f64>, c: &[f64]) -> f64 {
    let v = DVector::from_column_slice(c);
    v.dot(&(m * &v))
}

// ---------------------------------------------------------------- divergence identity

#[test]
fn divergence_sides_vanish_without_tangential_or_normal_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let t = trig3(&mut rng, 3, 2.0);
    let s = paraboloid();
    let no_w = |u: [f64; 2]| [t[0].value(u), t[1].value(u), 0.0];
    let no_tan = |u: [f64; 2]| [0.0, 0.0, t[2].value(u)];
    for u in [[0.1, -0.2], [0.4, 0.3], [-0.5, 0.25]] {
        for f in [&no_w as &dyn Fn([f64; 2]) -> [f64; 3], &no_tan] {
            let (l, r) = divergence_identity_sides(s.as_ref(), f, u, 1e-3).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(r, 0.0);
        }
    }
}

#[test]
fn divergence_identity_residual_is_second_order_in_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    for (s, lo, hi) in [(paraboloid(), [-0.5, -0.5], [0.5, 0.5]), (monkey(), [0.3, -0.3], [0.9, 0.3])] {
        for _ in 0..3 {
            let t = trig3(&mut rng, 3, 3.0);
            let f = field_of(&t);
            let steps = [2e-2, 1e-2, 5e-3];
            let res: Vec<f64> = steps.iter().map(|h| divergence_identity_check(s.as_ref(), &f, lo, hi, 9, *h).unwrap().max_residual).collect();
            let mag = divergence_identity_check(s.as_ref(), &f, lo, hi, 9, 1e-3).unwrap().max_magnitude;
            let order = fitted_order(&steps, &res);
            assert!(order >= 1.8, "{}: residuals {res:?} order {order}", s.name());
            assert!(res[2] < 1e-3 * mag, "{}: residual {} vs magnitude {mag}", s.name(), res[2]);
        }
    }
}

#[test]
fn divergence_theorem_closes_on_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let s = paraboloid();
    let t = trig3(&mut rng, 3, 2.0);
    let f = field_of(&t);
    let ns = [17usize, 33, 65];
    let reps: Vec<DivergenceReport> = ns.iter().map(|n| divergence_identity_check(s.as_ref(), &f, [-0.4, -0.6], [0.6, 0.3], *n, 1e-4).unwrap()).collect();
    let res: Vec<f64> = reps.iter().map(|r| r.integrated_residual).collect();
    let h: Vec<f64> = ns.iter().map(|n| 1.0 / (*n - 1) as f64).collect();
    assert!(fitted_order(&h, &res) >= 1.8, "{res:?}");
    assert!(res[2] < 1e-3 * reps[2].boundary.abs().max(reps[2].interior.abs()), "{:?}", reps[2]);
}

// ---------------------------------------------------------------- shell identities

#[test]
fn zero_displacement_gives_zero_sides() {
    let r = shell_identity_check(paraboloid().as_ref(), &ShellDisplacement::zero(), [0.2, 0.1], 0.02, 1e-4).unwrap();
    assert_eq!((r.grad_lhs, r.grad_rhs, r.sym_lhs, r.sym_rhs), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn midsurface_identity_for_t_independent_fields() {
    // at t = 0 with W_t = w_t = 0: |sym ∇y|² = |Υ|² + ½|Dw − i(W)Π|²
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    for s in [paraboloid(), monkey()] {
        for _ in 0..5 {
            let d = ShellDisplacement::surface(trig3(&mut rng, 3, 2.0));
            let u = [rng.gen_range(0.3..0.8), rng.gen_range(-0.3..0.3)];
            let r = shell_identity_check(s.as_ref(), &d, u, 0.0, 1e-4).unwrap();
            assert!(r.sym_rel < 1e-6 && r.grad_rel < 1e-6, "{}: {r:?}", s.name());
        }
    }
}

#[test]
fn shell_identities_hold_off_the_midsurface() {
    // h = 0.1, t = h/4, 3D step 1e-4
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    for s in [paraboloid(), monkey()] {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let d = ShellDisplacement::random(&mut rng, 2, 2.0);
            let u = [rng.gen_range(0.3..0.8), rng.gen_range(-0.3..0.3)];
            let r = shell_identity_check(s.as_ref(), &d, u, 0.025, 1e-4).unwrap();
            worst = worst.max(r.grad_rel).max(r.sym_rel);
        }
        assert!(worst <= 1e-3, "{}: {worst}", s.name());
    }
}

#[test]
fn shell_identity_residuals_shrink_with_the_3d_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let d = ShellDisplacement::random(&mut rng, 2, 2.0);
    let s = monkey();
    let steps = [4e-2, 2e-2, 1e-2];
    let r: Vec<ShellIdentityReport> = steps.iter().map(|h| shell_identity_check(s.as_ref(), &d, [0.6, 0.1], 0.04, *h).unwrap()).collect();
    let g: Vec<f64> = r.iter().map(|x| (x.grad_lhs - x.grad_rhs).abs()).collect();
    let y: Vec<f64> = r.iter().map(|x| (x.sym_lhs - x.sym_rhs).abs()).collect();
    assert!(fitted_order(&steps, &g) >= 1.0, "{g:?}");
    assert!(fitted_order(&steps, &y) >= 1.0, "{y:?}");
}

#[test]
fn thick_shells_are_rejected() {
    // principal curvatures of z = u1 u2 at the origin are ±1
    let d = ShellDisplacement::zero();
    let r = shell_identity_check(paraboloid().as_ref(), &d, [0.0, 0.0], 1.5, 1e-4);
    assert!(matches!(r, Err(Error::InvalidShell(_))), "{r:?}");
    let s = ShellModel::new(paraboloid(), [-0.5, -0.5], [0.5, 0.5], 2.5);
    assert!(matches!(s, Err(Error::InvalidShell(_))), "{s:?}");
}

#[test]
fn normal_map_inverse_round_trips() {
    let s = monkey();
    let u = [0.55, -0.12];
    let geo = local_geometry(s.as_ref(), u).unwrap();
    let z = [geo.r[0] + 0.03 * geo.n[0], geo.r[1] + 0.03 * geo.n[1], geo.r[2] + 0.03 * geo.n[2]];
    let (v, t) = shell_inverse(s.as_ref(), z, ([0.5, -0.1], 0.0)).unwrap();
    assert!((v[0] - u[0]).abs() < 1e-13 && (v[1] - u[1]).abs() < 1e-13 && (t - 0.03).abs() < 1e-13);
}

// ---------------------------------------------------------------- Korn quotient

#[test]
fn gram_forms_match_direct_quadrature() {
    let shell = small_shell(0.1, 21);
    let basis = KornBasis { k: 4 };
    let g = assemble_gram(&shell, basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    for _ in 0..3 {
        let c = random_coeffs(&mut rng, basis.dim());
        let n = shell_norms(&shell, basis, &c).unwrap();
        assert!((quad(&g.a, &c) - n.grad).abs() <= 1e-10 * n.grad);
        assert!((quad(&g.b, &c) - n.sym).abs() <= 1e-10 * n.sym);
    }
}

#[test]
fn basis_is_clamped_on_the_lateral_boundary() {
    let shell = small_shell(0.1, 21);
    let basis = KornBasis { k: 5 };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let c = random_coeffs(&mut rng, basis.dim());
    let (lo, hi) = MONKEY_STRIP;
    for k in 0..=10 {
        let a = k as f64 / 10.0;
        for u in [[lo[0] + a * (hi[0] - lo[0]), lo[1]], [lo[0] + a * (hi[0] - lo[0]), hi[1]], [lo[0], lo[1] + a * (hi[1] - lo[1])], [hi[0], lo[1] + a * (hi[1] - lo[1])]] {
            for t in [-0.05, 0.0, 0.03] {
                let (y, _) = basis.evaluate(&shell, &c, u, t).unwrap();
                assert!(y.iter().all(|v| v.abs() <= 1e-12), "{u:?} {y:?}");
            }
        }
    }
}

#[test]
fn quotient_is_at_least_one_and_bounds_every_rayleigh_quotient() {
    let shell = small_shell(0.1, 25);
    let basis = KornBasis { k: 5 };
    let g = assemble_gram(&shell, basis).unwrap();
    let e = generalized_lambda_max(&g.a, &g.b).unwrap();
    assert!(e.lambda >= 1.0 && e.residual < 1e-8, "{} {}", e.lambda, e.residual);
    // the smallest eigenvalue is ≥ 1 too: λmax(B, A) ≤ 1
    let inv = generalized_lambda_max(&g.b, &g.a).unwrap();
    assert!(inv.lambda <= 1.0 + 1e-10, "{}", inv.lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    for _ in 0..50 {
        let c = random_coeffs(&mut rng, basis.dim());
        let q = quad(&g.a, &c) / quad(&g.b, &c);
        assert!(q >= 1.0 - 1e-12 && q <= e.lambda + 1e-8, "{q} vs {}", e.lambda);
    }
    let top: Vec<f64> = e.vector.iter().cloned().collect();
    assert!((quad(&g.a, &top) / quad(&g.b, &top) - e.lambda).abs() < 1e-9 * e.lambda);
}

#[test]
fn quotient_grows_with_the_basis() {
    let shell = small_shell(0.1, 29);
    let l: Vec<f64> = (2..=6).map(|k| korn_quotient(&shell, k).unwrap().lambda_max).collect();
    for w in l.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-10), "{l:?}");
    }
}

#[test]
fn null_directions_of_b_are_deflated() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0, 7.0]));
    let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
    let e = generalized_lambda_max(&a, &b).unwrap();
    assert_eq!(e.deflated, 2);
    assert!((e.lambda - 3.0).abs() < 1e-12);
    assert!(e.residual < 1e-12);
}

#[test]
fn thinner_strip_has_a_larger_korn_constant() {
    let (lo, hi) = MONKEY_STRIP;
    let thick = korn_quotient(&strip_shell(0.1), modes_for(0.1, lo, hi)).unwrap();
    let thin = korn_quotient(&strip_shell(0.05), modes_for(0.05, lo, hi)).unwrap();
    eprintln!("λ(0.1) = {}, λ(0.05) = {}", thick.lambda_max, thin.lambda_max);
    assert!(thin.lambda_max / thick.lambda_max >= 2f64.powf(1.1));
}

#[test]
fn interpolation_constant_is_stable_under_quadrature_refinement() {
    let basis = KornBasis { k: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    for h in [0.2, 0.1] {
        let coarse = small_shell(h, 17);
        let fine = small_shell(h, 33);
        let mut worst = [0.0f64; 2];
        for _ in 0..20 {
            let c = random_coeffs(&mut rng, basis.dim());
            worst[0] = worst[0].max(interpolation_ratio(&shell_norms(&coarse, basis, &c).unwrap(), h));
            worst[1] = worst[1].max(interpolation_ratio(&shell_norms(&fine, basis, &c).unwrap(), h));
        }
        assert!(worst[1].is_finite() && worst[1] > 0.0);
        assert!((worst[1] / worst[0] - 1.0).abs() <= 0.3, "h = {h}: {worst:?}");
    }
}

// ---------------------------------------------------------------- scaling fit

fn record(h: f64, l: f64) -> QuotientRecord {
    QuotientRecord { h, lambda_max: l, dim: 0, modes: 0, residual: 0.0, deflated: 0, saturation: Some(0.0) }
}

const HS: [f64; 5] = [0.2, 0.141, 0.1, 0.071, 0.05];

#[test]
fn exact_power_law_is_recovered() {
    let recs: Vec<QuotientRecord> = HS.iter().map(|h| record(*h, h.powf(-4.0 / 3.0))).collect();
    let f = fit_scaling(&recs, 0.02).unwrap();
    assert!((f.slope + 4.0 / 3.0).abs() < 1e-12 && f.stderr < 1e-12, "{f:?}");
}

fn noisy(rng: &mut impl Rng) -> (Vec<QuotientRecord>, f64) {
    let mut worst: f64 = 0.0;
    let recs = HS
        .iter()
        .map(|h| {
            let e = 0.05 * rng.gen_range(-1.0..1.0);
            worst = worst.max((1.0f64 + e).ln().abs());
            record(*h, 3.0 * h.powf(-4.0 / 3.0) * (1.0 + e))
        })
        .collect();
    (recs, worst)
}

#[test]
fn noisy_power_law_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (recs, _) = noisy(&mut rng);
    let f = fit_scaling(&recs, 0.02).unwrap();
    assert!((f.slope + 4.0 / 3.0).abs() <= 0.05, "{f:?}");
}

#[test]
fn noisy_fit_error_respects_the_worst_case_bound() {
    // a log-perturbation ε_i moves the slope by Σ(x_i − x̄)ε_i / Sxx, at most
    // max|ε| Σ|x_i − x̄| / Sxx
    let x: Vec<f64> = HS.iter().map(|h| h.ln()).collect();
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sabs: f64 = x.iter().map(|v| (v - mx).abs()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    for _ in 0..200 {
        let (recs, worst) = noisy(&mut rng);
        let f = fit_scaling(&recs, 0.02).unwrap();
        assert!((f.slope + 4.0 / 3.0).abs() <= worst * sabs / sxx * (1.0 + 1e-9), "{f:?}");
    }
}

#[test]
fn fit_refuses_bad_inputs() {
    let recs: Vec<QuotientRecord> = HS.iter().map(|h| record(*h, 1.0 / h)).collect();
    assert!(matches!(fit_scaling(&recs[..3], 0.02), Err(Error::Invalid(_))));
    let narrow: Vec<QuotientRecord> = [0.1, 0.09, 0.08, 0.07].iter().map(|h| record(*h, 1.0 / h)).collect();
    assert!(matches!(fit_scaling(&narrow, 0.02), Err(Error::Invalid(_))));
    let mut loose = recs.clone();
    loose[2].saturation = Some(0.05);
    assert!(matches!(fit_scaling(&loose, 0.02), Err(Error::Unsaturated(_))));
    loose[2].saturation = None;
    assert!(matches!(fit_scaling(&loose, 0.02), Err(Error::Unsaturated(_))));
}

// ---------------------------------------------------------------- rigidity probes

fn para_region() -> ProbeRegion {
    ProbeRegion::new(paraboloid().as_ref(), [-0.4, -0.3], [0.8, 0.3], [-0.2, 0.6]).unwrap()
}

#[test]
fn characteristic_sides_are_rejected() {
    // the coordinate axes are asymptotic on z = u1 u2
    let r = ProbeRegion::new(paraboloid().as_ref(), [0.0, 0.0], [0.5, 0.0], [0.1, 0.5]);
    assert!(matches!(r, Err(Error::Characteristic)), "{r:?}");
}

#[test]
fn zero_field_has_no_ratio() {
    let s = paraboloid();
    let z = |_: [f64; 2]| [0.0; 3];
    for est in [Estimate::Tangential, Estimate::Normal] {
        let r = rigidity_estimate_probe(s.as_ref(), &para_region(), &[&z], est, 33).unwrap();
        assert_eq!(r.samples[0].ratio, None);
        assert_eq!(r.constant, 0.0);
        assert_eq!(r.violations, 0);
    }
}

#[test]
fn rigid_motions_are_controlled_by_their_traces() {
    let s = paraboloid();
    let y = rigid_motion(s.clone(), [0.3, -0.2, 0.5], [0.1, 0.4, -0.3]);
    let region = para_region();
    let t = estimate_terms(s.as_ref(), &region, &y, 65, 1e-5).unwrap();
    let traces: f64 = t.traces.iter().sum();
    assert!(t.strain < 1e-12 * traces, "{t:?}");
    let r = rigidity_estimate_probe(s.as_ref(), &region, &[&y], Estimate::Tangential, 65).unwrap();
    let ratio = r.samples[0].ratio.unwrap();
    assert!(ratio.is_finite() && ratio > 0.0 && r.violations == 0);
}

fn probe_fields(n: usize, seed: u64) -> Vec<[TrigField; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| trig3(&mut rng, 3, 4.0)).collect()
}

#[test]
fn rigidity_constants_are_stable_under_refinement() {
    let s = paraboloid();
    let region = para_region();
    let fields = probe_fields(50, SEED + 11);
    let plain: Vec<Box<dyn Fn([f64; 2]) -> [f64; 3] + Sync>> = fields.iter().map(|t| Box::new(field_of(t)) as Box<dyn Fn([f64; 2]) -> [f64; 3] + Sync>).collect();
    let clamped: Vec<_> = plain.iter().map(|f| region.clamped(f.as_ref())).collect();
    let plain_refs: Vec<&dyn Fn([f64; 2]) -> [f64; 3]> = plain.iter().map(|f| f.as_ref() as &dyn Fn([f64; 2]) -> [f64; 3]).collect();
    let clamped_refs: Vec<&dyn Fn([f64; 2]) -> [f64; 3]> = clamped.iter().map(|f| f as &dyn Fn([f64; 2]) -> [f64; 3]).collect();
    for (est, set) in [(Estimate::Tangential, &plain_refs), (Estimate::Normal, &clamped_refs)] {
        let c: Vec<ProbeReport> = [65, 129, 257].iter().map(|n| rigidity_estimate_probe(s.as_ref(), &region, set, est, *n).unwrap()).collect();
        for w in c.windows(2) {
            assert!(w[1].constant.is_finite() && w[1].violations == 0);
            assert!((w[1].constant / w[0].constant - 1.0).abs() <= 0.3, "{est:?}: {} → {}", w[0].constant, w[1].constant);
        }
        for r in &c {
            assert!(r.samples.iter().all(|p| p.lhs <= r.constant * p.rhs * (1.0 + 1e-12)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_law_fit_recovers_any_exponent(c in 0.1f64..10.0, p in -2.5f64..-0.5) {
        let recs: Vec<QuotientRecord> = HS.iter().map(|h| record(*h, c * h.powf(p))).collect();
        let f = fit_scaling(&recs, 0.02).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-10);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn generalized_max_is_invariant_under_basis_rescaling(seed in 0u64..1000, n in 3usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let k = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let a = &b + &k * k.transpose();
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| 10f64.powf(rng.gen_range(-2.0..2.0))));
        let l0 = generalized_lambda_max(&a, &b).unwrap().lambda;
        let l1 = generalized_lambda_max(&(&d * &a * &d), &(&d * &b * &d)).unwrap().lambda;
        prop_assert!(l0 >= 1.0 - 1e-12);
        prop_assert!((l0 - l1).abs() <= 1e-10 * l0, "{} vs {}", l0, l1);
    }
}
