use hypershell::regions::*;
use hypershell::Error;
use proptest::prelude::*;

fn gamma() -> PlanarCurve {
    PlanarCurve::segment([0.0, 0.0], [1.0, -1.0]).unwrap()
}

fn beta() -> PlanarCurve {
    PlanarCurve::segment([0.0, 0.0], [0.5, 0.5]).unwrap()
}

// Independent inequality oracle for E(γ) with γ(t) = (t, −t).
fn in_triangle(x: [f64; 2]) -> bool {
    -x[1] < x[0] && x[0] < 1.0 && -1.0 < x[1] && x[1] < 0.0
}

#[test]
fn e_triangle_membership() {
    let e = PlanarRegion::e(gamma()).unwrap();
    assert!(e.contains([0.6, -0.5]));
    assert!(!e.contains([0.4, -0.5]));
    assert!(!e.contains([0.5, -0.5]));
    assert!(!e.contains([1.0, -0.5]));
    for k in 0..400 {
        let x = [-0.1 + 1.2 * ((k * 37) % 400) as f64 / 400.0, -1.1 + 1.2 * ((k * 91) % 400) as f64 / 400.0];
        assert_eq!(e.contains(x), in_triangle(x), "{x:?}");
    }
}

#[test]
fn rectangle_membership() {
    let r = PlanarRegion::r([0.0, 0.0], 1.0, 2.0).unwrap();
    assert!(r.contains([0.5, 1.5]));
    assert!(!r.contains([0.5, 2.5]));
    assert_eq!(r.bbox(), ([0.0, 0.0], [1.0, 2.0]));
    let r = PlanarRegion::r([0.0, 0.0], 1.0, 1.0).unwrap();
    assert!(r.contains([0.5, 0.5]));
    assert!(!r.contains([0.0, 0.5]));
}

#[test]
fn xi_minus_constituents() {
    let xi = PlanarRegion::xi_minus(beta(), gamma()).unwrap();
    assert_eq!(xi.parts.len(), 3);
    assert_eq!(xi.parts[0].kind, PieceKind::E);
    assert_eq!(xi.parts[1].kind, PieceKind::Pminus);
    let r = &xi.parts[2];
    assert_eq!(r.kind, PieceKind::R);
    let (z, a, b) = xi.rect.unwrap();
    assert!((z[0] - 0.5).abs() < 1e-15 && z[1].abs() < 1e-15);
    assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
    // shared edge between E and the upper pieces
    assert!(xi.contains([0.7, 0.0]));
    assert!(xi.contains([0.4, 0.2]));
    assert!(!xi.contains([0.2, 0.4]));
    assert!(xi.contains([0.75, 0.25]));
}

#[test]
fn xi_plus_and_phi_constituents() {
    let g = gamma();
    let b = PlanarCurve::segment([1.0, -1.0], [1.5, -0.5]).unwrap();
    let xp = PlanarRegion::xi_plus(b.clone(), g.clone()).unwrap();
    let (z, a, bb) = xp.rect.unwrap();
    assert_eq!(z, [1.0, -0.5]);
    assert!((a - 0.5).abs() < 1e-15 && (bb - 0.5).abs() < 1e-15);
    assert_eq!(xp.parts[1].kind, PieceKind::Pplus);

    let phi = PlanarRegion::phi(beta(), g, b).unwrap();
    let kinds: Vec<PieceKind> = phi.parts.iter().map(|p| p.kind).collect();
    assert_eq!(kinds, vec![PieceKind::E, PieceKind::Pminus, PieceKind::R, PieceKind::Pplus, PieceKind::R]);
    let r2 = &phi.parts[4];
    assert_eq!((r2.xa, r2.ya), (1.0, -0.5));
    assert!((r2.xb - 1.5).abs() < 1e-15 && (r2.yb - 0.5).abs() < 1e-15);
}

#[test]
fn validation_errors() {
    assert!(matches!(PlanarRegion::e(beta()), Err(Error::InvalidCurve(_))));
    assert!(matches!(PlanarRegion::pminus(gamma()), Err(Error::InvalidCurve(_))));
    assert!(PlanarCurve::segment([0.0, 0.0], [1.0, 0.0]).is_err());
    assert!(matches!(
        PlanarCurve::new(0.0, 1.0, Monotonicity::Decreasing, |t| [t * t - 0.5 * t, -t], |t| [2.0 * t - 0.5, -1.0]),
        Err(Error::InvalidCurve(_))
    ));
    // β runs past γ's right end
    let long = PlanarCurve::segment([0.0, 0.0], [2.0, 1.0]).unwrap();
    assert!(matches!(PlanarRegion::xi_minus(long, gamma()), Err(Error::IncompatibleCurves(_))));
    let off = PlanarCurve::segment([0.1, 0.0], [0.5, 0.5]).unwrap();
    assert!(matches!(PlanarRegion::xi_minus(off, gamma()), Err(Error::IncompatibleCurves(_))));
    // β too high for Ξ+
    let high = PlanarCurve::segment([1.0, -1.0], [1.5, 0.5]).unwrap();
    assert!(matches!(PlanarRegion::xi_plus(high, gamma()), Err(Error::IncompatibleCurves(_))));
    assert!(PlanarRegion::r([0.0, 0.0], -1.0, 1.0).is_err());
}

#[test]
fn degenerate_rectangle_is_dropped() {
    let b = PlanarCurve::segment([0.0, 0.0], [1.0, 0.5]).unwrap();
    let xi = PlanarRegion::xi_minus(b, gamma()).unwrap();
    assert_eq!(xi.parts.len(), 2);
}

#[test]
fn subdivision_counts() {
    let e = PlanarRegion::e(gamma()).unwrap();
    let one = subdivide_e(&e, 4.0).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].piece.kind, PieceKind::E);

    // max-norm chords of 1/3 give three bands
    let three = subdivide_e(&e, 2.0 / 3.0).unwrap();
    let es = three.iter().filter(|s| s.piece.kind == PieceKind::E).count();
    let rs = three.iter().filter(|s| s.piece.kind == PieceKind::R).count();
    assert_eq!((es, rs), (3, 3));
    // diagonal triangles first, then the rectangles next to the curve
    let cells: Vec<(usize, usize)> = three.iter().map(|s| s.cell).collect();
    assert_eq!(cells, vec![(0, 0), (1, 1), (2, 2), (1, 0), (2, 1), (2, 0)]);
    for s in &three {
        assert!(s.piece.extent() <= 1.0 / 3.0 + 1e-9);
    }
}

fn union_mismatch(region: &PlanarRegion, pieces: &[Piece], n: usize) -> usize {
    let (lo, hi) = region.bbox();
    let mut bad = 0;
    for j in 0..n {
        for i in 0..n {
            // cell centres
            let x = [
                lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / n as f64,
                lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / n as f64,
            ];
            let a = region.contains_closed(x, 0.0);
            let b = pieces.iter().any(|p| p.contains_closed(x, 0.0));
            if a != b {
                bad += 1;
            }
        }
    }
    bad
}

#[test]
fn subdivision_union_matches_on_fine_grid() {
    let e = PlanarRegion::e(gamma()).unwrap();
    let pieces: Vec<Piece> = subdivide_e(&e, 2.0 / 3.0).unwrap().into_iter().map(|s| s.piece).collect();
    assert_eq!(union_mismatch(&e, &pieces, 512), 0);
    // and against the inequality oracle (centres on γ itself are boundary)
    let mut bad = 0;
    for j in 0..512 {
        for i in 0..512 {
            let x = [(i as f64 + 0.5) / 512.0, -1.0 + (j as f64 + 0.5) / 512.0];
            if (x[0] + x[1]).abs() < 1e-12 {
                continue;
            }
            if in_triangle(x) != pieces.iter().any(|p| p.contains_closed(x, 0.0)) {
                bad += 1;
            }
        }
    }
    assert_eq!(bad, 0);
}

#[test]
fn subdivided_pieces_have_disjoint_interiors() {
    let g = PlanarCurve::new(0.0, 1.0, Monotonicity::Decreasing, |t| [t + 0.3 * t * t, -t - 0.2 * t * t * t], |t| {
        [1.0 + 0.6 * t, -1.0 - 0.6 * t * t]
    })
    .unwrap();
    for piece in [Piece::e(g.clone()).unwrap(), Piece::rect([0.0, 0.0], 1.0, 0.7).unwrap()] {
        let subs = subdivide(&piece, 0.3).unwrap();
        let n = 256;
        for j in 0..n {
            for i in 0..n {
                let x = [
                    piece.xa + (piece.xb - piece.xa) * (i as f64 + 0.5) / n as f64,
                    piece.ya + (piece.yb - piece.ya) * (j as f64 + 0.5) / n as f64,
                ];
                let c = subs.iter().filter(|s| s.piece.contains(x)).count();
                assert!(c <= 1, "{x:?} in {c} pieces");
            }
        }
    }
}

// Oracle for dependency order: sample each inflow edge of every piece and
// require it to lie on the parent's inflow boundary (flagged) or inside the
// closure of an earlier piece.
fn check_order(parent: &Piece, subs: &[SubPiece]) {
    let tol = 1e-9;
    for (n, s) in subs.iter().enumerate() {
        let p = &s.piece;
        for k in 1..40 {
            let y = p.ya + (p.yb - p.ya) * k as f64 / 40.0;
            let x = [p.row_start(y), y];
            let on_parent = (x[0] - parent.row_start(y)).abs() < 1e-7;
            let covered = subs[..n].iter().any(|q| q.piece.contains_closed(x, tol));
            assert!(covered || (s.rows_on_parent && on_parent), "{:?} row inflow at {x:?} not available", s.cell);
            let xx = p.xa + (p.xb - p.xa) * k as f64 / 40.0;
            let x = [xx, p.col_start(xx)];
            let on_parent = (x[1] - parent.col_start(xx)).abs() < 1e-7;
            let covered = subs[..n].iter().any(|q| q.piece.contains_closed(x, tol));
            assert!(covered || (s.cols_on_parent && on_parent), "{:?} column inflow at {x:?} not available", s.cell);
        }
    }
}

#[test]
fn subdivision_orders_are_topological() {
    let e = Piece::e(gamma()).unwrap();
    check_order(&e, &subdivide(&e, 2.0 / 3.0).unwrap());
    check_order(&e, &subdivide(&e, 0.2).unwrap());
    let pm = Piece::pminus(PlanarCurve::segment([0.0, 0.0], [1.0, 0.8]).unwrap()).unwrap();
    check_order(&pm, &subdivide(&pm, 0.3).unwrap());
    let pp = Piece::pplus(PlanarCurve::segment([0.0, 0.0], [0.9, 1.0]).unwrap()).unwrap();
    check_order(&pp, &subdivide(&pp, 0.3).unwrap());
    let r = Piece::rect([0.0, 0.0], 1.0, 0.5).unwrap();
    check_order(&r, &subdivide(&r, 0.3).unwrap());
}

#[test]
fn grid_mask_matches_membership() {
    let xi = PlanarRegion::xi_minus(beta(), gamma()).unwrap();
    let grid = RegionGrid::new(xi.clone(), 65);
    let l = grid.lattice;
    for j in 0..l.ny - 1 {
        for i in 0..l.nx - 1 {
            let all = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|(a, b)| grid.mask[l.idx(i + a, j + b)]);
            if all {
                let c = [l.x(i) + 0.5 * l.dx, l.y(j) + 0.5 * l.dy];
                assert!(xi.contains_closed(c, 0.0), "cell centre {c:?}");
            }
        }
    }
    assert!(!grid.edge_nodes(1).is_empty() && !grid.edge_nodes(2).is_empty());
}

#[test]
fn region_json_round_trip() {
    let xi = PlanarRegion::xi_minus(beta(), gamma()).unwrap();
    let spec = xi.describe(33);
    let text = serde_json::to_string(&spec).unwrap();
    let back: RegionSpec = serde_json::from_str(&text).unwrap();
    let r2 = back.build().unwrap();
    assert_eq!(r2.kind, RegionKind::XiMinus);
    for &x in &[[0.6, -0.5], [0.4, -0.5], [0.3, 0.1], [0.7, 0.4]] {
        assert_eq!(xi.contains(x), r2.contains(x));
    }
}

#[test]
fn pchip_preserves_monotonicity() {
    let t: Vec<f64> = (0..9).map(|k| k as f64 / 8.0).collect();
    let y: Vec<f64> = t.iter().map(|s| s.powi(3) + 0.1 * s).collect();
    let p = Pchip::new(t.clone(), y.clone()).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=200 {
        let s = k as f64 / 200.0;
        let v = p.eval(s);
        assert!(v >= prev);
        prev = v;
    }
    for (a, b) in t.iter().zip(&y) {
        assert!((p.eval(*a) - b).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn membership_invariant_under_reparametrization(c in 0.3f64..3.0, x1 in -0.1f64..1.1, x2 in -1.1f64..0.1) {
        // γ(s) = (s^c, −s^c) reparametrizes (t, −t); the curve must stay
        // strictly monotone, so restrict to [0.05, 1].
        let base = PlanarCurve::segment([0.05f64.powf(1.0), -0.05], [1.0, -1.0]).unwrap();
        let re = PlanarCurve::new(0.05f64.powf(1.0 / c), 1.0, Monotonicity::Decreasing,
            move |s| [s.powf(c), -s.powf(c)], move |s| [c * s.powf(c - 1.0), -c * s.powf(c - 1.0)]).unwrap();
        let a = PlanarRegion::e(base).unwrap();
        let b = PlanarRegion::e(re).unwrap();
        let x = [x1, x2];
        // skip points within rounding of the curve
        prop_assume!((x1 + x2).abs() > 1e-9);
        prop_assert_eq!(a.contains(x), b.contains(x));
    }

    #[test]
    fn composite_parts_disjoint(b1 in 0.1f64..1.0, b2 in 0.1f64..1.0, x1 in 0.0f64..1.0, x2 in -1.0f64..1.0) {
        let beta = PlanarCurve::segment([0.0, 0.0], [b1, b2]).unwrap();
        let xi = PlanarRegion::xi_minus(beta, gamma()).unwrap();
        let n = xi.parts.iter().filter(|p| p.contains([x1, x2])).count();
        prop_assert!(n <= 1);
    }
}
