//! Picard solver for the first-order system
//!
//! ```text
//! ∂1 f1 = a11 f1 + a12 f2 + p1
//! ∂2 f2 = a21 f1 + a22 f2 + p2
//! ```
//!
//! on the planar regions of [`crate::regions`]. `f1` is integrated along
//! rows from the row's inflow point, `f2` along columns, both with the
//! composite trapezoid rule; the resulting integral operator is iterated from
//! zero. Pieces whose iteration does not contract are split and solved in
//! dependency order, each piece taking its inflow values from the pieces
//! already solved.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regions::{subdivide, Lattice, Piece, PieceKind, PlanarCurve, PlanarRegion, RegionGrid, RegionKind};

/// Scalar field on the plane.
pub type Field = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Scalar function of one variable (curve parameter or edge coordinate).
#[derive(Clone)]
pub struct Func1(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl Func1 {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Func1(Arc::new(f))
    }

    pub fn zero() -> Self {
        Func1::new(|_| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Func1::new(move |_| c)
    }

    /// Piecewise-linear interpolation of samples (constant extrapolation).
    pub fn from_samples(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("samples need ≥2 increasing abscissae".into()));
        }
        Ok(Func1::new(move |t| linear_interp(&x, &y, t)))
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        (self.0)(t)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.0.clone();
        Func1::new(move |t| c * f(t))
    }

    pub fn plus(&self, o: &Func1) -> Self {
        let (f, g) = (self.0.clone(), o.0.clone());
        Func1::new(move |t| f(t) + g(t))
    }
}

impl std::fmt::Debug for Func1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Func1")
    }
}

pub fn linear_interp(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let k = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(k) => return y[k],
        Err(k) => k - 1,
    };
    let s = (t - x[k]) / (x[k + 1] - x[k]);
    y[k] + s * (y[k + 1] - y[k])
}

/// Coefficients and right-hand sides of the system.
#[derive(Clone)]
pub struct CharSystem {
    pub a11: Field,
    pub a12: Field,
    pub a21: Field,
    pub a22: Field,
    pub p1: Field,
    pub p2: Field,
}

fn cst(c: f64) -> Field {
    Arc::new(move |_| c)
}

impl CharSystem {
    pub fn zero() -> Self {
        CharSystem { a11: cst(0.0), a12: cst(0.0), a21: cst(0.0), a22: cst(0.0), p1: cst(0.0), p2: cst(0.0) }
    }

    /// Constant coefficients and right-hand sides.
    pub fn constant(a: [[f64; 2]; 2], p: [f64; 2]) -> Self {
        CharSystem { a11: cst(a[0][0]), a12: cst(a[0][1]), a21: cst(a[1][0]), a22: cst(a[1][1]), p1: cst(p[0]), p2: cst(p[1]) }
    }

    pub fn with_rhs(mut self, p1: Field, p2: Field) -> Self {
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    /// Same coefficients, right-hand side scaled by `c`.
    pub fn scaled_rhs(&self, c: f64) -> Self {
        let (p1, p2) = (self.p1.clone(), self.p2.clone());
        let mut s = self.clone();
        s.p1 = Arc::new(move |x| c * p1(x));
        s.p2 = Arc::new(move |x| c * p2(x));
        s
    }

    /// Same coefficients, right-hand sides added.
    pub fn added_rhs(&self, o: &CharSystem) -> Self {
        let (p1, p2, q1, q2) = (self.p1.clone(), self.p2.clone(), o.p1.clone(), o.p2.clone());
        let mut s = self.clone();
        s.p1 = Arc::new(move |x| p1(x) + q1(x));
        s.p2 = Arc::new(move |x| p2(x) + q2(x));
        s
    }

    /// `[a11, a12, a21, a22, p1, p2]` at `x`.
    pub fn eval(&self, x: [f64; 2]) -> [f64; 6] {
        [(self.a11)(x), (self.a12)(x), (self.a21)(x), (self.a22)(x), (self.p1)(x), (self.p2)(x)]
    }
}

/// Boundary data by region kind. Functions named `…_curve` take the curve
/// parameter; edge data take the coordinate along the edge.
#[derive(Clone, Debug)]
pub enum BoundaryData {
    /// `f ∘ γ(t) = (q1(t), q2(t))`.
    E { q1: Func1, q2: Func1 },
    /// `f1(z1, x2) = q1(x2)`, `f2(x1, z2) = q2(x1)`.
    R { q1: Func1, q2: Func1 },
    /// `f1 ∘ β(t) = q1(t)`, `f2(x1, β2(0)) = q2(x1)`.
    Pminus { q1_curve: Func1, q2: Func1 },
    /// `f1(β1(0), x2) = q1(x2)`, `f2 ∘ β(t) = q2(t)`.
    Pplus { q1: Func1, q2_curve: Func1 },
    /// `f1 ∘ β = q1`, `f ∘ γ = q̂`.
    XiMinus { q1_curve: Func1, qhat1: Func1, qhat2: Func1 },
    /// `f2 ∘ β = q2`, `f ∘ γ = q̂`.
    XiPlus { q2_curve: Func1, qhat1: Func1, qhat2: Func1 },
    /// `f1 ∘ β = q1`, `f2 ∘ β̂ = q2`, `f ∘ γ = q`.
    Phi { q1_curve: Func1, q2_curve: Func1, qg1: Func1, qg2: Func1 },
}

impl BoundaryData {
    /// Zero data matching a region kind.
    pub fn zero(kind: RegionKind) -> Self {
        let z = Func1::zero;
        match kind {
            RegionKind::E => BoundaryData::E { q1: z(), q2: z() },
            RegionKind::R => BoundaryData::R { q1: z(), q2: z() },
            RegionKind::Pminus => BoundaryData::Pminus { q1_curve: z(), q2: z() },
            RegionKind::Pplus => BoundaryData::Pplus { q1: z(), q2_curve: z() },
            RegionKind::XiMinus => BoundaryData::XiMinus { q1_curve: z(), qhat1: z(), qhat2: z() },
            RegionKind::XiPlus => BoundaryData::XiPlus { q2_curve: z(), qhat1: z(), qhat2: z() },
            RegionKind::Phi => BoundaryData::Phi { q1_curve: z(), q2_curve: z(), qg1: z(), qg2: z() },
        }
    }

    pub fn kind(&self) -> RegionKind {
        match self {
            BoundaryData::E { .. } => RegionKind::E,
            BoundaryData::R { .. } => RegionKind::R,
            BoundaryData::Pminus { .. } => RegionKind::Pminus,
            BoundaryData::Pplus { .. } => RegionKind::Pplus,
            BoundaryData::XiMinus { .. } => RegionKind::XiMinus,
            BoundaryData::XiPlus { .. } => RegionKind::XiPlus,
            BoundaryData::Phi { .. } => RegionKind::Phi,
        }
    }

    fn funcs(&self) -> Vec<&Func1> {
        match self {
            BoundaryData::E { q1, q2 } | BoundaryData::R { q1, q2 } => vec![q1, q2],
            BoundaryData::Pminus { q1_curve, q2 } => vec![q1_curve, q2],
            BoundaryData::Pplus { q1, q2_curve } => vec![q1, q2_curve],
            BoundaryData::XiMinus { q1_curve, qhat1, qhat2 } => vec![q1_curve, qhat1, qhat2],
            BoundaryData::XiPlus { q2_curve, qhat1, qhat2 } => vec![q2_curve, qhat1, qhat2],
            BoundaryData::Phi { q1_curve, q2_curve, qg1, qg2 } => vec![q1_curve, q2_curve, qg1, qg2],
        }
    }

    fn map(&self, mut f: impl FnMut(&Func1) -> Func1) -> Self {
        match self {
            BoundaryData::E { q1, q2 } => BoundaryData::E { q1: f(q1), q2: f(q2) },
            BoundaryData::R { q1, q2 } => BoundaryData::R { q1: f(q1), q2: f(q2) },
            BoundaryData::Pminus { q1_curve, q2 } => BoundaryData::Pminus { q1_curve: f(q1_curve), q2: f(q2) },
            BoundaryData::Pplus { q1, q2_curve } => BoundaryData::Pplus { q1: f(q1), q2_curve: f(q2_curve) },
            BoundaryData::XiMinus { q1_curve, qhat1, qhat2 } => {
                BoundaryData::XiMinus { q1_curve: f(q1_curve), qhat1: f(qhat1), qhat2: f(qhat2) }
            }
            BoundaryData::XiPlus { q2_curve, qhat1, qhat2 } => {
                BoundaryData::XiPlus { q2_curve: f(q2_curve), qhat1: f(qhat1), qhat2: f(qhat2) }
            }
            BoundaryData::Phi { q1_curve, q2_curve, qg1, qg2 } => {
                BoundaryData::Phi { q1_curve: f(q1_curve), q2_curve: f(q2_curve), qg1: f(qg1), qg2: f(qg2) }
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|g| g.scaled(c))
    }

    /// Sum of two data sets of the same kind.
    pub fn plus(&self, o: &BoundaryData) -> Result<Self> {
        if self.kind() != o.kind() {
            return Err(Error::DataMismatch("cannot add data of different kinds".into()));
        }
        let other = o.funcs();
        let mut k = 0;
        let out = self.map(|g| {
            let r = g.plus(other[k]);
            k += 1;
            r
        });
        Ok(out)
    }
}

/// Weights `w` with `Σ w_k v_k` the least-squares plane through samples at
/// offsets `pts` (in cell units), evaluated at the origin. `None` when the
/// offsets are collinear.
fn plane_weights(pts: &[[f64; 2]]) -> Option<Vec<f64>> {
    if pts.len() < 3 {
        return None;
    }
    let mut m = [[0.0f64; 3]; 3];
    for p in pts {
        let r = [1.0, p[0], p[1]];
        for a in 0..3 {
            for c in 0..3 {
                m[a][c] += r[a] * r[c];
            }
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-9 * (pts.len() as f64).powi(3) {
        return None;
    }
    // first row of m⁻¹
    let inv0 = [
        (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
        (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
        (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
    ];
    Some(pts.iter().map(|p| inv0[0] + inv0[1] * p[0] + inv0[2] * p[1]).collect())
}

/// Linear extrapolation to `at` from `(x0, v0)` and, when present, a second sample.
fn extrap(at: f64, x0: f64, v0: f64, next: Option<(f64, f64)>) -> f64 {
    match next {
        Some((x1, v1)) if x1 != x0 => v0 + (at - x0) * (v1 - v0) / (x1 - x0),
        _ => v0,
    }
}

/// Solver controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stopping threshold on the L² increment; default `1e-10(1 + ‖bc‖ + ‖p‖)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// An increment ratio at or above this marks the piece as non-contracting.
    pub ratio_limit: f64,
    pub max_depth: usize,
    pub auto_subdivide: bool,
    /// Constant initial iterate (zero by default).
    pub initial: f64,
    /// Split every piece at least this many times before iterating.
    #[serde(default)]
    pub force_depth: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: None, max_iter: 200, ratio_limit: 0.9, max_depth: 8, auto_subdivide: true, initial: 0.0, force_depth: 0 }
    }
}

/// Iteration record of one solved leaf piece.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceReport {
    pub name: String,
    pub kind: PieceKind,
    pub depth: usize,
    pub residuals: Vec<f64>,
}

impl PieceReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }
}

/// Solution `(f1, f2)` on the masked nodes of a region grid (NaN elsewhere).
#[derive(Clone, Debug)]
pub struct GridPairField {
    pub grid: RegionGrid,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub reports: Vec<PieceReport>,
    pub tol: f64,
}

impl GridPairField {
    pub fn lattice(&self) -> &Lattice {
        &self.grid.lattice
    }

    /// Value at node `(i, j)` if masked.
    pub fn node(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        let k = self.grid.lattice.idx(i, j);
        if self.grid.mask[k] && self.f1[k].is_finite() {
            Some([self.f1[k], self.f2[k]])
        } else {
            None
        }
    }

    /// Bilinear interpolation using the masked corners of the enclosing cell,
    /// weights renormalized over those corners.
    pub fn eval(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let l = &self.grid.lattice;
        let u = (x[0] - l.x0) / l.dx;
        let v = (x[1] - l.y0) / l.dy;
        let eps = 1e-9;
        if u < -eps || v < -eps || u > (l.nx - 1) as f64 + eps || v > (l.ny - 1) as f64 + eps {
            return None;
        }
        let i = (u.floor().max(0.0) as usize).min(l.nx - 2);
        let j = (v.floor().max(0.0) as usize).min(l.ny - 2);
        let (s, t) = ((u - i as f64).clamp(0.0, 1.0), (v - j as f64).clamp(0.0, 1.0));
        let mut acc = [0.0; 2];
        let mut wsum = 0.0;
        for (di, dj, w) in [(0, 0, (1.0 - s) * (1.0 - t)), (1, 0, s * (1.0 - t)), (0, 1, (1.0 - s) * t), (1, 1, s * t)] {
            if let Some(f) = self.node(i + di, j + dj) {
                if w > 0.0 {
                    acc[0] += w * f[0];
                    acc[1] += w * f[1];
                    wsum += w;
                }
            }
        }
        if wsum <= 1e-12 {
            // on a node or edge whose only nonzero-weight corners are outside
            let ni = u.round() as usize;
            let nj = v.round() as usize;
            if (u - ni as f64).abs() < 1e-6 && (v - nj as f64).abs() < 1e-6 {
                return self.node(ni.min(l.nx - 1), nj.min(l.ny - 1));
            }
            return None;
        }
        Some([acc[0] / wsum, acc[1] / wsum])
    }

    /// Discrete L² norms `(‖f1‖, ‖f2‖, ‖f‖)` with cell-area weights.
    pub fn l2(&self) -> (f64, f64, f64) {
        let l = &self.grid.lattice;
        let w = l.dx * l.dy;
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..l.len() {
            if self.grid.mask[k] && self.f1[k].is_finite() {
                a += self.f1[k] * self.f1[k] * w;
                b += self.f2[k] * self.f2[k] * w;
            }
        }
        (a.sqrt(), b.sqrt(), (a + b).sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.f1.len() {
            if self.grid.mask[k] && self.f1[k].is_finite() {
                m = m.max(self.f1[k].abs()).max(self.f2[k].abs());
            }
        }
        m
    }

    /// Deepest subdivision level used.
    pub fn depth(&self) -> usize {
        self.reports.iter().map(|r| r.depth).max().unwrap_or(0)
    }
}

/// Where a piece's rows (or columns) get their inflow values.
#[derive(Clone)]
enum Src {
    /// Function of the row height (or column abscissa); optionally the other
    /// component at the same inflow point.
    Data { main: Func1, other: Option<Func1> },
    /// Taken from pieces already solved.
    Handoff,
}

#[derive(Clone)]
struct Job {
    piece: Piece,
    rows: Src,
    cols: Src,
    name: String,
}

#[derive(Clone, Debug)]
struct Seg {
    /// Row index j (for rows) or column index i (for columns).
    line: usize,
    start: f64,
    end: f64,
    /// Inflow value of the integrated component and of the other one.
    main: f64,
    other: Option<f64>,
    /// Node index range along the line (inclusive), empty when lo > hi.
    lo: usize,
    hi: usize,
    /// Coefficients `[a, b, p]` at the inflow point.
    coef: [f64; 3],
}

struct Solved {
    rows: Vec<Seg>,
    cols: Vec<Seg>,
    /// `rows[r]` node values, contiguous per row.
    offs: Vec<usize>,
    f1: Vec<f64>,
    f2: Vec<f64>,
}

impl Solved {
    fn row(&self, j: usize) -> Option<(usize, &Seg)> {
        let first = self.rows.first()?.line;
        if j < first {
            return None;
        }
        let r = j - first;
        self.rows.get(r).filter(|s| s.line == j).map(|s| (r, s))
    }

    fn col(&self, i: usize) -> Option<&Seg> {
        let first = self.cols.first()?.line;
        if i < first {
            return None;
        }
        self.cols.get(i - first).filter(|s| s.line == i)
    }

    fn value(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        let (r, s) = self.row(j)?;
        if s.lo > s.hi || i < s.lo || i > s.hi {
            return None;
        }
        let k = self.offs[r] + (i - s.lo);
        Some([self.f1[k], self.f2[k]])
    }

    /// Least-squares plane through the solved nodes within three cells of
    /// `(i, j)`, evaluated at `(x, y)`; `None` when they are collinear.
    fn plane_at(&self, lat: &Lattice, i: usize, j: usize, x: f64, y: f64, comp: usize) -> Option<f64> {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for jj in j.saturating_sub(3)..=j + 3 {
            for ii in i.saturating_sub(3)..=i + 3 {
                if let Some(v) = self.value(ii, jj) {
                    pts.push([(lat.x(ii) - x) / lat.dx, (lat.y(jj) - y) / lat.dy]);
                    vals.push(v[comp]);
                }
            }
        }
        let w = plane_weights(&pts)?;
        Some(w.iter().zip(&vals).map(|(a, b)| a * b).sum())
    }

    /// Value at the solved node closest to `(i, j)` within three cells.
    fn nearest(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        let mut best: Option<(usize, [f64; 2])> = None;
        for jj in j.saturating_sub(3)..=j + 3 {
            for ii in i.saturating_sub(3)..=i + 3 {
                if let Some(v) = self.value(ii, jj) {
                    let d = ii.abs_diff(i).pow(2) + jj.abs_diff(j).pow(2);
                    if best.map_or(true, |b| d < b.0) {
                        best = Some((d, v));
                    }
                }
            }
        }
        best.map(|b| b.1)
    }
}

struct Ctx<'a> {
    lat: Lattice,
    sys: &'a CharSystem,
    /// Node coefficients `[a11, a12, a21, a22, p1, p2]`, evaluated lazily.
    coef: Vec<Option<[f64; 6]>>,
    opts: &'a SolveOptions,
    tol: f64,
    solved: Vec<Solved>,
    reports: Vec<PieceReport>,
}

impl<'a> Ctx<'a> {
    fn coef_at(&mut self, i: usize, j: usize) -> [f64; 6] {
        let k = self.lat.idx(i, j);
        if let Some(c) = self.coef[k] {
            return c;
        }
        let c = self.sys.eval([self.lat.x(i), self.lat.y(j)]);
        self.coef[k] = Some(c);
        c
    }

    /// Row and column segments of a piece on the lattice.
    fn segments(&self, p: &Piece) -> (Vec<Seg>, Vec<Seg>) {
        let l = &self.lat;
        let tol = l.tol();
        let mut rows = Vec::new();
        let jlo = (((p.ya - l.y0) / l.dy) - 1e-9).ceil().max(0.0) as usize;
        let jhi = ((((p.yb - l.y0) / l.dy) + 1e-9).floor() as isize).min(l.ny as isize - 1);
        for j in jlo as isize..=jhi {
            let j = j as usize;
            let y = l.y(j).clamp(p.ya, p.yb);
            let (s, e) = (p.row_start(y), p.row_end(y));
            let ilo = (((s - l.x0) / l.dx) - 1e-9).ceil().max(0.0) as usize;
            let ihi = (((e - l.x0) / l.dx) + 1e-9).floor().min((l.nx - 1) as f64);
            let mut lo = ilo;
            let mut hi = if ihi < 0.0 { 0 } else { ihi as usize };
            if ihi < 0.0 || (ilo as f64) > ihi {
                lo = 1;
                hi = 0;
            }
            // keep only nodes that also pass the column test
            while lo <= hi && !p.contains_closed([l.x(lo), l.y(j)], tol) {
                lo += 1;
            }
            while hi >= lo && hi > 0 && !p.contains_closed([l.x(hi), l.y(j)], tol) {
                hi -= 1;
            }
            if lo <= hi && !p.contains_closed([l.x(hi), l.y(j)], tol) {
                lo = 1;
                hi = 0;
            }
            rows.push(Seg { line: j, start: s, end: e, main: 0.0, other: None, lo, hi, coef: [0.0; 3] });
        }
        let mut cols = Vec::new();
        let ilo = (((p.xa - l.x0) / l.dx) - 1e-9).ceil().max(0.0) as usize;
        let ihi = ((((p.xb - l.x0) / l.dx) + 1e-9).floor() as isize).min(l.nx as isize - 1);
        for i in ilo as isize..=ihi {
            let i = i as usize;
            let x = l.x(i).clamp(p.xa, p.xb);
            let (s, e) = (p.col_start(x), p.col_end(x));
            // column node range is read off the rows
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for r in &rows {
                if r.lo <= r.hi && i >= r.lo && i <= r.hi {
                    lo = lo.min(r.line);
                    hi = hi.max(r.line);
                }
            }
            if lo == usize::MAX {
                lo = 1;
                hi = 0;
            }
            cols.push(Seg { line: i, start: s, end: e, main: 0.0, other: None, lo, hi, coef: [0.0; 3] });
        }
        (rows, cols)
    }

    /// `f1` (and `f2`) where row `j` crosses `x1 = xq`, from solved pieces.
    fn handoff_row(&self, j: usize, xq: f64) -> Option<(f64, Option<f64>)> {
        let tol = 1e-9 * (1.0 + self.lat.dx.abs());
        let y = self.lat.y(j);
        let mut fallback = None;
        for s in self.solved.iter().rev() {
            let Some((r, seg)) = s.row(j) else { continue };
            if xq > seg.start + tol && xq <= seg.end + tol {
                let (a, b) = self.partial_row(s, r, seg, xq, y);
                return Some((a, Some(b)));
            }
            if (xq - seg.start).abs() <= tol && fallback.is_none() {
                let f2 = seg.other.or_else(|| if seg.lo <= seg.hi { Some(s.f2[s.offs[r]]) } else { None });
                fallback = Some((seg.main, f2));
            }
        }
        fallback
    }

    fn handoff_col(&self, i: usize, yq: f64) -> Option<(f64, Option<f64>)> {
        let tol = 1e-9 * (1.0 + self.lat.dy.abs());
        let x = self.lat.x(i);
        let mut fallback = None;
        for s in self.solved.iter().rev() {
            let Some(seg) = s.col(i) else { continue };
            if yq > seg.start + tol && yq <= seg.end + tol {
                let (a, b) = self.partial_col(s, seg, yq, x);
                return Some((a, Some(b)));
            }
            if (yq - seg.start).abs() <= tol && fallback.is_none() {
                let f1 = seg.other.or_else(|| if seg.lo <= seg.hi { s.value(i, seg.lo).map(|v| v[0]) } else { None });
                fallback = Some((seg.main, f1));
            }
        }
        fallback
    }

    /// Integrates row `r` of a solved piece from its last node at or before
    /// `xq` up to `xq` (one implicit trapezoid step).
    fn partial_row(&self, s: &Solved, r: usize, seg: &Seg, xq: f64, y: f64) -> (f64, f64) {
        let l = &self.lat;
        let tol = 1e-9 * l.dx.abs();
        // previous point: node or inflow
        let mut prev_x = seg.start;
        let mut prev_f = [seg.main, seg.other.unwrap_or(f64::NAN)];
        let mut prev_c: Option<[f64; 3]> = Some(seg.coef);
        let mut next_f2 = None;
        let mut prev_node = None;
        if seg.lo <= seg.hi {
            for i in seg.lo..=seg.hi {
                let xi = l.x(i);
                let k = s.offs[r] + (i - seg.lo);
                if xi <= xq + tol {
                    prev_x = xi;
                    prev_node = Some(i);
                    prev_f = [s.f1[k], s.f2[k]];
                    prev_c = None;
                    if (xi - xq).abs() <= tol {
                        return (s.f1[k], s.f2[k]);
                    }
                } else {
                    next_f2 = Some((xi, s.f2[k]));
                    break;
                }
            }
            if prev_f[1].is_nan() {
                let o = s.offs[r];
                let next = (seg.hi > seg.lo).then(|| (l.x(seg.lo + 1), s.f2[o + 1]));
                prev_f[1] = extrap(seg.start, l.x(seg.lo), s.f2[o], next);
            }
        }
        if prev_f[1].is_nan() {
            // node-free row: borrow f2 from the closest solved node
            let i = (((xq - l.x0) / l.dx).round().max(0.0) as usize).min(l.nx - 1);
            prev_f[1] = s
                .plane_at(l, i, seg.line, prev_x, y, 1)
                .or_else(|| s.nearest(i, seg.line).map(|v| v[1]))
                .unwrap_or(0.0);
        }
        let f2q = match next_f2 {
            Some((xn, f2n)) if xn > prev_x => prev_f[1] + (f2n - prev_f[1]) * (xq - prev_x) / (xn - prev_x),
            // past the last node: extrapolate from the last two
            _ => match prev_node {
                Some(i) if i > seg.lo => {
                    let k = s.offs[r] + (i - seg.lo);
                    extrap(xq, prev_x, prev_f[1], Some((l.x(i - 1), s.f2[k - 1])))
                }
                _ => {
                    let i = (((xq - l.x0) / l.dx).round().max(0.0) as usize).min(l.nx - 1);
                    s.plane_at(l, i, seg.line, xq, y, 1).unwrap_or(prev_f[1])
                }
            },
        };
        let c0 = match prev_c {
            Some(c) => c,
            None => {
                let c = self.sys.eval([prev_x, y]);
                [c[0], c[1], c[4]]
            }
        };
        let g0 = c0[0] * prev_f[0] + c0[1] * prev_f[1] + c0[2];
        let cq = self.sys.eval([xq, y]);
        let h = xq - prev_x;
        let f1q = (prev_f[0] + 0.5 * h * (g0 + cq[1] * f2q + cq[4])) / (1.0 - 0.5 * h * cq[0]);
        (f1q, f2q)
    }

    fn partial_col(&self, s: &Solved, seg: &Seg, yq: f64, x: f64) -> (f64, f64) {
        let l = &self.lat;
        let tol = 1e-9 * l.dy.abs();
        let i = seg.line;
        let mut prev_y = seg.start;
        let mut prev_f = [seg.other.unwrap_or(f64::NAN), seg.main];
        let mut prev_c: Option<[f64; 3]> = Some(seg.coef);
        let mut next_f1 = None;
        let mut prev_node = None;
        if seg.lo <= seg.hi {
            for j in seg.lo..=seg.hi {
                let yj = l.y(j);
                let v = s.value(i, j).unwrap_or([0.0, 0.0]);
                if yj <= yq + tol {
                    prev_y = yj;
                    prev_node = Some(j);
                    prev_f = v;
                    prev_c = None;
                    if (yj - yq).abs() <= tol {
                        return (v[1], v[0]);
                    }
                } else {
                    next_f1 = Some((yj, v[0]));
                    break;
                }
            }
            if prev_f[0].is_nan() {
                let v0 = s.value(i, seg.lo).map(|v| v[0]).unwrap_or(0.0);
                let next = (seg.hi > seg.lo).then(|| s.value(i, seg.lo + 1).map(|v| (l.y(seg.lo + 1), v[0]))).flatten();
                prev_f[0] = extrap(seg.start, l.y(seg.lo), v0, next);
            }
        }
        if prev_f[0].is_nan() {
            let j = (((yq - l.y0) / l.dy).round().max(0.0) as usize).min(l.ny - 1);
            prev_f[0] = s.plane_at(l, i, j, x, prev_y, 0).or_else(|| s.nearest(i, j).map(|v| v[0])).unwrap_or(0.0);
        }
        let f1q = match next_f1 {
            Some((yn, f1n)) if yn > prev_y => prev_f[0] + (f1n - prev_f[0]) * (yq - prev_y) / (yn - prev_y),
            _ => match prev_node.and_then(|j: usize| if j > seg.lo { s.value(i, j - 1).map(|v| (l.y(j - 1), v[0])) } else { None }) {
                Some(before) => extrap(yq, prev_y, prev_f[0], Some(before)),
                None => {
                    let j = (((yq - l.y0) / l.dy).round().max(0.0) as usize).min(l.ny - 1);
                    s.plane_at(l, i, j, x, yq, 0).unwrap_or(prev_f[0])
                }
            },
        };
        let c0 = match prev_c {
            Some(c) => c,
            None => {
                let c = self.sys.eval([x, prev_y]);
                [c[3], c[2], c[5]]
            }
        };
        // column coefficients are stored as [a22, a21, p2]
        let g0 = c0[0] * prev_f[1] + c0[1] * prev_f[0] + c0[2];
        let cq = self.sys.eval([x, yq]);
        let h = yq - prev_y;
        let f2q = (prev_f[1] + 0.5 * h * (g0 + cq[2] * f1q + cq[5])) / (1.0 - 0.5 * h * cq[3]);
        (f2q, f1q)
    }

    fn fill_inflow(&self, job: &Job, rows: &mut [Seg], cols: &mut [Seg]) -> Result<()> {
        let l = self.lat;
        for seg in rows.iter_mut() {
            let y = l.y(seg.line);
            match &job.rows {
                Src::Data { main, other } => {
                    seg.main = main.at(y);
                    seg.other = other.as_ref().map(|o| o.at(y));
                }
                Src::Handoff => {
                    let (a, b) = self.handoff_row(seg.line, seg.start).ok_or_else(|| {
                        Error::Internal(format!("{}: no upstream value for row {} at x1 = {}", job.name, seg.line, seg.start))
                    })?;
                    seg.main = a;
                    seg.other = b;
                }
            }
            let c = self.sys.eval([seg.start, y]);
            seg.coef = [c[0], c[1], c[4]];
        }
        for seg in cols.iter_mut() {
            let x = l.x(seg.line);
            match &job.cols {
                Src::Data { main, other } => {
                    seg.main = main.at(x);
                    seg.other = other.as_ref().map(|o| o.at(x));
                }
                Src::Handoff => {
                    let (a, b) = self.handoff_col(seg.line, seg.start).ok_or_else(|| {
                        Error::Internal(format!("{}: no upstream value for column {} at x2 = {}", job.name, seg.line, seg.start))
                    })?;
                    seg.main = a;
                    seg.other = b;
                }
            }
            let c = self.sys.eval([x, seg.start]);
            seg.coef = [c[3], c[2], c[5]];
        }
        Ok(())
    }

    /// Picard iteration on one piece; `Ok(None)` when it does not contract.
    fn picard(&mut self, job: &Job, depth: usize) -> Result<std::result::Result<Solved, Vec<f64>>> {
        let (mut rows, mut cols) = self.segments(&job.piece);
        self.fill_inflow(job, &mut rows, &mut cols)?;
        let mut offs = Vec::with_capacity(rows.len());
        let mut n = 0;
        for r in &rows {
            offs.push(n);
            if r.lo <= r.hi {
                n += r.hi - r.lo + 1;
            }
        }
        // node coefficients in row-major piece order
        let mut nc = Vec::with_capacity(n);
        for r in &rows {
            if r.lo <= r.hi {
                for i in r.lo..=r.hi {
                    nc.push(self.coef_at(i, r.line));
                }
            }
        }
        let jfirst = rows.first().map(|r| r.line).unwrap_or(0);
        let loc = |i: usize, j: usize| -> usize {
            let r = &rows[j - jfirst];
            offs[j - jfirst] + (i - r.lo)
        };
        // inflow stencils for single-node rows and columns: a plane through
        // nearby nodes of this piece
        let lat = self.lat;
        let stencil = |x: f64, y: f64, ic: usize, jc: usize| -> Option<Vec<(usize, f64)>> {
            let mut idx = Vec::new();
            let mut pts = Vec::new();
            for j in jc.saturating_sub(2)..=jc + 2 {
                if j < jfirst || j - jfirst >= rows.len() {
                    continue;
                }
                let r = &rows[j - jfirst];
                for i in ic.saturating_sub(2)..=ic + 2 {
                    if r.lo <= r.hi && i >= r.lo && i <= r.hi {
                        idx.push(loc(i, j));
                        pts.push([(lat.x(i) - x) / lat.dx, (lat.y(j) - y) / lat.dy]);
                    }
                }
            }
            plane_weights(&pts).map(|w| idx.into_iter().zip(w).collect())
        };
        let row_st: Vec<Option<Vec<(usize, f64)>>> =
            rows.iter().map(|r| if r.lo == r.hi && r.other.is_none() { stencil(r.start, lat.y(r.line), r.lo, r.line) } else { None }).collect();
        let col_st: Vec<Option<Vec<(usize, f64)>>> =
            cols.iter().map(|c| if c.lo == c.hi && c.other.is_none() { stencil(lat.x(c.line), c.start, c.line, c.lo) } else { None }).collect();
        let apply = |st: &[(usize, f64)], v: &[f64]| -> f64 { st.iter().map(|(k, w)| w * v[*k]).sum() };
        let mut f1 = vec![self.opts.initial; n];
        let mut f2 = vec![self.opts.initial; n];
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        let w = self.lat.dx * self.lat.dy;
        let mut residuals = Vec::new();
        let lat = self.lat;
        for _ in 0..self.opts.max_iter.max(1) {
            // rows: f1
            for (ri, r) in rows.iter().enumerate() {
                if r.lo > r.hi {
                    continue;
                }
                let o = offs[ri];
                let f2s = match (&r.other, &row_st[ri]) {
                    (Some(v), _) => *v,
                    (None, Some(st)) => apply(st, &f2),
                    (None, None) => extrap(r.start, lat.x(r.lo), f2[o], (r.hi > r.lo).then(|| (lat.x(r.lo + 1), f2[o + 1]))),
                };
                let mut px = r.start;
                let mut pg = r.coef[0] * r.main + r.coef[1] * f2s + r.coef[2];
                let mut acc = r.main;
                for i in r.lo..=r.hi {
                    let k = o + (i - r.lo);
                    let c = &nc[k];
                    let x = lat.x(i);
                    let g = c[0] * f1[k] + c[1] * f2[k] + c[4];
                    acc += 0.5 * (x - px) * (pg + g);
                    g1[k] = acc;
                    px = x;
                    pg = g;
                }
            }
            // columns: f2
            for (ci, cseg) in cols.iter().enumerate() {
                if cseg.lo > cseg.hi {
                    continue;
                }
                let i = cseg.line;
                let k0 = loc(i, cseg.lo);
                let f1s = match (&cseg.other, &col_st[ci]) {
                    (Some(v), _) => *v,
                    (None, Some(st)) => apply(st, &f1),
                    (None, None) => {
                        extrap(cseg.start, lat.y(cseg.lo), f1[k0], (cseg.hi > cseg.lo).then(|| (lat.y(cseg.lo + 1), f1[loc(i, cseg.lo + 1)])))
                    }
                };
                let mut py = cseg.start;
                let mut pg = cseg.coef[0] * cseg.main + cseg.coef[1] * f1s + cseg.coef[2];
                let mut acc = cseg.main;
                for j in cseg.lo..=cseg.hi {
                    let k = loc(i, j);
                    let c = &nc[k];
                    let y = lat.y(j);
                    let g = c[2] * f1[k] + c[3] * f2[k] + c[5];
                    acc += 0.5 * (y - py) * (pg + g);
                    g2[k] = acc;
                    py = y;
                    pg = g;
                }
            }
            let mut r2 = 0.0;
            for k in 0..n {
                let d1 = g1[k] - f1[k];
                let d2 = g2[k] - f2[k];
                r2 += (d1 * d1 + d2 * d2) * w;
            }
            std::mem::swap(&mut f1, &mut g1);
            std::mem::swap(&mut f2, &mut g2);
            let res = r2.sqrt();
            residuals.push(res);
            if !res.is_finite() {
                return Ok(Err(residuals));
            }
            if res < self.tol {
                break;
            }
            let m = residuals.len();
            if m >= 2 && residuals[m - 2] > 0.0 && res / residuals[m - 2] >= self.opts.ratio_limit {
                return Ok(Err(residuals));
            }
        }
        if residuals.last().copied().unwrap_or(0.0) >= self.tol {
            return Ok(Err(residuals));
        }
        self.reports.push(PieceReport { name: job.name.clone(), kind: job.piece.kind, depth, residuals });
        Ok(Ok(Solved { rows, cols, offs, f1, f2 }))
    }

    fn solve_job(&mut self, job: Job, depth: usize) -> Result<()> {
        if job.piece.is_empty() {
            return Ok(());
        }
        let outcome = if depth < self.opts.force_depth { Err(vec![]) } else { self.picard(&job, depth)? };
        match outcome {
            Ok(s) => {
                self.solved.push(s);
                Ok(())
            }
            Err(hist) => {
                let ratios: Vec<f64> = hist.windows(2).map(|w| w[1] / w[0]).collect();
                if !self.opts.auto_subdivide && depth >= self.opts.force_depth {
                    return Err(Error::ContractionFailure { piece: job.name.clone(), ratios });
                }
                if depth >= self.opts.max_depth {
                    return Err(Error::Unsolvable(format!("{} still non-contracting at depth {depth}", job.name)));
                }
                let subs = subdivide(&job.piece, job.piece.extent())?;
                if subs.len() <= 1 {
                    return Err(Error::Unsolvable(format!("{} cannot be split further", job.name)));
                }
                for (n, sp) in subs.into_iter().enumerate() {
                    let child = Job {
                        piece: sp.piece,
                        rows: if sp.rows_on_parent { job.rows.clone() } else { Src::Handoff },
                        cols: if sp.cols_on_parent { job.cols.clone() } else { Src::Handoff },
                        name: format!("{}/{}", job.name, n),
                    };
                    self.solve_job(child, depth + 1)?;
                }
                Ok(())
            }
        }
    }
}

fn curve_data(curve: &PlanarCurve, q: &Func1, coord: usize) -> Func1 {
    let c = curve.clone();
    let q = q.clone();
    Func1::new(move |v| q.at(c.inverse(coord, v)))
}

fn jobs_for(region: &PlanarRegion, bc: &BoundaryData) -> Result<Vec<Job>> {
    if bc.kind() != region.kind {
        return Err(Error::DataMismatch(format!("{:?} data for a {:?} region", bc.kind(), region.kind)));
    }
    let e_job = |piece: &Piece, q1: &Func1, q2: &Func1, name: &str| -> Job {
        let g = piece.curve.as_ref().unwrap();
        Job {
            piece: piece.clone(),
            rows: Src::Data { main: curve_data(g, q1, 1), other: Some(curve_data(g, q2, 1)) },
            cols: Src::Data { main: curve_data(g, q2, 0), other: Some(curve_data(g, q1, 0)) },
            name: name.into(),
        }
    };
    let handoff = |piece: &Piece, name: &str| Job { piece: piece.clone(), rows: Src::Handoff, cols: Src::Handoff, name: name.into() };
    let p = &region.parts;
    let jobs = match bc {
        BoundaryData::E { q1, q2 } => vec![e_job(&p[0], q1, q2, "E")],
        BoundaryData::R { q1, q2 } => vec![Job {
            piece: p[0].clone(),
            rows: Src::Data { main: q1.clone(), other: None },
            cols: Src::Data { main: q2.clone(), other: None },
            name: "R".into(),
        }],
        BoundaryData::Pminus { q1_curve, q2 } => {
            let b = p[0].curve.as_ref().unwrap();
            vec![Job {
                piece: p[0].clone(),
                rows: Src::Data { main: curve_data(b, q1_curve, 1), other: None },
                cols: Src::Data { main: q2.clone(), other: None },
                name: "P-".into(),
            }]
        }
        BoundaryData::Pplus { q1, q2_curve } => {
            let b = p[0].curve.as_ref().unwrap();
            vec![Job {
                piece: p[0].clone(),
                rows: Src::Data { main: q1.clone(), other: None },
                cols: Src::Data { main: curve_data(b, q2_curve, 0), other: None },
                name: "P+".into(),
            }]
        }
        BoundaryData::XiMinus { q1_curve, qhat1, qhat2 } => {
            let b = p[1].curve.as_ref().unwrap();
            let mut v = vec![
                e_job(&p[0], qhat1, qhat2, "E"),
                Job {
                    piece: p[1].clone(),
                    rows: Src::Data { main: curve_data(b, q1_curve, 1), other: None },
                    cols: Src::Handoff,
                    name: "P-".into(),
                },
            ];
            if p.len() > 2 {
                v.push(handoff(&p[2], "R"));
            }
            v
        }
        BoundaryData::XiPlus { q2_curve, qhat1, qhat2 } => {
            let b = p[1].curve.as_ref().unwrap();
            let mut v = vec![
                e_job(&p[0], qhat1, qhat2, "E"),
                Job {
                    piece: p[1].clone(),
                    rows: Src::Handoff,
                    cols: Src::Data { main: curve_data(b, q2_curve, 0), other: None },
                    name: "P+".into(),
                },
            ];
            if p.len() > 2 {
                v.push(handoff(&p[2], "R"));
            }
            v
        }
        BoundaryData::Phi { q1_curve, q2_curve, qg1, qg2 } => {
            let mut v = vec![e_job(&p[0], qg1, qg2, "E")];
            let b = p[1].curve.as_ref().unwrap();
            v.push(Job {
                piece: p[1].clone(),
                rows: Src::Data { main: curve_data(b, q1_curve, 1), other: None },
                cols: Src::Handoff,
                name: "P-".into(),
            });
            for part in &p[2..] {
                match part.kind {
                    PieceKind::R => v.push(handoff(part, if v.len() == 2 { "R1" } else { "R2" })),
                    PieceKind::Pplus => {
                        let bh = part.curve.as_ref().unwrap();
                        v.push(Job {
                            piece: part.clone(),
                            rows: Src::Handoff,
                            cols: Src::Data { main: curve_data(bh, q2_curve, 0), other: None },
                            name: "P+".into(),
                        })
                    }
                    _ => return Err(Error::Internal("unexpected constituent".into())),
                }
            }
            v
        }
    };
    Ok(jobs)
}

fn data_norm(bc: &BoundaryData) -> f64 {
    // sampled on a nominal unit interval; only used to scale the tolerance
    let mut s: f64 = 0.0;
    for f in bc.funcs() {
        for k in 0..=32 {
            s = s.max(f.at(k as f64 / 32.0).abs());
        }
    }
    s
}

fn rhs_norm(grid: &RegionGrid, sys: &CharSystem) -> f64 {
    let l = &grid.lattice;
    let mut s = 0.0;
    for j in 0..l.ny {
        for i in 0..l.nx {
            if grid.mask[l.idx(i, j)] {
                let x = [l.x(i), l.y(j)];
                let (a, b) = ((sys.p1)(x), (sys.p2)(x));
                s += (a * a + b * b) * l.dx * l.dy;
            }
        }
    }
    s.sqrt()
}

/// Default tolerance `1e-10 (1 + ‖bc‖ + ‖p‖)`.
pub fn default_tol(grid: &RegionGrid, sys: &CharSystem, bc: &BoundaryData) -> f64 {
    1e-10 * (1.0 + data_norm(bc) + rhs_norm(grid, sys))
}

/// Solves the system on any region kind, subdividing pieces that do not
/// contract.
pub fn solve_region(grid: &RegionGrid, sys: &CharSystem, bc: &BoundaryData, opts: &SolveOptions) -> Result<GridPairField> {
    let jobs = jobs_for(&grid.region, bc)?;
    let tol = opts.tol.unwrap_or_else(|| default_tol(grid, sys, bc));
    let mut ctx = Ctx {
        lat: grid.lattice,
        sys,
        coef: vec![None; grid.lattice.len()],
        opts,
        tol,
        solved: Vec::new(),
        reports: Vec::new(),
    };
    for job in jobs {
        ctx.solve_job(job, 0)?;
    }
    let l = grid.lattice;
    let mut f1 = vec![f64::NAN; l.len()];
    let mut f2 = vec![f64::NAN; l.len()];
    for s in &ctx.solved {
        for (r, seg) in s.rows.iter().enumerate() {
            if seg.lo > seg.hi {
                continue;
            }
            for i in seg.lo..=seg.hi {
                let k = l.idx(i, seg.line);
                if f1[k].is_nan() {
                    let q = s.offs[r] + (i - seg.lo);
                    f1[k] = s.f1[q];
                    f2[k] = s.f2[q];
                }
            }
        }
    }
    // masked nodes not reached by any piece (tolerance slivers) take the
    // average of their reached neighbours
    for j in 0..l.ny {
        for i in 0..l.nx {
            let k = l.idx(i, j);
            if grid.mask[k] && f1[k].is_nan() {
                let mut acc = [0.0, 0.0];
                let mut n = 0.0;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < l.nx && (jj as usize) < l.ny {
                        let kk = l.idx(ii as usize, jj as usize);
                        if f1[kk].is_finite() {
                            acc[0] += f1[kk];
                            acc[1] += f2[kk];
                            n += 1.0;
                        }
                    }
                }
                if n > 0.0 {
                    f1[k] = acc[0] / n;
                    f2[k] = acc[1] / n;
                }
            }
        }
    }
    Ok(GridPairField { grid: grid.clone(), f1, f2, reports: ctx.reports, tol })
}

/// Solves a primitive region (`E`, `R`, `P±`) without subdivision.
pub fn solve_primitive(grid: &RegionGrid, sys: &CharSystem, bc: &BoundaryData, tol: Option<f64>) -> Result<GridPairField> {
    if !matches!(grid.region.kind, RegionKind::E | RegionKind::R | RegionKind::Pminus | RegionKind::Pplus) {
        return Err(Error::Invalid("solve_primitive takes E, R or P± regions".into()));
    }
    let opts = SolveOptions { tol, auto_subdivide: false, ..Default::default() };
    solve_region(grid, sys, bc, &opts)
}

/// One application of the integral operator `B` to `f` on a primitive region.
pub fn picard_apply(grid: &RegionGrid, sys: &CharSystem, bc: &BoundaryData, f: &GridPairField) -> Result<GridPairField> {
    if !matches!(grid.region.kind, RegionKind::E | RegionKind::R | RegionKind::Pminus | RegionKind::Pplus) {
        return Err(Error::Invalid("picard_apply takes E, R or P± regions".into()));
    }
    if f.grid.lattice != grid.lattice {
        return Err(Error::DataMismatch("field lives on another lattice".into()));
    }
    let jobs = jobs_for(&grid.region, bc)?;
    let opts = SolveOptions::default();
    let ctx = Ctx { lat: grid.lattice, sys, coef: vec![None; grid.lattice.len()], opts: &opts, tol: 0.0, solved: vec![], reports: vec![] };
    let job = &jobs[0];
    let (mut rows, mut cols) = ctx.segments(&job.piece);
    ctx.fill_inflow(job, &mut rows, &mut cols)?;
    let l = grid.lattice;
    let val = |i: usize, j: usize| -> [f64; 2] {
        let k = l.idx(i, j);
        let v = [f.f1[k], f.f2[k]];
        if v[0].is_finite() {
            v
        } else {
            [0.0, 0.0]
        }
    };
    let mut out1 = vec![f64::NAN; l.len()];
    let mut out2 = vec![f64::NAN; l.len()];
    for r in &rows {
        if r.lo > r.hi {
            continue;
        }
        let y = l.y(r.line);
        let f2s = r.other.unwrap_or_else(|| extrap(r.start, l.x(r.lo), val(r.lo, r.line)[1], (r.hi > r.lo).then(|| (l.x(r.lo + 1), val(r.lo + 1, r.line)[1]))));
        let mut px = r.start;
        let mut pg = r.coef[0] * r.main + r.coef[1] * f2s + r.coef[2];
        let mut acc = r.main;
        for i in r.lo..=r.hi {
            let c = sys.eval([l.x(i), y]);
            let v = val(i, r.line);
            let g = c[0] * v[0] + c[1] * v[1] + c[4];
            acc += 0.5 * (l.x(i) - px) * (pg + g);
            out1[l.idx(i, r.line)] = acc;
            px = l.x(i);
            pg = g;
        }
    }
    for cseg in &cols {
        if cseg.lo > cseg.hi {
            continue;
        }
        let x = l.x(cseg.line);
        let f1s = cseg.other.unwrap_or_else(|| {
            extrap(cseg.start, l.y(cseg.lo), val(cseg.line, cseg.lo)[0], (cseg.hi > cseg.lo).then(|| (l.y(cseg.lo + 1), val(cseg.line, cseg.lo + 1)[0])))
        });
        let mut py = cseg.start;
        let mut pg = cseg.coef[0] * cseg.main + cseg.coef[1] * f1s + cseg.coef[2];
        let mut acc = cseg.main;
        for j in cseg.lo..=cseg.hi {
            let c = sys.eval([x, l.y(j)]);
            let v = val(cseg.line, j);
            let g = c[2] * v[0] + c[3] * v[1] + c[5];
            acc += 0.5 * (l.y(j) - py) * (pg + g);
            out2[l.idx(cseg.line, j)] = acc;
            py = l.y(j);
            pg = g;
        }
    }
    Ok(GridPairField { grid: grid.clone(), f1: out1, f2: out2, reports: vec![], tol: 0.0 })
}

/// Discrete L² distance between two fields on the same grid (masked nodes).
pub fn l2_distance(a: &GridPairField, b: &GridPairField) -> f64 {
    let l = &a.grid.lattice;
    let w = l.dx * l.dy;
    let mut s = 0.0;
    for k in 0..l.len() {
        if a.grid.mask[k] && a.f1[k].is_finite() && b.f1[k].is_finite() {
            let d1 = a.f1[k] - b.f1[k];
            let d2 = a.f2[k] - b.f2[k];
            s += (d1 * d1 + d2 * d2) * w;
        }
    }
    s.sqrt()
}

/// A line or curve along which a trace is taken.
#[derive(Clone, Debug)]
pub enum Locus {
    /// `x1 = x`, `x2 ∈ [y0, y1]`.
    Vertical { x: f64, y0: f64, y1: f64 },
    /// `x2 = y`, `x1 ∈ [x0, x1]`.
    Horizontal { y: f64, x0: f64, x1: f64 },
    /// `start + s (1, 1)`, `s ∈ [0, s1]`.
    Diagonal { start: [f64; 2], s1: f64 },
    /// A planar curve over its parameter interval.
    Curve(PlanarCurve),
}

/// Sampled trace of a field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub s: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub l2_f1: f64,
    pub l2_f2: f64,
}

impl Trace {
    pub fn l2(&self) -> f64 {
        (self.l2_f1 * self.l2_f1 + self.l2_f2 * self.l2_f2).sqrt()
    }
}

fn trapezoid_l2(s: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 1..s.len() {
        acc += 0.5 * (s[k] - s[k - 1]) * (v[k] * v[k] + v[k - 1] * v[k - 1]);
    }
    acc.sqrt()
}

/// Samples `field` along `locus` at `n` points (points outside the masked
/// region are dropped).
pub fn extract_trace(field: &GridPairField, locus: &Locus, n: usize) -> Result<Trace> {
    let n = n.max(2);
    let mut t = Trace { s: vec![], points: vec![], f1: vec![], f2: vec![], l2_f1: 0.0, l2_f2: 0.0 };
    for k in 0..n {
        let u = k as f64 / (n - 1) as f64;
        let (s, p) = match locus {
            Locus::Vertical { x, y0, y1 } => (y0 + u * (y1 - y0), [*x, y0 + u * (y1 - y0)]),
            Locus::Horizontal { y, x0, x1 } => (x0 + u * (x1 - x0), [x0 + u * (x1 - x0), *y]),
            Locus::Diagonal { start, s1 } => (u * s1, [start[0] + u * s1, start[1] + u * s1]),
            Locus::Curve(c) => {
                let tt = c.ta + u * (c.tb - c.ta);
                (tt, c.at(tt))
            }
        };
        if let Some(v) = field.eval(p) {
            t.s.push(s);
            t.points.push(p);
            t.f1.push(v[0]);
            t.f2.push(v[1]);
        }
    }
    if t.s.is_empty() {
        return Err(Error::EmptyTrace);
    }
    t.l2_f1 = trapezoid_l2(&t.s, &t.f1);
    t.l2_f2 = trapezoid_l2(&t.s, &t.f2);
    Ok(t)
}

/// Largest square side `e` (bisection, `steps` halvings) for which Picard on
/// `R(z, e, e)` with unit edge data contracts without subdivision.
pub fn contraction_threshold(sys: &CharSystem, z: [f64; 2], max_extent: f64, n: usize, steps: usize) -> Result<f64> {
    let ok = |e: f64| -> Result<bool> {
        let region = PlanarRegion::r(z, e, e)?;
        let grid = RegionGrid::new(region, n);
        let bc = BoundaryData::R { q1: Func1::constant(1.0), q2: Func1::constant(1.0) };
        match solve_primitive(&grid, sys, &bc, None) {
            Ok(_) => Ok(true),
            Err(Error::ContractionFailure { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if ok(max_extent)? {
        return Ok(max_extent);
    }
    let (mut lo, mut hi) = (0.0, max_extent);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Traces of a solution on an `E(γ)` region: `f1` on the right edge
/// `x1 = γ1(t0)`, `f2` on the top edge `x2 = γ2(0)`, and both components on
/// the diagonal `γ(η) + s(1, 1)` when `η` is given.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ETraces {
    pub right: Trace,
    pub top: Trace,
    pub diagonal: Option<Trace>,
}

pub fn e_traces(field: &GridPairField, gamma: &PlanarCurve, eta: Option<f64>, n: usize) -> Result<ETraces> {
    let (s, e) = (gamma.start(), gamma.end());
    let right = extract_trace(field, &Locus::Vertical { x: e[0], y0: e[1], y1: s[1] }, n)?;
    let top = extract_trace(field, &Locus::Horizontal { y: s[1], x0: s[0], x1: e[0] }, n)?;
    let diagonal = match eta {
        Some(t) => {
            let p = gamma.at(t);
            let s1 = (e[0] - p[0]).min(s[1] - p[1]);
            Some(extract_trace(field, &Locus::Diagonal { start: p, s1 }, n)?)
        }
        None => None,
    };
    Ok(ETraces { right, top, diagonal })
}
