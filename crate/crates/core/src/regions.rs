//! Planar regions bounded by monotone curves and axis-parallel edges, on which
//! the characteristic system is posed.
//!
//! Four primitive pieces exist:
//!
//! * `E(γ)`: right of a decreasing curve `γ`, below `x2 = γ2(0)`, left of
//!   `x1 = γ1(t0)`;
//! * `R(z, a, b)`: the open rectangle `(z1, z1+a) × (z2, z2+b)`;
//! * `P−(β)`: right of an increasing curve, above `x2 = β2(0)`, left of
//!   `x1 = β1(t1)`;
//! * `P+(β)`: left of an increasing curve, right of `x1 = β1(0)`, below
//!   `x2 = β2(t1)`.
//!
//! The composites `Ξ−`, `Ξ+` and `Φ` are unions of primitives plus a filler
//! rectangle. Every primitive knows where each grid row starts and ends and
//! where each grid column starts and ends, which is all the solver needs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Fn1 = Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync>;

/// Monotonicity class of a noncharacteristic planar curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    /// `γ1′ > 0`, `γ2′ < 0`.
    Decreasing,
    /// `β1′ > 0`, `β2′ > 0`.
    Increasing,
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Invalid("interpolant needs at least two matching samples".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("interpolation nodes must increase".into()));
        }
        let d: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for k in 1..n - 1 {
            if d[k - 1] * d[k] <= 0.0 {
                m[k] = 0.0;
            } else {
                let h0 = x[k] - x[k - 1];
                let h1 = x[k + 1] - x[k];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
            }
        }
        Ok(Pchip { x, y, m })
    }

    fn seg(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.clamp(1, n - 1) - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.seg(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.y[k] + h10 * h * self.m[k] + h01 * self.y[k + 1] + h11 * h * self.m[k + 1]
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let k = self.seg(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s * s - 2.0 * s;
        (d00 * self.y[k] + d01 * self.y[k + 1]) / h + d10 * self.m[k] + d11 * self.m[k + 1]
    }
}

/// Monotone planar curve `t ↦ (c1(t), c2(t))` on `[ta, tb]`.
#[derive(Clone)]
pub struct PlanarCurve {
    pub ta: f64,
    pub tb: f64,
    pub class: Monotonicity,
    pos: Fn1,
    der: Fn1,
}

impl std::fmt::Debug for PlanarCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PlanarCurve({:?}, [{}, {}], {:?} -> {:?})", self.class, self.ta, self.tb, self.at(self.ta), self.at(self.tb))
    }
}

/// Samples used when checking monotonicity.
pub const CURVE_CHECK_SAMPLES: usize = 257;

impl PlanarCurve {
    pub fn new(
        ta: f64,
        tb: f64,
        class: Monotonicity,
        pos: impl Fn(f64) -> [f64; 2] + Send + Sync + 'static,
        der: impl Fn(f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Result<Self> {
        let c = PlanarCurve { ta, tb, class, pos: Arc::new(pos), der: Arc::new(der) };
        c.validate()?;
        Ok(c)
    }

    /// Straight segment from `p` to `q`.
    pub fn segment(p: [f64; 2], q: [f64; 2]) -> Result<Self> {
        let d = [q[0] - p[0], q[1] - p[1]];
        let class = if d[1] < 0.0 { Monotonicity::Decreasing } else { Monotonicity::Increasing };
        Self::new(0.0, 1.0, class, move |t| [p[0] + t * d[0], p[1] + t * d[1]], move |_| d)
    }

    /// Monotone cubic interpolation through samples `(t_k, x1_k, x2_k)`.
    pub fn from_samples(t: Vec<f64>, x1: Vec<f64>, x2: Vec<f64>, class: Monotonicity) -> Result<Self> {
        let p1 = Arc::new(Pchip::new(t.clone(), x1)?);
        let p2 = Arc::new(Pchip::new(t.clone(), x2)?);
        let (q1, q2) = (p1.clone(), p2.clone());
        let (ta, tb) = (t[0], *t.last().unwrap());
        Self::new(ta, tb, class, move |s| [p1.eval(s), p2.eval(s)], move |s| [q1.deriv(s), q2.deriv(s)])
    }

    fn validate(&self) -> Result<()> {
        if !(self.tb > self.ta) {
            return Err(Error::InvalidCurve(format!("empty parameter interval [{}, {}]", self.ta, self.tb)));
        }
        let n = CURVE_CHECK_SAMPLES - 1;
        for k in 0..=n {
            let t = self.ta + (self.tb - self.ta) * k as f64 / n as f64;
            let d = self.tangent(t);
            let ok = match self.class {
                Monotonicity::Decreasing => d[0] > 1e-10 && d[1] < -1e-10,
                Monotonicity::Increasing => d[0] > 1e-10 && d[1] > 1e-10,
            };
            if !ok {
                return Err(Error::InvalidCurve(format!(
                    "{:?} monotonicity fails at t = {t}: derivative ({}, {})",
                    self.class, d[0], d[1]
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        (self.pos)(t)
    }

    pub fn tangent(&self, t: f64) -> [f64; 2] {
        (self.der)(t)
    }

    pub fn start(&self) -> [f64; 2] {
        self.at(self.ta)
    }

    pub fn end(&self) -> [f64; 2] {
        self.at(self.tb)
    }

    /// Parameter where coordinate `k` equals `v` (clamped to the interval).
    pub fn inverse(&self, k: usize, v: f64) -> f64 {
        let (mut lo, mut hi) = (self.ta, self.tb);
        let increasing = k == 0 || self.class == Monotonicity::Increasing;
        let f = |t: f64| self.at(t)[k] - v;
        let (flo, fhi) = (f(lo), f(hi));
        if increasing {
            if flo >= 0.0 {
                return lo;
            }
            if fhi <= 0.0 {
                return hi;
            }
        } else {
            if flo <= 0.0 {
                return lo;
            }
            if fhi >= 0.0 {
                return hi;
            }
        }
        // safeguarded Newton
        let mut t = 0.5 * (lo + hi);
        for _ in 0..100 {
            let ft = f(t);
            if ft == 0.0 {
                return t;
            }
            if (ft < 0.0) == increasing {
                lo = t;
            } else {
                hi = t;
            }
            let d = self.tangent(t)[k];
            let tn = t - ft / d;
            t = if tn > lo && tn < hi && d != 0.0 { tn } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 * (1.0 + self.tb.abs().max(self.ta.abs())) {
                break;
            }
        }
        t
    }

    /// Other coordinate at the point whose coordinate `k` equals `v`.
    pub fn other_at(&self, k: usize, v: f64) -> f64 {
        self.at(self.inverse(k, v))[1 - k]
    }

    /// The same curve restricted to `[a, b] ⊂ [ta, tb]`.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        let c = PlanarCurve { ta: a.max(self.ta), tb: b.min(self.tb), class: self.class, pos: self.pos.clone(), der: self.der.clone() };
        if !(c.tb > c.ta) {
            return Err(Error::InvalidCurve("empty restriction".into()));
        }
        Ok(c)
    }

    /// Parameters `τ_0 = ta < … < τ_m = tb` with max-norm chords `δ` (last ≤ δ).
    pub fn split_points(&self, delta: f64) -> Vec<f64> {
        let mut pts = vec![self.ta];
        let chord = |a: f64, b: f64| {
            let p = self.at(a);
            let q = self.at(b);
            (p[0] - q[0]).abs().max((p[1] - q[1]).abs())
        };
        let mut t = self.ta;
        while chord(t, self.tb) > delta * (1.0 + 1e-9) {
            let (mut lo, mut hi) = (t, self.tb);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if chord(t, mid) < delta {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 * (1.0 + hi.abs()) {
                    break;
                }
            }
            t = 0.5 * (lo + hi);
            pts.push(t);
        }
        pts.push(self.tb);
        pts
    }

    /// Samples `(t, x1, x2)` for serialization.
    pub fn samples(&self, n: usize) -> CurveSamples {
        let n = n.max(2);
        let mut s = CurveSamples { class: self.class, t: vec![], x1: vec![], x2: vec![] };
        for k in 0..n {
            let t = self.ta + (self.tb - self.ta) * k as f64 / (n - 1) as f64;
            let p = self.at(t);
            s.t.push(t);
            s.x1.push(p[0]);
            s.x2.push(p[1]);
        }
        s
    }
}

/// Serialized curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveSamples {
    pub class: Monotonicity,
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl CurveSamples {
    pub fn to_curve(&self) -> Result<PlanarCurve> {
        PlanarCurve::from_samples(self.t.clone(), self.x1.clone(), self.x2.clone(), self.class)
    }
}

/// Primitive piece kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PieceKind {
    E,
    R,
    Pminus,
    Pplus,
}

/// A primitive region with its bounding box `[xa, xb] × [ya, yb]`.
#[derive(Clone, Debug)]
pub struct Piece {
    pub kind: PieceKind,
    pub curve: Option<PlanarCurve>,
    pub xa: f64,
    pub xb: f64,
    pub ya: f64,
    pub yb: f64,
}

impl Piece {
    pub fn e(gamma: PlanarCurve) -> Result<Self> {
        if gamma.class != Monotonicity::Decreasing {
            return Err(Error::InvalidCurve("E needs a decreasing curve".into()));
        }
        let (s, e) = (gamma.start(), gamma.end());
        Ok(Piece { kind: PieceKind::E, xa: s[0], xb: e[0], ya: e[1], yb: s[1], curve: Some(gamma) })
    }

    pub fn rect(z: [f64; 2], a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Invalid(format!("rectangle sides must be nonnegative, got {a}, {b}")));
        }
        Ok(Piece { kind: PieceKind::R, curve: None, xa: z[0], xb: z[0] + a, ya: z[1], yb: z[1] + b })
    }

    pub fn pminus(beta: PlanarCurve) -> Result<Self> {
        Self::p(beta, PieceKind::Pminus)
    }

    pub fn pplus(beta: PlanarCurve) -> Result<Self> {
        Self::p(beta, PieceKind::Pplus)
    }

    fn p(beta: PlanarCurve, kind: PieceKind) -> Result<Self> {
        if beta.class != Monotonicity::Increasing {
            return Err(Error::InvalidCurve("P± needs an increasing curve".into()));
        }
        let (s, e) = (beta.start(), beta.end());
        Ok(Piece { kind, xa: s[0], xb: e[0], ya: s[1], yb: e[1], curve: Some(beta) })
    }

    pub fn is_empty(&self) -> bool {
        self.xb - self.xa <= 0.0 || self.yb - self.ya <= 0.0
    }

    pub fn extent(&self) -> f64 {
        (self.xb - self.xa).max(self.yb - self.ya)
    }

    fn c(&self) -> &PlanarCurve {
        self.curve.as_ref().expect("curved piece without curve")
    }

    /// Where the row at height `x2` enters the piece (inflow for `f1`).
    pub fn row_start(&self, x2: f64) -> f64 {
        match self.kind {
            PieceKind::E | PieceKind::Pminus => self.c().other_at(1, x2),
            PieceKind::R | PieceKind::Pplus => self.xa,
        }
    }

    pub fn row_end(&self, x2: f64) -> f64 {
        match self.kind {
            PieceKind::Pplus => self.c().other_at(1, x2),
            _ => self.xb,
        }
    }

    /// Where the column at `x1` enters the piece (inflow for `f2`).
    pub fn col_start(&self, x1: f64) -> f64 {
        match self.kind {
            PieceKind::E | PieceKind::Pplus => self.c().other_at(0, x1),
            PieceKind::R | PieceKind::Pminus => self.ya,
        }
    }

    pub fn col_end(&self, x1: f64) -> f64 {
        match self.kind {
            PieceKind::Pminus => self.c().other_at(0, x1),
            _ => self.yb,
        }
    }

    /// Open-set membership.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        if !(x[0] > self.xa && x[0] < self.xb && x[1] > self.ya && x[1] < self.yb) {
            return false;
        }
        x[0] > self.row_start(x[1]) && x[0] < self.row_end(x[1])
    }

    /// Closure membership with tolerance `tol`.
    pub fn contains_closed(&self, x: [f64; 2], tol: f64) -> bool {
        if x[0] < self.xa - tol || x[0] > self.xb + tol || x[1] < self.ya - tol || x[1] > self.yb + tol {
            return false;
        }
        let y = x[1].clamp(self.ya, self.yb);
        let xx = x[0].clamp(self.xa, self.xb);
        x[0] >= self.row_start(y) - tol
            && x[0] <= self.row_end(y) + tol
            && x[1] >= self.col_start(xx) - tol
            && x[1] <= self.col_end(xx) + tol
    }

    /// Area of the open piece.
    pub fn area(&self) -> f64 {
        let n = 2000;
        let h = (self.yb - self.ya) / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let y = self.ya + (k as f64 + 0.5) * h;
            s += (self.row_end(y) - self.row_start(y)).max(0.0) * h;
        }
        s
    }
}

/// Region kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    E,
    R,
    Pminus,
    Pplus,
    XiMinus,
    XiPlus,
    Phi,
}

/// A validated region: kind, defining curves and its primitive constituents in
/// solve order.
#[derive(Clone, Debug)]
pub struct PlanarRegion {
    pub kind: RegionKind,
    /// `[γ]`, `[β]`, `[β, γ]` or `[β, γ, β̂]` depending on the kind.
    pub curves: Vec<PlanarCurve>,
    /// Constituents in the order they are solved.
    pub parts: Vec<Piece>,
    /// `(z, a, b)` of the rectangle for `R` and the composite kinds.
    pub rect: Option<([f64; 2], f64, f64)>,
}

fn near(a: [f64; 2], b: [f64; 2]) -> bool {
    let s = 1e-9 * (1.0 + a[0].abs() + a[1].abs());
    (a[0] - b[0]).abs() <= s && (a[1] - b[1]).abs() <= s
}

fn need(curve: &PlanarCurve, class: Monotonicity, name: &str) -> Result<()> {
    if curve.class != class {
        return Err(Error::InvalidCurve(format!("{name} must be {:?}", class)));
    }
    Ok(())
}

impl PlanarRegion {
    pub fn e(gamma: PlanarCurve) -> Result<Self> {
        need(&gamma, Monotonicity::Decreasing, "γ")?;
        let p = Piece::e(gamma.clone())?;
        Ok(PlanarRegion { kind: RegionKind::E, curves: vec![gamma], parts: vec![p], rect: None })
    }

    pub fn r(z: [f64; 2], a: f64, b: f64) -> Result<Self> {
        let p = Piece::rect(z, a, b)?;
        Ok(PlanarRegion { kind: RegionKind::R, curves: vec![], parts: vec![p], rect: Some((z, a, b)) })
    }

    pub fn pminus(beta: PlanarCurve) -> Result<Self> {
        need(&beta, Monotonicity::Increasing, "β")?;
        let p = Piece::pminus(beta.clone())?;
        Ok(PlanarRegion { kind: RegionKind::Pminus, curves: vec![beta], parts: vec![p], rect: None })
    }

    pub fn pplus(beta: PlanarCurve) -> Result<Self> {
        need(&beta, Monotonicity::Increasing, "β")?;
        let p = Piece::pplus(beta.clone())?;
        Ok(PlanarRegion { kind: RegionKind::Pplus, curves: vec![beta], parts: vec![p], rect: None })
    }

    /// `P−(β) ∪ E(γ) ∪ R` with `γ(0) = β(0)`, `β1(t1) ≤ γ1(t0)`.
    /// Parts are stored in solve order `[E, P−, R]`.
    pub fn xi_minus(beta: PlanarCurve, gamma: PlanarCurve) -> Result<Self> {
        need(&beta, Monotonicity::Increasing, "β")?;
        need(&gamma, Monotonicity::Decreasing, "γ")?;
        if !near(beta.start(), gamma.start()) {
            return Err(Error::IncompatibleCurves("β(0) must equal γ(0)".into()));
        }
        let (be, ge) = (beta.end(), gamma.end());
        if be[0] > ge[0] + 1e-12 {
            return Err(Error::IncompatibleCurves(format!("β1(t1) = {} exceeds γ1(t0) = {}", be[0], ge[0])));
        }
        let z = [be[0], beta.start()[1]];
        let a = (ge[0] - be[0]).max(0.0);
        let b = be[1] - beta.start()[1];
        let mut parts = vec![Piece::e(gamma.clone())?, Piece::pminus(beta.clone())?];
        let r = Piece::rect(z, a, b)?;
        if !r.is_empty() {
            parts.push(r);
        }
        Ok(PlanarRegion { kind: RegionKind::XiMinus, curves: vec![beta, gamma], parts, rect: Some((z, a, b)) })
    }

    /// `E(γ) ∪ P+(β) ∪ R` with `γ(t0) = β(0)`, `β2(t1) ≤ γ2(0)`.
    /// Parts in solve order `[E, P+, R]`.
    pub fn xi_plus(beta: PlanarCurve, gamma: PlanarCurve) -> Result<Self> {
        need(&beta, Monotonicity::Increasing, "β")?;
        need(&gamma, Monotonicity::Decreasing, "γ")?;
        if !near(beta.start(), gamma.end()) {
            return Err(Error::IncompatibleCurves("β(0) must equal γ(t0)".into()));
        }
        let (be, gs) = (beta.end(), gamma.start());
        if be[1] > gs[1] + 1e-12 {
            return Err(Error::IncompatibleCurves(format!("β2(t1) = {} exceeds γ2(0) = {}", be[1], gs[1])));
        }
        let z = [gamma.end()[0], be[1]];
        let a = be[0] - gamma.end()[0];
        let b = (gs[1] - be[1]).max(0.0);
        let mut parts = vec![Piece::e(gamma.clone())?, Piece::pplus(beta.clone())?];
        let r = Piece::rect(z, a, b)?;
        if !r.is_empty() {
            parts.push(r);
        }
        Ok(PlanarRegion { kind: RegionKind::XiPlus, curves: vec![beta, gamma], parts, rect: Some((z, a, b)) })
    }

    /// `Ξ−(β, γ) ∪ P+(β̂) ∪ R` with `γ(t0) = β̂(0)`, `β̂2(t̂1) ≤ γ2(0)`.
    /// Parts in solve order `[E, P−, R1, P+, R2]`.
    pub fn phi(beta: PlanarCurve, gamma: PlanarCurve, beta_hat: PlanarCurve) -> Result<Self> {
        let xi = Self::xi_minus(beta.clone(), gamma.clone())?;
        need(&beta_hat, Monotonicity::Increasing, "β̂")?;
        if !near(beta_hat.start(), gamma.end()) {
            return Err(Error::IncompatibleCurves("β̂(0) must equal γ(t0)".into()));
        }
        let bh = beta_hat.end();
        if bh[1] > gamma.start()[1] + 1e-12 {
            return Err(Error::IncompatibleCurves(format!("β̂2(t̂1) = {} exceeds γ2(0) = {}", bh[1], gamma.start()[1])));
        }
        let z = [gamma.end()[0], bh[1]];
        let a = bh[0] - gamma.end()[0];
        let b = beta.end()[1] - bh[1];
        if b < -1e-12 {
            return Err(Error::IncompatibleCurves("β2(t1) must be at least β̂2(t̂1)".into()));
        }
        let mut parts = xi.parts;
        parts.push(Piece::pplus(beta_hat.clone())?);
        let r = Piece::rect(z, a, b.max(0.0))?;
        if !r.is_empty() {
            parts.push(r);
        }
        Ok(PlanarRegion { kind: RegionKind::Phi, curves: vec![beta, gamma, beta_hat], parts, rect: Some((z, a, b.max(0.0))) })
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.parts {
            lo[0] = lo[0].min(p.xa);
            lo[1] = lo[1].min(p.ya);
            hi[0] = hi[0].max(p.xb);
            hi[1] = hi[1].max(p.yb);
        }
        (lo, hi)
    }

    /// Membership in the open region; composite kinds also accept points on
    /// edges shared by two constituents.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        if self.parts.iter().any(|p| p.contains(x)) {
            return true;
        }
        if self.parts.len() < 2 {
            return false;
        }
        let tol = 1e-12 * (1.0 + x[0].abs() + x[1].abs());
        let hits = self.parts.iter().filter(|p| p.contains_closed(x, tol)).count();
        if hits < 2 {
            return false;
        }
        // On a shared edge: a small neighbourhood must lie inside the union.
        let h = 1e-7 * (1.0 + self.scale());
        [[h, h], [h, -h], [-h, h], [-h, -h], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]]
            .iter()
            .all(|d| self.parts.iter().any(|p| p.contains_closed([x[0] + d[0], x[1] + d[1]], 0.0)))
    }

    /// Closure membership.
    pub fn contains_closed(&self, x: [f64; 2], tol: f64) -> bool {
        self.parts.iter().any(|p| p.contains_closed(x, tol))
    }

    pub fn scale(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    }

    pub fn extent(&self) -> f64 {
        self.scale()
    }

    /// JSON-ready description.
    pub fn describe(&self, samples: usize) -> RegionSpec {
        RegionSpec {
            kind: self.kind,
            curves: self.curves.iter().map(|c| c.samples(samples)).collect(),
            rect: self.rect.map(|(z, a, b)| RectSpec { z, a, b }),
        }
    }
}

/// Serialized rectangle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RectSpec {
    pub z: [f64; 2],
    pub a: f64,
    pub b: f64,
}

/// Serialized region: kind tag plus curve samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    #[serde(default)]
    pub curves: Vec<CurveSamples>,
    #[serde(default)]
    pub rect: Option<RectSpec>,
}

impl RegionSpec {
    pub fn build(&self) -> Result<PlanarRegion> {
        let c: Vec<PlanarCurve> = self.curves.iter().map(|c| c.to_curve()).collect::<Result<_>>()?;
        let need_n = |n: usize| -> Result<()> {
            if c.len() != n {
                return Err(Error::Invalid(format!("{:?} needs {n} curves, got {}", self.kind, c.len())));
            }
            Ok(())
        };
        match self.kind {
            RegionKind::E => {
                need_n(1)?;
                PlanarRegion::e(c[0].clone())
            }
            RegionKind::R => {
                let r = self.rect.ok_or_else(|| Error::Invalid("R needs a rect".into()))?;
                PlanarRegion::r(r.z, r.a, r.b)
            }
            RegionKind::Pminus => {
                need_n(1)?;
                PlanarRegion::pminus(c[0].clone())
            }
            RegionKind::Pplus => {
                need_n(1)?;
                PlanarRegion::pplus(c[0].clone())
            }
            RegionKind::XiMinus => {
                need_n(2)?;
                PlanarRegion::xi_minus(c[0].clone(), c[1].clone())
            }
            RegionKind::XiPlus => {
                need_n(2)?;
                PlanarRegion::xi_plus(c[0].clone(), c[1].clone())
            }
            RegionKind::Phi => {
                need_n(3)?;
                PlanarRegion::phi(c[0].clone(), c[1].clone(), c[2].clone())
            }
        }
    }
}

/// Which edge of a subdivided piece lies on the parent's inflow boundary.
#[derive(Clone, Debug)]
pub struct SubPiece {
    pub piece: Piece,
    /// Staircase cell index `(column k, band i)`.
    pub cell: (usize, usize),
    /// Rows of this piece start on the parent's row-inflow boundary.
    pub rows_on_parent: bool,
    /// Columns start on the parent's column-inflow boundary.
    pub cols_on_parent: bool,
}

fn sorted_cells(mut cells: Vec<SubPiece>, key: impl Fn(&(usize, usize)) -> (usize, usize)) -> Vec<SubPiece> {
    cells.sort_by_key(|c| key(&c.cell));
    cells.into_iter().filter(|c| !c.piece.is_empty()).collect()
}

/// Splits a primitive piece into pieces of max-extent about `ε/2`, in an
/// order where every piece's inflow edges lie on the parent's inflow
/// boundary or on pieces earlier in the list.
pub fn subdivide(piece: &Piece, eps: f64) -> Result<Vec<SubPiece>> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("subdivision size must be positive".into()));
    }
    let delta = 0.5 * eps;
    match piece.kind {
        PieceKind::R => {
            let nx = (((piece.xb - piece.xa) / delta) - 1e-9).ceil().max(1.0) as usize;
            let ny = (((piece.yb - piece.ya) / delta) - 1e-9).ceil().max(1.0) as usize;
            let mut out = Vec::new();
            for i in 0..ny {
                for k in 0..nx {
                    let x0 = piece.xa + (piece.xb - piece.xa) * k as f64 / nx as f64;
                    let x1 = piece.xa + (piece.xb - piece.xa) * (k + 1) as f64 / nx as f64;
                    let y0 = piece.ya + (piece.yb - piece.ya) * i as f64 / ny as f64;
                    let y1 = piece.ya + (piece.yb - piece.ya) * (i + 1) as f64 / ny as f64;
                    out.push(SubPiece {
                        piece: Piece::rect([x0, y0], x1 - x0, y1 - y0)?,
                        cell: (k, i),
                        rows_on_parent: k == 0,
                        cols_on_parent: i == 0,
                    });
                }
            }
            Ok(out)
        }
        PieceKind::E => {
            let c = piece.c();
            let tau = c.split_points(delta);
            let m = tau.len() - 1;
            let xs: Vec<f64> = tau.iter().map(|t| c.at(*t)[0]).collect();
            let ys: Vec<f64> = tau.iter().map(|t| c.at(*t)[1]).collect();
            let mut cells = Vec::new();
            for i in 0..m {
                for k in i..m {
                    let piece = if k == i {
                        Piece::e(c.restrict(tau[k], tau[k + 1])?)?
                    } else {
                        Piece::rect([xs[k], ys[i + 1]], xs[k + 1] - xs[k], ys[i] - ys[i + 1])?
                    };
                    cells.push(SubPiece { piece, cell: (k, i), rows_on_parent: k == i, cols_on_parent: k == i });
                }
            }
            Ok(sorted_cells(cells, |&(k, i)| (k - i, k)))
        }
        PieceKind::Pminus => {
            let c = piece.c();
            let tau = c.split_points(delta);
            let m = tau.len() - 1;
            let xs: Vec<f64> = tau.iter().map(|t| c.at(*t)[0]).collect();
            let ys: Vec<f64> = tau.iter().map(|t| c.at(*t)[1]).collect();
            let mut cells = Vec::new();
            for i in 0..m {
                for k in i..m {
                    let piece = if k == i {
                        Piece::pminus(c.restrict(tau[k], tau[k + 1])?)?
                    } else {
                        Piece::rect([xs[k], ys[i]], xs[k + 1] - xs[k], ys[i + 1] - ys[i])?
                    };
                    cells.push(SubPiece { piece, cell: (k, i), rows_on_parent: k == i, cols_on_parent: i == 0 });
                }
            }
            // band i needs band i-1 below it
            let mut out = Vec::new();
            for c in sorted_cells(cells, |&(k, i)| (i, k)) {
                out.push(c);
            }
            // Bottom band's triangle has cols on the parent bottom; its
            // neighbours below do not exist, so nothing else to fix.
            Ok(out)
        }
        PieceKind::Pplus => {
            let c = piece.c();
            let tau = c.split_points(delta);
            let m = tau.len() - 1;
            let xs: Vec<f64> = tau.iter().map(|t| c.at(*t)[0]).collect();
            let ys: Vec<f64> = tau.iter().map(|t| c.at(*t)[1]).collect();
            let mut cells = Vec::new();
            for k in 0..m {
                for i in k..m {
                    let piece = if k == i {
                        Piece::pplus(c.restrict(tau[k], tau[k + 1])?)?
                    } else {
                        Piece::rect([xs[k], ys[i]], xs[k + 1] - xs[k], ys[i + 1] - ys[i])?
                    };
                    cells.push(SubPiece { piece, cell: (k, i), rows_on_parent: k == 0, cols_on_parent: k == i });
                }
            }
            Ok(sorted_cells(cells, |&(k, i)| (k, i)))
        }
    }
}

/// Subdivision of an `E` region into triangles along `γ` and filler
/// rectangles, in dependency order.
pub fn subdivide_e(region: &PlanarRegion, eps: f64) -> Result<Vec<SubPiece>> {
    if region.kind != RegionKind::E {
        return Err(Error::Invalid("subdivide_e needs an E region".into()));
    }
    subdivide(&region.parts[0], eps)
}

/// Uniform lattice `x0 + i dx`, `y0 + j dy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn covering(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Self {
        let nx = nx.max(2);
        let ny = ny.max(2);
        Lattice { x0: lo[0], y0: lo[1], dx: (hi[0] - lo[0]) / (nx - 1) as f64, dy: (hi[1] - lo[1]) / (ny - 1) as f64, nx, ny }
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node tolerance used for closure tests.
    pub fn tol(&self) -> f64 {
        1e-9 * self.dx.abs().max(self.dy.abs())
    }
}

/// A region sampled on a lattice: nodes in the region's closure are masked in.
#[derive(Clone, Debug)]
pub struct RegionGrid {
    pub region: PlanarRegion,
    pub lattice: Lattice,
    pub mask: Vec<bool>,
}

impl RegionGrid {
    /// `n × n` lattice spanning the bounding box.
    pub fn new(region: PlanarRegion, n: usize) -> Self {
        let (lo, hi) = region.bbox();
        Self::on_lattice(region, Lattice::covering(lo, hi, n, n))
    }

    pub fn on_lattice(region: PlanarRegion, lattice: Lattice) -> Self {
        let tol = lattice.tol();
        let mut mask = vec![false; lattice.len()];
        for j in 0..lattice.ny {
            for i in 0..lattice.nx {
                mask[lattice.idx(i, j)] = region.contains_closed([lattice.x(i), lattice.y(j)], tol);
            }
        }
        RegionGrid { region, lattice, mask }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Masked nodes lying on the region's bounding-box edge `which`
    /// (0 left, 1 right, 2 bottom, 3 top).
    pub fn edge_nodes(&self, which: usize) -> Vec<(usize, usize)> {
        let l = &self.lattice;
        let (lo, hi) = self.region.bbox();
        let tol = l.tol();
        let mut out = Vec::new();
        for j in 0..l.ny {
            for i in 0..l.nx {
                if !self.mask[l.idx(i, j)] {
                    continue;
                }
                let on = match which {
                    0 => (l.x(i) - lo[0]).abs() <= tol,
                    1 => (l.x(i) - hi[0]).abs() <= tol,
                    2 => (l.y(j) - lo[1]).abs() <= tol,
                    _ => (l.y(j) - hi[1]).abs() <= tol,
                };
                if on {
                    out.push((i, j));
                }
            }
        }
        out
    }
}
