//! Differential geometry of parametric surfaces: fundamental forms, curvature,
//! Christoffel symbols, the rotation `Q`, the boundary operators `T_i`,
//! asymptotic directions and the classification of corner connections.
//!
//! Conventions: the unit normal is `n = (r_u × r_v)/|r_u × r_v|` and the
//! second fundamental form is `Π(α, β) = ⟨∇_α n, β⟩`, so in coordinates
//! `Π_ij = -⟨r_ij, n⟩`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sign3, Real};
use crate::small::*;

/// Closed rectangle of admissible parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox<T> {
    pub lo: V2<T>,
    pub hi: V2<T>,
}

impl<T: Real> ParamBox<T> {
    pub fn new(lo: V2<T>, hi: V2<T>) -> Self {
        ParamBox { lo, hi }
    }

    pub fn contains(&self, u: V2<T>) -> bool {
        let tol = T::lit(1e-12) * (T::one() + self.diameter());
        (0..2).all(|k| u[k] >= self.lo[k] - tol && u[k] <= self.hi[k] + tol)
    }

    pub fn diameter(&self) -> T {
        let a = self.hi[0] - self.lo[0];
        let b = self.hi[1] - self.lo[1];
        (a * a + b * b).sqrt()
    }

    /// Distance from `u` to the nearest edge (negative outside).
    pub fn margin(&self, u: V2<T>) -> T {
        let mut m = T::infinity();
        for k in 0..2 {
            m = m.min(u[k] - self.lo[k]).min(self.hi[k] - u[k]);
        }
        m
    }
}

/// A parametric surface `u ↦ r(u)` over a parameter box.
///
/// Derivative methods default to central differences (first derivatives with
/// step `1e-5·diameter`, second derivatives with step `1e-4·diameter`);
/// built-in surfaces override them analytically.
pub trait Surface<T: Real>: Send + Sync {
    fn domain(&self) -> ParamBox<T>;

    fn point(&self, u: V2<T>) -> V3<T>;

    fn first_derivatives(&self, u: V2<T>) -> [V3<T>; 2] {
        let h = self.fd_step();
        let mut out = [[T::zero(); 3]; 2];
        for k in 0..2 {
            let mut up = u;
            let mut um = u;
            up[k] += h;
            um[k] -= h;
            out[k] = scale3(T::one() / (T::two() * h), sub3(self.point(up), self.point(um)));
        }
        out
    }

    /// `[r_11, r_12, r_22]`.
    fn second_derivatives(&self, u: V2<T>) -> [V3<T>; 3] {
        let h = self.fd_step() * T::lit(10.0);
        let p = |a: T, b: T| self.point([u[0] + a, u[1] + b]);
        let c = self.point(u);
        let hh = h * h;
        let r11 = scale3(T::one() / hh, add3(sub3(p(h, T::zero()), scale3(T::two(), c)), p(-h, T::zero())));
        let r22 = scale3(T::one() / hh, add3(sub3(p(T::zero(), h), scale3(T::two(), c)), p(T::zero(), -h)));
        let r12 = scale3(
            T::one() / (T::lit(4.0) * hh),
            sub3(add3(p(h, h), p(-h, -h)), add3(p(h, -h), p(-h, h))),
        );
        [r11, r12, r22]
    }

    /// True when derivatives are exact formulas rather than differences.
    fn is_analytic(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        "surface".to_string()
    }

    /// First-derivative difference step.
    fn fd_step(&self) -> T {
        T::lit(1e-5) * self.domain().diameter()
    }
}

/// Graph of `h(x) = x1³ − 3 x1 x2²`.
#[derive(Clone, Copy, Debug)]
pub struct MonkeySaddle<T> {
    pub domain: ParamBox<T>,
}

impl<T: Real> MonkeySaddle<T> {
    pub fn new(domain: ParamBox<T>) -> Self {
        MonkeySaddle { domain }
    }

    /// `σ(x) = 6/√(1 + 9|x|⁴)`.
    pub fn sigma(x: V2<T>) -> T {
        let r2 = x[0] * x[0] + x[1] * x[1];
        T::lit(6.0) / (T::one() + T::lit(9.0) * r2 * r2).sqrt()
    }
}

impl<T: Real> Default for MonkeySaddle<T> {
    fn default() -> Self {
        MonkeySaddle::new(ParamBox::new([T::lit(-3.0); 2], [T::lit(3.0); 2]))
    }
}

impl<T: Real> Surface<T> for MonkeySaddle<T> {
    fn domain(&self) -> ParamBox<T> {
        self.domain
    }

    fn point(&self, u: V2<T>) -> V3<T> {
        let (x, y) = (u[0], u[1]);
        [x, y, x * x * x - T::lit(3.0) * x * y * y]
    }

    fn first_derivatives(&self, u: V2<T>) -> [V3<T>; 2] {
        let (x, y) = (u[0], u[1]);
        let three = T::lit(3.0);
        [
            [T::one(), T::zero(), three * (x * x - y * y)],
            [T::zero(), T::one(), -T::lit(6.0) * x * y],
        ]
    }

    fn second_derivatives(&self, u: V2<T>) -> [V3<T>; 3] {
        let (x, y) = (u[0], u[1]);
        let six = T::lit(6.0);
        let z = T::zero();
        [[z, z, six * x], [z, z, -six * y], [z, z, -six * x]]
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "monkey_saddle".into()
    }
}

/// Graph of `z = u v`.
#[derive(Clone, Copy, Debug)]
pub struct HyperbolicParaboloid<T> {
    pub domain: ParamBox<T>,
}

impl<T: Real> HyperbolicParaboloid<T> {
    pub fn new(domain: ParamBox<T>) -> Self {
        HyperbolicParaboloid { domain }
    }
}

impl<T: Real> Default for HyperbolicParaboloid<T> {
    fn default() -> Self {
        HyperbolicParaboloid::new(ParamBox::new([T::lit(-2.0); 2], [T::lit(2.0); 2]))
    }
}

impl<T: Real> Surface<T> for HyperbolicParaboloid<T> {
    fn domain(&self) -> ParamBox<T> {
        self.domain
    }

    fn point(&self, u: V2<T>) -> V3<T> {
        [u[0], u[1], u[0] * u[1]]
    }

    fn first_derivatives(&self, u: V2<T>) -> [V3<T>; 2] {
        [[T::one(), T::zero(), u[1]], [T::zero(), T::one(), u[0]]]
    }

    fn second_derivatives(&self, _u: V2<T>) -> [V3<T>; 3] {
        let z = T::zero();
        [[z, z, z], [z, z, T::one()], [z, z, z]]
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "hyperbolic_paraboloid".into()
    }
}

/// The plane `z = 0`; flat, used for rejection paths and trivial checks.
#[derive(Clone, Copy, Debug)]
pub struct Plane<T> {
    pub domain: ParamBox<T>,
}

impl<T: Real> Surface<T> for Plane<T> {
    fn domain(&self) -> ParamBox<T> {
        self.domain
    }

    fn point(&self, u: V2<T>) -> V3<T> {
        [u[0], u[1], T::zero()]
    }

    fn first_derivatives(&self, _u: V2<T>) -> [V3<T>; 2] {
        [[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()]]
    }

    fn second_derivatives(&self, _u: V2<T>) -> [V3<T>; 3] {
        [[T::zero(); 3]; 3]
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "plane".into()
    }
}

/// Affine reparametrization `s ↦ base(origin + A s)` of another surface.
pub struct Reparametrized<T: Real> {
    pub base: Arc<dyn Surface<T>>,
    pub origin: V2<T>,
    pub a: M2<T>,
    pub domain: ParamBox<T>,
}

impl<T: Real> Reparametrized<T> {
    fn map(&self, s: V2<T>) -> V2<T> {
        let m = mv2(self.a, s);
        [self.origin[0] + m[0], self.origin[1] + m[1]]
    }
}

impl<T: Real> Surface<T> for Reparametrized<T> {
    fn domain(&self) -> ParamBox<T> {
        self.domain
    }

    fn point(&self, s: V2<T>) -> V3<T> {
        self.base.point(self.map(s))
    }

    fn first_derivatives(&self, s: V2<T>) -> [V3<T>; 2] {
        let d = self.base.first_derivatives(self.map(s));
        let a = self.a;
        [comb3(a[0][0], d[0], a[1][0], d[1]), comb3(a[0][1], d[0], a[1][1], d[1])]
    }

    fn second_derivatives(&self, s: V2<T>) -> [V3<T>; 3] {
        let d = self.base.second_derivatives(self.map(s));
        let a = self.a;
        // r_{s_i s_j} = Σ_{kl} a_{ki} a_{lj} r_{kl}
        let rkl = |k: usize, l: usize| -> V3<T> {
            match (k, l) {
                (0, 0) => d[0],
                (1, 1) => d[2],
                _ => d[1],
            }
        };
        let mut out = [[T::zero(); 3]; 3];
        for (slot, (i, j)) in [(0usize, 0usize), (0, 1), (1, 1)].into_iter().enumerate() {
            let mut acc = [T::zero(); 3];
            for k in 0..2 {
                for l in 0..2 {
                    acc = add3(acc, scale3(a[k][i] * a[l][j], rkl(k, l)));
                }
            }
            out[slot] = acc;
        }
        out
    }

    fn is_analytic(&self) -> bool {
        self.base.is_analytic()
    }

    fn name(&self) -> String {
        format!("{}(reparametrized)", self.base.name())
    }
}

/// All pointwise geometry at one parameter value.
#[derive(Clone, Copy, Debug)]
pub struct LocalGeometry<T> {
    pub u: V2<T>,
    pub r: V3<T>,
    pub ru: [V3<T>; 2],
    pub n: V3<T>,
    pub g: M2<T>,
    pub g_inv: M2<T>,
    pub det_g: T,
    pub pi: M2<T>,
    pub kappa: T,
    /// `gamma[k][i][j] = Γ^k_ij`.
    pub gamma: [[[T; 2]; 2]; 2],
}

impl<T: Real> LocalGeometry<T> {
    /// Ambient vector of coordinate components `x`.
    pub fn ambient(&self, x: V2<T>) -> V3<T> {
        comb3(x[0], self.ru[0], x[1], self.ru[1])
    }

    /// Coordinate components of the tangential part of an ambient vector.
    pub fn components(&self, v: V3<T>) -> V2<T> {
        mv2(self.g_inv, [dot3(v, self.ru[0]), dot3(v, self.ru[1])])
    }

    pub fn g_dot(&self, a: V2<T>, b: V2<T>) -> T {
        form2(self.g, a, b)
    }

    pub fn g_norm(&self, a: V2<T>) -> T {
        form2(self.g, a, a).max(T::zero()).sqrt()
    }

    pub fn pi_form(&self, a: V2<T>, b: V2<T>) -> T {
        form2(self.pi, a, b)
    }

    /// Shape operator `∇_X n` in coordinate components: `G⁻¹ Π X`.
    pub fn shape(&self, x: V2<T>) -> V2<T> {
        mv2(self.g_inv, mv2(self.pi, x))
    }
}

fn check_domain<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<()> {
    if !s.domain().contains(u) || !u[0].is_finite() || !u[1].is_finite() {
        let (a, b) = to_f64_2(u);
        return Err(Error::Domain(a, b));
    }
    Ok(())
}

/// Evaluates every local quantity at `u`.
pub fn local_geometry<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<LocalGeometry<T>> {
    check_domain(s, u)?;
    Ok(local_geometry_unchecked(s, u))
}

/// As [`local_geometry`] without the domain check (callers that already
/// validated the point, or that march slightly past the box on purpose).
pub fn local_geometry_unchecked<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> LocalGeometry<T> {
    let r = s.point(u);
    let ru = s.first_derivatives(u);
    let rr = s.second_derivatives(u);
    let c = cross(ru[0], ru[1]);
    let n = scale3(T::one() / norm3(c), c);
    let g = [
        [dot3(ru[0], ru[0]), dot3(ru[0], ru[1])],
        [dot3(ru[0], ru[1]), dot3(ru[1], ru[1])],
    ];
    let det_g = det2(g);
    let g_inv = inv2(g).unwrap_or([[T::nan(); 2]; 2]);
    let pi = [
        [-dot3(rr[0], n), -dot3(rr[1], n)],
        [-dot3(rr[1], n), -dot3(rr[2], n)],
    ];
    let kappa = det2(pi) / det_g;
    let mut gamma = [[[T::zero(); 2]; 2]; 2];
    let rij = |i: usize, j: usize| -> V3<T> {
        match (i, j) {
            (0, 0) => rr[0],
            (1, 1) => rr[2],
            _ => rr[1],
        }
    };
    for i in 0..2 {
        for j in 0..2 {
            let low = [dot3(rij(i, j), ru[0]), dot3(rij(i, j), ru[1])];
            let up = mv2(g_inv, low);
            gamma[0][i][j] = up[0];
            gamma[1][i][j] = up[1];
        }
    }
    LocalGeometry { u, r, ru, n, g, g_inv, det_g, pi, kappa, gamma }
}

/// First fundamental form `G(u)`.
pub fn metric<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<M2<T>> {
    Ok(local_geometry(s, u)?.g)
}

/// Unit normal `n(u)`.
pub fn normal<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<V3<T>> {
    Ok(local_geometry(s, u)?.n)
}

/// Second fundamental form `Π(u)` in the coordinate basis.
pub fn second_form<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<M2<T>> {
    Ok(local_geometry(s, u)?.pi)
}

/// Gaussian curvature `det Π / det G`.
pub fn gauss_curvature<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<T> {
    Ok(local_geometry(s, u)?.kappa)
}

/// Christoffel symbols `Γ^k_ij` (indexed `[k][i][j]`).
///
/// Surfaces without analytic derivatives need room for the second-difference
/// stencil around `u`.
pub fn christoffels<T: Real, S: Surface<T> + ?Sized>(s: &S, u: V2<T>) -> Result<[[[T; 2]; 2]; 2]> {
    check_domain(s, u)?;
    if !s.is_analytic() && s.domain().margin(u) < s.fd_step() * T::lit(10.0) {
        let (a, b) = to_f64_2(u);
        return Err(Error::Margin(a, b));
    }
    Ok(local_geometry_unchecked(s, u).gamma)
}

/// Tangent vector in coordinate components at a base point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector<T> {
    pub base: V2<T>,
    pub comp: V2<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn new(base: V2<T>, comp: V2<T>) -> Self {
        TangentVector { base, comp }
    }

    /// `Xᵀ G X`.
    pub fn norm_sq<S: Surface<T> + ?Sized>(&self, s: &S) -> Result<T> {
        let geo = local_geometry(s, self.base)?;
        Ok(geo.g_dot(self.comp, self.comp))
    }
}

/// Positively oriented orthonormal frame of a tangent plane, with its normal.
#[derive(Clone, Copy, Debug)]
pub struct Frame<T> {
    pub e1: V3<T>,
    pub e2: V3<T>,
    pub n: V3<T>,
}

impl<T: Real> Frame<T> {
    /// Validates orthonormality and `det(e1, e2, n) > 0`.
    pub fn new(e1: V3<T>, e2: V3<T>, n: V3<T>) -> Result<Self> {
        let tol = T::lit(1e-10);
        let ok = (dot3(e1, e1) - T::one()).abs() <= tol
            && (dot3(e2, e2) - T::one()).abs() <= tol
            && (dot3(n, n) - T::one()).abs() <= tol
            && dot3(e1, e2).abs() <= tol
            && dot3(e1, n).abs() <= tol
            && dot3(e2, n).abs() <= tol
            && det3(e1, e2, n) > T::zero();
        if !ok {
            return Err(Error::Invalid("frame is not orthonormal and positively oriented".into()));
        }
        Ok(Frame { e1, e2, n })
    }

    /// Frame with `e1` along the tangent direction `x` (ambient).
    pub fn along(geo: &LocalGeometry<T>, x: V3<T>) -> Result<Self> {
        let nx = norm3(x);
        if nx == T::zero() {
            return Err(Error::Invalid("zero direction".into()));
        }
        let e1 = scale3(T::one() / nx, x);
        let e2 = cross(geo.n, e1);
        Frame::new(e1, e2, geo.n)
    }
}

/// `Qα = ⟨α, e2⟩ e1 − ⟨α, e1⟩ e2` for an ambient tangent vector.
pub fn rotate_q<T: Real>(frame: &Frame<T>, v: V3<T>) -> V3<T> {
    comb3(dot3(v, frame.e2), frame.e1, -dot3(v, frame.e1), frame.e2)
}

/// `Q` applied to a tangent vector given in coordinates, using the frame built
/// from `r_u`.
pub fn rotate_q_tangent<T: Real, S: Surface<T> + ?Sized>(s: &S, x: TangentVector<T>) -> Result<TangentVector<T>> {
    let geo = local_geometry(s, x.base)?;
    let frame = Frame::along(&geo, geo.ru[0])?;
    let q = rotate_q(&frame, geo.ambient(x.comp));
    Ok(TangentVector::new(x.base, geo.components(q)))
}

/// Boundary operator `T_i X = ½[X + (−1)^i χ(μ, X) ϱ(X) Q ∇n X]`.
pub fn boundary_operator_t<T: Real, S: Surface<T> + ?Sized>(
    s: &S,
    i: u8,
    mu: TangentVector<T>,
    x: TangentVector<T>,
) -> Result<TangentVector<T>> {
    if i != 1 && i != 2 {
        return Err(Error::Invalid(format!("operator index {i} is not 1 or 2")));
    }
    let geo = local_geometry(s, x.base)?;
    let v = half_correction(&geo, mu, x)?;
    let sgn = if i == 1 { -T::one() } else { T::one() };
    let out = [
        T::half() * (x.comp[0] + sgn * v[0]),
        T::half() * (x.comp[1] + sgn * v[1]),
    ];
    Ok(TangentVector::new(x.base, out))
}

/// `(T1 X, T2 X)` with `T2 X` formed as `X − T1 X`.
pub fn boundary_operators<T: Real, S: Surface<T> + ?Sized>(
    s: &S,
    mu: TangentVector<T>,
    x: TangentVector<T>,
) -> Result<(TangentVector<T>, TangentVector<T>)> {
    let t1 = boundary_operator_t(s, 1, mu, x)?;
    let t2 = TangentVector::new(x.base, [x.comp[0] - t1.comp[0], x.comp[1] - t1.comp[1]]);
    Ok((t1, t2))
}

/// `χ(μ, X) ϱ(X) Q∇n X` in coordinate components.
pub fn chi_rho_q_shape<T: Real>(geo: &LocalGeometry<T>, mu: TangentVector<T>, x: TangentVector<T>) -> Result<V2<T>> {
    half_correction(geo, mu, x)
}

/// `ϱ(X) Q∇n X` in coordinate components (no orientation factor).
pub fn rho_q_shape<T: Real>(geo: &LocalGeometry<T>, x: V2<T>) -> Result<V2<T>> {
    if geo.kappa >= T::zero() {
        let (a, b) = to_f64_2(geo.u);
        return Err(Error::NotHyperbolic(a, b, geo.kappa.to_f64_()));
    }
    let pxx = geo.pi_form(x, x);
    let scale = max_abs2(geo.pi) * geo.g_dot(x, x);
    if pxx.abs() <= T::lit(1e-12) * scale || scale == T::zero() {
        return Err(Error::Characteristic);
    }
    let rho = sign3(pxx) / (-geo.kappa).sqrt();
    let xa = geo.ambient(x);
    let frame = Frame::along(geo, xa)?;
    let shape = geo.ambient(geo.shape(x));
    let q = rotate_q(&frame, shape);
    let c = geo.components(q);
    Ok([rho * c[0], rho * c[1]])
}

fn half_correction<T: Real>(geo: &LocalGeometry<T>, mu: TangentVector<T>, x: TangentVector<T>) -> Result<V2<T>> {
    let scale = T::one() + geo.u[0].abs() + geo.u[1].abs();
    if (mu.base[0] - x.base[0]).abs() > T::lit(1e-9) * scale || (mu.base[1] - x.base[1]).abs() > T::lit(1e-9) * scale {
        return Err(Error::Invalid("μ and X have different base points".into()));
    }
    let mu_norm = geo.g_norm(mu.comp);
    if (mu_norm - T::one()).abs() > T::lit(1e-8) {
        return Err(Error::Invalid(format!("|μ| = {} is not 1", mu_norm)));
    }
    let rq = rho_q_shape(geo, x.comp)?;
    let chi = sign3(det3(geo.ambient(mu.comp), geo.ambient(x.comp), geo.n));
    if chi == T::zero() {
        return Err(Error::Degenerate("μ is parallel to X".into()));
    }
    Ok([chi * rq[0], chi * rq[1]])
}

/// The two null directions of `Π` at a point, as unnormalized coordinate vectors.
fn null_directions<T: Real>(pi: M2<T>) -> Option<(V2<T>, V2<T>)> {
    let (a, b, c) = (pi[0][0], pi[0][1], pi[1][1]);
    let disc = b * b - a * c;
    if disc <= T::zero() {
        return None;
    }
    let sb = if b >= T::zero() { T::one() } else { -T::one() };
    let q = -(b + sb * disc.sqrt());
    // roots of a r² + 2 b r + c = 0 in r = X1/X2 are q/a and c/q
    Some(([q, a], [c, q]))
}

fn g_normalize<T: Real>(geo: &LocalGeometry<T>, mut d: V2<T>) -> V2<T> {
    let nrm = geo.g_norm(d);
    d = [d[0] / nrm, d[1] / nrm];
    let tiny = T::lit(1e-14);
    if d[0] < -tiny || (d[0].abs() <= tiny && d[1] < T::zero()) {
        d = [-d[0], -d[1]];
    }
    d
}

/// Both g-unit asymptotic directions at `geo`, labelled `(A+, A−)`.
pub fn asymptotic_directions_at<T: Real>(geo: &LocalGeometry<T>) -> Result<(V2<T>, V2<T>)> {
    if geo.kappa >= T::zero() {
        let (a, b) = to_f64_2(geo.u);
        return Err(Error::NotHyperbolic(a, b, geo.kappa.to_f64_()));
    }
    let (d1, d2) = null_directions(geo.pi).ok_or_else(|| {
        let (a, b) = to_f64_2(geo.u);
        Error::NotHyperbolic(a, b, geo.kappa.to_f64_())
    })?;
    let d1 = g_normalize(geo, d1);
    let d2 = g_normalize(geo, d2);
    let tie = T::lit(1e-12);
    let first = if (d1[0] - d2[0]).abs() > tie { d1[0] > d2[0] } else { d1[1] >= d2[1] };
    Ok(if first { (d1, d2) } else { (d2, d1) })
}

/// Asymptotic directions `(A+, A−)`: g-unit, `Π(A±, A±) = 0`.
///
/// `A+` has the larger first coordinate (each direction is signed so that its
/// first coordinate is nonnegative); ties go to the larger second coordinate.
pub fn asymptotic_directions<T: Real, S: Surface<T> + ?Sized>(
    s: &S,
    u: V2<T>,
) -> Result<(TangentVector<T>, TangentVector<T>)> {
    let geo = local_geometry(s, u)?;
    let (a, b) = asymptotic_directions_at(&geo)?;
    Ok((TangentVector::new(u, a), TangentVector::new(u, b)))
}

/// The asymptotic direction closest (in the g-angle) to `prev`, signed so that
/// `⟨d, prev⟩_g > 0`. Fails when both roots are nearly equally aligned.
pub fn asymptotic_direction_tracking<T: Real>(geo: &LocalGeometry<T>, prev: V2<T>) -> Result<V2<T>> {
    let (a, b) = asymptotic_directions_at(geo)?;
    let pn = geo.g_norm(prev);
    let ia = geo.g_dot(a, prev) / pn;
    let ib = geo.g_dot(b, prev) / pn;
    if (ia.abs() - ib.abs()).abs() < T::lit(1e-3) {
        return Err(Error::DiscontinuousField(format!(
            "asymptotic branches equally aligned at ({}, {})",
            geo.u[0], geo.u[1]
        )));
    }
    let (d, ip) = if ia.abs() > ib.abs() { (a, ia) } else { (b, ib) };
    Ok(if ip < T::zero() { [-d[0], -d[1]] } else { d })
}

type CurveFn<T> = Arc<dyn Fn(T) -> V2<T> + Send + Sync>;

/// Parametrized curve in the surface's parameter plane.
#[derive(Clone)]
pub struct CurveOnSurface<T> {
    pub a: T,
    pub b: T,
    pub pos: CurveFn<T>,
    pub der: CurveFn<T>,
}

impl<T: Real> CurveOnSurface<T> {
    pub fn new(
        a: T,
        b: T,
        pos: impl Fn(T) -> V2<T> + Send + Sync + 'static,
        der: impl Fn(T) -> V2<T> + Send + Sync + 'static,
    ) -> Self {
        CurveOnSurface { a, b, pos: Arc::new(pos), der: Arc::new(der) }
    }

    /// Straight segment `p + t d`, `t ∈ [a, b]`.
    pub fn line(p: V2<T>, d: V2<T>, a: T, b: T) -> Self {
        Self::new(a, b, move |t| [p[0] + t * d[0], p[1] + t * d[1]], move |_| d)
    }

    pub fn at(&self, t: T) -> V2<T> {
        (self.pos)(t)
    }

    pub fn tangent(&self, t: T) -> V2<T> {
        (self.der)(t)
    }

    /// Checks `der ≠ 0` at `n` equispaced samples.
    pub fn check_regular(&self, n: usize) -> Result<()> {
        for k in 0..=n.max(1) {
            let t = self.a + (self.b - self.a) * T::from_usize_(k) / T::from_usize_(n.max(1));
            let d = self.tangent(t);
            if d[0] == T::zero() && d[1] == T::zero() || !(d[0].is_finite() && d[1].is_finite()) {
                return Err(Error::InvalidCurve(format!("curve is singular at t = {}", t)));
            }
        }
        Ok(())
    }

    /// Reversed orientation on `[-b, -a]`.
    pub fn reversed(&self) -> Self {
        let p = self.pos.clone();
        let d = self.der.clone();
        Self::new(-self.b, -self.a, move |t| p(-t), move |t| {
            let v = d(-t);
            [-v[0], -v[1]]
        })
    }

    /// `t ↦ self(φ(t))` with `φ(t) = c0 + c1 t`, `c1 > 0`, on `[a, b]`.
    pub fn reparametrized_affine(&self, c0: T, c1: T, a: T, b: T) -> Self {
        let p = self.pos.clone();
        let d = self.der.clone();
        Self::new(a, b, move |t| p(c0 + c1 * t), move |t| {
            let v = d(c0 + c1 * t);
            [c1 * v[0], c1 * v[1]]
        })
    }
}

/// Corner connection types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connection {
    H1,
    H2,
    H3,
    H4,
}

/// Classifies the corner where `β` (ending at `β.b`) meets `γ` (starting at
/// `γ.a`) with `ζ` (starting at `ζ.a`) emanating from the same point.
///
/// Returns `None` when no condition holds.
pub fn classify_connection<T: Real, S: Surface<T> + ?Sized>(
    s: &S,
    beta: &CurveOnSurface<T>,
    gamma: &CurveOnSurface<T>,
    zeta: &CurveOnSurface<T>,
) -> Result<Option<Connection>> {
    let p = beta.at(beta.b);
    let scale = T::one() + p[0].abs() + p[1].abs();
    for (name, q) in [("γ", gamma.at(gamma.a)), ("ζ", zeta.at(zeta.a))] {
        if (q[0] - p[0]).abs() > T::lit(1e-8) * scale || (q[1] - p[1]).abs() > T::lit(1e-8) * scale {
            return Err(Error::Invalid(format!("{name} does not pass through the corner")));
        }
    }
    let geo = local_geometry(s, p)?;
    let unit = |v: V2<T>| -> Result<V2<T>> {
        let n = geo.g_norm(v);
        if n == T::zero() {
            return Err(Error::InvalidCurve("zero tangent at the corner".into()));
        }
        Ok([v[0] / n, v[1] / n])
    };
    let b = unit(beta.tangent(beta.b))?;
    let g = unit(gamma.tangent(gamma.a))?;
    let z = unit(zeta.tangent(zeta.a))?;
    let pi = |x: V2<T>, y: V2<T>| geo.pi_form(x, y);
    let pscale = max_abs2(geo.pi);
    let zero_tol = T::lit(1e-10) * pscale * pscale;
    let sg = |v: T| -> i8 {
        if v.abs() < zero_tol {
            0
        } else if v > T::zero() {
            1
        } else {
            -1
        }
    };
    let gg = pi(g, g);
    let bb_gg = sg(pi(b, b) * gg);
    let bg_gg = sg(pi(b, g) * gg);
    let zg_gg = sg(pi(z, g) * gg);
    let zz_gg = sg(pi(z, z) * gg);
    let zb_zz = sg(pi(z, b) * pi(z, z));
    let degenerate = |what: &str| Err(Error::Degenerate(format!("{what} vanishes at the corner")));
    match bb_gg {
        0 => degenerate("Π(β′,β′)Π(γ′,γ′)"),
        1 => {
            if bg_gg >= 0 {
                Ok(Some(Connection::H1))
            } else {
                match zg_gg {
                    0 => degenerate("Π(ζ′,γ′)Π(γ′,γ′)"),
                    1 => Ok(Some(Connection::H2)),
                    _ => Ok(None),
                }
            }
        }
        _ => match zz_gg {
            0 => degenerate("Π(ζ′,ζ′)Π(γ′,γ′)"),
            1 => Ok(if zg_gg >= 0 { Some(Connection::H3) } else { None }),
            _ => match zb_zz {
                0 => degenerate("Π(ζ′,β′)Π(ζ′,ζ′)"),
                -1 => Ok(Some(Connection::H4)),
                _ => Ok(None),
            },
        },
    }
}

/// The closed region on the monkey saddle bounded by the three-piece curves
/// `t ↦ β(t, s)`, `t ∈ [0, 4)`, `s ∈ [0, b]`.
#[derive(Clone, Copy, Debug)]
pub struct MonkeyRegion<T> {
    pub b: T,
}

impl<T: Real> MonkeyRegion<T> {
    pub fn new(b: T) -> Result<Self> {
        if b <= T::one() {
            return Err(Error::Invalid("region parameter b must exceed 1".into()));
        }
        Ok(MonkeyRegion { b })
    }

    fn piece(t: T) -> usize {
        if t <= T::two() {
            0
        } else if t <= T::lit(3.0) {
            1
        } else {
            2
        }
    }

    /// `β(t, s)` on the piece selected by `piece` (formulas extend past the
    /// piece's own interval).
    pub fn beta_on(&self, piece: usize, t: T, s: T) -> V2<T> {
        let c = T::two() * self.b - s;
        let r3 = T::lit(3.0).sqrt();
        match piece {
            0 => [c * (T::one() - t), c * t / r3],
            1 => [-c, T::two() * c * (T::lit(5.0) - T::two() * t) / r3],
            _ => [c * (T::two() * t - T::lit(7.0)), -T::two() * c * (T::lit(4.0) - t) / r3],
        }
    }

    /// `(∂_t β, ∂_s β)` on a given piece.
    pub fn beta_derivs_on(&self, piece: usize, t: T, s: T) -> (V2<T>, V2<T>) {
        let c = T::two() * self.b - s;
        let r3 = T::lit(3.0).sqrt();
        match piece {
            0 => ([-c, c / r3], [-(T::one() - t), -t / r3]),
            1 => (
                [T::zero(), -T::lit(4.0) * c / r3],
                [T::one(), -T::two() * (T::lit(5.0) - T::two() * t) / r3],
            ),
            _ => (
                [T::two() * c, T::two() * c / r3],
                [-(T::two() * t - T::lit(7.0)), T::two() * (T::lit(4.0) - t) / r3],
            ),
        }
    }

    pub fn beta(&self, t: T, s: T) -> V2<T> {
        self.beta_on(Self::piece(t), t, s)
    }

    /// Connection parameters `t = 0, 2, 3` with incoming and outgoing piece.
    pub fn connection_points() -> [(T, usize, usize); 3] {
        [(T::zero(), 2, 0), (T::two(), 0, 1), (T::lit(3.0), 1, 2)]
    }

    /// Curves `(β, γ, ζ)` at a connection point: `β` is the incoming boundary
    /// piece on `[0, ε]`, `γ` the outgoing piece, `ζ = α(t_i, s + ·)`.
    pub fn corner_curves(&self, which: usize, s: T, eps: T) -> (CurveOnSurface<T>, CurveOnSurface<T>, CurveOnSurface<T>) {
        let (ti, pin, pout) = Self::connection_points()[which];
        let t_in = if which == 0 { T::lit(4.0) } else { ti };
        let me = *self;
        let beta = CurveOnSurface::new(
            T::zero(),
            eps,
            move |t| me.beta_on(pin, t_in + t - eps, s),
            move |t| me.beta_derivs_on(pin, t_in + t - eps, s).0,
        );
        let gamma = CurveOnSurface::new(
            T::zero(),
            eps,
            move |t| me.beta_on(pout, ti + t, s),
            move |t| me.beta_derivs_on(pout, ti + t, s).0,
        );
        let zeta = CurveOnSurface::new(
            T::zero(),
            eps,
            move |t| me.beta_on(pout, ti, s + t),
            move |t| me.beta_derivs_on(pout, ti, s + t).1,
        );
        (beta, gamma, zeta)
    }
}
