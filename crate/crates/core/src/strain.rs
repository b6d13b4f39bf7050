//! The strain equation `Υ(y) = U` on asymptotic charts.
//!
//! With `W_i = ⟨W, ∂xi⟩` and `U_ij = U(∂xi, ∂xj)`, the diagonal equations
//! `Υ_ii = U_ii` form a characteristic system for `(W1, W2)` because
//! `Π(∂xi, ∂xi) = 0`; the off-diagonal one then determines `w`. This module
//! evaluates strains, performs that reduction, converts boundary data,
//! solves on chart regions, pastes charts along an anchor curve and handles
//! corners of type H1.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{build_chart, transversal_normal_form, AsymptoticChart, ChartExtent};
use crate::characteristic::{solve_region, BoundaryData, CharSystem, Field, Func1, GridPairField, SolveOptions};
use crate::error::{Error, Result};
use crate::fd::{d2_masked, interp_cubic};
use crate::regions::{Lattice, Monotonicity, PlanarCurve, PlanarRegion, RegionGrid};
use crate::small::*;
use crate::surface::{boundary_operator_t, classify_connection, local_geometry, Connection, CurveOnSurface, Surface, TangentVector};

type V2f = [f64; 2];
type V3f = [f64; 3];
type M2f = [[f64; 2]; 2];

/// `y = W + w n` on a chart: covariant `W_i = ⟨W, ∂xi⟩` and normal `w`,
/// valid where `mask` is set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Displacement {
    pub lattice: Lattice,
    pub mask: Vec<bool>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w: Vec<f64>,
}

/// Strain components `(U11, U12, U22)` in the chart basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrainField {
    pub lattice: Lattice,
    pub mask: Vec<bool>,
    pub u11: Vec<f64>,
    pub u12: Vec<f64>,
    pub u22: Vec<f64>,
}

fn same_lattice(a: &Lattice, b: &Lattice) -> Result<()> {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs() + y.abs());
    if a.nx != b.nx || a.ny != b.ny || !close(a.x0, b.x0) || !close(a.y0, b.y0) || !close(a.dx, b.dx) || !close(a.dy, b.dy) {
        return Err(Error::Invalid("field lattice differs from the chart lattice".into()));
    }
    Ok(())
}

/// Surface area weight `sqrt(det g) dx dy` at node `k`.
fn area(chart: &AsymptoticChart, k: usize) -> f64 {
    det2(chart.g[k]).abs().sqrt() * chart.lattice.dx * chart.lattice.dy
}

impl Displacement {
    pub fn zeros(chart: &AsymptoticChart) -> Self {
        let n = chart.lattice.len();
        Displacement { lattice: chart.lattice, mask: vec![true; n], w1: vec![0.0; n], w2: vec![0.0; n], w: vec![0.0; n] }
    }

    /// Samples `x ↦ (W1, W2, w)` on the chart nodes (all nodes when `mask`
    /// is `None`).
    pub fn from_fn(chart: &AsymptoticChart, mask: Option<Vec<bool>>, f: impl Fn(V2f) -> [f64; 3]) -> Self {
        let l = chart.lattice;
        let mask = mask.unwrap_or_else(|| vec![true; l.len()]);
        let mut d = Displacement { lattice: l, mask, w1: vec![f64::NAN; l.len()], w2: vec![f64::NAN; l.len()], w: vec![f64::NAN; l.len()] };
        for k in 0..l.len() {
            if d.mask[k] {
                let v = f([l.x(k % l.nx), l.y(k / l.nx)]);
                d.w1[k] = v[0];
                d.w2[k] = v[1];
                d.w[k] = v[2];
            }
        }
        d
    }

    /// Decomposes an ambient field `y(u)` given on surface parameters.
    pub fn from_ambient(chart: &AsymptoticChart, y: impl Fn(V2f) -> V3f) -> Self {
        let l = chart.lattice;
        let mut d = Self::zeros(chart);
        for k in 0..l.len() {
            let f = chart.frame(k);
            let v = y(chart.u[k]);
            d.w1[k] = dot3(v, f[0]);
            d.w2[k] = dot3(v, f[1]);
            d.w[k] = dot3(v, chart.normal[k]);
        }
        d
    }

    /// Tangential part `W` as an ambient vector at node `k`.
    pub fn tangential(&self, chart: &AsymptoticChart, k: usize) -> V3f {
        let gi = inv2(chart.g[k]).unwrap_or([[f64::NAN; 2]; 2]);
        let c = mv2(gi, [self.w1[k], self.w2[k]]);
        let f = chart.frame(k);
        comb3(c[0], f[0], c[1], f[1])
    }

    /// `(‖W‖_{L²}, ‖w‖_{L²})` over masked nodes.
    pub fn l2(&self, chart: &AsymptoticChart) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..self.lattice.len() {
            if self.mask[k] && self.w1[k].is_finite() {
                let gi = inv2(chart.g[k]).unwrap();
                let wv = [self.w1[k], self.w2[k]];
                a += form2(gi, wv, wv) * area(chart, k);
                b += self.w[k] * self.w[k] * area(chart, k);
            }
        }
        (a.sqrt(), b.sqrt())
    }

    /// Largest `(|ΔW1|, |ΔW2|, |Δw|)` over nodes masked in both.
    pub fn max_diff(&self, o: &Displacement) -> [f64; 3] {
        let mut m = [0.0f64; 3];
        for k in 0..self.lattice.len().min(o.lattice.len()) {
            if self.mask[k] && o.mask[k] && self.w1[k].is_finite() && o.w1[k].is_finite() {
                m[0] = m[0].max((self.w1[k] - o.w1[k]).abs());
                m[1] = m[1].max((self.w2[k] - o.w2[k]).abs());
                m[2] = m[2].max((self.w[k] - o.w[k]).abs());
            }
        }
        m
    }
}

impl StrainField {
    pub fn zeros(lattice: Lattice) -> Self {
        let n = lattice.len();
        StrainField { lattice, mask: vec![true; n], u11: vec![0.0; n], u12: vec![0.0; n], u22: vec![0.0; n] }
    }

    pub fn from_fn(chart: &AsymptoticChart, f: impl Fn(V2f) -> [f64; 3]) -> Self {
        let l = chart.lattice;
        let mut s = Self::zeros(l);
        for k in 0..l.len() {
            let v = f([l.x(k % l.nx), l.y(k / l.nx)]);
            s.u11[k] = v[0];
            s.u12[k] = v[1];
            s.u22[k] = v[2];
        }
        s
    }

    /// Pulls back a surface tensor `U(u)` given in parameter components.
    pub fn from_surface_tensor(chart: &AsymptoticChart, u: impl Fn(V2f) -> M2f) -> Self {
        let pb = chart.pullback_tensor(u);
        let mut s = Self::zeros(chart.lattice);
        for (k, t) in pb.iter().enumerate() {
            s.u11[k] = t[0];
            s.u12[k] = t[1];
            s.u22[k] = t[2];
        }
        s
    }

    /// Exact strain of a field given with its first derivatives:
    /// `f(x) = ([W1, W2, w], [[∂1W1, ∂2W1], [∂1W2, ∂2W2]])`.
    pub fn manufactured(chart: &AsymptoticChart, f: impl Fn(V2f) -> ([f64; 3], M2f)) -> Self {
        let l = chart.lattice;
        let mut s = Self::zeros(l);
        for k in 0..l.len() {
            let (v, dw) = f([l.x(k % l.nx), l.y(k / l.nx)]);
            let gm = &chart.gamma[k];
            let wv = [v[0], v[1]];
            let lower = |i: usize, j: usize| gm[0][i][j] * wv[0] + gm[1][i][j] * wv[1];
            s.u11[k] = dw[0][0] - lower(0, 0) + v[2] * chart.pi_diag[k][0];
            s.u22[k] = dw[1][1] - lower(1, 1) + v[2] * chart.pi_diag[k][1];
            s.u12[k] = 0.5 * (dw[0][1] + dw[1][0]) - lower(0, 1) + v[2] * chart.omega[k];
        }
        s
    }

    /// Metric L² norm `(∫ g^{ia} g^{jb} U_ij U_ab dA)^{1/2}` over masked nodes.
    pub fn l2(&self, chart: &AsymptoticChart) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.lattice.len() {
            if self.mask[k] && self.u11[k].is_finite() {
                acc += tensor_norm_sq(chart.g[k], [self.u11[k], self.u12[k], self.u22[k]]) * area(chart, k);
            }
        }
        acc.sqrt()
    }

    /// L² norm of the difference over nodes masked in both (and in `within`).
    pub fn l2_diff(&self, o: &StrainField, chart: &AsymptoticChart, within: Option<&[bool]>) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.lattice.len() {
            let ok = self.mask[k] && o.mask[k] && self.u11[k].is_finite() && o.u11[k].is_finite() && within.map_or(true, |m| m[k]);
            if ok {
                let d = [self.u11[k] - o.u11[k], self.u12[k] - o.u12[k], self.u22[k] - o.u22[k]];
                acc += tensor_norm_sq(chart.g[k], d) * area(chart, k);
            }
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.lattice.len() {
            if self.mask[k] && self.u11[k].is_finite() {
                m = m.max(self.u11[k].abs()).max(self.u12[k].abs()).max(self.u22[k].abs());
            }
        }
        m
    }
}

fn tensor_norm_sq(g: M2f, u: [f64; 3]) -> f64 {
    let gi = inv2(g).unwrap_or([[f64::NAN; 2]; 2]);
    let m = [[u[0], u[1]], [u[1], u[2]]];
    let a = mm2(gi, mm2(m, gi));
    // g^{ia} U_ab g^{bj} U_ji
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            s += a[i][j] * m[j][i];
        }
    }
    s
}

/// `Υ(y)_ij = ½(∂iWj + ∂jWi) − Γ^k_ij W_k + w Π_ij` on masked nodes that
/// have a difference stencil (central inside, one-sided at the boundary).
pub fn strain_of(chart: &AsymptoticChart, disp: &Displacement) -> Result<StrainField> {
    same_lattice(&chart.lattice, &disp.lattice)?;
    let l = &chart.lattice;
    let mut s = StrainField::zeros(*l);
    let mut count = 0;
    for j in 0..l.ny {
        for i in 0..l.nx {
            let k = l.idx(i, j);
            let ds = (
                d2_masked(l, &disp.w1, &disp.mask, i, j, 0),
                d2_masked(l, &disp.w1, &disp.mask, i, j, 1),
                d2_masked(l, &disp.w2, &disp.mask, i, j, 0),
                d2_masked(l, &disp.w2, &disp.mask, i, j, 1),
            );
            let (Some(d11), Some(d12), Some(d21), Some(d22)) = ds else {
                s.mask[k] = false;
                s.u11[k] = f64::NAN;
                s.u12[k] = f64::NAN;
                s.u22[k] = f64::NAN;
                continue;
            };
            let gm = &chart.gamma[k];
            let wv = [disp.w1[k], disp.w2[k]];
            let lower = |a: usize, b: usize| gm[0][a][b] * wv[0] + gm[1][a][b] * wv[1];
            s.u11[k] = d11 - lower(0, 0) + disp.w[k] * chart.pi_diag[k][0];
            s.u22[k] = d22 - lower(1, 1) + disp.w[k] * chart.pi_diag[k][1];
            s.u12[k] = 0.5 * (d12 + d21) - lower(0, 1) + disp.w[k] * chart.omega[k];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Invalid("no node has a complete difference stencil".into()));
    }
    Ok(s)
}

/// Replaces non-finite or unmasked values by neighbour averages so cubic
/// interpolation stays defined near region edges.
fn filled(l: &Lattice, v: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().zip(mask).map(|(x, m)| if *m && x.is_finite() { *x } else { f64::NAN }).collect();
    if out.iter().all(|x| x.is_nan()) {
        return vec![0.0; out.len()];
    }
    loop {
        let mut next = out.clone();
        let mut missing = 0;
        for j in 0..l.ny {
            for i in 0..l.nx {
                let k = l.idx(i, j);
                if out[k].is_finite() {
                    continue;
                }
                let mut s = 0.0;
                let mut c = 0;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a >= 0 && b >= 0 && (a as usize) < l.nx && (b as usize) < l.ny {
                        let q = out[l.idx(a as usize, b as usize)];
                        if q.is_finite() {
                            s += q;
                            c += 1;
                        }
                    }
                }
                if c > 0 {
                    next[k] = s / c as f64;
                } else {
                    missing += 1;
                }
            }
        }
        out = next;
        if missing == 0 {
            return out;
        }
    }
}

fn lattice_field(l: Lattice, v: Vec<f64>) -> Field {
    let v = Arc::new(v);
    Arc::new(move |x: V2f| {
        let xc = [x[0].clamp(l.x0, l.x(l.nx - 1)), x[1].clamp(l.y0, l.y(l.ny - 1))];
        interp_cubic(&l, &v, xc).unwrap_or(f64::NAN)
    })
}

/// Closure recovering `w` from a solved `(W1, W2)` by
/// `w = [U12 − ½(∂2W1 + ∂1W2) + Γ¹12 W1 + Γ²12 W2] / ω`.
#[derive(Clone)]
pub struct NormalRecovery {
    pub chart: Arc<AsymptoticChart>,
    pub u12: Vec<f64>,
}

impl NormalRecovery {
    pub fn recover(&self, field: &GridPairField) -> Result<Displacement> {
        let c = &self.chart;
        same_lattice(&c.lattice, field.lattice())?;
        let l = c.lattice;
        let mask: Vec<bool> = (0..l.len()).map(|k| field.grid.mask[k] && field.f1[k].is_finite()).collect();
        self.recover_arrays(mask, field.f1.clone(), field.f2.clone())
    }

    /// As [`Self::recover`] from raw lattice arrays.
    pub fn recover_arrays(&self, mask: Vec<bool>, w1: Vec<f64>, w2: Vec<f64>) -> Result<Displacement> {
        let c = &self.chart;
        let l = c.lattice;
        let mut d = Displacement { lattice: l, mask, w1, w2, w: vec![f64::NAN; l.len()] };
        let mut keep = d.mask.clone();
        for j in 0..l.ny {
            for i in 0..l.nx {
                let k = l.idx(i, j);
                if !d.mask[k] {
                    continue;
                }
                let a = d2_masked(&l, &d.w1, &d.mask, i, j, 1);
                let b = d2_masked(&l, &d.w2, &d.mask, i, j, 0);
                let (Some(a), Some(b)) = (a, b) else {
                    keep[k] = false;
                    continue;
                };
                let gm = &c.gamma[k];
                let num = self.u12[k] - 0.5 * (a + b) + gm[0][0][1] * d.w1[k] + gm[1][0][1] * d.w2[k];
                d.w[k] = num / c.omega[k];
            }
        }
        d.mask = keep;
        Ok(d)
    }
}

/// Characteristic system `W1,x1 = Γ¹11 W1 + Γ²11 W2 + U11`,
/// `W2,x2 = Γ¹22 W1 + Γ²22 W2 + U22`, with the normal-component recovery.
pub fn reduce_to_char_system(chart: &Arc<AsymptoticChart>, u: &StrainField) -> Result<(CharSystem, NormalRecovery)> {
    same_lattice(&chart.lattice, &u.lattice)?;
    if let Some(k) = chart.omega.iter().position(|w| w.abs() < 1e-8) {
        let l = &chart.lattice;
        return Err(Error::DegenerateChart(format!("|ω| < 1e-8 at ({}, {})", l.x(k % l.nx), l.y(k / l.nx))));
    }
    let l = chart.lattice;
    let gam = |a: usize, b: usize, c: usize| -> Field { lattice_field(l, chart.gamma.iter().map(|g| g[a][b][c]).collect()) };
    let sys = CharSystem {
        a11: gam(0, 0, 0),
        a12: gam(1, 0, 0),
        a21: gam(0, 1, 1),
        a22: gam(1, 1, 1),
        p1: lattice_field(l, filled(&l, &u.u11, &u.mask)),
        p2: lattice_field(l, filled(&l, &u.u22, &u.mask)),
    };
    let rec = NormalRecovery { chart: chart.clone(), u12: filled(&l, &u.u12, &u.mask) };
    Ok((sys, rec))
}

/// `(φ1 g11 + φ2 g12, φ1 g12 + φ2 g22)`: covariant components of a vector
/// with chart components `φ`.
pub fn anchor_covariant(g: M2f, phi: V2f) -> V2f {
    [phi[0] * g[0][0] + phi[1] * g[0][1], phi[0] * g[0][1] + phi[1] * g[1][1]]
}

type VecFn = Arc<dyn Fn(f64) -> V2f + Send + Sync>;

fn check_slope(curve: &PlanarCurve, comp: usize, name: &str) -> Result<()> {
    let n = 257;
    for q in 0..n {
        let t = curve.ta + (curve.tb - curve.ta) * q as f64 / (n - 1) as f64;
        let d = curve.tangent(t);
        // relative to the tangent length: dividing by it amplifies data errors
        if !(d[comp].abs() > 1e-8 * (d[0].abs() + d[1].abs())) {
            return Err(Error::Degenerate(format!("{name} vanishes on the transversal curve at t = {t}")));
        }
    }
    Ok(())
}

fn anchor_data(chart: &Arc<AsymptoticChart>, gamma: &PlanarCurve, phi: VecFn) -> (Func1, Func1) {
    let (c1, c2) = (chart.clone(), chart.clone());
    let (g1, g2) = (gamma.clone(), gamma.clone());
    let (p1, p2) = (phi.clone(), phi);
    let q = move |c: &AsymptoticChart, g: &PlanarCurve, p: &VecFn, t: f64, i: usize| -> f64 {
        match c.metric_at(g.at(t)) {
            Some(m) => anchor_covariant(m, p(t))[i],
            None => f64::NAN,
        }
    };
    let qa = q;
    (Func1::new(move |t| qa(&c1, &g1, &p1, t, 0)), Func1::new(move |t| q(&c2, &g2, &p2, t, 1)))
}

/// Data for a `Ξ−(β, γ)` solve: `W1 ∘ β = q1/β1′` on the transversal curve
/// and `(W1, W2) ∘ γ` from `φ` (chart components, parametrized like `γ`).
pub fn convert_boundary_data(
    chart: &Arc<AsymptoticChart>,
    beta: &PlanarCurve,
    q1: Func1,
    gamma: &PlanarCurve,
    phi: impl Fn(f64) -> V2f + Send + Sync + 'static,
) -> Result<BoundaryData> {
    check_slope(beta, 0, "β′01")?;
    let b = beta.clone();
    let q1_curve = Func1::new(move |s| q1.at(s) / b.tangent(s)[0]);
    let (qhat1, qhat2) = anchor_data(chart, gamma, Arc::new(phi));
    Ok(BoundaryData::XiMinus { q1_curve, qhat1, qhat2 })
}

/// As [`convert_boundary_data`] for a `Φ(β, γ, β̂)` solve, with
/// `W2 ∘ β̂ = q2/β̂2′` on the second transversal curve.
pub fn convert_boundary_data_phi(
    chart: &Arc<AsymptoticChart>,
    beta: &PlanarCurve,
    q1: Func1,
    gamma: &PlanarCurve,
    phi: impl Fn(f64) -> V2f + Send + Sync + 'static,
    beta_hat: &PlanarCurve,
    q2: Func1,
) -> Result<BoundaryData> {
    check_slope(beta, 0, "β′01")?;
    check_slope(beta_hat, 1, "β̂′2")?;
    let b = beta.clone();
    let bh = beta_hat.clone();
    let q1_curve = Func1::new(move |s| q1.at(s) / b.tangent(s)[0]);
    let q2_curve = Func1::new(move |s| q2.at(s) / bh.tangent(s)[1]);
    let (qg1, qg2) = anchor_data(chart, gamma, Arc::new(phi));
    Ok(BoundaryData::Phi { q1_curve, q2_curve, qg1, qg2 })
}

/// A solved chart region.
#[derive(Clone)]
pub struct LocalSolution {
    pub field: GridPairField,
    pub displacement: Displacement,
}

/// Solves `Υ(y) = U` on a chart region with converted data.
pub fn solve_strain_local(
    chart: &Arc<AsymptoticChart>,
    region: PlanarRegion,
    u: &StrainField,
    bc: &BoundaryData,
    opts: &SolveOptions,
) -> Result<LocalSolution> {
    let (sys, rec) = reduce_to_char_system(chart, u)?;
    let grid = RegionGrid::on_lattice(region, chart.lattice);
    let field = solve_region(&grid, &sys, bc, opts)?;
    let displacement = rec.recover(&field)?;
    Ok(LocalSolution { field, displacement })
}

// ---------------------------------------------------------------- boundary pairing

/// `⟨W, T1 ζ′(s)⟩` with the boundary normal `μ` signed so that
/// `χ(μ, ζ′) = −χ(α′(0), ζ′(0))`; `w` is the vector in parameter components.
pub fn boundary_pairing(surface: &dyn Surface<f64>, alpha_t0: V2f, zeta: &CurveOnSurface<f64>, s: f64, w: V2f) -> Result<f64> {
    let t1 = t1_of_tangent(surface, alpha_t0, zeta, s)?;
    let u = zeta.at(s);
    let geo = local_geometry(surface, u)?;
    Ok(geo.g_dot(w, t1))
}

/// `T1 ζ′(s)` in parameter components (see [`boundary_pairing`]).
pub fn t1_of_tangent(surface: &dyn Surface<f64>, alpha_t0: V2f, zeta: &CurveOnSurface<f64>, s: f64) -> Result<V2f> {
    let p0 = zeta.at(0.0);
    let geo0 = local_geometry(surface, p0)?;
    let target = -det3(geo0.ambient(alpha_t0), geo0.ambient(zeta.tangent(0.0)), geo0.n).signum();
    let u = zeta.at(s);
    let geo = local_geometry(surface, u)?;
    let zt = zeta.tangent(s);
    let za = geo.ambient(zt);
    let m = cross(geo.n, za);
    let m = scale3(1.0 / norm3(m), m);
    let mut mu = geo.components(m);
    if det3(geo.ambient(mu), za, geo.n).signum() != target {
        mu = [-mu[0], -mu[1]];
    }
    let t = boundary_operator_t(surface, 1, TangentVector::new(u, mu), TangentVector::new(u, zt))?;
    Ok(t.comp)
}

// ---------------------------------------------------------------- pasting

/// Surface data for a pasting run: `U(u)` in parameter components, `φ(t)`
/// the vector `W ∘ α(t)` in parameter components, and
/// `q1(s) = ⟨W, T1ζ′⟩ ∘ ζ(s)`.
#[derive(Clone)]
pub struct SurfaceProblem {
    pub strain: Arc<dyn Fn(V2f) -> M2f + Send + Sync>,
    pub phi: Arc<dyn Fn(f64) -> V2f + Send + Sync>,
    pub q1: Func1,
}

impl SurfaceProblem {
    pub fn zero() -> Self {
        SurfaceProblem { strain: Arc::new(|_| [[0.0; 2]; 2]), phi: Arc::new(|_| [0.0; 2]), q1: Func1::zero() }
    }
}

/// Layout of a chart chain along an anchor `α`: chart `c` is normalized by
/// `t ↦ α(t + τ_c)` with `τ_0 = 0`, covers the anchor up to
/// `τ_{c+2}` (or `t_end`), and meets the previous chart along the diagonal
/// `ζ_c(s) = ψ_{c−1}⁻¹(s + d, s − d)`, `d = τ_c − τ_{c−1}`.
#[derive(Clone)]
pub struct PastingSpec {
    pub anchor: CurveOnSurface<f64>,
    /// `ζ−`, with `ζ(0) = α(0)` and `Π(α′(0), ζ′(0)) = 0`.
    pub zeta: CurveOnSurface<f64>,
    pub s0: f64,
    /// `[τ_1, …]`, increasing, at most two entries.
    pub taus: Vec<f64>,
    pub t_end: f64,
    /// Nodes along `x1` per chart (odd, so the 2× coarse check exists).
    pub n: usize,
    pub opts: SolveOptions,
}

/// One solved chart of a chain.
#[derive(Clone)]
pub struct ChartPiece {
    pub chart: Arc<AsymptoticChart>,
    pub region: PlanarRegion,
    pub solution: LocalSolution,
    pub offset: f64,
    /// Richardson estimate of the discretization error of `W`.
    pub estimate: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OverlapReport {
    pub charts: (usize, usize),
    pub nodes: usize,
    pub discrepancy: f64,
    pub bound: f64,
}

#[derive(Clone)]
pub struct Pasted {
    pub pieces: Vec<ChartPiece>,
    pub overlaps: Vec<OverlapReport>,
}

/// Covariant `(W1, W2)` of a solved piece at chart point `x`: cubic where
/// the 4×4 stencil is inside the solution, bilinear otherwise.
fn eval_cov(piece: &ChartPiece, x: V2f) -> Option<(V2f, bool)> {
    let f = &piece.solution.field;
    let l = f.grid.lattice;
    let a = (x[0] - l.x0) / l.dx;
    let b = (x[1] - l.y0) / l.dy;
    let i = a.floor() as i64;
    let j = b.floor() as i64;
    let inside = i >= 1 && j >= 1 && i + 2 < l.nx as i64 && j + 2 < l.ny as i64 && {
        let mut ok = true;
        for q in j - 1..=j + 2 {
            for p in i - 1..=i + 2 {
                ok &= f.node(p as usize, q as usize).is_some();
            }
        }
        ok
    };
    if inside {
        let v1 = interp_cubic(&l, &f.f1, x)?;
        let v2 = interp_cubic(&l, &f.f2, x)?;
        Some(([v1, v2], true))
    } else {
        f.eval(x).map(|v| (v, false))
    }
}

/// Ambient tangential vector from covariant chart components at chart point `x`.
fn ambient_from_cov(chart: &AsymptoticChart, x: V2f, cov: V2f) -> Option<(V2f, V3f)> {
    let (u, jm) = chart.param_at(x)?;
    let geo = local_geometry(chart.surface.as_ref(), u).ok()?;
    let jt = [[jm[0][0], jm[1][0]], [jm[0][1], jm[1][1]]];
    let g = mm2(jt, mm2(geo.g, jm));
    let c = mv2(inv2(g)?, cov);
    let e1 = geo.ambient([jm[0][0], jm[1][0]]);
    let e2 = geo.ambient([jm[0][1], jm[1][1]]);
    Some((u, comb3(c[0], e1, c[1], e2)))
}

fn richardson(chart: &Arc<AsymptoticChart>, region: &PlanarRegion, u: &StrainField, bc: &BoundaryData, opts: &SolveOptions, fine: &LocalSolution) -> Result<f64> {
    let coarse = Arc::new(chart.subsampled(2)?);
    let cl = coarse.lattice;
    let mut us = StrainField::zeros(cl);
    let fl = chart.lattice;
    for k in 0..cl.len() {
        let kf = fl.idx((k % cl.nx) * 2, (k / cl.nx) * 2);
        us.u11[k] = u.u11[kf];
        us.u12[k] = u.u12[kf];
        us.u22[k] = u.u22[kf];
        us.mask[k] = u.mask[kf];
    }
    let sol = solve_strain_local(&coarse, region.clone(), &us, bc, opts)?;
    let mut m: f64 = 0.0;
    for k in 0..cl.len() {
        let kf = fl.idx((k % cl.nx) * 2, (k / cl.nx) * 2);
        if let (Some(a), true) = (sol.field.node(k % cl.nx, k / cl.nx), fine.field.grid.mask[kf]) {
            m = m.max((a[0] - fine.field.f1[kf]).abs()).max((a[1] - fine.field.f2[kf]).abs());
        }
    }
    // second-order scheme: fine error ≈ (coarse − fine)/3
    Ok(m / 3.0)
}

/// Solves a chain of up to three charts along one anchor curve and checks
/// that neighbouring solutions agree on their overlap.
pub fn paste_charts(surface: Arc<dyn Surface<f64>>, spec: &PastingSpec, problem: &SurfaceProblem) -> Result<Pasted> {
    if spec.taus.len() > 2 {
        return Err(Error::Invalid("at most three charts are supported".into()));
    }
    if spec.n < 9 || spec.n % 2 == 0 {
        return Err(Error::Invalid("pasting needs an odd node count ≥ 9".into()));
    }
    let mut taus = vec![0.0];
    taus.extend(spec.taus.iter().copied());
    let last = spec.t_end;
    if taus.windows(2).any(|w| w[1] <= w[0]) || *taus.last().unwrap() >= last {
        return Err(Error::Invalid("anchor offsets must increase below t_end".into()));
    }
    let nch = taus.len();
    let reach = |c: usize| if c + 2 < nch { taus[c + 2] } else { last } - taus[c];
    let mut pieces: Vec<ChartPiece> = Vec::new();
    for c in 0..nch {
        let tau = taus[c];
        let len = reach(c);
        let anchor = spec.anchor.reparametrized_affine(tau, 1.0, spec.anchor.a - tau, spec.anchor.b - tau);
        let extent = ChartExtent::new([0.0, -len], [len, len], spec.n, 2 * spec.n - 1);
        let mut chart = build_chart(surface.clone(), &anchor, extent)?;
        // transversal curve and its data
        let (zeta, q1): (CurveOnSurface<f64>, Func1) = if c == 0 {
            let z = spec.zeta.clone();
            let z = CurveOnSurface { a: 0.0, b: spec.s0, ..z };
            (z, problem.q1.clone())
        } else {
            let prev = &pieces[c - 1];
            let d = tau - taus[c - 1];
            let s_c = d.min(reach(c - 1) - d);
            let (pc, pd) = (prev.chart.clone(), prev.chart.clone());
            let z = CurveOnSurface::new(
                0.0,
                s_c,
                move |s: f64| pc.param_at([s + d, s - d]).map(|p| p.0).unwrap_or([f64::NAN; 2]),
                move |s: f64| match pd.param_at([s + d, s - d]) {
                    Some((_, j)) => [j[0][0] + j[0][1], j[1][0] + j[1][1]],
                    None => [f64::NAN; 2],
                },
            );
            let alpha_t = spec.anchor.tangent(tau);
            let m = 4 * spec.n;
            let mut ss = Vec::with_capacity(m);
            let mut vals = Vec::with_capacity(m);
            for q in 0..m {
                let s = s_c * q as f64 / (m - 1) as f64;
                let x = [s + d, s - d];
                let (cov, _) = eval_cov(prev, x).ok_or_else(|| Error::Internal(format!("trace point {x:?} outside the previous solution")))?;
                let (u, wv) = ambient_from_cov(&prev.chart, x, cov).ok_or_else(|| Error::Internal("trace point outside the chart".into()))?;
                let geo = local_geometry(surface.as_ref(), u)?;
                let w_u = geo.components(wv);
                ss.push(s);
                vals.push(boundary_pairing(surface.as_ref(), alpha_t, &z, s, w_u)?);
            }
            (z, Func1::from_samples(ss, vals)?)
        };
        let nf = transversal_normal_form(&chart, &zeta)?;
        if nf.swapped {
            chart = chart.swapped();
        }
        let chart = Arc::new(chart);
        let beta = nf.curve;
        let be = beta.end();
        if be[0] > len || be[1] > len {
            return Err(Error::Invalid(format!("transversal curve ends at {be:?}, outside the chart box of size {len}")));
        }
        let gamma = PlanarCurve::new(0.0, len, Monotonicity::Decreasing, |t| [t, -t], |_| [1.0, -1.0])?;
        let region = PlanarRegion::xi_minus(beta.clone(), gamma.clone())?;
        let us = StrainField::from_surface_tensor(&chart, |u| (problem.strain)(u));
        let (pch, phi) = (chart.clone(), problem.phi.clone());
        let phi_chart = move |t: f64| -> V2f {
            match pch.param_at([t, -t]) {
                Some((_, jm)) => match inv2(jm) {
                    Some(ji) => mv2(ji, phi(t + tau)),
                    None => [f64::NAN; 2],
                },
                None => [f64::NAN; 2],
            }
        };
        let bc = convert_boundary_data(&chart, &beta, q1, &gamma, phi_chart)?;
        let solution = solve_strain_local(&chart, region.clone(), &us, &bc, &spec.opts)?;
        let estimate = richardson(&chart, &region, &us, &bc, &spec.opts, &solution)?;
        pieces.push(ChartPiece { chart, region, solution, offset: tau, estimate });
    }
    let mut overlaps = Vec::new();
    for c in 1..nch {
        overlaps.push(overlap(&pieces, c - 1, c)?);
    }
    Ok(Pasted { pieces, overlaps })
}

fn overlap(pieces: &[ChartPiece], a: usize, b: usize) -> Result<OverlapReport> {
    let (pa, pb) = (&pieces[a], &pieces[b]);
    let lb = pb.chart.lattice;
    let mut disc: f64 = 0.0;
    let mut nodes = 0;
    let mut scale: f64 = 0.0;
    for k in 0..lb.len() {
        if !(pb.solution.field.grid.mask[k] && pb.solution.field.f1[k].is_finite()) {
            continue;
        }
        let Some(xa) = pa.chart.coords_of(pb.chart.u[k]) else { continue };
        let Some((cov, cubic)) = eval_cov(pa, xa) else { continue };
        if !cubic {
            continue;
        }
        let Some((_, va)) = ambient_from_cov(&pa.chart, xa, cov) else { continue };
        let vb = pb.solution.displacement.tangential(&pb.chart, k);
        disc = disc.max(norm3(sub3(va, vb)));
        scale = scale.max(norm3(va));
        nodes += 1;
    }
    if nodes == 0 {
        return Err(Error::Invalid(format!("charts {a} and {b} do not overlap")));
    }
    let bound = 10.0 * (pa.estimate + pb.estimate) + 1e-10 * (1.0 + scale);
    let rep = OverlapReport { charts: (a, b), nodes, discrepancy: disc, bound };
    if disc > bound {
        return Err(Error::PastingInconsistency { discrepancy: disc, bound });
    }
    Ok(rep)
}

// ---------------------------------------------------------------- corners

/// A corner `p = β(ε) = γ(0)` of the boundary curve. `gamma`'s formula must
/// extend smoothly to negative parameters (it normalizes the chart).
#[derive(Clone)]
pub struct CornerSpec {
    pub beta: CurveOnSurface<f64>,
    pub gamma: CurveOnSurface<f64>,
    pub zeta: CurveOnSurface<f64>,
    /// A surface parameter inside the shell region near `p`.
    pub inside: V2f,
    /// Half-width of the chart box around `p`.
    pub eps: f64,
    /// Nodes per direction (odd).
    pub n: usize,
}

/// Result of a corner solve on `Ψ1 = E(ψ∘β) ∪ R ∪ E(ψ∘γ)`.
#[derive(Clone)]
pub struct CornerSolution {
    pub chart: Arc<AsymptoticChart>,
    pub beta_image: PlanarCurve,
    pub displacement: Displacement,
    pub mask: Vec<bool>,
}

/// Solves near an H1 corner: first `E(ψ∘β)` and `E(ψ∘γ)` from the boundary
/// vector `φ`, then the rectangle between them from their edge traces.
/// `phi_beta(t)`, `phi_gamma(t)` give `W` in parameter components along
/// each curve.
pub fn connection_point_solve(
    surface: Arc<dyn Surface<f64>>,
    spec: &CornerSpec,
    strain: impl Fn(V2f) -> M2f,
    phi_beta: impl Fn(f64) -> V2f + Send + Sync + 'static,
    phi_gamma: impl Fn(f64) -> V2f + Send + Sync + 'static,
    opts: &SolveOptions,
) -> Result<CornerSolution> {
    match classify_connection(surface.as_ref(), &spec.beta, &spec.gamma, &spec.zeta)? {
        Some(Connection::H1) => {}
        other => return Err(Error::UnsupportedConnection(format!("{other:?}"))),
    }
    if spec.n < 9 || spec.n % 2 == 0 {
        return Err(Error::Invalid("corner solve needs an odd node count ≥ 9".into()));
    }
    let e = spec.eps;
    let anchor = CurveOnSurface { a: -e, b: spec.gamma.b.max(e), ..spec.gamma.clone() };
    let mut chart = build_chart(surface.clone(), &anchor, ChartExtent::new([-e, -e], [e, e], spec.n, spec.n))?;
    let inside = chart.coords_of(spec.inside).ok_or_else(|| Error::Invalid("the inside point is not in the chart".into()))?;
    if !(inside[0] > 0.0 && inside[1] > 0.0) {
        chart = chart.swapped();
        let y = [-inside[1], -inside[0]];
        if !(y[0] > 0.0 && y[1] > 0.0) {
            return Err(Error::Invalid("the inside point is in neither first quadrant".into()));
        }
    }
    let chart = Arc::new(chart);
    let l = chart.lattice;
    // ψ∘β
    let m = 257;
    let (mut t, mut x1, mut x2) = (vec![], vec![], vec![]);
    for q in 0..m {
        let s = spec.beta.a + (spec.beta.b - spec.beta.a) * q as f64 / (m - 1) as f64;
        let x = chart.coords_of(spec.beta.at(s)).ok_or_else(|| Error::ExtentTooLarge("β leaves the corner chart".into()))?;
        t.push(s);
        x1.push(x[0]);
        x2.push(x[1]);
    }
    *x1.last_mut().unwrap() = 0.0;
    *x2.last_mut().unwrap() = 0.0;
    let bimg = PlanarCurve::from_samples(t, x1, x2, Monotonicity::Decreasing).map_err(|err| Error::NotTransversal(format!("ψ∘β is not decreasing: {err}")))?;
    let gimg = PlanarCurve::new(0.0, e, Monotonicity::Decreasing, |t| [t, -t], |_| [1.0, -1.0])?;
    let b2 = bimg.start()[1];
    let us = StrainField::from_surface_tensor(&chart, strain);
    let (sys, rec) = reduce_to_char_system(&chart, &us)?;
    let cov_data = |curve: PlanarCurve, phi: Arc<dyn Fn(f64) -> V2f + Send + Sync>| -> BoundaryData {
        let (c1, c2) = (chart.clone(), chart.clone());
        let (k1, k2) = (curve.clone(), curve);
        let (p1, p2) = (phi.clone(), phi);
        let cov = move |c: &AsymptoticChart, k: &PlanarCurve, p: &Arc<dyn Fn(f64) -> V2f + Send + Sync>, t: f64, i: usize| -> f64 {
            let x = k.at(t);
            match c.param_at(x) {
                Some((u, jm)) => {
                    let geo = crate::surface::local_geometry_unchecked(c.surface.as_ref(), u);
                    let gv = mv2(geo.g, p(t));
                    gv[0] * jm[0][i] + gv[1] * jm[1][i]
                }
                None => f64::NAN,
            }
        };
        let cv = cov;
        BoundaryData::E { q1: Func1::new(move |t| cv(&c1, &k1, &p1, t, 0)), q2: Func1::new(move |t| cov(&c2, &k2, &p2, t, 1)) }
    };
    let solve = |region: PlanarRegion, bc: &BoundaryData| solve_region(&RegionGrid::on_lattice(region, l), &sys, bc, opts);
    let fb = solve(PlanarRegion::e(bimg.clone())?, &cov_data(bimg.clone(), Arc::new(phi_beta)))?;
    let fg = solve(PlanarRegion::e(gimg.clone())?, &cov_data(gimg.clone(), Arc::new(phi_gamma)))?;
    // rectangle data from the edge nodes x1 = 0 (of E(ψ∘β)) and x2 = 0 (of E(ψ∘γ))
    let i0 = ((0.0 - l.x0) / l.dx).round() as usize;
    let j0 = ((0.0 - l.y0) / l.dy).round() as usize;
    let (mut ys, mut q1) = (vec![], vec![]);
    for j in j0..l.ny {
        if let Some(v) = fb.node(i0, j) {
            ys.push(l.y(j));
            q1.push(v[0]);
        }
    }
    let (mut xs, mut q2) = (vec![], vec![]);
    for i in i0..l.nx {
        if let Some(v) = fg.node(i, j0) {
            xs.push(l.x(i));
            q2.push(v[1]);
        }
    }
    if ys.len() < 2 || xs.len() < 2 {
        return Err(Error::ExtentTooLarge("corner constituents are below grid resolution".into()));
    }
    let rect = PlanarRegion::r([0.0, 0.0], e, b2)?;
    let fr = solve(rect, &BoundaryData::R { q1: Func1::from_samples(ys, q1)?, q2: Func1::from_samples(xs, q2)? })?;
    let n = l.len();
    let (mut w1, mut w2, mut mask) = (vec![f64::NAN; n], vec![f64::NAN; n], vec![false; n]);
    for f in [&fb, &fg, &fr] {
        for k in 0..n {
            if !mask[k] && f.grid.mask[k] && f.f1[k].is_finite() {
                w1[k] = f.f1[k];
                w2[k] = f.f2[k];
                mask[k] = true;
            }
        }
    }
    let displacement = rec.recover_arrays(mask.clone(), w1, w2)?;
    Ok(CornerSolution { chart, beta_image: bimg, displacement, mask })
}

// ---------------------------------------------------------------- test fields

/// Random trigonometric polynomial `c + Σ a sin(k·x + θ)` with exact
/// gradient; used for manufactured solutions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigField {
    pub c: f64,
    pub terms: Vec<(f64, V2f, f64)>,
}

impl TrigField {
    pub fn random(rng: &mut impl Rng, terms: usize, kmax: f64) -> Self {
        TrigField {
            c: rng.gen_range(-1.0..1.0),
            terms: (0..terms)
                .map(|_| (rng.gen_range(-1.0..1.0), [rng.gen_range(-kmax..kmax), rng.gen_range(-kmax..kmax)], rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect(),
        }
    }

    pub fn value(&self, x: V2f) -> f64 {
        self.c + self.terms.iter().map(|(a, k, p)| a * (k[0] * x[0] + k[1] * x[1] + p).sin()).sum::<f64>()
    }

    pub fn grad(&self, x: V2f) -> V2f {
        let mut g = [0.0; 2];
        for (a, k, p) in &self.terms {
            let c = a * (k[0] * x[0] + k[1] * x[1] + p).cos();
            g[0] += c * k[0];
            g[1] += c * k[1];
        }
        g
    }
}

/// Three random fields `(W1, W2, w)` with the value/derivative layout of
/// [`StrainField::manufactured`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManufacturedField {
    pub f: [TrigField; 3],
}

impl ManufacturedField {
    pub fn random(rng: &mut impl Rng, terms: usize, kmax: f64) -> Self {
        ManufacturedField { f: [TrigField::random(rng, terms, kmax), TrigField::random(rng, terms, kmax), TrigField::random(rng, terms, kmax)] }
    }

    pub fn values(&self, x: V2f) -> [f64; 3] {
        [self.f[0].value(x), self.f[1].value(x), self.f[2].value(x)]
    }

    pub fn eval(&self, x: V2f) -> ([f64; 3], M2f) {
        (self.values(x), [self.f[0].grad(x), self.f[1].grad(x)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filled_covers_every_node() {
        let l = Lattice::covering([0.0, 0.0], [1.0, 1.0], 6, 6);
        let mut mask = vec![false; l.len()];
        mask[l.idx(2, 3)] = true;
        let v: Vec<f64> = (0..l.len()).map(|k| k as f64).collect();
        let f = filled(&l, &v, &mask);
        assert!(f.iter().all(|x| (*x - v[l.idx(2, 3)]).abs() < 1e-12));
    }

    #[test]
    fn anchor_covariant_is_lowering() {
        let g = [[2.0, 0.5], [0.5, 3.0]];
        assert_eq!(anchor_covariant(g, [1.0, -2.0]), [1.0, -5.5]);
    }

    #[test]
    fn tensor_norm_of_metric_is_two() {
        let g = [[2.0, 0.3], [0.3, 1.5]];
        assert!((tensor_norm_sq(g, [2.0, 0.3, 1.5]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trig_gradient_matches_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = TrigField::random(&mut rng, 4, 3.0);
        let x = [0.3, -0.2];
        let h = 1e-6;
        let g = f.grad(x);
        let d0 = (f.value([x[0] + h, x[1]]) - f.value([x[0] - h, x[1]])) / (2.0 * h);
        let d1 = (f.value([x[0], x[1] + h]) - f.value([x[0], x[1] - h])) / (2.0 * h);
        assert!((g[0] - d0).abs() < 1e-8 && (g[1] - d1).abs() < 1e-8);
    }
}
