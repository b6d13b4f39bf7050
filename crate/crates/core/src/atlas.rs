//! Discrete asymptotic coordinate charts.
//!
//! A chart `ψ` is normalized by an anchor curve `α` so that `ψ(α(t)) = (t, −t)`.
//! Coordinate lines are the two asymptotic foliations: the line `x1 = t` is
//! the family-2 leaf through `α(t)` and the line `x2 = −t` is the family-1
//! leaf through `α(t)`. Leaves are integrated with RK4 in g-arclength; each
//! node is the Newton intersection of its two leaves. Jacobians, Hessians
//! and pulled-back geometry come from fourth-order differences.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{bicubic_hermite, d4, interp_cubic, HermiteCorner};
use crate::regions::{Lattice, Monotonicity, PlanarCurve};
use crate::small::*;
use crate::surface::{asymptotic_direction_tracking, asymptotic_directions_at, local_geometry, local_geometry_unchecked, rho_q_shape, CurveOnSurface, LocalGeometry, Surface};

type V2f = [f64; 2];
type V3f = [f64; 3];
type M2f = [[f64; 2]; 2];

/// Coordinate box and resolution of a chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartExtent {
    pub lo: V2f,
    pub hi: V2f,
    pub nx: usize,
    pub ny: usize,
    /// Leaf integration steps across the anchor span; `None` picks
    /// `max(512, 8(n−1))`.
    pub steps: Option<usize>,
}

impl ChartExtent {
    pub fn new(lo: V2f, hi: V2f, nx: usize, ny: usize) -> Self {
        ChartExtent { lo, hi, nx, ny, steps: None }
    }

    /// Square `[c−r, c+r] × [−c−r, −c+r]` centered on the anchor point `α(c)`.
    pub fn around(c: f64, r: f64, n: usize) -> Self {
        Self::new([c - r, -c - r], [c + r, -c + r], n, n)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    /// Anchor parameters the chart needs: `[min(a1, −b2), max(b1, −a2)]`.
    pub fn anchor_span(&self) -> (f64, f64) {
        (self.lo[0].min(-self.hi[1]), self.hi[0].max(-self.lo[1]))
    }
}

/// Samples of the anchor curve kept with the chart.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub t: Vec<f64>,
    pub u: Vec<V2f>,
}

/// A built chart. All per-node vectors are indexed by `lattice.idx(i, j)`.
#[derive(Clone)]
pub struct AsymptoticChart {
    pub surface: Arc<dyn Surface<f64>>,
    pub lattice: Lattice,
    /// Surface parameters `ψ⁻¹(x)`.
    pub u: Vec<V2f>,
    /// `jac[a][i] = ∂u^a/∂x^i`.
    pub jac: Vec<M2f>,
    /// `[∂11 u, ∂12 u, ∂22 u]`.
    pub hess: Vec<[V2f; 3]>,
    /// `|∂2(∂1 u) − ∂1(∂2 u)|` before symmetrization.
    pub mixed_defect: Vec<f64>,
    pub g: Vec<M2f>,
    /// `gamma[k][i][j] = Γ^k_ij` in chart coordinates.
    pub gamma: Vec<[[[f64; 2]; 2]; 2]>,
    pub omega: Vec<f64>,
    /// `(Π(∂x1, ∂x1), Π(∂x2, ∂x2))`.
    pub pi_diag: Vec<V2f>,
    pub kappa: Vec<f64>,
    pub normal: Vec<V3f>,
    pub point: Vec<V3f>,
    pub anchor: AnchorRecord,
    /// Leaf step in g-arclength.
    pub step: f64,
    pub steps: usize,
    /// Sign of `det J`.
    pub orientation: f64,
    /// True for the reoriented chart `(x1, x2) ↦ (−x2, −x1)`.
    pub swapped: bool,
}

impl std::fmt::Debug for AsymptoticChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsymptoticChart")
            .field("surface", &self.surface.name())
            .field("lattice", &self.lattice)
            .field("step", &self.step)
            .field("orientation", &self.orientation)
            .field("swapped", &self.swapped)
            .finish()
    }
}

/// Invariant residuals of a chart.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ChartDiagnostics {
    /// `max |Π(∂xi, ∂xi)| / |ω|`.
    pub asymptotic_residual: f64,
    /// `max |ω² + κ det g| / ω²`.
    pub kappa_identity: f64,
    pub min_abs_omega: f64,
    /// `max |∂k g_ij − Γ^l_ki g_lj − Γ^l_kj g_il|` at interior nodes.
    pub metric_compatibility: f64,
    pub max_mixed_defect: f64,
    /// `max |ψ(α(t)) − (t, −t)|` over anchor samples inside the chart.
    pub anchor_normalization: f64,
    pub min_abs_det_j: f64,
}

// ---------------------------------------------------------------- leaves

/// One asymptotic leaf: `du/ds = A(u)` with `A` g-unit and branch-tracked.
struct Leaf<'a> {
    surf: &'a dyn Surface<f64>,
    h: f64,
    fwd: Vec<(V2f, V2f)>,
    bwd: Vec<(V2f, V2f)>,
    stop_f: Option<Error>,
    stop_b: Option<Error>,
}

fn track(surf: &dyn Surface<f64>, u: V2f, prev: V2f) -> Result<V2f> {
    if !surf.domain().contains(u) {
        return Err(Error::ExtentTooLarge(format!("leaf leaves the domain at ({:.4}, {:.4})", u[0], u[1])));
    }
    let geo = local_geometry_unchecked(surf, u);
    asymptotic_direction_tracking(&geo, prev)
}

fn rk4(surf: &dyn Surface<f64>, u: V2f, d: V2f, h: f64) -> Result<(V2f, V2f)> {
    let at = |c: f64, k: V2f| [u[0] + c * k[0], u[1] + c * k[1]];
    let k1 = d;
    let k2 = track(surf, at(0.5 * h, k1), k1)?;
    let k3 = track(surf, at(0.5 * h, k2), k2)?;
    let k4 = track(surf, at(h, k3), k3)?;
    let un = [
        u[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        u[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    let dn = track(surf, un, k4)?;
    Ok((un, dn))
}

impl<'a> Leaf<'a> {
    fn new(surf: &'a dyn Surface<f64>, u0: V2f, d0: V2f, h: f64) -> Self {
        Leaf { surf, h, fwd: vec![(u0, d0)], bwd: vec![(u0, d0)], stop_f: None, stop_b: None }
    }

    /// Makes sample `k` (signed) available.
    fn ensure(&mut self, k: i64) -> Result<()> {
        let (v, stop, h) = if k >= 0 {
            (&mut self.fwd, &mut self.stop_f, self.h)
        } else {
            (&mut self.bwd, &mut self.stop_b, -self.h)
        };
        let need = k.unsigned_abs() as usize;
        while v.len() <= need {
            if let Some(e) = stop {
                return Err(e.clone());
            }
            let (u, d) = *v.last().unwrap();
            match rk4(self.surf, u, d, h) {
                Ok(s) => v.push(s),
                Err(e) => {
                    *stop = Some(e.clone());
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn sample(&self, k: i64) -> (V2f, V2f) {
        if k >= 0 {
            self.fwd[k as usize]
        } else {
            self.bwd[(-k) as usize]
        }
    }

    /// Hermite-cubic position and derivative at arclength `s`.
    fn eval(&mut self, s: f64) -> Result<(V2f, V2f)> {
        if !s.is_finite() {
            return Err(Error::ExtentTooLarge("leaf parameter diverged".into()));
        }
        let k = (s / self.h).floor() as i64;
        self.ensure(k)?;
        self.ensure(k + 1)?;
        let (p0, d0) = self.sample(k);
        let (p1, d1) = self.sample(k + 1);
        let t = s / self.h - k as f64;
        let h = self.h;
        let (t2, t3) = (t * t, t * t * t);
        let hv = [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2];
        let hd = [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t];
        let mut p = [0.0; 2];
        let mut d = [0.0; 2];
        for a in 0..2 {
            p[a] = hv[0] * p0[a] + hv[1] * h * d0[a] + hv[2] * p1[a] + hv[3] * h * d1[a];
            d[a] = (hd[0] * p0[a] + hd[2] * p1[a]) / h + hd[1] * d0[a] + hd[3] * d1[a];
        }
        Ok((p, d))
    }
}

/// Newton solve of `c(s) = d(σ)`.
fn intersect(c: &mut Leaf, d: &mut Leaf, mut s: f64, mut sg: f64, cap: f64) -> Result<(f64, f64, V2f)> {
    for _ in 0..60 {
        let (pc, tc) = c.eval(s)?;
        let (pd, td) = d.eval(sg)?;
        let f = [pc[0] - pd[0], pc[1] - pd[1]];
        let m = [[tc[0], -td[0]], [tc[1], -td[1]]];
        let inv = inv2(m).ok_or_else(|| Error::ExtentTooLarge("leaves are tangent".into()))?;
        let mut delta = mv2(inv, f);
        let len = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
        if len > cap {
            delta = [delta[0] * cap / len, delta[1] * cap / len];
        }
        s -= delta[0];
        sg -= delta[1];
        let scale = 1.0 + pc[0].abs() + pc[1].abs();
        if len <= 1e-14 * (1.0 + s.abs() + sg.abs()) || (f[0].abs() + f[1].abs() <= 1e-15 * scale && len < 1e-10) {
            let (p, _) = c.eval(s)?;
            return Ok((s, sg, p));
        }
    }
    Err(Error::ExtentTooLarge("leaf intersection did not converge".into()))
}

// ---------------------------------------------------------------- anchor frames

/// Oriented asymptotic directions at anchor samples: `(A1, A2, c1, λ)` with
/// `α′ = c1 A1 − λ A2`, `c1, λ > 0`.
struct AnchorFrame {
    a1: V2f,
    a2: V2f,
    c1: f64,
    lambda: f64,
}

fn anchor_frames(surf: &dyn Surface<f64>, anchor: &CurveOnSurface<f64>, ts: &[f64], t_ref: f64, dt_max: f64) -> Result<Vec<AnchorFrame>> {
    let frame_at = |t: f64, prev: Option<(V2f, V2f)>| -> Result<AnchorFrame> {
        let u = anchor.at(t);
        let geo = local_geometry(surf, u)?;
        let (a1, a2) = match prev {
            None => asymptotic_directions_at(&geo)?,
            Some((p1, p2)) => (asymptotic_direction_tracking(&geo, p1)?, asymptotic_direction_tracking(&geo, p2)?),
        };
        let m = [[a1[0], a2[0]], [a1[1], a2[1]]];
        let inv = inv2(m).ok_or_else(|| Error::DiscontinuousField("asymptotic directions merged".into()))?;
        let c = mv2(inv, anchor.tangent(t));
        let nrm = geo.g_norm(anchor.tangent(t));
        if c[0].abs() <= 1e-10 * nrm || c[1].abs() <= 1e-10 * nrm {
            return Err(Error::Characteristic);
        }
        let a1 = if c[0] > 0.0 { a1 } else { [-a1[0], -a1[1]] };
        let a2 = if c[1] < 0.0 { a2 } else { [-a2[0], -a2[1]] };
        Ok(AnchorFrame { a1, a2, c1: c[0].abs(), lambda: c[1].abs() })
    };
    let start = frame_at(t_ref, None)?;
    let mut out: Vec<Option<AnchorFrame>> = (0..ts.len()).map(|_| None).collect();
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].partial_cmp(&ts[b]).unwrap());
    // march up from t_ref, then down
    for dir in [1.0, -1.0] {
        let mut t = t_ref;
        let mut prev = (start.a1, start.a2);
        let iter: Vec<usize> = if dir > 0.0 {
            order.iter().copied().filter(|&k| ts[k] >= t_ref).collect()
        } else {
            order.iter().rev().copied().filter(|&k| ts[k] < t_ref).collect()
        };
        for k in iter {
            let target = ts[k];
            let m = (((target - t).abs() / dt_max).ceil() as usize).max(1);
            let mut f = None;
            for q in 1..=m {
                let tq = t + (target - t) * q as f64 / m as f64;
                let fr = frame_at(tq, Some(prev))?;
                prev = (fr.a1, fr.a2);
                f = Some(fr);
            }
            t = target;
            out[k] = f;
        }
    }
    Ok(out.into_iter().map(|f| f.unwrap()).collect())
}

fn anchor_length(surf: &dyn Surface<f64>, anchor: &CurveOnSurface<f64>, a: f64, b: f64) -> Result<f64> {
    let n = 64;
    let mut len = 0.0;
    for k in 0..n {
        let t = a + (b - a) * (k as f64 + 0.5) / n as f64;
        let geo = local_geometry(surf, anchor.at(t))?;
        len += geo.g_norm(anchor.tangent(t)) * (b - a) / n as f64;
    }
    Ok(len)
}

// ---------------------------------------------------------------- build

/// Builds the asymptotic chart normalized by `anchor` over `extent`.
pub fn build_chart(surface: Arc<dyn Surface<f64>>, anchor: &CurveOnSurface<f64>, extent: ChartExtent) -> Result<AsymptoticChart> {
    let ChartExtent { lo, hi, nx, ny, .. } = extent;
    if nx < 5 || ny < 5 {
        return Err(Error::Invalid("a chart needs at least 5 nodes per direction".into()));
    }
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::Invalid("empty chart box".into()));
    }
    let (ta, tb) = extent.anchor_span();
    let tol = 1e-12 * (1.0 + ta.abs() + tb.abs());
    if ta < anchor.a - tol || tb > anchor.b + tol {
        return Err(Error::Invalid(format!(
            "anchor parameter range [{}, {}] does not cover [{ta}, {tb}]",
            anchor.a, anchor.b
        )));
    }
    let surf: &dyn Surface<f64> = surface.as_ref();
    let lattice = Lattice::covering(lo, hi, nx, ny);
    let steps = extent.steps.unwrap_or_else(|| 512.max(8 * (nx.max(ny) - 1)));
    let span_len = anchor_length(surf, anchor, ta, tb)?;
    let h = span_len / steps as f64;

    // anchor parameters of leaves: family 2 at x1_i, family 1 at −x2_j
    let mut ts: Vec<f64> = (0..nx).map(|i| lattice.x(i)).collect();
    ts.extend((0..ny).map(|j| -lattice.y(j)));
    let t_ref = 0.0_f64.clamp(ta, tb);
    let dt_max = (tb - ta) / steps as f64;
    let frames = anchor_frames(surf, anchor, &ts, t_ref, dt_max.max(1e-12))?;
    let (fr2, fr1) = frames.split_at(nx);

    let mut c_leaves: Vec<Leaf> = (0..nx).map(|i| Leaf::new(surf, anchor.at(lattice.x(i)), fr2[i].a2, h)).collect();
    let mut d_leaves: Vec<Leaf> = (0..ny).map(|j| Leaf::new(surf, anchor.at(-lattice.y(j)), fr1[j].a1, h)).collect();

    let n = lattice.len();
    let mut s_par = vec![f64::NAN; n];
    let mut sg_par = vec![f64::NAN; n];
    let mut u = vec![[f64::NAN; 2]; n];
    let cap = 0.25 * span_len.max(h);
    for i in 0..nx {
        let x1 = lattice.x(i);
        let j0 = (((-x1 - lattice.y0) / lattice.dy).round().max(0.0) as usize).min(ny - 1);
        let mut order: Vec<usize> = (j0..ny).collect();
        order.extend((0..j0).rev());
        for (pos, &j) in order.iter().enumerate() {
            let x2 = lattice.y(j);
            let lin_s = fr2[i].lambda * (x1 + x2);
            let lin_sg = fr1[j].c1 * (x1 + x2);
            // neighbour-based guesses
            let gs = if pos == 0 || j + 1 == j0 {
                lin_s
            } else {
                let jp = if j > j0 { j - 1 } else { j + 1 };
                let prev = s_par[lattice.idx(i, jp)];
                let jpp = if j > j0 { jp.checked_sub(1) } else { Some(jp + 1) };
                match jpp.filter(|&q| q < ny && (if j > j0 { q >= j0 } else { q <= j0 })) {
                    Some(q) => 2.0 * prev - s_par[lattice.idx(i, q)],
                    None => prev + (lin_s - fr2[i].lambda * (x1 + lattice.y(jp))),
                }
            };
            let gsg = if i >= 2 {
                2.0 * sg_par[lattice.idx(i - 1, j)] - sg_par[lattice.idx(i - 2, j)]
            } else if i == 1 {
                sg_par[lattice.idx(0, j)] + fr1[j].c1 * lattice.dx
            } else {
                lin_sg
            };
            let r = intersect(&mut c_leaves[i], &mut d_leaves[j], gs, gsg, cap)
                .or_else(|_| intersect(&mut c_leaves[i], &mut d_leaves[j], lin_s, lin_sg, cap));
            let (s, sg, p) = r.map_err(|e| match e {
                Error::ExtentTooLarge(m) => Error::ExtentTooLarge(format!("node ({x1:.4}, {x2:.4}): {m}")),
                other => other,
            })?;
            let k = lattice.idx(i, j);
            s_par[k] = s;
            sg_par[k] = sg;
            u[k] = p;
        }
    }

    // leaf parameters are smooth in x: ∂x1 u = (∂σ/∂x1) A1, ∂x2 u = (∂s/∂x2) A2
    let mut jac = vec![[[0.0; 2]; 2]; n];
    for j in 0..ny {
        for i in 0..nx {
            let k = lattice.idx(i, j);
            let mu = d4(&|q| sg_par[lattice.idx(q, j)], nx, i, lattice.dx);
            let lam = d4(&|q| s_par[lattice.idx(i, q)], ny, j, lattice.dy);
            let (_, t1) = d_leaves[j].eval(sg_par[k])?;
            let (_, t2) = c_leaves[i].eval(s_par[k])?;
            let geo = local_geometry_unchecked(surf, u[k]);
            let a1 = asymptotic_direction_tracking(&geo, t1)?;
            let a2 = asymptotic_direction_tracking(&geo, t2)?;
            jac[k] = [[mu * a1[0], lam * a2[0]], [mu * a1[1], lam * a2[1]]];
        }
    }
    let anchor_rec = {
        let m = 129;
        let t: Vec<f64> = (0..m).map(|q| ta + (tb - ta) * q as f64 / (m - 1) as f64).collect();
        let uu = t.iter().map(|&x| anchor.at(x)).collect();
        AnchorRecord { t, u: uu }
    };
    finish_chart(surface, lattice, u, jac, anchor_rec, h, steps)
}

/// Fills Hessians and pulled-back geometry from `u` and `J`.
fn finish_chart(
    surface: Arc<dyn Surface<f64>>,
    lattice: Lattice,
    u: Vec<V2f>,
    jac: Vec<M2f>,
    anchor: AnchorRecord,
    step: f64,
    steps: usize,
) -> Result<AsymptoticChart> {
    let l = lattice;
    let n = l.len();
    let surf: &dyn Surface<f64> = surface.as_ref();
    let mut hess = vec![[[0.0; 2]; 3]; n];
    let mut mixed_defect = vec![0.0f64; n];
    for j in 0..l.ny {
        for i in 0..l.nx {
            let k = l.idx(i, j);
            for a in 0..2 {
                let h11 = d4(&|q| jac[l.idx(q, j)][a][0], l.nx, i, l.dx);
                let h22 = d4(&|q| jac[l.idx(i, q)][a][1], l.ny, j, l.dy);
                let m1 = d4(&|q| jac[l.idx(i, q)][a][0], l.ny, j, l.dy);
                let m2 = d4(&|q| jac[l.idx(q, j)][a][1], l.nx, i, l.dx);
                hess[k][0][a] = h11;
                hess[k][1][a] = 0.5 * (m1 + m2);
                hess[k][2][a] = h22;
                mixed_defect[k] = mixed_defect[k].max((m1 - m2).abs());
            }
        }
    }
    let mut g = vec![[[0.0; 2]; 2]; n];
    let mut gamma = vec![[[[0.0; 2]; 2]; 2]; n];
    let mut omega = vec![0.0; n];
    let mut pi_diag = vec![[0.0; 2]; n];
    let mut kappa = vec![0.0; n];
    let mut normal = vec![[0.0; 3]; n];
    let mut point = vec![[0.0; 3]; n];
    let mut sign = 0.0;
    for k in 0..n {
        let geo = local_geometry(surf, u[k])?;
        let jm = jac[k];
        let jt = [[jm[0][0], jm[1][0]], [jm[0][1], jm[1][1]]];
        g[k] = mm2(jt, mm2(geo.g, jm));
        let p = mm2(jt, mm2(geo.pi, jm));
        omega[k] = 0.5 * (p[0][1] + p[1][0]);
        pi_diag[k] = [p[0][0], p[1][1]];
        kappa[k] = geo.kappa;
        normal[k] = geo.n;
        point[k] = geo.r;
        let dj = det2(jm);
        let sg = dj.signum();
        if dj == 0.0 || (sign != 0.0 && sg != sign) {
            let (i, j) = (k % l.nx, k / l.nx);
            return Err(Error::ExtentTooLarge(format!("chart folds near ({:.4}, {:.4})", l.x(i), l.y(j))));
        }
        sign = sg;
        let jinv = inv2(jm).ok_or_else(|| Error::ExtentTooLarge("singular Jacobian".into()))?;
        let hh = |i: usize, jj: usize| -> V2f {
            match (i, jj) {
                (0, 0) => hess[k][0],
                (1, 1) => hess[k][2],
                _ => hess[k][1],
            }
        };
        for i in 0..2 {
            for jj in 0..2 {
                let mut v = hh(i, jj);
                for c in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            v[c] += geo.gamma[c][a][b] * jm[a][i] * jm[b][jj];
                        }
                    }
                }
                let w = mv2(jinv, v);
                gamma[k][0][i][jj] = w[0];
                gamma[k][1][i][jj] = w[1];
            }
        }
        if omega[k].abs() < 1e-8 {
            let (i, j) = (k % l.nx, k / l.nx);
            return Err(Error::DegenerateChart(format!("ω ≈ 0 at ({:.4}, {:.4})", l.x(i), l.y(j))));
        }
    }
    Ok(AsymptoticChart {
        surface,
        lattice,
        u,
        jac,
        hess,
        mixed_defect,
        g,
        gamma,
        omega,
        pi_diag,
        kappa,
        normal,
        point,
        anchor,
        step,
        steps,
        orientation: sign,
        swapped: false,
    })
}

// ---------------------------------------------------------------- queries

impl AsymptoticChart {
    pub fn x(&self, i: usize, j: usize) -> V2f {
        [self.lattice.x(i), self.lattice.y(j)]
    }

    /// Local geometry of the surface at node `k`.
    pub fn geometry(&self, k: usize) -> LocalGeometry<f64> {
        local_geometry_unchecked(self.surface.as_ref(), self.u[k])
    }

    /// Ambient coordinate vectors `(∂x1, ∂x2)` at node `k`.
    pub fn frame(&self, k: usize) -> [V3f; 2] {
        let geo = self.geometry(k);
        let jm = self.jac[k];
        [geo.ambient([jm[0][0], jm[1][0]]), geo.ambient([jm[0][1], jm[1][1]])]
    }

    fn cell(&self, x: V2f) -> Option<(usize, usize, f64, f64)> {
        let l = &self.lattice;
        let a = (x[0] - l.x0) / l.dx;
        let b = (x[1] - l.y0) / l.dy;
        let eps = 1e-9;
        if !(a >= -eps && b >= -eps && a <= (l.nx - 1) as f64 + eps && b <= (l.ny - 1) as f64 + eps) {
            return None;
        }
        let i = (a.floor().max(0.0) as usize).min(l.nx - 2);
        let j = (b.floor().max(0.0) as usize).min(l.ny - 2);
        Some((i, j, a - i as f64, b - j as f64))
    }

    /// `ψ⁻¹(x)` and its Jacobian by bicubic Hermite interpolation.
    pub fn param_at(&self, x: V2f) -> Option<(V2f, M2f)> {
        let (i, j, s, t) = self.cell(x)?;
        let l = &self.lattice;
        let ks = [l.idx(i, j), l.idx(i + 1, j), l.idx(i, j + 1), l.idx(i + 1, j + 1)];
        let mut u = [0.0; 2];
        let mut jm = [[0.0; 2]; 2];
        for a in 0..2 {
            let c: [HermiteCorner; 4] = std::array::from_fn(|q| {
                let k = ks[q];
                [self.u[k][a], self.jac[k][a][0], self.jac[k][a][1], self.hess[k][1][a]]
            });
            let v = bicubic_hermite(&c, l.dx, l.dy, s, t);
            u[a] = v[0];
            jm[a] = [v[1], v[2]];
        }
        Some((u, jm))
    }

    /// `ψ(u)` by Newton on the interpolated inverse.
    pub fn coords_of(&self, u: V2f) -> Option<V2f> {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (k, p) in self.u.iter().enumerate() {
            let d = (p[0] - u[0]).powi(2) + (p[1] - u[1]).powi(2);
            if d < bd {
                bd = d;
                best = k;
            }
        }
        let l = &self.lattice;
        let mut x = [l.x(best % l.nx), l.y(best / l.nx)];
        let (lo, hi) = ([l.x0, l.y0], [l.x(l.nx - 1), l.y(l.ny - 1)]);
        for _ in 0..50 {
            let (p, jm) = self.param_at(x)?;
            let r = [p[0] - u[0], p[1] - u[1]];
            let d = mv2(inv2(jm)?, r);
            x = [x[0] - d[0], x[1] - d[1]];
            for a in 0..2 {
                let slack = 1e-9 * (hi[a] - lo[a]);
                x[a] = x[a].clamp(lo[a] - slack, hi[a] + slack);
            }
            if d[0].abs() + d[1].abs() < 1e-14 * (1.0 + x[0].abs() + x[1].abs()) {
                break;
            }
        }
        let (p, _) = self.param_at(x)?;
        let scale = 1.0 + u[0].abs() + u[1].abs();
        if (p[0] - u[0]).abs() + (p[1] - u[1]).abs() > 1e-9 * scale {
            return None;
        }
        Some(x)
    }

    fn field(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.lattice.len()).map(f).collect()
    }

    fn interp(&self, f: impl Fn(usize) -> f64, x: V2f) -> Option<f64> {
        interp_cubic(&self.lattice, &self.field(f), x)
    }

    /// Interpolated metric `g_ij(x)`.
    pub fn metric_at(&self, x: V2f) -> Option<M2f> {
        let (_, jm) = self.param_at(x)?;
        let u = self.param_at(x)?.0;
        let geo = local_geometry(self.surface.as_ref(), u).ok()?;
        let jt = [[jm[0][0], jm[1][0]], [jm[0][1], jm[1][1]]];
        Some(mm2(jt, mm2(geo.g, jm)))
    }

    pub fn omega_at(&self, x: V2f) -> Option<f64> {
        self.interp(|k| self.omega[k], x)
    }

    pub fn christoffel_at(&self, x: V2f) -> Option<[[[f64; 2]; 2]; 2]> {
        let mut out = [[[0.0; 2]; 2]; 2];
        for (kk, o) in out.iter_mut().enumerate() {
            for (i, oi) in o.iter_mut().enumerate() {
                for (j, oij) in oi.iter_mut().enumerate() {
                    *oij = self.interp(|k| self.gamma[k][kk][i][j], x)?;
                }
            }
        }
        Some(out)
    }

    /// Coordinate box of the chart.
    pub fn bounds(&self) -> (V2f, V2f) {
        let l = &self.lattice;
        ([l.x0, l.y0], [l.x(l.nx - 1), l.y(l.ny - 1)])
    }

    pub fn diagnostics(&self) -> ChartDiagnostics {
        let l = &self.lattice;
        let mut d = ChartDiagnostics { min_abs_omega: f64::INFINITY, min_abs_det_j: f64::INFINITY, ..Default::default() };
        for k in 0..l.len() {
            let w = self.omega[k];
            d.asymptotic_residual = d.asymptotic_residual.max(self.pi_diag[k][0].abs().max(self.pi_diag[k][1].abs()) / w.abs());
            d.kappa_identity = d.kappa_identity.max((w * w + self.kappa[k] * det2(self.g[k])).abs() / (w * w));
            d.min_abs_omega = d.min_abs_omega.min(w.abs());
            d.max_mixed_defect = d.max_mixed_defect.max(self.mixed_defect[k]);
            d.min_abs_det_j = d.min_abs_det_j.min(det2(self.jac[k]).abs());
        }
        d.metric_compatibility = self.metric_compatibility();
        let (lo, hi) = self.bounds();
        for (t, u) in self.anchor.t.iter().zip(&self.anchor.u) {
            let x = [*t, -*t];
            if x[0] < lo[0] || x[0] > hi[0] || x[1] < lo[1] || x[1] > hi[1] {
                continue;
            }
            let err = match self.coords_of(*u) {
                Some(y) => (y[0] - x[0]).abs().max((y[1] - x[1]).abs()),
                None => f64::INFINITY,
            };
            d.anchor_normalization = d.anchor_normalization.max(err);
        }
        d
    }

    /// `max |∂k g_ij − Γ^l_ki g_lj − Γ^l_kj g_il|` over nodes two away from
    /// the boundary.
    pub fn metric_compatibility(&self) -> f64 {
        let l = &self.lattice;
        let mut worst: f64 = 0.0;
        for j in 2..l.ny.saturating_sub(2) {
            for i in 2..l.nx.saturating_sub(2) {
                let k = l.idx(i, j);
                let gam = &self.gamma[k];
                let g = &self.g[k];
                for kk in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            let dg = if kk == 0 {
                                d4(&|q| self.g[l.idx(q, j)][a][b], l.nx, i, l.dx)
                            } else {
                                d4(&|q| self.g[l.idx(i, q)][a][b], l.ny, j, l.dy)
                            };
                            let mut r = dg;
                            for m in 0..2 {
                                r -= gam[m][kk][a] * g[m][b] + gam[m][kk][b] * g[a][m];
                            }
                            worst = worst.max(r.abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Every `m`-th node (node data copied, not recomputed). Needs
    /// `(n − 1) % m == 0` in both directions.
    pub fn subsampled(&self, m: usize) -> Result<AsymptoticChart> {
        let l = &self.lattice;
        if m == 0 || (l.nx - 1) % m != 0 || (l.ny - 1) % m != 0 || (l.nx - 1) / m < 4 || (l.ny - 1) / m < 4 {
            return Err(Error::Invalid(format!("cannot subsample a {}×{} chart by {m}", l.nx, l.ny)));
        }
        let nl = Lattice { x0: l.x0, y0: l.y0, dx: l.dx * m as f64, dy: l.dy * m as f64, nx: (l.nx - 1) / m + 1, ny: (l.ny - 1) / m + 1 };
        let map: Vec<usize> = (0..nl.len()).map(|k| l.idx((k % nl.nx) * m, (k / nl.nx) * m)).collect();
        fn pick<T: Copy>(v: &[T], map: &[usize]) -> Vec<T> {
            map.iter().map(|&k| v[k]).collect()
        }
        Ok(AsymptoticChart {
            surface: self.surface.clone(),
            lattice: nl,
            u: pick(&self.u, &map),
            jac: pick(&self.jac, &map),
            hess: pick(&self.hess, &map),
            mixed_defect: pick(&self.mixed_defect, &map),
            g: pick(&self.g, &map),
            gamma: pick(&self.gamma, &map),
            omega: pick(&self.omega, &map),
            pi_diag: pick(&self.pi_diag, &map),
            kappa: pick(&self.kappa, &map),
            normal: pick(&self.normal, &map),
            point: pick(&self.point, &map),
            anchor: self.anchor.clone(),
            step: self.step,
            steps: self.steps,
            orientation: self.orientation,
            swapped: self.swapped,
        })
    }

    /// The reoriented chart `ψ̂ = (−x2, −x1)`; it keeps the anchor
    /// normalization and flips the orientation.
    pub fn swapped(&self) -> AsymptoticChart {
        let l = &self.lattice;
        let nl = Lattice { x0: -l.y(l.ny - 1), y0: -l.x(l.nx - 1), dx: l.dy, dy: l.dx, nx: l.ny, ny: l.nx };
        let old = |ip: usize, jp: usize| l.idx(l.nx - 1 - jp, l.ny - 1 - ip);
        let n = nl.len();
        let mut c = self.clone();
        c.lattice = nl;
        c.swapped = !self.swapped;
        c.orientation = -self.orientation;
        let sw = |v: usize| 1 - v;
        for jp in 0..nl.ny {
            for ip in 0..nl.nx {
                let k = nl.idx(ip, jp);
                let o = old(ip, jp);
                c.u[k] = self.u[o];
                let jm = self.jac[o];
                c.jac[k] = [[-jm[0][1], -jm[0][0]], [-jm[1][1], -jm[1][0]]];
                let hs = self.hess[o];
                c.hess[k] = [hs[2], hs[1], hs[0]];
                c.mixed_defect[k] = self.mixed_defect[o];
                let g = self.g[o];
                c.g[k] = [[g[1][1], g[1][0]], [g[0][1], g[0][0]]];
                for m in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            c.gamma[k][m][i][j] = -self.gamma[o][sw(m)][sw(i)][sw(j)];
                        }
                    }
                }
                c.omega[k] = self.omega[o];
                c.pi_diag[k] = [self.pi_diag[o][1], self.pi_diag[o][0]];
                c.kappa[k] = self.kappa[o];
                c.normal[k] = self.normal[o];
                c.point[k] = self.point[o];
            }
        }
        debug_assert_eq!(c.u.len(), n);
        c
    }

    /// Pulls back a symmetric tensor field given in surface parameters:
    /// returns `(T11, T12, T22)` per node, `T_ij = T(∂xi, ∂xj)`.
    pub fn pullback_tensor(&self, t: impl Fn(V2f) -> M2f) -> Vec<[f64; 3]> {
        (0..self.lattice.len())
            .map(|k| {
                let jm = self.jac[k];
                let jt = [[jm[0][0], jm[1][0]], [jm[0][1], jm[1][1]]];
                let m = mm2(jt, mm2(t(self.u[k]), jm));
                [m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]]
            })
            .collect()
    }

    /// As [`Self::pullback_tensor`] for an ambient 3×3 tensor evaluated at
    /// surface points: `T_ij = ⟨∂xi, T ∂xj⟩`.
    pub fn pullback_ambient(&self, t: impl Fn(V3f) -> [[f64; 3]; 3]) -> Vec<[f64; 3]> {
        (0..self.lattice.len())
            .map(|k| {
                let f = self.frame(k);
                let m = t(self.point[k]);
                let tv = |v: V3f| -> V3f { std::array::from_fn(|r| dot3(m[r], v)) };
                let a = dot3(f[0], tv(f[0]));
                let b = 0.5 * (dot3(f[0], tv(f[1])) + dot3(f[1], tv(f[0])));
                let c = dot3(f[1], tv(f[1]));
                [a, b, c]
            })
            .collect()
    }

    /// Chart components of a surface tangent vector `X` (parameter
    /// components) based at `u`.
    pub fn to_chart(&self, u: V2f, x: V2f) -> Option<(V2f, V2f)> {
        let y = self.coords_of(u)?;
        let (_, jm) = self.param_at(y)?;
        Some((y, mv2(inv2(jm)?, x)))
    }
}

// ---------------------------------------------------------------- transversal curves

/// A transversal curve brought to the normal form `β1′ > 0`, `β2′ > 0`.
#[derive(Clone, Debug)]
pub struct NormalForm {
    pub curve: PlanarCurve,
    /// True when the form holds only in the swapped chart.
    pub swapped: bool,
    /// `χ(γ′(0), β′(0)) = sign det(γ′, β′, n)` at the meeting point.
    pub chi: f64,
}

/// Increasing planar curve through samples with known tangents (cubic
/// Hermite on each interval).
fn hermite_curve(t: Vec<f64>, x1: Vec<f64>, x2: Vec<f64>, d: Vec<V2f>) -> Result<PlanarCurve> {
    let data = Arc::new((t, [x1, x2], d));
    let locate = |data: &(Vec<f64>, [Vec<f64>; 2], Vec<V2f>), s: f64| -> (usize, f64, f64) {
        let t = &data.0;
        let k = t.partition_point(|v| *v <= s).clamp(1, t.len() - 1) - 1;
        let h = t[k + 1] - t[k];
        (k, h, (s - t[k]) / h)
    };
    let (ta, tb) = (data.0[0], *data.0.last().unwrap());
    let dp = data.clone();
    let pos = move |s: f64| -> V2f {
        let (k, h, u) = locate(&dp, s);
        let (u2, u3) = (u * u, u * u * u);
        let b = [2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, -2.0 * u3 + 3.0 * u2, u3 - u2];
        std::array::from_fn(|i| b[0] * dp.1[i][k] + b[1] * h * dp.2[k][i] + b[2] * dp.1[i][k + 1] + b[3] * h * dp.2[k + 1][i])
    };
    let dd = data;
    let der = move |s: f64| -> V2f {
        let (k, h, u) = locate(&dd, s);
        let u2 = u * u;
        let b = [6.0 * u2 - 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 2.0 * u];
        std::array::from_fn(|i| (b[0] * dd.1[i][k] + b[2] * dd.1[i][k + 1]) / h + b[1] * dd.2[k][i] + b[3] * dd.2[k + 1][i])
    };
    PlanarCurve::new(ta, tb, Monotonicity::Increasing, pos, der)
}

/// Expresses `beta` in chart coordinates and checks the normal form; when
/// both components decrease, the result is taken in the swapped chart. `β`
/// must satisfy `β(0) ∈ anchor` and `Π(γ′(0), β′(0)) = 0`.
pub fn transversal_normal_form(chart: &AsymptoticChart, beta: &CurveOnSurface<f64>) -> Result<NormalForm> {
    if !(beta.a <= 0.0 && beta.b >= 0.0) {
        return Err(Error::Invalid("β must be parametrized over an interval containing 0".into()));
    }
    let m = 257;
    let mut t = Vec::with_capacity(m);
    let mut x1 = Vec::with_capacity(m);
    let mut x2 = Vec::with_capacity(m);
    let mut dx = Vec::with_capacity(m);
    let mut signs = [0i32; 2];
    let surf = chart.surface.as_ref();
    for q in 0..m {
        let s = beta.a + (beta.b - beta.a) * q as f64 / (m - 1) as f64;
        let (y, d) = chart
            .to_chart(beta.at(s), beta.tangent(s))
            .ok_or_else(|| Error::NotTransversal(format!("β({s:.4}) leaves the chart")))?;
        let nrm = d[0].abs() + d[1].abs();
        if d[0].abs() <= 1e-8 * nrm || d[1].abs() <= 1e-8 * nrm {
            return Err(Error::Characteristic);
        }
        let sg = [d[0].signum() as i32, d[1].signum() as i32];
        if q == 0 {
            signs = sg;
        } else if sg != signs {
            return Err(Error::NotTransversal(format!("component signs change at s = {s:.4}")));
        }
        t.push(s);
        x1.push(y[0]);
        x2.push(y[1]);
        dx.push(d);
    }
    // meeting point checks
    let (y0, d0) = chart.to_chart(beta.at(0.0), beta.tangent(0.0)).ok_or(Error::Internal("β(0) left the chart".into()))?;
    let scale = chart.lattice.dx.max(chart.lattice.dy);
    if (y0[0] + y0[1]).abs() > 1e-6 * (1.0 + scale) {
        return Err(Error::Invalid("β(0) does not lie on the anchor".into()));
    }
    if (d0[0] - d0[1]).abs() > 1e-6 * (d0[0].abs() + d0[1].abs()) {
        return Err(Error::Invalid("β′(0) is not Π-orthogonal to the anchor".into()));
    }
    let geo = local_geometry(surf, beta.at(0.0))?;
    let (_, jm) = chart.param_at(y0).ok_or(Error::Internal("β(0) left the chart".into()))?;
    let gp = geo.ambient([jm[0][0] - jm[0][1], jm[1][0] - jm[1][1]]);
    let chi = det3(gp, geo.ambient(beta.tangent(0.0)), geo.n).signum();
    match signs {
        [1, 1] => Ok(NormalForm { curve: hermite_curve(t, x1, x2, dx)?, swapped: false, chi }),
        [-1, -1] => {
            // ψ̂∘β = (−x2, −x1) increases in both components
            let y1: Vec<f64> = x2.iter().map(|v| -v).collect();
            let y2: Vec<f64> = x1.iter().map(|v| -v).collect();
            let dy: Vec<V2f> = dx.iter().map(|d| [-d[1], -d[0]]).collect();
            Ok(NormalForm { curve: hermite_curve(t, y1, y2, dy)?, swapped: true, chi })
        }
        _ => Err(Error::NotTransversal(format!("component signs {signs:?}"))),
    }
}

/// `ϱ(X) Q∇n X` at surface parameter `u` in chart components.
pub fn rho_q_shape_chart(chart: &AsymptoticChart, u: V2f, x_chart: V2f) -> Result<V2f> {
    let y = chart.coords_of(u).ok_or_else(|| Error::Invalid("point outside the chart".into()))?;
    let (_, jm) = chart.param_at(y).ok_or_else(|| Error::Invalid("point outside the chart".into()))?;
    let geo = local_geometry(chart.surface.as_ref(), u)?;
    let v = rho_q_shape(&geo, mv2(jm, x_chart))?;
    let inv = inv2(jm).ok_or_else(|| Error::DegenerateChart("singular Jacobian".into()))?;
    Ok(mv2(inv, v))
}
