//! Thin-shell rigidity checks and the Korn scaling experiment.
//!
//! The shell is `Ω = {r(u) + t n(u) : u ∈ box, |t| < h/2}` over a parameter
//! box of a surface, clamped on the lateral boundary. Displacements are
//! expanded in Cartesian components as sine modes in `u` times Legendre
//! polynomials of degree ≤ 2 in `t`; the largest ratio
//! `‖∇y‖² / ‖sym ∇y‖²` over that space is a generalized eigenvalue of two
//! Gram matrices.
//!
//! The module also evaluates the pointwise identities linking the 3D
//! gradient of `y = W + w n` to surface quantities, the divergence identity
//! for `w i(W) Π`, and empirical constants of the surface rigidity
//! estimates.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::small::*;
use crate::strain::TrigField;
use crate::surface::{local_geometry, LocalGeometry, Surface};

type V2f = [f64; 2];
type V3f = [f64; 3];
type M2f = [[f64; 2]; 2];
type M3f = [[f64; 3]; 3];

// ------------------------------------------------------------ geometry bits

/// `∂_i n` as ambient vectors.
fn normal_derivs(geo: &LocalGeometry<f64>) -> [V3f; 2] {
    [geo.ambient(geo.shape([1.0, 0.0])), geo.ambient(geo.shape([0.0, 1.0]))]
}

/// Largest principal curvature magnitude at `geo`.
fn max_principal(geo: &LocalGeometry<f64>) -> f64 {
    let s = mm2(geo.g_inv, geo.pi);
    let tr = s[0][0] + s[1][1];
    let det = det2(s);
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr).abs() + disc
}

/// Columns of the differential of `(u, t) ↦ r(u) + t n(u)`.
fn shell_jacobian(geo: &LocalGeometry<f64>, t: f64) -> [V3f; 3] {
    let dn = normal_derivs(geo);
    [comb3(1.0, geo.ru[0], t, dn[0]), comb3(1.0, geo.ru[1], t, dn[1]), geo.n]
}

/// `J⁻ᵀ d` for `J` with columns `c`: Cartesian gradient from `(u, t)` partials.
fn inv_transpose_apply(c: &[V3f; 3], det: f64, d: V3f) -> V3f {
    let r0 = cross(c[1], c[2]);
    let r1 = cross(c[2], c[0]);
    let r2 = cross(c[0], c[1]);
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = (d[0] * r0[a] + d[1] * r1[a] + d[2] * r2[a]) / det;
    }
    out
}

fn frob(m: &M3f) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

fn sym3(m: &M3f) -> M3f {
    let mut s = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            s[a][b] = 0.5 * (m[a][b] + m[b][a]);
        }
    }
    s
}

// ------------------------------------------------------------ shell model

/// A clamped shell over a parameter box: `y = 0` on `∂S × (−h/2, h/2)`.
#[derive(Clone)]
pub struct ShellModel {
    pub surface: Arc<dyn Surface<f64>>,
    pub lo: V2f,
    pub hi: V2f,
    pub h: f64,
    /// Trapezoid nodes per parameter direction.
    pub nq: usize,
}

impl std::fmt::Debug for ShellModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShellModel").field("surface", &self.surface.name()).field("lo", &self.lo).field("hi", &self.hi).field("h", &self.h).field("nq", &self.nq).finish()
    }
}

/// Three-point Gauss rule on `(−h/2, h/2)`.
pub fn transverse_rule(h: f64) -> [(f64, f64); 3] {
    let x = (0.6f64).sqrt() * 0.5 * h;
    [(-x, 5.0 / 18.0 * h), (0.0, 8.0 / 18.0 * h), (x, 5.0 / 18.0 * h)]
}

impl ShellModel {
    /// Checks the box and that `h/2 · |k| < 1` at every quadrature node, so
    /// the normal map is injective there. `nq` defaults to enough nodes for
    /// [`modes_for`] modes after one basis doubling.
    pub fn new(surface: Arc<dyn Surface<f64>>, lo: V2f, hi: V2f, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(hi[0] > lo[0]) || !(hi[1] > lo[1]) {
            return Err(Error::Invalid(format!("shell box {lo:?}..{hi:?} with h = {h}")));
        }
        let k = modes_for(h, lo, hi);
        let shell = ShellModel { surface, lo, hi, h, nq: 4 * k + 9 };
        shell.check_thickness()?;
        Ok(shell)
    }

    pub fn with_nodes(mut self, nq: usize) -> Result<Self> {
        if nq < 3 {
            return Err(Error::Invalid(format!("{nq} quadrature nodes")));
        }
        self.nq = nq;
        self.check_thickness()?;
        Ok(self)
    }

    fn check_thickness(&self) -> Result<()> {
        for (u, _) in self.surface_rule() {
            let geo = local_geometry(self.surface.as_ref(), u)?;
            let v = 0.5 * self.h * max_principal(&geo);
            if v >= 1.0 {
                return Err(Error::InvalidShell(v));
            }
        }
        Ok(())
    }

    /// Trapezoid nodes and weights on the box.
    pub fn surface_rule(&self) -> Vec<(V2f, f64)> {
        let n = self.nq;
        let d = [(self.hi[0] - self.lo[0]) / (n - 1) as f64, (self.hi[1] - self.lo[1]) / (n - 1) as f64];
        let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                out.push(([self.lo[0] + i as f64 * d[0], self.lo[1] + j as f64 * d[1]], w(i) * w(j) * d[0] * d[1]));
            }
        }
        out
    }

    pub fn extent(&self) -> V2f {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]]
    }
}

/// Sine modes per direction: the shortest wavelength `2L/k` on the longer
/// side `L` is at most `2h^{1/3}/9`. Half that count already resolves
/// `h^{1/3}/2`; the extra factor is what it takes for `λmax` to move by less
/// than 2% when the dimension is halved, for `h ≥ 0.05` on the test strips.
pub fn modes_for(h: f64, lo: V2f, hi: V2f) -> usize {
    let l = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    (9.0 * l / h.cbrt()).ceil().max(2.0) as usize
}

// ------------------------------------------------------------ basis

/// Clamped polynomial-sine basis with `k` modes per direction: scalar
/// functions `sin((m+1)πξ1) sin((n+1)πξ2) P_j(2t/h)`, `j ≤ 2`, times each
/// Cartesian unit vector. Coefficient index
/// `c·3k² + j·k² + m·k + n` for component `c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KornBasis {
    pub k: usize,
}

impl KornBasis {
    pub fn scalar_dim(&self) -> usize {
        3 * self.k * self.k
    }

    pub fn dim(&self) -> usize {
        3 * self.scalar_dim()
    }

    /// Scalar values and `(u1, u2, t)` partials at a point.
    fn scalars(&self, shell: &ShellModel, u: V2f, t: f64) -> (Vec<f64>, Vec<V3f>) {
        let k = self.k;
        let ext = shell.extent();
        let xi = [(u[0] - shell.lo[0]) / ext[0], (u[1] - shell.lo[1]) / ext[1]];
        let mut s = [vec![0.0; k], vec![0.0; k]];
        let mut ds = [vec![0.0; k], vec![0.0; k]];
        for a in 0..2 {
            for m in 0..k {
                let w = (m + 1) as f64 * PI;
                s[a][m] = (w * xi[a]).sin();
                ds[a][m] = w * (w * xi[a]).cos() / ext[a];
            }
        }
        let tau = 2.0 * t / shell.h;
        let p = [1.0, tau, 0.5 * (3.0 * tau * tau - 1.0)];
        let dp = [0.0, 2.0 / shell.h, 6.0 * tau / shell.h];
        let mut v = Vec::with_capacity(self.scalar_dim());
        let mut d = Vec::with_capacity(self.scalar_dim());
        for j in 0..3 {
            for m in 0..k {
                for n in 0..k {
                    v.push(s[0][m] * s[1][n] * p[j]);
                    d.push([ds[0][m] * s[1][n] * p[j], s[0][m] * ds[1][n] * p[j], s[0][m] * s[1][n] * dp[j]]);
                }
            }
        }
        (v, d)
    }

    /// `y` and its Cartesian gradient `G[c][a] = ∂y_a/∂z_c` at `(u, t)`.
    pub fn evaluate(&self, shell: &ShellModel, coeffs: &[f64], u: V2f, t: f64) -> Result<(V3f, M3f)> {
        if coeffs.len() != self.dim() {
            return Err(Error::Invalid(format!("{} coefficients for dimension {}", coeffs.len(), self.dim())));
        }
        let geo = local_geometry(shell.surface.as_ref(), u)?;
        let jac = shell_jacobian(&geo, t);
        let det = det3(jac[0], jac[1], jac[2]);
        let (v, d) = self.scalars(shell, u, t);
        let ns = self.scalar_dim();
        let mut y = [0.0; 3];
        let mut g = [[0.0; 3]; 3];
        for mu in 0..ns {
            let gc = inv_transpose_apply(&jac, det, d[mu]);
            for a in 0..3 {
                let c = coeffs[a * ns + mu];
                if c != 0.0 {
                    y[a] += c * v[mu];
                    for cc in 0..3 {
                        g[cc][a] += c * gc[cc];
                    }
                }
            }
        }
        Ok((y, g))
    }
}

/// Norms of one displacement on the shell, by the same quadrature as the
/// Gram matrices.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShellNorms {
    /// `‖∇y‖²`
    pub grad: f64,
    /// `‖sym ∇y‖²`
    pub sym: f64,
    /// `‖y‖²`
    pub l2: f64,
    /// `‖⟨y, n⟩‖²` with `n` constant along normals.
    pub normal: f64,
}

pub fn shell_norms(shell: &ShellModel, basis: KornBasis, coeffs: &[f64]) -> Result<ShellNorms> {
    let mut out = ShellNorms { grad: 0.0, sym: 0.0, l2: 0.0, normal: 0.0 };
    let rule = transverse_rule(shell.h);
    for (u, wu) in shell.surface_rule() {
        let geo = local_geometry(shell.surface.as_ref(), u)?;
        for &(t, wt) in &rule {
            let jac = shell_jacobian(&geo, t);
            let w = wu * wt * det3(jac[0], jac[1], jac[2]);
            let (y, g) = basis.evaluate(shell, coeffs, u, t)?;
            out.grad += w * frob(&g);
            out.sym += w * frob(&sym3(&g));
            out.l2 += w * dot3(y, y);
            out.normal += w * dot3(y, geo.n).powi(2);
        }
    }
    Ok(out)
}

/// Gram matrices `A(y, y) = ‖∇y‖²` and `B(y, y) = ‖sym ∇y‖²` on the basis.
#[derive(Clone, Debug)]
pub struct Gram {
    pub basis: KornBasis,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Assembles both Gram matrices.
///
/// For a scalar mode `φ` times the unit vector `e_b`, `∇y = ∇φ ⊗ e_b`, so
/// every entry reduces to the nine products `T_cd = Σ w ∂_cφ ∂_dψ`:
/// `A = I ⊗ tr T` and the `(b, b′)` block of `B` is `½ δ tr T + ½ T_{b′b}`.
pub fn assemble_gram(shell: &ShellModel, basis: KornBasis) -> Result<Gram> {
    if shell.nq < 2 * basis.k + 8 {
        return Err(Error::Invalid(format!("{} quadrature nodes cannot resolve {} modes", shell.nq, basis.k)));
    }
    let ns = basis.scalar_dim();
    let rule = transverse_rule(shell.h);
    let pts = shell.surface_rule();
    let rows = pts.len() * rule.len();
    let mut g = [DMatrix::<f64>::zeros(rows, ns), DMatrix::<f64>::zeros(rows, ns), DMatrix::<f64>::zeros(rows, ns)];
    for (q, (u, wu)) in pts.iter().enumerate() {
        let geo = local_geometry(shell.surface.as_ref(), *u)?;
        for (ti, &(t, wt)) in rule.iter().enumerate() {
            let row = q * rule.len() + ti;
            let jac = shell_jacobian(&geo, t);
            let det = det3(jac[0], jac[1], jac[2]);
            let sw = (wu * wt * det).sqrt();
            let (_, d) = basis.scalars(shell, *u, t);
            for (mu, dm) in d.iter().enumerate() {
                let gc = inv_transpose_apply(&jac, det, *dm);
                for c in 0..3 {
                    g[c][(row, mu)] = sw * gc[c];
                }
            }
        }
    }
    // explicit transposes so the products go through the blocked gemm kernel
    let gt: Vec<DMatrix<f64>> = g.iter().map(|m| m.transpose()).collect();
    let mut t = vec![DMatrix::<f64>::zeros(0, 0); 9];
    for c in 0..3 {
        for d in c..3 {
            t[3 * c + d] = &gt[c] * &g[d];
        }
    }
    for c in 0..3 {
        for d in 0..c {
            t[3 * c + d] = t[3 * d + c].transpose();
        }
    }
    let tr = &t[0] + &t[4] + &t[8];
    let n = basis.dim();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DMatrix::<f64>::zeros(n, n);
    for bb in 0..3 {
        a.view_mut((bb * ns, bb * ns), (ns, ns)).copy_from(&tr);
        for bp in 0..3 {
            let mut blk = 0.5 * &t[3 * bp + bb];
            if bb == bp {
                blk += 0.5 * &tr;
            }
            b.view_mut((bb * ns, bp * ns), (ns, ns)).copy_from(&blk);
        }
    }
    Ok(Gram { basis, a, b })
}

// ------------------------------------------------------------ eigenvalue

/// Largest generalized eigenpair of `A x = λ B x`.
#[derive(Clone, Debug)]
pub struct GeneralizedMax {
    pub lambda: f64,
    pub vector: DVector<f64>,
    /// `‖A x − λ B x‖ / ‖A x‖`.
    pub residual: f64,
    /// Directions removed because `B` vanishes on them.
    pub deflated: usize,
    pub iterations: usize,
}

/// `λmax(A, B)` for symmetric `A` and positive semidefinite `B`.
///
/// `B` is factored once (Cholesky, or an eigen-decomposition with null
/// directions removed when that fails or is too ill-conditioned), and
/// Lanczos with full reorthogonalization runs on `L⁻¹ A L⁻ᵀ`. Each step is
/// one product with `A` and two triangular solves.
pub fn generalized_lambda_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedMax> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Invalid("Gram matrices must be square and of equal size".into()));
    }
    enum Whiten {
        Chol(DMatrix<f64>),
        Proj(DMatrix<f64>),
    }
    let chol = nalgebra::Cholesky::new(b.clone()).and_then(|c| {
        let l = c.l();
        let d = l.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v * v), hi.max(v * v)));
        (lo > 1e-13 * hi).then_some(l)
    });
    let (whiten, deflated) = match chol {
        Some(l) => (Whiten::Chol(l), 0),
        None => {
            let e = SymmetricEigen::new(b.clone());
            let top = e.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
            let keep: Vec<usize> = (0..n).filter(|&i| e.eigenvalues[i] > 1e-12 * top).collect();
            if keep.is_empty() {
                return Err(Error::Degenerate("B vanishes on the whole basis".into()));
            }
            let mut p = DMatrix::<f64>::zeros(n, keep.len());
            for (c, &i) in keep.iter().enumerate() {
                p.set_column(c, &(e.eigenvectors.column(i) / e.eigenvalues[i].sqrt()));
            }
            let r = keep.len();
            (Whiten::Proj(p), n - r)
        }
    };
    let m = match &whiten {
        Whiten::Chol(_) => n,
        Whiten::Proj(p) => p.ncols(),
    };
    let back = |z: &DVector<f64>| -> DVector<f64> {
        match &whiten {
            Whiten::Chol(l) => l.tr_solve_lower_triangular(z).expect("nonsingular factor"),
            Whiten::Proj(p) => p * z,
        }
    };
    let op = |z: &DVector<f64>| -> DVector<f64> {
        let x = back(z);
        let ax = a * x;
        match &whiten {
            Whiten::Chol(l) => l.solve_lower_triangular(&ax).expect("nonsingular factor"),
            Whiten::Proj(p) => p.tr_mul(&ax),
        }
    };

    // deterministic, generic start vector
    let mut q0 = DVector::from_fn(m, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin());
    q0 /= q0.norm();
    let mut qs: Vec<DVector<f64>> = vec![q0];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let cap = m.min(400);
    let mut best = (f64::NAN, DVector::<f64>::zeros(1), f64::INFINITY);
    for it in 0..cap {
        let mut v = op(&qs[it]);
        let al = qs[it].dot(&v);
        alpha.push(al);
        for _ in 0..2 {
            for q in &qs {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let bt = v.norm();
        let k = alpha.len();
        if k % 8 == 0 || bt < 1e-14 * al.abs().max(1.0) || k == cap {
            let mut tm = DMatrix::<f64>::zeros(k, k);
            for i in 0..k {
                tm[(i, i)] = alpha[i];
                if i + 1 < k {
                    tm[(i, i + 1)] = beta[i];
                    tm[(i + 1, i)] = beta[i];
                }
            }
            let e = SymmetricEigen::new(tm);
            let (imax, theta) = e.eigenvalues.iter().cloned().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let s = e.eigenvectors.column(imax).into_owned();
            let ritz_res = (bt * s[k - 1]).abs();
            best = (theta, s, ritz_res);
            if ritz_res <= 1e-12 * theta.abs() || bt < 1e-14 * al.abs().max(1.0) {
                break;
            }
        }
        if bt < 1e-300 {
            break;
        }
        beta.push(bt);
        qs.push(v / bt);
    }
    let (theta, s, _) = best;
    let mut z = DVector::<f64>::zeros(m);
    for (i, si) in s.iter().enumerate() {
        z.axpy(*si, &qs[i], 1.0);
    }
    let x = back(&z);
    let ax = a * &x;
    let r = &ax - theta * (b * &x);
    let residual = r.norm() / ax.norm().max(f64::MIN_POSITIVE);
    Ok(GeneralizedMax { lambda: theta, vector: x, residual, deflated, iterations: alpha.len() })
}

// ------------------------------------------------------------ quotient

/// One measured Korn constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotientRecord {
    pub h: f64,
    /// `max ‖∇y‖² / ‖sym ∇y‖²` over the basis.
    pub lambda_max: f64,
    pub dim: usize,
    pub modes: usize,
    pub residual: f64,
    pub deflated: usize,
    /// Relative change of `lambda_max` from the basis with about half the
    /// dimension, when measured.
    pub saturation: Option<f64>,
}

pub fn korn_quotient(shell: &ShellModel, modes: usize) -> Result<QuotientRecord> {
    let basis = KornBasis { k: modes };
    let gram = assemble_gram(shell, basis)?;
    let e = generalized_lambda_max(&gram.a, &gram.b)?;
    Ok(QuotientRecord { h: shell.h, lambda_max: e.lambda, dim: basis.dim(), modes, residual: e.residual, deflated: e.deflated, saturation: None })
}

/// [`korn_quotient`] at `modes` and at `modes/√2` (half the dimension),
/// recording the relative change.
pub fn korn_quotient_checked(shell: &ShellModel, modes: usize) -> Result<QuotientRecord> {
    let coarse = ((modes as f64) / 2f64.sqrt()).round().max(1.0) as usize;
    let lo = korn_quotient(shell, coarse)?;
    let mut hi = korn_quotient(shell, modes)?;
    hi.saturation = Some((hi.lambda_max - lo.lambda_max).abs() / hi.lambda_max);
    Ok(hi)
}

/// Least-squares line through `(log h, log λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits `log λmax` against `log h`. Needs at least four records spanning an
/// octave in `h`, each with a basis change below `max_change`.
pub fn fit_scaling(records: &[QuotientRecord], max_change: f64) -> Result<ScalingFit> {
    if records.len() < 4 {
        return Err(Error::Invalid(format!("{} records; at least 4 are needed", records.len())));
    }
    let (hmin, hmax) = records.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.h), b.max(r.h)));
    if !(hmax >= 2.0 * hmin * (1.0 - 1e-12)) {
        return Err(Error::Invalid(format!("thickness range {hmin}..{hmax} is below one octave")));
    }
    let bad: Vec<String> = records
        .iter()
        .filter(|r| r.saturation.map_or(true, |s| !(s < max_change)))
        .map(|r| format!("h = {}: change {:?}", r.h, r.saturation))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Unsaturated(bad.join("; ")));
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.h.ln(), r.lambda_max.ln())).collect();
    Ok(line_fit(&pts))
}

fn line_fit(pts: &[(f64, f64)]) -> ScalingFit {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    ScalingFit { slope, stderr, intercept, points: pts.len() }
}

// ------------------------------------------------------------ surface identities

/// Central difference of `f` along parameter axis `i`.
fn diff<const N: usize>(f: &dyn Fn(V2f) -> [f64; N], u: V2f, i: usize, step: f64) -> [f64; N] {
    let mut up = u;
    let mut um = u;
    up[i] += step;
    um[i] -= step;
    let (a, b) = (f(up), f(um));
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = (a[k] - b[k]) / (2.0 * step);
    }
    out
}

fn g_norm2(geo: &LocalGeometry<f64>, v: V2f) -> f64 {
    form2(geo.g_inv, v, v)
}

fn g_tensor2(geo: &LocalGeometry<f64>, a: &M2f, b: &M2f) -> f64 {
    let gi = geo.g_inv;
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    s += gi[i][k] * gi[j][l] * a[i][j] * b[k][l];
                }
            }
        }
    }
    s
}

/// `√g · V^i` for `V_j = w Π_jk W^k`, the flux of `w i(W) Π`.
fn pairing_flux(surface: &dyn Surface<f64>, field: &dyn Fn(V2f) -> [f64; 3], u: V2f) -> Result<V2f> {
    let geo = local_geometry(surface, u)?;
    let f = field(u);
    let wup = mv2(geo.g_inv, [f[0], f[1]]);
    let v = mv2(geo.pi, wup);
    let vup = mv2(geo.g_inv, [f[2] * v[0], f[2] * v[1]]);
    let sg = geo.det_g.sqrt();
    Ok([sg * vup[0], sg * vup[1]])
}

/// Both sides of `div_g[w i(W)Π] = Π(W, Dw) + w tr_g i(W)DΠ + w⟨Π, DW⟩` at
/// `u`, each by its own central differences with `step`. The field returns
/// covariant parameter components `(W_1, W_2, w)`.
pub fn divergence_identity_sides(surface: &dyn Surface<f64>, field: &dyn Fn(V2f) -> [f64; 3], u: V2f, step: f64) -> Result<(f64, f64)> {
    let geo = local_geometry(surface, u)?;
    // left: divergence of the flux
    let mut div = 0.0;
    for i in 0..2 {
        let mut up = u;
        let mut um = u;
        up[i] += step;
        um[i] -= step;
        div += (pairing_flux(surface, field, up)?[i] - pairing_flux(surface, field, um)?[i]) / (2.0 * step);
    }
    div /= geo.det_g.sqrt();

    // right: differentiate the ingredients
    let f = field(u);
    let wc = [f[0], f[1]];
    let w = f[2];
    let wup = mv2(geo.g_inv, wc);
    let d = [diff(field, u, 0, step), diff(field, u, 1, step)];
    let pi_at = |x: V2f| -> [f64; 4] {
        let p = local_geometry(surface, x).map(|g| g.pi).unwrap_or([[f64::NAN; 2]; 2]);
        [p[0][0], p[0][1], p[1][0], p[1][1]]
    };
    let dpi = [diff(&pi_at, u, 0, step), diff(&pi_at, u, 1, step)];
    let gam = geo.gamma;
    let pi = geo.pi;
    let gw = mv2(geo.g_inv, [d[0][2], d[1][2]]);
    let t1 = form2(pi, wup, gw);
    let mut t2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                let mut cov = dpi[i][2 * k + j];
                for l in 0..2 {
                    cov -= gam[l][i][k] * pi[l][j] + gam[l][i][j] * pi[k][l];
                }
                t2 += geo.g_inv[i][j] * wup[k] * cov;
            }
        }
    }
    let mut dw = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            dw[a][b] = d[a][b] - gam[0][a][b] * wc[0] - gam[1][a][b] * wc[1];
        }
    }
    let t3 = g_tensor2(&geo, &pi, &dw);
    if !(div.is_finite() && t1.is_finite() && t2.is_finite() && t3.is_finite()) {
        return Err(Error::Margin(u[0], u[1]));
    }
    Ok((div, t1 + w * t2 + w * t3))
}

/// Pointwise and integrated residuals of the divergence identity on a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub max_residual: f64,
    /// Largest `|div_g[w i(W)Π]|` on the grid, for scale.
    pub max_magnitude: f64,
    /// `∫_S div_g[w i(W)Π] dg`.
    pub interior: f64,
    /// `∮_{∂S} w Π(W, ν)`.
    pub boundary: f64,
    pub integrated_residual: f64,
}

/// Evaluates the identity at the `n × n` nodes of `[lo, hi]` and compares
/// the trapezoid integral of the divergence with the boundary flux.
pub fn divergence_identity_check(
    surface: &dyn Surface<f64>,
    field: &dyn Fn(V2f) -> [f64; 3],
    lo: V2f,
    hi: V2f,
    n: usize,
    step: f64,
) -> Result<DivergenceReport> {
    if n < 3 || !(hi[0] > lo[0] && hi[1] > lo[1]) || !(step > 0.0) {
        return Err(Error::Invalid(format!("divergence check on {lo:?}..{hi:?} with n = {n}, step = {step}")));
    }
    let d = [(hi[0] - lo[0]) / (n - 1) as f64, (hi[1] - lo[1]) / (n - 1) as f64];
    let wt = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let node = |i: usize, j: usize| [lo[0] + i as f64 * d[0], lo[1] + j as f64 * d[1]];
    let mut rep = DivergenceReport { max_residual: 0.0, max_magnitude: 0.0, interior: 0.0, boundary: 0.0, integrated_residual: 0.0 };
    for j in 0..n {
        for i in 0..n {
            let u = node(i, j);
            let (l, r) = divergence_identity_sides(surface, field, u, step)?;
            rep.max_residual = rep.max_residual.max((l - r).abs());
            rep.max_magnitude = rep.max_magnitude.max(l.abs());
            let sg = local_geometry(surface, u)?.det_g.sqrt();
            rep.interior += wt(i) * wt(j) * d[0] * d[1] * l * sg;
        }
    }
    for k in 0..n {
        let right = pairing_flux(surface, field, node(n - 1, k))?[0];
        let left = pairing_flux(surface, field, node(0, k))?[0];
        let top = pairing_flux(surface, field, node(k, n - 1))?[1];
        let bottom = pairing_flux(surface, field, node(k, 0))?[1];
        rep.boundary += wt(k) * ((right - left) * d[1] + (top - bottom) * d[0]);
    }
    rep.integrated_residual = (rep.interior - rep.boundary).abs();
    Ok(rep)
}

// ------------------------------------------------------------ shell identities

/// `y = W + w n` on a shell, with covariant parameter components
/// `(W_1, W_2, w)` at the foot point given as `Σ_j t^j f_j(u)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ShellDisplacement {
    pub parts: Vec<[TrigField; 3]>,
}

impl ShellDisplacement {
    pub fn zero() -> Self {
        ShellDisplacement { parts: Vec::new() }
    }

    /// Independent of `t`.
    pub fn surface(f: [TrigField; 3]) -> Self {
        ShellDisplacement { parts: vec![f] }
    }

    /// Random trigonometric coefficients for `t^0 … t^degree`.
    pub fn random(rng: &mut impl Rng, degree: usize, kmax: f64) -> Self {
        let mut one = || TrigField::random(rng, 3, kmax);
        ShellDisplacement { parts: (0..=degree).map(|_| [one(), one(), one()]).collect() }
    }

    pub fn values(&self, u: V2f, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, p) in self.parts.iter().enumerate() {
            let tj = t.powi(j as i32);
            for c in 0..3 {
                out[c] += tj * p[c].value(u);
            }
        }
        out
    }

    /// `∂_i` of each component: `[c][i]`.
    pub fn grads(&self, u: V2f, t: f64) -> [V2f; 3] {
        let mut out = [[0.0; 2]; 3];
        for (j, p) in self.parts.iter().enumerate() {
            let tj = t.powi(j as i32);
            for c in 0..3 {
                let g = p[c].grad(u);
                out[c][0] += tj * g[0];
                out[c][1] += tj * g[1];
            }
        }
        out
    }

    pub fn d_t(&self, u: V2f, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, p) in self.parts.iter().enumerate().skip(1) {
            let c0 = j as f64 * t.powi(j as i32 - 1);
            for c in 0..3 {
                out[c] += c0 * p[c].value(u);
            }
        }
        out
    }

    /// Ambient value at the shell point over `geo` at height `t`.
    pub fn ambient(&self, geo: &LocalGeometry<f64>, t: f64) -> V3f {
        let f = self.values(geo.u, t);
        let wup = mv2(geo.g_inv, [f[0], f[1]]);
        comb3(1.0, geo.ambient(wup), f[2], geo.n)
    }
}

/// `(u, t)` with `r(u) + t n(u) = z`, by Newton from `guess`.
pub fn shell_inverse(surface: &dyn Surface<f64>, z: V3f, guess: (V2f, f64)) -> Result<(V2f, f64)> {
    let (mut u, mut t) = guess;
    for _ in 0..50 {
        let geo = local_geometry(surface, u)?;
        let f = sub3(comb3(1.0, geo.r, t, geo.n), z);
        let c = shell_jacobian(&geo, t);
        let det = det3(c[0], c[1], c[2]);
        let r = [cross(c[1], c[2]), cross(c[2], c[0]), cross(c[0], c[1])];
        let dx = [dot3(r[0], f) / det, dot3(r[1], f) / det, dot3(r[2], f) / det];
        u = [u[0] - dx[0], u[1] - dx[1]];
        t -= dx[2];
        if dx.iter().all(|v| v.abs() <= 1e-15 * (1.0 + u[0].abs().max(u[1].abs()).max(t.abs()))) {
            return Ok((u, t));
        }
    }
    Err(Error::NearSingular(format!("normal map inversion did not converge near {u:?}, t = {t}")))
}

/// Both sides of the two pointwise norm identities for `y = W + w n` at
/// `(u, t)`:
/// `|∇y + t p(y)|² = |DW + wΠ|² + |Dw − i(W)Π|² + |W_t|² + w_t²` and
/// `|sym ∇y + t sym p(y)|² = |Υ|² + ½|X|² + w_t²` with
/// `X = Dw − i(W)Π + W_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellIdentityReport {
    pub grad_lhs: f64,
    pub grad_rhs: f64,
    pub sym_lhs: f64,
    pub sym_rhs: f64,
    pub grad_rel: f64,
    pub sym_rel: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Left sides from a 3D central-difference gradient of `y` with `step`
/// (through the inverse normal map), right sides from surface quantities.
pub fn shell_identity_check(surface: &dyn Surface<f64>, disp: &ShellDisplacement, u: V2f, t: f64, step: f64) -> Result<ShellIdentityReport> {
    let geo = local_geometry(surface, u)?;
    let tk = t.abs() * max_principal(&geo);
    if tk >= 1.0 {
        return Err(Error::InvalidShell(tk));
    }
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("difference step {step}")));
    }
    let z = comb3(1.0, geo.r, t, geo.n);
    let y_at = |p: V3f| -> Result<V3f> {
        let (uu, tt) = shell_inverse(surface, p, (u, t))?;
        Ok(disp.ambient(&local_geometry(surface, uu)?, tt))
    };
    let mut g = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut zp = z;
        let mut zm = z;
        zp[c] += step;
        zm[c] -= step;
        let (a, b) = (y_at(zp)?, y_at(zm)?);
        for k in 0..3 {
            g[c][k] = (a[k] - b[k]) / (2.0 * step);
        }
    }
    // S[a][c]: Cartesian components of ∇_{e_a} n, with ∇_n n = 0
    let mut s = [[0.0; 3]; 3];
    for a in 0..3 {
        let mut e = [0.0; 3];
        e[a] = 1.0;
        s[a] = geo.ambient(geo.shape(geo.components(e)));
    }
    let mut m = g;
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] += t * (0..3).map(|c| s[a][c] * g[c][b]).sum::<f64>();
        }
    }
    let grad_lhs = frob(&m);
    let sym_lhs = frob(&sym3(&m));

    let f = disp.values(u, t);
    let d = disp.grads(u, t);
    let ft = disp.d_t(u, t);
    let wc = [f[0], f[1]];
    let wup = mv2(geo.g_inv, wc);
    let mut dw = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            dw[i][j] = d[j][i] - geo.gamma[0][i][j] * wc[0] - geo.gamma[1][i][j] * wc[1];
        }
    }
    let mut theta = dw;
    let mut ups = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            theta[i][j] += f[2] * geo.pi[i][j];
            ups[i][j] = 0.5 * (dw[i][j] + dw[j][i]) + f[2] * geo.pi[i][j];
        }
    }
    let ipi = mv2(geo.pi, wup);
    let v = [d[2][0] - ipi[0], d[2][1] - ipi[1]];
    let wt = [ft[0], ft[1]];
    let x = [v[0] + wt[0], v[1] + wt[1]];
    let grad_rhs = g_tensor2(&geo, &theta, &theta) + g_norm2(&geo, v) + g_norm2(&geo, wt) + ft[2] * ft[2];
    let sym_rhs = g_tensor2(&geo, &ups, &ups) + 0.5 * g_norm2(&geo, x) + ft[2] * ft[2];
    Ok(ShellIdentityReport { grad_lhs, grad_rhs, sym_lhs, sym_rhs, grad_rel: rel(grad_lhs, grad_rhs), sym_rel: rel(sym_lhs, sym_rhs) })
}

// ------------------------------------------------------------ rigidity estimates

/// Parallelogram `α(t, s) = origin + t e1 + s e2`, `(t, s) ∈ [0, 1]²`, in
/// parameter space, with noncharacteristic sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRegion {
    pub origin: V2f,
    pub e1: V2f,
    pub e2: V2f,
}

impl ProbeRegion {
    /// Checks that `Π(e1, e1)` and `Π(e2, e2)` keep a strict sign along
    /// the sides they span.
    pub fn new(surface: &dyn Surface<f64>, origin: V2f, e1: V2f, e2: V2f) -> Result<Self> {
        let r = ProbeRegion { origin, e1, e2 };
        if det2([e1, e2]).abs() < 1e-12 {
            return Err(Error::Degenerate("region sides are parallel".into()));
        }
        for k in 0..=32 {
            let a = k as f64 / 32.0;
            for (p, e) in [(r.at(a, 0.0), e1), (r.at(a, 1.0), e1), (r.at(0.0, a), e2), (r.at(1.0, a), e2)] {
                let geo = local_geometry(surface, p)?;
                let pe = geo.pi_form(e, e);
                if pe.abs() <= 1e-8 * geo.g_dot(e, e) * (geo.pi[0][0].abs() + geo.pi[0][1].abs() + geo.pi[1][1].abs()) {
                    return Err(Error::Characteristic);
                }
            }
        }
        Ok(r)
    }

    pub fn at(&self, t: f64, s: f64) -> V2f {
        [self.origin[0] + t * self.e1[0] + s * self.e2[0], self.origin[1] + t * self.e1[1] + s * self.e2[1]]
    }

    /// Region coordinates of a parameter point.
    pub fn coords(&self, u: V2f) -> V2f {
        let d = det2([self.e1, self.e2]);
        let p = [u[0] - self.origin[0], u[1] - self.origin[1]];
        [(p[0] * self.e2[1] - p[1] * self.e2[0]) / d, (self.e1[0] * p[1] - self.e1[1] * p[0]) / d]
    }

    /// `field` multiplied by `sin(πt) sin(πs)`: vanishes on the whole
    /// boundary, so both the normal part and every tangential trace are zero.
    pub fn clamped<'a>(&'a self, field: &'a (dyn Fn(V2f) -> [f64; 3] + Sync)) -> impl Fn(V2f) -> [f64; 3] + Sync + 'a {
        move |u| {
            let c = self.coords(u);
            let b = (PI * c[0]).sin() * (PI * c[1]).sin();
            let f = field(u);
            [b * f[0], b * f[1], b * f[2]]
        }
    }
}

/// Infinitesimal rigid motion `y = a + b × r(u)` as `(W_1, W_2, w)`.
pub fn rigid_motion(surface: Arc<dyn Surface<f64>>, a: V3f, b: V3f) -> impl Fn(V2f) -> [f64; 3] + Sync {
    move |u| {
        let geo = crate::surface::local_geometry_unchecked(surface.as_ref(), u);
        let y = add3(a, cross(b, geo.r));
        [dot3(y, geo.ru[0]), dot3(y, geo.ru[1]), dot3(y, geo.n)]
    }
}

/// Squared norms entering the rigidity estimates for one displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateTerms {
    /// `‖W‖²_{L²(S)}`
    pub tangential: f64,
    /// `‖w‖²_{L²(S)}`
    pub normal: f64,
    /// `‖Υ(y)‖²_{L²(S)}`
    pub strain: f64,
    /// `‖Dw‖²_{L²(S)}`
    pub normal_gradient: f64,
    /// `‖W∘α(·,0)‖²`, `‖W∘α(0,·)‖²`, `‖W∘α(1,·)‖²` in the side parameter.
    pub traces: [f64; 3],
}

/// Trapezoid rule on an `n × n` grid of the region; `Υ` and `Dw` by central
/// differences of `field` with `step`.
pub fn estimate_terms(surface: &dyn Surface<f64>, region: &ProbeRegion, field: &dyn Fn(V2f) -> [f64; 3], n: usize, step: f64) -> Result<EstimateTerms> {
    if n < 3 {
        return Err(Error::Invalid(format!("{n} nodes per side")));
    }
    let area = det2([region.e1, region.e2]).abs();
    let dl = 1.0 / (n - 1) as f64;
    let wt = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut out = EstimateTerms { tangential: 0.0, normal: 0.0, strain: 0.0, normal_gradient: 0.0, traces: [0.0; 3] };
    for j in 0..n {
        for i in 0..n {
            let (t, s) = (i as f64 * dl, j as f64 * dl);
            let u = region.at(t, s);
            let geo = local_geometry(surface, u)?;
            let f = field(u);
            let d = [diff(field, u, 0, step), diff(field, u, 1, step)];
            let mut ups = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    ups[a][b] = 0.5 * (d[a][b] + d[b][a]) - geo.gamma[0][a][b] * f[0] - geo.gamma[1][a][b] * f[1] + f[2] * geo.pi[a][b];
                }
            }
            let w = wt(i) * wt(j) * dl * dl * area * geo.det_g.sqrt();
            let wn = g_norm2(&geo, [f[0], f[1]]);
            out.tangential += w * wn;
            out.normal += w * f[2] * f[2];
            out.strain += w * g_tensor2(&geo, &ups, &ups);
            out.normal_gradient += w * g_norm2(&geo, [d[0][2], d[1][2]]);
            let edge = wt(i) * dl;
            if j == 0 {
                out.traces[0] += edge * wn;
            }
            let edge_s = wt(j) * dl;
            if i == 0 {
                out.traces[1] += edge_s * wn;
            }
            if i == n - 1 {
                out.traces[2] += edge_s * wn;
            }
        }
    }
    Ok(out)
}

/// Which estimate a probe measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimate {
    /// `‖W‖² ≤ C(‖Υ‖² + ‖W∘α(·,0)‖² + ‖W∘α(0,·)‖² + ‖W∘α(1,·)‖²)`
    Tangential,
    /// `‖w‖² ≤ C(‖Dw‖ ‖Υ‖ + ‖Υ‖²)` for clamped displacements.
    Normal,
}

impl Estimate {
    pub fn sides(&self, e: &EstimateTerms) -> (f64, f64) {
        match self {
            Estimate::Tangential => (e.tangential, e.strain + e.traces.iter().sum::<f64>()),
            Estimate::Normal => (e.normal, (e.normal_gradient * e.strain).sqrt() + e.strain),
        }
    }
}

/// Left and right sides for one displacement; `ratio` is `None` when both
/// are below `1e-10` (nothing to measure).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub estimate: Estimate,
    pub n: usize,
    pub samples: Vec<ProbeSample>,
    /// `max lhs/rhs` over the samples with a ratio.
    pub constant: f64,
    /// Samples with a vanishing right side but a nonzero left side.
    pub violations: usize,
}

/// Empirical constant of `estimate` over `fields` on an `n × n` grid.
pub fn rigidity_estimate_probe(
    surface: &dyn Surface<f64>,
    region: &ProbeRegion,
    fields: &[&dyn Fn(V2f) -> [f64; 3]],
    estimate: Estimate,
    n: usize,
) -> Result<ProbeReport> {
    let step = 1e-5 * (region.e1[0].hypot(region.e1[1]) + region.e2[0].hypot(region.e2[1]));
    let mut samples = Vec::with_capacity(fields.len());
    let mut violations = 0;
    let mut constant = 0.0f64;
    for f in fields {
        let terms = estimate_terms(surface, region, *f, n, step)?;
        let (lhs, rhs) = estimate.sides(&terms);
        let ratio = if lhs < 1e-10 && rhs < 1e-10 {
            None
        } else if rhs <= 1e-14 * lhs.max(1.0) {
            violations += 1;
            Some(f64::INFINITY)
        } else {
            Some(lhs / rhs)
        };
        if let Some(r) = ratio {
            constant = constant.max(r);
        }
        samples.push(ProbeSample { lhs, rhs, ratio });
    }
    Ok(ProbeReport { estimate, n, samples, constant, violations })
}

/// `‖∇y‖² / (‖⟨y, n⟩‖ ‖sym ∇y‖ / h + ‖y‖² + ‖sym ∇y‖²)`, the constant in the
/// interpolation inequality for one displacement.
pub fn interpolation_ratio(norms: &ShellNorms, h: f64) -> f64 {
    norms.grad / ((norms.normal * norms.sym).sqrt() / h + norms.l2 + norms.sym)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transverse_rule_weights_sum_to_h_and_integrate_quintics() {
        let h = 0.07;
        let r = transverse_rule(h);
        assert!((r.iter().map(|p| p.1).sum::<f64>() - h).abs() < 1e-16);
        // ∫ t⁴ over (−h/2, h/2) = h⁵/80
        let q: f64 = r.iter().map(|(t, w)| w * t.powi(4)).sum();
        assert!((q - h.powi(5) / 80.0).abs() < 1e-15 * h.powi(5));
        assert!(r.iter().map(|(t, w)| w * t.powi(5)).sum::<f64>().abs() < 1e-20);
    }

    #[test]
    fn mode_count_resolves_the_fractional_wavelength() {
        for h in [0.2, 0.1, 0.05, 0.01] {
            let k = modes_for(h, [0.0, 0.0], [0.6, 0.4]);
            assert!(2.0 * 0.6 / k as f64 <= h.cbrt() / 2.0);
        }
    }

    #[test]
    fn line_fit_of_three_collinear_points() {
        let f = line_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15 && f.stderr < 1e-15);
    }

    #[test]
    fn principal_curvature_of_the_saddle_at_its_centre() {
        let s = crate::surface::HyperbolicParaboloid::<f64>::default();
        let geo = local_geometry(&s, [0.0, 0.0]).unwrap();
        assert!((max_principal(&geo) - 1.0).abs() < 1e-14);
    }
}
