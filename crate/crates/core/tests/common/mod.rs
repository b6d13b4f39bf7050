#![allow(dead_code)]

use std::sync::Arc;

use hypershell::atlas::{build_chart, AsymptoticChart, ChartExtent};
use hypershell::small::{comb3, mv2};
use hypershell::strain::{Displacement, SurfaceProblem, TrigField};
use hypershell::surface::{boundary_operator_t, local_geometry, HyperbolicParaboloid, MonkeySaddle, ParamBox, Surface};
use hypershell::characteristic::Func1;
use hypershell::CurveOnSurface;
use rand::Rng;

pub fn paraboloid() -> Arc<dyn Surface<f64>> {
    Arc::new(HyperbolicParaboloid::new(ParamBox::new([-2.0, -2.0], [2.0, 2.0])))
}

pub fn monkey() -> Arc<dyn Surface<f64>> {
    Arc::new(MonkeySaddle::new(ParamBox::new([-3.0, -3.0], [3.0, 3.0])))
}

pub fn para_anchor() -> CurveOnSurface<f64> {
    CurveOnSurface::line([0.0, 0.0], [1.0, -1.0], -2.0, 2.0)
}

pub fn monkey_anchor() -> CurveOnSurface<f64> {
    CurveOnSurface::line([1.0, -1.0], [1.0, -1.0], -2.0, 2.0)
}

/// Chart on `[0, L] × [−L, L]` with `n` nodes along `x1`.
pub fn half_chart(surface: Arc<dyn Surface<f64>>, anchor: CurveOnSurface<f64>, len: f64, n: usize) -> Arc<AsymptoticChart> {
    Arc::new(build_chart(surface, &anchor, ChartExtent::new([0.0, -len], [len, len], n, 2 * n - 1)).unwrap())
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_order(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Smooth displacement on the surface: covariant parameter components
/// `W_i = ⟨W, r_i⟩` and normal part `w`, each a trigonometric sum in `u`.
#[derive(Clone)]
pub struct GlobalField {
    pub t: [TrigField; 3],
    pub surface: Arc<dyn Surface<f64>>,
}

impl GlobalField {
    pub fn random(surface: Arc<dyn Surface<f64>>, rng: &mut impl Rng, kmax: f64) -> Self {
        GlobalField { t: [TrigField::random(rng, 3, kmax), TrigField::random(rng, 3, kmax), TrigField::random(rng, 3, kmax)], surface }
    }

    /// Vector part in parameter (contravariant) components.
    pub fn vector(&self, u: [f64; 2]) -> [f64; 2] {
        let geo = local_geometry(self.surface.as_ref(), u).unwrap();
        mv2(geo.g_inv, [self.t[0].value(u), self.t[1].value(u)])
    }

    pub fn ambient(&self, u: [f64; 2]) -> [f64; 3] {
        let geo = local_geometry(self.surface.as_ref(), u).unwrap();
        let v = mv2(geo.g_inv, [self.t[0].value(u), self.t[1].value(u)]);
        let tang = comb3(v[0], geo.ru[0], v[1], geo.ru[1]);
        comb3(1.0, tang, self.t[2].value(u), geo.n)
    }

    /// `U_ij = ½(∂i W_j + ∂j W_i) − Γ^k_ij W_k + w Π_ij` in parameter components.
    pub fn strain(&self, u: [f64; 2]) -> [[f64; 2]; 2] {
        let geo = local_geometry(self.surface.as_ref(), u).unwrap();
        let w = [self.t[0].value(u), self.t[1].value(u)];
        let d = [self.t[0].grad(u), self.t[1].grad(u)];
        let wn = self.t[2].value(u);
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = 0.5 * (d[j][i] + d[i][j]) - geo.gamma[0][i][j] * w[0] - geo.gamma[1][i][j] * w[1] + wn * geo.pi[i][j];
            }
        }
        out
    }

    pub fn on_chart(&self, chart: &AsymptoticChart) -> Displacement {
        Displacement::from_ambient(chart, |u| self.ambient(u))
    }

    /// Problem data along `anchor` and the transversal curve `zeta`.
    pub fn problem(&self, anchor: &CurveOnSurface<f64>, zeta: &CurveOnSurface<f64>) -> SurfaceProblem {
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        let an = anchor.clone();
        let z = zeta.clone();
        let alpha0 = anchor.tangent(0.0);
        let s = self.surface.clone();
        let q1 = Func1::new(move |t| {
            let u = z.at(t);
            let v = c.vector(u);
            hypershell::strain::boundary_pairing(s.as_ref(), alpha0, &z, t, v).unwrap()
        });
        SurfaceProblem { strain: Arc::new(move |u| a.strain(u)), phi: Arc::new(move |t| b.vector(an.at(t))), q1 }
    }
}

/// `T1 ζ′` through the surface module directly (for cross-checks).
pub fn t1_direct(surface: &dyn Surface<f64>, mu: [f64; 2], u: [f64; 2], x: [f64; 2]) -> [f64; 2] {
    use hypershell::surface::TangentVector;
    boundary_operator_t(surface, 1, TangentVector::new(u, mu), TangentVector::new(u, x)).unwrap().comp
}

/// Clamped strip of the monkey saddle used for the Korn experiment.
pub const MONKEY_STRIP: ([f64; 2], [f64; 2]) = ([0.2, -0.3], [0.8, 0.3]);

/// Three random trigonometric components with `terms` terms each.
pub fn trig3(rng: &mut impl Rng, terms: usize, kmax: f64) -> [TrigField; 3] {
    [TrigField::random(rng, terms, kmax), TrigField::random(rng, terms, kmax), TrigField::random(rng, terms, kmax)]
}
