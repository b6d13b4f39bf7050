//! Principal curvatures and principal directions on the monkey saddle, and
//! the branch analysis showing that no continuous unit principal field exists
//! on a region around the origin.
//!
//! All formulas work directly in graph coordinates `x = (x1, x2)` with the
//! metric and second form of `h(x) = x1³ − 3 x1 x2²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::small::M2;

/// `σ(x) = 6/√(1 + 9|x|⁴)`.
pub fn sigma<T: Real>(x: [T; 2]) -> T {
    let r2 = x[0] * x[0] + x[1] * x[1];
    T::lit(6.0) / (T::one() + T::lit(9.0) * r2 * r2).sqrt()
}

/// Metric entries `(g11, g12, g22)`.
pub fn metric_entries<T: Real>(x: [T; 2]) -> (T, T, T) {
    let (a, b) = (x[0], x[1]);
    let d = a * a - b * b;
    (
        T::one() + T::lit(9.0) * d * d,
        -T::lit(18.0) * a * b * d,
        T::one() + T::lit(36.0) * a * a * b * b,
    )
}

/// Roots `(λ1, λ2)`, `λ1 > λ2`, of `(λg11 + σx1)(λg22 − σx1) = (λg12 − σx2)²`.
pub fn principal_curvatures<T: Real>(x: [T; 2]) -> Result<(T, T)> {
    if x[0] == T::zero() && x[1] == T::zero() {
        return Err(Error::Invalid("principal curvatures at the flat point are not separated".into()));
    }
    let (g11, g12, g22) = metric_entries(x);
    let s = sigma(x);
    let a = g11 * g22 - g12 * g12;
    let b = s * x[0] * (g22 - g11) + T::two() * s * x[1] * g12;
    let c = -s * s * (x[0] * x[0] + x[1] * x[1]);
    let disc = b * b - T::lit(4.0) * a * c;
    if disc < T::zero() {
        return Err(Error::Internal(format!("negative discriminant {}", disc)));
    }
    let sq = disc.sqrt();
    // c < 0 so the roots have opposite signs; avoid cancellation.
    let q = -T::half() * (b + if b >= T::zero() { sq } else { -sq });
    let (r1, r2) = (q / a, c / q);
    Ok(if r1 > r2 { (r1, r2) } else { (r2, r1) })
}

/// Closed form of `λ1` on the axis `x2 = 0`.
pub fn lambda1_on_axis<T: Real>(x1: T) -> T {
    let s = sigma([x1, T::zero()]);
    if x1 > T::zero() {
        s * x1
    } else {
        -s * x1 / (T::one() + T::lit(9.0) * x1.powi(4))
    }
}

/// `η = ζ1/ζ2` for the `λ1` eigendirection, simplified form.
pub fn eta<T: Real>(x: [T; 2]) -> Result<T> {
    if x[1] == T::zero() {
        return Err(Error::Invalid("η needs x2 ≠ 0".into()));
    }
    let (l1, _) = principal_curvatures(x)?;
    let (g11, g12, g22) = metric_entries(x);
    let s = sigma(x);
    let den = s * (g11 * x[1] + g12 * x[0]);
    if den.abs() < T::lit(1e-14) {
        return Err(Error::NearSingular(format!("η denominator {}", den)));
    }
    Ok((l1 * (g11 * g22 - g12 * g12) + s * (g12 * x[1] - g11 * x[0])) / den)
}

/// `η` from the eigen-equations before the characteristic polynomial is used.
pub fn eta_unsimplified<T: Real>(x: [T; 2]) -> Result<T> {
    if x[1] == T::zero() {
        return Err(Error::Invalid("η needs x2 ≠ 0".into()));
    }
    let (l1, _) = principal_curvatures(x)?;
    let (g11, g12, g22) = metric_entries(x);
    let s = sigma(x);
    let den = l1 * (g11 * x[1] + g12 * x[0]);
    if den.abs() < T::lit(1e-14) {
        return Err(Error::NearSingular(format!("η denominator {}", den)));
    }
    Ok((s * (x[0] * x[0] + x[1] * x[1]) - l1 * (g12 * x[1] + g22 * x[0])) / den)
}

/// Unit `λ1` direction `(ζ1, ζ2)` with `ζ2` carrying the chosen sign.
pub fn zeta_components<T: Real>(x: [T; 2], positive: bool) -> Result<(T, T)> {
    let e = eta(x)?;
    let (g11, g12, g22) = metric_entries(x);
    let q = e * e * g11 + T::two() * e * g12 + g22;
    let mut z2 = T::one() / q.sqrt();
    if !positive {
        z2 = -z2;
    }
    Ok((e * z2, z2))
}

/// Residual of `(λ1 G − Π) ζ` (max norm); zero for an exact eigendirection.
pub fn eigen_residual<T: Real>(x: [T; 2], z: (T, T)) -> Result<T> {
    let (l1, _) = principal_curvatures(x)?;
    let (g11, g12, g22) = metric_entries(x);
    let s = sigma(x);
    let m: M2<T> = [
        [l1 * g11 + s * x[0], l1 * g12 - s * x[1]],
        [l1 * g12 - s * x[1], l1 * g22 - s * x[0]],
    ];
    let r0 = m[0][0] * z.0 + m[0][1] * z.1;
    let r1 = m[1][0] * z.0 + m[1][1] * z.1;
    Ok(r0.abs().max(r1.abs()))
}

/// Right-hand side of the axis limit of `x2 η` for `x1 < −1/√3`.
pub fn x2_eta_axis_limit<T: Real>(x1: T) -> T {
    let q = T::lit(9.0) * x1.powi(4);
    -x1 * (T::two() + q) / (T::one() - q)
}

/// Sampled approach to a one-sided limit with Richardson extrapolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub steps: Vec<f64>,
    pub values: Vec<f64>,
    pub extrapolated: f64,
    /// `log10(|v0 − v1| / |v1 − v2|)` from the three samples.
    pub observed_order: f64,
}

fn richardson(steps: Vec<f64>, values: Vec<f64>, order: i32) -> LimitEstimate {
    let n = values.len();
    let r = (steps[n - 2] / steps[n - 1]).powi(order);
    let extrapolated = values[n - 1] + (values[n - 1] - values[n - 2]) / (r - 1.0);
    let observed_order = if n >= 3 {
        let d1 = (values[0] - values[1]).abs();
        let d2 = (values[1] - values[2]).abs();
        if d2 > 0.0 {
            (d1 / d2).log10() / (steps[0] / steps[1]).log10()
        } else {
            f64::INFINITY
        }
    } else {
        f64::NAN
    };
    LimitEstimate { steps, values, extrapolated, observed_order }
}

const STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// `lim_{x2→0} x2 η(x1, x2)`; `x2 η` is even in `x2`, so the error is
/// quadratic and extrapolated as such.
pub fn x2_eta_limit(x1: f64) -> Result<LimitEstimate> {
    let mut vals = Vec::new();
    for h in STEPS {
        vals.push(h * eta([x1, h])?);
    }
    Ok(richardson(STEPS.to_vec(), vals, 2))
}

/// `lim_{x2→0} η(x1, x2)` (from above).
pub fn eta_limit(x1: f64) -> Result<LimitEstimate> {
    let mut vals = Vec::new();
    for h in STEPS {
        vals.push(eta([x1, h])?);
    }
    Ok(richardson(STEPS.to_vec(), vals, 1))
}

/// One-sided limit of `ζ1` (`component = 0`) or `ζ2` (`component = 1`) as
/// `x2 → 0` from the side `sign(side)`.
pub fn zeta_limit(x1: f64, side: f64, positive: bool, component: usize) -> Result<LimitEstimate> {
    let mut vals = Vec::new();
    for h in STEPS {
        let z = zeta_components([x1, side.signum() * h], positive)?;
        vals.push(if component == 0 { z.0 } else { z.1 });
    }
    Ok(richardson(STEPS.to_vec(), vals, 1))
}

/// One branch assignment: the sign of `ζ2` above and below the axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchOutcome {
    pub sign_above: i8,
    pub sign_below: i8,
    pub zeta1_above: f64,
    pub zeta1_below: f64,
    pub zeta1_jump: f64,
    pub zeta2_above: f64,
    pub zeta2_below: f64,
    pub zeta2_jump: f64,
    /// At least one of the two jumps exceeds the detection threshold.
    pub discontinuous: bool,
}

/// Outcome of checking every branch assignment for a continuous principal
/// direction across the two axis segments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub x1_minus: f64,
    pub x1_plus: f64,
    pub branches: Vec<BranchOutcome>,
    /// True when every branch assignment has a jump.
    pub obstructed: bool,
}

/// Jumps of `ζ1` across the axis at `x1_minus` and of `ζ2` across the axis at
/// `x1_plus`, for all four sign assignments of `ζ2` on the two half-planes.
pub fn principal_obstruction_report(x1_minus: f64, x1_plus: f64) -> Result<ObstructionReport> {
    let lim = 1.0 / 3f64.sqrt();
    if x1_minus >= -lim || x1_plus <= lim {
        return Err(Error::Invalid(format!(
            "need x1_minus < -1/√3 and x1_plus > 1/√3, got {x1_minus}, {x1_plus}"
        )));
    }
    let threshold = 1e-2;
    let mut branches = Vec::new();
    for &above in &[true, false] {
        for &below in &[true, false] {
            let z1a = zeta_limit(x1_minus, 1.0, above, 0)?.extrapolated;
            let z1b = zeta_limit(x1_minus, -1.0, below, 0)?.extrapolated;
            let z2a = zeta_limit(x1_plus, 1.0, above, 1)?.extrapolated;
            let z2b = zeta_limit(x1_plus, -1.0, below, 1)?.extrapolated;
            let j1 = (z1a - z1b).abs();
            let j2 = (z2a - z2b).abs();
            branches.push(BranchOutcome {
                sign_above: if above { 1 } else { -1 },
                sign_below: if below { 1 } else { -1 },
                zeta1_above: z1a,
                zeta1_below: z1b,
                zeta1_jump: j1,
                zeta2_above: z2a,
                zeta2_below: z2b,
                zeta2_jump: j2,
                discontinuous: j1 > threshold || j2 > threshold,
            });
        }
    }
    let obstructed = branches.iter().all(|b| b.discontinuous);
    Ok(ObstructionReport { x1_minus, x1_plus, branches, obstructed })
}

/// Principal data at one sample.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PrincipalSample {
    pub x: [f64; 2],
    pub lambda1: f64,
    pub lambda2: f64,
    pub zeta: [f64; 2],
}

/// Principal curvatures and the `λ1` direction on a grid (samples on the
/// axis `x2 = 0` are skipped).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrincipalField {
    pub positive_branch: bool,
    pub samples: Vec<PrincipalSample>,
}

impl PrincipalField {
    pub fn sample(lo: [f64; 2], hi: [f64; 2], n: usize, positive_branch: bool) -> Result<Self> {
        let mut samples = Vec::new();
        let n = n.max(2);
        for i in 0..n {
            for j in 0..n {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
                ];
                if x[1] == 0.0 {
                    continue;
                }
                let (l1, l2) = principal_curvatures(x)?;
                let z = zeta_components(x, positive_branch)?;
                samples.push(PrincipalSample { x, lambda1: l1, lambda2: l2, zeta: [z.0, z.1] });
            }
        }
        Ok(PrincipalField { positive_branch, samples })
    }
}
