//! Fixed-size vector and 2×2 matrix helpers.

use crate::scalar::Real;

pub type V2<T> = [T; 2];
pub type V3<T> = [T; 3];
pub type M2<T> = [[T; 2]; 2];

#[inline]
pub fn add3<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Real>(s: T, a: V3<T>) -> V3<T> {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn dot3<T: Real>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<T: Real>(a: V3<T>) -> T {
    dot3(a, a).sqrt()
}

/// det of the 3×3 matrix with columns a, b, c.
#[inline]
pub fn det3<T: Real>(a: V3<T>, b: V3<T>, c: V3<T>) -> T {
    dot3(cross(a, b), c)
}

/// `a*x + b*y` for ambient vectors.
#[inline]
pub fn comb3<T: Real>(a: T, x: V3<T>, b: T, y: V3<T>) -> V3<T> {
    [a * x[0] + b * y[0], a * x[1] + b * y[1], a * x[2] + b * y[2]]
}

#[inline]
pub fn det2<T: Real>(m: M2<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn inv2<T: Real>(m: M2<T>) -> Option<M2<T>> {
    let d = det2(m);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

#[inline]
pub fn mv2<T: Real>(m: M2<T>, v: V2<T>) -> V2<T> {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Bilinear form `aᵀ M b`.
#[inline]
pub fn form2<T: Real>(m: M2<T>, a: V2<T>, b: V2<T>) -> T {
    a[0] * (m[0][0] * b[0] + m[0][1] * b[1]) + a[1] * (m[1][0] * b[0] + m[1][1] * b[1])
}

#[inline]
pub fn mm2<T: Real>(a: M2<T>, b: M2<T>) -> M2<T> {
    let mut c = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn max_abs2<T: Real>(m: M2<T>) -> T {
    m[0][0].abs().max(m[0][1].abs()).max(m[1][0].abs()).max(m[1][1].abs())
}

/// Converts a generic 2-vector to `f64` for error payloads.
pub fn to_f64_2<T: Real>(u: V2<T>) -> (f64, f64) {
    (u[0].to_f64_(), u[1].to_f64_())
}
