//! Difference stencils and interpolation on uniform lattices.

use crate::regions::Lattice;

/// Fourth-order first derivative of samples `f(k h)` at index `k`
/// (one-sided five-point stencils at the ends). Needs `f.len() ≥ 5`.
pub fn d4(f: &dyn Fn(usize) -> f64, n: usize, k: usize, h: f64) -> f64 {
    debug_assert!(n >= 5);
    if k >= 2 && k + 2 < n {
        (-f(k + 2) + 8.0 * f(k + 1) - 8.0 * f(k - 1) + f(k - 2)) / (12.0 * h)
    } else if k == 0 {
        (-25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4)) / (12.0 * h)
    } else if k == 1 {
        (-3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4)) / (12.0 * h)
    } else if k == n - 1 {
        -(-25.0 * f(n - 1) + 48.0 * f(n - 2) - 36.0 * f(n - 3) + 16.0 * f(n - 4) - 3.0 * f(n - 5)) / (12.0 * h)
    } else {
        -(-3.0 * f(n - 1) - 10.0 * f(n - 2) + 18.0 * f(n - 3) - 6.0 * f(n - 4) + f(n - 5)) / (12.0 * h)
    }
}

/// `∂/∂x1` of a lattice field at `(i, j)`, fourth order.
pub fn d4_x(l: &Lattice, v: &[f64], i: usize, j: usize) -> f64 {
    d4(&|k| v[l.idx(k, j)], l.nx, i, l.dx)
}

/// `∂/∂x2` of a lattice field at `(i, j)`, fourth order.
pub fn d4_y(l: &Lattice, v: &[f64], i: usize, j: usize) -> f64 {
    d4(&|k| v[l.idx(i, k)], l.ny, j, l.dy)
}

/// Second-order derivative along `axis` (0: x1, 1: x2) using only masked
/// nodes: central where both neighbours exist, else three-point one-sided.
pub fn d2_masked(l: &Lattice, v: &[f64], mask: &[bool], i: usize, j: usize, axis: usize) -> Option<f64> {
    let (n, k, h) = if axis == 0 { (l.nx, i, l.dx) } else { (l.ny, j, l.dy) };
    let at = |m: isize| -> Option<f64> {
        if m < 0 || m as usize >= n {
            return None;
        }
        let idx = if axis == 0 { l.idx(m as usize, j) } else { l.idx(i, m as usize) };
        if mask[idx] && v[idx].is_finite() {
            Some(v[idx])
        } else {
            None
        }
    };
    let k = k as isize;
    let c = at(k)?;
    match (at(k - 1), at(k + 1)) {
        (Some(a), Some(b)) => Some((b - a) / (2.0 * h)),
        (None, Some(b)) => at(k + 2).map(|b2| (-3.0 * c + 4.0 * b - b2) / (2.0 * h)),
        (Some(a), None) => at(k - 2).map(|a2| (3.0 * c - 4.0 * a + a2) / (2.0 * h)),
        (None, None) => None,
    }
}

fn catmull(p: [f64; 4], t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p[1]) + (-p[0] + p[2]) * t + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t2
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t3)
}

/// Piecewise-cubic (Catmull–Rom) interpolation of a full lattice field;
/// end cells extrapolate the missing stencil point quadratically (needs
/// three nodes per direction). `None` outside the lattice.
pub fn interp_cubic(l: &Lattice, v: &[f64], x: [f64; 2]) -> Option<f64> {
    let u = (x[0] - l.x0) / l.dx;
    let w = (x[1] - l.y0) / l.dy;
    let eps = 1e-9;
    if u < -eps || w < -eps || u > (l.nx - 1) as f64 + eps || w > (l.ny - 1) as f64 + eps {
        return None;
    }
    let i = (u.floor().max(0.0) as usize).min(l.nx - 2);
    let j = (w.floor().max(0.0) as usize).min(l.ny - 2);
    let (s, t) = (u - i as f64, w - j as f64);
    let get = |a: isize, b: isize| -> f64 {
        // ghost points by quadratic extrapolation
        let fa = |aa: isize, bb: usize| -> f64 {
            let at = |i: usize| v[l.idx(i, bb)];
            if aa < 0 {
                3.0 * at(0) - 3.0 * at(1) + at(2)
            } else if aa as usize >= l.nx {
                let n = l.nx;
                3.0 * at(n - 1) - 3.0 * at(n - 2) + at(n - 3)
            } else {
                at(aa as usize)
            }
        };
        if b < 0 {
            3.0 * fa(a, 0) - 3.0 * fa(a, 1) + fa(a, 2)
        } else if b as usize >= l.ny {
            let n = l.ny;
            3.0 * fa(a, n - 1) - 3.0 * fa(a, n - 2) + fa(a, n - 3)
        } else {
            fa(a, b as usize)
        }
    };
    let mut col = [0.0; 4];
    for (m, c) in col.iter_mut().enumerate() {
        let b = j as isize - 1 + m as isize;
        let row = [get(i as isize - 1, b), get(i as isize, b), get(i as isize + 1, b), get(i as isize + 2, b)];
        *c = catmull(row, s);
    }
    Some(catmull(col, t))
}

/// Cubic Hermite basis on `[0, 1]`: values and derivatives.
fn hermite(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
        [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
    )
}

/// Corner data for bicubic Hermite interpolation: value, `∂1`, `∂2`, `∂12`.
pub type HermiteCorner = [f64; 4];

/// Bicubic Hermite patch on a cell of size `(dx, dy)`; corners ordered
/// `(0,0), (1,0), (0,1), (1,1)`. Returns `(f, ∂1 f, ∂2 f)` at local `(s, t)`.
pub fn bicubic_hermite(c: &[HermiteCorner; 4], dx: f64, dy: f64, s: f64, t: f64) -> [f64; 3] {
    let (hs, dhs) = hermite(s);
    let (ht, dht) = hermite(t);
    // x-basis per corner column: value uses h0/h2, slope h1/h3
    let bx = |k: usize, d: bool| -> (f64, f64) {
        let h = if d { &dhs } else { &hs };
        if k % 2 == 0 {
            (h[0], h[1])
        } else {
            (h[2], h[3])
        }
    };
    let by = |k: usize, d: bool| -> (f64, f64) {
        let h = if d { &dht } else { &ht };
        if k < 2 {
            (h[0], h[1])
        } else {
            (h[2], h[3])
        }
    };
    let mut out = [0.0; 3];
    for (k, cc) in c.iter().enumerate() {
        let f = cc[0];
        let fx = cc[1] * dx;
        let fy = cc[2] * dy;
        let fxy = cc[3] * dx * dy;
        for (o, (ds, dt)) in [(false, false), (true, false), (false, true)].iter().enumerate() {
            let (a0, a1) = bx(k, *ds);
            let (b0, b1) = by(k, *dt);
            let mut v = a0 * b0 * f + a1 * b0 * fx + a0 * b1 * fy + a1 * b1 * fxy;
            if *ds {
                v /= dx;
            }
            if *dt {
                v /= dy;
            }
            out[o] += v;
        }
    }
    out
}
