//! Surfaces given by `meval` expressions in the parameters `u`, `v`.

use hypershell::surface::{ParamBox, Surface};
use meval::{ContextProvider, Expr, FuncEvalError};

/// Parameter values plus the usual elementary functions. `meval`'s own
/// context is not `Sync`, so the function table lives here.
struct Params {
    u: f64,
    v: f64,
}

fn unary(args: &[f64], f: fn(f64) -> f64) -> Result<f64, FuncEvalError> {
    match args {
        [x] => Ok(f(*x)),
        _ => Err(FuncEvalError::NumberArgs(1)),
    }
}

impl ContextProvider for Params {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "u" => Some(self.u),
            "v" => Some(self.v),
            "pi" => Some(std::f64::consts::PI),
            "e" => Some(std::f64::consts::E),
            _ => None,
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> Result<f64, FuncEvalError> {
        match name {
            "sin" => unary(args, f64::sin),
            "cos" => unary(args, f64::cos),
            "tan" => unary(args, f64::tan),
            "asin" => unary(args, f64::asin),
            "acos" => unary(args, f64::acos),
            "atan" => unary(args, f64::atan),
            "sinh" => unary(args, f64::sinh),
            "cosh" => unary(args, f64::cosh),
            "tanh" => unary(args, f64::tanh),
            "exp" => unary(args, f64::exp),
            "ln" => unary(args, f64::ln),
            "sqrt" => unary(args, f64::sqrt),
            "abs" => unary(args, f64::abs),
            "atan2" => match args {
                [y, x] => Ok(y.atan2(*x)),
                _ => Err(FuncEvalError::NumberArgs(2)),
            },
            _ => Err(FuncEvalError::UnknownFunction),
        }
    }
}

/// `r(u, v) = (x, y, z)` from three expressions.
pub struct ExprSurface {
    domain: ParamBox<f64>,
    parts: [Expr; 3],
    label: String,
}

impl ExprSurface {
    /// Parses the three components and evaluates them once at the centre of
    /// `domain` so that unknown names fail here rather than mid-solve.
    pub fn new(x: &str, y: &str, z: &str, domain: ParamBox<f64>) -> Result<Self, String> {
        let parse = |s: &str| s.parse::<Expr>().map_err(|e| format!("cannot parse {s:?}: {e}"));
        let parts = [parse(x)?, parse(y)?, parse(z)?];
        let s = ExprSurface { domain, parts, label: format!("({x}, {y}, {z})") };
        let c = [0.5 * (domain.lo[0] + domain.hi[0]), 0.5 * (domain.lo[1] + domain.hi[1])];
        for (p, src) in s.parts.iter().zip([x, y, z]) {
            let v = p.eval_with_context(Params { u: c[0], v: c[1] }).map_err(|e| format!("cannot evaluate {src:?}: {e}"))?;
            if !v.is_finite() {
                return Err(format!("{src:?} is not finite at the domain centre"));
            }
        }
        Ok(s)
    }
}

impl Surface<f64> for ExprSurface {
    fn domain(&self) -> ParamBox<f64> {
        self.domain
    }

    fn point(&self, u: [f64; 2]) -> [f64; 3] {
        let ctx = || Params { u: u[0], v: u[1] };
        // parsed and checked in `new`; a later failure can only be a domain
        // error of an elementary function, which shows up as NaN downstream
        let ev = |e: &Expr| e.eval_with_context(ctx()).unwrap_or(f64::NAN);
        [ev(&self.parts[0]), ev(&self.parts[1]), ev(&self.parts[2])]
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypershell::surface::{local_geometry, HyperbolicParaboloid};

    #[test]
    fn saddle_expression_matches_builtin() {
        let b = ParamBox::new([-1.0, -1.0], [1.0, 1.0]);
        let s = ExprSurface::new("u", "v", "u*v", b).unwrap();
        let a = local_geometry(&s, [0.2, -0.3]).unwrap();
        let e = local_geometry(&HyperbolicParaboloid::new(b), [0.2, -0.3]).unwrap();
        assert!((a.kappa - e.kappa).abs() < 1e-6, "{} vs {}", a.kappa, e.kappa);
    }

    #[test]
    fn functions_and_constants_evaluate() {
        let b = ParamBox::new([-1.0, -1.0], [1.0, 1.0]);
        let s = ExprSurface::new("cos(pi*u)", "atan2(v, 1)", "sqrt(abs(u)) + exp(0)", b).unwrap();
        let p = s.point([1.0, 1.0]);
        assert!((p[0] + 1.0).abs() < 1e-15 && (p[1] - std::f64::consts::FRAC_PI_4).abs() < 1e-15 && (p[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_names_are_rejected_up_front() {
        let b = ParamBox::new([-1.0, -1.0], [1.0, 1.0]);
        assert!(ExprSurface::new("u", "v", "w*u", b).is_err());
        assert!(ExprSurface::new("u", "v", "frob(u)", b).is_err());
        assert!(ExprSurface::new("u", "v", "u*(", b).is_err());
    }
}
