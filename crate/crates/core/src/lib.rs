//! Linear strain equations on hyperbolic surfaces.
//!
//! The crate builds asymptotic coordinate charts on negatively curved
//! surfaces, reduces the strain equation `Υ(y) = U` to a first-order
//! characteristic system, and solves that system by Picard iteration on a
//! small family of planar regions. It also measures thin-shell Korn
//! constants by Rayleigh-quotient maximization.
//!
//! Every numerical type is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix `f64`.

pub mod error;
pub mod fd;
pub mod io;
pub mod korn;
pub mod atlas;
pub mod characteristic;
pub mod principal;
pub mod regions;
pub mod scalar;
pub mod small;
pub mod strain;
pub mod surface;

pub use error::{Error, Result};
pub use scalar::Real;
pub use surface::{Connection, CurveOnSurface, Frame, LocalGeometry, ParamBox, Surface, TangentVector};

pub type MonkeySaddle = surface::MonkeySaddle<f64>;
pub type HyperbolicParaboloid = surface::HyperbolicParaboloid<f64>;
pub type Plane = surface::Plane<f64>;
pub type Curve = surface::CurveOnSurface<f64>;
pub type Tangent = surface::TangentVector<f64>;
