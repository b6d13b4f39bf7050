//! Run configurations. Every command has a built-in default, so `--config`
//! is optional; unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use hypershell::surface::{HyperbolicParaboloid, MonkeySaddle, ParamBox, Plane, Surface};
use hypershell::CurveOnSurface;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::expr::ExprSurface;
use crate::Failure;

pub const DEFAULT_SEED: u64 = 0xC0FFEE;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Failure::config(format!("{name} must be positive, got {v}")))
    }
}

fn check_box(name: &str, b: [[f64; 2]; 2]) -> Result<ParamBox<f64>, Failure> {
    if b.iter().flatten().all(|v| v.is_finite()) && b[0][0] < b[1][0] && b[0][1] < b[1][1] {
        Ok(ParamBox::new(b[0], b[1]))
    } else {
        Err(Failure::config(format!("{name} must be [[lo1, lo2], [hi1, hi2]] with lo < hi, got {b:?}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    MonkeySaddle {
        #[serde(default)]
        domain: Option<[[f64; 2]; 2]>,
    },
    HyperbolicParaboloid {
        #[serde(default)]
        domain: Option<[[f64; 2]; 2]>,
    },
    Plane {
        #[serde(default)]
        domain: Option<[[f64; 2]; 2]>,
    },
    /// `r(u, v) = (x, y, z)`; `x` and `y` default to `u` and `v`, giving a graph.
    Expression {
        #[serde(default)]
        x: Option<String>,
        #[serde(default)]
        y: Option<String>,
        z: String,
        domain: [[f64; 2]; 2],
    },
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<Arc<dyn Surface<f64>>, Failure> {
        let dom = |d: &Option<[[f64; 2]; 2]>, lo: f64, hi: f64| check_box("surface.domain", d.unwrap_or([[lo, lo], [hi, hi]]));
        Ok(match self {
            SurfaceSpec::MonkeySaddle { domain } => Arc::new(MonkeySaddle::new(dom(domain, -3.0, 3.0)?)),
            SurfaceSpec::HyperbolicParaboloid { domain } => Arc::new(HyperbolicParaboloid::new(dom(domain, -2.0, 2.0)?)),
            SurfaceSpec::Plane { domain } => Arc::new(Plane { domain: dom(domain, -1.0, 1.0)? }),
            SurfaceSpec::Expression { x, y, z, domain } => {
                let b = check_box("surface.domain", *domain)?;
                Arc::new(ExprSurface::new(x.as_deref().unwrap_or("u"), y.as_deref().unwrap_or("v"), z, b).map_err(Failure::config)?)
            }
        })
    }
}

// ---------------------------------------------------------------- surface-info

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceInfoConfig {
    pub surface: SurfaceSpec,
    /// Sampled box; the surface domain when absent.
    #[serde(default)]
    pub region: Option<[[f64; 2]; 2]>,
    /// Samples per axis (`--grid`).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    9
}

impl Default for SurfaceInfoConfig {
    fn default() -> Self {
        SurfaceInfoConfig { surface: SurfaceSpec::HyperbolicParaboloid { domain: None }, region: None, samples: default_samples() }
    }
}

impl SurfaceInfoConfig {
    pub fn region_box(&self, surface: &dyn Surface<f64>) -> Result<ParamBox<f64>, Failure> {
        let d = surface.domain();
        let b = check_box("region", self.region.unwrap_or([d.lo, d.hi]))?;
        if !(d.contains(b.lo) && d.contains(b.hi)) {
            return Err(Failure::config(format!("region {:?} leaves the surface domain {:?}", [b.lo, b.hi], [d.lo, d.hi])));
        }
        if self.samples < 2 {
            return Err(Failure::config("samples must be at least 2"));
        }
        Ok(b)
    }
}

// ---------------------------------------------------------------- solve-strain

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    pub point: [f64; 2],
    pub direction: [f64; 2],
    pub range: [f64; 2],
}

impl AnchorSpec {
    pub fn curve(&self) -> Result<CurveOnSurface<f64>, Failure> {
        if self.direction[0] == 0.0 && self.direction[1] == 0.0 || !(self.range[0] < self.range[1]) {
            return Err(Failure::config("anchor needs a nonzero direction and range[0] < range[1]"));
        }
        Ok(CurveOnSurface::line(self.point, self.direction, self.range[0], self.range[1]))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// All data zero; the solution is zero.
    Zero,
    /// Random trigonometric displacement (seeded by `--seed`) whose strain
    /// and traces drive the solve; its exact values give the error table.
    Manufactured {
        #[serde(default = "default_terms")]
        terms: usize,
        #[serde(default = "default_kmax")]
        kmax: f64,
    },
}

fn default_terms() -> usize {
    3
}

fn default_kmax() -> f64 {
    3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveStrainConfig {
    pub surface: SurfaceSpec,
    pub anchor: AnchorSpec,
    /// The chart covers `[0, L] × [−L, L]` in asymptotic coordinates.
    pub chart_length: f64,
    /// Nodes along `x1` (`--grid`); `x2` gets `2n − 1`.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Slope of the interior curve `β(s) = (slope·s, s)` bounding the region.
    #[serde(default = "default_beta_slope")]
    pub beta_slope: f64,
    pub field: FieldSpec,
    /// Acceptance threshold for the error table (`--tol`).
    #[serde(default = "default_strain_tol")]
    pub tol: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_grid() -> usize {
    65
}

fn default_beta_slope() -> f64 {
    0.6
}

fn default_strain_tol() -> f64 {
    1e-3
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for SolveStrainConfig {
    fn default() -> Self {
        SolveStrainConfig {
            surface: SurfaceSpec::HyperbolicParaboloid { domain: None },
            anchor: AnchorSpec { point: [0.0, 0.0], direction: [1.0, -1.0], range: [-2.0, 2.0] },
            chart_length: 0.5,
            grid: default_grid(),
            beta_slope: default_beta_slope(),
            field: FieldSpec::Manufactured { terms: default_terms(), kmax: default_kmax() },
            tol: default_strain_tol(),
            seed: DEFAULT_SEED,
        }
    }
}

impl SolveStrainConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        positive("chart_length", self.chart_length)?;
        positive("tol", self.tol)?;
        if self.grid < 5 {
            return Err(Failure::config(format!("grid must be at least 5, got {}", self.grid)));
        }
        if !(self.beta_slope > 0.0 && self.beta_slope < 1.0) {
            return Err(Failure::config(format!("beta_slope must lie in (0, 1), got {}", self.beta_slope)));
        }
        if let FieldSpec::Manufactured { terms, kmax } = &self.field {
            positive("field.kmax", *kmax)?;
            if *terms == 0 {
                return Err(Failure::config("field.terms must be positive"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- korn-scale

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub coefficient: f64,
    pub exponent: f64,
    /// Relative multiplicative noise amplitude (seeded).
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KornConfig {
    #[serde(default = "default_korn_surface")]
    pub surface: SurfaceSpec,
    /// Clamped parameter strip `[[lo1, lo2], [hi1, hi2]]`.
    #[serde(default = "default_strip")]
    pub strip: [[f64; 2]; 2],
    pub thicknesses: Vec<f64>,
    /// Starting Fourier modes per direction, one per thickness; the default
    /// schedule grows like `h^{-1/3}`.
    #[serde(default)]
    pub modes: Option<Vec<usize>>,
    /// Upper bound for the mode count while chasing saturation.
    #[serde(default = "default_max_modes")]
    pub max_modes: usize,
    /// Relative change of `λmax` between the basis and one about half its
    /// size that counts as saturated (`--tol`).
    #[serde(default = "default_max_change")]
    pub max_change: f64,
    /// Trapezoid nodes per direction; derived from the mode count when absent
    /// (`--grid`).
    #[serde(default)]
    pub nodes: Option<usize>,
    /// Replaces the eigenvalue runs by `c·h^p` (fit self-test).
    #[serde(default)]
    pub synthetic: Option<Synthetic>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_korn_surface() -> SurfaceSpec {
    SurfaceSpec::MonkeySaddle { domain: None }
}

fn default_strip() -> [[f64; 2]; 2] {
    [[0.2, -0.3], [0.8, 0.3]]
}

fn default_max_modes() -> usize {
    24
}

fn default_max_change() -> f64 {
    0.02
}

impl Default for KornConfig {
    fn default() -> Self {
        KornConfig {
            surface: default_korn_surface(),
            strip: default_strip(),
            thicknesses: vec![0.2, 0.141, 0.1, 0.071, 0.05],
            modes: None,
            max_modes: default_max_modes(),
            max_change: default_max_change(),
            nodes: None,
            synthetic: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl KornConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.thicknesses.len() < 4 {
            return Err(Failure::config(format!("{} thickness(es) given; the fit needs at least 4", self.thicknesses.len())));
        }
        for h in &self.thicknesses {
            positive("thickness", *h)?;
        }
        positive("max_change", self.max_change)?;
        check_box("strip", self.strip)?;
        if let Some(m) = &self.modes {
            if m.len() != self.thicknesses.len() || m.iter().any(|k| *k == 0) {
                return Err(Failure::config("modes needs one positive entry per thickness"));
            }
        }
        if let Some(s) = &self.synthetic {
            positive("synthetic.coefficient", s.coefficient)?;
            if !s.exponent.is_finite() || !(0.0..0.5).contains(&s.noise) {
                return Err(Failure::config("synthetic.exponent must be finite and noise in [0, 0.5)"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- appendix-verify

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixConfig {
    /// Tolerance of the limit checks (`--tol`).
    #[serde(default = "default_appendix_tol")]
    pub tol: f64,
    /// Tolerance of the root-solve versus closed-form curvature comparison.
    #[serde(default = "default_formula_tol")]
    pub formula_tol: f64,
    /// Axis samples per sign of `x1` for that comparison.
    #[serde(default = "default_axis_samples")]
    pub axis_samples: usize,
}

fn default_appendix_tol() -> f64 {
    1e-3
}

fn default_formula_tol() -> f64 {
    1e-10
}

fn default_axis_samples() -> usize {
    20
}

impl Default for AppendixConfig {
    fn default() -> Self {
        AppendixConfig { tol: default_appendix_tol(), formula_tol: default_formula_tol(), axis_samples: default_axis_samples() }
    }
}

// ---------------------------------------------------------------- region-selftest

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestConfig {
    /// Grid of the exponential oracle (`--grid`).
    #[serde(default = "default_selftest_grid")]
    pub grid: usize,
    /// Maximum error of the exponential oracle (`--tol`).
    #[serde(default = "default_selftest_tol")]
    pub tol: f64,
    /// Minimum observed convergence order.
    #[serde(default = "default_min_order")]
    pub min_order: f64,
}

fn default_selftest_grid() -> usize {
    129
}

fn default_selftest_tol() -> f64 {
    1e-4
}

fn default_min_order() -> f64 {
    1.5
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig { grid: default_selftest_grid(), tol: default_selftest_tol(), min_order: default_min_order() }
    }
}
