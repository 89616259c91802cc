//! Interface problem definitions: coefficients with analytic partials,
//! sources, jump and boundary data, exact solutions and the builtin examples.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GeometryKind, InterfaceGeometry, Point, Region};
use crate::jet::Jet;

/// Derivatives of a coefficient `beta(x, u, p)` with `p = grad u`.
///
/// `z = (u, p1, p2)`. Spatial derivatives are explicit partials in `x, y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefJet {
    pub value: f64,
    pub dz: [f64; 3],
    pub dzz: [[f64; 3]; 3],
    pub dzzz: [[[f64; 3]; 3]; 3],
    pub dx: [f64; 2],
    pub dxz: [[f64; 3]; 2],
    pub dxzz: [[[f64; 3]; 3]; 2],
}

impl CoefJet {
    pub fn eval(&self) -> f64 {
        self.value
    }

    pub fn d_u(&self) -> f64 {
        self.dz[0]
    }

    pub fn d_uu(&self) -> f64 {
        self.dzz[0][0]
    }

    pub fn grad_x(&self) -> [f64; 2] {
        self.dx
    }

    pub fn d_p(&self) -> [f64; 2] {
        [self.dz[1], self.dz[2]]
    }

    pub fn d_pu(&self) -> [f64; 2] {
        [self.dzz[0][1], self.dzz[0][2]]
    }

    pub fn d_pp(&self) -> [[f64; 2]; 2] {
        [[self.dzz[1][1], self.dzz[1][2]], [self.dzz[2][1], self.dzz[2][2]]]
    }

    /// `beta` as a jet in a state whose first three slots are `(u, p1, p2)`.
    pub(crate) fn beta<const N: usize>(&self) -> Jet<N> {
        let mut j = Jet::constant(self.value);
        for a in 0..3 {
            j.g[a] = self.dz[a];
            for b in 0..3 {
                j.h[a][b] = self.dzz[a][b];
            }
        }
        j
    }

    /// `d beta / d z_c` as a jet.
    pub(crate) fn partial_z<const N: usize>(&self, c: usize) -> Jet<N> {
        let mut j = Jet::constant(self.dz[c]);
        for a in 0..3 {
            j.g[a] = self.dzz[c][a];
            for b in 0..3 {
                j.h[a][b] = self.dzzz[c][a][b];
            }
        }
        j
    }

    /// Explicit `d beta / d x_i` as a jet.
    pub(crate) fn partial_x<const N: usize>(&self, i: usize) -> Jet<N> {
        let mut j = Jet::constant(self.dx[i]);
        for a in 0..3 {
            j.g[a] = self.dxz[i][a];
            for b in 0..3 {
                j.h[a][b] = self.dxzz[i][a][b];
            }
        }
        j
    }
}

/// Diffusion coefficient with analytic partials.
pub trait Coefficient: Debug + Send + Sync {
    fn jet(&self, p: &Point, u: f64, grad: [f64; 2]) -> CoefJet;

    /// Whether `beta` depends on `grad u`.
    fn depends_on_gradient(&self) -> bool;

    fn eval(&self, p: &Point, u: f64, grad: [f64; 2]) -> f64 {
        self.jet(p, u, grad).value
    }
}

/// One-dimensional building block with three derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarTerm {
    /// `sum_k c_k s^k`.
    Poly { coeffs: Vec<f64> },
    /// `scale * exp(rate * s)`.
    Exp { scale: f64, rate: f64 },
    /// `scale * sin(freq * s)`.
    Sin { scale: f64, freq: f64 },
}

impl ScalarTerm {
    pub fn poly(coeffs: &[f64]) -> Self {
        ScalarTerm::Poly { coeffs: coeffs.to_vec() }
    }

    /// Value and first three derivatives at `s`.
    pub fn eval(&self, s: f64) -> [f64; 4] {
        match self {
            ScalarTerm::Poly { coeffs } => {
                let mut out = [0.0; 4];
                for (k, &c) in coeffs.iter().enumerate() {
                    let k = k as i32;
                    out[0] += c * s.powi(k);
                    if k >= 1 {
                        out[1] += c * k as f64 * s.powi(k - 1);
                    }
                    if k >= 2 {
                        out[2] += c * (k * (k - 1)) as f64 * s.powi(k - 2);
                    }
                    if k >= 3 {
                        out[3] += c * (k * (k - 1) * (k - 2)) as f64 * s.powi(k - 3);
                    }
                }
                out
            }
            ScalarTerm::Exp { scale, rate } => {
                let e = scale * (rate * s).exp();
                [e, rate * e, rate * rate * e, rate.powi(3) * e]
            }
            ScalarTerm::Sin { scale, freq } => {
                let (sn, cs) = (freq * s).sin_cos();
                [scale * sn, scale * freq * cs, -scale * freq * freq * sn, -scale * freq.powi(3) * cs]
            }
        }
    }
}

fn sum_terms(terms: &[ScalarTerm], s: f64) -> [f64; 4] {
    terms.iter().fold([0.0; 4], |mut acc, t| {
        let v = t.eval(s);
        for k in 0..4 {
            acc[k] += v[k];
        }
        acc
    })
}

/// `beta = r2 * (x^2 + y^2) + b(u) + c(|grad u|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeparableCoefficient {
    #[serde(default)]
    pub spatial_r2: f64,
    #[serde(default)]
    pub u_terms: Vec<ScalarTerm>,
    #[serde(default)]
    pub grad_terms: Vec<ScalarTerm>,
}

impl SeparableCoefficient {
    pub fn in_u(terms: Vec<ScalarTerm>) -> Self {
        Self { u_terms: terms, ..Self::default() }
    }

    pub fn constant(c: f64) -> Self {
        Self::in_u(vec![ScalarTerm::poly(&[c])])
    }
}

impl Coefficient for SeparableCoefficient {
    fn jet(&self, p: &Point, u: f64, grad: [f64; 2]) -> CoefJet {
        let mut j = CoefJet::default();
        let b = sum_terms(&self.u_terms, u);
        j.value = self.spatial_r2 * (p.x * p.x + p.y * p.y) + b[0];
        j.dx = [2.0 * self.spatial_r2 * p.x, 2.0 * self.spatial_r2 * p.y];
        j.dz[0] = b[1];
        j.dzz[0][0] = b[2];
        j.dzzz[0][0][0] = b[3];
        if !self.grad_terms.is_empty() {
            let q = grad[0] * grad[0] + grad[1] * grad[1];
            let c = sum_terms(&self.grad_terms, q);
            j.value += c[0];
            let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            for a in 0..2 {
                j.dz[1 + a] = 2.0 * c[1] * grad[a];
                for b in 0..2 {
                    j.dzz[1 + a][1 + b] = 4.0 * c[2] * grad[a] * grad[b] + 2.0 * c[1] * delta(a, b);
                    for e in 0..2 {
                        j.dzzz[1 + a][1 + b][1 + e] = 8.0 * c[3] * grad[a] * grad[b] * grad[e]
                            + 4.0 * c[2] * (delta(a, b) * grad[e] + delta(a, e) * grad[b] + delta(b, e) * grad[a]);
                    }
                }
            }
        }
        j
    }

    fn depends_on_gradient(&self) -> bool {
        !self.grad_terms.is_empty()
    }
}

/// Exact solution with the derivatives needed for manufactured data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExactState {
    pub u: f64,
    pub grad: [f64; 2],
    /// `(xx, xy, yy)`.
    pub hess: [f64; 3],
    pub ut: f64,
}

impl ExactState {
    pub fn laplacian(&self) -> f64 {
        self.hess[0] + self.hess[2]
    }
}

pub trait ExactSolution: Debug + Send + Sync {
    fn eval(&self, p: &Point) -> ExactState;
}

/// Closed-form exact fields used by the builtin examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExactField {
    /// `x^2 y^2 exp(-(a x + b y))`.
    MonomialExp { a: f64, b: f64 },
    /// `scale (x^3 + y^3)`.
    CubicSum { scale: f64 },
    /// `offset + amp exp(-decay t) sin(kx x + px) sin(ky y + py)`.
    SinProduct { offset: f64, amp: f64, kx: f64, ky: f64, px: f64, py: f64, decay: f64 },
    /// `(c0 + c1 (x^2 + y^2))`, multiplied by `t` when `time_factor` is set.
    Radial { c0: f64, c1: f64, time_factor: bool },
}

impl ExactField {
    pub fn sin_sin(amp: f64, k: f64) -> Self {
        ExactField::SinProduct { offset: 0.0, amp, kx: k, ky: k, px: 0.0, py: 0.0, decay: 0.0 }
    }
}

impl ExactSolution for ExactField {
    fn eval(&self, p: &Point) -> ExactState {
        let (x, y, t) = (p.x, p.y, p.t);
        match *self {
            ExactField::MonomialExp { a, b } => {
                let e = (-(a * x + b * y)).exp();
                let m = x * x * y * y;
                let ux = (2.0 * x * y * y - a * m) * e;
                let uy = (2.0 * x * x * y - b * m) * e;
                let uxx = (2.0 * y * y - 4.0 * a * x * y * y + a * a * m) * e;
                let uyy = (2.0 * x * x - 4.0 * b * x * x * y + b * b * m) * e;
                let uxy = (4.0 * x * y - 2.0 * a * x * x * y) * e - b * ux;
                ExactState { u: m * e, grad: [ux, uy], hess: [uxx, uxy, uyy], ut: 0.0 }
            }
            ExactField::CubicSum { scale } => ExactState {
                u: scale * (x.powi(3) + y.powi(3)),
                grad: [3.0 * scale * x * x, 3.0 * scale * y * y],
                hess: [6.0 * scale * x, 0.0, 6.0 * scale * y],
                ut: 0.0,
            },
            ExactField::SinProduct { offset, amp, kx, ky, px, py, decay } => {
                let a = amp * (-decay * t).exp();
                let (sx, cx) = (kx * x + px).sin_cos();
                let (sy, cy) = (ky * y + py).sin_cos();
                ExactState {
                    u: offset + a * sx * sy,
                    grad: [a * kx * cx * sy, a * ky * sx * cy],
                    hess: [-a * kx * kx * sx * sy, a * kx * ky * cx * cy, -a * ky * ky * sx * sy],
                    ut: -decay * a * sx * sy,
                }
            }
            ExactField::Radial { c0, c1, time_factor } => {
                let base = c0 + c1 * (x * x + y * y);
                let tau = if time_factor { t } else { 1.0 };
                ExactState {
                    u: base * tau,
                    grad: [2.0 * c1 * x * tau, 2.0 * c1 * y * tau],
                    hess: [2.0 * c1 * tau, 0.0, 2.0 * c1 * tau],
                    ut: if time_factor { base } else { 0.0 },
                }
            }
        }
    }
}

/// Source `f(x, u)` with its first two `u`-partials.
pub trait Source: Debug + Send + Sync {
    /// Returns `[f, f_u, f_uu]`.
    fn eval(&self, p: &Point, u: f64) -> [f64; 3];
}

#[derive(Debug, Clone)]
pub enum SourceTerm {
    /// Derived from the exact solution; a function of `x` (and `t`) only.
    Manufactured,
    Custom(Arc<dyn Source>),
}

/// Data attached to one subdomain.
#[derive(Debug, Clone)]
pub struct SubdomainData {
    pub beta: Arc<dyn Coefficient>,
    pub source: SourceTerm,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

pub type JumpFn = Arc<dyn Fn(&Point, usize) -> (f64, f64) + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum JumpData {
    FromExact,
    Zero,
    /// `(w, v)` at a point of the given segment.
    Custom(JumpFn),
}

#[derive(Clone)]
pub enum BoundaryData {
    FromExact,
    Custom(BoundaryFn),
}

impl Debug for JumpData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JumpData::FromExact => write!(f, "FromExact"),
            JumpData::Zero => write!(f, "Zero"),
            JumpData::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryData::FromExact => write!(f, "FromExact"),
            BoundaryData::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Analysis-only constants; carried as metadata and never used numerically.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConstants {
    pub ellipticity: Option<f64>,
    pub monotonicity: Option<Vec<f64>>,
    pub poincare: Option<Vec<f64>>,
    pub source_lipschitz: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct InterfaceProblem {
    pub name: String,
    pub geometry: InterfaceGeometry,
    pub subdomains: Vec<SubdomainData>,
    pub jump: JumpData,
    pub boundary: BoundaryData,
    pub parabolic: bool,
    pub constants: AnalysisConstants,
}

/// Divergence `div(beta grad u)` for a given state, expanded by the chain rule.
pub fn divergence_flux(b: &CoefJet, grad: [f64; 2], hess: [f64; 3]) -> f64 {
    let [hxx, hxy, hyy] = hess;
    let [gx, gy] = grad;
    let bp = b.d_p();
    b.value * (hxx + hyy)
        + gx * (b.dx[0] + b.dz[0] * gx + bp[0] * hxx + bp[1] * hxy)
        + gy * (b.dx[1] + b.dz[0] * gy + bp[0] * hxy + bp[1] * hyy)
}

impl InterfaceProblem {
    pub fn subdomain_count(&self) -> usize {
        self.subdomains.len()
    }

    /// Input dimension of the networks: 3 for space-time problems.
    pub fn input_dim(&self) -> usize {
        if self.geometry.bbox.is_space_time() {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subdomains.len() != self.geometry.subdomain_count() {
            return Err(Error::Config(format!(
                "{} subdomain records for a geometry with {} subdomains",
                self.subdomains.len(),
                self.geometry.subdomain_count()
            )));
        }
        if self.parabolic != self.geometry.bbox.is_space_time() {
            return Err(Error::Config("parabolic problems need a time interval and vice versa".into()));
        }
        let needs_exact = self.subdomains.iter().any(|s| matches!(s.source, SourceTerm::Manufactured))
            || matches!(self.jump, JumpData::FromExact)
            || matches!(self.boundary, BoundaryData::FromExact);
        if needs_exact && self.subdomains.iter().any(|s| s.exact.is_none()) {
            return Err(Error::Config("manufactured data requires an exact solution on every subdomain".into()));
        }
        Ok(())
    }

    fn exact(&self, k: usize) -> Result<&Arc<dyn ExactSolution>> {
        self.subdomains
            .get(k)
            .ok_or_else(|| Error::Config(format!("no subdomain {k}")))?
            .exact
            .as_ref()
            .ok_or_else(|| Error::Config(format!("subdomain {k} has no exact solution")))
    }

    pub fn exact_state(&self, k: usize, p: &Point) -> Result<ExactState> {
        Ok(self.exact(k)?.eval(p))
    }

    pub fn has_exact(&self) -> bool {
        self.subdomains.iter().all(|s| s.exact.is_some())
    }

    /// `f = [parabolic] u_t - div(beta grad u)` at the exact solution of subdomain `k`.
    pub fn manufactured_source(&self, k: usize, p: &Point) -> Result<f64> {
        let e = self.exact_state(k, p)?;
        let b = self.subdomains[k].beta.jet(p, e.u, e.grad);
        let ut = if self.parabolic { e.ut } else { 0.0 };
        Ok(ut - divergence_flux(&b, e.grad, e.hess))
    }

    /// `[f, f_u, f_uu]` in subdomain `k` at state `u`.
    pub fn source(&self, k: usize, p: &Point, u: f64) -> Result<[f64; 3]> {
        match &self.subdomains[k].source {
            SourceTerm::Manufactured => Ok([self.manufactured_source(k, p)?, 0.0, 0.0]),
            SourceTerm::Custom(s) => Ok(s.eval(p, u)),
        }
    }

    /// `(w, v)` from the exact solutions on both sides of `segment`.
    pub fn jump_data_from_exact(&self, segment: usize, p: &Point, normal: [f64; 2]) -> Result<(f64, f64)> {
        if self.geometry.classify_with_tol(p, 1e-9)? != Region::OnGamma {
            return Err(Error::NotOnInterface { point: p.as_array() });
        }
        let seg = self
            .geometry
            .interfaces()
            .get(segment)
            .copied()
            .ok_or_else(|| Error::Config(format!("no interface segment {segment}")))?;
        let side = |k: usize| -> Result<(f64, f64)> {
            let e = self.exact_state(k, p)?;
            let beta = self.subdomains[k].beta.eval(p, e.u, e.grad);
            Ok((e.u, beta * (e.grad[0] * normal[0] + e.grad[1] * normal[1])))
        };
        let (up, qp) = side(seg.plus)?;
        let (um, qm) = side(seg.minus)?;
        Ok((up - um, qp - qm))
    }

    pub fn jump_data(&self, segment: usize, p: &Point, normal: [f64; 2]) -> Result<(f64, f64)> {
        match &self.jump {
            JumpData::FromExact => self.jump_data_from_exact(segment, p, normal),
            JumpData::Zero => Ok((0.0, 0.0)),
            JumpData::Custom(f) => Ok(f(p, segment)),
        }
    }

    /// Dirichlet value at boundary point `p` belonging to subdomain `k`.
    pub fn boundary_value(&self, k: usize, p: &Point) -> Result<f64> {
        match &self.boundary {
            BoundaryData::FromExact => Ok(self.exact_state(k, p)?.u),
            BoundaryData::Custom(g) => Ok(g(p)),
        }
    }

    /// Exact value at an arbitrary point, using its subdomain.
    pub fn exact_value(&self, p: &Point) -> Result<Option<f64>> {
        match self.geometry.classify(p)? {
            Region::Subdomain(k) => Ok(Some(self.exact_state(k, p)?.u)),
            Region::OnGamma => Ok(None),
        }
    }

    /// Smallest `beta` seen on random probes of subdomain `k`, evaluated at the
    /// exact state when available and at `u = 0, grad u = 0` otherwise.
    pub fn ellipticity_floor(&self, k: usize, samples: usize, seed: u64) -> Result<f64> {
        let b = &self.geometry.bbox;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut floor = f64::INFINITY;
        let mut found = 0;
        for _ in 0..samples * 100 {
            if found == samples {
                break;
            }
            let t = b.t.map_or(0.0, |t| rng.gen_range(t[0]..t[1]));
            let p = Point::with_time(rng.gen_range(b.x[0]..b.x[1]), rng.gen_range(b.y[0]..b.y[1]), t);
            if self.geometry.classify(&p)? != Region::Subdomain(k) {
                continue;
            }
            found += 1;
            let (u, g) = match &self.subdomains[k].exact {
                Some(e) => {
                    let s = e.eval(&p);
                    (s.u, s.grad)
                }
                None => (0.0, [0.0, 0.0]),
            };
            floor = floor.min(self.subdomains[k].beta.eval(&p, u, g));
        }
        Ok(floor)
    }

    /// Check uniform ellipticity on every subdomain; returns the observed floor.
    pub fn check_ellipticity(&self, samples: usize, seed: u64) -> Result<f64> {
        let mut delta = f64::INFINITY;
        for k in 0..self.subdomain_count() {
            delta = delta.min(self.ellipticity_floor(k, samples, seed + k as u64)?);
        }
        if !(delta > 0.0) {
            return Err(Error::Config(format!("coefficient not uniformly elliptic (min beta = {delta:e})")));
        }
        Ok(delta)
    }
}

/// Builtin example identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
    Ex6,
}

impl ExampleId {
    pub const ALL: [ExampleId; 6] =
        [ExampleId::Ex1, ExampleId::Ex2, ExampleId::Ex3, ExampleId::Ex4, ExampleId::Ex5, ExampleId::Ex6];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleId::Ex1 => "ex1",
            ExampleId::Ex2 => "ex2",
            ExampleId::Ex3 => "ex3",
            ExampleId::Ex4 => "ex4",
            ExampleId::Ex5 => "ex5",
            ExampleId::Ex6 => "ex6",
        }
    }
}

impl std::str::FromStr for ExampleId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExampleId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown example '{s}' (expected ex1..ex6)")))
    }
}

impl std::fmt::Display for ExampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tunable parameters of the builtin examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExampleParams {
    /// `beta+` of the high-contrast example.
    pub contrast: f64,
    pub petals: u32,
    pub plum_r0: f64,
    pub plum_amplitude: f64,
    /// End of the time interval of the parabolic example.
    pub horizon: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self { contrast: 1e8, petals: 5, plum_r0: 0.5, plum_amplitude: 0.1, horizon: 0.2 }
    }
}

fn side(beta: SeparableCoefficient, exact: ExactField) -> SubdomainData {
    SubdomainData { beta: Arc::new(beta), source: SourceTerm::Manufactured, exact: Some(Arc::new(exact)) }
}

fn poly_u(coeffs: &[f64]) -> SeparableCoefficient {
    SeparableCoefficient::in_u(vec![ScalarTerm::poly(coeffs)])
}

/// The builtin problem `id`. Subdomain 0 is the plus side, 1 the minus side
/// (quadrants in reading order for the four-subdomain case).
pub fn builtin_example(id: ExampleId, params: &ExampleParams) -> Result<InterfaceProblem> {
    let square = BoundingBox::rect([-1.0, 1.0], [-1.0, 1.0]);
    let circle = GeometryKind::Circle { center: [0.0, 0.0], radius: 0.5 };
    let (geometry, subdomains, parabolic) = match id {
        ExampleId::Ex1 => (
            InterfaceGeometry::new(GeometryKind::VerticalLine { x0: 0.0 }, BoundingBox::rect([-1.0, 1.0], [0.0, 1.0]))?,
            vec![
                side(poly_u(&[1.0, 0.0, 0.5]), ExactField::MonomialExp { a: 1.0, b: 0.0 }),
                side(poly_u(&[1.0, 1.0]), ExactField::MonomialExp { a: 0.0, b: 0.0 }),
            ],
            false,
        ),
        ExampleId::Ex2 => (
            InterfaceGeometry::new(GeometryKind::AxesCross, square)?,
            vec![
                side(poly_u(&[1.0, 1.0]), ExactField::MonomialExp { a: 0.0, b: 0.0 }),
                side(poly_u(&[1.0, 0.0, 0.5]), ExactField::MonomialExp { a: 1.0, b: 0.0 }),
                side(poly_u(&[1.0, 0.0, 0.25]), ExactField::MonomialExp { a: 0.0, b: 1.0 }),
                side(poly_u(&[1.0, 0.0, 0.0, 0.1]), ExactField::MonomialExp { a: 1.0, b: 1.0 }),
            ],
            false,
        ),
        ExampleId::Ex3 => (
            InterfaceGeometry::new(
                GeometryKind::PlumBlossom { r0: params.plum_r0, amplitude: params.plum_amplitude, petals: params.petals },
                square,
            )?,
            vec![
                side(
                    SeparableCoefficient {
                        spatial_r2: 1.0,
                        u_terms: vec![ScalarTerm::Exp { scale: 1.0, rate: 0.5 }],
                        grad_terms: vec![],
                    },
                    EX3_EXACT_PLUS,
                ),
                side(
                    SeparableCoefficient::in_u(vec![ScalarTerm::poly(&[1.0]), ScalarTerm::Sin { scale: 1.0, freq: 1.0 }]),
                    EX3_EXACT_MINUS,
                ),
            ],
            false,
        ),
        ExampleId::Ex4 => {
            if !(params.contrast > 0.0 && params.contrast.is_finite()) {
                return Err(Error::Config(format!("contrast must be positive, got {}", params.contrast)));
            }
            (
                InterfaceGeometry::new(circle, square)?,
                vec![
                    side(SeparableCoefficient::constant(params.contrast), ExactField::CubicSum { scale: 1.0 / params.contrast }),
                    side(poly_u(&[1.0, 0.0, 0.0, 1.0]), ExactField::sin_sin(1.0, PI)),
                ],
                false,
            )
        }
        ExampleId::Ex5 => (
            InterfaceGeometry::new(
                GeometryKind::MovingCircle { rate: 0.5, r0: 0.5 },
                BoundingBox::space_time([-1.0, 1.0], [-1.0, 1.0], [0.0, params.horizon]),
            )?,
            vec![
                side(
                    poly_u(&[1.0, 0.0, 1.0]),
                    ExactField::SinProduct { offset: 0.0, amp: 1.0, kx: PI, ky: PI, px: 0.0, py: 0.0, decay: 1.0 },
                ),
                side(
                    SeparableCoefficient::in_u(vec![ScalarTerm::Exp { scale: 1.0, rate: 1.0 }, ScalarTerm::poly(&[1.0])]),
                    ExactField::Radial { c0: 0.0, c1: 1.0, time_factor: true },
                ),
            ],
            true,
        ),
        ExampleId::Ex6 => (
            InterfaceGeometry::new(circle, square)?,
            vec![
                side(
                    SeparableCoefficient {
                        spatial_r2: 0.0,
                        u_terms: vec![ScalarTerm::poly(&[1.0])],
                        grad_terms: vec![ScalarTerm::poly(&[0.0, 1.0])],
                    },
                    ExactField::SinProduct { offset: 0.25, amp: 0.5, kx: PI, ky: PI, px: 0.0, py: 0.0, decay: 0.0 },
                ),
                side(poly_u(&[1.0, 0.0, 1.0]), ExactField::Radial { c0: 0.25, c1: -1.0, time_factor: false }),
            ],
            false,
        ),
    };
    let jump = match id {
        ExampleId::Ex1 | ExampleId::Ex2 => JumpData::Zero,
        _ => JumpData::FromExact,
    };
    let problem = InterfaceProblem {
        name: id.to_string(),
        geometry,
        subdomains,
        jump,
        boundary: BoundaryData::FromExact,
        parabolic,
        constants: AnalysisConstants::default(),
    };
    problem.validate()?;
    Ok(problem)
}

/// Exact fields of the plum-blossom example, which has no closed-form
/// reference of its own; both are smooth with a nonzero jump across the curve.
pub const EX3_EXACT_PLUS: ExactField =
    ExactField::SinProduct { offset: 0.0, amp: 1.0, kx: 1.0, ky: 1.0, px: 0.0, py: PI / 2.0, decay: 0.0 };
pub const EX3_EXACT_MINUS: ExactField = ExactField::Radial { c0: 0.5, c1: 0.5, time_factor: false };
