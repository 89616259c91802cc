//! Interface geometries, level-set classification and collocation sampling.
//!
//! Every interface is represented by a level set `phi` with `phi < 0` in the
//! minus region, `phi > 0` in the plus region and `phi = 0` on the interface.
//! The unit normal on the interface points from the plus side into the minus
//! side, i.e. `n = -grad(phi) / |grad(phi)|`.
//!
//! Subdomains are addressed by index. For the two-region geometries index `0`
//! is the plus region and index `1` the minus region; the axes cross uses one
//! index per quadrant.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for `|phi| <= tol` to count as lying on the interface.
pub const ON_GAMMA_TOL: f64 = 1e-12;
/// Interface samples on the axes cross keep this distance from the origin.
pub const CROSS_EXCLUSION_RADIUS: f64 = 1e-8;

pub const PLUS: usize = 0;
pub const MINUS: usize = 1;

/// A point in space, optionally carrying a time coordinate.
///
/// Steady problems keep `t = 0` and ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y, t: 0.0 }
    }

    pub const fn with_time(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryKind {
    /// `phi = x - x0`; the plus region lies to the right.
    VerticalLine { x0: f64 },
    /// Four quadrants separated by the coordinate axes.
    AxesCross,
    /// `phi = |x - c| - r`; the minus region is the disk.
    Circle { center: [f64; 2], radius: f64 },
    /// Polar curve `r(theta) = r0 + amplitude * cos(petals * theta)` around the origin.
    PlumBlossom { r0: f64, amplitude: f64, petals: u32 },
    /// Circle around the origin with radius `rate * t + r0`.
    MovingCircle { rate: f64, r0: f64 },
}

/// Axis-aligned box, plus a time interval for space-time problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<[f64; 2]>,
}

impl BoundingBox {
    pub fn rect(x: [f64; 2], y: [f64; 2]) -> Self {
        Self { x, y, t: None }
    }

    pub fn space_time(x: [f64; 2], y: [f64; 2], t: [f64; 2]) -> Self {
        Self { x, y, t: Some(t) }
    }

    pub fn contains(&self, p: &Point) -> bool {
        let eps = 1e-12;
        let inside = |v: f64, r: [f64; 2]| v >= r[0] - eps && v <= r[1] + eps;
        inside(p.x, self.x) && inside(p.y, self.y) && self.t.map_or(true, |t| inside(p.t, t))
    }

    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    pub fn is_space_time(&self) -> bool {
        self.t.is_some()
    }

    /// Point on the rectangle boundary at perimeter fraction `s` in `[0, 1)`,
    /// walking counter-clockwise from the lower-left corner.
    pub fn perimeter_point(&self, s: f64) -> (f64, f64, BoundarySide) {
        let (w, h) = (self.width(), self.height());
        let mut d = s.rem_euclid(1.0) * self.perimeter();
        if d < w {
            return (self.x[0] + d, self.y[0], BoundarySide::Bottom);
        }
        d -= w;
        if d < h {
            return (self.x[1], self.y[0] + d, BoundarySide::Right);
        }
        d -= h;
        if d < w {
            return (self.x[1] - d, self.y[1], BoundarySide::Top);
        }
        d -= w;
        (self.x[0], (self.y[1] - d).max(self.y[0]), BoundarySide::Left)
    }
}

/// Classification of a point relative to the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Subdomain(usize),
    OnGamma,
}

impl Region {
    pub const OMEGA_PLUS: Region = Region::Subdomain(PLUS);
    pub const OMEGA_MINUS: Region = Region::Subdomain(MINUS);
}

/// How an interface location is addressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterfaceParam {
    /// Polar angle; only meaningful for closed curves.
    Angle(f64),
    /// Fraction of the segment in `[0, 1]`; closed curves map it to `2 pi s`.
    Fraction(f64),
}

/// One piece of the interface separating a fixed (plus, minus) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceSegment {
    pub plus: usize,
    pub minus: usize,
    /// Length used to distribute samples between segments.
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySide {
    Bottom,
    Right,
    Top,
    Left,
    /// The `t = t0` slice of a space-time domain.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceGeometry {
    pub kind: GeometryKind,
    pub bbox: BoundingBox,
    /// When set, `phi` is negated: plus and minus swap and normals flip.
    #[serde(default)]
    pub negated: bool,
}

impl InterfaceGeometry {
    pub fn new(kind: GeometryKind, bbox: BoundingBox) -> Result<Self> {
        let geom = Self { kind, bbox, negated: false };
        geom.validate()?;
        Ok(geom)
    }

    pub fn negated(&self) -> Self {
        Self { negated: !self.negated, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let b = &self.bbox;
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(Error::Config("bounding box must have positive extent".into()));
        }
        let fits = |cx: f64, cy: f64, r: f64| {
            cx - r > b.x[0] && cx + r < b.x[1] && cy - r > b.y[0] && cy + r < b.y[1]
        };
        match self.kind {
            GeometryKind::VerticalLine { x0 } => {
                if !(x0 > b.x[0] && x0 < b.x[1]) {
                    return Err(Error::Config(format!("line x0={x0} outside the box")));
                }
            }
            GeometryKind::AxesCross => {
                if !(b.x[0] < 0.0 && b.x[1] > 0.0 && b.y[0] < 0.0 && b.y[1] > 0.0) {
                    return Err(Error::Config("axes cross requires the origin inside the box".into()));
                }
            }
            GeometryKind::Circle { center, radius } => {
                if !(radius > 0.0 && fits(center[0], center[1], radius)) {
                    return Err(Error::Config("circle must lie strictly inside the box".into()));
                }
            }
            GeometryKind::PlumBlossom { r0, amplitude, petals } => {
                if petals == 0 {
                    return Err(Error::Config("plum blossom needs at least one petal".into()));
                }
                if !(r0 - amplitude.abs() > 0.0) {
                    return Err(Error::Config("plum blossom radius must stay positive (r0 > |A|)".into()));
                }
                if !fits(0.0, 0.0, r0 + amplitude.abs()) {
                    return Err(Error::Config("plum blossom must lie strictly inside the box".into()));
                }
            }
            GeometryKind::MovingCircle { rate, r0 } => {
                let t = b
                    .t
                    .ok_or_else(|| Error::Config("moving circle needs a time interval".into()))?;
                let (ra, rb) = (rate * t[0] + r0, rate * t[1] + r0);
                if !(ra > 0.0 && rb > 0.0 && fits(0.0, 0.0, ra.max(rb))) {
                    return Err(Error::Config("moving circle must stay inside the box".into()));
                }
            }
        }
        Ok(())
    }

    pub fn subdomain_count(&self) -> usize {
        match self.kind {
            GeometryKind::AxesCross => 4,
            _ => 2,
        }
    }

    pub fn is_moving(&self) -> bool {
        matches!(self.kind, GeometryKind::MovingCircle { .. })
    }

    fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }

    /// Level-set value and its spatial gradient. For the axes cross this is
    /// the level set of the nearer axis.
    pub fn level_set(&self, p: &Point) -> (f64, [f64; 2]) {
        let (phi, grad) = match self.kind {
            GeometryKind::VerticalLine { x0 } => (p.x - x0, [1.0, 0.0]),
            GeometryKind::AxesCross => {
                if p.x.abs() <= p.y.abs() {
                    (p.x, [1.0, 0.0])
                } else {
                    (p.y, [0.0, 1.0])
                }
            }
            GeometryKind::Circle { center, radius } => radial(p.x - center[0], p.y - center[1], radius),
            GeometryKind::MovingCircle { rate, r0 } => radial(p.x, p.y, rate * p.t + r0),
            GeometryKind::PlumBlossom { r0, amplitude, petals } => {
                let rho = p.x.hypot(p.y);
                let theta = p.y.atan2(p.x);
                let m = petals as f64;
                let phi = rho - (r0 + amplitude * (m * theta).cos());
                if rho == 0.0 {
                    (phi, [1.0, 0.0])
                } else {
                    let (c, s) = (p.x / rho, p.y / rho);
                    let tang = amplitude * m * (m * theta).sin() / rho;
                    (phi, [c - tang * s, s + tang * c])
                }
            }
        };
        let sg = self.sign();
        (sg * phi, [sg * grad[0], sg * grad[1]])
    }

    /// Unit normal from the plus side into the minus side at (or near) `p`.
    pub fn normal_at(&self, p: &Point) -> [f64; 2] {
        let (_, g) = self.level_set(p);
        let norm = g[0].hypot(g[1]);
        [-g[0] / norm, -g[1] / norm]
    }

    pub fn classify(&self, p: &Point) -> Result<Region> {
        self.classify_with_tol(p, ON_GAMMA_TOL)
    }

    pub fn classify_with_tol(&self, p: &Point, tol: f64) -> Result<Region> {
        if !self.bbox.contains(p) {
            return Err(Error::OutsideDomain { point: p.as_array() });
        }
        if let GeometryKind::AxesCross = self.kind {
            if p.x.abs() <= tol || p.y.abs() <= tol {
                return Ok(Region::OnGamma);
            }
            let q = match (p.x < 0.0, p.y > 0.0) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            return Ok(Region::Subdomain(q));
        }
        let (phi, _) = self.level_set(p);
        Ok(if phi.abs() <= tol {
            Region::OnGamma
        } else if phi > 0.0 {
            Region::OMEGA_PLUS
        } else {
            Region::OMEGA_MINUS
        })
    }

    /// Interface pieces with their side pairs.
    pub fn interfaces(&self) -> Vec<InterfaceSegment> {
        let b = &self.bbox;
        let (p, m) = if self.negated { (MINUS, PLUS) } else { (PLUS, MINUS) };
        let mut segs = match self.kind {
            GeometryKind::VerticalLine { .. } => vec![InterfaceSegment { plus: p, minus: m, length: b.height() }],
            GeometryKind::AxesCross => vec![
                InterfaceSegment { plus: 1, minus: 0, length: b.y[1] },
                InterfaceSegment { plus: 3, minus: 2, length: -b.y[0] },
                InterfaceSegment { plus: 0, minus: 2, length: -b.x[0] },
                InterfaceSegment { plus: 1, minus: 3, length: b.x[1] },
            ],
            GeometryKind::Circle { radius, .. } => vec![InterfaceSegment { plus: p, minus: m, length: 2.0 * PI * radius }],
            GeometryKind::PlumBlossom { r0, .. } => vec![InterfaceSegment { plus: p, minus: m, length: 2.0 * PI * r0 }],
            GeometryKind::MovingCircle { r0, .. } => vec![InterfaceSegment { plus: p, minus: m, length: 2.0 * PI * r0 }],
        };
        if self.negated && matches!(self.kind, GeometryKind::AxesCross) {
            for s in &mut segs {
                std::mem::swap(&mut s.plus, &mut s.minus);
            }
        }
        segs
    }

    /// Point on interface segment `segment` and the unit normal there.
    pub fn interface_point_and_normal(
        &self,
        segment: usize,
        param: InterfaceParam,
        t: Option<f64>,
    ) -> Result<(Point, [f64; 2])> {
        let b = &self.bbox;
        let nseg = self.interfaces().len();
        if segment >= nseg {
            return Err(Error::Unsupported(format!("segment {segment} of {nseg}")));
        }
        let time = t.unwrap_or(0.0);
        let fraction = |param: InterfaceParam| -> Result<f64> {
            match param {
                InterfaceParam::Fraction(s) if (0.0..=1.0).contains(&s) => Ok(s),
                InterfaceParam::Fraction(s) => Err(Error::Unsupported(format!("fraction {s} outside [0, 1]"))),
                InterfaceParam::Angle(_) => Err(Error::Unsupported("open interfaces are not parameterized by angle".into())),
            }
        };
        let angle = |param: InterfaceParam| match param {
            InterfaceParam::Angle(a) => a,
            InterfaceParam::Fraction(s) => 2.0 * PI * s,
        };
        let point = match self.kind {
            GeometryKind::VerticalLine { x0 } => {
                let s = fraction(param)?;
                Point::with_time(x0, b.y[0] + s * b.height(), time)
            }
            GeometryKind::AxesCross => {
                let s = fraction(param)?;
                let seg = self.interfaces()[segment];
                let len = CROSS_EXCLUSION_RADIUS + s * (seg.length - CROSS_EXCLUSION_RADIUS);
                match segment {
                    0 => Point::with_time(0.0, len, time),
                    1 => Point::with_time(0.0, -len, time),
                    2 => Point::with_time(-len, 0.0, time),
                    _ => Point::with_time(len, 0.0, time),
                }
            }
            GeometryKind::Circle { center, radius } => {
                let a = angle(param);
                Point::with_time(center[0] + radius * a.cos(), center[1] + radius * a.sin(), time)
            }
            GeometryKind::PlumBlossom { r0, amplitude, petals } => {
                let a = angle(param);
                let r = r0 + amplitude * (petals as f64 * a).cos();
                Point::with_time(r * a.cos(), r * a.sin(), time)
            }
            GeometryKind::MovingCircle { rate, r0 } => {
                let t = t.ok_or_else(|| Error::Unsupported("moving interface needs a time".into()))?;
                let a = angle(param);
                let r = rate * t + r0;
                Point::with_time(r * a.cos(), r * a.sin(), t)
            }
        };
        let normal = match self.kind {
            GeometryKind::AxesCross => {
                let n = if segment < 2 { [-1.0, 0.0] } else { [0.0, -1.0] };
                let sg = self.sign();
                [sg * n[0], sg * n[1]]
            }
            _ => self.normal_at(&point),
        };
        Ok((point, normal))
    }

    /// Absolute level-set value used to keep test points away from the interface.
    pub fn interface_distance_proxy(&self, p: &Point) -> f64 {
        match self.kind {
            GeometryKind::AxesCross => p.x.abs().min(p.y.abs()),
            _ => self.level_set(p).0.abs(),
        }
    }
}

fn radial(dx: f64, dy: f64, radius: f64) -> (f64, [f64; 2]) {
    let rho = dx.hypot(dy);
    if rho == 0.0 {
        (-radius, [1.0, 0.0])
    } else {
        (rho - radius, [dx / rho, dy / rho])
    }
}

/// A collocation point on the interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfacePoint {
    pub point: Point,
    pub normal: [f64; 2],
    pub segment: usize,
    pub param: f64,
}

/// A collocation point on the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub point: Point,
    pub subdomain: usize,
    pub side: BoundarySide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    UniformGrid,
    #[default]
    SeededUniformRandom,
}

/// Positive weights of the residual groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualWeights {
    /// One weight per subdomain interior.
    pub interior: Vec<f64>,
    pub interface_value: f64,
    pub interface_flux: f64,
    pub boundary: f64,
}

impl ResidualWeights {
    pub fn uniform(subdomains: usize) -> Self {
        Self { interior: vec![1.0; subdomains], interface_value: 1.0, interface_flux: 1.0, boundary: 1.0 }
    }

    fn validate(&self, subdomains: usize) -> Result<()> {
        if self.interior.len() != subdomains {
            return Err(Error::Config(format!(
                "expected {subdomains} interior weights, got {}",
                self.interior.len()
            )));
        }
        let all = self.interior.iter().chain([&self.interface_value, &self.interface_flux, &self.boundary]);
        for &w in all {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("residual weights must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// Requested point counts and sampling strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationSpec {
    /// Interior counts, one per subdomain.
    pub interior: Vec<usize>,
    pub interface: usize,
    pub boundary: usize,
    #[serde(default)]
    pub strategy: SamplingStrategy,
    pub weights: ResidualWeights,
}

impl CollocationSpec {
    pub fn new(interior: Vec<usize>, interface: usize, boundary: usize) -> Self {
        let n = interior.len();
        Self { interior, interface, boundary, strategy: SamplingStrategy::default(), weights: ResidualWeights::uniform(n) }
    }

    /// Rows of the stacked residual: interiors, two per interface point, boundary.
    pub fn total_rows(&self) -> usize {
        self.interior.iter().sum::<usize>() + 2 * self.interface + self.boundary
    }
}

/// Sampled collocation points for every residual group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub interior: Vec<Vec<Point>>,
    /// Sorted by segment.
    pub interface: Vec<InterfacePoint>,
    /// Sorted by subdomain.
    pub boundary: Vec<BoundaryPoint>,
    pub weights: ResidualWeights,
    pub seed: u64,
}

impl CollocationSet {
    pub fn total_rows(&self) -> usize {
        self.interior.iter().map(Vec::len).sum::<usize>() + 2 * self.interface.len() + self.boundary.len()
    }

    pub fn subdomain_count(&self) -> usize {
        self.interior.len()
    }
}

const INTERFACE_STREAM: u64 = 1_000;
const BOUNDARY_STREAM: u64 = 2_000;

fn group_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Split `total` into integer shares proportional to `weights` (largest remainder).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut shares: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total - shares.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

/// Sample collocation points for every residual group of `geom`.
pub fn sample_collocation(geom: &InterfaceGeometry, spec: &CollocationSpec, seed: u64) -> Result<CollocationSet> {
    let nsub = geom.subdomain_count();
    if spec.interior.len() != nsub {
        return Err(Error::Config(format!(
            "geometry has {nsub} subdomains but {} interior counts were given",
            spec.interior.len()
        )));
    }
    if spec.interior.iter().any(|&n| n == 0) || spec.interface == 0 || spec.boundary == 0 {
        return Err(Error::Config("all collocation counts must be at least 1".into()));
    }
    spec.weights.validate(nsub)?;

    let interior = (0..nsub)
        .map(|k| match spec.strategy {
            SamplingStrategy::SeededUniformRandom => sample_interior_random(geom, k, spec.interior[k], seed),
            SamplingStrategy::UniformGrid => sample_interior_grid(geom, k, spec.interior[k]),
        })
        .collect::<Result<Vec<_>>>()?;
    let interface = sample_interface(geom, spec.interface, spec.strategy, seed)?;
    let boundary = sample_boundary(geom, spec.boundary, spec.strategy, seed)?;

    Ok(CollocationSet { interior, interface, boundary, weights: spec.weights.clone(), seed })
}

fn random_in_box(b: &BoundingBox, rng: &mut ChaCha8Rng) -> Point {
    let x = rng.gen_range(b.x[0]..b.x[1]);
    let y = rng.gen_range(b.y[0]..b.y[1]);
    let t = b.t.map_or(0.0, |t| rng.gen_range(t[0]..t[1]));
    Point::with_time(x, y, t)
}

fn sample_interior_random(geom: &InterfaceGeometry, k: usize, n: usize, seed: u64) -> Result<Vec<Point>> {
    let mut rng = group_rng(seed, k as u64);
    let mut out = Vec::with_capacity(n);
    let max_attempts = 100 * n;
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= max_attempts {
            return Err(Error::Sampling(format!(
                "subdomain {k}: only {} of {n} points after {max_attempts} draws",
                out.len()
            )));
        }
        attempts += 1;
        let p = random_in_box(&geom.bbox, &mut rng);
        if geom.classify_with_tol(&p, 1e-10)? == Region::Subdomain(k) {
            out.push(p);
        }
    }
    Ok(out)
}

fn sample_interior_grid(geom: &InterfaceGeometry, k: usize, n: usize) -> Result<Vec<Point>> {
    let b = &geom.bbox;
    let space_time = b.t.is_some();
    // grow the lattice until the region holds enough nodes, then thin evenly
    let mut res = ((n as f64).powf(if space_time { 1.0 / 3.0 } else { 0.5 }).ceil() as usize).max(2);
    for _ in 0..64 {
        let mut nodes = Vec::new();
        let nt = if space_time { res } else { 1 };
        for it in 0..nt {
            let t = b.t.map_or(0.0, |t| t[0] + (it as f64 + 0.5) / nt as f64 * (t[1] - t[0]));
            for iy in 0..res {
                let y = b.y[0] + (iy as f64 + 0.5) / res as f64 * b.height();
                for ix in 0..res {
                    let x = b.x[0] + (ix as f64 + 0.5) / res as f64 * b.width();
                    let p = Point::with_time(x, y, t);
                    if geom.classify_with_tol(&p, 1e-10)? == Region::Subdomain(k) {
                        nodes.push(p);
                    }
                }
            }
        }
        if nodes.len() >= n {
            let stride = nodes.len() as f64 / n as f64;
            return Ok((0..n).map(|i| nodes[(i as f64 * stride) as usize]).collect());
        }
        res = (res as f64 * 1.25).ceil() as usize + 1;
    }
    Err(Error::Sampling(format!("subdomain {k}: grid could not supply {n} nodes")))
}

fn sample_interface(
    geom: &InterfaceGeometry,
    n: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<InterfacePoint>> {
    let segs = geom.interfaces();
    let shares = apportion(n, &segs.iter().map(|s| s.length).collect::<Vec<_>>());
    let mut rng = group_rng(seed, INTERFACE_STREAM);
    let tspan = geom.bbox.t;
    let mut out = Vec::with_capacity(n);
    for (si, &count) in shares.iter().enumerate() {
        for i in 0..count {
            let (s, t) = match strategy {
                SamplingStrategy::SeededUniformRandom => {
                    let s = rng.gen_range(0.0..1.0);
                    (s, tspan.map(|t| rng.gen_range(t[0]..t[1])))
                }
                SamplingStrategy::UniformGrid => {
                    let s = (i as f64 + 0.5) / count as f64;
                    // golden-ratio stride spreads the time coordinate
                    let tf = ((i as f64) * 0.618_033_988_749_895).fract();
                    (s, tspan.map(|t| t[0] + tf * (t[1] - t[0])))
                }
            };
            let (point, normal) = geom.interface_point_and_normal(si, InterfaceParam::Fraction(s), t)?;
            out.push(InterfacePoint { point, normal, segment: si, param: s });
        }
    }
    Ok(out)
}

fn sample_boundary(
    geom: &InterfaceGeometry,
    n: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<BoundaryPoint>> {
    let b = geom.bbox;
    let mut rng = group_rng(seed, BOUNDARY_STREAM);
    // space-time: lateral surface plus the initial slice, by measure
    let (n_lateral, n_initial) = match b.t {
        Some(t) => {
            let lateral = b.perimeter() * (t[1] - t[0]);
            let initial = b.width() * b.height();
            let shares = apportion(n, &[lateral, initial]);
            (shares[0], shares[1])
        }
        None => (n, 0),
    };
    let mut out = Vec::with_capacity(n);
    let push = |p: Point, side: BoundarySide, out: &mut Vec<BoundaryPoint>| -> Result<bool> {
        match geom.classify_with_tol(&p, 1e-10)? {
            Region::Subdomain(k) => {
                out.push(BoundaryPoint { point: p, subdomain: k, side });
                Ok(true)
            }
            Region::OnGamma => Ok(false),
        }
    };
    let max_attempts = 100 * n.max(1);
    let mut attempts = 0;
    let mut i = 0usize;
    while out.len() < n_lateral {
        if attempts >= max_attempts {
            return Err(Error::Sampling("boundary sampling exhausted".into()));
        }
        attempts += 1;
        let (s, tf) = match strategy {
            SamplingStrategy::SeededUniformRandom => (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
            SamplingStrategy::UniformGrid => {
                // shift by a quarter spacing so grid nodes avoid corners and interface crossings
                let s = (i as f64 + 0.25) / n_lateral as f64;
                (s, ((i as f64) * 0.618_033_988_749_895).fract())
            }
        };
        i += 1;
        let (x, y, side) = b.perimeter_point(s);
        let t = b.t.map_or(0.0, |t| t[0] + tf * (t[1] - t[0]));
        push(Point::with_time(x, y, t), side, &mut out)?;
    }
    if let Some(t) = b.t {
        let target = out.len() + n_initial;
        let mut j = 0usize;
        let side = (n_initial as f64).sqrt().ceil().max(1.0) as usize;
        while out.len() < target {
            if attempts >= max_attempts {
                return Err(Error::Sampling("initial-slice sampling exhausted".into()));
            }
            attempts += 1;
            let p = match strategy {
                SamplingStrategy::SeededUniformRandom => {
                    Point::with_time(rng.gen_range(b.x[0]..b.x[1]), rng.gen_range(b.y[0]..b.y[1]), t[0])
                }
                SamplingStrategy::UniformGrid => {
                    let (ix, iy) = (j % side, (j / side) % side);
                    Point::with_time(
                        b.x[0] + (ix as f64 + 0.5) / side as f64 * b.width(),
                        b.y[0] + (iy as f64 + 0.5) / side as f64 * b.height(),
                        t[0],
                    )
                }
            };
            j += 1;
            push(p, BoundarySide::Initial, &mut out)?;
        }
    }
    out.sort_by_key(|bp| bp.subdomain);
    Ok(out)
}
