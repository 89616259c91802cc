//! Error measures, interface traces, heatmap samples and residual diagnostics.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::assembly::RowGroup;
use crate::basis::PiecewiseField;
use crate::error::{Error, Result};
use crate::geometry::{InterfaceParam, Point, Region};
use crate::perturbation::CorrectedSolution;
use crate::problem::InterfaceProblem;

/// Points within this level-set distance of the interface are left out.
pub const INTERFACE_BAND: f64 = 1e-10;

/// Uniform tensor test grid over the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestGrid {
    pub nx: usize,
    pub ny: usize,
    /// Time levels for space-time problems.
    pub nt: Option<usize>,
}

impl TestGrid {
    /// 201 x 201, or 101 x 101 x 11 in space-time.
    pub fn default_for(problem: &InterfaceProblem) -> Self {
        if problem.parabolic {
            Self { nx: 101, ny: 101, nt: Some(11) }
        } else {
            Self { nx: 201, ny: 201, nt: None }
        }
    }

    pub fn coarse_for(problem: &InterfaceProblem) -> Self {
        if problem.parabolic {
            Self { nx: 41, ny: 41, nt: Some(5) }
        } else {
            Self { nx: 81, ny: 81, nt: None }
        }
    }

    fn points(&self, problem: &InterfaceProblem) -> Result<Vec<Point>> {
        let b = &problem.geometry.bbox;
        let lin = |r: [f64; 2], n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![0.5 * (r[0] + r[1])];
            }
            (0..n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64).collect()
        };
        if self.nx == 0 || self.ny == 0 || self.nt == Some(0) {
            return Err(Error::Config("test grid needs at least one point per axis".into()));
        }
        let times = match (b.t, self.nt) {
            (Some(t), Some(nt)) => lin(t, nt),
            (Some(t), None) => vec![t[1]],
            (None, _) => vec![0.0],
        };
        let (xs, ys) = (lin(b.x, self.nx), lin(b.y, self.ny));
        let mut out = Vec::with_capacity(times.len() * xs.len() * ys.len());
        for &t in &times {
            for &y in &ys {
                for &x in &xs {
                    out.push(Point::with_time(x, y, t));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub relative_l2: f64,
    pub relative_linf: f64,
}

/// `|u_g - u_h|_2 / |u_g|_2` and `max|u_g - u_h| / max|u_g|` over paired samples.
pub fn relative_errors(exact: &[f64], approx: &[f64]) -> Result<ErrorPair> {
    if exact.len() != approx.len() {
        return Err(Error::Shape(format!("{} exact values, {} approximations", exact.len(), approx.len())));
    }
    let (mut num2, mut den2, mut num_max, mut den_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (g, h) in exact.iter().zip(approx) {
        let d = (g - h).abs();
        num2 += d * d;
        den2 += g * g;
        num_max = num_max.max(d);
        den_max = den_max.max(g.abs());
    }
    if !(den2 > 0.0) || !(den_max > 0.0) {
        return Err(Error::Numerical("exact solution vanishes on the test set; relative error undefined".into()));
    }
    Ok(ErrorPair { relative_l2: (num2 / den2).sqrt(), relative_linf: num_max / den_max })
}

/// One test point with exact and approximate values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub point: Point,
    pub subdomain: usize,
    pub exact: f64,
    pub approx: f64,
}

/// Evaluate `field` and the exact solution on the grid, skipping the interface band.
pub fn sample_errors<F: PiecewiseField + ?Sized>(
    problem: &InterfaceProblem,
    field: &F,
    grid: &TestGrid,
) -> Result<Vec<ErrorSample>> {
    if !problem.has_exact() {
        return Err(Error::Unsupported("error metrics need an exact solution".into()));
    }
    let mut out = Vec::new();
    for p in grid.points(problem)? {
        let Region::Subdomain(k) = problem.geometry.classify_with_tol(&p, INTERFACE_BAND)? else { continue };
        let exact = problem.exact_state(k, &p)?.u;
        out.push(ErrorSample { point: p, subdomain: k, exact, approx: field.value_in(k, &p) });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub global: ErrorPair,
    pub per_subdomain: Vec<ErrorPair>,
    pub grid: TestGrid,
    pub points: usize,
}

impl ErrorReport {
    pub fn from_samples(samples: &[ErrorSample], subdomains: usize, grid: TestGrid) -> Result<Self> {
        let ex: Vec<f64> = samples.iter().map(|s| s.exact).collect();
        let ap: Vec<f64> = samples.iter().map(|s| s.approx).collect();
        let global = relative_errors(&ex, &ap)?;
        let per_subdomain = (0..subdomains)
            .map(|k| {
                let (e, a): (Vec<f64>, Vec<f64>) =
                    samples.iter().filter(|s| s.subdomain == k).map(|s| (s.exact, s.approx)).unzip();
                relative_errors(&e, &a)
            })
            .collect::<Result<_>>()?;
        Ok(Self { global, per_subdomain, grid, points: samples.len() })
    }
}

/// Relative errors of `field` on `grid`, globally and per subdomain.
pub fn evaluate_errors<F: PiecewiseField + ?Sized>(
    problem: &InterfaceProblem,
    field: &F,
    grid: &TestGrid,
) -> Result<ErrorReport> {
    let samples = sample_errors(problem, field, grid)?;
    ErrorReport::from_samples(&samples, problem.subdomain_count(), *grid)
}

/// One heatmap cell: absolute pointwise error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatRow {
    pub x: f64,
    pub y: f64,
    pub t: Option<f64>,
    pub abs_error: f64,
}

pub fn heatmap(samples: &[ErrorSample], space_time: bool) -> Vec<HeatRow> {
    samples
        .iter()
        .map(|s| HeatRow {
            x: s.point.x,
            y: s.point.y,
            t: space_time.then_some(s.point.t),
            abs_error: (s.exact - s.approx).abs(),
        })
        .collect()
}

/// Initialization error and correction along the interface, on the plus side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    /// Angle for closed curves, arclength fraction for open pieces.
    pub param: f64,
    pub x: f64,
    pub y: f64,
    /// `u_N - u_exact`.
    pub base_error: f64,
    /// `eps * u_p`, zero without a correction.
    pub correction: f64,
}

/// Sample every interface piece at `n` uniform parameter values.
///
/// Moving interfaces are traced at time `t` (the final time by default).
pub fn interface_trace<F: PiecewiseField + ?Sized>(
    problem: &InterfaceProblem,
    base: &F,
    corrected: Option<&CorrectedSolution>,
    n: usize,
    t: Option<f64>,
) -> Result<Vec<TraceRow>> {
    let geom = &problem.geometry;
    let closed = geom.interfaces().len() == 1 && !matches!(geom.kind, crate::geometry::GeometryKind::VerticalLine { .. });
    let time = t.or(geom.bbox.t.map(|t| t[1]));
    let mut rows = Vec::new();
    for (si, seg) in geom.interfaces().iter().enumerate() {
        for i in 0..n {
            let (param, ip) = if closed {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                (a, InterfaceParam::Angle(a))
            } else {
                let s = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                (s, InterfaceParam::Fraction(s))
            };
            let (p, _) = geom.interface_point_and_normal(si, ip, time)?;
            let k = seg.plus;
            let exact = problem.exact_state(k, &p)?.u;
            rows.push(TraceRow {
                param,
                x: p.x,
                y: p.y,
                base_error: base.value_in(k, &p) - exact,
                correction: corrected.map_or(0.0, |c| c.correction_in(k, &p)),
            });
        }
    }
    Ok(rows)
}

/// Norm of one residual group, with and without its row scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNorm {
    pub group: String,
    pub rows: usize,
    pub scaled: f64,
    pub unscaled: f64,
}

/// Per-group norms of a scaled residual vector.
pub fn residual_diagnostics(groups: &[RowGroup], f: ArrayView1<f64>) -> Result<Vec<GroupNorm>> {
    groups
        .iter()
        .map(|g| {
            if g.rows.end > f.len() {
                return Err(Error::Shape(format!("group ends at row {}, residual has {}", g.rows.end, f.len())));
            }
            let part = f.slice(ndarray::s![g.rows.clone()]);
            let scaled = part.dot(&part).sqrt();
            Ok(GroupNorm { group: g.kind.label(), rows: g.rows.len(), scaled, unscaled: scaled / g.scale })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::BaseSystem;
    use crate::basis::{Activation, NetSpec, RandomFeatureNet};
    use crate::geometry::{sample_collocation, CollocationSpec};
    use crate::problem::{builtin_example, ExampleId, ExampleParams};
    use ndarray::Array1;
    use proptest::prelude::*;

    #[test]
    fn identical_and_zero_approximations() {
        let g = [1.0, -2.0, 0.5];
        assert_eq!(relative_errors(&g, &g).unwrap(), ErrorPair { relative_l2: 0.0, relative_linf: 0.0 });
        assert_eq!(relative_errors(&g, &[0.0; 3]).unwrap(), ErrorPair { relative_l2: 1.0, relative_linf: 1.0 });
    }

    #[test]
    fn three_point_example() {
        let e = relative_errors(&[1.0, 2.0, 2.0], &[1.0, 2.0, 1.0]).unwrap();
        assert!((e.relative_l2 - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(e.relative_linf, 0.5);
    }

    #[test]
    fn vanishing_exact_is_an_error() {
        assert!(matches!(relative_errors(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numerical(_))));
    }

    proptest! {
        #[test]
        fn matches_direct_summation(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..60)) {
            let (g, h): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assume!(g.iter().any(|x| x.abs() > 1e-3));
            let e = relative_errors(&g, &h).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..g.len() {
                num += (g[i] - h[i]).powi(2);
                den += g[i].powi(2);
            }
            let l2 = num.sqrt() / den.sqrt();
            let linf = g.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                / g.iter().map(|a| a.abs()).fold(0.0, f64::max);
            prop_assert!((e.relative_l2 - l2).abs() <= 1e-14 * l2.max(1e-300));
            prop_assert!((e.relative_linf - linf).abs() <= 1e-14 * linf.max(1e-300));
        }
    }

    /// The exact solution wrapped as a field.
    struct Exact<'a>(&'a InterfaceProblem);

    impl PiecewiseField for Exact<'_> {
        fn subdomain_count(&self) -> usize {
            self.0.subdomain_count()
        }
        fn value_in(&self, k: usize, p: &Point) -> f64 {
            self.0.exact_state(k, p).unwrap().u
        }
    }

    #[test]
    fn exact_field_has_zero_error_and_trace() {
        for id in ExampleId::ALL {
            let prob = builtin_example(id, &ExampleParams::default()).unwrap();
            let grid = TestGrid { nx: 21, ny: 21, nt: prob.parabolic.then_some(3) };
            let rep = evaluate_errors(&prob, &Exact(&prob), &grid).unwrap();
            assert_eq!(rep.global.relative_l2, 0.0, "{id}");
            assert_eq!(rep.per_subdomain.len(), prob.subdomain_count());
            let trace = interface_trace(&prob, &Exact(&prob), None, 16, None).unwrap();
            assert!(trace.iter().all(|r| r.base_error.abs() < 1e-15), "{id}");
        }
    }

    #[test]
    fn grid_skips_interface_band() {
        let prob = builtin_example(ExampleId::Ex1, &ExampleParams::default()).unwrap();
        let grid = TestGrid { nx: 201, ny: 101, nt: None };
        let samples = sample_errors(&prob, &Exact(&prob), &grid).unwrap();
        assert_eq!(samples.len(), 200 * 101);
        assert!(samples.iter().all(|s| s.point.x != 0.0));
    }

    #[test]
    fn circle_trace_uses_quarter_angles() {
        let prob = builtin_example(ExampleId::Ex4, &ExampleParams::default()).unwrap();
        let trace = interface_trace(&prob, &Exact(&prob), None, 4, None).unwrap();
        let params: Vec<f64> = trace.iter().map(|r| r.param).collect();
        let q = std::f64::consts::FRAC_PI_2;
        assert_eq!(params, vec![0.0, q, 2.0 * q, 3.0 * q]);
        assert!((trace[1].x.abs() < 1e-15) && (trace[1].y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn group_norms_recombine_to_total() {
        let prob = builtin_example(ExampleId::Ex2, &ExampleParams::default()).unwrap();
        let colloc = sample_collocation(&prob.geometry, &CollocationSpec::new(vec![30; 4], 40, 40), 2).unwrap();
        let spec = NetSpec { m: 10, activation: Activation::Tanh, weight_range: [-1.0, 1.0], bias_range: [-0.1, 0.1], seed: 3 };
        let nets: Vec<RandomFeatureNet> = spec.build(4, 2).unwrap();
        let sys = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let x = Array1::from_shape_fn(40, |i| (i as f64 * 0.37).sin());
        let f = sys.assemble_residual(x.view()).unwrap();
        let norms = residual_diagnostics(sys.groups(), f.view()).unwrap();
        let total: f64 = sys.groups().iter().zip(&norms).map(|(g, n)| g.scale * g.scale * n.unscaled * n.unscaled).sum();
        assert!((total - f.dot(&f)).abs() <= 1e-12 * f.dot(&f));
        let zero = residual_diagnostics(sys.groups(), Array1::zeros(f.len()).view()).unwrap();
        assert!(zero.iter().all(|n| n.scaled == 0.0 && n.unscaled == 0.0));
    }
}
