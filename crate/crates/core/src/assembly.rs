//! Stacked residuals and Jacobians of the collocation least-squares problems.
//!
//! Rows come in groups: one interior group per subdomain, then the interface
//! value rows, the interface flux rows and the outer boundary rows. Every row
//! of group `D` is multiplied by `sqrt(w_D / N_D)`, so `0.5 * |F|^2` is the
//! weighted discrete functional.
//!
//! Pointwise residuals are written once as second-order jets of the local
//! state `(u, u_x, u_y, u_xx, u_xy, u_yy, u_t)`. The gradient of a jet gives a
//! Jacobian row after contraction with the feature blocks; the Hessian gives
//! the quadratic terms of the perturbation subproblem.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ShapeBuilder};

use crate::basis::{FeatureBlock, RandomFeatureNet};
use crate::error::{Error, Result};
use crate::geometry::{CollocationSet, Point};
use crate::jet::Jet;
use crate::problem::{CoefJet, InterfaceProblem, SourceTerm};

/// Number of local state variables of an interior row.
pub const STATE_DIM: usize = 7;
const U: usize = 0;
const GX: usize = 1;
const GY: usize = 2;
const HXX: usize = 3;
const HXY: usize = 4;
const HYY: usize = 5;
const UT: usize = 6;

pub type State = [f64; STATE_DIM];
/// `(u, u_x, u_y)` on one side of the interface.
pub type SideState = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Interior(usize),
    InterfaceValue,
    InterfaceFlux,
    Boundary,
}

impl GroupKind {
    pub fn label(&self) -> String {
        match self {
            GroupKind::Interior(k) => format!("interior_{k}"),
            GroupKind::InterfaceValue => "interface_value".into(),
            GroupKind::InterfaceFlux => "interface_flux".into(),
            GroupKind::Boundary => "boundary".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowGroup {
    pub kind: GroupKind,
    pub rows: Range<usize>,
    /// `sqrt(w / N)` applied to every row of the group.
    pub scale: f64,
}

/// Interior residual `div(beta grad u) + f - [parabolic] u_t` as a state jet.
///
/// `f` is `[f, f_u, f_uu]`. Without gradient dependence of `beta` the `u_xx`
/// slot may carry the full Laplacian with `u_xy = u_yy = 0`.
pub(crate) fn interior_jet(beta: &CoefJet, f: [f64; 3], s: &State, parabolic: bool) -> Jet<STATE_DIM> {
    let v = |i: usize| Jet::<STATE_DIM>::var(i, s[i]);
    let (gx, gy, hxx, hxy, hyy) = (v(GX), v(GY), v(HXX), v(HXY), v(HYY));
    let b = beta.beta::<STATE_DIM>();
    let bu = beta.partial_z::<STATE_DIM>(0);
    let (bp1, bp2) = (beta.partial_z::<STATE_DIM>(1), beta.partial_z::<STATE_DIM>(2));
    let total_x = beta.partial_x::<STATE_DIM>(0) + bu * gx + bp1 * hxx + bp2 * hxy;
    let total_y = beta.partial_x::<STATE_DIM>(1) + bu * gy + bp1 * hxy + bp2 * hyy;
    let mut fj = Jet::constant(f[0]);
    fj.g[U] = f[1];
    fj.h[U][U] = f[2];
    let mut r = b * (hxx + hyy) + gx * total_x + gy * total_y + fj;
    if parabolic {
        r = r - v(UT);
    }
    r
}

/// Normal flux `beta (grad u . n)` as a jet of `(u, u_x, u_y)`.
pub(crate) fn flux_jet(beta: &CoefJet, s: &SideState, n: [f64; 2]) -> Jet<3> {
    let gx = Jet::<3>::var(1, s[1]);
    let gy = Jet::<3>::var(2, s[2]);
    beta.beta::<3>() * (gx * n[0] + gy * n[1])
}

#[derive(Debug, Clone)]
struct InteriorData {
    points: Vec<Point>,
    /// Precomputed source when it does not depend on `u`.
    fixed_source: Option<Vec<f64>>,
    hessian: bool,
}

#[derive(Debug, Clone)]
struct SegmentData {
    plus: usize,
    minus: usize,
    points: Vec<Point>,
    normals: Vec<[f64; 2]>,
    w: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BoundaryData {
    points: Vec<Point>,
    g: Vec<f64>,
}

/// Collocation points with all data that does not depend on the networks.
#[derive(Debug, Clone)]
pub struct PointData {
    interior: Vec<InteriorData>,
    segments: Vec<SegmentData>,
    /// One entry per subdomain.
    boundary: Vec<BoundaryData>,
    groups: Vec<RowGroup>,
    parabolic: bool,
}

impl PointData {
    pub fn new(problem: &InterfaceProblem, colloc: &CollocationSet) -> Result<Self> {
        problem.validate()?;
        let nsub = problem.subdomain_count();
        if colloc.subdomain_count() != nsub {
            return Err(Error::Shape(format!("{} interior groups for {nsub} subdomains", colloc.subdomain_count())));
        }
        let interior = colloc
            .interior
            .iter()
            .enumerate()
            .map(|(k, pts)| {
                let fixed_source = match problem.subdomains[k].source {
                    SourceTerm::Manufactured => {
                        Some(pts.iter().map(|p| problem.manufactured_source(k, p)).collect::<Result<Vec<_>>>()?)
                    }
                    SourceTerm::Custom(_) => None,
                };
                Ok(InteriorData { points: pts.clone(), fixed_source, hessian: problem.subdomains[k].beta.depends_on_gradient() })
            })
            .collect::<Result<Vec<_>>>()?;

        let segs = problem.geometry.interfaces();
        let mut segments: Vec<SegmentData> = segs
            .iter()
            .map(|s| SegmentData { plus: s.plus, minus: s.minus, points: vec![], normals: vec![], w: vec![], v: vec![] })
            .collect();
        for ip in &colloc.interface {
            let seg = segments
                .get_mut(ip.segment)
                .ok_or_else(|| Error::Shape(format!("interface point on unknown segment {}", ip.segment)))?;
            let (w, v) = problem.jump_data(ip.segment, &ip.point, ip.normal)?;
            seg.points.push(ip.point);
            seg.normals.push(ip.normal);
            seg.w.push(w);
            seg.v.push(v);
        }

        let mut boundary: Vec<BoundaryData> = (0..nsub).map(|_| BoundaryData { points: vec![], g: vec![] }).collect();
        for bp in &colloc.boundary {
            let b = boundary
                .get_mut(bp.subdomain)
                .ok_or_else(|| Error::Shape(format!("boundary point in unknown subdomain {}", bp.subdomain)))?;
            b.g.push(problem.boundary_value(bp.subdomain, &bp.point)?);
            b.points.push(bp.point);
        }

        let w = &colloc.weights;
        let mut groups = Vec::new();
        let mut row = 0;
        let mut push = |kind, n: usize, weight: f64| {
            let scale = if n > 0 { (weight / n as f64).sqrt() } else { 0.0 };
            groups.push(RowGroup { kind, rows: row..row + n, scale });
            row += n;
        };
        for (k, d) in interior.iter().enumerate() {
            push(GroupKind::Interior(k), d.points.len(), w.interior[k]);
        }
        let n_gamma = colloc.interface.len();
        push(GroupKind::InterfaceValue, n_gamma, w.interface_value);
        push(GroupKind::InterfaceFlux, n_gamma, w.interface_flux);
        push(GroupKind::Boundary, colloc.boundary.len(), w.boundary);

        Ok(Self { interior, segments, boundary, groups, parabolic: problem.parabolic })
    }

    pub fn groups(&self) -> &[RowGroup] {
        &self.groups
    }

    pub fn n_rows(&self) -> usize {
        self.groups.last().map_or(0, |g| g.rows.end)
    }

    pub fn subdomain_count(&self) -> usize {
        self.interior.len()
    }

    fn group(&self, kind: GroupKind) -> &RowGroup {
        self.groups.iter().find(|g| g.kind == kind).expect("row group exists")
    }
}

/// Feature blocks of one set of networks (one per subdomain) at a [`PointData`].
#[derive(Debug, Clone)]
pub struct NetBlocks {
    interior: Vec<FeatureBlock>,
    seg_plus: Vec<FeatureBlock>,
    seg_minus: Vec<FeatureBlock>,
    boundary: Vec<FeatureBlock>,
    col_offsets: Vec<usize>,
}

impl NetBlocks {
    pub fn new(pd: &PointData, nets: &[RandomFeatureNet]) -> Result<Self> {
        if nets.len() != pd.subdomain_count() {
            return Err(Error::Shape(format!("{} networks for {} subdomains", nets.len(), pd.subdomain_count())));
        }
        let want_dim = if pd.parabolic { 3 } else { 2 };
        if let Some(n) = nets.iter().find(|n| n.dim() != want_dim) {
            return Err(Error::Shape(format!("network input dimension {} but problem needs {want_dim}", n.dim())));
        }
        let interior = pd
            .interior
            .iter()
            .zip(nets)
            .map(|(d, net)| net.features(&d.points, None, d.hessian))
            .collect::<Result<Vec<_>>>()?;
        let seg_plus = pd
            .segments
            .iter()
            .map(|s| nets[s.plus].features(&s.points, Some(&s.normals), false))
            .collect::<Result<Vec<_>>>()?;
        let seg_minus = pd
            .segments
            .iter()
            .map(|s| nets[s.minus].features(&s.points, Some(&s.normals), false))
            .collect::<Result<Vec<_>>>()?;
        let boundary = pd
            .boundary
            .iter()
            .zip(nets)
            .map(|(d, net)| net.features(&d.points, None, false))
            .collect::<Result<Vec<_>>>()?;
        let mut col_offsets = vec![0];
        for n in nets {
            col_offsets.push(col_offsets.last().unwrap() + n.m());
        }
        Ok(Self { interior, seg_plus, seg_minus, boundary, col_offsets })
    }

    pub fn n_cols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    fn coeffs<'a>(&self, x: &'a ArrayView1<'a, f64>, k: usize) -> ArrayView1<'a, f64> {
        x.slice_move(s![self.col_offsets[k]..self.col_offsets[k + 1]])
    }

    /// Local states at every collocation point for the concatenated coefficients `x`.
    pub fn fields(&self, pd: &PointData, x: ArrayView1<f64>) -> Result<Fields> {
        if x.len() != self.n_cols() {
            return Err(Error::Shape(format!("{} coefficients for {} columns", x.len(), self.n_cols())));
        }
        let interior = self
            .interior
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let st = b.apply(self.coeffs(&x, k))?;
                Ok((0..st.len())
                    .map(|i| {
                        let mut s = [0.0; STATE_DIM];
                        s[U] = st.u[i];
                        s[GX] = st.gx[i];
                        s[GY] = st.gy[i];
                        match &st.hess {
                            Some(h) => {
                                s[HXX] = h[0][i];
                                s[HXY] = h[1][i];
                                s[HYY] = h[2][i];
                            }
                            None => s[HXX] = st.lap[i],
                        }
                        if let Some(ut) = &st.ut {
                            s[UT] = ut[i];
                        }
                        s
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let side = |b: &FeatureBlock, k: usize| -> Result<Vec<SideState>> {
            let c = self.coeffs(&x, k);
            let (u, gx, gy) = (b.phi.dot(&c), b.dx.dot(&c), b.dy.dot(&c));
            Ok((0..u.len()).map(|i| [u[i], gx[i], gy[i]]).collect())
        };
        let seg_plus = pd.segments.iter().zip(&self.seg_plus).map(|(s, b)| side(b, s.plus)).collect::<Result<_>>()?;
        let seg_minus = pd.segments.iter().zip(&self.seg_minus).map(|(s, b)| side(b, s.minus)).collect::<Result<_>>()?;
        let boundary = self
            .boundary
            .iter()
            .enumerate()
            .map(|(k, b)| b.phi.dot(&self.coeffs(&x, k)).to_vec())
            .collect();
        Ok(Fields { interior, seg_plus, seg_minus, boundary })
    }

    /// Contract per-row state gradients with the feature blocks into a
    /// column-major Jacobian.
    fn fill_jacobian(&self, pd: &PointData, grads: &RowGradients) -> Array2<f64> {
        let n = self.n_cols();
        let mut jac = Array2::<f64>::zeros((pd.n_rows(), n).f());
        for (k, block) in self.interior.iter().enumerate() {
            let g = pd.group(GroupKind::Interior(k));
            let cols = self.col_offsets[k]..self.col_offsets[k + 1];
            let mut slots: Vec<(usize, &Array2<f64>)> = vec![(U, &block.phi), (GX, &block.dx), (GY, &block.dy)];
            match &block.hess {
                Some(h) => slots.extend([(HXX, &h[0]), (HXY, &h[1]), (HYY, &h[2])]),
                None => slots.push((HXX, &block.lap)),
            }
            if let Some(dt) = &block.dt {
                slots.push((UT, dt));
            }
            for (i, a) in grads.interior[k].iter().enumerate() {
                let mut row = jac.slice_mut(s![g.rows.start + i, cols.clone()]);
                for &(slot, b) in &slots {
                    if a[slot] != 0.0 {
                        row.scaled_add(g.scale * a[slot], &b.row(i));
                    }
                }
            }
        }
        let gv = pd.group(GroupKind::InterfaceValue).clone();
        let gf = pd.group(GroupKind::InterfaceFlux).clone();
        let mut r = 0;
        for (si, seg) in pd.segments.iter().enumerate() {
            let (bp, bm) = (&self.seg_plus[si], &self.seg_minus[si]);
            let cp = self.col_offsets[seg.plus]..self.col_offsets[seg.plus + 1];
            let cm = self.col_offsets[seg.minus]..self.col_offsets[seg.minus + 1];
            for i in 0..seg.points.len() {
                jac.slice_mut(s![gv.rows.start + r, cp.clone()]).scaled_add(gv.scale, &bp.phi.row(i));
                jac.slice_mut(s![gv.rows.start + r, cm.clone()]).scaled_add(-gv.scale, &bm.phi.row(i));
                let (ap, am) = grads.flux[si][i];
                for (sign, a, b, cols) in [(1.0, ap, bp, cp.clone()), (-1.0, am, bm, cm.clone())] {
                    let mut row = jac.slice_mut(s![gf.rows.start + r, cols]);
                    for (slot, blk) in [(0, &b.phi), (1, &b.dx), (2, &b.dy)] {
                        if a[slot] != 0.0 {
                            row.scaled_add(sign * gf.scale * a[slot], &blk.row(i));
                        }
                    }
                }
                r += 1;
            }
        }
        let gb = pd.group(GroupKind::Boundary).clone();
        let mut r = gb.rows.start;
        for (k, b) in self.boundary.iter().enumerate() {
            let cols = self.col_offsets[k]..self.col_offsets[k + 1];
            for i in 0..b.rows() {
                jac.slice_mut(s![r, cols.clone()]).scaled_add(gb.scale, &b.phi.row(i));
                r += 1;
            }
        }
        jac
    }
}

/// Local states at all collocation points.
#[derive(Debug, Clone, PartialEq)]
pub struct Fields {
    pub interior: Vec<Vec<State>>,
    pub seg_plus: Vec<Vec<SideState>>,
    pub seg_minus: Vec<Vec<SideState>>,
    pub boundary: Vec<Vec<f64>>,
}

impl Fields {
    /// `self + c * other`, slot by slot.
    pub fn axpy(&self, c: f64, other: &Fields) -> Fields {
        fn comb<const N: usize>(a: &[Vec<[f64; N]>], b: &[Vec<[f64; N]>], c: f64) -> Vec<Vec<[f64; N]>> {
            a.iter()
                .zip(b)
                .map(|(x, y)| {
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| {
                            let mut r = *p;
                            for i in 0..N {
                                r[i] += c * q[i];
                            }
                            r
                        })
                        .collect()
                })
                .collect()
        }
        Fields {
            interior: comb(&self.interior, &other.interior, c),
            seg_plus: comb(&self.seg_plus, &other.seg_plus, c),
            seg_minus: comb(&self.seg_minus, &other.seg_minus, c),
            boundary: self
                .boundary
                .iter()
                .zip(&other.boundary)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + c * q).collect())
                .collect(),
        }
    }
}

/// Residual jets of every row at a set of fields (unscaled).
#[derive(Debug, Clone)]
pub(crate) struct RowJets {
    interior: Vec<Vec<Jet<STATE_DIM>>>,
    /// `(q+, q-)` per interface point.
    flux: Vec<Vec<(Jet<3>, Jet<3>)>>,
}

/// Per-row state gradients used to build a Jacobian.
struct RowGradients {
    interior: Vec<Vec<State>>,
    flux: Vec<Vec<(SideState, SideState)>>,
}

fn evaluate_jets(problem: &InterfaceProblem, pd: &PointData, f: &Fields) -> Result<RowJets> {
    let interior = pd
        .interior
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let beta = &problem.subdomains[k].beta;
            d.points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let s = &f.interior[k][i];
                    let src = match &d.fixed_source {
                        Some(v) => [v[i], 0.0, 0.0],
                        None => problem.source(k, p, s[U])?,
                    };
                    let bj = beta.jet(p, s[U], [s[GX], s[GY]]);
                    Ok(interior_jet(&bj, src, s, pd.parabolic))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let flux = pd
        .segments
        .iter()
        .enumerate()
        .map(|(si, seg)| {
            let (bp, bm) = (&problem.subdomains[seg.plus].beta, &problem.subdomains[seg.minus].beta);
            seg.points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let (sp, sm) = (&f.seg_plus[si][i], &f.seg_minus[si][i]);
                    let jp = flux_jet(&bp.jet(p, sp[0], [sp[1], sp[2]]), sp, seg.normals[i]);
                    let jm = flux_jet(&bm.jet(p, sm[0], [sm[1], sm[2]]), sm, seg.normals[i]);
                    (jp, jm)
                })
                .collect()
        })
        .collect();
    Ok(RowJets { interior, flux })
}

/// Unscaled residual rows from jets and fields.
fn raw_residual(pd: &PointData, f: &Fields, jets: &RowJets) -> Array1<f64> {
    let mut out = Array1::zeros(pd.n_rows());
    let mut r = 0;
    for k in 0..pd.interior.len() {
        for j in &jets.interior[k] {
            out[r] = j.v;
            r += 1;
        }
    }
    for (si, seg) in pd.segments.iter().enumerate() {
        for i in 0..seg.points.len() {
            out[r] = f.seg_plus[si][i][0] - f.seg_minus[si][i][0] - seg.w[i];
            r += 1;
        }
    }
    for (si, seg) in pd.segments.iter().enumerate() {
        for i in 0..seg.points.len() {
            let (jp, jm) = &jets.flux[si][i];
            out[r] = jp.v - jm.v - seg.v[i];
            r += 1;
        }
    }
    for (k, b) in pd.boundary.iter().enumerate() {
        for i in 0..b.points.len() {
            out[r] = f.boundary[k][i] - b.g[i];
            r += 1;
        }
    }
    out
}

/// Multiply each row by its group scale.
fn apply_scaling(pd: &PointData, v: &mut Array1<f64>) {
    for g in &pd.groups {
        v.slice_mut(s![g.rows.clone()]).mapv_inplace(|x| x * g.scale);
    }
}

/// Residual vector at arbitrary local states (scaled).
pub fn residual_at_fields(problem: &InterfaceProblem, pd: &PointData, f: &Fields) -> Result<Array1<f64>> {
    let jets = evaluate_jets(problem, pd, f)?;
    let mut r = raw_residual(pd, f, &jets);
    apply_scaling(pd, &mut r);
    Ok(r)
}

/// A nonlinear least-squares problem `min 0.5 |F(x)|^2`.
pub trait LeastSquaresSystem {
    fn n_params(&self) -> usize;
    fn n_rows(&self) -> usize;
    /// Residual; may contain non-finite entries, which the solver handles.
    fn residual(&self, x: ArrayView1<f64>) -> Result<Array1<f64>>;
    /// Residual and column-major Jacobian.
    fn residual_and_jacobian(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// The base collocation system in the network coefficients.
pub struct BaseSystem<'a> {
    problem: &'a InterfaceProblem,
    pd: PointData,
    blocks: NetBlocks,
}

impl<'a> BaseSystem<'a> {
    pub fn new(problem: &'a InterfaceProblem, nets: &[RandomFeatureNet], colloc: &CollocationSet) -> Result<Self> {
        let pd = PointData::new(problem, colloc)?;
        let blocks = NetBlocks::new(&pd, nets)?;
        Ok(Self { problem, pd, blocks })
    }

    pub fn point_data(&self) -> &PointData {
        &self.pd
    }

    pub fn blocks(&self) -> &NetBlocks {
        &self.blocks
    }

    pub fn groups(&self) -> &[RowGroup] {
        self.pd.groups()
    }

    pub fn fields(&self, x: ArrayView1<f64>) -> Result<Fields> {
        self.blocks.fields(&self.pd, x)
    }

    /// Residual with a check for non-finite entries.
    pub fn assemble_residual(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let r = self.residual(x)?;
        ensure_finite(&r, "residual")?;
        Ok(r)
    }

    pub fn assemble_jacobian(&self, x: ArrayView1<f64>) -> Result<Array2<f64>> {
        let (_, j) = self.residual_and_jacobian(x)?;
        ensure_finite_matrix(&j)?;
        Ok(j)
    }
}

pub(crate) fn ensure_finite(v: &Array1<f64>, what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite {what} at row {i}")));
    }
    Ok(())
}

fn ensure_finite_matrix(j: &Array2<f64>) -> Result<()> {
    if j.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite Jacobian entry".into()));
    }
    Ok(())
}

impl LeastSquaresSystem for BaseSystem<'_> {
    fn n_params(&self) -> usize {
        self.blocks.n_cols()
    }

    fn n_rows(&self) -> usize {
        self.pd.n_rows()
    }

    fn residual(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let f = self.fields(x)?;
        residual_at_fields(self.problem, &self.pd, &f)
    }

    fn residual_and_jacobian(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let f = self.fields(x)?;
        let jets = evaluate_jets(self.problem, &self.pd, &f)?;
        let mut r = raw_residual(&self.pd, &f, &jets);
        apply_scaling(&self.pd, &mut r);
        let grads = RowGradients {
            interior: jets.interior.iter().map(|v| v.iter().map(|j| j.g).collect()).collect(),
            flux: jets.flux.iter().map(|v| v.iter().map(|(p, m)| (p.g, m.g)).collect()).collect(),
        };
        Ok((r, self.blocks.fill_jacobian(&self.pd, &grads)))
    }
}

/// Per-row Taylor coefficients of the residual along a correction direction:
/// `R(s_N + e s_p) = c0 + e c1 + e^2 c2 + O(e^3)` (all scaled).
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorTerms {
    pub c0: Array1<f64>,
    pub c1: Array1<f64>,
    pub c2: Array1<f64>,
}

/// The correction subproblem in the coefficients `gamma` of the correction nets.
///
/// Base fields, residuals and their first and second state derivatives are
/// evaluated once at construction and cached.
pub struct PerturbationSystem<'a> {
    problem: &'a InterfaceProblem,
    pd: PointData,
    blocks: NetBlocks,
    base_fields: Fields,
    base_jets: RowJets,
    /// Scaled `F(u_N)` on this collocation set.
    base_residual: Array1<f64>,
    epsilon: f64,
    keep_second_order: bool,
}

impl<'a> PerturbationSystem<'a> {
    /// `base_nets` carry the fitted coefficients in their `alpha`.
    pub fn new(
        problem: &'a InterfaceProblem,
        base_nets: &[RandomFeatureNet],
        correction_nets: &[RandomFeatureNet],
        colloc: &CollocationSet,
        epsilon: Option<f64>,
        keep_second_order: bool,
    ) -> Result<Self> {
        let pd = PointData::new(problem, colloc)?;
        let base_fields = {
            let base_blocks = NetBlocks::new(&pd, base_nets)?;
            let alpha: Array1<f64> = base_nets.iter().flat_map(|n| n.alpha.iter().copied()).collect();
            base_blocks.fields(&pd, alpha.view())?
        };
        let base_jets = evaluate_jets(problem, &pd, &base_fields)?;
        let mut base_residual = raw_residual(&pd, &base_fields, &base_jets);
        apply_scaling(&pd, &mut base_residual);
        ensure_finite(&base_residual, "base residual")?;
        let epsilon = epsilon.unwrap_or_else(|| base_residual.dot(&base_residual).sqrt());
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Numerical(format!("perturbation parameter must be positive, got {epsilon:e}")));
        }
        let blocks = NetBlocks::new(&pd, correction_nets)?;
        Ok(Self { problem, pd, blocks, base_fields, base_jets, base_residual, epsilon, keep_second_order })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn keep_second_order(&self) -> bool {
        self.keep_second_order
    }

    pub fn groups(&self) -> &[RowGroup] {
        self.pd.groups()
    }

    pub fn point_data(&self) -> &PointData {
        &self.pd
    }

    /// Scaled base residual `F(u_N)` on the correction points.
    pub fn base_residual(&self) -> &Array1<f64> {
        &self.base_residual
    }

    pub fn base_fields(&self) -> &Fields {
        &self.base_fields
    }

    pub fn correction_fields(&self, gamma: ArrayView1<f64>) -> Result<Fields> {
        self.blocks.fields(&self.pd, gamma)
    }

    /// Taylor coefficients of every row along the correction `u_p(gamma)`.
    pub fn taylor_terms(&self, gamma: ArrayView1<f64>) -> Result<TaylorTerms> {
        let sp = self.correction_fields(gamma)?;
        Ok(self.taylor_from_fields(&sp))
    }

    fn taylor_from_fields(&self, sp: &Fields) -> TaylorTerms {
        let n = self.pd.n_rows();
        let (mut c1, mut c2) = (Array1::zeros(n), Array1::zeros(n));
        let mut r = 0;
        for k in 0..self.pd.interior.len() {
            for (i, j) in self.base_jets.interior[k].iter().enumerate() {
                let (a, b) = lin_quad(j, &sp.interior[k][i]);
                c1[r] = a;
                c2[r] = b;
                r += 1;
            }
        }
        for (si, seg) in self.pd.segments.iter().enumerate() {
            for i in 0..seg.points.len() {
                c1[r] = sp.seg_plus[si][i][0] - sp.seg_minus[si][i][0];
                r += 1;
            }
        }
        for (si, seg) in self.pd.segments.iter().enumerate() {
            for i in 0..seg.points.len() {
                let (jp, jm) = &self.base_jets.flux[si][i];
                let (ap, bp) = lin_quad(jp, &sp.seg_plus[si][i]);
                let (am, bm) = lin_quad(jm, &sp.seg_minus[si][i]);
                c1[r] = ap - am;
                c2[r] = bp - bm;
                r += 1;
            }
        }
        for (k, b) in self.pd.boundary.iter().enumerate() {
            for i in 0..b.points.len() {
                c1[r] = sp.boundary[k][i];
                r += 1;
            }
        }
        apply_scaling(&self.pd, &mut c1);
        apply_scaling(&self.pd, &mut c2);
        TaylorTerms { c0: self.base_residual.clone(), c1, c2 }
    }

    /// The quadratic model `G(u_N)/e + G'[u_p] + e/2 G''[u_p, u_p]` of
    /// `G = |F|^2 / 2` along the correction, with the full second derivative.
    pub fn quadratic_model(&self, gamma: ArrayView1<f64>, e: f64) -> Result<f64> {
        let t = self.taylor_terms(gamma)?;
        let g0 = 0.5 * t.c0.dot(&t.c0);
        let g1 = t.c0.dot(&t.c1);
        let g2 = t.c1.dot(&t.c1) + 2.0 * t.c0.dot(&t.c2);
        Ok(g0 / e + g1 + 0.5 * e * g2)
    }

    /// Exact residual `F(u_N + e u_p)` of the base problem on these points.
    pub fn composite_residual(&self, gamma: ArrayView1<f64>, e: f64) -> Result<Array1<f64>> {
        let sp = self.correction_fields(gamma)?;
        residual_at_fields(self.problem, &self.pd, &self.base_fields.axpy(e, &sp))
    }
}

/// `(g . s, 0.5 s^T H s)` of a jet.
fn lin_quad<const N: usize>(j: &Jet<N>, s: &[f64; N]) -> (f64, f64) {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for a in 0..N {
        lin += j.g[a] * s[a];
        for b in 0..N {
            quad += s[a] * j.h[a][b] * s[b];
        }
    }
    (lin, 0.5 * quad)
}

/// `g + e H s` of a jet.
fn shifted_gradient<const N: usize>(j: &Jet<N>, s: &[f64; N], e: f64) -> [f64; N] {
    let mut out = j.g;
    for a in 0..N {
        for b in 0..N {
            out[a] += e * j.h[a][b] * s[b];
        }
    }
    out
}

impl LeastSquaresSystem for PerturbationSystem<'_> {
    fn n_params(&self) -> usize {
        self.blocks.n_cols()
    }

    fn n_rows(&self) -> usize {
        self.pd.n_rows()
    }

    /// `F_p = c0 / e + c1 + e c2` (the last term only in second-order mode).
    fn residual(&self, gamma: ArrayView1<f64>) -> Result<Array1<f64>> {
        let t = self.taylor_terms(gamma)?;
        let e = self.epsilon;
        let c2 = if self.keep_second_order { e } else { 0.0 };
        Ok(&t.c0 / e + &t.c1 + &(t.c2 * c2))
    }

    fn residual_and_jacobian(&self, gamma: ArrayView1<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let sp = self.correction_fields(gamma)?;
        let t = self.taylor_from_fields(&sp);
        let e = self.epsilon;
        let e2 = if self.keep_second_order { e } else { 0.0 };
        let r = &t.c0 / e + &t.c1 + &(t.c2 * e2);
        let grads = RowGradients {
            interior: self
                .base_jets
                .interior
                .iter()
                .zip(&sp.interior)
                .map(|(js, ss)| js.iter().zip(ss).map(|(j, s)| shifted_gradient(j, s, e2)).collect())
                .collect(),
            flux: self
                .base_jets
                .flux
                .iter()
                .enumerate()
                .map(|(si, v)| {
                    v.iter()
                        .enumerate()
                        .map(|(i, (jp, jm))| {
                            (
                                shifted_gradient(jp, &sp.seg_plus[si][i], e2),
                                shifted_gradient(jm, &sp.seg_minus[si][i], e2),
                            )
                        })
                        .collect()
                })
                .collect(),
        };
        Ok((r, self.blocks.fill_jacobian(&self.pd, &grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Activation;
    use crate::geometry::{sample_collocation, CollocationSpec, ResidualWeights};
    use crate::problem::{builtin_example, ExampleId, ExampleParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_setup(id: ExampleId, m: usize) -> (InterfaceProblem, Vec<RandomFeatureNet>, CollocationSet) {
        let prob = builtin_example(id, &ExampleParams::default()).unwrap();
        let nsub = prob.subdomain_count();
        let nets = (0..nsub)
            .map(|k| RandomFeatureNet::new(m, prob.input_dim(), Activation::Tanh, [-1.0, 1.0], [-0.1, 0.1], 10 + k as u64).unwrap())
            .collect();
        let spec = CollocationSpec::new(vec![40; nsub], 20, 24);
        let colloc = sample_collocation(&prob.geometry, &spec, 3).unwrap();
        (prob, nets, colloc)
    }

    #[test]
    fn zero_network_rows() {
        let (prob, nets, colloc) = small_setup(ExampleId::Ex1, 10);
        let sys = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let f = sys.assemble_residual(Array1::zeros(20).view()).unwrap();
        let g = sys.groups();
        for (i, p) in colloc.interior[0].iter().enumerate() {
            let expect = g[0].scale * prob.manufactured_source(0, p).unwrap();
            assert!((f[g[0].rows.start + i] - expect).abs() < 1e-15);
        }
        assert!(f.slice(s![g[2].rows.clone()]).iter().all(|&v| v == 0.0));
        for (i, bp) in colloc.boundary.iter().enumerate() {
            let expect = -g[4].scale * prob.boundary_value(bp.subdomain, &bp.point).unwrap();
            assert!((f[g[4].rows.start + i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn row_scaling_reproduces_weighted_functional() {
        let (prob, nets, mut colloc) = small_setup(ExampleId::Ex3, 8);
        colloc.weights = ResidualWeights { interior: vec![2.0, 0.5], interface_value: 3.0, interface_flux: 0.25, boundary: 7.0 };
        let sys = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array1::from_shape_fn(16, |_| rng.gen_range(-1.0..1.0));
        let f = sys.residual(x.view()).unwrap();
        // independent summation: evaluate each residual from scratch at the points
        let st: Vec<_> = (0..2).map(|k| nets[k].features(&colloc.interior[k], None, false).unwrap()).collect();
        let mut g = 0.0;
        for k in 0..2 {
            let c = x.slice(s![k * 8..(k + 1) * 8]);
            let fs = st[k].apply(c).unwrap();
            let mut sum = 0.0;
            for (i, p) in colloc.interior[k].iter().enumerate() {
                let b = prob.subdomains[k].beta.jet(p, fs.u[i], [fs.gx[i], fs.gy[i]]);
                let div = crate::problem::divergence_flux(&b, [fs.gx[i], fs.gy[i]], [fs.lap[i], 0.0, 0.0]);
                let r = div + prob.manufactured_source(k, p).unwrap();
                sum += r * r;
            }
            g += colloc.weights.interior[k] / colloc.interior[k].len() as f64 * sum;
        }
        let ni = colloc.interface.len() as f64;
        let (mut sv, mut sd) = (0.0, 0.0);
        for ip in &colloc.interface {
            let eval = |k: usize| {
                let c = x.slice(s![k * 8..(k + 1) * 8]);
                let fb = nets[k].features(&[ip.point], Some(&[ip.normal]), false).unwrap();
                let fs = fb.apply(c).unwrap();
                let beta = prob.subdomains[k].beta.eval(&ip.point, fs.u[0], [fs.gx[0], fs.gy[0]]);
                (fs.u[0], beta * fs.un.unwrap()[0])
            };
            let ((up, qp), (um, qm)) = (eval(0), eval(1));
            let (w, v) = prob.jump_data(0, &ip.point, ip.normal).unwrap();
            sv += (up - um - w).powi(2);
            sd += (qp - qm - v).powi(2);
        }
        g += colloc.weights.interface_value / ni * sv + colloc.weights.interface_flux / ni * sd;
        let mut sb = 0.0;
        for bp in &colloc.boundary {
            let k = bp.subdomain;
            let u = nets[k].value_at(x.slice(s![k * 8..(k + 1) * 8]), &bp.point);
            sb += (u - prob.boundary_value(k, &bp.point).unwrap()).powi(2);
        }
        g += colloc.weights.boundary / colloc.boundary.len() as f64 * sb;
        let half = 0.5 * f.dot(&f);
        assert!((half - 0.5 * g).abs() <= 1e-14 * half.abs().max(1e-300) * 10.0, "{half} vs {}", 0.5 * g);
    }

    #[test]
    fn linear_poisson_interior_block_is_laplacian() {
        let (mut prob, nets, colloc) = small_setup(ExampleId::Ex4, 6);
        prob.subdomains[1].beta = std::sync::Arc::new(crate::problem::SeparableCoefficient::constant(1.0));
        let sys = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let j = sys.assemble_jacobian(Array1::zeros(12).view()).unwrap();
        let g = &sys.groups()[1];
        let fb = nets[1].features(&colloc.interior[1], None, false).unwrap();
        for i in 0..colloc.interior[1].len() {
            for c in 0..6 {
                assert_eq!(j[[g.rows.start + i, 6 + c]], g.scale * fb.lap[[i, c]]);
            }
        }
    }

    #[test]
    fn interior_and_boundary_rows_touch_one_subdomain() {
        let (prob, nets, colloc) = small_setup(ExampleId::Ex2, 5);
        let sys = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array1::from_shape_fn(20, |_| rng.gen_range(-1.0..1.0));
        let (_, j) = sys.residual_and_jacobian(x.view()).unwrap();
        for g in sys.groups() {
            if let GroupKind::Interior(k) = g.kind {
                for r in g.rows.clone() {
                    for c in 0..20 {
                        if c / 5 != k {
                            assert_eq!(j[[r, c]], 0.0);
                        }
                    }
                }
            }
        }
        let gb = sys.groups().iter().find(|g| g.kind == GroupKind::Boundary).unwrap();
        for (i, bp) in colloc.boundary.iter().enumerate() {
            for c in 0..20 {
                if c / 5 != bp.subdomain {
                    assert_eq!(j[[gb.rows.start + i, c]], 0.0);
                }
            }
        }
    }

    #[test]
    fn gamma_zero_identity() {
        let (prob, mut nets, colloc) = small_setup(ExampleId::Ex1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in &mut nets {
            let a = Array1::from_shape_fn(10, |_| rng.gen_range(-0.1..0.1));
            n.set_alpha(a.view()).unwrap();
        }
        let corr: Vec<_> = (0..2)
            .map(|k| RandomFeatureNet::new(12, 2, Activation::Sin, [-3.0, 3.0], [-1.0, 1.0], 50 + k).unwrap())
            .collect();
        let ps = PerturbationSystem::new(&prob, &nets, &corr, &colloc, None, true).unwrap();
        let base = BaseSystem::new(&prob, &nets, &colloc).unwrap();
        let alpha: Array1<f64> = nets.iter().flat_map(|n| n.alpha.iter().copied()).collect();
        let f = base.residual(alpha.view()).unwrap();
        let fp = ps.residual(Array1::zeros(24).view()).unwrap();
        let e = ps.epsilon();
        assert!((e - f.dot(&f).sqrt()).abs() < 1e-15 * e);
        for i in 0..f.len() {
            assert!((e * fp[i] - f[i]).abs() <= 1e-13, "row {i}");
        }
    }

    fn fd_relative_error<S: LeastSquaresSystem>(sys: &S, x: &Array1<f64>) -> f64 {
        let h = 1e-6;
        let (_, j) = sys.residual_and_jacobian(x.view()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (sys.residual(xp.view()).unwrap() - sys.residual(xm.view()).unwrap()) / (2.0 * h);
            for r in 0..d.len() {
                num += (j[[r, c]] - d[r]).powi(2);
                den += d[r].powi(2);
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for id in ExampleId::ALL {
            let (prob, mut nets, colloc) = small_setup(id, 8);
            let n = nets.len() * 8;
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let base = BaseSystem::new(&prob, &nets, &colloc).unwrap();
            for _ in 0..3 {
                let x = Array1::from_shape_fn(n, |_| rng.gen_range(-0.5..0.5));
                let e = fd_relative_error(&base, &x);
                assert!(e <= 1e-6, "{id} base: {e:e}");
            }
            for net in &mut nets {
                let a = Array1::from_shape_fn(8, |_| rng.gen_range(-0.5..0.5));
                net.set_alpha(a.view()).unwrap();
            }
            let corr: Vec<_> = (0..nets.len())
                .map(|k| RandomFeatureNet::new(6, prob.input_dim(), Activation::Sin, [-3.0, 3.0], [-1.0, 1.0], 70 + k as u64).unwrap())
                .collect();
            for keep in [true, false] {
                let ps = PerturbationSystem::new(&prob, &nets, &corr, &colloc, Some(0.05), keep).unwrap();
                let g = Array1::from_shape_fn(corr.len() * 6, |_| rng.gen_range(-1.0..1.0));
                let e = fd_relative_error(&ps, &g);
                assert!(e <= 1e-6, "{id} perturbation (second order {keep}): {e:e}");
            }
        }
    }

    #[test]
    fn first_order_objective_matches_expansion_oracle() {
        // With the base features as correction features, u_p lies in the base
        // span and the base Jacobian gives the directional derivative directly.
        for id in [ExampleId::Ex1, ExampleId::Ex6] {
            let (prob, mut nets, colloc) = small_setup(id, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for n in &mut nets {
                let a = Array1::from_shape_fn(8, |_| rng.gen_range(-0.3..0.3));
                n.set_alpha(a.view()).unwrap();
            }
            let base = BaseSystem::new(&prob, &nets, &colloc).unwrap();
            let alpha: Array1<f64> = nets.iter().flat_map(|n| n.alpha.iter().copied()).collect();
            let (f, j) = base.residual_and_jacobian(alpha.view()).unwrap();
            let ps = PerturbationSystem::new(&prob, &nets, &nets, &colloc, Some(0.03), false).unwrap();
            let gamma = Array1::from_shape_fn(16, |_| rng.gen_range(-1.0..1.0));
            let fp = ps.residual(gamma.view()).unwrap();
            let jg = j.dot(&gamma);
            let e = ps.epsilon();
            let oracle = (0.5 * f.dot(&f) / e + f.dot(&jg) + 0.5 * e * jg.dot(&jg)) / e;
            let half = 0.5 * fp.dot(&fp);
            assert!((half - oracle).abs() <= 1e-12 * oracle.abs(), "{id}: {half:e} vs {oracle:e}");
        }
    }

    #[test]
    fn quadratic_model_is_second_order_accurate() {
        let (prob, mut nets, colloc) = small_setup(ExampleId::Ex6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in &mut nets {
            let a = Array1::from_shape_fn(8, |_| rng.gen_range(-0.3..0.3));
            n.set_alpha(a.view()).unwrap();
        }
        let corr: Vec<_> = (0..2)
            .map(|k| RandomFeatureNet::new(6, 2, Activation::Sin, [-3.0, 3.0], [-1.0, 1.0], 30 + k).unwrap())
            .collect();
        let ps = PerturbationSystem::new(&prob, &nets, &corr, &colloc, None, true).unwrap();
        let gamma = Array1::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0));
        let gap = |e: f64| {
            let r = ps.composite_residual(gamma.view(), e).unwrap();
            (0.5 * r.dot(&r) - e * ps.quadratic_model(gamma.view(), e).unwrap()).abs()
        };
        let ratio = gap(1e-2) / gap(1e-3);
        assert!(ratio > 500.0 && ratio < 2000.0, "{ratio}");
    }

    #[test]
    fn projection_residual_shrinks_with_width() {
        use ndarray_linalg::LeastSquaresSvd;
        let prob = builtin_example(ExampleId::Ex1, &ExampleParams::default()).unwrap();
        let colloc = sample_collocation(&prob.geometry, &CollocationSpec::new(vec![300, 300], 60, 80), 2).unwrap();
        let exact = |k: usize, p: &Point| prob.exact_state(k, p).unwrap().u;
        let mut medians = vec![];
        for m in [10, 20, 40] {
            let mut norms: Vec<f64> = (0..3u64)
                .map(|seed| {
                    let mut nets: Vec<_> = (0..2)
                        .map(|k| RandomFeatureNet::new(m, 2, Activation::Tanh, [-1.0, 1.0], [-0.1, 0.1], 100 * seed + k).unwrap())
                        .collect();
                    for (k, net) in nets.iter_mut().enumerate() {
                        let pts = &colloc.interior[k];
                        let a = net.features(pts, None, false).unwrap().phi;
                        let b = Array1::from_iter(pts.iter().map(|p| exact(k, p)));
                        let fit = a.least_squares(&b).unwrap();
                        net.set_alpha(fit.solution.view()).unwrap();
                    }
                    let alpha: Array1<f64> = nets.iter().flat_map(|n| n.alpha.iter().copied()).collect();
                    let f = BaseSystem::new(&prob, &nets, &colloc).unwrap().residual(alpha.view()).unwrap();
                    f.dot(&f).sqrt()
                })
                .collect();
            norms.sort_by(f64::total_cmp);
            medians.push(norms[1]);
        }
        assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
    }
}
