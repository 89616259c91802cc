//! Randomized single-hidden-layer feature networks.
//!
//! A network is `u(x) = sum_j alpha_j * act(w_j . x + b_j)` with frozen `w_j`,
//! `b_j`. All derivatives are closed-form, so every evaluated quantity is a
//! feature block applied to `alpha`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sin,
}

impl Activation {
    /// Value and first two derivatives at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = z.tanh();
                let d1 = 1.0 - s * s;
                (s, d1, -2.0 * s * d1)
            }
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                (s, c, -s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureNet {
    /// Hidden weights, `m x d`.
    w: Array2<f64>,
    b: Array1<f64>,
    pub activation: Activation,
    /// Output coefficients; the only mutable part.
    pub alpha: Array1<f64>,
    pub weight_range: [f64; 2],
    pub bias_range: [f64; 2],
    pub seed: u64,
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] < r[1] && r[0].is_finite() && r[1].is_finite()) {
        return Err(Error::Config(format!("{name} [{}, {}] is empty", r[0], r[1])));
    }
    Ok(())
}

impl RandomFeatureNet {
    /// Draw `w` per coordinate uniformly from `weight_range` and `b` from `bias_range`.
    pub fn new(
        m: usize,
        d: usize,
        activation: Activation,
        weight_range: [f64; 2],
        bias_range: [f64; 2],
        seed: u64,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("network needs at least one neuron".into()));
        }
        if !(d == 2 || d == 3) {
            return Err(Error::Config(format!("input dimension must be 2 or 3, got {d}")));
        }
        check_range("weight range", weight_range)?;
        check_range("bias range", bias_range)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_fn((m, d), |_| rng.gen_range(weight_range[0]..weight_range[1]));
        let b = Array1::from_shape_fn(m, |_| rng.gen_range(bias_range[0]..bias_range[1]));
        Ok(Self { w, b, activation, alpha: Array1::zeros(m), weight_range, bias_range, seed })
    }

    /// Build from explicit hidden parameters (mainly for tests).
    pub fn from_parts(w: Array2<f64>, b: Array1<f64>, activation: Activation) -> Result<Self> {
        let (m, d) = w.dim();
        if b.len() != m || m == 0 || !(d == 2 || d == 3) {
            return Err(Error::Shape(format!("w is {m}x{d}, b has {}", b.len())));
        }
        Ok(Self {
            w,
            b,
            activation,
            alpha: Array1::zeros(m),
            weight_range: [f64::NAN; 2],
            bias_range: [f64::NAN; 2],
            seed: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn set_alpha(&mut self, alpha: ArrayView1<f64>) -> Result<()> {
        if alpha.len() != self.m() {
            return Err(Error::Shape(format!("alpha has {} entries, net has {}", alpha.len(), self.m())));
        }
        self.alpha.assign(&alpha);
        Ok(())
    }

    #[inline]
    fn preact(&self, j: usize, p: &Point) -> f64 {
        let w = self.w.row(j);
        let mut z = self.b[j] + w[0] * p.x + w[1] * p.y;
        if w.len() == 3 {
            z += w[2] * p.t;
        }
        z
    }

    /// Direct summation of the network at a single point with coefficients `alpha`.
    pub fn value_at(&self, alpha: ArrayView1<f64>, p: &Point) -> f64 {
        (0..self.m()).map(|j| alpha[j] * self.activation.eval(self.preact(j, p)).0).sum()
    }

    /// Evaluate the feature blocks at `points`.
    ///
    /// Normal derivatives are stored when `normals` is given. The full spatial
    /// Hessian is stored when `hessian` is set; the Laplacian is always kept.
    pub fn features(&self, points: &[Point], normals: Option<&[[f64; 2]]>, hessian: bool) -> Result<FeatureBlock> {
        if let Some(n) = normals {
            if n.len() != points.len() {
                return Err(Error::Shape(format!("{} normals for {} points", n.len(), points.len())));
            }
        }
        let (np, m) = (points.len(), self.m());
        let with_time = self.dim() == 3;
        let mut phi = Array2::zeros((np, m));
        let mut dx = Array2::zeros((np, m));
        let mut dy = Array2::zeros((np, m));
        let mut lap = Array2::zeros((np, m));
        let mut dt = with_time.then(|| Array2::zeros((np, m)));
        let mut hess = hessian.then(|| [Array2::zeros((np, m)), Array2::zeros((np, m)), Array2::zeros((np, m))]);
        let mut dn = normals.map(|_| Array2::zeros((np, m)));
        for (i, p) in points.iter().enumerate() {
            for j in 0..m {
                let (s, d1, d2) = self.activation.eval(self.preact(j, p));
                let (wx, wy) = (self.w[[j, 0]], self.w[[j, 1]]);
                phi[[i, j]] = s;
                dx[[i, j]] = wx * d1;
                dy[[i, j]] = wy * d1;
                lap[[i, j]] = (wx * wx + wy * wy) * d2;
                if let Some(dt) = dt.as_mut() {
                    dt[[i, j]] = self.w[[j, 2]] * d1;
                }
                if let Some(h) = hess.as_mut() {
                    h[0][[i, j]] = wx * wx * d2;
                    h[1][[i, j]] = wx * wy * d2;
                    h[2][[i, j]] = wy * wy * d2;
                }
                if let (Some(dn), Some(n)) = (dn.as_mut(), normals) {
                    dn[[i, j]] = (wx * n[i][0] + wy * n[i][1]) * d1;
                }
            }
        }
        Ok(FeatureBlock { phi, dx, dy, lap, dt, hess, dn })
    }

    /// Fields of the network with its own coefficients.
    pub fn eval_state(&self, block: &FeatureBlock) -> Result<FieldState> {
        block.apply(self.alpha.view())
    }
}

/// Feature values and derivatives at a point set; every block is `N x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub phi: Array2<f64>,
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
    pub lap: Array2<f64>,
    pub dt: Option<Array2<f64>>,
    /// `(xx, xy, yy)` second derivatives.
    pub hess: Option<[Array2<f64>; 3]>,
    pub dn: Option<Array2<f64>>,
}

impl FeatureBlock {
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn cols(&self) -> usize {
        self.phi.ncols()
    }

    /// Apply the blocks to a coefficient vector.
    pub fn apply(&self, alpha: ArrayView1<f64>) -> Result<FieldState> {
        if alpha.len() != self.cols() {
            return Err(Error::Shape(format!("alpha has {} entries, block has {} columns", alpha.len(), self.cols())));
        }
        Ok(FieldState {
            u: self.phi.dot(&alpha),
            gx: self.dx.dot(&alpha),
            gy: self.dy.dot(&alpha),
            lap: self.lap.dot(&alpha),
            ut: self.dt.as_ref().map(|b| b.dot(&alpha)),
            hess: self.hess.as_ref().map(|h| [h[0].dot(&alpha), h[1].dot(&alpha), h[2].dot(&alpha)]),
            un: self.dn.as_ref().map(|b| b.dot(&alpha)),
        })
    }
}

/// Per-point network fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Array1<f64>,
    pub gx: Array1<f64>,
    pub gy: Array1<f64>,
    pub lap: Array1<f64>,
    pub ut: Option<Array1<f64>>,
    pub hess: Option<[Array1<f64>; 3]>,
    pub un: Option<Array1<f64>>,
}

impl FieldState {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn zeros(n: usize, with_time: bool, hessian: bool, normal: bool) -> Self {
        let z = || Array1::zeros(n);
        Self {
            u: z(),
            gx: z(),
            gy: z(),
            lap: z(),
            ut: with_time.then(z),
            hess: hessian.then(|| [z(), z(), z()]),
            un: normal.then(z),
        }
    }
}

/// Hyperparameters of the per-subdomain networks of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// Neurons per subdomain.
    pub m: usize,
    pub activation: Activation,
    pub weight_range: [f64; 2],
    pub bias_range: [f64; 2],
    pub seed: u64,
}

impl NetSpec {
    /// One network per subdomain, each with its own derived seed.
    pub fn build(&self, subdomains: usize, dim: usize) -> Result<Vec<RandomFeatureNet>> {
        (0..subdomains)
            .map(|k| {
                RandomFeatureNet::new(
                    self.m,
                    dim,
                    self.activation,
                    self.weight_range,
                    self.bias_range,
                    subdomain_seed(self.seed, k),
                )
            })
            .collect()
    }
}

/// Decorrelated seed for subdomain `k` (splitmix64 finalizer).
pub fn subdomain_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A field defined piecewise, one branch per subdomain.
pub trait PiecewiseField {
    fn subdomain_count(&self) -> usize;
    fn value_in(&self, k: usize, p: &Point) -> f64;
}

impl PiecewiseField for [RandomFeatureNet] {
    fn subdomain_count(&self) -> usize {
        self.len()
    }

    fn value_in(&self, k: usize, p: &Point) -> f64 {
        self[k].value_at(self[k].alpha.view(), p)
    }
}

impl PiecewiseField for Vec<RandomFeatureNet> {
    fn subdomain_count(&self) -> usize {
        self.len()
    }

    fn value_in(&self, k: usize, p: &Point) -> f64 {
        self.as_slice().value_in(k, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::f64::consts::PI;

    fn frob_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(|v| v * v).sum().sqrt();
        diff / b.mapv(|v| v * v).sum().sqrt().max(1e-300)
    }

    #[test]
    fn single_tanh_neuron_at_origin() {
        let net = RandomFeatureNet::from_parts(array![[1.0, 0.0]], array![0.0], Activation::Tanh).unwrap();
        let fb = net.features(&[Point::new(0.0, 0.0)], None, false).unwrap();
        assert_eq!(fb.phi[[0, 0]], 0.0);
        assert_eq!((fb.dx[[0, 0]], fb.dy[[0, 0]]), (1.0, 0.0));
        assert_eq!(fb.lap[[0, 0]], 0.0);
    }

    #[test]
    fn single_sin_neuron() {
        let net = RandomFeatureNet::from_parts(array![[PI, 0.0]], array![0.0], Activation::Sin).unwrap();
        let fb = net.features(&[Point::new(0.5, 0.0)], None, false).unwrap();
        assert_abs_diff_eq!(fb.phi[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fb.dx[[0, 0]], 0.0, epsilon = 1e-15);
        assert_eq!(fb.dy[[0, 0]], 0.0);
        assert_abs_diff_eq!(fb.lap[[0, 0]], -PI * PI, epsilon = 1e-13);
    }

    #[test]
    fn net_spec_builds_distinct_reproducible_nets() {
        let spec = NetSpec { m: 30, activation: Activation::Tanh, weight_range: [-1.0, 1.0], bias_range: [-0.1, 0.1], seed: 4 };
        let nets = spec.build(4, 3).unwrap();
        assert_eq!(nets, spec.build(4, 3).unwrap());
        for i in 0..4 {
            assert_eq!(nets[i].m(), 30);
            for j in i + 1..4 {
                assert_ne!(nets[i].weights(), nets[j].weights());
            }
        }
        let seeds: std::collections::HashSet<u64> = (0..64).map(|k| subdomain_seed(4, k)).collect();
        assert_eq!(seeds.len(), 64);
        assert_ne!(subdomain_seed(4, 0), subdomain_seed(5, 0));
    }

    #[test]
    fn init_ranges_and_determinism() {
        let a = RandomFeatureNet::new(100, 2, Activation::Tanh, [-1.0, 1.0], [-0.1, 0.1], 9).unwrap();
        let b = RandomFeatureNet::new(100, 2, Activation::Tanh, [-1.0, 1.0], [-0.1, 0.1], 9).unwrap();
        assert_eq!(a, b);
        assert!(a.weights().iter().all(|w| (-1.0..1.0).contains(w)));
        assert!(a.biases().iter().all(|v| (-0.1..0.1).contains(v)));
        assert!(a.alpha.iter().all(|&v| v == 0.0));

        let c = RandomFeatureNet::new(2000, 2, Activation::Sin, [-7.0 * PI, 7.0 * PI], [-PI, PI], 1).unwrap();
        assert!(c.weights().iter().all(|w| w.abs() <= 7.0 * PI));
        assert!(c.weights().iter().any(|w| w.abs() > 6.0 * PI));
    }

    #[test]
    fn invalid_construction() {
        assert!(RandomFeatureNet::new(0, 2, Activation::Tanh, [-1.0, 1.0], [0.0, 1.0], 0).is_err());
        assert!(RandomFeatureNet::new(4, 2, Activation::Tanh, [1.0, 1.0], [0.0, 1.0], 0).is_err());
        assert!(RandomFeatureNet::new(4, 4, Activation::Tanh, [-1.0, 1.0], [0.0, 1.0], 0).is_err());
    }

    fn random_points(n: usize, with_time: bool, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = if with_time { rng.gen_range(0.0..1.0) } else { 0.0 };
                Point::with_time(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), t)
            })
            .collect()
    }

    #[test]
    fn derivative_blocks_match_finite_differences() {
        for (act, with_time) in [(Activation::Tanh, false), (Activation::Sin, false), (Activation::Tanh, true)] {
            let d = if with_time { 3 } else { 2 };
            let net = RandomFeatureNet::new(15, d, act, [-2.0, 2.0], [-1.0, 1.0], 3).unwrap();
            let pts = random_points(20, with_time, 4);
            let normals: Vec<[f64; 2]> = pts.iter().map(|p| {
                let a = p.x * 3.0;
                [a.cos(), a.sin()]
            }).collect();
            let fb = net.features(&pts, Some(&normals), true).unwrap();
            let h = 1e-5;
            let shifted = |dx: f64, dy: f64, dt: f64| -> FeatureBlock {
                let q: Vec<Point> = pts.iter().map(|p| Point::with_time(p.x + dx, p.y + dy, p.t + dt)).collect();
                net.features(&q, None, false).unwrap()
            };
            let (xp, xm) = (shifted(h, 0.0, 0.0), shifted(-h, 0.0, 0.0));
            let (yp, ym) = (shifted(0.0, h, 0.0), shifted(0.0, -h, 0.0));
            let fdx = (&xp.phi - &xm.phi) / (2.0 * h);
            let fdy = (&yp.phi - &ym.phi) / (2.0 * h);
            assert!(frob_rel(&fb.dx, &fdx) < 1e-6);
            assert!(frob_rel(&fb.dy, &fdy) < 1e-6);
            // second derivatives from differences of the analytic gradient
            let fxx = (&xp.dx - &xm.dx) / (2.0 * h);
            let fxy = (&yp.dx - &ym.dx) / (2.0 * h);
            let fyy = (&yp.dy - &ym.dy) / (2.0 * h);
            let hs = fb.hess.as_ref().unwrap();
            assert!(frob_rel(&hs[0], &fxx) < 1e-6);
            assert!(frob_rel(&hs[1], &fxy) < 1e-6);
            assert!(frob_rel(&hs[2], &fyy) < 1e-6);
            assert!(frob_rel(&fb.lap, &(&fxx + &fyy)) < 1e-6);
            let dn = fb.dn.as_ref().unwrap();
            for i in 0..pts.len() {
                for j in 0..net.m() {
                    let expect = fb.dx[[i, j]] * normals[i][0] + fb.dy[[i, j]] * normals[i][1];
                    assert_abs_diff_eq!(dn[[i, j]], expect, epsilon = 1e-14);
                }
            }
            if with_time {
                let (tp, tm) = (shifted(0.0, 0.0, h), shifted(0.0, 0.0, -h));
                let fdt = (&tp.phi - &tm.phi) / (2.0 * h);
                assert!(frob_rel(fb.dt.as_ref().unwrap(), &fdt) < 1e-6);
            }
        }
    }

    #[test]
    fn eval_state_basics() {
        let mut net = RandomFeatureNet::new(12, 2, Activation::Sin, [-3.0, 3.0], [-1.0, 1.0], 5).unwrap();
        let pts = random_points(30, false, 6);
        let fb = net.features(&pts, None, false).unwrap();
        let st = net.eval_state(&fb).unwrap();
        assert!(st.u.iter().chain(st.gx.iter()).chain(st.lap.iter()).all(|&v| v == 0.0));

        let mut e = Array1::zeros(12);
        e[4] = 1.0;
        net.set_alpha(e.view()).unwrap();
        let st = net.eval_state(&fb).unwrap();
        for i in 0..pts.len() {
            assert_eq!(st.u[i], fb.phi[[i, 4]]);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let alpha = Array1::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0));
        let st = fb.apply(alpha.view()).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert_abs_diff_eq!(st.u[i], net.value_at(alpha.view(), p), epsilon = 1e-14);
        }
        assert!(matches!(fb.apply(Array1::zeros(11).view()), Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn linear_in_alpha(seed in 0u64..1000, c in -5.0f64..5.0) {
                let net = RandomFeatureNet::new(8, 3, Activation::Tanh, [-2.0, 2.0], [-1.0, 1.0], seed).unwrap();
                let pts = random_points(10, true, seed + 1);
                let fb = net.features(&pts, Some(&vec![[0.6, 0.8]; 10]), true).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
                let a = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
                let b = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
                let sa = fb.apply(a.view()).unwrap();
                let sb = fb.apply(b.view()).unwrap();
                let sc = fb.apply((&a + &(c * &b)).view()).unwrap();
                let check = |x: &Array1<f64>, y: &Array1<f64>, z: &Array1<f64>| {
                    x.iter().zip(y).zip(z).all(|((x, y), z)| (x + c * y - z).abs() <= 1e-13 * (1.0 + z.abs()))
                };
                prop_assert!(check(&sa.u, &sb.u, &sc.u));
                prop_assert!(check(&sa.gx, &sb.gx, &sc.gx));
                prop_assert!(check(&sa.gy, &sb.gy, &sc.gy));
                prop_assert!(check(&sa.lap, &sb.lap, &sc.lap));
                prop_assert!(check(sa.ut.as_ref().unwrap(), sb.ut.as_ref().unwrap(), sc.ut.as_ref().unwrap()));
                prop_assert!(check(sa.un.as_ref().unwrap(), sb.un.as_ref().unwrap(), sc.un.as_ref().unwrap()));
            }
        }
    }
}
