//! The correction stage: `u_h = u_N + eps * u_p` with `u_p` fitted by a
//! convex subproblem around the frozen initialization.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::assembly::{BaseSystem, PerturbationSystem};
use crate::basis::{Activation, NetSpec, PiecewiseField, RandomFeatureNet};
use crate::error::{Error, Result};
use crate::geometry::{CollocationSet, Point};
use crate::problem::InterfaceProblem;
use crate::solver::{gauss_newton, SolveReport, SolverOptions};

/// Residual norms below this are treated as already solved.
pub const EPSILON_FLOOR: f64 = 1e-14;

/// Settings of the correction networks and subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionSpec {
    pub m_p: usize,
    pub activation: Activation,
    pub weight_range: [f64; 2],
    pub bias_range: [f64; 2],
    pub seed: u64,
    /// Keep the `eps^2` terms of the expansion; otherwise the subproblem is linear.
    pub keep_second_order: bool,
    /// Fixed perturbation parameter; by default the base residual norm.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl CorrectionSpec {
    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            m: self.m_p,
            activation: self.activation,
            weight_range: self.weight_range,
            bias_range: self.bias_range,
            seed: self.seed,
        }
    }
}

/// `Some(|F|)`, or `None` when the residual is below [`EPSILON_FLOOR`].
pub fn epsilon_from_residual(f: ArrayView1<f64>) -> Result<Option<f64>> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite residual when choosing eps".into()));
    }
    let e = f.dot(&f).sqrt();
    Ok((e >= EPSILON_FLOOR).then_some(e))
}

/// The initialization plus its scaled correction, evaluated by composition.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedSolution {
    pub base: Vec<RandomFeatureNet>,
    pub correction: Vec<RandomFeatureNet>,
    pub epsilon: f64,
}

impl CorrectedSolution {
    /// `eps * u_p` in subdomain `k`.
    pub fn correction_in(&self, k: usize, p: &Point) -> f64 {
        self.epsilon * self.correction.value_in(k, p)
    }
}

impl PiecewiseField for CorrectedSolution {
    fn subdomain_count(&self) -> usize {
        self.base.len()
    }

    fn value_in(&self, k: usize, p: &Point) -> f64 {
        self.base.value_in(k, p) + self.correction_in(k, p)
    }
}

#[derive(Debug, Clone)]
pub enum CorrectionOutcome {
    /// The base residual was already below the floor.
    Skipped { epsilon: f64 },
    Corrected { solution: CorrectedSolution, report: SolveReport },
}

/// Fit the correction for the fitted `base` nets on `colloc`.
///
/// `observer` sees every correction iterate as a composed solution.
pub fn correct(
    problem: &InterfaceProblem,
    base: &[RandomFeatureNet],
    colloc: &CollocationSet,
    spec: &CorrectionSpec,
    opts: &SolverOptions,
    observer: Option<&mut dyn FnMut(usize, &CorrectedSolution)>,
) -> Result<CorrectionOutcome> {
    let epsilon = match spec.epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::Config(format!("correction epsilon must be positive, got {e}"))),
        None => {
            let alpha: Array1<f64> = base.iter().flat_map(|n| n.alpha.iter().copied()).collect();
            let f = BaseSystem::new(problem, base, colloc)?.assemble_residual(alpha.view())?;
            match epsilon_from_residual(f.view())? {
                Some(e) => e,
                None => return Ok(CorrectionOutcome::Skipped { epsilon: f.dot(&f).sqrt() }),
            }
        }
    };
    let mut correction = spec.net_spec().build(problem.subdomain_count(), problem.input_dim())?;
    let system = PerturbationSystem::new(problem, base, &correction, colloc, Some(epsilon), spec.keep_second_order)?;
    log::info!("correction: eps = {epsilon:.3e}, {} rows, {} columns", system.point_data().n_rows(), correction.len() * spec.m_p);

    let mut solution = CorrectedSolution { base: base.to_vec(), correction: correction.clone(), epsilon };
    let report = match observer {
        Some(obs) => {
            let mut wrap = |it: usize, gamma: ArrayView1<f64>| {
                set_coefficients(&mut solution.correction, gamma);
                obs(it, &solution);
            };
            gauss_newton(&system, Array1::zeros(correction.len() * spec.m_p).view(), opts, Some(&mut wrap))?
        }
        None => gauss_newton(&system, Array1::zeros(correction.len() * spec.m_p).view(), opts, None)?,
    };
    set_coefficients(&mut correction, report.coefficients.view());
    solution.correction = correction;
    Ok(CorrectionOutcome::Corrected { solution, report })
}

/// Split a stacked coefficient vector over the nets.
pub fn set_coefficients(nets: &mut [RandomFeatureNet], x: ArrayView1<f64>) {
    let mut off = 0;
    for n in nets {
        let m = n.m();
        n.alpha.assign(&x.slice(ndarray::s![off..off + m]));
        off += m;
    }
}
