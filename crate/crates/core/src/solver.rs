//! Gauss-Newton with truncated-SVD pseudoinverse steps.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ShapeBuilder};
use ndarray_linalg::{JobSvd, Lapack, MatrixLayout, SVDDC};
use serde::{Deserialize, Serialize};

use crate::assembly::LeastSquaresSystem;
use crate::error::{Error, Result};

/// Floor of the denominator in the relative-change stopping rule.
pub const RELATIVE_CHANGE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Singular values below `svd_threshold * sigma_max` are discarded.
    pub svd_threshold: f64,
    /// Stop once the relative change of the residual norm is at most this.
    pub stop_tol: f64,
    /// Fraction of the Gauss-Newton step taken, in `(0, 1]`.
    pub damping: f64,
    /// Halve the step when the trial residual is not finite.
    pub step_halving: bool,
    pub max_halvings: u32,
    /// Report divergence once the norm exceeds this multiple of its minimum.
    pub divergence_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            svd_threshold: 1e-12,
            stop_tol: 1e-8,
            damping: 1.0,
            step_halving: true,
            max_halvings: 20,
            divergence_factor: 10.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.svd_threshold >= 0.0) {
            return Err(Error::Config("svd_threshold must be non-negative".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Config("stop_tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Spectral summary of one pseudoinverse solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinvInfo {
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest retained singular value.
    pub sigma_min_retained: f64,
}

/// `delta = -V S_r^+ U^T F` with singular values below `tau * sigma_max` dropped.
///
/// Tall systems are first reduced by a Householder QR, so only the small
/// triangular factor is decomposed.
pub fn truncated_pinv_solve(j: Array2<f64>, f: ArrayView1<f64>, tau: f64) -> Result<(Array1<f64>, PinvInfo)> {
    let (m, n) = j.dim();
    if f.len() != m {
        return Err(Error::Shape(format!("residual has {} rows, Jacobian {m}", f.len())));
    }
    if j.iter().any(|v| !v.is_finite()) || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries passed to the SVD".into()));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), PinvInfo { rank: 0, sigma_max: 0.0, sigma_min_retained: 0.0 }));
    }
    let lapack = |e: ndarray_linalg::error::LinalgError| Error::Numerical(format!("LAPACK: {e}"));

    let (core, rhs) = if m >= n {
        let mut a = if j.t().is_standard_layout() {
            j
        } else {
            let mut c = Array2::zeros((m, n).f());
            c.assign(&j);
            c
        };
        let data = a.as_slice_memory_order_mut().expect("contiguous column-major storage");
        let taus = f64::householder(MatrixLayout::F { col: n as i32, lda: m as i32 }, data)
            .map_err(|e| Error::Numerical(format!("QR failed: {e}")))?;
        // apply Q^T to the residual reflector by reflector
        let mut b = f.to_owned();
        let bs = b.as_slice_mut().unwrap();
        for (k, &tk) in taus.iter().enumerate() {
            let col = &data[k * m..(k + 1) * m];
            let mut w = bs[k];
            for i in k + 1..m {
                w += col[i] * bs[i];
            }
            w *= tk;
            bs[k] -= w;
            for i in k + 1..m {
                bs[i] -= w * col[i];
            }
        }
        let mut r = Array2::<f64>::zeros((n, n));
        for c in 0..n {
            for i in 0..=c {
                r[[i, c]] = data[c * m + i];
            }
        }
        (r, b.slice(s![..n]).to_owned())
    } else {
        (j, f.to_owned())
    };

    let (u, sigma, vt) = core.svddc(JobSvd::Some).map_err(lapack)?;
    let (u, vt) = (u.expect("U requested"), vt.expect("VT requested"));
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cut = tau * sigma_max;
    let mut coef = u.t().dot(&rhs);
    let mut rank = 0;
    let mut sigma_min_retained = f64::INFINITY;
    for (i, &sv) in sigma.iter().enumerate() {
        if sv > 0.0 && sv >= cut {
            coef[i] /= sv;
            rank += 1;
            sigma_min_retained = sigma_min_retained.min(sv);
        } else {
            coef[i] = 0.0;
        }
    }
    if rank == 0 {
        sigma_min_retained = 0.0;
    }
    let delta = -vt.t().dot(&coef);
    Ok((delta, PinvInfo { rank, sigma_max, sigma_min_retained }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `|F|` before the first step and after every step.
    pub residual_history: Vec<f64>,
    /// Relative change of `|F|` at every step.
    pub relative_change: Vec<f64>,
    pub rank_history: Vec<usize>,
    pub sigma_min_history: Vec<f64>,
    pub halvings: Vec<u32>,
    pub stop_reason: StopReason,
    /// Iteration whose coefficients are returned (the smallest residual).
    pub best_iteration: usize,
    pub best_residual: f64,
    #[serde(skip)]
    pub coefficients: Array1<f64>,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.stop_reason == StopReason::Converged
    }

    pub fn diverged(&self) -> bool {
        self.stop_reason == StopReason::Diverged
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap()
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Run Gauss-Newton from `x0`.
///
/// `observer` is called with the iteration index and the current coefficients
/// after every accepted step (index 0 is the starting point).
pub fn gauss_newton<S: LeastSquaresSystem + ?Sized>(
    system: &S,
    x0: ArrayView1<f64>,
    opts: &SolverOptions,
    mut observer: Option<&mut dyn FnMut(usize, ArrayView1<f64>)>,
) -> Result<SolveReport> {
    opts.validate()?;
    if x0.len() != system.n_params() {
        return Err(Error::Shape(format!("{} initial coefficients for {} parameters", x0.len(), system.n_params())));
    }
    let start = Instant::now();
    let mut x = x0.to_owned();
    let (mut f, mut jac) = system.residual_and_jacobian(x.view())?;
    crate::assembly::ensure_finite(&f, "initial residual")?;
    let mut current = norm(&f);
    if let Some(obs) = observer.as_mut() {
        obs(0, x.view());
    }

    let mut report = SolveReport {
        iterations: 0,
        residual_history: vec![current],
        relative_change: vec![],
        rank_history: vec![],
        sigma_min_history: vec![],
        halvings: vec![],
        stop_reason: StopReason::MaxIterations,
        best_iteration: 0,
        best_residual: current,
        coefficients: x.clone(),
        wall_time_s: 0.0,
    };

    for it in 1..=opts.max_iters {
        let (delta, info) = truncated_pinv_solve(jac, f.view(), opts.svd_threshold)?;
        report.rank_history.push(info.rank);
        report.sigma_min_history.push(info.sigma_min_retained);

        let mut step = opts.damping;
        let mut halvings = 0;
        let x_new = loop {
            let trial = &x + &(&delta * step);
            let ft = system.residual(trial.view())?;
            let finite = ft.iter().all(|v| v.is_finite());
            // Backtrack on overshoot too; growth within the stopping tolerance is noise.
            let acceptable = norm(&ft) <= current * (1.0 + opts.stop_tol);
            if finite && (!opts.step_halving || halvings >= opts.max_halvings || acceptable) {
                break trial;
            }
            if !opts.step_halving || halvings >= opts.max_halvings {
                return Err(Error::Numerical(format!(
                    "non-finite residual at iteration {it} after {halvings} step halvings"
                )));
            }
            halvings += 1;
            step *= 0.5;
        };
        let (f_new, j_new) = system.residual_and_jacobian(x_new.view())?;
        report.halvings.push(halvings);

        x = x_new;
        f = f_new;
        jac = j_new;
        let previous = current;
        current = norm(&f);
        let rel = (current - previous).abs() / current.max(RELATIVE_CHANGE_FLOOR);
        report.residual_history.push(current);
        report.relative_change.push(rel);
        report.iterations = it;
        if let Some(obs) = observer.as_mut() {
            obs(it, x.view());
        }
        log::debug!("iteration {it}: |F| = {current:.6e}, rel change = {rel:.3e}, rank = {}", info.rank);

        if current < report.best_residual {
            report.best_residual = current;
            report.best_iteration = it;
            report.coefficients.assign(&x);
        }
        if current > opts.divergence_factor * report.best_residual {
            report.stop_reason = StopReason::Diverged;
            log::warn!("residual grew from {:.3e} to {current:.3e}; stopping", report.best_residual);
            break;
        }
        if rel <= opts.stop_tol {
            report.stop_reason = StopReason::Converged;
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
