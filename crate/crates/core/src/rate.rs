//! Rate functions `I(x) = ½ inf { ‖h‖² : skeleton(h) hits x }`.
//!
//! Controls are piecewise constant on a coarse grid whose pieces align with
//! the solver grid. When the skeleton is linear in the control (moderate
//! deviations without reflection) the endpoint map is assembled column by
//! column and the least-norm control is read off a pseudo-inverse. Every
//! other case goes through a quadratic-penalty Gauss–Newton loop on at most
//! [`MAX_NONLINEAR_COEFFICIENTS`] control coefficients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::dynamics::{solve_skeleton, SkeletonMode, SolvedPath, TimeGrid};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::monotone::MonotoneOperator;

pub const MAX_NONLINEAR_COEFFICIENTS: usize = 64;

/// Piecewise-constant control `h : [0, T] → ℝ^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    grid: TimeGrid,
    m: usize,
    values: Vec<f64>,
}

impl Control {
    pub fn from_values(grid: TimeGrid, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("control dimension must be positive"));
        }
        if values.len() != grid.steps() * m {
            return Err(Error::invalid(format!(
                "control has {} values, expected {} pieces x {m}",
                values.len(),
                grid.steps()
            )));
        }
        crate::error::ensure_finite("control", &values)?;
        Ok(Self { grid, m, values })
    }

    pub fn zeros(grid: TimeGrid, m: usize) -> Self {
        Self { grid, m, values: vec![0.0; grid.steps() * m] }
    }

    pub fn constant(grid: TimeGrid, m: usize, value: &[f64]) -> Result<Self> {
        ensure_dim(m, value.len())?;
        Self::from_values(grid, m, value.iter().copied().cycle().take(grid.steps() * m).collect())
    }

    /// Standard normal piece values.
    pub fn random<R: Rng + ?Sized>(grid: TimeGrid, m: usize, rng: &mut R) -> Self {
        let values = (0..grid.steps() * m).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        Self { grid, m, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn pieces(&self) -> usize {
        self.grid.steps()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn piece(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// `‖h‖²_ℍ = Σ |h_i|² τ`.
    pub fn norm_sq(&self) -> f64 {
        linalg::norm_sq(&self.values) * self.grid.dt()
    }

    pub fn add(&self, other: &Control) -> Result<Control> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::GridMismatch("controls live on different grids".into()));
        }
        Ok(Self { grid: self.grid, m: self.m, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn scaled(&self, s: f64) -> Control {
        Self { grid: self.grid, m: self.m, values: self.values.iter().map(|v| v * s).collect() }
    }

    /// `∫|h − g|²` for controls on the same grid.
    pub fn dist_sq(&self, other: &Control) -> Result<f64> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::GridMismatch("controls live on different grids".into()));
        }
        Ok(linalg::dist_sq(&self.values, &other.values) * self.grid.dt())
    }

    /// Solver steps per control piece on `solver`.
    pub fn steps_per_piece(&self, solver: &TimeGrid) -> Result<usize> {
        let pieces = self.pieces();
        if self.grid.horizon() != solver.horizon() || !solver.steps().is_multiple_of(pieces) {
            return Err(Error::GridMismatch(format!(
                "a control with {pieces} pieces on [0, {}] does not align with {} steps on [0, {}]",
                self.grid.horizon(),
                solver.steps(),
                solver.horizon()
            )));
        }
        Ok(solver.steps() / pieces)
    }

    /// The same function on a finer control grid.
    pub fn refined(&self, factor: usize) -> Control {
        let f = factor.max(1);
        let values = (0..self.pieces() * f).flat_map(|i| self.piece(i / f).to_vec()).collect();
        Self { grid: self.grid.refined(f), m: self.m, values }
    }
}

/// `½ ‖h‖²_ℍ`.
pub fn action(h: &Control) -> f64 {
    0.5 * h.norm_sq()
}

/// Tuning for the rate solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateOptions {
    /// Success threshold on the constraint residual.
    pub tol: f64,
    /// Control pieces; defaults to the solver grid in the linear case and to
    /// the largest aligned count within the coefficient budget otherwise.
    pub pieces: Option<usize>,
    /// Gauss–Newton iterations per penalty level.
    pub max_iterations: usize,
    pub initial_penalty: f64,
    pub max_penalty: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { tol: 1e-6, pieces: None, max_iterations: 50, initial_penalty: 10.0, max_penalty: 1e12 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateResult {
    pub value: f64,
    pub control: Control,
    /// Endpoint distance (endpoint targets) or sup-distance to the reference
    /// path (tubes), measured on a fresh skeleton solve.
    pub residual: f64,
    pub iterations: usize,
    pub success: bool,
    pub method: String,
}

fn is_linear(op: &MonotoneOperator, mode: SkeletonMode) -> bool {
    mode == SkeletonMode::Mdp && op.is_zero()
}

fn pick_pieces(grid: &TimeGrid, m: usize, linear: bool, requested: Option<usize>) -> Result<usize> {
    let steps = grid.steps();
    if let Some(p) = requested {
        if p == 0 || !steps.is_multiple_of(p) {
            return Err(Error::GridMismatch(format!("{p} control pieces do not divide {steps} solver steps")));
        }
        if !linear && p * m > MAX_NONLINEAR_COEFFICIENTS {
            return Err(Error::invalid(format!(
                "{} control coefficients exceed the budget of {MAX_NONLINEAR_COEFFICIENTS}",
                p * m
            )));
        }
        return Ok(p);
    }
    if linear {
        return Ok(steps);
    }
    let cap = (MAX_NONLINEAR_COEFFICIENTS / m).max(1);
    Ok((1..=cap.min(steps)).rev().find(|p| steps.is_multiple_of(*p)).unwrap_or(1))
}

fn coarse_grid(x0: &SolvedPath, pieces: usize) -> Result<TimeGrid> {
    TimeGrid::new(x0.grid().horizon(), pieces)
}

/// Skeleton response to every unit basis control, in parallel.
fn basis_responses(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    mode: SkeletonMode,
    coarse: TimeGrid,
) -> Result<Vec<SolvedPath>> {
    let m = c.noise_dim();
    (0..coarse.steps() * m)
        .into_par_iter()
        .map(|j| {
            let mut v = vec![0.0; coarse.steps() * m];
            v[j] = 1.0;
            solve_skeleton(c, op, x0, &Control { grid: coarse, m, values: v }, mode)
        })
        .collect()
}

fn pinv_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.solve(rhs, eps).map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))
}

fn check_target(c: &CoefficientSet, op: &MonotoneOperator, x0: &SolvedPath, target: &[f64], tol: f64) -> Result<()> {
    ensure_dim(c.dim(), op.dim())?;
    ensure_dim(c.dim(), x0.dim())?;
    ensure_dim(c.dim(), target.len())?;
    crate::error::ensure_finite("target", target)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Rate of the endpoint set `{y : y_T = z}` for the chosen skeleton.
pub fn rate_endpoint(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    mode: SkeletonMode,
    target: &[f64],
    opts: &RateOptions,
) -> Result<RateResult> {
    check_target(c, op, x0, target, opts.tol)?;
    let m = c.noise_dim();
    let linear = is_linear(op, mode);
    let pieces = pick_pieces(x0.grid(), m, linear, opts.pieces)?;
    let coarse = coarse_grid(x0, pieces)?;

    let free = solve_skeleton(c, op, x0, &Control::zeros(coarse, m), mode)?;
    let free_gap = linalg::dist(free.terminal(), target);
    if free_gap <= opts.tol {
        return Ok(RateResult {
            value: 0.0,
            control: Control::zeros(coarse, m),
            residual: free_gap,
            iterations: 0,
            success: true,
            method: "uncontrolled".into(),
        });
    }
    if c.diffusion_is_zero() {
        return Err(Error::Infeasible(format!(
            "the diffusion vanishes and the uncontrolled endpoint misses the target by {free_gap:e}"
        )));
    }

    if linear {
        let d = c.dim();
        let cols = basis_responses(c, op, x0, mode, coarse)?;
        // Y_T(h) = Y_T(0) + L h, and Y_T(0) = 0 for the homogeneous skeleton.
        let mut l = DMatrix::zeros(d, cols.len());
        for (j, p) in cols.iter().enumerate() {
            for (i, v) in p.terminal().iter().enumerate() {
                l[(i, j)] = v - free.terminal()[i];
            }
        }
        let rhs = DVector::from_iterator(d, target.iter().zip(free.terminal()).map(|(z, f)| z - f));
        let gram = &l * l.transpose();
        let w = pinv_solve(&gram, &rhs)?;
        let h = l.transpose() * w;
        let control = Control::from_values(coarse, m, h.iter().copied().collect())?;
        let check = solve_skeleton(c, op, x0, &control, mode)?;
        let residual = linalg::dist(check.terminal(), target);
        if residual > opts.tol.max(1e-9 * (1.0 + linalg::norm(target))) {
            return Err(Error::Infeasible(format!(
                "least-norm control misses the target by {residual:e}; the diffusion does not reach it"
            )));
        }
        return Ok(RateResult {
            value: action(&control),
            control,
            residual,
            iterations: 1,
            success: true,
            method: "least-norm".into(),
        });
    }

    let target = target.to_vec();
    let residual_fn = move |p: &SolvedPath, out: &mut Vec<f64>| {
        out.clear();
        out.extend(p.terminal().iter().zip(&target).map(|(y, z)| y - z));
    };
    penalty_gauss_newton(c, op, x0, mode, coarse, opts, &residual_fn, linalg::norm)
}

/// Rate of a tube around the reference path `phi`: minimizes
/// `½‖h‖² + ρ Σ_k |y_k − φ_k|² Δt`, raising `ρ` until the sup-distance to
/// `phi` is within `tol`.
pub fn rate_tube(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    mode: SkeletonMode,
    phi: &SolvedPath,
    opts: &RateOptions,
) -> Result<RateResult> {
    check_target(c, op, x0, phi.terminal(), opts.tol)?;
    if phi.grid() != x0.grid() {
        return Err(Error::GridMismatch("the reference path must share the limit path's grid".into()));
    }
    let m = c.noise_dim();
    let linear = is_linear(op, mode);
    let pieces = pick_pieces(x0.grid(), m, linear, opts.pieces)?;
    let coarse = coarse_grid(x0, pieces)?;
    let free = solve_skeleton(c, op, x0, &Control::zeros(coarse, m), mode)?;
    let start_gap = linalg::dist(free.state(0), phi.state(0));
    if start_gap > 1e-9 {
        return Err(Error::invalid(format!("reference path starts {start_gap:e} away from the skeleton's start")));
    }
    let sup_gap = |p: &SolvedPath| p.sup_dist(phi).unwrap_or(f64::INFINITY);
    if sup_gap(&free) <= opts.tol {
        return Ok(RateResult {
            value: 0.0,
            control: Control::zeros(coarse, m),
            residual: sup_gap(&free),
            iterations: 0,
            success: true,
            method: "uncontrolled".into(),
        });
    }
    if c.diffusion_is_zero() {
        return Err(Error::Infeasible("the diffusion vanishes and the uncontrolled path leaves the tube".into()));
    }
    let dt = x0.grid().dt();
    let sqdt = dt.sqrt();

    if linear {
        let cols = basis_responses(c, op, x0, mode, coarse)?;
        let rows = (phi.len() - 1) * c.dim();
        let tau = coarse.dt();
        let mut l = DMatrix::zeros(rows, cols.len());
        for (j, p) in cols.iter().enumerate() {
            for (i, (a, f)) in p.states()[c.dim()..].iter().zip(&free.states()[c.dim()..]).enumerate() {
                l[(i, j)] = a - f;
            }
        }
        let target = DVector::from_iterator(
            rows,
            phi.states()[c.dim()..].iter().zip(&free.states()[c.dim()..]).map(|(p, f)| p - f),
        );
        let mut rho = opts.initial_penalty;
        let mut iterations = 0;
        loop {
            iterations += 1;
            // Normal equations of ½τ|θ|² + ρ dt |Lθ − φ|².
            let lt = l.transpose();
            let mut a = &lt * &l * (2.0 * rho * dt);
            for i in 0..a.nrows() {
                a[(i, i)] += tau;
            }
            let b = &lt * &target * (2.0 * rho * dt);
            let theta = a.cholesky().map(|ch| ch.solve(&b)).ok_or_else(|| Error::invalid("tube system is singular"))?;
            let control = Control::from_values(coarse, m, theta.iter().copied().collect())?;
            let path = solve_skeleton(c, op, x0, &control, mode)?;
            let residual = sup_gap(&path);
            if residual <= opts.tol || rho >= opts.max_penalty {
                return Ok(RateResult {
                    value: action(&control),
                    control,
                    residual,
                    iterations,
                    success: residual <= opts.tol,
                    method: "regularized-least-squares".into(),
                });
            }
            rho *= 10.0;
        }
    }

    let d = c.dim();
    let phi_states = phi.states()[d..].to_vec();
    let residual_fn = move |p: &SolvedPath, out: &mut Vec<f64>| {
        out.clear();
        out.extend(p.states()[d..].iter().zip(&phi_states).map(|(y, f)| (y - f) * sqdt));
    };
    penalty_gauss_newton(c, op, x0, mode, coarse, opts, &residual_fn, move |r| {
        r.chunks(d).map(|v| linalg::norm(v) / sqdt).fold(0.0, f64::max)
    })
}

/// Minimizes `½τ|θ|² + ρ|r(θ)|²` by damped Gauss–Newton with forward-difference
/// Jacobians, escalating `ρ` by 10 until `measure(r) ≤ tol`.
#[allow(clippy::too_many_arguments)]
fn penalty_gauss_newton<F, G>(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    mode: SkeletonMode,
    coarse: TimeGrid,
    opts: &RateOptions,
    residual: &F,
    measure: G,
) -> Result<RateResult>
where
    F: Fn(&SolvedPath, &mut Vec<f64>) + Sync,
    G: Fn(&[f64]) -> f64,
{
    let m = c.noise_dim();
    let n = coarse.steps() * m;
    let tau = coarse.dt();
    let eval = |theta: &[f64]| -> Result<Vec<f64>> {
        let ctl = Control { grid: coarse, m, values: theta.to_vec() };
        let p = solve_skeleton(c, op, x0, &ctl, mode)?;
        let mut r = Vec::new();
        residual(&p, &mut r);
        Ok(r)
    };
    let objective = |theta: &[f64], r: &[f64], rho: f64| 0.5 * tau * linalg::norm_sq(theta) + rho * linalg::norm_sq(r);

    let mut theta = vec![0.0; n];
    let mut r = eval(&theta)?;
    let mut rho = opts.initial_penalty;
    let mut iterations = 0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let mut lambda = 1e-6;
        for _ in 0..opts.max_iterations {
            iterations += 1;
            let step_sizes: Vec<f64> = theta.iter().map(|t| 1e-6 * t.abs().max(1.0)).collect();
            let jac_cols: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let mut tp = theta.clone();
                    tp[j] += step_sizes[j];
                    let rp = eval(&tp)?;
                    Ok(rp.iter().zip(&r).map(|(a, b)| (a - b) / step_sizes[j]).collect())
                })
                .collect::<Result<_>>()?;
            let rows = r.len();
            let jm = DMatrix::from_fn(rows, n, |i, j| jac_cols[j][i]);
            let rv = DVector::from_column_slice(&r);
            let th = DVector::from_column_slice(&theta);
            let grad = &th * tau + jm.transpose() * &rv * (2.0 * rho);
            let base = jm.transpose() * &jm * (2.0 * rho);
            let f0 = objective(&theta, &r, rho);
            let mut accepted = false;
            for _ in 0..30 {
                let mut a = base.clone();
                for i in 0..n {
                    a[(i, i)] += tau + lambda;
                }
                let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&grad))) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                let rc = eval(&cand)?;
                if objective(&cand, &rc, rho) < f0 {
                    theta = cand;
                    r = rc;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted || grad.norm() <= 1e-12 * (1.0 + f0) {
                break;
            }
        }
        let res = measure(&r);
        if best.as_ref().is_none_or(|(_, b)| res < *b) {
            best = Some((theta.clone(), res));
        }
        if res <= opts.tol || rho >= opts.max_penalty {
            break;
        }
        rho *= 10.0;
    }
    let (theta, _) = best.expect("at least one penalty level runs");
    let control = Control::from_values(coarse, m, theta)?;
    let r = eval(control.values())?;
    let residual = measure(&r);
    Ok(RateResult {
        value: action(&control),
        control,
        residual,
        iterations,
        success: residual <= opts.tol,
        method: "penalty-gauss-newton".into(),
    })
}
