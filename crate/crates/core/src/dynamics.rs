//! Time stepping for the reflected McKean–Vlasov equation and its relatives.
//!
//! Every solver uses the same splitting step: an explicit predictor
//! `p = x + drift·Δt + noise`, then `x' = J_Δt(p)`. The compensator
//! increment is the residual `ΔK = p − x'`, which lies in `Δt·A(x')`.
//!
//! Particle systems keep their states in one flat `n × d` buffer. Each
//! particle owns a noise stream, so the per-particle update can run on any
//! worker; the empirical measure is recomputed (with a fixed reduction
//! order) between steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, MeasureFeatures};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::measures::EmpiricalMeasure;
use crate::monotone::{GraphSample, MonotoneOperator};
use crate::noise::{NoisePlan, ParticleNoise};
use crate::rate::Control;

/// Uniform grid `t_k = k·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Same horizon with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { horizon: self.horizon, steps: self.steps * factor.max(1) }
    }

    fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what} lives on (T={}, n={}) but the solver grid is (T={}, n={})",
                other.horizon, other.steps, self.horizon, self.steps
            )))
        }
    }
}

/// One solved trajectory with its compensator.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedPath {
    grid: TimeGrid,
    dim: usize,
    x: Vec<f64>,
    dk: Vec<f64>,
    k: Vec<f64>,
    var_k: Vec<f64>,
}

impl SolvedPath {
    fn with_start(grid: TimeGrid, x0: &[f64]) -> Self {
        let d = x0.len();
        let cap = (grid.steps + 1) * d;
        let mut x = Vec::with_capacity(cap);
        x.extend_from_slice(x0);
        let mut path = Self {
            grid,
            dim: d,
            x,
            dk: Vec::with_capacity(cap),
            k: Vec::with_capacity(cap),
            var_k: Vec::with_capacity(grid.steps + 1),
        };
        path.dk.resize(d, 0.0);
        path.k.resize(d, 0.0);
        path.var_k.push(0.0);
        path
    }

    fn push(&mut self, x: &[f64], dk: &[f64]) {
        let d = self.dim;
        let last = self.k.len() - d;
        for c in 0..d {
            self.k.push(self.k[last + c] + dk[c]);
        }
        self.var_k.push(self.var_k.last().copied().unwrap_or(0.0) + linalg::norm(dk));
        self.x.extend_from_slice(x);
        self.dk.extend_from_slice(dk);
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored time points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.var_k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.var_k.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.x
    }

    /// Cumulative compensator `K_k`, with `K_0 = 0`.
    pub fn compensator(&self, k: usize) -> &[f64] {
        &self.k[k * self.dim..(k + 1) * self.dim]
    }

    /// Increment `ΔK_k = K_k − K_{k−1}` as produced by the step (zero at `k = 0`).
    pub fn compensator_increment(&self, k: usize) -> &[f64] {
        &self.dk[k * self.dim..(k + 1) * self.dim]
    }

    /// Running total variation of `K`.
    pub fn variation(&self) -> &[f64] {
        &self.var_k
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// `max_k |X_k|`.
    pub fn sup_norm(&self) -> f64 {
        self.x.chunks(self.dim).map(linalg::norm).fold(0.0, f64::max)
    }

    /// `max_k |X_k − Y_k|`.
    pub fn sup_dist(&self, other: &SolvedPath) -> Result<f64> {
        self.grid.ensure_same(&other.grid, "comparison path")?;
        ensure_dim(self.dim, other.dim)?;
        Ok(self.x.chunks(self.dim).zip(other.x.chunks(self.dim)).map(|(a, b)| linalg::dist(a, b)).fold(0.0, f64::max))
    }
}

/// `N` particle paths on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    grid: TimeGrid,
    dim: usize,
    particles: usize,
    /// `(steps + 1) × n × d`.
    x: Vec<f64>,
    k: Vec<f64>,
    /// `(steps + 1) × n`.
    var_k: Vec<f64>,
}

/// One row of an ensemble summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub t: f64,
    pub mean: Vec<f64>,
    pub second_moment: f64,
    /// Particle average of `sup_{s ≤ t} |X_s|`.
    pub sup_stat: f64,
}

impl Ensemble {
    fn recorder(grid: TimeGrid, dim: usize, particles: usize) -> Self {
        let cap = (grid.steps + 1) * particles * dim;
        Self {
            grid,
            dim,
            particles,
            x: Vec::with_capacity(cap),
            k: Vec::with_capacity(cap),
            var_k: Vec::with_capacity((grid.steps + 1) * particles),
        }
    }

    fn record(&mut self, x: &[f64], dk: &[f64]) {
        let (n, d) = (self.particles, self.dim);
        if self.var_k.is_empty() {
            self.k.resize(n * d, 0.0);
            self.var_k.resize(n, 0.0);
        } else {
            let kb = self.k.len() - n * d;
            let vb = self.var_k.len() - n;
            for i in 0..n {
                for c in 0..d {
                    self.k.push(self.k[kb + i * d + c] + dk[i * d + c]);
                }
                self.var_k.push(self.var_k[vb + i] + linalg::norm(&dk[i * d..(i + 1) * d]));
            }
        }
        self.x.extend_from_slice(x);
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Flat `n × d` states at step `k`.
    pub fn states(&self, k: usize) -> &[f64] {
        let w = self.particles * self.dim;
        &self.x[k * w..(k + 1) * w]
    }

    /// Empirical law at step `k`.
    pub fn measure(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.states(k).to_vec()).expect("ensemble states are finite")
    }

    pub fn particle(&self, i: usize) -> SolvedPath {
        let (n, d) = (self.particles, self.dim);
        let steps = self.grid.steps;
        let mut p = SolvedPath::with_start(self.grid, &self.x[i * d..(i + 1) * d]);
        let mut dk = vec![0.0; d];
        for k in 1..=steps {
            let base = k * n * d + i * d;
            let prev = (k - 1) * n * d + i * d;
            for c in 0..d {
                dk[c] = self.k[base + c] - self.k[prev + c];
            }
            p.x.extend_from_slice(&self.x[base..base + d]);
            p.dk.extend_from_slice(&dk);
            p.k.extend_from_slice(&self.k[base..base + d]);
            p.var_k.push(self.var_k[k * n + i]);
        }
        p
    }

    /// Per-particle `max_k |X^i_k − φ_k|` against a deterministic path.
    pub fn sup_dist_to_path(&self, path: &SolvedPath) -> Result<Vec<f64>> {
        self.grid.ensure_same(path.grid(), "reference path")?;
        ensure_dim(self.dim, path.dim())?;
        let (n, d) = (self.particles, self.dim);
        let mut out = vec![0.0f64; n];
        for k in 0..=self.grid.steps {
            let s = self.states(k);
            let r = path.state(k);
            for (i, o) in out.iter_mut().enumerate() {
                *o = o.max(linalg::dist(&s[i * d..(i + 1) * d], r));
            }
        }
        Ok(out)
    }

    /// Per-particle `max_k |X^i_k − Y^i_k|`.
    pub fn sup_dist(&self, other: &Ensemble) -> Result<Vec<f64>> {
        self.grid.ensure_same(other.grid(), "comparison ensemble")?;
        ensure_dim(self.dim, other.dim)?;
        ensure_dim(self.particles, other.particles)?;
        let d = self.dim;
        let mut out = vec![0.0f64; self.particles];
        for k in 0..=self.grid.steps {
            let (a, b) = (self.states(k), other.states(k));
            for (i, o) in out.iter_mut().enumerate() {
                *o = o.max(linalg::dist(&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]));
            }
        }
        Ok(out)
    }

    /// Per-particle `max_k |X^i_k|`.
    pub fn sup_norms(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0f64; self.particles];
        for k in 0..=self.grid.steps {
            let s = self.states(k);
            for (i, o) in out.iter_mut().enumerate() {
                *o = o.max(linalg::norm(&s[i * d..(i + 1) * d]));
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<EnsembleSummary> {
        let (n, d) = (self.particles, self.dim);
        let mut running = vec![0.0f64; n];
        let mut sq = vec![0.0; n];
        (0..=self.grid.steps)
            .map(|k| {
                let s = self.states(k);
                let mut mean = vec![0.0; d];
                linalg::mean_rows(s, d, &mut mean);
                for i in 0..n {
                    let r = &s[i * d..(i + 1) * d];
                    sq[i] = linalg::norm_sq(r);
                    running[i] = running[i].max(sq[i].sqrt());
                }
                EnsembleSummary {
                    t: self.grid.time(k),
                    mean,
                    second_moment: linalg::pairwise_sum(&sq) / n as f64,
                    sup_stat: linalg::pairwise_sum(&running) / n as f64,
                }
            })
            .collect()
    }
}

// ---- the splitting step ------------------------------------------------

/// One step of the splitting scheme. Returns `(x_{k+1}, ΔK)`.
pub fn step_reflected(
    op: &MonotoneOperator,
    x: &[f64],
    drift: &[f64],
    noise: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = op.dim();
    ensure_dim(d, x.len())?;
    ensure_dim(d, drift.len())?;
    ensure_dim(d, noise.len())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {dt}")));
    }
    let mut next = x.to_vec();
    let mut dk = vec![0.0; d];
    advance_one(op, &mut next, drift, Some(noise), dt, &mut dk, 0)?;
    Ok((next, dk))
}

#[inline]
fn advance_one(
    op: &MonotoneOperator,
    x: &mut [f64],
    drift: &[f64],
    noise: Option<&[f64]>,
    dt: f64,
    dk: &mut [f64],
    step: usize,
) -> Result<()> {
    for c in 0..x.len() {
        x[c] += drift[c] * dt;
    }
    if let Some(w) = noise {
        for c in 0..x.len() {
            x[c] += w[c];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step, detail: "non-finite predictor".into() });
    }
    dk.copy_from_slice(x);
    op.resolvent_in_place(dt, x);
    for c in 0..x.len() {
        dk[c] -= x[c];
    }
    Ok(())
}

/// Particle count below which the per-step update stays on one thread.
const PAR_THRESHOLD: usize = 256;
const PAR_CHUNK: usize = 64;

/// Per-particle scratch for the coefficient evaluations of one step.
struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    dw: Vec<f64>,
    noise: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Self { drift: vec![0.0; d], sigma: vec![0.0; d * m], dw: vec![0.0; m], noise: vec![0.0; d] }
    }
}

/// Advances all `n` particles by one step. `field(i, x_i, drift, sigma)` fills
/// the drift and, when `noisy`, the `d × m` diffusion; the increment then is
/// `scale · σ ΔW` with `ΔW` drawn from particle `i`'s stream.
#[allow(clippy::too_many_arguments)]
fn advance_all<F>(
    op: &MonotoneOperator,
    m: usize,
    dt: f64,
    step: usize,
    x: &mut [f64],
    dk: &mut [f64],
    noise: &mut [ParticleNoise],
    scale: f64,
    field: F,
) -> Result<()>
where
    F: Fn(usize, &[f64], &mut [f64], &mut [f64]) + Sync,
{
    let d = op.dim();
    let noisy = scale != 0.0 && !noise.is_empty();
    let run = |first: usize, xs: &mut [f64], dks: &mut [f64], ns: &mut [ParticleNoise]| -> Result<()> {
        let mut s = Scratch::new(d, m);
        for (j, (xi, dki)) in xs.chunks_mut(d).zip(dks.chunks_mut(d)).enumerate() {
            field(first + j, xi, &mut s.drift, &mut s.sigma);
            let w = if noisy {
                ns[j].fill_increment(dt, &mut s.dw);
                linalg::mat_vec(&s.sigma, d, m, &s.dw, &mut s.noise);
                for v in s.noise.iter_mut() {
                    *v *= scale;
                }
                Some(&s.noise[..])
            } else {
                None
            };
            advance_one(op, xi, &s.drift, w, dt, dki, step)?;
        }
        Ok(())
    };
    let n = x.len() / d;
    if n < PAR_THRESHOLD {
        return run(0, x, dk, noise);
    }
    let noise_chunks: Vec<&mut [ParticleNoise]> = if noisy {
        noise.chunks_mut(PAR_CHUNK).collect()
    } else {
        (0..n.div_ceil(PAR_CHUNK)).map(|_| Default::default()).collect()
    };
    x.par_chunks_mut(PAR_CHUNK * d)
        .zip(dk.par_chunks_mut(PAR_CHUNK * d))
        .zip(noise_chunks.into_par_iter())
        .enumerate()
        .try_for_each(|(c, ((xs, dks), ns))| run(c * PAR_CHUNK, xs, dks, ns))
}

fn check_start(op: &MonotoneOperator, xi: &[f64]) -> Result<()> {
    ensure_dim(op.dim(), xi.len())?;
    crate::error::ensure_finite("initial condition", xi)?;
    let gap = op.distance_to_domain(xi);
    if gap > 1e-9 {
        return Err(Error::invalid(format!("initial condition lies {gap:e} outside the closure of D(A)")));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise intensity epsilon must be >= 0, got {eps}")))
    }
}

fn check_dims(c: &CoefficientSet, op: &MonotoneOperator) -> Result<()> {
    ensure_dim(c.dim(), op.dim())
}

fn needs_features(c: &CoefficientSet) -> bool {
    c.has_interaction() || !c.diffusion_is_constant()
}

// ---- solvers --------------------------------------------------------------

/// The deterministic limit `dX⁰ ∈ −A(X⁰)dt + b(X⁰, δ_{X⁰})dt`.
pub fn solve_limit_ode(c: &CoefficientSet, op: &MonotoneOperator, xi: &[f64], grid: &TimeGrid) -> Result<SolvedPath> {
    check_dims(c, op)?;
    check_start(op, xi)?;
    let d = c.dim();
    let dt = grid.dt();
    let mut path = SolvedPath::with_start(*grid, xi);
    let mut x = xi.to_vec();
    let mut f = MeasureFeatures::zeros(d);
    let mut drift = vec![0.0; d];
    let mut dk = vec![0.0; d];
    for k in 0..grid.steps {
        c.features_dirac_into(&x, &mut f);
        c.drift_into(&x, &f, &mut drift);
        advance_one(op, &mut x, &drift, None, dt, &mut dk, k + 1)?;
        path.push(&x, &dk);
    }
    Ok(path)
}

/// Interacting particle approximation of the McKean–Vlasov equation,
/// streaming `(step, states, ΔK)` to `observer` at every grid point
/// (including `k = 0`, where `ΔK = 0`).
#[allow(clippy::too_many_arguments)]
pub fn solve_mv_streaming(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    xi: &[f64],
    epsilon: f64,
    particles: usize,
    grid: &TimeGrid,
    noise: NoisePlan,
    observer: &mut dyn FnMut(usize, &[f64], &[f64]),
) -> Result<()> {
    check_dims(c, op)?;
    check_start(op, xi)?;
    check_epsilon(epsilon)?;
    if particles == 0 {
        return Err(Error::invalid("an ensemble needs at least one particle"));
    }
    let (d, m) = (c.dim(), c.noise_dim());
    let dt = grid.dt();
    let scale = epsilon.sqrt();
    let mut x: Vec<f64> = xi.iter().copied().cycle().take(particles * d).collect();
    let mut dk = vec![0.0; particles * d];
    let mut streams = if scale > 0.0 && !c.diffusion_is_zero() { noise.particles(particles) } else { Vec::new() };
    let mut f = MeasureFeatures::zeros(d);
    let mut scratch = Vec::new();
    let features = needs_features(c);
    observer(0, &x, &dk);
    for k in 0..grid.steps {
        if features {
            c.features_uniform_into(&x, &mut scratch, &mut f);
        }
        let fr = &f;
        advance_all(op, m, dt, k + 1, &mut x, &mut dk, &mut streams, scale, |_, xi, drift, sigma| {
            c.drift_into(xi, fr, drift);
            if scale > 0.0 {
                c.sigma_into(xi, fr, sigma);
            }
        })?;
        observer(k + 1, &x, &dk);
    }
    Ok(())
}

/// [`solve_mv_streaming`] with every path recorded.
pub fn solve_mv_ensemble(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    xi: &[f64],
    epsilon: f64,
    particles: usize,
    grid: &TimeGrid,
    noise: NoisePlan,
) -> Result<Ensemble> {
    let mut ens = Ensemble::recorder(*grid, c.dim(), particles);
    solve_mv_streaming(c, op, xi, epsilon, particles, grid, noise, &mut |_, x, dk| ens.record(x, dk))?;
    Ok(ens)
}

/// Where a controlled equation takes its measure argument from.
#[derive(Debug, Clone, Copy)]
pub enum LawSource<'a> {
    /// `δ_{φ_k}` along a deterministic path (usually `X⁰`).
    Dirac(&'a SolvedPath),
    /// The empirical law of an uncontrolled ensemble.
    Ensemble(&'a Ensemble),
}

impl LawSource<'_> {
    fn grid(&self) -> &TimeGrid {
        match self {
            LawSource::Dirac(p) => p.grid(),
            LawSource::Ensemble(e) => e.grid(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            LawSource::Dirac(p) => p.dim(),
            LawSource::Ensemble(e) => e.dim(),
        }
    }

    fn features_into(&self, c: &CoefficientSet, k: usize, scratch: &mut Vec<f64>, out: &mut MeasureFeatures) {
        match self {
            LawSource::Dirac(p) => c.features_dirac_into(p.state(k), out),
            LawSource::Ensemble(e) => c.features_uniform_into(e.states(k), scratch, out),
        }
    }
}

/// A single controlled path: drift `b(x, μ_t) + σ(x, μ_t)u(t)`, noise
/// `√ε σ(x, μ_t) dW`, with `μ_t` read from `law` and never from the path.
#[allow(clippy::too_many_arguments)]
pub fn solve_controlled(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    xi: &[f64],
    epsilon: f64,
    control: &Control,
    law: LawSource<'_>,
    grid: &TimeGrid,
    noise: Option<ParticleNoise>,
) -> Result<SolvedPath> {
    check_dims(c, op)?;
    check_start(op, xi)?;
    check_epsilon(epsilon)?;
    grid.ensure_same(law.grid(), "law source")?;
    ensure_dim(c.dim(), law.dim())?;
    ensure_dim(c.noise_dim(), control.noise_dim())?;
    let per_piece = control.steps_per_piece(grid)?;
    if epsilon > 0.0 && noise.is_none() && !c.diffusion_is_zero() {
        return Err(Error::invalid("a noisy controlled solve needs a noise stream"));
    }
    let (d, m) = (c.dim(), c.noise_dim());
    let dt = grid.dt();
    let scale = epsilon.sqrt();
    let mut stream = noise;
    let mut path = SolvedPath::with_start(*grid, xi);
    let mut x = xi.to_vec();
    let mut f = MeasureFeatures::zeros(d);
    let mut scratch = Vec::new();
    let (mut drift, mut sigma, mut dw, mut w, mut dk) =
        (vec![0.0; d], vec![0.0; d * m], vec![0.0; m], vec![0.0; d], vec![0.0; d]);
    for k in 0..grid.steps {
        law.features_into(c, k, &mut scratch, &mut f);
        c.drift_into(&x, &f, &mut drift);
        c.sigma_into(&x, &f, &mut sigma);
        linalg::mat_vec_add(&sigma, d, m, control.piece(k / per_piece), &mut drift);
        let noisy = match stream.as_mut() {
            Some(s) if scale > 0.0 => {
                s.fill_increment(dt, &mut dw);
                linalg::mat_vec(&sigma, d, m, &dw, &mut w);
                w.iter_mut().for_each(|v| *v *= scale);
                true
            }
            _ => false,
        };
        advance_one(op, &mut x, &drift, noisy.then_some(&w[..]), dt, &mut dk, k + 1)?;
        path.push(&x, &dk);
    }
    Ok(path)
}

fn check_rescaled(c: &CoefficientSet, op: &MonotoneOperator, x0: &SolvedPath) -> Result<()> {
    check_dims(c, op)?;
    ensure_dim(c.dim(), x0.dim())?;
    if !op.origin_in_domain() {
        return Err(Error::invalid(
            "rescaled fluctuation processes start at 0, which must lie in the closure of D(A)",
        ));
    }
    Ok(())
}

/// States and compensator increments of two coupled ensembles at one step.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub first: &'a [f64],
    pub first_dk: &'a [f64],
    pub second: &'a [f64],
    pub second_dk: &'a [f64],
}

/// Fluctuation pair on a shared noise plan.
///
/// `Zε` uses the difference quotient `(b(X̂, μ̂) − b(X⁰, δ_{X⁰}))/√ε` with
/// `X̂ = X⁰ + √ε Zε` and `μ̂` the empirical law of `X̂`; `Z` uses the
/// linearization `∇b(X⁰)z + B diag ψ'(X⁰) E[z]`. Both are reflected through
/// `A` applied to the rescaled variable.
pub fn solve_clt_streaming(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    epsilon: f64,
    particles: usize,
    noise: NoisePlan,
    observer: &mut dyn FnMut(usize, PairView<'_>),
) -> Result<()> {
    solve_clt_streaming_with(c, op, x0, epsilon, particles, noise, noise, observer)
}

/// [`solve_clt_streaming`] with separate noise plans for `Zε` and `Z`;
/// passing two different plans gives the independently driven variant.
#[allow(clippy::too_many_arguments)]
pub fn solve_clt_streaming_with(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    epsilon: f64,
    particles: usize,
    noise_fluct: NoisePlan,
    noise_limit: NoisePlan,
    observer: &mut dyn FnMut(usize, PairView<'_>),
) -> Result<()> {
    check_rescaled(c, op, x0)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("fluctuation scaling needs epsilon > 0, got {epsilon}")));
    }
    if particles == 0 {
        return Err(Error::invalid("an ensemble needs at least one particle"));
    }
    let grid = *x0.grid();
    let (d, m) = (c.dim(), c.noise_dim());
    let dt = grid.dt();
    let se = epsilon.sqrt();
    let noisy = !c.diffusion_is_zero();
    let mut ze = vec![0.0; particles * d];
    let mut z = vec![0.0; particles * d];
    let (mut dke, mut dkz) = (vec![0.0; particles * d], vec![0.0; particles * d]);
    let (mut se_streams, mut z_streams) =
        if noisy { (noise_fluct.particles(particles), noise_limit.particles(particles)) } else { (Vec::new(), Vec::new()) };
    let mut hat = vec![0.0; particles * d];
    let mut f_hat = MeasureFeatures::zeros(d);
    let mut f0 = MeasureFeatures::zeros(d);
    let mut scratch = Vec::new();
    let (mut b0, mut sigma0, mut grad0, mut kern0, mut zbar, mut pairing) =
        (vec![0.0; d], vec![0.0; d * m], vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d], vec![0.0; d]);
    let features = needs_features(c);
    observer(0, PairView { first: &ze, first_dk: &dke, second: &z, second_dk: &dkz });
    for k in 0..grid.steps {
        let xk = x0.state(k);
        c.features_dirac_into(xk, &mut f0);
        c.drift_into(xk, &f0, &mut b0);
        c.sigma_into(xk, &f0, &mut sigma0);
        c.grad_b_into(xk, &mut grad0);

        for (h, zi) in hat.chunks_mut(d).zip(ze.chunks(d)) {
            for j in 0..d {
                h[j] = xk[j] + se * zi[j];
            }
        }
        if features {
            c.features_uniform_into(&hat, &mut scratch, &mut f_hat);
        }
        let (fh, b0r, hatr) = (&f_hat, &b0, &hat);
        advance_all(op, m, dt, k + 1, &mut ze, &mut dke, &mut se_streams, 1.0, |i, _, drift, sigma| {
            let xh = &hatr[i * d..(i + 1) * d];
            c.drift_into(xh, fh, drift);
            for j in 0..d {
                drift[j] = (drift[j] - b0r[j]) / se;
            }
            c.sigma_into(xh, fh, sigma);
        })?;

        if c.has_interaction() {
            c.lions_kernel_into(xk, &mut kern0);
            linalg::mean_rows(&z, d, &mut zbar);
            linalg::mat_vec(&kern0, d, d, &zbar, &mut pairing);
        }
        let (g, p, s0) = (&grad0, &pairing, &sigma0);
        advance_all(op, m, dt, k + 1, &mut z, &mut dkz, &mut z_streams, 1.0, |_, zi, drift, sigma| {
            linalg::mat_vec(g, d, d, zi, drift);
            for j in 0..d {
                drift[j] += p[j];
            }
            sigma.copy_from_slice(s0);
        })?;
        observer(k + 1, PairView { first: &ze, first_dk: &dke, second: &z, second_dk: &dkz });
    }
    Ok(())
}

/// [`solve_clt_streaming`] with both ensembles recorded: `(Zε, Z)`.
pub fn solve_clt_pair(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    epsilon: f64,
    particles: usize,
    noise: NoisePlan,
) -> Result<(Ensemble, Ensemble)> {
    let grid = *x0.grid();
    let mut a = Ensemble::recorder(grid, c.dim(), particles);
    let mut b = Ensemble::recorder(grid, c.dim(), particles);
    solve_clt_streaming(c, op, x0, epsilon, particles, noise, &mut |_, v| {
        a.record(v.first, v.first_dk);
        b.record(v.second, v.second_dk);
    })?;
    Ok((a, b))
}

/// Moderate-deviation pair on a shared noise plan, with `a = a(ε)`.
///
/// `Ȳ` uses the empirical law of `X̄ = X⁰ + aȲ`; `Ỹ` freezes the measure at
/// `δ_{X⁰}`. Both have drift `(b(X⁰ + a y, ·) − b(X⁰, δ_{X⁰}))/a` and noise
/// factor `√ε / a`.
#[allow(clippy::too_many_arguments)]
pub fn solve_mdp_streaming(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    epsilon: f64,
    a: f64,
    particles: usize,
    noise: NoisePlan,
    observer: &mut dyn FnMut(usize, PairView<'_>),
) -> Result<()> {
    check_rescaled(c, op, x0)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("moderate deviations need epsilon > 0, got {epsilon}")));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("the scaling a(epsilon) must lie in (0, 1), got {a}")));
    }
    if particles == 0 {
        return Err(Error::invalid("an ensemble needs at least one particle"));
    }
    let grid = *x0.grid();
    let (d, m) = (c.dim(), c.noise_dim());
    let dt = grid.dt();
    let scale = epsilon.sqrt() / a;
    let noisy = !c.diffusion_is_zero();
    let mut ybar = vec![0.0; particles * d];
    let mut ytil = vec![0.0; particles * d];
    let (mut dkb, mut dkt) = (vec![0.0; particles * d], vec![0.0; particles * d]);
    let (mut sb, mut st) =
        if noisy { (noise.particles(particles), noise.particles(particles)) } else { (Vec::new(), Vec::new()) };
    let mut xbar = vec![0.0; particles * d];
    let mut xtil = vec![0.0; particles * d];
    let mut f_bar = MeasureFeatures::zeros(d);
    let mut f0 = MeasureFeatures::zeros(d);
    let mut scratch = Vec::new();
    let mut b0 = vec![0.0; d];
    let features = needs_features(c);
    observer(0, PairView { first: &ybar, first_dk: &dkb, second: &ytil, second_dk: &dkt });
    for k in 0..grid.steps {
        let xk = x0.state(k);
        c.features_dirac_into(xk, &mut f0);
        c.drift_into(xk, &f0, &mut b0);

        for (h, yi) in xbar.chunks_mut(d).zip(ybar.chunks(d)) {
            for j in 0..d {
                h[j] = xk[j] + a * yi[j];
            }
        }
        for (h, yi) in xtil.chunks_mut(d).zip(ytil.chunks(d)) {
            for j in 0..d {
                h[j] = xk[j] + a * yi[j];
            }
        }
        if features {
            c.features_uniform_into(&xbar, &mut scratch, &mut f_bar);
        }
        let (fb, f0r, b0r, xbr) = (&f_bar, &f0, &b0, &xbar);
        advance_all(op, m, dt, k + 1, &mut ybar, &mut dkb, &mut sb, scale, |i, _, drift, sigma| {
            let xb = &xbr[i * d..(i + 1) * d];
            c.drift_into(xb, fb, drift);
            for j in 0..d {
                drift[j] = (drift[j] - b0r[j]) / a;
            }
            c.sigma_into(xb, fb, sigma);
        })?;
        let xtr = &xtil;
        advance_all(op, m, dt, k + 1, &mut ytil, &mut dkt, &mut st, scale, |i, _, drift, sigma| {
            let xt = &xtr[i * d..(i + 1) * d];
            c.drift_into(xt, f0r, drift);
            for j in 0..d {
                drift[j] = (drift[j] - b0r[j]) / a;
            }
            c.sigma_into(xt, f0r, sigma);
        })?;
        observer(k + 1, PairView { first: &ybar, first_dk: &dkb, second: &ytil, second_dk: &dkt });
    }
    Ok(())
}

/// [`solve_mdp_streaming`] with both ensembles recorded: `(Ȳ, Ỹ)`.
pub fn solve_mdp_pair(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    epsilon: f64,
    a: f64,
    particles: usize,
    noise: NoisePlan,
) -> Result<(Ensemble, Ensemble)> {
    let grid = *x0.grid();
    let mut ebar = Ensemble::recorder(grid, c.dim(), particles);
    let mut etil = Ensemble::recorder(grid, c.dim(), particles);
    solve_mdp_streaming(c, op, x0, epsilon, a, particles, noise, &mut |_, v| {
        ebar.record(v.first, v.first_dk);
        etil.record(v.second, v.second_dk);
    })?;
    Ok((ebar, etil))
}

/// Which deterministic skeleton to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkeletonMode {
    /// `dy ∈ −A(y)dt + b(y, δ_{X⁰})dt + σ(y, δ_{X⁰})h dt`, `y_0 = ξ`.
    Ldp,
    /// `dy ∈ −A(y)dt + ∇b(X⁰, δ_{X⁰})y dt + σ(X⁰, δ_{X⁰})h dt`, `y_0 = 0`.
    Mdp,
}

/// Controlled skeleton along the limit path `x0`, on `x0`'s grid.
pub fn solve_skeleton(
    c: &CoefficientSet,
    op: &MonotoneOperator,
    x0: &SolvedPath,
    h: &Control,
    mode: SkeletonMode,
) -> Result<SolvedPath> {
    check_dims(c, op)?;
    ensure_dim(c.dim(), x0.dim())?;
    ensure_dim(c.noise_dim(), h.noise_dim())?;
    let grid = *x0.grid();
    let per_piece = h.steps_per_piece(&grid)?;
    let (d, m) = (c.dim(), c.noise_dim());
    let dt = grid.dt();
    let start = match mode {
        SkeletonMode::Ldp => x0.state(0).to_vec(),
        SkeletonMode::Mdp => {
            if !op.origin_in_domain() {
                return Err(Error::invalid("the moderate-deviation skeleton starts at 0, outside the closure of D(A)"));
            }
            vec![0.0; d]
        }
    };
    let mut path = SolvedPath::with_start(grid, &start);
    let mut y = start;
    let mut f0 = MeasureFeatures::zeros(d);
    let (mut drift, mut sigma, mut grad, mut dk) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; d * d], vec![0.0; d]);
    for k in 0..grid.steps {
        let xk = x0.state(k);
        c.features_dirac_into(xk, &mut f0);
        match mode {
            SkeletonMode::Ldp => {
                c.drift_into(&y, &f0, &mut drift);
                c.sigma_into(&y, &f0, &mut sigma);
            }
            SkeletonMode::Mdp => {
                c.grad_b_into(xk, &mut grad);
                linalg::mat_vec(&grad, d, d, &y, &mut drift);
                c.sigma_into(xk, &f0, &mut sigma);
            }
        }
        linalg::mat_vec_add(&sigma, d, m, h.piece(k / per_piece), &mut drift);
        advance_one(op, &mut y, &drift, None, dt, &mut dk, k + 1)?;
        path.push(&y, &dk);
    }
    Ok(path)
}

// ---- compensator diagnostics -------------------------------------------

/// Default slack `c = 10·(1 + L₁ + L₃′)` for compensator checks.
pub fn default_slack(c: &CoefficientSet) -> f64 {
    let k = c.constants();
    10.0 * (1.0 + k.l1 + k.l3_prime)
}

/// Most negative value of `⟨X_k − x, ΔK_k − yΔt⟩ + c·Δt·(1 + |X_k|)` over
/// all steps and graph pairs; nonnegative means the discrete monotonicity
/// check passes.
pub fn compensator_margin(path: &SolvedPath, pairs: &[GraphSample], slack: f64) -> f64 {
    let dt = path.grid().dt();
    let d = path.dim();
    let mut worst = f64::INFINITY;
    let mut diff = vec![0.0; d];
    for k in 1..path.len() {
        let xk = path.state(k);
        let dk = path.compensator_increment(k);
        let allowance = slack * dt * (1.0 + linalg::norm(xk));
        for g in pairs {
            for j in 0..d {
                diff[j] = dk[j] - g.y[j] * dt;
            }
            let s: f64 = (0..d).map(|j| (xk[j] - g.x[j]) * diff[j]).sum();
            worst = worst.min(s + allowance);
        }
    }
    worst
}

/// `Σ_k ⟨X_k − X′_k, ΔK_k − ΔK′_k⟩` for two paths on the same grid.
pub fn cross_monotonicity(a: &SolvedPath, b: &SolvedPath) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "second path")?;
    ensure_dim(a.dim(), b.dim())?;
    let d = a.dim();
    let terms: Vec<f64> = (1..a.len())
        .map(|k| {
            let (xa, xb) = (a.state(k), b.state(k));
            let (ka, kb) = (a.compensator_increment(k), b.compensator_increment(k));
            (0..d).map(|j| (xa[j] - xb[j]) * (ka[j] - kb[j])).sum()
        })
        .collect();
    Ok(linalg::pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, CoefficientSpec, PresetParams};
    use crate::noise::probe_rng;

    fn coeffs(f: impl FnOnce(&mut CoefficientSpec)) -> CoefficientSet {
        let mut s = CoefficientSpec::zeros("t", 1, 1);
        f(&mut s);
        CoefficientSet::new(s).unwrap()
    }

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn step_examples() {
        let z = MonotoneOperator::zero(1);
        let (x, k) = step_reflected(&z, &[1.0], &[-1.0], &[0.0], 0.1).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
        assert_eq!(k, vec![0.0]);

        let half = MonotoneOperator::nonnegative_orthant(1);
        let (x, k) = step_reflected(&half, &[0.05], &[-1.0], &[0.0], 0.1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((k[0] + 0.05).abs() < 1e-15);

        let ball = MonotoneOperator::normal_cone_ball(vec![0.0, 0.0], 1.0).unwrap();
        let (x, k) = step_reflected(&ball, &[0.99, 0.0], &[1.0, 0.0], &[0.0, 0.0], 0.1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1] == 0.0);
        assert!((k[0] - 0.09).abs() < 1e-14 && k[1] == 0.0);

        let err = step_reflected(&z, &[1.0], &[f64::INFINITY], &[0.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn limit_ode_examples() {
        let g = grid(1.0, 1000);
        let still = solve_limit_ode(&coeffs(|_| {}), &MonotoneOperator::zero(1), &[0.7], &g).unwrap();
        assert!(still.states().iter().all(|v| *v == 0.7));

        let decay = coeffs(|s| s.drift_linear = vec![-1.0]);
        let p = solve_limit_ode(&decay, &MonotoneOperator::zero(1), &[1.0], &g).unwrap();
        assert!((p.terminal()[0] - (-1f64).exp()).abs() <= 2.0 * g.dt());

        let push = coeffs(|s| s.drift_offset = vec![1.0]);
        let neg = MonotoneOperator::normal_cone_box(vec![f64::NEG_INFINITY], vec![0.0]).unwrap();
        let p = solve_limit_ode(&push, &neg, &[0.0], &g).unwrap();
        assert!(p.states().iter().all(|v| *v == 0.0));
        assert!((p.variation().last().unwrap() - 1.0).abs() < 1e-9);
        assert!(p.variation().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn start_outside_domain_rejected() {
        let c = coeffs(|_| {});
        let op = MonotoneOperator::nonnegative_orthant(1);
        assert!(solve_limit_ode(&c, &op, &[-0.5], &grid(1.0, 10)).is_err());
    }

    #[test]
    fn deterministic_single_particle_matches_limit_bitwise() {
        for name in ["linear-reflected", "tanh-smooth", "clt-quadratic"] {
            let p = preset(name, &PresetParams::default()).unwrap();
            let g = grid(1.0, 500);
            let lim = solve_limit_ode(&p.coefficients, &p.operator, &p.xi, &g).unwrap();
            let ens =
                solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 0.0, 1, &g, NoisePlan::new(1, 0)).unwrap();
            assert_eq!(ens.particle(0).states(), lim.states(), "{name}");
            assert_eq!(ens.particle(0).variation(), lim.variation(), "{name}");
        }
    }

    #[test]
    fn brownian_ensemble_variance() {
        let c = coeffs(|s| s.sigma_const = vec![1.0]);
        let g = grid(1.0, 100);
        let n = 4000;
        let ens = solve_mv_ensemble(&c, &MonotoneOperator::zero(1), &[0.0], 1.0, n, &g, NoisePlan::new(3, 0)).unwrap();
        let xt = ens.states(100);
        let mean = xt.iter().sum::<f64>() / n as f64;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of the sample variance of N(0,1): 2/(n-1).
        let se = (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn ensemble_is_independent_of_parallel_chunking() {
        let p = preset("tanh-smooth", &PresetParams { dim: Some(2), ..Default::default() }).unwrap();
        let g = grid(0.5, 50);
        let big = solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 0.1, 300, &g, NoisePlan::new(9, 2)).unwrap();
        let again = solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 0.1, 300, &g, NoisePlan::new(9, 2)).unwrap();
        assert_eq!(big, again);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool
            .install(|| solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 0.1, 300, &g, NoisePlan::new(9, 2)))
            .unwrap();
        assert_eq!(big, threaded);
    }

    #[test]
    fn ensemble_stays_in_domain_and_compensator_is_monotone() {
        let p = preset("tanh-smooth", &PresetParams { dim: Some(2), ..Default::default() }).unwrap();
        let g = grid(1.0, 200);
        let ens = solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 1.0, 20, &g, NoisePlan::new(4, 0)).unwrap();
        let pairs = p.operator.graph_sample(&mut probe_rng(4, 1), 50);
        let slack = default_slack(&p.coefficients);
        for i in 0..ens.particles() {
            let path = ens.particle(i);
            for k in 0..path.len() {
                assert!(p.operator.distance_to_domain(path.state(k)) <= 1e-9);
            }
            assert!(compensator_margin(&path, &pairs, slack) >= 0.0);
        }
        let (a, b) = (ens.particle(0), ens.particle(1));
        let bound = slack * g.dt() * g.horizon() * (1.0 + a.sup_norm().max(b.sup_norm())).powi(2);
        assert!(cross_monotonicity(&a, &b).unwrap() >= -bound);
    }

    #[test]
    fn interior_steps_leave_compensator_exactly_zero() {
        let p = preset("linear-reflected", &PresetParams::default()).unwrap();
        let g = grid(1.0, 1000);
        let ens = solve_mv_ensemble(&p.coefficients, &p.operator, &p.xi, 0.5, 50, &g, NoisePlan::new(5, 0)).unwrap();
        let mut checked = 0;
        for i in 0..ens.particles() {
            let path = ens.particle(i);
            for k in 1..path.len() {
                // Predictor stays inside when the new state is well inside.
                if p.operator.interior_margin(path.state(k)) > 0.0 {
                    assert_eq!(path.compensator_increment(k), &[0.0]);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn controlled_examples() {
        let g = grid(1.0, 100);
        let integ = coeffs(|s| s.sigma_const = vec![1.0]);
        let zero = MonotoneOperator::zero(1);
        let lim = solve_limit_ode(&integ, &zero, &[0.25], &g).unwrap();
        let u = Control::constant(g, 1, &[0.5]).unwrap();
        let p = solve_controlled(&integ, &zero, &[0.25], 0.0, &u, LawSource::Dirac(&lim), &g, None).unwrap();
        assert!((p.terminal()[0] - 0.75).abs() < 1e-12);

        let pr = preset("linear-reflected", &PresetParams::default()).unwrap();
        let lim = solve_limit_ode(&pr.coefficients, &pr.operator, &pr.xi, &g).unwrap();
        let u0 = Control::zeros(g, 1);
        let p = solve_controlled(&pr.coefficients, &pr.operator, &pr.xi, 0.0, &u0, LawSource::Dirac(&lim), &g, None)
            .unwrap();
        assert_eq!(p.states(), lim.states());

        let bad = Control::zeros(grid(1.0, 7), 1);
        assert!(matches!(
            solve_controlled(&pr.coefficients, &pr.operator, &pr.xi, 0.0, &bad, LawSource::Dirac(&lim), &g, None),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn controlled_law_comes_from_the_source() {
        let pr = preset("linear-reflected", &PresetParams::default()).unwrap();
        let g = grid(1.0, 100);
        let ens = solve_mv_ensemble(&pr.coefficients, &pr.operator, &pr.xi, 0.2, 64, &g, NoisePlan::new(2, 0)).unwrap();
        let u = Control::constant(g, 1, &[1.0]).unwrap();
        let a = solve_controlled(&pr.coefficients, &pr.operator, &pr.xi, 0.0, &u, LawSource::Ensemble(&ens), &g, None)
            .unwrap();
        // Hand-rolled Euler with the ensemble mean as the interaction term.
        let mut x = 1.0f64;
        for k in 0..100 {
            let mean = ens.states(k).iter().sum::<f64>() / 64.0;
            x = (x + (-x + 0.5 * mean + 0.4) * g.dt()).max(0.0);
        }
        assert!((a.terminal()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn clt_examples() {
        let g = grid(1.0, 200);
        let lin = coeffs(|s| {
            s.drift_linear = vec![-1.0];
            s.sigma_const = vec![0.5];
        });
        let zero = MonotoneOperator::zero(1);
        let x0 = solve_limit_ode(&lin, &zero, &[1.0], &g).unwrap();
        let (ze, z) = solve_clt_pair(&lin, &zero, &x0, 0.01, 2000, NoisePlan::new(6, 0)).unwrap();
        // Lyapunov: v' = -2v + σ², v(T) = σ²(1 - e^{-2T})/2.
        let v = 0.25 * (1.0 - (-2.0f64).exp()) / 2.0;
        let zt = z.states(200);
        let m2: Vec<f64> = zt.iter().map(|v| v * v).collect();
        let est = m2.iter().sum::<f64>() / 2000.0;
        let sd = (m2.iter().map(|q| (q - est).powi(2)).sum::<f64>() / 1999.0).sqrt() / 2000f64.sqrt();
        assert!((est - v).abs() < 3.0 * sd + 2.0 * g.dt(), "{est} vs {v}");
        let gap = ze.sup_dist(&z).unwrap().into_iter().fold(0.0, f64::max);
        assert!(gap < 1e-9, "{gap}");

        let quiet = coeffs(|s| s.drift_linear = vec![-1.0]);
        let x0 = solve_limit_ode(&quiet, &zero, &[1.0], &g).unwrap();
        let (ze, z) = solve_clt_pair(&quiet, &zero, &x0, 0.01, 4, NoisePlan::new(6, 0)).unwrap();
        assert!(ze.x.iter().chain(&z.x).all(|v| *v == 0.0));
    }

    #[test]
    fn clt_requires_positive_epsilon_and_origin() {
        let g = grid(1.0, 10);
        let c = coeffs(|_| {});
        let shifted = MonotoneOperator::normal_cone_box(vec![1.0], vec![2.0]).unwrap();
        let x0 = solve_limit_ode(&c, &shifted, &[1.5], &g).unwrap();
        assert!(solve_clt_pair(&c, &shifted, &x0, 0.1, 2, NoisePlan::new(0, 0)).is_err());
        let zero = MonotoneOperator::zero(1);
        let x0 = solve_limit_ode(&c, &zero, &[0.0], &g).unwrap();
        assert!(solve_clt_pair(&c, &zero, &x0, 0.0, 2, NoisePlan::new(0, 0)).is_err());
    }

    #[test]
    fn mdp_without_interaction_is_bitwise_identical() {
        let p = preset("linear-reflected", &PresetParams { interaction: Some(0.0), ..Default::default() }).unwrap();
        let g = grid(1.0, 200);
        let x0 = solve_limit_ode(&p.coefficients, &p.operator, &p.xi, &g).unwrap();
        let eps: f64 = 1e-2;
        let (yb, yt) = solve_mdp_pair(&p.coefficients, &p.operator, &x0, eps, eps.powf(0.25), 100, NoisePlan::new(8, 0))
            .unwrap();
        assert_eq!(yb, yt);
        assert!(solve_mdp_pair(&p.coefficients, &p.operator, &x0, eps, 1.0, 1, NoisePlan::new(8, 0)).is_err());
    }

    #[test]
    fn skeleton_examples() {
        let g = grid(1.0, 100);
        let p = preset("linear-reflected", &PresetParams::default()).unwrap();
        let x0 = solve_limit_ode(&p.coefficients, &p.operator, &p.xi, &g).unwrap();
        let y = solve_skeleton(&p.coefficients, &p.operator, &x0, &Control::zeros(g, 1), SkeletonMode::Mdp).unwrap();
        assert!(y.states().iter().all(|v| *v == 0.0));
        // LDP skeleton with zero control is the limit path itself.
        let y = solve_skeleton(&p.coefficients, &p.operator, &x0, &Control::zeros(g, 1), SkeletonMode::Ldp).unwrap();
        assert_eq!(y.states(), x0.states());

        let integ = coeffs(|s| s.sigma_const = vec![1.0]);
        let zero = MonotoneOperator::zero(1);
        let x0 = solve_limit_ode(&integ, &zero, &[0.0], &g).unwrap();
        let h = Control::constant(g, 1, &[0.3]).unwrap();
        let y = solve_skeleton(&integ, &zero, &x0, &h, SkeletonMode::Mdp).unwrap();
        assert!((y.terminal()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mdp_skeleton_is_linear_without_reflection() {
        let mut rng = probe_rng(7, 0);
        let p = preset("tanh-smooth", &PresetParams { dim: Some(2), ..Default::default() }).unwrap();
        let zero = MonotoneOperator::zero(2);
        let g = grid(1.0, 200);
        let x0 = solve_limit_ode(&p.coefficients, &zero, &p.xi, &g).unwrap();
        let coarse = grid(1.0, 20);
        let h1 = Control::random(coarse, 2, &mut rng);
        let h2 = Control::random(coarse, 2, &mut rng);
        let sum = h1.add(&h2).unwrap();
        let y1 = solve_skeleton(&p.coefficients, &zero, &x0, &h1, SkeletonMode::Mdp).unwrap();
        let y2 = solve_skeleton(&p.coefficients, &zero, &x0, &h2, SkeletonMode::Mdp).unwrap();
        let ys = solve_skeleton(&p.coefficients, &zero, &x0, &sum, SkeletonMode::Mdp).unwrap();
        for k in 0..ys.len() {
            for j in 0..2 {
                assert!((ys.state(k)[j] - y1.state(k)[j] - y2.state(k)[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn summary_rows() {
        let c = coeffs(|s| s.sigma_const = vec![1.0]);
        let g = grid(1.0, 10);
        let ens = solve_mv_ensemble(&c, &MonotoneOperator::zero(1), &[2.0], 0.0, 3, &g, NoisePlan::new(0, 0)).unwrap();
        let rows = ens.summary();
        assert_eq!(rows.len(), 11);
        assert!(rows.iter().all(|r| r.mean == vec![2.0] && r.second_moment == 4.0 && r.sup_stat == 2.0));
    }
}
