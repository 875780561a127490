//! Maximal monotone operators on `R^d` and their resolvents.
//!
//! The multivalued drift `-A(X) dt` is realized through the resolvent
//! `J_λ = (I + λA)^{-1}`: for normal cones of closed convex sets this is the
//! metric projection, for subdifferentials of convex functions the proximal
//! map. Every family here has a closed-form resolvent.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::linalg;

/// Convex potentials whose subdifferential is used as the operator.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexFunction {
    /// `φ(z) = w Σ |z_i|`.
    Abs { weight: f64 },
    /// `φ(z) = (w/2) |z|²`.
    Quadratic { weight: f64 },
    /// Indicator of the box `[lower, upper]`.
    IndicatorBox { lower: Vec<f64>, upper: Vec<f64> },
}

impl ConvexFunction {
    /// Evaluates `φ`, returning `+∞` outside the effective domain.
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            ConvexFunction::Abs { weight } => weight * z.iter().map(|v| v.abs()).sum::<f64>(),
            ConvexFunction::Quadratic { weight } => 0.5 * weight * linalg::norm_sq(z),
            ConvexFunction::IndicatorBox { lower, upper } => {
                let inside = z
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `A ≡ {0}`; the equation is an ordinary SDE.
    Zero,
    /// Normal cone of the box `[lower, upper]`; bounds may be infinite.
    NormalConeBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Normal cone of the closed ball `B(center, radius)`.
    NormalConeBall { center: Vec<f64>, radius: f64 },
    /// Subdifferential `∂φ` of a convex function.
    SubdiffConvex(ConvexFunction),
}

/// A maximal monotone operator together with its ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneOperator {
    kind: OperatorKind,
    dim: usize,
}

/// A point `(x, y)` of the graph, `y ∈ A(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn check_box(lower: &[f64], upper: &[f64], dim: usize) -> Result<()> {
    ensure_dim(dim, lower.len())?;
    ensure_dim(dim, upper.len())?;
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if lo.is_nan() || hi.is_nan() || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("box bound {i} is not admissible")));
        }
        if lo >= hi {
            return Err(Error::invalid(format!(
                "box has empty interior in coordinate {i}: lower {lo} >= upper {hi}"
            )));
        }
    }
    Ok(())
}

impl MonotoneOperator {
    pub fn new(kind: OperatorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("operator dimension must be positive"));
        }
        match &kind {
            OperatorKind::Zero => {}
            OperatorKind::NormalConeBox { lower, upper } => check_box(lower, upper, dim)?,
            OperatorKind::NormalConeBall { center, radius } => {
                ensure_dim(dim, center.len())?;
                ensure_finite("ball center", center)?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
                }
            }
            OperatorKind::SubdiffConvex(f) => match f {
                ConvexFunction::Abs { weight } | ConvexFunction::Quadratic { weight } => {
                    if !(weight.is_finite() && *weight >= 0.0) {
                        return Err(Error::invalid(format!("convex weight must be >= 0, got {weight}")));
                    }
                }
                ConvexFunction::IndicatorBox { lower, upper } => check_box(lower, upper, dim)?,
            },
        }
        Ok(Self { kind, dim })
    }

    pub fn zero(dim: usize) -> Self {
        Self { kind: OperatorKind::Zero, dim: dim.max(1) }
    }

    pub fn normal_cone_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dim = lower.len();
        Self::new(OperatorKind::NormalConeBox { lower, upper }, dim)
    }

    /// Normal cone of `[0, ∞)^dim`.
    pub fn nonnegative_orthant(dim: usize) -> Self {
        Self::normal_cone_box(vec![0.0; dim], vec![f64::INFINITY; dim])
            .expect("orthant has nonempty interior")
    }

    pub fn normal_cone_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = center.len();
        Self::new(OperatorKind::NormalConeBall { center, radius }, dim)
    }

    pub fn subdifferential(f: ConvexFunction, dim: usize) -> Result<Self> {
        Self::new(OperatorKind::SubdiffConvex(f), dim)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, OperatorKind::Zero)
    }

    /// `J_λ(x)`, checked.
    pub fn resolvent(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("resolvent parameter must be > 0, got {lambda}")));
        }
        ensure_dim(self.dim, x.len())?;
        ensure_finite("resolvent input", x)?;
        let mut out = x.to_vec();
        self.resolvent_in_place(lambda, &mut out);
        Ok(out)
    }

    /// `x <- J_λ(x)` without argument checks. Points the resolvent does not
    /// move are left bit-for-bit untouched.
    #[inline]
    pub fn resolvent_in_place(&self, lambda: f64, x: &mut [f64]) {
        match &self.kind {
            OperatorKind::Zero => {}
            OperatorKind::NormalConeBox { lower, upper }
            | OperatorKind::SubdiffConvex(ConvexFunction::IndicatorBox { lower, upper }) => {
                clamp_box(x, lower, upper)
            }
            OperatorKind::NormalConeBall { center, radius } => project_ball(x, center, *radius),
            OperatorKind::SubdiffConvex(ConvexFunction::Abs { weight }) => {
                let t = lambda * weight;
                for v in x.iter_mut() {
                    if v.abs() <= t {
                        *v = 0.0;
                    } else {
                        *v -= t.copysign(*v);
                    }
                }
            }
            OperatorKind::SubdiffConvex(ConvexFunction::Quadratic { weight }) => {
                let s = 1.0 + lambda * weight;
                for v in x.iter_mut() {
                    *v /= s;
                }
            }
        }
    }

    /// Yosida approximation `A_λ(x) = (x - J_λ x) / λ`.
    pub fn yosida(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        let j = self.resolvent(lambda, x)?;
        Ok(x.iter().zip(&j).map(|(a, b)| (a - b) / lambda).collect())
    }

    /// Nearest point of the closure of `D(A)`.
    pub fn domain_project(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, x.len())?;
        ensure_finite("domain projection input", x)?;
        let mut out = x.to_vec();
        self.domain_project_in_place(&mut out);
        Ok(out)
    }

    pub fn domain_project_in_place(&self, x: &mut [f64]) {
        match &self.kind {
            OperatorKind::NormalConeBox { lower, upper }
            | OperatorKind::SubdiffConvex(ConvexFunction::IndicatorBox { lower, upper }) => {
                clamp_box(x, lower, upper)
            }
            OperatorKind::NormalConeBall { center, radius } => project_ball(x, center, *radius),
            OperatorKind::Zero
            | OperatorKind::SubdiffConvex(ConvexFunction::Abs { .. })
            | OperatorKind::SubdiffConvex(ConvexFunction::Quadratic { .. }) => {}
        }
    }

    /// Euclidean distance from `x` to the closure of `D(A)`.
    pub fn distance_to_domain(&self, x: &[f64]) -> f64 {
        let mut p = x.to_vec();
        self.domain_project_in_place(&mut p);
        linalg::dist(x, &p)
    }

    /// Distance from `x` to the boundary of the constraint set when `x` is
    /// inside it; `+∞` for operators with full domain and no constraint,
    /// negative outside. Only meaningful for normal cones.
    pub fn interior_margin(&self, x: &[f64]) -> f64 {
        match &self.kind {
            OperatorKind::NormalConeBox { lower, upper }
            | OperatorKind::SubdiffConvex(ConvexFunction::IndicatorBox { lower, upper }) => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (lo, hi))| (v - lo).min(hi - v))
                .fold(f64::INFINITY, f64::min),
            OperatorKind::NormalConeBall { center, radius } => radius - linalg::dist(x, center),
            _ => f64::INFINITY,
        }
    }

    /// Whether `0` lies in the closure of `D(A)`.
    pub fn origin_in_domain(&self) -> bool {
        self.distance_to_domain(&vec![0.0; self.dim]) == 0.0
    }

    /// Graph membership test `y ∈ A(x)` up to `tol`.
    pub fn contains(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        if x.len() != self.dim || y.len() != self.dim {
            return false;
        }
        match &self.kind {
            OperatorKind::Zero => y.iter().all(|v| v.abs() <= tol),
            OperatorKind::NormalConeBox { lower, upper }
            | OperatorKind::SubdiffConvex(ConvexFunction::IndicatorBox { lower, upper }) => {
                x.iter().zip(y).zip(lower.iter().zip(upper)).all(|((xi, yi), (lo, hi))| {
                    if *xi < lo - tol || *xi > hi + tol {
                        return false;
                    }
                    let at_lo = (xi - lo).abs() <= tol;
                    let at_hi = (xi - hi).abs() <= tol;
                    match (at_lo, at_hi) {
                        (true, _) => *yi <= tol,
                        (_, true) => *yi >= -tol,
                        _ => yi.abs() <= tol,
                    }
                })
            }
            OperatorKind::NormalConeBall { center, radius } => {
                let r = linalg::dist(x, center);
                if r > radius + tol {
                    return false;
                }
                if r < radius - tol {
                    return y.iter().all(|v| v.abs() <= tol);
                }
                // y must be a nonnegative multiple of the outward normal.
                let n: Vec<f64> = x.iter().zip(center).map(|(a, c)| (a - c) / r).collect();
                let s = linalg::dot(y, &n);
                s >= -tol && y.iter().zip(&n).all(|(yi, ni)| (yi - s * ni).abs() <= tol)
            }
            OperatorKind::SubdiffConvex(ConvexFunction::Abs { weight }) => {
                x.iter().zip(y).all(|(xi, yi)| {
                    if xi.abs() <= tol {
                        yi.abs() <= weight + tol
                    } else {
                        (yi - weight * xi.signum()).abs() <= tol
                    }
                })
            }
            OperatorKind::SubdiffConvex(ConvexFunction::Quadratic { weight }) => {
                x.iter().zip(y).all(|(xi, yi)| (yi - weight * xi).abs() <= tol)
            }
        }
    }

    /// Draws `n` graph points. At non-smooth boundary points the normal cone
    /// is sampled as a random nonnegative combination of its generators.
    pub fn graph_sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<GraphSample> {
        (0..n).map(|_| self.graph_point(rng)).collect()
    }

    fn graph_point<R: Rng + ?Sized>(&self, rng: &mut R) -> GraphSample {
        let d = self.dim;
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        match &self.kind {
            OperatorKind::Zero => {
                for v in x.iter_mut() {
                    *v = 2.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            OperatorKind::NormalConeBox { lower, upper }
            | OperatorKind::SubdiffConvex(ConvexFunction::IndicatorBox { lower, upper }) => {
                for i in 0..d {
                    let (lo, hi) = (lower[i], upper[i]);
                    let pick: u8 = rng.random_range(0..3);
                    let weight: f64 = rng.random_range(0.0..2.0);
                    match pick {
                        0 if lo.is_finite() => {
                            x[i] = lo;
                            y[i] = -weight;
                        }
                        1 if hi.is_finite() => {
                            x[i] = hi;
                            y[i] = weight;
                        }
                        _ => {
                            x[i] = match (lo.is_finite(), hi.is_finite()) {
                                (true, true) => lo + (hi - lo) * rng.random_range(0.05..0.95),
                                (true, false) => lo + rng.random_range(0.05..3.0),
                                (false, true) => hi - rng.random_range(0.05..3.0),
                                (false, false) => 2.0 * rng.sample::<f64, _>(StandardNormal),
                            };
                        }
                    }
                }
            }
            OperatorKind::NormalConeBall { center, radius } => {
                let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let nrm = linalg::norm(&dir).max(f64::MIN_POSITIVE);
                dir.iter_mut().for_each(|v| *v /= nrm);
                if rng.random_bool(0.5) {
                    let r = radius * rng.random_range(0.0f64..0.95);
                    for i in 0..d {
                        x[i] = center[i] + r * dir[i];
                    }
                } else {
                    let s: f64 = rng.random_range(0.0..2.0);
                    for i in 0..d {
                        x[i] = center[i] + radius * dir[i];
                        y[i] = s * dir[i];
                    }
                }
            }
            OperatorKind::SubdiffConvex(ConvexFunction::Abs { weight }) => {
                for i in 0..d {
                    if rng.random_range(0..3) == 0 {
                        x[i] = 0.0;
                        y[i] = weight * rng.random_range(-1.0..=1.0);
                    } else {
                        x[i] = 2.0 * rng.sample::<f64, _>(StandardNormal);
                        y[i] = weight * x[i].signum();
                    }
                }
            }
            OperatorKind::SubdiffConvex(ConvexFunction::Quadratic { weight }) => {
                for i in 0..d {
                    x[i] = 2.0 * rng.sample::<f64, _>(StandardNormal);
                    y[i] = weight * x[i];
                }
            }
        }
        GraphSample { x, y }
    }
}

#[inline]
fn clamp_box(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        if *v < *lo {
            *v = *lo;
        } else if *v > *hi {
            *v = *hi;
        }
    }
}

#[inline]
fn project_ball(x: &mut [f64], center: &[f64], radius: f64) {
    let r = linalg::dist(x, center);
    // Points already projected may sit a rounding error outside the sphere;
    // leaving them untouched keeps the projection idempotent.
    if r > radius * (1.0 + 4.0 * f64::EPSILON) {
        let s = radius / r;
        for (v, c) in x.iter_mut().zip(center) {
            *v = c + s * (*v - c);
        }
    }
}
