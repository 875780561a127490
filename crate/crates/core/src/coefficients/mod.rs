//! Parametric drift/diffusion families with analytic derivatives.
//!
//! Every coefficient set has the form
//!
//! ```text
//! b(x, μ) = M x + c + G f(x) + B m_ψ(μ),          m_ψ(μ) = ∫ ψ dμ
//! σ(x, μ) = Σ₀ + diag(s(x)) Σ₁ + diag(m_χ(μ)) Σ₂
//! ```
//!
//! with `f, ψ, s, χ` applied componentwise. Because the measure enters only
//! through the linear functionals `m_ψ`, `m_χ`, the space gradient and the
//! Lions derivative are available in closed form:
//!
//! ```text
//! ∇b(x, μ)          = M + G diag(f'(x))
//! D^L b(x, μ)(y)    = B diag(ψ'(y))
//! ```

mod presets;
mod validate;

pub use presets::{preset, preset_names, PresetParams, PresetSpec};
pub use validate::{validate_hypotheses, HypothesisCheck, HypothesisReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::measures::EmpiricalMeasure;

/// Scalar maps applied componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    Identity,
    Sin,
    Tanh,
    Square,
}

impl Nonlinearity {
    #[inline]
    pub fn value(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Identity => t,
            Nonlinearity::Sin => t.sin(),
            Nonlinearity::Tanh => t.tanh(),
            Nonlinearity::Square => t * t,
        }
    }

    #[inline]
    pub fn deriv(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Sin => t.cos(),
            Nonlinearity::Tanh => {
                let c = t.cosh();
                1.0 / (c * c)
            }
            Nonlinearity::Square => 2.0 * t,
        }
    }
}

/// Declared constants of the standing hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l3_prime: f64,
    pub l4: f64,
}

/// Plain description of a coefficient family; matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub name: String,
    pub dim: usize,
    pub noise_dim: usize,
    /// `M`, `d x d`.
    pub drift_linear: Vec<f64>,
    /// `c`, length `d`.
    pub drift_offset: Vec<f64>,
    /// `G`, `d x d`.
    pub drift_gain: Vec<f64>,
    pub drift_nonlinearity: Nonlinearity,
    /// `B`, `d x d`.
    pub interaction: Vec<f64>,
    pub psi: Nonlinearity,
    /// `Σ₀`, `d x m`.
    pub sigma_const: Vec<f64>,
    /// `Σ₁`, `d x m`.
    pub sigma_state: Vec<f64>,
    pub state_nonlinearity: Nonlinearity,
    /// `Σ₂`, `d x m`.
    pub sigma_measure: Vec<f64>,
    pub chi: Nonlinearity,
    pub constants: HypothesisConstants,
    /// Radius of the ball probed by [`validate_hypotheses`].
    pub probe_radius: f64,
}

impl CoefficientSpec {
    /// All-zero family of the given shape with identity nonlinearities.
    pub fn zeros(name: &str, dim: usize, noise_dim: usize) -> Self {
        Self {
            name: name.to_string(),
            dim,
            noise_dim,
            drift_linear: vec![0.0; dim * dim],
            drift_offset: vec![0.0; dim],
            drift_gain: vec![0.0; dim * dim],
            drift_nonlinearity: Nonlinearity::Identity,
            interaction: vec![0.0; dim * dim],
            psi: Nonlinearity::Identity,
            sigma_const: vec![0.0; dim * noise_dim],
            sigma_state: vec![0.0; dim * noise_dim],
            state_nonlinearity: Nonlinearity::Identity,
            sigma_measure: vec![0.0; dim * noise_dim],
            chi: Nonlinearity::Identity,
            constants: HypothesisConstants { l1: 1.0, l2: 1.0, l3: 1.0, l3_prime: 1.0, l4: 0.0 },
            probe_radius: 3.0,
        }
    }
}

/// `s·I` as a row-major `rows x cols` matrix.
pub fn scaled_identity(rows: usize, cols: usize, s: f64) -> Vec<f64> {
    let mut m = vec![0.0; rows * cols];
    for i in 0..rows.min(cols) {
        m[i * cols + i] = s;
    }
    m
}

/// The measure functionals `m_ψ(μ)` and `m_χ(μ)` the coefficients need.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFeatures {
    pub psi_mean: Vec<f64>,
    pub chi_mean: Vec<f64>,
}

impl MeasureFeatures {
    pub fn zeros(dim: usize) -> Self {
        Self { psi_mean: vec![0.0; dim], chi_mean: vec![0.0; dim] }
    }
}

/// Validated, immutable coefficient family.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    spec: CoefficientSpec,
    has_gain: bool,
    has_interaction: bool,
    has_sigma_state: bool,
    has_sigma_measure: bool,
}

fn nonzero(m: &[f64]) -> bool {
    m.iter().any(|v| *v != 0.0)
}

impl CoefficientSet {
    pub fn new(spec: CoefficientSpec) -> Result<Self> {
        let (d, m) = (spec.dim, spec.noise_dim);
        if d == 0 || m == 0 {
            return Err(Error::invalid("coefficient dimensions must be positive"));
        }
        let shapes: [(&str, &[f64], usize); 7] = [
            ("drift_linear", &spec.drift_linear, d * d),
            ("drift_offset", &spec.drift_offset, d),
            ("drift_gain", &spec.drift_gain, d * d),
            ("interaction", &spec.interaction, d * d),
            ("sigma_const", &spec.sigma_const, d * m),
            ("sigma_state", &spec.sigma_state, d * m),
            ("sigma_measure", &spec.sigma_measure, d * m),
        ];
        for (name, v, len) in shapes {
            if v.len() != len {
                return Err(Error::invalid(format!("{name} has {} entries, expected {len}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        let c = spec.constants;
        for (name, v) in [("L1", c.l1), ("L2", c.l2), ("L3", c.l3), ("L3'", c.l3_prime), ("L4", c.l4)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("hypothesis constant {name} must be >= 0")));
            }
        }
        if !(spec.probe_radius.is_finite() && spec.probe_radius > 0.0) {
            return Err(Error::invalid("probe radius must be positive"));
        }
        Ok(Self {
            has_gain: nonzero(&spec.drift_gain),
            has_interaction: nonzero(&spec.interaction),
            has_sigma_state: nonzero(&spec.sigma_state),
            has_sigma_measure: nonzero(&spec.sigma_measure),
            spec,
        })
    }

    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.spec.noise_dim
    }

    pub fn constants(&self) -> HypothesisConstants {
        self.spec.constants
    }

    /// Whether `b` depends on the measure at all.
    pub fn has_interaction(&self) -> bool {
        self.has_interaction
    }

    /// Whether the drift is affine in `x` (`G = 0`), so that difference
    /// quotients of `b` in `x` equal `∇b` exactly.
    pub fn drift_is_affine_in_state(&self) -> bool {
        !self.has_gain
    }

    pub fn diffusion_is_constant(&self) -> bool {
        !self.has_sigma_state && !self.has_sigma_measure
    }

    pub fn diffusion_is_zero(&self) -> bool {
        self.diffusion_is_constant() && !nonzero(&self.spec.sigma_const)
    }

    // ---- measure functionals -------------------------------------------

    pub fn features(&self, mu: &EmpiricalMeasure) -> Result<MeasureFeatures> {
        ensure_dim(self.dim(), mu.dim())?;
        let d = self.dim();
        let mut f = MeasureFeatures::zeros(d);
        for (i, w) in mu.weights().iter().enumerate() {
            for (c, y) in mu.point(i).iter().enumerate() {
                f.psi_mean[c] += w * self.spec.psi.value(*y);
                f.chi_mean[c] += w * self.spec.chi.value(*y);
            }
        }
        Ok(f)
    }

    /// Features of `δ_x`.
    pub fn features_dirac_into(&self, x: &[f64], out: &mut MeasureFeatures) {
        for c in 0..self.dim() {
            out.psi_mean[c] = self.spec.psi.value(x[c]);
            out.chi_mean[c] = self.spec.chi.value(x[c]);
        }
    }

    /// Features of the equal-weight measure on flat `points`, reduced with a
    /// fixed pairwise order. `scratch` is resized as needed.
    pub fn features_uniform_into(&self, points: &[f64], scratch: &mut Vec<f64>, out: &mut MeasureFeatures) {
        let d = self.dim();
        scratch.clear();
        scratch.extend(points.iter().map(|y| self.spec.psi.value(*y)));
        linalg::mean_rows(scratch, d, &mut out.psi_mean);
        if self.has_sigma_measure {
            scratch.clear();
            scratch.extend(points.iter().map(|y| self.spec.chi.value(*y)));
            linalg::mean_rows(scratch, d, &mut out.chi_mean);
        }
    }

    // ---- hot-path evaluation ---------------------------------------------

    #[inline]
    pub fn drift_into(&self, x: &[f64], f: &MeasureFeatures, out: &mut [f64]) {
        let d = self.dim();
        let s = &self.spec;
        for i in 0..d {
            out[i] = linalg::dot(&s.drift_linear[i * d..(i + 1) * d], x) + s.drift_offset[i];
        }
        if self.has_gain {
            for i in 0..d {
                let row = &s.drift_gain[i * d..(i + 1) * d];
                out[i] += row.iter().zip(x).map(|(g, v)| g * s.drift_nonlinearity.value(*v)).sum::<f64>();
            }
        }
        if self.has_interaction {
            linalg::mat_vec_add(&s.interaction, d, d, &f.psi_mean, out);
        }
    }

    /// `σ(x, μ)` into a row-major `d x m` buffer.
    #[inline]
    pub fn sigma_into(&self, x: &[f64], f: &MeasureFeatures, out: &mut [f64]) {
        let (d, m) = (self.dim(), self.noise_dim());
        let s = &self.spec;
        out.copy_from_slice(&s.sigma_const);
        if self.has_sigma_state {
            for i in 0..d {
                let v = s.state_nonlinearity.value(x[i]);
                for j in 0..m {
                    out[i * m + j] += v * s.sigma_state[i * m + j];
                }
            }
        }
        if self.has_sigma_measure {
            for i in 0..d {
                let v = f.chi_mean[i];
                for j in 0..m {
                    out[i * m + j] += v * s.sigma_measure[i * m + j];
                }
            }
        }
    }

    /// `∇b(x, ·)` into a row-major `d x d` buffer.
    #[inline]
    pub fn grad_b_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let s = &self.spec;
        out.copy_from_slice(&s.drift_linear);
        if self.has_gain {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += s.drift_gain[i * d + j] * s.drift_nonlinearity.deriv(x[j]);
                }
            }
        }
    }

    /// `D^L b(x, μ)(y) = B diag(ψ'(y))` into a row-major `d x d` buffer.
    #[inline]
    pub fn lions_kernel_into(&self, y: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.spec.interaction[i * d + j] * self.spec.psi.deriv(y[j]);
            }
        }
    }

    // ---- checked convenience API -----------------------------------------

    pub fn eval_b(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), x.len())?;
        let f = self.features(mu)?;
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, &f, &mut out);
        Ok(out)
    }

    pub fn eval_sigma(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<DMatrix<f64>> {
        ensure_dim(self.dim(), x.len())?;
        let f = self.features(mu)?;
        let mut out = vec![0.0; self.dim() * self.noise_dim()];
        self.sigma_into(x, &f, &mut out);
        Ok(DMatrix::from_row_slice(self.dim(), self.noise_dim(), &out))
    }

    /// Jacobian of `x ↦ b(x, μ)`; independent of `μ` for this family.
    pub fn grad_b(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<DMatrix<f64>> {
        ensure_dim(self.dim(), x.len())?;
        ensure_dim(self.dim(), mu.dim())?;
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.grad_b_into(x, &mut out);
        Ok(DMatrix::from_row_slice(d, d, &out))
    }

    /// The kernel `y ↦ D^L b(x, μ)(y)`.
    pub fn lions_derivative_b(&self) -> LionsKernel<'_> {
        LionsKernel { coeffs: self }
    }

    /// `(1/n) Σ_j D^L b(x, μ̂)(X_j) Z_j` for flat ensembles of equal length.
    pub fn mean_field_pairing(&self, x: &[f64], ens_x: &[f64], ens_z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        ensure_dim(d, x.len())?;
        if ens_x.is_empty() || !ens_x.len().is_multiple_of(d) || !ens_z.len().is_multiple_of(d) {
            return Err(Error::invalid("ensembles must hold a positive number of d-vectors"));
        }
        if ens_x.len() != ens_z.len() {
            return Err(Error::invalid(format!(
                "ensemble lengths differ: {} vs {}",
                ens_x.len() / d,
                ens_z.len() / d
            )));
        }
        let n = ens_x.len() / d;
        let mut terms = vec![0.0; n * d];
        let mut kernel = vec![0.0; d * d];
        for j in 0..n {
            self.lions_kernel_into(&ens_x[j * d..(j + 1) * d], &mut kernel);
            linalg::mat_vec(&kernel, d, d, &ens_z[j * d..(j + 1) * d], &mut terms[j * d..(j + 1) * d]);
        }
        let mut out = vec![0.0; d];
        linalg::mean_rows(&terms, d, &mut out);
        Ok(out)
    }

    /// `‖D^L b(x, μ)‖_{T_{μ,2}} = (∫ ‖B diag ψ'(y)‖² μ(dy))^{1/2}`.
    pub fn lions_norm(&self, mu: &EmpiricalMeasure) -> f64 {
        let d = self.dim();
        let mut k = vec![0.0; d * d];
        (0..mu.len())
            .map(|i| {
                self.lions_kernel_into(mu.point(i), &mut k);
                mu.weights()[i] * linalg::norm_sq(&k)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// `y ↦ B diag(ψ'(y))`.
#[derive(Debug, Clone, Copy)]
pub struct LionsKernel<'a> {
    coeffs: &'a CoefficientSet,
}

impl LionsKernel<'_> {
    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let d = self.coeffs.dim();
        let mut out = vec![0.0; d * d];
        self.coeffs.lions_kernel_into(y, &mut out);
        DMatrix::from_row_slice(d, d, &out)
    }

    pub fn is_zero(&self) -> bool {
        !self.coeffs.has_interaction
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::probe_rng;
    use rand::Rng;

    fn family(dim: usize) -> CoefficientSpec {
        CoefficientSpec::zeros("test", dim, dim)
    }

    fn set(spec: CoefficientSpec) -> CoefficientSet {
        CoefficientSet::new(spec).unwrap()
    }

    fn random_family<R: Rng>(rng: &mut R, d: usize) -> CoefficientSet {
        let mut s = family(d);
        let mut fill = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        fill(&mut s.drift_linear);
        fill(&mut s.drift_offset);
        fill(&mut s.drift_gain);
        fill(&mut s.interaction);
        fill(&mut s.sigma_const);
        fill(&mut s.sigma_state);
        fill(&mut s.sigma_measure);
        s.drift_nonlinearity = Nonlinearity::Sin;
        s.psi = Nonlinearity::Tanh;
        s.state_nonlinearity = Nonlinearity::Tanh;
        s.chi = Nonlinearity::Sin;
        set(s)
    }

    #[test]
    fn eval_b_examples() {
        let mut s = family(1);
        s.drift_linear = vec![-1.0];
        let c = set(s.clone());
        let any = EmpiricalMeasure::dirac(&[7.0]).unwrap();
        assert_eq!(c.eval_b(&[2.0], &any).unwrap(), vec![-2.0]);

        let mut s2 = family(1);
        s2.interaction = vec![1.0];
        let c2 = set(s2);
        assert_eq!(c2.eval_b(&[-4.0], &EmpiricalMeasure::dirac(&[3.0]).unwrap()).unwrap(), vec![3.0]);

        s.interaction = vec![0.5];
        let c3 = set(s);
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 2.0]).unwrap();
        assert_eq!(c3.eval_b(&[1.0], &mu).unwrap(), vec![-0.5]);
    }

    #[test]
    fn eval_sigma_examples() {
        let mut s = family(2);
        s.sigma_const = scaled_identity(2, 2, 0.4);
        let c = set(s);
        let mu = EmpiricalMeasure::dirac(&[1.0, 2.0]).unwrap();
        assert_eq!(c.eval_sigma(&[5.0, -1.0], &mu).unwrap(), DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.4]));

        let mut s = family(1);
        s.sigma_const = vec![0.7];
        s.sigma_state = vec![1.0];
        s.state_nonlinearity = Nonlinearity::Tanh;
        let c = set(s);
        assert_eq!(c.eval_sigma(&[0.0], &mu_1d(3.0)).unwrap()[(0, 0)], 0.7);

        let mut s = family(1);
        s.sigma_const = vec![1.0];
        s.sigma_measure = vec![0.1];
        let c = set(s);
        assert!((c.eval_sigma(&[9.0], &mu_1d(2.0)).unwrap()[(0, 0)] - 1.2).abs() < 1e-15);
    }

    fn mu_1d(x: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(&[x]).unwrap()
    }

    #[test]
    fn grad_b_examples() {
        let mut s = family(2);
        s.drift_linear = scaled_identity(2, 2, -1.0);
        s.interaction = vec![0.3, 0.1, -2.0, 0.5];
        let c = set(s);
        let mu = EmpiricalMeasure::uniform(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.grad_b(&[0.2, 0.3], &mu).unwrap(), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));

        let mut s = family(1);
        s.drift_gain = vec![1.0];
        s.drift_nonlinearity = Nonlinearity::Sin;
        let c = set(s);
        assert_eq!(c.grad_b(&[0.0], &mu_1d(0.0)).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn grad_b_matches_central_differences() {
        let mut rng = probe_rng(20, 0);
        let h = 1e-5;
        for _ in 0..50 {
            let d = rng.random_range(1..=3);
            let c = random_family(&mut rng, d);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu = EmpiricalMeasure::uniform(d, (0..3 * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let g = c.grad_b(&x, &mu).unwrap();
            for j in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (bp, bm) = (c.eval_b(&xp, &mu).unwrap(), c.eval_b(&xm, &mu).unwrap());
                for i in 0..d {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    let scale = g[(i, j)].abs().max(1.0);
                    assert!((fd - g[(i, j)]).abs() <= 1e-6 * scale, "{fd} vs {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn lions_derivative_examples() {
        let c = set(family(1));
        assert!(c.lions_derivative_b().is_zero());
        assert_eq!(c.lions_derivative_b().eval(&[4.0])[(0, 0)], 0.0);

        let mut s = family(1);
        s.interaction = vec![1.0];
        let c = set(s.clone());
        for y in [-3.0, 0.0, 8.0] {
            assert_eq!(c.lions_derivative_b().eval(&[y])[(0, 0)], 1.0);
        }

        s.psi = Nonlinearity::Square;
        let c = set(s);
        assert_eq!(c.lions_derivative_b().eval(&[3.0])[(0, 0)], 6.0);
    }

    /// Perturbs an atomless-sample stand-in X by εY and differences m_ψ;
    /// Richardson extrapolation removes the O(ε) bias of the quotient.
    #[test]
    fn lions_kernel_matches_perturbation_limit() {
        let mut s = family(1);
        s.interaction = vec![1.0];
        s.psi = Nonlinearity::Square;
        let c = set(s);
        // Concentrate X near 3 so the pairing isolates the kernel value at 3.
        let n = 64;
        let xs: Vec<f64> = (0..n).map(|i| 3.0 + 1e-9 * i as f64).collect();
        let ys = vec![1.0; n];
        let f = |eps: f64| {
            let pts: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x + eps * y).collect();
            let mu = EmpiricalMeasure::uniform(1, pts).unwrap();
            c.features(&mu).unwrap().psi_mean[0]
        };
        let base = f(0.0);
        let q = |h: f64| (f(h) - base) / h;
        let h = 1e-3;
        let richardson = 2.0 * q(h / 2.0) - q(h);
        assert!((richardson - 6.0).abs() < 1e-6, "{richardson}");
    }

    #[test]
    fn mean_field_pairing_examples() {
        let c = set(family(1));
        assert_eq!(c.mean_field_pairing(&[0.0], &[1.0, 2.0], &[5.0, 6.0]).unwrap(), vec![0.0]);

        let mut s = family(1);
        s.interaction = vec![1.0];
        let c = set(s.clone());
        assert_eq!(c.mean_field_pairing(&[0.3], &[1.0, -4.0, 9.0], &[2.5, 2.5, 2.5]).unwrap(), vec![2.5]);

        s.psi = Nonlinearity::Square;
        let c = set(s);
        assert_eq!(c.mean_field_pairing(&[0.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![3.0]);
        assert!(c.mean_field_pairing(&[0.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn uniform_features_match_weighted_features() {
        let mut rng = probe_rng(21, 0);
        let c = random_family(&mut rng, 2);
        let pts: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu = EmpiricalMeasure::uniform(2, pts.clone()).unwrap();
        let a = c.features(&mu).unwrap();
        let mut b = MeasureFeatures::zeros(2);
        c.features_uniform_into(&pts, &mut Vec::new(), &mut b);
        for i in 0..2 {
            assert!((a.psi_mean[i] - b.psi_mean[i]).abs() < 1e-14);
            assert!((a.chi_mean[i] - b.chi_mean[i]).abs() < 1e-14);
        }
        // A one-point uniform measure reproduces the Dirac features bitwise.
        let mut one = MeasureFeatures::zeros(2);
        let mut dirac = MeasureFeatures::zeros(2);
        c.features_uniform_into(&pts[..2], &mut Vec::new(), &mut one);
        c.features_dirac_into(&pts[..2], &mut dirac);
        assert_eq!(one, dirac);
    }

    #[test]
    fn rejects_malformed_specs() {
        let mut s = family(2);
        s.interaction = vec![1.0];
        assert!(CoefficientSet::new(s).is_err());
        let mut s = family(1);
        s.constants.l2 = -1.0;
        assert!(CoefficientSet::new(s).is_err());
        let mut s = family(1);
        s.sigma_const = vec![f64::NAN];
        assert!(CoefficientSet::new(s).is_err());
    }
}
