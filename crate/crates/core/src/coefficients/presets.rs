//! Shipped coefficient families with analytically derived constants.

use serde::{Deserialize, Serialize};

use super::{scaled_identity, CoefficientSet, CoefficientSpec, HypothesisConstants, Nonlinearity};
use crate::error::{Error, Result};
use crate::monotone::MonotoneOperator;

/// Sup of `|d/dt sech²(t)|`, the Lipschitz constant of `tanh'`.
const TANH_DERIV_LIP: f64 = 0.769_800_358_919_501; // 4 / (3√3)

/// Numeric knobs shared by every preset; unset fields take the preset's
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetParams {
    pub dim: Option<usize>,
    /// Restoring rate `a` in `β(x) = -a x + ...`.
    pub drift: Option<f64>,
    /// Scalar `B` (the interaction matrix is `B·I`).
    pub interaction: Option<f64>,
    /// Constant diffusion level `Σ₀ = s·I`.
    pub sigma: Option<f64>,
    /// Gain `g` on the bounded drift nonlinearity.
    pub gain: Option<f64>,
    /// State-dependent diffusion level `Σ₁ = s₁·I`.
    pub sigma_state: Option<f64>,
    pub probe_radius: Option<f64>,
}

/// Everything a preset fixes: coefficients, operator, initial condition.
#[derive(Debug, Clone)]
pub struct PresetSpec {
    pub coefficients: CoefficientSet,
    pub operator: MonotoneOperator,
    pub xi: Vec<f64>,
}

const NAMES: [&str; 5] = ["linear-reflected", "tanh-smooth", "clt-quadratic", "free-brownian", "ou-linear"];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

fn nonneg(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("preset parameter {name} must be finite and >= 0, got {v}")))
    }
}

/// Builds a named preset.
pub fn preset(name: &str, params: &PresetParams) -> Result<PresetSpec> {
    let d = params.dim.unwrap_or(1);
    if d == 0 {
        return Err(Error::Config("preset parameter dim must be positive".into()));
    }
    let rd = (d as f64).sqrt();
    let rho = params.probe_radius.unwrap_or(3.0);
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Config("preset parameter probe_radius must be positive".into()));
    }
    let get = |field: &str, v: Option<f64>, default: f64| nonneg(field, v.unwrap_or(default));
    let signed = |field: &str, v: Option<f64>, default: f64| {
        let v = v.unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("preset parameter {field} must be finite")))
        }
    };
    let mut spec = CoefficientSpec::zeros(name, d, d);
    spec.probe_radius = rho;

    let (operator, xi) = match name {
        "linear-reflected" | "ou-linear" => {
            let reflected = name == "linear-reflected";
            let a = get("drift", params.drift, 1.0)?;
            let b = signed("interaction", params.interaction, if reflected { 0.5 } else { 0.0 })?;
            let s = get("sigma", params.sigma, if reflected { 0.4 } else { 1.0 })?;
            spec.drift_linear = scaled_identity(d, d, -a);
            spec.interaction = scaled_identity(d, d, b);
            spec.sigma_const = scaled_identity(d, d, s);
            let l3 = 1f64.max(a * rd).max(b.abs() * rd).max(s * rd);
            spec.constants = HypothesisConstants {
                l1: (a + b.abs()).max(s * rd).max(0.1),
                l2: b.abs().max(0.1),
                l3,
                l3_prime: l3,
                l4: 0.0,
            };
            if reflected {
                (MonotoneOperator::nonnegative_orthant(d), vec![1.0; d])
            } else {
                (MonotoneOperator::zero(d), vec![0.0; d])
            }
        }
        "tanh-smooth" => {
            let a = get("drift", params.drift, 1.0)?;
            let g = get("gain", params.gain, 0.5)?;
            let b = signed("interaction", params.interaction, 0.3)?;
            let s0 = get("sigma", params.sigma, 0.3)?;
            let s1 = get("sigma_state", params.sigma_state, 0.1)?;
            spec.drift_linear = scaled_identity(d, d, -a);
            spec.drift_gain = scaled_identity(d, d, g);
            spec.drift_nonlinearity = Nonlinearity::Tanh;
            spec.interaction = scaled_identity(d, d, b);
            spec.psi = Nonlinearity::Tanh;
            spec.sigma_const = scaled_identity(d, d, s0);
            spec.sigma_state = scaled_identity(d, d, s1);
            spec.state_nonlinearity = Nonlinearity::Tanh;
            let l3 = 1f64
                .max(rd * a.max((g - a).abs()))
                .max(b.abs() * rd)
                .max(s1)
                .max((s0 + s1) * rd);
            spec.constants = HypothesisConstants {
                l1: a.max((g + b.abs()) * rd).max((s0 + s1) * rd).max(0.1),
                l2: (2.0 * g - 2.0 * a + b.abs()).max(b.abs()).max(s1 * s1).max(0.1),
                l3,
                l3_prime: l3,
                l4: TANH_DERIV_LIP * g.max(b.abs()),
            };
            (MonotoneOperator::normal_cone_ball(vec![0.0; d], 2.0)?, vec![0.5; d])
        }
        "clt-quadratic" => {
            let a = get("drift", params.drift, 1.0)?;
            let b = signed("interaction", params.interaction, 0.25)?;
            let s = get("sigma", params.sigma, 0.4)?;
            spec.drift_linear = scaled_identity(d, d, -a);
            spec.interaction = scaled_identity(d, d, b);
            spec.psi = Nonlinearity::Square;
            spec.sigma_const = scaled_identity(d, d, s);
            let l3 = 1f64.max(a * rd).max(2.0 * b.abs() * rho).max(s * rd);
            spec.constants = HypothesisConstants {
                l1: (a + b.abs() * rho).max(s * rd).max(0.1),
                l2: (2.0 * rho * b.abs()).max(0.1),
                l3,
                l3_prime: l3,
                l4: 2.0 * b.abs(),
            };
            (MonotoneOperator::nonnegative_orthant(d), vec![1.0; d])
        }
        "free-brownian" => {
            let s = get("sigma", params.sigma, 1.0)?;
            spec.sigma_const = scaled_identity(d, d, s);
            let l3 = 1f64.max(s * rd);
            spec.constants = HypothesisConstants {
                l1: (s * rd).max(0.1),
                l2: 0.1,
                l3,
                l3_prime: l3,
                l4: 0.0,
            };
            (MonotoneOperator::zero(d), vec![0.0; d])
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (known: {})",
                NAMES.join(", ")
            )))
        }
    };
    Ok(PresetSpec { coefficients: CoefficientSet::new(spec)?, operator, xi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::EmpiricalMeasure;

    #[test]
    fn every_name_builds() {
        for name in preset_names() {
            for dim in [1, 3] {
                let p = preset(name, &PresetParams { dim: Some(dim), ..Default::default() }).unwrap();
                assert_eq!(p.coefficients.dim(), dim);
                assert_eq!(p.xi.len(), dim);
                assert_eq!(p.operator.dim(), dim);
            }
        }
        assert!(preset("nope", &PresetParams::default()).is_err());
    }

    #[test]
    fn linear_reflected_matches_its_formula() {
        let p = preset("linear-reflected", &PresetParams::default()).unwrap();
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 2.0]).unwrap();
        assert_eq!(p.coefficients.eval_b(&[1.0], &mu).unwrap(), vec![-0.5]);
        assert_eq!(p.coefficients.eval_sigma(&[1.0], &mu).unwrap()[(0, 0)], 0.4);
        assert_eq!(p.xi, vec![1.0]);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = PresetParams { sigma: Some(-1.0), ..Default::default() };
        assert!(preset("linear-reflected", &bad).is_err());
        let bad = PresetParams { dim: Some(0), ..Default::default() };
        assert!(preset("tanh-smooth", &bad).is_err());
    }
}
