//! Randomized probes of the standing hypotheses against declared constants.
//!
//! Each inequality is turned into an "implied constant" per probe (the
//! smallest constant that would make that probe satisfy it), and the worst
//! one is compared with the declared value. Matrix norms are Frobenius.

use rand::Rng;
use serde::Serialize;

use super::{CoefficientSet, MeasureFeatures};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{self, EmpiricalMeasure};

const PASS_SLACK: f64 = 1e-6;
const TINY: f64 = 1e-12;
const MAX_ATOMS: usize = 16;

/// Worst probe of one inequality.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub hypothesis: String,
    pub declared: f64,
    pub observed: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub preset: String,
    pub checks: Vec<HypothesisCheck>,
    pub probes: usize,
    pub probe_radius: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn check(&self, hypothesis: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.hypothesis == hypothesis)
    }

    pub fn worst_ratio(&self) -> f64 {
        self.checks.iter().map(|c| c.ratio).fold(0.0, f64::max)
    }
}

fn ratio(observed: f64, declared: f64) -> f64 {
    if declared > 0.0 {
        observed / declared
    } else if observed <= TINY {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Tracker {
    names: Vec<(&'static str, f64)>,
    worst: Vec<f64>,
}

impl Tracker {
    fn new(names: Vec<(&'static str, f64)>) -> Self {
        let worst = vec![0.0; names.len()];
        Self { names, worst }
    }

    fn see(&mut self, idx: usize, observed: f64) {
        let o = if observed.is_nan() { f64::INFINITY } else { observed };
        if o > self.worst[idx] {
            self.worst[idx] = o;
        }
    }

    fn finish(self) -> Vec<HypothesisCheck> {
        self.names
            .into_iter()
            .zip(self.worst)
            .map(|((name, declared), observed)| {
                let r = ratio(observed, declared);
                HypothesisCheck { hypothesis: name.to_string(), declared, observed, ratio: r, pass: r <= 1.0 + PASS_SLACK }
            })
            .collect()
    }
}

fn in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    // Gaussian direction, radius uniform in [0, ρ] with a share exactly on the sphere.
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let n = linalg::norm(&dir).max(TINY);
    let r = if rng.random_bool(0.2) { radius } else { radius * rng.random::<f64>() };
    dir.iter().map(|v| v / n * r).collect()
}

/// Moves `p` by a small random step and pulls it back into the ball.
fn nudge<R: Rng + ?Sized>(rng: &mut R, p: &[f64], radius: f64, scale: f64) -> Vec<f64> {
    let mut q: Vec<f64> = p.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
    let n = linalg::norm(&q);
    if n > radius {
        q.iter_mut().for_each(|v| *v *= radius / n);
    }
    q
}

fn atoms<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize, radius: f64) -> Vec<f64> {
    (0..k).flat_map(|_| in_ball(rng, d, radius)).collect()
}

/// Probes (H₁), (H₂), (H₃), (H₃′) and (H₄) on `n ≥ 100` random configurations
/// with all points inside the coefficient set's probe ball.
pub fn validate_hypotheses<R: Rng + ?Sized>(c: &CoefficientSet, n: usize, rng: &mut R) -> Result<HypothesisReport> {
    if n < 100 {
        return Err(Error::invalid(format!("hypothesis validation needs at least 100 probes, got {n}")));
    }
    let (d, m) = (c.dim(), c.noise_dim());
    let rho = c.spec().probe_radius;
    let k = c.constants();
    let mut t = Tracker::new(vec![
        ("H1 drift growth", k.l1),
        ("H1 diffusion bound", k.l1),
        ("H2 drift one-sided Lipschitz", k.l2),
        ("H2 diffusion Lipschitz", k.l2),
        ("H3 gradient bound", k.l3),
        ("H3 Lions derivative bound", k.l3),
        ("H3 drift at origin", k.l3),
        ("H3 diffusion Lipschitz", k.l3),
        ("H3 diffusion growth", k.l3),
        ("H3' gradient bound", k.l3_prime),
        ("H3' Lions derivative bound", k.l3_prime),
        ("H3' drift at origin", k.l3_prime),
        ("H3' diffusion Lipschitz", k.l3_prime),
        ("H3' diffusion bound", k.l3_prime),
        ("H4 gradient Lipschitz", k.l4),
        ("H4 Lions pairing Lipschitz", k.l4),
    ]);

    let origin = vec![0.0; d];
    let b0 = c.eval_b(&origin, &EmpiricalMeasure::dirac(&origin)?)?;
    t.see(6, linalg::norm(&b0));
    t.see(11, linalg::norm(&b0));

    let mut bx = (vec![0.0; d], vec![0.0; d]);
    let mut sx = (vec![0.0; d * m], vec![0.0; d * m]);
    let mut gx = (vec![0.0; d * d], vec![0.0; d * d]);
    let mut kern = vec![0.0; d * d];
    let mut pair = (vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];

    for probe in 0..n {
        let near = probe % 2 == 0;
        let scale = if near { 10f64.powf(-rng.random_range(1.0..4.0)) * rho } else { 0.0 };
        let x1 = in_ball(rng, d, rho);
        let x2 = if near { nudge(rng, &x1, rho, scale) } else { in_ball(rng, d, rho) };
        let atoms_n = rng.random_range(1..=MAX_ATOMS);
        let p1 = atoms(rng, d, atoms_n, rho);
        let p2: Vec<f64> = if near {
            p1.chunks(d).flat_map(|p| nudge(rng, p, rho, scale)).collect()
        } else {
            atoms(rng, d, atoms_n, rho)
        };
        let mu1 = EmpiricalMeasure::uniform(d, p1.clone())?;
        let mu2 = EmpiricalMeasure::uniform(d, p2.clone())?;
        let w = measures::w2(&mu1, &mu2)?;
        let (f1, f2): (MeasureFeatures, MeasureFeatures) = (c.features(&mu1)?, c.features(&mu2)?);

        c.drift_into(&x1, &f1, &mut bx.0);
        c.drift_into(&x2, &f2, &mut bx.1);
        c.sigma_into(&x1, &f1, &mut sx.0);
        c.sigma_into(&x2, &f2, &mut sx.1);
        c.grad_b_into(&x1, &mut gx.0);
        c.grad_b_into(&x2, &mut gx.1);

        let growth = 1.0 + linalg::norm(&x1) + mu1.second_moment().sqrt();
        let sig_norm = linalg::frobenius(&sx.0);
        t.see(0, linalg::norm(&bx.0) / growth);
        t.see(1, sig_norm);

        let dx = linalg::dist(&x1, &x2);
        let sq_den = dx * dx + w * w;
        let lin_den = dx + w;
        let dsig = linalg::dist(&sx.0, &sx.1);
        if sq_den > TINY {
            let db: Vec<f64> = bx.0.iter().zip(&bx.1).map(|(a, b)| a - b).collect();
            let dxv: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            t.see(2, 2.0 * linalg::dot(&dxv, &db) / sq_den);
            t.see(3, dsig * dsig / sq_den);
        }
        if lin_den > TINY {
            t.see(7, dsig / lin_den);
            t.see(12, dsig / lin_den);
            t.see(14, linalg::dist(&gx.0, &gx.1) / lin_den);
        }

        let gn = linalg::frobenius(&gx.0);
        let ln = c.lions_norm(&mu1);
        t.see(4, gn);
        t.see(5, ln);
        t.see(8, sig_norm / growth);
        t.see(9, gn);
        t.see(10, ln);
        t.see(13, sig_norm);

        // (H₄) pairing: X ~ atoms of μ₁, Y coupled to X through the atom index.
        let phi: Vec<f64> = (0..atoms_n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        pair.0.iter_mut().for_each(|v| *v = 0.0);
        pair.1.iter_mut().for_each(|v| *v = 0.0);
        let mut coupling = 0.0;
        for j in 0..atoms_n {
            let (xj, yj, pj) = (&p1[j * d..(j + 1) * d], &p2[j * d..(j + 1) * d], &phi[j * d..(j + 1) * d]);
            c.lions_kernel_into(xj, &mut kern);
            linalg::mat_vec(&kern, d, d, pj, &mut tmp);
            pair.0.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b / atoms_n as f64);
            c.lions_kernel_into(yj, &mut kern);
            linalg::mat_vec(&kern, d, d, pj, &mut tmp);
            pair.1.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b / atoms_n as f64);
            coupling += linalg::dist_sq(xj, yj) / atoms_n as f64;
        }
        let phi_norm = (linalg::norm_sq(&phi) / atoms_n as f64).sqrt();
        let den = (dx + w + coupling.sqrt()) * phi_norm;
        if den > TINY {
            t.see(15, linalg::dist(&pair.0, &pair.1) / den);
        }
    }

    let checks = t.finish();
    let pass = checks.iter().all(|c| c.pass);
    Ok(HypothesisReport {
        preset: c.name().to_string(),
        checks,
        probes: n,
        probe_radius: rho,
        pass,
        notes: vec![
            format!(
                "probes: states and up to {MAX_ATOMS} measure atoms drawn in the ball of radius {rho}; half the probes are near pairs"
            ),
            "matrix norms are Frobenius; the check is randomized evidence, not a proof".to_string(),
            "H4 pairing certified only for the linear-functional family b = beta(x) + B m_psi(mu), with X and Y coupled atom-by-atom"
                .to_string(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, preset_names, scaled_identity, CoefficientSpec, Nonlinearity, PresetParams};
    use crate::noise::probe_rng;

    #[test]
    fn linear_constant_noise_passes() {
        let mut s = CoefficientSpec::zeros("lin", 1, 1);
        s.drift_linear = vec![-1.0];
        s.sigma_const = vec![0.4];
        s.constants = super::super::HypothesisConstants { l1: 1.4, l2: 2.0, l3: 1.0, l3_prime: 1.0, l4: 0.0 };
        let c = CoefficientSet::new(s).unwrap();
        let r = validate_hypotheses(&c, 200, &mut probe_rng(1, 0)).unwrap();
        assert!(r.pass, "{r:#?}");
        assert_eq!(r.probes, 200);
    }

    #[test]
    fn constant_gradient_needs_no_l4() {
        let mut s = CoefficientSpec::zeros("mean", 1, 1);
        s.drift_linear = vec![-1.0];
        s.interaction = vec![0.5];
        s.sigma_const = vec![0.4];
        s.constants = super::super::HypothesisConstants { l1: 1.5, l2: 0.5, l3: 1.0, l3_prime: 1.0, l4: 0.0 };
        let c = CoefficientSet::new(s).unwrap();
        let r = validate_hypotheses(&c, 300, &mut probe_rng(2, 0)).unwrap();
        assert!(r.check("H4 gradient Lipschitz").unwrap().pass);
        assert!(r.check("H4 Lions pairing Lipschitz").unwrap().pass);
        assert!(r.pass, "{r:#?}");
    }

    #[test]
    fn unbounded_diffusion_fails_bounded_declaration() {
        let mut s = CoefficientSpec::zeros("sigx", 1, 1);
        s.sigma_state = vec![1.0];
        s.state_nonlinearity = Nonlinearity::Identity;
        s.constants.l1 = 0.5;
        let c = CoefficientSet::new(s.clone()).unwrap();
        let r = validate_hypotheses(&c, 200, &mut probe_rng(3, 0)).unwrap();
        assert!(!r.pass);
        let small = r.check("H1 diffusion bound").unwrap().ratio;
        assert!(small > 1.0);
        // The violation grows with the probe region.
        s.probe_radius = 300.0;
        let c = CoefficientSet::new(s).unwrap();
        let big = validate_hypotheses(&c, 200, &mut probe_rng(3, 0)).unwrap();
        assert!(big.check("H1 diffusion bound").unwrap().ratio > 50.0 * small);
    }

    #[test]
    fn shipped_presets_pass_on_a_thousand_probes() {
        for name in preset_names() {
            for dim in [1, 2] {
                let p = preset(name, &PresetParams { dim: Some(dim), ..Default::default() }).unwrap();
                let r = validate_hypotheses(&p.coefficients, 1000, &mut probe_rng(4, dim as u64)).unwrap();
                assert!(r.pass, "{name} d={dim}: {:#?}", r.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn understated_constant_is_caught() {
        let mut s = CoefficientSpec::zeros("tight", 2, 2);
        s.drift_linear = scaled_identity(2, 2, 1.0);
        s.sigma_const = scaled_identity(2, 2, 0.1);
        s.constants = super::super::HypothesisConstants { l1: 5.0, l2: 1.0, l3: 5.0, l3_prime: 5.0, l4: 0.0 };
        let c = CoefficientSet::new(s).unwrap();
        let r = validate_hypotheses(&c, 200, &mut probe_rng(5, 0)).unwrap();
        // Implied constant 2|Δx|² / (|Δx|² + W²) lies in (0, 2].
        let h2 = r.check("H2 drift one-sided Lipschitz").unwrap();
        assert!(h2.observed > 1.0 && h2.observed <= 2.0 + 1e-12);
        assert!(!h2.pass);
    }

    #[test]
    fn too_few_probes_rejected() {
        let c = preset("free-brownian", &PresetParams::default()).unwrap().coefficients;
        assert!(validate_hypotheses(&c, 10, &mut probe_rng(0, 0)).is_err());
    }
}
