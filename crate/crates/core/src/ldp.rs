//! Decay rate of LOLP in the battery size, by two independent routes.
//!
//! Large-deviations route: uniformize the background chain at rate `q` with
//! jump matrix `P`. The scaled cumulant generating function of the reversed
//! net flow accumulated over uniformized steps is
//! `Lambda(theta) = log rho(M(theta))`, where
//! `M_lm(theta) = P_lm * q / (q + theta * r_l)` and `rho` is the Perron root.
//! It is finite on `(-q / r_max, -q / r_min)` and infinite elsewhere. The
//! decay rate is the positive zero of `Lambda`.
//!
//! Eigenvalue route: the smallest positive eigenvalue of `R^-1 Q^T`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ctmc::{uniformize, NetGenModel, UniformizedChain};
use crate::error::{Error, Result};
use crate::fluid::{drift_matrix, EIGEN_RESIDUAL_TOL, IMAG_TOL};
use crate::linalg;

/// Relative width of the Collatz-Wielandt bracket at which power iteration stops.
pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 100_000;
/// Eigenvalues above this fraction of the spectral radius count as positive.
pub const POSITIVE_EIG_TOL: f64 = 1e-9;
/// Relative bracket width at which bisection for the decay rate stops.
pub const ROOT_TOL: f64 = 1e-12;

/// Evaluates `Lambda(theta)` for one model and uniformization rate.
#[derive(Debug, Clone)]
pub struct CgfEvaluator {
    chain: UniformizedChain,
    rates: Vec<f64>,
    domain: (f64, f64),
}

impl CgfEvaluator {
    /// Uses the default uniformization rate when `q_rate` is `None`.
    pub fn new(model: &NetGenModel, q_rate: Option<f64>) -> Result<Self> {
        let chain = uniformize(model.rate_matrix(), q_rate)?;
        let q = chain.q_rate;
        Ok(CgfEvaluator {
            domain: (-q / model.max_rate(), -q / model.min_rate()),
            rates: model.rates().to_vec(),
            chain,
        })
    }

    pub fn with_multiplier(model: &NetGenModel, multiplier: f64) -> Result<Self> {
        Self::new(model, Some(multiplier * model.rate_matrix().max_exit_rate()))
    }

    pub fn chain(&self) -> &UniformizedChain {
        &self.chain
    }

    pub fn q_rate(&self) -> f64 {
        self.chain.q_rate
    }

    /// Open interval on which `Lambda` is finite.
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        theta > self.domain.0 && theta < self.domain.1
    }

    /// The tilted matrix `M(theta)`.
    pub fn m_matrix(&self, theta: f64) -> DMatrix<f64> {
        let q = self.chain.q_rate;
        let mut m = self.chain.p_matrix.clone();
        for (l, mut row) in m.row_iter_mut().enumerate() {
            row *= q / (q + theta * self.rates[l]);
        }
        m
    }

    /// `Lambda(theta)`, with `f64::INFINITY` outside the domain.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        if theta == 0.0 {
            // M(0) = P is stochastic
            return Ok(0.0);
        }
        if !self.in_domain(theta) {
            return Ok(f64::INFINITY);
        }
        let root = linalg::perron_root(&self.m_matrix(theta), PERRON_TOL, PERRON_MAX_ITER)?;
        Ok(root.value.ln())
    }
}

/// `Lambda(theta)`; see [`CgfEvaluator::eval`].
pub fn cgf(evaluator: &CgfEvaluator, theta: f64) -> Result<f64> {
    evaluator.eval(theta)
}

fn require_positive_drift(model: &NetGenModel) -> Result<()> {
    let drift = model.drift();
    if drift > model.drift_tolerance() {
        Ok(())
    } else {
        Err(Error::DriftSign {
            what: "the decay rate",
            required: "positive",
            drift,
        })
    }
}

/// Decay rate as `sup { theta > 0 : Lambda(theta) < 0 }` at the default
/// uniformization rate.
pub fn decay_rate_ld(model: &NetGenModel) -> Result<f64> {
    require_positive_drift(model)?;
    decay_rate_ld_with(&CgfEvaluator::new(model, None)?)
}

/// Decay rate from a prepared evaluator. Convexity of `Lambda` with
/// `Lambda(0) = 0`, `Lambda'(0) < 0` and steepness at the right end of the
/// domain means `Lambda < 0` exactly on `(0, lambda)`, so bisection on the
/// sign of `Lambda` converges to the decay rate.
pub fn decay_rate_ld_with(evaluator: &CgfEvaluator) -> Result<f64> {
    let right = evaluator.domain.1;
    let guard = 1e-9 * (evaluator.domain.1 - evaluator.domain.0);
    let limit = right - guard;

    let mut hi = None;
    for k in 1..=60 {
        let theta = (right * (1.0 - 0.5_f64.powi(k))).min(limit);
        if evaluator.eval(theta)? > 0.0 {
            hi = Some(theta);
            break;
        }
        if theta >= limit {
            break;
        }
    }
    let mut hi = hi.ok_or_else(|| Error::Convergence("Lambda stayed non-positive up to the domain edge".into()))?;
    let mut lo = 0.0;
    for _ in 0..400 {
        if hi - lo <= ROOT_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if evaluator.eval(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::Convergence(
            "no theta with Lambda(theta) < 0 found; drift too close to zero".into(),
        ));
    }
    Ok(0.5 * (lo + hi))
}

/// Decay rate as the smallest positive eigenvalue of `R^-1 Q^T`.
pub fn decay_rate_eig(model: &NetGenModel) -> Result<f64> {
    require_positive_drift(model)?;
    let a = drift_matrix(model);
    let (eigs, rho) = linalg::real_eigenvalues(&a, IMAG_TOL)?;
    let lambda = eigs
        .iter()
        .copied()
        .filter(|&z| z > POSITIVE_EIG_TOL * rho)
        .fold(f64::INFINITY, f64::min);
    if !lambda.is_finite() {
        return Err(Error::Degenerate("R^-1 Q^T has no strictly positive eigenvalue".into()));
    }
    let (v, _) = linalg::null_vectors(&a, lambda, 1);
    let resid = (&a * &v[0] - &v[0] * lambda).amax() / v[0].amax();
    let tol = EIGEN_RESIDUAL_TOL * linalg::norm_inf(&a);
    if resid > tol {
        return Err(Error::Residual {
            what: "decay-rate eigenpair",
            residual: resid,
            tolerance: tol,
        });
    }
    Ok(lambda)
}

/// Both decay-rate estimates with the `Lambda` curve for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRateReport {
    pub lambda_ld: f64,
    pub lambda_eig: f64,
    pub agreement_gap: f64,
    pub theta_domain: (f64, f64),
    pub q_rate: f64,
    /// `(theta, Lambda(theta))` on an interior grid of the domain.
    pub cgf_samples: Vec<(f64, f64)>,
}

pub fn decay_report(model: &NetGenModel, samples: usize) -> Result<DecayRateReport> {
    require_positive_drift(model)?;
    let evaluator = CgfEvaluator::new(model, None)?;
    let lambda_ld = decay_rate_ld_with(&evaluator)?;
    let lambda_eig = decay_rate_eig(model)?;
    let (lo, hi) = evaluator.domain();
    let cgf_samples = (0..samples)
        .map(|i| {
            let theta = lo + (hi - lo) * (i as f64 + 0.5) / samples as f64;
            evaluator.eval(theta).map(|v| (theta, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayRateReport {
        lambda_ld,
        lambda_eig,
        agreement_gap: (lambda_ld - lambda_eig).abs(),
        theta_domain: (lo, hi),
        q_rate: evaluator.q_rate(),
        cgf_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::reverse_model;

    fn two_state() -> NetGenModel {
        NetGenModel::two_state(1.0, 1.0, 3.0, 1.0).unwrap()
    }

    #[test]
    fn cgf_at_zero_is_zero() {
        let ev = CgfEvaluator::new(&two_state(), None).unwrap();
        assert_eq!(ev.eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn cgf_two_state_hand_computed() {
        let ev = CgfEvaluator::new(&two_state(), Some(2.0)).unwrap();
        // rows of M(theta) are constant, rho = 1/(2 - theta) + 1/(2 + 2 theta)
        for theta in [-0.4, -0.1, 0.25, 0.5, 1.0, 1.9] {
            let rho = 1.0 / (2.0 - theta) + 1.0 / (2.0 + 2.0 * theta);
            assert!((ev.eval(theta).unwrap() - rho.ln()).abs() < 1e-12, "{theta}");
        }
        assert!(ev.eval(0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cgf_is_infinite_outside_domain() {
        let ev = CgfEvaluator::new(&two_state(), Some(2.0)).unwrap();
        assert_eq!(ev.domain(), (-1.0, 2.0));
        assert_eq!(ev.eval(2.0).unwrap(), f64::INFINITY);
        assert_eq!(ev.eval(-1.0).unwrap(), f64::INFINITY);
        assert!(ev.eval(2.0 - 1e-6).unwrap() > 5.0);
        assert!(ev.eval(-1.0 + 1e-6).unwrap() > 5.0);
    }

    #[test]
    fn two_state_decay_rates() {
        let m = two_state();
        assert!((decay_rate_ld(&m).unwrap() - 0.5).abs() < 1e-10);
        assert!((decay_rate_eig(&m).unwrap() - 0.5).abs() < 1e-12);

        let m = NetGenModel::two_state(2.0, 1.0, 2.0, 1.0).unwrap();
        assert!((decay_rate_ld(&m).unwrap() - 1.0).abs() < 1e-10);
        assert!((decay_rate_eig(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_drift_rejected() {
        let m = reverse_model(&two_state());
        assert!(matches!(decay_rate_ld(&m), Err(Error::DriftSign { .. })));
        assert!(matches!(decay_rate_eig(&m), Err(Error::DriftSign { .. })));
    }

    #[test]
    fn rate_scaling_scales_lambda_inversely() {
        let m = two_state();
        let scaled = m.scale_rates(4.0).unwrap();
        assert!((decay_rate_eig(&scaled).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn report_contains_samples() {
        let r = decay_report(&two_state(), 11).unwrap();
        assert_eq!(r.cgf_samples.len(), 11);
        assert!(r.agreement_gap < 1e-9);
        assert!(r
            .cgf_samples
            .iter()
            .all(|(t, _)| *t > r.theta_domain.0 && *t < r.theta_domain.1));
    }
}
