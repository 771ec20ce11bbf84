//! Battery sizes for LOLP targets.
//!
//! With decay rate `lambda`, LOLP behaves like `c * exp(-lambda * bmax)` for
//! large batteries. Ignoring the prefactor gives the estimate
//! `log(1/delta) / lambda`; the extra size needed to shrink LOLP by a factor
//! `epsilon` is `log(1/epsilon) / lambda` regardless of `c`. Exact sizes come
//! from bisection on the fluid solver.

use serde::{Deserialize, Serialize};

use crate::ctmc::NetGenModel;
use crate::error::{Error, Result};
use crate::fluid::{lolp_lower_bound, reliability_at};
use crate::ldp::decay_rate_eig;

/// Relative bracket width at which exact sizing stops.
pub const EXACT_REL_TOL: f64 = 1e-9;
const MAX_EXPANSIONS: usize = 200;
const MAX_BISECTIONS: usize = 400;

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("decay rate must be positive, got {lambda}")))
    }
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1], got {x}")))
    }
}

/// `log(1/delta) / lambda`.
pub fn size_estimate(lambda: f64, delta: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_fraction("target LOLP", delta)?;
    Ok(-delta.ln() / lambda)
}

/// Extra battery to shrink LOLP by a factor `epsilon`: `log(1/epsilon) / lambda`.
pub fn incremental_size(lambda: f64, epsilon: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_fraction("reduction factor", epsilon)?;
    Ok(-epsilon.ln() / lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SizingOptions {
    /// Bisect even when the drift is negative, provided the target lies
    /// above the LOLP lower bound.
    pub allow_negative_drift: bool,
}

fn lolp(model: &NetGenModel, bmax: f64) -> Result<f64> {
    Ok(reliability_at(model, bmax)?.lolp)
}

/// Smallest battery with solver LOLP at most `delta`, to relative
/// tolerance [`EXACT_REL_TOL`]. Returns `0` when LOLP without a battery is
/// already at most `delta`.
pub fn size_exact(model: &NetGenModel, delta: f64) -> Result<f64> {
    size_exact_with(model, delta, &SizingOptions::default())
}

pub fn size_exact_with(model: &NetGenModel, delta: f64, opts: &SizingOptions) -> Result<f64> {
    check_fraction("target LOLP", delta)?;
    let drift = model.drift();
    if drift.abs() <= model.drift_tolerance() {
        return Err(Error::ZeroDrift { drift });
    }
    let scale = if drift > 0.0 {
        size_estimate(decay_rate_eig(model)?, delta)?
    } else {
        let bound = lolp_lower_bound(model)?;
        if delta <= bound.value {
            return Err(Error::Unattainable {
                target: delta,
                bound: bound.value,
            });
        }
        if !opts.allow_negative_drift {
            return Err(Error::DriftSign {
                what: "exact sizing outside negative-drift mode",
                required: "positive",
                drift,
            });
        }
        // energy moved during one mean holding time
        let max_exit = model.rate_matrix().max_exit_rate();
        model.rates().iter().fold(0.0_f64, |m, r| m.max(r.abs())) / max_exit
    };

    let no_battery = lolp(model, 1e-9 * scale)?;
    if no_battery <= delta {
        return Ok(0.0);
    }
    let mut lo = 1e-9 * scale;
    let mut hi = 4.0 * scale;
    let mut expansions = 0;
    while lolp(model, hi)? > delta {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Convergence(format!(
                "LOLP still above {delta:e} at bmax = {hi:e}"
            )));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= EXACT_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if lolp(model, mid)? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `log c` fitted by least squares to `log LOLP(b) + lambda * b` over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorFit {
    pub log_c: f64,
    /// Root-mean-square deviation of the individual points from `log_c`.
    pub rms_residual: f64,
    pub grid: Vec<f64>,
}

impl PrefactorFit {
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    /// The size offset `log(c) / lambda` between exact and estimated sizes.
    pub fn offset(&self, lambda: f64) -> f64 {
        self.log_c / lambda
    }
}

pub fn estimate_prefactor(model: &NetGenModel, lambda: f64, grid: &[f64]) -> Result<PrefactorFit> {
    check_lambda(lambda)?;
    if grid.is_empty() {
        return Err(Error::Domain("empty bmax grid".into()));
    }
    let points = grid
        .iter()
        .map(|&b| Ok(lolp(model, b)?.ln() + lambda * b))
        .collect::<Result<Vec<f64>>>()?;
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Degenerate("LOLP underflowed on the bmax grid".into()));
    }
    let log_c = points.iter().sum::<f64>() / points.len() as f64;
    let rms_residual = (points.iter().map(|p| (p - log_c).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    Ok(PrefactorFit {
        log_c,
        rms_residual,
        grid: grid.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingResult {
    pub target_lolp: f64,
    pub lambda: f64,
    pub estimate_bmax: f64,
    pub exact_bmax: Option<f64>,
    /// `exact_bmax - estimate_bmax`.
    pub offset: Option<f64>,
}

/// Estimated size for a positive-drift model, plus the exact size if requested.
pub fn size_report(model: &NetGenModel, delta: f64, exact: bool) -> Result<SizingResult> {
    if model.drift() < 0.0 {
        let bound = lolp_lower_bound(model)?;
        if delta <= bound.value {
            return Err(Error::Unattainable {
                target: delta,
                bound: bound.value,
            });
        }
    }
    let lambda = decay_rate_eig(model)?;
    let estimate_bmax = size_estimate(lambda, delta)?;
    let exact_bmax = if exact { Some(size_exact(model, delta)?) } else { None };
    Ok(SizingResult {
        target_lolp: delta,
        lambda,
        estimate_bmax,
        exact_bmax,
        offset: exact_bmax.map(|e| e - estimate_bmax),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::two_state_lolp;

    fn two_state() -> NetGenModel {
        NetGenModel::two_state(1.0, 1.0, 3.0, 1.0).unwrap()
    }

    #[test]
    fn closed_form_estimates() {
        assert!((size_estimate(0.5, 1e-3).unwrap() - 13.815510557964274).abs() < 1e-12);
        assert_eq!(size_estimate(0.5, 1.0).unwrap(), 0.0);
        assert_eq!(
            size_estimate(0.25, 0.01).unwrap(),
            2.0 * size_estimate(0.5, 0.01).unwrap()
        );
        assert!((incremental_size(0.5, 0.1).unwrap() - 4.605170185988091).abs() < 1e-12);
        assert_eq!(incremental_size(0.5, 1.0).unwrap(), 0.0);
        assert!(size_estimate(0.0, 0.1).is_err());
        assert!(size_estimate(0.5, 0.0).is_err());
        assert!(incremental_size(0.5, 1.5).is_err());
    }

    #[test]
    fn exact_inverts_closed_form() {
        let target = two_state_lolp(1.0, 1.0, 3.0, 1.0, 2.0).unwrap();
        let b = size_exact(&two_state(), target).unwrap();
        assert!((b - 2.0).abs() < 1e-7, "{b}");
    }

    #[test]
    fn unattainable_below_bound() {
        let m = NetGenModel::two_state(1.0, 1.0, 1.5, 1.0).unwrap();
        match size_exact(&m, 0.1) {
            Err(Error::Unattainable { bound, .. }) => assert!((bound - 0.25).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(size_exact(&m, 0.4), Err(Error::DriftSign { .. })));
        let opts = SizingOptions {
            allow_negative_drift: true,
        };
        let b = size_exact_with(&m, 0.4, &opts).unwrap();
        assert!(reliability_at(&m, b).unwrap().lolp <= 0.4);
        assert!(reliability_at(&m, 0.999 * b).unwrap().lolp > 0.4);
    }

    #[test]
    fn no_battery_needed_for_loose_target() {
        // without storage LOLP is pi(S-) = 0.5
        assert_eq!(size_exact(&two_state(), 0.6).unwrap(), 0.0);
    }

    #[test]
    fn prefactor_of_two_state_model() {
        // LOLP = (0.5 e^{-b/2}) / (2 - e^{-b/2}) -> c = 1/4
        let fit = estimate_prefactor(&two_state(), 0.5, &[40.0, 50.0, 60.0]).unwrap();
        assert!((fit.c() - 0.25).abs() < 1e-6);
        assert!(fit.rms_residual < 1e-6);
    }

    #[test]
    fn report_offset() {
        let r = size_report(&two_state(), 1e-4, true).unwrap();
        assert_eq!(r.offset, Some(r.exact_bmax.unwrap() - r.estimate_bmax));
        // offset tends to log(c) / lambda = -2 log 4
        assert!((r.offset.unwrap() + 2.0 * 4f64.ln()).abs() < 1e-3);
    }
}
