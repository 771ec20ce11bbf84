//! Stationary distribution of the finite-battery fluid queue.
//!
//! The joint distribution `F_i(x) = P[b <= x, X = i]` solves
//! `F'(x) = R^-1 Q^T F(x)` on `[0, bmax]` with `F_i(0) = 0` for charging
//! states and `F_i(bmax) = pi_i` for deficit states. The solution is a sum of
//! exponential modes `e^{z_j x} phi_j` over the eigenpairs of `R^-1 Q^T`;
//! the mode weights come from the boundary conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctmc::NetGenModel;
use crate::error::{Error, Result};
use crate::linalg;

/// Imaginary parts below this fraction of the spectral radius are dropped.
pub const IMAG_TOL: f64 = 1e-9;
/// Eigenvalues (other than the structural zero) below this fraction of the
/// spectral radius are numerically degenerate.
pub const NEAR_ZERO_TOL: f64 = 1e-12;
/// Eigenvalues closer than this fraction of the spectral radius are treated
/// as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-9;
/// Bound on eigenpair residuals relative to `||R^-1 Q^T||`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-9;
/// Bound on the boundary-condition residual.
pub const BOUNDARY_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Refuse chains that fail detailed balance instead of relying on the
    /// numerical realness check of the spectrum.
    pub require_reversible: bool,
}

/// Where a mode's exponential is anchored: `e^{z (x - anchor)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Zero,
    Bmax,
}

/// Spectral representation of the stationary joint distribution.
///
/// Modes with positive eigenvalue are stored as `e^{z (x - bmax)}` and the
/// rest as `e^{z x}`, so every basis function is at most one on
/// `[0, bmax]` and nothing overflows for large `z * bmax`.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    model: NetGenModel,
    bmax: f64,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<DVector<f64>>,
    anchors: Vec<Anchor>,
    coefficients: Vec<f64>,
    zero_index: usize,
    boundary_residual: f64,
    max_eigen_residual: f64,
}

/// Serializable digest of a [`SpectralSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub bmax: f64,
    pub eigenvalues: Vec<f64>,
    pub anchors: Vec<Anchor>,
    /// Mode weights in the anchored basis.
    pub coefficients: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub boundary_residual: f64,
}

impl SpectralSolution {
    pub fn model(&self) -> &NetGenModel {
        &self.model
    }

    pub fn bmax(&self) -> f64 {
        self.bmax
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[DVector<f64>] {
        &self.eigenvectors
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Mode weights in the anchored basis.
    pub fn scaled_coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Mode weights in the plain `e^{z x}` basis. May underflow to zero or
    /// overflow for positive modes with large `z * bmax`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.eigenvalues)
            .zip(&self.anchors)
            .map(|((c, z), anchor)| match anchor {
                Anchor::Zero => *c,
                Anchor::Bmax => c * (-z * self.bmax).exp(),
            })
            .collect()
    }

    /// Index of the structural zero eigenvalue (eigenvector `pi`).
    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    pub fn boundary_residual(&self) -> f64 {
        self.boundary_residual
    }

    pub fn max_eigen_residual(&self) -> f64 {
        self.max_eigen_residual
    }

    pub fn summary(&self) -> SpectralSummary {
        SpectralSummary {
            bmax: self.bmax,
            eigenvalues: self.eigenvalues.clone(),
            anchors: self.anchors.clone(),
            coefficients: self.coefficients.clone(),
            eigenvectors: self.eigenvectors.iter().map(|v| v.iter().copied().collect()).collect(),
            boundary_residual: self.boundary_residual,
        }
    }

    fn basis(&self, j: usize, x: f64) -> f64 {
        basis_value(self.eigenvalues[j], self.anchors[j], x, self.bmax)
    }

    fn eval(&self, x: f64) -> DVector<f64> {
        let n = self.model.n();
        let mut f = DVector::zeros(n);
        for j in 0..n {
            let w = self.coefficients[j] * self.basis(j, x);
            f.axpy(w, &self.eigenvectors[j], 1.0);
        }
        f
    }
}

fn basis_value(z: f64, anchor: Anchor, x: f64, bmax: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    match anchor {
        Anchor::Zero => (z * x).exp(),
        Anchor::Bmax => (z * (x - bmax)).exp(),
    }
}

/// `R^-1 Q^T` for the model.
pub fn drift_matrix(model: &NetGenModel) -> DMatrix<f64> {
    let q = model.rate_matrix().as_matrix();
    let r = model.rates();
    let n = model.n();
    DMatrix::from_fn(n, n, |i, j| q[(j, i)] / r[i])
}

/// Solve the stationary fluid equations for battery capacity `bmax`.
pub fn solve_stationary(model: &NetGenModel, bmax: f64) -> Result<SpectralSolution> {
    solve_stationary_with(model, bmax, &SolveOptions::default())
}

pub fn solve_stationary_with(model: &NetGenModel, bmax: f64, opts: &SolveOptions) -> Result<SpectralSolution> {
    if !(bmax > 0.0 && bmax.is_finite()) {
        return Err(Error::Domain(format!("bmax must be positive and finite, got {bmax}")));
    }
    let drift = model.drift();
    if drift.abs() <= model.drift_tolerance() {
        return Err(Error::ZeroDrift { drift });
    }
    if opts.require_reversible && !model.is_reversible(1e-9) {
        return Err(Error::InvalidModel("background chain fails detailed balance".into()));
    }

    let n = model.n();
    let a = drift_matrix(model);
    let a_norm = linalg::norm_inf(&a);
    let (mut eigs, rho) = linalg::real_eigenvalues(&a, IMAG_TOL)?;

    let zero_index = eigs
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .map(|(i, _)| i)
        .expect("non-empty spectrum");
    if eigs[zero_index].abs() > 1e-8 * rho {
        return Err(Error::Degenerate(format!(
            "no eigenvalue near zero (closest {:e}, spectral radius {rho:e})",
            eigs[zero_index]
        )));
    }
    eigs[zero_index] = 0.0;
    if let Some((j, z)) = eigs
        .iter()
        .enumerate()
        .find(|&(j, z)| j != zero_index && z.abs() < NEAR_ZERO_TOL * rho)
    {
        return Err(Error::Degenerate(format!(
            "eigenvalue {j} = {z:e} is indistinguishable from zero (drift {drift:e})"
        )));
    }

    let pi = model.pi();
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut max_resid = 0.0_f64;
    let mut i = 0;
    while i < n {
        let mut k = 1;
        while i + k < n && (eigs[i + k] - eigs[i]).abs() <= CLUSTER_TOL * rho {
            k += 1;
        }
        if (i..i + k).contains(&zero_index) {
            if k > 1 {
                return Err(Error::Degenerate(
                    "repeated zero eigenvalue; the drift is too close to zero".into(),
                ));
            }
            vectors.push(pi.clone());
            i += 1;
            continue;
        }
        let z = eigs[i..i + k].iter().sum::<f64>() / k as f64;
        let (vs, svals) = linalg::null_vectors(&a, z, k);
        if k > 1 && svals.iter().any(|&s| s > 1e-8 * a_norm) {
            return Err(Error::DefectiveSpectrum(format!(
                "eigenvalue {z:e} has multiplicity {k} but a smaller eigenspace"
            )));
        }
        for (off, v) in vs.into_iter().enumerate() {
            let zj = eigs[i + off];
            let resid = (&a * &v - &v * zj).amax() / v.amax();
            max_resid = max_resid.max(resid);
            vectors.push(v);
        }
        i += k;
    }
    if max_resid > EIGEN_RESIDUAL_TOL * a_norm {
        return Err(Error::Residual {
            what: "eigenpair",
            residual: max_resid,
            tolerance: EIGEN_RESIDUAL_TOL * a_norm,
        });
    }

    let anchors: Vec<Anchor> = eigs
        .iter()
        .map(|&z| if z > 0.0 { Anchor::Bmax } else { Anchor::Zero })
        .collect();

    // Boundary conditions: F_i(0) = 0 on charging states, F_i(bmax) = pi_i
    // on deficit states.
    let mut bc = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for row in 0..n {
        let at = if model.rates()[row] > 0.0 { 0.0 } else { bmax };
        if model.rates()[row] < 0.0 {
            rhs[row] = pi[row];
        }
        for j in 0..n {
            bc[(row, j)] = vectors[j][row] * basis_value(eigs[j], anchors[j], at, bmax);
        }
    }
    let lu = bc.clone().lu();
    let mut coef = lu
        .solve(&rhs)
        .ok_or_else(|| Error::DefectiveSpectrum("boundary system is singular".into()))?;
    // one refinement step
    let r = &rhs - &bc * &coef;
    if let Some(dc) = lu.solve(&r) {
        coef += dc;
    }
    let boundary_residual = (&rhs - &bc * &coef).amax();
    if !(boundary_residual < BOUNDARY_RESIDUAL_TOL) {
        return Err(Error::Residual {
            what: "boundary condition",
            residual: boundary_residual,
            tolerance: BOUNDARY_RESIDUAL_TOL,
        });
    }

    Ok(SpectralSolution {
        model: model.clone(),
        bmax,
        eigenvalues: eigs,
        eigenvectors: vectors,
        anchors,
        coefficients: coef.iter().copied().collect(),
        zero_index,
        boundary_residual,
        max_eigen_residual: max_resid,
    })
}

/// Joint distribution `(F_i(x))_i` at battery level `x`.
pub fn cdf(solution: &SpectralSolution, x: f64) -> Result<DVector<f64>> {
    if !(0.0..=solution.bmax).contains(&x) {
        return Err(Error::Domain(format!("level {x} outside [0, {}]", solution.bmax)));
    }
    Ok(solution.eval(x))
}

/// Long-run reliability figures of a solved model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    /// Fraction of time the battery is empty while in deficit.
    pub lolp: f64,
    /// Average rate of unserved load.
    pub llr: f64,
    /// Mass of the full-battery atom.
    pub overflow_prob: f64,
    /// Average rate of generation wasted at a full battery.
    pub overflow_rate: f64,
    pub drift: f64,
    pub bmax: f64,
}

pub fn reliability(solution: &SpectralSolution) -> ReliabilityReport {
    let model = &solution.model;
    let pi = model.pi();
    let rates = model.rates();
    let f0 = solution.eval(0.0);
    let fb = solution.eval(solution.bmax);

    let (mut lolp, mut llr, mut overflow_prob, mut overflow_rate) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..model.n() {
        if rates[i] < 0.0 {
            // noise-level negatives would break 0 <= F_i(0)
            let f = f0[i].max(0.0);
            lolp += f;
            llr += f * -rates[i];
        } else {
            let atom = (pi[i] - fb[i]).max(0.0);
            overflow_prob += atom;
            overflow_rate += atom * rates[i];
        }
    }
    ReliabilityReport {
        lolp,
        llr,
        overflow_prob,
        overflow_rate,
        drift: model.drift(),
        bmax: solution.bmax,
    }
}

/// Solve and report in one step.
pub fn reliability_at(model: &NetGenModel, bmax: f64) -> Result<ReliabilityReport> {
    Ok(reliability(&solve_stationary(model, bmax)?))
}

/// Closed-form LOLP of the two-state model: generation alternates between
/// 0 (leaving at rate `a`) and `g` (leaving at rate `b`), demand `d`.
pub fn two_state_lolp(a: f64, b: f64, g: f64, d: f64, bmax: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("rates a={a}, b={b} must be positive")));
    }
    if !(d > 0.0 && d < g) {
        return Err(Error::Domain(format!("need 0 < d < g, got d={d}, g={g}")));
    }
    if !(bmax >= 0.0) {
        return Err(Error::Domain(format!("bmax must be non-negative, got {bmax}")));
    }
    let drift = (a * g - a * d - b * d) / (a + b);
    if drift.abs() <= 1e-15 * g {
        return Err(Error::ZeroDrift { drift });
    }
    let k = (a * g - a * d) / (b * d);
    let s = (a + b) * drift / ((g - d) * d) * bmax;
    if s <= 0.0 {
        Ok((-drift / d) / (1.0 - k * s.exp()))
    } else {
        let e = (-s).exp();
        Ok((drift / d) * e / (k - e))
    }
}

/// Lower bound on LOLP valid at every battery size when the drift is negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LolpLowerBound {
    pub value: f64,
    /// The bound is the large-battery limit when there is a single deficit state.
    pub tight: bool,
}

pub fn lolp_lower_bound(model: &NetGenModel) -> Result<LolpLowerBound> {
    let drift = model.drift();
    if !(drift < -model.drift_tolerance()) {
        return Err(Error::DriftSign {
            what: "the LOLP lower bound",
            required: "negative",
            drift,
        });
    }
    Ok(LolpLowerBound {
        value: -drift / -model.min_rate(),
        tight: model.negative_states().len() == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{reverse_model, RateMatrix};

    fn two_state() -> NetGenModel {
        NetGenModel::two_state(1.0, 1.0, 3.0, 1.0).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert!((two_state_lolp(1.0, 1.0, 3.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        let v = two_state_lolp(1.0, 1.0, 3.0, 1.0, 2.0).unwrap();
        assert!((v - 0.5 / (2.0 * e - 1.0)).abs() < 1e-15);
        let far = two_state_lolp(1.0, 1.0, 1.5, 1.0, 1e4).unwrap();
        assert!((far - 0.25).abs() < 1e-12);
        assert!(matches!(
            two_state_lolp(1.0, 1.0, 2.0, 1.0, 1.0),
            Err(Error::ZeroDrift { .. })
        ));
        assert!(two_state_lolp(1.0, 1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn solver_matches_closed_form_two_state() {
        let sol = solve_stationary(&two_state(), 2.0).unwrap();
        let rep = reliability(&sol);
        let e = std::f64::consts::E;
        assert!((rep.lolp - 0.5 / (2.0 * e - 1.0)).abs() < 1e-12);
        // single deficit state of magnitude 1
        assert_eq!(rep.llr, rep.lolp);
        assert!((rep.llr + rep.drift - rep.overflow_rate).abs() < 1e-12);
    }

    #[test]
    fn no_battery_limit() {
        let rep = reliability_at(&two_state(), 1e-9).unwrap();
        assert!((rep.lolp - 0.5).abs() < 1e-8);
    }

    #[test]
    fn boundary_conditions_hold() {
        let m = two_state();
        let sol = solve_stationary(&m, 2.0).unwrap();
        let f0 = cdf(&sol, 0.0).unwrap();
        let fb = cdf(&sol, 2.0).unwrap();
        assert!(f0[1].abs() < 1e-12);
        assert!((fb[0] - 0.5).abs() < 1e-12);
        assert!(cdf(&sol, -0.1).is_err());
        assert!(cdf(&sol, 2.1).is_err());
        let total = fb.sum() + reliability(&sol).overflow_prob;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_rejected() {
        let m = NetGenModel::two_state(1.0, 1.0, 2.0, 1.0).unwrap();
        assert!(matches!(solve_stationary(&m, 1.0), Err(Error::ZeroDrift { .. })));
    }

    #[test]
    fn bad_bmax_rejected() {
        assert!(solve_stationary(&two_state(), 0.0).is_err());
        assert!(solve_stationary(&two_state(), f64::NAN).is_err());
    }

    #[test]
    fn non_reversible_complex_spectrum_is_an_error() {
        // one-way 4-cycle: R^-1 Q^T has a complex pair
        let q = RateMatrix::from_rows(&[
            vec![-1.0, 1.0, 0.0, 0.0],
            vec![0.0, -1.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0, 1.0],
            vec![1.0, 0.0, 0.0, -1.0],
        ])
        .unwrap();
        let m = NetGenModel::new(q, vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        assert!(matches!(solve_stationary(&m, 1.0), Err(Error::NonRealSpectrum { .. })));
        assert!(matches!(
            solve_stationary_with(
                &m,
                1.0,
                &SolveOptions {
                    require_reversible: true
                }
            ),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn lower_bound_examples() {
        let m = NetGenModel::two_state(1.0, 1.0, 1.5, 1.0).unwrap();
        let lb = lolp_lower_bound(&m).unwrap();
        assert!((lb.value - 0.25).abs() < 1e-15);
        assert!(lb.tight);
        assert!(matches!(lolp_lower_bound(&two_state()), Err(Error::DriftSign { .. })));

        let q = RateMatrix::from_rows(&[vec![-1.0, 0.5, 0.5], vec![0.5, -1.0, 0.5], vec![0.5, 0.5, -1.0]]).unwrap();
        let m = NetGenModel::new(q, vec![-1.0, -2.0, 1.0]).unwrap();
        let lb = lolp_lower_bound(&m).unwrap();
        assert!(!lb.tight);
        assert!((lb.value - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_full_atom_equals_lolp() {
        let m = two_state();
        let a = reliability_at(&m, 2.0).unwrap();
        let b = reliability_at(&reverse_model(&m), 2.0).unwrap();
        assert!((a.lolp - b.overflow_prob).abs() < 1e-12);
    }

    #[test]
    fn huge_battery_does_not_overflow() {
        let rep = reliability_at(&two_state(), 1500.0).unwrap();
        assert!(rep.lolp >= 0.0 && rep.lolp < 1e-300);
        let closed = two_state_lolp(1.0, 1.0, 3.0, 1.0, 100.0).unwrap();
        let rep = reliability_at(&two_state(), 100.0).unwrap();
        assert!(((rep.lolp - closed) / closed).abs() < 1e-8);
    }
}
