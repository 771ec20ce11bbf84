//! Continuous-time Markov chain types: rate matrices, the net-generation
//! model, uniformization and the reversed model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on row sums of a rate matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default ratio between the uniformization rate and the largest exit rate.
pub const DEFAULT_UNIFORMIZATION_MULTIPLIER: f64 = 1.1;

/// Transition rate matrix of an irreducible CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    q: DMatrix<f64>,
}

impl RateMatrix {
    /// Validates off-diagonal signs, zero row sums and irreducibility.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return Err(Error::InvalidRateMatrix(format!(
                "expected a non-empty square matrix, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRateMatrix("non-finite entry".into()));
        }
        let scale = q.amax();
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::InvalidRateMatrix(format!(
                        "negative off-diagonal entry Q[{i},{j}] = {}",
                        q[(i, j)]
                    )));
                }
            }
            let row_sum: f64 = q.row(i).sum();
            if row_sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidRateMatrix(format!(
                    "row {i} sums to {row_sum:e}, expected 0"
                )));
            }
        }
        if !is_strongly_connected(n, |i, j| q[(i, j)] > 0.0) {
            return Err(Error::NotIrreducible(
                "transition graph is not strongly connected".into(),
            ));
        }
        Ok(RateMatrix { q })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidRateMatrix("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.q.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// Detailed balance `pi_i Q_ij = pi_j Q_ji` within `rel_tol` of the
    /// largest probability flux.
    pub fn is_reversible(&self, pi: &DVector<f64>, rel_tol: f64) -> bool {
        let n = self.n();
        let flux = |i: usize, j: usize| pi[i] * self.q[(i, j)];
        let scale = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| flux(i, j))
            .fold(0.0, f64::max);
        (0..n).all(|i| (0..i).all(|j| (flux(i, j) - flux(j, i)).abs() <= rel_tol * scale))
    }
}

/// Strong connectivity of the directed graph on `0..n` with edge predicate
/// `edge(i, j)`: everything reachable from node 0 both forwards and backwards.
#[allow(clippy::needless_range_loop)]
pub fn is_strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if v != u && e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n > 0 && reach_all(true) && reach_all(false)
}

/// Invariant distribution `pi` with `pi Q = 0`, `sum pi = 1`.
///
/// Solves the overdetermined system `[Q^T; 1^T] pi = [0; 1]` by QR least
/// squares, followed by one step of iterative refinement.
pub fn invariant_distribution(q: &RateMatrix) -> Result<DVector<f64>> {
    invariant_of_generator(q.as_matrix())
}

pub(crate) fn invariant_of_generator(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    let scale = q.amax().max(f64::MIN_POSITIVE);
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&q.transpose());
    a.row_mut(n).fill(scale);
    let mut b = DVector::zeros(n + 1);
    b[n] = scale;

    let qr = a.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-13 * rmax) {
        return Err(Error::NotIrreducible("null space of Q^T is not one-dimensional".into()));
    }
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        let qtb = qr.q().tr_mul(rhs);
        r.solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Degenerate("singular triangular factor".into()))
    };
    let mut pi = solve(&b)?;
    let resid = &b - &a * &pi;
    pi += solve(&resid)?;

    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::NotIrreducible(format!(
            "invariant distribution has non-positive entries: {:?}",
            pi.as_slice()
        )));
    }
    let s = pi.sum();
    pi /= s;
    Ok(pi)
}

/// The net-generation model: background chain plus a nonzero charge or
/// discharge rate per state.
#[derive(Debug, Clone)]
pub struct NetGenModel {
    q_matrix: RateMatrix,
    rates: Vec<f64>,
    labels: Option<Vec<String>>,
    pi: DVector<f64>,
}

impl PartialEq for NetGenModel {
    fn eq(&self, other: &Self) -> bool {
        self.q_matrix == other.q_matrix && self.rates == other.rates && self.labels == other.labels
    }
}

impl NetGenModel {
    pub fn new(q_matrix: RateMatrix, rates: Vec<f64>) -> Result<Self> {
        Self::with_labels(q_matrix, rates, None)
    }

    pub fn with_labels(q_matrix: RateMatrix, rates: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let n = q_matrix.n();
        if rates.len() != n {
            return Err(Error::InvalidModel(format!("{} rates for {n} states", rates.len())));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidModel(format!("{} labels for {n} states", l.len())));
            }
        }
        if let Some(i) = rates.iter().position(|r| !r.is_finite() || *r == 0.0) {
            return Err(Error::InvalidModel(format!(
                "state {i} has net generation rate {}; rates must be finite and nonzero",
                rates[i]
            )));
        }
        if !rates.iter().any(|&r| r > 0.0) || !rates.iter().any(|&r| r < 0.0) {
            return Err(Error::DegenerateModel(
                "net generation rates must take both signs".into(),
            ));
        }
        let pi = invariant_distribution(&q_matrix)?;
        Ok(NetGenModel {
            q_matrix,
            rates,
            labels,
            pi,
        })
    }

    /// Generation alternating between 0 (rate `a` out) and `g` (rate `b`
    /// out) against constant demand `d`.
    pub fn two_state(a: f64, b: f64, g: f64, d: f64) -> Result<Self> {
        let q = RateMatrix::from_rows(&[vec![-a, a], vec![b, -b]])?;
        Self::new(q, vec![-d, g - d])
    }

    pub fn n(&self) -> usize {
        self.rates.len()
    }

    pub fn rate_matrix(&self) -> &RateMatrix {
        &self.q_matrix
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Invariant distribution of the background chain.
    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Charging states (positive net generation).
    pub fn positive_states(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.rates[i] > 0.0).collect()
    }

    /// Deficit states (negative net generation).
    pub fn negative_states(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.rates[i] < 0.0).collect()
    }

    /// Largest net generation rate.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest (most negative) net generation rate.
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn rate_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.rates))
    }

    /// Stationary mean net generation.
    pub fn drift(&self) -> f64 {
        drift(self)
    }

    /// Below this magnitude the drift is treated as zero.
    pub fn drift_tolerance(&self) -> f64 {
        1e-12 * self.rates.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn is_reversible(&self, rel_tol: f64) -> bool {
        self.q_matrix.is_reversible(&self.pi, rel_tol)
    }

    /// Same chain with every rate multiplied by `factor` (> 0).
    pub fn scale_rates(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Domain(format!("rate scale {factor} must be positive")));
        }
        Ok(NetGenModel {
            rates: self.rates.iter().map(|r| r * factor).collect(),
            ..self.clone()
        })
    }
}

/// Stationary mean net generation `sum_i pi_i r_i`.
pub fn drift(model: &NetGenModel) -> f64 {
    model.pi.iter().zip(&model.rates).map(|(p, r)| p * r).sum()
}

/// A CTMC re-expressed as a DTMC driven by a Poisson clock of rate `q_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformizedChain {
    pub q_rate: f64,
    /// Row-stochastic `I + Q / q_rate`.
    pub p_matrix: DMatrix<f64>,
}

impl UniformizedChain {
    pub fn n(&self) -> usize {
        self.p_matrix.nrows()
    }
}

/// Uniformize at `q_rate`, or at 1.1 times the largest exit rate if `None`.
pub fn uniformize(q_matrix: &RateMatrix, q_rate: Option<f64>) -> Result<UniformizedChain> {
    let max_exit = q_matrix.max_exit_rate();
    let q_rate = q_rate.unwrap_or(DEFAULT_UNIFORMIZATION_MULTIPLIER * max_exit);
    if !(q_rate > max_exit) || !q_rate.is_finite() {
        return Err(Error::UniformizationRate { q_rate, max_exit });
    }
    let n = q_matrix.n();
    let q = q_matrix.as_matrix();
    let mut p = DMatrix::from_fn(n, n, |i, j| q[(i, j)] / q_rate);
    for i in 0..n {
        // diagonal from the off-diagonals so rows sum to one to rounding
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| p[(i, j)]).sum();
        p[(i, i)] = 1.0 - off;
    }
    Ok(UniformizedChain { q_rate, p_matrix: p })
}

/// Uniformize at `multiplier` times the largest exit rate.
pub fn uniformize_with_multiplier(q_matrix: &RateMatrix, multiplier: f64) -> Result<UniformizedChain> {
    uniformize(q_matrix, Some(multiplier * q_matrix.max_exit_rate()))
}

/// The reversed system: same chain, generation and demand interchanged.
pub fn reverse_model(model: &NetGenModel) -> NetGenModel {
    NetGenModel {
        rates: model.rates.iter().map(|r| -r).collect(),
        ..model.clone()
    }
}
