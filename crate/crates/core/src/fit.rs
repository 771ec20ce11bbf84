//! Markov models fitted from sampled power traces.
//!
//! A trace is quantized into bins, the one-step transition matrix `T` is
//! estimated by counting, and the rate matrix is taken as `(T - I) / tau`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ctmc::{NetGenModel, RateMatrix};
use crate::error::{Error, Result};

/// Rows with fewer observed transitions than this are rejected by default.
pub const DEFAULT_MIN_TRANSITIONS: u64 = 10;
/// Above this value of `tau * max exit rate` the first-order relation
/// between `T` and `Q` is flagged as unreliable.
pub const TAYLOR_WARN_THRESHOLD: f64 = 0.1;

/// Bin edges for quantizing power samples. Bin `i` is
/// `[edges[i], edges[i+1])`, except the last bin, which includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinningSpec {
    edges: Vec<f64>,
}

impl TryFrom<Vec<f64>> for BinningSpec {
    type Error = Error;

    fn try_from(edges: Vec<f64>) -> Result<Self> {
        BinningSpec::new(edges)
    }
}

impl From<BinningSpec> for Vec<f64> {
    fn from(b: BinningSpec) -> Self {
        b.edges
    }
}

impl BinningSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::Domain(format!(
                "need at least 3 edges (2 bins), got {}",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("bin edges must be finite".into()));
        }
        if let Some(i) = edges.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "bin edges must be strictly increasing: edges[{}] = {} >= edges[{}] = {}",
                i,
                edges[i],
                i + 1,
                edges[i + 1]
            )));
        }
        Ok(BinningSpec { edges })
    }

    /// Twenty bins for wind farm output in MW: 60 MW wide up to 300, then
    /// 150 MW, then 300 MW wide up to 4500.
    pub fn wind_mw() -> Self {
        let mut edges = vec![0.0, 60.0, 120.0, 180.0, 240.0, 300.0, 450.0, 600.0];
        edges.extend((3..=15).map(|k| 300.0 * k as f64));
        BinningSpec::new(edges).expect("static edges are valid")
    }

    /// `n` equal-width bins over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let w = (hi - lo) / n as f64;
        let mut edges: Vec<f64> = (0..n).map(|i| lo + i as f64 * w).collect();
        edges.push(hi);
        BinningSpec::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_of(&self, sample: f64) -> Option<usize> {
        let (first, last) = (self.edges[0], *self.edges.last().unwrap());
        if !(first..=last).contains(&sample) {
            return None;
        }
        // number of edges <= sample, minus one
        let k = self.edges.partition_point(|&e| e <= sample);
        Some((k - 1).min(self.n_bins() - 1))
    }

    pub fn label(&self, bin: usize) -> String {
        let close = if bin + 1 == self.n_bins() { ']' } else { ')' };
        format!("[{}, {}{close}", self.edges[bin], self.edges[bin + 1])
    }
}

/// Map each sample to its bin index.
pub fn quantize(trace: &[f64], binning: &BinningSpec) -> Result<Vec<usize>> {
    trace
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            binning.bin_of(s).ok_or_else(|| {
                Error::Domain(format!(
                    "sample {i} = {s} outside the binning range [{}, {}]",
                    binning.edges()[0],
                    binning.edges().last().unwrap()
                ))
            })
        })
        .collect()
}

/// Visit and transition counts over the full set of bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub visits: Vec<u64>,
    /// `transitions[i][j]`: observed steps from bin `i` to bin `j`.
    pub transitions: Vec<Vec<u64>>,
}

impl TransitionCounts {
    pub fn zeros(n: usize) -> Self {
        TransitionCounts {
            visits: vec![0; n],
            transitions: vec![vec![0; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.visits.len()
    }

    pub fn outgoing(&self, i: usize) -> u64 {
        self.transitions[i].iter().sum()
    }

    /// Visited states with no observed outgoing transition.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.visits[i] > 0 && self.outgoing(i) == 0)
            .collect()
    }

    fn record(&mut self, states: &[usize]) -> Result<()> {
        let n = self.n();
        if let Some(k) = states.iter().position(|&s| s >= n) {
            return Err(Error::Domain(format!(
                "state {} at position {k} out of range for {n} bins",
                states[k]
            )));
        }
        for &s in states {
            self.visits[s] += 1;
        }
        for w in states.windows(2) {
            self.transitions[w[0]][w[1]] += 1;
        }
        Ok(())
    }

    /// Row-normalized counts; rows without transitions are left zero.
    pub fn mle(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            let out = self.outgoing(i);
            if out == 0 {
                0.0
            } else {
                self.transitions[i][j] as f64 / out as f64
            }
        })
    }
}

/// Maximum-likelihood transition matrix of a state sequence. Rows of states
/// that were never left are zero; see [`TransitionCounts::zero_rows`].
pub fn estimate_transition_matrix(states: &[usize], n_bins: usize) -> Result<(DMatrix<f64>, TransitionCounts)> {
    estimate_transition_matrix_segments(&[states], n_bins)
}

/// As [`estimate_transition_matrix`], pooling counts over disjoint segments.
/// No transition is counted across a segment boundary.
pub fn estimate_transition_matrix_segments<S: AsRef<[usize]>>(
    segments: &[S],
    n_bins: usize,
) -> Result<(DMatrix<f64>, TransitionCounts)> {
    let total: usize = segments.iter().map(|s| s.as_ref().len()).sum();
    if total < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {total}")));
    }
    let mut counts = TransitionCounts::zeros(n_bins);
    for s in segments {
        counts.record(s.as_ref())?;
    }
    Ok((counts.mle(), counts))
}

/// `(T - I) / tau`, with the diagonal set to minus the off-diagonal row sum
/// so that rows sum to zero exactly.
pub fn to_rate_matrix(t_matrix: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let n = t_matrix.nrows();
    if t_matrix.ncols() != n {
        return Err(Error::Domain("transition matrix must be square".into()));
    }
    let mut q = t_matrix / tau;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -off;
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Added to every retained transition count before normalizing.
    pub pseudo_count: f64,
    /// Minimum observed transitions out of each retained state.
    pub min_transitions: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            pseudo_count: 0.0,
            min_transitions: DEFAULT_MIN_TRANSITIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub binning: BinningSpec,
    /// Transition matrix over the retained states.
    pub t_matrix: DMatrix<f64>,
    pub tau: f64,
    pub q_matrix: RateMatrix,
    /// Original bin index of each retained state.
    pub retained: Vec<usize>,
    pub dropped_states: Vec<usize>,
    /// Counts over all bins, before dropping.
    pub sample_counts: TransitionCounts,
    pub warnings: Vec<String>,
}

impl FittedModel {
    /// Bin centers of the retained states.
    pub fn centers(&self) -> Vec<f64> {
        let c = self.binning.centers();
        self.retained.iter().map(|&b| c[b]).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.retained.iter().map(|&b| self.binning.label(b)).collect()
    }

    /// `tau * max exit rate`; small values mean the Taylor step is accurate.
    pub fn taylor_parameter(&self) -> f64 {
        self.tau * self.q_matrix.max_exit_rate()
    }
}

/// Fit a chain to quantized segments sampled every `tau`.
///
/// Unvisited bins and bins never left are dropped (repeatedly, since
/// dropping one can empty another's row), the remaining rows renormalized,
/// and the result must be irreducible with at least
/// `opts.min_transitions` transitions out of every retained state.
pub fn fit_states<S: AsRef<[usize]>>(
    segments: &[S],
    tau: f64,
    binning: &BinningSpec,
    opts: &FitOptions,
) -> Result<FittedModel> {
    if !(opts.pseudo_count >= 0.0 && opts.pseudo_count.is_finite()) {
        return Err(Error::Domain(format!(
            "pseudo-count must be >= 0, got {}",
            opts.pseudo_count
        )));
    }
    let n = binning.n_bins();
    let (_, counts) = estimate_transition_matrix_segments(segments, n)?;
    let mut warnings = Vec::new();

    let mut keep: Vec<bool> = counts.visits.iter().map(|&v| v > 0).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            if keep[i] && (0..n).all(|j| !keep[j] || counts.transitions[i][j] == 0) {
                keep[i] = false;
                changed = true;
                warnings.push(format!(
                    "bin {i} {} has no transitions to retained states; dropped",
                    binning.label(i)
                ));
            }
        }
        if !changed {
            break;
        }
    }
    let retained: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let dropped_states: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    if retained.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} state(s) with observed transitions",
            retained.len()
        )));
    }
    let unvisited = dropped_states.iter().filter(|&&i| counts.visits[i] == 0).count();
    if unvisited > 0 {
        warnings.push(format!("{unvisited} unvisited bin(s) dropped"));
    }

    let m = retained.len();
    let kept_counts = DMatrix::from_fn(m, m, |a, b| counts.transitions[retained[a]][retained[b]] as f64);
    if let Some(a) = (0..m).find(|&a| (kept_counts.row(a).sum() as u64) < opts.min_transitions) {
        return Err(Error::InsufficientData(format!(
            "bin {} {} has {} observed transitions, fewer than the required {}",
            retained[a],
            binning.label(retained[a]),
            kept_counts.row(a).sum(),
            opts.min_transitions
        )));
    }
    let mut t_matrix = kept_counts.add_scalar(opts.pseudo_count);
    for mut row in t_matrix.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }

    let q_matrix = RateMatrix::new(to_rate_matrix(&t_matrix, tau)?).map_err(|e| match e {
        Error::NotIrreducible(msg) => Error::NotIrreducible(format!(
            "retained bins {retained:?} do not form a single communicating class: {msg}"
        )),
        other => other,
    })?;

    let fitted = FittedModel {
        binning: binning.clone(),
        t_matrix,
        tau,
        q_matrix,
        retained,
        dropped_states,
        sample_counts: counts,
        warnings,
    };
    let taylor = fitted.taylor_parameter();
    let mut fitted = fitted;
    if taylor > TAYLOR_WARN_THRESHOLD {
        fitted.warnings.push(format!(
            "tau * max exit rate = {taylor:.3} exceeds {TAYLOR_WARN_THRESHOLD}; the first-order rate estimate may be biased"
        ));
    }
    Ok(fitted)
}

/// Net generation model for constant `demand`: state `i` has rate
/// `center_i - demand`.
pub fn build_model(fitted: &FittedModel, demand: f64) -> Result<NetGenModel> {
    if !(demand > 0.0 && demand.is_finite()) {
        return Err(Error::Domain(format!("demand must be positive, got {demand}")));
    }
    let rates: Vec<f64> = fitted.centers().iter().map(|c| c - demand).collect();
    if let Some(i) = rates.iter().position(|&r| r == 0.0) {
        return Err(Error::ZeroNetGeneration {
            state: fitted.retained[i],
            demand,
        });
    }
    if rates.iter().all(|&r| r > 0.0) || rates.iter().all(|&r| r < 0.0) {
        return Err(Error::DegenerateModel(format!(
            "demand {demand} lies outside the retained bin centers; all net generation rates share a sign"
        )));
    }
    NetGenModel::with_labels(fitted.q_matrix.clone(), rates, Some(fitted.labels()))
}

/// Quantize, fit and build in one step.
pub fn fit_pipeline(
    trace: &[f64],
    sample_interval: f64,
    binning: &BinningSpec,
    demand: f64,
    opts: &FitOptions,
) -> Result<(FittedModel, NetGenModel)> {
    fit_segments(&[trace], sample_interval, binning, demand, opts)
}

/// [`fit_pipeline`] over disjoint trace segments (for instance one per
/// selected time window).
pub fn fit_segments<S: AsRef<[f64]>>(
    segments: &[S],
    sample_interval: f64,
    binning: &BinningSpec,
    demand: f64,
    opts: &FitOptions,
) -> Result<(FittedModel, NetGenModel)> {
    let states = segments
        .iter()
        .map(|s| quantize(s.as_ref(), binning))
        .collect::<Result<Vec<_>>>()?;
    let fitted = fit_states(&states, sample_interval, binning, opts)?;
    let model = build_model(&fitted, demand)?;
    Ok((fitted, model))
}
