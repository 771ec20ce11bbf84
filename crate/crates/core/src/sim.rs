//! Monte Carlo estimates of LOLP, lost-load rate and overflow.
//!
//! The battery is integrated exactly: net generation is piecewise constant,
//! so within a segment the level moves linearly and the instant it hits `0`
//! or `bmax` is found analytically. There is no time-stepping error.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)`; a run is a
//! pure function of its inputs and seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::ctmc::{invariant_of_generator, NetGenModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Initial battery level; `None` starts half full.
    pub b0: Option<f64>,
    /// Leading fraction of the horizon excluded from the statistics.
    pub burn_in_fraction: f64,
    /// Number of equal-length batches for batch-means standard errors.
    pub batches: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            b0: None,
            burn_in_fraction: 0.01,
            batches: 20,
        }
    }
}

impl SimOptions {
    fn validate(&self, bmax: f64) -> Result<f64> {
        if !(bmax >= 0.0 && bmax.is_finite()) {
            return Err(Error::Domain(format!("bmax must be finite and >= 0, got {bmax}")));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Domain(format!(
                "burn-in fraction {} outside [0, 1)",
                self.burn_in_fraction
            )));
        }
        if self.batches < 2 {
            return Err(Error::Domain("need at least two batches".into()));
        }
        let b0 = self.b0.unwrap_or(0.5 * bmax);
        if !(0.0..=bmax).contains(&b0) {
            return Err(Error::Domain(format!("initial level {b0} outside [0, {bmax}]")));
        }
        Ok(b0)
    }
}

/// A constant net-generation rate held for `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub rate: f64,
    pub duration: f64,
}

/// A sample path of the background chain. Interval `k` starts at
/// `jump_times[k]` in state `states[k]` and ends at the next jump time, or
/// at `total_horizon` for the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub total_horizon: f64,
}

impl Trajectory {
    /// `(state, duration)` per interval.
    pub fn intervals(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = self.states.len();
        (0..n).map(move |k| {
            let end = if k + 1 < n {
                self.jump_times[k + 1]
            } else {
                self.total_horizon
            };
            (self.states[k], end - self.jump_times[k])
        })
    }

    pub fn rate_segments(&self, rates: &[f64]) -> Vec<RateSegment> {
        self.intervals()
            .map(|(s, duration)| RateSegment {
                rate: rates[s],
                duration,
            })
            .collect()
    }

    /// State at times `0, tau, 2 tau, ...` strictly before the horizon.
    pub fn sample_every(&self, tau: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = 0usize;
        let mut idx = 0usize;
        loop {
            let t = k as f64 * tau;
            if t >= self.total_horizon {
                return out;
            }
            while idx + 1 < self.jump_times.len() && self.jump_times[idx + 1] <= t {
                idx += 1;
            }
            out.push(self.states[idx]);
            k += 1;
        }
    }

    /// Fraction of the horizon spent in each of `n` states.
    pub fn occupancy(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        for (s, d) in self.intervals() {
            occ[s] += d;
        }
        occ.iter_mut().for_each(|o| *o /= self.total_horizon);
        occ
    }
}

/// Energy accounting over a whole path, burn-in included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub b_start: f64,
    pub b_end: f64,
    /// Integral of the net generation rate.
    pub net: f64,
    /// Unserved demand.
    pub lost: f64,
    /// Generation discarded at a full battery.
    pub overflow: f64,
    /// Integral of `|rate|`, the natural scale for rounding error.
    pub throughput: f64,
}

impl EnergyLedger {
    /// `b_end - b_start - (net + lost - overflow)`; zero up to rounding.
    pub fn residual(&self) -> f64 {
        (self.b_end - self.b_start) - (self.net + self.lost - self.overflow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    /// Fraction of time empty with a deficit.
    pub empirical_lolp: f64,
    pub empirical_llr: f64,
    pub empirical_overflow_rate: f64,
    /// Fraction of time full with a surplus.
    pub empirical_overflow_prob: f64,
    pub stderr_lolp: f64,
    pub stderr_llr: f64,
    /// Length of the measured window (after burn-in).
    pub horizon: f64,
    pub total_horizon: f64,
    pub batches: usize,
    pub seed: Option<u64>,
    pub energy: EnergyLedger,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Batch {
    empty_time: Sum,
    full_time: Sum,
    lost: Sum,
    overflow: Sum,
}

/// Streaming battery integrator with burn-in and batch accounting.
#[derive(Debug, Clone)]
pub struct BatteryMeter {
    bmax: f64,
    b: f64,
    t: f64,
    phase: usize,
    phase_ends: Vec<f64>,
    batches: Vec<Batch>,
    b_start: f64,
    net: Sum,
    lost: Sum,
    overflow: Sum,
    throughput: Sum,
    window_start: f64,
    total_horizon: f64,
}

impl BatteryMeter {
    pub fn new(bmax: f64, total_horizon: f64, opts: &SimOptions) -> Result<Self> {
        let b0 = opts.validate(bmax)?;
        if !(total_horizon > 0.0 && total_horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {total_horizon}")));
        }
        let window_start = opts.burn_in_fraction * total_horizon;
        let batch_len = (total_horizon - window_start) / opts.batches as f64;
        // phase 0 is burn-in, phases 1..=batches are measured
        let mut phase_ends = vec![window_start];
        phase_ends.extend((1..opts.batches).map(|k| window_start + k as f64 * batch_len));
        phase_ends.push(total_horizon);
        Ok(BatteryMeter {
            bmax,
            b: b0,
            t: 0.0,
            phase: 0,
            phase_ends,
            batches: vec![Batch::default(); opts.batches + 1],
            b_start: b0,
            net: Sum::default(),
            lost: Sum::default(),
            overflow: Sum::default(),
            throughput: Sum::default(),
            window_start,
            total_horizon,
        })
    }

    pub fn level(&self) -> f64 {
        self.b
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.phase >= self.phase_ends.len()
    }

    /// Holds `rate` for `duration`; anything past the horizon is ignored.
    pub fn push(&mut self, rate: f64, mut duration: f64) {
        while !self.is_done() {
            let end = self.phase_ends[self.phase];
            let room = end - self.t;
            if duration < room {
                self.advance(rate, duration);
                self.t += duration;
                return;
            }
            self.advance(rate, room.max(0.0));
            self.t = end;
            duration -= room.max(0.0);
            self.phase += 1;
        }
    }

    #[inline]
    fn advance(&mut self, rate: f64, dt: f64) {
        let batch = &mut self.batches[self.phase];
        let step = rate * dt;
        self.net.add(step);
        self.throughput.add(step.abs());
        let target = self.b + step;
        if target < 0.0 {
            // empty after b / -rate
            batch.empty_time.add(dt - self.b / -rate);
            batch.lost.add(-target);
            self.lost.add(-target);
            self.b = 0.0;
        } else if target > self.bmax {
            batch.full_time.add(dt - (self.bmax - self.b) / rate);
            batch.overflow.add(target - self.bmax);
            self.overflow.add(target - self.bmax);
            self.b = self.bmax;
        } else {
            self.b = target;
        }
    }

    pub fn finish(self, seed: Option<u64>) -> SimulationStats {
        let window = self.total_horizon - self.window_start;
        let measured = &self.batches[1..];
        let nb = measured.len() as f64;
        let batch_len = window / nb;
        let per_batch = |f: &dyn Fn(&Batch) -> f64| -> Vec<f64> { measured.iter().map(|b| f(b) / batch_len).collect() };
        let mean_se = |xs: &[f64]| -> (f64, f64) {
            let mean = xs.iter().sum::<f64>() / nb;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            (mean, (var / nb).sqrt())
        };
        let total = |f: &dyn Fn(&Batch) -> f64| measured.iter().map(f).sum::<f64>() / window;

        let (_, stderr_lolp) = mean_se(&per_batch(&|b| b.empty_time.value()));
        let (_, stderr_llr) = mean_se(&per_batch(&|b| b.lost.value()));
        SimulationStats {
            empirical_lolp: total(&|b| b.empty_time.value()).clamp(0.0, 1.0),
            empirical_llr: total(&|b| b.lost.value()),
            empirical_overflow_rate: total(&|b| b.overflow.value()),
            empirical_overflow_prob: total(&|b| b.full_time.value()).clamp(0.0, 1.0),
            stderr_lolp,
            stderr_llr,
            horizon: window,
            total_horizon: self.total_horizon,
            batches: measured.len(),
            seed,
            energy: EnergyLedger {
                b_start: self.b_start,
                b_end: self.b,
                net: self.net.value(),
                lost: self.lost.value(),
                overflow: self.overflow.value(),
                throughput: self.throughput.value(),
            },
        }
    }
}

/// Integrate the battery along a piecewise-constant net-generation path.
pub fn battery_replay(path: &[RateSegment], bmax: f64, opts: &SimOptions) -> Result<SimulationStats> {
    if path.iter().any(|s| !(s.duration >= 0.0) || !s.rate.is_finite()) {
        return Err(Error::Domain(
            "path segments need finite rates and durations >= 0".into(),
        ));
    }
    let horizon: f64 = path.iter().map(|s| s.duration).sum();
    let mut meter = BatteryMeter::new(bmax, horizon, opts)?;
    for s in path {
        meter.push(s.rate, s.duration);
    }
    Ok(meter.finish(None))
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse-CDF draw from a cumulative distribution.
#[inline]
fn draw(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Walk a CTMC path, calling `visit(state, duration)` per interval.
fn walk_ctmc(model: &NetGenModel, horizon: f64, seed: u64, mut visit: impl FnMut(usize, f64)) {
    let n = model.n();
    let q = model.rate_matrix();
    let exit: Vec<f64> = (0..n).map(|i| q.exit_rate(i)).collect();
    let jump_cum: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { q.as_matrix()[(i, j)] / exit[i] })
                .collect();
            cumulative(&row)
        })
        .collect();
    let pi_cum = cumulative(model.pi().as_slice());

    let mut rng = rng_for(seed);
    let mut state = draw(&pi_cum, rng.random::<f64>());
    let mut t = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        let next_t = t + e / exit[state];
        if next_t >= horizon {
            visit(state, horizon - t);
            return;
        }
        visit(state, next_t - t);
        t = next_t;
        state = draw(&jump_cum[state], rng.random::<f64>());
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("horizon must be positive, got {horizon}")))
    }
}

/// Sample a path of the background chain started from its invariant law.
pub fn simulate_ctmc(model: &NetGenModel, horizon: f64, seed: u64) -> Result<Trajectory> {
    check_horizon(horizon)?;
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    let mut t = 0.0;
    walk_ctmc(model, horizon, seed, |s, d| {
        jump_times.push(t);
        states.push(s);
        t += d;
    });
    Ok(Trajectory {
        jump_times,
        states,
        total_horizon: horizon,
    })
}

/// CTMC simulation streamed straight into the battery integrator. Identical
/// to `battery_replay` over the rate segments of `simulate_ctmc(.., seed)`.
pub fn simulate_ctmc_stats(
    model: &NetGenModel,
    bmax: f64,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulationStats> {
    check_horizon(horizon)?;
    let mut meter = BatteryMeter::new(bmax, horizon, opts)?;
    let rates = model.rates();
    walk_ctmc(model, horizon, seed, |s, d| meter.push(rates[s], d));
    Ok(meter.finish(Some(seed)))
}

/// Expected time between jumps of the background chain in steady state.
pub fn mean_holding_time(model: &NetGenModel) -> f64 {
    let q = model.rate_matrix();
    let jump_rate: f64 = (0..model.n()).map(|i| model.pi()[i] * q.exit_rate(i)).sum();
    1.0 / jump_rate
}

fn validate_stochastic(t_matrix: &DMatrix<f64>) -> Result<()> {
    let n = t_matrix.nrows();
    if n == 0 || t_matrix.ncols() != n {
        return Err(Error::Domain("transition matrix must be square and non-empty".into()));
    }
    for (i, row) in t_matrix.row_iter().enumerate() {
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "row {i} of the transition matrix is not stochastic"
            )));
        }
    }
    Ok(())
}

fn slot_count(horizon: f64, tau: f64) -> usize {
    let x = horizon / tau;
    let r = x.round();
    let n = if (x - r).abs() <= 1e-9 * x { r } else { x.ceil() };
    (n as usize).max(1)
}

fn walk_dtmc(t_matrix: &DMatrix<f64>, slots: usize, seed: u64, mut visit: impl FnMut(usize)) -> Result<()> {
    let n = t_matrix.nrows();
    let generator = t_matrix - DMatrix::identity(n, n);
    let pi = invariant_of_generator(&generator)?;
    let pi_cum = cumulative(pi.as_slice());
    let rows: Vec<Vec<f64>> = t_matrix
        .row_iter()
        .map(|r| cumulative(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    let mut rng = rng_for(seed);
    let mut state = draw(&pi_cum, rng.random::<f64>());
    for k in 0..slots {
        if k > 0 {
            state = draw(&rows[state], rng.random::<f64>());
        }
        visit(state);
    }
    Ok(())
}

/// States of a DTMC sampled over `slots` steps, started from its invariant law.
pub fn simulate_dtmc(t_matrix: &DMatrix<f64>, slots: usize, seed: u64) -> Result<Vec<usize>> {
    validate_stochastic(t_matrix)?;
    let mut out = Vec::with_capacity(slots);
    walk_dtmc(t_matrix, slots, seed, |s| out.push(s))?;
    Ok(out)
}

/// DTMC with generation `bin_centers[state]` held for `tau` per slot,
/// against constant `demand`. Runs `ceil(horizon / tau)` slots.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dtmc_replay(
    t_matrix: &DMatrix<f64>,
    tau: f64,
    bin_centers: &[f64],
    demand: f64,
    bmax: f64,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulationStats> {
    validate_stochastic(t_matrix)?;
    check_horizon(horizon)?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if bin_centers.len() != t_matrix.nrows() {
        return Err(Error::Domain("one bin center per DTMC state required".into()));
    }
    let slots = slot_count(horizon, tau);
    let mut meter = BatteryMeter::new(bmax, slots as f64 * tau, opts)?;
    walk_dtmc(t_matrix, slots, seed, |s| meter.push(bin_centers[s] - demand, tau))?;
    Ok(meter.finish(Some(seed)))
}

/// Replay a sampled power trace (held constant over each sample interval)
/// against constant demand.
pub fn trace_replay(
    trace: &[f64],
    sample_interval: f64,
    demand: f64,
    bmax: f64,
    opts: &SimOptions,
) -> Result<SimulationStats> {
    if trace.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    if let Some(i) = trace.iter().position(|&g| !(g >= 0.0 && g.is_finite())) {
        return Err(Error::Domain(format!(
            "trace sample {i} = {} is not a finite non-negative power",
            trace[i]
        )));
    }
    if !(sample_interval > 0.0) {
        return Err(Error::Domain(format!(
            "sample interval must be positive, got {sample_interval}"
        )));
    }
    let mut meter = BatteryMeter::new(bmax, trace.len() as f64 * sample_interval, opts)?;
    for &g in trace {
        meter.push(g - demand, sample_interval);
    }
    Ok(meter.finish(None))
}

/// Statistics pooled over independent replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStats {
    pub runs: usize,
    pub lolp: f64,
    pub llr: f64,
    pub overflow_rate: f64,
    /// Standard error of the mean LOLP across replications.
    pub stderr_lolp: f64,
}

impl PooledStats {
    /// Time-weighted pooling; runs are sorted by seed first so the result
    /// does not depend on completion order.
    pub fn from_runs(runs: &[SimulationStats]) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        let mut sorted: Vec<&SimulationStats> = runs.iter().collect();
        sorted.sort_by_key(|s| s.seed);
        let total_h: f64 = sorted.iter().map(|s| s.horizon).sum();
        let weighted =
            |f: &dyn Fn(&SimulationStats) -> f64| sorted.iter().map(|s| f(s) * s.horizon).sum::<f64>() / total_h;
        let lolp = weighted(&|s| s.empirical_lolp);
        let k = sorted.len() as f64;
        let stderr_lolp = if sorted.len() > 1 {
            let mean = sorted.iter().map(|s| s.empirical_lolp).sum::<f64>() / k;
            let var = sorted.iter().map(|s| (s.empirical_lolp - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            sorted[0].stderr_lolp
        };
        Some(PooledStats {
            runs: sorted.len(),
            lolp,
            llr: weighted(&|s| s.empirical_llr),
            overflow_rate: weighted(&|s| s.empirical_overflow_rate),
            stderr_lolp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_burn_in() -> SimOptions {
        SimOptions {
            b0: None,
            burn_in_fraction: 0.0,
            batches: 2,
        }
    }

    #[test]
    fn constant_discharge_from_full() {
        let opts = SimOptions {
            b0: Some(3.0),
            ..no_burn_in()
        };
        let h = 10.0;
        let s = battery_replay(
            &[RateSegment {
                rate: -0.5,
                duration: h,
            }],
            3.0,
            &opts,
        )
        .unwrap();
        // empty at t = 6
        assert!((s.empirical_lolp - (h - 6.0) / h).abs() < 1e-15);
        assert!((s.empirical_llr - 0.5 * 4.0 / h).abs() < 1e-15);
        assert_eq!(s.empirical_overflow_rate, 0.0);
    }

    #[test]
    fn constant_charge_from_empty() {
        let opts = SimOptions {
            b0: Some(0.0),
            ..no_burn_in()
        };
        let s = battery_replay(
            &[RateSegment {
                rate: 2.0,
                duration: 10.0,
            }],
            4.0,
            &opts,
        )
        .unwrap();
        assert_eq!(s.empirical_lolp, 0.0);
        // full at t = 2
        assert!((s.empirical_overflow_prob - 0.8).abs() < 1e-15);
        assert!((s.empirical_overflow_rate - 2.0 * 8.0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn segments_are_split_at_batch_boundaries() {
        let opts = SimOptions {
            b0: Some(1.0),
            burn_in_fraction: 0.0,
            batches: 4,
        };
        // one long segment: empty after 1 time unit, horizon 8
        let s = battery_replay(
            &[RateSegment {
                rate: -1.0,
                duration: 8.0,
            }],
            1.0,
            &opts,
        )
        .unwrap();
        assert!((s.empirical_lolp - 7.0 / 8.0).abs() < 1e-15);
        // batch fractions: 0.5, 1, 1, 1
        let mean = 3.5 / 4.0;
        let var = ((0.5f64 - mean).powi(2) + 3.0 * (1.0f64 - mean).powi(2)) / 3.0;
        assert!((s.stderr_lolp - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn burn_in_excluded() {
        let opts = SimOptions {
            b0: Some(0.0),
            burn_in_fraction: 0.5,
            batches: 2,
        };
        let path = [
            RateSegment {
                rate: -1.0,
                duration: 5.0,
            },
            RateSegment {
                rate: 1.0,
                duration: 5.0,
            },
        ];
        let s = battery_replay(&path, 100.0, &opts).unwrap();
        assert_eq!(s.empirical_lolp, 0.0);
        assert_eq!(s.horizon, 5.0);
        assert!(s.energy.residual().abs() < 1e-15);
        assert_eq!(s.energy.lost, 5.0);
    }

    #[test]
    fn option_validation() {
        let seg = [RateSegment {
            rate: 1.0,
            duration: 1.0,
        }];
        let bad_b0 = SimOptions {
            b0: Some(2.0),
            ..SimOptions::default()
        };
        assert!(battery_replay(&seg, 1.0, &bad_b0).is_err());
        let one_batch = SimOptions {
            batches: 1,
            ..SimOptions::default()
        };
        assert!(battery_replay(&seg, 1.0, &one_batch).is_err());
        assert!(trace_replay(&[], 1.0, 1.0, 1.0, &SimOptions::default()).is_err());
        assert!(trace_replay(&[-1.0], 1.0, 1.0, 1.0, &SimOptions::default()).is_err());
    }

    #[test]
    fn constant_traces() {
        let opts = SimOptions {
            b0: Some(0.0),
            ..SimOptions::default()
        };
        let s = trace_replay(&vec![3.0; 1000], 1.0, 1.0, 5.0, &opts).unwrap();
        assert_eq!(s.empirical_lolp, 0.0);
        let s = trace_replay(&vec![0.5; 1000], 1.0, 1.0, 5.0, &opts).unwrap();
        assert!((s.empirical_lolp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slot_count_rounds_sensibly() {
        assert_eq!(slot_count(10.0 * 0.1, 0.1), 10);
        assert_eq!(slot_count(1.05, 0.1), 11);
        assert_eq!(slot_count(0.01, 0.1), 1);
    }
}
