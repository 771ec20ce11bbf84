//! Random reversible models for property tests and benchmarks.

use nalgebra::DMatrix;
use rand::Rng;

use crate::ctmc::{NetGenModel, RateMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftSign {
    Positive,
    Negative,
}

/// A random time-reversible chain on `n >= 2` states with nonzero rates of
/// both signs and drift of the requested sign, bounded away from zero.
///
/// Reversibility is built in: with target distribution `pi` and a symmetric
/// conductance matrix `S`, `Q_ij = S_ij / pi_i` satisfies detailed balance.
/// A nearest-neighbour path always has positive conductance, so the chain is
/// irreducible; other pairs are connected with probability 0.6.
pub fn random_reversible_model<R: Rng + ?Sized>(rng: &mut R, n: usize, sign: DriftSign) -> NetGenModel {
    assert!(n >= 2, "need at least two states");
    loop {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();

        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let connected = j == i + 1 || rng.random_bool(0.6);
                if connected {
                    let s = rng.random_range(0.1..1.0) / n as f64;
                    q[(i, j)] = s / pi[i];
                    q[(j, i)] = s / pi[j];
                }
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
            q[(i, i)] = -off;
        }

        let mut rates: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.2..2.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        // force both signs
        rates[0] = rates[0].abs();
        rates[n - 1] = -rates[n - 1].abs();

        let drift: f64 = pi.iter().zip(&rates).map(|(p, r)| p * r).sum();
        let max_abs = rates.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let ok = match sign {
            DriftSign::Positive => drift > 0.05 * max_abs,
            DriftSign::Negative => drift < -0.05 * max_abs,
        };
        if !ok {
            continue;
        }
        let Ok(rm) = RateMatrix::new(q) else { continue };
        if let Ok(m) = NetGenModel::new(rm, rates) {
            return m;
        }
    }
}
