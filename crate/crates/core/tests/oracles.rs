//! Solver results checked against independent computations.

mod common;

use fluidq::fluid::drift_matrix;
use fluidq::random::DriftSign;
use fluidq::{
    cdf, invariant_distribution, reliability, reliability_at, reverse_model, solve_stationary, two_state_lolp,
    NetGenModel,
};
use nalgebra::{DMatrix, DVector};

/// Two-state LOLP written out independently: deficit state 0 (rate `-d`,
/// leaves at rate `a`), surplus state 1 (rate `g - d`, leaves at rate `b`).
fn two_state_oracle(a: f64, b: f64, g: f64, d: f64, bmax: f64) -> f64 {
    let drift = (a * (g - d) - b * d) / (a + b);
    let k = a * (g - d) / (b * d);
    let z = (a + b) * drift / ((g - d) * d);
    (-drift / d) / (1.0 - k * (z * bmax).exp())
}

#[test]
fn two_state_formula_and_solver_agree_with_oracle() {
    for &(a, b, g, d) in &[(1.0, 1.0, 3.0, 1.0), (2.0, 0.5, 2.0, 0.5), (0.5, 2.0, 1.5, 1.0)] {
        for &bmax in &[0.05, 0.7, 3.0] {
            let want = two_state_oracle(a, b, g, d, bmax);
            let closed = two_state_lolp(a, b, g, d, bmax).unwrap();
            assert!(((closed - want) / want).abs() < 1e-12, "closed form {closed} vs {want}");
            let m = NetGenModel::two_state(a, b, g, d).unwrap();
            let solved = reliability_at(&m, bmax).unwrap().lolp;
            assert!(((solved - want) / want).abs() < 1e-9, "solver {solved} vs {want}");
        }
    }
    // bmax = 2 for a = b = 1, g = 3, d = 1 is 0.5 / (2e - 1)
    let v = two_state_oracle(1.0, 1.0, 3.0, 1.0, 2.0);
    assert!((v - 0.5 / (2.0 * std::f64::consts::E - 1.0)).abs() < 1e-15);
}

#[test]
fn invariant_law_matches_power_iteration() {
    for seed in 0..10 {
        let m = common::model(seed, 2 + seed as usize % 7, DriftSign::Positive);
        let pi = invariant_distribution(m.rate_matrix()).unwrap();
        let oracle = common::pi_by_power_iteration(m.rate_matrix().as_matrix());
        assert!((pi - oracle).amax() < 1e-12, "seed {seed}");
    }
}

#[test]
fn drift_matrix_is_r_inverse_q_transpose() {
    let m = common::model(3, 6, DriftSign::Negative);
    assert!((drift_matrix(&m) - common::generator_over_rates(&m)).amax() < 1e-15);
}

/// Shooting: `F(x) = exp(A x) F(0)` with `F_i(0) = 0` on surplus states;
/// the unknown deficit components of `F(0)` are fixed by `F_i(bmax) = pi_i`
/// on deficit states.
fn shoot(m: &NetGenModel, bmax: f64, xs: &[f64]) -> Vec<DVector<f64>> {
    let n = m.n();
    let a = common::generator_over_rates(m);
    let neg = m.negative_states();
    let mut grid = xs.to_vec();
    grid.push(bmax);
    let phis = common::integrate_linear(&a, &DMatrix::identity(n, n), &grid, 1e-13, 1e-16);
    let phi_b = phis.last().unwrap();
    let k = neg.len();
    let sys = DMatrix::from_fn(k, k, |r, c| phi_b[(neg[r], neg[c])]);
    let rhs = DVector::from_iterator(k, neg.iter().map(|&i| m.pi()[i]));
    let c = sys.lu().solve(&rhs).unwrap();
    let mut f0 = DVector::zeros(n);
    for (idx, &i) in neg.iter().enumerate() {
        f0[i] = c[idx];
    }
    phis[..xs.len()].iter().map(|phi| phi * &f0).collect()
}

#[test]
fn solver_matches_ode_shooting() {
    for seed in 0..6 {
        let sign = if seed % 2 == 0 {
            DriftSign::Positive
        } else {
            DriftSign::Negative
        };
        let m = common::model(100 + seed, 5, sign);
        let a = common::generator_over_rates(&m);
        let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for bmax in [0.5 / rho, 4.0 / rho] {
            let xs: Vec<f64> = (0..=40).map(|k| k as f64 / 40.0 * bmax).collect();
            let oracle = shoot(&m, bmax, &xs);
            let sol = solve_stationary(&m, bmax).unwrap();
            let mut sup: f64 = 0.0;
            for (x, want) in xs.iter().zip(&oracle) {
                let got = cdf(&sol, *x).unwrap();
                sup = sup.max((got - want).amax());
            }
            assert!(sup < 1e-7, "seed {seed} bmax {bmax}: sup error {sup:e}");
        }
    }
}

#[test]
fn single_deficit_state_llr_is_rate_times_lolp() {
    let m = NetGenModel::two_state(1.0, 1.0, 3.0, 1.0).unwrap();
    let r = reliability_at(&m, 2.0).unwrap();
    assert!((r.llr - r.lolp).abs() < 1e-15);
}

#[test]
fn reversal_maps_empty_to_full() {
    for seed in 0..8 {
        let m = common::model(200 + seed, 2 + seed as usize % 5, DriftSign::Positive);
        for bmax in [0.1, 1.0, 5.0] {
            let fwd = reliability_at(&m, bmax).unwrap();
            let rev = reliability(&solve_stationary(&reverse_model(&m), bmax).unwrap());
            assert!((fwd.lolp - rev.overflow_prob).abs() < 1e-9, "seed {seed}");
            assert!((fwd.llr - rev.overflow_rate).abs() < 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn no_battery_limit_is_deficit_occupancy() {
    for seed in 0..5 {
        let m = common::model(300 + seed, 4, DriftSign::Positive);
        let want: f64 = m.negative_states().iter().map(|&i| m.pi()[i]).sum();
        let got = reliability_at(&m, 1e-10).unwrap().lolp;
        assert!((got - want).abs() < 1e-8, "seed {seed}: {got} vs {want}");
    }
}
