#![allow(dead_code)]

use fluidq::random::{random_reversible_model, DriftSign};
use fluidq::NetGenModel;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn model(seed: u64, n: usize, sign: DriftSign) -> NetGenModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_reversible_model(&mut rng, n, sign)
}

/// `R^-1 Q^T`, built directly from the model data.
pub fn generator_over_rates(m: &NetGenModel) -> DMatrix<f64> {
    let q = m.rate_matrix().as_matrix();
    let n = m.n();
    DMatrix::from_fn(n, n, |i, j| q[(j, i)] / m.rates()[i])
}

/// Invariant law by power iteration on `I + Q / q` with `q` twice the
/// largest exit rate (aperiodic, so iteration converges).
pub fn pi_by_power_iteration(q: &DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    let rate = 2.0 * (0..n).map(|i| -q[(i, i)]).fold(0.0, f64::max);
    let p = DMatrix::identity(n, n) + q / rate;
    let pt = p.transpose();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let w = &pt * &v;
        let done = (&w - &v).amax() < 1e-17;
        v = w;
        if done {
            break;
        }
    }
    let s = v.sum();
    v / s
}

/// Adaptive Dormand-Prince 5(4) integration of `Y' = A Y` from `0` to each
/// point of `xs` (increasing), starting at `Y(0) = y0`.
pub fn integrate_linear(a: &DMatrix<f64>, y0: &DMatrix<f64>, xs: &[f64], rtol: f64, atol: f64) -> Vec<DMatrix<f64>> {
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    // autonomous, so stage times are not needed
    let f = |y: &DMatrix<f64>| a * y;
    let mut out = Vec::with_capacity(xs.len());
    let mut x = 0.0;
    let mut y = y0.clone();
    let mut h: f64 = 1e-3;
    for &target in xs {
        while x < target {
            let step = h.min(target - x);
            let k1 = f(&y);
            let k2 = f(&(&y + &k1 * (step * A21)));
            let k3 = f(&(&y + &k1 * (step * A31) + &k2 * (step * A32)));
            let k4 = f(&(&y + &k1 * (step * A41) + &k2 * (step * A42) + &k3 * (step * A43)));
            let k5 = f(&(&y + &k1 * (step * A51) + &k2 * (step * A52) + &k3 * (step * A53) + &k4 * (step * A54)));
            let k6 = f(&(&y
                + &k1 * (step * A61)
                + &k2 * (step * A62)
                + &k3 * (step * A63)
                + &k4 * (step * A64)
                + &k5 * (step * A65)));
            let y_new = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * step;
            let k7 = f(&y_new);
            let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * step;
            let scale = y.abs().sup(&y_new.abs()) * rtol + DMatrix::from_element(y.nrows(), y.ncols(), atol);
            let ratio = err.component_div(&scale).amax();
            if ratio <= 1.0 {
                x += step;
                y = y_new;
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = step * factor;
        }
        out.push(y.clone());
    }
    out
}
