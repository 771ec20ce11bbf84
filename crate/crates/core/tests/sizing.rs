mod common;

use fluidq::random::DriftSign;
use fluidq::sizing::{size_exact_with, SizingOptions};
use fluidq::{
    decay_rate_eig, incremental_size, reliability_at, size_estimate, size_exact, size_report, two_state_lolp, Error,
    NetGenModel,
};

fn two_state() -> NetGenModel {
    NetGenModel::two_state(1.0, 1.0, 3.0, 1.0).unwrap()
}

#[test]
fn offset_is_constant_in_the_tail() {
    let m = two_state();
    let lambda = decay_rate_eig(&m).unwrap();
    let offsets: Vec<f64> = [1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&d| size_exact(&m, d).unwrap() - size_estimate(lambda, d).unwrap())
        .collect();
    for w in offsets.windows(2) {
        assert!(((w[0] - w[1]) / w[1]).abs() < 0.02, "{offsets:?}");
    }
    // LOLP ~ exp(-lambda b) / 4 here, so the offset tends to -ln(4) / lambda
    let limit = -(4f64.ln()) / lambda;
    assert!(((offsets[2] - limit) / limit).abs() < 1e-3);
}

#[test]
fn increments_match_the_decay_rate() {
    for seed in 0..5 {
        let m = common::model(700 + seed, 3 + seed as usize, DriftSign::Positive);
        let lambda = decay_rate_eig(&m).unwrap();
        let no_battery: f64 = m.negative_states().iter().map(|&i| m.pi()[i]).sum();
        let base = 1e-3 * no_battery;
        let b0 = size_exact(&m, base).unwrap();
        for eps in [0.1, 0.01] {
            let step = size_exact(&m, base * eps).unwrap() - b0;
            let est = incremental_size(lambda, eps).unwrap();
            assert!(
                ((step - est) / est).abs() < 0.05,
                "seed {seed} eps {eps}: {step} vs {est}"
            );
        }
    }
}

#[test]
fn exact_size_decreases_with_target() {
    let m = common::model(710, 4, DriftSign::Positive);
    let mut prev = 0.0;
    for k in 1..=8 {
        let b = size_exact(&m, 10f64.powi(-k)).unwrap();
        assert!(b > prev);
        prev = b;
    }
}

#[test]
fn exact_size_inverts_the_solver() {
    let b = size_exact(&two_state(), 0.11269984).unwrap();
    assert!((b - 2.0).abs() < 1e-6, "{b}");
    let want = two_state_lolp(1.0, 1.0, 3.0, 1.0, 2.0).unwrap();
    assert!((size_exact(&two_state(), want).unwrap() - 2.0).abs() < 1e-8);
}

#[test]
fn targets_below_the_bound_are_unattainable() {
    let m = NetGenModel::two_state(1.0, 1.0, 1.5, 1.0).unwrap();
    match size_exact(&m, 0.1) {
        Err(Error::Unattainable { bound, .. }) => assert!((bound - 0.25).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
    // above the bound the default refuses, the option bisects
    assert!(matches!(size_exact(&m, 0.3), Err(Error::DriftSign { .. })));
    let opts = SizingOptions {
        allow_negative_drift: true,
    };
    let b = size_exact_with(&m, 0.3, &opts).unwrap();
    assert!((reliability_at(&m, b).unwrap().lolp - 0.3).abs() < 1e-6);
}

#[test]
fn report_fields_are_consistent() {
    let m = two_state();
    let r = size_report(&m, 1e-4, true).unwrap();
    assert_eq!(r.estimate_bmax, -(1e-4f64).ln() / r.lambda);
    let exact = r.exact_bmax.unwrap();
    assert_eq!(r.offset, Some(exact - r.estimate_bmax));
    assert!(size_report(&m, 1e-4, false).unwrap().exact_bmax.is_none());
}
