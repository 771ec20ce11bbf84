use std::path::PathBuf;

use fluidq::fit::fit_segments;
use fluidq::io::{parse_json, read_text, to_json, write_model, write_text, FitDocument, TimeWindow};
use fluidq::sim::{mean_holding_time, PooledStats};
use fluidq::sizing::{size_exact_with, SizingOptions};
use fluidq::{
    decay_report, incremental_size, lolp_lower_bound, reliability, reliability_at, simulate_ctmc_stats,
    simulate_dtmc_replay, size_report, solve_stationary, trace_replay, uniformize, BinningSpec, Error, FitOptions,
    NetGenModel, Result, SimOptions, SimulationStats, Trace, Units,
};
use nalgebra::DMatrix;

use crate::config::{load, DecayConfig, Loaded, SimMode, SimulateConfig};
use crate::table::{num, Table};
use crate::{Common, EnergyUnits};

/// Standard normal quantile for two-sided 95% intervals.
const Z95: f64 = 1.959963984540054;

struct Energy {
    factor: f64,
    label: String,
}

impl Energy {
    fn new(units: Units, choice: EnergyUnits) -> Self {
        match choice {
            EnergyUnits::Native => Energy {
                factor: 1.0,
                label: format!("{}*{}", units.power.as_str(), units.time.as_str()),
            },
            EnergyUnits::Kwh => Energy {
                factor: units.energy_to_kwh(1.0),
                label: "kWh".into(),
            },
        }
    }

    fn fmt(&self, e: f64) -> String {
        num(e * self.factor)
    }
}

fn setup(c: &Common) -> Result<Loaded> {
    load(&c.config, &c.overrides)
}

fn out_path(c: &Common) -> Option<PathBuf> {
    c.out.clone()
}

fn load_model(cfg: &Loaded) -> Result<(NetGenModel, Units)> {
    let src = cfg.section(&cfg.config.model, "model")?;
    match (&src.path, &src.two_state) {
        (Some(p), None) => fluidq::io::read_model(&cfg.resolve(p)),
        (None, Some(t)) => Ok((NetGenModel::two_state(t.a, t.b, t.g, t.d)?, Units::default())),
        _ => Err(Error::Parse(
            "[model] needs exactly one of `path` or `two_state`".into(),
        )),
    }
}

fn drift_sign(d: f64) -> &'static str {
    if d > 0.0 {
        "positive"
    } else {
        "negative"
    }
}

pub fn fit(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let f = cfg.section(&cfg.config.fit, "fit")?;
    let trace = Trace::read(&cfg.resolve(&f.trace))?;
    let binning = match &f.edges {
        Some(e) => BinningSpec::new(e.clone())?,
        None => BinningSpec::wind_mw(),
    };
    let window = TimeWindow {
        months: f.months.clone(),
        hours: f.hours.map(|[a, b]| (a, b)),
    };
    window.validate()?;
    let segments = trace.segments(&window);
    if segments.is_empty() {
        return Err(Error::InsufficientData(
            "no trace samples fall inside the time window".into(),
        ));
    }
    let opts = FitOptions {
        pseudo_count: f.pseudo_count,
        min_transitions: f.min_transitions,
    };
    let (fitted, model) = fit_segments(&segments, trace.interval, &binning, f.demand, &opts)?;

    let units = Units::default();
    write_model(&cfg.resolve(&f.model_out), &model, units)?;
    if let Some(p) = &f.report_out {
        write_text(
            &cfg.resolve(p),
            &to_json(&FitDocument::new(&fitted, &model, f.demand, units)),
        )?;
    }
    for w in &fitted.warnings {
        eprintln!("warning: {w}");
    }

    let mut t = Table::new("fit", &cfg.sha256, &["state", "label", "center_mw", "rate_mw", "pi"]);
    let d = model.drift();
    t.meta("drift_mw", num(d));
    t.meta("drift_sign", drift_sign(d));
    t.meta("positive_states", model.positive_states().len());
    t.meta("negative_states", model.negative_states().len());
    t.meta("tau_s", num(fitted.tau));
    t.meta("taylor_parameter", num(fitted.taylor_parameter()));
    t.meta("dropped_bins", format!("{:?}", fitted.dropped_states));
    t.meta("warnings", fitted.warnings.len());
    let centers = fitted.centers();
    let labels = fitted.labels();
    for (i, bin) in fitted.retained.iter().enumerate() {
        t.row(vec![
            bin.to_string(),
            labels[i].clone(),
            num(centers[i]),
            num(model.rates()[i]),
            num(model.pi()[i]),
        ]);
    }
    t.emit(out_path(c).as_deref())
}

pub fn solve(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let s = cfg.section(&cfg.config.solve, "solve")?;
    let grid = s.bmax_values()?;
    let (model, units) = load_model(&cfg)?;
    let energy = Energy::new(units, c.units);

    let mut header = vec!["bmax", "lolp", "llr", "overflow_prob"];
    if s.log_lolp {
        header.push("log_lolp");
    }
    let mut t = Table::new("solve", &cfg.sha256, &header);
    t.meta("energy_unit", &energy.label);
    let d = model.drift();
    t.meta("drift", num(d));
    if d < 0.0 {
        let bound = lolp_lower_bound(&model)?;
        t.meta("lolp_lower_bound", num(bound.value));
        t.meta("bound_tight", bound.tight);
        eprintln!(
            "negative drift: LOLP >= {} at every size (tight: {})",
            bound.value, bound.tight
        );
    }
    for &b in &grid {
        let r = reliability(&solve_stationary(&model, b)?);
        let mut row = vec![energy.fmt(b), num(r.lolp), num(r.llr), num(r.overflow_prob)];
        if s.log_lolp {
            row.push(num(r.lolp.ln()));
        }
        t.row(row);
    }
    t.emit(out_path(c).as_deref())
}

pub fn decay(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let default = DecayConfig {
        samples: 64,
        report_out: None,
    };
    let dc = cfg.config.decay.as_ref().unwrap_or(&default);
    let (model, _) = load_model(&cfg)?;
    let r = decay_report(&model, dc.samples)?;
    if let Some(p) = &dc.report_out {
        write_text(&cfg.resolve(p), &to_json(&r))?;
    }
    let mut t = Table::new("decay", &cfg.sha256, &["theta", "cgf"]);
    t.meta("lambda_eig", num(r.lambda_eig));
    t.meta("lambda_ld", num(r.lambda_ld));
    t.meta("agreement_gap", num(r.agreement_gap));
    t.meta("q_rate", num(r.q_rate));
    for &(theta, v) in &r.cgf_samples {
        t.row(vec![num(theta), num(v)]);
    }
    t.emit(out_path(c).as_deref())
}

fn sim_row(s: &SimulationStats) -> Vec<String> {
    vec![
        s.seed.map(|x| x.to_string()).unwrap_or_default(),
        num(s.horizon),
        num(s.empirical_lolp),
        num(s.stderr_lolp),
        num(s.empirical_lolp - Z95 * s.stderr_lolp),
        num(s.empirical_lolp + Z95 * s.stderr_lolp),
        num(s.empirical_llr),
        num(s.stderr_llr),
        num(s.empirical_overflow_prob),
        num(s.empirical_overflow_rate),
    ]
}

pub fn simulate(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let s = cfg.section(&cfg.config.simulate, "simulate")?;
    let opts = SimOptions {
        b0: s.b0,
        burn_in_fraction: s.burn_in,
        batches: s.batches,
    };
    let mut seeds = s.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let header = [
        "seed",
        "horizon",
        "lolp",
        "stderr_lolp",
        "lolp_ci95_low",
        "lolp_ci95_high",
        "llr",
        "stderr_llr",
        "overflow_prob",
        "overflow_rate",
    ];
    let mut t = Table::new("simulate", &cfg.sha256, &header);
    let mode = match s.mode {
        SimMode::Ctmc => "ctmc",
        SimMode::Dtmc => "dtmc",
        SimMode::Trace => "trace",
    };
    t.meta("mode", mode);

    let runs: Vec<SimulationStats> = match s.mode {
        SimMode::Trace => {
            let p = s
                .trace
                .as_ref()
                .ok_or_else(|| Error::Parse("trace mode needs `simulate.trace`".into()))?;
            let demand = s
                .demand
                .ok_or_else(|| Error::Parse("trace mode needs `simulate.demand`".into()))?;
            let trace = Trace::read(&cfg.resolve(p))?;
            let energy = Energy::new(Units::default(), c.units);
            t.meta("energy_unit", &energy.label);
            t.meta("bmax", energy.fmt(s.bmax));
            vec![trace_replay(&trace.power, trace.interval, demand, s.bmax, &opts)?]
        }
        SimMode::Ctmc | SimMode::Dtmc => {
            let (units, chain) = match (&s.fit_report, s.mode) {
                (Some(p), SimMode::Dtmc) => {
                    let doc: FitDocument = parse_json(&read_text(&cfg.resolve(p))?, "fit report")?;
                    (doc.model.units, Chain::Fitted(doc))
                }
                _ => {
                    let (m, u) = load_model(&cfg)?;
                    (u, Chain::Model(m))
                }
            };
            let energy = Energy::new(units, c.units);
            t.meta("energy_unit", &energy.label);
            t.meta("bmax", energy.fmt(s.bmax));
            let horizon = match (s.horizon, s.holding_times) {
                (Some(h), _) => h,
                (None, Some(k)) => k * chain.mean_holding_time()?,
                (None, None) => {
                    return Err(Error::Parse("simulate needs `horizon` or `holding_times`".into()));
                }
            };
            if let Chain::Model(m) = &chain {
                if let Ok(r) = reliability_at(m, s.bmax) {
                    t.meta("solver_lolp", num(r.lolp));
                }
            }
            seeds
                .iter()
                .map(|&seed| chain.run(s.mode, s, horizon, seed, &opts))
                .collect::<Result<_>>()?
        }
    };
    for r in &runs {
        t.row(sim_row(r));
    }
    if runs.len() > 1 {
        let p = PooledStats::from_runs(&runs).expect("non-empty");
        let total: f64 = runs.iter().map(|r| r.horizon).sum();
        t.row(vec![
            "pooled".into(),
            num(total),
            num(p.lolp),
            num(p.stderr_lolp),
            num(p.lolp - Z95 * p.stderr_lolp),
            num(p.lolp + Z95 * p.stderr_lolp),
            num(p.llr),
            String::new(),
            String::new(),
            num(p.overflow_rate),
        ]);
    }
    t.emit(out_path(c).as_deref())
}

enum Chain {
    Model(NetGenModel),
    Fitted(FitDocument),
}

impl Chain {
    fn mean_holding_time(&self) -> Result<f64> {
        match self {
            Chain::Model(m) => Ok(mean_holding_time(m)),
            Chain::Fitted(doc) => Ok(mean_holding_time(&doc.model.to_model()?)),
        }
    }

    fn run(
        &self,
        mode: SimMode,
        s: &SimulateConfig,
        horizon: f64,
        seed: u64,
        opts: &SimOptions,
    ) -> Result<SimulationStats> {
        match (self, mode) {
            (Chain::Model(m), SimMode::Ctmc) => simulate_ctmc_stats(m, s.bmax, horizon, seed, opts),
            (Chain::Model(m), _) => {
                let u = uniformize(m.rate_matrix(), s.q_rate)?;
                // centers equal to the rates at zero demand keep each state's rate
                simulate_dtmc_replay(&u.p_matrix, 1.0 / u.q_rate, m.rates(), 0.0, s.bmax, horizon, seed, opts)
            }
            (Chain::Fitted(doc), _) => {
                let binning = doc.binning()?;
                let centers = binning.centers();
                let retained: Vec<f64> = doc.retained.iter().map(|&i| centers[i]).collect();
                let n = doc.t_matrix.len();
                if doc.t_matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Parse("fit report: t_matrix is not square".into()));
                }
                let t = DMatrix::from_fn(n, n, |i, j| doc.t_matrix[i][j]);
                let demand = s.demand.unwrap_or(doc.demand);
                simulate_dtmc_replay(&t, doc.tau, &retained, demand, s.bmax, horizon, seed, opts)
            }
        }
    }
}

pub fn size(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let sc = cfg.section(&cfg.config.size, "size")?;
    if sc.delta.is_empty() {
        return Err(Error::Parse("size needs at least one `delta`".into()));
    }
    let (model, units) = load_model(&cfg)?;
    let energy = Energy::new(units, c.units);
    let mut t = Table::new(
        "size",
        &cfg.sha256,
        &["kind", "target", "lambda", "estimate_bmax", "exact_bmax", "offset"],
    );
    t.meta("energy_unit", &energy.label);
    let d = model.drift();
    t.meta("drift", num(d));
    let e = |x: Option<f64>| x.map(|v| energy.fmt(v)).unwrap_or_default();

    if d < 0.0 {
        let bound = lolp_lower_bound(&model)?;
        t.meta("lolp_lower_bound", num(bound.value));
        if !sc.allow_negative_drift {
            // reports an unattainable target before the drift sign
            for &delta in &sc.delta {
                fluidq::size_exact(&model, delta)?;
            }
            return Err(Error::DriftSign {
                what: "decay-rate sizing",
                required: "positive",
                drift: d,
            });
        }
        eprintln!("warning: negative drift; sizes come from bisection only and no decay-rate estimate exists");
        let opts = SizingOptions {
            allow_negative_drift: true,
        };
        for &delta in &sc.delta {
            let exact = size_exact_with(&model, delta, &opts)?;
            t.row(vec![
                "delta".into(),
                num(delta),
                String::new(),
                String::new(),
                e(Some(exact)),
                String::new(),
            ]);
        }
        return t.emit(out_path(c).as_deref());
    }

    let mut base_exact = None;
    for &delta in &sc.delta {
        let r = size_report(&model, delta, sc.exact)?;
        base_exact.get_or_insert((delta, r.exact_bmax));
        t.row(vec![
            "delta".into(),
            num(delta),
            num(r.lambda),
            e(Some(r.estimate_bmax)),
            e(r.exact_bmax),
            e(r.offset),
        ]);
    }
    if !sc.epsilon.is_empty() {
        let lambda = fluidq::decay_rate_eig(&model)?;
        let (delta0, b0) = base_exact.expect("delta is non-empty");
        t.meta("epsilon_base_delta", num(delta0));
        for &eps in &sc.epsilon {
            let est = incremental_size(lambda, eps)?;
            let exact = match b0 {
                Some(b0) => Some(fluidq::size_exact(&model, delta0 * eps)? - b0),
                None => None,
            };
            let offset = exact.map(|x| x - est);
            t.row(vec![
                "epsilon".into(),
                num(eps),
                num(lambda),
                e(Some(est)),
                e(exact),
                e(offset),
            ]);
        }
    }
    t.emit(out_path(c).as_deref())
}
