//! Bundled data-generating processes.

use crate::dgp::{bern, CondTable, Dgp, Drift, Parent};
use crate::error::{Error, Result};
use crate::panel::SCHEMA_VERSION;
use crate::window::Var;

pub const NAMES: [&str; 8] = [
    "null-effect",
    "tdc-on",
    "covid-toy",
    "transport",
    "transport-drift",
    "overlap-gap",
    "exposure",
    "exposure-lagged",
];

/// Drift time of `transport-drift`: the first period after a 60-period panel.
pub const DRIFT_TAU: usize = 61;

pub fn named(name: &str) -> Result<Dgp> {
    let d = match name {
        "null-effect" => null_effect(),
        "tdc-on" => tdc_on(),
        "covid-toy" => covid_toy(),
        "transport" => transport(),
        "transport-drift" => transport_drift(),
        "overlap-gap" => overlap_gap(),
        "exposure" => exposure(),
        "exposure-lagged" => exposure_lagged(),
        _ => return Err(Error::Dgp(format!("unknown dgp {name:?}; bundled: {}", NAMES.join(", ")))),
    };
    Ok(d)
}

fn p(var: Var, lag: usize) -> Parent {
    Parent::new(var, lag)
}

fn base(name: &str, x_levels: u32, s_grid: Vec<f64>, y_grid: Vec<f64>) -> Dgp {
    Dgp {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        x_levels,
        s_grid,
        y_grid,
        covariate: CondTable { parents: vec![], rows: vec![] },
        treatment: None,
        exposure: None,
        outcome: CondTable { parents: vec![], rows: vec![] },
        time_dependent_confounding: false,
        modifier_drift: Drift::None,
    }
}

fn markov_x(stay: f64) -> CondTable {
    CondTable::from_fn(vec![p(Var::X, 1)], &[2], |v| bern(if v[0] == 1 { stay } else { 1.0 - stay }))
}

/// Outcome ignores treatment and exposure.
fn null_effect() -> Dgp {
    let mut d = base("null-effect", 2, vec![0.0, 1.0, 2.0], vec![0.0, 1.0]);
    d.covariate = markov_x(0.7);
    d.treatment = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::X, 1)], &[2, 2], |v| {
        bern(0.2 + 0.2 * f64::from(v[0]) + 0.1 * f64::from(v[1]))
    }));
    d.exposure = Some(CondTable::from_fn(vec![p(Var::X, 0)], &[2], |v| {
        if v[0] == 0 {
            vec![0.5, 0.3, 0.2]
        } else {
            vec![0.2, 0.3, 0.5]
        }
    }));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::Y, 1)], &[2, 2], |v| {
        bern(0.2 + 0.3 * f64::from(v[0]) + 0.2 * f64::from(v[1]))
    });
    d
}

/// Treatment lowers next-period severity, severity drives both treatment and
/// outcome.
fn tdc_on() -> Dgp {
    let mut d = base("tdc-on", 2, vec![0.0], vec![0.0, 1.0]);
    d.covariate = CondTable::from_fn(vec![p(Var::X, 1), p(Var::Z, 1)], &[2, 2], |v| {
        bern(match (v[0], v[1]) {
            (0, 0) => 0.45,
            (0, _) => 0.2,
            (_, 0) => 0.7,
            _ => 0.45,
        })
    });
    d.treatment = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::Y, 1)], &[2, 2], |v| {
        bern(0.1 + 0.1 * f64::from(v[0]) + 0.1 * f64::from(v[1]))
    }));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::Z, 0), p(Var::Y, 1)], &[2, 2, 2], |v| {
        bern(0.2 + 0.45 * f64::from(v[0]) - 0.1 * f64::from(v[1]) + 0.1 * f64::from(v[2]))
    });
    d.time_dependent_confounding = true;
    d
}

/// Epidemic phase (low, growth, peak), lockdowns, reproduction-number bins and
/// death levels.
fn covid_toy() -> Dgp {
    let mut d = base("covid-toy", 3, vec![0.5, 1.0, 1.5], vec![0.0, 1.0, 2.0]);
    // phase moves up under high reproduction numbers and down under low ones
    d.covariate = CondTable::from_fn(vec![p(Var::X, 1), p(Var::S, 1)], &[3, 3], |v| {
        let (phase, re) = (v[0], v[1]);
        match (phase, re) {
            (0, 0) => vec![0.9, 0.1, 0.0],
            (0, 1) => vec![0.7, 0.3, 0.0],
            (0, _) => vec![0.4, 0.6, 0.0],
            (1, 0) => vec![0.5, 0.4, 0.1],
            (1, 1) => vec![0.2, 0.5, 0.3],
            (1, _) => vec![0.05, 0.35, 0.6],
            (_, 0) => vec![0.1, 0.5, 0.4],
            (_, 1) => vec![0.0, 0.3, 0.7],
            _ => vec![0.0, 0.1, 0.9],
        }
    });
    d.treatment = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::Y, 1)], &[3, 3], |v| {
        bern((0.02 + 0.2 * f64::from(v[0]) + 0.15 * f64::from(v[1])).min(0.9))
    }));
    d.exposure = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::Z, 0)], &[3, 2], |v| {
        match (v[0], v[1]) {
            (0, 0) => vec![0.3, 0.5, 0.2],
            (0, _) => vec![0.7, 0.25, 0.05],
            (1, 0) => vec![0.15, 0.45, 0.4],
            (1, _) => vec![0.6, 0.3, 0.1],
            (_, 0) => vec![0.1, 0.4, 0.5],
            _ => vec![0.5, 0.35, 0.15],
        }
    }));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::Y, 1)], &[3, 3], |v| {
        match (v[0], v[1]) {
            (0, 0) => vec![0.9, 0.1, 0.0],
            (0, 1) => vec![0.6, 0.35, 0.05],
            (0, _) => vec![0.3, 0.5, 0.2],
            (1, 0) => vec![0.6, 0.35, 0.05],
            (1, 1) => vec![0.3, 0.55, 0.15],
            (1, _) => vec![0.15, 0.5, 0.35],
            (_, 0) => vec![0.3, 0.5, 0.2],
            (_, 1) => vec![0.1, 0.5, 0.4],
            _ => vec![0.05, 0.3, 0.65],
        }
    });
    d.time_dependent_confounding = true;
    d
}

fn transport_outcome(effect: impl Fn(u32) -> f64) -> CondTable {
    CondTable::from_fn(vec![p(Var::X, 0), p(Var::Z, 0), p(Var::Y, 1)], &[2, 2, 2], move |v| {
        let base = 0.3 + 0.3 * f64::from(v[0]) + 0.15 * f64::from(v[2]);
        bern(base + f64::from(v[1]) * effect(v[0]))
    })
}

/// Same-period treatment whose effect is modified by the covariate.
fn transport() -> Dgp {
    let mut d = base("transport", 2, vec![0.0], vec![0.0, 1.0]);
    d.covariate = markov_x(0.7);
    d.treatment = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::X, 1)], &[2, 2], |v| {
        bern(0.25 + 0.2 * f64::from(v[0]) + 0.1 * f64::from(v[1]))
    }));
    d.outcome = transport_outcome(|x| -(0.05 + 0.3 * f64::from(x)));
    d
}

/// `transport` whose treatment effect reverses at `DRIFT_TAU`.
fn transport_drift() -> Dgp {
    let mut d = transport();
    d.name = "transport-drift".into();
    d.modifier_drift = Drift::Shift { tau: DRIFT_TAU, covariate: None, outcome: Some(transport_outcome(|_| 0.2)) };
    d
}

/// `transport` on a three-level covariate whose last level is never reached.
fn overlap_gap() -> Dgp {
    let mut d = base("overlap-gap", 3, vec![0.0], vec![0.0, 1.0]);
    d.covariate = CondTable::from_fn(vec![p(Var::X, 1)], &[3], |v| match v[0] {
        0 => vec![0.7, 0.3, 0.0],
        1 => vec![0.3, 0.7, 0.0],
        _ => vec![0.5, 0.5, 0.0],
    });
    let lvl = |x: u32| f64::from(x.min(1));
    d.treatment = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::X, 1)], &[3, 3], move |v| {
        bern(0.25 + 0.2 * lvl(v[0]) + 0.1 * lvl(v[1]))
    }));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::Z, 0), p(Var::Y, 1)], &[3, 2, 2], move |v| {
        let x = lvl(v[0]);
        bern(0.3 + 0.3 * x + 0.15 * f64::from(v[2]) - f64::from(v[1]) * (0.05 + 0.3 * x))
    });
    d
}

fn exposure_by_state(x: u32, y: u32) -> Vec<f64> {
    match (x, y) {
        (0, 0) => vec![0.5, 0.3, 0.2],
        (0, _) => vec![0.4, 0.35, 0.25],
        (_, 0) => vec![0.25, 0.35, 0.4],
        _ => vec![0.2, 0.3, 0.5],
    }
}

/// Same-period exposure on three levels with a monotone response.
fn exposure() -> Dgp {
    let mut d = base("exposure", 2, vec![0.0, 1.0, 2.0], vec![0.0, 1.0]);
    d.covariate = markov_x(0.7);
    d.exposure = Some(CondTable::from_fn(vec![p(Var::X, 0), p(Var::Y, 1)], &[2, 2], |v| exposure_by_state(v[0], v[1])));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::S, 0), p(Var::Y, 1)], &[2, 3, 2], |v| {
        let (x, s, y) = (f64::from(v[0]), f64::from(v[1]), f64::from(v[2]));
        bern(0.1 + 0.2 * x + 0.1 * y + 0.15 * s + 0.05 * x * s)
    });
    d.time_dependent_confounding = true;
    d
}

/// Exposure with its own lag; the outcome responds to two exposure periods.
fn exposure_lagged() -> Dgp {
    let mut d = base("exposure-lagged", 2, vec![0.0, 1.0, 2.0], vec![0.0, 1.0]);
    d.covariate = markov_x(0.7);
    d.exposure = Some(CondTable::from_fn(vec![p(Var::S, 1), p(Var::X, 0), p(Var::Y, 1)], &[3, 2, 2], |v| {
        let mut row = exposure_by_state(v[1], v[2]);
        // persistence: shift a tenth of the mass onto the previous level
        for r in row.iter_mut() {
            *r *= 0.9;
        }
        row[v[0] as usize] += 0.1;
        row
    }));
    d.outcome = CondTable::from_fn(vec![p(Var::X, 0), p(Var::S, 0), p(Var::S, 1)], &[2, 3, 3], |v| {
        let (x, s0, s1) = (f64::from(v[0]), f64::from(v[1]), f64::from(v[2]));
        bern(0.1 + 0.25 * x + 0.12 * s0 + 0.08 * s1)
    });
    d.time_dependent_confounding = true;
    d
}
