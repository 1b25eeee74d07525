//! Acceptance criteria checked against the simulator oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gfc_core::dgp::{trajectories, Dgp, Drift, Rec};
use gfc_core::estimate::{estimate_att, AnalysisConfig, Conditioning, ControlConvention, Method};
use gfc_core::exposure::{estimate_aee, forecast_aee_f, marginal_erf, ExposurePolicy, WindowProb};
use gfc_core::forecast::{forecast_att_f, ScenarioSpec};
use gfc_core::oracle::{
    conditional_tv, oracle_aee, oracle_att, oracle_future, r_bar_key, FutureContrast, FutureSet, OracleConfig,
    OracleMethod, Population,
};
use gfc_core::paths::Regime;
use gfc_core::tables::fit_table;
use gfc_core::window::{Var, WindowSpec};
use gfc_core::Error;

use crate::cli::retained;
use crate::error::{CliError, OVERLAP};

pub const CRITERIA: [&str; 10] = [
    "null-effect",
    "g-formula-correctness",
    "degenerate-equivalence",
    "transportability-enumeration",
    "transport-consistency",
    "violation-sensitivity",
    "overlap-refusal",
    "exposure-suite",
    "reproducibility",
    "table-fidelity",
];

const DGPS: [&str; 8] = [
    "null-effect",
    "tdc-on",
    "covid-toy",
    "transport",
    "transport-drift",
    "overlap-gap",
    "exposure",
    "exposure-lagged",
];
const ANALYSES: [&str; 2] = ["one-day", "tdc-on"];
const SCENARIOS: [&str; 4] = ["fixed-time", "backtest", "off-support", "supported"];
const POLICIES: [&str; 4] = ["natural-law", "point-mass", "truncate-below", "triggered"];

/// Enumeration and probability tolerance of the law comparisons.
const TV_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub configs: PathBuf,
    pub oracle_cap: f64,
    pub only: Option<BTreeSet<usize>>,
    pub seed: u64,
}

impl SuiteOptions {
    /// Options reading the configs shipped with the workspace.
    pub fn bundled(seed: u64) -> Self {
        SuiteOptions {
            configs: Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs"),
            oracle_cap: OracleConfig::default().cap,
            only: None,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Configs the suite reads from disk.
pub struct Bundle {
    dgps: BTreeMap<String, Dgp>,
    analyses: BTreeMap<String, AnalysisConfig>,
    scenarios: BTreeMap<String, ScenarioSpec>,
    policies: BTreeMap<String, ExposurePolicy>,
}

fn read<T>(dir: &Path, sub: &str, name: &str, load: impl Fn(&Path) -> gfc_core::Result<T>) -> Result<T, CliError> {
    let path = dir.join(sub).join(format!("{name}.json"));
    if !path.is_file() {
        return Err(CliError::Config(format!("missing bundled config {}", path.display())));
    }
    load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let mut b = Bundle {
            dgps: BTreeMap::new(),
            analyses: BTreeMap::new(),
            scenarios: BTreeMap::new(),
            policies: BTreeMap::new(),
        };
        for n in DGPS {
            b.dgps.insert(n.into(), read(dir, "dgp", n, Dgp::load)?);
        }
        for n in ANALYSES {
            b.analyses.insert(n.into(), read(dir, "analysis", n, AnalysisConfig::load)?);
        }
        for n in SCENARIOS {
            b.scenarios.insert(n.into(), read(dir, "scenarios", n, ScenarioSpec::load)?);
        }
        for n in POLICIES {
            b.policies.insert(n.into(), read(dir, "policies", n, ExposurePolicy::load)?);
        }
        Ok(b)
    }

    fn dgp(&self, n: &str) -> &Dgp {
        &self.dgps[n]
    }

    fn analysis(&self, n: &str, seed: u64) -> AnalysisConfig {
        let mut c = self.analyses[n].clone();
        c.seed = seed;
        c
    }

    fn scenario(&self, n: &str) -> &ScenarioSpec {
        &self.scenarios[n]
    }

    fn policy(&self, n: &str) -> &ExposurePolicy {
        &self.policies[n]
    }
}

type Check = Result<(bool, String), CliError>;

/// Runs the selected criteria in order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<Outcome>, CliError> {
    if let Some(bad) = opts.only.as_ref().and_then(|o| o.iter().find(|&&i| i == 0 || i > CRITERIA.len())) {
        return Err(CliError::Config(format!("no criterion {bad}; criteria are numbered 1 to {}", CRITERIA.len())));
    }
    let bundle = Bundle::load(&opts.configs)?;
    let mut out = Vec::new();
    for (k, name) in CRITERIA.iter().enumerate() {
        let id = k + 1;
        if opts.only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        out.push(run_criterion(id, name, &bundle, opts));
    }
    Ok(out)
}

pub fn run_criterion(id: usize, name: &'static str, b: &Bundle, o: &SuiteOptions) -> Outcome {
    let start = Instant::now();
    let res = match id {
        1 => null_effect(b, o),
        2 => g_formula(b, o),
        3 => degenerate(b, o),
        4 => transportability(b, o),
        5 => transport(b, o),
        6 => violation(b, o),
        7 => overlap(b, o),
        8 => exposure(b, o),
        9 => reproducibility(b, o),
        _ => fidelity(b, o),
    };
    let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn within(v: f64, target: f64, se: f64) -> bool {
    (v - target).abs() <= 3.0 * se + 1e-12
}

fn z(v: f64, target: f64, se: f64) -> f64 {
    (v - target) / se
}

fn null_effect(b: &Bundle, o: &SuiteOptions) -> Check {
    let p = b.dgp("null-effect").simulate(20, 500, o.seed)?;
    let cfg = b.analysis("one-day", o.seed);
    let scen = b.scenario("fixed-time");
    let pol = b.policy("point-mass");
    let att = estimate_att(&p, &cfg)?;
    let attf = forecast_att_f(&p, &cfg, scen)?.estimate;
    let aee = estimate_aee(&p, &cfg, pol)?;
    let aeef = forecast_aee_f(&p, &cfg, scen, pol)?.estimate;
    let mut ok = true;
    let mut detail = String::new();
    for r in [&att, &attf, &aee, &aeef] {
        ok &= within(r.value, 0.0, r.se);
        let _ = write!(detail, "{} {:+.4} (z {:+.2}) ", r.estimand, r.value, z(r.value, 0.0, r.se));
    }
    Ok((ok, detail.trim_end().into()))
}

fn g_formula(b: &Bundle, o: &SuiteOptions) -> Check {
    let d = b.dgp("tdc-on");
    let p = d.simulate(20, 500, o.seed)?;
    let cfg = b.analysis("tdc-on", o.seed);
    let g = estimate_att(&p, &cfg.clone().with_method(Method::Gformula, Conditioning::RBar))?;
    let a = estimate_att(&p, &cfg.clone().with_method(Method::Adjustment, Conditioning::RBarVBar))?;
    let tr = trajectories(&p)?;
    let exact = OracleConfig { cap: o.oracle_cap, allow_mc: false, seed: o.seed, ..OracleConfig::default() };
    let (mapper, spec, conv) = (cfg.mapper(), &cfg.window, ControlConvention::Canonical);
    let ga = retained(&p, &g);
    let og = oracle_att(d, &tr, &ga, &mapper, spec, conv, &exact)?;
    let oa = oracle_att(d, &tr, &retained(&p, &a), &mapper, spec, conv, &exact)?;
    // enumeration against Monte Carlo on a subset of anchors
    let sub = &ga[..ga.len().min(20)];
    let e = oracle_att(d, &tr, sub, &mapper, spec, conv, &exact)?;
    let mc = OracleConfig { cap: 0.0, allow_mc: true, mc_reps: 20_000, seed: o.seed };
    let m = oracle_att(d, &tr, sub, &mapper, spec, conv, &mc)?;
    let cross = e.method == OracleMethod::Enumeration
        && m.method == OracleMethod::MonteCarlo
        && (e.value - m.value).abs() <= 4.0 * m.mc_standard_error;
    let se_g = g.se.hypot(og.mc_standard_error);
    let se_a = a.se.hypot(oa.mc_standard_error);
    let ok = within(g.value, og.value, se_g) && !within(a.value, oa.value, se_a) && cross;
    Ok((
        ok,
        format!(
            "g-formula {:+.4} vs oracle {:+.4} (z {:+.2}); adjustment {:+.4} vs {:+.4} (z {:+.2}); \
             enumeration {:+.4} vs Monte Carlo {:+.4} on {} anchors",
            g.value,
            og.value,
            z(g.value, og.value, se_g),
            a.value,
            oa.value,
            z(a.value, oa.value, se_a),
            e.value,
            m.value,
            sub.len()
        ),
    ))
}

fn degenerate(b: &Bundle, o: &SuiteOptions) -> Check {
    let cfg = b.analysis("one-day", o.seed);
    let mut n = 0;
    for (k, name) in ["null-effect", "tdc-on", "transport", "covid-toy"].iter().enumerate() {
        for seed in 0..3 {
            let p = b.dgp(name).simulate(20, 60, o.seed + 10 * k as u64 + seed)?;
            let g = estimate_att(&p, &cfg.clone().with_method(Method::Gformula, Conditioning::RBar));
            let a = estimate_att(&p, &cfg.clone().with_method(Method::Adjustment, Conditioning::RBar));
            let same = match (&g, &a) {
                (Ok(g), Ok(a)) => {
                    g.value.to_bits() == a.value.to_bits()
                        && g.se.to_bits() == a.se.to_bits()
                        && g.contributions.len() == a.contributions.len()
                        && g.contributions.iter().zip(&a.contributions).all(|(x, y)| {
                            x.unit == y.unit && x.time == y.time && x.imputed.to_bits() == y.imputed.to_bits()
                        })
                }
                (Err(x), Err(y)) => x.to_string() == y.to_string(),
                _ => false,
            };
            if !same {
                return Ok((false, format!("{name} seed {}: estimates differ", o.seed + seed)));
            }
            n += 1;
        }
    }
    Ok((true, format!("{n} panels bitwise identical")))
}

/// Origin of the future population in the enumeration checks.
const ORIGIN: usize = 2;

fn window(t: usize, spec: &WindowSpec) -> (usize, usize) {
    (spec.h(t).expect("anchor after the window"), t - spec.b)
}

type RegimeFn = fn(usize, &WindowSpec) -> Regime;

fn now_treated(t: usize, spec: &WindowSpec) -> Regime {
    let (h, e) = window(t, spec);
    Regime::new().fix_range(Var::Z, h, e, 1)
}

fn now_control(t: usize, spec: &WindowSpec) -> Regime {
    let (h, e) = window(t, spec);
    Regime::new().fix_range(Var::Z, h, e, 0)
}

fn future_treated(t: usize, spec: &WindowSpec) -> Regime {
    let (h, e) = window(t, spec);
    Regime::new().fix_range(Var::Z, ORIGIN + 1, h - 1, 0).fix_range(Var::Z, h, e, 1)
}

fn future_control(t: usize, spec: &WindowSpec) -> Regime {
    let (_, e) = window(t, spec);
    Regime::new().fix_range(Var::Z, ORIGIN + 1, e, 0)
}

fn outcome(p: &[Rec], t: usize) -> Vec<u32> {
    vec![u32::from(p[t - 1].y)]
}

/// Largest conditional total variation of `Y(d)` given the pre-treatment
/// history between observed and future anchors.
fn potential_outcome_tv(d: &Dgp, spec: &WindowSpec, now: usize, future: usize) -> gfc_core::Result<(f64, usize)> {
    let key = r_bar_key(spec);
    let mut worst = (0.0f64, 0);
    let arms: [(RegimeFn, RegimeFn); 2] = [(now_treated, future_treated), (now_control, future_control)];
    for (a, f) in arms {
        let pa = Population { anchors: vec![now], regime: a };
        let pf = Population { anchors: vec![future], regime: f };
        let (tv, n) = conditional_tv(d, spec, &pa, &pf, &key, &outcome, 1e7)?;
        worst = (worst.0.max(tv), worst.1 + n);
    }
    Ok(worst)
}

fn transportability(b: &Bundle, _o: &SuiteOptions) -> Check {
    let k0 = WindowSpec::new(0, 0, 0, 0, 1);
    let k2 = WindowSpec::new(0, 2, 0, 2, 3);
    let (t1, n1) = potential_outcome_tv(b.dgp("transport"), &k0, 4, 5)?;
    let (t2, n2) = potential_outcome_tv(b.dgp("tdc-on"), &k0, 4, 5)?;
    let (t3, n3) = potential_outcome_tv(b.dgp("tdc-on"), &k2, 5, 6)?;
    // negative control: the outcome law shifts before the future anchor
    let mut drift = b.dgp("transport-drift").clone();
    if let Drift::Shift { tau, .. } = &mut drift.modifier_drift {
        *tau = 5;
    }
    let (tc, _) = potential_outcome_tv(&drift, &k0, 4, 5)?;
    let worst = t1.max(t2).max(t3);
    let ok = worst <= TV_TOL && n1.min(n2).min(n3) > 0 && tc > 1e-3;
    Ok((ok, format!("max TV {worst:.2e} over {} strata; shifted control TV {tc:.3}", n1 + n2 + n3)))
}

fn future_att(b: &Bundle, name: &str, scen: &str, o: &SuiteOptions) -> gfc_core::Result<(f64, f64, f64)> {
    let d = b.dgp(name);
    let p = d.simulate(20, 60, o.seed)?;
    let cfg = b.analysis("one-day", o.seed);
    let r = forecast_att_f(&p, &cfg, b.scenario(scen))?;
    let tr = trajectories(&p)?;
    let mapper = cfg.mapper();
    let set = FutureSet { origin: r.origin, anchors: &r.anchors, select: None, gap: None };
    let oc = OracleConfig { cap: o.oracle_cap, allow_mc: false, seed: o.seed, ..OracleConfig::default() };
    let or = oracle_future(d, &tr, &cfg.window, &set, &FutureContrast::Treatment(&mapper), &oc)?;
    Ok((r.estimate.value, r.estimate.se, or.value))
}

fn transport(b: &Bundle, o: &SuiteOptions) -> Check {
    let (v, se, or) = future_att(b, "transport", "fixed-time", o)?;
    let p = b.dgp("transport").simulate(20, 60, o.seed)?;
    let bt = forecast_att_f(&p, &b.analysis("one-day", o.seed), b.scenario("backtest"))?;
    let bt = bt.backtest.ok_or_else(|| Error::Estimation("no back-test comparison".into()))?;
    let ok = within(v, or, se) && within(bt.difference, 0.0, bt.se);
    Ok((
        ok,
        format!(
            "forecast {v:+.4} vs oracle {or:+.4} (z {:+.2}); back-test {:+.4} vs in-sample {:+.4} (z {:+.2})",
            z(v, or, se),
            bt.difference + bt.in_sample,
            bt.in_sample,
            z(bt.difference, 0.0, bt.se)
        ),
    ))
}

fn violation(b: &Bundle, o: &SuiteOptions) -> Check {
    let (v, se, or) = future_att(b, "transport-drift", "fixed-time", o)?;
    Ok((!within(v, or, se), format!("forecast {v:+.4} vs shifted oracle {or:+.4} (z {:+.2})", z(v, or, se))))
}

fn overlap(b: &Bundle, o: &SuiteOptions) -> Check {
    let dir = std::env::temp_dir().join(format!("gfc-overlap-{}-{}", std::process::id(), o.seed));
    let dir_s = dir.display().to_string();
    let code = crate::run([
        "gfc", "simulate", "--dgp", "overlap-gap", "--units", "20", "--horizon", "60", "--seed", "1", "--out", &dir_s,
    ]);
    if code != 0 {
        return Ok((false, format!("simulate exited with {code}")));
    }
    let path = |p: &Path| p.display().to_string();
    let code = crate::run([
        "gfc".to_string(),
        "forecast".into(),
        "--panel".into(),
        path(&dir.join("panel.csv")),
        "--schema".into(),
        path(&dir.join("schema.json")),
        "--config".into(),
        path(&o.configs.join("analysis/one-day.json")),
        "--scenario".into(),
        path(&o.configs.join("scenarios/off-support.json")),
        "--seed".into(),
        o.seed.to_string(),
        "--out".into(),
        path(&dir.join("forecast")),
    ]);
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = b.analysis("one-day", o.seed);
    let mut fixed = b.scenario("fixed-time").clone();
    fixed.n_draws = 200;
    let mut false_refusals = 0;
    for seed in o.seed..o.seed + 20 {
        let p = b.dgp("overlap-gap").simulate(20, 60, seed)?;
        for scen in [b.scenario("supported"), &fixed] {
            match forecast_att_f(&p, &cfg, scen) {
                Err(Error::OverlapRefused { .. }) => false_refusals += 1,
                Err(e) => return Err(e.into()),
                Ok(_) => {}
            }
        }
    }
    Ok((
        code == OVERLAP && false_refusals == 0,
        format!("off-support exit code {code}; {false_refusals} refusals on 40 supported runs"),
    ))
}

fn exposure(b: &Bundle, o: &SuiteOptions) -> Check {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |pass: bool, note: String| {
        ok &= pass;
        notes.push(format!("{}{note}", if pass { "" } else { "FAILED " }));
    };
    let cfg = b.analysis("one-day", o.seed);

    let flat = marginal_erf(&b.dgp("null-effect").simulate(20, 500, o.seed)?, &cfg)?;
    let worst = flat.levels.iter().skip(1).map(|l| z(l.contrast, 0.0, l.contrast_se).abs()).fold(0.0, f64::max);
    check(flat.levels.iter().skip(1).all(|l| within(l.contrast, 0.0, l.contrast_se)), format!("flat ERF max |z| {worst:.2}"));

    let d = b.dgp("exposure");
    let p = d.simulate(20, 60, o.seed)?;
    let tr = trajectories(&p)?;
    let scen = b.scenario("fixed-time");
    let sq = estimate_aee(&p, &cfg, b.policy("natural-law"))?;
    let sqf = forecast_aee_f(&p, &cfg, scen, b.policy("natural-law"))?.estimate;
    check(within(sq.value, 0.0, sq.se) && within(sqf.value, 0.0, sqf.se), format!("status quo {:+.1e}/{:+.1e}", sq.value, sqf.value));

    let oc = OracleConfig { cap: o.oracle_cap, allow_mc: false, seed: o.seed, ..OracleConfig::default() };
    for name in ["point-mass", "truncate-below"] {
        let pol = b.policy(name);
        let op = pol.to_oracle().ok_or_else(|| Error::Policy(format!("{name} has no oracle form")))?;
        let r = estimate_aee(&p, &cfg, pol)?;
        let or = oracle_aee(d, &tr, &retained(&p, &r), &cfg.window, &op, &oc)?;
        check(within(r.value, or.value, r.se), format!("{name} AEE z {:+.2}", z(r.value, or.value, r.se)));
    }
    for name in ["point-mass", "truncate-below", "triggered"] {
        let pol = b.policy(name);
        let op = pol.to_oracle().ok_or_else(|| Error::Policy(format!("{name} has no oracle form")))?;
        let r = forecast_aee_f(&p, &cfg, scen, pol)?;
        let set = FutureSet { origin: r.origin, anchors: &r.anchors, select: None, gap: None };
        let or = oracle_future(d, &tr, &cfg.window, &set, &FutureContrast::Exposure(&op), &oc)?;
        let e = &r.estimate;
        check(within(e.value, or.value, e.se), format!("{name} AEE_F z {:+.2}", z(e.value, or.value, e.se)));
    }

    let (tv2, tv3) = exposure_tv(b.dgp("exposure-lagged"))?;
    check(tv2 <= TV_TOL && tv3 <= TV_TOL, format!("exposure TV {tv2:.1e}/{tv3:.1e}"));

    let ta: Vec<WindowProb> = [(0, 0.6), (1, 0.4)].iter().map(|&(s, p)| WindowProb { s: vec![s], p }).collect();
    let tb: Vec<WindowProb> = [(1, 0.2), (2, 0.8)].iter().map(|&(s, p)| WindowProb { s: vec![s], p }).collect();
    let ea = estimate_aee(&p, &cfg, &ExposurePolicy::ExplicitTable { table: ta.clone() })?.value;
    let eb = estimate_aee(&p, &cfg, &ExposurePolicy::ExplicitTable { table: tb.clone() })?.value;
    let em = estimate_aee(&p, &cfg, &ExposurePolicy::mixture(&ta, &tb, 0.3))?.value;
    let gap = (em - (0.3 * ea + 0.7 * eb)).abs();
    check(gap <= 1e-12, format!("mixture gap {gap:.1e}"));
    Ok((ok, notes.join("; ")))
}

fn fix_s_low(t: usize, spec: &WindowSpec) -> Regime {
    let (h, _) = window(t, spec);
    Regime::new().fix_vector(Var::S, h, &[0, 0])
}

fn fix_s_high(t: usize, spec: &WindowSpec) -> Regime {
    let (h, _) = window(t, spec);
    Regime::new().fix_vector(Var::S, h, &[2, 1])
}

fn natural(_: usize, _: &WindowSpec) -> Regime {
    Regime::new()
}

/// Largest total variation of the outcome under a fixed exposure window,
/// and of the natural exposure window, between observed and future anchors.
fn exposure_tv(d: &Dgp) -> gfc_core::Result<(f64, f64)> {
    let spec = WindowSpec::new(0, 1, 0, 1, 2);
    let key = r_bar_key(&spec);
    let mut tv2 = 0.0f64;
    for fix in [fix_s_low as RegimeFn, fix_s_high] {
        let a = Population { anchors: vec![4], regime: fix };
        let f = Population { anchors: vec![6], regime: fix };
        tv2 = tv2.max(conditional_tv(d, &spec, &a, &f, &key, &outcome, 1e7)?.0);
    }
    let with_lag = |p: &[Rec], t: usize| {
        let mut k = key(p, t);
        k.push(u32::from(p[t - 3].s));
        k
    };
    let target = |p: &[Rec], t: usize| vec![u32::from(p[t - 2].s), u32::from(p[t - 1].s)];
    let a = Population { anchors: vec![4], regime: natural };
    let f = Population { anchors: vec![6], regime: natural };
    let tv3 = conditional_tv(d, &spec, &a, &f, &with_lag, &target, 1e7)?.0;
    Ok((tv2, tv3))
}

fn reproducibility(_b: &Bundle, o: &SuiteOptions) -> Check {
    let root = std::env::temp_dir().join(format!("gfc-repro-{}-{}", std::process::id(), o.seed));
    let cfgs = &o.configs;
    let p = |p: PathBuf| p.display().to_string();
    let mut runs: Vec<PathBuf> = Vec::new();
    for threads in ["1", "4"] {
        let dir = root.join(format!("threads-{threads}"));
        let sim = dir.join("sim");
        // both thread counts read the same panel so the recorded input paths agree
        let shared = root.join("threads-1").join("sim");
        let mut codes = vec![crate::run([
            "gfc", "--threads", threads, "simulate", "--dgp", "exposure", "--units", "20", "--horizon", "60", "--seed",
            "3", "--out", &p(sim.clone()),
        ])];
        let common = |cmd: &str, out: &str| -> Vec<String> {
            vec![
                "gfc".into(),
                "--threads".into(),
                threads.into(),
                cmd.into(),
                "--panel".into(),
                p(shared.join("panel.csv")),
                "--schema".into(),
                p(shared.join("schema.json")),
                "--config".into(),
                p(cfgs.join("analysis/one-day.json")),
                "--seed".into(),
                "5".into(),
                "--dgp".into(),
                "exposure".into(),
                "--out".into(),
                p(dir.join(out)),
            ]
        };
        let mut expose = common("expose", "expose");
        expose.extend(["--policy".into(), p(cfgs.join("policies/point-mass.json"))]);
        let mut expose_f = common("expose", "expose-future");
        expose_f.extend([
            "--policy".into(),
            p(cfgs.join("policies/triggered.json")),
            "--scenario".into(),
            p(cfgs.join("scenarios/fixed-time.json")),
        ]);
        codes.push(crate::run(expose));
        codes.push(crate::run(expose_f));
        if codes.iter().any(|&c| c != 0) {
            let _ = std::fs::remove_dir_all(&root);
            return Ok((false, format!("commands exited with {codes:?}")));
        }
        runs.push(dir);
    }
    let tn = root.join("transport");
    let tn_s = p(tn.clone());
    let mut codes = vec![crate::run([
        "gfc", "simulate", "--dgp", "transport", "--units", "20", "--horizon", "60", "--seed", "2", "--out", &tn_s,
    ])];
    for threads in ["1", "4"] {
        for (cmd, extra) in [("estimate", None), ("forecast", Some("scenarios/fixed-time.json"))] {
            let mut args: Vec<String> = vec![
                "gfc".into(),
                "--threads".into(),
                threads.into(),
                cmd.into(),
                "--panel".into(),
                p(tn.join("panel.csv")),
                "--schema".into(),
                p(tn.join("schema.json")),
                "--config".into(),
                p(cfgs.join("analysis/one-day.json")),
                "--seed".into(),
                "7".into(),
                "--dgp".into(),
                "transport".into(),
                "--out".into(),
                p(root.join(format!("threads-{threads}")).join(cmd)),
            ];
            if let Some(s) = extra {
                args.extend(["--scenario".into(), p(cfgs.join(s))]);
            }
            codes.push(crate::run(args));
        }
    }
    if codes.iter().any(|&c| c != 0) {
        let _ = std::fs::remove_dir_all(&root);
        return Ok((false, format!("commands exited with {codes:?}")));
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["sim", "expose", "expose-future", "estimate", "forecast"] {
        let (a, b) = (runs[0].join(sub), runs[1].join(sub));
        let mut names: Vec<_> = std::fs::read_dir(&a)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
        names.sort();
        for n in names {
            compared += 1;
            if std::fs::read(a.join(&n))? != std::fs::read(b.join(&n))? {
                differing.push(format!("{sub}/{}", n.to_string_lossy()));
            }
        }
    }
    let mut verify = Vec::new();
    for sub in ["sim", "expose", "expose-future", "estimate", "forecast"] {
        verify.push(crate::run(["gfc", "report", "--run", &p(runs[1].join(sub)), "--verify"]));
    }
    let _ = std::fs::remove_dir_all(&root);
    let ok = differing.is_empty() && verify.iter().all(|&c| c == 0);
    Ok((
        ok,
        format!("{compared} files compared across 1 and 4 threads, differing {differing:?}; manifest re-runs exited {verify:?}"),
    ))
}

fn fidelity(b: &Bundle, o: &SuiteOptions) -> Check {
    let (mut pass, mut total) = (0usize, 0usize);
    for name in ["null-effect", "tdc-on", "transport", "exposure", "covid-toy"] {
        let d = b.dgp(name);
        for seed in o.seed..o.seed + 3 {
            let p = d.simulate(20, 500, seed)?;
            let tables = [(Var::X, Some(&d.covariate)), (Var::Z, d.treatment.as_ref()), (Var::S, d.exposure.as_ref()), (Var::Y, Some(&d.outcome))];
            for (var, table) in tables {
                let Some(table) = table else { continue };
                let fitted = fit_table(&p, var, &table.parents, 1);
                let cards: Vec<usize> = table.parents.iter().map(|q| d.cardinality(q.var)).collect();
                for row in fitted.all_rows() {
                    let Some(probs) = row.probs else { continue };
                    let truth = &table.rows[table.row_index(&row.key, &cards)];
                    for (ph, pt) in probs.iter().zip(truth) {
                        let se = (pt * (1.0 - pt) / row.count as f64).sqrt();
                        total += 1;
                        if (ph - pt).abs() <= 3.0 * se + 1e-12 {
                            pass += 1;
                        }
                    }
                }
            }
        }
    }
    let rate = pass as f64 / total.max(1) as f64;
    Ok((total > 0 && rate >= 0.99, format!("{pass} of {total} cell probabilities within 3 SE ({:.2}%)", 100.0 * rate)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// JUnit-style XML report.
pub fn junit(results: &[Outcome]) -> String {
    let failures = results.iter().filter(|r| !r.passed).count();
    let time: f64 = results.iter().map(|r| r.seconds).sum();
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<testsuite name=\"gfc-acceptance\" tests=\"{}\" failures=\"{failures}\" time=\"{time:.3}\">",
        results.len()
    );
    for r in results {
        let _ = write!(s, "  <testcase classname=\"acceptance\" name=\"{:02}-{}\" time=\"{:.3}\"", r.id, r.name, r.seconds);
        if r.passed {
            let _ = writeln!(s, ">\n    <system-out>{}</system-out>\n  </testcase>", escape(&r.detail));
        } else {
            let _ = writeln!(s, ">\n    <failure message=\"{}\"/>\n  </testcase>", escape(&r.detail));
        }
    }
    s.push_str("</testsuite>\n");
    s
}

/// One line per criterion.
pub fn summary(results: &[Outcome]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(
            s,
            "{} {:>2} {:<30} {:>6.1}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.seconds,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} passed, {failed} failed", results.len() - failed);
    s
}
