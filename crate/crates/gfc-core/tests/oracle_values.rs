use gfc_core::dgp::Dgp;
use gfc_core::estimate::{estimate_att, AnalysisConfig, ControlConvention};
use gfc_core::mapping::{Mapper, MapperKind};
use gfc_core::oracle::{oracle_exposure_response, oracle_potential_outcome, OracleConfig, Profile};
use gfc_core::presets::named;
use gfc_core::window::WindowSpec;

const TOL: f64 = 1e-12;

fn profile(d: &Dgp, spec: &WindowSpec) -> Profile {
    let tr = d.simulate_trajectories(1, 8, 5).unwrap().remove(0);
    Profile::from_trajectory(&tr, spec, 8).unwrap()
}

fn potential(name: &str, spec: &WindowSpec, d: u8) -> f64 {
    let dgp = named(name).unwrap();
    let m = Mapper::new(MapperKind::OneDay);
    let prof = profile(&dgp, spec);
    oracle_potential_outcome(&dgp, &m, spec, &prof, 8, d, ControlConvention::Canonical, &OracleConfig::default())
        .unwrap()
        .value
}

#[test]
fn potential_outcomes_match_tables() {
    let k1 = WindowSpec::new(0, 1, 0, 1, 2);
    let k0 = WindowSpec::new(0, 0, 0, 0, 1);
    let cases = [
        ("tdc-on", &k1, 0, 0.59),
        ("tdc-on", &k1, 1, 0.49),
        ("transport", &k0, 0, 0.6),
        ("transport", &k0, 1, 0.25),
        ("covid-toy", &k1, 0, 1.27755),
        ("covid-toy", &k1, 1, 1.27755),
    ];
    for (name, spec, d, want) in cases {
        let got = potential(name, spec, d);
        assert!((got - want).abs() < TOL, "{name} d={d}: {got}");
    }
}

#[test]
fn exposure_response_is_linear_in_level() {
    let d = named("exposure").unwrap();
    let spec = WindowSpec::new(0, 0, 0, 0, 1);
    let prof = profile(&d, &spec);
    for (s, want) in [(0, 0.3), (1, 0.5), (2, 0.7)] {
        let got = oracle_exposure_response(&d, &spec, &prof, 8, &[s], &OracleConfig::default()).unwrap().value;
        assert!((got - want).abs() < TOL, "s={s}: {got}");
    }
}

#[test]
fn frozen_estimates() {
    let cfg = AnalysisConfig::new(WindowSpec::new(0, 0, 0, 0, 1), MapperKind::OneDay);
    for (name, ysum, att, se) in [
        ("null-effect", 872, -0.01482552754709691, 0.015814653214169198),
        ("transport", 795, -0.28945471314628224, 0.01976896169167221),
    ] {
        let p = &named(name).unwrap().simulate(20, 100, 7).unwrap();
        let total: u64 = (0..20).flat_map(|i| (1..=100).map(move |t| u64::from(p.y(i, t)))).sum();
        assert_eq!(total, ysum, "{name}");
        let r = estimate_att(p, &cfg).unwrap();
        assert!((r.value - att).abs() < TOL && (r.se - se).abs() < TOL, "{name}: {} {}", r.value, r.se);
    }
}
