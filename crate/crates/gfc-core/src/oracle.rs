//! Ground-truth potential outcomes computed from a known Dgp.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{read, Dgp, Rec};
use crate::error::{Error, Result};
use crate::estimate::ControlConvention;
use crate::mapping::Mapper;
use crate::paths::{enumerate, path_count, sample, Regime, Start};
use crate::rng::{stream_id, Stream};
use crate::window::{Slot, Var, WindowSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Enumeration,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub value: f64,
    pub mc_standard_error: f64,
    pub method: OracleMethod,
    pub replications: usize,
    pub seed: u64,
}

impl OracleResult {
    fn exact(value: f64) -> Self {
        OracleResult { value, mc_standard_error: 0.0, method: OracleMethod::Enumeration, replications: 0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub cap: f64,
    pub mc_reps: usize,
    pub seed: u64,
    pub allow_mc: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { cap: 1e7, mc_reps: 100_000, seed: 0, allow_mc: true }
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// `E[f(path)]` over paths from `start` through `t1` under `regime`.
pub fn expectation(
    dgp: &Dgp,
    start: &Start,
    t1: usize,
    regime: &Regime,
    cfg: &OracleConfig,
    f: &(dyn Fn(&[Rec]) -> f64 + Sync),
) -> Result<OracleResult> {
    if path_count(dgp, start, t1, regime) <= cfg.cap {
        let mut acc = 0.0;
        enumerate(dgp, start, t1, regime, cfg.cap, &mut |p, w| acc += w * f(p))?;
        return Ok(OracleResult::exact(acc));
    }
    if !cfg.allow_mc {
        return Err(Error::Oracle(format!(
            "path space exceeds the cap {:.0} and Monte Carlo is disabled",
            cfg.cap
        )));
    }
    let n = cfg.mc_reps.max(2);
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = Stream::new(cfg.seed, stream_id(1, r as u64));
            f(&sample(dgp, start, t1, regime, &mut rng))
        })
        .collect();
    let mean = pairwise_sum(&vals) / n as f64;
    let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    Ok(OracleResult {
        value: mean,
        mc_standard_error: (var / n as f64).sqrt(),
        method: OracleMethod::MonteCarlo,
        replications: n,
        seed: cfg.seed,
    })
}

/// History of one unit before its window: realized periods before `H` and,
/// optionally, the covariate at `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub prefix: Vec<Rec>,
    pub x_h: Option<u8>,
}

impl Profile {
    /// Profile of anchor `t` cut from a full trajectory.
    pub fn from_trajectory(traj: &[Rec], spec: &WindowSpec, t: usize) -> Result<Self> {
        let h = spec.h(t)?;
        if h > traj.len() {
            return Err(Error::Oracle(format!("window start {h} beyond the trajectory")));
        }
        Ok(Profile { prefix: traj[..h - 1].to_vec(), x_h: Some(traj[h - 1].x) })
    }

    fn start(&self) -> Start<'_> {
        Start { prefix: &self.prefix, t0: self.prefix.len() + 1, x0: self.x_h }
    }
}

fn y_at(dgp: &Dgp, t: usize) -> impl Fn(&[Rec]) -> f64 + Sync + '_ {
    move |p: &[Rec]| dgp.y_value(p[t - 1].y)
}

fn check_profile(spec: &WindowSpec, p: &Profile, t: usize) -> Result<usize> {
    let h = spec.h(t)?;
    if p.prefix.len() + 1 != h {
        return Err(Error::Oracle(format!("profile ends at {}, window starts at {h}", p.prefix.len())));
    }
    Ok(h)
}

/// E[Y_t(w) | profile] with the `driver` window held at `w`.
pub fn forced_mean(
    dgp: &Dgp,
    spec: &WindowSpec,
    driver: Var,
    profile: &Profile,
    t: usize,
    w: &[u32],
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    let h = check_profile(spec, profile, t)?;
    if !dgp.has(driver) {
        return Err(Error::Oracle(format!("the dgp has no {} variable", driver.name())));
    }
    let regime = Regime::new().fix_vector(driver, h, w);
    expectation(dgp, &profile.start(), t, &regime, cfg, &y_at(dgp, t))
}

/// Natural-course law of the `driver` window given the profile, keyed by window.
pub fn window_law(
    dgp: &Dgp,
    spec: &WindowSpec,
    driver: Var,
    profile: &Profile,
    t: usize,
    cap: f64,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    let h = check_profile(spec, profile, t)?;
    let end = t - spec.b;
    let mut law: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    enumerate(dgp, &profile.start(), end, &Regime::new(), cap, &mut |p, w| {
        let key: Vec<u32> = (h..=end).map(|s| p[s - 1].get(driver)).collect();
        *law.entry(key).or_default() += w;
    })?;
    Ok(law)
}

/// E[Y_t(d)] under the canonical window for `d`, or for `d = 0` under the
/// weighted control convention.
#[allow(clippy::too_many_arguments)]
pub fn oracle_potential_outcome(
    dgp: &Dgp,
    mapper: &Mapper,
    spec: &WindowSpec,
    profile: &Profile,
    t: usize,
    d: u8,
    convention: ControlConvention,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if d > 1 {
        return Err(Error::Oracle("d must be 0 or 1".into()));
    }
    if d == 1 || convention == ControlConvention::Canonical {
        return forced_mean(dgp, spec, Var::Z, profile, t, &mapper.canonical(spec, d)?, cfg);
    }
    let law = window_law(dgp, spec, Var::Z, profile, t, cfg.cap)?;
    let mut ws = Vec::new();
    for (w, p) in law {
        if mapper.map(&w, spec)? == 0 && p > 0.0 {
            ws.push((w, p));
        }
    }
    let mass: f64 = ws.iter().map(|(_, p)| p).sum();
    if mass <= 0.0 {
        return Err(Error::Oracle("no control window has positive probability".into()));
    }
    let mut value = 0.0;
    let mut var = 0.0;
    let mut method = OracleMethod::Enumeration;
    for (w, p) in ws {
        let r = forced_mean(dgp, spec, Var::Z, profile, t, &w, cfg)?;
        value += p / mass * r.value;
        var += (p / mass * r.mc_standard_error).powi(2);
        if r.method == OracleMethod::MonteCarlo {
            method = r.method;
        }
    }
    Ok(OracleResult { value, mc_standard_error: var.sqrt(), method, replications: 0, seed: cfg.seed })
}

/// E[Y_t(s) | profile] with the exposure window held at `s`.
pub fn oracle_exposure_response(
    dgp: &Dgp,
    spec: &WindowSpec,
    profile: &Profile,
    t: usize,
    s: &[u32],
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    forced_mean(dgp, spec, Var::S, profile, t, s, cfg)
}

fn mean_result(parts: &[OracleResult]) -> OracleResult {
    let n = parts.len().max(1) as f64;
    let vals: Vec<f64> = parts.iter().map(|r| r.value).collect();
    let vars: Vec<f64> = parts.iter().map(|r| r.mc_standard_error.powi(2)).collect();
    let mc = parts.iter().any(|r| r.method == OracleMethod::MonteCarlo);
    OracleResult {
        value: pairwise_sum(&vals) / n,
        mc_standard_error: pairwise_sum(&vars).sqrt() / n,
        method: if mc { OracleMethod::MonteCarlo } else { OracleMethod::Enumeration },
        replications: parts.iter().map(|r| r.replications).max().unwrap_or(0),
        seed: parts.first().map_or(0, |r| r.seed),
    }
}

/// ATT over `anchors`: observed outcome minus the oracle control mean given
/// each anchor's pre-window history.
#[allow(clippy::too_many_arguments)]
pub fn oracle_att(
    dgp: &Dgp,
    trajs: &[Vec<Rec>],
    anchors: &[(usize, usize)],
    mapper: &Mapper,
    spec: &WindowSpec,
    convention: ControlConvention,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if anchors.is_empty() {
        return Err(Error::Oracle("empty unit set".into()));
    }
    let parts: Vec<Result<OracleResult>> = anchors
        .par_iter()
        .map(|&(i, t)| {
            let prof = Profile::from_trajectory(&trajs[i], spec, t)?;
            let y0 = oracle_potential_outcome(dgp, mapper, spec, &prof, t, 0, convention, cfg)?;
            Ok(OracleResult { value: dgp.y_value(trajs[i][t - 1].y) - y0.value, ..y0 })
        })
        .collect();
    Ok(mean_result(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Individual-level ATT: each treated unit is replayed with its own random
/// numbers and the window switched to the canonical control.
pub fn oracle_att_coupled(
    dgp: &Dgp,
    seed: u64,
    trajs: &[Vec<Rec>],
    anchors: &[(usize, usize)],
    mapper: &Mapper,
    spec: &WindowSpec,
) -> Result<OracleResult> {
    if anchors.is_empty() {
        return Err(Error::Oracle("empty unit set".into()));
    }
    let control = mapper.canonical(spec, 0)?;
    let mut vals = Vec::with_capacity(anchors.len());
    for &(i, t) in anchors {
        let h = spec.h(t)?;
        let regime = Regime::new().fix_vector(Var::Z, h, &control);
        let start = Start { prefix: &trajs[i][..h - 1], t0: h, x0: None };
        let mut rng = Stream::new(seed, stream_id(0, i as u64));
        let cf = sample(dgp, &start, t, &regime, &mut rng);
        vals.push(dgp.y_value(trajs[i][t - 1].y) - dgp.y_value(cf[t - 1].y));
    }
    Ok(OracleResult::exact(pairwise_sum(&vals) / vals.len() as f64))
}

/// Exposure policy as the oracle sees it.
#[derive(Clone, Debug)]
pub enum OraclePolicy {
    /// Fixed probabilities over windows.
    Fixed(BTreeMap<Vec<u32>, f64>),
    /// Natural window law restricted componentwise below `s_star` (indices).
    TruncateBelow(Vec<u32>),
    /// Exposure drawn period by period from a table.
    Dynamic(crate::dgp::CondTable),
}

/// E[sum_s p*(s) Y_t(s) | profile].
fn policy_mean(
    dgp: &Dgp,
    spec: &WindowSpec,
    profile: &Profile,
    t: usize,
    policy: &OraclePolicy,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    let h = check_profile(spec, profile, t)?;
    let weights: Vec<(Vec<u32>, f64)> = match policy {
        OraclePolicy::Dynamic(table) => {
            let regime = Regime::new().policy(Var::S, h, t - spec.b, table);
            return expectation(dgp, &profile.start(), t, &regime, cfg, &y_at(dgp, t));
        }
        OraclePolicy::Fixed(p) => p.iter().filter(|(_, &w)| w > 0.0).map(|(k, &w)| (k.clone(), w)).collect(),
        OraclePolicy::TruncateBelow(star) => {
            let law = window_law(dgp, spec, Var::S, profile, t, cfg.cap)?;
            let kept: Vec<(Vec<u32>, f64)> = law
                .into_iter()
                .filter(|(w, p)| *p > 0.0 && w.iter().zip(star).all(|(a, b)| a < b))
                .collect();
            let mass: f64 = kept.iter().map(|(_, p)| p).sum();
            if mass <= 0.0 {
                return Err(Error::Policy("no exposure mass below the threshold".into()));
            }
            kept.into_iter().map(|(w, p)| (w, p / mass)).collect()
        }
    };
    let mut value = 0.0;
    let mut var = 0.0;
    for (w, p) in weights {
        let r = forced_mean(dgp, spec, Var::S, profile, t, &w, cfg)?;
        value += p * r.value;
        var += (p * r.mc_standard_error).powi(2);
    }
    Ok(OracleResult { value, mc_standard_error: var.sqrt(), ..OracleResult::exact(0.0) })
}

/// AEE over `anchors`: observed outcome minus the policy-averaged response.
pub fn oracle_aee(
    dgp: &Dgp,
    trajs: &[Vec<Rec>],
    anchors: &[(usize, usize)],
    spec: &WindowSpec,
    policy: &OraclePolicy,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if anchors.is_empty() {
        return Err(Error::Oracle("empty unit set".into()));
    }
    let parts: Vec<Result<OracleResult>> = anchors
        .par_iter()
        .map(|&(i, t)| {
            let prof = Profile::from_trajectory(&trajs[i], spec, t)?;
            let m = policy_mean(dgp, spec, &prof, t, policy, cfg)?;
            Ok(OracleResult { value: dgp.y_value(trajs[i][t - 1].y) - m.value, ..m })
        })
        .collect();
    Ok(mean_result(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Future contrast requested from the oracle.
#[derive(Clone, Debug)]
pub enum FutureContrast<'a> {
    /// Canonical treated minus canonical control window of `mapper`.
    Treatment(&'a Mapper),
    /// Natural course minus the exposure policy.
    Exposure(&'a OraclePolicy),
}

/// Future unit set for the oracle: anchor times after `origin` and an
/// optional set of admissible pre-treatment histories.
#[derive(Clone, Debug)]
pub struct FutureSet<'a> {
    pub origin: usize,
    pub anchors: &'a [usize],
    pub select: Option<&'a BTreeSet<Vec<u32>>>,
    /// Treatment values used before each window; zero when absent.
    pub gap: Option<&'a [Vec<u8>]>,
}

fn r_bar_of(p: &[Rec], slots: &[Slot], t: usize) -> Vec<u32> {
    slots.iter().map(|s| read(p, s.var, t as isize - s.offset as isize)).collect()
}

/// ATT_F or AEE_F: the average future contrast over selected anchors,
/// `sum E[1{R in set} (Y_a - Y_b)] / sum P(R in set)`.
pub fn oracle_future(
    dgp: &Dgp,
    trajs: &[Vec<Rec>],
    spec: &WindowSpec,
    set: &FutureSet,
    contrast: &FutureContrast,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    let origin = set.origin;
    let slots = spec.r_bar();
    let mut jobs = Vec::new();
    for (i, tr) in trajs.iter().enumerate() {
        if tr.len() < origin {
            return Err(Error::Oracle(format!("unit {i} has only {} periods", tr.len())));
        }
        for &t in set.anchors {
            let h = spec.h(t)?;
            if h <= origin {
                return Err(Error::Oracle(format!("window of anchor {t} starts inside the observed window")));
            }
            jobs.push((i, t, h));
        }
    }
    let parts: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(i, t, h)| {
            let prefix = &trajs[i][..origin];
            let mut pre = Regime::new();
            if dgp.has(Var::Z) {
                for s in origin + 1..h {
                    let z = set.gap.map_or(0, |g| g[i].get(s - origin - 1).copied().unwrap_or(0));
                    pre = pre.fix(Var::Z, s, z);
                }
            }
            let start = Start { prefix, t0: origin + 1, x0: None };
            let select = |p: &[Rec]| set.select.is_none_or(|s| s.contains(&r_bar_of(p, &slots, t)));
            // enumerate pre-window paths through x at H, then evaluate both arms
            let mut num = 0.0;
            let mut den = 0.0;
            let mut err = None;
            enumerate(dgp, &start, h - 1, &pre, cfg.cap, &mut |p, w| {
                let x_row = dgp.row(Var::X, p, h).map(|r| r.to_vec()).unwrap_or_default();
                for (x, &px) in x_row.iter().enumerate() {
                    if px <= 0.0 || err.is_some() {
                        continue;
                    }
                    let prof = Profile { prefix: p.to_vec(), x_h: Some(x as u8) };
                    let mut q = p.to_vec();
                    q.push(Rec { x: x as u8, ..Rec::default() });
                    if !select(&q) {
                        continue;
                    }
                    let diff = match contrast {
                        FutureContrast::Treatment(m) => {
                            let a = m.canonical(spec, 1).and_then(|w| forced_mean(dgp, spec, Var::Z, &prof, t, &w, cfg));
                            let b = m.canonical(spec, 0).and_then(|w| forced_mean(dgp, spec, Var::Z, &prof, t, &w, cfg));
                            a.and_then(|a| b.map(|b| a.value - b.value))
                        }
                        FutureContrast::Exposure(pol) => {
                            let nat = expectation(dgp, &prof.start(), t, &Regime::new(), cfg, &y_at(dgp, t));
                            let hyp = policy_mean(dgp, spec, &prof, t, pol, cfg);
                            nat.and_then(|a| hyp.map(|b| a.value - b.value))
                        }
                    };
                    match diff {
                        Ok(v) => {
                            num += w * px * v;
                            den += w * px;
                        }
                        Err(e) => err = Some(e),
                    }
                }
            })?;
            match err {
                Some(e) => Err(e),
                None => Ok((num, den)),
            }
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let num = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let den = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    if den <= 0.0 {
        return Err(Error::Oracle("the selected future set has probability zero".into()));
    }
    Ok(OracleResult::exact(num / den))
}

/// One population of anchors for a conditional-law comparison.
#[derive(Clone, Debug)]
pub struct Population {
    pub anchors: Vec<usize>,
    /// Regime applied from time 1 given the anchor time.
    pub regime: fn(usize, &WindowSpec) -> Regime,
}

/// Law of the target given the key, unnormalized.
type ConditionalLaw = BTreeMap<Vec<u32>, BTreeMap<Vec<u32>, f64>>;

/// Largest total-variation distance between `P(target | key)` in two
/// populations, over keys both populations reach. Paths start at time 1.
pub fn conditional_tv(
    dgp: &Dgp,
    spec: &WindowSpec,
    a: &Population,
    b: &Population,
    key: &dyn Fn(&[Rec], usize) -> Vec<u32>,
    target: &dyn Fn(&[Rec], usize) -> Vec<u32>,
    cap: f64,
) -> Result<(f64, usize)> {
    let law = |pop: &Population| -> Result<ConditionalLaw> {
        let mut m = ConditionalLaw::new();
        for &t in &pop.anchors {
            let regime = (pop.regime)(t, spec);
            enumerate(dgp, &Start { prefix: &[], t0: 1, x0: None }, t, &regime, cap, &mut |p, w| {
                *m.entry(key(p, t)).or_default().entry(target(p, t)).or_default() += w;
            })?;
        }
        Ok(m)
    };
    let (la, lb) = (law(a)?, law(b)?);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (k, ya) in &la {
        let Some(yb) = lb.get(k) else { continue };
        let (na, nb): (f64, f64) = (ya.values().sum(), yb.values().sum());
        if na < 1e-12 || nb < 1e-12 {
            continue;
        }
        compared += 1;
        let keys: BTreeSet<&Vec<u32>> = ya.keys().chain(yb.keys()).collect();
        let tv: f64 = keys
            .into_iter()
            .map(|y| (ya.get(y).copied().unwrap_or(0.0) / na - yb.get(y).copied().unwrap_or(0.0) / nb).abs())
            .sum::<f64>()
            / 2.0;
        worst = worst.max(tv);
    }
    Ok((worst, compared))
}

/// Pre-treatment history of the anchor at `t` read from a path.
pub fn r_bar_key(spec: &WindowSpec) -> impl Fn(&[Rec], usize) -> Vec<u32> {
    let slots = spec.r_bar();
    move |p, t| r_bar_of(p, &slots, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::MapperKind;
    use crate::presets;

    fn profile(dgp: &Dgp, spec: &WindowSpec, t: usize, seed: u64) -> Profile {
        let tr = dgp.simulate_trajectories(1, t, seed).unwrap().remove(0);
        Profile::from_trajectory(&tr, spec, t).unwrap()
    }

    #[test]
    fn null_effect_contrast_is_exactly_zero() {
        let d = presets::named("null-effect").unwrap();
        let spec = WindowSpec::new(0, 1, 0, 1, 2);
        let m = Mapper::new(MapperKind::OneDay);
        let prof = profile(&d, &spec, 6, 3);
        let cfg = OracleConfig::default();
        let a = oracle_potential_outcome(&d, &m, &spec, &prof, 6, 1, ControlConvention::Canonical, &cfg).unwrap();
        let b = oracle_potential_outcome(&d, &m, &spec, &prof, 6, 0, ControlConvention::Canonical, &cfg).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.mc_standard_error, 0.0);
        assert_eq!(a.method, OracleMethod::Enumeration);
    }

    #[test]
    fn enumeration_and_monte_carlo_agree() {
        // 2-state x, binary y, K=1, T=6
        let d = presets::named("tdc-on").unwrap();
        let m = Mapper::new(MapperKind::OneDay);
        let prof = Profile { prefix: vec![], x_h: None };
        let spec_far = WindowSpec::new(4, 1, 4, 1, 2);
        let cfg = OracleConfig::default();
        let ex = oracle_potential_outcome(&d, &m, &spec_far, &prof, 6, 1, ControlConvention::Canonical, &cfg).unwrap();
        let mc_cfg = OracleConfig { cap: 1.0, mc_reps: 100_000, seed: 11, allow_mc: true };
        let mc = oracle_potential_outcome(&d, &m, &spec_far, &prof, 6, 1, ControlConvention::Canonical, &mc_cfg).unwrap();
        assert_eq!(mc.method, OracleMethod::MonteCarlo);
        assert!((ex.value - mc.value).abs() < 3.0 * mc.mc_standard_error, "{ex:?} {mc:?}");
    }

    #[test]
    fn cap_without_mc_is_an_error() {
        let d = presets::named("tdc-on").unwrap();
        let spec = WindowSpec::new(4, 1, 4, 1, 2);
        let m = Mapper::new(MapperKind::OneDay);
        let prof = Profile { prefix: vec![], x_h: None };
        let cfg = OracleConfig { cap: 1.0, allow_mc: false, ..OracleConfig::default() };
        assert!(oracle_potential_outcome(&d, &m, &spec, &prof, 6, 0, ControlConvention::Canonical, &cfg).is_err());
    }

    #[test]
    fn flat_and_monotone_response() {
        let spec = WindowSpec::new(0, 0, 0, 0, 1);
        let cfg = OracleConfig::default();
        let d = presets::named("null-effect").unwrap();
        let prof = profile(&d, &spec, 5, 2);
        let v: Vec<f64> =
            (0..3).map(|s| oracle_exposure_response(&d, &spec, &prof, 5, &[s], &cfg).unwrap().value).collect();
        assert!(v.iter().all(|&x| x == v[0]));
        let d = presets::named("exposure").unwrap();
        let prof = profile(&d, &spec, 5, 2);
        let v: Vec<f64> =
            (0..3).map(|s| oracle_exposure_response(&d, &spec, &prof, 5, &[s], &cfg).unwrap().value).collect();
        assert!(v[0] <= v[1] && v[1] <= v[2], "{v:?}");
    }

    #[test]
    fn covariate_law_ignores_forced_treatment_without_feedback() {
        let d = presets::named("null-effect").unwrap();
        let spec = WindowSpec::new(0, 2, 0, 2, 3);
        let prof = profile(&d, &spec, 8, 4);
        let law = |w: &[u32]| {
            let mut m: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
            let regime = Regime::new().fix_vector(Var::Z, 6, w);
            enumerate(&d, &prof.start(), 8, &regime, 1e7, &mut |p, pr| {
                *m.entry(p[5..].iter().map(|r| r.x).collect()).or_default() += pr;
            })
            .unwrap();
            m
        };
        let (a, b) = (law(&[0, 0, 0]), law(&[1, 1, 1]));
        for (k, v) in &a {
            assert!((v - b[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn coupled_att_is_zero_under_the_null() {
        let d = presets::named("null-effect").unwrap();
        let trajs = d.simulate_trajectories(5, 30, 8).unwrap();
        let spec = WindowSpec::new(0, 1, 0, 1, 2);
        let m = Mapper::new(MapperKind::AnyDay);
        let anchors: Vec<(usize, usize)> = (0..5)
            .flat_map(|i| (4..=30).map(move |t| (i, t)))
            .filter(|&(i, t)| trajs[i][t - 1].z == 1)
            .collect();
        let r = oracle_att_coupled(&d, 8, &trajs, &anchors, &m, &spec).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn weighted_control_law_sums_to_one() {
        let d = presets::named("tdc-on").unwrap();
        let spec = WindowSpec::new(0, 2, 0, 2, 3);
        let prof = profile(&d, &spec, 9, 1);
        let law = window_law(&d, &spec, Var::Z, &prof, 9, 1e7).unwrap();
        assert!((law.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = Mapper::new(MapperKind::OneDay);
        let cfg = OracleConfig::default();
        let r = oracle_potential_outcome(&d, &m, &spec, &prof, 9, 0, ControlConvention::Weighted, &cfg).unwrap();
        assert!(r.value > 0.0 && r.value < 1.0);
    }

    #[test]
    fn homogeneous_future_matches_past_contrast() {
        // K=0 and R-bar = (x_t, y_{t-1}) pin the contrast to the outcome table
        let d = presets::named("transport").unwrap();
        let spec = WindowSpec::new(0, 0, 0, 0, 1);
        let m = Mapper::new(MapperKind::OneDay);
        let trajs = d.simulate_trajectories(3, 10, 5).unwrap();
        let cfg = OracleConfig::default();
        let set: BTreeSet<Vec<u32>> = [vec![1, 0]].into_iter().collect();
        let fut = oracle_future(
            &d,
            &trajs,
            &spec,
            &FutureSet { origin: 10, anchors: &[13, 14], select: Some(&set), gap: None },
            &FutureContrast::Treatment(&m),
            &cfg,
        )
        .unwrap();
        let row = |z: usize| d.outcome.rows[4 + z * 2][1];
        assert!((fut.value - (row(1) - row(0))).abs() < 1e-12, "{fut:?}");
    }
}
