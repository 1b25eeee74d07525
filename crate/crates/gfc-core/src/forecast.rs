//! Effects on a future window: forward imputation of time-varying modifiers,
//! unit selection, overlap checks and the transported contrast.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{trajectories, Rec};
use crate::error::{Error, Result};
use crate::estimate::{
    jackknife_groups, jackknife_se, route, AdjustmentModel, AnalysisConfig, Conditioning, Design, EstimateReport,
    Keep, Method, Route,
};
use crate::panel::Panel;
use crate::rng::{categorical, stream_id, Stream};
use crate::tables::{fit_conditional_tables, FittedTable, Transitions};
use crate::window::{Slot, Var, WindowSpec};

fn default_draws() -> usize {
    1000
}

fn default_version() -> u32 {
    1
}

/// Gap `F` between the end of the panel and the future treatment window,
/// and the window length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FutureWindow {
    pub f: usize,
    #[serde(default)]
    pub t_zf: usize,
}

impl FutureWindow {
    pub fn validate(&self) -> Result<()> {
        if self.f < 1 {
            return Err(Error::Scenario("need F >= 1".into()));
        }
        Ok(())
    }

    /// Anchor times of the future unit set after `origin`.
    pub fn anchors(&self, origin: usize, spec: &WindowSpec, fixed: bool) -> Vec<usize> {
        let first = origin + self.f + spec.l;
        if fixed {
            vec![first]
        } else {
            (first..=first + self.t_zf).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Selection {
    /// Every unit at `T+F+L`.
    FixedTime,
    /// Anchors whose history matches one seen among observed treated anchors.
    MatchPastR,
    /// Anchors whose history is one of the listed grid-index vectors.
    ExplicitR { values: Vec<Vec<u32>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub future: FutureWindow,
    pub selection: Selection,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    /// Largest tolerated fraction of histories off the observed support.
    #[serde(default)]
    pub overlap_threshold: f64,
    #[serde(default)]
    pub force: bool,
    /// Treatment values for the gap periods `T+1, ...`, shared by all units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_schedule: Option<Vec<u8>>,
    /// Back-test: forecast from this earlier origin with the observed gap
    /// treatments and compare with the in-sample estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backtest_origin: Option<usize>,
}

impl ScenarioSpec {
    pub fn new(future: FutureWindow, selection: Selection, n_draws: usize) -> Self {
        ScenarioSpec {
            schema_version: 1,
            future,
            selection,
            n_draws,
            overlap_threshold: 0.0,
            force: false,
            gap_schedule: None,
            backtest_origin: None,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.future.validate()?;
        if self.n_draws < 2 {
            return Err(Error::Scenario("need at least two draws".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(Error::Scenario("overlap threshold must lie in [0, 1]".into()));
        }
        if self.gap_schedule.as_ref().is_some_and(|g| g.iter().any(|&z| z > 1)) {
            return Err(Error::Scenario("gap schedule must be binary".into()));
        }
        Ok(())
    }

    fn fixed(&self) -> bool {
        self.selection == Selection::FixedTime
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Observed,
    Imputed,
}

/// Forward-imputed periods of every unit for one draw; `None` when the draw
/// hit an unestimable transition cell.
#[derive(Clone, Debug)]
pub struct Draw {
    pub units: Option<Vec<Vec<Rec>>>,
    pub aborted: Option<String>,
}

/// Observed trajectories plus imputed continuations.
#[derive(Clone, Debug)]
pub struct Imputation {
    pub origin: usize,
    pub until: usize,
    pub draws: Vec<Draw>,
}

impl Imputation {
    /// Record of unit `i` at time `t` in draw `d`.
    pub fn at<'a>(&'a self, obs: &'a [Vec<Rec>], d: usize, i: usize, t: usize) -> Option<&'a Rec> {
        if t <= self.origin {
            obs[i].get(t - 1)
        } else {
            self.draws[d].units.as_ref().map(|u| &u[i][t - self.origin - 1])
        }
    }

    pub fn provenance(&self, t: usize) -> Provenance {
        if t <= self.origin {
            Provenance::Observed
        } else {
            Provenance::Imputed
        }
    }
}

/// Treatment values used for the gap periods of each unit.
pub fn gap_values(units: usize, len: usize, schedule: Option<&[u8]>) -> Vec<Vec<u8>> {
    (0..units).map(|_| (0..len).map(|k| schedule.and_then(|s| s.get(k).copied()).unwrap_or(0)).collect()).collect()
}

fn sample_row(tab: &FittedTable, traj: &[Rec], t: usize, u: f64) -> std::result::Result<u8, String> {
    let key: Vec<u32> = tab.parents.iter().map(|p| traj[t - 1 - p.lag].get(p.var)).collect();
    tab.row(&key).map(|row| categorical(&row, u) as u8).map_err(|e| e.to_string())
}

/// Samples covariates, exposures and outcomes forward from `origin + 1`
/// through `until`, holding the treatment at `gaps` (per unit, from
/// `origin + 1`). Observed periods are never touched.
pub fn impute_modifiers(
    obs: &[Vec<Rec>],
    trans: &Transitions,
    origin: usize,
    until: usize,
    gaps: &[Vec<u8>],
    n_draws: usize,
    seed: u64,
) -> Result<Imputation> {
    if origin < trans.depth() {
        return Err(Error::Scenario(format!("origin {origin} is shorter than the transition lags")));
    }
    let steps = until.saturating_sub(origin);
    let draws: Vec<Draw> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            if steps == 0 {
                return Draw { units: Some(vec![Vec::new(); obs.len()]), aborted: None };
            }
            let mut units = Vec::with_capacity(obs.len());
            for (i, o) in obs.iter().enumerate() {
                let mut rng = Stream::new(seed, stream_id(d as u64, i as u64));
                let mut traj: Vec<Rec> = o[..origin].to_vec();
                for t in origin + 1..=until {
                    traj.push(Rec { z: gaps[i].get(t - origin - 1).copied().unwrap_or(0), ..Rec::default() });
                    let step = (|| -> std::result::Result<(), String> {
                        traj[t - 1].x = sample_row(&trans.covariate, &traj, t, rng.at(t, 0))?;
                        if let Some(e) = &trans.exposure {
                            traj[t - 1].s = sample_row(e, &traj, t, rng.at(t, 2))?;
                        }
                        traj[t - 1].y = sample_row(&trans.outcome, &traj, t, rng.at(t, 3))?;
                        Ok(())
                    })();
                    if let Err(e) = step {
                        return Draw { units: None, aborted: Some(format!("unit {i} at time {t}: {e}")) };
                    }
                }
                units.push(traj.split_off(origin));
            }
            Draw { units: Some(units), aborted: None }
        })
        .collect();
    Ok(Imputation { origin, until, draws })
}

/// Imputed pre-treatment history of one future anchor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImputedHistory {
    pub unit: usize,
    pub t: usize,
    pub draw: usize,
    pub r_hat: Vec<u32>,
    pub provenance: Vec<Provenance>,
}

fn read_r(imp: &Imputation, obs: &[Vec<Rec>], slots: &[Slot], d: usize, i: usize, t: usize) -> Option<Vec<u32>> {
    slots.iter().map(|s| imp.at(obs, d, i, t - s.offset).map(|r| r.get(s.var))).collect()
}

/// Every (draw, unit, anchor) history; aborted draws are skipped.
pub fn imputed_histories(imp: &Imputation, obs: &[Vec<Rec>], spec: &WindowSpec, anchors: &[usize]) -> Vec<ImputedHistory> {
    let slots = spec.r_bar();
    let mut out = Vec::new();
    for d in 0..imp.draws.len() {
        for i in 0..obs.len() {
            for &t in anchors {
                if let Some(r_hat) = read_r(imp, obs, &slots, d, i, t) {
                    let provenance = slots.iter().map(|s| imp.provenance(t - s.offset)).collect();
                    out.push(ImputedHistory { unit: i, t, draw: d, r_hat, provenance });
                }
            }
        }
    }
    out
}

/// The history set a selection rule admits; `None` admits everything.
pub fn selection_set(sel: &Selection, design: &Design) -> Option<BTreeSet<Vec<u32>>> {
    match sel {
        Selection::FixedTime => None,
        Selection::MatchPastR => Some(design.anchors.iter().filter(|a| a.d == 1).map(|a| a.r.clone()).collect()),
        Selection::ExplicitR { values } => Some(values.iter().cloned().collect()),
    }
}

/// Future unit set of one draw.
pub fn select_future_units(
    imp: &Imputation,
    obs: &[Vec<Rec>],
    spec: &WindowSpec,
    anchors: &[usize],
    set: Option<&BTreeSet<Vec<u32>>>,
    draw: usize,
) -> Vec<(usize, usize, Vec<u32>)> {
    let slots = spec.r_bar();
    let mut out = Vec::new();
    for i in 0..obs.len() {
        for &t in anchors {
            if let Some(r) = read_r(imp, obs, &slots, draw, i, t) {
                if set.is_none_or(|s| s.contains(&r)) {
                    out.push((i, t, r));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    pub checked: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Off-support histories with their frequency.
    pub off_support: BTreeMap<String, usize>,
    pub refused: bool,
    pub forced: bool,
}

/// Flags candidate histories absent from the observed support.
pub fn check_overlap<'a>(candidates: impl IntoIterator<Item = &'a Vec<u32>>, support: &BTreeSet<Vec<u32>>) -> OverlapReport {
    let mut checked = 0;
    let mut off: BTreeMap<String, usize> = BTreeMap::new();
    for c in candidates {
        checked += 1;
        if !support.contains(c) {
            *off.entry(format!("{c:?}")).or_default() += 1;
        }
    }
    let violations = off.values().sum();
    OverlapReport {
        checked,
        violations,
        violation_fraction: if checked == 0 { 0.0 } else { violations as f64 / checked as f64 },
        off_support: off,
        refused: false,
        forced: false,
    }
}

/// Summary of one imputation draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrawTrace {
    pub draw: usize,
    pub value: Option<f64>,
    pub selected: usize,
    pub dropped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Backtest {
    pub origin: usize,
    pub in_sample: f64,
    pub in_sample_se: f64,
    pub difference: f64,
    /// Standard error of the difference, including the spread of a single
    /// realized unit set around the forecast mean.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastReport {
    #[serde(flatten)]
    pub estimate: EstimateReport,
    pub origin: usize,
    pub anchors: Vec<usize>,
    pub n_draws: usize,
    pub aborted_draws: usize,
    /// Standard deviation of the per-draw estimates.
    pub predictive_sd: f64,
    pub overlap: OverlapReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backtest: Option<Backtest>,
    pub draws: Vec<DrawTrace>,
}

/// Contrast of one selected future anchor, or a drop reason.
pub type Contrast<'a> = dyn Fn(usize, usize, &[u32], usize) -> std::result::Result<f64, String> + Sync + 'a;

pub(crate) struct Pooled {
    pub value: f64,
    pub per_draw: Vec<Option<f64>>,
    pub traces: Vec<DrawTrace>,
    pub n: usize,
    pub dropped: usize,
}

/// Pools contrasts over draws and selected anchors.
pub(crate) fn pool(
    imp: &Imputation,
    obs: &[Vec<Rec>],
    spec: &WindowSpec,
    anchors: &[usize],
    set: Option<&BTreeSet<Vec<u32>>>,
    support: &BTreeSet<Vec<u32>>,
    contrast: &Contrast,
) -> Pooled {
    let per: Vec<(f64, usize, usize, DrawTrace)> = (0..imp.draws.len())
        .into_par_iter()
        .map(|d| {
            if let Some(msg) = &imp.draws[d].aborted {
                let tr = DrawTrace { draw: d, value: None, selected: 0, dropped: 0, aborted: Some(msg.clone()) };
                return (0.0, 0, 0, tr);
            }
            let sel = select_future_units(imp, obs, spec, anchors, set, d);
            let (mut sum, mut n, mut dropped) = (0.0, 0usize, 0usize);
            for (i, t, r) in &sel {
                if !support.contains(r) {
                    dropped += 1;
                    continue;
                }
                match contrast(*i, *t, r, d) {
                    Ok(c) => {
                        sum += c;
                        n += 1;
                    }
                    Err(_) => dropped += 1,
                }
            }
            let value = (n > 0).then(|| sum / n as f64);
            (sum, n, dropped, DrawTrace { draw: d, value, selected: sel.len(), dropped, aborted: None })
        })
        .collect();
    let sums: Vec<f64> = per.iter().map(|p| p.0).collect();
    let n: usize = per.iter().map(|p| p.1).sum();
    Pooled {
        value: if n == 0 { f64::NAN } else { crate::oracle::pairwise_sum(&sums) / n as f64 },
        per_draw: per.iter().map(|p| p.3.value).collect(),
        dropped: per.iter().map(|p| p.2).sum(),
        n,
        traces: per.into_iter().map(|p| p.3).collect(),
    }
}

pub(crate) fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Estimation panel, observed trajectories, origin and gap treatments.
pub(crate) struct Setup {
    pub est: Panel,
    pub obs: Vec<Vec<Rec>>,
    pub origin: usize,
    pub anchors: Vec<usize>,
    pub until: usize,
    pub gaps: Vec<Vec<u8>>,
}

pub(crate) fn setup(panel: &Panel, spec: &WindowSpec, scen: &ScenarioSpec) -> Result<Setup> {
    scen.validate()?;
    let full = trajectories(panel)?;
    let (est, origin) = match scen.backtest_origin {
        Some(t0) => {
            if t0 >= panel.horizon() {
                return Err(Error::Scenario(format!("back-test origin {t0} must precede T = {}", panel.horizon())));
            }
            (panel.truncate(t0)?, t0)
        }
        None => (panel.clone(), panel.horizon()),
    };
    let anchors = scen.future.anchors(origin, spec, scen.fixed());
    let mut until = 0;
    for &t in &anchors {
        let h = spec.h(t)?;
        if scen.backtest_origin.is_none() && h <= origin {
            return Err(Error::Scenario(format!(
                "the window of anchor {t} starts at {h}, inside the observed window; use a back-test"
            )));
        }
        if let Some(_t0) = scen.backtest_origin {
            if t > panel.horizon() {
                return Err(Error::Scenario(format!("back-test anchor {t} lies beyond T = {}", panel.horizon())));
            }
        }
        until = until.max(h);
    }
    let len = until.saturating_sub(origin);
    let gaps = match scen.backtest_origin {
        Some(t0) => full.iter().map(|tr| (t0 + 1..=until).map(|s| tr[s - 1].z).collect()).collect(),
        None => gap_values(full.len(), len, scen.gap_schedule.as_deref()),
    };
    let obs = full.iter().map(|tr| tr[..origin].to_vec()).collect();
    Ok(Setup { est, obs, origin, anchors, until, gaps })
}

fn refuse(mut overlap: OverlapReport, scen: &ScenarioSpec) -> Result<OverlapReport> {
    overlap.forced = scen.force;
    if overlap.violation_fraction > scen.overlap_threshold && !scen.force {
        return Err(Error::OverlapRefused { violations: overlap.violations, checked: overlap.checked });
    }
    Ok(overlap)
}

/// Overlap report over the selected histories of every draw, plus the
/// declared scenario values for explicit selections.
pub(crate) fn overlap_of(
    imp: &Imputation,
    obs: &[Vec<Rec>],
    spec: &WindowSpec,
    anchors: &[usize],
    sel: &Selection,
    set: Option<&BTreeSet<Vec<u32>>>,
    support: &BTreeSet<Vec<u32>>,
) -> OverlapReport {
    if let Selection::ExplicitR { values } = sel {
        return check_overlap(values.iter(), support);
    }
    let mut keys = Vec::new();
    for d in 0..imp.draws.len() {
        if imp.draws[d].aborted.is_none() {
            keys.extend(select_future_units(imp, obs, spec, anchors, set, d).into_iter().map(|(_, _, r)| r));
        }
    }
    check_overlap(keys.iter(), support)
}

struct AttFit {
    adj: AdjustmentModel,
    trans: Transitions,
}

fn fit_att(design: &Design, est: &Panel, cfg: &AnalysisConfig, keep: Keep) -> Result<AttFit> {
    let kept: Vec<usize> = (0..est.n_units()).filter(|&i| keep.keeps(i)).collect();
    let sub = if kept.len() == est.n_units() { est.clone() } else { est.subset_units(&kept)? };
    Ok(AttFit {
        adj: AdjustmentModel::fit(design, Conditioning::RBar, false, cfg.min_cell, keep),
        trans: fit_conditional_tables(&sub, &cfg.window, Var::Z, cfg.min_cell)?,
    })
}

fn att_contrast<'a>(fit: &'a AttFit, grid: &'a [f64]) -> impl Fn(usize, usize, &[u32], usize) -> std::result::Result<f64, String> + Sync + 'a {
    move |_, _, r, _| {
        let m1 = fit.adj.mean(r, &[1], grid).map_err(|e| format!("treated {e}"))?;
        let m0 = fit.adj.mean(r, &[0], grid)?;
        Ok(m1 - m0)
    }
}

/// ATT on a future window from contrasts of observed units matched on the
/// imputed pre-treatment history.
pub fn forecast_att_f(panel: &Panel, cfg: &AnalysisConfig, scen: &ScenarioSpec) -> Result<ForecastReport> {
    cfg.validate()?;
    let spec = &cfg.window;
    let st = setup(panel, spec, scen)?;
    let design = Design::new(&st.est, spec, Var::Z, Some(&cfg.mapper()))?;
    let support: BTreeSet<Vec<u32>> = design.anchors.iter().map(|a| a.r.clone()).collect();
    let set = selection_set(&scen.selection, &design);
    let fit = fit_att(&design, &st.est, cfg, Keep::ALL)?;
    let imp = impute_modifiers(&st.obs, &fit.trans, st.origin, st.until, &st.gaps, scen.n_draws, cfg.seed)?;
    let overlap = refuse(overlap_of(&imp, &st.obs, spec, &st.anchors, &scen.selection, set.as_ref(), &support), scen)?;
    let full = pool(&imp, &st.obs, spec, &st.anchors, set.as_ref(), &support, &att_contrast(&fit, &design.y_grid));

    let groups = jackknife_groups(cfg.jackknife_groups, st.est.n_units());
    let mut reps = Vec::new();
    for g in 0..groups {
        let keep = Keep { groups, drop: Some(g) };
        let f = fit_att(&design, &st.est, cfg, keep)?;
        let im = impute_modifiers(&st.obs, &f.trans, st.origin, st.until, &st.gaps, scen.n_draws, cfg.seed)?;
        let p = pool(&im, &st.obs, spec, &st.anchors, set.as_ref(), &support, &att_contrast(&f, &design.y_grid));
        if p.value.is_finite() {
            reps.push(p.value);
        }
    }
    let route = Route { method: Method::Adjustment, conditioning: Conditioning::RBar, reason: "matched on imputed history".into() };
    let mut rep = finish("ATT_F", &route, cfg, &st, &imp, full, reps, overlap)?;
    if scen.backtest_origin.is_some() {
        rep.backtest = Some(backtest_att(panel, cfg, &st, &rep)?);
    }
    Ok(rep)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    estimand: &str,
    route: &Route,
    cfg: &AnalysisConfig,
    st: &Setup,
    imp: &Imputation,
    full: Pooled,
    reps: Vec<f64>,
    overlap: OverlapReport,
) -> Result<ForecastReport> {
    let mut est = EstimateReport::new(estimand, route, cfg.control_convention);
    est.n_units = full.n;
    if full.dropped > 0 {
        est.drop_counts.insert("unmatched-stratum".into(), full.dropped);
    }
    let aborted = imp.draws.iter().filter(|d| d.aborted.is_some()).count();
    if aborted > 0 {
        est.drop_counts.insert("aborted-draw".into(), aborted);
    }
    if !full.value.is_finite() {
        if full.n == 0 && full.dropped == 0 && aborted < imp.draws.len() {
            est.warnings.push("empty-future-unit-set".into());
            est.value = f64::NAN;
        } else {
            est.require_units()?;
        }
    }
    let per: Vec<f64> = full.per_draw.iter().flatten().copied().collect();
    let predictive_sd = sd(&per);
    est.value = full.value;
    est.total = if full.value.is_finite() { full.value * full.n as f64 / per.len().max(1) as f64 } else { 0.0 };
    est.mc_se = predictive_sd / (per.len().max(1) as f64).sqrt();
    est.sampling_se = jackknife_se(&reps);
    est.se = est.mc_se.hypot(est.sampling_se);
    Ok(ForecastReport {
        estimate: est,
        origin: st.origin,
        anchors: st.anchors.clone(),
        n_draws: imp.draws.len(),
        aborted_draws: aborted,
        predictive_sd,
        overlap,
        backtest: None,
        draws: full.traces,
    })
}

/// In-sample matched contrast at the back-test anchors on the full panel.
fn backtest_att(panel: &Panel, cfg: &AnalysisConfig, st: &Setup, rep: &ForecastReport) -> Result<Backtest> {
    let design = Design::new(panel, &cfg.window, Var::Z, Some(&cfg.mapper()))?;
    let value = |keep: Keep| -> Option<f64> {
        let adj = AdjustmentModel::fit(&design, Conditioning::RBar, false, cfg.min_cell, keep);
        let mut acc = Vec::new();
        for a in design.anchors.iter().filter(|a| st.anchors.contains(&a.t)) {
            if let (Ok(m1), Ok(m0)) = (adj.mean(&a.r, &[1], &design.y_grid), adj.mean(&a.r, &[0], &design.y_grid)) {
                acc.push(m1 - m0);
            }
        }
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    };
    let in_sample = value(Keep::ALL).ok_or_else(|| Error::Estimation("no back-test anchor has both arms".into()))?;
    let groups = jackknife_groups(cfg.jackknife_groups, panel.n_units());
    let reps: Vec<f64> = (0..groups).filter_map(|g| value(Keep { groups, drop: Some(g) })).collect();
    let in_se = jackknife_se(&reps);
    let se = (rep.predictive_sd.powi(2) + rep.estimate.se.powi(2) + in_se.powi(2)).sqrt();
    Ok(Backtest {
        origin: st.origin,
        in_sample,
        in_sample_se: in_se,
        difference: rep.estimate.value - in_sample,
        se,
    })
}

/// Route used by forecasting commands; kept for report symmetry.
pub fn forecast_route(panel: &Panel, cfg: &AnalysisConfig) -> Route {
    let mut r = route(panel, cfg, Var::Z);
    r.method = Method::Adjustment;
    r.conditioning = Conditioning::RBar;
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::MapperKind;
    use crate::presets;

    fn cfg() -> AnalysisConfig {
        AnalysisConfig::new(WindowSpec::new(0, 0, 0, 0, 1), MapperKind::OneDay)
    }

    #[test]
    fn fully_observed_history_needs_no_sampling() {
        let p = presets::named("transport").unwrap().simulate(4, 30, 1).unwrap();
        let obs = trajectories(&p).unwrap();
        let trans = fit_conditional_tables(&p, &cfg().window, Var::Z, 1).unwrap();
        let imp = impute_modifiers(&obs, &trans, 30, 30, &gap_values(4, 0, None), 3, 1).unwrap();
        let h = imputed_histories(&imp, &obs, &cfg().window, &[30]);
        assert_eq!(h.len(), 12);
        assert!(h.iter().all(|x| x.provenance.iter().all(|&p| p == Provenance::Observed)));
        assert_eq!(h[0].r_hat, vec![u32::from(obs[0][29].x), u32::from(obs[0][28].y)]);
    }

    #[test]
    fn imputation_never_overwrites_observed_periods() {
        let p = presets::named("transport").unwrap().simulate(4, 30, 2).unwrap();
        let obs = trajectories(&p).unwrap();
        let trans = fit_conditional_tables(&p, &cfg().window, Var::Z, 1).unwrap();
        let imp = impute_modifiers(&obs, &trans, 30, 36, &gap_values(4, 6, None), 5, 1).unwrap();
        for d in 0..5 {
            for (i, o) in obs.iter().enumerate() {
                for t in 1..=30 {
                    assert_eq!(imp.at(&obs, d, i, t), Some(&o[t - 1]));
                }
                assert!(imp.draws[d].units.as_ref().unwrap()[i].iter().all(|r| r.z == 0));
            }
        }
    }

    #[test]
    fn deterministic_transitions_give_identical_draws() {
        let mut d = presets::named("transport").unwrap();
        d.covariate.rows = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        d.outcome.rows = d.outcome.rows.iter().map(|_| vec![1.0, 0.0]).collect();
        let p = d.simulate(3, 20, 3).unwrap();
        let obs = trajectories(&p).unwrap();
        let trans = fit_conditional_tables(&p, &cfg().window, Var::Z, 1).unwrap();
        let imp = impute_modifiers(&obs, &trans, 20, 25, &gap_values(3, 5, None), 4, 9).unwrap();
        let first = imp.draws[0].units.clone();
        assert!(imp.draws.iter().all(|d| d.units == first));
    }

    #[test]
    fn fixed_time_selects_every_unit() {
        let p = presets::named("transport").unwrap().simulate(5, 40, 4).unwrap();
        let scen = ScenarioSpec::new(FutureWindow { f: 2, t_zf: 0 }, Selection::FixedTime, 10);
        let r = forecast_att_f(&p, &cfg(), &scen).unwrap();
        assert_eq!(r.anchors, vec![42]);
        assert!(r.draws.iter().all(|d| d.selected == 5));
    }

    #[test]
    fn unseen_explicit_history_selects_nothing() {
        let p = presets::named("transport").unwrap().simulate(5, 40, 4).unwrap();
        let mut scen =
            ScenarioSpec::new(FutureWindow { f: 2, t_zf: 0 }, Selection::ExplicitR { values: vec![vec![5, 5]] }, 10);
        assert!(matches!(forecast_att_f(&p, &cfg(), &scen), Err(Error::OverlapRefused { violations: 1, checked: 1 })));
        scen.force = true;
        let r = forecast_att_f(&p, &cfg(), &scen).unwrap();
        assert!(r.overlap.forced && r.overlap.violation_fraction == 1.0);
        assert!(r.draws.iter().all(|d| d.selected == 0));
        assert!(r.estimate.warnings.contains(&"empty-future-unit-set".to_string()));
    }

    #[test]
    fn window_inside_the_panel_needs_a_backtest() {
        let p = presets::named("transport").unwrap().simulate(5, 40, 4).unwrap();
        let mut c = cfg();
        c.window = WindowSpec::new(0, 3, 0, 3, 4);
        let scen = ScenarioSpec::new(FutureWindow { f: 1, t_zf: 0 }, Selection::FixedTime, 10);
        assert!(matches!(forecast_att_f(&p, &c, &scen), Err(Error::Scenario(_))));
    }
}
