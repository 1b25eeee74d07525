//! Exposure-response functions, average exposure effects under hypothetical
//! exposure policies, and their future-window counterparts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dgp::{CondTable, Rec};
use crate::error::{Error, Result};
use crate::estimate::{
    jackknife_groups, jackknife_se, route, AdjustmentModel, AnalysisConfig, Anchor, Conditioning, Contribution,
    Design, EstimateReport, GModel, Keep, Method, Route,
};
use crate::forecast::{finish, impute_modifiers, pool, setup, ForecastReport, Imputation, ScenarioSpec, Selection};
use crate::forecast::{check_overlap, overlap_of, OverlapReport};
use crate::panel::{Panel, Schema};
use crate::tables::{fit_conditional_tables, Counts, FittedTable, Transitions};
use crate::window::{Var, WindowSpec};

/// Probability of one exposure window in an explicit policy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProb {
    pub s: Vec<u32>,
    pub p: f64,
}

/// Hypothetical exposure law over the window `s[t-B-K], ..., s[t-B]`, given
/// as exposure-grid indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExposurePolicy {
    /// The empirical law of the window in each stratum (status quo).
    NaturalLaw,
    PointMass { s_star: Vec<u32> },
    /// The natural law restricted to windows componentwise below `s_star`.
    TruncateBelow { s_star: Vec<u32> },
    ExplicitTable { table: Vec<WindowProb> },
    /// Exposure drawn period by period from `table`; rows are indexed by
    /// the parent values, most significant first.
    DynamicConditional { table: CondTable },
}

const ROW_TOL: f64 = 1e-9;

impl ExposurePolicy {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Mixture `alpha * a + (1 - alpha) * b` of two explicit tables.
    pub fn mixture(a: &[WindowProb], b: &[WindowProb], alpha: f64) -> ExposurePolicy {
        let mut m: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for e in a {
            *m.entry(e.s.clone()).or_default() += alpha * e.p;
        }
        for e in b {
            *m.entry(e.s.clone()).or_default() += (1.0 - alpha) * e.p;
        }
        ExposurePolicy::ExplicitTable { table: m.into_iter().map(|(s, p)| WindowProb { s, p }).collect() }
    }

    pub fn validate(&self, spec: &WindowSpec, schema: &Schema) -> Result<()> {
        let levels = schema.s.len() as u32;
        let width = spec.k + 1;
        let on_grid = |s: &[u32]| s.len() == width && s.iter().all(|&v| v < levels);
        match self {
            ExposurePolicy::NaturalLaw => Ok(()),
            ExposurePolicy::PointMass { s_star } | ExposurePolicy::TruncateBelow { s_star } => {
                if on_grid(s_star) {
                    Ok(())
                } else {
                    Err(Error::Policy(format!("s_star {s_star:?} must hold {width} indices below {levels}")))
                }
            }
            ExposurePolicy::ExplicitTable { table } => {
                if let Some(e) = table.iter().find(|e| !on_grid(&e.s) || e.p.is_nan() || e.p < 0.0) {
                    return Err(Error::Policy(format!("bad table entry {:?} with probability {}", e.s, e.p)));
                }
                let total: f64 = table.iter().map(|e| e.p).sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(Error::Policy(format!("table sums to {total}")));
                }
                Ok(())
            }
            ExposurePolicy::DynamicConditional { table } => {
                let cards: Vec<usize> = table.parents.iter().map(|p| schema.cardinality(p.var)).collect();
                let rows: usize = cards.iter().product();
                if table.rows.len() != rows {
                    return Err(Error::Policy(format!("dynamic table has {} rows, expected {rows}", table.rows.len())));
                }
                if table.parents.iter().any(|p| p.lag == 0 && p.var == Var::S) {
                    return Err(Error::Policy("the exposure cannot depend on itself".into()));
                }
                for (k, r) in table.rows.iter().enumerate() {
                    let total: f64 = r.iter().sum();
                    if r.len() != levels as usize || r.iter().any(|p| p.is_nan() || *p < 0.0) || (total - 1.0).abs() > ROW_TOL {
                        return Err(Error::Policy(format!("dynamic table row {k} is not a distribution on the grid")));
                    }
                }
                Ok(())
            }
        }
    }

    fn is_dynamic(&self) -> bool {
        matches!(self, ExposurePolicy::DynamicConditional { .. })
    }

    /// Window weights given the natural law of the stratum.
    fn weights(&self, natural: &[(Vec<u32>, f64)]) -> std::result::Result<Vec<(Vec<u32>, f64)>, &'static str> {
        match self {
            ExposurePolicy::NaturalLaw => Ok(natural.to_vec()),
            ExposurePolicy::PointMass { s_star } => Ok(vec![(s_star.clone(), 1.0)]),
            ExposurePolicy::ExplicitTable { table } => {
                Ok(table.iter().filter(|e| e.p > 0.0).map(|e| (e.s.clone(), e.p)).collect())
            }
            ExposurePolicy::TruncateBelow { s_star } => {
                let kept: Vec<(Vec<u32>, f64)> = natural
                    .iter()
                    .filter(|(s, p)| *p > 0.0 && s.iter().zip(s_star).all(|(a, b)| a < b))
                    .cloned()
                    .collect();
                let mass: f64 = kept.iter().map(|(_, p)| p).sum();
                if mass <= 0.0 {
                    return Err("policy-infeasible");
                }
                Ok(kept.into_iter().map(|(s, p)| (s, p / mass)).collect())
            }
            ExposurePolicy::DynamicConditional { .. } => Err("dynamic-policy"),
        }
    }

    /// Windows the policy may put mass on, when that set is fixed.
    fn declared_support(&self) -> Option<Vec<Vec<u32>>> {
        match self {
            ExposurePolicy::PointMass { s_star } => Some(vec![s_star.clone()]),
            ExposurePolicy::ExplicitTable { table } => {
                Some(table.iter().filter(|e| e.p > 0.0).map(|e| e.s.clone()).collect())
            }
            _ => None,
        }
    }

    /// The same policy for the oracle.
    pub fn to_oracle(&self) -> Option<crate::oracle::OraclePolicy> {
        use crate::oracle::OraclePolicy;
        Some(match self {
            ExposurePolicy::NaturalLaw => return None,
            ExposurePolicy::PointMass { s_star } => OraclePolicy::Fixed([(s_star.clone(), 1.0)].into_iter().collect()),
            ExposurePolicy::TruncateBelow { s_star } => OraclePolicy::TruncateBelow(s_star.clone()),
            ExposurePolicy::ExplicitTable { table } => {
                OraclePolicy::Fixed(table.iter().map(|e| (e.s.clone(), e.p)).collect())
            }
            ExposurePolicy::DynamicConditional { table } => OraclePolicy::Dynamic(table.clone()),
        })
    }
}

/// Every exposure window on the grid, in lexicographic order.
pub fn all_windows(levels: usize, width: usize) -> Vec<Vec<u32>> {
    let n = levels.pow(width as u32);
    (0..n).map(|code| decode(code as u32, levels, width)).collect()
}

fn decode(mut code: u32, levels: usize, width: usize) -> Vec<u32> {
    let mut w = vec![0; width];
    for k in (0..width).rev() {
        w[k] = code % levels as u32;
        code /= levels as u32;
    }
    w
}

fn encode(w: &[u32], levels: usize) -> u32 {
    w.iter().fold(0, |acc, &v| acc * levels as u32 + v)
}

/// Outcome model over exposure windows.
enum ErfModel {
    Adjustment(AdjustmentModel, Conditioning),
    Gformula(GModel),
}

impl ErfModel {
    fn fit(design: &Design, cfg: &AnalysisConfig, route: &Route, keep: Keep) -> Self {
        match route.method {
            Method::Adjustment => ErfModel::Adjustment(
                AdjustmentModel::fit(design, route.conditioning, true, cfg.min_cell, keep),
                route.conditioning,
            ),
            Method::Gformula => ErfModel::Gformula(GModel::fit(design, cfg, keep)),
        }
    }

    fn key(&self, a: &Anchor) -> Vec<u32> {
        match self {
            ErfModel::Adjustment(_, c) => a.key(*c),
            ErfModel::Gformula(_) => a.r.clone(),
        }
    }

    /// `(value, mc standard error)` or a drop reason.
    fn erf(&self, key: &[u32], s: &[u32], grid: &[f64]) -> std::result::Result<(f64, f64), String> {
        match self {
            ErfModel::Adjustment(m, _) => m.mean(key, s, grid).map(|v| (v, 0.0)).map_err(String::from),
            ErfModel::Gformula(g) => g.mean(key, s).map(|v| (v.value, v.mc_se)).map_err(|e| match e {
                Error::Unestimable { .. } => "unestimable-factor".to_string(),
                e => e.to_string(),
            }),
        }
    }

    fn count(&self, key: &[u32], s: &[u32]) -> u64 {
        match self {
            ErfModel::Adjustment(m, _) => {
                let mut k = key.to_vec();
                k.extend(s);
                m.counts.total(&k)
            }
            ErfModel::Gformula(_) => 0,
        }
    }
}

/// Empirical law of the exposure window per conditioning stratum.
struct NaturalLaw {
    counts: Counts,
    levels: usize,
    width: usize,
    min_cell: u64,
}

impl NaturalLaw {
    fn fit(design: &Design, model: &ErfModel, levels: usize, min_cell: u64, keep: Keep) -> Self {
        let width = design.spec.k + 1;
        let mut counts = Counts::new(levels.pow(width as u32));
        for a in design.anchors.iter().filter(|a| keep.keeps(a.i)) {
            counts.add(model.key(a), encode(&a.w, levels));
        }
        NaturalLaw { counts, levels, width, min_cell }
    }

    fn law(&self, key: &[u32]) -> std::result::Result<Vec<(Vec<u32>, f64)>, &'static str> {
        if self.counts.total(key) < self.min_cell {
            return Err("sparse-exposure-stratum");
        }
        let probs = self.counts.probs(key).expect("nonempty");
        Ok(probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| (decode(c as u32, self.levels, self.width), p))
            .collect())
    }
}

/// Estimated E[Y(s) | history] for every exposure window of one anchor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfEstimate {
    pub unit: String,
    pub t: usize,
    pub method: Method,
    pub conditioning: Conditioning,
    pub key: Vec<u32>,
    pub cells: Vec<ErfCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErfCell {
    pub s: Vec<u32>,
    pub value: Option<f64>,
    /// Observed anchors in the cell; zero for the g-formula.
    pub count: u64,
    pub estimable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

fn exposure_design(panel: &Panel, cfg: &AnalysisConfig) -> Result<(Design, Route)> {
    cfg.validate()?;
    if panel.schema().s.len() < 2 {
        return Err(Error::Panel("the exposure grid has a single level".into()));
    }
    let design = Design::new(panel, &cfg.window, Var::S, None)?;
    let route = route(panel, cfg, Var::S);
    Ok((design, route))
}

/// ERF of unit `i` at time `t`.
pub fn estimate_erf(panel: &Panel, cfg: &AnalysisConfig, i: usize, t: usize) -> Result<ErfEstimate> {
    let (design, route) = exposure_design(panel, cfg)?;
    let a = crate::estimate::find_anchor(&design, i, t)?;
    let model = ErfModel::fit(&design, cfg, &route, Keep::ALL);
    let key = model.key(a);
    let levels = panel.schema().s.len();
    let cells = all_windows(levels, cfg.window.k + 1)
        .into_iter()
        .map(|s| {
            let r = model.erf(&key, &s, &design.y_grid);
            ErfCell {
                count: model.count(&key, &s),
                value: r.as_ref().ok().map(|v| v.0),
                estimable: r.is_ok(),
                reason: r.err(),
                s,
            }
        })
        .collect();
    Ok(ErfEstimate {
        unit: design.units[i].clone(),
        t,
        method: route.method,
        conditioning: route.conditioning,
        key,
        cells,
    })
}

/// ERF standardized over the observed anchors where every window is
/// estimable, with contrasts against the first window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalErf {
    pub method: Method,
    pub conditioning: Conditioning,
    pub n_anchors: usize,
    pub levels: Vec<MarginalLevel>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalLevel {
    pub s: Vec<u32>,
    pub value: f64,
    pub se: f64,
    /// Difference from the first window and its standard error.
    pub contrast: f64,
    pub contrast_se: f64,
}

pub fn marginal_erf(panel: &Panel, cfg: &AnalysisConfig) -> Result<MarginalErf> {
    let (design, route) = exposure_design(panel, cfg)?;
    let windows = all_windows(panel.schema().s.len(), cfg.window.k + 1);
    let levels = |keep: Keep| -> (Vec<f64>, usize) {
        let model = ErfModel::fit(&design, cfg, &route, keep);
        let mut sums = vec![0.0; windows.len()];
        let mut n = 0;
        for a in design.anchors.iter().filter(|a| keep.keeps(a.i)) {
            let key = model.key(a);
            let vals: std::result::Result<Vec<f64>, String> =
                windows.iter().map(|s| model.erf(&key, s, &design.y_grid).map(|v| v.0)).collect();
            if let Ok(v) = vals {
                for (acc, x) in sums.iter_mut().zip(v) {
                    *acc += x;
                }
                n += 1;
            }
        }
        (sums.iter().map(|s| s / n.max(1) as f64).collect(), n)
    };
    let (full, n) = levels(Keep::ALL);
    if n == 0 {
        return Err(Error::Estimation("no anchor has every exposure window estimable".into()));
    }
    let groups = jackknife_groups(cfg.jackknife_groups, panel.n_units());
    let reps: Vec<Vec<f64>> =
        (0..groups).map(|g| levels(Keep { groups, drop: Some(g) })).filter(|r| r.1 > 0).map(|r| r.0).collect();
    let levels = windows
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let vals: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            let diffs: Vec<f64> = reps.iter().map(|r| r[k] - r[0]).collect();
            MarginalLevel {
                s,
                value: full[k],
                se: jackknife_se(&vals),
                contrast: full[k] - full[0],
                contrast_se: jackknife_se(&diffs),
            }
        })
        .collect();
    Ok(MarginalErf { method: route.method, conditioning: route.conditioning, n_anchors: n, levels })
}

struct AeePass {
    value: f64,
    n: usize,
    mc_var: f64,
    drops: Vec<(usize, String)>,
    contributions: Vec<(usize, f64, f64)>,
}

fn aee_pass(design: &Design, cfg: &AnalysisConfig, route: &Route, policy: &ExposurePolicy, levels: usize, keep: Keep) -> AeePass {
    let model = ErfModel::fit(design, cfg, route, keep);
    let law = NaturalLaw::fit(design, &model, levels, cfg.min_cell, keep);
    let mut out = AeePass { value: 0.0, n: 0, mc_var: 0.0, drops: Vec::new(), contributions: Vec::new() };
    let mut sum = 0.0;
    for (k, a) in design.anchors.iter().enumerate().filter(|(_, a)| keep.keeps(a.i)) {
        let key = model.key(a);
        let weights = match law.law(&key).and_then(|nat| policy.weights(&nat)) {
            Ok(w) => w,
            Err(e) => {
                out.drops.push((k, e.into()));
                continue;
            }
        };
        let mut imputed = 0.0;
        let mut var = 0.0;
        let mut failed = None;
        for (s, p) in &weights {
            match model.erf(&key, s, &design.y_grid) {
                Ok((v, se)) => {
                    imputed += p * v;
                    var += (p * se).powi(2);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            out.drops.push((k, e));
            continue;
        }
        let y = design.y_value(a);
        sum += y - imputed;
        out.mc_var += var;
        out.n += 1;
        out.contributions.push((k, y, imputed));
    }
    out.value = if out.n == 0 { f64::NAN } else { sum / out.n as f64 };
    out.mc_var /= (out.n.max(1) as f64).powi(2);
    out
}

/// Average exposure effect on the observed anchors: observed outcome minus
/// the outcome expected under the policy.
pub fn estimate_aee(panel: &Panel, cfg: &AnalysisConfig, policy: &ExposurePolicy) -> Result<EstimateReport> {
    let (design, route) = exposure_design(panel, cfg)?;
    policy.validate(&cfg.window, panel.schema())?;
    if policy.is_dynamic() {
        return Err(Error::Policy("dynamic policies apply to future windows; use the forecast command".into()));
    }
    let levels = panel.schema().s.len();
    let full = aee_pass(&design, cfg, &route, policy, levels, Keep::ALL);
    let mut rep = EstimateReport::new("AEE", &route, cfg.control_convention);
    for (k, reason) in &full.drops {
        let a = &design.anchors[*k];
        rep.drop(&design.units[a.i], a.t, reason);
    }
    rep.n_units = full.n;
    rep.require_units()?;
    let groups = jackknife_groups(cfg.jackknife_groups, panel.n_units());
    let reps: Vec<f64> = (0..groups)
        .map(|g| aee_pass(&design, cfg, &route, policy, levels, Keep { groups, drop: Some(g) }).value)
        .filter(|v| v.is_finite())
        .collect();
    rep.value = full.value;
    rep.total = full.value * full.n as f64;
    rep.mc_se = full.mc_var.sqrt();
    rep.sampling_se = jackknife_se(&reps);
    rep.se = rep.mc_se.hypot(rep.sampling_se);
    rep.contributions = full
        .contributions
        .iter()
        .map(|&(k, y, m)| {
            let a = &design.anchors[k];
            Contribution { unit: design.units[a.i].clone(), time: a.t, observed: y, imputed: m, effect: y - m }
        })
        .collect();
    Ok(rep)
}

/// One forward pass over the periods `H..=t` of an anchor, holding the
/// history before `H` and the covariate at `H`.
struct Chain<'a> {
    trans: &'a Transitions,
    exposure: &'a FittedTable,
    policy: Option<(&'a CondTable, Vec<usize>)>,
    y_grid: &'a [f64],
    h: usize,
    end: usize,
    t: usize,
    base: usize,
}

impl Chain<'_> {
    fn read(&self, local: &[Rec], t: usize, lag: usize, var: Var) -> u32 {
        local[t - lag - self.base - 1].get(var)
    }

    fn fitted_row(&self, tab: &FittedTable, local: &[Rec], t: usize) -> Result<Vec<f64>> {
        let key: Vec<u32> = tab.parents.iter().map(|p| self.read(local, t, p.lag, p.var)).collect();
        tab.row(&key)
    }

    fn exposure_row(&self, local: &[Rec], t: usize) -> Result<Vec<f64>> {
        match &self.policy {
            Some((table, cards)) if (self.h..=self.end).contains(&t) => {
                let vals: Vec<u32> = table.parents.iter().map(|p| self.read(local, t, p.lag, p.var)).collect();
                Ok(table.rows[table.row_index(&vals, cards)].clone())
            }
            _ => self.fitted_row(self.exposure, local, t),
        }
    }

    /// Calls `f(window, probability, E[y_t | path])` for every path.
    fn walk(&self, local: &mut Vec<Rec>, l: usize, prob: f64, f: &mut dyn FnMut(&[u32], f64, f64)) -> Result<()> {
        let x_row = if l == self.h { None } else { Some(self.fitted_row(&self.trans.covariate, local, l)?) };
        let xs: Vec<(u8, f64)> = match x_row {
            None => vec![(local[l - self.base - 1].x, 1.0)],
            Some(r) => r.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(v, &p)| (v as u8, p)).collect(),
        };
        for (x, px) in xs {
            local[l - self.base - 1].x = x;
            let s_row = self.exposure_row(local, l)?;
            for (s, &ps) in s_row.iter().enumerate() {
                if ps <= 0.0 {
                    continue;
                }
                local[l - self.base - 1].s = s as u8;
                let y_row = self.fitted_row(&self.trans.outcome, local, l)?;
                let p = prob * px * ps;
                if l == self.t {
                    let w: Vec<u32> = (self.h..=self.end).map(|u| self.read(local, u, 0, Var::S)).collect();
                    let m: f64 = y_row.iter().zip(self.y_grid).map(|(p, v)| p * v).sum();
                    f(&w, p, m);
                    continue;
                }
                for (y, &py) in y_row.iter().enumerate() {
                    if py > 0.0 {
                        local[l - self.base - 1].y = y as u8;
                        local.push(Rec::default());
                        self.walk(local, l + 1, p * py, f)?;
                        local.pop();
                    }
                }
            }
        }
        Ok(())
    }
}

/// Natural window law and mean outcome, or the mean outcome under a dynamic
/// policy, for one future anchor of one draw.
struct ChainResult {
    law: Vec<(Vec<u32>, f64)>,
    mean: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    imp: &Imputation,
    obs: &[Vec<Rec>],
    trans: &Transitions,
    spec: &WindowSpec,
    schema: &Schema,
    policy: Option<&CondTable>,
    d: usize,
    i: usize,
    t: usize,
) -> Result<ChainResult> {
    let exposure = trans.exposure.as_ref().ok_or_else(|| Error::Estimation("no exposure transitions".into()))?;
    let h = spec.h(t)?;
    let lag = trans.depth().max(policy.map_or(0, |p| p.max_lag()));
    let base = (h - 1).saturating_sub(lag);
    let mut local: Vec<Rec> = (base + 1..=h).map(|u| *imp.at(obs, d, i, u).expect("imputed through H")).collect();
    let chain = Chain {
        trans,
        exposure,
        policy: policy.map(|p| (p, p.parents.iter().map(|q| schema.cardinality(q.var)).collect())),
        y_grid: &schema.y.values,
        h,
        end: t - spec.b,
        t,
        base,
    };
    let mut law: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut mean = 0.0;
    chain.walk(&mut local, h, 1.0, &mut |w, p, m| {
        *law.entry(w.to_vec()).or_default() += p;
        mean += p * m;
    })?;
    Ok(ChainResult { law: law.into_iter().collect(), mean })
}

/// Forecast natural law of the exposure window for one future anchor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExposureLaw {
    pub unit: String,
    pub t: usize,
    pub draw: usize,
    pub law: Vec<WindowProb>,
}

fn exposure_setup(panel: &Panel, cfg: &AnalysisConfig, scen: &ScenarioSpec) -> Result<(crate::forecast::Setup, Design)> {
    cfg.validate()?;
    if scen.backtest_origin.is_some() {
        return Err(Error::Scenario("back-tests are available for treatment forecasts only".into()));
    }
    let st = setup(panel, &cfg.window, scen)?;
    let design = Design::new(&st.est, &cfg.window, Var::S, None)?;
    Ok((st, design))
}

/// Chains the fitted one-step exposure law through each future window from
/// the imputed history before it.
pub fn forecast_exposure_law(panel: &Panel, cfg: &AnalysisConfig, scen: &ScenarioSpec) -> Result<Vec<ExposureLaw>> {
    let (st, _) = exposure_setup(panel, cfg, scen)?;
    let trans = fit_conditional_tables(&st.est, &cfg.window, Var::S, cfg.min_cell)?;
    let imp = impute_modifiers(&st.obs, &trans, st.origin, st.until, &st.gaps, scen.n_draws, cfg.seed)?;
    let mut out = Vec::new();
    for d in 0..imp.draws.len() {
        if let Some(msg) = &imp.draws[d].aborted {
            return Err(Error::Estimation(format!("draw {d} aborted: {msg}")));
        }
        for i in 0..st.obs.len() {
            for &t in &st.anchors {
                let r = run_chain(&imp, &st.obs, &trans, &cfg.window, panel.schema(), None, d, i, t)?;
                out.push(ExposureLaw {
                    unit: panel.units()[i].clone(),
                    t,
                    draw: d,
                    law: r.law.into_iter().map(|(s, p)| WindowProb { s, p }).collect(),
                });
            }
        }
    }
    Ok(out)
}

struct AeeFit {
    adj: AdjustmentModel,
    trans: Transitions,
}

fn fit_aee_f(design: &Design, est: &Panel, cfg: &AnalysisConfig, keep: Keep) -> Result<AeeFit> {
    let kept: Vec<usize> = (0..est.n_units()).filter(|&i| keep.keeps(i)).collect();
    let sub = if kept.len() == est.n_units() { est.clone() } else { est.subset_units(&kept)? };
    Ok(AeeFit {
        adj: AdjustmentModel::fit(design, Conditioning::RBar, true, cfg.min_cell, keep),
        trans: fit_conditional_tables(&sub, &cfg.window, Var::S, cfg.min_cell)?,
    })
}

/// Future-window average exposure effect: the natural course minus the
/// policy, matched on the imputed pre-window history.
pub fn forecast_aee_f(
    panel: &Panel,
    cfg: &AnalysisConfig,
    scen: &ScenarioSpec,
    policy: &ExposurePolicy,
) -> Result<ForecastReport> {
    let spec = &cfg.window;
    let schema = panel.schema();
    policy.validate(spec, schema)?;
    let (st, design) = exposure_setup(panel, cfg, scen)?;
    let support: BTreeSet<Vec<u32>> = design.anchors.iter().map(|a| a.r.clone()).collect();
    let set = match &scen.selection {
        Selection::FixedTime => None,
        Selection::MatchPastR => Some(support.clone()),
        Selection::ExplicitR { values } => Some(values.iter().cloned().collect()),
    };
    let fit = fit_aee_f(&design, &st.est, cfg, Keep::ALL)?;
    let imp = impute_modifiers(&st.obs, &fit.trans, st.origin, st.until, &st.gaps, scen.n_draws, cfg.seed)?;

    let mut overlap = overlap_of(&imp, &st.obs, spec, &st.anchors, &scen.selection, set.as_ref(), &support);
    if let Some(windows) = policy.declared_support() {
        let seen: BTreeSet<Vec<u32>> = design.anchors.iter().map(|a| a.w.clone()).collect();
        let p = check_overlap(windows.iter(), &seen);
        overlap = merge(overlap, p);
    }
    overlap.forced = scen.force;
    if overlap.violation_fraction > scen.overlap_threshold && !scen.force {
        return Err(Error::OverlapRefused { violations: overlap.violations, checked: overlap.checked });
    }

    let dynamic = match policy {
        ExposurePolicy::DynamicConditional { table } => Some(table),
        _ => None,
    };
    let ctx = AeeCtx { obs: &st.obs, spec, schema, dynamic, policy, grid: &design.y_grid };
    let full = pool(&imp, &st.obs, spec, &st.anchors, set.as_ref(), &support, &ctx.contrast(&fit, &imp));

    let groups = jackknife_groups(cfg.jackknife_groups, st.est.n_units());
    let mut reps = Vec::new();
    for g in 0..groups {
        let f = fit_aee_f(&design, &st.est, cfg, Keep { groups, drop: Some(g) })?;
        let im = impute_modifiers(&st.obs, &f.trans, st.origin, st.until, &st.gaps, scen.n_draws, cfg.seed)?;
        let p = pool(&im, &st.obs, spec, &st.anchors, set.as_ref(), &support, &ctx.contrast(&f, &im));
        if p.value.is_finite() {
            reps.push(p.value);
        }
    }
    let route = Route {
        method: Method::Adjustment,
        conditioning: Conditioning::RBar,
        reason: "matched on imputed history; natural law chained from fitted exposure transitions".into(),
    };
    finish("AEE_F", &route, cfg, &st, &imp, full, reps, overlap)
}

struct AeeCtx<'a> {
    obs: &'a [Vec<Rec>],
    spec: &'a WindowSpec,
    schema: &'a Schema,
    dynamic: Option<&'a CondTable>,
    policy: &'a ExposurePolicy,
    grid: &'a [f64],
}

impl<'a> AeeCtx<'a> {
    fn contrast<'b>(
        &'b self,
        fit: &'b AeeFit,
        imp: &'b Imputation,
    ) -> impl Fn(usize, usize, &[u32], usize) -> std::result::Result<f64, String> + Sync + 'b {
        move |i, t, r, d| {
            let chain = |policy| {
                run_chain(imp, self.obs, &fit.trans, self.spec, self.schema, policy, d, i, t)
                    .map_err(|_| "unestimable-transition".to_string())
            };
            let nat = chain(None)?;
            if let Some(table) = self.dynamic {
                return Ok(nat.mean - chain(Some(table))?.mean);
            }
            let weights = self.policy.weights(&nat.law)?;
            let erf = |s: &[u32]| fit.adj.mean(r, s, self.grid);
            let mut a = 0.0;
            for (s, p) in &nat.law {
                a += p * erf(s)?;
            }
            let mut b = 0.0;
            for (s, p) in &weights {
                b += p * erf(s)?;
            }
            Ok(a - b)
        }
    }
}

fn merge(a: OverlapReport, b: OverlapReport) -> OverlapReport {
    let checked = a.checked + b.checked;
    let violations = a.violations + b.violations;
    let mut off = a.off_support;
    for (k, v) in b.off_support {
        *off.entry(format!("s={k}")).or_default() += v;
    }
    OverlapReport {
        checked,
        violations,
        violation_fraction: if checked == 0 { 0.0 } else { violations as f64 / checked as f64 },
        off_support: off,
        refused: false,
        forced: a.forced,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::FutureWindow;
    use crate::mapping::MapperKind;
    use crate::presets;

    fn cfg() -> AnalysisConfig {
        AnalysisConfig::new(WindowSpec::new(0, 0, 0, 0, 1), MapperKind::OneDay)
    }

    fn panel(seed: u64) -> Panel {
        presets::named("exposure").unwrap().simulate(20, 60, seed).unwrap()
    }

    fn table(rows: &[(u32, f64)]) -> Vec<WindowProb> {
        rows.iter().map(|&(s, p)| WindowProb { s: vec![s], p }).collect()
    }

    #[test]
    fn status_quo_aee_is_zero() {
        let r = estimate_aee(&panel(1), &cfg(), &ExposurePolicy::NaturalLaw).unwrap();
        assert!(r.value.abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn truncation_above_every_level_is_the_status_quo() {
        let p = panel(2);
        let a = estimate_aee(&p, &cfg(), &ExposurePolicy::TruncateBelow { s_star: vec![3] });
        assert!(matches!(a, Err(Error::Policy(_))));
        let a = estimate_aee(&p, &cfg(), &ExposurePolicy::TruncateBelow { s_star: vec![2] }).unwrap();
        let b = estimate_aee(&p, &cfg(), &ExposurePolicy::NaturalLaw).unwrap();
        assert!(a.value > b.value);
    }

    #[test]
    fn truncated_weights_sum_to_one() {
        let natural = vec![(vec![0], 0.2), (vec![1], 0.5), (vec![2], 0.3)];
        let w = ExposurePolicy::TruncateBelow { s_star: vec![2] }.weights(&natural).unwrap();
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(ExposurePolicy::TruncateBelow { s_star: vec![0] }.weights(&natural), Err("policy-infeasible"));
    }

    #[test]
    fn aee_is_linear_in_the_policy() {
        let p = panel(3);
        let (a, b) = (table(&[(0, 0.7), (1, 0.3)]), table(&[(1, 0.1), (2, 0.9)]));
        let ea = estimate_aee(&p, &cfg(), &ExposurePolicy::ExplicitTable { table: a.clone() }).unwrap().value;
        let eb = estimate_aee(&p, &cfg(), &ExposurePolicy::ExplicitTable { table: b.clone() }).unwrap().value;
        for alpha in [0.0, 0.25, 0.6, 1.0] {
            let m = estimate_aee(&p, &cfg(), &ExposurePolicy::mixture(&a, &b, alpha)).unwrap().value;
            assert!((m - (alpha * ea + (1.0 - alpha) * eb)).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_erf_matches_the_cell_mean() {
        let p = panel(4);
        let e = estimate_erf(&p, &cfg(), 0, 30).unwrap();
        assert_eq!(e.cells.len(), 3);
        assert!(e.cells.iter().all(|c| c.estimable == (c.count >= 5)));
    }

    #[test]
    fn policy_validation() {
        let p = panel(1);
        let bad = ExposurePolicy::ExplicitTable { table: table(&[(0, 0.5), (1, 0.4)]) };
        assert!(matches!(estimate_aee(&p, &cfg(), &bad), Err(Error::Policy(_))));
        let bad = ExposurePolicy::PointMass { s_star: vec![0, 1] };
        assert!(matches!(estimate_aee(&p, &cfg(), &bad), Err(Error::Policy(_))));
        let json = r#"{"kind":"point-mass","s_star":[2]}"#;
        assert_eq!(serde_json::from_str::<ExposurePolicy>(json).unwrap(), ExposurePolicy::PointMass { s_star: vec![2] });
    }

    #[test]
    fn deterministic_exposure_forecasts_a_point_mass() {
        let mut d = presets::named("exposure").unwrap();
        d.exposure.as_mut().unwrap().rows.iter_mut().for_each(|r| *r = vec![0.0, 1.0, 0.0]);
        let p = d.simulate(5, 40, 1).unwrap();
        let scen = ScenarioSpec::new(FutureWindow { f: 3, t_zf: 0 }, Selection::FixedTime, 4);
        let laws = forecast_exposure_law(&p, &cfg(), &scen).unwrap();
        assert_eq!(laws.len(), 20);
        assert!(laws.iter().all(|l| l.law == vec![WindowProb { s: vec![1], p: 1.0 }]));
    }

    #[test]
    fn natural_law_forecast_effect_is_zero() {
        let scen = ScenarioSpec::new(FutureWindow { f: 3, t_zf: 0 }, Selection::FixedTime, 20);
        let r = forecast_aee_f(&panel(5), &cfg(), &scen, &ExposurePolicy::NaturalLaw).unwrap();
        assert!(r.estimate.value.abs() < 1e-12);
    }

    #[test]
    fn unseen_point_mass_is_refused() {
        let mut d = presets::named("exposure").unwrap();
        d.exposure.as_mut().unwrap().rows.iter_mut().for_each(|r| *r = vec![0.5, 0.5, 0.0]);
        let p = d.simulate(10, 40, 1).unwrap();
        let scen = ScenarioSpec::new(FutureWindow { f: 3, t_zf: 0 }, Selection::FixedTime, 4);
        let r = forecast_aee_f(&p, &cfg(), &scen, &ExposurePolicy::PointMass { s_star: vec![2] });
        assert!(matches!(r, Err(Error::OverlapRefused { .. })));
    }
}
