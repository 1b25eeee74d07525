//! Frequency tables fitted from panels.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dgp::Parent;
use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::window::{Var, WindowSpec};

pub const DEFAULT_MIN_CELL: u64 = 5;

/// Category counts per conditioning key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Counts {
    width: usize,
    cells: BTreeMap<Vec<u32>, Vec<u64>>,
}

impl Counts {
    pub fn new(width: usize) -> Self {
        Counts { width, cells: BTreeMap::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn add(&mut self, key: Vec<u32>, v: u32) {
        let w = self.width;
        self.cells.entry(key).or_insert_with(|| vec![0; w])[v as usize] += 1;
    }

    pub fn get(&self, key: &[u32]) -> Option<&[u64]> {
        self.cells.get(key).map(|v| v.as_slice())
    }

    pub fn total(&self, key: &[u32]) -> u64 {
        self.get(key).map_or(0, |c| c.iter().sum())
    }

    pub fn keys(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.cells.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<u64>)> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Relative frequencies, if the key was seen.
    pub fn probs(&self, key: &[u32]) -> Option<Vec<f64>> {
        let c = self.get(key)?;
        let n: u64 = c.iter().sum();
        Some(c.iter().map(|&k| k as f64 / n as f64).collect())
    }

    /// Mean of `grid[v]`. Summing per category keeps the result independent
    /// of the order observations arrived in.
    pub fn mean(&self, key: &[u32], grid: &[f64]) -> Option<f64> {
        let c = self.get(key)?;
        let n: u64 = c.iter().sum();
        let s: f64 = c.iter().zip(grid).map(|(&k, &g)| k as f64 * g).sum();
        Some(s / n as f64)
    }

    /// Sample variance of `grid[v]` within the key.
    pub fn variance(&self, key: &[u32], grid: &[f64]) -> Option<f64> {
        let c = self.get(key)?;
        let n: u64 = c.iter().sum();
        if n < 2 {
            return None;
        }
        let m = self.mean(key, grid)?;
        let ss: f64 = c.iter().zip(grid).map(|(&k, &g)| k as f64 * (g - m) * (g - m)).sum();
        Some(ss / (n - 1) as f64)
    }
}

/// A conditional table estimated by counting, with thin rows flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedTable {
    pub target: Var,
    pub parents: Vec<Parent>,
    pub cards: Vec<usize>,
    pub counts: Counts,
    pub min_cell: u64,
}

/// One row of a fitted table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FittedRow {
    pub key: Vec<u32>,
    pub count: u64,
    pub probs: Option<Vec<f64>>,
}

impl FittedTable {
    pub fn name(&self) -> String {
        let ps: Vec<String> = self.parents.iter().map(|p| format!("{}[-{}]", p.var.name(), p.lag)).collect();
        format!("p({} | {})", self.target.name(), ps.join(","))
    }

    pub fn estimable(&self, key: &[u32]) -> bool {
        self.counts.total(key) >= self.min_cell
    }

    /// Normalized row, or an unestimable error naming the cell.
    pub fn row(&self, key: &[u32]) -> Result<Vec<f64>> {
        if !self.estimable(key) {
            return Err(Error::Unestimable { factor: self.name(), cell: key.to_vec() });
        }
        Ok(self.counts.probs(key).expect("estimable rows exist"))
    }

    /// Every parent combination, in mixed-radix order.
    pub fn all_rows(&self) -> Vec<FittedRow> {
        let n: usize = self.cards.iter().product();
        (0..n)
            .map(|mut code| {
                let mut key = vec![0u32; self.cards.len()];
                for k in (0..self.cards.len()).rev() {
                    key[k] = (code % self.cards[k]) as u32;
                    code /= self.cards[k];
                }
                let count = self.counts.total(&key);
                let probs = if count >= self.min_cell { self.counts.probs(&key) } else { None };
                FittedRow { key, count, probs }
            })
            .collect()
    }

    pub fn flagged(&self) -> usize {
        self.all_rows().iter().filter(|r| r.probs.is_none()).count()
    }
}

fn parent_key(panel: &Panel, parents: &[Parent], i: usize, t: usize) -> Vec<u32> {
    parents.iter().map(|p| panel.value(p.var, i, t - p.lag)).collect()
}

/// Counts `target` at every time where all parents are observed.
pub fn fit_table(panel: &Panel, target: Var, parents: &[Parent], min_cell: u64) -> FittedTable {
    let schema = panel.schema();
    let lag = parents.iter().map(|p| p.lag).max().unwrap_or(0);
    let mut counts = Counts::new(schema.cardinality(target));
    for i in 0..panel.n_units() {
        for t in lag + 1..=panel.horizon() {
            counts.add(parent_key(panel, parents, i, t), panel.value(target, i, t));
        }
    }
    FittedTable {
        target,
        parents: parents.to_vec(),
        cards: parents.iter().map(|p| schema.cardinality(p.var)).collect(),
        counts,
        min_cell,
    }
}

/// One-step transitions with the declared lag orders, used to impute
/// histories forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transitions {
    /// The intervention variable in the covariate and outcome parents.
    pub driver: Var,
    pub covariate: FittedTable,
    pub exposure: Option<FittedTable>,
    pub outcome: FittedTable,
}

fn lags(var: Var, from: usize, to: usize) -> impl Iterator<Item = Parent> {
    (from..=to).map(move |l| Parent::new(var, l))
}

impl Transitions {
    pub fn covariate_parents(spec: &WindowSpec, driver: Var) -> Vec<Parent> {
        lags(Var::X, 1, spec.l_xx).chain(lags(driver, 1, spec.l_z)).collect()
    }

    pub fn exposure_parents(spec: &WindowSpec) -> Vec<Parent> {
        lags(Var::S, 1, spec.l_ss)
            .chain(lags(Var::X, 0, spec.l_xs))
            .chain(lags(Var::Y, 1, spec.l_ys))
            .collect()
    }

    pub fn outcome_parents(spec: &WindowSpec, driver: Var) -> Vec<Parent> {
        lags(driver, spec.b, spec.b + spec.k)
            .chain(lags(Var::X, 0, spec.l_xy))
            .chain(lags(Var::Y, 1, spec.l_yy))
            .collect()
    }

    /// Largest lag among the transitions.
    pub fn depth(&self) -> usize {
        let mut d = self.covariate.parents.iter().chain(&self.outcome.parents).map(|p| p.lag).max().unwrap_or(0);
        if let Some(e) = &self.exposure {
            d = d.max(e.parents.iter().map(|p| p.lag).max().unwrap_or(0));
        }
        d
    }
}

/// Fits covariate, outcome and (for `driver == S`) exposure transitions.
pub fn fit_conditional_tables(panel: &Panel, spec: &WindowSpec, driver: Var, min_cell: u64) -> Result<Transitions> {
    if panel.n_units() == 0 {
        return Err(Error::Panel("empty panel".into()));
    }
    if !matches!(driver, Var::Z | Var::S) {
        return Err(Error::Window("the driver must be z or s".into()));
    }
    Ok(Transitions {
        driver,
        covariate: fit_table(panel, Var::X, &Transitions::covariate_parents(spec, driver), min_cell),
        exposure: (driver == Var::S)
            .then(|| fit_table(panel, Var::S, &Transitions::exposure_parents(spec), min_cell)),
        outcome: fit_table(panel, Var::Y, &Transitions::outcome_parents(spec, driver), min_cell),
    })
}

/// G-test of `x_t` independent of `driver_{t-1}` given `x_{t-1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn covariate_dependence(panel: &Panel, driver: Var) -> DependenceTest {
    let t = fit_table(panel, Var::X, &[Parent::new(Var::X, 1), Parent::new(driver, 1)], 0);
    let nx = panel.schema().cardinality(Var::X);
    let nd = panel.schema().cardinality(driver);
    let mut g = 0.0;
    let mut df = 0usize;
    for xp in 0..nx as u32 {
        let rows: Vec<Vec<u64>> =
            (0..nd as u32).map(|d| t.counts.get(&[xp, d]).map_or(vec![0; nx], |c| c.to_vec())).collect();
        let row_tot: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
        let col_tot: Vec<f64> = (0..nx).map(|c| rows.iter().map(|r| r[c]).sum::<u64>() as f64).collect();
        let n: f64 = row_tot.iter().sum();
        let live_r = row_tot.iter().filter(|&&v| v > 0.0).count();
        let live_c = col_tot.iter().filter(|&&v| v > 0.0).count();
        if live_r < 2 || live_c < 2 {
            continue;
        }
        df += (live_r - 1) * (live_c - 1);
        for (r, row) in rows.iter().enumerate() {
            for (c, &o) in row.iter().enumerate() {
                if o > 0 {
                    let e = row_tot[r] * col_tot[c] / n;
                    g += 2.0 * o as f64 * (o as f64 / e).ln();
                }
            }
        }
    }
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).map(|d| 1.0 - d.cdf(g.max(0.0))).unwrap_or(1.0)
    };
    DependenceTest { statistic: g, df, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::CondTable;
    use crate::presets;

    #[test]
    fn mean_is_per_category() {
        let mut c = Counts::new(3);
        for v in [0, 2, 2, 1] {
            c.add(vec![7], v);
        }
        assert_eq!(c.mean(&[7], &[2.0, 3.0, 4.0]), Some(3.25));
        assert_eq!(c.total(&[7]), 4);
        assert_eq!(c.mean(&[8], &[2.0, 3.0, 4.0]), None);
    }

    #[test]
    fn control_outcomes_two_and_four_average_to_three() {
        let mut c = Counts::new(5);
        c.add(vec![0], 2);
        c.add(vec![0], 4);
        assert_eq!(c.mean(&[0], &[0.0, 1.0, 2.0, 3.0, 4.0]), Some(3.0));
    }

    #[test]
    fn deterministic_tables_are_recovered_exactly() {
        let mut d = presets::named("tdc-on").unwrap();
        d.covariate = CondTable::from_fn(d.covariate.parents.clone(), &[2, 2], |v| {
            if v[0] == 1 {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        });
        let p = d.simulate(10, 30, 1).unwrap();
        let t = fit_table(&p, Var::X, &d.covariate.parents, 1);
        for r in t.all_rows() {
            if let Some(pr) = r.probs {
                assert_eq!(pr, d.covariate.rows[r.key[0] as usize * 2 + r.key[1] as usize]);
            }
        }
    }

    #[test]
    fn rows_renormalize() {
        let d = presets::named("tdc-on").unwrap();
        let p = d.simulate(20, 100, 2).unwrap();
        let t = fit_table(&p, Var::Y, &d.outcome.parents, DEFAULT_MIN_CELL);
        for r in t.all_rows() {
            if let Some(pr) = r.probs {
                assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lag_beyond_panel_flags_everything() {
        let d = presets::named("tdc-on").unwrap();
        let p = d.simulate(3, 4, 3).unwrap();
        let t = fit_table(&p, Var::X, &[Parent::new(Var::X, 4)], DEFAULT_MIN_CELL);
        assert_eq!(t.flagged(), 2);
        assert!(matches!(t.row(&[0]), Err(Error::Unestimable { .. })));
    }

    #[test]
    fn dependence_test_sees_feedback() {
        let p = presets::named("tdc-on").unwrap().simulate(20, 500, 4).unwrap();
        assert!(covariate_dependence(&p, Var::Z).p_value < 1e-3);
        let p = presets::named("null-effect").unwrap().simulate(20, 500, 4).unwrap();
        assert!(covariate_dependence(&p, Var::Z).p_value > 1e-3);
    }
}
