//! Structural data-generating processes over discrete grids.
//!
//! Every variable is drawn from a dense conditional table indexed by the
//! values of its parents. A parent is `(var, lag)`; lag 0 may only name a
//! variable earlier in the period order x, z, s, y. Reads before time 1 see
//! the padding value 0, so the tables at the zero state act as the initial
//! distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Cell, CovariateSpec, Grid, Panel, Schema, SCHEMA_VERSION};
use crate::rng::{categorical, stream_id, Stream};
use crate::window::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parent {
    pub var: Var,
    pub lag: usize,
}

impl Parent {
    pub fn new(var: Var, lag: usize) -> Self {
        Parent { var, lag }
    }
}

/// Dense conditional table; rows use mixed radix over parents, first parent
/// most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondTable {
    pub parents: Vec<Parent>,
    pub rows: Vec<Vec<f64>>,
}

impl CondTable {
    /// Builds a table by evaluating `f` on every parent combination.
    pub fn from_fn(parents: Vec<Parent>, cards: &[usize], f: impl Fn(&[u32]) -> Vec<f64>) -> Self {
        let n: usize = cards.iter().product();
        let mut vals = vec![0u32; cards.len()];
        let rows = (0..n)
            .map(|mut code| {
                for k in (0..cards.len()).rev() {
                    vals[k] = (code % cards[k]) as u32;
                    code /= cards[k];
                }
                f(&vals)
            })
            .collect();
        CondTable { parents, rows }
    }

    pub fn row_index(&self, vals: &[u32], cards: &[usize]) -> usize {
        vals.iter().zip(cards).fold(0usize, |acc, (&v, &c)| acc * c + v as usize)
    }

    pub fn max_lag(&self) -> usize {
        self.parents.iter().map(|p| p.lag).max().unwrap_or(0)
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.parents.iter().any(|p| p.var == var)
    }
}

/// Bernoulli row `[1-p, p]`.
pub fn bern(p: f64) -> Vec<f64> {
    vec![1.0 - p, p]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Drift {
    #[default]
    None,
    /// From time `tau` on, the listed tables replace the base ones. This acts
    /// as an unmeasured modifier switching at `tau`.
    Shift {
        tau: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariate: Option<CondTable>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<CondTable>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    pub schema_version: u32,
    pub name: String,
    pub x_levels: u32,
    pub s_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub covariate: CondTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<CondTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<CondTable>,
    pub outcome: CondTable,
    pub time_dependent_confounding: bool,
    #[serde(default)]
    pub modifier_drift: Drift,
}

/// Values of one simulated period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Rec {
    pub x: u8,
    pub z: u8,
    pub s: u8,
    pub y: u8,
}

impl Rec {
    pub fn get(&self, var: Var) -> u32 {
        u32::from(match var {
            Var::X => self.x,
            Var::Z => self.z,
            Var::S => self.s,
            Var::Y => self.y,
        })
    }

    pub fn set(&mut self, var: Var, v: u8) {
        match var {
            Var::X => self.x = v,
            Var::Z => self.z = v,
            Var::S => self.s = v,
            Var::Y => self.y = v,
        }
    }
}

/// Value of `var` at time `t` (1-based) in a trajectory, 0 before time 1.
pub fn read(traj: &[Rec], var: Var, t: isize) -> u32 {
    if t < 1 {
        0
    } else {
        traj[(t - 1) as usize].get(var)
    }
}

impl Dgp {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let d: Dgp = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        d.validate()?;
        Ok(d)
    }

    pub fn cardinality(&self, var: Var) -> usize {
        match var {
            Var::X => self.x_levels as usize,
            Var::Z => 2,
            Var::S => self.s_grid.len(),
            Var::Y => self.y_grid.len(),
        }
    }

    pub fn has(&self, var: Var) -> bool {
        match var {
            Var::X | Var::Y => true,
            Var::Z => self.treatment.is_some(),
            Var::S => self.exposure.is_some(),
        }
    }

    pub fn schema(&self) -> Schema {
        Schema {
            schema_version: SCHEMA_VERSION,
            covariates: vec![CovariateSpec { name: "x_1".into(), levels: self.x_levels }],
            s: Grid::new(self.s_grid.clone()),
            y: Grid::new(self.y_grid.clone()),
        }
    }

    fn cards(&self, t: &CondTable) -> Vec<usize> {
        t.parents.iter().map(|p| self.cardinality(p.var)).collect()
    }

    fn check_table(&self, name: &str, target: Var, t: &CondTable) -> Result<()> {
        let bad = |m: String| Err(Error::Dgp(format!("{name}: {m}")));
        for p in &t.parents {
            if p.lag == 0 && p.var.order() >= target.order() {
                return bad(format!("lag-0 parent {} does not precede {}", p.var.name(), target.name()));
            }
        }
        let cards = self.cards(t);
        let n: usize = cards.iter().product();
        if t.rows.len() != n {
            return bad(format!("expected {n} rows, got {}", t.rows.len()));
        }
        let width = self.cardinality(target);
        for (r, row) in t.rows.iter().enumerate() {
            if row.len() != width {
                return bad(format!("row {r} has {} entries, expected {width}", row.len()));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return bad(format!("row {r} has a negative or non-finite entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return bad(format!("row {r} sums to {sum}"));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_levels == 0 || self.x_levels > 255 {
            return Err(Error::Dgp("x_levels must be in 1..=255".into()));
        }
        if self.s_grid.is_empty() || self.y_grid.is_empty() || self.s_grid.len() > 255 || self.y_grid.len() > 255 {
            return Err(Error::Dgp("grids need 1..=255 values".into()));
        }
        if self.exposure.is_none() && self.s_grid.len() != 1 {
            return Err(Error::Dgp("without an exposure model the s grid must have one value".into()));
        }
        self.check_table("covariate", Var::X, &self.covariate)?;
        if let Some(t) = &self.treatment {
            self.check_table("treatment", Var::Z, t)?;
        }
        if let Some(t) = &self.exposure {
            self.check_table("exposure", Var::S, t)?;
        }
        self.check_table("outcome", Var::Y, &self.outcome)?;
        if let Drift::Shift { tau, covariate, outcome } = &self.modifier_drift {
            if *tau < 1 {
                return Err(Error::Dgp("drift time must be >= 1".into()));
            }
            if let Some(t) = covariate {
                self.check_table("drifted covariate", Var::X, t)?;
            }
            if let Some(t) = outcome {
                self.check_table("drifted outcome", Var::Y, t)?;
            }
        }
        if !self.time_dependent_confounding {
            let mut covs = vec![&self.covariate];
            if let Drift::Shift { covariate: Some(c), .. } = &self.modifier_drift {
                covs.push(c);
            }
            if covs.iter().any(|c| c.depends_on(Var::Z) || c.depends_on(Var::S)) {
                return Err(Error::Dgp("time_dependent_confounding is off but covariates depend on z or s".into()));
            }
            for t in self.treatment.iter().chain(self.exposure.iter()) {
                if t.depends_on(Var::Y) {
                    return Err(Error::Dgp(
                        "time_dependent_confounding is off but assignment depends on y".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        let mut m = self.covariate.max_lag().max(self.outcome.max_lag());
        for t in self.treatment.iter().chain(self.exposure.iter()) {
            m = m.max(t.max_lag());
        }
        m
    }

    /// The table generating `var` at time `t`, after drift.
    pub fn table(&self, var: Var, t: usize) -> Option<&CondTable> {
        if let Drift::Shift { tau, covariate, outcome } = &self.modifier_drift {
            if t >= *tau {
                match var {
                    Var::X if covariate.is_some() => return covariate.as_ref(),
                    Var::Y if outcome.is_some() => return outcome.as_ref(),
                    _ => {}
                }
            }
        }
        match var {
            Var::X => Some(&self.covariate),
            Var::Z => self.treatment.as_ref(),
            Var::S => self.exposure.as_ref(),
            Var::Y => Some(&self.outcome),
        }
    }

    /// Row of `table` for the period at time `t`; `traj` holds times `1..=t`
    /// with the current period filled up to the preceding variables.
    pub fn row_of<'a>(&self, table: &'a CondTable, traj: &[Rec], t: usize) -> &'a [f64] {
        let mut idx = 0usize;
        for p in &table.parents {
            let v = read(traj, p.var, t as isize - p.lag as isize);
            idx = idx * self.cardinality(p.var) + v as usize;
        }
        &table.rows[idx]
    }

    /// Natural-law row for `var` at time `t`; `None` for absent variables.
    pub fn row(&self, var: Var, traj: &[Rec], t: usize) -> Option<&[f64]> {
        self.table(var, t).map(|tab| self.row_of(tab, traj, t))
    }

    /// Outcome grid value of index `y`.
    pub fn y_value(&self, y: u8) -> f64 {
        self.y_grid[usize::from(y)]
    }

    /// Samples times `t0..=t1` forward given the history in `traj`
    /// (which must hold times `1..t0`).
    pub fn sample_forward(&self, traj: &mut Vec<Rec>, t0: usize, t1: usize, rng: &mut Stream) {
        for t in t0..=t1 {
            traj.push(Rec::default());
            for (k, var) in [Var::X, Var::Z, Var::S, Var::Y].into_iter().enumerate() {
                if let Some(row) = self.row(var, traj, t) {
                    let v = categorical(row, rng.at(t, k as u64)) as u8;
                    traj[t - 1].set(var, v);
                }
            }
        }
    }

    /// Simulates `units` independent trajectories of length `horizon`.
    pub fn simulate_trajectories(&self, units: usize, horizon: usize, seed: u64) -> Result<Vec<Vec<Rec>>> {
        self.validate()?;
        if units == 0 || horizon == 0 {
            return Err(Error::Dgp("need at least one unit and one time".into()));
        }
        if self.max_lag() >= horizon {
            return Err(Error::Dgp(format!("table lag {} does not fit in horizon {horizon}", self.max_lag())));
        }
        Ok((0..units)
            .into_par_iter()
            .map(|i| {
                let mut rng = Stream::new(seed, stream_id(0, i as u64));
                let mut traj = Vec::with_capacity(horizon);
                self.sample_forward(&mut traj, 1, horizon, &mut rng);
                traj
            })
            .collect())
    }

    pub fn simulate(&self, units: usize, horizon: usize, seed: u64) -> Result<Panel> {
        let trajs = self.simulate_trajectories(units, horizon, seed)?;
        self.to_panel(&trajs)
    }

    pub fn to_panel(&self, trajs: &[Vec<Rec>]) -> Result<Panel> {
        let units = (1..=trajs.len()).map(|i| format!("u{i}")).collect();
        let rows = trajs
            .iter()
            .map(|tr| tr.iter().map(|r| Cell { z: r.z, s: r.s, y: r.y, x: vec![r.x] }).collect())
            .collect();
        Panel::from_rows(self.schema(), units, rows)
    }
}

/// Trajectories read back from a panel; covariates become their joint code.
pub fn trajectories(panel: &Panel) -> Result<Vec<Vec<Rec>>> {
    if panel.schema().x_joint_levels() > 256 {
        return Err(Error::Panel("joint covariate grid exceeds 256 levels".into()));
    }
    Ok((0..panel.n_units())
        .map(|i| {
            (1..=panel.horizon())
                .map(|t| Rec { x: panel.x_joint(i, t) as u8, z: panel.z(i, t), s: panel.s(i, t), y: panel.y(i, t) })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn presets_validate() {
        for name in presets::NAMES {
            presets::named(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn row_sums_are_checked() {
        let mut d = presets::named("null-effect").unwrap();
        d.outcome.rows[0] = vec![0.5, 0.6];
        assert!(d.validate().is_err());
    }

    #[test]
    fn tdc_flag_is_structural() {
        let mut d = presets::named("tdc-on").unwrap();
        d.time_dependent_confounding = false;
        assert!(d.validate().is_err());
    }

    #[test]
    fn point_mass_tables_give_constants() {
        let mut d = presets::named("null-effect").unwrap();
        d.covariate = CondTable { parents: vec![], rows: vec![vec![0.0, 1.0]] };
        d.treatment = Some(CondTable { parents: vec![], rows: vec![bern(1.0)] });
        d.exposure = Some(CondTable { parents: vec![], rows: vec![vec![0.0, 0.0, 1.0]] });
        d.outcome = CondTable { parents: vec![], rows: vec![bern(0.0)] };
        let p = d.simulate(3, 5, 11).unwrap();
        for i in 0..3 {
            for t in 1..=5 {
                assert_eq!((p.x(i, t)[0], p.z(i, t), p.s(i, t), p.y(i, t)), (1, 1, 2, 0));
            }
        }
    }

    #[test]
    fn null_assignment_gives_zero_treatment() {
        let mut d = presets::named("null-effect").unwrap();
        d.treatment = Some(CondTable { parents: vec![], rows: vec![bern(0.0)] });
        let p = d.simulate(4, 9, 3).unwrap();
        assert!((0..4).all(|i| (1..=9).all(|t| p.z(i, t) == 0)));
    }

    #[test]
    fn simulation_is_deterministic() {
        let d = presets::named("tdc-on").unwrap();
        assert_eq!(d.simulate(3, 8, 42).unwrap(), d.simulate(3, 8, 42).unwrap());
        assert_ne!(d.simulate(3, 8, 42).unwrap(), d.simulate(3, 8, 43).unwrap());
    }

    #[test]
    fn lag_overflow_is_rejected() {
        let d = presets::named("tdc-on").unwrap();
        assert!(d.simulate(2, 1, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        for name in presets::NAMES {
            let d = presets::named(name).unwrap();
            let back: Dgp = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
            assert_eq!(back, d);
        }
    }
}
