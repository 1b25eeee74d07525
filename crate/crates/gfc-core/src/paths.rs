//! Forward path enumeration and sampling under interventions.

use std::collections::BTreeMap;

use crate::dgp::{CondTable, Dgp, Rec};
use crate::error::{Error, Result};
use crate::rng::{categorical, Stream};
use crate::window::Var;

/// How one variable is generated at one time.
#[derive(Clone, Debug, PartialEq)]
pub enum Rule {
    Fixed(u8),
    /// Drawn from a hypothetical table instead of the structural one.
    Policy(CondTable),
}

/// Interventions keyed by (time, variable); unlisted cells follow the Dgp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Regime {
    rules: BTreeMap<(usize, Var), Rule>,
}

impl Regime {
    pub fn new() -> Self {
        Regime::default()
    }

    pub fn fix(mut self, var: Var, t: usize, v: u8) -> Self {
        self.rules.insert((t, var), Rule::Fixed(v));
        self
    }

    pub fn fix_range(mut self, var: Var, from: usize, to: usize, v: u8) -> Self {
        for t in from..=to {
            self.rules.insert((t, var), Rule::Fixed(v));
        }
        self
    }

    /// Fixes `var` to `values` at consecutive times starting at `from`.
    pub fn fix_vector(mut self, var: Var, from: usize, values: &[u32]) -> Self {
        for (k, &v) in values.iter().enumerate() {
            self.rules.insert((from + k, var), Rule::Fixed(v as u8));
        }
        self
    }

    pub fn policy(mut self, var: Var, from: usize, to: usize, table: &CondTable) -> Self {
        for t in from..=to {
            self.rules.insert((t, var), Rule::Policy(table.clone()));
        }
        self
    }

    pub fn get(&self, var: Var, t: usize) -> Option<&Rule> {
        self.rules.get(&(t, var))
    }
}

/// Where a forward pass starts: the history before `t0`, optionally with the
/// covariate at `t0` already realized.
#[derive(Clone, Debug)]
pub struct Start<'a> {
    pub prefix: &'a [Rec],
    pub t0: usize,
    pub x0: Option<u8>,
}

impl<'a> Start<'a> {
    pub fn new(prefix: &'a [Rec], t0: usize, x0: Option<u8>) -> Result<Self> {
        if prefix.len() + 1 != t0 {
            return Err(Error::Oracle(format!("prefix holds {} periods, start time {t0}", prefix.len())));
        }
        Ok(Start { prefix, t0, x0 })
    }
}

const ORDER: [Var; 4] = [Var::X, Var::Z, Var::S, Var::Y];

/// Branching rows for one cell: `None` means the variable is absent.
fn rows(dgp: &Dgp, regime: &Regime, var: Var, traj: &[Rec], t: usize) -> Option<Branch> {
    match regime.get(var, t) {
        Some(Rule::Fixed(v)) => Some(Branch::Fixed(*v)),
        Some(Rule::Policy(tab)) => Some(Branch::Row(dgp.row_of(tab, traj, t).to_vec())),
        None => dgp.row(var, traj, t).map(|r| Branch::Row(r.to_vec())),
    }
}

enum Branch {
    Fixed(u8),
    Row(Vec<f64>),
}

/// Upper bound on the number of paths from `start` through `t1`.
pub fn path_count(dgp: &Dgp, start: &Start, t1: usize, regime: &Regime) -> f64 {
    let mut n = 1.0f64;
    for t in start.t0..=t1 {
        for var in ORDER {
            if var == Var::X && t == start.t0 && start.x0.is_some() {
                continue;
            }
            let fixed = matches!(regime.get(var, t), Some(Rule::Fixed(_)));
            if !fixed && (dgp.has(var) || regime.get(var, t).is_some()) {
                n *= dgp.cardinality(var) as f64;
            }
        }
    }
    n
}

/// Calls `f(path, prob)` for every positive-probability path from `start`
/// through `t1`. Fails when the path count bound exceeds `cap`.
pub fn enumerate(
    dgp: &Dgp,
    start: &Start,
    t1: usize,
    regime: &Regime,
    cap: f64,
    f: &mut dyn FnMut(&[Rec], f64),
) -> Result<()> {
    let n = path_count(dgp, start, t1, regime);
    if n > cap {
        return Err(Error::Oracle(format!("{n:.0} paths exceed the enumeration cap {cap:.0}")));
    }
    if t1 < start.t0 {
        f(start.prefix, 1.0);
        return Ok(());
    }
    let mut traj = start.prefix.to_vec();
    walk(dgp, regime, start, t1, start.t0, 0, 1.0, &mut traj, f);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn walk(
    dgp: &Dgp,
    regime: &Regime,
    start: &Start,
    t1: usize,
    t: usize,
    stage: usize,
    prob: f64,
    traj: &mut Vec<Rec>,
    f: &mut dyn FnMut(&[Rec], f64),
) {
    if stage == ORDER.len() {
        if t == t1 {
            f(traj, prob);
        } else {
            walk(dgp, regime, start, t1, t + 1, 0, prob, traj, f);
        }
        return;
    }
    let var = ORDER[stage];
    if stage == 0 {
        traj.push(Rec::default());
        if t == start.t0 {
            if let Some(x) = start.x0 {
                traj[t - 1].x = x;
                walk(dgp, regime, start, t1, t, 1, prob, traj, f);
                traj.pop();
                return;
            }
        }
    }
    match rows(dgp, regime, var, traj, t) {
        None => walk(dgp, regime, start, t1, t, stage + 1, prob, traj, f),
        Some(Branch::Fixed(v)) => {
            traj[t - 1].set(var, v);
            walk(dgp, regime, start, t1, t, stage + 1, prob, traj, f);
        }
        Some(Branch::Row(row)) => {
            for (v, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    traj[t - 1].set(var, v as u8);
                    walk(dgp, regime, start, t1, t, stage + 1, prob * p, traj, f);
                }
            }
            traj[t - 1].set(var, 0);
        }
    }
    if stage == 0 {
        traj.pop();
    }
}

/// Samples one path from `start` through `t1`; uniforms come from `rng` at
/// counters keyed by (time, variable).
pub fn sample(dgp: &Dgp, start: &Start, t1: usize, regime: &Regime, rng: &mut Stream) -> Vec<Rec> {
    let mut traj = start.prefix.to_vec();
    for t in start.t0..=t1 {
        traj.push(Rec::default());
        for (k, var) in ORDER.into_iter().enumerate() {
            if var == Var::X && t == start.t0 {
                if let Some(x) = start.x0 {
                    traj[t - 1].x = x;
                    continue;
                }
            }
            let v = match rows(dgp, regime, var, &traj, t) {
                None => continue,
                Some(Branch::Fixed(v)) => v,
                Some(Branch::Row(row)) => categorical(&row, rng.at(t, k as u64)) as u8,
            };
            traj[t - 1].set(var, v);
        }
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn probabilities_sum_to_one() {
        let d = presets::named("tdc-on").unwrap();
        let prefix = vec![Rec { x: 1, z: 0, s: 0, y: 1 }];
        let start = Start::new(&prefix, 2, None).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        enumerate(&d, &start, 4, &Regime::new(), 1e7, &mut |_, p| {
            total += p;
            n += 1;
        })
        .unwrap();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(n, 8 * 8 * 8);
    }

    #[test]
    fn fixed_cells_do_not_branch() {
        let d = presets::named("tdc-on").unwrap();
        let prefix: Vec<Rec> = vec![];
        let start = Start::new(&prefix, 1, Some(1)).unwrap();
        let regime = Regime::new().fix_range(Var::Z, 1, 3, 0);
        let mut n = 0;
        enumerate(&d, &start, 3, &regime, 1e7, &mut |tr, _| {
            assert!(tr.iter().all(|r| r.z == 0));
            assert_eq!(tr[0].x, 1);
            n += 1;
        })
        .unwrap();
        assert_eq!(n, 2 * 4 * 4);
        assert_eq!(path_count(&d, &start, 3, &regime), 32.0);
    }

    #[test]
    fn cap_is_enforced() {
        let d = presets::named("tdc-on").unwrap();
        let start = Start::new(&[], 1, None).unwrap();
        assert!(enumerate(&d, &start, 10, &Regime::new(), 1e3, &mut |_, _| {}).is_err());
    }

    #[test]
    fn sampling_respects_rules() {
        let d = presets::named("null-effect").unwrap();
        let start = Start::new(&[], 1, None).unwrap();
        let regime = Regime::new().fix(Var::S, 2, 2).fix(Var::Z, 3, 1);
        let mut rng = Stream::new(5, 0);
        let tr = sample(&d, &start, 4, &regime, &mut rng);
        assert_eq!(tr.len(), 4);
        assert_eq!(tr[1].s, 2);
        assert_eq!(tr[2].z, 1);
    }
}
