//! Window geometry and history slicing.
//!
//! A slot `(var, offset)` names the value of `var` at time `t - offset` for an
//! anchor time `t`. Windows are stored oldest-first: position 0 of the
//! intervention window is time `t-B-K`, position `K` is time `t-B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Panel variables, listed in within-period causal order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X,
    Z,
    S,
    Y,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Z => "z",
            Var::S => "s",
            Var::Y => "y",
        }
    }

    /// Position within a period: covariates, then treatment, exposure, outcome.
    pub fn order(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub var: Var,
    pub offset: usize,
}

impl Slot {
    pub fn new(var: Var, offset: usize) -> Self {
        Slot { var, offset }
    }
}

/// Where the pre-treatment outcome history ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeEnd {
    /// Outcomes through `t-B-K-1`.
    #[default]
    BeforeWindow,
    /// Outcomes through `t-B-K`.
    WindowStart,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Latency.
    pub b: usize,
    /// Carry-over.
    pub k: usize,
    pub l: usize,
    #[serde(default = "one")]
    pub q: usize,
    pub l_x: usize,
    pub l_y: usize,
    #[serde(default = "one")]
    pub l_z: usize,
    #[serde(default = "one")]
    pub l_xx: usize,
    #[serde(default = "one")]
    pub l_ss: usize,
    #[serde(default = "one")]
    pub l_xs: usize,
    #[serde(default = "one")]
    pub l_ys: usize,
    /// Covariate lags of the outcome transition used for forward imputation.
    #[serde(default)]
    pub l_xy: usize,
    /// Outcome lags of the outcome transition used for forward imputation.
    #[serde(default = "one")]
    pub l_yy: usize,
    #[serde(default)]
    pub outcome_end: OutcomeEnd,
}

impl WindowSpec {
    /// Spec with forecasting lags at their defaults.
    pub fn new(b: usize, k: usize, l: usize, l_x: usize, l_y: usize) -> Self {
        WindowSpec {
            b,
            k,
            l,
            q: 1,
            l_x,
            l_y,
            l_z: 1,
            l_xx: 1,
            l_ss: 1,
            l_xs: 1,
            l_ys: 1,
            l_xy: 0,
            l_yy: 1,
            outcome_end: OutcomeEnd::BeforeWindow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Window(m));
        if self.l < self.b || self.l > self.b + self.k {
            return bad(format!("need B <= L <= B+K, got B={} L={} K={}", self.b, self.l, self.k));
        }
        if self.q < 1 {
            return bad("need Q >= 1".into());
        }
        if self.l_x < self.k {
            return bad(format!("need L_x >= K, got L_x={} K={}", self.l_x, self.k));
        }
        if self.l_y <= self.k {
            return bad(format!("need L_y > K, got L_y={} K={}", self.l_y, self.k));
        }
        for (name, v) in [
            ("L_z", self.l_z),
            ("L_xx", self.l_xx),
            ("L_ss", self.l_ss),
            ("L_xs", self.l_xs),
            ("L_ys", self.l_ys),
        ] {
            if v < 1 {
                return bad(format!("need {name} >= 1"));
            }
        }
        Ok(())
    }

    fn end_shift(&self) -> usize {
        match self.outcome_end {
            OutcomeEnd::BeforeWindow => 0,
            OutcomeEnd::WindowStart => 1,
        }
    }

    /// Largest offset any slot reaches back from the anchor.
    pub fn depth(&self) -> usize {
        self.b + self.l_x.max(self.l_y)
    }

    /// Window start `H = t-B-K`.
    pub fn h(&self, t: usize) -> Result<usize> {
        t.checked_sub(self.b + self.k)
            .filter(|&h| h >= 1)
            .ok_or_else(|| Error::OutOfRange { t, bound: "t-B-K >= 1".into() })
    }

    /// Rejects anchors whose windows leave `[1, horizon]`.
    pub fn check_time(&self, t: usize, horizon: usize) -> Result<()> {
        if t > horizon {
            return Err(Error::OutOfRange { t, bound: format!("t <= T = {horizon}") });
        }
        if t < self.depth() + 1 {
            return Err(Error::OutOfRange {
                t,
                bound: format!("t-B-max(L_x,L_y) >= 1 needs t >= {}", self.depth() + 1),
            });
        }
        Ok(())
    }

    /// Pre-treatment covariates, times `t-B-L_x ..= t-B-K`.
    pub fn r_x(&self) -> Vec<Slot> {
        (self.b + self.k..=self.b + self.l_x).rev().map(|o| Slot::new(Var::X, o)).collect()
    }

    /// Pre-treatment outcomes, times `t-B-L_y ..= t-B-K-1` (or `t-B-K`).
    pub fn r_y(&self) -> Vec<Slot> {
        let lo = self.b + self.k + 1 - self.end_shift();
        (lo..=self.b + self.l_y).rev().map(|o| Slot::new(Var::Y, o)).collect()
    }

    /// R-bar slots: covariates then outcomes, each oldest-first.
    pub fn r_bar(&self) -> Vec<Slot> {
        let mut v = self.r_x();
        v.extend(self.r_y());
        v
    }

    /// Within-window covariates, times `t-B-K+1 ..= t-B`.
    pub fn v_x(&self) -> Vec<Slot> {
        (self.b..self.b + self.k).rev().map(|o| Slot::new(Var::X, o)).collect()
    }

    /// Within-window outcomes, times `t-B-K ..= t-B-1` (from `t-B-K+1` when the
    /// pre-treatment history already holds `t-B-K`).
    pub fn v_y(&self) -> Vec<Slot> {
        let hi = self.b + self.k - self.end_shift();
        (self.b + 1..=hi).rev().map(|o| Slot::new(Var::Y, o)).collect()
    }

    pub fn v_bar(&self) -> Vec<Slot> {
        let mut v = self.v_x();
        v.extend(self.v_y());
        v
    }

    /// Intervention window slots for `var`, oldest-first.
    pub fn window(&self, var: Var) -> Vec<Slot> {
        (self.b..=self.b + self.k).rev().map(|o| Slot::new(var, o)).collect()
    }

    /// Window slots interleaved in causal order, starting at `t-B-K`:
    /// intervention at `H`, outcome at `H` (if not pre-treatment), then
    /// covariate / intervention / outcome for each later time up to `t-B`.
    pub fn window_sequence(&self, var: Var) -> Vec<Slot> {
        let vx = self.v_x();
        let vy = self.v_y();
        let mut seq = Vec::new();
        for o in (self.b..=self.b + self.k).rev() {
            let x = Slot::new(Var::X, o);
            if vx.contains(&x) {
                seq.push(x);
            }
            seq.push(Slot::new(var, o));
            let y = Slot::new(Var::Y, o);
            if vy.contains(&y) {
                seq.push(y);
            }
        }
        seq
    }
}

/// Values of the windowed histories of one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryView {
    pub t: usize,
    pub r_bar: Vec<u32>,
    pub v_bar: Vec<u32>,
    pub z_window: Vec<u32>,
    pub s_window: Vec<u32>,
}

/// Reads slot values for anchor `(i, t)`; the caller guarantees the range.
pub fn read_slots(panel: &Panel, slots: &[Slot], i: usize, t: usize) -> Vec<u32> {
    slots.iter().map(|s| panel.value(s.var, i, t - s.offset)).collect()
}

pub fn extract_history(panel: &Panel, spec: &WindowSpec, i: usize, t: usize) -> Result<HistoryView> {
    spec.validate()?;
    spec.check_time(t, panel.horizon())?;
    if i >= panel.n_units() {
        return Err(Error::Panel(format!("unit index {i} out of range")));
    }
    Ok(HistoryView {
        t,
        r_bar: read_slots(panel, &spec.r_bar(), i, t),
        v_bar: read_slots(panel, &spec.v_bar(), i, t),
        z_window: read_slots(panel, &spec.window(Var::Z), i, t),
        s_window: read_slots(panel, &spec.window(Var::S), i, t),
    })
}

/// Times covered by a slot list at anchor `t`.
pub fn slot_times(slots: &[Slot], t: usize) -> Vec<usize> {
    slots.iter().map(|s| t - s.offset).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_geometry() {
        let spec = WindowSpec::new(1, 3, 2, 3, 4);
        spec.validate().unwrap();
        assert_eq!(slot_times(&spec.window(Var::Z), 9), vec![5, 6, 7, 8]);
        assert_eq!(slot_times(&spec.r_x(), 9), vec![5]);
        assert_eq!(slot_times(&spec.r_y(), 9), vec![4]);
        assert_eq!(slot_times(&spec.v_x(), 9), vec![6, 7, 8]);
        assert_eq!(slot_times(&spec.v_y(), 9), vec![5, 6, 7]);
        spec.check_time(9, 10).unwrap();
        assert!(spec.check_time(3, 10).is_err());
        assert!(spec.check_time(11, 10).is_err());
    }

    #[test]
    fn no_carry_over() {
        let spec = WindowSpec::new(0, 0, 0, 0, 1);
        assert_eq!(slot_times(&spec.window(Var::Z), 5), vec![5]);
        assert!(spec.v_bar().is_empty());
        assert_eq!(spec.window_sequence(Var::Z), vec![Slot::new(Var::Z, 0)]);
    }

    #[test]
    fn window_start_endpoint_moves_one_outcome() {
        let mut spec = WindowSpec::new(1, 3, 2, 3, 4);
        spec.outcome_end = OutcomeEnd::WindowStart;
        assert_eq!(slot_times(&spec.r_y(), 9), vec![4, 5]);
        assert_eq!(slot_times(&spec.v_y(), 9), vec![6, 7]);
    }

    #[test]
    fn sequence_is_causal() {
        let spec = WindowSpec::new(0, 2, 0, 2, 3);
        let seq = spec.window_sequence(Var::Z);
        let names: Vec<(Var, usize)> = seq.iter().map(|s| (s.var, s.offset)).collect();
        assert_eq!(
            names,
            vec![
                (Var::Z, 2),
                (Var::Y, 2),
                (Var::X, 1),
                (Var::Z, 1),
                (Var::Y, 1),
                (Var::X, 0),
                (Var::Z, 0)
            ]
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(WindowSpec::new(1, 1, 0, 1, 2).validate().is_err());
        assert!(WindowSpec::new(0, 2, 0, 1, 3).validate().is_err());
        assert!(WindowSpec::new(0, 2, 0, 2, 2).validate().is_err());
    }
}
