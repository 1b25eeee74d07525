//! Immutable unit-by-time panel on declared finite grids.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::Mapper;
use crate::window::{read_slots, Var, WindowSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Finite value grid; with `bin_edges` raw values are binned on ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
}

impl Grid {
    pub fn new(values: Vec<f64>) -> Self {
        Grid { values, bin_edges: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.values.is_empty() || self.values.len() > 255 {
            return Err(Error::Panel(format!("grid {name} needs 1..=255 values")));
        }
        if let Some(e) = &self.bin_edges {
            if e.len() != self.values.len() + 1 || e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Panel(format!(
                    "grid {name}: bin_edges must be increasing with one more entry than values"
                )));
            }
        }
        Ok(())
    }

    /// Grid index of a raw value.
    pub fn index_of(&self, v: f64) -> Option<u8> {
        if let Some(e) = &self.bin_edges {
            let last = e.len() - 1;
            if v < e[0] || v > e[last] {
                return None;
            }
            let k = e[1..].iter().position(|&hi| v < hi).unwrap_or(last - 1);
            return Some(k as u8);
        }
        self.values.iter().position(|&g| (g - v).abs() <= 1e-9).map(|k| k as u8)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub levels: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub schema_version: u32,
    pub covariates: Vec<CovariateSpec>,
    pub s: Grid,
    pub y: Grid,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Panel("schema needs at least one covariate".into()));
        }
        for c in &self.covariates {
            if c.levels == 0 || c.levels > 255 {
                return Err(Error::Panel(format!("covariate {} needs 1..=255 levels", c.name)));
            }
        }
        let joint: u64 = self.covariates.iter().map(|c| u64::from(c.levels)).product();
        if joint > u64::from(u32::MAX) {
            return Err(Error::Panel("joint covariate space too large".into()));
        }
        self.s.validate("s")?;
        self.y.validate("y")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Schema = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn n_cov(&self) -> usize {
        self.covariates.len()
    }

    /// Size of the joint covariate space.
    pub fn x_joint_levels(&self) -> u32 {
        self.covariates.iter().map(|c| c.levels).product()
    }

    pub fn cardinality(&self, var: Var) -> usize {
        match var {
            Var::X => self.x_joint_levels() as usize,
            Var::Z => 2,
            Var::S => self.s.len(),
            Var::Y => self.y.len(),
        }
    }
}

/// Per-variable value indices of one unit-time.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Cell {
    pub z: u8,
    pub s: u8,
    pub y: u8,
    pub x: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    schema: Schema,
    units: Vec<String>,
    horizon: usize,
    z: Vec<u8>,
    s: Vec<u8>,
    y: Vec<u8>,
    x: Vec<u8>,
    observed: Vec<bool>,
}

impl Panel {
    /// Builds a panel from per-unit rows ordered by time (times 1..=T).
    pub fn from_rows(schema: Schema, units: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        if units.len() != rows.len() || units.is_empty() {
            return Err(Error::Panel("need one row list per unit".into()));
        }
        let horizon = rows[0].len();
        if horizon == 0 {
            return Err(Error::Panel("horizon must be >= 1".into()));
        }
        let p = schema.n_cov();
        let n = units.len() * horizon;
        let mut panel = Panel {
            schema,
            units,
            horizon,
            z: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n * p),
            observed: vec![true; n],
        };
        for (i, r) in rows.iter().enumerate() {
            if r.len() != horizon {
                return Err(Error::Panel(format!("unit {} has {} times, expected {horizon}", panel.units[i], r.len())));
            }
            for (t0, c) in r.iter().enumerate() {
                panel.check_cell(c).map_err(|m| Error::Panel(format!("unit {} time {}: {m}", panel.units[i], t0 + 1)))?;
                panel.z.push(c.z);
                panel.s.push(c.s);
                panel.y.push(c.y);
                panel.x.extend_from_slice(&c.x);
            }
        }
        Ok(panel)
    }

    fn check_cell(&self, c: &Cell) -> std::result::Result<(), String> {
        if c.z > 1 {
            return Err("z must be 0 or 1".into());
        }
        if usize::from(c.s) >= self.schema.s.len() {
            return Err("s off declared grid".into());
        }
        if usize::from(c.y) >= self.schema.y.len() {
            return Err("y off declared grid".into());
        }
        if c.x.len() != self.schema.n_cov() {
            return Err("wrong covariate count".into());
        }
        for (v, spec) in c.x.iter().zip(&self.schema.covariates) {
            if u32::from(*v) >= spec.levels {
                return Err(format!("{} off declared grid", spec.name));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn idx(&self, i: usize, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon);
        i * self.horizon + t - 1
    }

    pub fn z(&self, i: usize, t: usize) -> u8 {
        self.z[self.idx(i, t)]
    }

    pub fn s(&self, i: usize, t: usize) -> u8 {
        self.s[self.idx(i, t)]
    }

    pub fn y(&self, i: usize, t: usize) -> u8 {
        self.y[self.idx(i, t)]
    }

    pub fn y_value(&self, i: usize, t: usize) -> f64 {
        self.schema.y.values[usize::from(self.y(i, t))]
    }

    pub fn x(&self, i: usize, t: usize) -> &[u8] {
        let p = self.schema.n_cov();
        let k = self.idx(i, t) * p;
        &self.x[k..k + p]
    }

    /// Mixed-radix code of the covariate vector, first covariate most significant.
    pub fn x_joint(&self, i: usize, t: usize) -> u32 {
        encode_x(&self.schema, self.x(i, t))
    }

    pub fn observed(&self, i: usize, t: usize) -> bool {
        self.observed[self.idx(i, t)]
    }

    pub fn value(&self, var: Var, i: usize, t: usize) -> u32 {
        match var {
            Var::X => self.x_joint(i, t),
            Var::Z => u32::from(self.z(i, t)),
            Var::S => u32::from(self.s(i, t)),
            Var::Y => u32::from(self.y(i, t)),
        }
    }

    pub fn cell(&self, i: usize, t: usize) -> Cell {
        Cell { z: self.z(i, t), s: self.s(i, t), y: self.y(i, t), x: self.x(i, t).to_vec() }
    }

    pub fn rows(&self, i: usize) -> Vec<Cell> {
        (1..=self.horizon).map(|t| self.cell(i, t)).collect()
    }

    /// Panel restricted to the listed units, in the given order.
    pub fn subset_units(&self, keep: &[usize]) -> Result<Panel> {
        let units = keep.iter().map(|&i| self.units[i].clone()).collect();
        let rows = keep.iter().map(|&i| self.rows(i)).collect();
        Panel::from_rows(self.schema.clone(), units, rows)
    }

    /// Panel cut at time `end`.
    pub fn truncate(&self, end: usize) -> Result<Panel> {
        if end == 0 || end > self.horizon {
            return Err(Error::Panel(format!("cannot truncate horizon {} at {end}", self.horizon)));
        }
        let rows = (0..self.n_units()).map(|i| (1..=end).map(|t| self.cell(i, t)).collect()).collect();
        Panel::from_rows(self.schema.clone(), self.units.clone(), rows)
    }

    pub fn header(&self) -> String {
        let mut h = String::from("unit,time,z,s,y");
        for p in 1..=self.schema.n_cov() {
            let _ = write!(h, ",x_{p}");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for i in 0..self.n_units() {
            for t in 1..=self.horizon {
                let s = self.schema.s.values[usize::from(self.s(i, t))];
                let y = self.y_value(i, t);
                let _ = write!(out, "{},{},{},{},{}", self.units[i], t, self.z(i, t), s, y);
                for v in self.x(i, t) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn read_csv(path: &Path, schema: Schema) -> Result<Panel> {
        let text = std::fs::read_to_string(path)?;
        Panel::parse_csv(&text, schema)
    }

    pub fn parse_csv(text: &str, schema: Schema) -> Result<Panel> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let expected: Vec<String> = {
            let mut h = vec!["unit", "time", "z", "s", "y"].into_iter().map(String::from).collect::<Vec<_>>();
            h.extend((1..=schema.n_cov()).map(|p| format!("x_{p}")));
            h
        };
        let headers = rdr.headers().map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?;
        let got: Vec<String> = headers.iter().map(|s| s.trim().to_string()).collect();
        if got != expected {
            return Err(Error::Csv { line: 1, msg: format!("header must be {}", expected.join(",")) });
        }
        let mut order: Vec<String> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut cells: Vec<BTreeMap<usize, Cell>> = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
            let err = |msg: String| Error::Csv { line, msg };
            if rec.len() != expected.len() {
                return Err(err(format!("expected {} fields, got {}", expected.len(), rec.len())));
            }
            let unit = rec[0].trim().to_string();
            let time: usize = rec[1].trim().parse().map_err(|_| err(format!("bad time {:?}", &rec[1])))?;
            if time == 0 {
                return Err(err("time is 1-based".into()));
            }
            let num = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|_| err(format!("bad number {:?} in column {}", &rec[k], expected[k])))
            };
            let z = num(2)?;
            if z != 0.0 && z != 1.0 {
                return Err(err(format!("z={z} off grid {{0,1}}")));
            }
            let s = schema.s.index_of(num(3)?).ok_or_else(|| err(format!("s={} off declared grid", &rec[3])))?;
            let y = schema.y.index_of(num(4)?).ok_or_else(|| err(format!("y={} off declared grid", &rec[4])))?;
            let mut x = Vec::with_capacity(schema.n_cov());
            for (p, c) in schema.covariates.iter().enumerate() {
                let v = num(5 + p)?;
                if v.fract() != 0.0 || v < 0.0 || v >= f64::from(c.levels) {
                    return Err(err(format!("{}={} off declared grid", c.name, &rec[5 + p])));
                }
                x.push(v as u8);
            }
            let slot = *seen.entry(unit.clone()).or_insert_with(|| {
                order.push(unit.clone());
                cells.push(BTreeMap::new());
                cells.len() - 1
            });
            if cells[slot].insert(time, Cell { z: z as u8, s, y, x }).is_some() {
                return Err(err(format!("duplicate (unit,time) = ({unit},{time})")));
            }
        }
        if order.is_empty() {
            return Err(Error::Panel("no rows".into()));
        }
        let horizon = cells.iter().filter_map(|m| m.keys().next_back().copied()).max().unwrap_or(0);
        let mut rows = Vec::with_capacity(order.len());
        for (u, m) in order.iter().zip(cells) {
            if let Some(t) = (1..=horizon).find(|t| !m.contains_key(t)) {
                return Err(Error::Panel(format!("gap: unit {u} has no row at time {t}")));
            }
            rows.push(m.into_values().collect());
        }
        Panel::from_rows(schema, order, rows)
    }
}

pub fn encode_x(schema: &Schema, x: &[u8]) -> u32 {
    x.iter().zip(&schema.covariates).fold(0u32, |acc, (v, c)| acc * c.levels + u32::from(*v))
}

pub fn decode_x(schema: &Schema, mut code: u32) -> Vec<u8> {
    let mut out = vec![0u8; schema.n_cov()];
    for (k, c) in schema.covariates.iter().enumerate().rev() {
        out[k] = (code % c.levels) as u8;
        code /= c.levels;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitSetKind {
    ObservedAll,
    ObservedTreated,
    FutureAll,
    FutureSelected,
}

/// A set of (unit index, time) anchors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSet {
    pub kind: UnitSetKind,
    pub members: Vec<(usize, usize)>,
}

impl UnitSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Anchors whose full window lies inside the panel.
pub fn observed_anchors(panel: &Panel, spec: &WindowSpec) -> Vec<(usize, usize)> {
    let first = spec.depth() + 1;
    (0..panel.n_units())
        .flat_map(|i| (first..=panel.horizon()).map(move |t| (i, t)))
        .collect()
}

/// Observed anchors and the treated subset; anchors with undefined windows drop out.
pub fn build_unit_sets(panel: &Panel, spec: &WindowSpec, mapper: &Mapper) -> Result<(UnitSet, UnitSet)> {
    spec.validate()?;
    mapper.validate(spec)?;
    let zs = spec.window(Var::Z);
    let all = observed_anchors(panel, spec);
    let mut treated = Vec::new();
    for &(i, t) in &all {
        if mapper.map(&read_slots(panel, &zs, i, t), spec)? == 1 {
            treated.push((i, t));
        }
    }
    Ok((
        UnitSet { kind: UnitSetKind::ObservedAll, members: all },
        UnitSet { kind: UnitSetKind::ObservedTreated, members: treated },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn binary_schema() -> Schema {
        Schema {
            schema_version: SCHEMA_VERSION,
            covariates: vec![CovariateSpec { name: "x_1".into(), levels: 2 }],
            s: Grid::new(vec![0.0]),
            y: Grid::new(vec![0.0, 1.0]),
        }
    }

    #[test]
    fn two_by_three() {
        let csv = "unit,time,z,s,y,x_1\na,1,0,0,1,0\na,2,1,0,0,1\na,3,0,0,0,0\nb,1,0,0,0,1\nb,2,0,0,1,1\nb,3,1,0,1,0\n";
        let p = Panel::parse_csv(csv, binary_schema()).unwrap();
        assert_eq!((p.n_units(), p.horizon()), (2, 3));
        assert_eq!(p.z(0, 2), 1);
        assert_eq!(p.to_csv(), csv);
    }

    #[test]
    fn gap_is_rejected() {
        let csv = "unit,time,z,s,y,x_1\na,1,0,0,1,0\na,3,0,0,0,0\n";
        let e = Panel::parse_csv(csv, binary_schema()).unwrap_err();
        assert!(e.to_string().contains("gap"), "{e}");
    }

    #[test]
    fn off_grid_is_rejected() {
        let csv = "unit,time,z,s,y,x_1\na,1,2,0,1,0\n";
        let e = Panel::parse_csv(csv, binary_schema()).unwrap_err();
        assert!(e.to_string().contains("off grid"), "{e}");
    }

    #[test]
    fn duplicate_is_rejected() {
        let csv = "unit,time,z,s,y,x_1\na,1,0,0,1,0\na,1,0,0,1,0\n";
        let e = Panel::parse_csv(csv, binary_schema()).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn bins_raw_values() {
        let g = Grid { values: vec![0.5, 1.5], bin_edges: Some(vec![0.0, 1.0, 2.0]) };
        assert_eq!(g.index_of(0.2), Some(0));
        assert_eq!(g.index_of(1.0), Some(1));
        assert_eq!(g.index_of(2.0), Some(1));
        assert_eq!(g.index_of(2.1), None);
    }

    #[test]
    fn joint_covariate_code_round_trips() {
        let schema = Schema {
            covariates: vec![
                CovariateSpec { name: "a".into(), levels: 3 },
                CovariateSpec { name: "b".into(), levels: 2 },
            ],
            ..binary_schema()
        };
        for code in 0..6 {
            assert_eq!(encode_x(&schema, &decode_x(&schema, code)), code);
        }
        assert_eq!(encode_x(&schema, &[2, 1]), 5);
    }
}
