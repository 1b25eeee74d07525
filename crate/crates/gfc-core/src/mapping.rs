//! Mappings from a lagged treatment window to a binary indicator.
//!
//! Windows are oldest-first: position 0 is time `t-B-K`, position `K` is
//! `t-B`, so time `t-L` sits at position `K-(L-B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::WindowSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapperKind {
    OneDay,
    AnyDay,
    Initiation,
    Duration,
    Intermittent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapper {
    pub kind: MapperKind,
}

impl Mapper {
    pub fn new(kind: MapperKind) -> Self {
        Mapper { kind }
    }

    /// Q only matters for the multi-day kinds.
    fn q(&self, spec: &WindowSpec) -> usize {
        match self.kind {
            MapperKind::Duration | MapperKind::Intermittent => spec.q,
            _ => 1,
        }
    }

    pub fn validate(&self, spec: &WindowSpec) -> Result<()> {
        spec.validate()?;
        if matches!(self.kind, MapperKind::Duration | MapperKind::Intermittent)
            && (spec.l < spec.b + spec.q || spec.l > spec.b + spec.k)
        {
            return Err(Error::Mapper(format!(
                "{:?} needs B+Q <= L <= B+K, got B={} Q={} L={} K={}",
                self.kind, spec.b, spec.q, spec.l, spec.k
            )));
        }
        Ok(())
    }

    /// Position of time `t-L` in the window.
    pub fn lead_position(spec: &WindowSpec) -> usize {
        spec.k - (spec.l - spec.b)
    }

    pub fn map(&self, z: &[u32], spec: &WindowSpec) -> Result<u8> {
        if z.len() != spec.k + 1 {
            return Err(Error::Mapper(format!("window length {} != K+1 = {}", z.len(), spec.k + 1)));
        }
        if z.iter().any(|&v| v > 1) {
            return Err(Error::Mapper("treatment window must be binary".into()));
        }
        let p = Self::lead_position(spec);
        let d = match self.kind {
            MapperKind::OneDay => z[p] == 1,
            MapperKind::AnyDay => z.contains(&1),
            // event at t-L with nothing earlier in the window
            MapperKind::Initiation => z[p] == 1 && z[..p].iter().all(|&v| v == 0),
            MapperKind::Duration => {
                let q = spec.q;
                z[p..p + q].iter().all(|&v| v == 1) && z[p + q..].iter().all(|&v| v == 0)
            }
            MapperKind::Intermittent => z[p..].iter().sum::<u32>() as usize == spec.q,
        };
        Ok(u8::from(d))
    }

    /// All windows, in binary counting order with position 0 most significant.
    pub fn all_windows(spec: &WindowSpec) -> Vec<Vec<u32>> {
        let n = spec.k + 1;
        (0..1u64 << n)
            .map(|code| (0..n).map(|j| ((code >> (n - 1 - j)) & 1) as u32).collect())
            .collect()
    }

    /// Windows with `h = 0`.
    pub fn control_vectors(&self, spec: &WindowSpec) -> Result<Vec<Vec<u32>>> {
        self.with_value(spec, 0)
    }

    /// Windows with `h = 1`.
    pub fn treated_vectors(&self, spec: &WindowSpec) -> Result<Vec<Vec<u32>>> {
        self.with_value(spec, 1)
    }

    fn with_value(&self, spec: &WindowSpec, d: u8) -> Result<Vec<Vec<u32>>> {
        self.validate(spec)?;
        let mut out = Vec::new();
        for w in Self::all_windows(spec) {
            if self.map(&w, spec)? == d {
                out.push(w);
            }
        }
        Ok(out)
    }

    /// Canonical window for `D = d`: zeros for control, ones exactly on
    /// `[t-L, t-L+Q-1]` for treated.
    pub fn canonical(&self, spec: &WindowSpec, d: u8) -> Result<Vec<u32>> {
        self.validate(spec)?;
        let mut w = vec![0; spec.k + 1];
        if d == 1 {
            let p = Self::lead_position(spec);
            for v in &mut w[p..p + self.q(spec)] {
                *v = 1;
            }
        }
        debug_assert_eq!(self.map(&w, spec).ok(), Some(d));
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(b: usize, k: usize, l: usize, q: usize) -> WindowSpec {
        let mut s = WindowSpec::new(b, k, l, k, k + 1);
        s.q = q;
        s
    }

    #[test]
    fn one_day_reads_t_minus_l() {
        let m = Mapper::new(MapperKind::OneDay);
        assert_eq!(m.map(&[0, 0, 1, 0], &spec(1, 3, 2, 1)).unwrap(), 1);
        assert_eq!(m.map(&[0, 1, 0, 0], &spec(1, 3, 2, 1)).unwrap(), 0);
    }

    #[test]
    fn duration_needs_trailing_zeros() {
        let m = Mapper::new(MapperKind::Duration);
        let s = spec(0, 3, 3, 2);
        assert_eq!(m.map(&[1, 1, 0, 0], &s).unwrap(), 1);
        assert_eq!(m.map(&[1, 1, 1, 0], &s).unwrap(), 0);
    }

    #[test]
    fn intermittent_counts_from_t_minus_l() {
        let m = Mapper::new(MapperKind::Intermittent);
        let s = spec(1, 4, 4, 2);
        assert_eq!(m.map(&[0, 1, 0, 1, 0], &s).unwrap(), 1);
        assert_eq!(m.map(&[0, 1, 1, 1, 0], &s).unwrap(), 0);
    }

    #[test]
    fn initiation_requires_no_earlier_event() {
        let m = Mapper::new(MapperKind::Initiation);
        let s = spec(0, 3, 2, 1);
        assert_eq!(m.map(&[0, 1, 0, 0], &s).unwrap(), 1);
        assert_eq!(m.map(&[0, 1, 1, 1], &s).unwrap(), 1);
        assert_eq!(m.map(&[1, 1, 0, 0], &s).unwrap(), 0);
        assert_eq!(m.map(&[0, 0, 1, 0], &s).unwrap(), 0);
    }

    #[test]
    fn control_sets() {
        let any = Mapper::new(MapperKind::AnyDay);
        assert_eq!(any.control_vectors(&spec(0, 1, 0, 1)).unwrap(), vec![vec![0, 0]]);
        let one = Mapper::new(MapperKind::OneDay);
        assert_eq!(one.control_vectors(&spec(2, 1, 2, 1)).unwrap(), vec![vec![0, 0], vec![1, 0]]);
        let inter = Mapper::new(MapperKind::Intermittent);
        assert_eq!(
            inter.control_vectors(&spec(0, 1, 1, 1)).unwrap(),
            vec![vec![0, 0], vec![1, 1]]
        );
    }

    #[test]
    fn multi_day_bounds() {
        let m = Mapper::new(MapperKind::Duration);
        assert!(m.validate(&spec(0, 3, 1, 2)).is_err());
        assert!(m.validate(&spec(0, 3, 2, 2)).is_ok());
    }

    #[test]
    fn canonical_patterns() {
        let m = Mapper::new(MapperKind::Duration);
        assert_eq!(m.canonical(&spec(0, 3, 3, 2), 1).unwrap(), vec![1, 1, 0, 0]);
        assert_eq!(m.canonical(&spec(0, 3, 3, 2), 0).unwrap(), vec![0, 0, 0, 0]);
        let one = Mapper::new(MapperKind::OneDay);
        assert_eq!(one.canonical(&spec(1, 3, 2, 1), 1).unwrap(), vec![0, 0, 1, 0]);
    }
}
