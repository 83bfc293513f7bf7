//! Trait lattice, model constants, population state and the per-trait rate table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Extent of the trait space and intercept of the birth rate.
pub const GRID_EXTENT: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("delta ∈ (0, 4) violated: delta = {0}")]
    Delta(f64),
    #[error("C > 0 violated: C = {0}")]
    C(f64),
    #[error("p ∈ (0, 1/4) violated: p = {0}")]
    P(f64),
    #[error("tau ≥ 0 violated: tau = {0}")]
    Tau(f64),
    #[error("kappa ≥ 0 violated: kappa = {0}")]
    Kappa(f64),
    #[error("sigma > 0 violated: sigma = {0}")]
    Sigma(f64),
    #[error("alpha ∈ (0, 1) violated: alpha = {0}")]
    Alpha(f64),
    #[error("K ≥ 1 violated: K = {0}")]
    K(u64),
    #[error("K is required for this computation")]
    MissingK,
}

impl ParamError {
    /// Name of the offending field.
    pub fn field(&self) -> &'static str {
        match self {
            ParamError::Delta(_) => "delta",
            ParamError::C(_) => "C",
            ParamError::P(_) => "p",
            ParamError::Tau(_) => "tau",
            ParamError::Kappa(_) => "kappa",
            ParamError::Sigma(_) => "sigma",
            ParamError::Alpha(_) => "alpha",
            ParamError::K(_) | ParamError::MissingK => "K",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub delta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub p: f64,
    pub tau: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub alpha: f64,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
}

fn finite_in(x: f64, lo: f64, hi: f64) -> bool {
    x.is_finite() && x > lo && x < hi
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !finite_in(self.delta, 0.0, GRID_EXTENT) {
            return Err(ParamError::Delta(self.delta));
        }
        if !finite_in(self.c, 0.0, f64::INFINITY) {
            return Err(ParamError::C(self.c));
        }
        if !finite_in(self.p, 0.0, 0.25) {
            return Err(ParamError::P(self.p));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(ParamError::Tau(self.tau));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(ParamError::Kappa(self.kappa));
        }
        if !finite_in(self.sigma, 0.0, f64::INFINITY) {
            return Err(ParamError::Sigma(self.sigma));
        }
        if !finite_in(self.alpha, 0.0, 1.0) {
            return Err(ParamError::Alpha(self.alpha));
        }
        if let Some(k) = self.k {
            if k == 0 {
                return Err(ParamError::K(k));
            }
        }
        Ok(())
    }

    pub fn with_k(mut self, k: u64) -> Self {
        self.k = Some(k);
        self
    }

    pub fn k_or_err(&self) -> Result<f64, ParamError> {
        self.k.map(|k| k as f64).ok_or(ParamError::MissingK)
    }

    pub fn grid(&self) -> TraitGrid {
        TraitGrid::new(self.delta)
    }

    /// x-coordinate of a trait.
    pub fn x(&self, t: TraitIndex) -> f64 {
        t.m as f64 * self.delta
    }

    /// y-coordinate of a trait.
    pub fn y(&self, t: TraitIndex) -> f64 {
        t.n as f64 * self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraitIndex {
    pub m: usize,
    pub n: usize,
}

impl TraitIndex {
    pub const fn new(m: usize, n: usize) -> Self {
        TraitIndex { m, n }
    }

    pub fn level(&self) -> usize {
        self.m + self.n
    }
}

impl std::fmt::Display for TraitIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// The square lattice `{0..=L}²` with `L = floor(4/δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraitGrid {
    pub l: usize,
}

impl TraitGrid {
    pub fn new(delta: f64) -> Self {
        // Guard against 4/δ landing a hair below an integer.
        let q = GRID_EXTENT / delta;
        let l = (q + 1e-12).floor() as usize;
        TraitGrid { l }
    }

    pub fn side(&self) -> usize {
        self.l + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, m: usize, n: usize) -> bool {
        m <= self.l && n <= self.l
    }

    pub fn index(&self, t: TraitIndex) -> usize {
        t.m * self.side() + t.n
    }

    pub fn trait_at(&self, i: usize) -> TraitIndex {
        TraitIndex::new(i / self.side(), i % self.side())
    }

    /// Row-major order over (m, n).
    pub fn traits(&self) -> impl Iterator<Item = TraitIndex> + '_ {
        (0..self.len()).map(|i| self.trait_at(i))
    }

    /// Order by level m+n, then by m. Parents always precede children.
    pub fn topological(&self) -> Vec<TraitIndex> {
        let mut v: Vec<TraitIndex> = self.traits().collect();
        v.sort_by_key(|t| (t.level(), t.m));
        v
    }
}

pub fn birth_rate(t: TraitIndex, params: &ModelParams) -> f64 {
    GRID_EXTENT - (t.m + t.n) as f64 * params.delta / 2.0
}

/// Per-trait active and dormant counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub l: usize,
    pub active: Vec<u64>,
    pub dormant: Vec<u64>,
    pub time: f64,
}

impl PopulationState {
    pub fn empty(grid: TraitGrid) -> Self {
        PopulationState {
            l: grid.l,
            active: vec![0; grid.len()],
            dormant: vec![0; grid.len()],
            time: 0.0,
        }
    }

    pub fn grid(&self) -> TraitGrid {
        TraitGrid { l: self.l }
    }

    pub fn total_active(&self) -> u64 {
        self.active.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.total_active() + self.dormant.iter().sum::<u64>()
    }

    pub fn count(&self, t: TraitIndex) -> u64 {
        let i = self.grid().index(t);
        self.active[i] + self.dormant[i]
    }
}

pub fn initial_state(params: &ModelParams) -> Result<PopulationState, ParamError> {
    let k = params.k_or_err()?;
    let grid = params.grid();
    let mut s = PopulationState::empty(grid);
    for t in grid.traits() {
        let i = grid.index(t);
        if t.m == 0 && t.n == 0 {
            s.active[i] = (3.0 * k / params.c).floor() as u64;
            continue;
        }
        let e = 1.0 - t.level() as f64 * params.alpha;
        if e <= 0.0 {
            continue;
        }
        let v = k.powf(e).floor() as u64;
        s.active[i] = v;
        if t.m >= 1 {
            s.dormant[i] = v;
        }
    }
    Ok(s)
}

/// Channel rates of one trait.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraitRates {
    pub birth_clone: f64,
    pub birth_mut_dorm: f64,
    pub birth_mut_hgt: f64,
    pub death_active: f64,
    pub to_dormant: f64,
    pub death_dormant: f64,
    pub wake: f64,
}

impl TraitRates {
    pub fn total(&self) -> f64 {
        self.birth_clone
            + self.birth_mut_dorm
            + self.birth_mut_hgt
            + self.death_active
            + self.to_dormant
            + self.death_dormant
            + self.wake
    }
}

/// Explicit rate table. `transfer[v][u]` is the rate at which one active
/// individual of trait `v` is converted into trait `u` (nonzero only if n_u > n_v).
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub grid: TraitGrid,
    pub traits: Vec<TraitRates>,
    pub transfer: Vec<Vec<f64>>,
}

impl RateTable {
    pub fn total(&self) -> f64 {
        self.traits.iter().map(TraitRates::total).sum::<f64>() + self.transfer_total_donor_side()
    }

    /// Sum of conversion rates grouped by the trait that gains an individual.
    pub fn transfer_total_donor_side(&self) -> f64 {
        let n = self.grid.len();
        (0..n).map(|u| (0..n).map(|v| self.transfer[v][u]).sum::<f64>()).sum()
    }

    /// Sum of conversion rates grouped by the trait that loses an individual.
    pub fn transfer_total_recipient_side(&self) -> f64 {
        self.transfer.iter().map(|row| row.iter().sum::<f64>()).sum()
    }
}

pub fn build_rate_table(state: &PopulationState, params: &ModelParams) -> Result<RateTable, ParamError> {
    let k = params.k_or_err()?;
    let grid = state.grid();
    let n = grid.len();
    let mut table = RateTable {
        grid,
        traits: vec![TraitRates::default(); n],
        transfer: vec![vec![0.0; n]; n],
    };
    if state.total() == 0 {
        return Ok(table);
    }
    let ntot = state.total_active() as f64;
    let half_mut = k.powf(-params.alpha) / 2.0;
    for t in grid.traits() {
        let i = grid.index(t);
        let a = state.active[i] as f64;
        let d = state.dormant[i] as f64;
        let birth = a * birth_rate(t, params);
        let dorm_target = grid.contains(t.m + 1, t.n);
        let hgt_target = grid.contains(t.m, t.n + 1);
        let mut r = TraitRates::default();
        r.birth_mut_dorm = if dorm_target { birth * half_mut } else { 0.0 };
        r.birth_mut_hgt = if hgt_target { birth * half_mut } else { 0.0 };
        r.birth_clone = birth - r.birth_mut_dorm - r.birth_mut_hgt;
        let px = params.p * params.x(t);
        r.death_active = a * (1.0 + params.c * (1.0 - px) * ntot / k);
        r.to_dormant = a * params.c * px * ntot / k;
        r.death_dormant = d * params.kappa;
        r.wake = d * params.sigma;
        table.traits[i] = r;
    }
    if ntot > 0.0 {
        for v in grid.traits() {
            let iv = grid.index(v);
            for u in grid.traits() {
                if u.n > v.n {
                    let iu = grid.index(u);
                    table.transfer[iv][iu] =
                        params.tau * state.active[iu] as f64 * state.active[iv] as f64 / ntot;
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn p31() -> ModelParams {
        ModelParams { delta: 1.51, c: 1.0, p: 0.21, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None }
    }

    #[test]
    fn birth_rate_examples() {
        let mut p = p31();
        assert_eq!(birth_rate(TraitIndex::new(0, 0), &p), 4.0);
        assert!((birth_rate(TraitIndex::new(1, 1), &p) - 2.49).abs() < 1e-12);
        p.delta = 0.9;
        assert!((birth_rate(TraitIndex::new(2, 2), &p) - 2.2).abs() < 1e-12);
    }

    #[test]
    fn grid_size() {
        assert_eq!(TraitGrid::new(1.51).l, 2);
        assert_eq!(TraitGrid::new(0.9).l, 4);
        assert_eq!(TraitGrid::new(1.0).l, 4);
        assert_eq!(TraitGrid::new(1.85).l, 2);
        assert_eq!(TraitGrid::new(3.9).l, 1);
    }

    #[test]
    fn validation_names_field() {
        let mut p = p31();
        p.p = 0.3;
        let e = p.validate().unwrap_err();
        assert_eq!(e.field(), "p");
        assert!(e.to_string().contains("p ∈ (0, 1/4)"));
        let mut p = p31();
        p.sigma = 0.0;
        assert_eq!(p.validate().unwrap_err().field(), "sigma");
    }

    #[test]
    fn initial_state_examples() {
        let p = p31().with_k(10_000);
        let s = initial_state(&p).unwrap();
        let g = p.grid();
        assert_eq!(s.active[g.index(TraitIndex::new(0, 0))], 30_000);
        assert_eq!(s.active[g.index(TraitIndex::new(0, 1))], 100);
        assert_eq!(s.dormant[g.index(TraitIndex::new(0, 1))], 0);
        assert_eq!(s.active[g.index(TraitIndex::new(1, 0))], 100);
        assert_eq!(s.dormant[g.index(TraitIndex::new(1, 0))], 100);
        assert_eq!(s.active[g.index(TraitIndex::new(1, 1))], 0);
        assert_eq!(s.dormant[g.index(TraitIndex::new(1, 1))], 0);

        let mut p = p31().with_k(1_000_000);
        p.alpha = 0.3;
        let s = initial_state(&p).unwrap();
        let i = p.grid().index(TraitIndex::new(1, 1));
        assert_eq!(s.active[i], 251);
        assert_eq!(s.dormant[i], 251);
    }

    #[test]
    fn initial_exponents_converge() {
        let mut errs = Vec::new();
        for k in [1_000u64, 10_000, 100_000] {
            let p = p31().with_k(k);
            let s = initial_state(&p).unwrap();
            let lk = (k as f64).ln();
            let mut worst: f64 = 0.0;
            for t in p.grid().traits() {
                let target = if t.level() == 0 { 1.0 } else { (1.0 - t.level() as f64 * p.alpha).max(0.0) };
                let beta = (1.0 + s.count(t) as f64).ln() / lk;
                worst = worst.max((beta - target).abs());
            }
            errs.push(worst);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn single_individual_rates() {
        let p = p31().with_k(1000);
        let mut s = PopulationState::empty(p.grid());
        s.active[0] = 1;
        let t = build_rate_table(&s, &p).unwrap();
        let r = t.traits[0];
        let births = r.birth_clone + r.birth_mut_dorm + r.birth_mut_hgt;
        assert!((births - 4.0).abs() < 1e-12);
        assert!((r.death_active - (1.0 + 1.0 / 1000.0)).abs() < 1e-12);
        assert_eq!(r.to_dormant, 0.0);
    }

    #[test]
    fn empty_state_zero_rates() {
        let p = p31().with_k(1000);
        let s = PopulationState::empty(p.grid());
        assert_eq!(build_rate_table(&s, &p).unwrap().total(), 0.0);
    }

    #[test]
    fn pair_conversion_rate() {
        let p = p31().with_k(1000);
        let g = p.grid();
        let mut s = PopulationState::empty(g);
        s.active[g.index(TraitIndex::new(0, 0))] = 1;
        s.active[g.index(TraitIndex::new(0, 1))] = 1;
        let t = build_rate_table(&s, &p).unwrap();
        let r = t.transfer[g.index(TraitIndex::new(0, 0))][g.index(TraitIndex::new(0, 1))];
        assert!((r - 0.65).abs() < 1e-12);
        assert_eq!(t.transfer[g.index(TraitIndex::new(0, 1))][g.index(TraitIndex::new(0, 0))], 0.0);
    }

    #[test]
    fn boundary_mutation_returns_to_clone() {
        let p = p31().with_k(10_000);
        let g = p.grid();
        let mut s = PopulationState::empty(g);
        let corner = g.index(TraitIndex::new(g.l, g.l));
        s.active[corner] = 10;
        let r = build_rate_table(&s, &p).unwrap().traits[corner];
        assert_eq!(r.birth_mut_dorm, 0.0);
        assert_eq!(r.birth_mut_hgt, 0.0);
        assert!((r.birth_clone - 10.0 * birth_rate(TraitIndex::new(g.l, g.l), &p)).abs() < 1e-12);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn transfer_sums_agree(counts in proptest::collection::vec(0u64..500, 9), dorm in proptest::collection::vec(0u64..50, 9)) {
            let p = ModelParams { delta: 1.51, c: 1.0, p: 0.21, tau: 1.3, kappa: 0.1, sigma: 1.0, alpha: 0.5, k: Some(1000) };
            let g = p.grid();
            let mut s = PopulationState::empty(g);
            s.active.copy_from_slice(&counts);
            for t in g.traits() {
                if t.m > 0 { s.dormant[g.index(t)] = dorm[g.index(t)]; }
            }
            let table = build_rate_table(&s, &p).unwrap();
            let a = table.transfer_total_donor_side();
            let b = table.transfer_total_recipient_side();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            for t in g.traits() {
                let r = table.traits[g.index(t)];
                prop_assert!(r.birth_clone >= 0.0 && r.death_active >= 0.0 && r.to_dormant >= 0.0);
                if t.m == 0 { prop_assert_eq!(r.to_dormant, 0.0); }
            }
        }
    }
}
