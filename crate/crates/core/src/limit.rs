//! Exact event-driven construction of the piecewise-affine exponent limit.
//!
//! Every exponent is the maximum of at most four affine pieces: its own growth line,
//! the two mutation floors `parent - α`, and zero. Between events all pieces are affine,
//! so the next event is found by solving linear equations in closed form.

use crate::fitness::{check_nonzero_fitness, invasion_fitness, is_fit, FitnessError, FitnessMode};
use crate::model::{ModelParams, ParamError, TraitGrid, TraitIndex};
use crate::piecewise::PiecewiseLinear;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two exponents closer than this at a phase end count as tied.
pub const MEET_TOL: f64 = 1e-9;
/// Candidate pieces closer than this are treated as touching.
const TIE_TOL: f64 = 1e-12;
/// Values this close to 0 are snapped to 0.
const ZERO_SNAP: f64 = 1e-12;
/// Accumulation is declared once the last cycle is shorter than this...
pub const SETTLE_DURATION: f64 = 1e-7;
/// ...or once every trait of the cycle sits this close to 1 at the cycle end.
pub const SETTLE_DEFICIT: f64 = 1e-6;
const MAX_EVENTS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error("initial resident (0,0) is unfit")]
    UnfitInitialResident,
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("event budget of {0} exhausted at t = {1}")]
    EventBudget(usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitMode {
    Standard,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    NonuniqueArgmax,
    FitnessSignFailure,
    InvaderUnfit,
    SimultaneousExtinction,
    CoexistenceAccumulation,
    DegenerateEqualSlope,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon-reached",
            Termination::NonuniqueArgmax => "nonunique-argmax",
            Termination::FitnessSignFailure => "fitness-sign-failure",
            Termination::InvaderUnfit => "invader-unfit",
            Termination::SimultaneousExtinction => "simultaneous-extinction",
            Termination::CoexistenceAccumulation => "coexistence-accumulation",
            Termination::DegenerateEqualSlope => "degenerate-equal-slope",
        }
    }
}

/// Whether the reference trait of a phase sits at order K or the population is sub-macroscopic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Resident,
    Dominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: f64,
    pub end: f64,
    pub resident: TraitIndex,
    pub regime: Regime,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulation {
    pub t_inf: f64,
    pub ratio: f64,
    pub period: usize,
    /// Durations of the last three full cycles, oldest first.
    pub cycle_durations: [f64; 3],
    /// Traits resident during the last cycle.
    pub traits: Vec<TraitIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTrajectory {
    pub l: usize,
    pub mode: LimitMode,
    pub horizon: f64,
    /// Completed phases plus the final open one.
    pub phases: Vec<Phase>,
    /// Exponent functions in grid (row-major) order.
    pub betas: Vec<PiecewiseLinear>,
    pub termination: Termination,
    pub accumulation: Option<Accumulation>,
    /// Time at which the construction stopped.
    pub end_time: f64,
}

impl LimitTrajectory {
    pub fn grid(&self) -> TraitGrid {
        TraitGrid { l: self.l }
    }

    pub fn beta(&self, t: TraitIndex) -> &PiecewiseLinear {
        &self.betas[self.grid().index(t)]
    }

    pub fn accumulation_point(&self) -> Option<f64> {
        self.accumulation.as_ref().map(|a| a.t_inf)
    }

    /// Phase boundaries s_1, s_2, ... (excluding the start and the final stop).
    pub fn switch_times(&self) -> Vec<f64> {
        self.phases.iter().skip(1).map(|p| p.start).collect()
    }

    /// Reference trait active at time `t`.
    pub fn resident_at(&self, t: f64) -> TraitIndex {
        let i = self.phases.partition_point(|p| p.start <= t);
        self.phases[i.saturating_sub(1)].resident
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    anchor: f64,
    base: f64,
}

#[derive(Debug, Clone, Copy)]
struct TraitState {
    value: f64,
    slope: f64,
    fitness: f64,
    own: Option<Line>,
    /// Last time the value dropped from positive to 0.
    zero_hit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Internal,
    Activation,
    Meet(usize),
    ReachOne,
    Horizon,
}

struct Engine<'a> {
    params: &'a ModelParams,
    grid: TraitGrid,
    order: Vec<usize>,
    parents: Vec<Vec<usize>>,
    st: Vec<TraitState>,
    t: f64,
    reference: usize,
    regime: Regime,
    betas: Vec<PiecewiseLinear>,
    last_recorded_slope: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(params: &'a ModelParams) -> Self {
        let grid = params.grid();
        let order: Vec<usize> = grid.topological().into_iter().map(|t| grid.index(t)).collect();
        let parents = grid
            .traits()
            .map(|t| {
                let mut p = Vec::new();
                if t.m > 0 {
                    p.push(grid.index(TraitIndex::new(t.m - 1, t.n)));
                }
                if t.n > 0 {
                    p.push(grid.index(TraitIndex::new(t.m, t.n - 1)));
                }
                p
            })
            .collect();
        let st = grid
            .traits()
            .map(|t| {
                let v = if t.level() == 0 { 1.0 } else { (1.0 - t.level() as f64 * params.alpha).max(0.0) };
                TraitState { value: v, slope: 0.0, fitness: 0.0, own: None, zero_hit: f64::NEG_INFINITY }
            })
            .collect();
        Engine {
            params,
            grid,
            order,
            parents,
            st,
            t: 0.0,
            reference: 0,
            regime: Regime::Resident,
            betas: Vec::new(),
            last_recorded_slope: Vec::new(),
        }
    }

    fn fitness_mode(&self) -> FitnessMode {
        match self.regime {
            Regime::Resident => FitnessMode::ResidentRelative,
            Regime::Dominant => FitnessMode::Extended,
        }
    }

    /// Starts a phase at the current time: rebases every own line and sets slopes.
    fn start_phase(&mut self) -> Result<(), LimitError> {
        let reference = self.grid.trait_at(self.reference);
        let fmode = self.fitness_mode();
        for i in 0..self.st.len() {
            let tr = self.grid.trait_at(i);
            let f = if i == self.reference && self.regime == Regime::Resident {
                0.0
            } else {
                invasion_fitness(tr, reference, self.params, fmode)?
            };
            let s = &mut self.st[i];
            s.fitness = f;
            s.own = if s.value > 0.0 { Some(Line { anchor: self.t, base: s.value }) } else { None };
        }
        self.activate_pending();
        self.evaluate();
        Ok(())
    }

    /// Activates pending traits whose parent has reached α.
    fn activate_pending(&mut self) {
        let alpha = self.params.alpha;
        for &i in &self.order {
            if self.st[i].own.is_none()
                && self.parents[i].iter().any(|&p| self.st[p].value >= alpha - TIE_TOL)
            {
                self.st[i].own = Some(Line { anchor: self.t, base: 0.0 });
            }
        }
    }

    /// Candidate pieces of trait `i` at the current time as (value, slope).
    fn candidates(&self, i: usize, out: &mut Vec<(f64, f64)>) {
        out.clear();
        let s = &self.st[i];
        if let Some(line) = s.own {
            out.push((line.base + s.fitness * (self.t - line.anchor), s.fitness));
        }
        for &p in &self.parents[i] {
            out.push((self.st[p].value - self.params.alpha, self.st[p].slope));
        }
        out.push((0.0, 0.0));
    }

    /// Recomputes values and right-derivatives in topological order.
    fn evaluate(&mut self) {
        let mut cands = Vec::with_capacity(4);
        for k in 0..self.order.len() {
            let i = self.order[k];
            if i == self.reference && self.regime == Regime::Resident {
                self.st[i].value = 1.0;
                self.st[i].slope = 0.0;
                continue;
            }
            self.candidates(i, &mut cands);
            let mut v = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
            if v.abs() < ZERO_SNAP {
                v = 0.0;
            }
            let g = cands
                .iter()
                .filter(|c| c.0 >= v - TIE_TOL)
                .map(|c| c.1)
                .fold(f64::NEG_INFINITY, f64::max);
            let s = &mut self.st[i];
            if s.value > 0.0 && v == 0.0 {
                s.zero_hit = self.t;
            }
            s.value = v;
            s.slope = g;
        }
    }

    fn next_event(&self, horizon: f64) -> (f64, Event) {
        let mut best = (horizon - self.t, Event::Horizon);
        let mut consider = |dt: f64, e: Event| {
            if dt.is_finite() && dt < best.0 {
                best = (dt.max(0.0), e);
            }
        };
        let mut cands = Vec::with_capacity(4);
        for i in 0..self.st.len() {
            if i == self.reference && self.regime == Regime::Resident {
                continue;
            }
            let s = &self.st[i];
            self.candidates(i, &mut cands);
            for &(c, h) in &cands {
                if h > s.slope && s.value - c >= TIE_TOL {
                    consider((s.value - c) / (h - s.slope), Event::Internal);
                }
            }
            if s.own.is_none() {
                for &p in &self.parents[i] {
                    let ps = &self.st[p];
                    if ps.slope > 0.0 && ps.value < self.params.alpha {
                        consider((self.params.alpha - ps.value) / ps.slope, Event::Activation);
                    }
                }
            }
        }
        let r = &self.st[self.reference];
        for (j, s) in self.st.iter().enumerate() {
            if j != self.reference && s.slope > r.slope {
                consider((r.value - s.value) / (s.slope - r.slope), Event::Meet(j));
            }
        }
        if self.regime == Regime::Dominant && r.slope > 0.0 {
            consider((1.0 - r.value) / r.slope, Event::ReachOne);
        }
        best
    }

    fn record(&mut self, force: bool) {
        for i in 0..self.st.len() {
            let s = self.st[i];
            if force || s.slope != self.last_recorded_slope[i] {
                self.betas[i].push(self.t, s.value.clamp(0.0, 1.0));
                self.last_recorded_slope[i] = s.slope;
            }
        }
    }
}

pub fn run_limit(params: &ModelParams, horizon: f64, mode: LimitMode) -> Result<LimitTrajectory, LimitError> {
    params.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(LimitError::Horizon(horizon));
    }
    if !is_fit(TraitIndex::new(0, 0), params) {
        return Err(LimitError::UnfitInitialResident);
    }
    check_nonzero_fitness(params)?;

    let mut e = Engine::new(params);
    let n = e.st.len();
    e.start_phase()?;
    e.betas = e.st.iter().map(|s| PiecewiseLinear::constant(0.0, s.value)).collect();
    e.last_recorded_slope = e.st.iter().map(|s| s.slope).collect();

    let mut phases: Vec<Phase> = Vec::new();
    let mut phase_start = 0.0;
    let mut termination = Termination::HorizonReached;
    let mut accumulation = None;
    let mut events = 0usize;

    loop {
        events += 1;
        if events > MAX_EVENTS {
            return Err(LimitError::EventBudget(MAX_EVENTS, e.t));
        }
        let (dt, ev) = e.next_event(horizon);
        e.t = if ev == Event::Horizon { horizon } else { e.t + dt };
        e.evaluate();
        e.activate_pending();
        e.evaluate();

        let (next_ref, next_regime) = match ev {
            Event::Internal | Event::Activation => {
                e.record(false);
                continue;
            }
            Event::Horizon => {
                e.record(true);
                phases.push(Phase { start: phase_start, end: e.t, resident: e.grid.trait_at(e.reference), regime: e.regime });
                break;
            }
            Event::ReachOne => (e.reference, Regime::Resident),
            Event::Meet(j) => {
                let new_regime = if e.regime == Regime::Resident && !is_fit(e.grid.trait_at(j), params) {
                    Regime::Dominant
                } else {
                    e.regime
                };
                (j, new_regime)
            }
        };

        let old = e.reference;
        let old_regime = e.regime;
        let level = if ev == Event::ReachOne || old_regime == Regime::Resident { 1.0 } else { e.st[old].value };
        phases.push(Phase { start: phase_start, end: e.t, resident: e.grid.trait_at(old), regime: old_regime });
        phase_start = e.t;

        let verdict = (|| -> Result<Option<Termination>, LimitError> {
            let tied = (0..n)
                .filter(|&i| i != old && i != next_ref && (e.st[i].value - level).abs() <= MEET_TOL)
                .count();
            if tied > 0 {
                return Ok(Some(Termination::NonuniqueArgmax));
            }
            if ev == Event::ReachOne {
                return Ok(None);
            }
            let (to, from) = (e.grid.trait_at(next_ref), e.grid.trait_at(old));
            if old_regime == Regime::Resident {
                let extinct = e.st.iter().any(|s| s.value == 0.0 && s.zero_hit >= e.t - ZERO_SNAP);
                if extinct {
                    return Ok(Some(Termination::SimultaneousExtinction));
                }
                if next_regime == Regime::Resident {
                    let back = invasion_fitness(from, to, params, FitnessMode::ResidentRelative)?;
                    let fwd = invasion_fitness(to, from, params, FitnessMode::ResidentRelative)?;
                    if !(back < 0.0 && fwd > 0.0) {
                        return Ok(Some(Termination::FitnessSignFailure));
                    }
                } else if mode == LimitMode::Standard {
                    return Ok(Some(Termination::InvaderUnfit));
                }
            }
            Ok(None)
        })()?;
        if let Some(reason) = verdict {
            termination = reason;
            e.record(true);
            break;
        }

        e.st[next_ref].value = level;
        e.reference = next_ref;
        e.regime = next_regime;
        e.start_phase()?;

        if ev != Event::ReachOne && e.regime == Regime::Dominant {
            // The incoming dominant trait must pull away from the outgoing one.
            let (g_new, g_old) = (e.st[next_ref].slope, e.st[old].slope);
            if (g_new - g_old).abs() <= MEET_TOL {
                termination = Termination::DegenerateEqualSlope;
                e.record(true);
                break;
            }
            if g_old > g_new {
                termination = Termination::FitnessSignFailure;
                e.record(true);
                break;
            }
        }
        e.record(false);

        if let Some(acc) = detect_coexistence(&phases) {
            let deficit = acc
                .traits
                .iter()
                .map(|&t| 1.0 - e.st[e.grid.index(t)].value)
                .fold(0.0, f64::max);
            if acc.cycle_durations[2] >= SETTLE_DURATION && deficit >= SETTLE_DEFICIT {
                continue;
            }
            accumulation = Some(acc);
            termination = Termination::CoexistenceAccumulation;
            e.record(true);
            break;
        }
    }

    Ok(LimitTrajectory {
        l: e.grid.l,
        mode,
        horizon,
        end_time: e.t,
        phases,
        betas: e.betas,
        termination,
        accumulation,
    })
}

/// Looks for geometrically contracting residency cycles at the end of `phases`.
pub fn detect_coexistence(phases: &[Phase]) -> Option<Accumulation> {
    let n = phases.len();
    if n < 6 {
        return None;
    }
    let period = (2..=n / 3).find(|&p| {
        (n - 3 * p + p..n).all(|i| phases[i].resident == phases[i - p].resident)
            && (1..p).all(|shift| (n - p..n).any(|i| phases[i].resident != phases[i - shift].resident))
    })?;
    let cycle = |c: usize| -> f64 { phases[n - (3 - c) * period..n - (2 - c) * period].iter().map(Phase::duration).sum() };
    let d = [cycle(0), cycle(1), cycle(2)];
    let r_prev = d[1] / d[0];
    let r = d[2] / d[1];
    if !(r < 1.0 - 1e-6 && (r - r_prev).abs() < 1e-3) {
        return None;
    }
    let end = phases[n - 1].end;
    let mut traits: Vec<TraitIndex> = phases[n - period..].iter().map(|p| p.resident).collect();
    traits.sort();
    traits.dedup();
    Some(Accumulation { t_inf: end + d[2] * r / (1.0 - r), ratio: r, period, cycle_durations: d, traits })
}

/// Largest resident-relative fitness against the initial resident; 0 if none is positive.
pub fn max_initial_fitness(params: &ModelParams) -> f64 {
    let r = TraitIndex::new(0, 0);
    params
        .grid()
        .traits()
        .filter(|&t| t != r)
        .filter_map(|t| invasion_fitness(t, r, params, FitnessMode::ResidentRelative).ok())
        .fold(0.0, f64::max)
}



#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn raising_tau_does_not_delay_first_switch(tau in 0.8f64..1.6, bump in 0.01f64..0.3, p in 0.2f64..0.245) {
            let base = ModelParams { delta: 1.51, c: 1.0, p, tau, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None };
            let hi = ModelParams { tau: tau + bump, ..base };
            let (Ok(a), Ok(b)) = (run_limit(&base, 5.0, LimitMode::Standard), run_limit(&hi, 5.0, LimitMode::Standard)) else {
                return Ok(());
            };
            prop_assert!(max_initial_fitness(&hi) >= max_initial_fitness(&base));
            prop_assert!(b.phases[0].end <= a.phases[0].end + 1e-12);
        }

        #[test]
        fn shape_invariants(p in 0.2f64..0.245, tau in 0.9f64..1.5) {
            let params = ModelParams { delta: 1.51, c: 1.0, p, tau, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None };
            if let Ok(tr) = run_limit(&params, 30.0, LimitMode::Standard) {
                for f in &tr.betas {
                    prop_assert!(f.min_value() >= 0.0 && f.max_value() <= 1.0);
                }
                for w in tr.phases.windows(2) {
                    prop_assert!(w[1].start >= w[0].start);
                    prop_assert!(w[0].resident != w[1].resident);
                }
            }
        }
    }
}
