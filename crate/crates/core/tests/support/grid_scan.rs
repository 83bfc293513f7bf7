//! Brute-force forward construction of the exponent limit.
//!
//! Time advances in fixed steps. Inside each step the defining max-formula is evaluated
//! directly, and phase switches and activations are located by bisection on that formula.
//! Shares no scheduling logic with the event engine.

use adl_core::fitness::{invasion_fitness, is_fit, FitnessMode};
use adl_core::{LimitMode, ModelParams, TraitIndex};

pub struct GridScan {
    params: ModelParams,
    mode: LimitMode,
    side: usize,
    order: Vec<usize>,
    parents: Vec<Vec<usize>>,
    reference: usize,
    dominant: bool,
    base: Vec<f64>,
    anchor: Vec<f64>,
    active: Vec<bool>,
    slope: Vec<f64>,
    pub stopped: bool,
}

impl GridScan {
    pub fn new(params: ModelParams, mode: LimitMode) -> Self {
        let l = params.grid().l;
        let side = l + 1;
        let n = side * side;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (i / side + i % side, i / side));
        let parents = (0..n)
            .map(|i| {
                let (m, k) = (i / side, i % side);
                let mut p = Vec::new();
                if m > 0 {
                    p.push((m - 1) * side + k);
                }
                if k > 0 {
                    p.push(m * side + k - 1);
                }
                p
            })
            .collect();
        let base = (0..n)
            .map(|i| {
                let lvl = (i / side + i % side) as f64;
                if i == 0 { 1.0 } else { (1.0 - lvl * params.alpha).max(0.0) }
            })
            .collect();
        let mut g = GridScan {
            params,
            mode,
            side,
            order,
            parents,
            reference: 0,
            dominant: false,
            base,
            anchor: vec![0.0; n],
            active: vec![false; n],
            slope: vec![0.0; n],
            stopped: false,
        };
        let start = g.base.clone();
        g.new_phase(0.0, &start);
        g
    }

    fn tr(&self, i: usize) -> TraitIndex {
        TraitIndex::new(i / self.side, i % self.side)
    }

    fn new_phase(&mut self, t: f64, values: &[f64]) {
        let mode = if self.dominant { FitnessMode::Extended } else { FitnessMode::ResidentRelative };
        let r = self.tr(self.reference);
        for i in 0..values.len() {
            self.base[i] = values[i];
            self.anchor[i] = t;
            self.active[i] = values[i] > 0.0;
            self.slope[i] = if i == self.reference && !self.dominant {
                0.0
            } else {
                invasion_fitness(self.tr(i), r, &self.params, mode).unwrap()
            };
        }
        for i in 0..values.len() {
            if !self.active[i] && self.parents[i].iter().any(|&p| values[p] >= self.params.alpha - 1e-12) {
                self.active[i] = true;
            }
        }
    }

    /// Direct evaluation of the max-formula at time `t` within the current phase.
    pub fn values(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.base.len()];
        for &i in &self.order {
            if i == self.reference && !self.dominant {
                v[i] = 1.0;
                continue;
            }
            let mut x: f64 = 0.0;
            if self.active[i] {
                x = x.max(self.base[i] + self.slope[i] * (t - self.anchor[i]));
            }
            for &p in &self.parents[i] {
                x = x.max(v[p] - self.params.alpha);
            }
            v[i] = x;
        }
        v
    }

    fn meet_gap(&self, t: f64) -> f64 {
        let v = self.values(t);
        let r = v[self.reference];
        let others = (0..v.len()).filter(|&j| j != self.reference).map(|j| v[j]).fold(f64::NEG_INFINITY, f64::max);
        others - r
    }

    fn first_crossing(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Advances from `t` to `t_next`, handling every event inside the step.
    pub fn advance(&mut self, mut t: f64, t_next: f64) {
        while !self.stopped {
            let alpha = self.params.alpha;
            let mut best: Option<(f64, u8, usize)> = None;
            let mut offer = |time: f64, kind: u8, who: usize| {
                if best.map_or(true, |b| time < b.0) {
                    best = Some((time, kind, who));
                }
            };
            if self.meet_gap(t_next) > 0.0 {
                offer(self.first_crossing(t, t_next, |s| self.meet_gap(s)), 0, 0);
            }
            if self.dominant && is_fit(self.tr(self.reference), &self.params) {
                let r = self.reference;
                if self.values(t_next)[r] > 1.0 {
                    offer(self.first_crossing(t, t_next, |s| self.values(s)[r] - 1.0), 1, r);
                }
            }
            let end = self.values(t_next);
            for i in 0..end.len() {
                if self.active[i] {
                    continue;
                }
                for &p in &self.parents[i] {
                    if end[p] > alpha {
                        offer(self.first_crossing(t, t_next, |s| self.values(s)[p] - alpha), 2, i);
                    }
                }
            }
            let Some((time, kind, who)) = best else { return };
            let mut v = self.values(time);
            match kind {
                2 => {
                    self.active[who] = true;
                    self.base[who] = 0.0;
                    self.anchor[who] = time;
                }
                1 => {
                    v[self.reference] = 1.0;
                    self.dominant = false;
                    self.new_phase(time, &v);
                }
                _ => {
                    let r = v[self.reference];
                    let j = (0..v.len())
                        .filter(|&j| j != self.reference)
                        .max_by(|&a, &b| v[a].total_cmp(&v[b]))
                        .unwrap();
                    v[j] = r;
                    if !self.dominant && !is_fit(self.tr(j), &self.params) {
                        if self.mode == LimitMode::Standard {
                            self.stopped = true;
                            return;
                        }
                        self.dominant = true;
                    }
                    self.reference = j;
                    self.new_phase(time, &v);
                }
            }
            t = time;
        }
    }

    /// Runs to `t_end` with step `dt`, returning the exponents at each sample time.
    pub fn run(params: ModelParams, mode: LimitMode, dt: f64, samples: &[f64]) -> Vec<Vec<f64>> {
        let mut g = GridScan::new(params, mode);
        let mut out = Vec::with_capacity(samples.len());
        let mut t = 0.0;
        for &s in samples {
            while t < s {
                let next = (t + dt).min(s);
                g.advance(t, next);
                t = next;
            }
            out.push(g.values(s));
        }
        out
    }
}
