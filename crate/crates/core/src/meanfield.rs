//! Deterministic density approximation of the grid model.
//!
//! Densities are counts divided by K. Time is raw inside the integrators; sampled paths
//! are reported on the log K timescale together with the exponents
//! `γ = log(1 + K x) / log K`.

use crate::fitness::capacity;
use crate::model::{birth_rate, initial_state, ModelParams, ParamError, TraitGrid, TraitIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this total active density the transfer fraction is taken to be zero.
pub const TRANSFER_FLOOR: f64 = 1e-300;
/// A priori bound on total density, in units of `4/C`.
pub const BLOWUP_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanfieldError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("non-finite derivative for trait {0}")]
    NonFinite(TraitIndex),
    #[error("density blow-up at step {step} (t = {time})")]
    BlowUp { step: u64, time: f64 },
    #[error("step size must be positive and finite")]
    BadStep,
    #[error("adaptive step underflow at t = {0}")]
    StepUnderflow(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub l: usize,
    pub active: Vec<f64>,
    pub dormant: Vec<f64>,
    pub time: f64,
}

impl DensityState {
    pub fn zeros(grid: TraitGrid) -> Self {
        DensityState { l: grid.l, active: vec![0.0; grid.len()], dormant: vec![0.0; grid.len()], time: 0.0 }
    }

    /// The stochastic initial condition divided by K.
    pub fn initial(params: &ModelParams) -> Result<Self, MeanfieldError> {
        let k = params.k_or_err()?;
        let s = initial_state(params)?;
        Ok(DensityState {
            l: s.l,
            active: s.active.iter().map(|&v| v as f64 / k).collect(),
            dormant: s.dormant.iter().map(|&v| v as f64 / k).collect(),
            time: 0.0,
        })
    }

    pub fn grid(&self) -> TraitGrid {
        TraitGrid { l: self.l }
    }

    pub fn total_active(&self) -> f64 {
        self.active.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.total_active() + self.dormant.iter().sum::<f64>()
    }

    pub fn density(&self, t: TraitIndex) -> f64 {
        let i = self.grid().index(t);
        self.active[i] + self.dormant[i]
    }

    fn axpy(&self, h: f64, d: &Derivative) -> DensityState {
        DensityState {
            l: self.l,
            active: self.active.iter().zip(&d.active).map(|(x, v)| x + h * v).collect(),
            dormant: self.dormant.iter().zip(&d.dormant).map(|(x, v)| x + h * v).collect(),
            time: self.time + h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub active: Vec<f64>,
    pub dormant: Vec<f64>,
}

/// Vector field of the grid system. With `with_mutation` the K^{-α} source from the
/// parents `(m−1,n)` and `(m,n−1)` is added to the active component; this requires K.
pub fn full_rhs(
    state: &DensityState,
    params: &ModelParams,
    with_mutation: bool,
) -> Result<Derivative, MeanfieldError> {
    let grid = state.grid();
    let side = grid.side();
    let total: f64 = state.total_active();
    let mu = if with_mutation { params.k_or_err()?.powf(-params.alpha) } else { 0.0 };

    // Column sums of active density by HGT index n.
    let mut col = vec![0.0; side];
    for t in grid.traits() {
        col[t.n] += state.active[grid.index(t)];
    }
    let mut below = vec![0.0; side];
    for n in 1..side {
        below[n] = below[n - 1] + col[n - 1];
    }

    let mut d = Derivative { active: vec![0.0; grid.len()], dormant: vec![0.0; grid.len()] };
    for t in grid.traits() {
        let i = grid.index(t);
        let xa = state.active[i];
        let xd = state.dormant[i];
        let frac = if total < TRANSFER_FLOOR {
            0.0
        } else {
            let above = total - below[t.n] - col[t.n];
            params.tau * (below[t.n] - above) / total
        };
        let bracket = capacity(t, params) - params.c * total + frac;
        let mut da = params.sigma * xd + xa * bracket;
        if with_mutation && t.level() > 0 {
            let mut parents = 0.0;
            if t.m > 0 {
                parents += state.active[grid.index(TraitIndex::new(t.m - 1, t.n))];
            }
            if t.n > 0 {
                parents += state.active[grid.index(TraitIndex::new(t.m, t.n - 1))];
            }
            // Birth rate of the parent level: 4 − (m+n−1)δ/2.
            let b = birth_rate(t, params) + params.delta / 2.0;
            da += b * mu * parents;
        }
        let dd = params.p * params.x(t) * params.c * xa * total - (params.sigma + params.kappa) * xd;
        if !da.is_finite() || !dd.is_finite() {
            return Err(MeanfieldError::NonFinite(t));
        }
        d.active[i] = da;
        d.dormant[i] = dd;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerOptions {
    /// Raw time step.
    pub dt: f64,
    /// Horizon in log K units.
    pub horizon: f64,
    /// Snap densities below 1/K to zero after each step.
    pub clamp: bool,
    pub with_mutation: bool,
    /// Number of evenly spaced samples (at least 2).
    pub samples: usize,
}

impl EulerOptions {
    /// Step `T·log K·max(1/K, 1e-5)`, mutation on, clamp off.
    pub fn recipe(params: &ModelParams, horizon: f64) -> Result<Self, MeanfieldError> {
        Ok(EulerOptions {
            dt: default_dt(params, horizon)?,
            horizon,
            clamp: false,
            with_mutation: true,
            samples: 1000,
        })
    }
}

pub fn default_dt(params: &ModelParams, horizon: f64) -> Result<f64, MeanfieldError> {
    let k = params.k_or_err()?;
    Ok(horizon * k.ln() * (1.0 / k).max(1e-5))
}

/// Sampled deterministic path. Times are in log K units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanfieldPath {
    pub l: usize,
    pub k: f64,
    pub times: Vec<f64>,
    pub active: Vec<Vec<f64>>,
    pub dormant: Vec<Vec<f64>>,
    pub steps: u64,
}

impl MeanfieldPath {
    pub fn grid(&self) -> TraitGrid {
        TraitGrid { l: self.l }
    }

    pub fn density(&self, sample: usize, t: TraitIndex) -> f64 {
        let i = self.grid().index(t);
        self.active[sample][i] + self.dormant[sample][i]
    }

    /// `γ[sample][trait] = log(1 + K x) / log K`.
    pub fn gamma(&self) -> Vec<Vec<f64>> {
        let lk = self.k.ln();
        (0..self.times.len())
            .map(|s| {
                (0..self.grid().len())
                    .map(|i| (self.k * (self.active[s][i] + self.dormant[s][i])).ln_1p() / lk)
                    .collect()
            })
            .collect()
    }

    /// Index of the largest total density at each sample.
    pub fn argmax(&self) -> Vec<TraitIndex> {
        let g = self.grid();
        (0..self.times.len())
            .map(|s| {
                let mut best = 0;
                for i in 1..g.len() {
                    if self.active[s][i] + self.dormant[s][i] > self.active[s][best] + self.dormant[s][best] {
                        best = i;
                    }
                }
                g.trait_at(best)
            })
            .collect()
    }
}

/// Forward Euler from `state0` (raw time 0) up to `horizon · log K`.
pub fn integrate_euler(
    state0: &DensityState,
    params: &ModelParams,
    opts: &EulerOptions,
) -> Result<MeanfieldPath, MeanfieldError> {
    params.validate()?;
    let k = params.k_or_err()?;
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || !(opts.horizon >= 0.0) {
        return Err(MeanfieldError::BadStep);
    }
    let lk = k.ln();
    let t_end = opts.horizon * lk;
    let steps = (t_end / opts.dt).ceil() as u64;
    let n_samples = opts.samples.max(2) as u64;
    let bound = BLOWUP_FACTOR * GRID_BOUND / params.c;

    let mut path = MeanfieldPath {
        l: state0.l,
        k,
        times: Vec::new(),
        active: Vec::new(),
        dormant: Vec::new(),
        steps,
    };
    let mut record = |s: &DensityState| {
        path.times.push(s.time / lk);
        path.active.push(s.active.clone());
        path.dormant.push(s.dormant.clone());
    };

    let mut s = state0.clone();
    s.time = 0.0;
    record(&s);
    let mut next_sample = 1u64;
    for step in 1..=steps {
        let h = opts.dt.min(t_end - s.time);
        let d = full_rhs(&s, params, opts.with_mutation)?;
        s = s.axpy(h, &d);
        if step == steps {
            s.time = t_end;
        }
        if opts.clamp {
            for v in s.active.iter_mut().chain(s.dormant.iter_mut()) {
                if *v < 1.0 / k {
                    *v = 0.0;
                }
            }
        }
        if !(s.active.iter().chain(&s.dormant).map(|v| v.abs()).sum::<f64>() <= bound) {
            return Err(MeanfieldError::BlowUp { step, time: s.time });
        }
        // Sample j sits at step round(j·steps/(n−1)).
        while next_sample < n_samples && step >= (next_sample * steps + (n_samples - 1) / 2) / (n_samples - 1) {
            record(&s);
            next_sample += 1;
        }
    }
    while next_sample < n_samples {
        record(&s);
        next_sample += 1;
    }
    Ok(path)
}

const GRID_BOUND: f64 = crate::model::GRID_EXTENT;

fn rk4_step(s: &DensityState, params: &ModelParams, mutation: bool, h: f64) -> Result<DensityState, MeanfieldError> {
    let k1 = full_rhs(s, params, mutation)?;
    let k2 = full_rhs(&s.axpy(h / 2.0, &k1), params, mutation)?;
    let k3 = full_rhs(&s.axpy(h / 2.0, &k2), params, mutation)?;
    let k4 = full_rhs(&s.axpy(h, &k3), params, mutation)?;
    let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..a.len()).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
    };
    let d = Derivative {
        active: comb(&k1.active, &k2.active, &k3.active, &k4.active),
        dormant: comb(&k1.dormant, &k2.dormant, &k3.dormant, &k4.dormant),
    };
    Ok(s.axpy(h, &d))
}

fn max_diff(a: &DensityState, b: &DensityState) -> f64 {
    a.active
        .iter()
        .zip(&b.active)
        .chain(a.dormant.iter().zip(&b.dormant))
        .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max)
}

/// RK4 with step doubling: a step is accepted when one full step and two half steps
/// agree to `tol` (mixed absolute/relative). Returns the state at raw time `t_end`.
pub fn integrate_rk4_adaptive(
    state0: &DensityState,
    params: &ModelParams,
    with_mutation: bool,
    t_end: f64,
    tol: f64,
) -> Result<DensityState, MeanfieldError> {
    let mut s = state0.clone();
    let t0 = s.time;
    let mut h = ((t_end - t0) / 100.0).max(1e-6);
    while s.time < t_end {
        h = h.min(t_end - s.time);
        if h < 1e-14 * (1.0 + s.time.abs()) {
            return Err(MeanfieldError::StepUnderflow(s.time));
        }
        let full = rk4_step(&s, params, with_mutation, h)?;
        let half = rk4_step(&rk4_step(&s, params, with_mutation, h / 2.0)?, params, with_mutation, h / 2.0)?;
        let err = max_diff(&full, &half) / 15.0;
        if err <= tol {
            let t_next = s.time + h;
            s = half;
            s.time = if (t_end - t_next).abs() < 1e-12 * (1.0 + t_end) { t_end } else { t_next };
            if err < tol / 64.0 {
                h *= 2.0;
            }
        } else {
            h /= 2.0;
        }
    }
    Ok(s)
}

/// Fixed-step RK4 for the single-trait resident system.
pub fn integrate_resident_pair(
    z0: (f64, f64),
    t: TraitIndex,
    params: &ModelParams,
    t_end: f64,
    h: f64,
) -> (f64, f64) {
    let f = |z: (f64, f64)| crate::fitness::resident_pair_rhs(z.0, z.1, t, params);
    let steps = (t_end / h).ceil() as usize;
    let h = t_end / steps as f64;
    let mut z = z0;
    for _ in 0..steps {
        let k1 = f(z);
        let k2 = f((z.0 + h / 2.0 * k1.0, z.1 + h / 2.0 * k1.1));
        let k3 = f((z.0 + h / 2.0 * k2.0, z.1 + h / 2.0 * k2.1));
        let k4 = f((z.0 + h * k3.0, z.1 + h * k3.1));
        z = (
            z.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            z.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
    }
    z
}

/// Maximal per-capita loss rate over the grid at densities bounded by `x_max`; Euler
/// preserves nonnegativity when `dt` is below its reciprocal.
pub fn positivity_dt_bound(params: &ModelParams, x_max: f64) -> f64 {
    let active_loss = 1.0 + params.c * x_max + params.tau;
    let dormant_loss = params.kappa + params.sigma;
    1.0 / active_loss.max(dormant_loss)
}
