//! Exact stochastic simulation of the individual-based model.
//!
//! Direct method with channels aggregated per category. The total rate is
//! `Σ A_i b_i + N + C N²/K + (κ+σ) D + τ P/N`, where `N` is the total active count,
//! `D` the total dormant count and `P` the number of active pairs with different HGT
//! index. An event first picks a category, then a trait (or trait pair), then the
//! outcome within the category. Each individual's rates are those of the rate table.
//!
//! RNG: ChaCha8 seeded with `seed_from_u64(seed ^ r)` for replicate `r`.

use crate::model::{birth_rate, ModelParams, ParamError, PopulationState, TraitGrid, TraitIndex};
use crate::threads::with_pool;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsaError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("K must be at least 2 for exponent extraction")]
    SmallK,
    #[error("count overflow in {0}")]
    Overflow(&'static str),
    #[error("sample times must be finite, nonnegative and strictly increasing")]
    BadSampling,
}

/// Event channels, in counter order.
pub const CHANNELS: [&str; 8] = [
    "birth_clone",
    "birth_mut_dorm",
    "birth_mut_hgt",
    "death_active",
    "to_dormant",
    "death_dormant",
    "wake",
    "transfer",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts(pub [u64; 8]);

impl ChannelCounts {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    fn bump(&mut self, ch: usize) -> Result<(), SsaError> {
        self.0[ch] = self.0[ch].checked_add(1).ok_or(SsaError::Overflow(CHANNELS[ch]))?;
        Ok(())
    }
}

/// Where to record the state. Times are in log K units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    Uniform { points: usize },
    Times(Vec<f64>),
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Uniform { points: 1000 }
    }
}

impl Sampling {
    pub fn times(&self, horizon_logk: f64) -> Vec<f64> {
        match self {
            Sampling::Uniform { points } => {
                let n = (*points).max(2);
                (0..n).map(|i| horizon_logk * i as f64 / (n - 1) as f64).collect()
            }
            Sampling::Times(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub params: ModelParams,
    pub seed: u64,
    /// Sample times in raw time units.
    pub times: Vec<f64>,
    pub active: Vec<Vec<u64>>,
    pub dormant: Vec<Vec<u64>>,
    /// Cumulative per-channel counters at each sample.
    pub counters: Vec<ChannelCounts>,
    /// Cumulative number of events at each sample, counted independently of the channels.
    pub events: Vec<u64>,
    /// Raw time at which the total rate hit 0, if it did.
    pub halted_at: Option<f64>,
}

impl SimTrajectory {
    pub fn grid(&self) -> TraitGrid {
        self.params.grid()
    }

    pub fn count(&self, sample: usize, t: TraitIndex) -> u64 {
        let i = self.grid().index(t);
        self.active[sample][i] + self.dormant[sample][i]
    }

    /// Sample times in log K units.
    pub fn times_logk(&self) -> Vec<f64> {
        let lk = (self.params.k.unwrap_or(1) as f64).ln();
        self.times.iter().map(|t| t / lk).collect()
    }
}

/// `log(1 + count)/log K` for every sample, indexed `[sample][trait]`.
pub fn exponents(traj: &SimTrajectory) -> Result<Vec<Vec<f64>>, SsaError> {
    let k = traj.params.k_or_err()?;
    if k < 2.0 {
        return Err(SsaError::SmallK);
    }
    let lk = k.ln();
    Ok((0..traj.times.len())
        .map(|s| {
            traj.active[s]
                .iter()
                .zip(&traj.dormant[s])
                .map(|(&a, &d)| ((a + d) as f64).ln_1p() / lk)
                .collect()
        })
        .collect())
}

struct Tables {
    n_traits: usize,
    side: usize,
    birth: Vec<f64>,
    px: Vec<f64>,
    mut_dorm: Vec<bool>,
    mut_hgt: Vec<bool>,
    half_mut: f64,
}

impl Tables {
    fn new(params: &ModelParams, k: f64) -> Self {
        let grid = params.grid();
        let traits: Vec<TraitIndex> = grid.traits().collect();
        Tables {
            n_traits: grid.len(),
            side: grid.side(),
            birth: traits.iter().map(|&t| birth_rate(t, params)).collect(),
            px: traits.iter().map(|&t| params.p * params.x(t)).collect(),
            mut_dorm: traits.iter().map(|t| grid.contains(t.m + 1, t.n)).collect(),
            mut_hgt: traits.iter().map(|t| grid.contains(t.m, t.n + 1)).collect(),
            half_mut: k.powf(-params.alpha) / 2.0,
        }
    }
}

fn pick(weights: impl Iterator<Item = f64>, mut u: f64) -> usize {
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    // Rounding can leave u marginally above the sum; fall back to the last positive weight.
    last
}

fn inc(x: &mut u64, what: &'static str) -> Result<(), SsaError> {
    *x = x.checked_add(1).ok_or(SsaError::Overflow(what))?;
    Ok(())
}

/// Runs the jump process from `state` and records it at the given raw times.
pub fn simulate_from(
    state: PopulationState,
    params: &ModelParams,
    sample_times_raw: &[f64],
    seed: u64,
) -> Result<SimTrajectory, SsaError> {
    params.validate()?;
    let k = params.k_or_err()?;
    if sample_times_raw.iter().any(|t| !t.is_finite() || *t < 0.0)
        || sample_times_raw.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(SsaError::BadSampling);
    }
    let tb = Tables::new(params, k);
    let nt = tb.n_traits;
    let side = tb.side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = state.active.clone();
    let mut d = state.dormant.clone();
    let mut t = state.time;
    let c_over_k = params.c / k;
    let ks = params.kappa + params.sigma;
    let wake_frac = params.sigma / ks;

    let mut out = SimTrajectory {
        params: *params,
        seed,
        times: sample_times_raw.to_vec(),
        active: Vec::with_capacity(sample_times_raw.len()),
        dormant: Vec::with_capacity(sample_times_raw.len()),
        counters: Vec::with_capacity(sample_times_raw.len()),
        events: Vec::with_capacity(sample_times_raw.len()),
        halted_at: None,
    };
    let mut counts = ChannelCounts::default();
    let mut events: u64 = 0;
    let mut next_sample = 0;
    let mut col = vec![0u64; side];

    while next_sample < sample_times_raw.len() {
        // Category totals.
        let mut births = 0.0;
        let mut n_act: u64 = 0;
        let mut n_dorm: u64 = 0;
        col.iter_mut().for_each(|c| *c = 0);
        for i in 0..nt {
            births += a[i] as f64 * tb.birth[i];
            n_act += a[i];
            n_dorm += d[i];
            col[i % side] += a[i];
        }
        let nf = n_act as f64;
        let sq: u128 = col.iter().map(|&c| (c as u128) * (c as u128)).sum();
        let pairs = ((n_act as u128) * (n_act as u128) - sq) / 2;
        let transfer = if n_act > 0 { params.tau * pairs as f64 / nf } else { 0.0 };
        let competition = c_over_k * nf * nf;
        let dormant_out = ks * n_dorm as f64;
        let total = births + nf + competition + dormant_out + transfer;

        let dt = if total > 0.0 { -(1.0 - rng.random::<f64>()).ln() / total } else { f64::INFINITY };
        let t_new = t + dt;
        while next_sample < sample_times_raw.len() && sample_times_raw[next_sample] < t_new {
            out.active.push(a.clone());
            out.dormant.push(d.clone());
            out.counters.push(counts);
            out.events.push(events);
            next_sample += 1;
        }
        if total <= 0.0 {
            out.halted_at = Some(t);
            break;
        }
        if next_sample >= sample_times_raw.len() {
            break;
        }
        t = t_new;
        events += 1;

        let mut u = rng.random::<f64>() * total;
        if u < births {
            let i = pick((0..nt).map(|i| a[i] as f64 * tb.birth[i]), u);
            let v = rng.random::<f64>();
            if tb.mut_dorm[i] && v < tb.half_mut {
                inc(&mut a[i + side], "active")?;
                counts.bump(1)?;
            } else if tb.mut_hgt[i] && v >= 1.0 - tb.half_mut {
                inc(&mut a[i + 1], "active")?;
                counts.bump(2)?;
            } else {
                inc(&mut a[i], "active")?;
                counts.bump(0)?;
            }
            continue;
        }
        u -= births;
        if u < nf {
            let i = pick(a.iter().map(|&x| x as f64), u);
            a[i] -= 1;
            counts.bump(3)?;
            continue;
        }
        u -= nf;
        if u < competition {
            let i = pick(a.iter().map(|&x| x as f64), u / (c_over_k * nf));
            a[i] -= 1;
            if rng.random::<f64>() < tb.px[i] {
                inc(&mut d[i], "dormant")?;
                counts.bump(4)?;
            } else {
                counts.bump(3)?;
            }
            continue;
        }
        u -= competition;
        if u < dormant_out {
            let i = pick(d.iter().map(|&x| x as f64), u / ks);
            d[i] -= 1;
            if rng.random::<f64>() < wake_frac {
                inc(&mut a[i], "active")?;
                counts.bump(6)?;
            } else {
                counts.bump(5)?;
            }
            continue;
        }
        // Transfer: recipient column nv, donor column nu > nv, then traits within columns.
        let above = |nv: usize| -> f64 { col[nv + 1..].iter().sum::<u64>() as f64 };
        let w = rng.random::<f64>() * pairs as f64;
        let nv = pick((0..side).map(|c| col[c] as f64 * if c + 1 < side { above(c) } else { 0.0 }), w);
        let nu = nv + 1 + pick(col[nv + 1..].iter().map(|&x| x as f64), rng.random::<f64>() * above(nv));
        let recipient = side * pick((0..side).map(|m| a[m * side + nv] as f64), rng.random::<f64>() * col[nv] as f64) + nv;
        let donor = side * pick((0..side).map(|m| a[m * side + nu] as f64), rng.random::<f64>() * col[nu] as f64) + nu;
        a[recipient] -= 1;
        a[donor] += 1;
        counts.bump(7)?;
    }
    // Flat tail after a halt.
    while out.active.len() < sample_times_raw.len() {
        out.active.push(a.clone());
        out.dormant.push(d.clone());
        out.counters.push(counts);
        out.events.push(events);
    }
    Ok(out)
}

/// Simulates from the standard initial condition up to `horizon_logk` (log K units).
pub fn simulate(
    params: &ModelParams,
    horizon_logk: f64,
    seed: u64,
    sampling: &Sampling,
) -> Result<SimTrajectory, SsaError> {
    let k = params.k_or_err()?;
    let state = crate::model::initial_state(params)?;
    let lk = k.ln();
    let raw: Vec<f64> = sampling.times(horizon_logk).iter().map(|t| t * lk).collect();
    simulate_from(state, params, &raw, seed)
}

/// Replicate `r` uses seed `seed ^ r`. Replicates run on the shared pool.
pub fn simulate_replicates(
    params: &ModelParams,
    horizon_logk: f64,
    seed: u64,
    replicates: usize,
    sampling: &Sampling,
) -> Result<Vec<SimTrajectory>, SsaError> {
    with_pool(|| {
        (0..replicates as u64)
            .into_par_iter()
            .map(|r| simulate(params, horizon_logk, seed ^ r, sampling))
            .collect()
    })
}
