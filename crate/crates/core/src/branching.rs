//! Bi-type branching processes with immigration (BBPI).
//!
//! Two compartments `X` (active) and `Y` (dormant); `X` receives immigrants at rate
//! `K^c e^{at}`. Provides exact moments, the limit exponent `β̄` of the total size on
//! the log K timescale, the strong-mutation window and an exact simulator.

use crate::piecewise::PiecewiseLinear;
use crate::threads::with_pool;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance below which `a` counts as resonant with an eigenvalue.
pub const RESONANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error("invalid parameter {0}: {1}")]
    Param(&'static str, String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(&'static str),
    #[error("population overflow at t = {0}")]
    Overflow(f64),
    #[error("event budget exhausted at t = {0}")]
    EventBudget(f64),
    #[error("second-moment integration failed at t = {0}")]
    StepFailure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbpiParams {
    pub b1: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub a: f64,
    /// Immigration size exponent; `f64::NEG_INFINITY` switches immigration off.
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: f64,
}

impl BbpiParams {
    pub fn validate(&self) -> Result<(), BranchingError> {
        let nonneg = [("b1", self.b1), ("b2", self.b2), ("d1", self.d1), ("d2", self.d2)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BranchingError::Param(name, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BranchingError::Param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.a.is_finite() {
            return Err(BranchingError::Param("a", "must be finite".into()));
        }
        if self.c.is_nan() || self.c == f64::INFINITY {
            return Err(BranchingError::Param("c", "must be finite or -inf".into()));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BranchingError::Param(name, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        if !(self.k >= 1.0 && self.k.is_finite()) {
            return Err(BranchingError::Param("K", format!("must be ≥ 1, got {}", self.k)));
        }
        Ok(())
    }

    pub fn r1(&self) -> f64 {
        self.b1 - self.d1 - self.sigma1
    }

    pub fn r2(&self) -> f64 {
        self.b2 - self.d2 - self.sigma2
    }

    pub fn discriminant(&self) -> f64 {
        let (r1, r2) = (self.r1(), self.r2());
        ((r1 - r2).powi(2) + 4.0 * self.sigma1 * self.sigma2).sqrt()
    }

    /// Dominant eigenvalue λ of the mean matrix.
    pub fn lambda(&self) -> f64 {
        crate::fitness::dominant_eigenvalue(self.r1(), self.r2(), self.sigma1, self.sigma2)
    }

    /// Subdominant eigenvalue λ̃.
    pub fn lambda_tilde(&self) -> f64 {
        // λ λ̃ = det, which avoids cancellation when λ dominates.
        let l = self.lambda();
        let det = self.r1() * self.r2() - self.sigma1 * self.sigma2;
        if l != 0.0 {
            det / l
        } else {
            (self.r1() + self.r2() - self.discriminant()) / 2.0
        }
    }

    pub fn immigration_scale(&self) -> f64 {
        if self.c == f64::NEG_INFINITY {
            0.0
        } else {
            (self.c * self.k.ln()).exp()
        }
    }

    /// `(K^β − 1, K^γ − 1)`.
    pub fn mean_start(&self) -> (f64, f64) {
        let lk = self.k.ln();
        ((self.beta * lk).exp_m1(), (self.gamma * lk).exp_m1())
    }

    /// `(⌊K^β − 1⌋, ⌊K^γ − 1⌋)`.
    pub fn integer_start(&self) -> (u64, u64) {
        let (x, y) = self.mean_start();
        // Guard against K^β landing a hair below an integer.
        let fl = |v: f64| (v + 1e-9 * (1.0 + v)).floor() as u64;
        (fl(x), fl(y))
    }
}

/// Eigenvector of `[[r1, σ2], [σ1, r2]]` for eigenvalue `mu`, chosen from the row that
/// avoids cancellation.
fn eigvec(r1: f64, r2: f64, s1: f64, s2: f64, mu: f64) -> (f64, f64) {
    let a = (s2, mu - r1);
    let b = (mu - r2, s1);
    if (mu - r1).abs() >= (mu - r2).abs() {
        a
    } else {
        b
    }
}

/// `∫_0^t e^{μ(t−s)} e^{as} ds`, with the resonant form `t e^{μt}`.
fn forcing(mu: f64, a: f64, t: f64) -> f64 {
    let d = a - mu;
    if d.abs() < RESONANCE_TOL {
        t * (mu * t).exp()
    } else {
        (mu * t).exp() * (d * t).exp_m1() / d
    }
}

/// Closed-form mean from an arbitrary start.
pub fn bbpi_mean_from(params: &BbpiParams, start: (f64, f64), t: f64) -> (f64, f64) {
    let (r1, r2, s1, s2) = (params.r1(), params.r2(), params.sigma1, params.sigma2);
    let l1 = params.lambda();
    let l2 = params.lambda_tilde();
    let v1 = eigvec(r1, r2, s1, s2, l1);
    let v2 = eigvec(r1, r2, s1, s2, l2);
    let det = v1.0 * v2.1 - v2.0 * v1.1;
    // Coordinates of z in the eigenbasis: S^{-1} z.
    let coords = |z: (f64, f64)| ((v2.1 * z.0 - v2.0 * z.1) / det, (-v1.1 * z.0 + v1.0 * z.1) / det);
    let w0 = coords(start);
    let e = coords((1.0, 0.0));
    let kc = params.immigration_scale();
    let w1 = w0.0 * (l1 * t).exp() + kc * e.0 * forcing(l1, params.a, t);
    let w2 = w0.1 * (l2 * t).exp() + kc * e.1 * forcing(l2, params.a, t);
    (w1 * v1.0 + w2 * v2.0, w1 * v1.1 + w2 * v2.1)
}

/// Closed-form mean from `(K^β − 1, K^γ − 1)`.
pub fn bbpi_mean(params: &BbpiParams, t: f64) -> (f64, f64) {
    bbpi_mean_from(params, params.mean_start(), t)
}

fn mean_rhs(p: &BbpiParams, t: f64, z: (f64, f64)) -> (f64, f64) {
    (
        p.r1() * z.0 + p.sigma2 * z.1 + p.immigration_scale() * (p.a * t).exp(),
        p.sigma1 * z.0 + p.r2() * z.1,
    )
}

/// Fixed-step RK4 solution of the mean ODE; used as an oracle.
pub fn bbpi_mean_rk4(params: &BbpiParams, start: (f64, f64), t: f64, steps: usize) -> (f64, f64) {
    let h = t / steps as f64;
    let mut z = start;
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = mean_rhs(params, s, z);
        let k2 = mean_rhs(params, s + h / 2.0, (z.0 + h / 2.0 * k1.0, z.1 + h / 2.0 * k1.1));
        let k3 = mean_rhs(params, s + h / 2.0, (z.0 + h / 2.0 * k2.0, z.1 + h / 2.0 * k2.1));
        let k4 = mean_rhs(params, s + h, (z.0 + h * k3.0, z.1 + h * k3.1));
        z = (
            z.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            z.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoments {
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

fn moment_rhs(p: &BbpiParams, start: (f64, f64), t: f64, m: [f64; 3]) -> [f64; 3] {
    let (x, y) = bbpi_mean_from(p, start, t);
    let (r1, r2, s1, s2) = (p.r1(), p.r2(), p.sigma1, p.sigma2);
    let imm = p.immigration_scale() * (p.a * t).exp();
    [
        2.0 * r1 * m[0] + 2.0 * s2 * m[2] + (p.b1 + p.d1 + s1) * x + s2 * y + imm,
        2.0 * r2 * m[1] + 2.0 * s1 * m[2] + (p.b2 + p.d2 + s2) * y + s1 * x,
        // Switching moves one individual between compartments: the jump (−1,+1)
        // contributes −1 to the covariance source.
        s1 * m[0] + s2 * m[1] + (r1 + r2) * m[2] - (s1 * x + s2 * y),
    ]
}

fn rk4_moment(p: &BbpiParams, start: (f64, f64), t: f64, h: f64, m: [f64; 3]) -> [f64; 3] {
    let add = |m: [f64; 3], k: [f64; 3], s: f64| [m[0] + s * k[0], m[1] + s * k[1], m[2] + s * k[2]];
    let k1 = moment_rhs(p, start, t, m);
    let k2 = moment_rhs(p, start, t + h / 2.0, add(m, k1, h / 2.0));
    let k3 = moment_rhs(p, start, t + h / 2.0, add(m, k2, h / 2.0));
    let k4 = moment_rhs(p, start, t + h, add(m, k3, h));
    [0, 1, 2].map(|i| m[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Variances and covariance at `t` from a deterministic start, by RK4 with step
/// doubling (relative tolerance 1e-10).
pub fn bbpi_second_moments_from(
    params: &BbpiParams,
    start: (f64, f64),
    t: f64,
) -> Result<SecondMoments, BranchingError> {
    let tol = 1e-10;
    let mut m = [0.0; 3];
    let mut s = 0.0;
    let mut h = (t / 64.0).max(1e-6);
    while s < t {
        h = h.min(t - s);
        if h < 1e-12 * (1.0 + t) {
            return Err(BranchingError::StepFailure(s));
        }
        let full = rk4_moment(params, start, s, h, m);
        let half = rk4_moment(params, start, s + h / 2.0, h / 2.0, rk4_moment(params, start, s, h / 2.0, m));
        let scale = 1.0 + half.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = (0..3).map(|i| (full[i] - half[i]).abs()).fold(0.0, f64::max) / (15.0 * scale);
        if !err.is_finite() {
            return Err(BranchingError::StepFailure(s));
        }
        if err <= tol {
            s = if t - (s + h) < 1e-14 * (1.0 + t) { t } else { s + h };
            m = half;
            if err < tol / 64.0 {
                h *= 2.0;
            }
        } else {
            h /= 2.0;
        }
    }
    Ok(SecondMoments { var_x: m[0], var_y: m[1], cov: m[2] })
}

pub fn bbpi_second_moments(params: &BbpiParams, t: f64) -> Result<SecondMoments, BranchingError> {
    let (x, y) = params.integer_start();
    bbpi_second_moments_from(params, (x as f64, y as f64), t)
}

/// Upper envelope of lines `v0 + s t` and of 0 on `[0, horizon]`, as an exact
/// piecewise-linear function.
pub fn max_of_lines(lines: &[(f64, f64)], horizon: f64) -> PiecewiseLinear {
    let mut lines: Vec<(f64, f64)> = lines.iter().copied().filter(|l| l.0.is_finite()).collect();
    lines.push((0.0, 0.0));
    let f = |t: f64| lines.iter().map(|&(v, s)| v + s * t).fold(f64::NEG_INFINITY, f64::max);
    let mut cuts = vec![0.0, horizon];
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let ds = lines[i].1 - lines[j].1;
            if ds != 0.0 {
                let t = (lines[j].0 - lines[i].0) / ds;
                if t > 0.0 && t < horizon {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let pts: Vec<(f64, f64)> = cuts.iter().map(|&t| (t, f(t))).collect();
    PiecewiseLinear::from_points(&pts)
}

fn limit_beta(
    start: f64,
    rate: f64,
    a: f64,
    c: f64,
    horizon: f64,
) -> Result<PiecewiseLinear, BranchingError> {
    if start > 0.0 {
        if c > start {
            return Err(BranchingError::Hypothesis("c ≤ β∨γ (use the strong-mutation window)"));
        }
        return Ok(max_of_lines(&[(start, rate), (c, a)], horizon));
    }
    if c == f64::NEG_INFINITY {
        return Ok(PiecewiseLinear::from_points(&[(0.0, 0.0), (horizon, 0.0)]));
    }
    if c >= 0.0 {
        return Err(BranchingError::Hypothesis("c < 0 when β∨γ = 0"));
    }
    if a > 0.0 {
        let t0 = c.abs() / a;
        let s = rate.max(a);
        Ok(max_of_lines(&[(-s * t0, s)], horizon))
    } else {
        Ok(PiecewiseLinear::from_points(&[(0.0, 0.0), (horizon, 0.0)]))
    }
}

/// Limit `β̄` of `log(1 + X + Y)/log K` at times `t log K`, on `[0, horizon]`.
pub fn bbpi_limit_beta(params: &BbpiParams, horizon: f64) -> Result<PiecewiseLinear, BranchingError> {
    params.validate()?;
    limit_beta(params.beta.max(params.gamma), params.lambda(), params.a, params.c, horizon)
}

/// One-type counterpart with growth rate `r = b − d`.
pub fn bpi_limit_beta(
    b: f64,
    d: f64,
    a: f64,
    c: f64,
    beta: f64,
    horizon: f64,
) -> Result<PiecewiseLinear, BranchingError> {
    if !(b >= 0.0 && d >= 0.0 && beta >= 0.0) {
        return Err(BranchingError::Param("b, d, beta", "must be ≥ 0".into()));
    }
    limit_beta(beta, b - d, a, c, horizon)
}

/// Sampled simulation path. `immigrants` counts immigration events up to each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbpiPath {
    pub times: Vec<f64>,
    pub x: Vec<u64>,
    pub y: Vec<u64>,
    pub immigrants: Vec<u64>,
    pub events: u64,
}

impl BbpiPath {
    pub fn exponents(&self, k: f64) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| ((x + y) as f64).ln_1p() / k.ln()).collect()
    }
}

/// Default event budget for one path.
pub const MAX_BBPI_EVENTS: u64 = 2_000_000_000;

/// Smallest `τ ≥ 0` with `r0 τ + I(τ) = e`, where `I(τ) = q (e^{aτ} − 1)/a`; `None` if
/// no such τ lies in `[0, limit]`.
fn invert_hazard(r0: f64, q: f64, a: f64, e: f64, limit: f64) -> Option<f64> {
    let big = |tau: f64| {
        let imm = if a == 0.0 { q * tau } else { q * (a * tau).exp_m1() / a };
        r0 * tau + imm
    };
    if !(big(limit) >= e) {
        return None;
    }
    if a == 0.0 || q == 0.0 {
        return Some(e / (r0 + q));
    }
    let (mut lo, mut hi) = (0.0, limit);
    let mut tau = (e / (r0 + q)).min(limit);
    for _ in 0..200 {
        let g = big(tau) - e;
        if g > 0.0 {
            hi = tau;
        } else {
            lo = tau;
        }
        let dg = r0 + q * (a * tau).exp();
        let mut next = tau - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - tau).abs() <= 1e-15 * (1.0 + tau) || hi - lo <= 1e-15 * (1.0 + hi) {
            return Some(next);
        }
        tau = next;
    }
    Some(tau)
}

/// Exact simulation on raw time `[0, times.last()]`, recording at the given increasing
/// raw times. Immigration uses exact inversion of the cumulative hazard.
pub fn bbpi_simulate(
    params: &BbpiParams,
    times: &[f64],
    seed: u64,
    max_events: u64,
) -> Result<BbpiPath, BranchingError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = params.integer_start();
    let q0 = params.immigration_scale();
    let p = params;
    let mut t = 0.0;
    let mut path = BbpiPath { times: times.to_vec(), x: Vec::new(), y: Vec::new(), immigrants: Vec::new(), events: 0 };
    let mut imm_count = 0u64;
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut next = 0;
    let record = |path: &mut BbpiPath, upto: f64, next: &mut usize, x: u64, y: u64, imm: u64| {
        while *next < times.len() && times[*next] <= upto {
            path.x.push(x);
            path.y.push(y);
            path.immigrants.push(imm);
            *next += 1;
        }
    };
    loop {
        let (xf, yf) = (x as f64, y as f64);
        let r_x = (p.b1 + p.sigma1 + p.d1) * xf;
        let r_y = (p.b2 + p.sigma2 + p.d2) * yf;
        let r0 = r_x + r_y;
        let q = q0 * (p.a * t).exp();
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        let tau = invert_hazard(r0, q, p.a, e, horizon - t);
        let Some(tau) = tau else {
            record(&mut path, f64::INFINITY, &mut next, x, y, imm_count);
            return Ok(path);
        };
        let t_new = t + tau;
        record(&mut path, t_new - f64::EPSILON * t_new, &mut next, x, y, imm_count);
        t = t_new;
        if path.events >= max_events {
            return Err(BranchingError::EventBudget(t));
        }
        path.events += 1;
        let q_now = q0 * (p.a * t).exp();
        let u = rng.random::<f64>() * (r0 + q_now);
        let overflow = || BranchingError::Overflow(t);
        if u < q_now {
            x = x.checked_add(1).ok_or_else(overflow)?;
            imm_count += 1;
            continue;
        }
        let mut u = u - q_now;
        if u < r_x {
            if u < p.b1 * xf {
                x = x.checked_add(1).ok_or_else(overflow)?;
            } else if u < (p.b1 + p.sigma1) * xf {
                x -= 1;
                y += 1;
            } else {
                x -= 1;
            }
            continue;
        }
        u -= r_x;
        if u < p.b2 * yf {
            y = y.checked_add(1).ok_or_else(overflow)?;
        } else if u < (p.b2 + p.sigma2) * yf {
            y -= 1;
            x += 1;
        } else if y > 0 {
            y -= 1;
        }
    }
}

/// Independent replicates with seeds `seed ^ r`, run on the shared pool.
pub fn bbpi_replicates(
    params: &BbpiParams,
    times: &[f64],
    seed: u64,
    replicates: u64,
    max_events: u64,
) -> Result<Vec<BbpiPath>, BranchingError> {
    with_pool(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| bbpi_simulate(params, times, seed ^ r, max_events))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongMutationReport {
    pub lower: f64,
    pub upper: f64,
    pub abar: f64,
    pub eps: f64,
    pub sizes: Vec<u64>,
    pub inside: usize,
}

impl StrongMutationReport {
    pub fn fraction_inside(&self) -> f64 {
        self.inside as f64 / self.sizes.len() as f64
    }
}

/// Checks the window `[K^{c−āε}, K^{c+āε}]` for the total size at `ε log K` over
/// `runs` replicates. Requires `0 ≤ β∨γ < c`, `0 < ε < c/(4(|λ|∨|a|))` and
/// `ā > |λ|∨|a|`.
pub fn strong_mutation_check(
    params: &BbpiParams,
    eps: f64,
    abar: f64,
    runs: u64,
    seed: u64,
) -> Result<StrongMutationReport, BranchingError> {
    params.validate()?;
    let bg = params.beta.max(params.gamma);
    if !(bg < params.c) {
        return Err(BranchingError::Hypothesis("β∨γ < c"));
    }
    let rate = params.lambda().abs().max(params.a.abs());
    if !(eps > 0.0 && eps < params.c / (4.0 * rate)) {
        return Err(BranchingError::Hypothesis("0 < ε < c/(4(|λ|∨|a|))"));
    }
    if !(abar > rate) {
        return Err(BranchingError::Hypothesis("ā > |λ|∨|a|"));
    }
    let lk = params.k.ln();
    let t = eps * lk;
    let paths = bbpi_replicates(params, &[t], seed, runs, MAX_BBPI_EVENTS)?;
    let lower = ((params.c - abar * eps) * lk).exp();
    let upper = ((params.c + abar * eps) * lk).exp();
    let sizes: Vec<u64> = paths.iter().map(|p| p.x[0] + p.y[0]).collect();
    let inside = sizes.iter().filter(|&&s| (s as f64) >= lower && (s as f64) <= upper).count();
    Ok(StrongMutationReport { lower, upper, abar, eps, sizes, inside })
}

/// Subcritical preset with `λ ≈ −0.2`, `a = 0`, `c = 0.5`, `β = γ = 0` at K = 1e5.
pub fn strong_mutation_preset() -> BbpiParams {
    BbpiParams {
        b1: 1.0,
        b2: 0.0,
        d1: 1.0,
        d2: 0.4,
        sigma1: 0.5,
        sigma2: 0.5,
        a: 0.0,
        c: 0.5,
        beta: 0.0,
        gamma: 0.0,
        k: 1e5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> BbpiParams {
        BbpiParams {
            b1: 2.0,
            b2: 0.3,
            d1: 1.0,
            d2: 0.5,
            sigma1: 0.6,
            sigma2: 0.8,
            a: 0.2,
            c: 0.0,
            beta: 1.0,
            gamma: 1.0,
            k: 10.0,
        }
    }

    #[test]
    fn eigenvalues_ordered() {
        let p = base();
        let (l, lt) = (p.lambda(), p.lambda_tilde());
        assert!(l > lt);
        assert!((l + lt - p.r1() - p.r2()).abs() < 1e-14);
        assert!((l - lt - p.discriminant()).abs() < 1e-13);
    }

    #[test]
    fn mean_at_zero_is_start() {
        let p = base();
        let (x, y) = bbpi_mean(&p, 0.0);
        assert!((x - 9.0).abs() < 1e-12 && (y - 9.0).abs() < 1e-12);
    }

    #[test]
    fn mean_without_immigration_grows_like_lambda() {
        let p = BbpiParams { c: f64::NEG_INFINITY, ..base() };
        let m1 = bbpi_mean_from(&p, (1.0, 1.0), 30.0);
        let m2 = bbpi_mean_from(&p, (1.0, 1.0), 31.0);
        let rate = ((m2.0 + m2.1) / (m1.0 + m1.1)).ln();
        assert!((rate - p.lambda()).abs() < 1e-9);
    }

    #[test]
    fn resonant_mean_matches_rk4() {
        let mut p = base();
        p.a = p.lambda();
        let start = p.mean_start();
        for t in [0.5, 3.0, 8.0] {
            let c = bbpi_mean_from(&p, start, t);
            let r = bbpi_mean_rk4(&p, start, t, 20_000);
            assert!(((c.0 - r.0) / r.0).abs() < 1e-10 && ((c.1 - r.1) / r.1).abs() < 1e-10);
        }
    }

    #[test]
    fn second_moments_vanish_at_zero() {
        let m = bbpi_second_moments(&base(), 0.0).unwrap();
        assert_eq!((m.var_x, m.var_y, m.cov), (0.0, 0.0, 0.0));
    }

    #[test]
    fn immigration_only_variance_is_poisson() {
        // No individuals act: X counts immigrants, a Poisson variable.
        let p = BbpiParams { b1: 0.0, d1: 0.0, sigma1: 1e-9, sigma2: 1e-9, beta: 0.0, gamma: 0.0, b2: 0.0, d2: 0.0, a: 0.3, c: 0.5, k: 100.0 };
        let m = bbpi_second_moments(&p, 2.0).unwrap();
        let mean = bbpi_mean(&p, 2.0).0;
        assert!((m.var_x - mean).abs() < 1e-6 * mean);
    }

    #[test]
    fn limit_beta_cases() {
        let mut p = base();
        p.k = 1e6;
        // (iii): zero function.
        p.beta = 0.0;
        p.gamma = 0.0;
        p.c = -0.5;
        p.a = -0.1;
        let f = bbpi_limit_beta(&p, 5.0).unwrap();
        assert_eq!(f.max_value(), 0.0);
        assert_eq!(f.min_value(), 0.0);
        // (ii): starts at |c|/a with slope λ∨a.
        p.a = 0.25;
        let f = bbpi_limit_beta(&p, 5.0).unwrap();
        let s = p.lambda().max(p.a);
        assert!(f.eval(1.9) == 0.0);
        assert!((f.eval(4.0) - s * (4.0 - 2.0)).abs() < 1e-14);
        // (i) with a kink: 1 + λt meets 0.2.
        let q = BbpiParams { b1: 0.1, d1: 1.0, b2: 0.0, d2: 0.5, sigma1: 0.3, sigma2: 0.3, a: 0.0, c: 0.2, beta: 1.0, gamma: 0.5, k: 1e6 };
        let l = q.lambda();
        assert!(l < 0.0);
        let f = bbpi_limit_beta(&q, 10.0).unwrap();
        let kink = 0.8 / -l;
        assert!(f.breakpoints.iter().any(|&b| (b - kink).abs() < 1e-12));
        assert!((f.eval(kink + 1.0) - 0.2).abs() < 1e-14);
        assert_eq!(f.eval(0.0), 1.0);
    }

    #[test]
    fn limit_beta_hypotheses() {
        let p = BbpiParams { c: 2.0, ..base() };
        assert!(matches!(bbpi_limit_beta(&p, 1.0), Err(BranchingError::Hypothesis(_))));
        let p = BbpiParams { beta: 0.0, gamma: 0.0, c: 0.3, ..base() };
        assert!(matches!(bbpi_limit_beta(&p, 1.0), Err(BranchingError::Hypothesis(_))));
        let p = BbpiParams { beta: 0.0, gamma: 0.0, c: f64::NEG_INFINITY, ..base() };
        assert_eq!(bbpi_limit_beta(&p, 1.0).unwrap().max_value(), 0.0);
    }

    #[test]
    fn one_dimensional_variant_uses_b_minus_d() {
        let f = bpi_limit_beta(1.0, 1.5, 0.0, 0.1, 0.6, 4.0).unwrap();
        assert!((f.eval(0.5) - 0.35).abs() < 1e-14);
        assert!((f.eval(3.0) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn zero_start_without_immigration_stays_zero() {
        let p = BbpiParams { beta: 0.0, gamma: 0.0, c: f64::NEG_INFINITY, ..base() };
        let path = bbpi_simulate(&p, &[1.0, 2.0, 3.0], 7, 1000).unwrap();
        assert_eq!(path.events, 0);
        assert!(path.x.iter().chain(&path.y).all(|&v| v == 0));
        assert_eq!(path.x.len(), 3);
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let p = base();
        let a = bbpi_simulate(&p, &[0.5, 1.0], 11, 1_000_000).unwrap();
        let b = bbpi_simulate(&p, &[0.5, 1.0], 11, 1_000_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hazard_inversion_is_exact() {
        for &(r0, q, a, e) in &[(1.0, 2.0, 0.5, 0.7), (0.0, 3.0, -0.4, 1.5), (2.0, 0.5, 1.3, 4.0)] {
            let tau = invert_hazard(r0, q, a, e, 100.0).unwrap();
            let val = r0 * tau + q * (a * tau).exp_m1() / a;
            assert!((val - e).abs() < 1e-12 * (1.0 + e));
        }
        // Decaying immigration with no other events can run out of hazard.
        assert_eq!(invert_hazard(0.0, 1.0, -1.0, 2.0, 1e6), None);
    }

    #[test]
    fn strong_mutation_preset_is_subcritical() {
        let p = strong_mutation_preset();
        assert!((p.lambda() + 0.2).abs() < 0.05, "{}", p.lambda());
    }

    proptest! {
        #[test]
        fn closed_form_mean_matches_rk4(
            b1 in 0.0f64..3.0, b2 in 0.0f64..1.0, d1 in 0.0f64..2.0, d2 in 0.0f64..2.0,
            s1 in 0.05f64..2.0, s2 in 0.05f64..2.0, a in -1.0f64..1.0, c in -1.0f64..1.0,
            beta in 0.0f64..1.0, gamma in 0.0f64..1.0,
        ) {
            let p = BbpiParams { b1, b2, d1, d2, sigma1: s1, sigma2: s2, a, c, beta, gamma, k: 100.0 };
            let start = p.mean_start();
            let c_ = bbpi_mean_from(&p, start, 3.0);
            let r = bbpi_mean_rk4(&p, start, 3.0, 6000);
            let scale = r.0.abs().max(r.1.abs()).max(1e-300);
            prop_assert!((c_.0 - r.0).abs() / scale < 1e-9 && (c_.1 - r.1).abs() / scale < 1e-9);
        }

        #[test]
        fn limit_beta_is_nonnegative_and_continuous(
            l_b in 0.0f64..3.0, d in 0.0f64..3.0, a in -1.0f64..1.0, c in -2.0f64..0.0,
            beta in 0.0f64..1.0,
        ) {
            let p = BbpiParams { b1: l_b, d1: d, b2: 0.2, d2: 0.3, sigma1: 0.4, sigma2: 0.6, a, c: c.min(beta), beta, gamma: 0.0, k: 1e6 };
            if let Ok(f) = bbpi_limit_beta(&p, 6.0) {
                prop_assert!(f.min_value() >= 0.0);
                if beta > 0.0 {
                    prop_assert!((f.eval(0.0) - beta).abs() < 1e-14);
                }
                for w in f.breakpoints.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let direct = ((beta + p.lambda() * mid).max(c.min(beta) + a * mid)).max(0.0);
                    if beta > 0.0 {
                        prop_assert!((f.eval(mid) - direct).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
