//! Deterministic competition between a resident `X` (active/dormant) and an invader `Y`.
//!
//! `Y` is bi-type in the four-dimensional system and single-type in the three-dimensional
//! ones. The transfer term `τ x_a y_a/(x_a + y_a)` moves mass towards the HGT donor, chosen
//! by [`Direction`]. The six invasion propositions are encoded in [`Proposition`].

use crate::threads::with_pool;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Transfer fraction is zero below this total active density.
pub const TRANSFER_FLOOR: f64 = 1e-300;
/// Residual for grid points sent to Newton.
pub const PREFILTER: f64 = 1e-3;
/// Residual at which Newton declares convergence.
pub const NEWTON_TOL: f64 = 1e-12;
/// Time limit for [`competition_time`].
pub const COMPETITION_HORIZON: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompetitionError {
    #[error("invalid parameter {0}: {1}")]
    Param(&'static str, String),
    #[error("state dimension {got} does not match system ({want})")]
    Dimension { got: usize, want: usize },
    #[error("non-finite derivative")]
    NonFinite,
    #[error("no convergence by t = {0}")]
    NoConvergence(f64),
    #[error("proposition hypotheses do not hold: {0}")]
    Hypotheses(&'static str),
}

/// Which population gains from transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `Y` is the donor and gains converted `X` actives.
    InvaderDonates,
    /// `X` is the donor and gains converted `Y` actives.
    InvaderReceives,
    None,
}

impl Direction {
    /// Sign of the transfer term in the `Y` equation.
    pub fn sign(self) -> f64 {
        match self {
            Direction::InvaderDonates => 1.0,
            Direction::InvaderReceives => -1.0,
            Direction::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    /// `(x_a, x_d, y_a, y_d)`.
    FourD,
    /// `(x_a, x_d, y)` with a single-type `Y`.
    ThreeD,
}

impl System {
    pub fn dim(self) -> usize {
        match self {
            System::FourD => 4,
            System::ThreeD => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitionParams {
    /// Active birth rate of `X`.
    pub a1: f64,
    /// Active birth rate of `Y`.
    pub b1: f64,
    pub d1: f64,
    pub d2: f64,
    pub sigma2: f64,
    /// Dormancy fraction of `X`.
    pub p: f64,
    /// Dormancy fraction of `Y` (ignored in the three-dimensional system).
    pub q: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub tau: f64,
    pub direction: Direction,
}

impl CompetitionParams {
    pub fn validate(&self) -> Result<(), CompetitionError> {
        let fields = [
            ("a1", self.a1),
            ("b1", self.b1),
            ("d1", self.d1),
            ("d2", self.d2),
            ("tau", self.tau),
        ];
        for (n, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CompetitionError::Param(n, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        for (n, v) in [("sigma2", self.sigma2), ("C", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CompetitionError::Param(n, format!("must be > 0, got {v}")));
            }
        }
        for (n, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..1.0).contains(&v) {
                return Err(CompetitionError::Param(n, format!("must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Positive equilibrium of the single bi-type logistic system; `subcritical` when
/// `b1 ≤ d1`, in which case the equilibrium is `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticEquilibrium {
    pub active: f64,
    pub dormant: f64,
    pub subcritical: bool,
}

pub fn logistic_equilibrium(b1: f64, d1: f64, d2: f64, sigma2: f64, p: f64, c: f64) -> LogisticEquilibrium {
    if b1 <= d1 {
        return LogisticEquilibrium { active: 0.0, dormant: 0.0, subcritical: true };
    }
    let g = b1 - d1;
    let den = d2 + (1.0 - p) * sigma2;
    LogisticEquilibrium {
        active: g * (d2 + sigma2) / (c * den),
        dormant: p * g * g * (d2 + sigma2) / (c * den * den),
        subcritical: false,
    }
}

/// Right-hand side of the single bi-type logistic system.
pub fn logistic_rhs(x: f64, y: f64, b1: f64, d1: f64, d2: f64, sigma2: f64, p: f64, c: f64) -> (f64, f64) {
    ((b1 - d1) * x - c * x * x + sigma2 * y, -(d2 + sigma2) * y + p * c * x * x)
}

/// Equilibrium of `X` alone, as `(x̄_a, x̄_d)`.
pub fn resident_equilibrium(params: &CompetitionParams) -> LogisticEquilibrium {
    logistic_equilibrium(params.a1, params.d1, params.d2, params.sigma2, params.p, params.c)
}

/// Equilibrium of `Y` alone. Single-type in the three-dimensional system.
pub fn invader_equilibrium(params: &CompetitionParams, system: System) -> LogisticEquilibrium {
    match system {
        System::FourD => logistic_equilibrium(params.b1, params.d1, params.d2, params.sigma2, params.q, params.c),
        System::ThreeD => logistic_equilibrium(params.b1, params.d1, params.d2, params.sigma2, 0.0, params.c),
    }
}

/// The three nonnegative equilibria expected under the invasion hypotheses:
/// zero, `X` alone and `Y` alone.
pub fn boundary_equilibria(params: &CompetitionParams, system: System) -> [Vec<f64>; 3] {
    let x = resident_equilibrium(params);
    let y = invader_equilibrium(params, system);
    match system {
        System::FourD => [vec![0.0; 4], vec![x.active, x.dormant, 0.0, 0.0], vec![0.0, 0.0, y.active, y.dormant]],
        System::ThreeD => [vec![0.0; 3], vec![x.active, x.dormant, 0.0], vec![0.0, 0.0, y.active]],
    }
}

/// Vector field of the competition system.
pub fn competition_rhs(
    state: &[f64],
    params: &CompetitionParams,
    system: System,
) -> Result<Vec<f64>, CompetitionError> {
    if state.len() != system.dim() {
        return Err(CompetitionError::Dimension { got: state.len(), want: system.dim() });
    }
    let (xa, xd, ya) = (state[0], state[1], state[2]);
    let n = xa + ya;
    let transfer = if n.abs() < TRANSFER_FLOOR { 0.0 } else { params.tau * xa * ya / n };
    let s = params.direction.sign();
    let c = params.c;
    let ks = params.d2 + params.sigma2;
    let mut d = vec![
        xa * (params.a1 - params.d1 - c * n) + params.sigma2 * xd - s * transfer,
        params.p * c * xa * n - ks * xd,
        0.0,
    ];
    match system {
        System::FourD => {
            let yd = state[3];
            d[2] = ya * (params.b1 - params.d1 - c * n) + params.sigma2 * yd + s * transfer;
            d.push(params.q * c * ya * n - ks * yd);
        }
        System::ThreeD => {
            d[2] = ya * (params.b1 - params.d1 - c * n) + s * transfer;
        }
    }
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(CompetitionError::NonFinite)
    }
}

/// 2×2 mean matrix `[[r, s_up], [σ2, −d2−σ2]]` of an invader linearised at a resident.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMatrix {
    pub j11: f64,
    pub j12: f64,
    pub j21: f64,
    pub j22: f64,
}

impl MeanMatrix {
    pub fn det(&self) -> f64 {
        self.j11 * self.j22 - self.j12 * self.j21
    }

    pub fn principal_eigenvalue(&self) -> f64 {
        crate::fitness::dominant_eigenvalue(self.j11, self.j22, self.j12, self.j21)
    }

    /// `π_d/π_a` of the left eigenvector for the principal eigenvalue.
    pub fn left_ratio(&self) -> f64 {
        (self.principal_eigenvalue() - self.j11) / self.j21
    }
}

/// Invasion criteria in both directions. `None` matrices mark single-type invaders,
/// whose growth rate is the scalar entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvasionCriteria {
    /// Mean matrix of `Y` invading resident `X`.
    pub y_invading: MeanMatrix,
    /// Mean matrix of `X` invading resident `Y`.
    pub x_invading: MeanMatrix,
    pub y_single_type: bool,
    /// Growth rate of `Y` against resident `X`.
    pub y_growth: f64,
    /// Growth rate of `X` against resident `Y`.
    pub x_growth: f64,
    /// Determinant inequality for `Y` (negative determinant; scalar positivity if
    /// single-type).
    pub y_inequality: bool,
    /// Determinant inequality for `X` being subcritical.
    pub x_inequality: bool,
    pub y_ratio: f64,
    pub x_ratio: f64,
}

impl InvasionCriteria {
    /// `Y` invades and `X` cannot return.
    pub fn positive(&self) -> bool {
        self.y_growth > 0.0 && self.x_growth < 0.0
    }

    /// `X` invades and `Y` cannot return.
    pub fn negative(&self) -> bool {
        self.y_growth < 0.0 && self.x_growth > 0.0
    }
}

pub fn invasion_criteria(params: &CompetitionParams, system: System) -> InvasionCriteria {
    let s = params.direction.sign();
    let x = resident_equilibrium(params);
    let y = invader_equilibrium(params, system);
    let c = params.c;
    let ks = params.d2 + params.sigma2;
    let q = if system == System::ThreeD { 0.0 } else { params.q };
    let yj = MeanMatrix {
        j11: params.b1 + s * params.tau - params.d1 - c * x.active,
        j12: q * c * x.active,
        j21: params.sigma2,
        j22: -ks,
    };
    let xj = MeanMatrix {
        j11: params.a1 - s * params.tau - params.d1 - c * y.active,
        j12: params.p * c * y.active,
        j21: params.sigma2,
        j22: -ks,
    };
    let y_single = system == System::ThreeD;
    let y_growth = if y_single { yj.j11 } else { yj.principal_eigenvalue() };
    let y_inequality = if y_single {
        yj.j11 > 0.0
    } else {
        -yj.j11 < params.sigma2 * q * c * x.active / ks
    };
    let x_inequality = -xj.j11 > params.sigma2 * params.p * c * y.active / ks;
    InvasionCriteria {
        y_invading: yj,
        x_invading: xj,
        y_single_type: y_single,
        y_growth,
        x_growth: xj.principal_eigenvalue(),
        y_inequality,
        x_inequality,
        y_ratio: if y_single { 0.0 } else { yj.left_ratio() },
        x_ratio: xj.left_ratio(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposition {
    FourDPositive,
    FourDNegative,
    ThreeDPositive,
    ThreeDNegative,
    ThreeDPositiveInverted,
    ThreeDNegativeInverted,
}

impl Proposition {
    pub const ALL: [Proposition; 6] = [
        Proposition::FourDPositive,
        Proposition::FourDNegative,
        Proposition::ThreeDPositive,
        Proposition::ThreeDNegative,
        Proposition::ThreeDPositiveInverted,
        Proposition::ThreeDNegativeInverted,
    ];

    pub fn system(self) -> System {
        match self {
            Proposition::FourDPositive | Proposition::FourDNegative => System::FourD,
            _ => System::ThreeD,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Proposition::ThreeDPositiveInverted | Proposition::ThreeDNegativeInverted => Direction::InvaderReceives,
            _ => Direction::InvaderDonates,
        }
    }

    /// The population that starts small.
    pub fn invader_is_y(self) -> bool {
        matches!(
            self,
            Proposition::FourDPositive | Proposition::ThreeDPositive | Proposition::ThreeDPositiveInverted
        )
    }

    pub fn hypotheses_hold(self, params: &CompetitionParams) -> bool {
        let cr = invasion_criteria(params, self.system());
        if self.invader_is_y() {
            cr.positive()
        } else {
            cr.negative()
        }
    }
}

/// Outcome of the growth-condition test. `boundary` marks a zero invader active
/// density, where the ratio is undefined and the condition is reported false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub holds: bool,
    pub boundary: bool,
}

/// Two-sided bound on the invader's dormant/active ratio. Only bi-type invaders have one.
pub fn growth_condition(
    state: &[f64],
    params: &CompetitionParams,
    system: System,
    invader_is_y: bool,
) -> Result<GrowthCheck, CompetitionError> {
    if state.len() != system.dim() {
        return Err(CompetitionError::Dimension { got: state.len(), want: system.dim() });
    }
    let s = params.direction.sign();
    let (xa, xd, ya) = (state[0], state[1], state[2]);
    let n = xa + ya;
    let ks = params.d2 + params.sigma2;
    let c = params.c;
    let (act, dor, frac_coef, birth, dorm) = if invader_is_y {
        if system == System::ThreeD {
            return Err(CompetitionError::Hypotheses("single-type invader has no growth condition"));
        }
        (ya, state[3], -s * params.tau * xa, params.b1, params.q)
    } else {
        (xa, xd, s * params.tau * ya, params.a1, params.p)
    };
    if act <= 0.0 || n <= 0.0 {
        return Ok(GrowthCheck { holds: false, boundary: true });
    }
    let ratio = dor / act;
    let upper = dorm * c * n / ks;
    let lower = (params.d1 - birth + c * n + frac_coef / n) / params.sigma2;
    Ok(GrowthCheck { holds: upper > ratio && ratio > lower, boundary: false })
}

/// Resident at its equilibrium and invader of total size `m·eps` split by the left
/// eigenvector of its mean matrix.
pub fn invasion_start(params: &CompetitionParams, prop: Proposition, eps: f64, m: f64) -> Vec<f64> {
    let system = prop.system();
    let cr = invasion_criteria(params, system);
    let size = m * eps;
    let split = |ratio: f64| (size / (1.0 + ratio), size * ratio / (1.0 + ratio));
    if prop.invader_is_y() {
        let x = resident_equilibrium(params);
        match system {
            System::FourD => {
                let (a, d) = split(cr.y_ratio);
                vec![x.active, x.dormant, a, d]
            }
            System::ThreeD => vec![x.active, x.dormant, size],
        }
    } else {
        let y = invader_equilibrium(params, system);
        let (a, d) = split(cr.x_ratio);
        match system {
            System::FourD => vec![a, d, y.active, y.dormant],
            System::ThreeD => vec![a, d, y.active],
        }
    }
}

pub fn rk4_step(
    state: &[f64],
    params: &CompetitionParams,
    system: System,
    h: f64,
) -> Result<Vec<f64>, CompetitionError> {
    let add = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(x, v)| x + s * v).collect::<Vec<_>>();
    let k1 = competition_rhs(state, params, system)?;
    let k2 = competition_rhs(&add(state, &k1, h / 2.0), params, system)?;
    let k3 = competition_rhs(&add(state, &k2, h / 2.0), params, system)?;
    let k4 = competition_rhs(&add(state, &k3, h), params, system)?;
    Ok((0..state.len()).map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Fixed-step RK4 up to `t_end`.
pub fn integrate(
    state: &[f64],
    params: &CompetitionParams,
    system: System,
    t_end: f64,
    h: f64,
) -> Result<Vec<f64>, CompetitionError> {
    let steps = (t_end / h).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut s = state.to_vec();
    for _ in 0..steps {
        s = rk4_step(&s, params, system, h)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionOutcome {
    pub time: f64,
    pub state: Vec<f64>,
}

/// First time at which the former resident has total density ≤ `eps_prime` and every
/// invader component is within `eps_prime` of the invader equilibrium.
pub fn competition_time(
    params: &CompetitionParams,
    prop: Proposition,
    eps: f64,
    eps_prime: f64,
    m: f64,
) -> Result<CompetitionOutcome, CompetitionError> {
    params.validate()?;
    if !prop.hypotheses_hold(params) {
        return Err(CompetitionError::Hypotheses("invasion criteria of the proposition fail"));
    }
    let system = prop.system();
    let eq = boundary_equilibria(params, system);
    let target = if prop.invader_is_y() { &eq[2] } else { &eq[1] };
    let (res_idx, inv_idx): (Vec<usize>, Vec<usize>) = match (system, prop.invader_is_y()) {
        (System::FourD, true) => (vec![0, 1], vec![2, 3]),
        (System::FourD, false) => (vec![2, 3], vec![0, 1]),
        (System::ThreeD, true) => (vec![0, 1], vec![2]),
        (System::ThreeD, false) => (vec![2], vec![0, 1]),
    };
    let done = |s: &[f64]| {
        res_idx.iter().map(|&i| s[i]).sum::<f64>() <= eps_prime
            && inv_idx.iter().all(|&i| (s[i] - target[i]).abs() <= eps_prime)
    };
    let h = 0.01;
    let mut s = invasion_start(params, prop, eps, m);
    let mut t = 0.0;
    while t < COMPETITION_HORIZON {
        if done(&s) {
            return Ok(CompetitionOutcome { time: t, state: s });
        }
        s = rk4_step(&s, params, system, h)?;
        t += h;
    }
    Err(CompetitionError::NoConvergence(COMPETITION_HORIZON))
}

/// Central-difference Jacobian of the vector field.
pub fn jacobian(state: &[f64], params: &CompetitionParams, system: System) -> Result<DMatrix<f64>, CompetitionError> {
    let n = system.dim();
    let mut j = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-6 * (1.0 + state[k].abs());
        let mut up = state.to_vec();
        let mut dn = state.to_vec();
        up[k] += h;
        dn[k] -= h;
        let fu = competition_rhs(&up, params, system)?;
        let fd = competition_rhs(&dn, params, system)?;
        for i in 0..n {
            j[(i, k)] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Largest real part among the Jacobian eigenvalues.
pub fn spectral_abscissa(state: &[f64], params: &CompetitionParams, system: System) -> Result<f64, CompetitionError> {
    let j = jacobian(state, params, system)?;
    Ok(j.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton. Returns the root if the residual drops below [`NEWTON_TOL`].
pub fn newton(start: &[f64], params: &CompetitionParams, system: System) -> Option<Vec<f64>> {
    let mut x = start.to_vec();
    let mut f = competition_rhs(&x, params, system).ok()?;
    for _ in 0..100 {
        let r = norm(&f);
        if r < NEWTON_TOL {
            return Some(x);
        }
        let j = jacobian(&x, params, system).ok()?;
        let step = j.lu().solve(&DVector::from_column_slice(&f))?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - lambda * b).collect();
            if let Ok(ft) = competition_rhs(&trial, params, system) {
                if norm(&ft) < r || lambda < 1e-8 {
                    x = trial;
                    f = ft;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-8 {
                return None;
            }
        }
    }
    (norm(&f) < NEWTON_TOL).then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootScan {
    /// Distinct nonnegative roots.
    pub roots: Vec<Vec<f64>>,
    /// Every converged nonnegative Newton result, before deduplication.
    pub converged: Vec<Vec<f64>>,
    pub seeds: usize,
}

/// Roots of the vector field in the box `[0, upper]^dim`.
///
/// The box is sampled on `points` per axis. Newton starts from grid points whose residual
/// is below [`PREFILTER`] and from discrete local minima of the residual, which catch
/// roots lying between grid points.
pub fn root_scan(params: &CompetitionParams, system: System, upper: f64, points: usize) -> RootScan {
    let dim = system.dim();
    let total = points.pow(dim as u32);
    let coord = |i: usize| upper * i as f64 / (points - 1) as f64;
    let unflatten = |mut idx: usize| {
        let mut out = vec![0usize; dim];
        for k in (0..dim).rev() {
            out[k] = idx % points;
            idx /= points;
        }
        out
    };
    let residual: Vec<f64> = with_pool(|| {
        (0..total)
            .into_par_iter()
            .map(|idx| {
                let p: Vec<f64> = unflatten(idx).into_iter().map(coord).collect();
                competition_rhs(&p, params, system).map(|f| norm(&f)).unwrap_or(f64::INFINITY)
            })
            .collect()
    });
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
        .map(|mut o| {
            (0..dim)
                .map(|_| {
                    let d = (o % 3) as i64 - 1;
                    o /= 3;
                    d
                })
                .collect()
        })
        .filter(|o: &Vec<i64>| o.iter().any(|&d| d != 0))
        .collect();
    let seeds: Vec<usize> = with_pool(|| {
        (0..total)
            .into_par_iter()
            .filter(|&idx| {
                let r = residual[idx];
                if r < PREFILTER {
                    return true;
                }
                let ix = unflatten(idx);
                offsets.iter().all(|o| {
                    let mut flat = 0usize;
                    for k in 0..dim {
                        let v = ix[k] as i64 + o[k];
                        if v < 0 || v >= points as i64 {
                            return true;
                        }
                        flat = flat * points + v as usize;
                    }
                    residual[flat] > r
                })
            })
            .collect()
    });
    let converged: Vec<Vec<f64>> = with_pool(|| {
        seeds
            .par_iter()
            .filter_map(|&idx| {
                let p: Vec<f64> = unflatten(idx).into_iter().map(coord).collect();
                newton(&p, params, system)
            })
            .filter(|r| r.iter().all(|&v| v >= -1e-9))
            .collect()
    });
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for r in &converged {
        if !roots.iter().any(|q| norm(&q.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-7) {
            roots.push(r.clone());
        }
    }
    RootScan { roots, converged, seeds: seeds.len() }
}
