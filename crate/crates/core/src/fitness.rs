//! Resident equilibria and invasion fitness.

use crate::model::{ModelParams, TraitGrid, TraitIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that distinct traits have nonzero mutual fitness.
pub const NONZERO_FITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("fitness against unfit resident {0} is undefined in resident-relative mode")]
    UnfitResident(TraitIndex),
    #[error("S({invader}, {resident}) = {value:e} vanishes within tolerance")]
    ZeroFitness { invader: TraitIndex, resident: TraitIndex, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessMode {
    ResidentRelative,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessCase {
    OneType,
    BiType,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub z_a: f64,
    pub z_d: f64,
}

/// Net growth capacity `3 - (x+y)/2` of a trait.
pub fn capacity(t: TraitIndex, params: &ModelParams) -> f64 {
    3.0 - (params.x(t) + params.y(t)) / 2.0
}

pub fn is_fit(t: TraitIndex, params: &ModelParams) -> bool {
    capacity(t, params) > 0.0
}

pub fn equilibrium(t: TraitIndex, params: &ModelParams) -> Equilibrium {
    let g = capacity(t, params);
    if g <= 0.0 {
        return Equilibrium { z_a: 0.0, z_d: 0.0 };
    }
    let ks = params.kappa + params.sigma;
    let px = params.p * params.x(t);
    let den = params.kappa + (1.0 - px) * params.sigma;
    Equilibrium {
        z_a: g * ks / (params.c * den),
        z_d: px * g * g * ks / (params.c * den * den),
    }
}

/// Right-hand side of the single-trait resident ODE.
pub fn resident_pair_rhs(z_a: f64, z_d: f64, t: TraitIndex, params: &ModelParams) -> (f64, f64) {
    let g = capacity(t, params);
    let da = (g - params.c * z_a) * z_a + params.sigma * z_d;
    let dd = params.c * params.p * params.x(t) * z_a * z_a - (params.kappa + params.sigma) * z_d;
    (da, dd)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Direction of transfer between two traits: +1 if the invader has larger y.
pub fn transfer_sign(invader: TraitIndex, resident: TraitIndex) -> f64 {
    sign(invader.n as f64 - resident.n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessSpec {
    pub r1: f64,
    pub r2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mode: FitnessMode,
    pub case: FitnessCase,
}

impl FitnessSpec {
    /// Growth rate described by this value.
    pub fn growth_rate(&self) -> f64 {
        match (self.case, self.mode) {
            (FitnessCase::OneType, _) => self.r1,
            (FitnessCase::BiType, FitnessMode::Extended) => self.r1.max(self.r2),
            (FitnessCase::BiType, FitnessMode::ResidentRelative) => dominant_eigenvalue(
                self.r1,
                self.r2,
                self.sigma1,
                self.sigma2,
            ),
        }
    }
}

/// Largest eigenvalue of `[[r1, s2], [s1, r2]]` with `s1·s2 ≥ 0`.
pub fn dominant_eigenvalue(r1: f64, r2: f64, s1: f64, s2: f64) -> f64 {
    let disc = ((r1 - r2) * (r1 - r2) + 4.0 * s1 * s2).sqrt();
    // Cancellation-free form of (r1 + r2 + disc)/2 when the sum is negative.
    let sum = r1 + r2;
    if sum >= 0.0 {
        (sum + disc) / 2.0
    } else {
        let det = r1 * r2 - s1 * s2;
        2.0 * det / (sum - disc)
    }
}

pub fn fitness_spec(
    invader: TraitIndex,
    resident: TraitIndex,
    params: &ModelParams,
    mode: FitnessMode,
) -> Result<FitnessSpec, FitnessError> {
    let ks = params.kappa + params.sigma;
    let xi = params.x(invader);
    let own = 3.0 - (xi + params.y(invader)) / 2.0;
    let transfer = params.tau * transfer_sign(invader, resident);
    let case = if invader.m == 0 { FitnessCase::OneType } else { FitnessCase::BiType };
    match mode {
        FitnessMode::Extended => Ok(FitnessSpec {
            r1: own + transfer,
            r2: -ks,
            sigma1: 0.0,
            sigma2: params.sigma,
            mode,
            case,
        }),
        FitnessMode::ResidentRelative => {
            let g = capacity(resident, params);
            if g <= 0.0 {
                return Err(FitnessError::UnfitResident(resident));
            }
            let px = params.p * params.x(resident);
            let load = g * ks / (params.kappa + (1.0 - px) * params.sigma);
            Ok(FitnessSpec {
                r1: own - load + transfer,
                r2: -ks,
                sigma1: params.p * xi * load,
                sigma2: params.sigma,
                mode,
                case,
            })
        }
    }
}

pub fn invasion_fitness(
    invader: TraitIndex,
    resident: TraitIndex,
    params: &ModelParams,
    mode: FitnessMode,
) -> Result<f64, FitnessError> {
    if invader == resident && mode == FitnessMode::ResidentRelative {
        // Exact neutrality; the closed form reproduces it only to rounding.
        if !is_fit(resident, params) {
            return Err(FitnessError::UnfitResident(resident));
        }
        return Ok(0.0);
    }
    Ok(fitness_spec(invader, resident, params, mode)?.growth_rate())
}

/// Ordered-pair fitness table indexed `[invader][resident]` in grid order.
/// Entries with an unfit resident are `None` in resident-relative mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessMatrix {
    pub grid: TraitGrid,
    pub mode: FitnessMode,
    pub entries: Vec<Vec<Option<f64>>>,
}

impl FitnessMatrix {
    pub fn get(&self, invader: TraitIndex, resident: TraitIndex) -> Option<f64> {
        self.entries[self.grid.index(invader)][self.grid.index(resident)]
    }
}

pub fn fitness_matrix(params: &ModelParams, mode: FitnessMode) -> FitnessMatrix {
    let grid = params.grid();
    let traits: Vec<TraitIndex> = grid.traits().collect();
    let entries = traits
        .iter()
        .map(|&inv| traits.iter().map(|&res| invasion_fitness(inv, res, params, mode).ok()).collect())
        .collect();
    FitnessMatrix { grid, mode, entries }
}

/// Every distinct pair with a fit resident must have `|S| > 1e-9`.
pub fn check_nonzero_fitness(params: &ModelParams) -> Result<(), FitnessError> {
    let grid = params.grid();
    for res in grid.traits().filter(|&t| is_fit(t, params)) {
        for inv in grid.traits().filter(|&t| t != res) {
            let s = invasion_fitness(inv, res, params, FitnessMode::ResidentRelative)?;
            if s.abs() <= NONZERO_FITNESS_TOL {
                return Err(FitnessError::ZeroFitness { invader: inv, resident: res, value: s });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    fn ex21() -> ModelParams {
        ModelParams { delta: 0.9, c: 1.0, p: 0.23, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None }
    }

    fn ex3(p: f64) -> ModelParams {
        ModelParams { delta: 1.51, c: 1.0, p, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None }
    }

    fn t(m: usize, n: usize) -> TraitIndex {
        TraitIndex::new(m, n)
    }

    #[test]
    fn equilibrium_examples() {
        let p = ex3(0.22);
        let e = equilibrium(t(0, 0), &p);
        assert_eq!((e.z_a, e.z_d), (3.0, 0.0));
        let e = equilibrium(t(1, 1), &p);
        let den = 1.0 - 0.22 * 1.51;
        assert!((e.z_a - 1.49 / den).abs() < 1e-12);
        assert!((e.z_d - 0.22 * 1.51 * 1.49 * 1.49 / (den * den)).abs() < 1e-12);
        let e = equilibrium(t(2, 2), &p);
        assert_eq!((e.z_a, e.z_d), (0.0, 0.0));
    }

    #[test]
    fn equilibrium_is_rest_point() {
        let p = ex3(0.22);
        for tr in p.grid().traits().filter(|&x| is_fit(x, &p)) {
            let e = equilibrium(tr, &p);
            let (a, d) = resident_pair_rhs(e.z_a, e.z_d, tr, &p);
            assert!(a.abs() < 1e-12 && d.abs() < 1e-12);
        }
    }

    #[test]
    fn example_2_1_values() {
        let p = ex21();
        let a = invasion_fitness(t(2, 4), t(0, 2), &p, FitnessMode::ResidentRelative).unwrap();
        let b = invasion_fitness(t(0, 2), t(2, 4), &p, FitnessMode::ResidentRelative).unwrap();
        assert!((a - 0.22).abs() < 0.005, "{a}");
        assert!((b - 0.29).abs() < 0.005, "{b}");
    }

    #[test]
    fn example_3_2_closed_form() {
        let p = ex3(0.22);
        let (d, tau, s): (f64, f64, f64) = (1.51, 1.3, 1.0);
        let expect = (-d + tau - s + ((tau - d + s).powi(2) + 12.0 * 0.22 * d).sqrt()) / 2.0;
        let got = invasion_fitness(t(1, 1), t(0, 0), &p, FitnessMode::ResidentRelative).unwrap();
        assert!((got - expect).abs() < 1e-12);
        let rev = invasion_fitness(t(0, 0), t(1, 1), &p, FitnessMode::ResidentRelative).unwrap();
        assert!((got + rev).abs() > 1e-3);
    }

    #[test]
    fn unfit_resident_undefined() {
        let p = ex3(0.22);
        assert_eq!(
            invasion_fitness(t(0, 0), t(2, 2), &p, FitnessMode::ResidentRelative),
            Err(FitnessError::UnfitResident(t(2, 2)))
        );
        let m = fitness_matrix(&p, FitnessMode::ResidentRelative);
        assert_eq!(m.get(t(0, 0), t(2, 2)), None);
        assert_eq!(m.get(t(1, 1), t(1, 1)), Some(0.0));
    }

    #[test]
    fn extended_floor() {
        let mut p = ex3(0.22);
        p.delta = 1.92;
        let s = invasion_fitness(t(2, 1), t(2, 2), &p, FitnessMode::Extended).unwrap();
        assert_eq!(s, -(p.kappa + p.sigma));
        let p = ex3(0.22);
        let s = invasion_fitness(t(0, 2), t(2, 2), &p, FitnessMode::Extended).unwrap();
        assert!((s - (3.0 - 1.51)).abs() < 1e-12);
    }

    #[test]
    fn radical_matches_eigensolve() {
        let p = ex3(0.23);
        for inv in p.grid().traits().filter(|x| x.m > 0) {
            for res in p.grid().traits().filter(|&x| is_fit(x, &p)) {
                let f = fitness_spec(inv, res, &p, FitnessMode::ResidentRelative).unwrap();
                let m = Matrix2::new(f.r1, f.sigma1, f.sigma2, f.r2);
                let ev = m.complex_eigenvalues();
                let top = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                assert!((top - f.growth_rate()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dormancy_can_raise_fitness() {
        // The dormant compartment shelters individuals from competition, so a larger x
        // can outweigh the birth-rate cost: S is not monotone in the invader's x.
        let p = ex3(0.22);
        let a = invasion_fitness(t(1, 1), t(2, 0), &p, FitnessMode::ResidentRelative).unwrap();
        let b = invasion_fitness(t(2, 1), t(2, 0), &p, FitnessMode::ResidentRelative).unwrap();
        assert!(b > a, "{a} {b}");
    }

    #[test]
    fn presets_have_nonzero_fitness() {
        for p in [0.21, 0.22, 0.23, 0.234, 0.24] {
            check_nonzero_fitness(&ex3(p)).unwrap();
        }
    }
}
