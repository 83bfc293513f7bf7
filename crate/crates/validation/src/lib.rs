//! Helpers shared by the acceptance suite: residency sequences and path distances.

use adl_core::{LimitTrajectory, PiecewiseLinear, TraitIndex};

/// A residency change: from `time` on, `resident` holds the largest population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switch {
    pub time: f64,
    pub resident: TraitIndex,
}

/// Index of the largest entry; ties go to the first.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Collapses a sampled resident series into its switches. The first entry is the
/// initial resident at the first sample time.
pub fn switches(times: &[f64], residents: &[TraitIndex]) -> Vec<Switch> {
    let mut out: Vec<Switch> = Vec::new();
    for (&time, &resident) in times.iter().zip(residents) {
        if out.last().map(|s| s.resident) != Some(resident) {
            out.push(Switch { time, resident });
        }
    }
    out
}

/// Switches of the limit trajectory before `until`, keeping only phases of at least
/// `min_duration`. Stops at the first shorter phase, since later phases cannot be
/// resolved by a sampled path either.
pub fn limit_switches(tr: &LimitTrajectory, until: f64, min_duration: f64) -> (Vec<Switch>, f64) {
    let mut out = Vec::new();
    let mut window = until.min(tr.end_time);
    for ph in &tr.phases {
        if ph.start >= window {
            break;
        }
        if ph.end.min(window) - ph.start < min_duration && ph.end < window {
            window = ph.start;
            break;
        }
        out.push(Switch { time: ph.start, resident: ph.resident });
    }
    (out, window)
}

/// Same residents in the same order, and switch times within `tol`.
pub fn compare_switches(reference: &[Switch], other: &[Switch], tol: f64) -> Result<f64, String> {
    let seq = |v: &[Switch]| v.iter().map(|s| s.resident.to_string()).collect::<Vec<_>>().join(" ");
    if let Some(i) = (0..reference.len().max(other.len()))
        .find(|&i| reference.get(i).map(|s| s.resident) != other.get(i).map(|s| s.resident))
    {
        let at = |v: &[Switch]| v.get(i).map_or("none".to_string(), |s| format!("{} at {:.3}", s.resident, s.time));
        let drift = reference.iter().zip(other).take(i).map(|(a, b)| (a.time - b.time).abs()).fold(0.0, f64::max);
        return Err(format!(
            "sequences differ at switch {i} of {}/{}: expected {}, got {}; earlier switch times differ by up to {drift:.3}; expected [{}]",
            reference.len(),
            other.len(),
            at(reference),
            at(other),
            seq(&reference[..reference.len().min(i + 1)])
        ));
    }
    let worst = reference.iter().zip(other).map(|(a, b)| (a.time - b.time).abs()).fold(0.0, f64::max);
    if worst > tol {
        return Err(format!("switch times differ by up to {worst:.3} > {tol}"));
    }
    Ok(worst)
}

/// `max_k |f(t_k) - v_k|` over the samples with `t_k ≤ until`.
pub fn sup_distance(f: &PiecewiseLinear, times: &[f64], values: &[f64], until: f64) -> f64 {
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t <= until)
        .map(|(&t, &v)| (f.eval(t) - v).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(m: usize, n: usize) -> TraitIndex {
        TraitIndex::new(m, n)
    }

    #[test]
    fn switches_collapse_runs() {
        let times = [0.0, 1.0, 2.0, 3.0, 4.0];
        let res = [t(0, 0), t(0, 0), t(0, 1), t(0, 1), t(0, 0)];
        let s = switches(&times, &res);
        assert_eq!(s.len(), 3);
        assert_eq!((s[1].time, s[1].resident), (2.0, t(0, 1)));
    }

    #[test]
    fn comparison_reports_mismatch_and_tolerance() {
        let a = [Switch { time: 0.0, resident: t(0, 0) }, Switch { time: 1.0, resident: t(0, 1) }];
        let b = [Switch { time: 0.0, resident: t(0, 0) }, Switch { time: 1.3, resident: t(0, 1) }];
        assert!((compare_switches(&a, &b, 0.5).unwrap() - 0.3).abs() < 1e-12);
        assert!(compare_switches(&a, &b, 0.2).is_err());
        assert!(compare_switches(&a, &b[..1], 0.5).is_err());
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
