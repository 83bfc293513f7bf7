mod support;

use adl_core::{run_limit, LimitMode, ModelParams};
use support::grid_scan::GridScan;

fn sup_distance(params: ModelParams, mode: LimitMode, horizon: f64) -> (f64, f64) {
    let tr = run_limit(&params, horizon, mode).unwrap();
    let t_end = tr.end_time.min(horizon);
    let samples: Vec<f64> = (0..10_000).map(|i| t_end * i as f64 / 9_999.0).collect();
    let scan = GridScan::run(params, mode, 1e-5, &samples);
    let mut worst: f64 = 0.0;
    for (k, &s) in samples.iter().enumerate() {
        for (i, f) in tr.betas.iter().enumerate() {
            worst = worst.max((f.eval(s) - scan[k][i]).abs());
        }
    }
    (worst, t_end)
}

#[test]
fn event_engine_matches_grid_scan_on_p021() {
    let p = ModelParams { delta: 1.51, c: 1.0, p: 0.21, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None };
    let (d, _) = sup_distance(p, LimitMode::Standard, 20.0);
    assert!(d < 1e-6, "sup distance {d:e}");
}

#[test]
fn event_engine_matches_grid_scan_on_all_presets() {
    let presets = [
        (1.51, 0.21, LimitMode::Standard),
        (1.51, 0.22, LimitMode::Standard),
        (1.51, 0.23, LimitMode::Standard),
        (1.51, 0.234, LimitMode::Standard),
        (1.51, 0.24, LimitMode::Standard),
        (1.85, 0.248, LimitMode::Extended),
        (1.92, 0.248, LimitMode::Extended),
    ];
    for (delta, p, mode) in presets {
        let params = ModelParams { delta, c: 1.0, p, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None };
        let (d, t_end) = sup_distance(params, mode, 60.0);
        eprintln!("delta {delta} p {p}: sup {d:e} over [0, {t_end}]");
        assert!(d < 1e-6, "delta {delta} p {p}: sup distance {d:e}");
    }
}
