//! CSV rows, run manifests and SVG charts.

use crate::config::{Scenario, MANIFEST_KEY};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[serde(rename = "beta_limit")]
    BetaLimit,
    #[serde(rename = "beta_K")]
    BetaK,
    #[serde(rename = "gamma_K")]
    GammaK,
    Active,
    Dormant,
}

impl Kind {
    /// Exponent kinds carry values in `[0, 1]` up to finite-K overshoot.
    pub fn is_exponent(self) -> bool {
        matches!(self, Kind::BetaLimit | Kind::BetaK | Kind::GammaK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: f64,
    pub m: usize,
    pub n: usize,
    pub kind: Kind,
    pub value: f64,
}

pub fn write_csv(path: &Path, rows: &[Row]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["t", "m", "n", "kind", "value"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub termination: String,
    pub outputs: Vec<String>,
    /// Command-specific results (fitness values, accumulation data, ...).
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, scenario: &Scenario) -> Self {
        Manifest {
            manifest_version: 1,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: adl_core::VERSION.to_string(),
            scenario: scenario.clone(),
            seeds: scenario.seeds.clone(),
            termination: String::new(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        debug_assert_eq!(MANIFEST_KEY, "manifest_version");
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 220.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 96.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 36.0;
const COLOURS: [&str; 8] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6c4f9c", "#00798c", "#8d6a4f", "#444444"];

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// One chart per m-row, one polyline per n. Only rows of `kind` are drawn.
/// Output depends only on the rows, so regenerating from the same data is byte-identical.
pub fn render_svg(rows: &[Row], kind: Kind, title: &str) -> String {
    let mut series: BTreeMap<usize, BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kind == kind) {
        series.entry(r.m).or_default().entry(r.n).or_default().push((r.t, r.value));
    }
    let (t0, t1) = rows
        .iter()
        .filter(|r| r.kind == kind)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.t), b.max(r.t)));
    let (t0, t1) = if t0.is_finite() && t1 > t0 { (t0, t1) } else { (0.0, 1.0) };
    let vmax = rows
        .iter()
        .filter(|r| r.kind == kind)
        .fold(0.0f64, |a, r| a.max(r.value));
    let (v0, v1) = if kind.is_exponent() { (0.0, vmax.max(1.0)) } else { (0.0, if vmax > 0.0 { vmax } else { 1.0 }) };
    let total_h = CHART_H * series.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        num(CHART_W),
        num(total_h),
        num(CHART_W),
        num(total_h)
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let pw = CHART_W - MARGIN_L - MARGIN_R;
    let ph = CHART_H - MARGIN_T - MARGIN_B;
    for (row_i, (m, lines)) in series.iter().enumerate() {
        let oy = row_i as f64 * CHART_H;
        let x = |t: f64| MARGIN_L + (t - t0) / (t1 - t0) * pw;
        let y = |v: f64| oy + MARGIN_T + (1.0 - (v - v0) / (v1 - v0)) * ph;
        let _ = writeln!(out, r#"<g id="m{m}">"#);
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="grey"/>"#,
            num(MARGIN_L),
            num(oy + MARGIN_T),
            num(pw),
            num(ph)
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">m = {m}</text>"#, num(MARGIN_L), num(oy + MARGIN_T - 8.0));
        for i in 0..=4 {
            let v = v0 + (v1 - v0) * i as f64 / 4.0;
            let t = t0 + (t1 - t0) * i as f64 / 4.0;
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, num(MARGIN_L - 4.0), num(y(v) + 4.0), num(v));
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                num(x(t)),
                num(oy + CHART_H - MARGIN_B + 14.0),
                num(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">t (log K units)</text>"#,
            num(MARGIN_L + pw / 2.0),
            num(oy + CHART_H - 6.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
            num(oy + MARGIN_T + ph / 2.0),
            num(oy + MARGIN_T + ph / 2.0),
            kind_label(kind)
        );
        for (j, (n, pts)) in lines.iter().enumerate() {
            let colour = COLOURS[j % COLOURS.len()];
            let mut d = String::new();
            for (k, (t, v)) in pts.iter().enumerate() {
                if k > 0 {
                    d.push(' ');
                }
                d.push_str(&num(x(*t)));
                d.push(',');
                d.push_str(&num(y(*v)));
            }
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{d}"/>"#);
            let ly = oy + MARGIN_T + 12.0 + 14.0 * j as f64;
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{colour}">n = {n}</text>"#,
                num(CHART_W - MARGIN_R + 8.0),
                num(ly)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

fn kind_label(kind: Kind) -> &'static str {
    match kind {
        Kind::BetaLimit => "beta (limit)",
        Kind::BetaK => "beta_K",
        Kind::GammaK => "gamma_K",
        Kind::Active => "active",
        Kind::Dormant => "dormant",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<Row> {
        let mut rows = Vec::new();
        for i in 0..5 {
            let t = i as f64 * 0.1 + 1.0 / 3.0;
            for (m, n) in [(0, 0), (0, 1), (1, 0)] {
                rows.push(Row { t, m, n, kind: Kind::BetaLimit, value: (t * (m + 2 * n + 1) as f64).sin().abs() });
            }
        }
        rows
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut rows = sample_rows();
        rows.push(Row { t: 0.1 + 0.2, m: 2, n: 0, kind: Kind::GammaK, value: 1e-300 });
        rows.push(Row { t: 5.0, m: 0, n: 0, kind: Kind::Dormant, value: 123456.789e10 });
        write_csv(&path, &rows).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!((a.m, a.n, a.kind), (b.m, b.n, b.kind));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,m,n,kind,value\n"));
        assert!(text.contains(",gamma_K,") && text.contains(",dormant,"));
    }

    #[test]
    fn empty_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "t,m,n,kind,value\n");
    }

    #[test]
    fn svg_is_deterministic_with_one_chart_per_row() {
        let rows = sample_rows();
        let a = render_svg(&rows, Kind::BetaLimit, "demo");
        let b = render_svg(&rows, Kind::BetaLimit, "demo");
        assert_eq!(a, b);
        assert_eq!(a.matches("<g id=\"m").count(), 2);
        assert_eq!(a.matches("<polyline").count(), 3);
        assert!(a.contains("t (log K units)"));
    }
}
