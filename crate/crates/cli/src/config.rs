//! Scenario files and built-in presets.

use adl_core::branching::BbpiParams;
use adl_core::competition::{CompetitionParams, Direction, Proposition};
use adl_core::fitness::check_nonzero_fitness;
use adl_core::{LimitMode, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing params")]
    MissingParams,
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid {field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl ConfigError {
    fn from_json(e: serde_json::Error) -> Self {
        ConfigError::Parse { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

/// BBPI parameters as written in a scenario file. `c: null` means no immigration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbpiSection {
    pub b1: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub a: f64,
    pub c: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

impl BbpiSection {
    pub fn to_params(&self) -> BbpiParams {
        BbpiParams {
            b1: self.b1,
            b2: self.b2,
            d1: self.d1,
            d2: self.d2,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            a: self.a,
            c: self.c.unwrap_or(f64::NEG_INFINITY),
            beta: self.beta,
            gamma: self.gamma,
            k: self.k,
        }
    }

    pub fn from_params(p: &BbpiParams) -> Self {
        BbpiSection {
            b1: p.b1,
            b2: p.b2,
            d1: p.d1,
            d2: p.d2,
            sigma1: p.sigma1,
            sigma2: p.sigma2,
            a: p.a,
            c: p.c.is_finite().then_some(p.c),
            beta: p.beta,
            gamma: p.gamma,
            k: p.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitionSection {
    pub params: CompetitionParams,
    pub proposition: Proposition,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_eps_prime")]
    pub eps_prime: f64,
    #[serde(default = "default_m")]
    pub m: f64,
}

fn default_eps() -> f64 {
    1e-3
}
fn default_eps_prime() -> f64 {
    1e-6
}
fn default_m() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}

/// A fully validated run description. Every output can be regenerated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub params: ModelParams,
    #[serde(default = "default_mode")]
    pub mode: LimitMode,
    #[serde(default)]
    pub clamp: bool,
    #[serde(default = "default_true")]
    pub with_mutation: bool,
    /// Horizon in log K units.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub k: Vec<u64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_one")]
    pub replicates: usize,
    /// Sample points per path.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub svg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbpi: Option<BbpiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub competition: Option<CompetitionSection>,
}

fn default_mode() -> LimitMode {
    LimitMode::Standard
}
fn default_horizon() -> f64 {
    60.0
}
fn default_samples() -> usize {
    601
}

/// Same as [`Scenario`] but with `params` optional so a missing block gets its own error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    params: Option<ModelParams>,
    #[serde(default = "default_mode")]
    mode: LimitMode,
    #[serde(default)]
    clamp: bool,
    #[serde(default = "default_true")]
    with_mutation: bool,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default)]
    k: Vec<u64>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default = "default_one")]
    replicates: usize,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    svg: bool,
    #[serde(default)]
    bbpi: Option<BbpiSection>,
    #[serde(default)]
    competition: Option<CompetitionSection>,
}

/// A manifest may be fed back as a config; only its scenario is used.
#[derive(Deserialize)]
struct ManifestScenario {
    scenario: serde_json::Value,
}

pub const MANIFEST_KEY: &str = "manifest_version";

impl Scenario {
    pub fn from_params(name: &str, params: ModelParams) -> Self {
        Scenario {
            name: name.to_string(),
            params,
            mode: LimitMode::Standard,
            clamp: false,
            with_mutation: true,
            horizon: default_horizon(),
            k: Vec::new(),
            seeds: Vec::new(),
            replicates: 1,
            samples: default_samples(),
            svg: false,
            bbpi: None,
            competition: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params
            .validate()
            .map_err(|e| ConfigError::Invalid { field: format!("params.{}", e.field()), msg: e.to_string() })?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ConfigError::Invalid { field: "horizon".into(), msg: format!("must be > 0, got {}", self.horizon) });
        }
        if let Some(&k) = self.k.iter().find(|&&k| k < 2) {
            return Err(ConfigError::Invalid { field: "k".into(), msg: format!("K ≥ 2 required, got {k}") });
        }
        if self.replicates == 0 {
            return Err(ConfigError::Invalid { field: "replicates".into(), msg: "must be ≥ 1".into() });
        }
        if self.samples < 2 {
            return Err(ConfigError::Invalid { field: "samples".into(), msg: "must be ≥ 2".into() });
        }
        if let Some(b) = &self.bbpi {
            b.to_params()
                .validate()
                .map_err(|e| ConfigError::Invalid { field: "bbpi".into(), msg: e.to_string() })?;
        }
        if let Some(c) = &self.competition {
            c.params
                .validate()
                .map_err(|e| ConfigError::Invalid { field: "competition.params".into(), msg: e.to_string() })?;
        }
        Ok(())
    }

    /// Pre-check required before a limit run: no pair of distinct traits is neutral.
    pub fn check_limit_ready(&self) -> Result<(), ConfigError> {
        check_nonzero_fitness(&self.params)
            .map_err(|e| ConfigError::Invalid { field: "params".into(), msg: e.to_string() })
    }
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    if text.trim().is_empty() {
        return Err(ConfigError::MissingParams);
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(ConfigError::from_json)?;
    let is_manifest = value.get(MANIFEST_KEY).is_some();
    let raw: RawScenario = if is_manifest {
        let m: ManifestScenario = serde_json::from_value(value).map_err(ConfigError::from_json)?;
        serde_json::from_value(m.scenario).map_err(ConfigError::from_json)?
    } else {
        // Re-parse the text so that errors carry line and column.
        serde_json::from_str(text).map_err(ConfigError::from_json)?
    };
    let params = raw.params.ok_or(ConfigError::MissingParams)?;
    let s = Scenario {
        name: raw.name,
        params,
        mode: raw.mode,
        clamp: raw.clamp,
        with_mutation: raw.with_mutation,
        horizon: raw.horizon,
        k: raw.k,
        seeds: raw.seeds,
        replicates: raw.replicates,
        samples: raw.samples,
        svg: raw.svg,
        bbpi: raw.bbpi,
        competition: raw.competition,
    };
    s.validate()?;
    Ok(s)
}

fn section3(p: f64) -> ModelParams {
    ModelParams { delta: 1.51, c: 1.0, p, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None }
}

pub const PRESETS: [&str; 8] = [
    "example-2.1",
    "example-3.1",
    "example-3.2",
    "example-3.3",
    "example-3.4",
    "example-3.5",
    "example-3.6",
    "example-3.7",
];

pub fn preset(name: &str) -> Result<Scenario, ConfigError> {
    let s = match name {
        "example-2.1" => {
            let p = ModelParams { delta: 0.9, c: 1.0, p: 0.23, tau: 1.3, kappa: 0.0, sigma: 1.0, alpha: 0.5, k: None };
            Scenario::from_params(name, p)
        }
        "example-3.1" => Scenario::from_params(name, section3(0.21)),
        "example-3.2" => Scenario::from_params(name, section3(0.22)),
        "example-3.3" => Scenario::from_params(name, section3(0.23)),
        "example-3.4" => Scenario::from_params(name, section3(0.234)),
        "example-3.5" => Scenario::from_params(name, section3(0.24)),
        "example-3.6" | "example-3.7" => {
            let delta = if name == "example-3.6" { 1.85 } else { 1.92 };
            let mut s = Scenario::from_params(name, ModelParams { delta, ..section3(0.248) });
            s.mode = LimitMode::Extended;
            s
        }
        "bbpi-supercritical" => {
            let mut s = Scenario::from_params(name, section3(0.21));
            s.horizon = 2.0;
            s.bbpi = Some(BbpiSection::from_params(&BbpiParams {
                b1: 0.9,
                b2: 0.0,
                d1: 0.5,
                d2: 0.1,
                sigma1: 0.3,
                sigma2: 1.0,
                a: 0.1,
                c: 0.0,
                beta: 0.3,
                gamma: 0.0,
                k: 1e6,
            }));
            s
        }
        "competition-4d" => {
            let mut s = Scenario::from_params(name, section3(0.21));
            s.competition = Some(CompetitionSection {
                params: CompetitionParams {
                    a1: 3.0,
                    b1: 2.6,
                    d1: 1.0,
                    d2: 0.0,
                    sigma2: 1.0,
                    p: 0.2,
                    q: 0.3,
                    c: 1.0,
                    tau: 1.3,
                    direction: Direction::InvaderDonates,
                },
                proposition: Proposition::FourDPositive,
                eps: default_eps(),
                eps_prime: default_eps_prime(),
                m: default_m(),
            });
            s
        }
        _ => return Err(ConfigError::UnknownPreset(name.to_string())),
    };
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_3_2_values() {
        let s = preset("example-3.2").unwrap();
        let p = s.params;
        assert_eq!((p.delta, p.tau, p.kappa, p.sigma, p.alpha, p.p), (1.51, 1.3, 0.0, 1.0, 0.5, 0.22));
        assert_eq!(s.mode, LimitMode::Standard);
        assert_eq!(preset("example-3.7").unwrap().mode, LimitMode::Extended);
    }

    #[test]
    fn every_preset_loads() {
        for name in PRESETS.iter().chain(["bbpi-supercritical", "competition-4d"].iter()) {
            preset(name).unwrap();
        }
        assert!(matches!(preset("example-9.9"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn empty_document_is_missing_params() {
        for text in ["", "  \n", "{}", "{\"name\": \"x\"}"] {
            let e = parse_config(text).unwrap_err();
            assert_eq!(e.to_string(), "missing params", "{text:?}");
        }
    }

    #[test]
    fn p_out_of_range_names_field() {
        let text = r#"{"params": {"delta": 1.51, "C": 1, "p": 0.3, "tau": 1.3, "kappa": 0, "sigma": 1, "alpha": 0.5}}"#;
        let e = parse_config(text).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("p ∈ (0, 1/4)") && msg.contains("params.p"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_fatal_with_position() {
        let text = "{\n  \"params\": {\"delta\": 1.51, \"C\": 1, \"p\": 0.22, \"tau\": 1.3, \"kappa\": 0, \"sigma\": 1, \"alpha\": 0.5},\n  \"colour\": 3\n}";
        match parse_config(text).unwrap_err() {
            ConfigError::Parse { line, column, msg } => {
                assert_eq!(line, 3, "{msg}");
                assert!(column > 0 && msg.contains("colour"));
            }
            e => panic!("{e}"),
        }
        let nested = r#"{"params": {"delta": 1.51, "C": 1, "p": 0.22, "tau": 1.3, "kappa": 0, "sigma": 1, "alpha": 0.5, "beta": 1}}"#;
        assert!(matches!(parse_config(nested), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn malformed_json_reports_position() {
        match parse_config("{\n \"params\": [1,\n}").unwrap_err() {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn scenario_round_trip() {
        let mut s = preset("competition-4d").unwrap();
        s.k = vec![1000, 10000];
        s.seeds = vec![7];
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(parse_config(&text).unwrap(), s);
        let b = preset("bbpi-supercritical").unwrap();
        assert_eq!(parse_config(&serde_json::to_string(&b).unwrap()).unwrap(), b);
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let s = preset("example-3.1").unwrap();
        let doc = serde_json::json!({ MANIFEST_KEY: 1, "command": "limit", "scenario": s });
        assert_eq!(parse_config(&doc.to_string()).unwrap(), s);
    }
}
