//! `metadata.txt`: `key = value` lines followed by the resolved config.
//!
//! The embedded config has every default filled in and every flag already
//! applied, so passing the file back to `simulate` repeats the run exactly.

use std::fmt::Write as _;

use heatfreq_core::analysis::{DEFAULT_BAND, DEFAULT_HOLD};
use heatfreq_core::solver::SimParams;

use crate::config::{parse_config, ConfigError, ScenarioConfig};

pub const HEADER: &str = "# heatfreq run metadata";
const CONFIG_MARKER: &str = "[config]";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
    pub config_json: Option<String>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Shortest round-tripping form, e.g. `1e-9` or `200.0`.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.push(key, format!("{value:?}"))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn config(&self) -> Option<Result<ScenarioConfig, ConfigError>> {
        self.config_json.as_deref().map(parse_config)
    }

    pub fn push_sim(&mut self, prefix: &str, p: &SimParams) {
        self.push_f64(format!("{prefix}.t_end"), p.t_end)
            .push_f64(format!("{prefix}.dt"), p.dt)
            .push(format!("{prefix}.method"), p.method.as_str())
            .push_f64(format!("{prefix}.rtol"), p.rtol)
            .push_f64(format!("{prefix}.atol"), p.atol)
            .push(format!("{prefix}.sample_every"), p.sample_every)
            .push_f64(format!("{prefix}.steady_eps"), p.steady_eps)
            .push_f64(format!("{prefix}.steady_hold"), p.steady_hold);
    }

    pub fn push_defaults(&mut self) {
        self.push_sim("default.sim", &SimParams::default());
        self.push("default.outputs.decimation", 1)
            .push("default.initial", "equilibrium")
            .push_f64("default.analyze.band", DEFAULT_BAND)
            .push_f64("default.analyze.hold", DEFAULT_HOLD);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(json) = &self.config_json {
            writeln!(s, "{CONFIG_MARKER}").unwrap();
            writeln!(s, "{json}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Option<Self> {
        let body = text.strip_prefix(HEADER)?;
        let (head, json) = match split_config(body) {
            Some((h, j)) => (h, Some(j.trim().to_string())),
            None => (body, None),
        };
        let entries = head
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Some(Self {
            entries,
            config_json: json,
        })
    }
}

fn split_config(body: &str) -> Option<(&str, &str)> {
    let marker = format!("\n{CONFIG_MARKER}\n");
    body.find(&marker).map(|i| (&body[..i], &body[i + marker.len()..]))
}

/// The config JSON inside a metadata file, if `text` is one.
pub fn embedded_config(text: &str) -> Option<&str> {
    let body = text.strip_prefix(HEADER)?;
    split_config(body).map(|(_, j)| j)
}
