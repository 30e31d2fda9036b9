//! Metrics computed from a trajectory CSV.

use std::fmt;
use std::io::Read;

use heatfreq_core::analysis::{max_abs, settling_time};
use heatfreq_core::CombinedSystem;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed CSV: {0}")]
    Format(String),
}

/// A trajectory CSV held column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// `columns[c][row]`; the security flag is read as 0/1.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if headers.first().map(String::as_str) != Some("t") {
            return Err(TableError::Format("first column must be `t`".into()));
        }
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let v = field.trim().parse::<f64>().map_err(|_| {
                    TableError::Format(format!("row {}, column `{}`: not a number: {field:?}", line + 2, headers[c]))
                })?;
                columns[c].push(v);
            }
        }
        if columns[0].is_empty() {
            return Err(TableError::Format("no data rows".into()));
        }
        if columns[0].windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TableError::Format("time column is not strictly increasing".into()));
        }
        Ok(Self { headers, columns })
    }

    pub fn times(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|c| self.columns[c].as_slice())
    }

    /// `(suffix, values)` of every column named `<prefix>_<suffix>`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a [f64])> + 'a {
        self.headers.iter().zip(&self.columns).filter_map(move |(h, c)| {
            h.strip_prefix(prefix)
                .and_then(|s| s.strip_prefix('_'))
                .map(|s| (s, c.as_slice()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settling {
    pub signal: String,
    /// Seconds after the last disturbance; `None` when unsettled.
    pub time: Option<f64>,
    pub final_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    pub signal: String,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Share {
    /// `pG`, or `hG` plus the area id when the system is known.
    pub group: String,
    pub signal: String,
    pub final_value: f64,
    /// Final value relative to the group's first entry.
    pub observed: f64,
    /// Ratio implied by the cost coefficients, when the system is known.
    pub implied: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpPower {
    pub final_total: f64,
    pub peak_abs_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Security {
    pub violated: bool,
    pub first_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub after: f64,
    pub band: f64,
    pub hold: f64,
    pub t_end: f64,
    pub settling: Vec<Settling>,
    pub max_omega: Vec<Peak>,
    pub max_tbar: Vec<Peak>,
    pub sharing: Vec<Share>,
    pub pump_power: PumpPower,
    pub security: Security,
}

impl AnalysisReport {
    /// Largest frequency settling time; `None` if some bus never settles.
    pub fn frequency_settling(&self) -> Option<f64> {
        self.settling
            .iter()
            .filter(|s| s.signal.starts_with("omega_"))
            .try_fold(0.0f64, |m, s| s.time.map(|t| m.max(t)))
    }

    pub fn settling_of(&self, signal: &str) -> Option<&Settling> {
        self.settling.iter().find(|s| s.signal == signal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub after: f64,
    pub band: f64,
    pub hold: f64,
}

fn cost_of_generator(sys: &CombinedSystem, bus: &str) -> Option<f64> {
    sys.buses
        .iter()
        .find(|b| b.id == bus)
        .and_then(|b| b.generator.as_ref())
        .map(|g| g.cost)
}

fn source_owner(sys: &CombinedSystem, edge: &str) -> Option<(String, f64)> {
    sys.areas.iter().find_map(|a| {
        a.edges
            .iter()
            .find(|e| e.id == edge)
            .and_then(|e| e.source.as_ref())
            .map(|s| (a.id.clone(), s.cost))
    })
}

/// `(signal, final value, cost)`.
type ShareItem = (String, f64, Option<f64>);

fn share_group(group: String, items: Vec<ShareItem>, out: &mut Vec<Share>) {
    let Some(&(_, v0, c0)) = items.first() else {
        return;
    };
    for (signal, v, c) in items {
        out.push(Share {
            group: group.clone(),
            signal,
            final_value: v,
            observed: v / v0,
            implied: c0.zip(c).map(|(c0, c)| c0 / c),
        });
    }
}

/// Builds the report; `system` adds cost-implied ratios and per-area grouping.
pub fn analyze(table: &Table, opts: AnalyzeOptions, system: Option<&CombinedSystem>) -> AnalysisReport {
    let t = table.times();
    let t_end = *t.last().expect("table has rows");
    let mut settling = Vec::new();
    for prefix in ["omega", "Tbar"] {
        for (id, v) in table.with_prefix(prefix) {
            settling.push(Settling {
                signal: format!("{prefix}_{id}"),
                time: settling_time(t, v, opts.after, opts.band, opts.hold),
                final_value: *v.last().unwrap(),
            });
        }
    }
    let peaks = |prefix: &str| {
        table
            .with_prefix(prefix)
            .map(|(id, v)| Peak {
                signal: format!("{prefix}_{id}"),
                max_abs: max_abs(v),
            })
            .collect::<Vec<_>>()
    };

    let mut sharing = Vec::new();
    let gens: Vec<ShareItem> = table
        .with_prefix("pG")
        .map(|(bus, v)| {
            let cost = system.and_then(|s| cost_of_generator(s, bus));
            (format!("pG_{bus}"), *v.last().unwrap(), cost)
        })
        .collect();
    share_group("pG".into(), gens, &mut sharing);
    let mut heat: Vec<(String, Vec<ShareItem>)> = Vec::new();
    for (edge, v) in table.with_prefix("hG") {
        let (group, cost) = match system.and_then(|s| source_owner(s, edge)) {
            Some((area, cost)) => (format!("hG[{area}]"), Some(cost)),
            None => ("hG".to_string(), None),
        };
        let item = (format!("hG_{edge}"), *v.last().unwrap(), cost);
        match heat.iter_mut().find(|(g, _)| *g == group) {
            Some((_, items)) => items.push(item),
            None => heat.push((group, vec![item])),
        }
    }
    for (group, items) in heat {
        share_group(group, items, &mut sharing);
    }

    let mut total = vec![0.0; t.len()];
    for (_, v) in table.with_prefix("pP") {
        for (acc, x) in total.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let pump_power = PumpPower {
        final_total: *total.last().unwrap(),
        peak_abs_total: max_abs(&total),
    };

    let security = match table.column("flag_security") {
        Some(flags) => {
            let first = flags.iter().position(|&f| f != 0.0);
            Security {
                violated: first.is_some(),
                first_time: first.map(|k| t[k]),
            }
        }
        None => Security {
            violated: false,
            first_time: None,
        },
    };

    AnalysisReport {
        after: opts.after,
        band: opts.band,
        hold: opts.hold,
        t_end,
        settling,
        max_omega: peaks("omega"),
        max_tbar: peaks("Tbar"),
        sharing,
        pump_power,
        security,
    }
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "window: t >= {} s (t_end {} s), band {:e}, hold {} s",
            self.after, self.t_end, self.band, self.hold
        )?;
        writeln!(f, "settling time (s after last disturbance):")?;
        for s in &self.settling {
            match s.time {
                Some(t) => writeln!(f, "  {:<24} {:>12.4}   final {:+.6e}", s.signal, t, s.final_value)?,
                None => writeln!(f, "  {:<24} {:>12}   final {:+.6e}", s.signal, "unsettled", s.final_value)?,
            }
        }
        writeln!(f, "max |omega|:")?;
        for p in &self.max_omega {
            writeln!(f, "  {:<24} {:.6e}", p.signal, p.max_abs)?;
        }
        writeln!(f, "max |Tbar|:")?;
        for p in &self.max_tbar {
            writeln!(f, "  {:<24} {:.6e}", p.signal, p.max_abs)?;
        }
        writeln!(f, "sharing (final sample, relative to first entry):")?;
        for s in &self.sharing {
            let implied = s.implied.map_or("-".to_string(), |r| format!("{r:.6}"));
            writeln!(
                f,
                "  {:<10} {:<20} {:+.6e}   observed 1:{:.6}   implied 1:{}",
                s.group, s.signal, s.final_value, s.observed, implied
            )?;
        }
        writeln!(
            f,
            "pump power: final total {:+.6e}, peak |total| {:.6e}",
            self.pump_power.final_total, self.pump_power.peak_abs_total
        )?;
        match self.security.first_time {
            Some(t) => writeln!(f, "security: |eta| >= pi/2 first at t = {t}"),
            None => writeln!(f, "security: ok"),
        }
    }
}
