//! Command implementations. Each returns structured data; [`dispatch`] prints.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use heatfreq_core::equilibrium::{cross_check, equilibrium, with_matched_gains, CrossCheck};
use heatfreq_core::lyapunov::{audit, audit_segments, default_audits, AuditResult, StorageKind};
use heatfreq_core::solver::integrate;
use heatfreq_core::{EquilibriumSolution, SystemMode, Trajectory};
use serde::Serialize;

use crate::analyze::{analyze, AnalysisReport, AnalyzeOptions, Table};
use crate::config::{read_config, ConfigError, Scenario};
use crate::metadata::Metadata;
use crate::{bundled, trajectory, CliError, Command, LoadArgs, VERSION};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METADATA_FILE: &str = "metadata.txt";

/// Reads, optionally retunes, and validates a scenario.
pub fn prepare(path: &Path, load: &LoadArgs) -> Result<Scenario, CliError> {
    let cfg = read_config(path)?;
    let mut scn = Scenario::build(cfg, load.force)?;
    if let Some(target) = load.match_omega {
        if scn.model.mode() != SystemMode::Mode1 {
            return Err(CliError::Usage("--match-omega needs a Mode-1 scenario".into()));
        }
        let loads = scn.model.final_loads(&scn.schedule).map_err(ConfigError::from)?;
        let mut cfg = scn.config.clone();
        cfg.system = with_matched_gains(&scn.model, &loads, target)?;
        scn = Scenario::build(cfg, load.force)?;
    }
    Ok(scn)
}

pub fn run_trajectory(scn: &Scenario) -> Result<Trajectory, CliError> {
    let x0 = scn.initial_state()?;
    Ok(integrate(&scn.model, &x0, &scn.config.sim, &scn.schedule)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub out_dir: PathBuf,
    pub rows: usize,
    pub final_time: f64,
    pub final_omega: Vec<f64>,
    pub final_tbar: Vec<f64>,
    pub security_violation: bool,
}

fn metadata_for(scn: &Scenario, source: &Path, load: &LoadArgs, traj: &Trajectory, rows: usize) -> Metadata {
    let cfg = &scn.config;
    let mut m = Metadata::new();
    m.push("version", VERSION)
        .push("command", "simulate")
        .push("source", source.display())
        .push("scenario", scn.label())
        .push("mode", format!("{:?}", scn.model.mode()).to_lowercase())
        .push("flag.force", load.force)
        .push("flag.match_omega", load.match_omega.map_or("none".to_string(), |w| format!("{w:?}")))
        .push("forced_violations", scn.report.errors().count());
    m.push_sim("sim", &cfg.sim);
    m.push("outputs.decimation", cfg.outputs.decimation)
        .push("initial", format!("{:?}", cfg.initial).to_lowercase())
        .push("disturbances", cfg.disturbances.len())
        .push(
            "last_disturbance",
            scn.schedule.last_time().map_or("none".to_string(), |t| format!("{t:?}")),
        )
        .push("samples", traj.len())
        .push("rows", rows)
        .push_f64("final_time", traj.final_time())
        .push("accepted_steps", traj.accepted_steps)
        .push("rejected_steps", traj.rejected_steps)
        .push("security_violation", traj.security_violation)
        .push(
            "first_security_time",
            traj.first_security_time.map_or("none".to_string(), |t| format!("{t:?}")),
        );
    m.push_defaults();
    m.config_json = Some(cfg.to_json());
    m
}

/// Integrates and writes `trajectory.csv` and `metadata.txt` into `out_dir`.
pub fn simulate(scn: &Scenario, source: &Path, load: &LoadArgs, out_dir: &Path) -> Result<SimSummary, CliError> {
    let traj = run_trajectory(scn)?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let csv_path = out_dir.join(TRAJECTORY_FILE);
    let file = fs::File::create(&csv_path).map_err(CliError::io(&csv_path))?;
    trajectory::write_csv(BufWriter::new(file), &scn.model, &traj, scn.config.outputs.decimation).map_err(|e| {
        CliError::Io {
            path: csv_path.clone(),
            source: e.into(),
        }
    })?;
    let rows = trajectory::kept(traj.len(), scn.config.outputs.decimation).len();
    let meta_path = out_dir.join(METADATA_FILE);
    fs::write(&meta_path, metadata_for(scn, source, load, &traj, rows).render()).map_err(CliError::io(&meta_path))?;
    let out = traj.final_outputs();
    Ok(SimSummary {
        out_dir: out_dir.to_path_buf(),
        rows,
        final_time: traj.final_time(),
        final_omega: out.omega.clone(),
        final_tbar: out.tbar.clone(),
        security_violation: traj.security_violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Named {
    pub id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheckReport {
    pub analytic: f64,
    pub numeric: f64,
    pub lambda_analytic: f64,
    pub lambda_numeric: f64,
    pub balance: f64,
}

impl From<CrossCheck> for CrossCheckReport {
    fn from(c: CrossCheck) -> Self {
        Self {
            analytic: c.analytic,
            numeric: c.numeric,
            lambda_analytic: c.lambda_analytic,
            lambda_numeric: c.lambda_numeric,
            balance: c.balance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub mode: String,
    pub omega_star: f64,
    pub lambda: f64,
    pub tbar: Vec<Named>,
    pub mu: Vec<Named>,
    pub p_gen: Vec<Named>,
    pub p_pump: Vec<Named>,
    pub h_pump: Vec<Named>,
    pub h_gen: Vec<Named>,
    pub p_damp: Vec<Named>,
    pub eta: Vec<Named>,
    pub cross_check: CrossCheckReport,
}

impl EquilibriumReport {
    fn new(scn: &Scenario, eq: &EquilibriumSolution, cc: CrossCheck) -> Self {
        let m = &scn.model;
        let sys = m.system();
        let named = |ids: Vec<String>, vals: &[f64]| {
            ids.into_iter()
                .zip(vals)
                .map(|(id, &value)| Named { id, value })
                .collect::<Vec<_>>()
        };
        let area_ids: Vec<String> = sys.areas.iter().map(|a| a.id.clone()).collect();
        let pump_buses: Vec<String> = m.pumps().iter().map(|p| sys.buses[p.bus].id.clone()).collect();
        let pump_edges: Vec<String> = m
            .pumps()
            .iter()
            .map(|p| sys.areas[p.area].edges[p.edge].id.clone())
            .collect();
        Self {
            mode: format!("{:?}", eq.mode).to_lowercase(),
            omega_star: eq.omega_star,
            lambda: eq.lambda,
            tbar: named(area_ids.clone(), &eq.tbar),
            mu: named(area_ids, &eq.mu),
            p_gen: named(
                m.generators().iter().map(|g| sys.buses[g.bus].id.clone()).collect(),
                &eq.p_gen,
            ),
            p_pump: named(pump_buses, &eq.p_pump),
            h_pump: named(pump_edges, &eq.h_pump),
            h_gen: named(
                m.sources()
                    .iter()
                    .map(|s| sys.areas[s.area].edges[s.edge].id.clone())
                    .collect(),
                &eq.h_gen,
            ),
            p_damp: named(sys.buses.iter().map(|b| b.id.clone()).collect(), &eq.p_damp),
            eta: named(
                sys.lines.iter().map(|l| format!("{}-{}", l.from, l.to)).collect(),
                &eq.eta,
            ),
            cross_check: cc.into(),
        }
    }

    /// `(quantity, value)` pairs in display order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        fn group(r: &mut Vec<(String, f64)>, label: &str, items: &[Named]) {
            r.extend(items.iter().map(|n| (format!("{label}[{}]", n.id), n.value)));
        }
        let mut r = vec![("omega*".to_string(), self.omega_star)];
        group(&mut r, "Tbar*", &self.tbar);
        group(&mut r, "pG*", &self.p_gen);
        group(&mut r, "pP*", &self.p_pump);
        group(&mut r, "hP*", &self.h_pump);
        group(&mut r, "hG*", &self.h_gen);
        group(&mut r, "D*omega*", &self.p_damp);
        group(&mut r, "eta*", &self.eta);
        r.push(("lambda".into(), self.lambda));
        group(&mut r, "mu", &self.mu);
        let c = &self.cross_check;
        r.push(("check.qp_analytic".into(), c.analytic));
        r.push(("check.qp_bisection".into(), c.numeric));
        r.push(("check.lambda_analytic".into(), c.lambda_analytic));
        r.push(("check.lambda_bisection".into(), c.lambda_numeric));
        r.push(("check.balance".into(), c.balance));
        r
    }

    pub fn get(&self, quantity: &str) -> Option<f64> {
        self.rows().into_iter().find(|(q, _)| q == quantity).map(|(_, v)| v)
    }
}

pub fn equilibrium_report(scn: &Scenario, at: Option<f64>) -> Result<EquilibriumReport, CliError> {
    let loads = match at {
        Some(t) => scn.model.loads_at(&scn.schedule, t),
        None => scn.model.final_loads(&scn.schedule),
    }
    .map_err(ConfigError::from)?;
    let eq = equilibrium(&scn.model, &loads)?;
    let cc = cross_check(&scn.model, &eq)?;
    Ok(EquilibriumReport::new(scn, &eq, cc))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditLine {
    pub function: String,
    /// Required functions decide the exit status; the rest are reported only.
    pub required: bool,
    pub window_start: f64,
    pub window_end: f64,
    pub passed: bool,
    /// Index into the window's samples of the first increasing step.
    pub first_violation: Option<usize>,
    pub first_violation_time: Option<f64>,
    pub flagged: usize,
    pub max_increase: f64,
    pub final_value: f64,
}

impl AuditLine {
    fn new(r: &AuditResult, required: bool) -> Self {
        Self {
            function: r.kind.name(),
            required,
            window_start: r.times.first().copied().unwrap_or(f64::NAN),
            window_end: r.times.last().copied().unwrap_or(f64::NAN),
            passed: r.passed(),
            first_violation: r.report.first(),
            first_violation_time: r.first_violation_time(),
            flagged: r.report.flagged.len(),
            max_increase: r.report.max_increase,
            final_value: r.final_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub lines: Vec<AuditLine>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed || !l.required)
    }
}

/// Simulates and audits the mode's storage function; in Mode 1 each area's
/// thermal storage is reported as well.
pub fn audit_report(scn: &Scenario, tol: f64, segments: bool) -> Result<AuditReport, CliError> {
    let traj = run_trajectory(scn)?;
    let m = &scn.model;
    let fail = |e: heatfreq_core::lyapunov::LyapunovError| CliError::Audit(e.to_string());
    let mut lines = Vec::new();
    let mut kinds: Vec<(StorageKind, bool)> = default_audits(m).into_iter().map(|k| (k, true)).collect();
    if m.mode() == SystemMode::Mode1 {
        kinds.extend((0..m.areas().len()).map(|a| (StorageKind::V1h(a), false)));
    }
    for (kind, required) in kinds {
        if segments {
            for r in audit_segments(m, &traj, &scn.schedule, kind, tol).map_err(fail)? {
                lines.push(AuditLine::new(&r, required));
            }
        } else {
            lines.push(AuditLine::new(&audit(m, &traj, &scn.schedule, kind, tol).map_err(fail)?, required));
        }
    }
    Ok(AuditReport { lines })
}

/// Window start and config for `analyze`, from flags or the run's metadata.
fn analysis_context(
    csv: &Path,
    after: Option<f64>,
    config: Option<&Path>,
) -> Result<(f64, Option<heatfreq_core::CombinedSystem>), CliError> {
    let meta = csv
        .parent()
        .map(|d| d.join(METADATA_FILE))
        .filter(|p| p.is_file())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| Metadata::parse(&t));
    let after = after
        .or_else(|| meta.as_ref().and_then(|m| m.get_f64("last_disturbance")))
        .unwrap_or(0.0);
    let system = match config {
        Some(p) => Some(read_config(p)?.system),
        None => match meta.as_ref().and_then(Metadata::config) {
            Some(cfg) => Some(cfg?.system),
            None => None,
        },
    };
    Ok((after, system))
}

pub fn analyze_file(
    csv: &Path,
    band: f64,
    hold: f64,
    after: Option<f64>,
    config: Option<&Path>,
) -> Result<AnalysisReport, CliError> {
    if !(band >= 0.0 && hold >= 0.0) {
        return Err(CliError::Usage("--band and --hold must be >= 0".into()));
    }
    let file = fs::File::open(csv).map_err(CliError::io(csv))?;
    let table = Table::read(file)?;
    let (after, system) = analysis_context(csv, after, config)?;
    Ok(analyze(&table, AnalyzeOptions { after, band, hold }, system.as_ref()))
}

#[derive(Debug)]
pub struct BatchItem {
    pub config: PathBuf,
    pub result: Result<SimSummary, CliError>,
}

/// Runs every `*.json` in `dir` (sorted by name) on `jobs` threads; each
/// scenario writes to `out_root/<file stem>`.
pub fn batch(dir: &Path, out_root: &Path, jobs: usize) -> Result<Vec<BatchItem>, CliError> {
    let mut configs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    configs.sort();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SimSummary, CliError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    let load = LoadArgs::default();
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(configs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = configs.get(k) else { break };
                let stem = path.file_stem().unwrap_or_default();
                let r = prepare(path, &load).and_then(|scn| simulate(&scn, path, &load, &out_root.join(stem)));
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    let results = results.into_inner().unwrap();
    Ok(configs
        .into_iter()
        .zip(results)
        .map(|(config, r)| BatchItem {
            config,
            result: r.expect("every scenario ran"),
        })
        .collect())
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x}"))
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { config } => {
            let cfg = read_config(&config)?;
            let scn = Scenario::build(cfg, false)?;
            print!("{}", scn.report);
            println!(
                "{}: valid {:?} system, {} buses, {} lines, {} areas, {} disturbances",
                scn.label(),
                scn.model.mode(),
                scn.config.system.buses.len(),
                scn.config.system.lines.len(),
                scn.config.system.areas.len(),
                scn.config.disturbances.len()
            );
            Ok(())
        }
        Command::Simulate { config, out, load } => {
            let scn = prepare(&config, &load)?;
            let out = out
                .or_else(|| scn.config.outputs.directory.clone())
                .ok_or_else(|| CliError::Usage("no output directory: pass --out or set outputs.directory".into()))?;
            let s = simulate(&scn, &config, &load, &out)?;
            println!(
                "{}: {} rows to {}, t = {}",
                scn.label(),
                s.rows,
                s.out_dir.join(TRAJECTORY_FILE).display(),
                s.final_time
            );
            for (b, w) in scn.config.system.buses.iter().zip(&s.final_omega) {
                println!("  omega_{} = {:+.10e}", b.id, w);
            }
            for (a, t) in scn.config.system.areas.iter().zip(&s.final_tbar) {
                println!("  Tbar_{} = {:+.10e}", a.id, t);
            }
            if s.security_violation {
                println!("  warning: |eta| >= pi/2 reached during the run");
            }
            Ok(())
        }
        Command::Equilibrium {
            config,
            at,
            csv,
            json,
            load,
        } => {
            let scn = prepare(&config, &load)?;
            let rep = equilibrium_report(&scn, at)?;
            if let Some(path) = csv {
                let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
                    path: path.clone(),
                    source: e.into(),
                })?;
                let io = |e: csv::Error| CliError::Io {
                    path: path.clone(),
                    source: e.into(),
                };
                w.write_record(["quantity", "value"]).map_err(io)?;
                for (q, v) in rep.rows() {
                    w.write_record([q, format!("{v:.16e}")]).map_err(io)?;
                }
                w.flush().map_err(CliError::io(&path))?;
            }
            if json {
                print_json(&rep);
            } else {
                println!("{} equilibrium ({})", scn.label(), rep.mode);
                for (q, v) in rep.rows() {
                    println!("  {q:<28} {v:+.12e}");
                }
            }
            Ok(())
        }
        Command::Audit {
            config,
            tol,
            segments,
            load,
        } => {
            let scn = prepare(&config, &load)?;
            if scn.forced {
                eprintln!("warning: auditing an invalid system (--force):");
                for v in scn.report.errors() {
                    eprintln!("  {v}");
                }
            }
            let rep = audit_report(&scn, tol, segments)?;
            for l in &rep.lines {
                let status = match (l.passed, l.required) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "INCREASING",
                };
                let tag = if l.required { "" } else { " (informational)" };
                print!(
                    "{status}  {}{tag} on [{}, {}]: final {:.3e}, max step increase {:.3e}",
                    l.function, l.window_start, l.window_end, l.final_value, l.max_increase
                );
                match l.first_violation {
                    Some(k) => println!(
                        ", {} flagged, first at index {k} (t = {})",
                        l.flagged,
                        fmt_opt(l.first_violation_time)
                    ),
                    None => println!(),
                }
            }
            if rep.passed() {
                Ok(())
            } else {
                let failed: Vec<String> = rep
                    .lines
                    .iter()
                    .filter(|l| l.required && !l.passed)
                    .map(|l| l.function.clone())
                    .collect();
                Err(CliError::Audit(format!("{} increased", failed.join(", "))))
            }
        }
        Command::Analyze {
            csv,
            band,
            hold,
            after,
            config,
            json,
        } => {
            let rep = analyze_file(&csv, band, hold, after, config.as_deref())?;
            if json {
                print_json(&rep);
            } else {
                print!("{rep}");
            }
            Ok(())
        }
        Command::Batch { dir, out, jobs } => {
            let out = out.unwrap_or_else(|| dir.join("results"));
            let jobs = jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1);
            let items = batch(&dir, &out, jobs)?;
            let mut failed = 0;
            let mut code = 0;
            for it in &items {
                match &it.result {
                    Ok(s) => println!("ok     {} -> {} ({} rows)", it.config.display(), s.out_dir.display(), s.rows),
                    Err(e) => {
                        failed += 1;
                        code = code.max(e.exit_code());
                        println!("error  {}: {e}", it.config.display());
                    }
                }
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Batch {
                    failed,
                    total: items.len(),
                    code,
                })
            }
        }
        Command::Fixture { name } => match name {
            None => {
                for (n, _) in bundled::BUNDLED {
                    println!("{n}");
                }
                Ok(())
            }
            Some(n) => match bundled::get(&n) {
                Some(text) => {
                    print!("{text}");
                    Ok(())
                }
                None => Err(CliError::Usage(format!("no bundled scenario `{n}`"))),
            },
        },
    }
}
