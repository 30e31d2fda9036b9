//! Storage functions around an equilibrium and monotonicity audits.
//!
//! Controller blocks use the quadratic storage `P/2 (x - x*)^2` with `P`
//! from [`LinearBlock::storage_weight`](crate::dynamics::LinearBlock::storage_weight);
//! for first-order blocks this is `tau/(2 Q~) (p - p*)^2`.

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{BusRole, Model, ModelError};
use crate::equilibrium::{equilibrium, EquilibriumError, EquilibriumSolution};
use crate::netmodel::{PumpMode, SystemMode};
use crate::schedule::DisturbanceSchedule;
use crate::solver::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("state has length {got}, layout expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("area index {0} out of range")]
    Area(usize),
    #[error("storage function requires a {expected:?} system")]
    Mode { expected: SystemMode },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StorageBreakdown {
    pub kinetic: f64,
    pub line: f64,
    pub generator: f64,
    pub thermal: f64,
    pub source: f64,
    pub total: f64,
}

impl StorageBreakdown {
    fn new(kinetic: f64, line: f64, generator: f64, thermal: f64, source: f64) -> Self {
        Self {
            kinetic,
            line,
            generator,
            thermal,
            source,
            total: kinetic + line + generator + thermal + source,
        }
    }

    pub fn parts(&self) -> [f64; 5] {
        [self.kinetic, self.line, self.generator, self.thermal, self.source]
    }
}

fn check(model: &Model, x: &DVector<f64>) -> Result<(), LyapunovError> {
    if x.len() != model.dim() {
        return Err(LyapunovError::Dimension {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `B [(cos eta* - cos eta) - sin eta* (eta - eta*)]`, the line integral of
/// `B (sin s - sin eta*)` from `eta*` to `eta`.
pub fn line_potential(susceptance: f64, eta: f64, eta_star: f64) -> f64 {
    susceptance * ((eta_star.cos() - eta.cos()) - eta_star.sin() * (eta - eta_star))
}

fn electric_parts(model: &Model, x: &DVector<f64>, eq: &EquilibriumSolution) -> (f64, f64, f64) {
    let lay = model.layout();
    let sys = model.system();
    let mut kinetic = 0.0;
    for (j, role) in model.roles().iter().enumerate() {
        if let BusRole::Inertial { slot } = *role {
            let dw = x[lay.omega.start + slot] - eq.omega_star;
            kinetic += 0.5 * sys.buses[j].inertia * dw * dw;
        }
    }
    let line = sys
        .lines
        .iter()
        .enumerate()
        .map(|(k, l)| line_potential(l.susceptance, x[lay.eta.start + k], eq.eta[k]))
        .sum();
    let generator = model
        .generators()
        .iter()
        .enumerate()
        .map(|(g, e)| {
            let d = x[lay.gen.start + g] - e.block.rest_state(eq.omega_star);
            0.5 * e.block.storage_weight() * d * d
        })
        .sum();
    (kinetic, line, generator)
}

fn thermal_parts(model: &Model, x: &DVector<f64>, eq: &EquilibriumSolution, area: usize) -> (f64, f64) {
    let am = &model.areas()[area];
    let tbar = model.average_temperatures(x)[area];
    let d = tbar - eq.tbar[area];
    let thermal = 0.5 * am.total_volume * d * d;
    let source = model
        .sources()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.area == area)
        .map(|(s, e)| {
            let d = x[model.layout().heat.start + s] - e.block.rest_state(eq.tbar[area]);
            0.5 * e.block.storage_weight() * d * d
        })
        .sum();
    (thermal, source)
}

/// Electric storage `V_omega + V_l + V_g`.
pub fn v1e(model: &Model, x: &DVector<f64>, eq: &EquilibriumSolution) -> Result<StorageBreakdown, LyapunovError> {
    check(model, x)?;
    let (k, l, g) = electric_parts(model, x, eq);
    Ok(StorageBreakdown::new(k, l, g, 0.0, 0.0))
}

/// Heat storage `V_t + V_s` of one area.
pub fn v1h(
    model: &Model,
    x: &DVector<f64>,
    eq: &EquilibriumSolution,
    area: usize,
) -> Result<StorageBreakdown, LyapunovError> {
    check(model, x)?;
    if area >= model.areas().len() {
        return Err(LyapunovError::Area(area));
    }
    let (t, s) = thermal_parts(model, x, eq, area);
    Ok(StorageBreakdown::new(0.0, 0.0, 0.0, t, s))
}

/// Thermal weight `m / C_o` of each area's converter pump (1 for areas
/// without one).
pub fn area_weights(model: &Model) -> Vec<f64> {
    let mut w = vec![1.0; model.areas().len()];
    for p in model.pumps() {
        if let PumpMode::Mode2 { m } = p.mode {
            w[p.area] = m / p.cop;
        }
    }
    w
}

/// Aggregate Mode-2 storage: electric parts plus thermal parts weighted per
/// area by [`area_weights`].
pub fn v2(model: &Model, x: &DVector<f64>, eq: &EquilibriumSolution) -> Result<StorageBreakdown, LyapunovError> {
    v2_weighted(model, x, eq, &area_weights(model))
}

/// [`v2`] with explicit per-area thermal weights.
pub fn v2_weighted(
    model: &Model,
    x: &DVector<f64>,
    eq: &EquilibriumSolution,
    weights: &[f64],
) -> Result<StorageBreakdown, LyapunovError> {
    if model.mode() != SystemMode::Mode2 {
        return Err(LyapunovError::Mode {
            expected: SystemMode::Mode2,
        });
    }
    check(model, x)?;
    let (k, l, g) = electric_parts(model, x, eq);
    let (mut t, mut s) = (0.0, 0.0);
    for (a, w) in weights.iter().enumerate().take(model.areas().len()) {
        let (ta, sa) = thermal_parts(model, x, eq, a);
        t += w * ta;
        s += w * sa;
    }
    Ok(StorageBreakdown::new(k, l, g, t, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    /// Indices `k` with `V[k+1] - V[k] > tol * max(1, V[k])`.
    pub flagged: Vec<usize>,
    /// Largest increase seen, possibly negative.
    pub max_increase: f64,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.flagged.first().copied()
    }
}

pub fn check_monotone(series: &[f64], tol: f64) -> MonotoneReport {
    let mut flagged = Vec::new();
    let mut max_increase = f64::NEG_INFINITY;
    for (k, w) in series.windows(2).enumerate() {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > tol * w[0].max(1.0) || inc.is_nan() {
            flagged.push(k);
        }
    }
    MonotoneReport { flagged, max_increase }
}

/// Which storage function an audit evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageKind {
    V1e,
    V1h(usize),
    V2,
}

impl StorageKind {
    pub fn name(&self) -> String {
        match self {
            StorageKind::V1e => "v1e".into(),
            StorageKind::V1h(a) => format!("v1h[{a}]"),
            StorageKind::V2 => "v2".into(),
        }
    }

    pub fn eval(&self, model: &Model, x: &DVector<f64>, eq: &EquilibriumSolution) -> Result<f64, LyapunovError> {
        Ok(match *self {
            StorageKind::V1e => v1e(model, x, eq)?.total,
            StorageKind::V1h(a) => v1h(model, x, eq, a)?.total,
            StorageKind::V2 => v2(model, x, eq)?.total,
        })
    }
}

/// The storage functions that must be non-increasing for the system's mode.
pub fn default_audits(model: &Model) -> Vec<StorageKind> {
    match model.mode() {
        SystemMode::Mode1 => vec![StorageKind::V1e],
        SystemMode::Mode2 => vec![StorageKind::V2],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditResult {
    pub kind: StorageKind,
    /// Sample times of the audited window.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub report: MonotoneReport,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    /// Time of the first flagged step (start of the increasing interval).
    pub fn first_violation_time(&self) -> Option<f64> {
        self.report.first().map(|k| self.times[k])
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Evaluates `kind` on every sample at or after the last disturbance,
/// measured against the final-load equilibrium.
pub fn audit(
    model: &Model,
    traj: &Trajectory,
    schedule: &DisturbanceSchedule,
    kind: StorageKind,
    tol: f64,
) -> Result<AuditResult, LyapunovError> {
    let loads = model.final_loads(schedule)?;
    let eq = equilibrium(model, &loads)?;
    let after = schedule.last_time().unwrap_or(f64::NEG_INFINITY);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= after {
            times.push(*t);
            values.push(kind.eval(model, x, &eq)?);
        }
    }
    let report = check_monotone(&values, tol);
    Ok(AuditResult {
        kind,
        times,
        values,
        report,
    })
}

/// Audits every inter-disturbance window against the equilibrium of the
/// loads active in it; the baseline restarts at each disturbance instant.
pub fn audit_segments(
    model: &Model,
    traj: &Trajectory,
    schedule: &DisturbanceSchedule,
    kind: StorageKind,
    tol: f64,
) -> Result<Vec<AuditResult>, LyapunovError> {
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(schedule.times());
    bounds.push(f64::INFINITY);
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let loads = model.loads_at(schedule, a.max(traj.times[0]))?;
        let eq = equilibrium(model, &loads)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            // the state at the next instant still belongs to this window
            if *t >= a && *t <= b {
                times.push(*t);
                values.push(kind.eval(model, x, &eq)?);
            }
        }
        if times.is_empty() {
            continue;
        }
        let report = check_monotone(&values, tol);
        out.push(AuditResult {
            kind,
            times,
            values,
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::equilibrium_state;
    use crate::fixtures;
    use crate::solver::{integrate, SimParams};
    use approx::assert_relative_eq;

    fn setup(f: fixtures::Fixture) -> (Model, EquilibriumSolution) {
        let m = Model::new(f.system).unwrap();
        let eq = equilibrium(&m, &m.final_loads(&f.schedule).unwrap()).unwrap();
        (m, eq)
    }

    #[test]
    fn zero_at_equilibrium() {
        for f in fixtures::all() {
            let (m, eq) = setup(f);
            let x = equilibrium_state(&m, &eq);
            assert_eq!(v1e(&m, &x, &eq).unwrap().total, 0.0);
            for a in 0..m.areas().len() {
                assert!(v1h(&m, &x, &eq, a).unwrap().total.abs() < 1e-28);
            }
            if m.mode() == SystemMode::Mode2 {
                assert!(v2(&m, &x, &eq).unwrap().total.abs() < 1e-28);
            }
        }
    }

    #[test]
    fn line_potential_closed_form() {
        let v = line_potential(5.0, std::f64::consts::FRAC_PI_6, 0.0);
        assert_relative_eq!(v, 5.0 * (1.0 - (std::f64::consts::FRAC_PI_6).cos()), epsilon = 1e-15);
        assert_relative_eq!(v, 0.6699, epsilon = 1e-4);
    }

    #[test]
    fn thermal_arithmetic() {
        let (m, eq) = setup(fixtures::f1_mode1_fixture());
        let mut x = equilibrium_state(&m, &eq);
        for i in m.layout().temps[0].clone() {
            x[i] += 0.3;
        }
        let h = v1h(&m, &x, &eq, 0).unwrap();
        assert_relative_eq!(h.thermal, 0.27, epsilon = 1e-12);
        assert_eq!(h.source, 0.0);
        assert_eq!(h.total, h.thermal);
    }

    #[test]
    fn v2_weighting_is_linear() {
        let (m, eq) = setup(fixtures::f1_mode2_fixture());
        let x = DVector::from_fn(m.dim(), |i, _| 0.05 * (i as f64).sin());
        let w = area_weights(&m);
        assert_relative_eq!(w[0], 1.0 / 3.0);
        let a = v2_weighted(&m, &x, &eq, &w).unwrap();
        let b = v2_weighted(&m, &x, &eq, &[2.0 * w[0]]).unwrap();
        assert_eq!(a.kinetic + a.line + a.generator, b.kinetic + b.line + b.generator);
        assert_relative_eq!(b.thermal + b.source, 2.0 * (a.thermal + a.source), epsilon = 1e-15);
        let (m1, eq1) = setup(fixtures::f1_mode1_fixture());
        assert!(matches!(v2(&m1, &m1.zero_state(), &eq1), Err(LyapunovError::Mode { .. })));
    }

    #[test]
    fn monotone_examples() {
        assert!(check_monotone(&[1.0; 5], 1e-9).passed());
        let r = check_monotone(&[0.0, 1.0, 2.0, 3.0], 1e-9);
        assert_eq!(r.flagged, vec![0, 1, 2]);
        assert!(check_monotone(&[], 1e-9).passed());
    }

    #[test]
    fn parts_nonnegative_along_run() {
        let f = fixtures::f1_mode1_fixture();
        let (m, eq) = setup(f.clone());
        let params = SimParams {
            t_end: 20.0,
            ..Default::default()
        };
        let tr = integrate(&m, &m.zero_state(), &params, &f.schedule).unwrap();
        for x in &tr.states {
            let b = v1e(&m, x, &eq).unwrap();
            assert!(b.parts().iter().all(|p| *p >= -1e-12));
            assert_relative_eq!(b.total, b.parts().iter().sum::<f64>());
        }
        let res = audit(&m, &tr, &f.schedule, StorageKind::V1e, 1e-9).unwrap();
        assert!(res.passed(), "{:?}", res.report);
        assert_eq!(res.times[0], 1.0);
    }
}
