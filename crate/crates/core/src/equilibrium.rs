//! Post-disturbance steady states.
//!
//! The closed forms follow from the aggregate balances. Each one is also the
//! solution of a diagonal quadratic program with a single balance
//! constraint; [`solve_qp`] and [`solve_qp_numeric`] solve those programs
//! independently so the two routes can be compared.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{BusRole, Loads, Model, ModelError};
use crate::netmodel::{CombinedSystem, HeatArea, PumpMode, SystemMode, TopologyError};
use crate::schedule::DisturbanceSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("no regulating element: the balance denominator is zero")]
    Unbalanced,
    #[error("area `{area}` has no heat source and a net heat imbalance of {imbalance:e}")]
    UnbalancedArea { area: String, imbalance: f64 },
    #[error("expected a {expected:?} system, got {got:?}")]
    ModeMismatch { expected: SystemMode, got: SystemMode },
    #[error("heat injection does not sum to zero (1'h = {sum:e})")]
    Inconsistent { sum: f64 },
    #[error("temperature profile residual {residual:e} exceeds tolerance")]
    ProfileResidual { residual: f64 },
    #[error("no line-angle solution inside |eta| < pi/2: {0}")]
    NoSecureAngles(String),
    #[error("matched gain is not positive ({0:e}); target frequency unreachable in Mode 1")]
    Unmatched(f64),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Steady state reached after the loads settle at a given [`Loads`].
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub mode: SystemMode,
    /// Synchronous frequency deviation.
    pub omega_star: f64,
    /// Per area.
    pub tbar: Vec<f64>,
    /// Per generator, in [`Model::generators`] order.
    pub p_gen: Vec<f64>,
    /// Per pump, in [`Model::pumps`] order.
    pub p_pump: Vec<f64>,
    pub h_pump: Vec<f64>,
    /// `D_j * omega*` per bus.
    pub p_damp: Vec<f64>,
    /// Per heat source, in [`Model::sources`] order.
    pub h_gen: Vec<f64>,
    /// Full `(T^E, T^N)` profile per area.
    pub temps: Vec<DVector<f64>>,
    /// Multiplier of the electric balance.
    pub lambda: f64,
    /// Multiplier of each area's heat balance.
    pub mu: Vec<f64>,
    /// Line angle differences.
    pub eta: Vec<f64>,
    pub loads: Loads,
}

impl EquilibriumSolution {
    /// Every starred scalar in a fixed order, for norm comparisons.
    pub fn starred(&self) -> Vec<f64> {
        let mut v = vec![self.omega_star];
        v.extend(&self.tbar);
        v.extend(&self.p_gen);
        v.extend(&self.p_pump);
        v.extend(&self.h_pump);
        v.extend(&self.p_damp);
        v.extend(&self.h_gen);
        for t in &self.temps {
            v.extend(t.iter());
        }
        v
    }

    /// `1'p^G - 1'p^L - 1'p^P - 1'p^U`.
    pub fn electric_residual(&self) -> f64 {
        self.p_gen.iter().sum::<f64>()
            - self.loads.total_electric()
            - self.p_pump.iter().sum::<f64>()
            - self.p_damp.iter().sum::<f64>()
    }

    /// `1'h^G + 1'h^P - 1'h^L` of one area.
    pub fn heat_residual(&self, model: &Model, area: usize) -> f64 {
        let hg: f64 = model
            .sources()
            .iter()
            .zip(&self.h_gen)
            .filter(|(s, _)| s.area == area)
            .map(|(_, h)| h)
            .sum();
        let hp: f64 = model
            .pumps()
            .iter()
            .zip(&self.h_pump)
            .filter(|(p, _)| p.area == area)
            .map(|(_, h)| h)
            .sum();
        hg + hp - self.loads.total_heat(area)
    }
}

// ---------------------------------------------------------------------------
// Quadratic programs

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("no variable enters the balance constraint")]
    Infeasible,
    #[error("variable `{0}` has a non-positive or non-finite cost")]
    NonConvex(String),
    #[error("no multiplier bracket found within |lambda| <= {0:e}")]
    Bracket(f64),
    #[error("bisection stalled with residual {0:e}")]
    NoConvergence(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpVar {
    pub label: String,
    /// Diagonal cost entry.
    pub cost: f64,
    /// Coefficient in the balance row.
    pub coeff: f64,
}

impl QpVar {
    pub fn new(label: impl Into<String>, cost: f64, coeff: f64) -> Self {
        Self {
            label: label.into(),
            cost,
            coeff,
        }
    }
}

/// `min 1/2 sum cost_i x_i^2` subject to `sum coeff_i x_i = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub vars: Vec<QpVar>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Stationarity reads `cost_i x_i + coeff_i lambda = 0`.
    pub lambda: f64,
    pub residual: f64,
}

impl QpSpec {
    fn check(&self) -> Result<f64, QpError> {
        for v in &self.vars {
            if !(v.cost > 0.0 && v.cost.is_finite()) {
                return Err(QpError::NonConvex(v.label.clone()));
            }
        }
        let curvature: f64 = self.vars.iter().map(|v| v.coeff * v.coeff / v.cost).sum();
        if curvature <= 0.0 {
            return Err(QpError::Infeasible);
        }
        Ok(curvature)
    }

    fn allocation(&self, lambda: f64) -> Vec<f64> {
        self.vars.iter().map(|v| -v.coeff * lambda / v.cost).collect()
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(x).map(|(v, x)| v.coeff * x).sum::<f64>() - self.rhs
    }

    /// Position of a variable by label.
    pub fn index(&self, label: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.label == label)
    }
}

/// Closed-form KKT solution.
pub fn solve_qp(spec: &QpSpec) -> Result<QpSolution, QpError> {
    let curvature = spec.check()?;
    let lambda = -spec.rhs / curvature;
    let x = spec.allocation(lambda);
    let residual = spec.residual(&x);
    Ok(QpSolution { x, lambda, residual })
}

/// Bisection on the dual multiplier until `|residual| < 1e-10`.
pub fn solve_qp_numeric(spec: &QpSpec) -> Result<QpSolution, QpError> {
    const TOL: f64 = 1e-10;
    const BOUND: f64 = 1e12;
    spec.check()?;
    // residual(lambda) is strictly decreasing in lambda
    let g = |lambda: f64| spec.residual(&spec.allocation(lambda));
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) < 0.0 || g(hi) > 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        if hi > BOUND {
            return Err(QpError::Bracket(BOUND));
        }
    }
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = g(mid);
        if r.abs() < best.0.abs() || best.0.is_infinite() {
            best = (r, mid);
        }
        if r.abs() < TOL || mid == lo || mid == hi {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0.abs() >= TOL {
        return Err(QpError::NoConvergence(best.0));
    }
    let x = spec.allocation(best.1);
    Ok(QpSolution {
        residual: spec.residual(&x),
        x,
        lambda: best.1,
    })
}

fn bus_id(model: &Model, j: usize) -> &str {
    &model.system().buses[j].id
}

fn edge_id(model: &Model, area: usize, e: usize) -> &str {
    &model.system().areas[area].edges[e].id
}

fn push_generators(model: &Model, vars: &mut Vec<QpVar>) {
    for g in model.generators() {
        vars.push(QpVar::new(
            format!("pG[{}]", bus_id(model, g.bus)),
            1.0 / g.block.dc_gain(),
            1.0,
        ));
    }
}

fn push_damping(model: &Model, vars: &mut Vec<QpVar>) {
    for b in &model.system().buses {
        if b.damping > 0.0 {
            vars.push(QpVar::new(format!("pU[{}]", b.id), 1.0 / b.damping, -1.0));
        }
    }
}

/// Electric dispatch of a Mode-1 system: generators, pumps and damping share
/// the total electric load.
pub fn electric_qp(model: &Model, loads: &Loads) -> QpSpec {
    let mut vars = Vec::new();
    push_generators(model, &mut vars);
    for p in model.pumps() {
        if let PumpMode::Mode1 { a1 } = p.mode {
            vars.push(QpVar::new(format!("pP[{}]", bus_id(model, p.bus)), 1.0 / a1, -1.0));
        }
    }
    push_damping(model, &mut vars);
    QpSpec {
        vars,
        rhs: loads.total_electric(),
    }
}

/// Heat dispatch of one area given the pump heat injections (per pump).
pub fn heat_qp(model: &Model, area: usize, loads: &Loads, h_pump: &[f64]) -> QpSpec {
    let vars = model
        .sources()
        .iter()
        .filter(|s| s.area == area)
        .map(|s| QpVar::new(format!("hG[{}]", edge_id(model, area, s.edge)), 1.0 / s.block.dc_gain(), 1.0))
        .collect();
    let hp: f64 = model
        .pumps()
        .iter()
        .zip(h_pump)
        .filter(|(p, _)| p.area == area)
        .map(|(_, h)| h)
        .sum();
    QpSpec {
        vars,
        rhs: loads.total_heat(area) - hp,
    }
}

/// Combined dispatch of a Mode-2 system with the pump powers eliminated
/// through each pumped area's heat balance. Heat-source costs are weighted by
/// `m / C_o` of the area's pump.
pub fn combined_qp(model: &Model, loads: &Loads) -> QpSpec {
    let mut vars = Vec::new();
    push_generators(model, &mut vars);
    push_damping(model, &mut vars);
    let mut rhs = loads.total_electric();
    for p in model.pumps() {
        let PumpMode::Mode2 { m } = p.mode else { continue };
        let alpha = m / p.cop;
        for s in model.sources().iter().filter(|s| s.area == p.area) {
            vars.push(QpVar::new(
                format!("hG[{}]", edge_id(model, p.area, s.edge)),
                alpha / s.block.dc_gain(),
                1.0 / p.cop,
            ));
        }
        rhs += loads.total_heat(p.area) / p.cop;
    }
    QpSpec { vars, rhs }
}

// ---------------------------------------------------------------------------
// Closed forms

struct Partial {
    omega: f64,
    tbar: Vec<f64>,
    p_pump: Vec<f64>,
    h_pump: Vec<f64>,
    mu: Vec<f64>,
}

fn sum_gen_gain(model: &Model) -> f64 {
    model.generators().iter().map(|g| g.block.dc_gain()).sum()
}

fn sum_damping(model: &Model) -> f64 {
    model.system().buses.iter().map(|b| b.damping).sum()
}

fn area_source_gain(model: &Model, area: usize) -> f64 {
    model
        .sources()
        .iter()
        .filter(|s| s.area == area)
        .map(|s| s.block.dc_gain())
        .sum()
}

/// Average temperature of an area whose pump injection is fixed.
fn heat_only_tbar(model: &Model, area: usize, net_load: f64) -> Result<f64, EquilibriumError> {
    let gain = area_source_gain(model, area);
    if gain > 0.0 {
        Ok(-net_load / gain)
    } else if net_load.abs() <= 1e-12 {
        Ok(0.0)
    } else {
        Err(EquilibriumError::UnbalancedArea {
            area: model.system().areas[area].id.clone(),
            imbalance: net_load,
        })
    }
}

fn mode1_partial(model: &Model, loads: &Loads) -> Result<Partial, EquilibriumError> {
    let a1_sum: f64 = model
        .pumps()
        .iter()
        .map(|p| match p.mode {
            PumpMode::Mode1 { a1 } => a1,
            PumpMode::Mode2 { .. } => 0.0,
        })
        .sum();
    let den = sum_gen_gain(model) + a1_sum + sum_damping(model);
    if den == 0.0 {
        return Err(EquilibriumError::Unbalanced);
    }
    let omega = -loads.total_electric() / den;
    let p_pump: Vec<f64> = model
        .pumps()
        .iter()
        .map(|p| match p.mode {
            PumpMode::Mode1 { a1 } => a1 * omega,
            PumpMode::Mode2 { .. } => 0.0,
        })
        .collect();
    let h_pump: Vec<f64> = model.pumps().iter().zip(&p_pump).map(|(p, pp)| p.cop * pp).collect();
    let mut tbar = Vec::new();
    for a in 0..model.areas().len() {
        let hp: f64 = model
            .pumps()
            .iter()
            .zip(&h_pump)
            .filter(|(p, _)| p.area == a)
            .map(|(_, h)| h)
            .sum();
        tbar.push(heat_only_tbar(model, a, loads.total_heat(a) - hp)?);
    }
    Ok(Partial {
        omega,
        mu: tbar.clone(),
        tbar,
        p_pump,
        h_pump,
    })
}

fn mode2_partial(model: &Model, loads: &Loads) -> Result<Partial, EquilibriumError> {
    let mut num = loads.total_electric();
    let mut den = sum_gen_gain(model) + sum_damping(model);
    for p in model.pumps() {
        if let PumpMode::Mode2 { m } = p.mode {
            num += loads.total_heat(p.area) / p.cop;
            den += area_source_gain(model, p.area) / (m * p.cop);
        }
    }
    if den == 0.0 {
        return Err(EquilibriumError::Unbalanced);
    }
    let omega = -num / den;
    let n_areas = model.areas().len();
    let mut tbar = vec![f64::NAN; n_areas];
    let mut mu = vec![f64::NAN; n_areas];
    let mut p_pump = Vec::new();
    let mut h_pump = Vec::new();
    for p in model.pumps() {
        let PumpMode::Mode2 { m } = p.mode else {
            unreachable!("mode checked by caller")
        };
        let t = omega / m;
        let pp = (loads.total_heat(p.area) + area_source_gain(model, p.area) * t) / p.cop;
        tbar[p.area] = t;
        mu[p.area] = omega / p.cop;
        p_pump.push(pp);
        h_pump.push(p.cop * pp);
    }
    for a in 0..n_areas {
        if tbar[a].is_nan() {
            tbar[a] = heat_only_tbar(model, a, loads.total_heat(a))?;
            mu[a] = tbar[a];
        }
    }
    Ok(Partial {
        omega,
        tbar,
        p_pump,
        h_pump,
        mu,
    })
}

fn complete(model: &Model, loads: &Loads, part: Partial) -> Result<EquilibriumSolution, EquilibriumError> {
    let omega = part.omega;
    let p_gen: Vec<f64> = model.generators().iter().map(|g| -g.block.dc_gain() * omega).collect();
    let p_damp: Vec<f64> = model.system().buses.iter().map(|b| b.damping * omega).collect();
    let h_gen: Vec<f64> = model
        .sources()
        .iter()
        .map(|s| -s.block.dc_gain() * part.tbar[s.area])
        .collect();

    let mut temps = Vec::new();
    for (a, am) in model.areas().iter().enumerate() {
        let mut h = DVector::zeros(am.volumes.len());
        for (s, e) in model.sources().iter().enumerate().filter(|(_, e)| e.area == a) {
            h[e.edge] += h_gen[s];
        }
        for (k, p) in model.pumps().iter().enumerate().filter(|(_, p)| p.area == a) {
            h[p.edge] += part.h_pump[k];
        }
        for (e, hl) in loads.edge[a].iter().enumerate() {
            h[e] -= hl;
        }
        temps.push(profile(&am.transport, &am.volumes, &h, part.tbar[a])?);
    }

    // required net line inflow per bus
    let mut inflow = vec![0.0; model.system().buses.len()];
    for (j, b) in model.system().buses.iter().enumerate() {
        inflow[j] = loads.bus[j] + b.damping * omega;
    }
    for (g, e) in model.generators().iter().enumerate() {
        inflow[e.bus] -= p_gen[g];
    }
    for (k, p) in model.pumps().iter().enumerate() {
        inflow[p.bus] += part.p_pump[k];
    }
    let eta = solve_angles(model, &inflow)?;

    Ok(EquilibriumSolution {
        mode: model.mode(),
        omega_star: omega,
        tbar: part.tbar,
        p_gen,
        p_pump: part.p_pump,
        h_pump: part.h_pump,
        p_damp,
        h_gen,
        temps,
        lambda: omega,
        mu: part.mu,
        eta,
        loads: loads.clone(),
    })
}

fn expect_mode(model: &Model, expected: SystemMode) -> Result<(), EquilibriumError> {
    if model.mode() != expected {
        return Err(EquilibriumError::ModeMismatch {
            expected,
            got: model.mode(),
        });
    }
    Ok(())
}

/// Mode-1 steady state: pumps act as frequency-dependent loads, so the
/// electric side settles first and each area then balances its heat.
pub fn mode1_equilibrium(model: &Model, loads: &Loads) -> Result<EquilibriumSolution, EquilibriumError> {
    expect_mode(model, SystemMode::Mode1)?;
    let part = mode1_partial(model, loads)?;
    complete(model, loads, part)
}

/// Mode-2 steady state: each converter pins `Tbar_a = omega* / m_a`, which
/// couples every pumped area into one scalar balance.
pub fn mode2_equilibrium(model: &Model, loads: &Loads) -> Result<EquilibriumSolution, EquilibriumError> {
    expect_mode(model, SystemMode::Mode2)?;
    let part = mode2_partial(model, loads)?;
    complete(model, loads, part)
}

/// Dispatches on the system mode.
pub fn equilibrium(model: &Model, loads: &Loads) -> Result<EquilibriumSolution, EquilibriumError> {
    match model.mode() {
        SystemMode::Mode1 => mode1_equilibrium(model, loads),
        SystemMode::Mode2 => mode2_equilibrium(model, loads),
    }
}

// ---------------------------------------------------------------------------
// Temperature profile and line angles

fn profile(
    transport: &DMatrix<f64>,
    volumes: &DVector<f64>,
    h: &DVector<f64>,
    tbar: f64,
) -> Result<DVector<f64>, EquilibriumError> {
    let n = h.len();
    let sum = h.sum();
    if sum.abs() > 1e-9 {
        return Err(EquilibriumError::Inconsistent { sum });
    }
    let total = volumes.sum();
    // 1'A = 0 makes the rows dependent; the first is swapped for the anchor
    let mut m = transport.clone();
    for i in 0..n {
        m[(0, i)] = volumes[i] / total;
    }
    let h = h.add_scalar(-sum / n as f64);
    let lu = m.full_piv_lu();
    let solve = |rhs: &DVector<f64>, anchor: f64| {
        let mut b = rhs.clone();
        b[0] = anchor;
        lu.solve(&b)
            .ok_or(EquilibriumError::ProfileResidual { residual: f64::NAN })
    };
    let mut t = solve(&h, tbar)?;
    // one refinement pass
    let r = &h - transport * &t;
    t += solve(&r, tbar - volumes.dot(&t) / total)?;
    let residual = (transport * &t - &h).amax();
    if residual >= 1e-10 {
        return Err(EquilibriumError::ProfileResidual { residual });
    }
    Ok(t)
}

/// Temperatures `T*` with `A_h T* = h*` and volume-weighted mean `tbar`.
pub fn temperature_profile(area: &HeatArea, h: &DVector<f64>, tbar: f64) -> Result<DVector<f64>, EquilibriumError> {
    let transport = area.transport_matrix()?;
    if h.len() != area.dim() {
        return Err(TopologyError::Dimension {
            area: area.id.clone(),
            expected: area.dim(),
            got: h.len(),
        }
        .into());
    }
    profile(&transport, &area.volumes(), h, tbar)
}

/// Newton solve for bus angles `theta` (first bus fixed) such that the line
/// flows deliver `inflow`; lines keep their initial offsets, so
/// `eta = eta0 + theta_from - theta_to`.
fn solve_angles(model: &Model, inflow: &[f64]) -> Result<Vec<f64>, EquilibriumError> {
    let sys = model.system();
    let nb = sys.buses.len();
    let ends = model.line_ends();
    let eta_of = |theta: &[f64]| -> Vec<f64> {
        sys.lines
            .iter()
            .zip(ends)
            .map(|(l, &(f, t))| l.eta0 + theta[f] - theta[t])
            .collect()
    };
    let mismatch = |eta: &[f64]| -> DVector<f64> {
        let mut got = vec![0.0; nb];
        for ((l, &(f, t)), e) in sys.lines.iter().zip(ends).zip(eta) {
            let p = l.susceptance * e.sin();
            got[t] += p;
            got[f] -= p;
        }
        DVector::from_fn(nb - 1, |i, _| got[i + 1] - inflow[i + 1])
    };
    let scale = inflow.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-14 * scale;
    let mut theta = vec![0.0; nb];
    if nb > 1 {
        let mut eta = eta_of(&theta);
        let mut f = mismatch(&eta);
        let mut iters = 0;
        while f.amax() > tol {
            iters += 1;
            if iters > 100 {
                return Err(EquilibriumError::NoSecureAngles(format!(
                    "Newton did not converge (mismatch {:e})",
                    f.amax()
                )));
            }
            let mut jac = DMatrix::zeros(nb - 1, nb - 1);
            for ((l, &(fr, to)), e) in sys.lines.iter().zip(ends).zip(&eta) {
                let d = l.susceptance * e.cos();
                // d p / d theta_from = d, d p / d theta_to = -d
                for (row, sign) in [(to, 1.0), (fr, -1.0)] {
                    if row == 0 {
                        continue;
                    }
                    if fr != 0 {
                        jac[(row - 1, fr - 1)] += sign * d;
                    }
                    if to != 0 {
                        jac[(row - 1, to - 1)] -= sign * d;
                    }
                }
            }
            let step = jac
                .lu()
                .solve(&(-&f))
                .ok_or_else(|| EquilibriumError::NoSecureAngles("singular power-flow Jacobian".into()))?;
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = theta
                    .iter()
                    .enumerate()
                    .map(|(i, th)| if i == 0 { 0.0 } else { th + t * step[i - 1] })
                    .collect();
                let trial_eta = eta_of(&trial);
                let tf = mismatch(&trial_eta);
                if tf.amax() < f.amax() || t < 1e-6 {
                    theta = trial;
                    eta = trial_eta;
                    f = tf;
                    break;
                }
                t *= 0.5;
            }
        }
    }
    let eta = eta_of(&theta);
    if let Some(k) = eta.iter().position(|e| e.abs() >= FRAC_PI_2) {
        return Err(EquilibriumError::NoSecureAngles(format!(
            "line {} settles at eta = {:.4}",
            k, eta[k]
        )));
    }
    Ok(eta)
}

// ---------------------------------------------------------------------------
// States and cross-checks

/// Flat state vector realizing an equilibrium.
pub fn equilibrium_state(model: &Model, eq: &EquilibriumSolution) -> DVector<f64> {
    let lay = model.layout();
    let mut x = model.zero_state();
    for (k, e) in eq.eta.iter().enumerate() {
        x[lay.eta.start + k] = *e;
    }
    for role in model.roles() {
        if let BusRole::Inertial { slot } = *role {
            x[lay.omega.start + slot] = eq.omega_star;
        }
    }
    for (g, e) in model.generators().iter().enumerate() {
        x[lay.gen.start + g] = e.block.rest_state(eq.omega_star);
    }
    for (a, t) in eq.temps.iter().enumerate() {
        x.rows_mut(lay.temps[a].start, t.len()).copy_from(t);
    }
    for (s, e) in model.sources().iter().enumerate() {
        x[lay.heat.start + s] = e.block.rest_state(eq.tbar[e.area]);
    }
    x
}

/// Equilibrium under the loads in effect at `t = 0`: the natural initial
/// state for a disturbance study.
pub fn pre_disturbance_state(
    model: &Model,
    schedule: &DisturbanceSchedule,
) -> Result<DVector<f64>, EquilibriumError> {
    let loads = model.loads_at(schedule, 0.0)?;
    let eq = equilibrium(model, &loads)?;
    Ok(equilibrium_state(model, &eq))
}

/// Largest differences between the closed form and the QP routes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CrossCheck {
    /// `max |x_closed - x_qp|` over every allocation entry.
    pub analytic: f64,
    pub numeric: f64,
    /// `max |multiplier_closed - multiplier_qp|`.
    pub lambda_analytic: f64,
    pub lambda_numeric: f64,
    /// Largest balance residual of the closed form.
    pub balance: f64,
}

impl CrossCheck {
    pub fn worst(&self) -> f64 {
        self.analytic
            .max(self.numeric)
            .max(self.lambda_analytic)
            .max(self.lambda_numeric)
            .max(self.balance)
    }
}

fn compare(expected: &[f64], sol: &QpSolution) -> f64 {
    expected
        .iter()
        .zip(&sol.x)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Expected allocation for a QP, read from the closed form by label.
fn expected_values(model: &Model, eq: &EquilibriumSolution, spec: &QpSpec) -> Vec<f64> {
    let sys = model.system();
    spec.vars
        .iter()
        .map(|v| {
            let (kind, id) = v.label.split_once('[').expect("labels are kind[id]");
            let id = id.trim_end_matches(']');
            match kind {
                "pG" => {
                    let g = model
                        .generators()
                        .iter()
                        .position(|g| sys.buses[g.bus].id == id)
                        .expect("generator label");
                    eq.p_gen[g]
                }
                "pP" => {
                    let k = model
                        .pumps()
                        .iter()
                        .position(|p| sys.buses[p.bus].id == id)
                        .expect("pump label");
                    eq.p_pump[k]
                }
                "pU" => eq.p_damp[sys.bus_index(id).expect("bus label")],
                "hG" => {
                    let s = model
                        .sources()
                        .iter()
                        .position(|s| sys.areas[s.area].edges[s.edge].id == id)
                        .expect("source label");
                    eq.h_gen[s]
                }
                other => unreachable!("unknown label kind {other}"),
            }
        })
        .collect()
}

fn check_one(
    model: &Model,
    eq: &EquilibriumSolution,
    spec: &QpSpec,
    lambda: f64,
    out: &mut CrossCheck,
) -> Result<(), EquilibriumError> {
    if spec.vars.is_empty() {
        return Ok(());
    }
    let expected = expected_values(model, eq, spec);
    let a = solve_qp(spec)?;
    let n = solve_qp_numeric(spec)?;
    out.analytic = out.analytic.max(compare(&expected, &a));
    out.numeric = out.numeric.max(compare(&expected, &n));
    out.lambda_analytic = out.lambda_analytic.max((a.lambda - lambda).abs());
    out.lambda_numeric = out.lambda_numeric.max((n.lambda - lambda).abs());
    Ok(())
}

/// Solves the dispatch QPs of `eq`'s mode both ways and reports the largest
/// disagreement with the closed form.
pub fn cross_check(model: &Model, eq: &EquilibriumSolution) -> Result<CrossCheck, EquilibriumError> {
    let mut out = CrossCheck::default();
    let loads = &eq.loads;
    match model.mode() {
        SystemMode::Mode1 => {
            check_one(model, eq, &electric_qp(model, loads), eq.lambda, &mut out)?;
            for a in 0..model.areas().len() {
                check_one(model, eq, &heat_qp(model, a, loads, &eq.h_pump), eq.mu[a], &mut out)?;
            }
        }
        SystemMode::Mode2 => {
            check_one(model, eq, &combined_qp(model, loads), eq.lambda, &mut out)?;
            for a in 0..model.areas().len() {
                if model.pumps().iter().all(|p| p.area != a) {
                    check_one(model, eq, &heat_qp(model, a, loads, &eq.h_pump), eq.mu[a], &mut out)?;
                }
            }
        }
    }
    out.balance = eq.electric_residual().abs();
    for a in 0..model.areas().len() {
        out.balance = out.balance.max(eq.heat_residual(model, a).abs());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Matched Mode-1 gains

/// Total `sum a1` that makes a Mode-1 system settle at `omega_target` under
/// `loads`.
pub fn matched_mode1_gain(model: &Model, loads: &Loads, omega_target: f64) -> Result<f64, EquilibriumError> {
    expect_mode(model, SystemMode::Mode1)?;
    if omega_target == 0.0 {
        return Err(EquilibriumError::Unmatched(0.0));
    }
    let total = -loads.total_electric() / omega_target - sum_gen_gain(model) - sum_damping(model);
    if !(total > 0.0) {
        return Err(EquilibriumError::Unmatched(total));
    }
    Ok(total)
}

/// Copy of a Mode-1 system with the matched total gain split equally over
/// its pumps.
pub fn with_matched_gains(
    model: &Model,
    loads: &Loads,
    omega_target: f64,
) -> Result<CombinedSystem, EquilibriumError> {
    let total = matched_mode1_gain(model, loads, omega_target)?;
    let mut sys = model.system().clone();
    let n = sys.pumps.len();
    if n == 0 {
        return Err(EquilibriumError::Unmatched(total));
    }
    for p in &mut sys.pumps {
        p.mode = PumpMode::Mode1 { a1: total / n as f64 };
    }
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn final_eq(f: fixtures::Fixture) -> (Model, EquilibriumSolution) {
        let m = Model::new(f.system).unwrap();
        let loads = m.final_loads(&f.schedule).unwrap();
        let eq = equilibrium(&m, &loads).unwrap();
        (m, eq)
    }

    #[test]
    fn f1_mode1_values() {
        let (m, eq) = final_eq(fixtures::f1_mode1_fixture());
        assert_relative_eq!(eq.omega_star, -0.1, epsilon = 1e-15);
        assert_relative_eq!(eq.p_gen[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(eq.p_pump[0], -0.1, epsilon = 1e-15);
        assert_relative_eq!(eq.p_damp[0], -0.1, epsilon = 1e-15);
        assert_relative_eq!(eq.p_damp[1], -0.1, epsilon = 1e-15);
        assert_relative_eq!(eq.h_pump[0], -0.3, epsilon = 1e-15);
        assert_relative_eq!(eq.h_gen[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(eq.tbar[0], -0.3, epsilon = 1e-15);
        assert_eq!(eq.lambda, eq.omega_star);
        assert_eq!(eq.mu[0], eq.tbar[0]);
        let c = cross_check(&m, &eq).unwrap();
        assert!(c.worst() < 1e-10, "{c:?}");
    }

    #[test]
    fn f1_mode2_values() {
        let (m, eq) = final_eq(fixtures::f1_mode2_fixture());
        let w = -6.0 / 35.0;
        assert_relative_eq!(eq.omega_star, w, epsilon = 1e-15);
        assert_relative_eq!(eq.tbar[0], w, epsilon = 1e-15);
        assert_relative_eq!(eq.p_pump[0], -2.0 / 35.0, epsilon = 1e-15);
        assert_relative_eq!(eq.h_pump[0], w, epsilon = 1e-15);
        assert_relative_eq!(eq.h_gen[0], -w, epsilon = 1e-15);
        assert_relative_eq!(eq.p_gen[0], -w, epsilon = 1e-15);
        assert_relative_eq!(eq.mu[0], w / 3.0, epsilon = 1e-15);
        assert!(cross_check(&m, &eq).unwrap().worst() < 1e-10);
    }

    #[test]
    fn zero_loads_give_zero_solution() {
        for sys in [fixtures::f1_mode1(), fixtures::f1_mode2(), fixtures::f39_analog_mode2()] {
            let m = Model::new(sys).unwrap();
            let eq = equilibrium(&m, &m.base_loads()).unwrap();
            assert!(eq.starred().iter().all(|v| *v == 0.0));
            assert!(eq.eta.iter().all(|v| *v == 0.0));
            assert_eq!(equilibrium_state(&m, &eq), m.zero_state());
        }
    }

    #[test]
    fn wrong_mode_rejected() {
        let m = Model::new(fixtures::f1_mode2()).unwrap();
        assert!(matches!(
            mode1_equilibrium(&m, &m.base_loads()),
            Err(EquilibriumError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn unbalanced_without_regulation() {
        let mut sys = fixtures::f1_mode1();
        sys.buses[0].generator = None;
        sys.buses[0].kind = crate::netmodel::BusKind::Load;
        sys.buses[0].damping = 0.0;
        sys.buses[1].damping = 0.0;
        sys.pumps[0].mode = PumpMode::Mode1 { a1: 0.0 };
        let m = Model::new_unchecked(sys).unwrap();
        let mut loads = m.base_loads();
        loads.bus[1] = 0.4;
        assert_eq!(mode1_equilibrium(&m, &loads), Err(EquilibriumError::Unbalanced));
    }

    #[test]
    fn single_variable_qp() {
        let spec = QpSpec {
            vars: vec![QpVar::new("x", 2.0, 1.0)],
            rhs: 3.0,
        };
        let s = solve_qp(&spec).unwrap();
        assert_eq!(s.x, vec![3.0]);
        assert_eq!(s.lambda, -6.0);
        let n = solve_qp_numeric(&spec).unwrap();
        assert!((n.x[0] - 3.0).abs() < 1e-9 && (n.lambda + 6.0).abs() < 1e-9);
    }

    #[test]
    fn qp_errors_and_zero_rhs() {
        let empty = QpSpec { vars: vec![], rhs: 1.0 };
        assert_eq!(solve_qp(&empty), Err(QpError::Infeasible));
        let bad = QpSpec {
            vars: vec![QpVar::new("x", 0.0, 1.0)],
            rhs: 1.0,
        };
        assert!(matches!(solve_qp_numeric(&bad), Err(QpError::NonConvex(_))));
        let zero = QpSpec {
            vars: vec![QpVar::new("a", 1.0, 1.0), QpVar::new("b", 3.0, -1.0)],
            rhs: 0.0,
        };
        assert!(solve_qp_numeric(&zero).unwrap().x.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn profile_examples() {
        let area = fixtures::ring3_area();
        let t = temperature_profile(&area, &DVector::zeros(6), 0.7).unwrap();
        assert!(t.iter().all(|v| (v - 0.7).abs() < 1e-12));

        let h = DVector::from_vec(vec![-0.3, 0.3, 0.0, 0.0, 0.0, 0.0]);
        let t = temperature_profile(&area, &h, -0.3).unwrap();
        assert_relative_eq!(area.average_temperature(t.as_slice()).unwrap(), -0.3, epsilon = 1e-12);
        assert!((area.transport_matrix().unwrap() * &t - &h).amax() < 1e-10);

        let t2 = temperature_profile(&area, &(&h * 2.0), -0.6).unwrap();
        let shape = t.add_scalar(0.3);
        let shape2 = t2.add_scalar(0.6);
        assert!((shape * 2.0 - shape2).amax() < 1e-12);

        let bad = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            temperature_profile(&area, &bad, 0.0),
            Err(EquilibriumError::Inconsistent { .. })
        ));
    }

    #[test]
    fn equilibrium_state_is_at_rest() {
        for f in fixtures::all() {
            let (m, eq) = final_eq(f.clone());
            let x = equilibrium_state(&m, &eq);
            let r = m.rhs(&x, &eq.loads).amax();
            assert!(r < 1e-12, "{}: {r}", f.name);
            let out = m.outputs(&x, &eq.loads);
            assert!(out.omega.iter().all(|w| (w - eq.omega_star).abs() < 1e-12));
        }
    }

    #[test]
    fn matched_gain_reproduces_mode2_frequency() {
        let f2 = fixtures::f39_mode2_fixture();
        let m2 = Model::new(f2.system).unwrap();
        let loads = m2.final_loads(&f2.schedule).unwrap();
        let w2 = equilibrium(&m2, &loads).unwrap().omega_star;
        let m1 = Model::new(fixtures::f39_analog_mode1([1.0, 1.0])).unwrap();
        let sys = with_matched_gains(&m1, &loads, w2).unwrap();
        let m1 = Model::new(sys).unwrap();
        let w1 = equilibrium(&m1, &loads).unwrap().omega_star;
        assert_relative_eq!(w1, w2, epsilon = 1e-14);
    }
}
