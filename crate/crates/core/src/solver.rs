//! Explicit time integration of a compiled [`Model`].
//!
//! Disturbance instants are always step boundaries, so each step sees a
//! constant load vector.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AlgebraicOutputs, Loads, Model, ModelError};
use crate::schedule::DisturbanceSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("state diverged (non-finite component) at t = {t}")]
    Divergence { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    Rk45,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Rk45 => "rk45",
        }
    }
}

pub const DEFAULT_STEADY_EPS: f64 = 1e-8;
pub const DEFAULT_STEADY_HOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub t_end: f64,
    /// Fixed step for RK4, initial step for RK45.
    pub dt: f64,
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Keep every n-th step (the initial and final states are always kept).
    pub sample_every: usize,
    /// Threshold on `||rhs||_inf` for steady-state detection.
    pub steady_eps: f64,
    /// Seconds the threshold must hold.
    pub steady_hold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            t_end: 200.0,
            dt: 0.01,
            method: Method::Rk4,
            rtol: 1e-9,
            atol: 1e-12,
            sample_every: 1,
            steady_eps: DEFAULT_STEADY_EPS,
            steady_hold: DEFAULT_STEADY_HOLD,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidParams(msg.to_string()));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be > 0");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be > 0");
        }
        if self.sample_every == 0 {
            return bad("sample_every must be >= 1");
        }
        if !(self.steady_eps > 0.0 && self.steady_hold >= 0.0) {
            return bad("steady_eps must be > 0 and steady_hold >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyInfo {
    pub converged: bool,
    /// Time at which the hold was satisfied (or `t_end`).
    pub time: f64,
    /// `||rhs||_inf` at the returned state.
    pub residual: f64,
    pub eps: f64,
    pub hold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<AlgebraicOutputs>,
    /// Some `|eta| >= pi/2` was visited at a step boundary.
    pub security_violation: bool,
    pub first_security_time: Option<f64>,
    pub steady: Option<SteadyInfo>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn final_outputs(&self) -> &AlgebraicOutputs {
        self.outputs.last().expect("trajectory has at least one sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }
}

struct Recorder<'a> {
    model: &'a Model,
    traj: Trajectory,
    sample_every: usize,
    steps: usize,
}

impl<'a> Recorder<'a> {
    fn push(&mut self, t: f64, x: &DVector<f64>, loads: &Loads) {
        if self.traj.times.last() == Some(&t) {
            return;
        }
        self.traj.times.push(t);
        self.traj.states.push(x.clone());
        self.traj.outputs.push(self.model.outputs(x, loads));
    }

    fn after_step(&mut self, t: f64, x: &DVector<f64>, loads: &Loads) -> Result<(), SolverError> {
        self.steps += 1;
        self.traj.accepted_steps += 1;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Divergence { t });
        }
        if self.model.line_flows(x).1 && !self.traj.security_violation {
            self.traj.security_violation = true;
            self.traj.first_security_time = Some(t);
        }
        if self.steps.is_multiple_of(self.sample_every) {
            self.push(t, x, loads);
        }
        Ok(())
    }
}

struct SteadyTracker {
    eps: f64,
    hold: f64,
    after: f64,
    since: Option<f64>,
}

impl SteadyTracker {
    /// Returns true once the residual has stayed below `eps` for `hold`.
    fn update(&mut self, t: f64, residual: f64) -> bool {
        if t < self.after || residual >= self.eps {
            self.since = None;
            return false;
        }
        let since = *self.since.get_or_insert(t);
        t - since >= self.hold
    }
}

fn rk4_step(model: &Model, x: &DVector<f64>, k1: &DVector<f64>, h: f64, loads: &Loads) -> DVector<f64> {
    let k2 = model.rhs(&(x + k1 * (h / 2.0)), loads);
    let k3 = model.rhs(&(x + &k2 * (h / 2.0)), loads);
    let k4 = model.rhs(&(x + &k3 * h), loads);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince attempt. Returns the 5th-order state, its derivative
/// (first stage of the next step) and the scaled error norm.
fn dp_step(
    model: &Model,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    loads: &Loads,
    rtol: f64,
    atol: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(k1.clone());
    for s in 1..6 {
        let mut xs = x.clone();
        for (j, kj) in k.iter().enumerate() {
            if DP_A[s][j] != 0.0 {
                xs.axpy(h * DP_A[s][j], kj, 1.0);
            }
        }
        debug_assert!(DP_C[s] > 0.0);
        k.push(model.rhs(&xs, loads));
    }
    let mut x5 = x.clone();
    for (j, kj) in k.iter().enumerate() {
        if DP_B5[j] != 0.0 {
            x5.axpy(h * DP_B5[j], kj, 1.0);
        }
    }
    let k7 = model.rhs(&x5, loads);
    k.push(k7.clone());
    let mut err: f64 = 0.0;
    for i in 0..x.len() {
        let e: f64 = (0..7).map(|j| (DP_B5[j] - DP_B4[j]) * k[j][i]).sum::<f64>() * h;
        let scale = atol + rtol * x[i].abs().max(x5[i].abs());
        err = err.max((e / scale).abs());
    }
    (x5, k7, err)
}

/// Segment boundaries `[0, t_1, ..., t_end]` from the disturbance instants.
fn segments(params: &SimParams, schedule: &DisturbanceSchedule) -> Vec<f64> {
    let mut b = vec![0.0];
    b.extend(
        schedule
            .times()
            .into_iter()
            .filter(|&t| t > 0.0 && t < params.t_end),
    );
    b.push(params.t_end);
    b
}

fn run(
    model: &Model,
    x0: &DVector<f64>,
    params: &SimParams,
    schedule: &DisturbanceSchedule,
    steady: Option<SteadyTracker>,
) -> Result<Trajectory, SolverError> {
    params.validate()?;
    if x0.len() != model.dim() {
        return Err(ModelError::Dimension {
            expected: model.dim(),
            got: x0.len(),
        }
        .into());
    }
    model.check_schedule(schedule)?;

    let mut rec = Recorder {
        model,
        traj: Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
            security_violation: false,
            first_security_time: None,
            steady: None,
            accepted_steps: 0,
            rejected_steps: 0,
        },
        sample_every: params.sample_every,
        steps: 0,
    };
    let mut tracker = steady;
    let bounds = segments(params, schedule);
    let mut x = x0.clone();
    let loads0 = model.loads_at(schedule, 0.0)?;
    rec.push(0.0, &x, &loads0);
    if model.line_flows(&x).1 {
        rec.traj.security_violation = true;
        rec.traj.first_security_time = Some(0.0);
    }

    let mut residual = model.rhs(&x, &loads0).amax();
    if let Some(tr) = &tracker {
        if tr.after <= 0.0 && residual < tr.eps {
            rec.traj.steady = Some(SteadyInfo {
                converged: true,
                time: 0.0,
                residual,
                eps: tr.eps,
                hold: tr.hold,
            });
            return Ok(rec.traj);
        }
    }

    let mut h_adapt = params.dt;
    let mut t = 0.0;
    'segments: for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let loads = model.loads_at(schedule, a)?;
        let mut k1 = model.rhs(&x, &loads);
        match params.method {
            Method::Rk4 => {
                let n = ((b - a) / params.dt - 1e-9).ceil().max(1.0) as usize;
                let h = (b - a) / n as f64;
                for i in 1..=n {
                    x = rk4_step(model, &x, &k1, h, &loads);
                    t = if i == n { b } else { a + i as f64 * h };
                    let step_loads = if i == n { model.loads_at(schedule, t)? } else { loads.clone() };
                    rec.after_step(t, &x, &step_loads)?;
                    k1 = model.rhs(&x, &loads);
                    residual = if i == n { model.rhs(&x, &step_loads).amax() } else { k1.amax() };
                    if let Some(tr) = tracker.as_mut() {
                        if tr.update(t, residual) {
                            break 'segments;
                        }
                    }
                }
            }
            Method::Rk45 => {
                t = a;
                while t < b {
                    let last = h_adapt >= b - t;
                    let h = if last { b - t } else { h_adapt };
                    if h <= 1e-14 * t.abs().max(1.0) {
                        return Err(SolverError::StepUnderflow { t });
                    }
                    let (xn, kn, err) = dp_step(model, &x, &k1, h, &loads, params.rtol, params.atol);
                    if !err.is_finite() && xn.iter().any(|v| !v.is_finite()) && h < 1e-10 {
                        return Err(SolverError::Divergence { t });
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if err <= 1.0 {
                        x = xn;
                        k1 = kn;
                        t = if last { b } else { t + h };
                        let step_loads = if last { model.loads_at(schedule, t)? } else { loads.clone() };
                        rec.after_step(t, &x, &step_loads)?;
                        residual = if last { model.rhs(&x, &step_loads).amax() } else { k1.amax() };
                        if !last {
                            h_adapt = h * factor;
                        }
                        if let Some(tr) = tracker.as_mut() {
                            if tr.update(t, residual) {
                                break 'segments;
                            }
                        }
                    } else {
                        rec.traj.rejected_steps += 1;
                        h_adapt = h * if factor.is_finite() { factor } else { 0.2 };
                    }
                }
            }
        }
    }

    let final_loads = model.loads_at(schedule, t)?;
    rec.push(t, &x, &final_loads);
    if let Some(tr) = tracker {
        let converged = tr.since.is_some_and(|s| t - s >= tr.hold);
        rec.traj.steady = Some(SteadyInfo {
            converged,
            time: t,
            residual,
            eps: tr.eps,
            hold: tr.hold,
        });
    }
    Ok(rec.traj)
}

/// Integrates over `[0, t_end]`.
pub fn integrate(
    model: &Model,
    x0: &DVector<f64>,
    params: &SimParams,
    schedule: &DisturbanceSchedule,
) -> Result<Trajectory, SolverError> {
    run(model, x0, params, schedule, None)
}

/// Integrates until `||rhs||_inf < steady_eps` has held for `steady_hold`
/// seconds after the last disturbance, or until `t_end`. The returned
/// trajectory's `steady` field records which one happened.
pub fn integrate_to_steady(
    model: &Model,
    x0: &DVector<f64>,
    params: &SimParams,
    schedule: &DisturbanceSchedule,
) -> Result<(Trajectory, DVector<f64>), SolverError> {
    let tracker = SteadyTracker {
        eps: params.steady_eps,
        hold: params.steady_hold,
        after: schedule.last_time().unwrap_or(0.0).max(0.0),
        since: None,
    };
    let traj = run(model, x0, params, schedule, Some(tracker))?;
    let x = traj.final_state().clone();
    Ok((traj, x))
}
