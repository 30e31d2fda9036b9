//! Post-processing of sampled trajectories.

use crate::dynamics::{Model, ModelError};
use crate::schedule::DisturbanceSchedule;
use crate::solver::Trajectory;

/// Default half-width of the settling band, per unit.
pub const DEFAULT_BAND: f64 = 5e-4;
/// Default time a signal must stay inside the band before the end, seconds.
pub const DEFAULT_HOLD: f64 = 2.0;

/// Time after `after` at which `values` enters `[final - band, final + band]`
/// for good, relative to `after`. `None` if the signal never spends `hold`
/// seconds inside the band before the last sample.
pub fn settling_time(times: &[f64], values: &[f64], after: f64, band: f64, hold: f64) -> Option<f64> {
    assert_eq!(times.len(), values.len(), "times and values differ in length");
    let start = times.iter().position(|&t| t >= after)?;
    let (times, values) = (&times[start..], &values[start..]);
    let last = *values.last()?;
    let t_end = *times.last()?;
    let entry = match values.iter().rposition(|v| (v - last).abs() > band || v.is_nan()) {
        None => after,
        Some(k) => times[k + 1],
    };
    if t_end - entry < hold {
        return None;
    }
    Some(entry - after)
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Observed ratios `v_i / v_0` next to the cost-implied `c_0 / c_i`.
pub fn sharing_ratios(values: &[f64], costs: &[f64]) -> Vec<(f64, f64)> {
    match (values.first(), costs.first()) {
        (Some(&v0), Some(&c0)) => values
            .iter()
            .zip(costs)
            .map(|(v, c)| (v / v0, c0 / c))
            .collect(),
        _ => Vec::new(),
    }
}

/// Composite Simpson quadrature on possibly irregular abscissae; an odd
/// number of intervals gets a quadratic end correction, two points fall back
/// to the trapezoid.
pub fn simpson(x: &[f64], f: &[f64]) -> f64 {
    assert_eq!(x.len(), f.len(), "abscissae and values differ in length");
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (x[1] - x[0]) * (f[0] + f[1]);
    }
    let intervals = n - 1;
    let mut sum = 0.0;
    let mut i = 0;
    while i + 2 < n && i + 2 <= intervals - intervals % 2 {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        sum += (h0 + h1) / 6.0
            * ((2.0 - h1 / h0) * f[i] + (h0 + h1) * (h0 + h1) / (h0 * h1) * f[i + 1] + (2.0 - h0 / h1) * f[i + 2]);
        i += 2;
    }
    if intervals % 2 == 1 {
        let h1 = x[n - 1] - x[n - 2];
        let h0 = x[n - 2] - x[n - 3];
        let a = (2.0 * h1 * h1 + 3.0 * h1 * h0) / (6.0 * (h0 + h1));
        let b = (h1 * h1 + 3.0 * h1 * h0) / (6.0 * h0);
        let c = h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
        sum += a * f[n - 1] + b * f[n - 2] - c * f[n - 3];
    }
    sum
}

/// Stored versus supplied heat of one area over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    /// `Vol * (Tbar(t_end) - Tbar(0))`.
    pub stored: f64,
    /// Quadrature of `1'h` over the run.
    pub supplied: f64,
}

impl EnergyBalance {
    pub fn error(&self) -> f64 {
        (self.stored - self.supplied).abs()
    }
}

/// Integrates `1'h = 1'h^G + 1'h^P - 1'h^L` piecewise between disturbance
/// instants; each piece re-evaluates the outputs with its own loads, so the
/// integrand has no jump inside a piece.
pub fn heat_energy_balance(
    model: &Model,
    traj: &Trajectory,
    schedule: &DisturbanceSchedule,
    area: usize,
) -> Result<EnergyBalance, ModelError> {
    let t0 = traj.times[0];
    let t_end = traj.final_time();
    let mut bounds = vec![t0];
    bounds.extend(schedule.times().into_iter().filter(|&t| t > t0 && t < t_end));
    bounds.push(t_end);
    let mut supplied = 0.0;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let loads = model.loads_at(schedule, a)?;
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            if *t >= a && *t <= b {
                let out = model.outputs(x, &loads);
                let hg: f64 = model
                    .sources()
                    .iter()
                    .zip(&out.h_gen)
                    .filter(|(s, _)| s.area == area)
                    .map(|(_, h)| h)
                    .sum();
                let hp: f64 = model
                    .pumps()
                    .iter()
                    .zip(&out.h_pump)
                    .filter(|(p, _)| p.area == area)
                    .map(|(_, h)| h)
                    .sum();
                xs.push(*t);
                fs.push(hg + hp - loads.total_heat(area));
            }
        }
        supplied += simpson(&xs, &fs);
    }
    let vol = model.areas()[area].total_volume;
    let first = model.average_temperatures(&traj.states[0])[area];
    let last = model.average_temperatures(traj.final_state())[area];
    Ok(EnergyBalance {
        stored: vol * (last - first),
        supplied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::solver::{integrate, SimParams};
    use approx::assert_relative_eq;

    #[test]
    fn constant_signal_settles_immediately() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let v = vec![0.3; 100];
        assert_eq!(settling_time(&t, &v, 1.0, 5e-4, 2.0), Some(0.0));
    }

    #[test]
    fn step_response_settling() {
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|&t| 1.0 - (-t).exp()).collect();
        let s = settling_time(&t, &v, 0.0, 1e-2, 1.0).unwrap();
        // exp(-t) < 1e-2 + exp(-10) near t = 4.6
        assert!((s - 4.61).abs() < 0.02, "{s}");
        assert_eq!(settling_time(&t, &v, 0.0, 1e-2, 6.0), None);
    }

    #[test]
    fn simpson_exactness() {
        let quad = |x: &f64| x * x - x + 2.0;
        let int_quad = |a: f64| a.powi(3) / 3.0 - a * a / 2.0 + 2.0 * a;
        // irregular grid, odd and even interval counts
        for x in [&[0.0, 0.3, 0.5, 1.1, 1.2, 2.0][..], &[0.0, 0.3, 0.5, 1.1, 2.0][..]] {
            let f: Vec<f64> = x.iter().map(quad).collect();
            assert_relative_eq!(simpson(x, &f), int_quad(2.0), epsilon = 1e-12);
        }
        let x: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
        let f: Vec<f64> = x.iter().map(|x| x * x * x).collect();
        assert_relative_eq!(simpson(&x, &f), 4.0, epsilon = 1e-12);
        assert_eq!(simpson(&[1.0], &[3.0]), 0.0);
        assert_relative_eq!(simpson(&[0.0, 2.0], &[1.0, 3.0]), 4.0);
    }

    #[test]
    fn ratios() {
        let r = sharing_ratios(&[0.1, 0.2], &[2.0, 1.0]);
        assert_eq!(r, vec![(1.0, 1.0), (2.0, 2.0)]);
    }

    #[test]
    fn energy_bookkeeping_on_heat_step() {
        let f = fixtures::f1_heat_step_fixture();
        let m = Model::new(f.system).unwrap();
        let params = SimParams {
            t_end: 30.0,
            ..Default::default()
        };
        let tr = integrate(&m, &m.zero_state(), &params, &f.schedule).unwrap();
        let bal = heat_energy_balance(&m, &tr, &f.schedule, 0).unwrap();
        assert!(bal.stored.abs() > 1e-2);
        assert!(bal.error() < 1e-6, "{bal:?}");
    }
}
