use approx::assert_relative_eq;
use heatfreq_core::equilibrium::{equilibrium, equilibrium_state};
use heatfreq_core::fixtures;
use heatfreq_core::lyapunov::{audit, audit_segments, StorageKind};
use heatfreq_core::netmodel::BlockKind;
use heatfreq_core::solver::{integrate, integrate_to_steady, Method, SimParams};
use heatfreq_core::{Disturbance, DisturbanceSchedule, Model, TargetKind};

#[test]
fn f1_mode1_frequency_settles_at_oracle() {
    let f = fixtures::f1_mode1_fixture();
    let m = Model::new(f.system).unwrap();
    let params = SimParams {
        t_end: 200.0,
        ..Default::default()
    };
    let tr = integrate(&m, &m.zero_state(), &params, &f.schedule).unwrap();
    for w in &tr.final_outputs().omega {
        assert!((w + 0.1).abs() < 1e-6, "{w}");
    }
    assert!(!tr.security_violation);
}

#[test]
fn steady_states_match_oracles() {
    for f in [fixtures::f1_mode1_fixture(), fixtures::f1_mode2_fixture()] {
        let m = Model::new(f.system.clone()).unwrap();
        let eq = equilibrium(&m, &m.final_loads(&f.schedule).unwrap()).unwrap();
        let params = SimParams {
            t_end: f.t_end,
            ..Default::default()
        };
        let (tr, x) = integrate_to_steady(&m, &m.zero_state(), &params, &f.schedule).unwrap();
        assert!(tr.steady.unwrap().converged, "{}", f.name);
        assert!((&x - equilibrium_state(&m, &eq)).amax() < 1e-6, "{}", f.name);
    }
    let f = fixtures::f1_mode2_fixture();
    let m = Model::new(f.system).unwrap();
    let params = SimParams {
        t_end: f.t_end,
        ..Default::default()
    };
    let (_, x) = integrate_to_steady(&m, &m.zero_state(), &params, &f.schedule).unwrap();
    assert_relative_eq!(m.average_temperatures(&x)[0], -6.0 / 35.0, epsilon = 1e-6);
}

#[test]
fn adaptive_agrees_with_fixed_step() {
    let f = fixtures::f39_mode2_fixture();
    let m = Model::new(f.system).unwrap();
    let base = SimParams {
        t_end: 20.0,
        ..Default::default()
    };
    let rk4 = integrate(&m, &m.zero_state(), &base, &f.schedule).unwrap();
    let rk45 = integrate(
        &m,
        &m.zero_state(),
        &SimParams {
            method: Method::Rk45,
            rtol: 1e-10,
            atol: 1e-12,
            ..base
        },
        &f.schedule,
    )
    .unwrap();
    assert!((rk4.final_state() - rk45.final_state()).amax() < 1e-7);
    assert!(rk45.accepted_steps < rk4.accepted_steps);
}

#[test]
fn lead_lag_generators_keep_audit_passing() {
    let f = fixtures::f1_mode1_fixture();
    let mut sys = f.system.clone();
    sys.buses[0].generator.as_mut().unwrap().block = BlockKind::LeadLag { alpha: 2.5 };
    let m = Model::new(sys).unwrap();
    let params = SimParams {
        t_end: 60.0,
        ..Default::default()
    };
    let tr = integrate(&m, &m.zero_state(), &params, &f.schedule).unwrap();
    let res = audit(&m, &tr, &f.schedule, StorageKind::V1e, 1e-9).unwrap();
    assert!(res.passed(), "{:?}", res.report);
    // steady-state sharing only sees the DC gain
    let eq = equilibrium(&m, &m.final_loads(&f.schedule).unwrap()).unwrap();
    assert_relative_eq!(eq.omega_star, -0.1, epsilon = 1e-15);
}

#[test]
fn audit_restarts_at_each_disturbance() {
    let f = fixtures::f1_mode2_fixture();
    let m = Model::new(f.system).unwrap();
    let schedule = DisturbanceSchedule::new(vec![
        Disturbance {
            time: 1.0,
            target: TargetKind::Bus,
            id: "b1".into(),
            delta: 0.4,
        },
        Disturbance {
            time: 20.0,
            target: TargetKind::Edge,
            id: "e3".into(),
            delta: -0.1,
        },
    ]);
    let params = SimParams {
        t_end: 60.0,
        ..Default::default()
    };
    let tr = integrate(&m, &m.zero_state(), &params, &schedule).unwrap();
    let windows = audit_segments(&m, &tr, &schedule, StorageKind::V2, 1e-9).unwrap();
    assert_eq!(windows.len(), 3);
    assert!(windows.iter().all(|w| w.passed()));
    assert_eq!(windows[1].times.first(), Some(&1.0));
    assert_eq!(windows[1].times.last(), Some(&20.0));
}

#[test]
fn negative_damping_breaks_the_audit() {
    let f = fixtures::f1_mode1_fixture();
    let mut sys = f.system.clone();
    for b in &mut sys.buses {
        b.damping = -3.0;
    }
    let m = Model::new_unchecked(sys).unwrap();
    let params = SimParams {
        t_end: 30.0,
        ..Default::default()
    };
    let tr = integrate(&m, &m.zero_state(), &params, &f.schedule).unwrap();
    let res = audit(&m, &tr, &f.schedule, StorageKind::V1e, 1e-9).unwrap();
    assert!(!res.passed());
    assert!(res.first_violation_time().unwrap() >= 1.0);
}
