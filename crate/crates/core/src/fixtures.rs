//! Reference systems shipped with the crate.
//!
//! * `f1_*`: two buses, one ring-shaped heating area with a pump, a heat
//!   source and a heat load.
//! * `f39_analog_*`: six buses, two heating areas, two generators and one
//!   pump per area; a scaled-down analog of a multi-area test network.

use crate::netmodel::{
    BlockKind, BusKind, CombinedSystem, EdgeRole, GeneratorSpec, HeatArea, HeatEdge, HeatNode,
    HeatSourceSpec, PowerBus, PowerLine, PumpCoupling, PumpMode,
};
use crate::schedule::{Disturbance, DisturbanceSchedule, TargetKind};

/// A system together with its disturbance steps and a suggested horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub system: CombinedSystem,
    pub schedule: DisturbanceSchedule,
    pub t_end: f64,
}

fn bus(id: &str, kind: BusKind, inertia: f64, damping: f64) -> PowerBus {
    PowerBus {
        id: id.into(),
        kind,
        inertia,
        damping,
        generator: None,
    }
}

fn gen_bus(id: &str, inertia: f64, damping: f64, tau: f64, cost: f64) -> PowerBus {
    PowerBus {
        generator: Some(GeneratorSpec {
            tau,
            cost,
            block: BlockKind::FirstOrder,
        }),
        ..bus(id, BusKind::Generator, inertia, damping)
    }
}

fn line(from: &str, to: &str, susceptance: f64) -> PowerLine {
    PowerLine {
        from: from.into(),
        to: to.into(),
        susceptance,
        eta0: 0.0,
    }
}

fn node(id: &str, volume: f64) -> HeatNode {
    HeatNode {
        id: id.into(),
        volume,
    }
}

fn edge(id: &str, from: &str, to: &str, volume: f64, flow: f64, role: EdgeRole) -> HeatEdge {
    HeatEdge {
        id: id.into(),
        from_node: from.into(),
        to_node: to.into(),
        volume,
        flow,
        role,
        source: None,
        load_base: 0.0,
    }
}

fn source(id: &str, from: &str, to: &str, volume: f64, flow: f64, tau: f64, cost: f64) -> HeatEdge {
    HeatEdge {
        source: Some(HeatSourceSpec {
            tau,
            cost,
            block: BlockKind::FirstOrder,
        }),
        ..edge(id, from, to, volume, flow, EdgeRole::Source)
    }
}

fn pump(bus: &str, area: &str, edge: &str, cop: f64, mode: PumpMode) -> PumpCoupling {
    PumpCoupling {
        bus: bus.into(),
        area: area.into(),
        edge: edge.into(),
        cop,
        mode,
    }
}

fn step(time: f64, target: TargetKind, id: &str, delta: f64) -> Disturbance {
    Disturbance {
        time,
        target,
        id: id.into(),
        delta,
    }
}

/// Ring of three nodes: `e1: n3 -> n1` (pump), `e2: n1 -> n2` (source),
/// `e3: n2 -> n3` (load); unit volumes and flows.
pub fn ring3_area() -> HeatArea {
    HeatArea {
        id: "a1".into(),
        nodes: vec![node("n1", 1.0), node("n2", 1.0), node("n3", 1.0)],
        edges: vec![
            edge("e1", "n3", "n1", 1.0, 1.0, EdgeRole::Pump),
            source("e2", "n1", "n2", 1.0, 1.0, 1.0, 1.0),
            edge("e3", "n2", "n3", 1.0, 1.0, EdgeRole::Load),
        ],
    }
}

/// Generator bus `b1` (M = 10, D = 1, tau = 1, Q = 1) linked by `B = 5` to
/// Mode-1 pump bus `b2` (M = 1, D = 1, a1 = 1, CoP = 3).
pub fn f1_mode1() -> CombinedSystem {
    CombinedSystem {
        buses: vec![
            gen_bus("b1", 10.0, 1.0, 1.0, 1.0),
            bus("b2", BusKind::PumpMode1, 1.0, 1.0),
        ],
        lines: vec![line("b1", "b2", 5.0)],
        areas: vec![ring3_area()],
        pumps: vec![pump("b2", "a1", "e1", 3.0, PumpMode::Mode1 { a1: 1.0 })],
    }
}

/// As [`f1_mode1`] but `b2` is a zero-inertia converter bus with `m = 1`.
pub fn f1_mode2() -> CombinedSystem {
    CombinedSystem {
        buses: vec![
            gen_bus("b1", 10.0, 1.0, 1.0, 1.0),
            bus("b2", BusKind::PumpConverter, 0.0, 0.0),
        ],
        lines: vec![line("b1", "b2", 5.0)],
        areas: vec![ring3_area()],
        pumps: vec![pump("b2", "a1", "e1", 3.0, PumpMode::Mode2 { m: 1.0 })],
    }
}

/// 0.4 p.u. load step at `t = 1` on the pump bus.
pub fn f1_mode1_fixture() -> Fixture {
    Fixture {
        name: "f1_mode1",
        system: f1_mode1(),
        schedule: DisturbanceSchedule::new(vec![step(1.0, TargetKind::Bus, "b2", 0.4)]),
        t_end: 200.0,
    }
}

/// 0.4 p.u. load step at `t = 1`; the converter bus carries no load, so the
/// step is applied at the generator bus.
pub fn f1_mode2_fixture() -> Fixture {
    Fixture {
        name: "f1_mode2",
        system: f1_mode2(),
        schedule: DisturbanceSchedule::new(vec![step(1.0, TargetKind::Bus, "b1", 0.4)]),
        t_end: 800.0,
    }
}

/// F1 Mode 1 with a heat-load step only; the pump stays at zero.
pub fn f1_heat_step_fixture() -> Fixture {
    Fixture {
        name: "f1_heat_step",
        system: f1_mode1(),
        schedule: DisturbanceSchedule::new(vec![step(1.0, TargetKind::Edge, "e3", 0.2)]),
        t_end: 200.0,
    }
}

fn f39_areas() -> Vec<HeatArea> {
    vec![
        // main ring n1 -> n2 -> n3 -> n4 -> n1 with a bypass loop n2 <-> n4
        HeatArea {
            id: "A".into(),
            nodes: vec![node("A.n1", 1.0), node("A.n2", 1.5), node("A.n3", 1.0), node("A.n4", 2.0)],
            edges: vec![
                edge("A.e1", "A.n4", "A.n1", 1.0, 1.0, EdgeRole::Pump),
                source("A.e2", "A.n1", "A.n2", 1.5, 1.0, 2.0, 2.0),
                edge("A.e3", "A.n2", "A.n3", 2.0, 1.0, EdgeRole::Load),
                source("A.e4", "A.n3", "A.n4", 1.0, 1.0, 1.5, 1.0),
                edge("A.e5", "A.n2", "A.n4", 1.0, 0.5, EdgeRole::Pipe),
                edge("A.e6", "A.n4", "A.n2", 1.0, 0.5, EdgeRole::Pipe),
            ],
        },
        // ring m1 -> m2 -> m3 -> m1 plus a load loop m1 -> m3 -> m1
        HeatArea {
            id: "B".into(),
            nodes: vec![node("B.n1", 1.0), node("B.n2", 1.0), node("B.n3", 1.5)],
            edges: vec![
                edge("B.e1", "B.n3", "B.n1", 1.0, 1.0, EdgeRole::Pump),
                source("B.e2", "B.n1", "B.n2", 1.0, 1.0, 1.0, 2.0),
                source("B.e3", "B.n2", "B.n3", 1.5, 1.0, 2.5, 1.0),
                edge("B.e4", "B.n1", "B.n3", 2.0, 0.5, EdgeRole::Load),
                edge("B.e5", "B.n3", "B.n1", 1.0, 0.5, EdgeRole::Pipe),
            ],
        },
    ]
}

fn f39_power(pump_kind: BusKind, pump_damping: f64) -> (Vec<PowerBus>, Vec<PowerLine>) {
    let buses = vec![
        gen_bus("g1", 8.0, 1.0, 2.0, 2.0),
        gen_bus("g2", 6.0, 0.8, 1.5, 1.0),
        bus("l3", BusKind::Load, 0.0, 1.2),
        bus("l4", BusKind::Load, 2.0, 1.0),
        bus("p5", pump_kind, 0.0, pump_damping),
        bus("p6", pump_kind, 0.0, pump_damping),
    ];
    let lines = vec![
        line("g1", "l3", 3.0),
        line("g2", "l4", 4.0),
        line("l3", "l4", 2.0),
        line("g1", "g2", 4.0),
        line("l3", "p5", 2.0),
        line("l4", "p6", 2.0),
    ];
    (buses, lines)
}

/// Converter slopes of the two areas in the Mode-2 variant.
pub const F39_SLOPES: [f64; 2] = [0.5, 0.8];
/// Pump coefficients of performance, areas A and B.
pub const F39_COP: [f64; 2] = [3.0, 2.5];
/// Damping of the Mode-1 pump buses.
pub const F39_PUMP_DAMPING: f64 = 0.05;

/// Mode-2 variant: `p5`, `p6` are converter buses feeding areas A and B.
pub fn f39_analog_mode2() -> CombinedSystem {
    let (buses, lines) = f39_power(BusKind::PumpConverter, 0.0);
    CombinedSystem {
        buses,
        lines,
        areas: f39_areas(),
        pumps: vec![
            pump("p5", "A", "A.e1", F39_COP[0], PumpMode::Mode2 { m: F39_SLOPES[0] }),
            pump("p6", "B", "B.e1", F39_COP[1], PumpMode::Mode2 { m: F39_SLOPES[1] }),
        ],
    }
}

/// Mode-1 variant: `p5`, `p6` are zero-inertia pump buses with gains `a1`.
pub fn f39_analog_mode1(a1: [f64; 2]) -> CombinedSystem {
    let (buses, lines) = f39_power(BusKind::PumpMode1, F39_PUMP_DAMPING);
    CombinedSystem {
        buses,
        lines,
        areas: f39_areas(),
        pumps: vec![
            pump("p5", "A", "A.e1", F39_COP[0], PumpMode::Mode1 { a1: a1[0] }),
            pump("p6", "B", "B.e1", F39_COP[1], PumpMode::Mode1 { a1: a1[1] }),
        ],
    }
}

pub fn f39_schedule() -> DisturbanceSchedule {
    DisturbanceSchedule::new(vec![
        step(1.0, TargetKind::Bus, "l3", 0.3),
        step(1.0, TargetKind::Bus, "l4", 0.1),
        step(1.0, TargetKind::Edge, "A.e3", 0.15),
    ])
}

pub fn f39_mode1_fixture() -> Fixture {
    Fixture {
        name: "f39_analog_mode1",
        system: f39_analog_mode1([0.5, 0.5]),
        schedule: f39_schedule(),
        t_end: 400.0,
    }
}

pub fn f39_mode2_fixture() -> Fixture {
    Fixture {
        name: "f39_analog_mode2",
        system: f39_analog_mode2(),
        schedule: f39_schedule(),
        t_end: 400.0,
    }
}

/// Every bundled fixture.
pub fn all() -> Vec<Fixture> {
    vec![
        f1_mode1_fixture(),
        f1_mode2_fixture(),
        f1_heat_step_fixture(),
        f39_mode1_fixture(),
        f39_mode2_fixture(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::validate;

    #[test]
    fn every_fixture_is_valid() {
        for f in all() {
            let report = validate(&f.system);
            assert!(!report.has_errors(), "{}: {report}", f.name);
            let model = crate::dynamics::Model::new(f.system.clone()).unwrap();
            model.check_schedule(&f.schedule).unwrap();
        }
    }
}
