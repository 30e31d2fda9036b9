//! Seeded generators for random valid systems, plus a dense KKT oracle.
#![allow(dead_code)]

use heatfreq_core::equilibrium::QpSpec;
use heatfreq_core::netmodel::{
    BlockKind, BusKind, CombinedSystem, EdgeRole, GeneratorSpec, HeatArea, HeatEdge, HeatNode, HeatSourceSpec,
    PowerBus, PowerLine, PumpCoupling, PumpMode,
};
use heatfreq_core::{Loads, Model};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn block(rng: &mut ChaCha8Rng) -> BlockKind {
    if rng.random_bool(0.3) {
        BlockKind::LeadLag {
            alpha: rng.random_range(0.2..3.0),
        }
    } else {
        BlockKind::FirstOrder
    }
}

/// Random area with conserved flows: a Hamiltonian ring plus a few extra
/// cycles. When `pump` is set, the first ring edge has the pump role.
pub fn random_area(rng: &mut ChaCha8Rng, id: &str, pump: bool) -> HeatArea {
    let n = rng.random_range(3..=7);
    let nodes: Vec<HeatNode> = (0..n)
        .map(|k| HeatNode {
            id: format!("{id}.n{k}"),
            volume: rng.random_range(0.5..3.0),
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut arcs: Vec<(usize, usize, f64)> = Vec::new();
    let q0 = rng.random_range(0.5..2.0);
    for i in 0..n {
        arcs.push((order[i], order[(i + 1) % n], q0));
    }
    for _ in 0..rng.random_range(0..=3) {
        let len = rng.random_range(2..=n.min(4));
        let mut pick: Vec<usize> = (0..n).collect();
        pick.shuffle(rng);
        let q = rng.random_range(0.2..1.0);
        for i in 0..len {
            arcs.push((pick[i], pick[(i + 1) % len], q));
        }
    }

    let m = arcs.len();
    let mut roles = vec![EdgeRole::Pipe; m];
    let mut free: Vec<usize> = if pump {
        roles[0] = EdgeRole::Pump;
        (1..m).collect()
    } else {
        (0..m).collect()
    };
    free.shuffle(rng);
    let n_src = rng.random_range(1..=3.min(free.len() - 1));
    for &e in &free[..n_src] {
        roles[e] = EdgeRole::Source;
    }
    let n_load = rng.random_range(1..=2.min(free.len() - n_src));
    for &e in &free[n_src..n_src + n_load] {
        roles[e] = EdgeRole::Load;
    }

    let edges = arcs
        .iter()
        .zip(&roles)
        .enumerate()
        .map(|(k, (&(a, b, q), &role))| HeatEdge {
            id: format!("{id}.e{k}"),
            from_node: nodes[a].id.clone(),
            to_node: nodes[b].id.clone(),
            volume: rng.random_range(0.5..3.0),
            flow: q,
            role,
            source: (role == EdgeRole::Source).then(|| HeatSourceSpec {
                tau: rng.random_range(0.5..4.0),
                cost: rng.random_range(0.5..3.0),
                block: block(rng),
            }),
            load_base: 0.0,
        })
        .collect();
    HeatArea {
        id: id.into(),
        nodes,
        edges,
    }
}

/// Random valid system. `mode2` selects converter-linked pumps.
pub fn random_system(seed: u64, mode2: bool) -> CombinedSystem {
    let mut rng = rng(seed);
    let n_areas = rng.random_range(1..=2);
    let n_plain = rng.random_range(1..=4);
    let mut buses = Vec::new();
    for j in 0..n_plain {
        let generator = (j == 0 || rng.random_bool(0.4)).then(|| GeneratorSpec {
            tau: rng.random_range(0.5..4.0),
            cost: rng.random_range(0.5..3.0),
            block: block(&mut rng),
        });
        let inertia = if j == 0 || rng.random_bool(0.7) {
            rng.random_range(1.0..10.0)
        } else {
            0.0
        };
        buses.push(PowerBus {
            id: format!("b{j}"),
            kind: if generator.is_some() {
                BusKind::Generator
            } else {
                BusKind::Load
            },
            inertia,
            damping: rng.random_range(0.2..2.0),
            generator,
        });
    }
    let mut areas = Vec::new();
    let mut pumps = Vec::new();
    for a in 0..n_areas {
        let id = format!("h{a}");
        let area = random_area(&mut rng, &id, true);
        let bus_id = format!("p{a}");
        let (kind, inertia, damping, mode) = if mode2 {
            (
                BusKind::PumpConverter,
                0.0,
                0.0,
                PumpMode::Mode2 {
                    m: rng.random_range(0.3..1.5),
                },
            )
        } else {
            let inertia = if rng.random_bool(0.5) {
                rng.random_range(0.5..3.0)
            } else {
                0.0
            };
            (
                BusKind::PumpMode1,
                inertia,
                rng.random_range(0.05..1.0),
                PumpMode::Mode1 {
                    a1: rng.random_range(0.2..2.0),
                },
            )
        };
        buses.push(PowerBus {
            id: bus_id.clone(),
            kind,
            inertia,
            damping,
            generator: None,
        });
        pumps.push(PumpCoupling {
            bus: bus_id,
            area: id,
            edge: area.edges[0].id.clone(),
            cop: rng.random_range(2.0..4.5),
            mode,
        });
        areas.push(area);
    }
    // spanning tree plus an optional chord
    let nb = buses.len();
    let mut lines = Vec::new();
    for j in 1..nb {
        let k = rng.random_range(0..j.min(n_plain));
        lines.push(PowerLine {
            from: buses[k].id.clone(),
            to: buses[j].id.clone(),
            susceptance: rng.random_range(5.0..15.0),
            eta0: 0.0,
        });
    }
    if n_plain >= 3 && rng.random_bool(0.5) {
        lines.push(PowerLine {
            from: buses[n_plain - 1].id.clone(),
            to: buses[0].id.clone(),
            susceptance: rng.random_range(5.0..15.0),
            eta0: 0.0,
        });
    }
    CombinedSystem {
        buses,
        lines,
        areas,
        pumps,
    }
}

/// Random loads on every non-converter bus and every load edge.
pub fn random_loads(model: &Model, seed: u64) -> Loads {
    let mut rng = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut loads = model.base_loads();
    for (j, b) in model.system().buses.iter().enumerate() {
        if b.kind != BusKind::PumpConverter {
            loads.bus[j] = rng.random_range(-0.3..0.3);
        }
    }
    for (a, area) in model.system().areas.iter().enumerate() {
        for (e, edge) in area.edges.iter().enumerate() {
            if edge.role == EdgeRole::Load {
                loads.edge[a][e] = rng.random_range(-0.2..0.2);
            }
        }
    }
    loads
}

/// Solves the full KKT system `[Q s; s' 0] [x; l] = [0; r]` by LU.
pub fn dense_kkt(spec: &QpSpec) -> (Vec<f64>, f64) {
    let n = spec.vars.len();
    let mut k = DMatrix::zeros(n + 1, n + 1);
    let mut b = DVector::zeros(n + 1);
    for (i, v) in spec.vars.iter().enumerate() {
        k[(i, i)] = v.cost;
        k[(i, n)] = v.coeff;
        k[(n, i)] = v.coeff;
    }
    b[n] = spec.rhs;
    let sol = k.lu().solve(&b).expect("KKT matrix is nonsingular");
    (sol.rows(0, n).iter().copied().collect(), sol[n])
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
