//! Right-hand side of the coupled power/heat dynamics.
//!
//! A [`Model`] is compiled once from a validated [`CombinedSystem`]. It fixes
//! the state layout, resolves ids to indices and caches the heat transport
//! matrices. Buses without inertia are eliminated algebraically, so the
//! result is a plain ODE in `(eta, omega, generator states, T, source states)`.

mod block;

pub use block::{log_grid, passivity_margin, IoBlock, LinearBlock, PassivityError};

use std::f64::consts::FRAC_PI_2;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::netmodel::{
    validate, CombinedSystem, EdgeRole, PumpMode, SystemMode, TopologyError, ValidationReport,
};
use crate::schedule::{DisturbanceSchedule, TargetKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("system failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("state has length {got}, layout expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("disturbance targets unknown {kind} `{id}`")]
    UnknownTarget { kind: &'static str, id: String },
    #[error("disturbance target `{0}` cannot carry a load")]
    InvalidTarget(String),
}

/// Index ranges of each block of the flat state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub eta: Range<usize>,
    pub omega: Range<usize>,
    pub gen: Range<usize>,
    /// Per area, stacked `(T^E, T^N)`.
    pub temps: Vec<Range<usize>>,
    pub heat: Range<usize>,
    pub dim: usize,
    labels: Vec<String>,
}

impl StateLayout {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// How the frequency of a bus is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusRole {
    /// Integrated from the swing equation; `slot` indexes the omega block.
    Inertial { slot: usize },
    /// Zero inertia, solved from the bus power balance.
    Algebraic,
    /// Pump converter; frequency is `m * Tbar` of the pump's area.
    Converter { pump: usize },
}

#[derive(Debug, Clone)]
pub struct GeneratorEntry {
    pub bus: usize,
    pub block: LinearBlock,
}

#[derive(Debug, Clone)]
pub struct SourceEntry {
    pub area: usize,
    pub edge: usize,
    pub block: LinearBlock,
}

#[derive(Debug, Clone)]
pub struct PumpEntry {
    pub bus: usize,
    pub area: usize,
    pub edge: usize,
    pub cop: f64,
    pub mode: PumpMode,
}

#[derive(Debug, Clone)]
pub struct AreaModel {
    pub transport: DMatrix<f64>,
    pub volumes: DVector<f64>,
    pub total_volume: f64,
    pub n_edges: usize,
}

/// Electric loads per bus and heat loads per edge of each area.
#[derive(Debug, Clone, PartialEq)]
pub struct Loads {
    pub bus: Vec<f64>,
    pub edge: Vec<Vec<f64>>,
}

impl Loads {
    pub fn total_electric(&self) -> f64 {
        self.bus.iter().sum()
    }

    pub fn total_heat(&self, area: usize) -> f64 {
        self.edge[area].iter().sum()
    }
}

/// Quantities that follow from the state without memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicOutputs {
    /// Frequency deviation at every bus, algebraic ones included.
    pub omega: Vec<f64>,
    pub flows: Vec<f64>,
    /// Per generator, in [`Model::generators`] order.
    pub p_gen: Vec<f64>,
    /// Per pump, in [`Model::pumps`] order.
    pub p_pump: Vec<f64>,
    pub h_pump: Vec<f64>,
    /// Per heat source, in [`Model::sources`] order.
    pub h_gen: Vec<f64>,
    pub tbar: Vec<f64>,
    /// Some `|eta| >= pi/2`.
    pub security: bool,
}

#[derive(Debug, Clone)]
pub struct Model {
    system: CombinedSystem,
    mode: SystemMode,
    layout: StateLayout,
    roles: Vec<BusRole>,
    line_ends: Vec<(usize, usize)>,
    generators: Vec<GeneratorEntry>,
    sources: Vec<SourceEntry>,
    pumps: Vec<PumpEntry>,
    areas: Vec<AreaModel>,
    gens_at_bus: Vec<Vec<usize>>,
    pumps_at_bus: Vec<Vec<usize>>,
}

impl Model {
    /// Validates and compiles. Any validation error is fatal.
    pub fn new(system: CombinedSystem) -> Result<Self, ModelError> {
        let report = validate(&system);
        if report.has_errors() {
            return Err(ModelError::Invalid(report));
        }
        Self::compile(system)
    }

    /// Compiles a system whose parameters may be physically invalid (for
    /// example negative damping). References must still resolve.
    pub fn new_unchecked(system: CombinedSystem) -> Result<Self, ModelError> {
        let report = validate(&system);
        if report.has_structural_errors() {
            return Err(ModelError::Invalid(report));
        }
        Self::compile(system)
    }

    fn compile(system: CombinedSystem) -> Result<Self, ModelError> {
        let mode = system.mode();
        let nb = system.buses.len();
        let bus = |id: &str| {
            system.bus_index(id).ok_or_else(|| TopologyError::Unknown {
                what: "bus",
                id: id.to_string(),
            })
        };

        let line_ends = system
            .lines
            .iter()
            .map(|l| Ok((bus(&l.from)?, bus(&l.to)?)))
            .collect::<Result<Vec<_>, TopologyError>>()?;

        let mut pumps = Vec::new();
        let mut pumps_at_bus = vec![Vec::new(); nb];
        for p in &system.pumps {
            let b = bus(&p.bus)?;
            let area = system.area_index(&p.area).ok_or_else(|| TopologyError::Unknown {
                what: "area",
                id: p.area.clone(),
            })?;
            let edge = system.areas[area]
                .edge_index(&p.edge)
                .ok_or_else(|| TopologyError::Unknown {
                    what: "edge",
                    id: p.edge.clone(),
                })?;
            pumps_at_bus[b].push(pumps.len());
            pumps.push(PumpEntry {
                bus: b,
                area,
                edge,
                cop: p.cop,
                mode: p.mode,
            });
        }

        let mut roles = Vec::with_capacity(nb);
        let mut inertial = 0;
        for (j, b) in system.buses.iter().enumerate() {
            let converter = pumps_at_bus[j]
                .iter()
                .copied()
                .find(|&k| matches!(pumps[k].mode, PumpMode::Mode2 { .. }));
            let role = match converter {
                Some(pump) => BusRole::Converter { pump },
                None if b.inertia > 0.0 => {
                    inertial += 1;
                    BusRole::Inertial { slot: inertial - 1 }
                }
                None => BusRole::Algebraic,
            };
            roles.push(role);
        }

        let mut generators = Vec::new();
        let mut gens_at_bus = vec![Vec::new(); nb];
        for (j, b) in system.buses.iter().enumerate() {
            if let Some(g) = &b.generator {
                gens_at_bus[j].push(generators.len());
                generators.push(GeneratorEntry {
                    bus: j,
                    block: LinearBlock::from_spec(g.tau, g.cost, g.block),
                });
            }
        }

        let mut areas = Vec::new();
        let mut sources = Vec::new();
        for (a, area) in system.areas.iter().enumerate() {
            let transport = area.transport_matrix()?;
            let volumes = area.volumes();
            areas.push(AreaModel {
                transport,
                total_volume: volumes.sum(),
                volumes,
                n_edges: area.edge_count(),
            });
            for (e, edge) in area.edges.iter().enumerate() {
                if let (EdgeRole::Source, Some(s)) = (edge.role, &edge.source) {
                    sources.push(SourceEntry {
                        area: a,
                        edge: e,
                        block: LinearBlock::from_spec(s.tau, s.cost, s.block),
                    });
                }
            }
        }

        // layout
        let mut labels = Vec::new();
        let n_lines = line_ends.len();
        for l in &system.lines {
            labels.push(format!("eta[{}-{}]", l.from, l.to));
        }
        for (b, role) in system.buses.iter().zip(&roles) {
            if let BusRole::Inertial { .. } = role {
                labels.push(format!("omega[{}]", b.id));
            }
        }
        for g in &generators {
            labels.push(format!("gen[{}]", system.buses[g.bus].id));
        }
        let mut temps = Vec::new();
        let mut offset = n_lines + inertial + generators.len();
        for area in &system.areas {
            temps.push(offset..offset + area.dim());
            offset += area.dim();
            labels.extend(area.edges.iter().map(|e| format!("TE[{}]", e.id)));
            labels.extend(area.nodes.iter().map(|n| format!("TN[{}]", n.id)));
        }
        for s in &sources {
            labels.push(format!("src[{}]", system.areas[s.area].edges[s.edge].id));
        }
        let eta = 0..n_lines;
        let omega = n_lines..n_lines + inertial;
        let gen = omega.end..omega.end + generators.len();
        let heat = offset..offset + sources.len();
        let layout = StateLayout {
            eta,
            omega,
            gen,
            temps,
            dim: heat.end,
            heat,
            labels,
        };

        Ok(Self {
            system,
            mode,
            layout,
            roles,
            line_ends,
            generators,
            sources,
            pumps,
            areas,
            gens_at_bus,
            pumps_at_bus,
        })
    }

    pub fn system(&self) -> &CombinedSystem {
        &self.system
    }

    pub fn mode(&self) -> SystemMode {
        self.mode
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn roles(&self) -> &[BusRole] {
        &self.roles
    }

    pub fn line_ends(&self) -> &[(usize, usize)] {
        &self.line_ends
    }

    pub fn generators(&self) -> &[GeneratorEntry] {
        &self.generators
    }

    pub fn sources(&self) -> &[SourceEntry] {
        &self.sources
    }

    pub fn pumps(&self) -> &[PumpEntry] {
        &self.pumps
    }

    pub fn areas(&self) -> &[AreaModel] {
        &self.areas
    }

    pub fn zero_state(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Initial state with `eta = eta0` and every deviation zero.
    pub fn initial_state(&self) -> DVector<f64> {
        let mut x = self.zero_state();
        for (k, line) in self.system.lines.iter().enumerate() {
            x[self.layout.eta.start + k] = line.eta0;
        }
        x
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Loads with only the configured heat-load bases.
    pub fn base_loads(&self) -> Loads {
        Loads {
            bus: vec![0.0; self.system.buses.len()],
            edge: self
                .system
                .areas
                .iter()
                .map(|a| a.edges.iter().map(|e| e.load_base).collect())
                .collect(),
        }
    }

    /// Loads in effect at `t`, with steps at exactly `t` applied.
    pub fn loads_at(&self, schedule: &DisturbanceSchedule, t: f64) -> Result<Loads, ModelError> {
        let mut loads = self.base_loads();
        for step in schedule.active_at(t) {
            match step.target {
                TargetKind::Bus => {
                    let j = self.system.bus_index(&step.id).ok_or_else(|| ModelError::UnknownTarget {
                        kind: "bus",
                        id: step.id.clone(),
                    })?;
                    if let BusRole::Converter { .. } = self.roles[j] {
                        return Err(ModelError::InvalidTarget(step.id.clone()));
                    }
                    loads.bus[j] += step.delta;
                }
                TargetKind::Edge => {
                    let (a, e) = self
                        .system
                        .areas
                        .iter()
                        .enumerate()
                        .find_map(|(a, area)| area.edge_index(&step.id).map(|e| (a, e)))
                        .ok_or_else(|| ModelError::UnknownTarget {
                            kind: "edge",
                            id: step.id.clone(),
                        })?;
                    if self.system.areas[a].edges[e].role != EdgeRole::Load {
                        return Err(ModelError::InvalidTarget(step.id.clone()));
                    }
                    loads.edge[a][e] += step.delta;
                }
            }
        }
        Ok(loads)
    }

    /// Loads after every step has been applied.
    pub fn final_loads(&self, schedule: &DisturbanceSchedule) -> Result<Loads, ModelError> {
        self.loads_at(schedule, f64::INFINITY)
    }

    /// Checks every step target once.
    pub fn check_schedule(&self, schedule: &DisturbanceSchedule) -> Result<(), ModelError> {
        self.final_loads(schedule).map(|_| ())
    }

    /// `p_ij = B_ij sin(eta_ij)` per line, plus a flag when any line is
    /// outside the `|eta| < pi/2` security region.
    pub fn line_flows(&self, x: &DVector<f64>) -> (Vec<f64>, bool) {
        let mut security = false;
        let flows = self
            .system
            .lines
            .iter()
            .enumerate()
            .map(|(k, line)| {
                let eta = x[self.layout.eta.start + k];
                security |= eta.abs() >= FRAC_PI_2;
                line.susceptance * eta.sin()
            })
            .collect();
        (flows, security)
    }

    /// Net line inflow at each bus.
    pub fn bus_inflows(&self, flows: &[f64]) -> Vec<f64> {
        let mut inflow = vec![0.0; self.system.buses.len()];
        for (&(from, to), &p) in self.line_ends.iter().zip(flows) {
            inflow[to] += p;
            inflow[from] -= p;
        }
        inflow
    }

    pub fn area_temperatures<'a>(&self, x: &'a DVector<f64>, area: usize) -> &'a [f64] {
        &x.as_slice()[self.layout.temps[area].clone()]
    }

    pub fn average_temperatures(&self, x: &DVector<f64>) -> Vec<f64> {
        self.areas
            .iter()
            .enumerate()
            .map(|(a, am)| {
                let t = self.area_temperatures(x, a);
                am.volumes.iter().zip(t).map(|(v, t)| v * t).sum::<f64>() / am.total_volume
            })
            .collect()
    }

    fn frequencies(&self, x: &DVector<f64>, loads: &Loads, inflow: &[f64], tbar: &[f64]) -> Vec<f64> {
        self.roles
            .iter()
            .enumerate()
            .map(|(j, role)| match *role {
                BusRole::Inertial { slot } => x[self.layout.omega.start + slot],
                BusRole::Converter { pump } => {
                    let p = &self.pumps[pump];
                    match p.mode {
                        PumpMode::Mode2 { m } => m * tbar[p.area],
                        PumpMode::Mode1 { .. } => unreachable!("converter role implies Mode 2"),
                    }
                }
                BusRole::Algebraic => {
                    // 0 = -pL - a1*w + (x_g - d*w) - D*w + inflow
                    let bus = &self.system.buses[j];
                    let mut num = inflow[j] - loads.bus[j];
                    let mut den = bus.damping;
                    for &g in &self.gens_at_bus[j] {
                        num += x[self.layout.gen.start + g];
                        den += self.generators[g].block.feedthrough();
                    }
                    for &k in &self.pumps_at_bus[j] {
                        if let PumpMode::Mode1 { a1 } = self.pumps[k].mode {
                            den += a1;
                        }
                    }
                    num / den
                }
            })
            .collect()
    }

    /// Frequency at every bus; inertial ones are read from the state, the
    /// rest are solved algebraically.
    pub fn bus_frequencies(&self, x: &DVector<f64>, loads: &Loads) -> Vec<f64> {
        let (flows, _) = self.line_flows(x);
        let inflow = self.bus_inflows(&flows);
        self.frequencies(x, loads, &inflow, &self.average_temperatures(x))
    }

    /// Frequencies of the zero-inertia buses only, keyed by bus index.
    pub fn algebraic_frequencies(&self, x: &DVector<f64>, loads: &Loads) -> Vec<(usize, f64)> {
        let omega = self.bus_frequencies(x, loads);
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| !matches!(r, BusRole::Inertial { .. }))
            .map(|(j, _)| (j, omega[j]))
            .collect()
    }

    pub fn outputs(&self, x: &DVector<f64>, loads: &Loads) -> AlgebraicOutputs {
        let (flows, security) = self.line_flows(x);
        let inflow = self.bus_inflows(&flows);
        let tbar = self.average_temperatures(x);
        let omega = self.frequencies(x, loads, &inflow, &tbar);
        let p_gen = self
            .generators
            .iter()
            .enumerate()
            .map(|(g, e)| e.block.output(x[self.layout.gen.start + g], omega[e.bus]))
            .collect();
        let p_pump: Vec<f64> = self
            .pumps
            .iter()
            .map(|p| match p.mode {
                PumpMode::Mode1 { a1 } => a1 * omega[p.bus],
                PumpMode::Mode2 { .. } => inflow[p.bus],
            })
            .collect();
        let h_pump = self.pumps.iter().zip(&p_pump).map(|(p, pp)| p.cop * pp).collect();
        let h_gen = self
            .sources
            .iter()
            .enumerate()
            .map(|(s, e)| e.block.output(x[self.layout.heat.start + s], tbar[e.area]))
            .collect();
        AlgebraicOutputs {
            omega,
            flows,
            p_gen,
            p_pump,
            h_pump,
            h_gen,
            tbar,
            security,
        }
    }

    /// Electric and heat power `(p^P, h^P)` of one pump.
    pub fn pump_power(&self, x: &DVector<f64>, loads: &Loads, pump: usize) -> (f64, f64) {
        let out = self.outputs(x, loads);
        (out.p_pump[pump], out.h_pump[pump])
    }

    fn injection_from(&self, area: usize, out: &AlgebraicOutputs, loads: &Loads) -> DVector<f64> {
        let am = &self.areas[area];
        let mut h = DVector::zeros(am.volumes.len());
        for (s, e) in self.sources.iter().enumerate().filter(|(_, e)| e.area == area) {
            h[e.edge] += out.h_gen[s];
        }
        for (k, p) in self.pumps.iter().enumerate().filter(|(_, p)| p.area == area) {
            h[p.edge] += out.h_pump[k];
        }
        for (e, hl) in loads.edge[area].iter().enumerate() {
            h[e] -= hl;
        }
        h
    }

    /// Heat injection `[h^G + h^P - h^L; 0]` of one area.
    pub fn heat_injection(&self, area: usize, x: &DVector<f64>, loads: &Loads) -> DVector<f64> {
        let out = self.outputs(x, loads);
        self.injection_from(area, &out, loads)
    }

    pub fn rhs(&self, x: &DVector<f64>, loads: &Loads) -> DVector<f64> {
        let mut dx = DVector::zeros(self.dim());
        self.rhs_into(x, loads, &mut dx);
        dx
    }

    /// Same as [`Model::rhs`] but with the loads looked up from a schedule.
    pub fn rhs_at(
        &self,
        x: &DVector<f64>,
        t: f64,
        schedule: &DisturbanceSchedule,
    ) -> Result<DVector<f64>, ModelError> {
        self.check_dim(x)?;
        let loads = self.loads_at(schedule, t)?;
        Ok(self.rhs(x, &loads))
    }

    pub fn rhs_into(&self, x: &DVector<f64>, loads: &Loads, dx: &mut DVector<f64>) {
        let out = self.outputs(x, loads);
        self.rhs_with_outputs(x, loads, &out, dx);
    }

    fn rhs_with_outputs(&self, x: &DVector<f64>, loads: &Loads, out: &AlgebraicOutputs, dx: &mut DVector<f64>) {
        let lay = &self.layout;
        let omega = &out.omega;

        for (k, &(from, to)) in self.line_ends.iter().enumerate() {
            dx[lay.eta.start + k] = omega[from] - omega[to];
        }

        let inflow = self.bus_inflows(&out.flows);
        for (j, role) in self.roles.iter().enumerate() {
            let BusRole::Inertial { slot } = *role else {
                continue;
            };
            let bus = &self.system.buses[j];
            let mut balance = inflow[j] - loads.bus[j] - bus.damping * omega[j];
            for &g in &self.gens_at_bus[j] {
                balance += out.p_gen[g];
            }
            for &k in &self.pumps_at_bus[j] {
                balance -= out.p_pump[k];
            }
            dx[lay.omega.start + slot] = balance / bus.inertia;
        }

        for (g, e) in self.generators.iter().enumerate() {
            dx[lay.gen.start + g] = e.block.derivative(x[lay.gen.start + g], omega[e.bus]);
        }

        for (a, am) in self.areas.iter().enumerate() {
            let range = lay.temps[a].clone();
            let t = x.rows(range.start, range.len());
            let h = self.injection_from(a, out, loads);
            let flux = h - &am.transport * t;
            for (i, (f, v)) in flux.iter().zip(am.volumes.iter()).enumerate() {
                dx[range.start + i] = f / v;
            }
        }

        for (s, e) in self.sources.iter().enumerate() {
            dx[lay.heat.start + s] = e.block.derivative(x[lay.heat.start + s], out.tbar[e.area]);
        }
    }
}
