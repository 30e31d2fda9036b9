//! Network description for a power grid coupled to one or more district
//! heating areas through heat pumps.
//!
//! Everything here is plain data plus the linear-algebra helpers that derive
//! the heat-transport matrices of an area. All quantities are per-unit
//! deviations from the nominal operating point, with `rho * c_p = 1`.

use std::collections::{HashMap, HashSet};
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for the node flow-conservation check.
pub const FLOW_BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("area `{area}`: edge `{edge}` references unknown node `{node}`")]
    DanglingNode {
        area: String,
        edge: String,
        node: String,
    },
    #[error("unknown {what} `{id}`")]
    Unknown { what: &'static str, id: String },
    #[error("temperature vector has length {got}, area `{area}` expects {expected}")]
    Dimension {
        area: String,
        expected: usize,
        got: usize,
    },
    #[error("area `{area}` violates flow conservation at node `{node}` (inflow {inflow}, outflow {outflow})")]
    FlowImbalance {
        area: String,
        node: String,
        inflow: f64,
        outflow: f64,
    },
}

/// Dynamic realization of a generator or heat-source control loop.
///
/// Both kinds have DC gain `1/Q`, so the equilibrium map is the same.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockKind {
    #[default]
    FirstOrder,
    /// `(1 + alpha*tau*s) / (1 + tau*s)` scaled by the droop gain.
    LeadLag { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub tau: f64,
    /// Cost coefficient `Q_e`; the droop gain is its reciprocal.
    pub cost: f64,
    #[serde(default)]
    pub block: BlockKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSourceSpec {
    pub tau: f64,
    /// Cost coefficient `Q_h`; the temperature droop gain is its reciprocal.
    pub cost: f64,
    #[serde(default)]
    pub block: BlockKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Generator,
    Load,
    PumpMode1,
    PumpConverter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerBus {
    pub id: String,
    pub kind: BusKind,
    #[serde(default)]
    pub inertia: f64,
    #[serde(default)]
    pub damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLine {
    pub from: String,
    pub to: String,
    pub susceptance: f64,
    /// Initial angle difference in radians.
    #[serde(default)]
    pub eta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatNode {
    pub id: String,
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRole {
    Pump,
    Source,
    Load,
    Pipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatEdge {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub volume: f64,
    /// Mass flow `q^E`, strictly positive and constant.
    pub flow: f64,
    pub role: EdgeRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<HeatSourceSpec>,
    /// Pre-disturbance heat load deviation; only meaningful on load edges.
    #[serde(default)]
    pub load_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatArea {
    pub id: String,
    pub nodes: Vec<HeatNode>,
    pub edges: Vec<HeatEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PumpMode {
    /// Frequency-dependent load, `p^P = a1 * omega`.
    Mode1 { a1: f64 },
    /// Converter bus whose frequency is `m * Tbar`.
    Mode2 { m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpCoupling {
    pub bus: String,
    pub area: String,
    pub edge: String,
    /// Coefficient of performance `C_o`.
    pub cop: f64,
    pub mode: PumpMode,
}

impl PumpCoupling {
    pub fn is_mode2(&self) -> bool {
        matches!(self.mode, PumpMode::Mode2 { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinedSystem {
    pub buses: Vec<PowerBus>,
    pub lines: Vec<PowerLine>,
    #[serde(default)]
    pub areas: Vec<HeatArea>,
    #[serde(default)]
    pub pumps: Vec<PumpCoupling>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemMode {
    Mode1,
    Mode2,
}

impl CombinedSystem {
    /// Mode 2 as soon as any pump is converter-linked. Mixed systems are
    /// rejected by [`validate`].
    pub fn mode(&self) -> SystemMode {
        if self.pumps.iter().any(PumpCoupling::is_mode2) {
            SystemMode::Mode2
        } else {
            SystemMode::Mode1
        }
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn area_index(&self, id: &str) -> Option<usize> {
        self.areas.iter().position(|a| a.id == id)
    }
}

/// Signed incidence matrix and its head/tail split.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    /// `+1` where the edge injects into the node, `-1` where it originates.
    pub signed: DMatrix<f64>,
    /// Heads: `(|B| + B) / 2`.
    pub heads: DMatrix<f64>,
    /// Tails: `(|B| - B) / 2`.
    pub tails: DMatrix<f64>,
}

impl HeatArea {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of temperature states: edges first, then nodes.
    pub fn dim(&self) -> usize {
        self.edges.len() + self.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    fn endpoints(&self) -> Result<Vec<(usize, usize)>, TopologyError> {
        self.edges
            .iter()
            .map(|e| {
                let find = |node: &str| {
                    self.node_index(node).ok_or_else(|| TopologyError::DanglingNode {
                        area: self.id.clone(),
                        edge: e.id.clone(),
                        node: node.to_string(),
                    })
                };
                Ok((find(&e.from_node)?, find(&e.to_node)?))
            })
            .collect()
    }

    pub fn incidence(&self) -> Result<Incidence, TopologyError> {
        let ends = self.endpoints()?;
        let (n, m) = (self.node_count(), self.edge_count());
        let mut signed = DMatrix::zeros(n, m);
        let mut heads = DMatrix::zeros(n, m);
        let mut tails = DMatrix::zeros(n, m);
        for (j, &(from, to)) in ends.iter().enumerate() {
            // a self-loop contributes nothing to B_h but still carries heat
            // through its own node.
            signed[(to, j)] += 1.0;
            signed[(from, j)] -= 1.0;
            heads[(to, j)] = 1.0;
            tails[(from, j)] = 1.0;
        }
        if ends.iter().all(|&(f, t)| f != t) {
            debug_assert_eq!(&heads - &tails, signed);
        }
        Ok(Incidence {
            signed,
            heads,
            tails,
        })
    }

    /// Per-node (inflow, outflow) mass-flow totals.
    pub fn node_flow_totals(&self) -> Result<Vec<(f64, f64)>, TopologyError> {
        let ends = self.endpoints()?;
        let mut totals = vec![(0.0, 0.0); self.node_count()];
        for (edge, &(from, to)) in self.edges.iter().zip(&ends) {
            totals[to].0 += edge.flow;
            totals[from].1 += edge.flow;
        }
        Ok(totals)
    }

    pub fn check_flow_conservation(&self) -> Result<(), TopologyError> {
        for (node, (inflow, outflow)) in self.nodes.iter().zip(self.node_flow_totals()?) {
            if (inflow - outflow).abs() > FLOW_BALANCE_TOL * (1.0 + inflow.abs()) {
                return Err(TopologyError::FlowImbalance {
                    area: self.id.clone(),
                    node: node.id.clone(),
                    inflow,
                    outflow,
                });
            }
        }
        Ok(())
    }

    /// Heat-transport matrix
    ///
    /// ```text
    /// A_h = [ diag(q)          -diag(q) B_tail^T ]
    ///       [ -B_head diag(q)   diag(B_head q)   ]
    /// ```
    ///
    /// Rows and columns sum to zero only when mass flow is conserved at
    /// every node, so that is checked first.
    pub fn transport_matrix(&self) -> Result<DMatrix<f64>, TopologyError> {
        let inc = self.incidence()?;
        self.check_flow_conservation()?;
        let m = self.edge_count();
        let n = self.node_count();
        let q = DVector::from_iterator(m, self.edges.iter().map(|e| e.flow));
        let qd = DMatrix::from_diagonal(&q);
        let mut a = DMatrix::zeros(m + n, m + n);
        a.view_mut((0, 0), (m, m)).copy_from(&qd);
        a.view_mut((0, m), (m, n))
            .copy_from(&(-(&qd * inc.tails.transpose())));
        a.view_mut((m, 0), (n, m)).copy_from(&(-(&inc.heads * &qd)));
        let node_in = &inc.heads * &q;
        a.view_mut((m, m), (n, n))
            .copy_from(&DMatrix::from_diagonal(&node_in));
        Ok(a)
    }

    /// Diagonal of the volume matrix, edges then nodes.
    pub fn volumes(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.edges
                .iter()
                .map(|e| e.volume)
                .chain(self.nodes.iter().map(|n| n.volume)),
        )
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes().sum()
    }

    /// Volume-weighted mean of the stacked `(T^E, T^N)` vector.
    pub fn average_temperature(&self, temps: &[f64]) -> Result<f64, TopologyError> {
        if temps.len() != self.dim() {
            return Err(TopologyError::Dimension {
                area: self.id.clone(),
                expected: self.dim(),
                got: temps.len(),
            });
        }
        let v = self.volumes();
        let weighted: f64 = v.iter().zip(temps).map(|(v, t)| v * t).sum();
        Ok(weighted / v.sum())
    }

    fn is_connected(&self) -> bool {
        let Ok(ends) = self.endpoints() else {
            return false;
        };
        connected(self.node_count(), &ends)
    }
}

/// Eigenvalues of `(A + A^T) / 2`, ascending.
pub fn symmetric_part_spectrum(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Broken references or duplicate identifiers.
    Structure,
    FlowConservation,
    Connectivity,
    UnderdeterminedBus,
    Parameter,
    PumpMismatch,
    UnequalConverterSlope,
    MixedModes,
    SecurityConstraint,
    Unregulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            severity,
            kind,
            message: message.into(),
        });
    }

    fn error(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.push(Severity::Error, kind, message);
    }

    fn warn(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.push(Severity::Warning, kind, message);
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.violations.iter().any(|v| v.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }

    /// True when any error is structural, i.e. the system cannot even be
    /// assembled regardless of parameter values.
    pub fn has_structural_errors(&self) -> bool {
        self.errors().any(|v| {
            matches!(
                v.kind,
                ViolationKind::Structure | ViolationKind::FlowConservation | ViolationKind::MixedModes
            )
        })
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: no violations");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_block(report: &mut ValidationReport, owner: &str, tau: f64, cost: f64, block: BlockKind) {
    if !(tau > 0.0) {
        report.error(ViolationKind::Parameter, format!("{owner}: time constant must be > 0 (got {tau})"));
    }
    if !(cost > 0.0) {
        report.error(ViolationKind::Parameter, format!("{owner}: cost coefficient must be > 0 (got {cost})"));
    }
    if let BlockKind::LeadLag { alpha } = block {
        if !(alpha > 0.0) {
            report.error(ViolationKind::Parameter, format!("{owner}: lead-lag ratio must be > 0 (got {alpha})"));
        }
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dup.contains(&id) {
            dup.push(id);
        }
    }
    dup
}

/// Collects every well-posedness violation. The order of the report depends
/// only on the input, so identical systems give identical reports.
pub fn validate(system: &CombinedSystem) -> ValidationReport {
    use ViolationKind as K;
    let mut r = ValidationReport::default();

    if system.buses.is_empty() {
        r.error(K::Structure, "power network has no buses");
    }
    for id in duplicates(system.buses.iter().map(|b| b.id.as_str())) {
        r.error(K::Structure, format!("duplicate bus id `{id}`"));
    }
    for id in duplicates(system.areas.iter().map(|a| a.id.as_str())) {
        r.error(K::Structure, format!("duplicate area id `{id}`"));
    }
    let all_edges = system.areas.iter().flat_map(|a| a.edges.iter().map(|e| e.id.as_str()));
    for id in duplicates(all_edges) {
        r.error(K::Structure, format!("duplicate heat edge id `{id}`"));
    }
    let all_nodes = system.areas.iter().flat_map(|a| a.nodes.iter().map(|n| n.id.as_str()));
    for id in duplicates(all_nodes) {
        r.error(K::Structure, format!("duplicate heat node id `{id}`"));
    }

    // buses
    let mut pumps_at_bus: HashMap<&str, Vec<&PumpCoupling>> = HashMap::new();
    for p in &system.pumps {
        pumps_at_bus.entry(p.bus.as_str()).or_default().push(p);
    }
    for bus in &system.buses {
        let id = &bus.id;
        if bus.inertia < 0.0 || !bus.inertia.is_finite() {
            r.error(K::Parameter, format!("bus `{id}`: inertia must be >= 0 (got {})", bus.inertia));
        }
        if bus.damping < 0.0 || !bus.damping.is_finite() {
            r.error(K::Parameter, format!("bus `{id}`: damping must be >= 0 (got {})", bus.damping));
        }
        if let Some(g) = &bus.generator {
            check_block(&mut r, &format!("generator at bus `{id}`"), g.tau, g.cost, g.block);
        }
        let pumps = pumps_at_bus.get(id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        match bus.kind {
            BusKind::PumpConverter => {
                if bus.generator.is_some() || bus.damping != 0.0 || bus.inertia != 0.0 {
                    r.error(
                        K::Parameter,
                        format!("converter bus `{id}` must have zero inertia, zero damping and no generator"),
                    );
                }
                let m2 = pumps.iter().filter(|p| p.is_mode2()).count();
                if m2 != 1 || pumps.len() != 1 {
                    r.error(
                        K::PumpMismatch,
                        format!("converter bus `{id}` must host exactly one Mode-2 pump (found {})", pumps.len()),
                    );
                }
            }
            _ => {
                if bus.inertia == 0.0 && bus.damping == 0.0 {
                    r.error(
                        K::UnderdeterminedBus,
                        format!("algebraically underdetermined bus `{id}`: zero inertia and zero damping"),
                    );
                }
                match bus.kind {
                    BusKind::Generator if bus.generator.is_none() => {
                        r.error(K::Parameter, format!("generator bus `{id}` has no generator spec"))
                    }
                    BusKind::Load if bus.generator.is_some() => {
                        r.error(K::Parameter, format!("load bus `{id}` carries a generator"))
                    }
                    BusKind::PumpMode1 => {
                        if pumps.is_empty() {
                            r.error(K::PumpMismatch, format!("pump bus `{id}` has no Mode-1 pump attached"));
                        }
                        if bus.generator.is_some() {
                            r.warn(
                                K::Parameter,
                                format!("pump bus `{id}` also hosts a generator; allowed but not a reference configuration"),
                            );
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    // lines
    let mut bus_edges = Vec::new();
    for (k, line) in system.lines.iter().enumerate() {
        let from = system.bus_index(&line.from);
        let to = system.bus_index(&line.to);
        for (end, idx) in [(&line.from, from), (&line.to, to)] {
            if idx.is_none() {
                r.error(K::Structure, format!("line {k} references unknown bus `{end}`"));
            }
        }
        if line.from == line.to {
            r.error(K::Structure, format!("line {k} connects bus `{}` to itself", line.from));
        }
        if !(line.susceptance > 0.0) {
            r.error(K::Parameter, format!("line {k} ({} -> {}): susceptance must be > 0", line.from, line.to));
        }
        if !(line.eta0.abs() < FRAC_PI_2) {
            r.error(
                K::SecurityConstraint,
                format!("line {k} ({} -> {}): |eta0| = {} violates the pi/2 security bound", line.from, line.to, line.eta0.abs()),
            );
        }
        if let (Some(a), Some(b)) = (from, to) {
            bus_edges.push((a, b));
        }
    }
    if !system.buses.is_empty() && !connected(system.buses.len(), &bus_edges) {
        r.error(K::Connectivity, "power network is not connected");
    }

    // heating areas
    for area in &system.areas {
        let aid = &area.id;
        if area.nodes.is_empty() || area.edges.is_empty() {
            r.error(K::Structure, format!("area `{aid}` needs at least one node and one edge"));
            continue;
        }
        for node in &area.nodes {
            if !(node.volume > 0.0) {
                r.error(K::Parameter, format!("area `{aid}`: node `{}` volume must be > 0", node.id));
            }
        }
        let mut dangling = false;
        for edge in &area.edges {
            let eid = &edge.id;
            for node in [&edge.from_node, &edge.to_node] {
                if area.node_index(node).is_none() {
                    dangling = true;
                    r.error(K::Structure, format!("area `{aid}`: edge `{eid}` references unknown node `{node}`"));
                }
            }
            if !(edge.volume > 0.0) {
                r.error(K::Parameter, format!("area `{aid}`: edge `{eid}` volume must be > 0"));
            }
            if !(edge.flow > 0.0) {
                r.error(K::Parameter, format!("area `{aid}`: edge `{eid}` mass flow must be > 0"));
            }
            match (edge.role, &edge.source) {
                (EdgeRole::Source, None) => {
                    r.error(K::Parameter, format!("area `{aid}`: source edge `{eid}` has no source spec"))
                }
                (EdgeRole::Source, Some(s)) => {
                    check_block(&mut r, &format!("heat source at edge `{eid}`"), s.tau, s.cost, s.block)
                }
                (_, Some(_)) => r.error(
                    K::Parameter,
                    format!("area `{aid}`: edge `{eid}` carries a source spec but is not a source"),
                ),
                _ => {}
            }
            if edge.role != EdgeRole::Load && edge.load_base != 0.0 {
                r.error(K::Parameter, format!("area `{aid}`: non-load edge `{eid}` has a heat load"));
            }
        }
        if dangling {
            continue;
        }
        if let Ok(totals) = area.node_flow_totals() {
            for (node, (inflow, outflow)) in area.nodes.iter().zip(totals) {
                if (inflow - outflow).abs() > FLOW_BALANCE_TOL * (1.0 + inflow.abs()) {
                    r.error(
                        K::FlowConservation,
                        format!(
                            "area `{aid}`: flow conservation violated at node `{}` (inflow {inflow}, outflow {outflow})",
                            node.id
                        ),
                    );
                }
            }
        }
        if !area.is_connected() {
            r.error(K::Connectivity, format!("area `{aid}` is not connected"));
        }
        if !area.edges.iter().any(|e| e.role == EdgeRole::Source) {
            r.warn(
                K::Unregulated,
                format!("area `{aid}` has no controllable heat source; its average temperature is not regulated"),
            );
        }
    }

    // pumps
    let mut used_edges: HashSet<(&str, &str)> = HashSet::new();
    for (k, p) in system.pumps.iter().enumerate() {
        let bus = system.buses.iter().find(|b| b.id == p.bus);
        let area = system.areas.iter().find(|a| a.id == p.area);
        if bus.is_none() {
            r.error(K::Structure, format!("pump {k} references unknown bus `{}`", p.bus));
        }
        match area {
            None => r.error(K::Structure, format!("pump {k} references unknown area `{}`", p.area)),
            Some(a) => match a.edges.iter().find(|e| e.id == p.edge) {
                None => r.error(
                    K::Structure,
                    format!("pump {k} references unknown edge `{}` in area `{}`", p.edge, p.area),
                ),
                Some(e) if e.role != EdgeRole::Pump => r.error(
                    K::PumpMismatch,
                    format!("pump {k} attaches to edge `{}` whose role is not pump", p.edge),
                ),
                Some(_) => {
                    if !used_edges.insert((p.area.as_str(), p.edge.as_str())) {
                        r.error(K::Structure, format!("pump edge `{}` is claimed by more than one pump", p.edge));
                    }
                }
            },
        }
        if !(p.cop > 0.0) {
            r.error(K::Parameter, format!("pump {k}: coefficient of performance must be > 0"));
        }
        match p.mode {
            PumpMode::Mode1 { a1 } => {
                if !(a1 > 0.0) {
                    r.error(K::Parameter, format!("pump {k}: a1 must be > 0"));
                }
                if let Some(b) = bus {
                    if b.kind != BusKind::PumpMode1 {
                        r.error(K::PumpMismatch, format!("Mode-1 pump {k} must attach to a pump_mode1 bus, `{}` is not", b.id));
                    }
                }
            }
            PumpMode::Mode2 { m } => {
                if !(m > 0.0) {
                    r.error(K::Parameter, format!("pump {k}: m must be > 0"));
                }
                if let Some(b) = bus {
                    if b.kind != BusKind::PumpConverter {
                        r.error(K::PumpMismatch, format!("Mode-2 pump {k} must attach to a pump_converter bus, `{}` is not", b.id));
                    }
                }
            }
        }
    }
    for area in &system.areas {
        for edge in area.edges.iter().filter(|e| e.role == EdgeRole::Pump) {
            if !used_edges.contains(&(area.id.as_str(), edge.id.as_str())) {
                r.error(K::PumpMismatch, format!("pump edge `{}` in area `{}` has no pump coupling", edge.id, area.id));
            }
        }
    }
    let n_mode2 = system.pumps.iter().filter(|p| p.is_mode2()).count();
    if n_mode2 > 0 && n_mode2 < system.pumps.len() {
        r.error(K::MixedModes, "system mixes Mode-1 and Mode-2 pumps");
    }
    for area in &system.areas {
        let slopes: Vec<f64> = system
            .pumps
            .iter()
            .filter(|p| p.area == area.id)
            .filter_map(|p| match p.mode {
                PumpMode::Mode2 { m } => Some(m),
                PumpMode::Mode1 { .. } => None,
            })
            .collect();
        if slopes.windows(2).any(|w| w[0] != w[1]) {
            r.error(
                K::UnequalConverterSlope,
                format!("Mode-2 pumps in area `{}` use different m; synchronous frequency requires equal m", area.id),
            );
        }
        if slopes.len() > 1 {
            r.error(
                K::PumpMismatch,
                format!(
                    "area `{}` has {} Mode-2 pumps; the per-pump equilibrium split is not determined by the balances",
                    area.id,
                    slopes.len()
                ),
            );
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ring3() -> HeatArea {
        fixtures::f1_mode1().areas.remove(0)
    }

    #[test]
    fn ring_incidence_column() {
        let inc = ring3().incidence().unwrap();
        // e1: n3 -> n1
        assert_eq!(inc.signed[(0, 0)], 1.0);
        assert_eq!(inc.signed[(2, 0)], -1.0);
        assert_eq!(inc.signed[(1, 0)], 0.0);
        assert_eq!(&inc.heads + &inc.tails, inc.signed.abs());
        assert_eq!(&inc.heads - &inc.tails, inc.signed);
    }

    #[test]
    fn single_edge_split() {
        let area = HeatArea {
            id: "a".into(),
            nodes: vec![
                HeatNode { id: "n1".into(), volume: 1.0 },
                HeatNode { id: "n2".into(), volume: 1.0 },
            ],
            edges: vec![HeatEdge {
                id: "e".into(),
                from_node: "n1".into(),
                to_node: "n2".into(),
                volume: 1.0,
                flow: 1.0,
                role: EdgeRole::Pipe,
                source: None,
                load_base: 0.0,
            }],
        };
        let inc = area.incidence().unwrap();
        assert_eq!(inc.heads.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(inc.tails.column(0).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn dangling_node_is_topology_error() {
        let mut area = ring3();
        area.edges[1].to_node = "nowhere".into();
        assert!(matches!(area.incidence(), Err(TopologyError::DanglingNode { .. })));
    }

    #[test]
    fn ring_transport_matrix_rows() {
        let a = ring3().transport_matrix().unwrap();
        // order: e1 e2 e3 n1 n2 n3; e1 originates at n3
        let row: Vec<f64> = a.row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
        for i in 0..6 {
            assert!(a.row(i).sum().abs() < 1e-12);
            assert!(a.column(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn ring_symmetric_part_has_simple_zero() {
        let a = ring3().transport_matrix().unwrap();
        let ev = symmetric_part_spectrum(&a);
        assert!(ev[0].abs() < 1e-10, "{ev:?}");
        assert!(ev[1] > 1e-6, "{ev:?}");
        let sym = (&a + a.transpose()) * 0.5;
        let ones = DVector::from_element(6, 1.0);
        assert!((sym * ones).amax() < 1e-12);
    }

    #[test]
    fn flow_imbalance_names_node() {
        let mut area = ring3();
        area.edges[1].flow = 2.0; // n1 -> n2 now carries 2, n1 receives 1
        let err = area.transport_matrix().unwrap_err();
        match err {
            TopologyError::FlowImbalance { node, .. } => assert_eq!(node, "n1"),
            other => panic!("unexpected {other:?}"),
        }
        let mut sys = fixtures::f1_mode1();
        sys.areas[0] = area;
        let report = validate(&sys);
        let v = report
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::FlowConservation)
            .expect("flow violation");
        assert!(v.message.contains("`n1`"), "{}", v.message);
    }

    #[test]
    fn fixtures_validate_clean() {
        assert!(validate(&fixtures::f1_mode1()).is_empty());
        assert!(validate(&fixtures::f1_mode2()).is_empty());
    }

    #[test]
    fn zero_inertia_zero_damping_load_bus() {
        let mut sys = fixtures::f1_mode1();
        sys.buses.push(PowerBus {
            id: "b3".into(),
            kind: BusKind::Load,
            inertia: 0.0,
            damping: 0.0,
            generator: None,
        });
        sys.lines.push(PowerLine {
            from: "b2".into(),
            to: "b3".into(),
            susceptance: 1.0,
            eta0: 0.0,
        });
        let report = validate(&sys);
        assert!(report
            .errors()
            .any(|v| v.kind == ViolationKind::UnderdeterminedBus
                && v.message.contains("algebraically underdetermined bus `b3`")));
    }

    #[test]
    fn average_temperature_cases() {
        let area = ring3();
        assert_eq!(area.average_temperature(&[2.5; 6]).unwrap(), 2.5);
        assert_eq!(area.average_temperature(&[0.0; 6]).unwrap(), 0.0);
        assert_eq!(area.average_temperature(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), 3.5);
        assert!(matches!(
            area.average_temperature(&[1.0; 5]),
            Err(TopologyError::Dimension { expected: 6, got: 5, .. })
        ));
    }

    #[test]
    fn mode_mismatch_and_slopes() {
        let mut sys = fixtures::f1_mode2();
        sys.pumps[0].mode = PumpMode::Mode1 { a1: 1.0 };
        let report = validate(&sys);
        assert!(report.errors().any(|v| v.kind == ViolationKind::PumpMismatch));
    }

    #[test]
    fn security_bound_on_eta0() {
        let mut sys = fixtures::f1_mode1();
        sys.lines[0].eta0 = 1.6;
        assert!(validate(&sys)
            .errors()
            .any(|v| v.kind == ViolationKind::SecurityConstraint));
    }

    #[test]
    fn report_is_deterministic() {
        let mut sys = fixtures::f1_mode1();
        sys.buses[0].damping = -1.0;
        sys.lines[0].eta0 = 2.0;
        let a = validate(&sys).to_string();
        let b = validate(&sys).to_string();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }
}
