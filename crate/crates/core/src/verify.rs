//! Two-phase static verification and sequential equivalence checking.
//!
//! The static side builds a latch graph: one node per sequential instance,
//! colored by the clock phase recovered from a backward walk along its clock
//! pin, and one directed edge per first-reachable sequential element through
//! combinational logic. A valid two-phase system has opposite colors on every
//! edge; because edges stop at the first reachable element, that single
//! condition also covers clock/data phase alignment and cone separation, and
//! the cone painting done during construction reports any combinational cone
//! mixing both phases.
//!
//! The dynamic side co-simulates the original flip-flop netlist against the
//! transformed two-phase latch netlist on shared random stimuli: the
//! original's post-edge output sample in cycle k must match the transformed
//! design's post-phase-2 sample in the same cycle, after an optional warm-up
//! window for retimed designs.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::CellLibrary;
use crate::netlist::{Driver, Index, Netlist};
use crate::sim::{FfSim, PhaseSchedule, SimError, Stimulus, TwoPhaseSim};
use crate::transform::PhaseTag;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("instance `{0}` is not sequential")]
    NotSequential(String),
    #[error("unresolvable clock domain for `{instance}`: {reason}")]
    UnresolvableClockDomain { instance: String, reason: String },
    #[error("design needs exactly 2 clock input ports for phase recovery, found {0}")]
    ClockPortCount(usize),
    #[error("port mismatch: {0}")]
    PortMismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A node of the latch graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LatchNode {
    pub name: String,
    /// None when the clock domain could not be resolved.
    pub phase: Option<PhaseTag>,
}

/// A first-reachable edge with its witness net path (from the source's
/// output net to the net feeding the destination pin, inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct LatchEdge {
    pub from: usize,
    pub to: usize,
    pub witness: Vec<String>,
}

/// Directed graph of sequential elements with phase colors.
#[derive(Debug, Clone, Default)]
pub struct LatchGraph {
    pub nodes: Vec<LatchNode>,
    pub edges: Vec<LatchEdge>,
}

impl LatchGraph {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SameColorEdge,
    UncolorableClock,
    MixedCone,
}

/// A two-phase discipline violation, reproducible via its witness path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub from: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    pub path: Vec<String>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ViolationKind::SameColorEdge => write!(
                f,
                "two-color violation at ({}, {}) via {}",
                self.from,
                self.to.as_deref().unwrap_or("?"),
                self.path.join(" -> ")
            ),
            ViolationKind::UncolorableClock => {
                write!(f, "unresolvable clock domain for {}", self.from)
            }
            ViolationKind::MixedCone => {
                write!(f, "combinational cone at {} mixes both phases", self.from)
            }
        }
    }
}

/// Recovers the clock phase of a sequential instance by walking backward
/// from its clock pin: through buffers and inverters, and through 2-input
/// AND clock gates via whichever side reaches a clock port. Inverters on the
/// clock path are reported as warnings since phase polarity inversion is
/// unsupported.
pub fn clock_domain_of(
    netlist: &Netlist,
    lib: &CellLibrary,
    instance: &str,
) -> Result<(PhaseTag, Vec<String>), VerifyError> {
    let clocks = netlist.clock_input_ports();
    if clocks.len() != 2 {
        return Err(VerifyError::ClockPortCount(clocks.len()));
    }
    let inst = netlist
        .instance(instance)
        .ok_or_else(|| VerifyError::NotSequential(instance.to_string()))?;
    let kind = lib
        .kind(&inst.kind)
        .filter(|k| k.is_sequential())
        .ok_or_else(|| VerifyError::NotSequential(instance.to_string()))?;
    let clock_net = &inst.pins[&kind.clock_pin().unwrap().name];

    let index = Index::build(netlist, lib);
    let mut warnings = Vec::new();
    let mut visited = HashSet::new();
    let phases = trace_clock(
        netlist,
        lib,
        &index,
        clock_net,
        &clocks[0],
        &clocks[1],
        &mut warnings,
        &mut visited,
    );
    match (
        phases.contains(&PhaseTag::Phi1),
        phases.contains(&PhaseTag::Phi2),
    ) {
        (true, false) => Ok((PhaseTag::Phi1, warnings)),
        (false, true) => Ok((PhaseTag::Phi2, warnings)),
        (true, true) => Err(VerifyError::UnresolvableClockDomain {
            instance: instance.to_string(),
            reason: "traversal reaches both clock ports".into(),
        }),
        (false, false) => Err(VerifyError::UnresolvableClockDomain {
            instance: instance.to_string(),
            reason: "traversal reaches neither clock port".into(),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn trace_clock(
    netlist: &Netlist,
    lib: &CellLibrary,
    index: &Index,
    net: &str,
    clk1: &str,
    clk2: &str,
    warnings: &mut Vec<String>,
    visited: &mut HashSet<String>,
) -> BTreeSet<PhaseTag> {
    let mut found = BTreeSet::new();
    if !visited.insert(net.to_string()) {
        return found;
    }
    if net == clk1 {
        found.insert(PhaseTag::Phi1);
        return found;
    }
    if net == clk2 {
        found.insert(PhaseTag::Phi2);
        return found;
    }
    match index.driver_of.get(net) {
        Some(Driver::Pin(i, _)) => {
            let inst = &netlist.instances[*i];
            let Some(kind) = lib.kind(&inst.kind) else {
                return found;
            };
            if kind.is_comb() && kind.input_pins().count() == 1 {
                if matches!(&kind.behavior,
                    crate::library::Behavior::Comb { function } if matches!(function, crate::expr::Expr::Not(_)))
                {
                    warnings.push(format!(
                        "inverter `{}` on clock path; phase polarity inversion is unsupported",
                        inst.name
                    ));
                }
                let pin = kind.input_pins().next().unwrap();
                if let Some(input) = inst.pins.get(&pin.name) {
                    found.extend(trace_clock(
                        netlist, lib, index, input, clk1, clk2, warnings, visited,
                    ));
                }
            } else if kind.is_and2_like() {
                for pin in kind.input_pins() {
                    if let Some(input) = inst.pins.get(&pin.name) {
                        found.extend(trace_clock(
                            netlist, lib, index, input, clk1, clk2, warnings, visited,
                        ));
                    }
                }
            }
            found
        }
        _ => found,
    }
}

/// Shared structural traversal: sequential nodes, first-reachable edges, and
/// per-node input/output adjacency used by phase assignment and timing.
pub(crate) struct SeqGraph {
    pub nodes: Vec<String>,
    /// Deduplicated (from, to, witness path) edges.
    pub edges: Vec<(usize, usize, Vec<String>)>,
    /// Node is first-reachable from a primary data input.
    pub input_first: Vec<bool>,
    /// Node reaches a primary output with no sequential element between.
    pub output_reach: Vec<bool>,
    /// Per combinational instance index: which source nodes traverse it.
    pub painted: HashMap<usize, BTreeSet<usize>>,
}

pub(crate) fn seq_graph(netlist: &Netlist, lib: &CellLibrary) -> SeqGraph {
    let index = Index::build(netlist, lib);
    let mut nodes: Vec<String> = netlist
        .instances
        .iter()
        .filter(|i| lib.kind(&i.kind).is_some_and(|k| k.is_sequential()))
        .map(|i| i.name.clone())
        .collect();
    nodes.sort();
    let node_index: HashMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let inst_node: HashMap<usize, usize> = netlist
        .instances
        .iter()
        .enumerate()
        .filter_map(|(i, inst)| node_index.get(&inst.name).map(|n| (i, *n)))
        .collect();
    let output_ports: HashSet<String> = netlist.output_ports().into_iter().collect();

    let mut edges: Vec<(usize, usize, Vec<String>)> = Vec::new();
    let mut edge_set: HashSet<(usize, usize)> = HashSet::new();
    let mut input_first = vec![false; nodes.len()];
    let mut output_reach = vec![false; nodes.len()];
    let mut painted: HashMap<usize, BTreeSet<usize>> = HashMap::new();

    // Forward DFS through combinational logic from a start net. `source` is
    // None when starting from a primary input.
    let mut run_dfs = |start_net: &str, source: Option<usize>| -> bool {
        let mut visited_nets: HashSet<String> = HashSet::new();
        let mut stack: Vec<(String, Vec<String>)> =
            vec![(start_net.to_string(), vec![start_net.to_string()])];
        let mut reaches_output = false;
        while let Some((net, path)) = stack.pop() {
            if !visited_nets.insert(net.clone()) {
                continue;
            }
            if output_ports.contains(&net) {
                reaches_output = true;
            }
            for (reader, _pin) in index
                .readers_of
                .get(&net)
                .map(|v| v.as_slice())
                .unwrap_or(&[])
            {
                if let Some(&target) = inst_node.get(reader) {
                    // First reachable sequential element; do not pass through.
                    match source {
                        Some(from) => {
                            if edge_set.insert((from, target)) {
                                edges.push((from, target, path.clone()));
                            }
                        }
                        None => input_first[target] = true,
                    }
                    continue;
                }
                let inst = &netlist.instances[*reader];
                let Some(kind) = lib.kind(&inst.kind) else {
                    continue;
                };
                if !kind.is_comb() {
                    continue;
                }
                if let Some(from) = source {
                    painted.entry(*reader).or_default().insert(from);
                }
                let out_pin = kind.output_pin().unwrap();
                if let Some(out_net) = inst.pins.get(&out_pin.name) {
                    if !visited_nets.contains(out_net) {
                        let mut next_path = path.clone();
                        next_path.push(out_net.clone());
                        stack.push((out_net.clone(), next_path));
                    }
                }
            }
        }
        reaches_output
    };

    for (i, name) in nodes.iter().enumerate() {
        let inst = netlist.instance(name).unwrap();
        let kind = lib.kind(&inst.kind).unwrap();
        let out_net = &inst.pins[&kind.output_pin().unwrap().name];
        if run_dfs(out_net, Some(i)) {
            output_reach[i] = true;
        }
    }
    for port in netlist.data_input_ports() {
        run_dfs(&port, None);
    }

    edges.sort_by_key(|a| (a.0, a.1));

    SeqGraph {
        nodes,
        edges,
        input_first,
        output_reach,
        painted,
    }
}

/// Builds the latch graph, returning the graph and all violations found
/// while building: unresolvable clock domains, same-color edges (recorded at
/// edge insertion), and mixed combinational cones.
pub fn build_latch_graph(netlist: &Netlist, lib: &CellLibrary) -> (LatchGraph, Vec<Violation>) {
    let base = seq_graph(netlist, lib);
    let mut violations = Vec::new();
    let mut nodes = Vec::with_capacity(base.nodes.len());
    for name in &base.nodes {
        match clock_domain_of(netlist, lib, name) {
            Ok((phase, _warnings)) => nodes.push(LatchNode {
                name: name.clone(),
                phase: Some(phase),
            }),
            Err(_) => {
                violations.push(Violation {
                    kind: ViolationKind::UncolorableClock,
                    from: name.clone(),
                    to: None,
                    path: Vec::new(),
                });
                nodes.push(LatchNode {
                    name: name.clone(),
                    phase: None,
                });
            }
        }
    }

    let mut edges = Vec::with_capacity(base.edges.len());
    for (from, to, witness) in &base.edges {
        if let (Some(a), Some(b)) = (nodes[*from].phase, nodes[*to].phase) {
            if a == b {
                violations.push(Violation {
                    kind: ViolationKind::SameColorEdge,
                    from: nodes[*from].name.clone(),
                    to: Some(nodes[*to].name.clone()),
                    path: witness.clone(),
                });
            }
        }
        edges.push(LatchEdge {
            from: *from,
            to: *to,
            witness: witness.clone(),
        });
    }

    // Third discipline rule: no combinational cone may mix phase domains.
    for (inst_idx, sources) in &base.painted {
        let mut phases = BTreeSet::new();
        for source in sources {
            if let Some(phase) = nodes[*source].phase {
                phases.insert(phase);
            }
        }
        if phases.len() > 1 {
            violations.push(Violation {
                kind: ViolationKind::MixedCone,
                from: netlist.instances[*inst_idx].name.clone(),
                to: None,
                path: Vec::new(),
            });
        }
    }

    violations.sort_by_key(|a| (a.from.clone(), a.to.clone()));
    (LatchGraph { nodes, edges }, violations)
}

/// Checks that every edge connects opposite colors. Empty iff the graph
/// satisfies the two-phase discipline.
pub fn check_two_color(graph: &LatchGraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    for edge in &graph.edges {
        let from = &graph.nodes[edge.from];
        let to = &graph.nodes[edge.to];
        match (from.phase, to.phase) {
            (Some(a), Some(b)) if a == b => violations.push(Violation {
                kind: ViolationKind::SameColorEdge,
                from: from.name.clone(),
                to: Some(to.name.clone()),
                path: edge.witness.clone(),
            }),
            _ => {}
        }
    }
    violations
}

/// Confirms a violation's witness path is a real net chain in the netlist:
/// consecutive nets connected through one combinational instance, starting at
/// the source's output and ending at a net feeding the destination.
pub fn witness_is_valid(netlist: &Netlist, lib: &CellLibrary, violation: &Violation) -> bool {
    let Some(to) = &violation.to else {
        return false;
    };
    let index = Index::build(netlist, lib);
    let path = &violation.path;
    if path.is_empty() {
        return false;
    }
    let Some(from_inst) = netlist.instance(&violation.from) else {
        return false;
    };
    let Some(from_kind) = lib.kind(&from_inst.kind) else {
        return false;
    };
    let from_out = &from_inst.pins[&from_kind.output_pin().unwrap().name];
    if &path[0] != from_out {
        return false;
    }
    // Each step crosses one combinational instance.
    for pair in path.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let Some(Driver::Pin(i, _)) = index.driver_of.get(b) else {
            return false;
        };
        let inst = &netlist.instances[*i];
        let Some(kind) = lib.kind(&inst.kind) else {
            return false;
        };
        if !kind.is_comb() {
            return false;
        }
        let feeds = kind.input_pins().any(|p| inst.pins.get(&p.name) == Some(a));
        if !feeds {
            return false;
        }
    }
    // The last net feeds an input pin of the destination.
    let Some(to_inst) = netlist.instance(to) else {
        return false;
    };
    let Some(to_kind) = lib.kind(&to_inst.kind) else {
        return false;
    };
    let last = path.last().unwrap();
    to_kind
        .input_pins()
        .any(|p| to_inst.pins.get(&p.name) == Some(last))
}

/// Outcome of bounded co-simulation equivalence checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivVerdict {
    pub equivalent: bool,
    pub cycles: usize,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub seed: u64,
    pub cycle: usize,
    pub port: String,
    pub expected: bool,
    pub got: bool,
}

/// Options for [`check_equivalence`].
#[derive(Debug, Clone, Copy)]
pub struct EquivOptions {
    pub cycles: usize,
    pub seeds: u64,
    pub seed_base: u64,
    /// Cycles to skip before comparing, covering retiming transients.
    pub warmup: usize,
}

impl Default for EquivOptions {
    fn default() -> Self {
        EquivOptions {
            cycles: 1000,
            seeds: 16,
            seed_base: 0,
            warmup: 0,
        }
    }
}

/// Runs the original flip-flop netlist and the transformed two-phase latch
/// netlist on identical random stimuli and compares primary outputs
/// cycle-for-cycle: post-edge sample against post-phase-2 sample, zero
/// offset.
pub fn check_equivalence(
    original: &Netlist,
    transformed: &Netlist,
    lib: &CellLibrary,
    schedule: &PhaseSchedule,
    options: &EquivOptions,
) -> Result<EquivVerdict, VerifyError> {
    let orig_inputs: BTreeSet<String> = original.data_input_ports().into_iter().collect();
    let trans_inputs: BTreeSet<String> = transformed.data_input_ports().into_iter().collect();
    if orig_inputs != trans_inputs {
        return Err(VerifyError::PortMismatch(format!(
            "data inputs differ: {orig_inputs:?} vs {trans_inputs:?}"
        )));
    }
    let orig_outputs: BTreeSet<String> = original.output_ports().into_iter().collect();
    let trans_outputs: BTreeSet<String> = transformed.output_ports().into_iter().collect();
    if orig_outputs != trans_outputs {
        return Err(VerifyError::PortMismatch(format!(
            "outputs differ: {orig_outputs:?} vs {trans_outputs:?}"
        )));
    }

    let ff_sim = FfSim::new(original, lib)?;
    let tp_sim = TwoPhaseSim::new(transformed, lib)?;
    let seeds: Vec<u64> = (0..options.seeds).map(|s| options.seed_base + s).collect();

    for &seed in &seeds {
        let stimulus = Stimulus::random(original, options.cycles, seed);
        let expected = ff_sim.run(&stimulus)?;
        let got = tp_sim.run(&stimulus, schedule)?;
        for cycle in options.warmup..options.cycles {
            for port in &orig_outputs {
                let e = expected.value(cycle, port).unwrap();
                let g = got.value(cycle, port).unwrap();
                if e != g {
                    return Ok(EquivVerdict {
                        equivalent: false,
                        cycles: options.cycles,
                        seeds,
                        divergence: Some(Divergence {
                            seed,
                            cycle,
                            port: port.clone(),
                            expected: e,
                            got: g,
                        }),
                    });
                }
            }
        }
    }
    Ok(EquivVerdict {
        equivalent: true,
        cycles: options.cycles,
        seeds,
        divergence: None,
    })
}

/// Compares two flip-flop netlists under identical stimuli; used as the
/// pre/post retiming gate.
pub fn check_ff_equivalence(
    before: &Netlist,
    after: &Netlist,
    lib: &CellLibrary,
    options: &EquivOptions,
) -> Result<EquivVerdict, VerifyError> {
    let a = FfSim::new(before, lib)?;
    let b = FfSim::new(after, lib)?;
    let outputs: BTreeSet<String> = before.output_ports().into_iter().collect();
    let after_outputs: BTreeSet<String> = after.output_ports().into_iter().collect();
    if outputs != after_outputs {
        return Err(VerifyError::PortMismatch(format!(
            "outputs differ: {outputs:?} vs {after_outputs:?}"
        )));
    }
    let seeds: Vec<u64> = (0..options.seeds).map(|s| options.seed_base + s).collect();
    for &seed in &seeds {
        let stimulus = Stimulus::random(before, options.cycles, seed);
        let expected = a.run(&stimulus)?;
        let got = b.run(&stimulus)?;
        for cycle in options.warmup..options.cycles {
            for port in &outputs {
                let e = expected.value(cycle, port).unwrap();
                let g = got.value(cycle, port).unwrap();
                if e != g {
                    return Ok(EquivVerdict {
                        equivalent: false,
                        cycles: options.cycles,
                        seeds,
                        divergence: Some(Divergence {
                            seed,
                            cycle,
                            port: port.clone(),
                            expected: e,
                            got: g,
                        }),
                    });
                }
            }
        }
    }
    Ok(EquivVerdict {
        equivalent: true,
        cycles: options.cycles,
        seeds,
        divergence: None,
    })
}

/// Machine-readable verification report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub two_color: TwoColorReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivVerdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoColorReport {
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn clean(&self) -> bool {
        self.two_color.violations.is_empty()
            && self.equivalence.as_ref().is_none_or(|e| e.equivalent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Moves one latch's clock/enable wiring onto the opposite clock: the
/// single-fault mutation used to exercise the checker. Returns None when the
/// instance's clock is wired to neither clock port (directly or through a
/// gate's clock side).
pub fn flip_phase_mutant(netlist: &Netlist, lib: &CellLibrary, instance: &str) -> Option<Netlist> {
    let clocks = netlist.clock_input_ports();
    if clocks.len() != 2 {
        return None;
    }
    let inst = netlist.instance(instance)?;
    let kind = lib.kind(&inst.kind)?;
    if !kind.is_sequential() {
        return None;
    }
    let clock_pin = kind.clock_pin().unwrap().name.clone();
    let wired = inst.pins[&clock_pin].clone();

    let mut out = netlist.clone();
    let flip = |net: &str| -> Option<String> {
        if net == clocks[0] {
            Some(clocks[1].clone())
        } else if net == clocks[1] {
            Some(clocks[0].clone())
        } else {
            None
        }
    };
    if let Some(other) = flip(&wired) {
        let slot = out.instances.iter_mut().find(|i| i.name == instance)?;
        slot.pins.insert(clock_pin, other);
        return Some(out);
    }
    // Gated clock: flip the AND's clock-side input instead.
    let index = Index::build(netlist, lib);
    if let Some(Driver::Pin(i, _)) = index.driver_of.get(&wired) {
        let gate = &netlist.instances[*i];
        let gate_kind = lib.kind(&gate.kind)?;
        if gate_kind.is_and2_like() {
            for pin in gate_kind.input_pins() {
                if let Some(other) = gate.pins.get(&pin.name).and_then(|n| flip(n)) {
                    let gate_name = gate.name.clone();
                    let slot = out.instances.iter_mut().find(|x| x.name == gate_name)?;
                    slot.pins.insert(pin.name.clone(), other);
                    return Some(out);
                }
            }
        }
    }
    None
}
