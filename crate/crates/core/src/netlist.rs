//! Flattened gate-level netlist data model and canonical JSON interchange.
//!
//! A [`Netlist`] is a single flattened module: ports, nets, and cell
//! instances. Connectivity is by net name; each instance maps every pin of
//! its cell kind to a net. Two reserved nets carry constant logic-0 and
//! logic-1. Netlists are immutable by convention once built: passes take a
//! netlist by reference and return a new one.
//!
//! The canonical interchange format is a JSON document:
//!
//! ```json
//! {"name": "top",
//!  "ports": [{"name": "clk", "dir": "input", "kind": "clock"}, ...],
//!  "nets": ["a", "b", ...],
//!  "constants": {"zero": "$const0", "one": "$const1"},
//!  "instances": [{"name": "u1", "kind": "INV", "pins": {"A": "a", "Y": "b"}}]}
//! ```
//!
//! Field order is free on input; [`emit_canonical`] writes sorted keys and
//! sorted net/instance arrays so emission is deterministic and re-emission is
//! byte-identical.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{Behavior, CellLibrary, PinDir};

pub const DEFAULT_ZERO_NET: &str = "$const0";
pub const DEFAULT_ONE_NET: &str = "$const1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDir {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    Data,
    Clock,
}

/// A top-level port. The port connects to the net with the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub dir: PortDir,
    pub kind: PortKind,
}

/// Reserved constant net names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub zero: String,
    pub one: String,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            zero: DEFAULT_ZERO_NET.to_string(),
            one: DEFAULT_ONE_NET.to_string(),
        }
    }
}

/// A cell instance: a named occurrence of a library kind with pins bound to nets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub kind: String,
    /// Pin name to net name.
    pub pins: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(name: impl Into<String>, kind: impl Into<String>) -> Instance {
        Instance {
            name: name.into(),
            kind: kind.into(),
            pins: BTreeMap::new(),
        }
    }

    pub fn pin(mut self, pin: impl Into<String>, net: impl Into<String>) -> Instance {
        self.pins.insert(pin.into(), net.into());
        self
    }
}

/// A flattened gate-level netlist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    pub ports: Vec<Port>,
    pub nets: BTreeSet<String>,
    #[serde(default)]
    pub constants: Constants,
    pub instances: Vec<Instance>,
}

impl Netlist {
    pub fn new(name: impl Into<String>) -> Netlist {
        let constants = Constants::default();
        let mut nets = BTreeSet::new();
        nets.insert(constants.zero.clone());
        nets.insert(constants.one.clone());
        Netlist {
            name: name.into(),
            ports: Vec::new(),
            nets,
            constants,
            instances: Vec::new(),
        }
    }

    pub fn add_port(&mut self, name: impl Into<String>, dir: PortDir, kind: PortKind) {
        let name = name.into();
        self.nets.insert(name.clone());
        self.ports.push(Port { name, dir, kind });
    }

    pub fn add_net(&mut self, name: impl Into<String>) -> String {
        let name = name.into();
        self.nets.insert(name.clone());
        name
    }

    /// Adds a net, uniquifying with a numeric suffix on collision.
    pub fn add_fresh_net(&mut self, base: &str) -> String {
        let name = self.fresh_name(base, |n, s| !n.nets.contains(s));
        self.nets.insert(name.clone());
        name
    }

    /// Picks an instance name not currently in use.
    pub fn fresh_instance_name(&self, base: &str) -> String {
        self.fresh_name(base, |n, s| n.instance(s).is_none())
    }

    fn fresh_name(&self, base: &str, free: impl Fn(&Netlist, &str) -> bool) -> String {
        if free(self, base) {
            return base.to_string();
        }
        for i in 1.. {
            let candidate = format!("{base}_{i}");
            if free(self, &candidate) {
                return candidate;
            }
        }
        unreachable!()
    }

    pub fn add_instance(&mut self, instance: Instance) {
        self.instances.push(instance);
    }

    pub fn instance(&self, name: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.name == name)
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn is_const(&self, net: &str) -> Option<bool> {
        if net == self.constants.zero {
            Some(false)
        } else if net == self.constants.one {
            Some(true)
        } else {
            None
        }
    }

    /// Renames a net everywhere: net set, ports, and pin bindings.
    pub fn rename_net(&mut self, old: &str, new: &str) {
        if !self.nets.remove(old) {
            return;
        }
        self.nets.insert(new.to_string());
        for port in &mut self.ports {
            if port.name == old {
                port.name = new.to_string();
            }
        }
        for inst in &mut self.instances {
            for net in inst.pins.values_mut() {
                if net == old {
                    *net = new.to_string();
                }
            }
        }
    }

    /// Sequential / combinational / total cell counts.
    pub fn cell_counts(&self, lib: &CellLibrary) -> CellCounts {
        let mut counts = CellCounts::default();
        for inst in &self.instances {
            match lib.kind(&inst.kind).map(|k| &k.behavior) {
                Some(Behavior::Comb { .. }) => counts.comb += 1,
                Some(Behavior::Dff { .. }) | Some(Behavior::Latch) => counts.seq += 1,
                None => {}
            }
            counts.total += 1;
        }
        counts
    }

    /// A copy with nets, ports, instances, and pin maps in sorted order.
    pub fn normalized(&self) -> Netlist {
        let mut out = self.clone();
        out.ports.sort_by(|a, b| a.name.cmp(&b.name));
        out.instances.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    /// Structural equality: same ports, nets, constants, and instances,
    /// ignoring declaration order.
    pub fn structurally_equal(&self, other: &Netlist) -> bool {
        self.normalized() == other.normalized()
    }

    /// Names of data input ports, in declaration order.
    pub fn data_input_ports(&self) -> Vec<String> {
        self.ports
            .iter()
            .filter(|p| p.dir == PortDir::Input && p.kind == PortKind::Data)
            .map(|p| p.name.clone())
            .collect()
    }

    /// Names of output ports, in declaration order.
    pub fn output_ports(&self) -> Vec<String> {
        self.ports
            .iter()
            .filter(|p| p.dir == PortDir::Output)
            .map(|p| p.name.clone())
            .collect()
    }

    /// Names of clock input ports, in declaration order.
    pub fn clock_input_ports(&self) -> Vec<String> {
        self.ports
            .iter()
            .filter(|p| p.dir == PortDir::Input && p.kind == PortKind::Clock)
            .map(|p| p.name.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub seq: usize,
    pub comb: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// A validation finding. Diagnostics are values, not exceptions: `validate`
/// returns the full list so callers can report everything at once.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Net or instance the finding is attached to.
    pub locus: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(locus: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            severity: Severity::Error,
            locus: locus.into(),
            message: message.into(),
        }
    }

    pub fn warning(locus: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            severity: Severity::Warning,
            locus: locus.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.locus, self.message)
    }
}

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("canonical netlist parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid netlist:\n{}", format_diags(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("combinational cycle through {}", .0.join(", "))]
    CombCycle(Vec<String>),
}

fn format_diags(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// What drives a net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Driver {
    /// Index into `ports`.
    InputPort(usize),
    /// Instance index and output pin name.
    Pin(usize, String),
    Const(bool),
}

/// Net-oriented connectivity index over an immutable netlist.
#[derive(Debug)]
pub struct Index {
    pub driver_of: HashMap<String, Driver>,
    /// Net name to reading instance input pins (instance index, pin name).
    pub readers_of: HashMap<String, Vec<(usize, String)>>,
}

impl Index {
    /// Builds the index. Multiply-driven nets keep the first driver; use
    /// [`validate`] to surface such problems as diagnostics.
    pub fn build(netlist: &Netlist, lib: &CellLibrary) -> Index {
        let mut driver_of: HashMap<String, Driver> = HashMap::new();
        let mut readers_of: HashMap<String, Vec<(usize, String)>> = HashMap::new();
        driver_of.insert(netlist.constants.zero.clone(), Driver::Const(false));
        driver_of.insert(netlist.constants.one.clone(), Driver::Const(true));
        for (i, port) in netlist.ports.iter().enumerate() {
            if port.dir == PortDir::Input {
                driver_of
                    .entry(port.name.clone())
                    .or_insert(Driver::InputPort(i));
            }
        }
        for (i, inst) in netlist.instances.iter().enumerate() {
            let Some(kind) = lib.kind(&inst.kind) else {
                continue;
            };
            for (pin_name, net) in &inst.pins {
                match kind.pin(pin_name).map(|p| p.dir) {
                    Some(PinDir::Output) => {
                        driver_of
                            .entry(net.clone())
                            .or_insert_with(|| Driver::Pin(i, pin_name.clone()));
                    }
                    Some(PinDir::Input) => readers_of
                        .entry(net.clone())
                        .or_default()
                        .push((i, pin_name.clone())),
                    None => {}
                }
            }
        }
        Index {
            driver_of,
            readers_of,
        }
    }
}

/// Checks all structural invariants. Returns an empty list iff the netlist is
/// well-formed against the library.
pub fn validate(netlist: &Netlist, lib: &CellLibrary) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut port_names = BTreeSet::new();
    for port in &netlist.ports {
        if !port_names.insert(&port.name) {
            diags.push(Diagnostic::error(&port.name, "duplicate port name"));
        }
        if !netlist.nets.contains(&port.name) {
            diags.push(Diagnostic::error(&port.name, "port has no matching net"));
        }
        if port.kind == PortKind::Clock && port.dir == PortDir::Output {
            diags.push(Diagnostic::warning(&port.name, "clock port with output direction"));
        }
    }

    let mut inst_names = BTreeSet::new();
    let mut driver_count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut read_nets: BTreeSet<&str> = BTreeSet::new();
    for port in &netlist.ports {
        match port.dir {
            PortDir::Input => *driver_count.entry(port.name.as_str()).or_default() += 1,
            PortDir::Output => {
                read_nets.insert(port.name.as_str());
            }
        }
    }
    *driver_count
        .entry(netlist.constants.zero.as_str())
        .or_default() += 1;
    *driver_count
        .entry(netlist.constants.one.as_str())
        .or_default() += 1;

    for inst in &netlist.instances {
        if !inst_names.insert(&inst.name) {
            diags.push(Diagnostic::error(&inst.name, "duplicate instance name"));
        }
        let Some(kind) = lib.kind(&inst.kind) else {
            diags.push(Diagnostic::error(
                &inst.name,
                format!("unknown cell kind `{}`", inst.kind),
            ));
            continue;
        };
        for pin in &kind.pins {
            if !inst.pins.contains_key(&pin.name) {
                diags.push(Diagnostic::error(
                    &inst.name,
                    format!("pin `{}` of kind `{}` is unconnected", pin.name, kind.name),
                ));
            }
        }
        for (pin_name, net) in &inst.pins {
            let Some(pin) = kind.pin(pin_name) else {
                diags.push(Diagnostic::error(
                    &inst.name,
                    format!("kind `{}` has no pin `{}`", kind.name, pin_name),
                ));
                continue;
            };
            if !netlist.nets.contains(net) {
                diags.push(Diagnostic::error(
                    &inst.name,
                    format!("pin `{pin_name}` dangles: net `{net}` is not declared"),
                ));
                continue;
            }
            match pin.dir {
                PinDir::Output => *driver_count.entry(net.as_str()).or_default() += 1,
                PinDir::Input => {
                    read_nets.insert(net.as_str());
                }
            }
        }
    }

    for net in read_nets {
        match driver_count.get(net).copied().unwrap_or(0) {
            0 => diags.push(Diagnostic::error(net, "undriven net")),
            1 => {}
            n => diags.push(Diagnostic::error(net, format!("multiple drivers ({n})"))),
        }
    }
    for (net, count) in &driver_count {
        if *count > 1 {
            let already = diags
                .iter()
                .any(|d| d.locus == *net && d.message.starts_with("multiple drivers"));
            if !already {
                diags.push(Diagnostic::error(*net, format!("multiple drivers ({count})")));
            }
        }
    }

    if let Err(NetlistError::CombCycle(cycle)) = topo_order_comb(netlist, lib) {
        diags.push(Diagnostic::error(
            cycle.first().cloned().unwrap_or_default(),
            format!("combinational cycle through {}", cycle.join(", ")),
        ));
    }

    diags
}

/// Topological order of combinational instances: every combinational instance
/// appears after all combinational instances driving its inputs. Sequential
/// outputs, ports, and constants act as sources.
pub fn topo_order_comb(netlist: &Netlist, lib: &CellLibrary) -> Result<Vec<usize>, NetlistError> {
    let index = Index::build(netlist, lib);
    let comb: Vec<usize> = netlist
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| lib.kind(&inst.kind).is_some_and(|k| k.is_comb()))
        .map(|(i, _)| i)
        .collect();
    let is_comb: BTreeSet<usize> = comb.iter().copied().collect();

    // Edges comb->comb through directly connecting nets.
    let mut indegree: HashMap<usize, usize> = comb.iter().map(|&i| (i, 0)).collect();
    let mut fanout: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in &comb {
        let inst = &netlist.instances[i];
        let kind = lib.kind(&inst.kind).unwrap();
        for (pin_name, net) in &inst.pins {
            if kind.pin(pin_name).map(|p| p.dir) != Some(PinDir::Output) {
                continue;
            }
            for (reader, _) in index.readers_of.get(net).map(|v| v.as_slice()).unwrap_or(&[]) {
                if is_comb.contains(reader) {
                    fanout.entry(i).or_default().push(*reader);
                    *indegree.get_mut(reader).unwrap() += 1;
                }
            }
        }
    }

    let mut ready: Vec<usize> = comb
        .iter()
        .copied()
        .filter(|i| indegree[i] == 0)
        .collect();
    ready.sort_unstable();
    let mut order = Vec::with_capacity(comb.len());
    let mut queue = std::collections::VecDeque::from(ready);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        if let Some(next) = fanout.get(&i) {
            for &j in next {
                let d = indegree.get_mut(&j).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(j);
                }
            }
        }
    }

    if order.len() != comb.len() {
        let in_order: BTreeSet<usize> = order.iter().copied().collect();
        let mut cycle: Vec<String> = comb
            .iter()
            .filter(|i| !in_order.contains(i))
            .map(|&i| netlist.instances[i].name.clone())
            .collect();
        cycle.sort();
        return Err(NetlistError::CombCycle(cycle));
    }
    Ok(order)
}

/// Parses the canonical interchange format, rejecting structurally invalid
/// designs.
pub fn parse_canonical(text: &str, lib: &CellLibrary) -> Result<Netlist, NetlistError> {
    let mut netlist: Netlist = serde_json::from_str(text).map_err(|e| NetlistError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    netlist.nets.insert(netlist.constants.zero.clone());
    netlist.nets.insert(netlist.constants.one.clone());
    let errors: Vec<Diagnostic> = validate(&netlist, lib)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if !errors.is_empty() {
        return Err(NetlistError::Invalid(errors));
    }
    Ok(netlist)
}

/// Emits the canonical interchange format: sorted keys, sorted net and
/// instance arrays, ports in declaration order.
pub fn emit_canonical(netlist: &Netlist) -> String {
    // serde_json maps are BTreeMap-backed, so object keys come out sorted.
    let normalized = netlist.normalized_for_emit();
    let value = serde_json::to_value(&normalized).expect("netlist serialization cannot fail");
    let mut text = serde_json::to_string_pretty(&value).expect("netlist serialization cannot fail");
    text.push('\n');
    text
}

impl Netlist {
    fn normalized_for_emit(&self) -> Netlist {
        let mut out = self.clone();
        out.instances.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }
}
