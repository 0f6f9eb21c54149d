//! Cycle-accurate logic simulation.
//!
//! Two simulation semantics share one compiled form:
//!
//! - [`simulate_ff`] runs flip-flop netlists with a single implicit clock:
//!   per cycle the inputs are applied, combinational logic settles, all
//!   flip-flops update atomically per their variant semantics, and outputs
//!   are sampled after the update. Asynchronous controls take priority at
//!   the edge and hold the output forced for the rest of the cycle.
//! - [`simulate_two_phase`] runs latch netlists on a discrete four-step
//!   schedule per cycle: phase-1 transparent, gap, phase-2 transparent, gap.
//!   During a transparent step, latches whose (possibly gated) enable net
//!   evaluates to 1 follow their data input and the network settles to a
//!   fixpoint. Inputs are applied at cycle start; outputs are sampled after
//!   the phase-2 window closes.
//!
//! All state elements initialize to 0; there is no unknown value.

use std::collections::{BTreeMap, HashMap};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::expr::CompiledExpr;
use crate::library::{Behavior, CellLibrary, DffControl};
use crate::netlist::{topo_order_comb, Netlist, NetlistError};

/// Per-cycle assignment of the primary data inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    /// Data input port names, fixed order.
    pub inputs: Vec<String>,
    /// One row per cycle, one value per input.
    pub cycles: Vec<Vec<bool>>,
    /// Seed used when randomly generated.
    pub seed: Option<u64>,
}

impl Stimulus {
    /// Uniform random stimulus over the netlist's data input ports.
    pub fn random(netlist: &Netlist, cycles: usize, seed: u64) -> Stimulus {
        let inputs = netlist.data_input_ports();
        let mut rng = StdRng::seed_from_u64(seed);
        let cycles = (0..cycles)
            .map(|_| (0..inputs.len()).map(|_| rng.random()).collect())
            .collect();
        Stimulus {
            inputs,
            cycles,
            seed: Some(seed),
        }
    }

    /// All-zero stimulus.
    pub fn zeros(netlist: &Netlist, cycles: usize) -> Stimulus {
        let inputs = netlist.data_input_ports();
        Stimulus {
            cycles: vec![vec![false; inputs.len()]; cycles],
            inputs,
            seed: None,
        }
    }

    /// Stimulus from explicit rows; rows must cover all data inputs.
    pub fn from_rows(inputs: Vec<String>, cycles: Vec<Vec<bool>>) -> Stimulus {
        Stimulus {
            inputs,
            cycles,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// Sampled net values, one row per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub nets: Vec<String>,
    pub samples: Vec<Vec<bool>>,
    /// Where in the cycle the samples were taken.
    pub sampling: SamplePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePoint {
    /// After the flip-flop update of each cycle.
    PostEdge,
    /// After the phase-2 window closes in each cycle.
    PostPhi2,
}

impl Trace {
    pub fn value(&self, cycle: usize, net: &str) -> Option<bool> {
        let idx = self.nets.iter().position(|n| n == net)?;
        self.samples.get(cycle).map(|row| row[idx])
    }
}

/// One sub-step of the two-phase schedule: which clock nets are high.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseStep {
    pub clk1: bool,
    pub clk2: bool,
}

/// Ordered sub-steps executed each cycle. Construction guarantees the two
/// phases are never simultaneously high.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    steps: Vec<PhaseStep>,
}

impl PhaseSchedule {
    /// The standard non-overlapping schedule: phase 1, gap, phase 2, gap.
    pub fn standard() -> PhaseSchedule {
        PhaseSchedule {
            steps: vec![
                PhaseStep { clk1: true, clk2: false },
                PhaseStep { clk1: false, clk2: false },
                PhaseStep { clk1: false, clk2: true },
                PhaseStep { clk1: false, clk2: false },
            ],
        }
    }

    /// Builds a schedule from explicit steps, rejecting overlap.
    pub fn new(steps: Vec<PhaseStep>) -> Result<PhaseSchedule, SimError> {
        if steps.iter().any(|s| s.clk1 && s.clk2) {
            return Err(SimError::OverlappingSchedule);
        }
        Ok(PhaseSchedule { steps })
    }

    pub fn steps(&self) -> &[PhaseStep] {
        &self.steps
    }
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        PhaseSchedule::standard()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("netlist error: {0}")]
    Netlist(#[from] NetlistError),
    #[error("unknown cell kind `{kind}` on instance `{instance}`")]
    UnknownKind { instance: String, kind: String },
    #[error("instance `{0}` is not a flip-flop; flip-flop simulation requires a pure FF netlist")]
    NotAFlipFlop(String),
    #[error("instance `{0}` is not a latch; two-phase simulation requires a pure latch netlist")]
    NotALatch(String),
    #[error("expected exactly 2 clock input ports, found {0}")]
    ClockPortCount(usize),
    #[error("stimulus does not cover data input `{0}`")]
    StimulusMismatch(String),
    #[error("unassigned source net `{0}`")]
    UnassignedSource(String),
    #[error("unstable transparent network; oscillating nets: {}", .0.join(", "))]
    Unstable(Vec<String>),
    #[error("phase schedule has overlapping transparent steps")]
    OverlappingSchedule,
    #[error("expression error on instance `{instance}`: {message}")]
    Expr { instance: String, message: String },
}

struct CombOp {
    output: usize,
    expr: CompiledExpr,
}

struct SeqCell {
    name: String,
    is_latch: bool,
    d: usize,
    q: usize,
    /// Clock net for flip-flops, enable net for latches.
    clock: usize,
    controls: Vec<(DffControl, usize)>,
}

/// A netlist compiled for repeated simulation: nets as dense indices,
/// combinational cells in topological order.
pub struct CompiledDesign {
    net_names: Vec<String>,
    net_index: HashMap<String, usize>,
    const_nets: [(usize, bool); 2],
    data_inputs: Vec<(String, usize)>,
    clock_inputs: Vec<(String, usize)>,
    outputs: Vec<(String, usize)>,
    comb_ops: Vec<CombOp>,
    seqs: Vec<SeqCell>,
}

impl CompiledDesign {
    pub fn compile(netlist: &Netlist, lib: &CellLibrary) -> Result<CompiledDesign, SimError> {
        let mut net_names: Vec<String> = netlist.nets.iter().cloned().collect();
        net_names.sort();
        let net_index: HashMap<String, usize> = net_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let lookup = |net: &str| -> usize { net_index[net] };

        let order = topo_order_comb(netlist, lib)?;
        let mut comb_ops = Vec::with_capacity(order.len());
        for i in order {
            let inst = &netlist.instances[i];
            let kind = lib.kind(&inst.kind).ok_or_else(|| SimError::UnknownKind {
                instance: inst.name.clone(),
                kind: inst.kind.clone(),
            })?;
            let Behavior::Comb { function } = &kind.behavior else {
                continue;
            };
            let expr = function
                .compile(&|pin| inst.pins.get(pin).map(|net| lookup(net)))
                .map_err(|e| SimError::Expr {
                    instance: inst.name.clone(),
                    message: e.to_string(),
                })?;
            let out_pin = kind.output_pin().expect("comb kind has an output");
            let output = lookup(&inst.pins[&out_pin.name]);
            comb_ops.push(CombOp { output, expr });
        }

        let mut seqs = Vec::new();
        for inst in &netlist.instances {
            let kind = lib.kind(&inst.kind).ok_or_else(|| SimError::UnknownKind {
                instance: inst.name.clone(),
                kind: inst.kind.clone(),
            })?;
            if !kind.is_sequential() {
                continue;
            }
            let d = lookup(&inst.pins[&kind.data_pin().unwrap().name]);
            let q = lookup(&inst.pins[&kind.output_pin().unwrap().name]);
            let clock = lookup(&inst.pins[&kind.clock_pin().unwrap().name]);
            let mut controls = Vec::new();
            for control in kind.dff_controls() {
                let pin = kind.control_pin(*control).unwrap();
                controls.push((*control, lookup(&inst.pins[&pin.name])));
            }
            seqs.push(SeqCell {
                name: inst.name.clone(),
                is_latch: matches!(kind.behavior, Behavior::Latch),
                d,
                q,
                clock,
                controls,
            });
        }
        // Deterministic sequential order.
        seqs.sort_by(|a, b| a.name.cmp(&b.name));

        let data_inputs = netlist
            .data_input_ports()
            .into_iter()
            .map(|name| {
                let idx = lookup(&name);
                (name, idx)
            })
            .collect();
        let clock_inputs = netlist
            .clock_input_ports()
            .into_iter()
            .map(|name| {
                let idx = lookup(&name);
                (name, idx)
            })
            .collect();
        let outputs = netlist
            .output_ports()
            .into_iter()
            .map(|name| {
                let idx = lookup(&name);
                (name, idx)
            })
            .collect();
        let const_nets = [
            (lookup(&netlist.constants.zero), false),
            (lookup(&netlist.constants.one), true),
        ];

        Ok(CompiledDesign {
            net_names,
            net_index,
            const_nets,
            data_inputs,
            clock_inputs,
            outputs,
            comb_ops,
            seqs,
        })
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs.iter().map(|(n, _)| n.clone()).collect()
    }

    fn fresh_nets(&self) -> Vec<bool> {
        let mut nets = vec![false; self.net_names.len()];
        for (idx, value) in self.const_nets {
            nets[idx] = value;
        }
        nets
    }

    fn apply_inputs(
        &self,
        nets: &mut [bool],
        stimulus: &Stimulus,
        cycle: usize,
    ) -> Result<(), SimError> {
        let row = &stimulus.cycles[cycle];
        for (name, idx) in &self.data_inputs {
            let pos = stimulus
                .inputs
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| SimError::StimulusMismatch(name.clone()))?;
            nets[*idx] = row[pos];
        }
        Ok(())
    }

    /// One pass over combinational cells in topological order. Returns true
    /// if any net changed.
    fn comb_pass(&self, nets: &mut [bool]) -> bool {
        let mut changed = false;
        for op in &self.comb_ops {
            let value = op.expr.eval(nets);
            if nets[op.output] != value {
                nets[op.output] = value;
                changed = true;
            }
        }
        changed
    }

    fn sample(&self, nets: &[bool]) -> Vec<bool> {
        self.outputs.iter().map(|(_, idx)| nets[*idx]).collect()
    }

    fn oscillating_nets(&self, before: &[bool], after: &[bool]) -> Vec<String> {
        before
            .iter()
            .zip(after.iter())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| self.net_names[i].clone())
            .collect()
    }
}

/// Flip-flop netlist simulator. Compile once, run for many stimuli.
pub struct FfSim {
    design: CompiledDesign,
}

impl FfSim {
    pub fn new(netlist: &Netlist, lib: &CellLibrary) -> Result<FfSim, SimError> {
        let design = CompiledDesign::compile(netlist, lib)?;
        for seq in &design.seqs {
            if seq.is_latch {
                return Err(SimError::NotAFlipFlop(seq.name.clone()));
            }
        }
        Ok(FfSim { design })
    }

    pub fn run(&self, stimulus: &Stimulus) -> Result<Trace, SimError> {
        let design = &self.design;
        let mut nets = design.fresh_nets();
        let mut state = vec![false; design.seqs.len()];
        let mut samples = Vec::with_capacity(stimulus.len());

        for cycle in 0..stimulus.len() {
            design.apply_inputs(&mut nets, stimulus, cycle)?;
            // Pre-edge settle: sequential outputs hold their stored state.
            for (seq, value) in design.seqs.iter().zip(state.iter()) {
                nets[seq.q] = *value;
            }
            design.comb_pass(&mut nets);

            // Edge: all flip-flops update atomically from settled pin values.
            let mut next = state.clone();
            for (i, seq) in design.seqs.iter().enumerate() {
                next[i] = ff_next_state(seq, &nets, state[i]);
            }
            state = next;

            // Post-update settle; async controls force outputs level-sensitively.
            for (seq, value) in design.seqs.iter().zip(state.iter()) {
                nets[seq.q] = *value;
            }
            let bound = design.seqs.len() + 2;
            let mut stable = false;
            for _ in 0..bound {
                let mut changed = design.comb_pass(&mut nets);
                for (i, seq) in design.seqs.iter().enumerate() {
                    let mut visible = state[i];
                    for (control, net) in &seq.controls {
                        if control.is_async() && nets[*net] {
                            visible = control.forced_value().unwrap();
                        }
                    }
                    if nets[seq.q] != visible {
                        nets[seq.q] = visible;
                        changed = true;
                    }
                }
                if !changed {
                    stable = true;
                    break;
                }
            }
            if !stable {
                let before = nets.clone();
                design.comb_pass(&mut nets);
                return Err(SimError::Unstable(design.oscillating_nets(&before, &nets)));
            }

            samples.push(design.sample(&nets));
        }

        Ok(Trace {
            nets: design.output_names(),
            samples,
            sampling: SamplePoint::PostEdge,
        })
    }
}

fn ff_next_state(seq: &SeqCell, nets: &[bool], current: bool) -> bool {
    let mut write = true;
    let mut forced: Option<bool> = None;
    for (control, net) in &seq.controls {
        match control {
            DffControl::Enable => write = nets[*net],
            _ => {
                if nets[*net] {
                    forced = Some(control.forced_value().unwrap());
                }
            }
        }
    }
    if let Some(value) = forced {
        return value;
    }
    if write {
        nets[seq.d]
    } else {
        current
    }
}

/// Two-phase latch netlist simulator. Compile once, run for many stimuli.
///
/// The first clock input port in declaration order carries phase 1, the
/// second phase 2.
pub struct TwoPhaseSim {
    design: CompiledDesign,
    clk1: usize,
    clk2: usize,
}

impl TwoPhaseSim {
    pub fn new(netlist: &Netlist, lib: &CellLibrary) -> Result<TwoPhaseSim, SimError> {
        let design = CompiledDesign::compile(netlist, lib)?;
        for seq in &design.seqs {
            if !seq.is_latch {
                return Err(SimError::NotALatch(seq.name.clone()));
            }
        }
        if design.clock_inputs.len() != 2 {
            return Err(SimError::ClockPortCount(design.clock_inputs.len()));
        }
        let clk1 = design.clock_inputs[0].1;
        let clk2 = design.clock_inputs[1].1;
        Ok(TwoPhaseSim { design, clk1, clk2 })
    }

    pub fn run(&self, stimulus: &Stimulus, schedule: &PhaseSchedule) -> Result<Trace, SimError> {
        let design = &self.design;
        let mut nets = design.fresh_nets();
        let mut samples = Vec::with_capacity(stimulus.len());

        for cycle in 0..stimulus.len() {
            design.apply_inputs(&mut nets, stimulus, cycle)?;
            for step in schedule.steps() {
                nets[self.clk1] = step.clk1;
                nets[self.clk2] = step.clk2;
                self.settle(&mut nets)?;
            }
            samples.push(design.sample(&nets));
        }

        Ok(Trace {
            nets: design.output_names(),
            samples,
            sampling: SamplePoint::PostPhi2,
        })
    }

    /// Settles combinational logic and transparent latches to a fixpoint.
    fn settle(&self, nets: &mut [bool]) -> Result<(), SimError> {
        let design = &self.design;
        let bound = design.comb_ops.len() + design.seqs.len() + 2;
        for _ in 0..bound {
            let mut changed = design.comb_pass(nets);
            for seq in &design.seqs {
                if nets[seq.clock] && nets[seq.q] != nets[seq.d] {
                    nets[seq.q] = nets[seq.d];
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
        // Bound exhausted: snapshot one more pass to name the oscillators.
        let before = nets.to_vec();
        design.comb_pass(nets);
        for seq in &design.seqs {
            if nets[seq.clock] {
                nets[seq.q] = nets[seq.d];
            }
        }
        Err(SimError::Unstable(design.oscillating_nets(&before, nets)))
    }
}

/// Evaluates combinational logic once: `values` must assign every source net
/// (primary inputs and sequential outputs); returns all net values with
/// combinational outputs filled in.
pub fn eval_comb(
    netlist: &Netlist,
    lib: &CellLibrary,
    values: &BTreeMap<String, bool>,
) -> Result<BTreeMap<String, bool>, SimError> {
    let design = CompiledDesign::compile(netlist, lib)?;
    let mut nets = design.fresh_nets();
    for (name, idx) in &design.data_inputs {
        let value = values
            .get(name)
            .ok_or_else(|| SimError::UnassignedSource(name.clone()))?;
        nets[*idx] = *value;
    }
    for seq in &design.seqs {
        let name = &design.net_names[seq.q];
        let value = values
            .get(name)
            .ok_or_else(|| SimError::UnassignedSource(name.clone()))?;
        nets[seq.q] = *value;
    }
    // Any other provided values (clock nets, say) are applied as given.
    for (name, value) in values {
        if let Some(idx) = design.net_index.get(name) {
            nets[*idx] = *value;
        }
    }
    design.comb_pass(&mut nets);
    Ok(design
        .net_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), nets[i]))
        .collect())
}

/// Simulates a flip-flop netlist. See the module docs for the semantics.
pub fn simulate_ff(
    netlist: &Netlist,
    lib: &CellLibrary,
    stimulus: &Stimulus,
) -> Result<Trace, SimError> {
    FfSim::new(netlist, lib)?.run(stimulus)
}

/// Simulates a two-phase latch netlist on the given schedule.
pub fn simulate_two_phase(
    netlist: &Netlist,
    lib: &CellLibrary,
    stimulus: &Stimulus,
    schedule: &PhaseSchedule,
) -> Result<Trace, SimError> {
    TwoPhaseSim::new(netlist, lib)?.run(stimulus, schedule)
}

/// Renders a trace as `cycle,net,value` CSV.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = String::from("cycle,net,value\n");
    for (cycle, row) in trace.samples.iter().enumerate() {
        for (net, value) in trace.nets.iter().zip(row.iter()) {
            out.push_str(&format!("{cycle},{net},{}\n", *value as u8));
        }
    }
    out
}

/// Renders a trace as a minimal VCD waveform, one timestep per cycle.
pub fn trace_to_vcd(trace: &Trace, design: &str) -> String {
    let mut out = String::new();
    out.push_str("$timescale 1ns $end\n");
    out.push_str(&format!("$scope module {design} $end\n"));
    let ids: Vec<String> = (0..trace.nets.len())
        .map(|i| {
            let mut id = String::new();
            let mut n = i;
            loop {
                id.push((b'!' + (n % 94) as u8) as char);
                n /= 94;
                if n == 0 {
                    break;
                }
            }
            id
        })
        .collect();
    for (net, id) in trace.nets.iter().zip(ids.iter()) {
        out.push_str(&format!("$var wire 1 {id} {net} $end\n"));
    }
    out.push_str("$upscope $end\n$enddefinitions $end\n");
    let mut previous: Vec<Option<bool>> = vec![None; trace.nets.len()];
    for (cycle, row) in trace.samples.iter().enumerate() {
        out.push_str(&format!("#{cycle}\n"));
        for (i, value) in row.iter().enumerate() {
            if previous[i] != Some(*value) {
                out.push_str(&format!("{}{}\n", *value as u8, ids[i]));
                previous[i] = Some(*value);
            }
        }
    }
    out
}
