//! Latch-aware static timing analysis with time borrowing.
//!
//! Arrival times propagate through the latch graph as a fixed point: a latch
//! departs at its window open (plus skew and data-to-output delay) unless
//! data arrives later, in which case the stage borrows the overshoot from
//! its own transparent window. Borrowing that keeps growing lap after lap
//! around a feedback loop means the period is infeasible.
//!
//! The setup check is the residual of the latch setup constraint: data plus
//! setup margin must beat the sampling (closing) clock edge. The hold check
//! is the printed form of the latch hold constraint over each latch-to-latch
//! edge using minimum path delays; a flag substitutes the launching latch's
//! data-to-output minimum for the receiving one's, since the printed
//! equation is ambiguous on which latch it means.
//!
//! All window arithmetic lives in [`ClockSpec`]: phase 1 is transparent over
//! `[0, duty*T)`, phase 2 over `[offset*T, offset*T + duty*T)`, and the
//! defaults (duty 0.49, offset 0.5) leave a 0.01*T non-overlap gap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::CellLibrary;
use crate::netlist::Netlist;
use crate::transform::PhaseTag;
use crate::verify::{build_latch_graph, seq_graph, Violation};

const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("invalid clock specification: {0}")]
    BadClockSpec(String),
    #[error("netlist fails two-phase checks; run verification: {}", format_violations(.0))]
    NotTwoPhase(Vec<Violation>),
    #[error(
        "period is infeasible: borrowing grows without bound at {}",
        .0.join(", ")
    )]
    InfeasiblePeriod(Vec<String>),
    #[error("instance `{0}` not found in library")]
    UnknownKind(String),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Two-phase clock waveform: period, duty cycle, phase separation, and a
/// per-latch skew table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    /// Clock period T_c in ns.
    pub period: f64,
    /// Transparent fraction of the period per phase.
    pub duty: f64,
    /// Phase-2 window offset as a fraction of the period.
    pub phase2_offset: f64,
    /// Per-latch clock skew in ns; absent latches have zero skew.
    #[serde(default)]
    pub skew: BTreeMap<String, f64>,
}

impl ClockSpec {
    /// 180-degree offset waveforms with a 0.49 duty cycle.
    pub fn new(period: f64) -> ClockSpec {
        ClockSpec {
            period,
            duty: 0.49,
            phase2_offset: 0.5,
            skew: BTreeMap::new(),
        }
    }

    /// Checks the windows are well-formed and never overlap.
    pub fn validate(&self) -> Result<(), TimingError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(TimingError::BadClockSpec("period must be positive".into()));
        }
        if !(self.duty.is_finite() && self.duty > 0.0) {
            return Err(TimingError::BadClockSpec("duty must be positive".into()));
        }
        if !(self.phase2_offset > 0.0 && self.phase2_offset < 1.0) {
            return Err(TimingError::BadClockSpec(
                "phase-2 offset must lie inside the period".into(),
            ));
        }
        // Window 2 opens after window 1 closes, and window 1's next opening
        // comes after window 2 closes.
        if self.duty > self.phase2_offset + EPS {
            return Err(TimingError::BadClockSpec(
                "phase windows overlap: duty exceeds the phase-2 offset".into(),
            ));
        }
        if self.duty > 1.0 - self.phase2_offset + EPS {
            return Err(TimingError::BadClockSpec(
                "phase windows overlap: phase 2 runs into the next phase 1".into(),
            ));
        }
        Ok(())
    }

    /// Transparent pulse width T_i = duty * T_c.
    pub fn pulse_width(&self) -> f64 {
        self.duty * self.period
    }

    /// Window open edge within the nominal period.
    pub fn open(&self, phase: PhaseTag) -> f64 {
        match phase {
            PhaseTag::Phi1 => 0.0,
            PhaseTag::Phi2 => self.phase2_offset * self.period,
        }
    }

    /// Window close (sampling) edge within the nominal period.
    pub fn close(&self, phase: PhaseTag) -> f64 {
        self.open(phase) + self.pulse_width()
    }

    /// Time from `from`'s open edge to the next open edge of `to`.
    pub fn separation(&self, from: PhaseTag, to: PhaseTag) -> f64 {
        let raw = self.open(to) - self.open(from);
        if raw > EPS {
            raw
        } else {
            raw + self.period
        }
    }

    pub fn skew_of(&self, latch: &str) -> f64 {
        self.skew.get(latch).copied().unwrap_or(0.0)
    }

    /// Largest pairwise skew difference across the given latches.
    pub fn skew_max(&self, latches: &[String]) -> f64 {
        let values: Vec<f64> = latches.iter().map(|l| self.skew_of(l)).collect();
        let mut worst: f64 = 0.0;
        for (i, a) in values.iter().enumerate() {
            for b in &values[i + 1..] {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// The borrowing budget of a latch: window width minus its setup time.
    pub fn max_borrow(&self, setup: f64) -> f64 {
        self.pulse_width() - setup
    }
}

/// Per-latch arrival/borrow/slack data.
#[derive(Debug, Clone, PartialEq)]
pub struct LatchTimingPoint {
    pub name: String,
    pub phase: PhaseTag,
    /// Worst data arrival in absolute window time (open + skew + overshoot).
    pub arrival: f64,
    /// Departure time: max(arrival, effective open) + data-to-output delay.
    pub departure: f64,
    /// Time borrowed from this latch's own window.
    pub borrow: f64,
    /// Borrow budget: window width minus setup.
    pub max_borrow: f64,
    /// Setup residual, filled by [`setup_check`].
    pub setup_slack: f64,
    /// Max-delay fan-in paths (launching latch, combinational delay).
    pub fanin_max: Vec<(String, f64)>,
    /// Min-delay fan-in paths.
    pub fanin_min: Vec<(String, f64)>,
}

/// Hold residual over one latch-to-latch edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldSlack {
    pub from: String,
    pub to: String,
    pub slack: f64,
}

/// Per-edge minimum and maximum combinational path delays over the latch
/// graph's edges, computed from library delay_min / delay_max.
pub(crate) fn edge_delays(
    netlist: &Netlist,
    lib: &CellLibrary,
) -> BTreeMap<(String, String), (f64, f64)> {
    use crate::library::PinDir;
    use crate::netlist::{Driver, Index};

    let graph = seq_graph(netlist, lib);
    let index = Index::build(netlist, lib);
    let order = crate::netlist::topo_order_comb(netlist, lib).unwrap_or_default();
    let mut delays = BTreeMap::new();

    for (i, source) in graph.nodes.iter().enumerate() {
        let inst = netlist.instance(source).unwrap();
        let kind = lib.kind(&inst.kind).unwrap();
        let start = inst.pins[&kind.output_pin().unwrap().name].clone();

        // Longest/shortest comb path from the source's output net.
        let mut max_at: BTreeMap<String, f64> = BTreeMap::new();
        let mut min_at: BTreeMap<String, f64> = BTreeMap::new();
        max_at.insert(start.clone(), 0.0);
        min_at.insert(start.clone(), 0.0);
        for &ci in &order {
            let cinst = &netlist.instances[ci];
            let ckind = lib.kind(&cinst.kind).unwrap();
            let mut best_max: Option<f64> = None;
            let mut best_min: Option<f64> = None;
            for pin in ckind.input_pins() {
                let net = &cinst.pins[&pin.name];
                if let Some(v) = max_at.get(net) {
                    best_max = Some(best_max.map_or(*v, |b: f64| b.max(*v)));
                }
                if let Some(v) = min_at.get(net) {
                    best_min = Some(best_min.map_or(*v, |b: f64| b.min(*v)));
                }
            }
            let out_net = cinst.pins[&ckind.pin_output_name()].clone();
            if let Some(v) = best_max {
                let arrival = v + ckind.timing.delay_max;
                let slot = max_at.entry(out_net.clone()).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(arrival);
            }
            if let Some(v) = best_min {
                let arrival = v + ckind.timing.delay_min;
                let slot = min_at.entry(out_net).or_insert(f64::INFINITY);
                *slot = slot.min(arrival);
            }
        }

        // Arrivals at each first-reachable latch's input pins.
        for (from, to, _) in graph.edges.iter().filter(|(f, _, _)| *f == i) {
            let sink = &graph.nodes[*to];
            let sink_inst = netlist.instance(sink).unwrap();
            let sink_kind = lib.kind(&sink_inst.kind).unwrap();
            let mut worst_max: Option<f64> = None;
            let mut worst_min: Option<f64> = None;
            for pin in sink_kind.pins.iter().filter(|p| p.dir == PinDir::Input) {
                let net = &sink_inst.pins[&pin.name];
                // Only include pins actually fed from this source with no
                // sequential element in between: the DP map has an entry iff
                // the net is in the source's combinational cone. Skip nets
                // driven directly by another sequential element.
                if let Some(Driver::Pin(di, _)) = index.driver_of.get(net) {
                    let dinst = &netlist.instances[*di];
                    if lib.kind(&dinst.kind).is_some_and(|k| k.is_sequential())
                        && net != &start
                    {
                        continue;
                    }
                }
                if let Some(v) = max_at.get(net) {
                    worst_max = Some(worst_max.map_or(*v, |b: f64| b.max(*v)));
                }
                if let Some(v) = min_at.get(net) {
                    worst_min = Some(worst_min.map_or(*v, |b: f64| b.min(*v)));
                }
            }
            if let (Some(mx), Some(mn)) = (worst_max, worst_min) {
                delays.insert(
                    (graph.nodes[*from].clone(), sink.clone()),
                    (mn, mx),
                );
            }
        }
        let _ = i;
    }
    delays
}

/// Fixed-point arrival propagation with time borrowing. Fails when any
/// latch's arrival keeps growing after latch-count iterations.
pub fn compute_arrivals(
    netlist: &Netlist,
    lib: &CellLibrary,
    clocks: &ClockSpec,
) -> Result<(Vec<LatchTimingPoint>, usize), TimingError> {
    clocks.validate()?;
    let (graph, violations) = build_latch_graph(netlist, lib);
    if !violations.is_empty() {
        return Err(TimingError::NotTwoPhase(violations));
    }
    let delays = edge_delays(netlist, lib);

    let n = graph.nodes.len();
    let phases: Vec<PhaseTag> = graph
        .nodes
        .iter()
        .map(|node| node.phase.expect("checked by violations"))
        .collect();
    let kinds: Vec<&crate::library::CellKind> = graph
        .nodes
        .iter()
        .map(|node| {
            let inst = netlist.instance(&node.name).unwrap();
            lib.kind(&inst.kind).unwrap()
        })
        .collect();

    // Fan-in adjacency with delays.
    let mut fanin: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    for edge in &graph.edges {
        let key = (
            graph.nodes[edge.from].name.clone(),
            graph.nodes[edge.to].name.clone(),
        );
        if let Some((mn, mx)) = delays.get(&key) {
            fanin[edge.to].push((edge.from, *mn, *mx));
        }
    }

    let mut borrow = vec![0.0f64; n];
    let mut overshoot = vec![f64::NEG_INFINITY; n];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut growing: Vec<String> = Vec::new();
    for _ in 0..=n {
        iterations += 1;
        let mut changed = false;
        growing.clear();
        for i in 0..n {
            let mut worst = f64::NEG_INFINITY;
            for &(j, _, max_delay) in &fanin[i] {
                let sep = clocks.separation(phases[j], phases[i]) + clocks.skew_of(&graph.nodes[i].name)
                    - clocks.skew_of(&graph.nodes[j].name);
                let a = borrow[j] + kinds[j].timing.d_to_q_min + max_delay - sep;
                worst = worst.max(a);
            }
            overshoot[i] = worst;
            let new_borrow = worst.max(0.0);
            if (new_borrow - borrow[i]).abs() > EPS {
                borrow[i] = new_borrow;
                changed = true;
                growing.push(graph.nodes[i].name.clone());
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        growing.sort();
        return Err(TimingError::InfeasiblePeriod(growing.clone()));
    }

    let points = (0..n)
        .map(|i| {
            let name = graph.nodes[i].name.clone();
            let open = clocks.open(phases[i]) + clocks.skew_of(&name);
            let arrival = if overshoot[i].is_finite() {
                open + overshoot[i]
            } else {
                open
            };
            let departure = open + borrow[i] + kinds[i].timing.d_to_q_min;
            LatchTimingPoint {
                phase: phases[i],
                arrival,
                departure,
                borrow: borrow[i],
                max_borrow: clocks.max_borrow(kinds[i].timing.setup),
                setup_slack: 0.0,
                fanin_max: fanin[i]
                    .iter()
                    .map(|(j, _, mx)| (graph.nodes[*j].name.clone(), *mx))
                    .collect(),
                fanin_min: fanin[i]
                    .iter()
                    .map(|(j, mn, _)| (graph.nodes[*j].name.clone(), *mn))
                    .collect(),
                name,
            }
        })
        .collect();
    Ok((points, iterations))
}

/// Fills each point's setup residual: sampling edge minus (arrival + setup),
/// both shifted by the latch's own skew. Returns the points with slack set.
pub fn setup_check(
    mut points: Vec<LatchTimingPoint>,
    lib: &CellLibrary,
    netlist: &Netlist,
    clocks: &ClockSpec,
) -> Vec<LatchTimingPoint> {
    for point in &mut points {
        let inst = netlist.instance(&point.name).unwrap();
        let kind = lib.kind(&inst.kind).unwrap();
        let close = clocks.close(point.phase) + clocks.skew_of(&point.name);
        point.setup_slack = close - (point.arrival + kind.timing.setup);
    }
    points
}

/// Hold residuals per latch-graph edge, per the printed latch hold
/// inequality. With `use_launching_d2q` the launching latch's minimum
/// data-to-output delay substitutes for the receiving latch's.
pub fn hold_check(
    netlist: &Netlist,
    lib: &CellLibrary,
    clocks: &ClockSpec,
    use_launching_d2q: bool,
) -> Result<Vec<HoldSlack>, TimingError> {
    clocks.validate()?;
    let (graph, violations) = build_latch_graph(netlist, lib);
    if !violations.is_empty() {
        return Err(TimingError::NotTwoPhase(violations));
    }
    let delays = edge_delays(netlist, lib);
    let mut out = Vec::new();
    for edge in &graph.edges {
        let from = &graph.nodes[edge.from];
        let to = &graph.nodes[edge.to];
        let key = (from.name.clone(), to.name.clone());
        let Some((min_delay, _)) = delays.get(&key) else {
            continue;
        };
        let from_kind = lib
            .kind(&netlist.instance(&from.name).unwrap().kind)
            .unwrap();
        let to_kind = lib.kind(&netlist.instance(&to.name).unwrap().kind).unwrap();
        let d2q = if use_launching_d2q {
            from_kind.timing.d_to_q_min
        } else {
            to_kind.timing.d_to_q_min
        };
        let separation = clocks.separation(from.phase.unwrap(), to.phase.unwrap());
        let skew = clocks.skew_of(&to.name) - clocks.skew_of(&from.name);
        let slack = (d2q + min_delay + separation)
            - (clocks.pulse_width() + to_kind.timing.hold + skew - clocks.period);
        out.push(HoldSlack {
            from: from.name.clone(),
            to: to.name.clone(),
            slack,
        });
    }
    Ok(out)
}

/// Per-latch entry of the serialized report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatchReport {
    pub name: String,
    pub phase: PhaseTag,
    pub arrival: f64,
    pub borrow: f64,
    pub setup_slack: f64,
}

/// Aggregated machine-readable timing results. All fields in ns except
/// counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub period: f64,
    pub duty: f64,
    /// Largest borrow budget over all latches.
    pub max_tb: f64,
    /// Largest actual borrow over all latches.
    pub act_tb: f64,
    pub worst_setup_slack: f64,
    pub worst_hold_slack: f64,
    pub skew_max: f64,
    pub iterations: usize,
    pub latches: Vec<LatchReport>,
}

impl TimingReport {
    pub fn clean(&self) -> bool {
        self.worst_setup_slack >= 0.0 && self.worst_hold_slack >= 0.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Runs arrivals, setup, and hold checks and aggregates them.
pub fn report(
    netlist: &Netlist,
    lib: &CellLibrary,
    clocks: &ClockSpec,
) -> Result<TimingReport, TimingError> {
    let (points, iterations) = compute_arrivals(netlist, lib, clocks)?;
    let points = setup_check(points, lib, netlist, clocks);
    let holds = hold_check(netlist, lib, clocks, false)?;

    let worst_setup_slack = points
        .iter()
        .map(|p| p.setup_slack)
        .fold(f64::INFINITY, f64::min);
    let worst_hold_slack = holds
        .iter()
        .map(|h| h.slack)
        .fold(f64::INFINITY, f64::min);
    let names: Vec<String> = points.iter().map(|p| p.name.clone()).collect();

    Ok(TimingReport {
        period: clocks.period,
        duty: clocks.duty,
        max_tb: points.iter().map(|p| p.max_borrow).fold(0.0, f64::max),
        act_tb: points.iter().map(|p| p.borrow).fold(0.0, f64::max),
        worst_setup_slack: if worst_setup_slack.is_finite() {
            worst_setup_slack
        } else {
            0.0
        },
        worst_hold_slack: if worst_hold_slack.is_finite() {
            worst_hold_slack
        } else {
            0.0
        },
        skew_max: clocks.skew_max(&names),
        iterations,
        latches: points
            .into_iter()
            .map(|p| LatchReport {
                name: p.name,
                phase: p.phase,
                arrival: p.arrival,
                borrow: p.borrow,
                setup_slack: p.setup_slack,
            })
            .collect(),
    })
}

impl crate::library::CellKind {
    fn pin_output_name(&self) -> String {
        self.output_pin().unwrap().name.clone()
    }
}
