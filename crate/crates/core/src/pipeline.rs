//! End-to-end conversion driver: parse, clock initialization, variant
//! lowering, optional retiming with an equivalence gate, phase assignment,
//! clock hookup, and the final latch mapping.
//!
//! Each pass logs its cell counts so structural deltas per stage stay
//! reproducible. Retiming runs on the lowered base-flip-flop netlist and is
//! gated by random co-simulation against the pre-retiming netlist; the
//! accumulated maximum lag feeds the warm-up window of later equivalence
//! checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::CellLibrary;
use crate::netlist::{CellCounts, Driver, Index, Netlist, Severity};
use crate::retime::{retime_min_area, retime_min_delay, RetimeError, RetimeOutcome};
use crate::transform::{
    connect_clk, duplicate_ffs_recirc, init_clock_ports, map_dff_to_latch, transform_clock_gated,
    transform_recirc, PhaseTag, TransformError, TransformPlan, TransformTrace, TransformVariant,
};
use crate::verify::{check_ff_equivalence, EquivOptions, EquivVerdict, VerifyError};

/// Which retiming passes run between lowering and latch mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetimeMode {
    Off,
    MinDelay,
    MinArea,
    Both,
}

impl std::fmt::Display for RetimeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RetimeMode::Off => write!(f, "off"),
            RetimeMode::MinDelay => write!(f, "min-delay"),
            RetimeMode::MinArea => write!(f, "min-area"),
            RetimeMode::Both => write!(f, "both"),
        }
    }
}

impl std::str::FromStr for RetimeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(RetimeMode::Off),
            "min-delay" => Ok(RetimeMode::MinDelay),
            "min-area" => Ok(RetimeMode::MinArea),
            "both" => Ok(RetimeMode::Both),
            other => Err(format!(
                "unknown retime mode `{other}`; use off, min-delay, min-area, or both"
            )),
        }
    }
}

/// Conversion settings.
#[derive(Debug, Clone)]
pub struct ConvertConfig {
    pub variant: TransformVariant,
    pub retime: RetimeMode,
    pub clk1_name: String,
    pub clk2_name: String,
    /// Cycles and seeds for the pre/post retiming equivalence gate.
    pub equiv_cycles: usize,
    pub equiv_seeds: u64,
}

impl ConvertConfig {
    pub fn new(variant: TransformVariant) -> ConvertConfig {
        ConvertConfig {
            variant,
            retime: RetimeMode::Off,
            clk1_name: "clk_1".into(),
            clk2_name: "clk_2".into(),
            equiv_cycles: 256,
            equiv_seeds: 4,
        }
    }

    pub fn plan(&self) -> TransformPlan {
        let mut plan = TransformPlan::new(self.variant);
        plan.clk1_name = self.clk1_name.clone();
        plan.clk2_name = self.clk2_name.clone();
        plan
    }
}

/// Cell counts after one pass.
#[derive(Debug, Clone, Serialize)]
pub struct StageStats {
    pub stage: String,
    pub seq: usize,
    pub comb: usize,
    pub total: usize,
}

impl StageStats {
    fn new(stage: &str, counts: CellCounts) -> StageStats {
        StageStats {
            stage: stage.to_string(),
            seq: counts.seq,
            comb: counts.comb,
            total: counts.total,
        }
    }
}

/// Summary of one retiming step inside the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct RetimeSummary {
    pub mode: String,
    pub pre_critical_path: f64,
    pub post_critical_path: f64,
    pub pre_registers: usize,
    pub post_registers: usize,
    pub max_lag: i64,
    pub fallback: bool,
    /// Applied vertex lags, for debugging dumps.
    pub lags: std::collections::BTreeMap<String, i64>,
}

/// Everything the conversion produces.
#[derive(Debug, Clone)]
pub struct ConvertOutcome {
    /// The two-phase latch netlist.
    pub netlist: Netlist,
    /// The lowered flip-flop netlist right before latch mapping (after any
    /// retiming and clock hookup), useful for debugging.
    pub pre_latch: Netlist,
    pub trace: TransformTrace,
    pub phases: BTreeMap<String, PhaseTag>,
    pub stages: Vec<StageStats>,
    pub retime: Vec<RetimeSummary>,
    /// Warm-up cycles downstream equivalence checks should skip: the
    /// accumulated maximum absolute lag.
    pub warmup: usize,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input netlist is invalid:\n{0}")]
    Invalid(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Retime(#[from] RetimeError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("retiming changed behavior: {0:?}")]
    RetimeEquivalence(EquivVerdict),
}

/// Runs the conversion flow on an already-parsed flip-flop netlist.
pub fn convert(
    netlist: &Netlist,
    lib: &CellLibrary,
    config: &ConvertConfig,
) -> Result<ConvertOutcome, PipelineError> {
    let errors: Vec<String> = crate::netlist::validate(netlist, lib)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(PipelineError::Invalid(errors.join("\n")));
    }

    let plan = config.plan();
    let mut stages = vec![StageStats::new("input", netlist.cell_counts(lib))];

    let clocked = init_clock_ports(netlist, lib, &plan)?;
    stages.push(StageStats::new("init_clock_ports", clocked.cell_counts(lib)));

    let (mut lowered, mut trace) = match config.variant {
        TransformVariant::RecircMux => {
            let (dup, trace) = duplicate_ffs_recirc(&clocked, lib, &plan)?;
            stages.push(StageStats::new("duplicate_ffs", dup.cell_counts(lib)));
            let (lowered, trace) = transform_recirc(&dup, lib, &trace, &plan)?;
            stages.push(StageStats::new("transform_recirc", lowered.cell_counts(lib)));
            (lowered, trace)
        }
        TransformVariant::ClockGated => {
            let (lowered, trace) = transform_clock_gated(&clocked, lib, &plan)?;
            stages.push(StageStats::new(
                "transform_clock_gated",
                lowered.cell_counts(lib),
            ));
            (lowered, trace)
        }
    };

    let mut warmup = 0usize;
    let mut summaries = Vec::new();
    let retime_steps: Vec<RetimeMode> = match config.retime {
        RetimeMode::Off => vec![],
        RetimeMode::MinDelay => vec![RetimeMode::MinDelay],
        RetimeMode::MinArea => vec![RetimeMode::MinArea],
        RetimeMode::Both => vec![RetimeMode::MinDelay, RetimeMode::MinArea],
    };
    for step in retime_steps {
        let before = lowered.clone();
        let pre_graph = crate::retime::build_retime_graph(&before, lib)?;
        let (pre_crit, _) = pre_graph.critical_path();
        let outcome: RetimeOutcome = match step {
            RetimeMode::MinDelay => retime_min_delay(&before, lib, &trace, None)?,
            RetimeMode::MinArea => retime_min_area(&before, lib, &trace)?,
            _ => unreachable!(),
        };
        let step_warmup = outcome.lags.max_abs() as usize;
        let verdict = check_ff_equivalence(
            &before,
            &outcome.netlist,
            lib,
            &EquivOptions {
                cycles: config.equiv_cycles,
                seeds: config.equiv_seeds,
                seed_base: 0,
                warmup: step_warmup,
            },
        )?;
        if !verdict.equivalent {
            return Err(PipelineError::RetimeEquivalence(verdict));
        }
        summaries.push(RetimeSummary {
            mode: step.to_string(),
            pre_critical_path: pre_crit,
            post_critical_path: outcome.period,
            pre_registers: before.cell_counts(lib).seq,
            post_registers: outcome.netlist.cell_counts(lib).seq,
            max_lag: outcome.lags.max_abs(),
            fallback: outcome.fallback,
            lags: outcome.lags.lags.clone(),
        });
        warmup += step_warmup;
        lowered = outcome.netlist;
        trace = outcome.trace;
        stages.push(StageStats::new(
            &format!("retime_{step}"),
            lowered.cell_counts(lib),
        ));
    }

    let phases = crate::retime::assign_phases(&lowered, lib)?;

    // Clock hookup: ungated registers rewire their clock pins; gated
    // registers rewire their AND's clock-side input instead.
    let index = Index::build(&lowered, lib);
    let mut selection: BTreeMap<PhaseTag, Vec<String>> = BTreeMap::new();
    for (name, phase) in &phases {
        let inst = lowered.instance(name).expect("phase map matches netlist");
        let kind = lib.kind(&inst.kind).expect("validated");
        let clock_net = &inst.pins[&kind.clock_pin().expect("sequential").name];
        match index.driver_of.get(clock_net) {
            Some(Driver::Pin(i, _)) => {
                let gate = &lowered.instances[*i];
                if lib.kind(&gate.kind).is_some_and(|k| k.is_and2_like()) {
                    selection.entry(*phase).or_default().push(gate.name.clone());
                } else {
                    selection.entry(*phase).or_default().push(name.clone());
                }
            }
            _ => selection.entry(*phase).or_default().push(name.clone()),
        }
    }
    for names in selection.values_mut() {
        names.sort();
        names.dedup();
    }

    let mut connected = lowered.clone();
    if let Some(phi1) = selection.get(&PhaseTag::Phi1) {
        connected = connect_clk(&connected, lib, phi1, &plan.clk1_name)?;
    }
    if let Some(phi2) = selection.get(&PhaseTag::Phi2) {
        connected = connect_clk(&connected, lib, phi2, &plan.clk2_name)?;
    }
    stages.push(StageStats::new("connect_clk", connected.cell_counts(lib)));

    let latched = map_dff_to_latch(&connected, lib, &plan)?;
    stages.push(StageStats::new("map_dff_to_latch", latched.cell_counts(lib)));

    let errors: Vec<String> = crate::netlist::validate(&latched, lib)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "conversion produced an invalid netlist:\n{}",
            errors.join("\n")
        )));
    }

    Ok(ConvertOutcome {
        netlist: latched,
        pre_latch: connected,
        trace,
        phases,
        stages,
        retime: summaries,
        warmup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::PhaseSchedule;
    use crate::verify::{build_latch_graph, check_equivalence, check_two_color};

    fn convert_and_check(netlist: &Netlist, lib: &CellLibrary, config: &ConvertConfig) {
        let outcome = convert(netlist, lib, config).unwrap();
        let (graph, violations) = build_latch_graph(&outcome.netlist, lib);
        assert!(
            violations.is_empty(),
            "{} {} {}: {violations:?}",
            netlist.name,
            config.variant,
            config.retime
        );
        assert!(check_two_color(&graph).is_empty());
        let verdict = check_equivalence(
            netlist,
            &outcome.netlist,
            lib,
            &PhaseSchedule::standard(),
            &EquivOptions {
                cycles: 200,
                seeds: 3,
                seed_base: 11,
                warmup: outcome.warmup,
            },
        )
        .unwrap();
        assert!(
            verdict.equivalent,
            "{} {} {}: {:?}",
            netlist.name, config.variant, config.retime, verdict.divergence
        );
    }

    #[test]
    fn counter_clock_gated_off() {
        let lib = fixtures::standard_library();
        convert_and_check(
            &fixtures::counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        );
    }

    #[test]
    fn counter_recirc_off() {
        let lib = fixtures::standard_library();
        convert_and_check(
            &fixtures::counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::RecircMux),
        );
    }

    #[test]
    fn enable_counter_both_variants() {
        let lib = fixtures::standard_library();
        convert_and_check(
            &fixtures::enable_counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        );
        convert_and_check(
            &fixtures::enable_counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::RecircMux),
        );
    }

    #[test]
    fn sync_regs_both_variants() {
        let lib = fixtures::standard_library();
        convert_and_check(
            &fixtures::sync_regs(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        );
        convert_and_check(
            &fixtures::sync_regs(),
            &lib,
            &ConvertConfig::new(TransformVariant::RecircMux),
        );
    }

    #[test]
    fn async_regs_recirc_only() {
        let lib = fixtures::standard_library();
        convert_and_check(
            &fixtures::async_regs(),
            &lib,
            &ConvertConfig::new(TransformVariant::RecircMux),
        );
        let err = convert(
            &fixtures::async_regs(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Transform(TransformError::AsyncControlUnsupported(_))
        ));
    }

    #[test]
    fn gcd_clock_gated_with_min_delay() {
        let lib = fixtures::standard_library();
        let mut config = ConvertConfig::new(TransformVariant::ClockGated);
        config.retime = RetimeMode::MinDelay;
        config.equiv_cycles = 128;
        convert_and_check(&fixtures::gcd_fsm(), &lib, &config);
    }

    #[test]
    fn shift_recirc_min_area() {
        let lib = fixtures::standard_library();
        let mut config = ConvertConfig::new(TransformVariant::RecircMux);
        config.retime = RetimeMode::MinArea;
        config.equiv_cycles = 128;
        convert_and_check(&fixtures::shift_feedback(), &lib, &config);
    }

    #[test]
    fn counter_recirc_both_retime_modes() {
        let lib = fixtures::standard_library();
        let mut config = ConvertConfig::new(TransformVariant::RecircMux);
        config.retime = RetimeMode::Both;
        config.equiv_cycles = 128;
        convert_and_check(&fixtures::counter3(), &lib, &config);
    }

    #[test]
    fn stage_log_records_counts() {
        let lib = fixtures::standard_library();
        let outcome = convert(
            &fixtures::enable_counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        )
        .unwrap();
        let names: Vec<&str> = outcome.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "input",
                "init_clock_ports",
                "transform_clock_gated",
                "connect_clk",
                "map_dff_to_latch"
            ]
        );
        // 3 enable FFs sharing one enable: 2 per FF + 1 control register.
        assert_eq!(outcome.stages.last().unwrap().seq, 7);
    }

    #[test]
    fn conversion_is_deterministic() {
        let lib = fixtures::standard_library();
        let config = ConvertConfig::new(TransformVariant::RecircMux);
        let a = convert(&fixtures::gcd_fsm(), &lib, &config).unwrap();
        let b = convert(&fixtures::gcd_fsm(), &lib, &config).unwrap();
        assert_eq!(
            crate::netlist::emit_canonical(&a.netlist),
            crate::netlist::emit_canonical(&b.netlist)
        );
    }

    #[test]
    fn fig2_pipeline_min_delay_reaches_ten_ns() {
        let lib = fixtures::timing_library();
        let mut config = ConvertConfig::new(TransformVariant::RecircMux);
        config.retime = RetimeMode::MinDelay;
        config.equiv_cycles = 128;
        let n = fixtures::fig2_retime();
        let outcome = convert(&n, &lib, &config).unwrap();
        let summary = &outcome.retime[0];
        assert!((summary.pre_critical_path - 20.0).abs() < 1e-9);
        assert!((summary.post_critical_path - 10.0).abs() < 1e-9);
        convert_and_check(&n, &lib, &config);
    }

    /// Single sync-reset flip-flop through the recirc template, checked
    /// against the flip-flop semantics over every 8-cycle sequence of its
    /// two inputs (4^8 stimulus patterns).
    #[test]
    fn sdff_recirc_exhaustive_reset_sequences() {
        use crate::sim::{FfSim, Stimulus, TwoPhaseSim};
        let lib = fixtures::standard_library();
        let mut n = Netlist::new("one_sdff");
        n.add_port("clk", crate::netlist::PortDir::Input, crate::netlist::PortKind::Clock);
        n.add_port("d", crate::netlist::PortDir::Input, crate::netlist::PortKind::Data);
        n.add_port("rst", crate::netlist::PortDir::Input, crate::netlist::PortKind::Data);
        n.add_port("q", crate::netlist::PortDir::Output, crate::netlist::PortKind::Data);
        n.add_instance(
            crate::netlist::Instance::new("ff", "_SDFF_PP0_")
                .pin("D", "d")
                .pin("C", "clk")
                .pin("R", "rst")
                .pin("Q", "q"),
        );
        let outcome = convert(&n, &lib, &ConvertConfig::new(TransformVariant::RecircMux)).unwrap();

        let ff = FfSim::new(&n, &lib).unwrap();
        let tp = TwoPhaseSim::new(&outcome.netlist, &lib).unwrap();
        let schedule = PhaseSchedule::standard();
        let inputs = vec!["d".to_string(), "rst".to_string()];
        let cycles = 8usize;
        for pattern in 0..(1u32 << (2 * cycles)) {
            let rows: Vec<Vec<bool>> = (0..cycles)
                .map(|c| {
                    vec![
                        pattern >> (2 * c) & 1 == 1,
                        pattern >> (2 * c + 1) & 1 == 1,
                    ]
                })
                .collect();
            let stim = Stimulus::from_rows(inputs.clone(), rows);
            let expected = ff.run(&stim).unwrap();
            let got = tp.run(&stim, &schedule).unwrap();
            assert_eq!(expected.samples, got.samples, "pattern {pattern:04x}");
        }
    }

    #[test]
    fn emitted_verilog_declares_both_clocks() {
        let lib = fixtures::standard_library();
        let outcome = convert(
            &fixtures::counter3(),
            &lib,
            &ConvertConfig::new(TransformVariant::ClockGated),
        )
        .unwrap();
        let text = crate::verilog::emit_verilog(&outcome.netlist);
        assert!(text.contains("input clk_1;"));
        assert!(text.contains("input clk_2;"));
        // And the clocks survive a reparse as clock-kind ports.
        let back = crate::verilog::parse_verilog(&text, &lib).unwrap();
        assert_eq!(back.clock_input_ports(), vec!["clk_1", "clk_2"]);
    }

    #[test]
    fn fig3_pipeline_min_area_reduces_registers() {
        let lib = fixtures::standard_library();
        let mut config = ConvertConfig::new(TransformVariant::RecircMux);
        config.retime = RetimeMode::MinArea;
        config.equiv_cycles = 128;
        let n = fixtures::fig3_fanin();
        let outcome = convert(&n, &lib, &config).unwrap();
        let summary = &outcome.retime[0];
        assert!(
            summary.post_registers < summary.pre_registers,
            "{} -> {}",
            summary.pre_registers,
            summary.post_registers
        );
        convert_and_check(&n, &lib, &config);
    }
}
