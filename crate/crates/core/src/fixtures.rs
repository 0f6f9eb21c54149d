//! Built-in example designs and cell libraries.
//!
//! The designs under `fixtures/` are small structural-Verilog modules used
//! throughout the test suite and handy as CLI inputs. Loading them goes
//! through the real Verilog frontend.

use crate::library::CellLibrary;
use crate::netlist::Netlist;
use crate::verilog::parse_verilog_named;

pub const STDCELLS_JSON: &str = include_str!("../fixtures/stdcells.json");
pub const TIMING_CELLS_JSON: &str = include_str!("../fixtures/timing_cells.json");

pub const COUNTER3_V: &str = include_str!("../fixtures/counter3.v");
pub const ENABLE_COUNTER3_V: &str = include_str!("../fixtures/enable_counter3.v");
pub const SHIFT_FEEDBACK_V: &str = include_str!("../fixtures/shift_feedback.v");
pub const SYNC_REGS_V: &str = include_str!("../fixtures/sync_regs.v");
pub const ASYNC_REGS_V: &str = include_str!("../fixtures/async_regs.v");
pub const GCD_FSM_V: &str = include_str!("../fixtures/gcd_fsm.v");
pub const FIG2_RETIME_V: &str = include_str!("../fixtures/fig2_retime.v");
pub const FIG3_FANIN_V: &str = include_str!("../fixtures/fig3_fanin.v");
pub const FIG1_RING_V: &str = include_str!("../fixtures/fig1_ring.v");
pub const FIG1_RING_SLOW_V: &str = include_str!("../fixtures/fig1_ring_slow.v");

/// The standard cell library used by most fixtures.
pub fn standard_library() -> CellLibrary {
    CellLibrary::load(STDCELLS_JSON).expect("standard library is well-formed")
}

/// Cells with round delays for the retiming and time-borrowing examples.
pub fn timing_library() -> CellLibrary {
    CellLibrary::load(TIMING_CELLS_JSON).expect("timing library is well-formed")
}

fn load(name: &str, text: &str, lib: &CellLibrary) -> Netlist {
    parse_verilog_named(name, text, lib).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn counter3() -> Netlist {
    load("counter3.v", COUNTER3_V, &standard_library())
}

pub fn enable_counter3() -> Netlist {
    load("enable_counter3.v", ENABLE_COUNTER3_V, &standard_library())
}

pub fn shift_feedback() -> Netlist {
    load("shift_feedback.v", SHIFT_FEEDBACK_V, &standard_library())
}

pub fn sync_regs() -> Netlist {
    load("sync_regs.v", SYNC_REGS_V, &standard_library())
}

pub fn async_regs() -> Netlist {
    load("async_regs.v", ASYNC_REGS_V, &standard_library())
}

pub fn gcd_fsm() -> Netlist {
    load("gcd_fsm.v", GCD_FSM_V, &standard_library())
}

/// Register feedback loop with two 10 ns gates (uses [`timing_library`]).
pub fn fig2_retime() -> Netlist {
    load("fig2_retime.v", FIG2_RETIME_V, &timing_library())
}

/// Fan-in merge with one register per branch (uses [`standard_library`]).
pub fn fig3_fanin() -> Netlist {
    load("fig3_fanin.v", FIG3_FANIN_V, &standard_library())
}

/// Pre-built two-phase latch ring with 7 ns / 2 ns stages (uses
/// [`timing_library`]).
pub fn fig1_ring() -> Netlist {
    load("fig1_ring.v", FIG1_RING_V, &timing_library())
}

/// The fig1 ring with the first stage slowed past the period.
pub fn fig1_ring_slow() -> Netlist {
    load("fig1_ring_slow.v", FIG1_RING_SLOW_V, &timing_library())
}

/// All flip-flop fixtures that use the standard library, by name.
pub fn standard_fixtures() -> Vec<(&'static str, Netlist)> {
    vec![
        ("counter3", counter3()),
        ("enable_counter3", enable_counter3()),
        ("shift_feedback", shift_feedback()),
        ("sync_regs", sync_regs()),
        ("async_regs", async_regs()),
        ("gcd_fsm", gcd_fsm()),
        ("fig3_fanin", fig3_fanin()),
    ]
}
