//! Netlist transformation and verification toolkit for converting
//! single-phase, edge-triggered flip-flop designs into two-phase,
//! non-overlapping latch-based designs.
//!
//! The crate covers the whole conversion flow:
//!
//! - [`netlist`] — flattened gate-level netlist model, canonical JSON
//!   interchange, structural validation
//! - [`library`] — cell library with pin roles, functions, and timing data
//! - [`verilog`] — structural-Verilog subset frontend and emitter
//! - [`transform`] — clock port initialization, flip-flop duplication,
//!   recirculation-mux and clock-gated lowering, clock rewiring, and the
//!   final flip-flop to latch mapping
//! - [`retime`] — minimum-delay and minimum-area retiming over the
//!   duplicated flip-flop netlist, plus post-retiming phase assignment
//! - [`sim`] — cycle-accurate simulation of flip-flop netlists and
//!   two-phase latch netlists
//! - [`verify`] — latch-graph two-coloring checks and co-simulation
//!   sequential equivalence checking
//! - [`timing`] — latch-aware static timing analysis with time borrowing
//! - [`pipeline`] — the end-to-end conversion driver used by the CLI
//!
//! Example designs and libraries live in [`fixtures`].

pub mod expr;
pub mod fixtures;
pub mod library;
pub mod netlist;
pub mod pipeline;
pub mod retime;
pub mod sim;
pub mod timing;
pub mod transform;
pub mod verify;
pub mod verilog;

pub use library::{Behavior, CellKind, CellLibrary, DffControl, PinDir, PinRole, TimingData};
pub use netlist::{
    emit_canonical, parse_canonical, topo_order_comb, validate, Diagnostic, Instance, Netlist,
    Port, PortDir, PortKind, Severity,
};
pub use verilog::{emit_verilog, parse_verilog, parse_verilog_named, ParseError, SourceSpan};
