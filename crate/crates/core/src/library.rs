//! Cell library: the catalog of cell kinds a netlist may instantiate.
//!
//! A library declares, per cell kind, its pins (with direction and role), its
//! behavior (combinational function, flip-flop variant, or level-sensitive
//! latch), and per-kind timing data. Libraries load from a JSON file of the
//! form:
//!
//! ```json
//! {"cells":[{"name":"AND2",
//!            "pins":[{"name":"A","dir":"in","role":"data"}, ...],
//!            "behavior":{"type":"comb","function":"A & B"},
//!            "timing":{"delay_max":0.08,"delay_min":0.04,
//!                      "d_to_q_min":0.0,"setup":0.0,"hold":0.0}}]}
//! ```
//!
//! All times are in nanoseconds. Flip-flop kinds are positive-edge only and
//! latches are positive-enable only; the supported flip-flop control set is
//! enable, sync-reset-0, sync-set-1, async-reset-0 and async-set-1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;

/// Pin direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinDir {
    #[serde(rename = "in")]
    Input,
    #[serde(rename = "out")]
    Output,
}

/// Functional role of a pin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinRole {
    Data,
    Clock,
    Enable,
    Reset,
    Set,
    Select,
    Output,
}

/// A single pin declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinDef {
    pub name: String,
    pub dir: PinDir,
    pub role: PinRole,
}

/// Flip-flop control behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DffControl {
    #[serde(rename = "enable")]
    Enable,
    #[serde(rename = "sync-reset-0")]
    SyncReset0,
    #[serde(rename = "sync-set-1")]
    SyncSet1,
    #[serde(rename = "async-reset-0")]
    AsyncReset0,
    #[serde(rename = "async-set-1")]
    AsyncSet1,
}

impl DffControl {
    /// The pin role this control is sampled from.
    pub fn pin_role(self) -> PinRole {
        match self {
            DffControl::Enable => PinRole::Enable,
            DffControl::SyncReset0 | DffControl::AsyncReset0 => PinRole::Reset,
            DffControl::SyncSet1 | DffControl::AsyncSet1 => PinRole::Set,
        }
    }

    /// The state value forced when the control asserts (None for enable).
    pub fn forced_value(self) -> Option<bool> {
        match self {
            DffControl::Enable => None,
            DffControl::SyncReset0 | DffControl::AsyncReset0 => Some(false),
            DffControl::SyncSet1 | DffControl::AsyncSet1 => Some(true),
        }
    }

    pub fn is_async(self) -> bool {
        matches!(self, DffControl::AsyncReset0 | DffControl::AsyncSet1)
    }
}

/// Cell behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Behavior {
    /// Combinational: a single boolean function of the input pins.
    Comb {
        #[serde(with = "expr_as_string")]
        function: Expr,
    },
    /// Positive-edge D flip-flop with the given controls.
    Dff {
        #[serde(default)]
        controls: Vec<DffControl>,
    },
    /// Positive-enable level-sensitive latch.
    Latch,
}

/// Per-kind timing data, all in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingData {
    /// Worst pin-to-pin combinational / propagation delay.
    pub delay_max: f64,
    /// Best pin-to-pin delay.
    pub delay_min: f64,
    /// Minimum data-to-output propagation delay through a transparent latch.
    pub d_to_q_min: f64,
    /// Setup requirement (data before closing clock edge).
    pub setup: f64,
    /// Hold requirement (data after closing clock edge).
    pub hold: f64,
}

impl Default for TimingData {
    fn default() -> Self {
        TimingData {
            delay_max: 0.0,
            delay_min: 0.0,
            d_to_q_min: 0.0,
            setup: 0.0,
            hold: 0.0,
        }
    }
}

/// One cell kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKind {
    pub name: String,
    pub pins: Vec<PinDef>,
    pub behavior: Behavior,
    #[serde(default)]
    pub timing: TimingData,
}

impl CellKind {
    pub fn is_sequential(&self) -> bool {
        matches!(self.behavior, Behavior::Dff { .. } | Behavior::Latch)
    }

    pub fn is_comb(&self) -> bool {
        matches!(self.behavior, Behavior::Comb { .. })
    }

    pub fn pin(&self, name: &str) -> Option<&PinDef> {
        self.pins.iter().find(|p| p.name == name)
    }

    /// The unique clock-role pin of a sequential kind.
    pub fn clock_pin(&self) -> Option<&PinDef> {
        self.pins.iter().find(|p| p.role == PinRole::Clock)
    }

    /// The unique data-role input pin of a sequential kind.
    pub fn data_pin(&self) -> Option<&PinDef> {
        self.pins
            .iter()
            .find(|p| p.role == PinRole::Data && p.dir == PinDir::Input)
    }

    /// The unique output pin.
    pub fn output_pin(&self) -> Option<&PinDef> {
        self.pins.iter().find(|p| p.dir == PinDir::Output)
    }

    pub fn input_pins(&self) -> impl Iterator<Item = &PinDef> {
        self.pins.iter().filter(|p| p.dir == PinDir::Input)
    }

    /// Flip-flop controls, empty for non-DFF kinds.
    pub fn dff_controls(&self) -> &[DffControl] {
        match &self.behavior {
            Behavior::Dff { controls } => controls,
            _ => &[],
        }
    }

    /// True for plain two-input AND gates (the shape used for clock gating).
    pub fn is_and2_like(&self) -> bool {
        if self.input_pins().count() != 2 {
            return false;
        }
        match &self.behavior {
            Behavior::Comb { function } => matches!(
                function,
                crate::expr::Expr::And(a, b)
                    if matches!(**a, crate::expr::Expr::Var(_))
                        && matches!(**b, crate::expr::Expr::Var(_))
            ),
            _ => false,
        }
    }

    /// The pin a given control is wired to.
    pub fn control_pin(&self, control: DffControl) -> Option<&PinDef> {
        let role = control.pin_role();
        self.pins.iter().find(|p| p.role == role)
    }
}

/// An immutable catalog of cell kinds, keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLibrary {
    cells: BTreeMap<String, CellKind>,
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate cell kind `{0}`")]
    DuplicateCell(String),
    #[error("sequential kind `{0}` without clock-role pin")]
    MissingClockPin(String),
    #[error("sequential kind `{0}` declares more than one clock-role pin")]
    MultipleClockPins(String),
    #[error("cell kind `{0}`: {1}")]
    BadCell(String, String),
}

impl CellLibrary {
    /// Load a library from its JSON file format.
    pub fn load(text: &str) -> Result<CellLibrary, LibraryError> {
        #[derive(Deserialize)]
        struct Doc {
            cells: Vec<CellKind>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| LibraryError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut cells = BTreeMap::new();
        for cell in doc.cells {
            validate_cell(&cell)?;
            if cells.insert(cell.name.clone(), cell.clone()).is_some() {
                return Err(LibraryError::DuplicateCell(cell.name));
            }
        }
        Ok(CellLibrary { cells })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            cells: Vec<&'a CellKind>,
        }
        let doc = Doc {
            cells: self.cells.values().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("library serialization cannot fail")
    }

    pub fn kind(&self, name: &str) -> Option<&CellKind> {
        self.cells.get(name)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &CellKind> {
        self.cells.values()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn validate_cell(cell: &CellKind) -> Result<(), LibraryError> {
    let bad = |msg: String| Err(LibraryError::BadCell(cell.name.clone(), msg));

    let mut seen = std::collections::BTreeSet::new();
    for pin in &cell.pins {
        if !seen.insert(&pin.name) {
            return bad(format!("duplicate pin `{}`", pin.name));
        }
        if pin.dir == PinDir::Output && pin.role != PinRole::Output {
            return bad(format!("output pin `{}` must have role `output`", pin.name));
        }
        if pin.dir == PinDir::Input && pin.role == PinRole::Output {
            return bad(format!("input pin `{}` cannot have role `output`", pin.name));
        }
    }
    if cell.timing.delay_min > cell.timing.delay_max {
        return bad("delay_min exceeds delay_max".into());
    }
    for v in [
        cell.timing.delay_max,
        cell.timing.delay_min,
        cell.timing.d_to_q_min,
        cell.timing.setup,
        cell.timing.hold,
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return bad("timing values must be finite and non-negative".into());
        }
    }

    match &cell.behavior {
        Behavior::Comb { function } => {
            if cell.pins.iter().filter(|p| p.dir == PinDir::Output).count() != 1 {
                return bad("combinational kind must have exactly one output pin".into());
            }
            for var in function.variables() {
                match cell.pin(&var) {
                    Some(pin) if pin.dir == PinDir::Input => {}
                    _ => {
                        return bad(format!(
                            "function references `{var}` which is not a declared input pin"
                        ))
                    }
                }
            }
        }
        Behavior::Dff { controls } => {
            check_sequential_pins(cell)?;
            let mut seen_roles = std::collections::BTreeSet::new();
            for control in controls {
                if !seen_roles.insert(control.pin_role() as u8) {
                    return bad("multiple controls share one pin role".into());
                }
                if cell.control_pin(*control).is_none() {
                    return bad(format!(
                        "control {control:?} has no pin with role {:?}",
                        control.pin_role()
                    ));
                }
            }
            // Every non-clock, non-data input pin must correspond to a control.
            for pin in cell.input_pins() {
                match pin.role {
                    PinRole::Clock | PinRole::Data => {}
                    PinRole::Enable | PinRole::Reset | PinRole::Set => {
                        if !controls.iter().any(|c| c.pin_role() == pin.role) {
                            return bad(format!("pin `{}` has no matching control", pin.name));
                        }
                    }
                    _ => return bad(format!("unexpected pin role on `{}`", pin.name)),
                }
            }
        }
        Behavior::Latch => {
            check_sequential_pins(cell)?;
            for pin in cell.input_pins() {
                if !matches!(pin.role, PinRole::Clock | PinRole::Data) {
                    return bad(format!(
                        "latch kind has unsupported control pin `{}`",
                        pin.name
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_sequential_pins(cell: &CellKind) -> Result<(), LibraryError> {
    let clocks = cell
        .pins
        .iter()
        .filter(|p| p.role == PinRole::Clock && p.dir == PinDir::Input)
        .count();
    match clocks {
        0 => return Err(LibraryError::MissingClockPin(cell.name.clone())),
        1 => {}
        _ => return Err(LibraryError::MultipleClockPins(cell.name.clone())),
    }
    let data = cell
        .pins
        .iter()
        .filter(|p| p.role == PinRole::Data && p.dir == PinDir::Input)
        .count();
    if data != 1 {
        return Err(LibraryError::BadCell(
            cell.name.clone(),
            "sequential kind must have exactly one data input pin".into(),
        ));
    }
    let outputs = cell.pins.iter().filter(|p| p.dir == PinDir::Output).count();
    if outputs != 1 {
        return Err(LibraryError::BadCell(
            cell.name.clone(),
            "sequential kind must have exactly one output pin".into(),
        ));
    }
    Ok(())
}

mod expr_as_string {
    use super::Expr;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(expr: &Expr, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&expr.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Expr, D::Error> {
        let text = String::deserialize(de)?;
        Expr::parse(&text).map_err(de::Error::custom)
    }
}
