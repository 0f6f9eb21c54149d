//! Pipeline driver for the two-phase conversion toolkit.
//!
//! ```bash
//! # Convert a flip-flop netlist to a two-phase latch netlist
//! twophase convert design.v --variant clock-gated --retime min-delay --out build/
//! # Check two-coloring and co-simulation equivalence against the original
//! twophase verify build/design.twophase.json design.v
//! # Latch-aware static timing with time borrowing
//! twophase sta build/design.twophase.json --period 10
//! # Table-style summary over several netlists
//! twophase report design.v build/design.twophase.json --period 10
//! # Format conversion between structural Verilog and canonical JSON
//! twophase parse design.v --format canonical
//! ```
//!
//! Exit codes: 0 on success, 1 when verification or timing fails, 2 for
//! usage and parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use twophase::netlist::{emit_canonical, parse_canonical};
use twophase::pipeline::{convert, ConvertConfig, RetimeMode};
use twophase::sim::{
    simulate_ff, simulate_two_phase, trace_to_csv, trace_to_vcd, PhaseSchedule, Stimulus,
};
use twophase::timing::{report as timing_report, ClockSpec, TimingError};
use twophase::transform::TransformVariant;
use twophase::verify::{
    build_latch_graph, check_equivalence, EquivOptions, TwoColorReport,
    VerifyReport,
};
use twophase::verilog::{emit_verilog, parse_verilog_named};
use twophase::{CellLibrary, Netlist};

#[derive(Parser)]
#[command(author, version, about = "Two-phase clocking conversion and verification toolkit")]
#[command(propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Convert a flip-flop netlist into a two-phase latch netlist
    Convert(ConvertArgs),
    /// Two-coloring check plus co-simulation equivalence against the original
    Verify(VerifyArgs),
    /// Latch-aware static timing analysis with time borrowing
    Sta(StaArgs),
    /// Structural and timing summary table over one or more netlists
    Report(ReportArgs),
    /// Convert between structural Verilog and the canonical JSON format
    Parse(ParseArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; command-line flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,

    /// Cell library JSON (defaults to the built-in standard library)
    #[arg(long = "lib")]
    library: Option<PathBuf>,

    /// Output directory for generated files
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Fields a config file may provide. Flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    library: Option<PathBuf>,
    format: Option<String>,
    variant: Option<TransformVariant>,
    retime: Option<RetimeMode>,
    period: Option<f64>,
    duty: Option<f64>,
    cycles: Option<usize>,
    seeds: Option<u64>,
    skew_table: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid config {}", path.display()))
            }
        }
    }
}

fn load_library(common: &CommonArgs, file: &FileConfig) -> Result<CellLibrary> {
    let path = common.library.as_ref().or(file.library.as_ref());
    match path {
        None => Ok(twophase::fixtures::standard_library()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read library {}", path.display()))?;
            CellLibrary::load(&text).map_err(|e| anyhow!("{e}"))
        }
    }
}

/// Reads a netlist, picking the frontend from the extension (`.v` means
/// Verilog, everything else canonical JSON) unless `format` overrides it.
fn load_netlist(path: &Path, format: Option<&str>, lib: &CellLibrary) -> Result<Netlist> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_verilog = match format {
        Some("verilog") => true,
        Some("canonical") => false,
        Some(other) => bail!("unknown format `{other}`; use verilog or canonical"),
        None => path.extension().is_some_and(|e| e == "v" || e == "sv"),
    };
    if is_verilog {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("<input>");
        parse_verilog_named(name, &text, lib).map_err(|e| anyhow!("{e}"))
    } else {
        parse_canonical(&text, lib).map_err(|e| anyhow!("{}: {e}", path.display()))
    }
}

/// Writes through a temporary file and renames, so failed runs leave no
/// partially written outputs behind.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn out_dir(common: &CommonArgs, file: &FileConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn clock_spec(
    period: Option<f64>,
    duty: Option<f64>,
    skew_table: Option<&Path>,
    file: &FileConfig,
) -> Result<ClockSpec> {
    let period = period
        .or(file.period)
        .ok_or_else(|| anyhow!("a clock period is required; pass --period"))?;
    let mut clocks = ClockSpec::new(period);
    if let Some(duty) = duty.or(file.duty) {
        clocks.duty = duty;
    }
    let skew_path = skew_table.or(file.skew_table.as_deref());
    if let Some(path) = skew_path {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read skew table {}", path.display()))?;
        clocks.skew = serde_json::from_str(&text)
            .with_context(|| format!("invalid skew table {}", path.display()))?;
    }
    clocks.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(clocks)
}

#[derive(Args)]
struct ConvertArgs {
    /// Input netlist (.v or canonical .json)
    input: PathBuf,

    /// Input format override: verilog | canonical
    #[arg(long)]
    format: Option<String>,

    /// Lowering template: clock-gated | recirc-mux
    #[arg(long)]
    variant: Option<TransformVariant>,

    /// Retiming between lowering and latch mapping: off | min-delay | min-area | both
    #[arg(long)]
    retime: Option<RetimeMode>,

    /// Cycles for the retiming equivalence gate
    #[arg(long)]
    cycles: Option<usize>,

    /// Seeds for the retiming equivalence gate
    #[arg(long)]
    seeds: Option<u64>,

    /// Also write the per-step retiming lag assignments as JSON
    #[arg(long)]
    dump_lags: bool,

    #[command(flatten)]
    common: CommonArgs,
}

impl ConvertArgs {
    fn run(&self) -> Result<i32> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let lib = load_library(&self.common, &file)?;
        let format = self.format.as_deref().or(file.format.as_deref());
        let netlist = load_netlist(&self.input, format, &lib)?;

        let variant = self
            .variant
            .or(file.variant)
            .unwrap_or(TransformVariant::ClockGated);
        let mut config = ConvertConfig::new(variant);
        config.retime = self.retime.or(file.retime).unwrap_or(RetimeMode::Off);
        if let Some(cycles) = self.cycles.or(file.cycles) {
            config.equiv_cycles = cycles;
        }
        if let Some(seeds) = self.seeds.or(file.seeds) {
            config.equiv_seeds = seeds;
        }

        let outcome = match convert(&netlist, &lib, &config) {
            Ok(outcome) => outcome,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };

        let dir = out_dir(&self.common, &file);
        let base = netlist.name.clone();
        write_atomic(
            &dir.join(format!("{base}.twophase.json")),
            &emit_canonical(&outcome.netlist),
        )?;
        write_atomic(
            &dir.join(format!("{base}.twophase.v")),
            &emit_verilog(&outcome.netlist),
        )?;
        write_atomic(
            &dir.join(format!("{base}.trace.json")),
            &outcome.trace.to_json(),
        )?;
        let stage_log = serde_json::to_string_pretty(&outcome.stages)?;
        write_atomic(&dir.join(format!("{base}.stages.json")), &stage_log)?;
        if self.dump_lags {
            for summary in &outcome.retime {
                write_atomic(
                    &dir.join(format!("{base}.lags.{}.json", summary.mode)),
                    &serde_json::to_string_pretty(&summary.lags)?,
                )?;
            }
        }

        println!("converted `{base}` ({variant}, retime {})", config.retime);
        for stage in &outcome.stages {
            println!(
                "  {:<24} seq {:>5}  comb {:>5}  total {:>5}",
                stage.stage, stage.seq, stage.comb, stage.total
            );
        }
        for summary in &outcome.retime {
            println!(
                "  retime {}: critical path {:.3} -> {:.3} ns, registers {} -> {}{}",
                summary.mode,
                summary.pre_critical_path,
                summary.post_critical_path,
                summary.pre_registers,
                summary.post_registers,
                if summary.fallback { " (fallback)" } else { "" }
            );
        }
        println!("outputs in {}", dir.display());
        Ok(0)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Transformed two-phase latch netlist
    transformed: PathBuf,

    /// Original flip-flop netlist to co-simulate against
    original: Option<PathBuf>,

    /// Equivalence cycles per seed
    #[arg(long, default_value_t = 1000)]
    cycles: usize,

    /// Number of random stimulus seeds
    #[arg(long, default_value_t = 16)]
    seeds: u64,

    /// Warm-up cycles skipped before comparing (covers retiming lag)
    #[arg(long, default_value_t = 0)]
    warmup: usize,

    /// Write seed-0 simulation traces (CSV and VCD) into the output directory
    #[arg(long)]
    dump_traces: bool,

    #[command(flatten)]
    common: CommonArgs,
}

impl VerifyArgs {
    fn run(&self) -> Result<i32> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let lib = load_library(&self.common, &file)?;
        let transformed = load_netlist(&self.transformed, None, &lib)?;

        let (graph, violations) = build_latch_graph(&transformed, &lib);

        let equivalence = match &self.original {
            None => None,
            Some(path) => {
                let original = load_netlist(path, None, &lib)?;
                let verdict = check_equivalence(
                    &original,
                    &transformed,
                    &lib,
                    &PhaseSchedule::standard(),
                    &EquivOptions {
                        cycles: self.cycles,
                        seeds: self.seeds,
                        seed_base: 0,
                        warmup: self.warmup,
                    },
                )
                .map_err(|e| anyhow!("{e}"))?;
                if self.dump_traces {
                    self.dump(&original, &transformed, &lib, &file)?;
                }
                Some(verdict)
            }
        };

        let report = VerifyReport {
            two_color: TwoColorReport {
                violations: violations.clone(),
            },
            equivalence,
        };
        let dir = out_dir(&self.common, &file);
        let base = transformed.name.clone();
        write_atomic(&dir.join(format!("{base}.verify.json")), &report.to_json())?;

        if violations.is_empty() {
            println!(
                "two-color: clean ({} latches, {} edges)",
                graph.nodes.len(),
                graph.edges.len()
            );
        } else {
            println!("two-color: {} violation(s)", violations.len());
            for v in &violations {
                println!("  {v}");
            }
        }
        if let Some(eq) = &report.equivalence {
            if eq.equivalent {
                println!(
                    "equivalence: ok over {} cycles x {} seeds",
                    eq.cycles,
                    eq.seeds.len()
                );
            } else {
                println!("equivalence: FAILED {:?}", eq.divergence);
            }
        }
        Ok(if report.clean() { 0 } else { 1 })
    }

    fn dump(
        &self,
        original: &Netlist,
        transformed: &Netlist,
        lib: &CellLibrary,
        file: &FileConfig,
    ) -> Result<()> {
        let dir = out_dir(&self.common, file);
        let stimulus = Stimulus::random(original, self.cycles.min(256), 0);
        let ff = simulate_ff(original, lib, &stimulus).map_err(|e| anyhow!("{e}"))?;
        let tp = simulate_two_phase(transformed, lib, &stimulus, &PhaseSchedule::standard())
            .map_err(|e| anyhow!("{e}"))?;
        write_atomic(
            &dir.join(format!("{}.orig.csv", original.name)),
            &trace_to_csv(&ff),
        )?;
        write_atomic(
            &dir.join(format!("{}.orig.vcd", original.name)),
            &trace_to_vcd(&ff, &original.name),
        )?;
        write_atomic(
            &dir.join(format!("{}.twophase.csv", transformed.name)),
            &trace_to_csv(&tp),
        )?;
        write_atomic(
            &dir.join(format!("{}.twophase.vcd", transformed.name)),
            &trace_to_vcd(&tp, &transformed.name),
        )?;
        Ok(())
    }
}

#[derive(Args)]
struct StaArgs {
    /// Two-phase latch netlist
    netlist: PathBuf,

    /// Clock period T_c in ns
    #[arg(long)]
    period: Option<f64>,

    /// Duty cycle per phase (default 0.49)
    #[arg(long)]
    duty: Option<f64>,

    /// Per-latch skew table, JSON {"latch": ns}
    #[arg(long)]
    skew_table: Option<PathBuf>,

    /// Use the launching latch's minimum data-to-output delay in the hold
    /// check instead of the receiving latch's
    #[arg(long)]
    hold_launching_d2q: bool,

    #[command(flatten)]
    common: CommonArgs,
}

impl StaArgs {
    fn run(&self) -> Result<i32> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let lib = load_library(&self.common, &file)?;
        let netlist = load_netlist(&self.netlist, None, &lib)?;
        let clocks = clock_spec(self.period, self.duty, self.skew_table.as_deref(), &file)?;

        let mut report = match timing_report(&netlist, &lib, &clocks) {
            Ok(report) => report,
            Err(TimingError::InfeasiblePeriod(latches)) => {
                eprintln!(
                    "error: period {} ns is infeasible; borrowing grows at {}",
                    clocks.period,
                    latches.join(", ")
                );
                return Ok(1);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
        };

        if self.hold_launching_d2q {
            let holds = twophase::timing::hold_check(&netlist, &lib, &clocks, true)
                .map_err(|e| anyhow!("{e}"))?;
            report.worst_hold_slack = holds
                .iter()
                .map(|h| h.slack)
                .fold(f64::INFINITY, f64::min);
            if !report.worst_hold_slack.is_finite() {
                report.worst_hold_slack = 0.0;
            }
        }

        let dir = out_dir(&self.common, &file);
        write_atomic(
            &dir.join(format!("{}.timing.json", netlist.name)),
            &report.to_json(),
        )?;

        println!(
            "period {:.3} ns  duty {:.2}  max TB {:.3}  act TB {:.3}",
            report.period, report.duty, report.max_tb, report.act_tb
        );
        println!(
            "worst setup slack {:.3} ns  worst hold slack {:.3} ns  skew {:.3} ns  ({} iterations)",
            report.worst_setup_slack, report.worst_hold_slack, report.skew_max, report.iterations
        );
        for latch in &report.latches {
            println!(
                "  {:<28} {}  arrival {:>8.3}  borrow {:>7.3}  slack {:>8.3}",
                latch.name, latch.phase, latch.arrival, latch.borrow, latch.setup_slack
            );
        }
        Ok(if report.clean() { 0 } else { 1 })
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Netlists to summarize (flip-flop or two-phase)
    netlists: Vec<PathBuf>,

    /// Clock period for the timing columns
    #[arg(long)]
    period: Option<f64>,

    /// Duty cycle per phase (default 0.49)
    #[arg(long)]
    duty: Option<f64>,

    #[command(flatten)]
    common: CommonArgs,
}

impl ReportArgs {
    fn run(&self) -> Result<i32> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let lib = load_library(&self.common, &file)?;
        println!(
            "{:<24} {:>8} {:>8} {:>8} {:>10} {:>10} {:>6} {:>6} {:>7}",
            "design", "period", "max TB", "act TB", "setup slk", "hold slk", "seq", "comb", "total"
        );
        for path in &self.netlists {
            let netlist = load_netlist(path, None, &lib)?;
            let counts = netlist.cell_counts(&lib);
            let timing = self
                .period
                .or(file.period)
                .map(|p| {
                    let mut clocks = ClockSpec::new(p);
                    if let Some(d) = self.duty.or(file.duty) {
                        clocks.duty = d;
                    }
                    timing_report(&netlist, &lib, &clocks)
                })
                .and_then(|r| r.ok());
            match timing {
                Some(t) => println!(
                    "{:<24} {:>8.2} {:>8.3} {:>8.3} {:>10.3} {:>10.3} {:>6} {:>6} {:>7}",
                    netlist.name,
                    t.period,
                    t.max_tb,
                    t.act_tb,
                    t.worst_setup_slack,
                    t.worst_hold_slack,
                    counts.seq,
                    counts.comb,
                    counts.total
                ),
                None => println!(
                    "{:<24} {:>8} {:>8} {:>8} {:>10} {:>10} {:>6} {:>6} {:>7}",
                    netlist.name,
                    "---",
                    "---",
                    "---",
                    "---",
                    "---",
                    counts.seq,
                    counts.comb,
                    counts.total
                ),
            }
        }
        Ok(0)
    }
}

#[derive(Args)]
struct ParseArgs {
    /// Input netlist (.v or canonical .json)
    input: PathBuf,

    /// Output format: canonical | verilog (default: the opposite of the input)
    #[arg(long)]
    format: Option<String>,

    /// Output file (stdout when omitted)
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,

    #[command(flatten)]
    common: CommonArgs,
}

impl ParseArgs {
    fn run(&self) -> Result<i32> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let lib = load_library(&self.common, &file)?;
        let netlist = load_netlist(&self.input, None, &lib)?;
        let input_is_verilog = self.input.extension().is_some_and(|e| e == "v" || e == "sv");
        let to_verilog = match self.format.as_deref() {
            Some("verilog") => true,
            Some("canonical") => false,
            Some(other) => bail!("unknown format `{other}`; use verilog or canonical"),
            None => !input_is_verilog,
        };
        let text = if to_verilog {
            emit_verilog(&netlist)
        } else {
            emit_canonical(&netlist)
        };
        match &self.output {
            Some(path) => write_atomic(path, &text)?,
            None => print!("{text}"),
        }
        Ok(0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Commands::Convert(args) => args.run(),
        Commands::Verify(args) => args.run(),
        Commands::Sta(args) => args.run(),
        Commands::Report(args) => args.run(),
        Commands::Parse(args) => args.run(),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
