//! Command-line front end.
//!
//! Exit codes: `0` certified (or audit passed), `2` not certified (or audit
//! failed), `1` any error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{canonical_hash, NetworkModel, NewSubsystemFile};
use crate::pipeline::{
    run_analysis, run_compositional, run_switched_synthesis, run_synthesis, CertificationReport, GainEntry,
    PipelineOptions,
};
use crate::sim::{audit_dissipation, integrate, write_csv, Scenario, TrajectoryMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qsrnet", version, about = "Distributed dissipativity certification for networked linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the network without control.
    Analyze(SolveArgs),
    /// Certify the network, designing gains where needed.
    Synthesize(SolveArgs),
    /// Append one subsystem to a certified network.
    Compose(ComposeArgs),
    /// Simulate a certified closed loop and audit dissipation.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// LMI slack (default scales with the data).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Certify against additive state-matrix perturbations of this norm.
    #[arg(long = "robust-eps", default_value_t = 0.0)]
    pub robust_eps: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Network JSON file.
    pub network: PathBuf,
    /// Processing order as comma-separated names or zero-based indices.
    #[arg(long)]
    pub sequence: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Base network JSON file.
    pub network: PathBuf,
    /// Certification report of the base network.
    #[arg(long)]
    pub report: PathBuf,
    /// New-subsystem JSON file.
    #[arg(long)]
    pub add: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Network JSON file.
    pub network: PathBuf,
    /// Certification report providing gains, storage and supplies.
    #[arg(long)]
    pub report: PathBuf,
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid stride of the dissipation audit.
    #[arg(long = "audit-stride", default_value_t = 10)]
    pub audit_stride: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct GainsFile<'a> {
    network_hash: &'a str,
    gains: &'a [GainEntry],
}

/// Parses a sequence of names or zero-based indices.
pub fn parse_sequence(net: &NetworkModel, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<usize>() {
            Ok(i) => Ok(i),
            Err(_) => net
                .subsystems
                .iter()
                .position(|s| s.name == t)
                .ok_or_else(|| Error::InvalidNetwork(format!("unknown subsystem `{t}` in sequence"))),
        })
        .collect()
}

fn options(c: &Common) -> Result<PipelineOptions> {
    if let Some(e) = c.eps {
        if !(e > 0.0) {
            return Err(Error::InvalidNetwork(format!("--eps must be positive, got {e}")));
        }
    }
    if !(c.robust_eps >= 0.0) {
        return Err(Error::InvalidNetwork(format!("--robust-eps must be nonnegative, got {}", c.robust_eps)));
    }
    let mut opts = PipelineOptions::default();
    opts.step.eps = c.eps;
    opts.step.robust_eps = c.robust_eps;
    Ok(opts)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, format!("{text}\n"))?;
    Ok(path)
}

fn write_gains(dir: &Path, report: &CertificationReport) -> Result<PathBuf> {
    let file = GainsFile { network_hash: &report.network_hash, gains: &report.gains };
    write(dir, "gains.json", &serde_json::to_string_pretty(&file)?)
}

fn summarize(report: &CertificationReport) {
    for st in &report.steps {
        let gamma = st.gamma.map(|g| format!(" gamma={g:.4}")).unwrap_or_default();
        let margin = st.margin.map(|m| format!(" margin={m:.3e}")).unwrap_or_default();
        println!("{:>3} {:<12} {:?}{margin}{gamma}", st.subsystem, st.name, st.status);
    }
    println!("certified: {}", report.certified);
}

fn solve(args: &SolveArgs, design: bool) -> Result<bool> {
    let mut net = NetworkModel::load(&args.network)?;
    if let Some(seq) = &args.sequence {
        let seq = parse_sequence(&net, seq)?;
        net = net.with_sequence(seq);
    }
    let opts = options(&args.common)?;
    let report = match (design, net.is_switched()) {
        (false, _) => run_analysis(&net, &opts)?,
        (true, false) => run_synthesis(&net, &opts)?,
        (true, true) => run_switched_synthesis(&net, &opts)?,
    };
    summarize(&report);
    write(&args.common.out, "report.json", &report.to_json_string())?;
    if design {
        write_gains(&args.common.out, &report)?;
    }
    Ok(report.certified)
}

fn compose(args: &ComposeArgs) -> Result<bool> {
    let base = NetworkModel::load(&args.network)?;
    let report = CertificationReport::load(&args.report)?;
    let addition = NewSubsystemFile::load(&args.add)?;
    let opts = options(&args.common)?;
    let (ext, out) = run_compositional(&base, &report, &addition, &opts)?;
    summarize(&out);
    write(&args.common.out, "network.json", &ext.to_json_string())?;
    write(&args.common.out, "report.json", &out.to_json_string())?;
    write_gains(&args.common.out, &out)?;
    Ok(out.certified)
}

fn simulate(args: &SimulateArgs) -> Result<bool> {
    let net = NetworkModel::load(&args.network)?;
    let report = CertificationReport::load(&args.report)?;
    let net = net.with_sequence(report.sequence.clone());
    let hash = canonical_hash(&net);
    if hash != report.network_hash {
        return Err(Error::Integrity("report does not belong to this network".into()));
    }
    if !report.certified {
        return Err(Error::InvalidNetwork("report is not certified; nothing to simulate".into()));
    }
    let mut sc = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    let tr = integrate(&net, &report, &sc)?;
    let audit = audit_dissipation(&tr, args.audit_stride);
    std::fs::create_dir_all(&args.out)?;
    write_csv(&tr, args.out.join("trajectory.csv"))?;
    write(&args.out, "trajectory.json", &TrajectoryMeta::new(&hash, &sc, &tr, audit).to_json_string())?;
    println!(
        "samples: {}  divergent: {}  min slack: {:.6e}  tolerance: {:.3e}  audit: {}",
        tr.times.len(),
        tr.divergent,
        audit.min_slack,
        audit.tolerance,
        if audit.pass { "pass" } else { "fail" }
    );
    Ok(audit.pass)
}

/// Runs a parsed command and maps the outcome to an exit code.
pub fn execute(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Analyze(a) => solve(a, false),
        Command::Synthesize(a) => solve(a, true),
        Command::Compose(a) => compose(a),
        Command::Simulate(a) => simulate(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CERTIFIED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_OK
            }
        }
    }
}
