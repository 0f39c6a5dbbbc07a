use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand, ValueEnum};
use coag_core::harness::{self, ExperimentConfig, Subcommand};
use coag_core::Error;

#[derive(Parser)]
#[command(name = "coaglab", version, about = "Nested coalescent and Smoluchowski coagulation experiments")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides a configuration key, e.g. `--set times=0.5,1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Quick,
    Full,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Nested coalescent from n species; species curve and gene counts.
    SimulateCoalescent,
    /// Finite-difference Laplace solver (gamma = 2).
    SolvePde,
    /// Yule-tree Monte Carlo of the weak solution (delta = 0 uses the Upsilon bank).
    McWeak,
    /// Partial CPP markings, optionally against Picard iterates.
    CppMark,
    /// Maximal marking at time 1: samples of Upsilon.
    UpsilonBank,
    /// Shooting solve of the self-similar profile (gamma = 2).
    ProfileOde,
    /// Dust solutions and their envelopes.
    Dust,
    /// Speed of coming down from infinity against 2 E(Upsilon) / t^2.
    SpeedCdi {
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        t: Option<f64>,
    },
    /// The full acceptance suite.
    Acceptance,
}

impl Command {
    fn subcommand(&self) -> Subcommand {
        match self {
            Command::SimulateCoalescent => Subcommand::SimulateCoalescent,
            Command::SolvePde => Subcommand::SolvePde,
            Command::McWeak => Subcommand::McWeak,
            Command::CppMark => Subcommand::CppMark,
            Command::UpsilonBank => Subcommand::UpsilonBank,
            Command::ProfileOde => Subcommand::ProfileOde,
            Command::Dust => Subcommand::Dust,
            Command::SpeedCdi { .. } => Subcommand::SpeedCdi,
            Command::Acceptance => Subcommand::Acceptance,
        }
    }
}

const USAGE: u8 = 2;

fn config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut o: Vec<(String, String)> = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        o.push((k.trim().to_string(), v.trim().to_string()));
    }
    o.push(("experiment".into(), cli.command.subcommand().name().into()));
    if let Some(s) = cli.seed {
        o.push(("seed".into(), s.to_string()));
    }
    if let Some(d) = &cli.out {
        o.push(("out".into(), d.display().to_string()));
    }
    if let Some(p) = cli.profile {
        let name = match p {
            ProfileArg::Quick => "quick",
            ProfileArg::Full => "full",
        };
        o.push(("profile".into(), name.into()));
    }
    if let Command::SpeedCdi { n, t } = &cli.command {
        if let Some(n) = n {
            o.push(("coalescent.n".into(), n.to_string()));
        }
        if let Some(t) = t {
            o.push(("times".into(), t.to_string()));
        }
    }
    let refs: Vec<(&str, String)> = o.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    ExperimentConfig::parse(&text, &refs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start {w} workers: {e}");
            return ExitCode::from(USAGE);
        }
    }
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE);
        }
    };
    match harness::run(&cfg) {
        Ok(report) => {
            for c in &report.checks {
                println!("{}", c.line());
            }
            let failed = report.checks.iter().filter(|c| c.status == harness::Status::Fail).count();
            println!(
                "{}: {} checks, {failed} failed, {:.1}s; artifacts in {}",
                report.experiment,
                report.checks.len(),
                report.timing.elapsed_seconds,
                cfg.out.display()
            );
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e @ (Error::Config(_) | Error::MissingArtifact { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
