use std::path::PathBuf;
use std::process::ExitCode;

use akira_core::fsm::StateId;
use akira_core::harness::{
    experiment_pipelines, render_experiment, render_table, repair_corpus, repair_file, DetectorKind, HarnessConfig,
    HarnessError, ProviderKind,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "akira",
    version,
    about = "Waveform-guided repair of undefined behavior in Rust programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repair a file, or every sample in a directory.
    Repair(RepairArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Mock,
    Miri,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Pipelines,
}

#[derive(clap::Args)]
struct RepairArgs {
    /// Source file or corpus directory.
    path: PathBuf,
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    #[arg(long)]
    max_transitions: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    no_rollback: bool,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,
}

fn build_config(args: &RepairArgs) -> Result<HarnessConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(p) = args.provider {
        cfg.provider = match p {
            ProviderArg::Mock => ProviderKind::Mock,
            ProviderArg::Http => ProviderKind::Http,
        };
    }
    if let Some(d) = args.detector {
        cfg.detector = match d {
            DetectorArg::Mock => DetectorKind::Mock,
            DetectorArg::Miri => DetectorKind::Miri,
        };
    }
    if let Some(n) = args.max_transitions {
        cfg.session.max_transitions = n;
    }
    if let Some(t) = args.temperature {
        cfg.session.temperature = t;
    }
    if args.no_rollback {
        cfg.session.rollback_enabled = false;
    }
    if let Some(n) = args.parallel {
        cfg.parallel = n.max(1);
    }
    if let Some(d) = &args.trace_dir {
        cfg.trace_dir = Some(d.clone());
    }
    cfg.session.validate()?;
    Ok(cfg)
}

fn repair(args: &RepairArgs) -> Result<ExitCode, HarnessError> {
    let cfg = build_config(args)?;
    if args.path.is_dir() {
        if args.experiment.is_some() {
            let report = experiment_pipelines(&args.path, &cfg)?;
            print!("{}", render_experiment(&report));
            return Ok(ExitCode::SUCCESS);
        }
        let run = repair_corpus(&args.path, &cfg)?;
        print!("{}", render_table(&run.result, Some(&run.timing)));
        println!("report: {}", run.report_path.display());
        return Ok(ExitCode::SUCCESS);
    }
    if args.experiment.is_some() {
        return Err(HarnessError::Setup("--experiment needs a corpus directory".into()));
    }
    let run = repair_file(&args.path, &cfg)?;
    let o = &run.outcome;
    println!(
        "{}: {} after {} transitions ({} agent invocations, {} rollbacks, hallucination {:.4})",
        args.path.display(),
        o.terminal,
        o.transitions,
        o.metrics.agent_invocations,
        o.metrics.rollbacks,
        o.hallucination_score
    );
    println!("trace: {}", run.trace_path.display());
    if let Some(p) = &run.repaired_path {
        println!("repaired: {}", p.display());
    }
    if o.terminal == StateId::QF {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("repair failed: {}", o.reason);
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("AKIRA_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Repair(args) => match repair(&args) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
