use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ricci_lab::harness::{generate, run_suite, ExperimentConfig, Suite};

#[derive(Parser)]
#[command(name = "ricci-lab", version, about = "Normalized Ricci flow experiments on axisymmetric spheres")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Leading eigenvalues of the linearized flow at the round metric
    Spectrum,
    /// Plain normalized flow from seeded data
    Flow,
    /// Optimal-gauge iteration on seeded data
    Gauge,
    /// Flow, gauge iteration and isometry of the limit
    Pipeline,
    /// Isometry construction checks
    Isometry,
    /// Continuity of the limit along a one-parameter family
    Family,
    /// Write seeded sample metrics
    Gen,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
}

fn config(c: &Common) -> ricci_lab::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = c.n {
        cfg.n = n;
    }
    if let Some(r) = c.resolution {
        cfg.resolution = r;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    if let Some(t) = c.t_max {
        cfg.t_max = t;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> ricci_lab::Result<i32> {
    let mut cfg = config(&cli.common)?;
    cfg.suite = match cli.command {
        Command::Spectrum => Suite::Spectrum,
        Command::Flow => Suite::Flow,
        Command::Gauge => Suite::Gauge,
        Command::Pipeline => Suite::Pipeline,
        Command::Isometry => Suite::Isometry,
        Command::Family => Suite::Family,
        Command::Gen => {
            for p in generate(&cfg)? {
                println!("{}", p.display());
            }
            return Ok(0);
        }
    };
    let summary = run_suite(&cfg)?;
    for g in &summary.gates {
        let mark = if g.pass { "PASS" } else { "FAIL" };
        println!("{mark}  {}: {:.3e} (threshold {:.3e})", g.name, g.value, g.threshold);
    }
    for f in &summary.failures {
        eprintln!("case failure: {f}");
    }
    println!("config {}", summary.config_hash);
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
