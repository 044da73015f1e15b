use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use greenlab_cli::plot::emit_plot_data;
use greenlab_cli::report::Bundle;
use greenlab_cli::{run_experiment, ExperimentConfig, HarnessError, Stage};

/// Every flag can also be set through the environment variable named in its
/// help text (prefix `GREENLAB_`); flags win over the environment.
#[derive(Parser)]
#[command(
    name = "greenlab",
    version,
    about = "Green function and flow verification harness"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "GREENLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "GREENLAB_OUT")]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed`.
    #[arg(long, global = true, env = "GREENLAB_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GREENLAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured space and write its description.
    Space {
        #[command(subcommand)]
        action: SpaceAction,
    },
    /// Run one verification stage.
    Verify {
        #[command(subcommand)]
        target: VerifyTarget,
    },
    /// Flow the configured field and run the flow diagnostics.
    Flow {
        #[command(subcommand)]
        action: FlowAction,
    },
    /// Solve the configured transport problem and check the geodesic.
    Transport {
        #[command(subcommand)]
        action: TransportAction,
    },
    /// Estimate dimensions of the configured space.
    Dimension {
        #[command(subcommand)]
        action: DimensionAction,
    },
    /// Work with an existing report bundle.
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Run every configured stage.
    Run,
}

#[derive(Subcommand)]
enum SpaceAction {
    Build,
}

#[derive(Subcommand)]
enum VerifyTarget {
    Heat,
    Green,
    Maximal,
}

#[derive(Subcommand)]
enum FlowAction {
    Run,
}

#[derive(Subcommand)]
enum TransportAction {
    Geodesic,
}

#[derive(Subcommand)]
enum DimensionAction {
    Scan,
}

#[derive(Subcommand)]
enum ReportAction {
    /// Write plot-data files from the bundle in `--out`.
    Emit {
        /// Series to write (all when omitted).
        #[arg(long = "series")]
        series: Vec<String>,
        /// Destination of the `.dat` files (default `<out>/plots`).
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config (or GREENLAB_CONFIG) is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    let stages: Vec<Stage> = match &cli.command {
        Command::Report {
            action: ReportAction::Emit { series, plots },
        } => {
            let dir = match &cli.common.out {
                Some(d) => d.clone(),
                None => load(&cli.common)?.output.dir,
            };
            let bundle = Bundle::read(&dir)?;
            let target = plots.clone().unwrap_or_else(|| dir.join("plots"));
            for path in emit_plot_data(&bundle, series, &target)? {
                println!("{}", path.display());
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Space { .. } => vec![Stage::Space],
        Command::Verify { target } => vec![match target {
            VerifyTarget::Heat => Stage::Heat,
            VerifyTarget::Green => Stage::Green,
            VerifyTarget::Maximal => Stage::Maximal,
        }],
        Command::Flow { .. } => vec![Stage::Flow],
        Command::Transport { .. } => vec![Stage::Transport],
        Command::Dimension { .. } => vec![Stage::Dimension],
        Command::Run => Vec::new(),
    };
    let cfg = load(&cli.common)?;
    let bundle = run_experiment(&cfg, &stages)?;
    for r in &bundle.rows {
        let tag = match (r.bound, r.pass) {
            (None, _) => "INFO",
            (Some(_), true) => "PASS",
            (Some(_), false) => "FAIL",
        };
        println!("{tag} {} {} = {:e}", r.statement, r.quantity, r.value);
    }
    if let Some(f) = &bundle.failure {
        eprintln!(
            "{}",
            serde_json::to_string(f).unwrap_or_else(|_| f.message.clone())
        );
        return Ok(ExitCode::from(2));
    }
    Ok(if bundle.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
