use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mednc_cli::commands::{
    cmd_gradcheck, cmd_mccv, cmd_prepare, cmd_report, cmd_train, exit_code_for,
};
use mednc_cli::config::RunConfig;

/// Multi-level ensemble classifier pipeline: dataset preparation, training,
/// Monte Carlo cross-validation, and report generation.
#[derive(Parser)]
#[command(name = "mednc", version, about)]
struct Cli {
    /// JSON run configuration (defaults are used when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Published experimental settings: 224x224 resize, dropout 0.5,
    /// 10 repetitions, 60/20/10/10 ratios
    #[arg(long, global = true)]
    paper_mode: bool,

    /// Print the default configuration as JSON and exit
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest or generate the dataset and print class counts and split sizes
    Prepare,
    /// Train one model and write metrics, curves, and the serialized model
    Train,
    /// Monte Carlo cross-validation with per-repetition files and a summary
    Mccv,
    /// Regenerate summary tables from stored metrics.json files
    Report {
        /// Directory containing rep*/metrics.json (directly or per run)
        dir: PathBuf,
    },
    /// Verify every layer gradient against central finite differences
    Gradcheck,
}

fn load_config(cli: &Cli) -> mednc_core::error::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if cli.paper_mode {
        config.apply_paper_mode();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();

    if cli.print_default_config {
        let mut config = RunConfig::default();
        if cli.paper_mode {
            config.apply_paper_mode();
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&config).expect("default config serializes")
        );
        return ExitCode::SUCCESS;
    }

    let Some(command) = &cli.command else {
        eprintln!("error: a subcommand is required (prepare, train, mccv, report, gradcheck)");
        return ExitCode::from(2);
    };

    // Gradcheck needs no configuration.
    if let Command::Gradcheck = command {
        return match cmd_gradcheck(cli.seed.unwrap_or(42), &mut stdout) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => {
                eprintln!("error: gradient verification failed");
                ExitCode::from(4)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(4)
            }
        };
    }
    if let Command::Report { dir } = command {
        return match cmd_report(dir, &mut stdout) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code_for(&e))
            }
        };
    }

    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let result = match command {
        Command::Prepare => cmd_prepare(&config, &mut stdout),
        Command::Train => cmd_train(&config, &mut stdout),
        Command::Mccv => cmd_mccv(&config, &mut stdout),
        Command::Report { .. } | Command::Gradcheck => unreachable!("handled above"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
