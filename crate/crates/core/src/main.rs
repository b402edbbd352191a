use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twisted_reeb::catalog::list_systems;
use twisted_reeb::cli::{export_plot_data, run_config, ExportKind, Outcome, Overrides, OUTPUT_ENV};

#[derive(Parser)]
#[command(name = "twisted-reeb", version, about = "Twisted periodic Reeb orbit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the system catalog.
    Systems {
        #[command(subcommand)]
        action: SystemsAction,
    },
    /// Run an experiment config and append records to `<out>/<experiment_id>.jsonl`.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, env = OUTPUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Write CSV plot data from a result file.
    Export {
        result: PathBuf,
        /// trace, continuation, loopflow or floquet
        #[arg(long)]
        kind: ExportKind,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Trace sample count.
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum SystemsAction {
    List {
        #[arg(long)]
        filter: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Systems { action: SystemsAction::List { filter } } => {
            println!("{:<16} {:>4} {:>6}  {:<22} notes", "name", "dim", "order", "energy window");
            let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
            for row in list_systems(filter.as_deref().unwrap_or("")) {
                let window = row.energy_window.map_or("-".to_string(), |(a, b)| format!("[{a:.4}, {b:.4}]"));
                println!(
                    "{:<16} {:>4} {:>6}  {:<22} {}",
                    row.name,
                    opt(row.dimension),
                    opt(row.symmetry_order),
                    window,
                    row.citations.join("; ")
                );
            }
            0
        }
        Command::Run { config, seed, jobs, out } => {
            match run_config(&config, &Overrides { seed, jobs, output_dir: out }) {
                Ok(summary) => {
                    for r in &summary.records {
                        eprintln!("{}: {}", r.experiment_id, r.payload.kind());
                    }
                    eprintln!("wrote {} record(s) to {}", summary.records.len(), summary.output.display());
                    if summary.outcome != Outcome::Success {
                        eprintln!("outcome: {:?}", summary.outcome);
                    }
                    summary.outcome.exit_code()
                }
                Err(e) => {
                    eprintln!("{e}");
                    e.exit_code()
                }
            }
        }
        Command::Export { result, kind, out, samples } => match export_plot_data(&result, kind, &out, samples) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                0
            }
            Err(e) => {
                eprintln!("{e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
