use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcn_ta::cli::{self, CommandError};
use pcn_ta::config::RunConfig;
use pcn_ta::gradcheck::Fault;

#[derive(Parser)]
#[command(name = "pcn-ta", version, about = "Predictive coding with temporal amortization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// COIL-20 directory
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use the synthetic stream
    #[arg(long)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method and save a checkpoint
    Train(RunArgs),
    /// Run pcn_ta@50, pcn_ta@100, pcn@100 and backprop from one initialization
    Compare(RunArgs),
    /// Finite-difference and equivalence checks
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Accuracy of a checkpoint on the configured test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn resolve(args: &RunArgs) -> Result<RunConfig, CommandError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = &args.data {
        cfg.use_coil20(dir.clone());
    } else if args.synthetic {
        cfg.use_synthetic();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Train(args) => {
            let s = cli::cmd_train(&resolve(&args)?)?;
            for r in &s.records {
                println!("epoch {} accuracy {:.4} updates/frame {:.1}", r.epoch, r.accuracy, r.avg_nonzero_updates_per_frame);
            }
            println!("wrote {} and {}", s.csv.display(), s.checkpoint.display());
        }
        Command::Compare(args) => {
            let s = cli::cmd_compare(&resolve(&args)?)?;
            for r in &s.merged {
                println!("{:<18} epoch {} accuracy {:.4} updates/frame {:.1}", r.run_id, r.epoch, r.accuracy, r.avg_nonzero_updates_per_frame);
            }
            println!("wrote {}", s.merged_csv.display());
        }
        Command::Gradcheck { seed } => {
            let report = cli::cmd_gradcheck(seed, Fault::default())?;
            print!("{}", report.table());
        }
        Command::Eval { checkpoint, run } => {
            let acc = cli::cmd_eval(&checkpoint, &resolve(&run)?)?;
            println!("accuracy {acc:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
