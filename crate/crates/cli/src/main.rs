use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use magdrop_cli::{
    artifacts, cmd_bound, cmd_compare, cmd_train, cmd_validate, data_root, default_regularizer,
    BoundFlags, BoundSource, CliError, CliResult,
};
use magdrop_core::RunConfig;

#[derive(Parser)]
#[command(
    name = "magdrop",
    version,
    about = "Train, bound and compare MAGDrop runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the regularizer (none, dropout, agr, magdrop) with defaults.
        #[arg(long)]
        regularizer: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Compute the generalization bound for a run or for explicit inputs.
    Bound {
        #[arg(long, conflicts_with = "inputs", required_unless_present = "inputs")]
        run: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Prior width used for every row.
        #[arg(long, conflicts_with = "backsolve_sigma")]
        sigma: Option<f64>,
        /// Back-solve the prior width so the bound gap equals this value.
        #[arg(long)]
        backsolve_sigma: Option<f64>,
        /// Where to write bound.json and bound.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate completed runs.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write compare.csv and compare.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that every artifact in a run directory is valid JSON or CSV.
    Validate { dir: PathBuf },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            regularizer,
            output_dir,
        } => {
            let text = artifacts::read_text(&config)?;
            let mut cfg = RunConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = regularizer {
                cfg.regularizer = default_regularizer(&r)?;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let (metrics, dir) = cmd_train(&cfg, &data_root())?;
            for e in &metrics.epochs {
                println!(
                    "epoch {:>3}  train {:6.2}%  test {:6.2}%  gap {:6.2}  loss {:.4}",
                    e.epoch, e.train_acc, e.test_acc, e.gen_gap, e.train_loss
                );
            }
            println!("wrote {} ({:.1}s)", dir.display(), metrics.wall_clock_secs);
        }
        Command::Bound {
            run,
            inputs,
            sigma,
            backsolve_sigma,
            out,
        } => {
            let source = match (run, inputs) {
                (Some(r), _) => BoundSource::Run(r),
                (None, Some(i)) => BoundSource::Inputs(i),
                (None, None) => unreachable!("clap enforces one source"),
            };
            let flags = BoundFlags {
                sigma,
                backsolve_sigma,
                out,
            };
            print!("{}", cmd_bound(&source, &flags, &data_root())?.table());
        }
        Command::Compare { runs, out } => {
            let cmp = cmd_compare(&runs)?;
            let table = cmp.table();
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(|e| CliError::Io {
                    path: out.clone(),
                    source: e,
                })?;
                cmp.write_csv(&out.join("compare.csv"))?;
                artifacts::write_text(&out.join("compare.txt"), &table)?;
            }
            print!("{table}");
        }
        Command::Validate { dir } => {
            let v = cmd_validate(&dir)?;
            print!("{}", v.summary());
            if !v.ok() {
                return Err(CliError::Artifact {
                    path: dir,
                    detail: "one or more artifacts are invalid".into(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
