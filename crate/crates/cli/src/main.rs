use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scal_cli::benchmark::benchmark_query;
use scal_cli::generate::generate_data;
use scal_cli::plotdata::emit_plotdata;
use scal_cli::robustness::eval_robustness;
use scal_cli::run::run;
use scal_cli::{CliError, Overrides};

#[derive(Parser)]
#[command(
    name = "scal-bench",
    version,
    about = "Pool-based active-learning experiments on feature vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy x trial and write cycles.csv, summary.json, manifest.json.
    Run(Common),
    /// Time scoring + selection per strategy relative to Entropy.
    BenchmarkQuery(Common),
    /// OOD AUROC and shifted-test metrics of each strategy's final model.
    EvalRobustness(Common),
    /// Long-format plot CSVs from a results directory.
    EmitPlotdata {
        /// Directory holding summary.json.
        #[arg(long)]
        results: PathBuf,
        /// Defaults to <results>/plotdata.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured synthetic datasets as CSV.
    GenerateData(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Trial count (overrides `trials`).
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            trials: self.trials,
            threads: self.threads,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => {
            let out = run(&c.config, &c.overrides())?;
            println!("{} trials written to {}", out.trials.len(), out.dir.display());
        }
        Command::BenchmarkQuery(c) => {
            let report = benchmark_query(&c.config, &c.overrides())?;
            print!("{}", report.table());
        }
        Command::EvalRobustness(c) => {
            let report = eval_robustness(&c.config, &c.overrides())?;
            for s in &report.strategies {
                let auroc = s
                    .ood_auroc
                    .map(|a| format!("{:.4}", a.mean))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<12} clean acc {:.4} ece {:.4}  ood auroc {auroc}",
                    s.strategy.as_str(),
                    s.clean_accuracy.mean,
                    s.clean_ece.mean
                );
                for sh in &s.shift {
                    println!(
                        "{:<12}   shift {:<8} acc {:.4} ece {:.4}",
                        "", sh.magnitude, sh.accuracy.mean, sh.ece.mean
                    );
                }
            }
        }
        Command::EmitPlotdata { results, out } => {
            for p in emit_plotdata(&results, out.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::GenerateData(c) => {
            for p in generate_data(&c.config, &c.overrides())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
