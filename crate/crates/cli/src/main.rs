use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use critbatch_cli::{cmd_compare, cmd_run, cmd_sweep, CliError, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "critbatch", version, about = "Adaptive batch size / learning rate SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheduler over the configured seeds.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Constant batch SFO sweep with analytic and empirical critical batch size.
    Sweep {
        config: PathBuf,
        /// Comma-separated batch sizes, e.g. 2,4,8,16.
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<u64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several schedulers on one problem and rank them.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory, replacing output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing run.seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Full-gradient check interval, replacing run.check_interval.
    #[arg(long)]
    check_interval: Option<usize>,
    /// Write every step to the traces, not only check steps.
    #[arg(long)]
    all_steps: bool,
}

impl Common {
    fn overrides(self) -> Overrides {
        Overrides {
            out: self.out,
            seeds: self.seeds,
            check_interval: self.check_interval,
            all_steps: self.all_steps,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, common } => {
            let summary = cmd_run(ExperimentConfig::load(&config)?, &common.overrides())?;
            for s in &summary.seeds {
                println!(
                    "seed {}: steps {} final_loss {} min_grad_norm {} sfo {} stages {}",
                    s.seed, s.steps, s.final_loss, s.min_grad_norm, s.total_sfo, s.stages_completed
                );
            }
        }
        Command::Sweep { config, batches, common } => {
            let (_, report) = cmd_sweep(ExperimentConfig::load(&config)?, batches, &common.overrides())?;
            let s = &report.summary;
            println!("eps {}", s.eps);
            println!("b_star_analytic {}", s.b_star_analytic);
            match s.b_star_empirical {
                Some(b) => println!("b_star_empirical {b}"),
                None => println!("b_star_empirical none"),
            }
        }
        Command::Compare { configs, common } => {
            let loaded = configs
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let report = cmd_compare(loaded, &common.overrides())?;
            println!("target eps {}", report.target_eps);
            for r in &report.ranking {
                let show = |v: Option<f64>| v.map_or("inf".to_string(), |x| x.to_string());
                println!(
                    "{}: steps rank {} (median {}), sfo rank {} (median {}), hits {}/{}",
                    r.label,
                    r.rank_steps,
                    show(r.median_steps_to_eps),
                    r.rank_sfo,
                    show(r.median_sfo_to_eps),
                    r.hits,
                    r.runs
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
