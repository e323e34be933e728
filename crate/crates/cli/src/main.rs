use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nanogrid::env::ActionSpace;
use nanogrid::experiment::{
    emit_report, load_config, run_compare, run_evaluate, run_simulate, run_train, synth_data, Evaluation,
    ExperimentConfig, RunReport,
};
use nanogrid::Result;

/// Cooperative P2P power trading among nanogrid clusters.
#[derive(Debug, Parser)]
#[command(name = "nanogrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic generation, SMP and appliance files plus a config that reads them.
    SynthData(RunArgs),
    /// Run the rule-based policy over every scenario day and write step traces.
    Simulate(RunArgs),
    /// Train one agent per cluster and evaluate it against the baseline.
    Train(RunArgs),
    /// Re-evaluate the checkpoints of a finished training run.
    Evaluate(RunArgs),
    /// Tabulate the costs of several runs against their baseline run.
    Compare {
        /// Run directories; exactly one must be a baseline run.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw figures and tables for a run or compare directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    Res,
    #[value(name = "ut_res")]
    UtRes,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// `baseline` or a variant such as `dqn` or `n_ppo`.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long, value_enum)]
    action_space: Option<SpaceArg>,
    /// Encode the state with a graph convolution over the cluster graph.
    #[arg(long)]
    gcn: bool,
    /// Bootstrap Q targets from the online network.
    #[arg(long)]
    no_target_net: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(a) = &self.algo {
            cfg.algorithm.name = a.clone();
        }
        if let Some(s) = self.action_space {
            cfg.algorithm.action_space = Some(match s {
                SpaceArg::Res => ActionSpace::Res,
                SpaceArg::UtRes => ActionSpace::UtRes,
            });
        }
        if self.gcn {
            cfg.algorithm.gcn = true;
        }
        if self.no_target_net {
            cfg.algorithm.hyperparams.target_net = false;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_evaluation(dir: &Path, method: &str, ev: &Evaluation) {
    println!("{method}: results in {}", dir.display());
    println!("{:>8} {:>12} {:>12} {:>9}", "cluster", "cost $", "baseline $", "saving %");
    for (c, s) in ev.saving_percent().iter().enumerate() {
        println!("{:>8} {:>12.2} {:>12.2} {:>9.2}", c + 1, ev.cost[c], ev.baseline_cost[c], s);
    }
}

fn summarise(cfg: &ExperimentConfig, report: &RunReport) -> Result<()> {
    let evals: Vec<Evaluation> = report.outcomes.iter().map(|o| o.evaluation.clone()).collect();
    print_evaluation(&cfg.output, &report.manifest.method, &Evaluation::mean(&evals)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(args) => {
            let cfg = args.resolve()?;
            for f in synth_data(&cfg, &cfg.output)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Simulate(args) => {
            let cfg = args.resolve()?;
            let report = run_simulate(&cfg)?;
            summarise(&cfg, &report)?;
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let report = run_train(&cfg)?;
            summarise(&cfg, &report)?;
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve()?;
            let report = run_evaluate(&cfg)?;
            summarise(&cfg, &report)?;
        }
        Command::Compare { runs, out } => {
            let table = run_compare(&runs, &out)?;
            let savings = table.savings();
            let means = table.mean_saving();
            println!("saving % against baseline, written to {}", out.display());
            for (i, (name, _)) in table.variants.iter().enumerate() {
                let per: Vec<String> = savings[i].iter().map(|s| format!("{s:.2}")).collect();
                println!("{name:>12} [{}] arithmetic mean {:.2}", per.join(", "), means[i]);
            }
        }
        Command::Report { dir } => {
            for f in emit_report(&dir)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
