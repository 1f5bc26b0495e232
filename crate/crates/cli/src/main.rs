use std::path::PathBuf;
use std::process::ExitCode;

use causal_remedy::commands::{self, *};
use causal_remedy::dml::FinalStageKind;
use causal_remedy::error::Result;
use clap::{Parser, Subcommand, ValueEnum};

/// Reboot-or-redeploy decisions from causal effect estimates.
#[derive(Parser)]
#[command(name = "remedy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Forest,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a confounded observational dataset and its ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Fit a cross-fitted DML model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        final_stage: Option<Stage>,
    },
    /// Print ψ and the naive and adjusted average effects.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run every configured policy on the same simulated events.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the KPI table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Also write a per-VM downtime histogram CSV here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Compare logged actions with the ones the model prefers.
    Counterfactual {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also write a τ̂ histogram CSV here.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// Decide one event and append it to the action log.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        decision_config: PathBuf,
        #[arg(long, default_value = "action_log.jsonl")]
        log: PathBuf,
        #[arg(long, default_value = "default")]
        experiment: String,
        #[arg(long, default_value = "unknown")]
        node_id: String,
        #[arg(long, default_value = "unknown")]
        event_id: String,
        /// Unhealthy timestamp in minutes.
        #[arg(long, default_value_t = 0)]
        timestamp: i64,
    },
    /// Distil the model into a shallow policy tree and CATE curves.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        cate_feature: Option<String>,
        #[arg(long, default_value_t = 8)]
        bins: usize,
    },
    /// Sticky A/B experiment with per-group KPIs.
    Abtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        groups: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain on a recent window and deploy only if ψ improves.
    Update {
        #[arg(long)]
        current: PathBuf,
        #[arg(long)]
        recent: PathBuf,
        #[arg(long)]
        holdout: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Simulate { config, out, truth, n } => commands::simulate(&SimulateArgs { config, out, truth, n }),
        Command::Train {
            config,
            data,
            out,
            final_stage,
        } => commands::train(&TrainArgs {
            config,
            data,
            out,
            final_stage: final_stage.map(|s| match s {
                Stage::Forest => FinalStageKind::Forest,
                Stage::Linear => FinalStageKind::Linear,
            }),
        }),
        Command::Eval { model, data } => commands::eval(&model, &data),
        Command::Compare {
            config,
            model,
            n,
            out,
            table,
            plot,
        } => commands::compare(&CompareArgs {
            config,
            model,
            n,
            out,
            table,
            plot,
        }),
        Command::Counterfactual {
            model,
            data,
            truth,
            plot,
            bins,
        } => commands::counterfactual(&CounterfactualArgs {
            model,
            data,
            truth,
            plot,
            bins,
        }),
        Command::Recommend {
            model,
            signals,
            decision_config,
            log,
            experiment,
            node_id,
            event_id,
            timestamp,
        } => commands::recommend(&RecommendArgs {
            model,
            signals,
            decision_config,
            log,
            experiment,
            node_id,
            event_id,
            timestamp,
        }),
        Command::Interpret {
            model,
            data,
            depth,
            cate_feature,
            bins,
        } => commands::interpret(&InterpretArgs {
            model,
            data,
            depth,
            cate_feature,
            bins,
        }),
        Command::Abtest {
            config,
            experiment,
            groups,
            n,
            model,
            out,
        } => commands::abtest(&AbTestArgs {
            config,
            experiment,
            groups,
            n,
            model,
            out,
        }),
        Command::Update {
            current,
            recent,
            holdout,
            out,
            config,
        } => commands::update(&UpdateArgs {
            current,
            recent,
            holdout,
            out,
            config,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
