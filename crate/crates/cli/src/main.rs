mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use brainstate::io::ChannelSelector;
use brainstate::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Neural mass model simulation and state/parameter reconstruction.
///
/// On failure the process prints one JSON line `{"error": <category>,
/// "message": ...}` to stderr and exits with the category's code:
/// config 2, invalid-parameter 3, format 4, missing-channel 5,
/// empty-input 6, io 7, numeric and divergence errors 8, other 1.
#[derive(Debug, Parser)]
#[command(name = "brainstate", version)]
struct Cli {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; module seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory; receives the resolved config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trajectory (errors: invalid-parameter, integration-divergence).
    Simulate {
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        tau_e: Option<f64>,
        #[arg(long)]
        tau_i: Option<f64>,
        /// External input rate.
        #[arg(long)]
        input: Option<f64>,
    },
    /// Sweep the grid and write a split dataset (errors: config when no pair oscillates).
    Datagen {
        #[arg(long)]
        inputs_per_pair: Option<usize>,
        /// Also write an off-grid test set.
        #[arg(long)]
        offgrid: bool,
    },
    /// Train the network on a dataset (errors: format on a bad dataset, empty-input on empty splits).
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_budget: Option<f64>,
    },
    /// Run a Kalman filter over a recording (errors: format, missing-channel, empty-input).
    Akf(EstimateArgs),
    /// Run the trained network over a recording (errors: format, missing-channel, empty-input).
    Infer(EstimateArgs),
    /// Score every method on fresh gated recordings and write reports and grids.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write every estimate track under `tracks/`.
        #[arg(long)]
        save_tracks: bool,
        /// Rescore tracks saved by an earlier `--save-tracks` run.
        #[arg(long)]
        from_tracks: Option<PathBuf>,
    },
    /// Simulate the segment-hold scenario and compare tracking.
    ScenarioTimevarying {
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// CSV or EDF recording.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Exported simulated trajectory instead of a recording.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Channel index or label.
    #[arg(long)]
    channel: Option<String>,
    /// Sample rate for CSV files without a time column.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Registered estimator name.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl EstimateArgs {
    fn apply(self, sec: &mut config::EstimateSection) {
        if self.input.is_some() {
            sec.input = self.input;
        }
        if self.trajectory.is_some() {
            sec.trajectory = self.trajectory;
        }
        if let Some(c) = self.channel {
            sec.ingest.channel = match c.parse::<usize>() {
                Ok(i) => ChannelSelector::Index(i),
                Err(_) => ChannelSelector::Label(c),
            };
        }
        if self.sample_rate.is_some() {
            sec.ingest.sample_rate = self.sample_rate;
        }
        if let Some(m) = self.method {
            sec.method = m;
        }
        if let Some(w) = self.weights {
            sec.weights = w;
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "invalid-parameter" => 3,
        "format" => 4,
        "missing-channel" => 5,
        "empty-input" => 6,
        "io" => 7,
        "numeric" | "integration-divergence" | "filter-divergence" => 8,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out_dir {
        cfg.out_dir = o;
    }
    cfg.derive_seeds();
    match cli.command {
        Command::Simulate { duration, tau_e, tau_i, input } => {
            let p = &mut cfg.simulate.params;
            if tau_e.is_some() || tau_i.is_some() {
                *p = p.with_time_constants(tau_e.unwrap_or(p.tau_e), tau_i.unwrap_or(p.tau_i));
            }
            if let Some(u) = input {
                p.u = u;
            }
            if let Some(d) = duration {
                cfg.simulate.duration = d;
            }
        }
        Command::Datagen { inputs_per_pair, offgrid } => {
            if let Some(n) = inputs_per_pair {
                cfg.datagen.inputs_per_pair = n;
            }
            cfg.datagen.offgrid |= offgrid;
        }
        Command::Train { ref dataset, max_epochs, time_budget } => {
            if let Some(d) = dataset {
                cfg.train.dataset = d.clone();
            }
            if let Some(n) = max_epochs {
                cfg.train.optimizer.max_epochs = n;
            }
            if time_budget.is_some() {
                cfg.train.optimizer.time_budget_s = time_budget;
            }
        }
        Command::Akf(_) | Command::Infer(_) => {}
        Command::Eval { ref dataset, ref weights, save_tracks, ref from_tracks } => {
            if let Some(d) = dataset {
                cfg.eval.dataset = d.clone();
            }
            if let Some(w) = weights {
                cfg.eval.weights = w.clone();
            }
            cfg.eval.save_tracks |= save_tracks;
            if from_tracks.is_some() {
                cfg.eval.from_tracks = from_tracks.clone();
            }
        }
        Command::ScenarioTimevarying { segments, ref dataset, ref weights } => {
            if let Some(n) = segments {
                cfg.scenario.n_segments = n;
            }
            if let Some(d) = dataset {
                cfg.scenario.dataset = d.clone();
            }
            if let Some(w) = weights {
                cfg.scenario.weights = w.clone();
            }
        }
    }
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Akf(args) => {
            args.apply(&mut cfg.akf);
            cfg.write_snapshot(&out)?;
            commands::estimate_cmd(&cfg.akf, &out)
        }
        Command::Infer(args) => {
            args.apply(&mut cfg.infer);
            cfg.write_snapshot(&out)?;
            commands::estimate_cmd(&cfg.infer, &out)
        }
        cmd => {
            cfg.write_snapshot(&out)?;
            match cmd {
                Command::Simulate { .. } => commands::simulate_cmd(&cfg, &out),
                Command::Datagen { .. } => commands::datagen_cmd(&cfg, &out),
                Command::Train { .. } => commands::train_cmd(&cfg, &out),
                Command::Eval { .. } => commands::eval_cmd(&cfg, &out),
                Command::ScenarioTimevarying { .. } => commands::scenario_cmd(&cfg, &out),
                Command::Akf(_) | Command::Infer(_) => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.category(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
