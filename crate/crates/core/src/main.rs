use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use feddure::client::Algorithm;
use feddure::harness::{
    compare_runs, format_comparison, parse_override, partition_report, preset, run_experiment,
    ConfigOverrides, ExperimentConfig, OUT_DIR_ENV, PRESETS,
};

#[derive(Parser)]
#[command(name = "feddure", version, about = "Federated semi-supervised learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiments and write metrics, summary and checkpoint.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the checkpoint in the run directory, if present.
        #[arg(long)]
        resume: bool,
    },
    /// Write the partition manifest and imbalance report as JSON.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output file; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize final-round accuracy across metrics files.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// List built-in presets.
    Presets,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset applied before the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Seed; repeat to run several seeds.
    #[arg(long)]
    seed: Vec<u64>,
    /// feddure, fedavg_supervised, fedavg_fixmatch, or `all`.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Root directory for run outputs.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_creg: Option<f64>,
    #[arg(long)]
    lr_freg: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    local_iters: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    clients_per_round: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    meta_mode: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> feddure::Result<ConfigOverrides> {
        let mut o = ConfigOverrides::default();
        let mut push = |s: String| -> feddure::Result<()> {
            o.merge(parse_override(&s)?);
            Ok(())
        };
        if let Some(v) = self.rounds {
            push(format!("rounds={v}"))?;
        }
        if let Some(v) = self.gamma {
            push(format!("gamma={v:?}"))?;
        }
        if let Some(v) = &self.out {
            push(format!("out_dir={:?}", v.display().to_string()))?;
        }
        for (key, v) in [
            ("lr", self.lr),
            ("lr_creg", self.lr_creg),
            ("lr_freg", self.lr_freg),
            ("threshold", self.threshold),
        ] {
            if let Some(v) = v {
                push(format!("{key}={v:?}"))?;
            }
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("local_iters", self.local_iters),
            ("clients", self.clients),
            ("clients_per_round", self.clients_per_round),
        ] {
            if let Some(v) = v {
                push(format!("{key}={v}"))?;
            }
        }
        if let Some(v) = &self.meta_mode {
            push(format!("meta_mode={v}"))?;
        }
        for s in &self.set {
            push(s.clone())?;
        }
        Ok(o)
    }

    fn algorithms(&self) -> feddure::Result<Vec<Option<Algorithm>>> {
        match self.algorithm.as_deref() {
            None => Ok(vec![None]),
            Some("all") => Ok(Algorithm::ALL.into_iter().map(Some).collect()),
            Some(name) => Ok(vec![Some(name.parse()?)]),
        }
    }

    /// One config per (algorithm, seed) pair. Precedence: defaults, preset,
    /// file, flags.
    fn configs(&self) -> feddure::Result<Vec<ExperimentConfig>> {
        let mut base = match &self.preset {
            Some(p) => preset(p)?,
            None => ConfigOverrides::default(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| feddure::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            base.merge(feddure::harness::parse_overrides_toml(&text)?);
        }
        base.merge(self.overrides()?);
        let seeds: Vec<Option<u64>> = if self.seed.is_empty() {
            vec![None]
        } else {
            self.seed.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for alg in self.algorithms()? {
            for &seed in &seeds {
                let mut o = base.clone();
                if alg.is_some() {
                    o.algorithm = alg;
                }
                if seed.is_some() {
                    o.seed = seed;
                }
                out.push(ExperimentConfig::load(None, o)?);
            }
        }
        Ok(out)
    }
}

fn run(cli: Cli) -> feddure::Result<()> {
    match cli.command {
        Command::Run { config, resume } => {
            for cfg in config.configs()? {
                let summary = run_experiment(&cfg, resume)?;
                println!(
                    "{} seed {}: final accuracy {:.4} (best {:.4} at round {}) -> {}",
                    summary.algorithm,
                    summary.seed,
                    summary.final_accuracy,
                    summary.best_accuracy,
                    summary.best_round,
                    cfg.run_dir().display()
                );
            }
        }
        Command::Partition { config, output } => {
            let cfg = config.configs()?.remove(0);
            let report = partition_report(&cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            match output {
                Some(p) => std::fs::write(&p, json).map_err(|e| feddure::Error::Io { path: p, source: e })?,
                None => println!("{json}"),
            }
            eprintln!(
                "internal TV {:.4}, external TV {:.4}",
                report.imbalance.mean_internal_tv, report.imbalance.external_tv
            );
        }
        Command::Compare { metrics, json } => {
            let rows = compare_runs(&metrics)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", format_comparison(&rows));
            }
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
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
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
