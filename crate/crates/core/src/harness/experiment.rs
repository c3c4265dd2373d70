use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::config::{DatasetKind, ExperimentConfig};
use super::metrics::{read_metrics, MetricsRow, MetricsWriter};
use crate::client::ClientState;
use crate::data::{dirichlet_partition, gen_synthetic, imbalance_report, load_idx, AugmentSpec, Dataset, ImbalanceReport, Partition};
use crate::error::{Error, Result};
use crate::numerics::MlpSpec;
use crate::rng::{stream_rng, Stream};
use crate::server::{run_round, Checkpoint, GlobalState, RoundReport, ServerConfig};

/// Training pool and evaluation set for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let train = gen_synthetic(
                cfg.synthetic_classes,
                cfg.synthetic_per_class,
                cfg.synthetic_dim,
                cfg.synthetic_spread,
                &mut stream_rng(cfg.seed, Stream::SyntheticTrain, &[]),
            )?;
            let test = gen_synthetic(
                cfg.synthetic_classes,
                cfg.synthetic_test_per_class.max(1),
                cfg.synthetic_dim,
                cfg.synthetic_spread,
                &mut stream_rng(cfg.seed, Stream::SyntheticTest, &[]),
            )?;
            Ok((train, Some(test)))
        }
        DatasetKind::Idx => {
            let (Some(images), Some(labels)) = (&cfg.idx_train_images, &cfg.idx_train_labels) else {
                return Err(Error::config("idx_train_images", "missing"));
            };
            let mut train = load_idx(images, labels)?;
            if let Some(n) = cfg.idx_subset {
                if n < train.len() {
                    let mut rng = stream_rng(cfg.seed, Stream::Subsample, &[]);
                    let mut keep = index::sample(&mut rng, train.len(), n).into_vec();
                    keep.sort_unstable();
                    train = train.subset(&keep)?;
                }
            }
            let test = match (&cfg.idx_test_images, &cfg.idx_test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l)?),
                _ => None,
            };
            Ok((train, test))
        }
    }
}

pub fn build_partition(cfg: &ExperimentConfig) -> Result<(Partition, Dataset)> {
    let (train, test) = load_data(cfg)?;
    let partition = dirichlet_partition(&train, &cfg.partition_spec())?;
    let test = match (test, &partition.test) {
        (Some(t), _) => t,
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(Error::config("test_fraction", "no evaluation set available")),
    };
    Ok((partition, test))
}

/// Partition manifest plus imbalance diagnostics, as written by the
/// `partition` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionReport {
    pub manifest: crate::data::PartitionManifest,
    pub imbalance: ImbalanceReport,
}

pub fn partition_report(cfg: &ExperimentConfig) -> Result<PartitionReport> {
    let (partition, _) = build_partition(cfg)?;
    Ok(PartitionReport {
        imbalance: imbalance_report(&partition.clients),
        manifest: partition.manifest,
    })
}

/// An experiment in memory: clients, test set, and server state.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub server: ServerConfig,
    pub clients: Vec<ClientState>,
    pub test: Dataset,
    pub global: GlobalState,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (partition, test) = build_partition(config)?;
        let classes = test.class_count().max(partition.clients[0].class_count());
        let dim = test.dim();
        let spec: MlpSpec = config.model_spec(dim, classes)?;
        let clients: Vec<ClientState> = partition
            .clients
            .into_iter()
            .enumerate()
            .map(|(id, data)| ClientState::new(id, data, config.freg_hidden, config.seed))
            .collect();
        let params = spec.init_params(&mut stream_rng(config.seed, Stream::ModelInit, &[]));
        let global = GlobalState::new(params, &clients);
        Ok(Experiment {
            server: config.server_config(spec)?,
            config: config.clone(),
            clients,
            test,
            global,
        })
    }

    /// Rebuilds the experiment and restores server and F-reg state.
    pub fn from_checkpoint(config: &ExperimentConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut exp = Experiment::new(config)?;
        if checkpoint.global.registry != exp.global.registry {
            return Err(Error::Checkpoint("client registry does not match the config".into()));
        }
        exp.server.spec.check_params(&checkpoint.global.global_params)?;
        checkpoint.restore(&mut exp.clients)?;
        exp.global = checkpoint.global.clone();
        Ok(exp)
    }

    pub fn rounds_done(&self) -> usize {
        self.global.round_index
    }

    pub fn run_round(&mut self) -> Result<&RoundReport> {
        self.global = run_round(&self.global, &mut self.clients, &self.test, &self.server)?;
        Ok(self.global.history.last().unwrap())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.global, &self.clients)
    }

    pub fn augment(&self) -> AugmentSpec {
        self.server.hp.augment
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// 1-based.
    pub best_round: usize,
    pub final_test_loss: f64,
    pub wall_clock_seconds: f64,
    pub augment: AugmentSpec,
    pub labeled_per_client: Vec<usize>,
    pub unlabeled_per_client: Vec<usize>,
}

/// Files written into a run directory.
pub struct RunPaths {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub rounds: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            config: dir.join("config.toml"),
            metrics: dir.join("metrics.csv"),
            rounds: dir.join("rounds.jsonl"),
            summary: dir.join("summary.json"),
            checkpoint: dir.join("checkpoint.json"),
        }
    }
}

fn metrics_row(cfg: &ExperimentConfig, r: &RoundReport, seconds: f64) -> MetricsRow {
    MetricsRow {
        round: r.round_index + 1,
        algorithm: cfg.algorithm.name().to_string(),
        seed: cfg.seed,
        test_accuracy: r.test_accuracy,
        mean_d: r.mean_d,
        mean_weight: r.mean_weight,
        wall_clock_seconds: if cfg.record_wall_clock { seconds } else { 0.0 },
    }
}

fn write_rounds(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut out = Vec::new();
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs all rounds of `cfg` into `cfg.run_dir()`. With `resume`, continues
/// from an existing checkpoint there, truncating metrics to its round.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<RunSummary> {
    run_experiment_in(cfg, &cfg.run_dir(), resume)
}

pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<RunSummary> {
    let paths = RunPaths::new(dir);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let start = Instant::now();

    let resumed = if resume && paths.checkpoint.exists() {
        Some(Checkpoint::load(&paths.checkpoint)?)
    } else {
        None
    };
    let mut exp = match &resumed {
        Some(ck) => Experiment::from_checkpoint(cfg, ck)?,
        None => Experiment::new(cfg)?,
    };
    std::fs::write(&paths.config, cfg.to_toml()).map_err(|e| Error::io(&paths.config, e))?;

    let mut metrics = if resumed.is_some() {
        let done = exp.rounds_done();
        let old = read_metrics(&paths.metrics).unwrap_or_default();
        let keep: Vec<MetricsRow> = old.into_iter().filter(|r| r.round <= done).collect();
        if keep.len() != done {
            let rebuilt: Vec<MetricsRow> = exp.global.history.iter().map(|r| metrics_row(cfg, r, 0.0)).collect();
            MetricsWriter::resume(&paths.metrics, &rebuilt)?
        } else {
            MetricsWriter::resume(&paths.metrics, &keep)?
        }
    } else {
        MetricsWriter::create(&paths.metrics)?
    };
    write_rounds(&paths.rounds, &exp.global.history)?;
    let mut rounds_log = std::fs::OpenOptions::new()
        .append(true)
        .open(&paths.rounds)
        .map_err(|e| Error::io(&paths.rounds, e))?;

    while exp.rounds_done() < cfg.rounds {
        let report = exp.run_round()?.clone();
        metrics.append(&metrics_row(cfg, &report, start.elapsed().as_secs_f64()))?;
        let mut line = serde_json::to_vec(&report)?;
        line.push(b'\n');
        rounds_log.write_all(&line).map_err(|e| Error::io(&paths.rounds, e))?;
        let done = exp.rounds_done();
        if done % cfg.checkpoint_every == 0 || done == cfg.rounds {
            exp.checkpoint().save(&paths.checkpoint)?;
        }
    }

    let history = &exp.global.history;
    let last = history.last().ok_or_else(|| Error::config("rounds", "no rounds were run"))?;
    let (best_round, best) = history
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, r)| if r.test_accuracy > acc.1 { (i, r.test_accuracy) } else { acc });
    let summary = RunSummary {
        algorithm: cfg.algorithm.name().to_string(),
        seed: cfg.seed,
        rounds: history.len(),
        final_accuracy: last.test_accuracy,
        best_accuracy: best,
        best_round: best_round + 1,
        final_test_loss: last.test_loss,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        augment: exp.augment(),
        labeled_per_client: exp.clients.iter().map(|c| c.data.labeled_len()).collect(),
        unlabeled_per_client: exp.clients.iter().map(|c| c.data.unlabeled_len()).collect(),
    };
    std::fs::write(&paths.summary, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&paths.summary, e))?;
    Ok(summary)
}
