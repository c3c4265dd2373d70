//! Round orchestration: selection, weighted aggregation, evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{local_round, Algorithm, ClientState, LocalHyperparams, LocalRoundResult, RoundContext};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{argmax, cross_entropy, MlpSpec, ParamVector, Targets};
use crate::regulators::FReg;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub selected_clients: Vec<usize>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub mean_d: f64,
    pub mean_weight: f64,
    /// Mean of `‖g_s + g_u + g_d‖₂` over every local iteration of the round.
    pub mean_grad_norm: f64,
    /// Labeled loss before each local iteration, per client.
    pub per_client_losses: BTreeMap<usize, Vec<f64>>,
    /// `‖g_s + g_u + g_d‖₂` of each local iteration, per client.
    pub per_client_grad_norms: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    /// Number of completed rounds.
    pub round_index: usize,
    pub global_params: ParamVector,
    pub registry: Vec<RegistryEntry>,
    pub history: Vec<RoundReport>,
}

impl GlobalState {
    pub fn new(global_params: ParamVector, clients: &[ClientState]) -> Self {
        GlobalState {
            round_index: 0,
            global_params,
            registry: clients
                .iter()
                .map(|c| RegistryEntry {
                    id: c.id,
                    size: c.data.len(),
                })
                .collect(),
            history: Vec::new(),
        }
    }
}

/// Uniform sample of `s` ids without replacement, returned in registry
/// order.
pub fn select_clients<R: Rng + ?Sized>(registry: &[usize], s: usize, rng: &mut R) -> Result<Vec<usize>> {
    if s > registry.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {s} clients from {}",
            registry.len()
        )));
    }
    if s == registry.len() {
        return Ok(registry.to_vec());
    }
    let mut picked = index::sample(rng, registry.len(), s).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| registry[i]).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeights {
    /// Proportional to client sample count.
    #[default]
    SampleCount,
    Uniform,
}

impl std::str::FromStr for AggregationWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample_count" => Ok(AggregationWeights::SampleCount),
            "uniform" => Ok(AggregationWeights::Uniform),
            other => Err(Error::InvalidArgument(format!("unknown aggregation weights `{other}`"))),
        }
    }
}

pub fn aggregation_weights(results: &[LocalRoundResult], mode: AggregationWeights) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let raw: Vec<f64> = match mode {
        AggregationWeights::SampleCount => results.iter().map(|r| r.sample_weight as f64).collect(),
        AggregationWeights::Uniform => vec![1.0; results.len()],
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `Σ_k w_k θ_k`, evaluated as `θ_0 + Σ_{k≥1} w_k (θ_k − θ_0)` and clamped
/// to the coordinatewise range of the inputs, so identical inputs come back
/// unchanged and rounding never leaves the hull.
pub fn aggregate(results: &[LocalRoundResult], mode: AggregationWeights) -> Result<ParamVector> {
    let weights = aggregation_weights(results, mode)?;
    let base = &results[0].updated_params;
    for r in &results[1..] {
        base.check_compatible(&r.updated_params)?;
    }
    let mut out = base.clone();
    for (r, &w) in results[1..].iter().zip(&weights[1..]) {
        out = out.axpy(w, &r.updated_params.sub(base)?)?;
    }
    let mut lo = base.clone();
    let mut hi = base.clone();
    for r in &results[1..] {
        lo = lo.zip_map_checked(&r.updated_params, f64::min)?;
        hi = hi.zip_map_checked(&r.updated_params, f64::max)?;
    }
    out.zip_map_checked(&lo, f64::max)?.zip_map_checked(&hi, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(spec: &MlpSpec, params: &ParamVector, test: &Dataset) -> Result<Evaluation> {
    let logits = spec.forward(params, test.features())?;
    let correct = logits
        .row_iter()
        .zip(test.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let loss = cross_entropy(&logits, Targets::Hard(test.labels()))?.mean;
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerConfig {
    pub spec: MlpSpec,
    pub hp: LocalHyperparams,
    pub algorithm: Algorithm,
    pub clients_per_round: usize,
    pub aggregation: AggregationWeights,
    pub seed: u64,
    /// Train selected clients on the rayon pool.
    pub parallel: bool,
}

fn mean_or_zero(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One synchronous round. `clients` must be in registry order.
pub fn run_round(
    global: &GlobalState,
    clients: &mut [ClientState],
    test: &Dataset,
    cfg: &ServerConfig,
) -> Result<GlobalState> {
    let registry: Vec<usize> = clients.iter().map(|c| c.id).collect();
    let mut rng = stream_rng(cfg.seed, Stream::Selection, &[global.round_index as u64]);
    let selected = select_clients(&registry, cfg.clients_per_round, &mut rng)?;
    let ctx = RoundContext {
        seed: cfg.seed,
        round: global.round_index,
    };
    let train = |c: &mut ClientState| {
        local_round(cfg.algorithm, c, &cfg.spec, &global.global_params, &cfg.hp, ctx).map_err(|e| Error::Client {
            id: c.id,
            source: Box::new(e),
        })
    };
    let picked = |c: &&mut ClientState| selected.contains(&c.id);
    let results: Vec<Result<LocalRoundResult>> = if cfg.parallel {
        clients.par_iter_mut().filter(picked).map(train).collect()
    } else {
        clients.iter_mut().filter(picked).map(train).collect()
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let params = aggregate(&results, cfg.aggregation)?;
    let eval = evaluate(&cfg.spec, &params, test)?;
    let logs = || results.iter().flat_map(|r| &r.iteration_logs);
    let report = RoundReport {
        round_index: global.round_index,
        selected_clients: selected,
        test_accuracy: eval.accuracy,
        test_loss: eval.loss,
        mean_d: mean_or_zero(logs().map(|l| l.d)),
        mean_weight: mean_or_zero(logs().map(|l| l.mean_weight)),
        mean_grad_norm: mean_or_zero(logs().map(|l| l.total_grad_norm)),
        per_client_losses: results
            .iter()
            .map(|r| (r.client_id, r.iteration_logs.iter().map(|l| l.labeled_loss).collect()))
            .collect(),
        per_client_grad_norms: results
            .iter()
            .map(|r| (r.client_id, r.iteration_logs.iter().map(|l| l.total_grad_norm).collect()))
            .collect(),
    };
    let mut next = global.clone();
    next.round_index += 1;
    next.global_params = params;
    next.history.push(report);
    Ok(next)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON snapshot of the server state plus each client's F-reg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub global: GlobalState,
    pub fregs: BTreeMap<usize, FReg>,
}

impl Checkpoint {
    pub fn capture(global: &GlobalState, clients: &[ClientState]) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            global: global.clone(),
            fregs: clients.iter().map(|c| (c.id, c.freg.clone())).collect(),
        }
    }

    /// Writes to a temporary file then renames, so a crash never leaves a
    /// truncated checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Restores per-client F-reg state.
    pub fn restore(&self, clients: &mut [ClientState]) -> Result<()> {
        for c in clients.iter_mut() {
            let f = self
                .fregs
                .get(&c.id)
                .ok_or_else(|| Error::Checkpoint(format!("no F-reg for client {}", c.id)))?;
            c.freg = f.clone();
        }
        Ok(())
    }
}
