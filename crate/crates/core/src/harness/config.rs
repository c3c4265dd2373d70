use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{Ablation, Algorithm, LocalHyperparams};
use crate::data::{AugmentSpec, PartitionSpec, Setting};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, MlpSpec, OptimizerKind};
use crate::regulators::MetaGradMode;
use crate::server::{AggregationWeights, ServerConfig};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "FEDDURE_OUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    #[default]
    Sgd,
    Adam,
}

macro_rules! experiment_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Full description of one run. Serialized as a flat TOML table.
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct ExperimentConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                ExperimentConfig { $( $name: $default, )* }
            }
        }

        /// A partial config: every key optional. File values and CLI flags
        /// are both parsed into this before being applied.
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigOverrides {
            $( #[serde(default, skip_serializing_if = "Option::is_none")] pub $name: Option<$ty>, )*
        }

        impl ConfigOverrides {
            /// Later values win.
            pub fn merge(&mut self, other: ConfigOverrides) {
                $( if other.$name.is_some() { self.$name = other.$name; } )*
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            pub fn apply(&mut self, o: ConfigOverrides) {
                $( if let Some(v) = o.$name { self.$name = v; } )*
            }
        }
    };
}

experiment_config! {
    dataset: DatasetKind = DatasetKind::Synthetic,
    synthetic_classes: usize = 4,
    synthetic_dim: usize = 2,
    synthetic_per_class: usize = 500,
    synthetic_spread: f64 = 0.8,
    synthetic_test_per_class: usize = 250,
    idx_train_images: Option<PathBuf> = None,
    idx_train_labels: Option<PathBuf> = None,
    idx_test_images: Option<PathBuf> = None,
    idx_test_labels: Option<PathBuf> = None,
    /// Keep a seeded random subset of this many training examples.
    idx_subset: Option<usize> = None,
    setting: Setting = Setting::DirDir,
    clients: usize = 10,
    /// Per class per client (IID labeled settings) or per class in total
    /// (`dir_dir`).
    labeled: usize = 10,
    gamma: f64 = 0.5,
    test_fraction: f64 = 0.0,
    hidden: Vec<usize> = vec![64, 64],
    algorithm: Algorithm = Algorithm::Feddure,
    rounds: usize = 150,
    clients_per_round: usize = 5,
    lr: f64 = 5e-4,
    lr_creg: f64 = 5e-4,
    lr_freg: f64 = 5e-4,
    batch_size: usize = 10,
    unlabeled_batch_size: usize = 10,
    local_iters: usize = 1,
    local_epochs: Option<usize> = None,
    threshold: f64 = 0.95,
    meta_mode: MetaGradMode = MetaGradMode::DartsFd,
    fd_epsilon_scale: f64 = 1e-3,
    stop_grad_through_weight: bool = false,
    optimizer: OptimizerName = OptimizerName::Sgd,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    freg_hidden: usize = 128,
    reset_freg: bool = false,
    weak_noise_sigma: f64 = 0.05,
    strong_noise_sigma: f64 = 0.3,
    strong_dropout_prob: f64 = 0.1,
    image_mode: bool = false,
    fixed_weight: Option<f64> = None,
    fixed_reward: Option<f64> = None,
    aggregation: AggregationWeights = AggregationWeights::SampleCount,
    seed: u64 = 0,
    /// Run directory root; defaults to `$FEDDURE_OUT_DIR`, then `runs`.
    out_dir: Option<PathBuf> = None,
    /// Write measured seconds into the metrics CSV. Off by default so
    /// reruns produce byte-identical files.
    record_wall_clock: bool = false,
    parallel: bool = true,
    /// Checkpoint every this many rounds (the final round always is).
    checkpoint_every: usize = 10,
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::config(key, reason)
}

/// Parses one `key = value` assignment. Values that are not valid TOML are
/// retried as bare strings, so `algorithm=fedavg_fixmatch` works unquoted.
pub fn parse_override(assignment: &str) -> Result<ConfigOverrides> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "expected key=value"))?;
    let key = key.trim();
    let value = value.trim();
    let toml_value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    overrides_from_entry(key, toml_value)
}

fn overrides_from_entry(key: &str, value: toml::Value) -> Result<ConfigOverrides> {
    if !ExperimentConfig::KEYS.contains(&key) {
        return Err(invalid(key, "unknown key"));
    }
    let mut table = toml::Table::new();
    table.insert(key.to_string(), value);
    ConfigOverrides::deserialize(table).map_err(|e| invalid(key, e.message().trim().to_string()))
}

/// Parses a flat TOML document into overrides, attributing every error to
/// its key.
pub fn parse_overrides_toml(text: &str) -> Result<ConfigOverrides> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| invalid("<document>", e.message().trim().to_string()))?;
    let mut out = ConfigOverrides::default();
    for (key, value) in table {
        if let toml::Value::Table(_) = value {
            return Err(invalid(&key, "nested tables are not allowed; use flat keys"));
        }
        out.merge(overrides_from_entry(&key, value)?);
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Defaults, then the file (if any), then `overrides`; validated.
    pub fn load(path: Option<&Path>, overrides: ConfigOverrides) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply(parse_overrides_toml(&text)?);
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(parse_overrides_toml(text)?);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lr", self.lr), ("lr_creg", self.lr_creg), ("lr_freg", self.lr_freg)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("learning rate must be positive, got {v}")));
            }
        }
        let positive = [
            ("rounds", self.rounds),
            ("clients_per_round", self.clients_per_round),
            ("batch_size", self.batch_size),
            ("unlabeled_batch_size", self.unlabeled_batch_size),
            ("freg_hidden", self.freg_hidden),
            ("synthetic_per_class", self.synthetic_per_class),
            ("synthetic_dim", self.synthetic_dim),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.local_epochs.is_none() && self.local_iters == 0 {
            return Err(invalid("local_iters", "must be at least 1"));
        }
        if self.local_epochs == Some(0) {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if self.clients < 2 {
            return Err(invalid("clients", "need at least 2 clients"));
        }
        if self.clients_per_round > self.clients {
            return Err(invalid(
                "clients_per_round",
                format!("{} exceeds the client count {}", self.clients_per_round, self.clients),
            ));
        }
        if self.synthetic_classes < 2 {
            return Err(invalid("synthetic_classes", "need at least 2 classes"));
        }
        if !(self.synthetic_spread >= 0.0 && self.synthetic_spread.is_finite()) {
            return Err(invalid("synthetic_spread", "must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(invalid("test_fraction", "must lie in [0, 1)"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit in a signed 64-bit TOML integer"));
        }
        if self.labeled == 0 {
            return Err(invalid("labeled", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("threshold", "must lie in [0, 1]"));
        }
        if !(self.fd_epsilon_scale > 0.0) {
            return Err(invalid("fd_epsilon_scale", "must be positive"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        self.augment_spec()?;
        self.adam_config().validate().map_err(|e| invalid("adam_beta1", e.to_string()))?;
        if self.dataset == DatasetKind::Idx {
            for (key, v) in [("idx_train_images", &self.idx_train_images), ("idx_train_labels", &self.idx_train_labels)] {
                if v.is_none() {
                    return Err(invalid(key, "required when dataset = \"idx\""));
                }
            }
            if self.idx_test_images.is_some() != self.idx_test_labels.is_some() {
                return Err(invalid("idx_test_images", "test images and labels must be given together"));
            }
            if self.idx_test_images.is_none() && self.test_fraction == 0.0 {
                return Err(invalid("test_fraction", "needs a positive value when no IDX test files are given"));
            }
        }
        Ok(())
    }

    pub fn augment_spec(&self) -> Result<AugmentSpec> {
        AugmentSpec::new(
            self.weak_noise_sigma,
            self.strong_noise_sigma,
            self.strong_dropout_prob,
            self.image_mode,
        )
        .map_err(|e| invalid("strong_noise_sigma", e.to_string()))
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Adam => OptimizerKind::Adam(self.adam_config()),
        }
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> Result<MlpSpec> {
        MlpSpec::classifier(input_dim, &self.hidden, classes)
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            setting: self.setting,
            client_count: self.clients,
            labeled: self.labeled,
            dirichlet_gamma: self.gamma,
            seed: self.seed,
            test_fraction: self.test_fraction,
        }
    }

    pub fn local_hyperparams(&self) -> Result<LocalHyperparams> {
        Ok(LocalHyperparams {
            lr: self.lr,
            lr_creg: self.lr_creg,
            lr_freg: self.lr_freg,
            batch_size: self.batch_size,
            unlabeled_batch_size: self.unlabeled_batch_size,
            local_iters: self.local_iters,
            local_epochs: self.local_epochs,
            threshold: self.threshold,
            meta_mode: self.meta_mode,
            fd_epsilon_scale: self.fd_epsilon_scale,
            stop_grad_through_weight: self.stop_grad_through_weight,
            optimizer: self.optimizer_kind(),
            freg_hidden: self.freg_hidden,
            reset_freg: self.reset_freg,
            augment: self.augment_spec()?,
            ablation: Ablation {
                fixed_weight: self.fixed_weight,
                fixed_reward: self.fixed_reward,
            },
        })
    }

    pub fn server_config(&self, spec: MlpSpec) -> Result<ServerConfig> {
        Ok(ServerConfig {
            spec,
            hp: self.local_hyperparams()?,
            algorithm: self.algorithm,
            clients_per_round: self.clients_per_round,
            aggregation: self.aggregation,
            seed: self.seed,
            parallel: self.parallel,
        })
    }

    /// Root for run directories: `out_dir`, else `$FEDDURE_OUT_DIR`, else
    /// `runs`.
    pub fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// `<out_root>/<algorithm>_seed<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_root().join(format!("{}_seed{}", self.algorithm, self.seed))
    }
}

/// Names of the built-in presets: one per setting.
pub const PRESETS: [&str; 3] = ["iid_iid_synthetic", "iid_dir_synthetic", "dir_dir_synthetic"];

/// Desk-scale synthetic presets. Every algorithm shares the same
/// hyperparameters; pick one with the `algorithm` key.
pub fn preset(name: &str) -> Result<ConfigOverrides> {
    let setting = match name {
        "iid_iid_synthetic" => Setting::IidIid,
        "iid_dir_synthetic" => Setting::IidDir,
        "dir_dir_synthetic" => Setting::DirDir,
        other => {
            return Err(invalid(
                "preset",
                format!("unknown preset `{other}`; available: {}", PRESETS.join(", ")),
            ))
        }
    };
    // 2% labeled: 10 of 500 per class. The IID labeled settings count per
    // client, so they get 1 per class per client.
    let labeled = match setting {
        Setting::DirDir => 10,
        Setting::IidIid | Setting::IidDir => 1,
    };
    Ok(ConfigOverrides {
        dataset: Some(DatasetKind::Synthetic),
        synthetic_classes: Some(4),
        synthetic_dim: Some(2),
        synthetic_per_class: Some(500),
        synthetic_test_per_class: Some(250),
        setting: Some(setting),
        clients: Some(10),
        clients_per_round: Some(5),
        labeled: Some(labeled),
        gamma: Some(0.5),
        rounds: Some(150),
        ..preset_hyperparams()
    })
}

fn preset_hyperparams() -> ConfigOverrides {
    ConfigOverrides {
        synthetic_spread: Some(0.5),
        hidden: Some(vec![32, 32]),
        lr: Some(0.05),
        lr_creg: Some(0.05),
        lr_freg: Some(0.05),
        batch_size: Some(10),
        unlabeled_batch_size: Some(50),
        local_iters: Some(5),
        freg_hidden: Some(128),
        ..ConfigOverrides::default()
    }
}
