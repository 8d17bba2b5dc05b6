//! Run configuration loaded from TOML.
//!
//! Every key is optional; absent keys take their defaults and unknown keys
//! are rejected. Errors name the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{build_game, Game, GameKind};
use crate::mcts::{DirichletNoise, SearchConfig};
use crate::net::NetworkConfig;
use crate::training::{
    AblationMode, CollectSettings, OmTargetEncoding, TemperatureSchedule, UpdateSettings,
    ValueTargetVariant,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub game: GameBlock,
    pub mode: ModeBlock,
    pub search: SearchBlock,
    pub network: NetworkBlock,
    pub training: TrainingBlock,
    pub opponent: OpponentBlock,
    pub evaluation: EvaluationBlock,
    pub parallelism: ParallelismBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameBlock {
    pub kind: GameKind,
    pub height: usize,
    pub width: usize,
    pub connect: usize,
}

impl Default for GameBlock {
    fn default() -> Self {
        Self {
            kind: GameKind::Connect,
            height: 6,
            width: 7,
            connect: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeBlock {
    pub algorithm: Algorithm,
    pub om_targets: OmTargetEncoding,
}

/// Newtype so the mode defaults to the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Algorithm(pub AblationMode);

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm(AblationMode::Brexit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBlock {
    pub budget: usize,
    pub c_puct: f64,
    /// Random-playout leaf values instead of the critic.
    pub rollout: bool,
    pub dirichlet: DirichletBlock,
    pub temperature: TemperatureSchedule,
}

impl Default for SearchBlock {
    fn default() -> Self {
        Self {
            budget: 50,
            c_puct: 2.0,
            rollout: false,
            dirichlet: DirichletBlock::default(),
            temperature: TemperatureSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirichletBlock {
    pub enabled: bool,
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for DirichletBlock {
    fn default() -> Self {
        let d = DirichletNoise::default();
        Self {
            enabled: false,
            alpha: d.alpha,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkBlock {
    pub channels: Vec<usize>,
    pub residual: Vec<[usize; 2]>,
    pub om_hidden: Vec<usize>,
    pub ac_hidden: Vec<usize>,
}

impl Default for NetworkBlock {
    fn default() -> Self {
        let n = NetworkConfig::new(6, 7, 7, 1);
        Self {
            channels: n.channels,
            residual: n.residual,
            om_hidden: n.om_hidden,
            ac_hidden: n.ac_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBlock {
    pub generations: u64,
    pub episodes_per_generation: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub grad_norm_order: f64,
    pub buffer_capacity: usize,
    pub value_target: ValueTargetVariant,
    pub discount: f64,
    /// Write the replay buffer as a dataset file after every generation.
    pub export_dataset: bool,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        Self {
            generations: 100,
            episodes_per_generation: 800,
            epochs: 5,
            batch_size: 512,
            learning_rate: 1.5e-3,
            grad_clip: 1.0,
            grad_norm_order: 2.0,
            buffer_capacity: 40_000,
            value_target: ValueTargetVariant::ChosenQ,
            discount: 1.0,
            export_dataset: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpponentKind {
    Random,
    Heuristic,
    Mcts,
    Checkpoint,
    SelfPlay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpponentBlock {
    pub kind: OpponentKind,
    /// Search budget of an `mcts` opponent.
    pub budget: usize,
    /// Softmax temperature of a `heuristic` opponent.
    pub temperature: f64,
    /// Checkpoint file of a `checkpoint` opponent.
    pub path: Option<PathBuf>,
    /// Whether a `checkpoint` opponent plays its argmax action.
    pub greedy: bool,
}

impl Default for OpponentBlock {
    fn default() -> Self {
        Self {
            kind: OpponentKind::Random,
            budget: 50,
            temperature: 0.3,
            path: None,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationBlock {
    /// Evaluate every `interval` generations; 0 disables.
    pub interval: u64,
    pub games: usize,
    /// Whether the evaluated apprentice plays its argmax action.
    pub greedy: bool,
    /// Evaluation opponent; defaults to the training opponent, or uniform
    /// random under self-play.
    pub opponent: Option<OpponentBlock>,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        Self {
            interval: 1,
            games: 100,
            greedy: true,
            opponent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelismBlock {
    pub workers: usize,
    pub batch_limit: usize,
    pub batch_timeout_ms: f64,
}

impl Default for ParallelismBlock {
    fn default() -> Self {
        Self {
            workers: 1,
            batch_limit: 32,
            batch_timeout_ms: 2.0,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(
                if path == "." { "<root>" } else { &path },
                e.into_inner().message().trim().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { path: key, message } => Error::Config {
                path: format!("{}: {key}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.build_game()
            .map_err(|e| invalid("game", e.to_string()))?;
        self.network_config()
            .validate()
            .map_err(|e| invalid("network", e.to_string()))?;
        let checks: [(&str, bool, &str); 14] = [
            (
                "search.budget",
                self.search.budget >= 1,
                "must be at least 1",
            ),
            (
                "search.c_puct",
                self.search.c_puct >= 0.0,
                "must be non-negative",
            ),
            (
                "search.dirichlet.alpha",
                self.search.dirichlet.alpha > 0.0,
                "must be positive",
            ),
            (
                "search.dirichlet.epsilon",
                (0.0..=1.0).contains(&self.search.dirichlet.epsilon),
                "must lie in [0, 1]",
            ),
            (
                "search.temperature.early",
                self.search.temperature.early > 0.0,
                "must be positive",
            ),
            (
                "search.temperature.late",
                self.search.temperature.late > 0.0,
                "must be positive",
            ),
            (
                "training.batch_size",
                self.training.batch_size >= 1,
                "must be at least 1",
            ),
            (
                "training.learning_rate",
                self.training.learning_rate > 0.0,
                "must be positive",
            ),
            (
                "training.grad_clip",
                self.training.grad_clip > 0.0,
                "must be positive",
            ),
            (
                "training.grad_norm_order",
                self.training.grad_norm_order >= 1.0,
                "must be at least 1",
            ),
            (
                "training.buffer_capacity",
                self.training.buffer_capacity >= 2,
                "must be at least 2",
            ),
            (
                "training.discount",
                (0.0..=1.0).contains(&self.training.discount) && self.training.discount > 0.0,
                "must lie in (0, 1]",
            ),
            (
                "parallelism.workers",
                self.parallelism.workers >= 1,
                "must be at least 1",
            ),
            (
                "parallelism.batch_limit",
                self.parallelism.batch_limit >= 1 && self.parallelism.batch_timeout_ms >= 0.0,
                "must be at least 1",
            ),
        ];
        for (path, ok, msg) in checks {
            if !ok {
                return Err(invalid(path, msg));
            }
        }
        for (path, o) in std::iter::once(("opponent", &self.opponent)).chain(
            self.evaluation
                .opponent
                .as_ref()
                .map(|o| ("evaluation.opponent", o)),
        ) {
            if o.kind == OpponentKind::Checkpoint && o.path.is_none() {
                return Err(invalid(
                    &format!("{path}.path"),
                    "required for a checkpoint opponent",
                ));
            }
            if o.kind == OpponentKind::Mcts && o.budget == 0 {
                return Err(invalid(&format!("{path}.budget"), "must be at least 1"));
            }
            if o.kind == OpponentKind::Heuristic && o.temperature <= 0.0 {
                return Err(invalid(&format!("{path}.temperature"), "must be positive"));
            }
        }
        if self.evaluation.opponent.as_ref().map(|o| o.kind) == Some(OpponentKind::SelfPlay) {
            return Err(invalid(
                "evaluation.opponent.kind",
                "self-play cannot be an evaluation opponent",
            ));
        }
        Ok(())
    }

    /// SHA-256 over every setting except the parallelism block and the
    /// generation count, truncated to 64 bits. Runs that differ only in
    /// length share a hash, so a finished run can be extended by resuming.
    pub fn hash(&self) -> u64 {
        let mut canonical = serde_json::to_value(self).expect("config serializes");
        let root = canonical.as_object_mut().expect("object");
        root.remove("parallelism");
        if let Some(training) = root.get_mut("training").and_then(|t| t.as_object_mut()) {
            training.remove("generations");
        }
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn build_game(&self) -> Result<Box<dyn Game>> {
        build_game(
            self.game.kind,
            self.game.height,
            self.game.width,
            self.game.connect,
        )
    }

    pub fn num_actions(&self) -> usize {
        match self.game.kind {
            GameKind::Connect => self.game.width,
            GameKind::Tictactoe => 9,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        let (h, w) = match self.game.kind {
            GameKind::Connect => (self.game.height, self.game.width),
            GameKind::Tictactoe => (3, 3),
        };
        NetworkConfig {
            channels: self.network.channels.clone(),
            residual: self.network.residual.clone(),
            om_hidden: self.network.om_hidden.clone(),
            ac_hidden: self.network.ac_hidden.clone(),
            ..NetworkConfig::new(
                h,
                w,
                self.num_actions(),
                self.mode.algorithm.0.num_opponent_heads(),
            )
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            budget: self.search.budget,
            c_puct: self.search.c_puct,
            dirichlet: self.search.dirichlet.enabled.then_some(DirichletNoise {
                alpha: self.search.dirichlet.alpha,
                epsilon: self.search.dirichlet.epsilon,
            }),
        }
    }

    pub fn collect_settings(&self) -> CollectSettings {
        CollectSettings {
            mode: self.mode.algorithm.0,
            om_targets: self.mode.om_targets,
            search: self.search_config(),
            temperature: self.search.temperature,
            value_target: self.training.value_target,
            discount: self.training.discount,
            rollout_values: self.search.rollout,
        }
    }

    pub fn update_settings(&self) -> UpdateSettings {
        UpdateSettings {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            grad_clip: self.training.grad_clip,
            grad_norm_order: self.training.grad_norm_order,
        }
    }
}
