//! Data collection, replay, and apprentice updates.
//!
//! One agent seat is searched with MCTS; the other seat is a fixed or
//! sampled opponent policy. Every sample records the searched root policy,
//! the opponent states and targets observed until the agent's next turn,
//! and a value target written once the episode ends.

mod buffer;
pub mod dataset;
mod population;
pub mod run;
mod update;

pub use buffer::ReplayBuffer;
pub use population::SelfPlayPopulation;
pub use update::{mean_losses, update_apprentice, UpdateSettings};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agents::{sample_index, Policy};
use crate::error::{Error, Result};
use crate::game::{Game, GameState, Player};
use crate::mcts::{
    search, Evaluation, Evaluator, PriorSource, RandomRollout, SearchConfig, SearchResult,
};
use crate::net::{LossExample, Objective, OmExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Apprentice priors everywhere, no opponent models.
    #[serde(rename = "exit")]
    Exit,
    /// Opponent models trained for feature shaping only.
    #[serde(rename = "exit-omfs")]
    ExitOmfs,
    /// Learned opponent models as opponent-node priors.
    #[serde(rename = "brexit-oms")]
    BrexitOms,
    /// Ground-truth opponent policy as opponent-node priors.
    #[serde(rename = "brexit")]
    Brexit,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Exit,
        AblationMode::ExitOmfs,
        AblationMode::BrexitOms,
        AblationMode::Brexit,
    ];

    pub fn trains_opponent_models(self) -> bool {
        !matches!(self, AblationMode::Exit)
    }

    pub fn num_opponent_heads(self) -> usize {
        usize::from(self.trains_opponent_models())
    }

    pub fn objective(self) -> Objective {
        if self.trains_opponent_models() {
            Objective::Weighted
        } else {
            Objective::ActorCritic
        }
    }

    pub fn prior_source<'a>(self, agent: Player, opponent: &'a dyn Policy) -> PriorSource<'a> {
        match self {
            AblationMode::Exit | AblationMode::ExitOmfs => PriorSource::Apprentice,
            AblationMode::BrexitOms => PriorSource::LearnedModels { agent },
            AblationMode::Brexit => PriorSource::GroundTruth { agent, opponent },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Exit => "exit",
            AblationMode::ExitOmfs => "exit-omfs",
            AblationMode::BrexitOms => "brexit-oms",
            AblationMode::Brexit => "brexit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmTargetEncoding {
    #[default]
    FullDistribution,
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTargetVariant {
    RootValue,
    GreedyQ,
    #[default]
    ChosenQ,
    None,
}

/// Exploratory temperature for the first `plies` moves of a game, then a
/// near-greedy one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureSchedule {
    pub plies: usize,
    pub early: f64,
    pub late: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            plies: 10,
            early: 1.0,
            late: 0.01,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, move_count: usize) -> f64 {
        if move_count < self.plies {
            self.early
        } else {
            self.late
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentRecord {
    pub state: GameState,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub state: GameState,
    pub mcts_policy: Vec<f64>,
    /// Present exactly when the mode trains opponent models.
    pub opponent_records: Option<Vec<OpponentRecord>>,
    pub value_target: f64,
}

impl TrainingSample {
    pub fn to_loss_example(&self, game: &dyn Game) -> LossExample {
        LossExample {
            input: game.encode(&self.state, self.state.to_move()),
            mask: game.legal_mask(&self.state),
            policy_target: self.mcts_policy.clone(),
            value_target: self.value_target,
            opponents: self.opponent_records.as_ref().map(|records| {
                records
                    .iter()
                    .map(|r| OmExample {
                        head: 0,
                        input: game.encode(&r.state, r.state.to_move()),
                        mask: game.legal_mask(&r.state),
                        target: r.target.clone(),
                    })
                    .collect()
            }),
        }
    }
}

/// Root statistics kept per agent move for value-target blending.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSummary {
    pub policy: Vec<f64>,
    pub q_values: Vec<f64>,
    pub visits: Vec<f64>,
}

impl RootSummary {
    pub fn from_search(result: &SearchResult, policy: Vec<f64>) -> Self {
        Self {
            policy,
            q_values: result.q_values(),
            visits: result.visit_counts(),
        }
    }
}

/// Mixes the episode return with a search value estimate.
pub fn blend_value_target(
    root: &RootSummary,
    episode_return: f64,
    variant: ValueTargetVariant,
) -> f64 {
    let estimate = match variant {
        ValueTargetVariant::None => return episode_return.clamp(-1.0, 1.0),
        ValueTargetVariant::RootValue => root
            .policy
            .iter()
            .zip(&root.q_values)
            .map(|(p, q)| p * q)
            .sum(),
        ValueTargetVariant::GreedyQ => root
            .q_values
            .iter()
            .zip(&root.visits)
            .filter(|(_, &n)| n > 0.0)
            .map(|(&q, _)| q)
            .fold(f64::NEG_INFINITY, f64::max),
        ValueTargetVariant::ChosenQ => root.q_values[crate::agents::argmax(&root.visits)],
    };
    (0.5 * (estimate + episode_return)).clamp(-1.0, 1.0)
}

/// The sample and its left-right mirror image. The value target is shared.
pub fn augment_symmetry(
    game: &dyn Game,
    sample: &TrainingSample,
) -> Result<(TrainingSample, TrainingSample)> {
    let twin = TrainingSample {
        state: game.mirror_state(&sample.state),
        mcts_policy: game.mirror_distribution(&sample.mcts_policy)?,
        opponent_records: match &sample.opponent_records {
            None => None,
            Some(records) => Some(
                records
                    .iter()
                    .map(|r| {
                        Ok(OpponentRecord {
                            state: game.mirror_state(&r.state),
                            target: game.mirror_distribution(&r.target)?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
        },
        value_target: sample.value_target,
    };
    Ok((sample.clone(), twin))
}

/// Apprentice priors with values replaced by a random playout.
pub struct RolloutValues<'a>(pub &'a dyn Evaluator);

impl Evaluator for RolloutValues<'_> {
    fn evaluate(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Evaluation> {
        let mut e = self.0.evaluate(game, state, rng)?;
        e.value = RandomRollout.evaluate(game, state, rng)?.value;
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSettings {
    pub mode: AblationMode,
    pub om_targets: OmTargetEncoding,
    pub search: SearchConfig,
    pub temperature: TemperatureSchedule,
    pub value_target: ValueTargetVariant,
    pub discount: f64,
    pub rollout_values: bool,
}

impl Default for CollectSettings {
    fn default() -> Self {
        Self {
            mode: AblationMode::Brexit,
            om_targets: OmTargetEncoding::FullDistribution,
            search: SearchConfig::default(),
            temperature: TemperatureSchedule::default(),
            value_target: ValueTargetVariant::ChosenQ,
            discount: 1.0,
            rollout_values: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub samples: Vec<TrainingSample>,
    pub agent_seat: Player,
    /// Terminal reward for the agent: +1, 0 or -1.
    pub agent_reward: f64,
    pub plies: usize,
}

/// Plays one episode of the searched agent against `opponent` and returns
/// the agent's samples with value targets filled in.
pub fn collect_episode(
    game: &dyn Game,
    apprentice: &dyn Evaluator,
    opponent: &dyn Policy,
    settings: &CollectSettings,
    rng: &mut dyn RngCore,
) -> Result<Episode> {
    let agent: Player = (rng.next_u32() & 1) as usize;
    let rollout;
    let evaluator: &dyn Evaluator = if settings.rollout_values {
        rollout = RolloutValues(apprentice);
        &rollout
    } else {
        apprentice
    };
    let source = settings.mode.prior_source(agent, opponent);
    let with_records = settings.mode.trains_opponent_models();

    let mut state = game.initial_state();
    let mut pending: Vec<(TrainingSample, RootSummary, usize)> = Vec::new();
    while !state.is_terminal() {
        let ply = state.move_count();
        if state.to_move() == agent {
            let result = search(game, &state, evaluator, &source, &settings.search, rng)?;
            let policy = result.policy(settings.temperature.at(ply))?;
            let action = sample_index(&policy, rng);
            pending.push((
                TrainingSample {
                    state: state.clone(),
                    mcts_policy: policy.clone(),
                    opponent_records: with_records.then(Vec::new),
                    value_target: 0.0,
                },
                RootSummary::from_search(&result, policy),
                ply,
            ));
            state = game.play(&state, action);
        } else {
            let seat = state.to_move();
            let dist = opponent.distribution(game, &state, rng)?;
            let action = sample_index(&dist, rng);
            if !game.is_legal(&state, action) {
                return Err(Error::OpponentIllegalAction { seat, action });
            }
            if let Some((sample, _, _)) = pending.last_mut() {
                if let Some(records) = sample.opponent_records.as_mut() {
                    let target = match settings.om_targets {
                        OmTargetEncoding::FullDistribution => {
                            let sum: f64 = dist.iter().sum();
                            dist.iter().map(|p| p / sum).collect()
                        }
                        OmTargetEncoding::OneHot => {
                            let mut t = vec![0.0; dist.len()];
                            t[action] = 1.0;
                            t
                        }
                    };
                    records.push(OpponentRecord {
                        state: state.clone(),
                        target,
                    });
                }
            }
            state = game.play(&state, action);
        }
    }

    let plies = state.move_count();
    let reward = state.outcome().map_or(0.0, |o| o.reward(agent));
    let samples = pending
        .into_iter()
        .map(|(mut sample, root, ply)| {
            let steps = plies - ply - 1;
            let g = reward * settings.discount.powi(steps as i32);
            sample.value_target = blend_value_target(&root, g, settings.value_target);
            sample
        })
        .collect();
    Ok(Episode {
        samples,
        agent_seat: agent,
        agent_reward: reward,
        plies,
    })
}
