//! Policies that pick moves: scripted opponents, search agents, the
//! apprentice network, and an exact solver for small games.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::game::{Game, GameState};
use crate::mcts::{search, PriorSource, RandomRollout, SearchConfig};
use crate::net::Network;

/// A (possibly stochastic) policy over a game's full action space.
pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    /// Action distribution at a non-terminal `state`; zero on illegal actions.
    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>>;

    fn act(&self, game: &dyn Game, state: &GameState, rng: &mut dyn RngCore) -> Result<usize> {
        let dist = self.distribution(game, state, rng)?;
        Ok(sample_index(&dist, rng))
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        (**self).distribution(game, state, rng)
    }

    fn act(&self, game: &dyn Game, state: &GameState, rng: &mut dyn RngCore) -> Result<usize> {
        (**self).act(game, state, rng)
    }
}

/// Index drawn from an unnormalized non-negative weight vector. Falls back
/// to the last positive entry when rounding leaves mass unclaimed.
pub fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn uniform_over(n: usize, actions: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &a in actions {
        v[a] = 1.0 / actions.len() as f64;
    }
    v
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandom;

impl Policy for UniformRandom {
    fn name(&self) -> String {
        "random".into()
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        Ok(uniform_over(
            game.num_actions(),
            &game.legal_actions(state)?,
        ))
    }
}

/// One-ply lookahead: take a win, else block an immediate loss, else a
/// softmax preference for central cells.
#[derive(Debug, Clone, Copy)]
pub struct Heuristic {
    pub temperature: f64,
}

impl Default for Heuristic {
    fn default() -> Self {
        Self { temperature: 0.3 }
    }
}

fn placed_cell(before: &GameState, after: &GameState) -> (usize, usize) {
    let w = before.width();
    let i = before
        .cells()
        .iter()
        .zip(after.cells())
        .position(|(a, b)| a != b)
        .expect("an action places one chip");
    (i / w, i % w)
}

impl Policy for Heuristic {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let actions = game.legal_actions(state)?;
        let n = game.num_actions();
        let me = state.to_move();
        let wins: Vec<usize> = actions
            .iter()
            .copied()
            .filter(|&a| game.play(state, a).outcome().and_then(|o| o.winner()) == Some(me))
            .collect();
        if !wins.is_empty() {
            return Ok(uniform_over(n, &wins));
        }
        let blocks = opponent_wins(game, state, &actions);
        if !blocks.is_empty() {
            return Ok(uniform_over(n, &blocks));
        }
        let (rc, cc) = (
            (state.height() as f64 - 1.0) / 2.0,
            (state.width() as f64 - 1.0) / 2.0,
        );
        let scores: Vec<f64> = actions
            .iter()
            .map(|&a| {
                let (r, c) = placed_cell(state, &game.play(state, a));
                -((r as f64 - rc).abs() + (c as f64 - cc).abs()) / self.temperature
            })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mut dist = vec![0.0; n];
        for (&a, e) in actions.iter().zip(exps) {
            dist[a] = e / sum;
        }
        Ok(dist)
    }
}

/// Actions that occupy a cell where the opponent would complete a line.
fn opponent_wins(game: &dyn Game, state: &GameState, actions: &[usize]) -> Vec<usize> {
    let them = 1 - state.to_move();
    actions
        .iter()
        .copied()
        .filter(|&a| {
            let (r, c) = placed_cell(state, &game.play(state, a));
            state.completes_line(r, c, them)
        })
        .collect()
}

/// Rollout MCTS with a fixed budget; plays the most-visited action.
#[derive(Debug, Clone)]
pub struct MctsAgent {
    pub config: SearchConfig,
}

impl MctsAgent {
    pub fn new(budget: usize) -> Self {
        Self {
            config: SearchConfig {
                budget,
                ..Default::default()
            },
        }
    }
}

impl Policy for MctsAgent {
    fn name(&self) -> String {
        format!("mcts-{}", self.config.budget)
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let r = search(
            game,
            state,
            &RandomRollout,
            &PriorSource::Apprentice,
            &self.config,
            rng,
        )?;
        Ok(one_hot(game.num_actions(), r.action))
    }
}

/// The apprentice actor on its own, sampled or greedy.
#[derive(Debug, Clone)]
pub struct ApprenticeAgent {
    pub network: Arc<Network>,
    pub greedy: bool,
    pub label: String,
}

impl ApprenticeAgent {
    pub fn new(network: Arc<Network>, greedy: bool) -> Self {
        Self {
            network,
            greedy,
            label: "apprentice".into(),
        }
    }
}

impl Policy for ApprenticeAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        if state.is_terminal() {
            return Err(Error::TerminalState);
        }
        let out = self.network.forward(
            &game.encode(state, state.to_move()),
            &game.legal_mask(state),
        )?;
        if self.greedy {
            Ok(one_hot(out.actor.len(), argmax(&out.actor)))
        } else {
            Ok(out.actor)
        }
    }
}

/// Apprentice-guided search with apprentice priors at every node.
#[derive(Debug, Clone)]
pub struct ExpertAgent {
    pub network: Arc<Network>,
    pub config: SearchConfig,
}

impl Policy for ExpertAgent {
    fn name(&self) -> String {
        format!("expert-{}", self.config.budget)
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let r = search(
            game,
            state,
            &*self.network,
            &PriorSource::Apprentice,
            &self.config,
            rng,
        )?;
        Ok(one_hot(game.num_actions(), r.action))
    }
}

/// Exact negamax with memoisation; practical for tic-tac-toe and small
/// connect boards. Plays uniformly among value-optimal actions.
#[derive(Debug, Default)]
pub struct Solver {
    memo: Mutex<HashMap<GameState, i8>>,
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Game-theoretic value for the player to move: +1, 0 or -1.
    pub fn value(&self, game: &dyn Game, state: &GameState) -> i8 {
        if let Some(o) = state.outcome() {
            return o.reward(state.to_move()) as i8;
        }
        if let Some(&v) = self.memo.lock().unwrap().get(state) {
            return v;
        }
        let mut best = -1;
        for a in game.legal_actions(state).expect("non-terminal") {
            best = best.max(-self.value(game, &game.play(state, a)));
            if best == 1 {
                break;
            }
        }
        self.memo.lock().unwrap().insert(state.clone(), best);
        best
    }

    pub fn optimal_actions(&self, game: &dyn Game, state: &GameState) -> Result<Vec<usize>> {
        let target = self.value(game, state);
        Ok(game
            .legal_actions(state)?
            .into_iter()
            .filter(|&a| -self.value(game, &game.play(state, a)) == target)
            .collect())
    }
}

impl Policy for Solver {
    fn name(&self) -> String {
        "solver".into()
    }

    fn distribution(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        Ok(uniform_over(
            game.num_actions(),
            &self.optimal_actions(game, state)?,
        ))
    }
}
