//! Head-to-head evaluation: matches with randomized seats, winrate
//! matrices, and the rollout-MCTS budget needed to reach a winrate against
//! a policy.
//!
//! A draw counts as half a win for each side.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::agents::{MctsAgent, Policy};
use crate::error::{Error, Result};
use crate::game::{Game, Player};
use crate::seeding::{label, stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MatchRecord {
    pub wins_a: usize,
    pub wins_b: usize,
    pub draws: usize,
    /// Games lost by `a` (resp. `b`) for playing an illegal action.
    pub forfeits_a: usize,
    pub forfeits_b: usize,
}

impl MatchRecord {
    pub fn games(&self) -> usize {
        self.wins_a + self.wins_b + self.draws
    }

    /// Winrate of `a` with draws as half wins; 0.5 for an empty record.
    pub fn winrate_a(&self) -> f64 {
        match self.games() {
            0 => 0.5,
            n => (self.wins_a as f64 + 0.5 * self.draws as f64) / n as f64,
        }
    }

    fn add(mut self, o: MatchRecord) -> MatchRecord {
        self.wins_a += o.wins_a;
        self.wins_b += o.wins_b;
        self.draws += o.draws;
        self.forfeits_a += o.forfeits_a;
        self.forfeits_b += o.forfeits_b;
        self
    }
}

/// One game with `a` in seat `a_seat`, returning the record of that game.
pub fn play_game(
    game: &dyn Game,
    a: &dyn Policy,
    b: &dyn Policy,
    a_seat: Player,
    rng: &mut dyn RngCore,
) -> Result<MatchRecord> {
    let mut state = game.initial_state();
    while !state.is_terminal() {
        let a_moves = state.to_move() == a_seat;
        let mover = if a_moves { a } else { b };
        let action = mover.act(game, &state, rng)?;
        if !game.is_legal(&state, action) {
            return Ok(if a_moves {
                MatchRecord {
                    wins_b: 1,
                    forfeits_a: 1,
                    ..Default::default()
                }
            } else {
                MatchRecord {
                    wins_a: 1,
                    forfeits_b: 1,
                    ..Default::default()
                }
            });
        }
        state = game.play(&state, action);
    }
    Ok(match state.outcome().and_then(|o| o.winner()) {
        None => MatchRecord {
            draws: 1,
            ..Default::default()
        },
        Some(w) if w == a_seat => MatchRecord {
            wins_a: 1,
            ..Default::default()
        },
        Some(_) => MatchRecord {
            wins_b: 1,
            ..Default::default()
        },
    })
}

/// `n_games` games with seats drawn per game; game `i` uses its own RNG
/// stream derived from `seed`, so results do not depend on scheduling.
pub fn play_matches(
    game: &dyn Game,
    a: &dyn Policy,
    b: &dyn Policy,
    n_games: usize,
    seed: u64,
) -> Result<MatchRecord> {
    let records: Vec<MatchRecord> = (0..n_games)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[label::MATCH, i as u64]);
            let seat = (rng.next_u32() & 1) as Player;
            play_game(game, a, b, seat, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(records
        .into_iter()
        .fold(MatchRecord::default(), MatchRecord::add))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinrateMatrix {
    pub labels: Vec<String>,
    /// `entries[i][j]`: winrate of agent `i` against agent `j`.
    pub entries: Vec<Vec<f64>>,
    pub games_per_cell: usize,
}

impl WinrateMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.entries) {
            out.push_str(l);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Every ordered pair of agents. Off-diagonal cells are computed once and
/// mirrored, so `entries[i][j] + entries[j][i] = 1` exactly; diagonal cells
/// are self-play matches when `self_play` is set and 0.5 otherwise.
pub fn winrate_matrix(
    game: &dyn Game,
    agents: &[&dyn Policy],
    labels: Vec<String>,
    games_per_cell: usize,
    self_play: bool,
    seed: u64,
) -> Result<WinrateMatrix> {
    if labels.len() != agents.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} agents",
            labels.len(),
            agents.len()
        )));
    }
    let k = agents.len();
    let mut entries = vec![vec![0.5; k]; k];
    for i in 0..k {
        for j in i..k {
            if i == j && !self_play {
                continue;
            }
            let cell_seed = crate::seeding::derive(seed, &[i as u64, j as u64]);
            let w =
                play_matches(game, agents[i], agents[j], games_per_cell, cell_seed)?.winrate_a();
            entries[i][j] = w;
            if i != j {
                entries[j][i] = 1.0 - w;
            }
        }
    }
    Ok(WinrateMatrix {
        labels,
        entries,
        games_per_cell,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrengthSweep {
    /// `(budget, winrate of rollout MCTS against the target)`.
    pub curve: Vec<(usize, f64)>,
    /// First budget whose winrate reaches the goal.
    pub reached: Option<usize>,
}

impl StrengthSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,winrate\n");
        for (b, w) in &self.curve {
            out.push_str(&format!("{b},{w:.6}\n"));
        }
        out
    }
}

/// Plays rollout MCTS at each budget of an ascending grid against `target`.
/// Every budget is played, so the curve is complete even after the goal is
/// met.
pub fn mcts_equivalent_strength(
    game: &dyn Game,
    target: &dyn Policy,
    winrate_goal: f64,
    budget_grid: &[usize],
    games_per_budget: usize,
    seed: u64,
) -> Result<StrengthSweep> {
    if budget_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "budget grid must be strictly ascending".into(),
        ));
    }
    let mut curve = Vec::with_capacity(budget_grid.len());
    for &budget in budget_grid {
        let agent = MctsAgent::new(budget);
        let sweep_seed = crate::seeding::derive(seed, &[budget as u64]);
        let w = play_matches(game, &agent, target, games_per_budget, sweep_seed)?.winrate_a();
        curve.push((budget, w));
    }
    let reached = curve
        .iter()
        .find(|(_, w)| *w >= winrate_goal)
        .map(|(b, _)| *b);
    Ok(StrengthSweep { curve, reached })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Heuristic, UniformRandom};
    use crate::game::ConnectFour;

    #[test]
    fn empty_match_is_zero() {
        let game = ConnectFour::small();
        let r = play_matches(&game, &UniformRandom, &UniformRandom, 0, 1).unwrap();
        assert_eq!(r, MatchRecord::default());
    }

    #[test]
    fn matrix_is_antisymmetric() {
        let game = ConnectFour::small();
        let h = Heuristic::default();
        let agents: [&dyn Policy; 2] = [&UniformRandom, &h];
        let m = winrate_matrix(
            &game,
            &agents,
            vec!["random".into(), "heuristic".into()],
            40,
            true,
            3,
        )
        .unwrap();
        assert_eq!(m.entries[0][1] + m.entries[1][0], 1.0);
        assert!(m.entries[1][0] > 0.7, "{:?}", m.entries);
        assert!(m.to_csv().starts_with("row,random,heuristic\n"));
    }

    #[test]
    fn vacuous_goal_takes_first_budget() {
        let game = ConnectFour::small();
        let s = mcts_equivalent_strength(&game, &UniformRandom, 0.0, &[2, 4], 4, 0).unwrap();
        assert_eq!(s.reached, Some(2));
        assert_eq!(s.curve.len(), 2);
        let s = mcts_equivalent_strength(&game, &UniformRandom, 1.01, &[2], 4, 0).unwrap();
        assert_eq!(s.reached, None);
        assert!(mcts_equivalent_strength(&game, &UniformRandom, 0.5, &[4, 2], 4, 0).is_err());
    }
}
