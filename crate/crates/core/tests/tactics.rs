//! Positions with an immediate win, found by random play. A move counts as
//! correct when exhaustive search confirms it forces a win within three
//! plies.

use std::sync::Arc;

use brexit_core::agents::{ExpertAgent, MctsAgent, Policy};
use brexit_core::game::{ConnectFour, Game, GameState};
use brexit_core::mcts::SearchConfig;
use brexit_core::net::{Network, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn winning_moves(game: &dyn Game, s: &GameState) -> Vec<usize> {
    game.legal_actions(s)
        .unwrap()
        .into_iter()
        .filter(|&a| {
            let step = game.apply_action(s, a).unwrap();
            step.winner == Some(s.to_move())
        })
        .collect()
}

/// Whether the player to move at `s` can force a win within `plies` plies.
fn forces_win(game: &dyn Game, s: &GameState, plies: usize) -> bool {
    plies > 0
        && game
            .legal_actions(s)
            .unwrap()
            .into_iter()
            .any(|a| move_forces_win(game, s, a, plies))
}

fn move_forces_win(game: &dyn Game, s: &GameState, a: usize, plies: usize) -> bool {
    let step = game.apply_action(s, a).unwrap();
    if step.terminal {
        return step.winner == Some(s.to_move());
    }
    let next = step.next_state;
    plies >= 3
        && game.legal_actions(&next).unwrap().into_iter().all(|b| {
            let reply = game.apply_action(&next, b).unwrap();
            !reply.terminal && forces_win(game, &reply.next_state, plies - 2)
        })
}

fn tactical_positions(game: &dyn Game, count: usize, seed: u64) -> Vec<GameState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let mut s = game.initial_state();
        while !s.is_terminal() {
            if !winning_moves(game, &s).is_empty() {
                if !out.contains(&s) {
                    out.push(s);
                }
                break;
            }
            let actions = game.legal_actions(&s).unwrap();
            s = game.play(&s, actions[rng.random_range(0..actions.len())]);
        }
    }
    out
}

fn plays_every_win(game: &dyn Game, agent: &dyn Policy, positions: &[GameState]) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in positions {
        let a = agent.act(game, s, &mut rng).unwrap();
        assert!(
            move_forces_win(game, s, a, 3),
            "{} missed the win in\n{}",
            agent.name(),
            s.render()
        );
    }
}

#[test]
fn hand_built_positions_are_read_correctly() {
    let game = ConnectFour::standard();
    let s = GameState::from_rows(
        6,
        7,
        4,
        ".......
         .......
         .......
         o......
         oo.....
         xxx....",
    )
    .unwrap();
    assert_eq!(winning_moves(&game, &s), vec![3]);
    let agent = MctsAgent::new(200);
    plays_every_win(&game, &agent, &[s]);
}

#[test]
fn searches_with_budget_200_take_immediate_wins() {
    let game = ConnectFour::standard();
    let positions = tactical_positions(&game, 20, 42);
    assert_eq!(positions.len(), 20);
    let net = Network::new(NetworkConfig::new(6, 7, 7, 0), 1).unwrap();
    let expert = ExpertAgent {
        network: Arc::new(net),
        config: SearchConfig {
            budget: 200,
            ..Default::default()
        },
    };
    plays_every_win(&game, &expert, &positions);
    plays_every_win(&game, &MctsAgent::new(200), &positions);
}
