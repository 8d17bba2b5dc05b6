//! Rollout search against exhaustive tic-tac-toe minimax.

mod common;

use brexit_core::agents::UniformRandom;
use brexit_core::game::{Game, TicTacToe};
use brexit_core::mcts::{search, PriorSource, RandomRollout, SearchConfig};
use common::{minimax_optimal, random_positions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rollout_search_picks_minimax_moves() {
    let game = TicTacToe;
    let positions = random_positions(&game, 40, 7);
    let cfg = SearchConfig {
        budget: 10_000,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut hits = 0;
    for s in &positions {
        let r = search(
            &game,
            s,
            &RandomRollout,
            &PriorSource::Apprentice,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.root.total_visits(), 10_000);
        if minimax_optimal(&game, s).contains(&r.action) {
            hits += 1;
        }
    }
    assert!(hits >= 38, "{hits}/40 optimal");
}

#[test]
fn prior_source_does_not_change_asymptotics() {
    let game = TicTacToe;
    let positions = random_positions(&game, 20, 8);
    let cfg = SearchConfig {
        budget: 10_000,
        ..Default::default()
    };
    let uniform = UniformRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut hits = 0;
    for s in &positions {
        let src = PriorSource::GroundTruth {
            agent: s.to_move(),
            opponent: &uniform,
        };
        let r = search(&game, s, &RandomRollout, &src, &cfg, &mut rng).unwrap();
        if minimax_optimal(&game, s).contains(&r.action) {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20 optimal");
    assert!(positions
        .iter()
        .all(|s| !game.legal_actions(s).unwrap().is_empty()));
}
