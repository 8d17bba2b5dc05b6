//! Oracles shared by the integration tests. Written independently of the
//! library's own solver.

#![allow(dead_code)]

use std::collections::HashMap;

use brexit_core::game::{Game, GameState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain minimax value for the player to move, memoised on the compact
/// string form.
pub fn minimax(game: &dyn Game, s: &GameState, memo: &mut HashMap<String, i32>) -> i32 {
    if let Some(o) = s.outcome() {
        return match o.winner() {
            None => 0,
            Some(w) if w == s.to_move() => 1,
            Some(_) => -1,
        };
    }
    let key = s.to_string();
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let mut best = i32::MIN;
    for a in game.legal_actions(s).unwrap() {
        let next = game.apply_action(s, a).unwrap().next_state;
        best = best.max(-minimax(game, &next, memo));
    }
    memo.insert(key, best);
    best
}

pub fn minimax_optimal(game: &dyn Game, s: &GameState) -> Vec<usize> {
    let mut memo = HashMap::new();
    let v = minimax(game, s, &mut memo);
    game.legal_actions(s)
        .unwrap()
        .into_iter()
        .filter(|&a| {
            let next = game.apply_action(s, a).unwrap().next_state;
            -minimax(game, &next, &mut memo) == v
        })
        .collect()
}

/// Distinct non-terminal positions reached by uniformly random play.
pub fn random_positions(game: &dyn Game, count: usize, seed: u64) -> Vec<GameState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<GameState> = Vec::new();
    while out.len() < count {
        let mut s = game.initial_state();
        let plies = rng.random_range(0..game.num_actions());
        for _ in 0..plies {
            if s.is_terminal() {
                break;
            }
            let actions = game.legal_actions(&s).unwrap();
            s = game.play(&s, actions[rng.random_range(0..actions.len())]);
        }
        if !s.is_terminal() && !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Random playout states, including terminal ones.
pub fn playout_states(game: &dyn Game, count: usize, seed: u64) -> Vec<GameState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut s = game.initial_state();
        out.push(s.clone());
        while !s.is_terminal() && out.len() < count {
            let actions = game.legal_actions(&s).unwrap();
            s = game.play(&s, actions[rng.random_range(0..actions.len())]);
            out.push(s.clone());
        }
    }
    out
}
