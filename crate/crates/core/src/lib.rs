//! Expert Iteration with opponent-aware search priors (BRExIt) for
//! two-player sequential board games.

pub mod agents;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod game;
pub mod inference;
pub mod mcts;
pub mod net;
pub mod seeding;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
