//! Two-player sequential grid games.
//!
//! [`ConnectFour`] is the training game (gravity, actions are columns) and
//! [`TicTacToe`] is a solvable variant used to check the search against
//! exhaustive play (no gravity, actions are cells). Both share
//! [`GameState`] as their position type.

mod state;

pub use state::{Cell, GameState, Outcome, Player};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of applying one action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: GameState,
    pub terminal: bool,
    pub winner: Option<Player>,
    /// Reward per player; all zero unless terminal.
    pub rewards: [f64; 2],
}

impl StepResult {
    fn from_state(next_state: GameState) -> Self {
        let outcome = next_state.outcome();
        let rewards = match outcome {
            Some(o) => [o.reward(0), o.reward(1)],
            None => [0.0; 2],
        };
        Self {
            terminal: outcome.is_some(),
            winner: outcome.and_then(Outcome::winner),
            rewards,
            next_state,
        }
    }
}

/// Three binary planes of shape H×W: empty cells, chips of the perspective
/// player, chips of the other player. Plane rows follow storage order
/// (row 0 = bottom).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl EncodedState {
    pub const PLANES: usize = 3;

    pub fn plane(&self, plane: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[plane * n..(plane + 1) * n]
    }

    pub fn at(&self, plane: usize, row: usize, col: usize) -> f64 {
        self.data[(plane * self.height + row) * self.width + col]
    }
}

pub fn encode_state(state: &GameState, perspective: Player) -> EncodedState {
    let (h, w) = (state.height(), state.width());
    let n = h * w;
    let mut data = vec![0.0; EncodedState::PLANES * n];
    for (i, cell) in state.cells().iter().enumerate() {
        let plane = match *cell {
            Cell::Empty => 0,
            Cell::Chip(p) if p == perspective => 1,
            Cell::Chip(_) => 2,
        };
        data[plane * n + i] = 1.0;
    }
    EncodedState {
        height: h,
        width: w,
        data,
    }
}

/// Checks that `policy` is a probability distribution within `tol`.
pub fn validate_distribution(policy: &[f64], tol: f64) -> Result<()> {
    if policy.is_empty() {
        return Err(Error::MalformedDistribution("empty".into()));
    }
    if let Some(p) = policy.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::MalformedDistribution(format!("entry {p}")));
    }
    let sum: f64 = policy.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::MalformedDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Reflects a distribution over columns: entry c moves to W-1-c.
pub fn mirror_policy(policy: &[f64]) -> Result<Vec<f64>> {
    validate_distribution(policy, 1e-6)?;
    Ok(policy.iter().rev().copied().collect())
}

/// Empty Connect-N board; the free-standing form of [`Game::initial_state`].
pub fn initial_state(height: usize, width: usize, connect_n: usize) -> Result<GameState> {
    GameState::new(height, width, connect_n)
}

/// Rules of a deterministic, perfect-information, two-player grid game.
pub trait Game: Send + Sync {
    fn name(&self) -> &'static str;

    fn height(&self) -> usize;

    fn width(&self) -> usize;

    fn connect_n(&self) -> usize;

    /// Size of the action space (legal or not).
    fn num_actions(&self) -> usize;

    fn initial_state(&self) -> GameState {
        GameState::new(self.height(), self.width(), self.connect_n())
            .expect("dimensions validated at construction")
    }

    fn legal_actions(&self, state: &GameState) -> Result<Vec<usize>>;

    fn apply_action(&self, state: &GameState, action: usize) -> Result<StepResult>;

    /// Action index under the left-right reflection.
    fn mirror_action(&self, action: usize) -> usize;

    fn legal_mask(&self, state: &GameState) -> Vec<bool> {
        let mut mask = vec![false; self.num_actions()];
        if let Ok(actions) = self.legal_actions(state) {
            for a in actions {
                mask[a] = true;
            }
        }
        mask
    }

    fn is_legal(&self, state: &GameState, action: usize) -> bool {
        action < self.num_actions() && self.legal_mask(state)[action]
    }

    /// Applies an action the caller already knows to be legal.
    fn play(&self, state: &GameState, action: usize) -> GameState {
        self.apply_action(state, action)
            .expect("caller guarantees legality")
            .next_state
    }

    fn mirror_state(&self, state: &GameState) -> GameState {
        state.mirrored()
    }

    /// Reflects a distribution over this game's action space.
    fn mirror_distribution(&self, policy: &[f64]) -> Result<Vec<f64>> {
        if policy.len() != self.num_actions() {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} entries, game has {} actions",
                policy.len(),
                self.num_actions()
            )));
        }
        validate_distribution(policy, 1e-6)?;
        let mut out = vec![0.0; policy.len()];
        for (a, &p) in policy.iter().enumerate() {
            out[self.mirror_action(a)] = p;
        }
        Ok(out)
    }

    fn encode(&self, state: &GameState, perspective: Player) -> EncodedState {
        encode_state(state, perspective)
    }

    /// Whether `state` has the shape and rules of this game.
    fn check_state(&self, state: &GameState) -> Result<()> {
        if (state.height(), state.width(), state.connect_n())
            != (self.height(), self.width(), self.connect_n())
        {
            return Err(Error::ShapeMismatch(format!(
                "state is {}x{} connect-{}, game is {}x{} connect-{}",
                state.height(),
                state.width(),
                state.connect_n(),
                self.height(),
                self.width(),
                self.connect_n()
            )));
        }
        Ok(())
    }
}

/// Connect-N with gravity on an H×W board. Actions are column indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectFour {
    height: usize,
    width: usize,
    connect_n: usize,
}

impl ConnectFour {
    pub fn new(height: usize, width: usize, connect_n: usize) -> Result<Self> {
        GameState::new(height, width, connect_n)?;
        Ok(Self {
            height,
            width,
            connect_n,
        })
    }

    /// The standard 6×7 connect-4 board.
    pub fn standard() -> Self {
        Self::new(6, 7, 4).unwrap()
    }

    /// Reduced 4×5 connect-3 board for fast experiments.
    pub fn small() -> Self {
        Self::new(4, 5, 3).unwrap()
    }

    fn drop_row(&self, state: &GameState, col: usize) -> Option<usize> {
        (0..self.height).find(|&row| state.cell(row, col) == Cell::Empty)
    }
}

impl Game for ConnectFour {
    fn name(&self) -> &'static str {
        "connect"
    }

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn connect_n(&self) -> usize {
        self.connect_n
    }

    fn num_actions(&self) -> usize {
        self.width
    }

    fn legal_actions(&self, state: &GameState) -> Result<Vec<usize>> {
        if state.is_terminal() {
            return Err(Error::TerminalState);
        }
        Ok((0..self.width)
            .filter(|&c| state.cell(self.height - 1, c) == Cell::Empty)
            .collect())
    }

    fn apply_action(&self, state: &GameState, action: usize) -> Result<StepResult> {
        if state.is_terminal() {
            return Err(Error::TerminalState);
        }
        let illegal = || Error::IllegalAction {
            action,
            state: state.to_compact(),
        };
        if action >= self.width {
            return Err(illegal());
        }
        let row = self.drop_row(state, action).ok_or_else(illegal)?;
        let mut next = state.clone();
        next.place(row, action);
        Ok(StepResult::from_state(next))
    }

    fn mirror_action(&self, action: usize) -> usize {
        self.width - 1 - action
    }

    fn check_state(&self, state: &GameState) -> Result<()> {
        if (state.height(), state.width(), state.connect_n())
            != (self.height, self.width, self.connect_n)
        {
            return Err(Error::ShapeMismatch(format!(
                "state is {}x{} connect-{}, game is {}x{} connect-{}",
                state.height(),
                state.width(),
                state.connect_n(),
                self.height,
                self.width,
                self.connect_n
            )));
        }
        if state.has_floating_chips() {
            return Err(Error::InvalidBoard("floating chip".into()));
        }
        Ok(())
    }
}

/// Noughts and crosses: 3×3, three in a row, any empty cell. Action
/// `row * 3 + col` with row 0 at the bottom.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TicTacToe;

impl Game for TicTacToe {
    fn name(&self) -> &'static str {
        "tictactoe"
    }

    fn height(&self) -> usize {
        3
    }

    fn width(&self) -> usize {
        3
    }

    fn connect_n(&self) -> usize {
        3
    }

    fn num_actions(&self) -> usize {
        9
    }

    fn legal_actions(&self, state: &GameState) -> Result<Vec<usize>> {
        if state.is_terminal() {
            return Err(Error::TerminalState);
        }
        Ok((0..9)
            .filter(|&a| state.cell(a / 3, a % 3) == Cell::Empty)
            .collect())
    }

    fn apply_action(&self, state: &GameState, action: usize) -> Result<StepResult> {
        if state.is_terminal() {
            return Err(Error::TerminalState);
        }
        if action >= 9 || state.cell(action / 3, action % 3) != Cell::Empty {
            return Err(Error::IllegalAction {
                action,
                state: state.to_compact(),
            });
        }
        let mut next = state.clone();
        next.place(action / 3, action % 3);
        Ok(StepResult::from_state(next))
    }

    fn mirror_action(&self, action: usize) -> usize {
        action / 3 * 3 + (2 - action % 3)
    }
}

/// Game rules selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameKind {
    Connect,
    Tictactoe,
}

/// Builds the rules object for a configured game.
pub fn build_game(
    kind: GameKind,
    height: usize,
    width: usize,
    connect_n: usize,
) -> Result<Box<dyn Game>> {
    Ok(match kind {
        GameKind::Connect => Box::new(ConnectFour::new(height, width, connect_n)?),
        GameKind::Tictactoe => Box::new(TicTacToe),
    })
}
