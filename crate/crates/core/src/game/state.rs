//! Board positions shared by every grid game in the crate.
//!
//! Cells are stored row-major with row 0 at the bottom of the board, which
//! keeps gravity checks trivial. Text renderings and the compact string form
//! list rows top-down.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Index of a player: 0 moves first, 1 moves second.
pub type Player = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Chip(Player),
}

impl Cell {
    fn to_char(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Chip(0) => 'x',
            Cell::Chip(_) => 'o',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(Cell::Empty),
            'x' | 'X' => Some(Cell::Chip(0)),
            'o' | 'O' => Some(Cell::Chip(1)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Win(Player),
    Draw,
}

impl Outcome {
    /// Terminal reward for `player`: +1 win, -1 loss, 0 draw.
    pub fn reward(self, player: Player) -> f64 {
        match self {
            Outcome::Draw => 0.0,
            Outcome::Win(w) if w == player => 1.0,
            Outcome::Win(_) => -1.0,
        }
    }

    pub fn winner(self) -> Option<Player> {
        match self {
            Outcome::Win(p) => Some(p),
            Outcome::Draw => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GameState {
    height: usize,
    width: usize,
    connect_n: usize,
    cells: Vec<Cell>,
    to_move: Player,
    move_count: usize,
    outcome: Option<Outcome>,
}

impl GameState {
    /// Empty board with player 0 to move.
    pub fn new(height: usize, width: usize, connect_n: usize) -> Result<Self> {
        if connect_n < 2 {
            return Err(Error::InvalidBoard(format!(
                "connect length must be at least 2, got {connect_n}"
            )));
        }
        if height < connect_n && width < connect_n {
            return Err(Error::InvalidBoard(format!(
                "no line of {connect_n} fits on a {height}x{width} board"
            )));
        }
        if height > 64 || width > 64 {
            return Err(Error::InvalidBoard(format!(
                "board {height}x{width} exceeds the 64x64 limit"
            )));
        }
        Ok(Self {
            height,
            width,
            connect_n,
            cells: vec![Cell::Empty; height * width],
            to_move: 0,
            move_count: 0,
            outcome: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn connect_n(&self) -> usize {
        self.connect_n
    }

    pub fn to_move(&self) -> Player {
        self.to_move
    }

    pub fn move_count(&self) -> usize {
        self.move_count
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    /// Cell at `row` (0 = bottom) and `col` (0 = left).
    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn chip_count(&self, player: Player) -> usize {
        self.cells
            .iter()
            .filter(|&&c| c == Cell::Chip(player))
            .count()
    }

    pub fn is_full(&self) -> bool {
        self.move_count == self.cells.len()
    }

    /// Places a chip for the player to move. Callers check legality.
    pub(crate) fn place(&mut self, row: usize, col: usize) {
        debug_assert!(self.outcome.is_none());
        debug_assert_eq!(self.cell(row, col), Cell::Empty);
        let player = self.to_move;
        self.cells[row * self.width + col] = Cell::Chip(player);
        self.move_count += 1;
        self.to_move = 1 - player;
        if self.line_through(row, col) {
            self.outcome = Some(Outcome::Win(player));
        } else if self.is_full() {
            self.outcome = Some(Outcome::Draw);
        }
    }

    fn run_length(&self, row: usize, col: usize, dr: isize, dc: isize) -> usize {
        let target = self.cell(row, col);
        let mut n = 0;
        let (mut r, mut c) = (row as isize + dr, col as isize + dc);
        while r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width {
            if self.cell(r as usize, c as usize) != target {
                break;
            }
            n += 1;
            r += dr;
            c += dc;
        }
        n
    }

    /// Whether the chip at (row, col) is part of a line of `connect_n`.
    fn line_through(&self, row: usize, col: usize) -> bool {
        if self.cell(row, col) == Cell::Empty {
            return false;
        }
        [(0, 1), (1, 0), (1, 1), (1, -1)].iter().any(|&(dr, dc)| {
            1 + self.run_length(row, col, dr, dc) + self.run_length(row, col, -dr, -dc)
                >= self.connect_n
        })
    }

    fn scan_outcome(&self) -> Result<Option<Outcome>> {
        let mut winners = [false; 2];
        for row in 0..self.height {
            for col in 0..self.width {
                if let Cell::Chip(p) = self.cell(row, col) {
                    if self.line_through(row, col) {
                        winners[p] = true;
                    }
                }
            }
        }
        match winners {
            [true, true] => Err(Error::InvalidBoard("both players have a line".into())),
            [true, false] => Ok(Some(Outcome::Win(0))),
            [false, true] => Ok(Some(Outcome::Win(1))),
            [false, false] if self.is_full() => Ok(Some(Outcome::Draw)),
            _ => Ok(None),
        }
    }

    /// Whether a chip of `player` placed at (row, col) would complete a line.
    pub fn completes_line(&self, row: usize, col: usize, player: Player) -> bool {
        let mut probe = self.clone();
        probe.cells[row * self.width + col] = Cell::Chip(player);
        probe.line_through(row, col)
    }

    /// Column-reflected copy: column c maps to column W-1-c.
    pub fn mirrored(&self) -> GameState {
        let mut out = self.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                out.cells[row * self.width + col] = self.cell(row, self.width - 1 - col);
            }
        }
        out
    }

    /// Whether any chip sits above an empty cell.
    pub fn has_floating_chips(&self) -> bool {
        (0..self.width).any(|col| {
            (1..self.height).any(|row| {
                self.cell(row, col) != Cell::Empty && self.cell(row - 1, col) == Cell::Empty
            })
        })
    }

    /// Builds a state from cells listed top-down, validating chip counts and
    /// recomputing the outcome.
    pub fn from_rows(
        height: usize,
        width: usize,
        connect_n: usize,
        rows_top_down: &str,
    ) -> Result<Self> {
        let mut state = GameState::new(height, width, connect_n)?;
        let chars: Vec<char> = rows_top_down
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        if chars.len() != height * width {
            return Err(Error::InvalidBoard(format!(
                "expected {} cells, got {}",
                height * width,
                chars.len()
            )));
        }
        for (i, ch) in chars.into_iter().enumerate() {
            let cell = Cell::from_char(ch)
                .ok_or_else(|| Error::InvalidBoard(format!("bad cell character {ch:?}")))?;
            let (top_row, col) = (i / width, i % width);
            state.cells[(height - 1 - top_row) * width + col] = cell;
        }
        let (n0, n1) = (state.chip_count(0), state.chip_count(1));
        if n0 != n1 && n0 != n1 + 1 {
            return Err(Error::InvalidBoard(format!(
                "chip counts {n0} and {n1} are not reachable"
            )));
        }
        state.move_count = n0 + n1;
        state.to_move = state.move_count % 2;
        state.outcome = state.scan_outcome()?;
        Ok(state)
    }

    /// Rows top-down, one character per cell (`.` empty, `x` player 0, `o`
    /// player 1), each row terminated by a newline.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(self.cell(row, col).to_char());
            }
            out.push('\n');
        }
        out
    }

    /// Compact single-line form: `HxWxN:P:cells`, cells top-down row-major.
    pub fn to_compact(&self) -> String {
        let mut out = format!(
            "{}x{}x{}:{}:",
            self.height, self.width, self.connect_n, self.to_move
        );
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(self.cell(row, col).to_char());
            }
        }
        out
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_compact())
    }
}

impl FromStr for GameState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidBoard(format!("malformed compact state {s:?}"));
        let mut parts = s.splitn(3, ':');
        let dims = parts.next().ok_or_else(bad)?;
        let to_move: Player = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let cells = parts.next().ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [h, w, n] = dims[..] else {
            return Err(bad());
        };
        let state = GameState::from_rows(h, w, n, cells)?;
        if state.to_move != to_move {
            return Err(Error::InvalidBoard(format!(
                "player {to_move} cannot be to move with {} chips placed",
                state.move_count
            )));
        }
        Ok(state)
    }
}

impl Serialize for GameState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_compact())
    }
}

impl<'de> Deserialize<'de> for GameState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
