//! Episodic grid-world tasks.
//!
//! A task is a rectangular grid with a start cell, one treasure and any number
//! of fire and pit cells. Moves are deterministic and clamped to the grid.
//! Entering a pit or the treasure ends the episode.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REWARD_PIT: f64 = -2500.0;
pub const REWARD_FIRE: f64 = -500.0;
pub const REWARD_NEAR_FIRE: f64 = -250.0;
pub const REWARD_TREASURE: f64 = 200.0;
pub const REWARD_STEP: f64 = -1.0;

pub const DEFAULT_MAX_STEPS: usize = 50;
pub const DEFAULT_DISCOUNT: f64 = 0.99;

/// Grid coordinate. Row 0 is the top line of a map file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Agent position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub position: Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionDir {
    North,
    South,
    East,
    West,
}

impl ActionDir {
    /// Fixed order, also used for greedy tie-breaking.
    pub const ALL: [ActionDir; 4] = [ActionDir::North, ActionDir::South, ActionDir::East, ActionDir::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> ActionDir {
        ActionDir::ALL[i]
    }

    /// (row delta, col delta)
    pub fn delta(self) -> (isize, isize) {
        match self {
            ActionDir::North => (-1, 0),
            ActionDir::South => (1, 0),
            ActionDir::East => (0, 1),
            ActionDir::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: GridState,
    pub reward: f64,
    pub terminal: bool,
}

/// What occupies a cell, as far as rewards are concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Free,
    Fire,
    Pit,
    Treasure,
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
    #[error("{what} cell {cell} lies outside the {width}x{height} grid")]
    OutOfBounds { what: &'static str, cell: Cell, width: usize, height: usize },
    #[error("start cell {0} is on a hazard")]
    StartOnHazard(Cell),
    #[error("treasure cell {0} is on a hazard")]
    TreasureOnHazard(Cell),
    #[error("start and treasure share cell {0}")]
    StartIsTreasure(Cell),
    #[error("cell {0} is both fire and pit")]
    FireAndPit(Cell),
    #[error("max_steps must be at least 1")]
    NoSteps,
    #[error("discount {0} outside [0, 1]")]
    BadDiscount(f64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("state {0} is outside the grid")]
    OutOfBounds(Cell),
    #[error("state {0} is terminal; the episode is over")]
    Terminal(Cell),
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("map has no rows")]
    Empty,
    #[error("line {line}, column {column}: unknown glyph {glyph:?}")]
    UnknownGlyph { line: usize, column: usize, glyph: char },
    #[error("line {line}: row has {found} cells, expected {expected}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: second start cell")]
    DuplicateStart { line: usize, column: usize },
    #[error("line {line}, column {column}: second treasure cell")]
    DuplicateTreasure { line: usize, column: usize },
    #[error("map has no start cell 'S'")]
    MissingStart,
    #[error("map has no treasure cell 'T'")]
    MissingTreasure,
    #[error(transparent)]
    Invalid(#[from] TaskError),
}

/// One grid-world task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub treasure: Cell,
    pub fires: BTreeSet<Cell>,
    pub pits: BTreeSet<Cell>,
    pub max_steps: usize,
    pub discount: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.width == 0 || self.height == 0 {
            return Err(TaskError::EmptyGrid);
        }
        let check = |what: &'static str, cell: Cell| {
            if self.contains(cell) {
                Ok(())
            } else {
                Err(TaskError::OutOfBounds { what, cell, width: self.width, height: self.height })
            }
        };
        check("start", self.start)?;
        check("treasure", self.treasure)?;
        for &c in &self.fires {
            check("fire", c)?;
        }
        for &c in &self.pits {
            check("pit", c)?;
            if self.fires.contains(&c) {
                return Err(TaskError::FireAndPit(c));
            }
        }
        if self.is_hazard(self.start) {
            return Err(TaskError::StartOnHazard(self.start));
        }
        if self.is_hazard(self.treasure) {
            return Err(TaskError::TreasureOnHazard(self.treasure));
        }
        if self.start == self.treasure {
            return Err(TaskError::StartIsTreasure(self.start));
        }
        if self.max_steps == 0 {
            return Err(TaskError::NoSteps);
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(TaskError::BadDiscount(self.discount));
        }
        Ok(())
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    fn is_hazard(&self, cell: Cell) -> bool {
        self.fires.contains(&cell) || self.pits.contains(&cell)
    }

    pub fn kind(&self, cell: Cell) -> CellKind {
        if self.pits.contains(&cell) {
            CellKind::Pit
        } else if cell == self.treasure {
            CellKind::Treasure
        } else if self.fires.contains(&cell) {
            CellKind::Fire
        } else {
            CellKind::Free
        }
    }

    pub fn is_terminal_cell(&self, cell: Cell) -> bool {
        matches!(self.kind(cell), CellKind::Pit | CellKind::Treasure)
    }

    /// True when a fire sits in the 4-neighbourhood of `cell`.
    pub fn is_fire_adjacent(&self, cell: Cell) -> bool {
        self.fires.iter().any(|&f| f.manhattan(cell) == 1)
    }

    /// Clamped move: the projection of `cell + a` onto the grid.
    pub fn project(&self, cell: Cell, a: ActionDir) -> Cell {
        let (dr, dc) = a.delta();
        let row = (cell.row as isize + dr).clamp(0, self.height as isize - 1) as usize;
        let col = (cell.col as isize + dc).clamp(0, self.width as isize - 1) as usize;
        Cell { row, col }
    }

    /// Reward for entering `cell`. Pit > treasure > fire > near-fire > step.
    pub fn entry_reward(&self, cell: Cell) -> f64 {
        match self.kind(cell) {
            CellKind::Pit => REWARD_PIT,
            CellKind::Treasure => REWARD_TREASURE,
            CellKind::Fire => REWARD_FIRE,
            CellKind::Free if self.is_fire_adjacent(cell) => REWARD_NEAR_FIRE,
            CellKind::Free => REWARD_STEP,
        }
    }

    /// Start state for the given episode. Episodes currently share one start.
    pub fn episode_start(&self, _episode: usize) -> GridState {
        initial_state(self)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |row| (0..self.width).map(move |col| Cell { row, col }))
    }

    /// Best achievable discounted return from the start cell within the
    /// episode cap, by backward induction over the deterministic dynamics.
    pub fn optimal_return(&self) -> f64 {
        self.extreme_return(f64::max)
    }

    /// Worst achievable discounted return; a lower bound on every episode.
    pub fn worst_return(&self) -> f64 {
        self.extreme_return(f64::min)
    }

    fn extreme_return(&self, pick: fn(f64, f64) -> f64) -> f64 {
        let idx = |c: Cell| c.row * self.width + c.col;
        let mut value = vec![0.0_f64; self.width * self.height];
        for _ in 0..self.max_steps {
            let mut next = vec![0.0_f64; value.len()];
            for cell in self.cells() {
                if self.is_terminal_cell(cell) {
                    continue;
                }
                let mut best: Option<f64> = None;
                for a in ActionDir::ALL {
                    let to = self.project(cell, a);
                    let tail = if self.is_terminal_cell(to) { 0.0 } else { value[idx(to)] };
                    let q = self.entry_reward(to) + self.discount * tail;
                    best = Some(best.map_or(q, |b| pick(b, q)));
                }
                next[idx(cell)] = best.unwrap_or(0.0);
            }
            value = next;
        }
        value[idx(self.start)]
    }
}

pub fn initial_state(task: &TaskSpec) -> GridState {
    GridState { position: task.start }
}

pub fn step(task: &TaskSpec, s: GridState, a: ActionDir) -> Result<StepOutcome, StepError> {
    if !task.contains(s.position) {
        return Err(StepError::OutOfBounds(s.position));
    }
    if task.is_terminal_cell(s.position) {
        return Err(StepError::Terminal(s.position));
    }
    let next = task.project(s.position, a);
    Ok(StepOutcome {
        next_state: GridState { position: next },
        reward: task.entry_reward(next),
        terminal: task.is_terminal_cell(next),
    })
}

/// Parse an ASCII map: `.` free, `S` start, `T` treasure, `F` fire, `P` pit.
/// The first line may be a `#` comment. Lines are 1-based in errors.
pub fn load_grid(text: &str, id: usize) -> Result<TaskSpec, MapError> {
    let mut lines: Vec<(usize, &str)> = text.split('\n').enumerate().map(|(i, l)| (i + 1, l)).collect();
    if lines.last().is_some_and(|(_, l)| l.is_empty()) {
        lines.pop();
    }
    if lines.first().is_some_and(|(_, l)| l.starts_with('#')) {
        lines.remove(0);
    }
    if lines.is_empty() {
        return Err(MapError::Empty);
    }

    let width = lines[0].1.chars().count();
    let mut start = None;
    let mut treasure = None;
    let mut fires = BTreeSet::new();
    let mut pits = BTreeSet::new();
    for (row, &(line, body)) in lines.iter().enumerate() {
        let found = body.chars().count();
        if found != width {
            return Err(MapError::RaggedRow { line, expected: width, found });
        }
        for (col, glyph) in body.chars().enumerate() {
            let cell = Cell { row, col };
            let column = col + 1;
            match glyph {
                '.' => {}
                'S' if start.is_some() => return Err(MapError::DuplicateStart { line, column }),
                'S' => start = Some(cell),
                'T' if treasure.is_some() => return Err(MapError::DuplicateTreasure { line, column }),
                'T' => treasure = Some(cell),
                'F' => {
                    fires.insert(cell);
                }
                'P' => {
                    pits.insert(cell);
                }
                other => return Err(MapError::UnknownGlyph { line, column, glyph: other }),
            }
        }
    }
    let task = TaskSpec {
        id,
        width,
        height: lines.len(),
        start: start.ok_or(MapError::MissingStart)?,
        treasure: treasure.ok_or(MapError::MissingTreasure)?,
        fires,
        pits,
        max_steps: DEFAULT_MAX_STEPS,
        discount: DEFAULT_DISCOUNT,
    };
    task.validate()?;
    Ok(task)
}

/// Canonical map text: one LF-terminated line per row, no comment.
pub fn serialize_grid(task: &TaskSpec) -> String {
    let mut out = String::with_capacity((task.width + 1) * task.height);
    for row in 0..task.height {
        for col in 0..task.width {
            let cell = Cell { row, col };
            out.push(if cell == task.start {
                'S'
            } else if cell == task.treasure {
                'T'
            } else if task.fires.contains(&cell) {
                'F'
            } else if task.pits.contains(&cell) {
                'P'
            } else {
                '.'
            });
        }
        out.push('\n');
    }
    out
}
