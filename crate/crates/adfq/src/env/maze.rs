//! Flag-collecting grid maze.
//!
//! Layout characters: `#` wall, `.` free, `S` start, `G` goal, `F` flag. The
//! state is `(cell, mask)` where `cell` indexes the non-wall cells in
//! row-major order and bit `i` of `mask` is set once flag `i` (row-major) has
//! been picked up; its id is `cell * 2^flags + mask`.
//!
//! Moving into a wall or off the grid leaves the agent in place. With slip
//! `p`, the move goes to the right of the intended direction with probability
//! `p`. Entering `G` ends the episode with reward equal to the number of flags
//! held.

use super::{Outcome, TabularMdp};
use crate::belief::StateId;
use crate::error::{Error, Result};

pub const MAZE_GAMMA: f64 = 0.95;

/// Bundled 6x7 layout with three flags.
pub const DEFAULT_MAZE: &str = "\
S..#..G
.#.#.#.
.#...#.
F#.#.#F
.......
..F....
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeAction {
    North,
    East,
    South,
    West,
}

impl MazeAction {
    pub const ALL: [MazeAction; 4] = [MazeAction::North, MazeAction::East, MazeAction::South, MazeAction::West];

    fn delta(self) -> (isize, isize) {
        match self {
            MazeAction::North => (-1, 0),
            MazeAction::East => (0, 1),
            MazeAction::South => (1, 0),
            MazeAction::West => (0, -1),
        }
    }

    /// Direction 90 degrees clockwise.
    pub fn right(self) -> MazeAction {
        MazeAction::ALL[(self as usize + 1) % 4]
    }
}

/// A parsed maze together with its MDP.
#[derive(Debug, Clone)]
pub struct Maze {
    pub mdp: TabularMdp,
    pub rows: usize,
    pub cols: usize,
    /// `(row, col)` of each non-wall cell.
    pub cells: Vec<(usize, usize)>,
    /// Cell index of each flag.
    pub flags: Vec<usize>,
    pub start_cell: usize,
    pub goal_cell: usize,
}

impl Maze {
    pub fn state(&self, cell: usize, mask: u32) -> StateId {
        cell * (1 << self.flags.len()) + mask as usize
    }

    /// Inverse of [`Maze::state`].
    pub fn decode(&self, s: StateId) -> (usize, u32) {
        let per_cell = 1 << self.flags.len();
        (s / per_cell, (s % per_cell) as u32)
    }
}

fn layout_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::MazeLayout { line, column, message: message.into() }
}

/// Parses `layout` and builds the maze MDP. Lines and columns in errors are
/// 1-based.
pub fn build_maze(layout: &str, slip: f64) -> Result<Maze> {
    if !(0.0..=0.5).contains(&slip) {
        return Err(Error::Domain(format!("slip must lie in [0, 0.5], got {slip}")));
    }
    let lines: Vec<&str> = layout.lines().map(|l| l.trim_end_matches('\r')).collect();
    let lines: Vec<&str> = match lines.iter().rposition(|l| !l.is_empty()) {
        Some(last) => lines[..=last].to_vec(),
        None => return Err(layout_error(1, 1, "empty layout")),
    };
    let cols = lines[0].chars().count();
    let mut grid: Vec<Vec<char>> = Vec::with_capacity(lines.len());
    let (mut start, mut goal) = (None, None);
    for (i, line) in lines.iter().enumerate() {
        let row: Vec<char> = line.chars().collect();
        if row.len() != cols {
            let column = row.len().min(cols) + 1;
            return Err(layout_error(i + 1, column, format!("row has {} cells, expected {cols}", row.len())));
        }
        for (j, &ch) in row.iter().enumerate() {
            match ch {
                '#' | '.' | 'F' => {}
                'S' if start.is_some() => return Err(layout_error(i + 1, j + 1, "second start cell")),
                'S' => start = Some((i, j)),
                'G' if goal.is_some() => return Err(layout_error(i + 1, j + 1, "second goal cell")),
                'G' => goal = Some((i, j)),
                other => return Err(layout_error(i + 1, j + 1, format!("unexpected character {other:?}"))),
            }
        }
        grid.push(row);
    }
    let Some(start) = start else {
        return Err(layout_error(lines.len(), cols, "no start cell"));
    };
    let Some(goal) = goal else {
        return Err(layout_error(lines.len(), cols, "no goal cell"));
    };

    let rows = grid.len();
    let mut index = vec![vec![None; cols]; rows];
    let mut cells = Vec::new();
    let mut flags = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, &ch) in row.iter().enumerate() {
            if ch == '#' {
                continue;
            }
            index[i][j] = Some(cells.len());
            if ch == 'F' {
                flags.push(cells.len());
            }
            cells.push((i, j));
        }
    }
    if flags.len() > 16 {
        return Err(Error::Domain(format!("{} flags; at most 16 are supported", flags.len())));
    }
    let start_cell = index[start.0][start.1].expect("start is not a wall");
    let goal_cell = index[goal.0][goal.1].expect("goal is not a wall");

    let move_to = |cell: usize, action: MazeAction| -> usize {
        let (r, c) = cells[cell];
        let (dr, dc) = action.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
            return cell;
        }
        index[nr as usize][nc as usize].unwrap_or(cell)
    };

    let n_masks = 1usize << flags.len();
    let n_states = cells.len() * n_masks;
    let id = |cell: usize, mask: usize| cell * n_masks + mask;
    let land = |cell: usize, mask: usize| -> (StateId, f64) {
        let mask = match flags.iter().position(|&f| f == cell) {
            Some(bit) => mask | (1 << bit),
            None => mask,
        };
        let reward = if cell == goal_cell { mask.count_ones() as f64 } else { 0.0 };
        (id(cell, mask), reward)
    };

    let mut outcomes = Vec::with_capacity(n_states * 4);
    for cell in 0..cells.len() {
        for mask in 0..n_masks {
            for action in MazeAction::ALL {
                let (next, reward) = land(move_to(cell, action), mask);
                let (slip_next, slip_reward) = land(move_to(cell, action.right()), mask);
                outcomes.push(vec![
                    Outcome { next, reward, prob: 1.0 - slip },
                    Outcome { next: slip_next, reward: slip_reward, prob: slip },
                ]);
            }
        }
    }
    let terminals: Vec<StateId> = (0..n_masks).map(|m| id(goal_cell, m)).collect();
    let mdp = TabularMdp::new(n_states, 4, outcomes, &terminals, MAZE_GAMMA, id(start_cell, 0))?;
    Ok(Maze { mdp, rows, cols, cells, flags, start_cell, goal_cell })
}
