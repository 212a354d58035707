//! Gridworld mazes: ASCII layouts, deterministic 4-action dynamics and raw
//! state encodings.
//!
//! A maze file uses `#` for walls, `.` for open ground and at most one `G`
//! for the goal cell (which is open ground). Open cells are enumerated in
//! row-major order; that order defines the state index.

use rand::Rng;
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const FOURROOM: &str = include_str!("../mazes/fourroom.txt");
pub const ONEROOM: &str = include_str!("../mazes/oneroom.txt");
pub const TWOROOM: &str = include_str!("../mazes/tworoom.txt");
pub const HARDMAZE: &str = include_str!("../mazes/hardmaze.txt");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("maze is not rectangular: line {0} has a different length")]
    NonRectangular(usize),
    #[error("unknown maze character {0:?}")]
    UnknownChar(char),
    #[error("maze has no open cells")]
    NoOpenCells,
    #[error("open cells form a disconnected region")]
    Disconnected,
    #[error("maze declares more than one goal cell")]
    MultipleGoals,
    #[error("unknown builtin maze {0:?} (expected fourroom|oneroom|tworoom|hardmaze)")]
    UnknownBuiltin(String),
    #[error("failed to read maze file: {0}")]
    Io(#[from] std::io::Error),
}

/// One of the four grid moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Action {
        Action::ALL[idx % 4]
    }

    /// (dx, dy) with y growing downward, matching file row order.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub fn opposite(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        };
        f.write_str(s)
    }
}

/// Raw state encodings exposed to function approximators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprKind {
    /// One-hot vector of length |S|.
    Index,
    /// (x, y) scaled into [-1, 1] along each axis.
    Position,
}

impl ReprKind {
    pub fn parse(s: &str) -> Option<ReprKind> {
        match s {
            "index" => Some(ReprKind::Index),
            "position" => Some(ReprKind::Position),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ReprKind::Index => "index",
            ReprKind::Position => "position",
        }
    }
}

/// A state is both its dense index in `open_cells` and its grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub index: usize,
    pub xy: (usize, usize),
}

/// An immutable maze layout. Construction validates rectangularity and
/// connectivity of the open region; afterwards `step`/`encode` are pure.
#[derive(Debug, Clone)]
pub struct GridSpec {
    name: String,
    width: usize,
    height: usize,
    open_cells: Vec<(usize, usize)>,
    walls: Vec<(usize, usize)>,
    index_of: Vec<Option<usize>>,
    goal: Option<GridState>,
}

impl GridSpec {
    pub fn parse(name: &str, text: &str) -> Result<GridSpec, GridError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(GridError::NoOpenCells);
        }
        let width = lines[0].chars().count();
        for (i, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(GridError::NonRectangular(i + 1));
            }
        }
        let height = lines.len();

        let mut open_cells = Vec::new();
        let mut walls = Vec::new();
        let mut index_of = vec![None; width * height];
        let mut goal_xy = None;
        for (y, line) in lines.iter().enumerate() {
            for (x, c) in line.chars().enumerate() {
                match c {
                    '#' => walls.push((x, y)),
                    '.' | 'G' => {
                        if c == 'G' {
                            if goal_xy.is_some() {
                                return Err(GridError::MultipleGoals);
                            }
                            goal_xy = Some((x, y));
                        }
                        index_of[y * width + x] = Some(open_cells.len());
                        open_cells.push((x, y));
                    }
                    other => return Err(GridError::UnknownChar(other)),
                }
            }
        }
        if open_cells.is_empty() {
            return Err(GridError::NoOpenCells);
        }

        let spec = GridSpec {
            name: name.to_string(),
            width,
            height,
            goal: goal_xy.map(|xy| GridState {
                index: index_of[xy.1 * width + xy.0].unwrap(),
                xy,
            }),
            open_cells,
            walls,
            index_of,
        };
        if !spec.is_connected() {
            return Err(GridError::Disconnected);
        }
        Ok(spec)
    }

    /// One of the shipped canonical layouts.
    pub fn builtin(name: &str) -> Result<GridSpec, GridError> {
        let text = match name {
            "fourroom" => FOURROOM,
            "oneroom" => ONEROOM,
            "tworoom" => TWOROOM,
            "hardmaze" => HARDMAZE,
            other => return Err(GridError::UnknownBuiltin(other.to_string())),
        };
        GridSpec::parse(name, text)
    }

    pub fn from_file(path: &Path) -> Result<GridSpec, GridError> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "maze".to_string());
        GridSpec::parse(&name, &text)
    }

    /// Builtin name or a filesystem path, whichever matches.
    pub fn load(maze: &str) -> Result<GridSpec, GridError> {
        match GridSpec::builtin(maze) {
            Ok(spec) => Ok(spec),
            Err(GridError::UnknownBuiltin(_)) => GridSpec::from_file(Path::new(maze)),
            Err(e) => Err(e),
        }
    }

    fn is_connected(&self) -> bool {
        let n = self.open_cells.len();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(self.state(0));
        let mut count = 1;
        while let Some(s) = queue.pop_front() {
            for a in Action::ALL {
                let t = self.step(s, a);
                if !seen[t.index] {
                    seen[t.index] = true;
                    count += 1;
                    queue.push_back(t);
                }
            }
        }
        count == n
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.open_cells.len()
    }

    pub fn open_cells(&self) -> &[(usize, usize)] {
        &self.open_cells
    }

    pub fn walls(&self) -> &[(usize, usize)] {
        &self.walls
    }

    pub fn goal(&self) -> Option<GridState> {
        self.goal
    }

    pub fn state(&self, index: usize) -> GridState {
        GridState {
            index,
            xy: self.open_cells[index],
        }
    }

    pub fn state_at(&self, x: usize, y: usize) -> Option<GridState> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.index_of[y * self.width + x].map(|index| GridState { index, xy: (x, y) })
    }

    pub fn is_open(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return false;
        }
        self.index_of[y as usize * self.width + x as usize].is_some()
    }

    /// Deterministic transition: blocked moves (walls or the boundary) keep
    /// the agent in place.
    pub fn step(&self, s: GridState, a: Action) -> GridState {
        let (dx, dy) = a.delta();
        let nx = s.xy.0 as i64 + dx as i64;
        let ny = s.xy.1 as i64 + dy as i64;
        if self.is_open(nx, ny) {
            self.state_at(nx as usize, ny as usize).unwrap()
        } else {
            s
        }
    }

    pub fn feature_dim(&self, kind: ReprKind) -> usize {
        match kind {
            ReprKind::Index => self.n_states(),
            ReprKind::Position => 2,
        }
    }

    /// Writes the raw encoding of `s` into `out` (length `feature_dim`).
    pub fn encode_into(&self, s: GridState, kind: ReprKind, out: &mut [f64]) {
        match kind {
            ReprKind::Index => {
                out.fill(0.0);
                out[s.index] = 1.0;
            }
            ReprKind::Position => {
                out[0] = 2.0 * s.xy.0 as f64 / (self.width as f64 - 1.0) - 1.0;
                out[1] = 2.0 * s.xy.1 as f64 / (self.height as f64 - 1.0) - 1.0;
            }
        }
    }

    pub fn encode(&self, s: GridState, kind: ReprKind) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim(kind)];
        self.encode_into(s, kind, &mut out);
        out
    }
}

/// Draws one of the four actions uniformly.
pub fn uniform_policy_action<R: Rng>(rng: &mut R) -> Action {
    Action::from_index(rng.gen_range(0..4))
}
